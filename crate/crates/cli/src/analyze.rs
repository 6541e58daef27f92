use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand, ValueEnum};
use serde_json::{json, Value};

use desktwin::analysis::{
    compute_rates, count_towers_in, mann_whitney_u, parse_session_log, read_questionnaire, session_metric,
    summarize_questionnaire, tlx_raw, tower_histogram, Metric, Scale, SessionLog,
};
use desktwin::scene::Phase;

#[derive(Args)]
#[command(args_conflicts_with_subcommands = true)]
pub struct AnalyzeArgs {
    #[command(subcommand)]
    cmd: Option<AnalyzeCmd>,
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PhaseArg::Trial)]
    phase: PhaseArg,
    #[arg(long, conflicts_with = "table")]
    json: bool,
    #[arg(long)]
    table: bool,
}

#[derive(Subcommand)]
enum AnalyzeCmd {
    /// Mann-Whitney U test of a per-session metric between two groups of logs.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        a: Vec<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        b: Vec<PathBuf>,
        #[arg(long)]
        metric: Metric,
        #[arg(long, value_enum, default_value_t = PhaseArg::Trial)]
        phase: PhaseArg,
    },
    /// Percentage of sessions per tower count.
    Histogram {
        #[arg(long, num_args = 1.., required = true)]
        log: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = PhaseArg::Trial)]
        phase: PhaseArg,
    },
    /// Per-item mean and standard deviation of a questionnaire CSV.
    Questionnaire {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        min: Option<f64>,
        #[arg(long)]
        max: Option<f64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PhaseArg {
    Practice,
    Trial,
}

impl From<PhaseArg> for Phase {
    fn from(p: PhaseArg) -> Self {
        match p {
            PhaseArg::Practice => Phase::Practice,
            PhaseArg::Trial => Phase::Trial,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Tlx,
    Seq,
    Ssq,
}

fn load(path: &Path) -> Result<SessionLog> {
    parse_session_log(path).with_context(|| format!("reading {}", path.display()))
}

/// Fixed key set for a single-session summary; rates are null without picks.
pub fn summary(log: &SessionLog, phase: Phase) -> Value {
    let towers = count_towers_in(log, phase);
    match compute_rates(log, phase) {
        Ok(r) => json!({
            "phase": phase.as_str(),
            "towers": towers,
            "picks": r.picks,
            "places": r.places,
            "collapses": r.collapses,
            "placing_rate": r.placing_rate,
            "collapse_rate": r.collapse_rate,
            "still_in_place_rate": r.still_in_place_rate,
        }),
        Err(_) => json!({
            "phase": phase.as_str(),
            "towers": towers,
            "picks": 0,
            "places": 0,
            "collapses": 0,
            "placing_rate": null,
            "collapse_rate": null,
            "still_in_place_rate": null,
        }),
    }
}

fn print_table(v: &Value) {
    if let Value::Object(m) = v {
        for (k, v) in m {
            let shown = match v {
                Value::Number(n) if n.is_f64() => format!("{:.4}", n.as_f64().unwrap_or(f64::NAN)),
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            println!("{k:<22}{shown}");
        }
    }
}

pub fn run(args: AnalyzeArgs) -> Result<()> {
    match args.cmd {
        None => {
            let Some(path) = args.log else {
                bail!("--log is required")
            };
            let v = summary(&load(&path)?, args.phase.into());
            if args.table {
                print_table(&v);
            } else {
                println!("{}", serde_json::to_string_pretty(&v)?);
            }
        }
        Some(AnalyzeCmd::Compare { a, b, metric, phase }) => {
            let sample = |paths: &[PathBuf]| -> Result<Vec<f64>> {
                paths
                    .iter()
                    .map(|p| {
                        session_metric(&load(p)?, metric, phase.into()).with_context(|| format!("{}", p.display()))
                    })
                    .collect()
            };
            let result = mann_whitney_u(&sample(&a)?, &sample(&b)?)?;
            println!("{}", serde_json::to_string_pretty(&result)?);
        }
        Some(AnalyzeCmd::Histogram { log, phase }) => {
            let counts = log
                .iter()
                .map(|p| Ok(count_towers_in(&load(p)?, phase.into()) as u32))
                .collect::<Result<Vec<_>>>()?;
            let hist: BTreeMap<String, f64> = tower_histogram(&counts)?
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect();
            println!("{}", serde_json::to_string_pretty(&hist)?);
        }
        Some(AnalyzeCmd::Questionnaire { csv, kind, min, max }) => {
            let q = read_questionnaire(File::open(&csv).with_context(|| format!("opening {}", csv.display()))?)?;
            let default = match kind {
                Kind::Tlx => Scale::TLX,
                Kind::Seq => Scale::SEQ,
                Kind::Ssq => Scale::SSQ,
            };
            let scale = Scale {
                min: min.unwrap_or(default.min),
                max: max.unwrap_or(default.max),
            };
            let out = match kind {
                Kind::Tlx => {
                    let mut groups = BTreeMap::new();
                    for g in q.groups() {
                        let rows = q.tlx_rows(g.as_deref())?;
                        groups.insert(g.unwrap_or_else(|| "all".into()), tlx_raw(&rows, scale)?);
                    }
                    serde_json::to_value(groups)?
                }
                Kind::Seq | Kind::Ssq => serde_json::to_value(summarize_questionnaire(&q, scale)?)?,
            };
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
    }
    Ok(())
}
