use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::AnalysisError;

pub const TLX_SUBSCALES: [&str; 6] = ["mental", "physical", "temporal", "performance", "effort", "frustration"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scale {
    pub min: f64,
    pub max: f64,
}

impl Scale {
    pub const TLX: Scale = Scale { min: 0.0, max: 20.0 };
    pub const SEQ: Scale = Scale { min: 1.0, max: 7.0 };
    pub const SSQ: Scale = Scale { min: 1.0, max: 4.0 };

    fn check(&self, v: f64) -> Result<(), AnalysisError> {
        if v.is_finite() && v >= self.min && v <= self.max {
            Ok(())
        } else {
            Err(AnalysisError::OutOfScale {
                value: v,
                min: self.min,
                max: self.max,
            })
        }
    }
}

/// Mean and sample standard deviation. With one response `std` is 0 and `n` is 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItemSummary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    pub scale: Scale,
}

pub fn aggregate_items(scores: &[f64], scale: Scale) -> Result<ItemSummary, AnalysisError> {
    if scores.is_empty() {
        return Err(AnalysisError::EmptySample);
    }
    for s in scores {
        scale.check(*s)?;
    }
    let n = scores.len();
    let mean = scores.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (scores.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(ItemSummary {
        mean: mean.clamp(scale.min, scale.max),
        std,
        n,
        scale,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TlxSummary {
    pub subscales: BTreeMap<String, ItemSummary>,
    /// Unweighted subscale mean for each participant.
    pub overall: Vec<f64>,
    pub overall_summary: ItemSummary,
}

/// Raw (unweighted) NASA-TLX over participants, one row of six subscale scores each.
pub fn tlx_raw(responses: &[[f64; 6]], scale: Scale) -> Result<TlxSummary, AnalysisError> {
    if responses.is_empty() {
        return Err(AnalysisError::EmptySample);
    }
    let mut subscales = BTreeMap::new();
    for (i, name) in TLX_SUBSCALES.iter().enumerate() {
        let col: Vec<f64> = responses.iter().map(|r| r[i]).collect();
        subscales.insert((*name).to_owned(), aggregate_items(&col, scale)?);
    }
    let overall: Vec<f64> = responses.iter().map(|r| r.iter().sum::<f64>() / 6.0).collect();
    let overall_summary = aggregate_items(&overall, scale)?;
    Ok(TlxSummary {
        subscales,
        overall,
        overall_summary,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuestionnaireRow {
    pub participant: String,
    pub group: Option<String>,
    pub scores: Vec<f64>,
}

/// CSV questionnaire: a `participant` column, an optional `group` column,
/// then one numeric column per item.
#[derive(Debug, Clone, PartialEq)]
pub struct Questionnaire {
    pub items: Vec<String>,
    pub rows: Vec<QuestionnaireRow>,
}

impl Questionnaire {
    pub fn groups(&self) -> Vec<Option<String>> {
        let mut g: Vec<_> = self.rows.iter().map(|r| r.group.clone()).collect();
        g.sort();
        g.dedup();
        g
    }

    pub fn column(&self, item: &str) -> Option<usize> {
        self.items.iter().position(|i| i == item)
    }

    /// Rows as TLX responses, when all six subscale columns are present.
    pub fn tlx_rows(&self, group: Option<&str>) -> Result<Vec<[f64; 6]>, AnalysisError> {
        let idx = TLX_SUBSCALES
            .iter()
            .map(|s| {
                self.column(s)
                    .ok_or_else(|| AnalysisError::Questionnaire(format!("missing TLX column {s:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self
            .rows
            .iter()
            .filter(|r| group.is_none_or(|g| r.group.as_deref() == Some(g)))
            .map(|r| std::array::from_fn(|i| r.scores[idx[i]]))
            .collect())
    }
}

pub fn read_questionnaire(input: impl Read) -> Result<Questionnaire, AnalysisError> {
    let err = |m: String| AnalysisError::Questionnaire(m);
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers().map_err(|e| err(e.to_string()))?.clone();
    if headers.get(0) != Some("participant") {
        return Err(err("first column must be `participant`".into()));
    }
    let has_group = headers.get(1) == Some("group");
    let first_item = if has_group { 2 } else { 1 };
    let items: Vec<String> = headers.iter().skip(first_item).map(str::to_owned).collect();
    if items.is_empty() {
        return Err(err("no item columns".into()));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| err(format!("line {line}: {e}")))?;
        let scores = rec
            .iter()
            .skip(first_item)
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| err(format!("line {line}: bad score {s:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(QuestionnaireRow {
            participant: rec[0].to_owned(),
            group: has_group.then(|| rec[1].to_owned()),
            scores,
        });
    }
    Ok(Questionnaire { items, rows })
}

/// Per-group, per-item summaries. Rows without a group column fall under `"all"`.
pub fn summarize_questionnaire(
    q: &Questionnaire,
    scale: Scale,
) -> Result<BTreeMap<String, BTreeMap<String, ItemSummary>>, AnalysisError> {
    let mut out = BTreeMap::new();
    for g in q.groups() {
        let rows: Vec<_> = q.rows.iter().filter(|r| r.group == g).collect();
        let mut items = BTreeMap::new();
        for (i, name) in q.items.iter().enumerate() {
            let col: Vec<f64> = rows.iter().map(|r| r.scores[i]).collect();
            items.insert(name.clone(), aggregate_items(&col, scale)?);
        }
        out.insert(g.unwrap_or_else(|| "all".into()), items);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_samples() {
        let s = aggregate_items(&[1.0, 2.0, 3.0], Scale::SEQ).unwrap();
        assert_eq!((s.mean, s.std), (2.0, 1.0));
        let s = aggregate_items(&[4.0, 4.0, 4.0], Scale::SEQ).unwrap();
        assert_eq!((s.mean, s.std), (4.0, 0.0));
        assert_eq!(
            aggregate_items(&[], Scale::SEQ).unwrap_err(),
            AnalysisError::EmptySample
        );
        assert!(matches!(
            aggregate_items(&[0.5], Scale::SSQ),
            Err(AnalysisError::OutOfScale { .. })
        ));
    }

    #[test]
    fn tlx_flat_profile() {
        let scale = Scale { min: 0.0, max: 100.0 };
        let t = tlx_raw(&[[50.0; 6]], scale).unwrap();
        assert_eq!(t.overall, [50.0]);
        assert_eq!(t.overall_summary.n, 1);
        assert_eq!(t.overall_summary.std, 0.0);
        assert!(tlx_raw(&[[21.0; 6]], Scale::TLX).is_err());
    }

    #[test]
    fn csv_groups() {
        let text = "participant,group,mental,physical,temporal,performance,effort,frustration\n\
                    p1,arm6,4,2,3.8,5,6,1\n\
                    p2,arm6,6,2,4.2,5,6,3\n\
                    p3,arm7,1,1,1,1,1,1\n";
        let q = read_questionnaire(text.as_bytes()).unwrap();
        assert_eq!(q.rows.len(), 3);
        let tlx = tlx_raw(&q.tlx_rows(Some("arm6")).unwrap(), Scale::TLX).unwrap();
        assert!((tlx.subscales["temporal"].mean - 4.0).abs() < 1e-12);
        let sums = summarize_questionnaire(&q, Scale::TLX).unwrap();
        assert_eq!(sums["arm7"]["effort"].mean, 1.0);
        assert!(read_questionnaire("id,q1\na,1\n".as_bytes()).is_err());
        assert!(read_questionnaire("participant,q1\na,x\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn matches_two_pass(xs in proptest::collection::vec(1.0f64..7.0, 1000)) {
            let s = aggregate_items(&xs, Scale::SEQ).unwrap();
            let mut sum = 0.0;
            for x in &xs { sum += x; }
            let mean = sum / xs.len() as f64;
            let mut ss = 0.0;
            for x in &xs { ss += (x - mean) * (x - mean); }
            let std = (ss / (xs.len() - 1) as f64).sqrt();
            prop_assert!((s.mean - mean).abs() < 1e-12);
            prop_assert!((s.std - std).abs() < 1e-12);
        }
    }
}
