//! Independent oracles shared by integration tests. Nothing here calls into
//! the library's own geometry, statistics or log parsing.
#![allow(dead_code)]

use nalgebra::{Isometry3, Point3, Vector3};
use serde_json::Value;

/// Unsigned distance from `p` to the surface of an axis-aligned (in its own
/// frame) cube of half extent `h` placed at `pose`.
pub fn dist_to_cube(p: &Vector3<f64>, pose: &Isometry3<f64>, h: f64) -> f64 {
    let local = pose.inverse_transform_point(&Point3::from(*p)).coords;
    let q = local.abs() - Vector3::repeat(h);
    let outside = q.map(|c| c.max(0.0)).norm();
    let inside = q.x.max(q.y).max(q.z).min(0.0);
    (outside + inside).abs()
}

/// Distance from `p` to a horizontal rectangle.
pub fn dist_to_rect(p: &Vector3<f64>, center: [f64; 2], half: [f64; 2], z: f64) -> f64 {
    let dx = ((p.x - center[0]).abs() - half[0]).max(0.0);
    let dy = ((p.y - center[1]).abs() - half[1]).max(0.0);
    (dx * dx + dy * dy + (p.z - z) * (p.z - z)).sqrt()
}

/// Distance from `p` to the surface of a capsule around segment `a`-`b`.
pub fn dist_to_capsule(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>, r: f64) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let s = if len2 > 0.0 {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((p - (a + ab * s)).norm() - r).abs()
}

/// Two-sided exact Mann-Whitney p by enumerating every split of the pooled
/// sample: twice the smaller tail probability of U = #{(a, b): a < b} + ties / 2.
pub fn mann_whitney_enumerated(a: &[f64], b: &[f64]) -> (f64, f64) {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (m, total) = (a.len(), pooled.len());
    let u_of = |in_a: &dyn Fn(usize) -> bool| {
        let mut u = 0.0;
        for i in (0..total).filter(|&i| in_a(i)) {
            for j in (0..total).filter(|&j| !in_a(j)) {
                if pooled[i] < pooled[j] {
                    u += 1.0;
                } else if pooled[i] == pooled[j] {
                    u += 0.5;
                }
            }
        }
        u
    };
    let observed = u_of(&|i| i < m);
    let (mut count, mut le, mut ge) = (0u64, 0u64, 0u64);
    for mask in 0u32..(1 << total) {
        if mask.count_ones() as usize != m {
            continue;
        }
        let u = u_of(&|i| mask >> i & 1 == 1);
        count += 1;
        if u <= observed + 1e-9 {
            le += 1;
        }
        if u >= observed - 1e-9 {
            ge += 1;
        }
    }
    let p = (2.0 * le.min(ge) as f64 / count as f64).min(1.0);
    (observed, p)
}

/// Pick, place and collapse counts per phase from raw JSONL text.
/// Lines before any phase change belong to practice.
#[derive(Debug, Default, Clone, Copy, PartialEq)]
pub struct Recount {
    pub picks: u64,
    pub places: u64,
    pub collapses: u64,
    pub towers: u64,
}

pub fn recount(text: &str, phase: &str) -> Recount {
    let mut current = "practice".to_owned();
    let mut r = Recount::default();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let v: Value = serde_json::from_str(line).unwrap();
        if v.get("record").is_some() {
            continue;
        }
        let kind = v["type"].as_str().unwrap();
        if kind == "phase_change" {
            current = v["detail"]["to"].as_str().unwrap().to_owned();
        }
        if current != phase {
            continue;
        }
        match kind {
            "pick" => r.picks += 1,
            "place" => r.places += 1,
            "collapse" => r.collapses += 1,
            "tower_complete" => r.towers += 1,
            _ => {}
        }
    }
    r
}
