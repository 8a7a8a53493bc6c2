//! Plot-ready summaries of trajectory sets: per-time-bin mean and standard
//! deviation across episodes, and a wide table of selected episodes.

use std::collections::BTreeMap;
use std::io::Write;

use dfpd_core::trajectory::TrajectoryRecord;

pub const STATS_HEADER: &str = "t,count,x1_mean,x1_std,x2_mean,x2_std,tau_mean,tau_std";

#[derive(Debug, Clone, PartialEq)]
pub struct BinStats {
    pub t: f64,
    pub count: usize,
    /// x1, x2, tau.
    pub mean: [f64; 3],
    /// Population standard deviation (divides by `count`).
    pub std: [f64; 3],
}

fn channels(r: &TrajectoryRecord) -> [f64; 3] {
    [r.x1, r.x2, r.tau]
}

/// Groups records by time bin `round(t / dt)` and summarizes each bin.
/// Episodes of different length simply contribute to fewer bins.
pub fn aggregate(records: &[TrajectoryRecord], dt: f64) -> Vec<BinStats> {
    let mut bins: BTreeMap<i64, Vec<[f64; 3]>> = BTreeMap::new();
    for r in records {
        bins.entry((r.t / dt).round() as i64).or_default().push(channels(r));
    }
    bins.into_iter()
        .map(|(k, values)| {
            let n = values.len() as f64;
            let mut mean = [0.0; 3];
            let mut std = [0.0; 3];
            for c in 0..3 {
                mean[c] = values.iter().map(|v| v[c]).sum::<f64>() / n;
                let var = values.iter().map(|v| (v[c] - mean[c]).powi(2)).sum::<f64>() / n;
                std[c] = var.sqrt();
            }
            BinStats {
                t: k as f64 * dt,
                count: values.len(),
                mean,
                std,
            }
        })
        .collect()
}

pub fn write_stats<W: Write>(mut w: W, stats: &[BinStats]) -> std::io::Result<()> {
    writeln!(w, "{STATS_HEADER}")?;
    for s in stats {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            s.t, s.count, s.mean[0], s.std[0], s.mean[1], s.std[1], s.mean[2], s.std[2]
        )?;
    }
    Ok(())
}

/// Wide table `t, x1_e<id>, x2_e<id>, tau_e<id>, ...` for the first
/// `max_episodes` episode ids. Cells past the end of a shorter episode stay
/// empty.
pub fn write_episodes<W: Write>(
    mut w: W,
    records: &[TrajectoryRecord],
    dt: f64,
    max_episodes: usize,
) -> std::io::Result<()> {
    let mut episodes: BTreeMap<u64, BTreeMap<i64, [f64; 3]>> = BTreeMap::new();
    for r in records {
        if episodes.len() >= max_episodes && !episodes.contains_key(&r.episode) {
            continue;
        }
        episodes
            .entry(r.episode)
            .or_default()
            .insert((r.t / dt).round() as i64, channels(r));
    }
    let mut header = String::from("t");
    for id in episodes.keys() {
        header.push_str(&format!(",x1_e{id},x2_e{id},tau_e{id}"));
    }
    writeln!(w, "{header}")?;
    let bins: std::collections::BTreeSet<i64> = episodes.values().flat_map(|e| e.keys().copied()).collect();
    for k in bins {
        let mut line = format!("{}", k as f64 * dt);
        for e in episodes.values() {
            match e.get(&k) {
                Some(v) => line.push_str(&format!(",{},{},{}", v[0], v[1], v[2])),
                None => line.push_str(",,,"),
            }
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}
