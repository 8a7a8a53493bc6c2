//! Trajectory CSV records and triplet extraction.
//!
//! Columns: `episode,t,x1,x2,u,tau`. Floats are written in shortest
//! round-trip form, so reading and re-writing a file reproduces it exactly.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::estimator::Triplet;
use crate::grid::UniformGrid;

pub const HEADER: &str = "episode,t,x1,x2,u,tau";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRecord {
    pub episode: u64,
    pub t: f64,
    pub x1: f64,
    pub x2: f64,
    /// Normalized input in `[-1, 1]`.
    pub u: f64,
    pub tau: f64,
}

impl TrajectoryRecord {
    pub fn state(&self) -> [f64; 2] {
        [self.x1, self.x2]
    }
}

pub fn write_csv<W: Write>(mut w: W, records: &[TrajectoryRecord]) -> Result<()> {
    writeln!(w, "{HEADER}")?;
    for r in records {
        writeln!(w, "{},{},{},{},{},{}", r.episode, r.t, r.x1, r.x2, r.u, r.tau)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: BufRead>(r: R) -> Result<Vec<TrajectoryRecord>> {
    let mut lines = r.lines();
    let header = lines.next().transpose()?;
    if header.as_deref().map(str::trim_end) != Some(HEADER) {
        return Err(Error::Format {
            line: 1,
            message: format!("expected header '{HEADER}'"),
        });
    }
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        let lineno = n + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Format {
                line: lineno,
                message: format!("expected 6 fields, found {}", fields.len()),
            });
        }
        let float = |k: usize| -> Result<f64> {
            fields[k].parse::<f64>().map_err(|e| Error::Format {
                line: lineno,
                message: format!("field {}: {e}", k + 1),
            })
        };
        let episode = fields[0].parse::<u64>().map_err(|e| Error::Format {
            line: lineno,
            message: format!("episode id: {e}"),
        })?;
        out.push(TrajectoryRecord {
            episode,
            t: float(1)?,
            x1: float(2)?,
            x2: float(3)?,
            u: float(4)?,
            tau: float(5)?,
        });
    }
    Ok(out)
}

/// `(x(k), u(k), x(k+1))` index triplets from consecutive records of the
/// same episode. Episode boundaries never produce a triplet.
pub fn triplets(
    records: &[TrajectoryRecord],
    state_grid: &UniformGrid,
    input_grid: &UniformGrid,
) -> Result<Vec<Triplet>> {
    let mut out = Vec::with_capacity(records.len());
    for pair in records.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.episode != b.episode {
            continue;
        }
        out.push(Triplet::new(
            state_grid.quantize(&a.state())?,
            input_grid.quantize(&[a.u])?,
            state_grid.quantize(&b.state())?,
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(episode: u64, t: f64, x1: f64) -> TrajectoryRecord {
        TrajectoryRecord {
            episode,
            t,
            x1,
            x2: -x1 / 3.0,
            u: 0.1 * x1,
            tau: 1.15 * x1,
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let records = vec![rec(0, 0.0, 0.1), rec(0, 0.01, 1.0 / 3.0), rec(7, 0.0, -2.5e-17)];
        let mut buf = Vec::new();
        write_csv(&mut buf, &records).unwrap();
        let back = read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, records);
        let mut again = Vec::new();
        write_csv(&mut again, &back).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn empty_dataset_is_header_only() {
        let mut buf = Vec::new();
        write_csv(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), format!("{HEADER}\n"));
        assert!(read_csv(buf.as_slice()).unwrap().is_empty());
    }

    #[test]
    fn schema_errors_carry_line_numbers() {
        let bad = format!("{HEADER}\n0,0,0,0,0,0\n0,0.01,x,0,0,0\n");
        match read_csv(bad.as_bytes()) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            read_csv("a,b\n".as_bytes()),
            Err(Error::Format { line: 1, .. })
        ));
        let short = format!("{HEADER}\n0,0,0\n");
        assert!(matches!(read_csv(short.as_bytes()), Err(Error::Format { line: 2, .. })));
    }

    #[test]
    fn triplets_respect_episode_boundaries() {
        let sg = UniformGrid::from_counts(&[0.0, -1.0], &[1.0, 0.0], &[2, 2]).unwrap();
        let ig = UniformGrid::from_counts(&[-1.0], &[1.0], &[3]).unwrap();
        let records = vec![rec(0, 0.0, 0.0), rec(0, 0.01, 1.0), rec(1, 0.0, 1.0), rec(1, 0.01, 0.0)];
        let t = triplets(&records, &sg, &ig).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].state, sg.quantize(&[0.0, 0.0]).unwrap());
        assert_eq!(t[0].next, sg.quantize(&[1.0, -1.0 / 3.0]).unwrap());
        assert_eq!(t[1].input, 1);
    }
}
