//! Line-oriented text formats for estimated models and synthesized policies.
//!
//! Model file (`dfpd-model v1`):
//!
//! ```text
//! dfpd-model v1
//! state_grid 2
//! axis <lower> <upper> <counts>
//! axis <lower> <upper> <counts>
//! input_grid 1
//! axis -1 1 40
//! offsets <o_s> <o_i> <o_n>
//! reference_policy <m>
//! <i> <p_0> ... <p_{z-1}>
//! transitions reference stored=<k> elided=<e>
//! <i> <h> <background> <n> <j>:<p> ...
//! transitions target stored=<k> elided=<e>
//! ...
//! end
//! ```
//!
//! A transition row lists every next state whose probability differs from
//! the row background. Pairs without data are not written; they reload as
//! the uniform row and are counted in `elided`.
//!
//! Policy file (`dfpd-policy v1`): grids, `config_hash`, `horizon`,
//! `max_kkt_residual`, then `rows <m> <z>` followed by `<i> <cost> <p_0> ...`.
//!
//! Floats use shortest round-trip formatting, so load → save is idempotent.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::engine::CostTable;
use crate::error::{Error, Result};
use crate::estimator::{Offsets, PolicyModel, SparseRow, TransitionModel};
use crate::grid::UniformGrid;
use crate::prob::NORMALIZATION_TOLERANCE;

pub const MODEL_MAGIC: &str = "dfpd-model";
pub const POLICY_MAGIC: &str = "dfpd-policy";
pub const FORMAT_VERSION: &str = "v1";

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub state_grid: UniformGrid,
    pub input_grid: UniformGrid,
    pub offsets: Offsets,
    pub reference_policy: PolicyModel,
    pub reference_transitions: TransitionModel,
    pub target_transitions: Option<TransitionModel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyFile {
    pub config_hash: String,
    pub state_grid: UniformGrid,
    pub input_grid: UniformGrid,
    pub horizon: usize,
    pub max_kkt_residual: f64,
    pub policy: PolicyModel,
    pub cost_table: CostTable,
}

fn write_grid(out: &mut String, name: &str, grid: &UniformGrid) {
    let _ = writeln!(out, "{name} {}", grid.dims());
    for d in 0..grid.dims() {
        let _ = writeln!(out, "axis {} {} {}", grid.lower()[d], grid.upper()[d], grid.counts()[d]);
    }
}

fn write_transitions(out: &mut String, name: &str, model: &TransitionModel) {
    let (m, z) = (model.num_states(), model.num_inputs());
    let elided = model.fallback_count();
    let _ = writeln!(out, "transitions {name} stored={} elided={elided}", m * z - elided);
    for i in 0..m {
        for h in 0..z {
            if model.is_fallback(i, h) {
                continue;
            }
            let row = model.row(i, h);
            let _ = write!(out, "{i} {h} {} {}", row.background(), row.entries().len());
            for (j, p) in row.entries() {
                let _ = write!(out, " {j}:{p}");
            }
            out.push('\n');
        }
    }
}

impl ModelFile {
    pub fn num_states(&self) -> usize {
        self.state_grid.len()
    }

    pub fn num_inputs(&self) -> usize {
        self.input_grid.len()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MODEL_MAGIC} {FORMAT_VERSION}");
        write_grid(&mut out, "state_grid", &self.state_grid);
        write_grid(&mut out, "input_grid", &self.input_grid);
        let _ = writeln!(
            out,
            "offsets {} {} {}",
            self.offsets.state, self.offsets.input, self.offsets.next
        );
        let _ = writeln!(out, "reference_policy {}", self.reference_policy.num_states());
        for (i, row) in self.reference_policy.rows().enumerate() {
            let _ = write!(out, "{i}");
            for p in row {
                let _ = write!(out, " {p}");
            }
            out.push('\n');
        }
        write_transitions(&mut out, "reference", &self.reference_transitions);
        if let Some(t) = &self.target_transitions {
            write_transitions(&mut out, "target", t);
        }
        out.push_str("end\n");
        out
    }

    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_text().as_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn load<R: BufRead>(r: R) -> Result<Self> {
        let mut p = Parser::new(r)?;
        p.expect_magic(MODEL_MAGIC)?;
        let state_grid = p.grid("state_grid")?;
        let input_grid = p.grid("input_grid")?;
        let (m, z) = (state_grid.len(), input_grid.len());

        let (line, f) = p.fields()?;
        if f.len() != 4 || f[0] != "offsets" {
            return Err(fmt_err(line, "expected 'offsets <o_s> <o_i> <o_n>'"));
        }
        let offsets = Offsets {
            state: parse(line, &f[1])?,
            input: parse(line, &f[2])?,
            next: parse(line, &f[3])?,
        };
        offsets.validate(m, z).map_err(|e| fmt_err(line, e))?;

        let (line, f) = p.fields()?;
        if f.len() != 2 || f[0] != "reference_policy" || parse::<usize>(line, &f[1])? != m {
            return Err(fmt_err(line, format!("expected 'reference_policy {m}'")));
        }
        let mut rows = Vec::with_capacity(m);
        for i in 0..m {
            let (line, f) = p.fields()?;
            if f.len() != z + 1 || parse::<usize>(line, &f[0])? != i {
                return Err(fmt_err(line, format!("expected policy row {i} with {z} entries")));
            }
            let row = f[1..].iter().map(|s| parse(line, s)).collect::<Result<Vec<f64>>>()?;
            rows.push(row);
            check_sum(line, rows[i].iter().sum())?;
        }
        let reference_policy = PolicyModel::from_rows(&rows).map_err(|e| fmt_err(p.line, e))?;

        let mut reference_transitions = None;
        let mut target_transitions = None;
        loop {
            let (line, f) = p.fields()?;
            match f.first().map(String::as_str) {
                Some("end") => break,
                Some("transitions") if f.len() == 4 => {
                    let name = f[1].as_str();
                    let stored: usize = parse(line, f[2].strip_prefix("stored=").unwrap_or("?"))?;
                    let elided: usize = parse(line, f[3].strip_prefix("elided=").unwrap_or("?"))?;
                    if stored + elided != m * z {
                        return Err(fmt_err(line, format!("stored + elided must equal {}", m * z)));
                    }
                    let model = p.transition_rows(m, z, stored)?;
                    let slot = match name {
                        "reference" => &mut reference_transitions,
                        "target" => &mut target_transitions,
                        other => return Err(fmt_err(line, format!("unknown transition section '{other}'"))),
                    };
                    if slot.replace(model).is_some() {
                        return Err(fmt_err(line, format!("duplicate transition section '{name}'")));
                    }
                }
                _ => {
                    return Err(fmt_err(
                        line,
                        "expected 'transitions <name> stored=<k> elided=<e>' or 'end'",
                    ))
                }
            }
        }
        let reference_transitions =
            reference_transitions.ok_or_else(|| fmt_err(p.line, "missing reference transitions"))?;
        Ok(Self {
            state_grid,
            input_grid,
            offsets,
            reference_policy,
            reference_transitions,
            target_transitions,
        })
    }
}

impl PolicyFile {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{POLICY_MAGIC} {FORMAT_VERSION}");
        let _ = writeln!(out, "config_hash {}", self.config_hash);
        write_grid(&mut out, "state_grid", &self.state_grid);
        write_grid(&mut out, "input_grid", &self.input_grid);
        let _ = writeln!(out, "horizon {}", self.horizon);
        let _ = writeln!(out, "max_kkt_residual {}", self.max_kkt_residual);
        let _ = writeln!(out, "rows {} {}", self.policy.num_states(), self.policy.num_inputs());
        for (i, row) in self.policy.rows().enumerate() {
            let _ = write!(out, "{i} {}", self.cost_table.d[i]);
            for p in row {
                let _ = write!(out, " {p}");
            }
            out.push('\n');
        }
        out.push_str("end\n");
        out
    }

    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_text().as_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn load<R: BufRead>(r: R) -> Result<Self> {
        let mut p = Parser::new(r)?;
        p.expect_magic(POLICY_MAGIC)?;
        let config_hash = p.keyed("config_hash")?.to_string();
        let state_grid = p.grid("state_grid")?;
        let input_grid = p.grid("input_grid")?;
        let (m, z) = (state_grid.len(), input_grid.len());
        let line = p.line + 1;
        let horizon: usize = parse(line, &p.keyed("horizon")?)?;
        let line = p.line + 1;
        let max_kkt_residual: f64 = parse(line, &p.keyed("max_kkt_residual")?)?;
        let (line, f) = p.fields()?;
        if f.len() != 3 || f[0] != "rows" || parse::<usize>(line, &f[1])? != m || parse::<usize>(line, &f[2])? != z {
            return Err(fmt_err(line, format!("expected 'rows {m} {z}' matching the grids")));
        }
        let mut rows = Vec::with_capacity(m);
        let mut d = Vec::with_capacity(m);
        for i in 0..m {
            let (line, f) = p.fields()?;
            if f.len() != z + 2 || parse::<usize>(line, &f[0])? != i {
                return Err(fmt_err(line, format!("expected row {i} with a cost and {z} entries")));
            }
            d.push(parse(line, &f[1])?);
            let row = f[2..].iter().map(|s| parse(line, s)).collect::<Result<Vec<f64>>>()?;
            check_sum(line, row.iter().sum())?;
            rows.push(row);
        }
        let (line, f) = p.fields()?;
        if f != ["end"] {
            return Err(fmt_err(line, "expected 'end'"));
        }
        Ok(Self {
            config_hash,
            state_grid,
            input_grid,
            horizon,
            max_kkt_residual,
            policy: PolicyModel::from_rows(&rows).map_err(|e| fmt_err(line, e))?,
            cost_table: CostTable { d },
        })
    }
}

fn fmt_err(line: usize, message: impl ToString) -> Error {
    Error::Format {
        line,
        message: message.to_string(),
    }
}

fn parse<T: std::str::FromStr>(line: usize, s: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>()
        .map_err(|e| fmt_err(line, format!("cannot parse '{s}': {e}")))
}

fn check_sum(line: usize, total: f64) -> Result<()> {
    if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(fmt_err(line, format!("row sums to {total}")));
    }
    Ok(())
}

struct Parser<R> {
    lines: std::io::Lines<R>,
    line: usize,
}

impl<R: BufRead> Parser<R> {
    fn new(r: R) -> Result<Self> {
        Ok(Self {
            lines: r.lines(),
            line: 0,
        })
    }

    fn next_line(&mut self) -> Result<String> {
        loop {
            self.line += 1;
            match self.lines.next() {
                None => return Err(fmt_err(self.line, "unexpected end of file")),
                Some(l) => {
                    let l = l?;
                    if !l.trim().is_empty() {
                        return Ok(l);
                    }
                }
            }
        }
    }

    fn fields(&mut self) -> Result<(usize, Vec<String>)> {
        let l = self.next_line()?;
        Ok((self.line, l.split_whitespace().map(str::to_string).collect()))
    }

    fn expect_magic(&mut self, magic: &str) -> Result<()> {
        let l = self.next_line()?;
        let mut f = l.split_whitespace();
        if f.next() != Some(magic) {
            return Err(fmt_err(self.line, format!("not a {magic} file")));
        }
        match f.next() {
            Some(v) if v == FORMAT_VERSION => Ok(()),
            Some(v) => Err(fmt_err(
                self.line,
                format!("unsupported {magic} version '{v}' (expected {FORMAT_VERSION})"),
            )),
            None => Err(fmt_err(self.line, "missing format version")),
        }
    }

    fn keyed(&mut self, key: &str) -> Result<String> {
        let l = self.next_line()?;
        let mut f = l.split_whitespace();
        match (f.next(), f.next(), f.next()) {
            (Some(k), Some(v), None) if k == key => Ok(v.to_string()),
            _ => Err(fmt_err(self.line, format!("expected '{key} <value>'"))),
        }
    }

    fn grid(&mut self, name: &str) -> Result<UniformGrid> {
        let dims: usize = {
            let line = self.line + 1;
            parse(line, &self.keyed(name)?)?
        };
        let (mut lower, mut upper, mut counts) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..dims {
            let l = self.next_line()?;
            let f: Vec<&str> = l.split_whitespace().collect();
            if f.len() != 4 || f[0] != "axis" {
                return Err(fmt_err(self.line, "expected 'axis <lower> <upper> <counts>'"));
            }
            lower.push(parse(self.line, f[1])?);
            upper.push(parse(self.line, f[2])?);
            counts.push(parse(self.line, f[3])?);
        }
        UniformGrid::from_counts(&lower, &upper, &counts).map_err(|e| fmt_err(self.line, e))
    }

    fn transition_rows(&mut self, m: usize, z: usize, stored: usize) -> Result<TransitionModel> {
        let mut model = TransitionModel::uniform(m, z);
        let mut previous: Option<(usize, usize)> = None;
        for _ in 0..stored {
            let l = self.next_line()?;
            let line = self.line;
            let f: Vec<&str> = l.split_whitespace().collect();
            if f.len() < 4 {
                return Err(fmt_err(line, "expected '<i> <h> <background> <n> <j>:<p> ...'"));
            }
            let i: usize = parse(line, f[0])?;
            let h: usize = parse(line, f[1])?;
            if i >= m || h >= z {
                return Err(fmt_err(line, format!("pair ({i}, {h}) outside {m} x {z}")));
            }
            if previous.is_some_and(|p| p >= (i, h)) {
                return Err(fmt_err(line, "pairs must be strictly increasing"));
            }
            previous = Some((i, h));
            let background: f64 = parse(line, f[2])?;
            let n: usize = parse(line, f[3])?;
            if f.len() != 4 + n {
                return Err(fmt_err(line, format!("expected {n} entries, found {}", f.len() - 4)));
            }
            let mut entries = Vec::with_capacity(n);
            for e in &f[4..] {
                let (j, p) = e
                    .split_once(':')
                    .ok_or_else(|| fmt_err(line, format!("bad entry '{e}'")))?;
                let j: usize = parse(line, j)?;
                if j >= m {
                    return Err(fmt_err(line, format!("next state {j} out of range")));
                }
                entries.push((j, parse::<f64>(line, p)?));
            }
            let row = SparseRow::new(background, entries).map_err(|e| fmt_err(line, e))?;
            check_sum(line, row.sum(m))?;
            model.set_row(i, h, Some(row)).map_err(|e| fmt_err(line, e))?;
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{build_models, TransitionCounts, Triplet};

    fn sample_model() -> ModelFile {
        let sg = UniformGrid::from_counts(&[-1.0, -2.0], &[1.0, 2.0], &[2, 3]).unwrap();
        let ig = UniformGrid::from_counts(&[-1.0], &[1.0], &[3]).unwrap();
        let counts = TransitionCounts::from_triplets(
            6,
            3,
            [
                Triplet::new(0, 1, 2),
                Triplet::new(0, 1, 2),
                Triplet::new(0, 1, 5),
                Triplet::new(4, 0, 4),
            ],
        )
        .unwrap();
        let offsets = Offsets::default_for(6, 3);
        let (q, qu) = build_models(&counts, offsets).unwrap();
        let target = TransitionCounts::from_triplets(6, 3, [Triplet::new(3, 2, 1)]).unwrap();
        let (p, _) = build_models(&target, offsets).unwrap();
        ModelFile {
            state_grid: sg,
            input_grid: ig,
            offsets,
            reference_policy: qu,
            reference_transitions: q,
            target_transitions: Some(p),
        }
    }

    #[test]
    fn model_round_trip_is_idempotent() {
        let model = sample_model();
        let text = model.to_text();
        let back = ModelFile::load(text.as_bytes()).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.to_text(), text);
        assert!(text.contains("transitions reference stored=2 elided=16"));
        // an elided pair reloads as the uniform row
        assert!(back.reference_transitions.is_fallback(5, 2));
        assert_eq!(back.reference_transitions.dense_row(5, 2), vec![1.0 / 6.0; 6]);
    }

    #[test]
    fn every_emitted_row_sums_to_one() {
        let back = ModelFile::load(sample_model().to_text().as_bytes()).unwrap();
        for model in [&back.reference_transitions, back.target_transitions.as_ref().unwrap()] {
            for i in 0..6 {
                for h in 0..3 {
                    let s: f64 = model.dense_row(i, h).iter().sum();
                    assert!((s - 1.0).abs() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn rejects_unknown_version() {
        let text = sample_model().to_text().replace("dfpd-model v1", "dfpd-model v9");
        let err = ModelFile::load(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("unsupported"), "{err}");
        assert!(matches!(err, Error::Format { line: 1, .. }));
    }

    #[test]
    fn rejects_bad_row_sum_with_line() {
        let text = sample_model().to_text();
        let bad: String = text
            .lines()
            .map(|l| {
                if l.starts_with("0 1 ") {
                    l.replacen(" 2:", " 2:9", 1)
                } else {
                    l.to_string()
                }
            })
            .collect::<Vec<_>>()
            .join("\n");
        let line = bad.lines().position(|l| l.starts_with("0 1 ")).unwrap() + 1;
        match ModelFile::load(bad.as_bytes()) {
            Err(Error::Format { line: l, .. }) => assert_eq!(l, line),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_inconsistent_elided_count() {
        let text = sample_model().to_text().replace("elided=16", "elided=15");
        assert!(ModelFile::load(text.as_bytes()).is_err());
    }

    #[test]
    fn policy_round_trip() {
        let sg = UniformGrid::from_counts(&[0.0], &[1.0], &[2]).unwrap();
        let ig = UniformGrid::from_counts(&[-1.0], &[1.0], &[2]).unwrap();
        let file = PolicyFile {
            config_hash: "abc123".into(),
            state_grid: sg,
            input_grid: ig,
            horizon: 10,
            max_kkt_residual: 3.5e-12,
            policy: PolicyModel::from_rows(&[vec![0.1, 0.9], vec![1.0 / 3.0, 2.0 / 3.0]]).unwrap(),
            cost_table: CostTable {
                d: vec![0.25, -1.0 / 7.0],
            },
        };
        let text = file.to_text();
        let back = PolicyFile::load(text.as_bytes()).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.to_text(), text);

        let wrong = text.replace("dfpd-policy v1", "dfpd-policy v2");
        assert!(PolicyFile::load(wrong.as_bytes()).is_err());
        let truncated: String = text.lines().take(10).collect::<Vec<_>>().join("\n");
        assert!(matches!(
            PolicyFile::load(truncated.as_bytes()),
            Err(Error::Format { .. })
        ));
    }
}
