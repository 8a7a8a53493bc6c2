//! Empirical conditional pmfs from quantized transition triplets.
//!
//! Counts are smoothed by the offset chain `o_i = o_s / z`, `o_n = o_i / m`
//! so that every estimated row is a strictly positive pmf and pairs never
//! seen in the data fall back to the uniform row.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::prob;

/// One `(x(k), u(k), x(k+1))` observation as cell indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triplet {
    pub state: usize,
    pub input: usize,
    pub next: usize,
}

impl Triplet {
    pub fn new(state: usize, input: usize, next: usize) -> Self {
        Self { state, input, next }
    }
}

/// Occurrence counts `c_X`, `c_{U|X}` and `c_{X|X,U}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionCounts {
    num_states: usize,
    num_inputs: usize,
    next: HashMap<(usize, usize), Vec<(usize, u64)>>,
    input: Vec<u64>,
    state: Vec<u64>,
}

impl TransitionCounts {
    pub fn new(num_states: usize, num_inputs: usize) -> Self {
        Self {
            num_states,
            num_inputs,
            next: HashMap::new(),
            input: vec![0; num_states * num_inputs],
            state: vec![0; num_states],
        }
    }

    pub fn from_triplets<I>(num_states: usize, num_inputs: usize, triplets: I) -> Result<Self>
    where
        I: IntoIterator<Item = Triplet>,
    {
        let mut counts = Self::new(num_states, num_inputs);
        counts.ingest(triplets)?;
        Ok(counts)
    }

    pub fn ingest<I>(&mut self, triplets: I) -> Result<()>
    where
        I: IntoIterator<Item = Triplet>,
    {
        for t in triplets {
            self.record(t)?;
        }
        Ok(())
    }

    pub fn record(&mut self, t: Triplet) -> Result<()> {
        let (m, z) = (self.num_states, self.num_inputs);
        for (index, len) in [(t.state, m), (t.input, z), (t.next, m)] {
            if index >= len {
                return Err(Error::OutOfRange { index, len });
            }
        }
        let row = self.next.entry((t.state, t.input)).or_default();
        match row.iter_mut().find(|(j, _)| *j == t.next) {
            Some((_, c)) => *c += 1,
            None => row.push((t.next, 1)),
        }
        self.input[t.state * z + t.input] += 1;
        self.state[t.state] += 1;
        Ok(())
    }

    /// Adds another shard of counts over the same alphabets.
    pub fn merge(&mut self, other: &TransitionCounts) -> Result<()> {
        if other.num_states != self.num_states || other.num_inputs != self.num_inputs {
            return Err(Error::Dimension {
                expected: self.num_states * self.num_inputs,
                actual: other.num_states * other.num_inputs,
            });
        }
        for (key, other_row) in &other.next {
            let row = self.next.entry(*key).or_default();
            for &(j, c) in other_row {
                match row.iter_mut().find(|(jj, _)| *jj == j) {
                    Some((_, cc)) => *cc += c,
                    None => row.push((j, c)),
                }
            }
        }
        self.input.iter_mut().zip(&other.input).for_each(|(a, b)| *a += b);
        self.state.iter_mut().zip(&other.state).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_inputs(&self) -> usize {
        self.num_inputs
    }

    /// Dense `c_{X|X,U}(x_i, u_h)` vector of length m.
    pub fn next_counts(&self, state: usize, input: usize) -> Vec<u64> {
        let mut dense = vec![0; self.num_states];
        if let Some(row) = self.next.get(&(state, input)) {
            for &(j, c) in row {
                dense[j] = c;
            }
        }
        dense
    }

    /// `c_{U|X}(x_i)` of length z.
    pub fn input_counts(&self, state: usize) -> &[u64] {
        &self.input[state * self.num_inputs..(state + 1) * self.num_inputs]
    }

    pub fn state_count(&self, state: usize) -> u64 {
        self.state[state]
    }

    pub fn total(&self) -> u64 {
        self.state.iter().sum()
    }

    /// Number of states visited at least once as the source of a transition.
    pub fn visited_states(&self) -> usize {
        self.state.iter().filter(|&&c| c > 0).count()
    }

    /// Sets the counts for one `(state, input)` pair directly.
    pub fn set_next_counts(&mut self, state: usize, input: usize, counts: &[u64]) -> Result<()> {
        if counts.len() != self.num_states {
            return Err(Error::Dimension {
                expected: self.num_states,
                actual: counts.len(),
            });
        }
        if state >= self.num_states || input >= self.num_inputs {
            return Err(Error::OutOfRange {
                index: state * self.num_inputs + input,
                len: self.num_states * self.num_inputs,
            });
        }
        let old: u64 = self
            .next
            .get(&(state, input))
            .map(|r| r.iter().map(|x| x.1).sum())
            .unwrap_or(0);
        let new: u64 = counts.iter().sum();
        let row: Vec<(usize, u64)> = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(j, &c)| (j, c))
            .collect();
        if row.is_empty() {
            self.next.remove(&(state, input));
        } else {
            self.next.insert((state, input), row);
        }
        let slot = &mut self.input[state * self.num_inputs + input];
        *slot = *slot - old + new;
        self.state[state] = self.state[state] - old + new;
        Ok(())
    }
}

/// Additive smoothing constants `o_s`, `o_i`, `o_n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Offsets {
    pub state: f64,
    pub input: f64,
    pub next: f64,
}

impl Offsets {
    /// Derives `o_i = o_s / z` and `o_n = o_i / m` from `o_s`.
    pub fn new(state_offset: f64, num_states: usize, num_inputs: usize) -> Result<Self> {
        let offsets = Self {
            state: state_offset,
            input: state_offset / num_inputs as f64,
            next: state_offset / num_inputs as f64 / num_states as f64,
        };
        offsets.validate(num_states, num_inputs)?;
        Ok(offsets)
    }

    /// `o_s = 1/m`, the largest admissible state offset.
    pub fn default_for(num_states: usize, num_inputs: usize) -> Self {
        Self::new(1.0 / num_states as f64, num_states, num_inputs).expect("1/m is admissible")
    }

    pub fn validate(&self, num_states: usize, num_inputs: usize) -> Result<()> {
        let (m, z) = (num_states as f64, num_inputs as f64);
        if !(self.state > 0.0) || !self.state.is_finite() {
            return Err(Error::Config(format!(
                "state offset must be positive, got {}",
                self.state
            )));
        }
        if self.state > 1.0 / m * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "state offset {} exceeds 1/m = {}",
                self.state,
                1.0 / m
            )));
        }
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs();
        if !close(self.input, self.state / z) || !close(self.next, self.input / m) {
            return Err(Error::Config(format!(
                "offsets must satisfy o_i = o_s/z and o_n = o_i/m (got o_s={}, o_i={}, o_n={})",
                self.state, self.input, self.next
            )));
        }
        Ok(())
    }
}

/// A pmf row of length m stored as a shared background value plus the
/// entries that differ from it, sorted by index.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRow {
    background: f64,
    entries: Vec<(usize, f64)>,
}

impl SparseRow {
    pub fn uniform(len: usize) -> Self {
        Self {
            background: 1.0 / len as f64,
            entries: Vec::new(),
        }
    }

    /// Entries must have strictly increasing indices.
    pub fn new(background: f64, entries: Vec<(usize, f64)>) -> Result<Self> {
        if entries.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Domain("sparse row indices must be strictly increasing".into()));
        }
        if !(background >= 0.0) || entries.iter().any(|e| !(e.1 >= 0.0)) {
            return Err(Error::Domain("sparse row has a negative or NaN entry".into()));
        }
        Ok(Self { background, entries })
    }

    pub fn from_dense(dense: &[f64]) -> Self {
        Self {
            background: 0.0,
            entries: dense
                .iter()
                .enumerate()
                .filter(|(_, &p)| p != 0.0)
                .map(|(j, &p)| (j, p))
                .collect(),
        }
    }

    pub fn background(&self) -> f64 {
        self.background
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn get(&self, j: usize) -> f64 {
        match self.entries.binary_search_by_key(&j, |e| e.0) {
            Ok(pos) => self.entries[pos].1,
            Err(_) => self.background,
        }
    }

    pub fn to_dense(&self, len: usize) -> Vec<f64> {
        let mut dense = vec![self.background; len];
        for &(j, p) in &self.entries {
            dense[j] = p;
        }
        dense
    }

    pub fn sum(&self, len: usize) -> f64 {
        self.background * (len - self.entries.len()) as f64 + self.entries.iter().map(|e| e.1).sum::<f64>()
    }

    fn scale(&mut self, factor: f64) {
        self.background *= factor;
        self.entries.iter_mut().for_each(|e| e.1 *= factor);
    }

    /// `Σ_j p_j v_j`, given `total = Σ_j v_j`.
    pub fn expectation(&self, values: &[f64], total: f64) -> f64 {
        let mut acc = self.background * total;
        for &(j, p) in &self.entries {
            acc += (p - self.background) * values[j];
        }
        acc
    }

    /// `KL(self || other)` for two rows of length `len`.
    pub fn kl_divergence(&self, other: &SparseRow, len: usize) -> Result<f64> {
        let term = |index: usize, p: f64, q: f64| -> Result<f64> {
            if p > 0.0 {
                if q <= 0.0 {
                    return Err(Error::KlUndefined { index, p });
                }
                Ok(p * (p / q).ln())
            } else {
                Ok(0.0)
            }
        };
        let (a, b) = (&self.entries, &other.entries);
        let (mut x, mut y) = (0, 0);
        let mut union = 0;
        let mut acc = 0.0;
        while x < a.len() || y < b.len() {
            let ja = a.get(x).map_or(usize::MAX, |e| e.0);
            let jb = b.get(y).map_or(usize::MAX, |e| e.0);
            let (j, p, q) = if ja == jb {
                x += 1;
                y += 1;
                (ja, a[x - 1].1, b[y - 1].1)
            } else if ja < jb {
                x += 1;
                (ja, a[x - 1].1, other.background)
            } else {
                y += 1;
                (jb, self.background, b[y - 1].1)
            };
            acc += term(j, p, q)?;
            union += 1;
        }
        if union < len && self.background > 0.0 {
            if other.background <= 0.0 {
                // first index outside both supports, for the error report
                let index = (0..len)
                    .find(|j| {
                        self.entries.binary_search_by_key(j, |e| e.0).is_err()
                            && other.entries.binary_search_by_key(j, |e| e.0).is_err()
                    })
                    .unwrap_or(0);
                return Err(Error::KlUndefined {
                    index,
                    p: self.background,
                });
            }
            acc += (len - union) as f64 * term(0, self.background, other.background)?;
        }
        Ok(acc)
    }
}

/// Conditional pmf `P(x' | x_i, u_h)` over m next states for each of the
/// m·z `(i, h)` pairs. Pairs without data use the uniform row.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    num_states: usize,
    num_inputs: usize,
    rows: Vec<Option<SparseRow>>,
    uniform: SparseRow,
}

impl TransitionModel {
    /// All rows uniform.
    pub fn uniform(num_states: usize, num_inputs: usize) -> Self {
        Self {
            num_states,
            num_inputs,
            rows: vec![None; num_states * num_inputs],
            uniform: SparseRow::uniform(num_states),
        }
    }

    /// From a dense `[i][h][j]` tensor; every row must be a pmf.
    pub fn from_dense(tensor: &[Vec<Vec<f64>>]) -> Result<Self> {
        let m = tensor.len();
        let z = tensor.first().map_or(0, |r| r.len());
        if m == 0 || z == 0 {
            return Err(Error::Dimension { expected: 1, actual: 0 });
        }
        let mut model = Self::uniform(m, z);
        for (i, per_state) in tensor.iter().enumerate() {
            if per_state.len() != z {
                return Err(Error::Dimension {
                    expected: z,
                    actual: per_state.len(),
                });
            }
            for (h, row) in per_state.iter().enumerate() {
                if row.len() != m {
                    return Err(Error::Dimension {
                        expected: m,
                        actual: row.len(),
                    });
                }
                prob::check_pmf(row)?;
                model.rows[i * z + h] = Some(SparseRow::from_dense(row));
            }
        }
        Ok(model)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_inputs(&self) -> usize {
        self.num_inputs
    }

    pub fn row(&self, state: usize, input: usize) -> &SparseRow {
        self.rows[state * self.num_inputs + input]
            .as_ref()
            .unwrap_or(&self.uniform)
    }

    /// True when the pair had no data and the uniform row is used.
    pub fn is_fallback(&self, state: usize, input: usize) -> bool {
        self.rows[state * self.num_inputs + input].is_none()
    }

    pub fn prob(&self, state: usize, input: usize, next: usize) -> f64 {
        self.row(state, input).get(next)
    }

    pub fn dense_row(&self, state: usize, input: usize) -> Vec<f64> {
        self.row(state, input).to_dense(self.num_states)
    }

    /// Replaces one row; `None` restores the uniform fallback.
    pub fn set_row(&mut self, state: usize, input: usize, row: Option<SparseRow>) -> Result<()> {
        if state >= self.num_states || input >= self.num_inputs {
            return Err(Error::OutOfRange {
                index: state * self.num_inputs + input,
                len: self.num_states * self.num_inputs,
            });
        }
        if let Some(r) = &row {
            if r.entries.last().is_some_and(|e| e.0 >= self.num_states) {
                return Err(Error::OutOfRange {
                    index: r.entries.last().unwrap().0,
                    len: self.num_states,
                });
            }
        }
        self.rows[state * self.num_inputs + input] = row;
        Ok(())
    }

    pub fn fallback_count(&self) -> usize {
        self.rows.iter().filter(|r| r.is_none()).count()
    }
}

/// Conditional pmf `P(u | x_i)`, dense m × z.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    num_states: usize,
    num_inputs: usize,
    probs: Vec<f64>,
}

impl PolicyModel {
    pub fn uniform(num_states: usize, num_inputs: usize) -> Self {
        Self {
            num_states,
            num_inputs,
            probs: vec![1.0 / num_inputs as f64; num_states * num_inputs],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        let z = rows.first().map_or(0, |r| r.len());
        if m == 0 || z == 0 {
            return Err(Error::Dimension { expected: 1, actual: 0 });
        }
        let mut probs = Vec::with_capacity(m * z);
        for row in rows {
            if row.len() != z {
                return Err(Error::Dimension {
                    expected: z,
                    actual: row.len(),
                });
            }
            prob::check_pmf(row)?;
            probs.extend_from_slice(row);
        }
        Ok(Self {
            num_states: m,
            num_inputs: z,
            probs,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_inputs(&self) -> usize {
        self.num_inputs
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.probs[state * self.num_inputs..(state + 1) * self.num_inputs]
    }

    pub fn set_row(&mut self, state: usize, row: &[f64]) -> Result<()> {
        if row.len() != self.num_inputs {
            return Err(Error::Dimension {
                expected: self.num_inputs,
                actual: row.len(),
            });
        }
        if state >= self.num_states {
            return Err(Error::OutOfRange {
                index: state,
                len: self.num_states,
            });
        }
        self.probs[state * self.num_inputs..(state + 1) * self.num_inputs].copy_from_slice(row);
        Ok(())
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks(self.num_inputs)
    }
}

/// Empirical transition model and input policy from counts.
pub fn build_models(counts: &TransitionCounts, offsets: Offsets) -> Result<(TransitionModel, PolicyModel)> {
    let (m, z) = (counts.num_states, counts.num_inputs);
    offsets.validate(m, z)?;

    let mut transitions = TransitionModel::uniform(m, z);
    let mut keys: Vec<_> = counts.next.keys().copied().collect();
    keys.sort_unstable();
    for (i, h) in keys {
        let observed = counts.input[i * z + h];
        if observed == 0 {
            continue;
        }
        let denom = offsets.input + observed as f64;
        let mut entries: Vec<(usize, f64)> = counts.next[&(i, h)]
            .iter()
            .map(|&(j, c)| (j, (offsets.next + c as f64) / denom))
            .collect();
        entries.sort_unstable_by_key(|e| e.0);
        let mut row = SparseRow {
            background: offsets.next / denom,
            entries,
        };
        let total = row.sum(m);
        row.scale(1.0 / total);
        transitions.rows[i * z + h] = Some(row);
    }

    let mut policy = PolicyModel::uniform(m, z);
    for i in 0..m {
        let denom = offsets.state + counts.state[i] as f64;
        let mut row: Vec<f64> = counts
            .input_counts(i)
            .iter()
            .map(|&c| (offsets.input + c as f64) / denom)
            .collect();
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= total);
        policy.set_row(i, &row)?;
    }
    Ok((transitions, policy))
}
