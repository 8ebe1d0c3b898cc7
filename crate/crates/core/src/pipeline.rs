//! Subsequence windows over LTE sequences and sequence-level voting.
//!
//! Per-subsequence probability rows `P^m` (or `P^{m,k}` across `K` streams)
//! are combined into one likelihood vector `P`, and the predicted class is
//! its argmax with ties going to the lowest index:
//!
//! | scheme | `P_i` |
//! |--------|-------|
//! | MV     | share of rows whose argmax is `i` |
//! | MaxPV  | `max P_i^m` |
//! | AddPV  | `(1/n) sum P_i^m` |
//! | MulPV  | `(1/n) prod P_i^m`, evaluated in log space |
//!
//! where `n = M` for one stream and `n = M K` for several.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numeric::{argmax, Matrix};

/// Floor applied inside the log of the multiplicative scheme.
pub const MULPV_LOG_FLOOR: f64 = 1e-300;

/// Tolerance on the row sums of aggregation inputs.
const ROW_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LastRule {
    /// A full-length window aligned to the end of the sequence.
    TailWindow,
    /// A shorter window covering whatever the stride-aligned windows missed.
    ShortTail,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsequencePlan {
    pub len: usize,
    pub overlap: f64,
    pub last_rule: LastRule,
}

impl Default for SubsequencePlan {
    fn default() -> Self {
        Self {
            len: 32,
            overlap: 0.0,
            last_rule: LastRule::TailWindow,
        }
    }
}

impl SubsequencePlan {
    pub fn new(len: usize, overlap: f64) -> Self {
        Self {
            len,
            overlap,
            ..Self::default()
        }
    }

    pub fn stride(&self) -> usize {
        ((self.len as f64 * (1.0 - self.overlap)).round() as usize).max(1)
    }

    fn validate(&self) -> Result<()> {
        if self.len == 0 {
            return Err(Error::Config("subsequence length must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::Config(format!(
                "overlap fraction must be in [0, 1), got {}",
                self.overlap
            )));
        }
        Ok(())
    }

    /// `(start, length)` of every window for a sequence of `t` steps.
    pub fn windows(&self, t: usize) -> Result<Vec<(usize, usize)>> {
        self.validate()?;
        if t < self.len {
            return Err(Error::Length(format!(
                "sequence of {t} steps is shorter than the subsequence length {}",
                self.len
            )));
        }
        let stride = self.stride();
        let mut out: Vec<(usize, usize)> = (0..)
            .map(|i| i * stride)
            .take_while(|s| s + self.len <= t)
            .map(|s| (s, self.len))
            .collect();
        let (last_start, _) = *out.last().expect("t >= len gives one window");
        if last_start + self.len < t {
            match self.last_rule {
                LastRule::TailWindow => out.push((t - self.len, self.len)),
                LastRule::ShortTail => {
                    let start = last_start + stride;
                    out.push((start, t - start));
                }
            }
        }
        Ok(out)
    }
}

/// Cuts a `T x D` sequence into the plan's windows.
pub fn split_subsequences(seq: &Matrix, plan: &SubsequencePlan) -> Result<Vec<Matrix>> {
    Ok(plan
        .windows(seq.rows())?
        .into_iter()
        .map(|(start, len)| seq.slice_rows(start, len))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VotingScheme {
    Majority,
    MaxPv,
    AddPv,
    MulPv,
}

impl VotingScheme {
    pub const ALL: [VotingScheme; 4] = [
        VotingScheme::Majority,
        VotingScheme::MaxPv,
        VotingScheme::AddPv,
        VotingScheme::MulPv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VotingScheme::Majority => "mv",
            VotingScheme::MaxPv => "maxpv",
            VotingScheme::AddPv => "addpv",
            VotingScheme::MulPv => "mulpv",
        }
    }
}

impl fmt::Display for VotingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VotingScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VotingScheme::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::Config(format!("unknown voting scheme {s:?} (expected mv, maxpv, addpv or mulpv)"))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub likelihood: Vec<f64>,
    pub decision: usize,
}

fn check_rows(rows: &[&[f64]]) -> Result<usize> {
    let first = rows
        .first()
        .ok_or_else(|| Error::Empty("no probability rows to aggregate".into()))?;
    let c = first.len();
    if c == 0 {
        return Err(Error::Empty("probability rows have no classes".into()));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != c {
            return Err(Error::shape(format!("row {i} has {} classes, expected {c}", row.len())));
        }
        if row.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::Data(format!("row {i} has a negative or NaN probability")));
        }
        let total: f64 = row.iter().sum();
        if (total - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::Data(format!("row {i} sums to {total}, not 1")));
        }
    }
    Ok(c)
}

fn aggregate_rows(rows: &[&[f64]], scheme: VotingScheme) -> Result<Aggregate> {
    let c = check_rows(rows)?;
    let n = rows.len() as f64;
    let likelihood: Vec<f64> = match scheme {
        VotingScheme::Majority => {
            let mut votes = vec![0.0; c];
            for row in rows {
                votes[argmax(row)] += 1.0;
            }
            votes.iter().map(|v| v / n).collect()
        }
        VotingScheme::MaxPv => (0..c)
            .map(|i| rows.iter().map(|r| r[i]).fold(f64::NEG_INFINITY, f64::max))
            .collect(),
        VotingScheme::AddPv => (0..c)
            .map(|i| rows.iter().map(|r| r[i]).sum::<f64>() / n)
            .collect(),
        VotingScheme::MulPv => (0..c)
            .map(|i| {
                let log_sum: f64 = rows.iter().map(|r| r[i].max(MULPV_LOG_FLOOR).ln()).sum();
                (log_sum - n.ln()).exp()
            })
            .collect(),
    };
    let decision = argmax(&likelihood);
    Ok(Aggregate {
        likelihood,
        decision,
    })
}

/// Combines `M` subsequence probability rows of one stream.
pub fn aggregate_single<R: AsRef<[f64]>>(probs: &[R], scheme: VotingScheme) -> Result<Aggregate> {
    let rows: Vec<&[f64]> = probs.iter().map(|r| r.as_ref()).collect();
    aggregate_rows(&rows, scheme)
}

/// Combines an `M x K` grid of probability rows (`probs[m][k]`).
pub fn aggregate_multi<R: AsRef<[f64]>>(probs: &[Vec<R>], scheme: VotingScheme) -> Result<Aggregate> {
    if probs.is_empty() {
        return Err(Error::Empty("no subsequences to aggregate".into()));
    }
    let k = probs[0].len();
    if k == 0 {
        return Err(Error::Empty("no streams to aggregate".into()));
    }
    if let Some(m) = probs.iter().position(|s| s.len() != k) {
        return Err(Error::shape(format!(
            "subsequence {m} has {} streams, expected {k}",
            probs[m].len()
        )));
    }
    let rows: Vec<&[f64]> = probs.iter().flatten().map(|r| r.as_ref()).collect();
    aggregate_rows(&rows, scheme)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{softmax, SeededRng};
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn window_examples() {
        let plan = SubsequencePlan::new(32, 0.0);
        let starts = |t: usize, p: &SubsequencePlan| -> Vec<usize> {
            p.windows(t).unwrap().into_iter().map(|(s, _)| s).collect()
        };
        assert_eq!(starts(64, &plan), vec![0, 32]);
        assert_eq!(starts(238, &plan), vec![0, 32, 64, 96, 128, 160, 192, 206]);
        let half = SubsequencePlan::new(32, 0.5);
        assert_eq!(half.stride(), 16);
        let mut want: Vec<usize> = (0..=12).map(|i| i * 16).collect();
        want.push(206);
        assert_eq!(starts(238, &half), want);
        assert_eq!(want.len(), 14);
    }

    #[test]
    fn short_tail_variant() {
        let plan = SubsequencePlan {
            last_rule: LastRule::ShortTail,
            ..SubsequencePlan::default()
        };
        let w = plan.windows(238).unwrap();
        assert_eq!(w.len(), 8);
        assert_eq!(w[7], (224, 14));
    }

    #[test]
    fn window_errors() {
        assert!(matches!(SubsequencePlan::new(32, 0.0).windows(31), Err(Error::Length(_))));
        assert!(matches!(SubsequencePlan::new(0, 0.0).windows(31), Err(Error::Config(_))));
        assert!(matches!(SubsequencePlan::new(4, 1.0).windows(31), Err(Error::Config(_))));
    }

    #[test]
    fn split_copies_rows() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, -(i as f64)]).collect();
        let seq = Matrix::from_rows(&rows).unwrap();
        let subs = split_subsequences(&seq, &SubsequencePlan::new(4, 0.0)).unwrap();
        assert_eq!(subs.len(), 3);
        assert_eq!(subs[2].row(0), &[6.0, -6.0]);
        assert_eq!(subs[2].rows(), 4);
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in VotingScheme::ALL {
            assert_eq!(s.name().parse::<VotingScheme>().unwrap(), s);
        }
        assert!("median".parse::<VotingScheme>().is_err());
    }

    #[test]
    fn single_row_degenerates() {
        let row = [vec![0.2, 0.5, 0.3]];
        for s in VotingScheme::ALL {
            let a = aggregate_single(&row, s).unwrap();
            assert_eq!(a.decision, 1);
            if s != VotingScheme::Majority {
                assert!(close(&a.likelihood, &row[0]));
            }
        }
    }

    #[test]
    fn two_row_example() {
        let rows = [vec![0.6, 0.4], vec![0.5, 0.5]];
        let add = aggregate_single(&rows, VotingScheme::AddPv).unwrap();
        assert!(close(&add.likelihood, &[0.55, 0.45]));
        let mul = aggregate_single(&rows, VotingScheme::MulPv).unwrap();
        assert!(close(&mul.likelihood, &[0.15, 0.10]));
        let max = aggregate_single(&rows, VotingScheme::MaxPv).unwrap();
        assert!(close(&max.likelihood, &[0.6, 0.5]));
        for s in VotingScheme::ALL {
            assert_eq!(aggregate_single(&rows, s).unwrap().decision, 0);
        }
    }

    #[test]
    fn multi_stream_example() {
        let grid = vec![vec![vec![0.7, 0.3], vec![0.2, 0.8]]];
        let add = aggregate_multi(&grid, VotingScheme::AddPv).unwrap();
        assert!(close(&add.likelihood, &[0.45, 0.55]));
        assert_eq!(add.decision, 1);
        let max = aggregate_multi(&grid, VotingScheme::MaxPv).unwrap();
        assert!(close(&max.likelihood, &[0.7, 0.8]));
        assert_eq!(max.decision, 1);
    }

    #[test]
    fn aggregation_errors() {
        let empty: Vec<Vec<f64>> = Vec::new();
        assert!(matches!(aggregate_single(&empty, VotingScheme::AddPv), Err(Error::Empty(_))));
        let no_streams: Vec<Vec<Vec<f64>>> = vec![Vec::new()];
        assert!(matches!(aggregate_multi(&no_streams, VotingScheme::AddPv), Err(Error::Empty(_))));
        assert!(matches!(
            aggregate_single(&[vec![0.7, 0.7]], VotingScheme::AddPv),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            aggregate_single(&[vec![0.5, 0.5], vec![1.0]], VotingScheme::AddPv),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn majority_ties_go_to_lowest_class() {
        let rows = [vec![0.1, 0.9, 0.0], vec![0.1, 0.0, 0.9]];
        let a = aggregate_single(&rows, VotingScheme::Majority).unwrap();
        assert_eq!(a.decision, 1);
        assert!(close(&a.likelihood, &[0.0, 0.5, 0.5]));
    }

    #[test]
    fn mulpv_survives_underflow() {
        let rows: Vec<Vec<f64>> = (0..24).map(|_| vec![1e-30, 1.0 - 2e-30, 1e-30]).collect();
        let a = aggregate_single(&rows, VotingScheme::MulPv).unwrap();
        assert_eq!(a.decision, 1);
        assert!(a.likelihood[1] > 0.0);
    }

    fn prob_rows(m: usize, c: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = SeededRng::new(seed);
        (0..m)
            .map(|_| softmax(&(0..c).map(|_| 3.0 * rng.normal()).collect::<Vec<_>>()))
            .collect()
    }

    proptest! {
        #[test]
        fn permutation_invariance(m in 1usize..7, c in 1usize..6, seed in any::<u64>()) {
            let rows = prob_rows(m, c, seed);
            let mut rev = rows.clone();
            rev.reverse();
            for s in VotingScheme::ALL {
                let a = aggregate_single(&rows, s).unwrap();
                let b = aggregate_single(&rev, s).unwrap();
                for (x, y) in a.likelihood.iter().zip(&b.likelihood) {
                    prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-300));
                }
            }
        }

        #[test]
        fn addpv_stays_a_distribution(m in 1usize..7, c in 1usize..6, seed in any::<u64>()) {
            let a = aggregate_single(&prob_rows(m, c, seed), VotingScheme::AddPv).unwrap();
            prop_assert!((a.likelihood.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn unanimous_dominant_rows_agree(m in 1usize..7, c in 2usize..6, win in 0usize..6, seed in any::<u64>()) {
            let win = win % c;
            let mut rng = SeededRng::new(seed);
            let rows: Vec<Vec<f64>> = (0..m)
                .map(|_| {
                    let mut logits: Vec<f64> = (0..c).map(|_| rng.normal()).collect();
                    logits[win] = 10.0;
                    softmax(&logits)
                })
                .collect();
            for s in VotingScheme::ALL {
                prop_assert_eq!(aggregate_single(&rows, s).unwrap().decision, win);
            }
        }

        #[test]
        fn exact_partition_when_length_divides(len in 1usize..20, count in 1usize..12) {
            let t = len * count;
            let w = SubsequencePlan::new(len, 0.0).windows(t).unwrap();
            let mut covered = vec![0u32; t];
            for (s, l) in w {
                prop_assert_eq!(l, len);
                for c in &mut covered[s..s + l] { *c += 1; }
            }
            prop_assert!(covered.iter().all(|&c| c == 1));
        }
    }
}
