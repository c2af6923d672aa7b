//! Kappa-index baseline: pairwise asymmetric association between per-learner
//! end-of-trajectory mastery indicators.

use crate::graph::{break_cycles, WeightedRelationMatrix};
use crate::simulator::Dataset;

/// Fraction of the trajectory (from the end) used to judge mastery.
pub const LATE_WINDOW_FRACTION: f64 = 0.5;
/// Minimum attempts in the late window for an indicator to be defined.
pub const MIN_ATTEMPTS: usize = 3;
/// Minimum number of learners with both indicators defined.
pub const MIN_SUPPORT: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MasteryMatrix {
    pub n: usize,
    pub k: usize,
    /// Row-major `n x k`.
    pub mastered: Vec<bool>,
    pub defined: Vec<bool>,
}

impl MasteryMatrix {
    pub fn mastered(&self, s: usize, k: usize) -> bool {
        self.mastered[s * self.k + k]
    }

    pub fn defined(&self, s: usize, k: usize) -> bool {
        self.defined[s * self.k + k]
    }
}

/// A KC counts as mastered by a learner when at least half of the attempts
/// on its exercises within the last `ceil(0.5 T)` steps succeeded, and as
/// defined when that window holds at least three such attempts.
pub fn mastery_matrix(ds: &Dataset) -> MasteryMatrix {
    let k = ds.ground_truth.k();
    let map = &ds.ground_truth.map;
    let n = ds.n_learners();
    let mut mastered = vec![false; n * k];
    let mut defined = vec![false; n * k];
    for (s, traj) in ds.trajectories.iter().enumerate() {
        let len = traj.steps.len();
        let window = (LATE_WINDOW_FRACTION * len as f64).ceil() as usize;
        let mut attempts = vec![0usize; k];
        let mut successes = vec![0usize; k];
        for &(e, ok) in &traj.steps[len - window..] {
            for &kc in map.kcs(e) {
                attempts[kc] += 1;
                successes[kc] += usize::from(ok);
            }
        }
        for kc in 0..k {
            let d = attempts[kc] >= MIN_ATTEMPTS;
            defined[s * k + kc] = d;
            mastered[s * k + kc] = d && 2 * successes[kc] >= attempts[kc];
        }
    }
    MasteryMatrix { n, k, mastered, defined }
}

/// 2x2 table for the ordered pair `(i, j)`: `a` both mastered, `b` only `i`,
/// `c` only `j`, `d` neither.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PairCounts {
    pub a: usize,
    pub b: usize,
    pub c: usize,
    pub d: usize,
}

impl PairCounts {
    pub fn n(&self) -> usize {
        self.a + self.b + self.c + self.d
    }

    /// `max(0, 1 - v / v0)` with `v = c/n` the rate of learners who master
    /// `j` without `i`, and `v0` the same rate expected under independence.
    pub fn score(&self) -> f64 {
        let n = self.n();
        if n < MIN_SUPPORT {
            return 0.0;
        }
        let n = n as f64;
        let v = self.c as f64 / n;
        let v0 = ((self.c + self.d) as f64 / n) * ((self.a + self.c) as f64 / n);
        if v0 > 0.0 {
            (1.0 - v / v0).max(0.0)
        } else {
            0.0
        }
    }
}

pub fn pair_counts(mm: &MasteryMatrix, i: usize, j: usize) -> PairCounts {
    let mut counts = PairCounts::default();
    for s in 0..mm.n {
        if !(mm.defined(s, i) && mm.defined(s, j)) {
            continue;
        }
        match (mm.mastered(s, i), mm.mastered(s, j)) {
            (true, true) => counts.a += 1,
            (true, false) => counts.b += 1,
            (false, true) => counts.c += 1,
            (false, false) => counts.d += 1,
        }
    }
    counts
}

/// Pairwise scores with cycles broken.
pub fn kappa_index(mm: &MasteryMatrix) -> WeightedRelationMatrix {
    let k = mm.k;
    let w = (0..k * k)
        .map(|x| {
            let (i, j) = (x / k, x % k);
            if i == j {
                0.0
            } else {
                pair_counts(mm, i, j).score()
            }
        })
        .collect();
    let raw = WeightedRelationMatrix::from_flat(k, w).expect("scores lie in [0, 1]");
    break_cycles(&raw)
}

pub fn discover(ds: &Dataset) -> WeightedRelationMatrix {
    kappa_index(&mastery_matrix(ds))
}
