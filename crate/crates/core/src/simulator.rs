//! Generative student model.
//!
//! Each learner carries a long-term proficiency `L` and a short-term
//! proficiency `H >= L` per KC. Practice raises both, with the long-term gain
//! gated by the learner's long-term mastery of the KC's direct prerequisites
//! and divided by the current short/long gap (spaced practice). Between
//! steps, `H` decays exponentially back towards `L`. Success probability is a
//! guess/slip-bounded logistic in the weakest short-term proficiency among the
//! exercise's KCs, relative to the exercise difficulty.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::exec::Exec;
use crate::graph::{
    sample_kc_exercise_map, sample_knowledge_structure, GraphError, KcExerciseMap, KnowledgeStructure,
    DEFAULT_MAX_REJECTIONS,
};
use crate::math::{mean, sigmoid};
use crate::seed::{rng_for, SimRng};

/// Half-widths of the uniform guess/slip ranges around the configured centres.
const GUESS_HALF_WIDTH: f64 = 0.075;
const SLIP_HALF_WIDTH: f64 = 0.04;
/// Fraction of the success gain earned by a failed attempt.
pub const FAILURE_GAIN_FACTOR: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulatorConfig {
    /// Centre of the profile guess range.
    pub guess_star: f64,
    /// Centre of the profile slip range.
    pub slip_star: f64,
    pub level_mean: f64,
    pub level_sd: f64,
    pub difficulty_low: f64,
    pub difficulty_high: f64,
    pub mastery_threshold: f64,
    pub gate_scale: f64,
    pub success_scale: f64,
    pub short_gain: f64,
    pub long_gain: f64,
    pub gap_scale: f64,
    pub forget_tau: f64,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        Self {
            guess_star: 0.125,
            slip_star: 0.06,
            level_mean: 1000.0,
            level_sd: 100.0,
            difficulty_low: 1100.0,
            difficulty_high: 1900.0,
            mastery_threshold: 1500.0,
            gate_scale: 100.0,
            success_scale: 150.0,
            short_gain: 60.0,
            long_gain: 40.0,
            gap_scale: 100.0,
            forget_tau: 10.0,
        }
    }
}

impl SimulatorConfig {
    pub fn validate(&self) -> Result<(), String> {
        let range_ok = |c: f64, h: f64| c - h >= 0.0 && c + h < 1.0;
        if !range_ok(self.guess_star, GUESS_HALF_WIDTH) {
            return Err(format!(
                "simulator.guess_star must lie in [{GUESS_HALF_WIDTH}, {})",
                1.0 - GUESS_HALF_WIDTH
            ));
        }
        if !range_ok(self.slip_star, SLIP_HALF_WIDTH) {
            return Err(format!(
                "simulator.slip_star must lie in [{SLIP_HALF_WIDTH}, {})",
                1.0 - SLIP_HALF_WIDTH
            ));
        }
        if self.guess_star + GUESS_HALF_WIDTH + self.slip_star + SLIP_HALF_WIDTH >= 1.0 {
            return Err("simulator.guess_star + simulator.slip_star too large: guess + slip must stay < 1".into());
        }
        let scales = [
            ("simulator.level_sd", self.level_sd),
            ("simulator.gate_scale", self.gate_scale),
            ("simulator.success_scale", self.success_scale),
            ("simulator.gap_scale", self.gap_scale),
            ("simulator.forget_tau", self.forget_tau),
        ];
        for (name, v) in scales {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.difficulty_low < self.difficulty_high) {
            return Err("simulator.difficulty_low must be below simulator.difficulty_high".into());
        }
        if self.short_gain < 0.0 || self.long_gain < 0.0 {
            return Err("simulator gains must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnerProfile {
    pub rate_multiplier: f64,
    pub guess: f64,
    pub slip: f64,
}

impl LearnerProfile {
    pub fn sample<R: Rng + ?Sized>(cfg: &SimulatorConfig, rng: &mut R) -> Self {
        let rate_multiplier = rng.random_range(0.5..=1.5);
        let guess = rng.random_range(cfg.guess_star - GUESS_HALF_WIDTH..=cfg.guess_star + GUESS_HALF_WIDTH);
        let slip = rng.random_range(cfg.slip_star - SLIP_HALF_WIDTH..=cfg.slip_star + SLIP_HALF_WIDTH);
        Self {
            rate_multiplier,
            guess,
            slip,
        }
    }
}

/// Draws `n` profiles: rate multiplier in [0.5, 1.5], guess and slip uniform
/// around the configured centres (defaults give [0.05, 0.2] and [0.02, 0.1]).
pub fn sample_profiles<R: Rng + ?Sized>(cfg: &SimulatorConfig, n: usize, rng: &mut R) -> Vec<LearnerProfile> {
    (0..n).map(|_| LearnerProfile::sample(cfg, rng)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerState {
    pub long_term: Vec<f64>,
    pub short_term: Vec<f64>,
}

impl LearnerState {
    pub fn uniform(k: usize, level: f64) -> Self {
        Self {
            long_term: vec![level; k],
            short_term: vec![level; k],
        }
    }

    /// Initial levels i.i.d. normal per KC; short-term starts equal to long-term.
    pub fn sample<R: Rng + ?Sized>(cfg: &SimulatorConfig, k: usize, rng: &mut R) -> Self {
        let normal = Normal::new(cfg.level_mean, cfg.level_sd).expect("validated level_sd");
        let long_term: Vec<f64> = (0..k).map(|_| normal.sample(rng)).collect();
        Self {
            short_term: long_term.clone(),
            long_term,
        }
    }

    pub fn k(&self) -> usize {
        self.long_term.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub ks: KnowledgeStructure,
    pub map: KcExerciseMap,
    pub difficulty: Vec<f64>,
}

impl GroundTruth {
    pub fn k(&self) -> usize {
        self.ks.k()
    }

    pub fn e(&self) -> usize {
        self.map.e()
    }

    /// Random structure, exercise map and uniform difficulties.
    pub fn sample<R: Rng + ?Sized>(cfg: &SimulatorConfig, k: usize, e: usize, rng: &mut R) -> Result<Self, GraphError> {
        let ks = sample_knowledge_structure(k, rng);
        let map = sample_kc_exercise_map(&ks, e, rng, DEFAULT_MAX_REJECTIONS)?;
        let difficulty = (0..e)
            .map(|_| rng.random_range(cfg.difficulty_low..=cfg.difficulty_high))
            .collect();
        Ok(Self { ks, map, difficulty })
    }
}

pub fn success_probability(state: &LearnerState, profile: &LearnerProfile, gt: &GroundTruth, cfg: &SimulatorConfig, e: usize) -> f64 {
    let weakest = gt
        .map
        .kcs(e)
        .iter()
        .map(|&k| state.short_term[k])
        .fold(f64::INFINITY, f64::min);
    let slack = 1.0 - profile.guess - profile.slip;
    profile.guess + slack * sigmoid((weakest - gt.difficulty[e]) / cfg.success_scale)
}

/// Readiness of KC `k`: product over direct parents of the logistic long-term
/// mastery gate, or 1 for a root KC.
pub fn readiness(state: &LearnerState, ks: &KnowledgeStructure, cfg: &SimulatorConfig, k: usize) -> f64 {
    ks.parents(k)
        .map(|j| sigmoid((state.long_term[j] - cfg.mastery_threshold) / cfg.gate_scale))
        .product()
}

pub fn apply_practice(
    state: &mut LearnerState,
    profile: &LearnerProfile,
    gt: &GroundTruth,
    cfg: &SimulatorConfig,
    e: usize,
    success: bool,
) {
    let outcome = if success { 1.0 } else { FAILURE_GAIN_FACTOR };
    // Gates read long-term levels from before this step.
    let gates: Vec<(usize, f64)> = gt
        .map
        .kcs(e)
        .iter()
        .map(|&k| (k, readiness(state, &gt.ks, cfg, k)))
        .collect();
    for (k, r) in gates {
        let gain = profile.rate_multiplier * r * outcome;
        let gap = state.short_term[k] - state.long_term[k];
        state.short_term[k] += gain * cfg.short_gain;
        state.long_term[k] += gain * cfg.long_gain / (1.0 + gap / cfg.gap_scale);
        if state.short_term[k] < state.long_term[k] {
            state.short_term[k] = state.long_term[k];
        }
    }
}

pub fn apply_forgetting(state: &mut LearnerState, cfg: &SimulatorConfig) {
    let decay = (-1.0 / cfg.forget_tau).exp();
    for (h, &l) in state.short_term.iter_mut().zip(&state.long_term) {
        *h = l + (*h - l) * decay;
    }
}

/// Samples the outcome, then applies practice and one step of forgetting.
pub fn simulate_step<R: Rng + ?Sized>(
    state: &mut LearnerState,
    profile: &LearnerProfile,
    gt: &GroundTruth,
    cfg: &SimulatorConfig,
    e: usize,
    rng: &mut R,
) -> bool {
    let p = success_probability(state, profile, gt, cfg, e);
    let success = rng.random::<f64>() < p;
    apply_practice(state, profile, gt, cfg, e, success);
    apply_forgetting(state, cfg);
    success
}

pub fn mean_long_term(state: &LearnerState) -> f64 {
    mean(&state.long_term)
}

/// Non-adaptive exercise sequencing used to collect training trajectories.
pub trait Sequencer: Sync {
    fn next_exercise(&self, step: usize, rng: &mut SimRng) -> usize;
}

/// Uniform draws over all exercises.
#[derive(Debug, Clone, Copy)]
pub struct RandomSequencer {
    pub e: usize,
}

impl Sequencer for RandomSequencer {
    fn next_exercise(&self, _step: usize, rng: &mut SimRng) -> usize {
        rng.random_range(0..self.e)
    }
}

pub fn random_sequencer(gt: &GroundTruth) -> RandomSequencer {
    RandomSequencer { e: gt.e() }
}

/// Curriculum built from a random half of the ground-truth edges.
///
/// Exercises are ranked by the largest topological position of their KCs in
/// the retained subgraph; a window of fixed width slides linearly over the
/// ranked list so that it reaches the end at the last step, and each step
/// draws uniformly within the window.
#[derive(Debug, Clone, PartialEq)]
pub struct InformedSequencer {
    pub order: Vec<usize>,
    pub window: usize,
    pub horizon: usize,
    pub kept_edges: Vec<(usize, usize)>,
}

impl InformedSequencer {
    pub fn new<R: Rng + ?Sized>(gt: &GroundTruth, horizon: usize, rng: &mut R) -> Self {
        let window = gt.e().div_ceil(4).max(1);
        Self::with_window(gt, horizon, window, rng)
    }

    pub fn with_window<R: Rng + ?Sized>(gt: &GroundTruth, horizon: usize, window: usize, rng: &mut R) -> Self {
        let edges = gt.ks.edges();
        let keep = edges.len().div_ceil(2);
        let kept_edges: Vec<(usize, usize)> = rand::seq::index::sample(rng, edges.len(), keep)
            .into_iter()
            .map(|x| edges[x])
            .collect();
        Self::from_kept_edges(gt, kept_edges, horizon, window, rng)
    }

    /// Builds the ranking from an explicit subset of the ground-truth edges.
    pub fn from_kept_edges<R: Rng + ?Sized>(
        gt: &GroundTruth,
        mut kept_edges: Vec<(usize, usize)>,
        horizon: usize,
        window: usize,
        rng: &mut R,
    ) -> Self {
        let k = gt.k();
        kept_edges.sort_unstable();
        let sub = KnowledgeStructure::from_edges(k, &kept_edges).expect("subgraph of a DAG is a DAG");

        // Kahn order with random tie-breaking among ready KCs.
        let tiebreak: Vec<f64> = (0..k).map(|_| rng.random()).collect();
        let mut indegree: Vec<usize> = (0..k).map(|j| sub.parents(j).count()).collect();
        let mut rank = vec![0usize; k];
        let mut ready: Vec<usize> = (0..k).filter(|&j| indegree[j] == 0).collect();
        let mut next = 0;
        while !ready.is_empty() {
            let pos = (0..ready.len())
                .min_by(|&a, &b| tiebreak[ready[a]].total_cmp(&tiebreak[ready[b]]))
                .expect("nonempty");
            let v = ready.swap_remove(pos);
            rank[v] = next;
            next += 1;
            for c in sub.adjacency().children(v) {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.push(c);
                }
            }
        }

        let exercise_key: Vec<(usize, f64)> = (0..gt.e())
            .map(|e| {
                let r = gt.map.kcs(e).iter().map(|&kc| rank[kc]).max().unwrap_or(0);
                (r, rng.random::<f64>())
            })
            .collect();
        let mut order: Vec<usize> = (0..gt.e()).collect();
        order.sort_by(|&a, &b| {
            exercise_key[a]
                .0
                .cmp(&exercise_key[b].0)
                .then(exercise_key[a].1.total_cmp(&exercise_key[b].1))
        });
        Self {
            order,
            window: window.clamp(1, gt.e().max(1)),
            horizon,
            kept_edges,
        }
    }

    /// First ranked position covered by the window at `step`.
    pub fn window_start(&self, step: usize) -> usize {
        let slack = self.order.len() - self.window;
        if self.horizon <= 1 || slack == 0 {
            return 0;
        }
        (step.min(self.horizon - 1) * slack) / (self.horizon - 1)
    }
}

impl Sequencer for InformedSequencer {
    fn next_exercise(&self, step: usize, rng: &mut SimRng) -> usize {
        let start = self.window_start(step);
        self.order[start + rng.random_range(0..self.window)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Random,
    Informed,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Random => "random",
            Scenario::Informed => "informed",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(Scenario::Random),
            "informed" => Ok(Scenario::Informed),
            other => Err(format!("unknown scenario `{other}` (expected random or informed)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub learner_id: usize,
    /// `(exercise, success)` per step.
    pub steps: Vec<(usize, bool)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub ground_truth: GroundTruth,
    pub config: SimulatorConfig,
    pub scenario: Scenario,
    pub horizon: usize,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn n_learners(&self) -> usize {
        self.trajectories.len()
    }

    pub fn n_observations(&self) -> usize {
        self.trajectories.iter().map(|t| t.steps.len()).sum()
    }
}

/// Runs one independent rollout per profile. Learner `i` draws its initial
/// state and outcomes from the stream `(seed, "learner", i)`, so the result
/// does not depend on the execution mode.
#[allow(clippy::too_many_arguments)]
pub fn generate_dataset<S: Sequencer>(
    cfg: &SimulatorConfig,
    gt: &GroundTruth,
    profiles: &[LearnerProfile],
    sequencer: &S,
    scenario: Scenario,
    horizon: usize,
    seed: u64,
    exec: Exec,
) -> Dataset {
    let trajectories = exec.map_indexed(profiles.len(), |learner_id| {
        let mut rng = rng_for(seed, "learner", learner_id as u64);
        let mut state = LearnerState::sample(cfg, gt.k(), &mut rng);
        let profile = &profiles[learner_id];
        let steps = (0..horizon)
            .map(|t| {
                let e = sequencer.next_exercise(t, &mut rng);
                let success = simulate_step(&mut state, profile, gt, cfg, e, &mut rng);
                (e, success)
            })
            .collect();
        Trajectory { learner_id, steps }
    });
    Dataset {
        ground_truth: gt.clone(),
        config: cfg.clone(),
        scenario,
        horizon,
        trajectories,
    }
}

/// Two-KC chain fixture with scripted outcomes.
///
/// Exercises 0 and 1 practise KC 0, exercises 2 and 3 practise KC 1, and
/// exercises are drawn uniformly. KC 0 attempts succeed with probability
/// `min(0.9, 0.2 + 0.15 * prior KC-0 successes)`. KC 1 attempts never succeed
/// until the learner has at least five KC-0 successes, and then succeed with
/// probability 0.85.
pub fn scripted_chain_dataset(n_learners: usize, horizon: usize, seed: u64) -> Dataset {
    let ks = KnowledgeStructure::from_edges(2, &[(0, 1)]).expect("two-node chain");
    let map = KcExerciseMap::new(2, vec![vec![0], vec![0], vec![1], vec![1]]).expect("covering map");
    let gt = GroundTruth {
        ks,
        map,
        difficulty: vec![1500.0; 4],
    };
    let trajectories = (0..n_learners)
        .map(|learner_id| {
            let mut rng = rng_for(seed, "scripted-chain", learner_id as u64);
            let mut successes0 = 0usize;
            let steps = (0..horizon)
                .map(|_| {
                    let e = rng.random_range(0..4);
                    let p = if e < 2 {
                        (0.2 + 0.15 * successes0 as f64).min(0.9)
                    } else if successes0 >= 5 {
                        0.85
                    } else {
                        0.0
                    };
                    let success = rng.random::<f64>() < p;
                    if e < 2 {
                        successes0 += usize::from(success);
                    }
                    (e, success)
                })
                .collect();
            Trajectory { learner_id, steps }
        })
        .collect();
    Dataset {
        ground_truth: gt,
        config: SimulatorConfig::default(),
        scenario: Scenario::Random,
        horizon,
        trajectories,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn single_kc_gt(difficulty: f64) -> GroundTruth {
        GroundTruth {
            ks: KnowledgeStructure::empty(1),
            map: KcExerciseMap::new(1, vec![vec![0]]).unwrap(),
            difficulty: vec![difficulty],
        }
    }

    fn chain_gt() -> GroundTruth {
        GroundTruth {
            ks: KnowledgeStructure::from_edges(2, &[(0, 1)]).unwrap(),
            map: KcExerciseMap::new(2, vec![vec![0], vec![1]]).unwrap(),
            difficulty: vec![1500.0, 1500.0],
        }
    }

    const NEUTRAL: LearnerProfile = LearnerProfile {
        rate_multiplier: 1.0,
        guess: 0.0,
        slip: 0.0,
    };

    #[test]
    fn default_config_is_valid() {
        SimulatorConfig::default().validate().unwrap();
        let bad = SimulatorConfig {
            difficulty_low: 2000.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn profiles() {
        let cfg = SimulatorConfig::default();
        let mut rng = rng_for(0, "p", 0);
        assert!(sample_profiles(&cfg, 0, &mut rng).is_empty());
        let ps = sample_profiles(&cfg, 10_000, &mut rng);
        for p in &ps {
            assert!(p.guess + p.slip < 1.0);
            assert!((0.05..=0.2).contains(&p.guess));
            assert!((0.02..=0.1).contains(&p.slip));
            assert!((0.5..=1.5).contains(&p.rate_multiplier));
        }
        let m = ps.iter().map(|p| p.rate_multiplier).sum::<f64>() / ps.len() as f64;
        assert!((m - 1.0).abs() < 0.01, "mean rate {m}");
    }

    #[test]
    fn success_probability_examples() {
        let cfg = SimulatorConfig::default();
        let gt = single_kc_gt(1500.0);
        let s = LearnerState::uniform(1, 1500.0);
        assert_abs_diff_eq!(success_probability(&s, &NEUTRAL, &gt, &cfg, 0), 0.5, epsilon = 1e-12);

        let slip = LearnerProfile { slip: 0.1, ..NEUTRAL };
        let high = LearnerState::uniform(1, 1e9);
        assert_abs_diff_eq!(success_probability(&high, &slip, &gt, &cfg, 0), 0.9, epsilon = 1e-12);

        let p = LearnerProfile { guess: 0.1, slip: 0.1, ..NEUTRAL };
        let s = LearnerState::uniform(1, 1500.0 + cfg.success_scale);
        // 0.1 + 0.8 / (1 + e^-1)
        assert_abs_diff_eq!(success_probability(&s, &p, &gt, &cfg, 0), 0.684_846_862_9, epsilon = 1e-9);
    }

    #[test]
    fn success_uses_weakest_kc() {
        let cfg = SimulatorConfig::default();
        let gt = GroundTruth {
            ks: KnowledgeStructure::empty(2),
            map: KcExerciseMap::new(2, vec![vec![0, 1]]).unwrap(),
            difficulty: vec![1500.0],
        };
        let s = LearnerState {
            long_term: vec![1500.0, 1000.0],
            short_term: vec![3000.0, 1500.0],
        };
        assert_abs_diff_eq!(success_probability(&s, &NEUTRAL, &gt, &cfg, 0), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn blocked_prerequisite_prevents_learning() {
        let cfg = SimulatorConfig::default();
        let gt = chain_gt();
        let parent = cfg.mastery_threshold - 10.0 * cfg.gate_scale;
        let mut s = LearnerState::uniform(2, parent);
        let r = readiness(&s, &gt.ks, &cfg, 1);
        assert_abs_diff_eq!(r, sigmoid(-10.0), epsilon = 1e-15);
        assert!(r < 5e-5);
        apply_practice(&mut s, &NEUTRAL, &gt, &cfg, 1, true);
        assert!(s.long_term[1] - parent < 40.0 * 5e-5);
    }

    #[test]
    fn long_term_gain_and_gap_factor() {
        let cfg = SimulatorConfig::default();
        let gt = single_kc_gt(1500.0);
        let mut s = LearnerState::uniform(1, 1000.0);
        apply_practice(&mut s, &NEUTRAL, &gt, &cfg, 0, true);
        assert_abs_diff_eq!(s.long_term[0], 1000.0 + cfg.long_gain, epsilon = 1e-12);
        assert_abs_diff_eq!(s.short_term[0], 1000.0 + cfg.short_gain, epsilon = 1e-12);

        let mut s = LearnerState {
            long_term: vec![1000.0],
            short_term: vec![1000.0 + cfg.gap_scale],
        };
        apply_practice(&mut s, &NEUTRAL, &gt, &cfg, 0, true);
        assert_abs_diff_eq!(s.long_term[0], 1000.0 + cfg.long_gain / 2.0, epsilon = 1e-12);

        let mut s = LearnerState::uniform(1, 1000.0);
        apply_practice(&mut s, &NEUTRAL, &gt, &cfg, 0, false);
        assert_abs_diff_eq!(s.long_term[0], 1000.0 + FAILURE_GAIN_FACTOR * cfg.long_gain, epsilon = 1e-12);
    }

    #[test]
    fn practice_leaves_other_kcs_alone() {
        let cfg = SimulatorConfig::default();
        let gt = chain_gt();
        let mut s = LearnerState::uniform(2, 1200.0);
        apply_practice(&mut s, &NEUTRAL, &gt, &cfg, 0, true);
        assert_eq!(s.long_term[1], 1200.0);
        assert_eq!(s.short_term[1], 1200.0);
    }

    #[test]
    fn forgetting() {
        let cfg = SimulatorConfig::default();
        let mut s = LearnerState::uniform(1, 1000.0);
        apply_forgetting(&mut s, &cfg);
        assert_eq!(s.short_term[0], 1000.0);

        let mut s = LearnerState {
            long_term: vec![1000.0],
            short_term: vec![1100.0],
        };
        apply_forgetting(&mut s, &cfg);
        assert_abs_diff_eq!(s.short_term[0], 1_090.483_741_803_6, epsilon = 1e-9);

        let mut s = LearnerState {
            long_term: vec![0.0],
            short_term: vec![1.0],
        };
        for _ in 0..(5.0 * cfg.forget_tau) as usize {
            apply_forgetting(&mut s, &cfg);
        }
        assert_abs_diff_eq!(s.short_term[0], (-5.0f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn root_rollout_is_monotone() {
        let cfg = SimulatorConfig::default();
        let gt = single_kc_gt(1500.0);
        let mut s = LearnerState::uniform(1, 1000.0);
        let mut rng = rng_for(0, "root", 0);
        let mut prev = s.long_term[0];
        for _ in 0..300 {
            simulate_step(&mut s, &NEUTRAL, &gt, &cfg, 0, &mut rng);
            assert!(s.long_term[0] >= prev);
            assert!(s.short_term[0] >= s.long_term[0]);
            prev = s.long_term[0];
        }
        assert!(prev > 1500.0);
    }

    #[test]
    fn chain_rollout_is_staged() {
        let cfg = SimulatorConfig::default();
        let gt = GroundTruth {
            ks: KnowledgeStructure::from_edges(3, &[(0, 1), (1, 2)]).unwrap(),
            map: KcExerciseMap::new(3, vec![vec![0], vec![1], vec![2]]).unwrap(),
            difficulty: vec![1300.0; 3],
        };
        let mut rng = rng_for(1, "chain", 0);
        let mut s = LearnerState::uniform(3, 1000.0);
        let seq = random_sequencer(&gt);
        let mut crossed = false;
        for t in 0..300 {
            let e = seq.next_exercise(t, &mut rng);
            simulate_step(&mut s, &NEUTRAL, &gt, &cfg, e, &mut rng);
            if !crossed {
                if s.long_term[0] >= cfg.mastery_threshold {
                    crossed = true;
                } else {
                    assert!(s.long_term[2] - 1000.0 < 5.0, "KC 2 moved at step {t}");
                }
            }
        }
        assert!(crossed);
    }

    #[test]
    fn random_sequencer_is_uniform() {
        let seq = RandomSequencer { e: 10 };
        let mut rng = rng_for(0, "seq", 0);
        let mut counts = [0usize; 10];
        for t in 0..100_000 {
            counts[seq.next_exercise(t, &mut rng)] += 1;
        }
        for c in counts {
            assert!((c as f64 / 100_000.0 - 0.1).abs() < 0.02 * 0.1 * 10.0);
        }
        let one = RandomSequencer { e: 1 };
        assert!((0..100).all(|t| one.next_exercise(t, &mut rng) == 0));
    }

    fn chain3_gt(per_kc: usize) -> GroundTruth {
        let rows = (0..3).flat_map(|kc| std::iter::repeat_n(vec![kc], per_kc)).collect();
        GroundTruth {
            ks: KnowledgeStructure::from_edges(3, &[(0, 1), (1, 2)]).unwrap(),
            map: KcExerciseMap::new(3, rows).unwrap(),
            difficulty: vec![1500.0; 3 * per_kc],
        }
    }

    #[test]
    fn informed_sequencer_front_loads_roots() {
        let gt = chain3_gt(4);
        let mut hits = 0usize;
        for s in 0..20 {
            let mut rng = rng_for(s, "informed", 0);
            let seq = InformedSequencer::from_kept_edges(&gt, vec![(0, 1), (1, 2)], 300, 3, &mut rng);
            for t in 0..75 {
                let e = seq.next_exercise(t, &mut rng);
                hits += usize::from(gt.map.kcs(e)[0] == 2);
            }
            assert_eq!(seq.window_start(299) + seq.window, gt.e());
        }
        assert!((hits as f64) / (20.0 * 75.0) < 0.05);
    }

    #[test]
    fn informed_sequencer_keeps_half_the_edges() {
        let gt = chain3_gt(4);
        let seq = InformedSequencer::new(&gt, 300, &mut rng_for(0, "informed", 0));
        assert_eq!(seq.kept_edges.len(), 1);
        assert_eq!(seq.window, 3);
    }

    #[test]
    fn informed_sequencer_wide_window_is_uniform() {
        let gt = chain3_gt(2);
        let mut rng = rng_for(0, "wide", 0);
        let seq = InformedSequencer::with_window(&gt, 300, gt.e(), &mut rng);
        assert!((0..300).all(|t| seq.window_start(t) == 0));
        let mut counts = vec![0usize; gt.e()];
        for t in 0..60_000 {
            counts[seq.next_exercise(t % 300, &mut rng)] += 1;
        }
        for c in counts {
            assert!((c as f64 / 60_000.0 - 1.0 / 6.0).abs() < 0.01);
        }
    }

    #[test]
    fn informed_sequencer_on_empty_ks_sweeps() {
        let gt = GroundTruth {
            ks: KnowledgeStructure::empty(3),
            map: KcExerciseMap::new(3, vec![vec![0], vec![1], vec![2], vec![0]]).unwrap(),
            difficulty: vec![1500.0; 4],
        };
        let seq = InformedSequencer::new(&gt, 100, &mut rng_for(0, "empty", 0));
        assert!(seq.kept_edges.is_empty());
        assert_eq!(seq.window, 1);
        let mut rng = rng_for(0, "empty-draws", 0);
        assert_eq!(seq.next_exercise(0, &mut rng), seq.order[0]);
        assert_eq!(seq.next_exercise(99, &mut rng), seq.order[3]);
    }

    #[test]
    fn dataset_generation() {
        let cfg = SimulatorConfig::default();
        let mut rng = rng_for(0, "gt", 0);
        let gt = GroundTruth::sample(&cfg, 10, 30, &mut rng).unwrap();
        let empty = generate_dataset(&cfg, &gt, &[], &random_sequencer(&gt), Scenario::Random, 10, 0, Exec::Sequential);
        assert!(empty.trajectories.is_empty());

        let profiles = sample_profiles(&cfg, 400, &mut rng);
        let mean_initial: f64 = (0..400)
            .map(|i| {
                let mut r = rng_for(9, "learner", i);
                mean_long_term(&LearnerState::sample(&cfg, 10, &mut r))
            })
            .sum::<f64>()
            / 400.0;
        assert!((mean_initial - 1000.0).abs() < 5.0, "{mean_initial}");

        let a = generate_dataset(&cfg, &gt, &profiles, &random_sequencer(&gt), Scenario::Random, 50, 9, Exec::Sequential);
        let b = generate_dataset(&cfg, &gt, &profiles, &random_sequencer(&gt), Scenario::Random, 50, 9, Exec::Parallel);
        assert_eq!(a, b);
        assert!(a.trajectories.iter().all(|t| t.steps.len() == 50));
    }

    #[test]
    fn mean_long_term_examples() {
        assert_eq!(mean_long_term(&LearnerState::uniform(4, 1000.0)), 1000.0);
        let s = LearnerState {
            long_term: vec![0.0, 2000.0],
            short_term: vec![0.0, 2000.0],
        };
        assert_eq!(mean_long_term(&s), 1000.0);
    }

    #[test]
    fn scripted_chain_respects_gate() {
        let ds = scripted_chain_dataset(50, 60, 1);
        for t in &ds.trajectories {
            let mut s0 = 0;
            for &(e, ok) in &t.steps {
                if e < 2 {
                    s0 += usize::from(ok);
                } else if ok {
                    assert!(s0 >= 5);
                }
            }
        }
    }
}
