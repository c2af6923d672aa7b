//! Exercise recommendation policies and closed-loop evaluation.
//!
//! ZPDES-KS keeps, per learner, a pool of recommendable exercises (the ZPD)
//! that grows when KCs are unlocked through validated prerequisites and
//! shrinks when exercises become too easy. Exercises are drawn from the pool
//! by a softmax over clamped empirical progress plus a ZPD bonus.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Exec;
use crate::graph::{KcExerciseMap, KnowledgeStructure};
use crate::pkt::{predict_from_skills, PktParams};
use crate::seed::{rng_for, SimRng};
use crate::simulator::{mean_long_term, simulate_step, GroundTruth, LearnerProfile, LearnerState, SimulatorConfig};

#[derive(Debug, Error, PartialEq)]
pub enum TutorError {
    #[error("exercise {index} out of range for {e} exercises")]
    UnknownExercise { index: usize, e: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ZpdesConfig {
    pub validate_threshold: f64,
    pub remove_threshold: f64,
    pub success_rate: f64,
    pub progress_rate: f64,
    pub zpd_bonus: f64,
    pub bandit_temperature: f64,
}

impl Default for ZpdesConfig {
    fn default() -> Self {
        Self {
            validate_threshold: 0.7,
            remove_threshold: 0.9,
            success_rate: 0.3,
            progress_rate: 0.3,
            zpd_bonus: 0.5,
            bandit_temperature: 0.2,
        }
    }
}

impl ZpdesConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0 < self.validate_threshold && self.validate_threshold <= self.remove_threshold && self.remove_threshold <= 1.0) {
            return Err("zpdes thresholds must satisfy 0 < zpdes.validate_threshold <= zpdes.remove_threshold <= 1".into());
        }
        for (name, v) in [("zpdes.success_rate", self.success_rate), ("zpdes.progress_rate", self.progress_rate)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(format!("{name} must lie in (0, 1]"));
            }
        }
        if !(self.bandit_temperature > 0.0) {
            return Err("zpdes.bandit_temperature must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZpdState {
    pub s_hat: Vec<f64>,
    pub p_hat: Vec<f64>,
    pub validated_exercises: Vec<bool>,
    pub validated_kcs: Vec<bool>,
    pub active_kcs: Vec<bool>,
    pub zpd: Vec<bool>,
    pub removed: Vec<bool>,
}

impl ZpdState {
    pub fn zpd_members(&self) -> Vec<usize> {
        (0..self.zpd.len()).filter(|&e| self.zpd[e]).collect()
    }

    fn admit(&mut self, map: &KcExerciseMap) {
        for e in 0..map.e() {
            if !self.zpd[e] && !self.removed[e] && map.kcs(e).iter().all(|&k| self.active_kcs[k]) {
                self.zpd[e] = true;
            }
        }
    }
}

/// Root KCs are active; the ZPD holds every exercise whose KCs are all active.
pub fn zpd_init(ks: &KnowledgeStructure, map: &KcExerciseMap) -> ZpdState {
    let e = map.e();
    let k = ks.k();
    let mut active_kcs = vec![false; k];
    for r in ks.roots() {
        active_kcs[r] = true;
    }
    let mut state = ZpdState {
        s_hat: vec![0.0; e],
        p_hat: vec![0.0; e],
        validated_exercises: vec![false; e],
        validated_kcs: vec![false; k],
        active_kcs,
        zpd: vec![false; e],
        removed: vec![false; e],
    };
    state.admit(map);
    state
}

/// Updates the empirical success and progress of `e`, then applies the
/// validation, activation, admission and removal rules in that order.
pub fn record_outcome(
    state: &mut ZpdState,
    ks: &KnowledgeStructure,
    map: &KcExerciseMap,
    cfg: &ZpdesConfig,
    e: usize,
    success: bool,
) -> Result<(), TutorError> {
    if e >= map.e() {
        return Err(TutorError::UnknownExercise { index: e, e: map.e() });
    }
    let y = if success { 1.0 } else { 0.0 };
    let s_before = state.s_hat[e];
    state.s_hat[e] = (1.0 - cfg.success_rate) * s_before + cfg.success_rate * y;
    // Progress is measured against the success level before this outcome.
    state.p_hat[e] = (1.0 - cfg.progress_rate) * state.p_hat[e] + cfg.progress_rate * (y - s_before);

    if state.s_hat[e] >= cfg.validate_threshold {
        state.validated_exercises[e] = true;
        for &kc in map.kcs(e) {
            state.validated_kcs[kc] = true;
        }
    }
    for kc in 0..ks.k() {
        if !state.active_kcs[kc] && ks.parents(kc).all(|p| state.validated_kcs[p]) {
            state.active_kcs[kc] = true;
        }
    }
    state.admit(map);
    if state.s_hat[e] >= cfg.remove_threshold {
        state.zpd[e] = false;
        state.removed[e] = true;
    }
    Ok(())
}

/// Draws one candidate with probability proportional to `exp(reward / temperature)`.
pub fn softmax_sample(candidates: &[usize], rewards: &[f64], temperature: f64, rng: &mut SimRng) -> usize {
    debug_assert_eq!(candidates.len(), rewards.len());
    let top = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = rewards.iter().map(|r| ((r - top) / temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (c, w) in candidates.iter().zip(&weights) {
        if u < *w {
            return *c;
        }
        u -= w;
    }
    *candidates.last().expect("at least one candidate")
}

/// Candidate pool: the ZPD, else every non-removed exercise, else everything.
pub fn zpdes_candidates(state: &ZpdState) -> Vec<usize> {
    let zpd = state.zpd_members();
    if !zpd.is_empty() {
        return zpd;
    }
    let open: Vec<usize> = (0..state.removed.len()).filter(|&e| !state.removed[e]).collect();
    if !open.is_empty() {
        return open;
    }
    (0..state.removed.len()).collect()
}

pub fn zpdes_reward(state: &ZpdState, cfg: &ZpdesConfig, e: usize) -> f64 {
    state.p_hat[e].max(0.0) + if state.zpd[e] { cfg.zpd_bonus } else { 0.0 }
}

pub fn zpdes_recommend(state: &ZpdState, cfg: &ZpdesConfig, rng: &mut SimRng) -> usize {
    let candidates = zpdes_candidates(state);
    let rewards: Vec<f64> = candidates.iter().map(|&e| zpdes_reward(state, cfg, e)).collect();
    softmax_sample(&candidates, &rewards, cfg.bandit_temperature, rng)
}

/// Population-level view of a trained PKT model, used to tutor unseen
/// learners from their online success/failure counts.
#[derive(Debug, Clone, PartialEq)]
pub struct MbtModel {
    pub params: PktParams,
    pub mean_skill: Vec<f64>,
    pub mean_success_gain: f64,
    pub mean_failure_gain: f64,
    pub softmin_temperature: f64,
}

impl MbtModel {
    pub fn from_params(params: PktParams, softmin_temperature: f64) -> Self {
        let (n, k) = (params.n_learners.max(1) as f64, params.k);
        let mean_skill = (0..k)
            .map(|kc| (0..params.n_learners).map(|s| params.initial_skill[s * k + kc]).sum::<f64>() / n)
            .collect();
        let mean_success_gain = params.success_gain.iter().sum::<f64>() / n;
        let mean_failure_gain = params.failure_gain.iter().sum::<f64>() / n;
        Self {
            params,
            mean_skill,
            mean_success_gain,
            mean_failure_gain,
            softmin_temperature,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MbtState {
    pub s_counts: Vec<u32>,
    pub f_counts: Vec<u32>,
}

impl MbtState {
    pub fn new(k: usize) -> Self {
        Self {
            s_counts: vec![0; k],
            f_counts: vec![0; k],
        }
    }
}

/// Expected one-step skill progress averaged over all KCs.
pub fn mbt_score(model: &MbtModel, state: &MbtState, map: &KcExerciseMap, e: usize) -> f64 {
    let lambda: Vec<f64> = (0..model.params.k)
        .map(|kc| {
            model.mean_skill[kc]
                + model.mean_success_gain * f64::from(state.s_counts[kc])
                + model.mean_failure_gain * f64::from(state.f_counts[kc])
        })
        .collect();
    let p = predict_from_skills(&model.params, map, e, lambda, model.softmin_temperature).probability;
    mbt_expected_progress(p, model.mean_success_gain, model.mean_failure_gain, map.kcs(e).len(), model.params.k)
}

/// `(p * alpha + (1 - p) * beta) * |KCs of e| / K`.
pub fn mbt_expected_progress(p: f64, alpha: f64, beta: f64, exercise_kcs: usize, k: usize) -> f64 {
    (p * alpha + (1.0 - p) * beta) * exercise_kcs as f64 / k as f64
}

pub fn mbt_recommend(model: &MbtModel, state: &MbtState, map: &KcExerciseMap, temperature: f64, rng: &mut SimRng) -> usize {
    let candidates: Vec<usize> = (0..map.e()).collect();
    let scores: Vec<f64> = candidates.iter().map(|&e| mbt_score(model, state, map, e)).collect();
    softmax_sample(&candidates, &scores, temperature, rng)
}

pub fn mbt_observe(state: &mut MbtState, map: &KcExerciseMap, e: usize, success: bool) {
    for &kc in map.kcs(e) {
        if success {
            state.s_counts[kc] += 1;
        } else {
            state.f_counts[kc] += 1;
        }
    }
}

pub fn random_recommend(e_count: usize, rng: &mut SimRng) -> usize {
    rng.random_range(0..e_count)
}

/// A recommendation policy with per-learner session state.
pub trait Tutor: Sync {
    type Session: Send;

    fn start(&self) -> Self::Session;
    fn recommend(&self, session: &Self::Session, rng: &mut SimRng) -> usize;
    fn observe(&self, session: &mut Self::Session, e: usize, success: bool);
}

pub struct RandomTutor {
    pub e: usize,
}

impl Tutor for RandomTutor {
    type Session = ();

    fn start(&self) {}

    fn recommend(&self, _: &(), rng: &mut SimRng) -> usize {
        random_recommend(self.e, rng)
    }

    fn observe(&self, _: &mut (), _: usize, _: bool) {}
}

pub struct ZpdesTutor {
    pub ks: KnowledgeStructure,
    pub map: KcExerciseMap,
    pub cfg: ZpdesConfig,
}

impl Tutor for ZpdesTutor {
    type Session = ZpdState;

    fn start(&self) -> ZpdState {
        zpd_init(&self.ks, &self.map)
    }

    fn recommend(&self, session: &ZpdState, rng: &mut SimRng) -> usize {
        zpdes_recommend(session, &self.cfg, rng)
    }

    fn observe(&self, session: &mut ZpdState, e: usize, success: bool) {
        record_outcome(session, &self.ks, &self.map, &self.cfg, e, success).expect("recommended exercise is valid");
    }
}

pub struct MbtTutor {
    pub model: MbtModel,
    pub map: KcExerciseMap,
    pub temperature: f64,
}

pub const DEFAULT_MBT_TEMPERATURE: f64 = 0.02;

impl Tutor for MbtTutor {
    type Session = MbtState;

    fn start(&self) -> MbtState {
        MbtState::new(self.model.params.k)
    }

    fn recommend(&self, session: &MbtState, rng: &mut SimRng) -> usize {
        mbt_recommend(&self.model, session, &self.map, self.temperature, rng)
    }

    fn observe(&self, session: &mut MbtState, e: usize, success: bool) {
        mbt_observe(session, &self.map, e, success);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TutorResult {
    pub average_level: f64,
    pub final_level: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub learner: usize,
    pub step: usize,
    pub exercise: usize,
    pub success: bool,
    pub mean_level: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TutorRun {
    pub result: TutorResult,
    /// Population mean of the learners' mean long-term level before any practice.
    pub initial_level: f64,
    /// Population mean of the learners' mean long-term level after each step.
    pub level_by_step: Vec<f64>,
    /// Per-learner, per-step records, in learner then step order.
    pub logs: Vec<StepLog>,
}

/// Runs `n` fresh learners for `t` steps each under `tutor`.
///
/// Learner `i` draws its profile, initial state and outcomes from the stream
/// `(seed, "tutor-learner", i)`; the profile and initial state are drawn
/// first, so different tutors face the same population.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_tutor<T: Tutor>(
    cfg: &SimulatorConfig,
    gt: &GroundTruth,
    tutor: &T,
    n: usize,
    t: usize,
    seed: u64,
    keep_logs: bool,
    exec: Exec,
) -> TutorRun {
    let sessions = exec.map_indexed(n, |learner| {
        let mut rng = rng_for(seed, "tutor-learner", learner as u64);
        let profile = LearnerProfile::sample(cfg, &mut rng);
        let mut state = LearnerState::sample(cfg, gt.k(), &mut rng);
        let initial = mean_long_term(&state);
        let mut session = tutor.start();
        let mut levels = Vec::with_capacity(t);
        let mut logs = Vec::new();
        for step in 0..t {
            let e = tutor.recommend(&session, &mut rng);
            let success = simulate_step(&mut state, &profile, gt, cfg, e, &mut rng);
            tutor.observe(&mut session, e, success);
            let mean_level = mean_long_term(&state);
            levels.push(mean_level);
            if keep_logs {
                logs.push(StepLog {
                    learner,
                    step,
                    exercise: e,
                    success,
                    mean_level,
                });
            }
        }
        (initial, levels, logs)
    });

    let mut level_by_step = vec![0.0; t];
    let mut logs = Vec::new();
    let mut initial_level = 0.0;
    for (initial, levels, learner_logs) in sessions {
        initial_level += initial;
        for (acc, l) in level_by_step.iter_mut().zip(levels) {
            *acc += l;
        }
        logs.extend(learner_logs);
    }
    let denom = n.max(1) as f64;
    level_by_step.iter_mut().for_each(|l| *l /= denom);
    let average_level = if t == 0 { 0.0 } else { level_by_step.iter().sum::<f64>() / t as f64 };
    let final_level = level_by_step.last().copied().unwrap_or(0.0);
    TutorRun {
        result: TutorResult {
            average_level,
            final_level,
        },
        initial_level: initial_level / denom,
        level_by_step,
        logs,
    }
}
