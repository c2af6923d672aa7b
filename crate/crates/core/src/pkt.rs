//! Prerequisite knowledge tracing.
//!
//! The predicted probability that learner `s` succeeds on exercise `e` at
//! step `t` is
//!
//! ```text
//! p = p_g + (1 - p_s - p_g) * sigmoid(softmin_w(lambda_{s,.,t}) - delta_e)
//! lambda_{s,k,t} = mu_{s,k} + alpha_s * S_{s,k,t} + beta_s * F_{s,k,t}
//! ```
//!
//! where `S`/`F` count prior successes/failures on exercises of KC `k`. The
//! soft-min runs over all KCs with weights `w_k = 1` for the exercise's own
//! KCs and `w_k = min(1, sum_j sigmoid(M_kj))` (j over the exercise's KCs)
//! otherwise, so the relation logits `M` receive gradients.
//!
//! Gradients are analytic. Learners are independent given the global
//! parameters, so the loss is evaluated as one partial per learner and the
//! partials are summed in learner order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Exec;
use crate::graph::{break_cycles, KcExerciseMap, WeightedRelationMatrix};
use crate::math::sigmoid;
use crate::simulator::Dataset;

#[derive(Debug, Error, PartialEq)]
pub enum PktError {
    #[error("soft-min needs at least one positive weight")]
    EmptySupport,
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },
    #[error("dataset has no observations")]
    EmptyDataset,
    #[error("parameter shapes do not match the dataset ({0})")]
    Shape(String),
}

/// Value held on the (unused, never optimised) diagonal of the relation logits.
pub const PINNED_DIAGONAL_LOGIT: f64 = -1.0e9;

/// All learnable quantities. The same struct holds gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PktParams {
    pub n_learners: usize,
    pub k: usize,
    pub e: usize,
    /// `p_g = 0.5 * sigmoid(guess_logit)`.
    pub guess_logit: f64,
    /// `p_s = 0.5 * sigmoid(slip_logit)`.
    pub slip_logit: f64,
    pub difficulty: Vec<f64>,
    /// Row-major `n_learners x k`.
    pub initial_skill: Vec<f64>,
    pub success_gain: Vec<f64>,
    pub failure_gain: Vec<f64>,
    /// Row-major `k x k`; entry `(i, j)` is the logit of "i is a prerequisite of j".
    pub relation_logits: Vec<f64>,
}

impl PktParams {
    /// Starting point: `mu = 0`, `alpha = 0.1`, `beta = 0.05`, `delta = 0`,
    /// relation logits `-3`, guess and slip at 0.1.
    pub fn init(n_learners: usize, k: usize, e: usize) -> Self {
        // 0.5 * sigmoid(ln 0.25) = 0.1
        let p_logit = 0.25f64.ln();
        let mut relation_logits = vec![-3.0; k * k];
        for i in 0..k {
            relation_logits[i * k + i] = PINNED_DIAGONAL_LOGIT;
        }
        Self {
            n_learners,
            k,
            e,
            guess_logit: p_logit,
            slip_logit: p_logit,
            difficulty: vec![0.0; e],
            initial_skill: vec![0.0; n_learners * k],
            success_gain: vec![0.1; n_learners],
            failure_gain: vec![0.05; n_learners],
            relation_logits,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            n_learners: self.n_learners,
            k: self.k,
            e: self.e,
            guess_logit: 0.0,
            slip_logit: 0.0,
            difficulty: vec![0.0; self.e],
            initial_skill: vec![0.0; self.n_learners * self.k],
            success_gain: vec![0.0; self.n_learners],
            failure_gain: vec![0.0; self.n_learners],
            relation_logits: vec![0.0; self.k * self.k],
        }
    }

    pub fn guess(&self) -> f64 {
        0.5 * sigmoid(self.guess_logit)
    }

    pub fn slip(&self) -> f64 {
        0.5 * sigmoid(self.slip_logit)
    }

    #[inline]
    pub fn relation(&self, i: usize, j: usize) -> f64 {
        if i == j {
            0.0
        } else {
            sigmoid(self.relation_logits[i * self.k + j])
        }
    }

    pub fn flat_len(&self) -> usize {
        2 + self.e + self.n_learners * (self.k + 2) + self.k * self.k
    }

    /// Layout: guess, slip, difficulty, initial_skill, success_gain,
    /// failure_gain, relation_logits.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.flat_len());
        v.push(self.guess_logit);
        v.push(self.slip_logit);
        v.extend_from_slice(&self.difficulty);
        v.extend_from_slice(&self.initial_skill);
        v.extend_from_slice(&self.success_gain);
        v.extend_from_slice(&self.failure_gain);
        v.extend_from_slice(&self.relation_logits);
        v
    }

    pub fn assign_flat(&mut self, v: &[f64]) {
        assert_eq!(v.len(), self.flat_len());
        self.guess_logit = v[0];
        self.slip_logit = v[1];
        let mut rest = &v[2..];
        for field in [
            &mut self.difficulty,
            &mut self.initial_skill,
            &mut self.success_gain,
            &mut self.failure_gain,
            &mut self.relation_logits,
        ] {
            let (head, tail) = rest.split_at(field.len());
            field.copy_from_slice(head);
            rest = tail;
        }
    }

    fn check_shape(&self, ds: &Dataset) -> Result<(), PktError> {
        let gt = &ds.ground_truth;
        if self.k != gt.k() || self.e != gt.e() || self.n_learners != ds.n_learners() {
            return Err(PktError::Shape(format!(
                "params N={} K={} E={}, dataset N={} K={} E={}",
                self.n_learners,
                self.k,
                self.e,
                ds.n_learners(),
                gt.k(),
                gt.e()
            )));
        }
        Ok(())
    }
}

/// Prior success/failure counts per learner, KC and step.
#[derive(Debug, Clone, PartialEq)]
pub struct CountFeatures {
    n: usize,
    k: usize,
    /// `horizon + 1` slots per (learner, KC): counts before step `t` for
    /// `t = 0..=horizon`.
    slots: usize,
    s_counts: Vec<u32>,
    f_counts: Vec<u32>,
}

impl CountFeatures {
    #[inline]
    fn idx(&self, s: usize, k: usize, t: usize) -> usize {
        (s * self.k + k) * self.slots + t
    }

    pub fn successes(&self, s: usize, k: usize, t: usize) -> u32 {
        self.s_counts[self.idx(s, k, t)]
    }

    pub fn failures(&self, s: usize, k: usize, t: usize) -> u32 {
        self.f_counts[self.idx(s, k, t)]
    }

    pub fn n_learners(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> usize {
        self.slots - 1
    }
}

/// Counts attempts per KC through the KC-exercise map only; an exercise with
/// several KCs increments each of them.
pub fn build_count_features(ds: &Dataset) -> CountFeatures {
    let k = ds.ground_truth.k();
    let map = &ds.ground_truth.map;
    let horizon = ds.trajectories.iter().map(|t| t.steps.len()).max().unwrap_or(0);
    let slots = horizon + 1;
    let n = ds.n_learners();
    let mut feats = CountFeatures {
        n,
        k,
        slots,
        s_counts: vec![0; n * k * slots],
        f_counts: vec![0; n * k * slots],
    };
    for (s, traj) in ds.trajectories.iter().enumerate() {
        let mut succ = vec![0u32; k];
        let mut fail = vec![0u32; k];
        for t in 0..slots {
            for kc in 0..k {
                let x = feats.idx(s, kc, t);
                feats.s_counts[x] = succ[kc];
                feats.f_counts[x] = fail[kc];
            }
            if let Some(&(e, ok)) = traj.steps.get(t) {
                for &kc in map.kcs(e) {
                    if ok {
                        succ[kc] += 1;
                    } else {
                        fail[kc] += 1;
                    }
                }
            }
        }
    }
    feats
}

pub fn skill_estimate(params: &PktParams, feats: &CountFeatures, s: usize, k: usize, t: usize) -> f64 {
    params.initial_skill[s * params.k + k]
        + params.success_gain[s] * f64::from(feats.successes(s, k, t))
        + params.failure_gain[s] * f64::from(feats.failures(s, k, t))
}

/// Soft membership of every KC in the prerequisite set of exercise `e`.
pub fn relaxed_prereq_weights(params: &PktParams, map: &KcExerciseMap, e: usize) -> Vec<f64> {
    (0..params.k)
        .map(|k| {
            if map.relates(e, k) {
                1.0
            } else {
                map.kcs(e)
                    .iter()
                    .map(|&j| params.relation(k, j))
                    .sum::<f64>()
                    .min(1.0)
            }
        })
        .collect()
}

/// Boltzmann-weighted mean `sum w l e^{-l/tau} / sum w e^{-l/tau}`, shifted by
/// the minimum over the support for stability.
pub fn soft_min(values: &[f64], weights: &[f64], tau: f64) -> Result<f64, PktError> {
    let floor = values
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&v, _)| v)
        .fold(f64::INFINITY, f64::min);
    if !floor.is_finite() {
        return Err(PktError::EmptySupport);
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (&v, &w) in values.iter().zip(weights) {
        if w > 0.0 {
            let z = w * (-(v - floor) / tau).exp();
            num += z * v;
            den += z;
        }
    }
    Ok(num / den)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTrace {
    pub lambda: Vec<f64>,
    pub prereq_weights: Vec<f64>,
    pub aggregate: f64,
    pub probability: f64,
}

/// Prediction from an explicit skill vector (used for unseen learners).
pub fn predict_from_skills(params: &PktParams, map: &KcExerciseMap, e: usize, lambda: Vec<f64>, tau: f64) -> PredictionTrace {
    let prereq_weights = relaxed_prereq_weights(params, map, e);
    let aggregate = soft_min(&lambda, &prereq_weights, tau).expect("exercise KCs carry weight 1");
    let (pg, ps) = (params.guess(), params.slip());
    let probability = pg + (1.0 - ps - pg) * sigmoid(aggregate - params.difficulty[e]);
    PredictionTrace {
        lambda,
        prereq_weights,
        aggregate,
        probability,
    }
}

pub fn predict_success(
    params: &PktParams,
    feats: &CountFeatures,
    map: &KcExerciseMap,
    s: usize,
    e: usize,
    t: usize,
    tau: f64,
) -> PredictionTrace {
    let lambda = (0..params.k).map(|k| skill_estimate(params, feats, s, k, t)).collect();
    predict_from_skills(params, map, e, lambda, tau)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PktHyper {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2_weight: f64,
    pub l1_weight: f64,
    pub softmin_temperature: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for PktHyper {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 2000,
            l2_weight: 1e-4,
            l1_weight: 1e-3,
            softmin_temperature: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl PktHyper {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.softmin_temperature > 0.0) {
            return Err("pkt.softmin_temperature must be positive".into());
        }
        if self.l1_weight < 0.0 || self.l2_weight < 0.0 {
            return Err("pkt.l1_weight and pkt.l2_weight must be non-negative".into());
        }
        if !(self.learning_rate > 0.0) {
            return Err("pkt.learning_rate must be positive".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err("pkt.beta1 and pkt.beta2 must lie in [0, 1)".into());
        }
        Ok(())
    }
}

/// Per-exercise soft membership weights shared by all learners in one pass.
struct ExerciseWeights {
    k: usize,
    w: Vec<f64>,
    /// True where the weight comes from relation logits and is below the cap.
    free: Vec<bool>,
}

impl ExerciseWeights {
    fn new(params: &PktParams, map: &KcExerciseMap) -> Self {
        let k = params.k;
        let mut w = Vec::with_capacity(map.e() * k);
        let mut free = Vec::with_capacity(map.e() * k);
        for e in 0..map.e() {
            for kc in 0..k {
                if map.relates(e, kc) {
                    w.push(1.0);
                    free.push(false);
                } else {
                    let sum: f64 = map.kcs(e).iter().map(|&j| params.relation(kc, j)).sum();
                    w.push(sum.min(1.0));
                    free.push(sum < 1.0);
                }
            }
        }
        Self { k, w, free }
    }

    fn row(&self, e: usize) -> (&[f64], &[bool]) {
        let r = e * self.k..(e + 1) * self.k;
        (&self.w[r.clone()], &self.free[r])
    }
}

struct LearnerPartial {
    bce_sum: f64,
    guess: f64,
    slip: f64,
    difficulty: Vec<f64>,
    relation: Vec<f64>,
    mu: Vec<f64>,
    alpha: f64,
    beta: f64,
}

/// BCE sum and (when `scale` is given) gradients of `scale * BCE sum` for one
/// learner.
fn learner_pass(
    params: &PktParams,
    ds: &Dataset,
    feats: &CountFeatures,
    weights: &ExerciseWeights,
    tau: f64,
    s: usize,
    scale: Option<f64>,
) -> LearnerPartial {
    let k = params.k;
    let map = &ds.ground_truth.map;
    let pg = params.guess();
    let ps = params.slip();
    let slack = 1.0 - pg - ps;
    let alpha = params.success_gain[s];
    let beta = params.failure_gain[s];
    let mu = &params.initial_skill[s * k..(s + 1) * k];

    let grad = scale.is_some();
    let mut out = LearnerPartial {
        bce_sum: 0.0,
        guess: 0.0,
        slip: 0.0,
        difficulty: if grad { vec![0.0; params.e] } else { Vec::new() },
        relation: if grad { vec![0.0; k * k] } else { Vec::new() },
        mu: vec![0.0; if grad { k } else { 0 }],
        alpha: 0.0,
        beta: 0.0,
    };
    let mut lam = vec![0.0; k];
    let mut ex = vec![0.0; k];
    let mut sc = vec![0.0; k];
    let mut fc = vec![0.0; k];

    for (t, &(e, y)) in ds.trajectories[s].steps.iter().enumerate() {
        let (w, free) = weights.row(e);
        let mut floor = f64::INFINITY;
        for kc in 0..k {
            sc[kc] = f64::from(feats.successes(s, kc, t));
            fc[kc] = f64::from(feats.failures(s, kc, t));
            lam[kc] = mu[kc] + alpha * sc[kc] + beta * fc[kc];
            if w[kc] > 0.0 && lam[kc] < floor {
                floor = lam[kc];
            }
        }
        let (mut num, mut den) = (0.0, 0.0);
        for kc in 0..k {
            if w[kc] > 0.0 {
                ex[kc] = (-(lam[kc] - floor) / tau).exp();
                let z = w[kc] * ex[kc];
                num += z * lam[kc];
                den += z;
            } else {
                ex[kc] = 0.0;
            }
        }
        let agg = num / den;
        let q = sigmoid(agg - params.difficulty[e]);
        let p = pg + slack * q;
        let one_minus_p = ps + slack * (1.0 - q);
        out.bce_sum -= if y { p.max(f64::MIN_POSITIVE).ln() } else { one_minus_p.max(f64::MIN_POSITIVE).ln() };

        let Some(scale) = scale else { continue };
        let g_p = scale * if y { -1.0 / p } else { 1.0 / one_minus_p };
        // dp/dpg = 1 - q, dp/dps = -q.
        out.guess += g_p * (1.0 - q);
        out.slip -= g_p * q;
        let g_agg = g_p * slack * q * (1.0 - q);
        out.difficulty[e] -= g_agg;
        for kc in 0..k {
            if w[kc] <= 0.0 {
                continue;
            }
            let centred = lam[kc] - agg;
            let pi = w[kc] * ex[kc] / den;
            let g_lam = g_agg * pi * (1.0 - centred / tau);
            out.mu[kc] += g_lam;
            out.alpha += g_lam * sc[kc];
            out.beta += g_lam * fc[kc];
            if free[kc] {
                let g_w = g_agg * ex[kc] * centred / den;
                for &j in map.kcs(e) {
                    let r = params.relation(kc, j);
                    out.relation[kc * k + j] += g_w * r * (1.0 - r);
                }
            }
        }
    }
    out
}

fn regularisation(params: &PktParams, hyper: &PktHyper) -> f64 {
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    let l2 = sq(&params.success_gain) + sq(&params.failure_gain) + sq(&params.initial_skill);
    let k = params.k;
    let l1: f64 = (0..k)
        .flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| params.relation(i, j))
        .sum();
    hyper.l2_weight * l2 + hyper.l1_weight * l1
}

/// Mean BCE over all observations plus the L2 and L1 penalties.
pub fn loss(params: &PktParams, ds: &Dataset, feats: &CountFeatures, hyper: &PktHyper) -> f64 {
    loss_with(params, ds, feats, hyper, Exec::default())
}

pub fn loss_with(params: &PktParams, ds: &Dataset, feats: &CountFeatures, hyper: &PktHyper, exec: Exec) -> f64 {
    let n_obs = ds.n_observations().max(1) as f64;
    let weights = ExerciseWeights::new(params, &ds.ground_truth.map);
    let tau = hyper.softmin_temperature;
    let bce: f64 = exec
        .map_indexed(ds.n_learners(), |s| learner_pass(params, ds, feats, &weights, tau, s, None).bce_sum)
        .into_iter()
        .sum();
    bce / n_obs + regularisation(params, hyper)
}

pub fn gradients(params: &PktParams, ds: &Dataset, feats: &CountFeatures, hyper: &PktHyper) -> PktParams {
    loss_and_gradients(params, ds, feats, hyper, Exec::default()).1
}

/// Loss and its analytic gradient with respect to every free parameter. The
/// relation-logit diagonal always gets a zero gradient.
pub fn loss_and_gradients(
    params: &PktParams,
    ds: &Dataset,
    feats: &CountFeatures,
    hyper: &PktHyper,
    exec: Exec,
) -> (f64, PktParams) {
    let n_obs = ds.n_observations().max(1) as f64;
    let k = params.k;
    let weights = ExerciseWeights::new(params, &ds.ground_truth.map);
    let tau = hyper.softmin_temperature;
    let partials = exec.map_indexed(ds.n_learners(), |s| {
        learner_pass(params, ds, feats, &weights, tau, s, Some(1.0 / n_obs))
    });

    let mut g = params.zeros_like();
    let mut bce = 0.0;
    for (s, part) in partials.into_iter().enumerate() {
        bce += part.bce_sum;
        g.guess_logit += part.guess;
        g.slip_logit += part.slip;
        for (a, b) in g.difficulty.iter_mut().zip(&part.difficulty) {
            *a += b;
        }
        for (a, b) in g.relation_logits.iter_mut().zip(&part.relation) {
            *a += b;
        }
        g.initial_skill[s * k..(s + 1) * k].copy_from_slice(&part.mu);
        g.success_gain[s] = part.alpha;
        g.failure_gain[s] = part.beta;
    }
    // Chain through the scaled sigmoids of guess and slip.
    let dg = 0.5 * sigmoid(params.guess_logit) * (1.0 - sigmoid(params.guess_logit));
    let ds_ = 0.5 * sigmoid(params.slip_logit) * (1.0 - sigmoid(params.slip_logit));
    g.guess_logit *= dg;
    g.slip_logit *= ds_;

    let l2 = 2.0 * hyper.l2_weight;
    for (gv, pv) in g.initial_skill.iter_mut().zip(&params.initial_skill) {
        *gv += l2 * pv;
    }
    for (gv, pv) in g.success_gain.iter_mut().zip(&params.success_gain) {
        *gv += l2 * pv;
    }
    for (gv, pv) in g.failure_gain.iter_mut().zip(&params.failure_gain) {
        *gv += l2 * pv;
    }
    for i in 0..k {
        for j in 0..k {
            if i == j {
                g.relation_logits[i * k + j] = 0.0;
            } else {
                let r = params.relation(i, j);
                g.relation_logits[i * k + j] += hyper.l1_weight * r * (1.0 - r);
            }
        }
    }
    (bce / n_obs + regularisation(params, hyper), g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: PktParams,
    /// Loss at the start of each epoch, followed by the final loss.
    pub loss_trace: Vec<f64>,
}

/// Full-batch Adam on the PKT loss for a fixed number of epochs.
pub fn train(ds: &Dataset, hyper: &PktHyper, exec: Exec) -> Result<TrainOutcome, PktError> {
    if ds.n_observations() == 0 {
        return Err(PktError::EmptyDataset);
    }
    let feats = build_count_features(ds);
    let params = PktParams::init(ds.n_learners(), ds.ground_truth.k(), ds.ground_truth.e());
    train_from(params, ds, &feats, hyper, exec)
}

pub fn train_from(
    mut params: PktParams,
    ds: &Dataset,
    feats: &CountFeatures,
    hyper: &PktHyper,
    exec: Exec,
) -> Result<TrainOutcome, PktError> {
    params.check_shape(ds)?;
    let mut theta = params.to_flat();
    let mut m = vec![0.0; theta.len()];
    let mut v = vec![0.0; theta.len()];
    let mut loss_trace = Vec::with_capacity(hyper.epochs + 1);
    let (mut b1t, mut b2t) = (1.0, 1.0);
    for epoch in 0..hyper.epochs {
        let (l, grad) = loss_and_gradients(&params, ds, feats, hyper, exec);
        if !l.is_finite() {
            return Err(PktError::Divergence { epoch, loss: l });
        }
        loss_trace.push(l);
        b1t *= hyper.beta1;
        b2t *= hyper.beta2;
        for (x, g) in grad.to_flat().into_iter().enumerate() {
            m[x] = hyper.beta1 * m[x] + (1.0 - hyper.beta1) * g;
            v[x] = hyper.beta2 * v[x] + (1.0 - hyper.beta2) * g * g;
            let m_hat = m[x] / (1.0 - b1t);
            let v_hat = v[x] / (1.0 - b2t);
            theta[x] -= hyper.learning_rate * m_hat / (v_hat.sqrt() + hyper.epsilon);
        }
        params.assign_flat(&theta);
    }
    let final_loss = loss_with(&params, ds, feats, hyper, exec);
    if !final_loss.is_finite() {
        return Err(PktError::Divergence {
            epoch: hyper.epochs,
            loss: final_loss,
        });
    }
    loss_trace.push(final_loss);
    Ok(TrainOutcome { params, loss_trace })
}

/// `sigmoid(M)` with zero diagonal, then cycle breaking.
pub fn extract_relation_matrix(params: &PktParams) -> WeightedRelationMatrix {
    let k = params.k;
    let w = (0..k * k).map(|x| params.relation(x / k, x % k)).collect();
    let raw = WeightedRelationMatrix::from_flat(k, w).expect("sigmoid values lie in [0, 1]");
    break_cycles(&raw)
}
