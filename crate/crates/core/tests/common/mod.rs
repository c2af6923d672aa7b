#![allow(dead_code)]

use ksd_core::graph::{
    break_cycles, is_acyclic, threshold_graph, transitive_reduction, Adjacency, KcExerciseMap, KnowledgeStructure,
    WeightedRelationMatrix,
};
use ksd_core::pkt::{build_count_features, loss, loss_and_gradients, soft_min, CountFeatures, PktHyper, PktParams};
use ksd_core::exec::Exec;
use ksd_core::seed::rng_for;
use ksd_core::simulator::{
    apply_forgetting, apply_practice, Dataset, GroundTruth, LearnerProfile, LearnerState, Scenario, SimulatorConfig,
    Trajectory,
};
use ksd_core::tutoring::{record_outcome, zpd_init, ZpdesConfig};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::Rng;

pub const PROPERTY_CASES: u32 = 256;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn runner() -> TestRunner {
    TestRunner::new(Config {
        cases: PROPERTY_CASES,
        failure_persistence: None,
        ..Config::default()
    })
}

fn run<S: Strategy>(
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    runner().run(&strategy, test).map_err(|e| e.to_string())
}

// ---------------------------------------------------------------- gradients

pub struct GradInstance {
    pub ds: Dataset,
    pub feats: CountFeatures,
    pub params: PktParams,
}

/// Any relaxed weight sum within this distance of the cap is rejected.
const KINK_MARGIN: f64 = 1e-3;

fn near_cap(params: &PktParams, map: &KcExerciseMap) -> bool {
    (0..map.e()).any(|e| {
        let own = map.kcs(e);
        (0..params.k).filter(|k| !own.contains(k)).any(|k| {
            let s: f64 = own.iter().map(|&j| sigmoid(params.relation_logits[k * params.k + j])).sum();
            (s - 1.0).abs() < KINK_MARGIN
        })
    })
}

/// Random instance with `n` learners, `k` KCs, `e` exercises and horizon `t`.
pub fn grad_instance(seed: u64, n: usize, k: usize, e: usize, t: usize) -> GradInstance {
    let mut rng = rng_for(seed, "grad-instance", 0);
    loop {
        let mut rows: Vec<Vec<usize>> = (0..e)
            .map(|x| {
                let first = if x < k { x } else { rng.random_range(0..k) };
                let mut kcs = vec![first];
                if k > 1 && rng.random_bool(0.4) {
                    let second = (first + rng.random_range(1..k)) % k;
                    kcs.push(second);
                    kcs.sort_unstable();
                }
                kcs
            })
            .collect();
        rows.truncate(e);
        let map = KcExerciseMap::new(k, rows).unwrap();
        let trajectories = (0..n)
            .map(|learner_id| Trajectory {
                learner_id,
                steps: (0..t).map(|_| (rng.random_range(0..e), rng.random_bool(0.5))).collect(),
            })
            .collect();
        let ds = Dataset {
            ground_truth: GroundTruth {
                ks: KnowledgeStructure::empty(k),
                map: map.clone(),
                difficulty: vec![1500.0; e],
            },
            config: SimulatorConfig::default(),
            scenario: Scenario::Random,
            horizon: t,
            trajectories,
        };
        let mut params = PktParams::init(n, k, e);
        params.guess_logit = rng.random_range(-2.0..0.5);
        params.slip_logit = rng.random_range(-2.0..0.5);
        params.difficulty.iter_mut().for_each(|d| *d = rng.random_range(-1.0..1.0));
        params.initial_skill.iter_mut().for_each(|m| *m = rng.random_range(-1.0..1.0));
        params.success_gain.iter_mut().for_each(|a| *a = rng.random_range(0.0..0.3));
        params.failure_gain.iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.2));
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    params.relation_logits[i * k + j] = rng.random_range(-3.0..2.0);
                }
            }
        }
        if near_cap(&params, &map) {
            continue;
        }
        let feats = build_count_features(&ds);
        return GradInstance { ds, feats, params };
    }
}

/// Largest relative error between the analytic gradient and central finite
/// differences with step `h`, using `max(|a|, |n|, 1e-6)` as denominator.
pub fn max_gradient_error(inst: &GradInstance, hyper: &PktHyper, h: f64) -> f64 {
    let (_, grad) = loss_and_gradients(&inst.params, &inst.ds, &inst.feats, hyper, Exec::Sequential);
    let analytic = grad.to_flat();
    let base = inst.params.to_flat();
    let k = inst.params.k;
    let diag: Vec<usize> = {
        // Offsets of pinned diagonal logits inside the flat vector.
        let n = base.len();
        (0..k).map(|i| n - k * k + i * k + i).collect()
    };
    let mut probe = inst.params.clone();
    let mut worst: f64 = 0.0;
    for x in 0..base.len() {
        if diag.contains(&x) {
            assert_eq!(analytic[x], 0.0);
            continue;
        }
        let mut v = base.clone();
        v[x] = base[x] + h;
        probe.assign_flat(&v);
        let up = loss(&probe, &inst.ds, &inst.feats, hyper);
        v[x] = base[x] - h;
        probe.assign_flat(&v);
        let down = loss(&probe, &inst.ds, &inst.feats, hyper);
        let numeric = (up - down) / (2.0 * h);
        let denom = analytic[x].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[x] - numeric).abs() / denom);
    }
    worst
}

// --------------------------------------------------------------- properties

fn weight_matrix() -> impl Strategy<Value = WeightedRelationMatrix> {
    (2usize..=7).prop_flat_map(|k| {
        // Coarse levels make ties common.
        proptest::collection::vec(prop_oneof![Just(0.0), (1u32..=8).prop_map(|q| q as f64 / 8.0)], k * k).prop_map(
            move |mut w| {
                for i in 0..k {
                    w[i * k + i] = 0.0;
                }
                WeightedRelationMatrix::from_flat(k, w).unwrap()
            },
        )
    })
}

/// Output acyclic; entries only ever kept or zeroed; each zeroed entry lay on
/// a cycle of the input graph.
pub fn prop_break_cycles() -> Result<(), String> {
    run(weight_matrix(), |m| {
        let out = break_cycles(&m);
        let before = threshold_graph(&m, 0.0);
        let after = threshold_graph(&out, 0.0);
        prop_assert!(is_acyclic(&after));
        let reach = before.reachability();
        let k = m.k();
        for i in 0..k {
            for j in 0..k {
                let (a, b) = (m.get(i, j), out.get(i, j));
                prop_assert!(b == a || b == 0.0, "entry ({i},{j}) changed from {a} to {b}");
                if a > 0.0 && b == 0.0 {
                    prop_assert!(reach.get(j, i), "zeroed ({i},{j}) was on no cycle");
                }
            }
        }
        Ok(())
    })
}

fn random_dag() -> impl Strategy<Value = Adjacency> {
    (1usize..=9).prop_flat_map(|k| {
        (
            proptest::collection::vec(proptest::bool::weighted(0.35), k * k),
            Just((0..k).collect::<Vec<usize>>()).prop_shuffle(),
        )
            .prop_map(move |(bits, perm)| {
                let mut adj = Adjacency::empty(k);
                for i in 0..k {
                    for j in (i + 1)..k {
                        if bits[i * k + j] {
                            adj.set(perm[i], perm[j], true);
                        }
                    }
                }
                adj
            })
    })
}

fn bfs_reach(adj: &Adjacency, from: usize, to: usize) -> bool {
    let mut seen = vec![false; adj.n()];
    let mut queue = std::collections::VecDeque::from([from]);
    seen[from] = true;
    while let Some(v) = queue.pop_front() {
        for c in adj.children(v) {
            if c == to {
                return true;
            }
            if !seen[c] {
                seen[c] = true;
                queue.push_back(c);
            }
        }
    }
    false
}

/// Pairwise BFS reachability is unchanged, the reduction is a subgraph, and
/// every remaining edge is needed.
pub fn prop_transitive_reduction() -> Result<(), String> {
    run(random_dag(), |adj| {
        let red = transitive_reduction(&adj).unwrap();
        let r = red.adjacency();
        let n = adj.n();
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(bfs_reach(&adj, i, j), bfs_reach(r, i, j), "pair ({}, {})", i, j);
                if r.get(i, j) {
                    prop_assert!(adj.get(i, j));
                    let mut without = r.clone();
                    without.set(i, j, false);
                    prop_assert!(!bfs_reach(&without, i, j), "edge ({}, {}) is redundant", i, j);
                }
            }
        }
        Ok(())
    })
}

/// H >= L after every operation and L never decreases, along random rollouts.
pub fn prop_simulator_levels() -> Result<(), String> {
    let strategy = (any::<u64>(), 2usize..=8, 1usize..=3, 1usize..=150);
    run(strategy, |(seed, k, extra, steps)| {
        let cfg = SimulatorConfig::default();
        let mut rng = rng_for(seed, "prop-sim", 0);
        let gt = GroundTruth::sample(&cfg, k, k * extra, &mut rng).unwrap();
        let profile = LearnerProfile::sample(&cfg, &mut rng);
        let mut state = LearnerState::sample(&cfg, k, &mut rng);
        for _ in 0..steps {
            let e = rng.random_range(0..gt.e());
            let success = rng.random_bool(0.5);
            let before = state.long_term.clone();
            apply_practice(&mut state, &profile, &gt, &cfg, e, success);
            for x in 0..k {
                prop_assert!(state.short_term[x] >= state.long_term[x]);
                prop_assert!(state.long_term[x] >= before[x]);
            }
            apply_forgetting(&mut state, &cfg);
            for x in 0..k {
                prop_assert!(state.short_term[x] >= state.long_term[x] - 1e-9 * state.long_term[x].abs());
                prop_assert!(state.long_term[x] >= before[x]);
            }
        }
        Ok(())
    })
}

pub const ZPDES_CALLS: usize = 10_000;

/// Through 10^4 random outcomes: S-hat in [0,1], P-hat in [-1,1], the ZPD
/// never holds a removed exercise, and the monotone flags never shrink.
pub fn prop_zpdes_state() -> Result<(), String> {
    let strategy = (any::<u64>(), 2usize..=8, 1usize..=3);
    run(strategy, |(seed, k, extra)| {
        let sim = SimulatorConfig::default();
        let cfg = ZpdesConfig::default();
        let mut rng = rng_for(seed, "prop-zpdes", 0);
        let gt = GroundTruth::sample(&sim, k, k * extra, &mut rng).unwrap();
        let mut state = zpd_init(&gt.ks, &gt.map);
        let p_success: f64 = rng.random_range(0.05..0.95);
        for _ in 0..ZPDES_CALLS {
            let e = rng.random_range(0..gt.e());
            let prev = state.clone();
            record_outcome(&mut state, &gt.ks, &gt.map, &cfg, e, rng.random_bool(p_success)).unwrap();
            prop_assert!((0.0..=1.0).contains(&state.s_hat[e]));
            prop_assert!((-1.0..=1.0).contains(&state.p_hat[e]));
            for x in 0..gt.e() {
                prop_assert!(!(state.zpd[x] && state.removed[x]));
                prop_assert!(!prev.removed[x] || state.removed[x]);
                prop_assert!(!prev.validated_exercises[x] || state.validated_exercises[x]);
            }
            for x in 0..k {
                prop_assert!(!prev.active_kcs[x] || state.active_kcs[x]);
                prop_assert!(!prev.validated_kcs[x] || state.validated_kcs[x]);
            }
        }
        Ok(())
    })
}

/// Values spread over a range of 10 with positive weights: tau -> 0 gives
/// the minimum within 1e-3, a huge tau the weighted mean, any tau stays in
/// the value range.
pub fn prop_soft_min_limits() -> Result<(), String> {
    let strategy = (1usize..=8).prop_flat_map(|n| {
        (
            -20.0f64..20.0,
            proptest::collection::vec(0.0f64..=1.0, n),
            proptest::collection::vec(0.05f64..=1.0, n),
            0.01f64..100.0,
        )
    });
    run(strategy, |(base, unit, weights, tau)| {
        let mut values: Vec<f64> = unit.iter().map(|u| base + 10.0 * u).collect();
        if values.len() > 1 {
            values[0] = base;
            values[1] = base + 10.0;
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let cold = soft_min(&values, &weights, 1e-3).unwrap();
        prop_assert!((cold - lo).abs() < 1e-3, "cold {cold} vs min {lo}");
        let wsum: f64 = weights.iter().sum();
        let mean = values.iter().zip(&weights).map(|(v, w)| v * w).sum::<f64>() / wsum;
        let hot = soft_min(&values, &weights, 1e6).unwrap();
        prop_assert!((hot - mean).abs() < 1e-3, "hot {hot} vs mean {mean}");
        let mid = soft_min(&values, &weights, tau).unwrap();
        prop_assert!(mid >= lo - 1e-9 && mid <= hi + 1e-9);
        Ok(())
    })
}
