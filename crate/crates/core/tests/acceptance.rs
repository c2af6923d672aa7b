//! Acceptance gate. Runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line each; exits non-zero if any criterion fails.

mod common;

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ksd_core::exec::Exec;
use ksd_core::graph::{best_threshold, KnowledgeStructure};
use ksd_core::harness::{repro, ExperimentConfig, KsRow, Method, ReproOutcome, TutorKind, TutorRow};
use ksd_core::pkt::{extract_relation_matrix, train, PktHyper};
use ksd_core::simulator::{scripted_chain_dataset, Scenario};

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn within(limit: Duration, elapsed: Duration) -> bool {
    elapsed <= limit
}

fn gradient_check() -> Verdict {
    let start = Instant::now();
    let hyper = PktHyper::default();
    let worst = (0..20)
        .map(|seed| common::max_gradient_error(&common::grad_instance(1000 + seed, 2, 3, 4, 10), &hyper, 1e-4))
        .fold(0.0, f64::max);
    let elapsed = start.elapsed();
    Verdict::new(
        worst < 1e-4 && within(Duration::from_secs(10), elapsed),
        format!("max relative error {worst:.3e} over 20 instances, {:.2}s", elapsed.as_secs_f64()),
    )
}

fn scripted_chain() -> Verdict {
    let start = Instant::now();
    let ds = scripted_chain_dataset(200, 60, 0);
    let outcome = match train(&ds, &PktHyper::default(), Exec::default()) {
        Ok(o) => o,
        Err(e) => return Verdict::new(false, format!("training failed: {e}")),
    };
    let p = &outcome.params;
    let gap = p.relation(0, 1) - p.relation(1, 0);
    let m = extract_relation_matrix(p);
    let truth = KnowledgeStructure::from_edges(2, &[(0, 1)]).unwrap();
    let best = best_threshold(&[m], &[truth]).unwrap();
    let elapsed = start.elapsed();
    Verdict::new(
        gap > 0.2 && best.mean_f1 == 1.0 && within(Duration::from_secs(120), elapsed),
        format!(
            "sigma(M01) - sigma(M10) = {gap:.4}, f1 = {:.3} at theta {:.4}, {:.1}s",
            best.mean_f1,
            best.theta,
            elapsed.as_secs_f64()
        ),
    )
}

fn desk_config() -> ExperimentConfig {
    ExperimentConfig {
        n_simulators: 3,
        n_kcs: 10,
        n_exercises: 30,
        n_learners: 100,
        horizon: 300,
        eval_learners: 100,
        seeds: vec![0, 1, 2],
        tutors: vec![TutorKind::Random, TutorKind::ZpdesGt, TutorKind::ZpdesPkt],
        ..ExperimentConfig::default()
    }
}

fn mean_f1(rows: &[KsRow], method: Method, scenario: Scenario) -> Option<f64> {
    rows.iter()
        .find(|r| r.method == method && r.scenario == scenario)
        .map(|r| r.mean_f1)
}

fn table_one(outcome: &ReproOutcome, elapsed: Duration) -> Verdict {
    let rows = &outcome.ks_rows;
    let (Some(pkt_r), Some(ki_r), Some(pkt_i)) = (
        mean_f1(rows, Method::Pkt, Scenario::Random),
        mean_f1(rows, Method::Ki, Scenario::Random),
        mean_f1(rows, Method::Pkt, Scenario::Informed),
    ) else {
        return Verdict::new(false, "missing report rows");
    };
    let ki_i = mean_f1(rows, Method::Ki, Scenario::Informed).unwrap_or(f64::NAN);
    Verdict::new(
        pkt_r > ki_r && pkt_r > pkt_i && (0.30..=0.65).contains(&pkt_r) && within(Duration::from_secs(1800), elapsed),
        format!(
            "f1 PKT-random {pkt_r:.3}, KI-random {ki_r:.3}, PKT-informed {pkt_i:.3}, KI-informed {ki_i:.3}, repro {:.0}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn pooled(rows: &[TutorRow], tutor: TutorKind) -> Option<&TutorRow> {
    rows.iter().find(|r| r.tutor == tutor && r.scope == "all")
}

fn table_two(outcome: &ReproOutcome, elapsed: Duration) -> Verdict {
    let rows = &outcome.tutor_rows;
    let (Some(gt), Some(pkt), Some(random)) = (
        pooled(rows, TutorKind::ZpdesGt),
        pooled(rows, TutorKind::ZpdesPkt),
        pooled(rows, TutorKind::Random),
    ) else {
        return Verdict::new(false, "missing report rows");
    };
    let gain = random.final_level - random.initial_level;
    let gap = gt.final_level - random.final_level;
    Verdict::new(
        gt.final_level > pkt.final_level
            && pkt.final_level > random.final_level
            && gap >= 0.08 * gain
            && within(Duration::from_secs(1800), elapsed),
        format!(
            "final GT {:.1}, PKT {:.1}, random {:.1} (initial {:.1}); GT-random gap {gap:.1} = {:.1}% of random gain {gain:.1}",
            gt.final_level,
            pkt.final_level,
            random.final_level,
            random.initial_level,
            100.0 * gap / gain
        ),
    )
}

fn property_suites() -> Verdict {
    let start = Instant::now();
    let suites: [(&str, fn() -> Result<(), String>); 5] = [
        ("break_cycles", common::prop_break_cycles),
        ("transitive_reduction", common::prop_transitive_reduction),
        ("simulator levels", common::prop_simulator_levels),
        ("zpdes state", common::prop_zpdes_state),
        ("soft_min limits", common::prop_soft_min_limits),
    ];
    let mut failures = Vec::new();
    for (name, suite) in suites {
        if let Err(e) = suite() {
            failures.push(format!("{name}: {e}"));
        }
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty() && within(Duration::from_secs(60), elapsed);
    let detail = if failures.is_empty() {
        format!("5 suites x {} cases, {:.1}s", common::PROPERTY_CASES, elapsed.as_secs_f64())
    } else {
        failures.join("; ")
    };
    Verdict::new(pass, detail)
}

const REPORTS: [&str; 4] = ["ks_report.csv", "tutor_report.csv", "tutor_steps.csv", "manifest.json"];

fn determinism() -> Verdict {
    let cfg = ExperimentConfig {
        n_simulators: 2,
        n_kcs: 5,
        n_exercises: 12,
        n_learners: 20,
        horizon: 40,
        eval_learners: 20,
        seeds: vec![4],
        pkt: PktHyper {
            epochs: 150,
            ..PktHyper::default()
        },
        ..ExperimentConfig::default()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let run = |dir: &Path, exec: Exec| repro(&cfg, dir, exec).map(|o| o.manifest);
    let (ma, mb) = match (run(a.path(), Exec::default()), run(b.path(), Exec::Sequential)) {
        (Ok(x), Ok(y)) => (x, y),
        (Err(e), _) | (_, Err(e)) => return Verdict::new(false, format!("repro failed: {e}")),
    };
    let mut differing: Vec<String> = REPORTS
        .iter()
        .filter(|f| fs::read(a.path().join(f)).ok() != fs::read(b.path().join(f)).ok())
        .map(|f| f.to_string())
        .collect();
    for art in &ma.artifacts {
        if fs::read(a.path().join(art)).ok() != fs::read(b.path().join(art)).ok() {
            differing.push(art.clone());
        }
    }
    Verdict::new(
        differing.is_empty() && ma == mb,
        if differing.is_empty() {
            format!("{} artifacts byte-identical across two runs", ma.artifacts.len() + 1)
        } else {
            format!("differing: {}", differing.join(", "))
        },
    )
}

fn main() -> ExitCode {
    let mut verdicts: Vec<(&str, Verdict)> = Vec::new();
    let mut report = |name: &'static str, v: Verdict| {
        println!("{} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        verdicts.push((name, v));
    };
    report("1 gradient correctness", gradient_check());
    report("2 scripted chain recovery", scripted_chain());

    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    match repro(&desk_config(), dir.path(), Exec::default()) {
        Ok(outcome) => {
            let elapsed = start.elapsed();
            report("3 discovery ordering at desk scale", table_one(&outcome, elapsed));
            report("4 tutoring ordering at desk scale", table_two(&outcome, elapsed));
        }
        Err(e) => {
            report("3 discovery ordering at desk scale", Verdict::new(false, format!("repro failed: {e}")));
            report("4 tutoring ordering at desk scale", Verdict::new(false, format!("repro failed: {e}")));
        }
    }
    report("5 property suites", property_suites());
    report("6 determinism", determinism());

    let failed = verdicts.iter().filter(|(_, v)| !v.pass).count();
    println!("acceptance: {} passed, {failed} failed", verdicts.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
