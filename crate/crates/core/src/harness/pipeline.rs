//! The experiment stages: gen, discover, eval-ks, eval-tutor and repro.
//!
//! Stages run one after another and communicate only through files, so each
//! can also be driven on its own from the command line.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Method, TutorKind};
use super::io::{
    read_dataset, read_matrix, read_params, write_dataset, write_matrix, write_params, write_text, DatasetRecord,
    MatrixRecord, ParamsRecord,
};
use super::HarnessError;
use crate::exec::Exec;
use crate::graph::{best_threshold, threshold_graph, transitive_reduction, KnowledgeStructure};
use crate::pkt::{self, PktError, PktHyper};
use crate::seed::{derive_seed, rng_for};
use crate::simulator::{
    generate_dataset, random_sequencer, sample_profiles, GroundTruth, InformedSequencer, Scenario,
};
use crate::tutoring::{evaluate_tutor, MbtModel, MbtTutor, RandomTutor, Tutor, TutorRun, ZpdesTutor};
use crate::baselines;

pub const KS_REPORT_HEADER: &str = "method,scenario,dataset,theta,f1,mean_f1";
pub const TUTOR_REPORT_HEADER: &str = "tutor,scope,initial_level,average_level,final_level";
const TUTOR_STEPS_HEADER: &str = "tutor,step,mean_level";
const LEARNER_LOG_HEADER: &str = "learner,step,exercise,success,mean_level";

const DATASET_DIR: &str = "datasets";
const DISCOVERY_DIR: &str = "discovery";

/// Stem shared by every artifact derived from one dataset.
pub fn dataset_stem(seed: u64, simulator: usize, scenario: Scenario) -> String {
    format!("seed{seed}_sim{simulator:02}_{}", scenario.as_str())
}

fn file_stem(path: &Path) -> Result<String, HarnessError> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_owned)
        .ok_or_else(|| HarnessError::Usage(format!("cannot derive a dataset name from {}", path.display())))
}

fn method_rank(m: Method) -> usize {
    match m {
        Method::Pkt => 0,
        Method::Ki => 1,
    }
}

fn scenario_rank(s: Scenario) -> usize {
    match s {
        Scenario::Random => 0,
        Scenario::Informed => 1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedDataset {
    pub path: PathBuf,
    pub seed: u64,
    pub simulator: usize,
    pub scenario: Scenario,
    /// Stream used for the informed sequencer's edge subsample and order.
    pub informed_order_seed: Option<u64>,
}

/// Samples `n_simulators` ground truths per seed and writes one dataset per
/// scenario to `out/datasets`.
///
/// Learner profiles are shared between the scenarios of a simulator, so the
/// scenarios differ only in the exercise sequence.
pub fn generate(cfg: &ExperimentConfig, out: &Path, exec: Exec) -> Result<Vec<GeneratedDataset>, HarnessError> {
    cfg.validate()?;
    let mut written = Vec::new();
    for &seed in &cfg.seeds {
        for sim in 0..cfg.n_simulators {
            let mut rng = rng_for(seed, "ground-truth", sim as u64);
            let gt = GroundTruth::sample(&cfg.simulator, cfg.n_kcs, cfg.n_exercises, &mut rng)?;
            let profiles = sample_profiles(&cfg.simulator, cfg.n_learners, &mut rng_for(seed, "profiles", sim as u64));
            for &scenario in &cfg.scenarios {
                let traj_seed = derive_seed(seed, &format!("trajectories-{}", scenario.as_str()), sim as u64);
                let (dataset, order_seed) = match scenario {
                    Scenario::Random => {
                        let sequencer = random_sequencer(&gt);
                        let ds = generate_dataset(
                            &cfg.simulator,
                            &gt,
                            &profiles,
                            &sequencer,
                            scenario,
                            cfg.horizon,
                            traj_seed,
                            exec,
                        );
                        (ds, None)
                    }
                    Scenario::Informed => {
                        let order_seed = derive_seed(seed, "informed-order", sim as u64);
                        let mut order_rng = rng_for(order_seed, "informed-order", 0);
                        let sequencer = InformedSequencer::new(&gt, cfg.horizon, &mut order_rng);
                        let ds = generate_dataset(
                            &cfg.simulator,
                            &gt,
                            &profiles,
                            &sequencer,
                            scenario,
                            cfg.horizon,
                            traj_seed,
                            exec,
                        );
                        (ds, Some(order_seed))
                    }
                };
                let path = out
                    .join(DATASET_DIR)
                    .join(format!("{}.jsonl", dataset_stem(seed, sim, scenario)));
                write_dataset(
                    &path,
                    &DatasetRecord {
                        seed,
                        simulator: sim,
                        dataset,
                    },
                )?;
                written.push(GeneratedDataset {
                    path,
                    seed,
                    simulator: sim,
                    scenario,
                    informed_order_seed: order_seed,
                });
            }
        }
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscoveryArtifact {
    /// Stem of the source dataset.
    pub dataset: String,
    pub method: Method,
    pub scenario: Scenario,
    pub matrix_path: PathBuf,
    pub params_path: Option<PathBuf>,
    pub loss_path: Option<PathBuf>,
}

/// Fits `method` on each dataset and writes `<stem>.<method>.json` into
/// `out/discovery`. PKT additionally writes its parameters and loss trace.
pub fn discover(
    datasets: &[PathBuf],
    method: Method,
    hyper: &PktHyper,
    out: &Path,
    exec: Exec,
) -> Result<Vec<DiscoveryArtifact>, HarnessError> {
    hyper.validate().map_err(|m| HarnessError::Config(super::ConfigError::Invalid(m)))?;
    let dir = out.join(DISCOVERY_DIR);
    let mut artifacts = Vec::with_capacity(datasets.len());
    for path in datasets {
        let stem = file_stem(path)?;
        let record = read_dataset(path)?;
        let ds = &record.dataset;
        let matrix_path = dir.join(format!("{stem}.{}.json", method.as_str()));
        let (weights, params_path, loss_path) = match method {
            Method::Ki => (baselines::discover(ds), None, None),
            Method::Pkt => {
                let outcome = pkt::train(ds, hyper, exec).map_err(|e| match e {
                    PktError::Divergence { .. } => HarnessError::Divergence(format!("{}: {e}", path.display())),
                    other => HarnessError::Shape(format!("{}: {other}", path.display())),
                })?;
                let params_path = dir.join(format!("{stem}.pkt.params.json"));
                let loss_path = dir.join(format!("{stem}.pkt.loss.csv"));
                let mut csv = String::from("epoch,loss\n");
                for (epoch, l) in outcome.loss_trace.iter().enumerate() {
                    let _ = writeln!(csv, "{epoch},{l}");
                }
                write_text(&loss_path, &csv)?;
                let weights = pkt::extract_relation_matrix(&outcome.params);
                write_params(
                    &params_path,
                    &ParamsRecord::new(stem.clone(), hyper.softmin_temperature, outcome.params),
                )?;
                (weights, Some(params_path), Some(loss_path))
            }
        };
        write_matrix(&matrix_path, &MatrixRecord::new(method, stem.clone(), ds.scenario, weights))?;
        artifacts.push(DiscoveryArtifact {
            dataset: stem,
            method,
            scenario: ds.scenario,
            matrix_path,
            params_path,
            loss_path,
        });
    }
    Ok(artifacts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KsRow {
    pub method: Method,
    pub scenario: Scenario,
    pub dataset: String,
    /// Threshold chosen for the whole (method, scenario) group.
    pub theta: f64,
    pub f1: f64,
    pub mean_f1: f64,
}

fn ground_truths(datasets: &[PathBuf]) -> Result<BTreeMap<String, DatasetRecord>, HarnessError> {
    let mut out = BTreeMap::new();
    for path in datasets {
        let stem = file_stem(path)?;
        let record = read_dataset(path)?;
        if out.insert(stem.clone(), record).is_some() {
            return Err(HarnessError::Shape(format!("dataset `{stem}` given twice")));
        }
    }
    Ok(out)
}

/// Groups matrices by (method, scenario), searches one threshold per group
/// and scores every matrix against its dataset's ground truth.
pub fn ks_rows(
    matrices: &[MatrixRecord],
    truths: &BTreeMap<String, KnowledgeStructure>,
) -> Result<Vec<KsRow>, HarnessError> {
    let mut groups: BTreeMap<(usize, usize), BTreeMap<String, &MatrixRecord>> = BTreeMap::new();
    for m in matrices {
        let group = groups
            .entry((method_rank(m.method), scenario_rank(m.scenario)))
            .or_default();
        if group.insert(m.dataset.clone(), m).is_some() {
            return Err(HarnessError::Shape(format!(
                "two {} matrices for dataset `{}`",
                m.method.as_str(),
                m.dataset
            )));
        }
    }
    let mut rows = Vec::new();
    for group in groups.values() {
        let mut ms = Vec::with_capacity(group.len());
        let mut ks = Vec::with_capacity(group.len());
        for (stem, m) in group {
            let truth = truths
                .get(stem)
                .ok_or_else(|| HarnessError::Shape(format!("no dataset for matrix `{stem}`")))?;
            ms.push(m.weights.clone());
            ks.push(truth.clone());
        }
        let best = best_threshold(&ms, &ks)?;
        for ((stem, m), f1) in group.iter().zip(&best.per_dataset_f1) {
            rows.push(KsRow {
                method: m.method,
                scenario: m.scenario,
                dataset: stem.clone(),
                theta: best.theta,
                f1: *f1,
                mean_f1: best.mean_f1,
            });
        }
    }
    Ok(rows)
}

pub fn ks_report(rows: &[KsRow]) -> String {
    let mut csv = format!("{KS_REPORT_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            csv,
            "{},{},{},{:.6},{:.6},{:.6}",
            r.method.as_str(),
            r.scenario.as_str(),
            r.dataset,
            r.theta,
            r.f1,
            r.mean_f1
        );
    }
    csv
}

/// Threshold search and F1 scoring over matrix files aligned with dataset
/// files by name.
pub fn eval_ks(matrices: &[PathBuf], datasets: &[PathBuf], report: Option<&Path>) -> Result<Vec<KsRow>, HarnessError> {
    let truths = ground_truths(datasets)?
        .into_iter()
        .map(|(stem, r)| (stem, r.dataset.ground_truth.ks))
        .collect();
    let records = matrices.iter().map(|p| read_matrix(p)).collect::<Result<Vec<_>, _>>()?;
    let rows = ks_rows(&records, &truths)?;
    if let Some(path) = report {
        write_text(path, &ks_report(&rows))?;
    }
    Ok(rows)
}

/// Files consumed by the tutoring evaluation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TutorInputs {
    pub datasets: Vec<PathBuf>,
    pub matrices: Vec<PathBuf>,
    pub params: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TutorRow {
    pub tutor: TutorKind,
    /// `seed<N>` for one replicate, `all` for the pooled result.
    pub scope: String,
    pub initial_level: f64,
    pub average_level: f64,
    pub final_level: f64,
}

/// Output files of [`eval_tutor`]; each is skipped when `None`.
#[derive(Debug, Clone, Copy, Default)]
pub struct TutorOutputs<'a> {
    pub report: Option<&'a Path>,
    pub steps: Option<&'a Path>,
    pub learner_logs: Option<&'a Path>,
}

struct Unit {
    stem: String,
    seed: u64,
    simulator: usize,
    record: DatasetRecord,
}

/// Graph fed to a ZPDES tutor: the discovered matrix thresholded at the
/// group's best threshold, reduced to its Hasse diagram.
fn learned_structure(m: &MatrixRecord, theta: f64) -> Result<KnowledgeStructure, HarnessError> {
    Ok(transitive_reduction(&threshold_graph(&m.weights, theta))?)
}

fn run_tutor(
    kind: TutorKind,
    cfg: &ExperimentConfig,
    unit: &Unit,
    matrices: &BTreeMap<(usize, String), (MatrixRecord, f64)>,
    params: &BTreeMap<String, ParamsRecord>,
    keep_logs: bool,
    exec: Exec,
) -> Result<TutorRun, HarnessError> {
    let gt = &unit.record.dataset.ground_truth;
    let sim = &unit.record.dataset.config;
    let seed = derive_seed(unit.seed, "tutor-eval", unit.simulator as u64);
    let (n, t) = (cfg.eval_learners, cfg.horizon);
    fn go<T: Tutor>(
        tutor: &T,
        sim: &crate::simulator::SimulatorConfig,
        gt: &GroundTruth,
        n: usize,
        t: usize,
        seed: u64,
        keep_logs: bool,
        exec: Exec,
    ) -> TutorRun {
        evaluate_tutor(sim, gt, tutor, n, t, seed, keep_logs, exec)
    }
    let zpdes = |ks: KnowledgeStructure| ZpdesTutor {
        ks,
        map: gt.map.clone(),
        cfg: cfg.zpdes.clone(),
    };
    let matrix = |method: Method| {
        matrices.get(&(method_rank(method), unit.stem.clone())).ok_or_else(|| {
            HarnessError::Shape(format!("no {} matrix for dataset `{}`", method.as_str(), unit.stem))
        })
    };
    let run = match kind {
        TutorKind::Random => go(&RandomTutor { e: gt.e() }, sim, gt, n, t, seed, keep_logs, exec),
        TutorKind::ZpdesGt => go(&zpdes(gt.ks.clone()), sim, gt, n, t, seed, keep_logs, exec),
        TutorKind::ZpdesPkt | TutorKind::ZpdesKi => {
            let (m, theta) = matrix(kind.method().expect("learned tutor"))?;
            if m.k != gt.k() {
                return Err(HarnessError::Shape(format!("matrix for `{}` has k = {}", unit.stem, m.k)));
            }
            go(&zpdes(learned_structure(m, *theta)?), sim, gt, n, t, seed, keep_logs, exec)
        }
        TutorKind::MbtPkt => {
            let p = params
                .get(&unit.stem)
                .ok_or_else(|| HarnessError::Shape(format!("no PKT parameters for dataset `{}`", unit.stem)))?;
            if p.params.k != gt.k() || p.params.e != gt.e() {
                return Err(HarnessError::Shape(format!("PKT parameters for `{}` do not match", unit.stem)));
            }
            let tutor = MbtTutor {
                model: MbtModel::from_params(p.params.clone(), p.softmin_temperature),
                map: gt.map.clone(),
                temperature: cfg.mbt.temperature,
            };
            go(&tutor, sim, gt, n, t, seed, keep_logs, exec)
        }
    };
    Ok(run)
}

pub fn tutor_report(rows: &[TutorRow]) -> String {
    let mut csv = format!("{TUTOR_REPORT_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            csv,
            "{},{},{:.6},{:.6},{:.6}",
            r.tutor.as_str(),
            r.scope,
            r.initial_level,
            r.average_level,
            r.final_level
        );
    }
    csv
}

fn pooled(tutor: TutorKind, scope: String, runs: &[&TutorRun]) -> TutorRow {
    let n = runs.len().max(1) as f64;
    TutorRow {
        tutor,
        scope,
        initial_level: runs.iter().map(|r| r.initial_level).sum::<f64>() / n,
        average_level: runs.iter().map(|r| r.result.average_level).sum::<f64>() / n,
        final_level: runs.iter().map(|r| r.result.final_level).sum::<f64>() / n,
    }
}

/// Evaluates each tutor on fresh learners of every random-scenario
/// simulator in `inputs.datasets`.
///
/// Learned tutors use the matrices and parameters fitted on that same
/// dataset; each method's threshold is the best one over those matrices.
/// Rows come per seed and pooled (`all`), in the order of `cfg.tutors`.
pub fn eval_tutor(
    cfg: &ExperimentConfig,
    inputs: &TutorInputs,
    outputs: TutorOutputs<'_>,
    exec: Exec,
) -> Result<Vec<TutorRow>, HarnessError> {
    cfg.validate()?;
    let units: Vec<Unit> = ground_truths(&inputs.datasets)?
        .into_iter()
        .filter(|(_, r)| r.dataset.scenario == Scenario::Random)
        .map(|(stem, record)| Unit {
            stem,
            seed: record.seed,
            simulator: record.simulator,
            record,
        })
        .collect();
    if units.is_empty() {
        return Err(HarnessError::Usage(
            "tutoring evaluation needs at least one random-scenario dataset".into(),
        ));
    }

    let mut matrices = BTreeMap::new();
    let records = inputs.matrices.iter().map(|p| read_matrix(p)).collect::<Result<Vec<_>, _>>()?;
    let truths: BTreeMap<String, KnowledgeStructure> = units
        .iter()
        .map(|u| (u.stem.clone(), u.record.dataset.ground_truth.ks.clone()))
        .collect();
    let usable: Vec<MatrixRecord> = records
        .into_iter()
        .filter(|m| m.scenario == Scenario::Random && truths.contains_key(&m.dataset))
        .collect();
    let rows = ks_rows(&usable, &truths)?;
    let theta: BTreeMap<usize, f64> = rows.iter().map(|r| (method_rank(r.method), r.theta)).collect();
    for m in usable {
        let th = theta[&method_rank(m.method)];
        matrices.insert((method_rank(m.method), m.dataset.clone()), (m, th));
    }
    let mut params = BTreeMap::new();
    for p in &inputs.params {
        let rec = read_params(p)?;
        params.insert(rec.dataset.clone(), rec);
    }

    let keep_logs = outputs.learner_logs.is_some();
    let mut report = Vec::new();
    let mut steps_csv = format!("{TUTOR_STEPS_HEADER}\n");
    for &kind in &cfg.tutors {
        let mut runs = Vec::with_capacity(units.len());
        for unit in &units {
            let run = run_tutor(kind, cfg, unit, &matrices, &params, keep_logs, exec)?;
            if let Some(dir) = outputs.learner_logs {
                let mut csv = format!("{LEARNER_LOG_HEADER}\n");
                for l in &run.logs {
                    let _ = writeln!(
                        csv,
                        "{},{},{},{},{:.6}",
                        l.learner,
                        l.step,
                        l.exercise,
                        u8::from(l.success),
                        l.mean_level
                    );
                }
                write_text(&dir.join(format!("{}_{}.csv", kind.as_str(), unit.stem)), &csv)?;
            }
            runs.push((unit.seed, run));
        }
        let mut seeds: Vec<u64> = runs.iter().map(|(s, _)| *s).collect();
        seeds.dedup();
        for seed in seeds {
            let of_seed: Vec<&TutorRun> = runs.iter().filter(|(s, _)| *s == seed).map(|(_, r)| r).collect();
            report.push(pooled(kind, format!("seed{seed}"), &of_seed));
        }
        let all: Vec<&TutorRun> = runs.iter().map(|(_, r)| r).collect();
        report.push(pooled(kind, "all".into(), &all));
        for step in 0..cfg.horizon {
            let level = all.iter().map(|r| r.level_by_step[step]).sum::<f64>() / all.len() as f64;
            let _ = writeln!(steps_csv, "{},{},{level:.6}", kind.as_str(), step + 1);
        }
    }
    if let Some(path) = outputs.report {
        write_text(path, &tutor_report(&report))?;
    }
    if let Some(path) = outputs.steps {
        write_text(path, &steps_csv)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InformedSeed {
    pub seed: u64,
    pub simulator: usize,
    pub order_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub informed_order_seeds: Vec<InformedSeed>,
    /// Paths relative to the output directory, sorted.
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReproOutcome {
    pub manifest: RunManifest,
    pub ks_rows: Vec<KsRow>,
    pub tutor_rows: Vec<TutorRow>,
}

fn relative(out: &Path, p: &Path) -> String {
    p.strip_prefix(out).unwrap_or(p).to_string_lossy().replace('\\', "/")
}

/// gen, then discover with every method on every dataset, then eval-ks and
/// eval-tutor. Writes `config.txt`, `ks_report.csv`, `tutor_report.csv`,
/// `tutor_steps.csv` and `manifest.json` under `out`.
pub fn repro(cfg: &ExperimentConfig, out: &Path, exec: Exec) -> Result<ReproOutcome, HarnessError> {
    cfg.validate()?;
    for t in &cfg.tutors {
        if let Some(m) = t.method() {
            if !cfg.methods.contains(&m) {
                return Err(HarnessError::Config(super::ConfigError::Invalid(format!(
                    "tutor {t} needs method {} in `methods`",
                    m.as_str()
                ))));
            }
        }
    }
    if !cfg.tutors.is_empty() && !cfg.scenarios.contains(&Scenario::Random) {
        return Err(HarnessError::Config(super::ConfigError::Invalid(
            "tutoring evaluation needs the random scenario in `scenarios`".into(),
        )));
    }
    let mut artifacts = Vec::new();
    let config_path = out.join("config.txt");
    write_text(&config_path, &cfg.canonical_text())?;
    artifacts.push(config_path);

    let generated = generate(cfg, out, exec)?;
    let datasets: Vec<PathBuf> = generated.iter().map(|g| g.path.clone()).collect();
    artifacts.extend(datasets.iter().cloned());

    let mut matrices = Vec::new();
    let mut params = Vec::new();
    for &method in &cfg.methods {
        for a in discover(&datasets, method, &cfg.pkt, out, exec)? {
            matrices.push(a.matrix_path.clone());
            artifacts.push(a.matrix_path);
            if let Some(p) = a.params_path {
                params.push(p.clone());
                artifacts.push(p);
            }
            artifacts.extend(a.loss_path);
        }
    }

    let ks_path = out.join("ks_report.csv");
    let ks_rows = eval_ks(&matrices, &datasets, Some(&ks_path))?;
    artifacts.push(ks_path);

    let mut tutor_rows = Vec::new();
    if !cfg.tutors.is_empty() {
        let report = out.join("tutor_report.csv");
        let steps = out.join("tutor_steps.csv");
        let inputs = TutorInputs {
            datasets: datasets.clone(),
            matrices,
            params,
        };
        tutor_rows = eval_tutor(
            cfg,
            &inputs,
            TutorOutputs {
                report: Some(&report),
                steps: Some(&steps),
                learner_logs: None,
            },
            exec,
        )?;
        artifacts.push(report);
        artifacts.push(steps);
    }

    let mut artifacts: Vec<String> = artifacts.iter().map(|p| relative(out, p)).collect();
    artifacts.sort();
    let manifest = RunManifest {
        tool: "ksd".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: cfg.hash(),
        seeds: cfg.seeds.clone(),
        informed_order_seeds: generated
            .iter()
            .filter_map(|g| {
                g.informed_order_seed.map(|order_seed| InformedSeed {
                    seed: g.seed,
                    simulator: g.simulator,
                    order_seed,
                })
            })
            .collect(),
        artifacts,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    text.push('\n');
    write_text(&out.join("manifest.json"), &text)?;
    Ok(ReproOutcome {
        manifest,
        ks_rows,
        tutor_rows,
    })
}
