//! On-disk formats.
//!
//! Datasets are JSONL: the first line is a [`DatasetHeader`] carrying the
//! ground truth and simulator configuration, each following line is one
//! trajectory `{"learner_id": .., "steps": [[exercise, 0|1], ..]}`.
//! Relation matrices and trained parameters are single JSON documents with a
//! `format` tag and a schema `version`.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::Method;
use super::HarnessError;
use crate::graph::{KcExerciseMap, KnowledgeStructure, WeightedRelationMatrix};
use crate::pkt::PktParams;
use crate::simulator::{Dataset, GroundTruth, Scenario, SimulatorConfig, Trajectory};

pub const FORMAT_VERSION: u32 = 1;
pub const DATASET_FORMAT: &str = "ksd-dataset";
pub const MATRIX_FORMAT: &str = "ksd-relation-matrix";
pub const PARAMS_FORMAT: &str = "ksd-pkt-params";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    /// Replicate seed that produced the simulator.
    pub seed: u64,
    /// Simulator index within the replicate.
    pub simulator: usize,
    pub scenario: Scenario,
    pub horizon: usize,
    pub n_learners: usize,
    pub k: usize,
    pub e: usize,
    pub ks_edges: Vec<(usize, usize)>,
    pub kc_exercise: Vec<Vec<usize>>,
    pub difficulty: Vec<f64>,
    pub config: SimulatorConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryLine {
    learner_id: usize,
    steps: Vec<(usize, u8)>,
}

/// A dataset plus the provenance stored in its header.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub seed: u64,
    pub simulator: usize,
    pub dataset: Dataset,
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| HarnessError::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| HarnessError::io(path, e))
}

fn read_text(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))
}

pub fn write_dataset(path: &Path, record: &DatasetRecord) -> Result<(), HarnessError> {
    let ds = &record.dataset;
    let gt = &ds.ground_truth;
    let header = DatasetHeader {
        format: DATASET_FORMAT.to_owned(),
        version: FORMAT_VERSION,
        seed: record.seed,
        simulator: record.simulator,
        scenario: ds.scenario,
        horizon: ds.horizon,
        n_learners: ds.n_learners(),
        k: gt.k(),
        e: gt.e(),
        ks_edges: gt.ks.edges(),
        kc_exercise: gt.map.rows().to_vec(),
        difficulty: gt.difficulty.clone(),
        config: ds.config.clone(),
    };
    let mut w = create(path)?;
    let io = |e: std::io::Error| HarnessError::io(path, e);
    serde_json::to_writer(&mut w, &header).map_err(|e| HarnessError::format(path, e.to_string()))?;
    w.write_all(b"\n").map_err(io)?;
    for t in &ds.trajectories {
        let line = TrajectoryLine {
            learner_id: t.learner_id,
            steps: t.steps.iter().map(|&(e, ok)| (e, u8::from(ok))).collect(),
        };
        serde_json::to_writer(&mut w, &line).map_err(|e| HarnessError::format(path, e.to_string()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_dataset(path: &Path) -> Result<DatasetRecord, HarnessError> {
    let file = fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let bad = |msg: String| HarnessError::format(path, msg);
    let first = lines
        .next()
        .ok_or_else(|| bad("empty dataset file".into()))?
        .map_err(|e| HarnessError::io(path, e))?;
    let header: DatasetHeader = serde_json::from_str(&first).map_err(|e| bad(format!("header: {e}")))?;
    if header.format != DATASET_FORMAT || header.version != FORMAT_VERSION {
        return Err(bad(format!(
            "unsupported format {} v{} (expected {DATASET_FORMAT} v{FORMAT_VERSION})",
            header.format, header.version
        )));
    }
    let ks = KnowledgeStructure::from_edges(header.k, &header.ks_edges).map_err(|e| bad(e.to_string()))?;
    let map = KcExerciseMap::new(header.k, header.kc_exercise).map_err(|e| bad(e.to_string()))?;
    if map.e() != header.e || header.difficulty.len() != header.e {
        return Err(bad("exercise count does not match header".into()));
    }
    let mut trajectories = Vec::with_capacity(header.n_learners);
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| HarnessError::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let t: TrajectoryLine = serde_json::from_str(&line).map_err(|e| bad(format!("line {}: {e}", n + 2)))?;
        let mut steps = Vec::with_capacity(t.steps.len());
        for (e, ok) in t.steps {
            if e >= header.e || ok > 1 {
                return Err(bad(format!("line {}: invalid step [{e}, {ok}]", n + 2)));
            }
            steps.push((e, ok == 1));
        }
        if steps.len() != header.horizon {
            return Err(bad(format!("line {}: trajectory length {} != horizon {}", n + 2, steps.len(), header.horizon)));
        }
        trajectories.push(Trajectory {
            learner_id: t.learner_id,
            steps,
        });
    }
    if trajectories.len() != header.n_learners {
        return Err(bad(format!("expected {} trajectories, found {}", header.n_learners, trajectories.len())));
    }
    Ok(DatasetRecord {
        seed: header.seed,
        simulator: header.simulator,
        dataset: Dataset {
            ground_truth: GroundTruth {
                ks,
                map,
                difficulty: header.difficulty,
            },
            config: header.config,
            scenario: header.scenario,
            horizon: header.horizon,
            trajectories,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixRecord {
    pub format: String,
    pub version: u32,
    pub method: Method,
    /// File stem of the dataset the matrix was fitted on.
    pub dataset: String,
    pub scenario: Scenario,
    pub k: usize,
    pub weights: WeightedRelationMatrix,
}

impl MatrixRecord {
    pub fn new(method: Method, dataset: String, scenario: Scenario, weights: WeightedRelationMatrix) -> Self {
        Self {
            format: MATRIX_FORMAT.to_owned(),
            version: FORMAT_VERSION,
            method,
            dataset,
            scenario,
            k: weights.k(),
            weights,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsRecord {
    pub format: String,
    pub version: u32,
    pub dataset: String,
    pub softmin_temperature: f64,
    pub params: PktParams,
}

impl ParamsRecord {
    pub fn new(dataset: String, softmin_temperature: f64, params: PktParams) -> Self {
        Self {
            format: PARAMS_FORMAT.to_owned(),
            version: FORMAT_VERSION,
            dataset,
            softmin_temperature,
            params,
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::format(path, e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_matrix(path: &Path, record: &MatrixRecord) -> Result<(), HarnessError> {
    write_json(path, record)
}

pub fn read_matrix(path: &Path) -> Result<MatrixRecord, HarnessError> {
    let record: MatrixRecord =
        serde_json::from_str(&read_text(path)?).map_err(|e| HarnessError::format(path, e.to_string()))?;
    if record.format != MATRIX_FORMAT || record.version != FORMAT_VERSION || record.k != record.weights.k() {
        return Err(HarnessError::format(path, "not a relation matrix document of a supported version"));
    }
    Ok(record)
}

pub fn write_params(path: &Path, record: &ParamsRecord) -> Result<(), HarnessError> {
    write_json(path, record)
}

pub fn read_params(path: &Path) -> Result<ParamsRecord, HarnessError> {
    let record: ParamsRecord =
        serde_json::from_str(&read_text(path)?).map_err(|e| HarnessError::format(path, e.to_string()))?;
    let p = &record.params;
    let consistent = p.difficulty.len() == p.e
        && p.initial_skill.len() == p.n_learners * p.k
        && p.success_gain.len() == p.n_learners
        && p.failure_gain.len() == p.n_learners
        && p.relation_logits.len() == p.k * p.k;
    if record.format != PARAMS_FORMAT || record.version != FORMAT_VERSION || !consistent {
        return Err(HarnessError::format(path, "not a PKT parameter document of a supported version"));
    }
    Ok(record)
}
