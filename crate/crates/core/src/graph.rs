//! Knowledge structures, KC-exercise maps and post-processing of weighted
//! relation matrices.
//!
//! Adjacency is stored row-major: `adj[i][j] == true` means KC `i` is a
//! prerequisite of KC `j`.

use std::collections::BTreeSet;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("graph contains a directed cycle")]
    Cyclic,
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("node index {index} out of range for {k} nodes")]
    NodeOutOfRange { index: usize, k: usize },
    #[error("exercise {index} out of range for {e} exercises")]
    ExerciseOutOfRange { index: usize, e: usize },
    #[error("matrix is {got}x{got}, expected {expected}x{expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("relation weight at ({row}, {col}) is {value}, expected a finite value in [0, 1]")]
    InvalidWeight { row: usize, col: usize, value: f64 },
    #[error("relation matrix has nonzero diagonal at {0}")]
    NonZeroDiagonal(usize),
    #[error("exercise {0} has no related KC")]
    EmptyExercise(usize),
    #[error("KC {0} has no related exercise")]
    UncoveredKc(usize),
    #[error("exercise {exercise} relates KCs {a} and {b}, which are connected by a directed path")]
    PathConstraint { exercise: usize, a: usize, b: usize },
    #[error("could not sample a valid KC-exercise map after {0} rejections")]
    ExerciseMapRejected(usize),
    #[error("threshold search needs aligned, nonempty inputs ({matrices} matrices, {structures} structures)")]
    ThresholdInputs { matrices: usize, structures: usize },
}

/// Dense square boolean matrix.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Adjacency {
    n: usize,
    cells: Vec<bool>,
}

impl Adjacency {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            cells: vec![false; n * n],
        }
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        let mut adj = Self::empty(n);
        for &(i, j) in edges {
            for index in [i, j] {
                if index >= n {
                    return Err(GraphError::NodeOutOfRange { index, k: n });
                }
            }
            adj.set(i, j, true);
        }
        Ok(adj)
    }

    pub fn from_rows(rows: &[Vec<bool>]) -> Result<Self, GraphError> {
        let n = rows.len();
        let mut adj = Self::empty(n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(GraphError::ShapeMismatch {
                    expected: n,
                    got: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                adj.set(i, j, v);
            }
        }
        Ok(adj)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.cells[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.cells[i * self.n + j] = v;
    }

    /// Edges in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.n)
            .flat_map(|i| (0..self.n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.get(i, j))
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn parents(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&i| self.get(i, j))
    }

    pub fn children(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&j| self.get(i, j))
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::empty(self.n);
        for (i, j) in self.edges() {
            t.set(j, i, true);
        }
        t
    }

    /// `reach[i][j]` is true iff a path of length ≥ 1 leads from `i` to `j`.
    pub fn reachability(&self) -> Adjacency {
        let mut reach = Adjacency::empty(self.n);
        let mut stack = Vec::new();
        for src in 0..self.n {
            stack.clear();
            stack.extend(self.children(src));
            while let Some(v) = stack.pop() {
                if !reach.get(src, v) {
                    reach.set(src, v, true);
                    stack.extend(self.children(v));
                }
            }
        }
        reach
    }

    /// Kahn order, or `None` when the graph has a cycle.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let mut indegree: Vec<usize> = (0..self.n).map(|j| self.parents(j).count()).collect();
        let mut ready: Vec<usize> = (0..self.n).rev().filter(|&j| indegree[j] == 0).collect();
        let mut order = Vec::with_capacity(self.n);
        while let Some(v) = ready.pop() {
            order.push(v);
            for c in (0..self.n).rev() {
                if self.get(v, c) {
                    indegree[c] -= 1;
                    if indegree[c] == 0 {
                        ready.push(c);
                    }
                }
            }
        }
        (order.len() == self.n).then_some(order)
    }
}

/// True iff the graph has no directed cycle. Self-loops count as cycles.
pub fn is_acyclic(adj: &Adjacency) -> bool {
    adj.topological_order().is_some()
}

/// A prerequisite DAG over `k` KCs.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct KnowledgeStructure {
    adj: Adjacency,
}

impl KnowledgeStructure {
    pub fn empty(k: usize) -> Self {
        Self {
            adj: Adjacency::empty(k),
        }
    }

    pub fn from_adjacency(adj: Adjacency) -> Result<Self, GraphError> {
        if let Some(i) = (0..adj.n()).find(|&i| adj.get(i, i)) {
            return Err(GraphError::SelfLoop(i));
        }
        if !is_acyclic(&adj) {
            return Err(GraphError::Cyclic);
        }
        Ok(Self { adj })
    }

    pub fn from_edges(k: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        Self::from_adjacency(Adjacency::from_edges(k, edges)?)
    }

    pub fn k(&self) -> usize {
        self.adj.n()
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adj
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj.get(i, j)
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adj.edges()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.edge_count()
    }

    pub fn parents(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        self.adj.parents(j)
    }

    pub fn roots(&self) -> Vec<usize> {
        (0..self.k())
            .filter(|&j| self.parents(j).next().is_none())
            .collect()
    }

    pub fn topological_order(&self) -> Vec<usize> {
        self.adj
            .topological_order()
            .expect("knowledge structures are acyclic")
    }
}

/// Removes every edge `i -> j` for which a longer path `i ~> j` exists.
/// Reachability is preserved.
pub fn transitive_reduction(adj: &Adjacency) -> Result<KnowledgeStructure, GraphError> {
    if !is_acyclic(adj) {
        return Err(GraphError::Cyclic);
    }
    let reach = adj.reachability();
    let mut reduced = adj.clone();
    for (i, j) in adj.edges() {
        if adj.children(i).any(|c| c != j && reach.get(c, j)) {
            reduced.set(i, j, false);
        }
    }
    KnowledgeStructure::from_adjacency(reduced)
}

/// Intermediate graphs of [`sample_knowledge_structure`], exposed for tests.
#[derive(Debug, Clone)]
pub struct StructureSample {
    /// Upper-triangular Erdős–Rényi draw, before relabelling.
    pub upper: Adjacency,
    /// `upper` after the random node permutation.
    pub shuffled: Adjacency,
    /// `shuffled` with shortcuts removed.
    pub reduced: KnowledgeStructure,
}

/// Samples a random prerequisite DAG with edge probability `2/k`.
pub fn sample_knowledge_structure<R: Rng + ?Sized>(k: usize, rng: &mut R) -> KnowledgeStructure {
    let p = if k == 0 { 0.0 } else { (2.0 / k as f64).min(1.0) };
    sample_knowledge_structure_with(k, p, rng).reduced
}

/// Upper-triangular draw with edge probability `p`, Fisher–Yates relabelling,
/// then shortcut removal.
pub fn sample_knowledge_structure_with<R: Rng + ?Sized>(
    k: usize,
    p: f64,
    rng: &mut R,
) -> StructureSample {
    let mut upper = Adjacency::empty(k);
    for i in 0..k {
        for j in (i + 1)..k {
            if rng.random_bool(p.clamp(0.0, 1.0)) {
                upper.set(i, j, true);
            }
        }
    }
    let mut perm: Vec<usize> = (0..k).collect();
    perm.shuffle(rng);
    let mut shuffled = Adjacency::empty(k);
    for (i, j) in upper.edges() {
        shuffled.set(perm[i], perm[j], true);
    }
    let reduced = transitive_reduction(&shuffled).expect("relabelled upper-triangular graph is acyclic");
    StructureSample {
        upper,
        shuffled,
        reduced,
    }
}

/// Which KCs each exercise practices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KcExerciseMap {
    k: usize,
    /// Sorted KC ids for each exercise.
    kcs: Vec<Vec<usize>>,
}

impl KcExerciseMap {
    /// Builds a map from per-exercise KC lists and checks row and column
    /// coverage. Path constraints are checked separately by
    /// [`KcExerciseMap::check_paths`].
    pub fn new(k: usize, kcs: Vec<Vec<usize>>) -> Result<Self, GraphError> {
        let mut covered = vec![false; k];
        let mut rows = Vec::with_capacity(kcs.len());
        for (e, row) in kcs.into_iter().enumerate() {
            let set: BTreeSet<usize> = row.into_iter().collect();
            if set.is_empty() {
                return Err(GraphError::EmptyExercise(e));
            }
            for &kc in &set {
                if kc >= k {
                    return Err(GraphError::NodeOutOfRange { index: kc, k });
                }
                covered[kc] = true;
            }
            rows.push(set.into_iter().collect());
        }
        if let Some(kc) = covered.iter().position(|&c| !c) {
            return Err(GraphError::UncoveredKc(kc));
        }
        Ok(Self { k, kcs: rows })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn e(&self) -> usize {
        self.kcs.len()
    }

    pub fn kcs(&self, e: usize) -> &[usize] {
        &self.kcs[e]
    }

    pub fn relates(&self, e: usize, kc: usize) -> bool {
        self.kcs[e].binary_search(&kc).is_ok()
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.kcs
    }

    /// Exercises practising `kc`, in increasing id order.
    pub fn exercises_of(&self, kc: usize) -> Vec<usize> {
        (0..self.e()).filter(|&e| self.relates(e, kc)).collect()
    }

    /// Checks that no exercise relates two KCs joined by a directed path.
    pub fn check_paths(&self, ks: &KnowledgeStructure) -> Result<(), GraphError> {
        if ks.k() != self.k {
            return Err(GraphError::ShapeMismatch {
                expected: self.k,
                got: ks.k(),
            });
        }
        let reach = ks.adjacency().reachability();
        for (exercise, row) in self.kcs.iter().enumerate() {
            for (x, &a) in row.iter().enumerate() {
                for &b in &row[x + 1..] {
                    if reach.get(a, b) || reach.get(b, a) {
                        return Err(GraphError::PathConstraint { exercise, a, b });
                    }
                }
            }
        }
        Ok(())
    }
}

/// True iff no two KCs of the candidate set are connected by a path
/// (`reach` is the reachability matrix of the knowledge structure).
pub fn exercise_kcs_admissible(reach: &Adjacency, kcs: &[usize]) -> bool {
    kcs.iter().enumerate().all(|(x, &a)| {
        kcs[x + 1..]
            .iter()
            .all(|&b| a != b && !reach.get(a, b) && !reach.get(b, a))
    })
}

pub const DEFAULT_MAX_REJECTIONS: usize = 10_000;

/// Samples a KC-exercise map consistent with `ks`.
///
/// Each exercise draws one KC with probability 0.7 and two with probability
/// 0.3; a draw whose pair is joined by a path is redrawn from scratch,
/// count included. When `e >= k` the first
/// `k` exercises are seeded with a permutation of the KCs so every KC is
/// covered; exercise ids are then shuffled.
pub fn sample_kc_exercise_map<R: Rng + ?Sized>(
    ks: &KnowledgeStructure,
    e: usize,
    rng: &mut R,
    max_rejections: usize,
) -> Result<KcExerciseMap, GraphError> {
    let k = ks.k();
    let reach = ks.adjacency().reachability();
    let mut rejections = 0usize;

    let reject = |rejections: &mut usize| -> Result<(), GraphError> {
        *rejections += 1;
        if *rejections > max_rejections {
            Err(GraphError::ExerciseMapRejected(max_rejections))
        } else {
            Ok(())
        }
    };

    loop {
        let mut seeds: Vec<usize> = (0..k).collect();
        seeds.shuffle(rng);
        let mut rows: Vec<Vec<usize>> = Vec::with_capacity(e);
        for x in 0..e {
            let row = loop {
                let want_two = k >= 2 && rng.random_bool(0.3);
                let candidate: Vec<usize> = match (x < k && e >= k, want_two) {
                    (true, false) => vec![seeds[x]],
                    (true, true) => {
                        let mut other = rng.random_range(0..k - 1);
                        if other >= seeds[x] {
                            other += 1;
                        }
                        vec![seeds[x], other]
                    }
                    (false, false) => vec![rng.random_range(0..k)],
                    (false, true) => index::sample(rng, k, 2).into_vec(),
                };
                if exercise_kcs_admissible(&reach, &candidate) {
                    break candidate;
                }
                reject(&mut rejections)?;
            };
            rows.push(row);
        }
        rows.shuffle(rng);
        match KcExerciseMap::new(k, rows) {
            Ok(map) => return Ok(map),
            Err(GraphError::UncoveredKc(_)) => reject(&mut rejections)?,
            Err(err) => return Err(err),
        }
    }
}

/// `P_e`: the KCs of exercise `e` together with their direct parents, or
/// with all their ancestors when `ancestors` is set.
pub fn prerequisite_closure(
    ks: &KnowledgeStructure,
    map: &KcExerciseMap,
    e: usize,
    ancestors: bool,
) -> Result<BTreeSet<usize>, GraphError> {
    if e >= map.e() {
        return Err(GraphError::ExerciseOutOfRange { index: e, e: map.e() });
    }
    let mut out: BTreeSet<usize> = map.kcs(e).iter().copied().collect();
    if ancestors {
        let reach = ks.adjacency().reachability();
        for &kc in map.kcs(e) {
            out.extend((0..ks.k()).filter(|&i| reach.get(i, kc)));
        }
    } else {
        for &kc in map.kcs(e) {
            out.extend(ks.parents(kc));
        }
    }
    Ok(out)
}

/// Square matrix of relation strengths in `[0, 1]` with zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct WeightedRelationMatrix {
    k: usize,
    w: Vec<f64>,
}

impl WeightedRelationMatrix {
    pub fn zeros(k: usize) -> Self {
        Self {
            k,
            w: vec![0.0; k * k],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, GraphError> {
        let k = rows.len();
        let mut w = Vec::with_capacity(k * k);
        for row in rows {
            if row.len() != k {
                return Err(GraphError::ShapeMismatch {
                    expected: k,
                    got: row.len(),
                });
            }
            w.extend_from_slice(row);
        }
        Self::from_flat(k, w)
    }

    pub fn from_flat(k: usize, w: Vec<f64>) -> Result<Self, GraphError> {
        assert_eq!(w.len(), k * k, "flat matrix length must be k*k");
        for row in 0..k {
            for col in 0..k {
                let value = w[row * k + col];
                if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                    return Err(GraphError::InvalidWeight { row, col, value });
                }
                if row == col && value != 0.0 {
                    return Err(GraphError::NonZeroDiagonal(row));
                }
            }
        }
        Ok(Self { k, w })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.k + j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.w.chunks(self.k.max(1)).take(self.k).map(<[f64]>::to_vec).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.w
    }

    fn positive_graph(&self) -> Adjacency {
        let mut adj = Adjacency::empty(self.k);
        for i in 0..self.k {
            for j in 0..self.k {
                adj.set(i, j, self.get(i, j) > 0.0);
            }
        }
        adj
    }
}

impl TryFrom<Vec<Vec<f64>>> for WeightedRelationMatrix {
    type Error = GraphError;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        Self::from_rows(&rows)
    }
}

impl From<WeightedRelationMatrix> for Vec<Vec<f64>> {
    fn from(m: WeightedRelationMatrix) -> Self {
        m.rows()
    }
}

fn reaches(adj: &Adjacency, from: usize, to: usize, seen: &mut [bool], stack: &mut Vec<usize>) -> bool {
    seen.iter_mut().for_each(|s| *s = false);
    stack.clear();
    stack.push(from);
    seen[from] = true;
    while let Some(v) = stack.pop() {
        if v == to {
            return true;
        }
        for c in adj.children(v) {
            if !seen[c] {
                seen[c] = true;
                stack.push(c);
            }
        }
    }
    false
}

/// Visits positive entries in increasing weight order (row-major on ties)
/// and zeroes each one that still lies on a directed cycle of the
/// currently-positive graph. The result is acyclic.
pub fn break_cycles(m: &WeightedRelationMatrix) -> WeightedRelationMatrix {
    let k = m.k;
    let mut order: Vec<usize> = (0..k * k).filter(|&x| m.w[x] > 0.0).collect();
    order.sort_by(|&a, &b| m.w[a].total_cmp(&m.w[b]).then(a.cmp(&b)));

    let mut out = m.clone();
    let mut graph = m.positive_graph();
    let mut seen = vec![false; k];
    let mut stack = Vec::new();
    for x in order {
        let (i, j) = (x / k, x % k);
        // i -> j is on a cycle iff j reaches i.
        if reaches(&graph, j, i, &mut seen, &mut stack) {
            graph.set(i, j, false);
            out.w[x] = 0.0;
        }
    }
    out
}

/// `A_ij = (M_ij > theta)`.
pub fn threshold_graph(m: &WeightedRelationMatrix, theta: f64) -> Adjacency {
    let mut adj = Adjacency::empty(m.k);
    for i in 0..m.k {
        for j in 0..m.k {
            adj.set(i, j, m.get(i, j) > theta);
        }
    }
    adj
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryEdgeMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// Precision, recall and F1 of predicted directed edges against a ground
/// truth, over ordered off-diagonal pairs.
pub fn edge_f1(predicted: &Adjacency, truth: &KnowledgeStructure) -> BinaryEdgeMetrics {
    assert_eq!(predicted.n(), truth.k(), "edge_f1 needs matrices of equal size");
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for i in 0..predicted.n() {
        for j in 0..predicted.n() {
            if i == j {
                continue;
            }
            match (predicted.get(i, j), truth.has_edge(i, j)) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    BinaryEdgeMetrics {
        precision,
        recall,
        f1,
        tp,
        fp,
        fn_,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSearchResult {
    pub theta: f64,
    pub mean_f1: f64,
    pub per_dataset_f1: Vec<f64>,
}

/// Mean F1 of `threshold_graph(m, theta)` over aligned inputs.
pub fn mean_f1_at(
    ms: &[WeightedRelationMatrix],
    truths: &[KnowledgeStructure],
    theta: f64,
) -> (f64, Vec<f64>) {
    let per: Vec<f64> = ms
        .iter()
        .zip(truths)
        .map(|(m, t)| edge_f1(&threshold_graph(m, theta), t).f1)
        .collect();
    (per.iter().sum::<f64>() / per.len() as f64, per)
}

/// Finds the single threshold maximising mean F1 across datasets.
///
/// F1 only changes when `theta` crosses an entry value, so the candidates are
/// `0` and every distinct entry. Ties go to the smaller threshold.
pub fn best_threshold(
    ms: &[WeightedRelationMatrix],
    truths: &[KnowledgeStructure],
) -> Result<ThresholdSearchResult, GraphError> {
    if ms.is_empty() || ms.len() != truths.len() {
        return Err(GraphError::ThresholdInputs {
            matrices: ms.len(),
            structures: truths.len(),
        });
    }
    for (m, t) in ms.iter().zip(truths) {
        if m.k() != t.k() {
            return Err(GraphError::ShapeMismatch {
                expected: t.k(),
                got: m.k(),
            });
        }
    }
    let mut candidates: Vec<f64> = ms.iter().flat_map(|m| m.values().iter().copied()).collect();
    candidates.push(0.0);
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    let mut best: Option<ThresholdSearchResult> = None;
    for theta in candidates {
        let (mean_f1, per_dataset_f1) = mean_f1_at(ms, truths, theta);
        if best.as_ref().is_none_or(|b| mean_f1 > b.mean_f1) {
            best = Some(ThresholdSearchResult {
                theta,
                mean_f1,
                per_dataset_f1,
            });
        }
    }
    Ok(best.expect("candidate set contains 0"))
}
