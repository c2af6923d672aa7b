//! Prerequisite structure discovery for intelligent tutoring systems.
//!
//! The crate fits a knowledge-tracing model whose success prediction is gated
//! on a learnable relation matrix between knowledge components (KCs), and
//! evaluates the discovered structure in two ways: edge-level F1 against the
//! ground truth, and the learning gains obtained when the structure drives a
//! ZPD-based tutoring policy over a synthetic student population.
//!
//! Module map:
//!
//! - [`graph`]: knowledge structures, KC-exercise maps, random generation,
//!   cycle breaking, thresholding and F1 evaluation.
//! - [`simulator`]: the generative student model and exercise sequencers.
//! - [`pkt`]: the prerequisite knowledge-tracing model, analytic gradients and
//!   the training loop.
//! - [`baselines`]: the asymmetric Kappa-index discovery baseline.
//! - [`tutoring`]: ZPDES-KS, model-based and random tutors, plus closed-loop
//!   evaluation against the simulator.
//! - [`harness`]: configuration, file formats and end-to-end pipelines.
//!
//! Data-parallel loops (learner rollouts, per-learner gradient partials,
//! tutor sessions) go through [`exec::Exec`]. With the `parallel` feature
//! (default) they run on rayon; reductions always happen in learner order,
//! so both execution modes produce bit-identical results.

pub mod baselines;
pub mod exec;
pub mod graph;
pub mod harness;
pub mod pkt;
pub mod seed;
pub mod simulator;
pub mod tutoring;

pub(crate) mod math;
