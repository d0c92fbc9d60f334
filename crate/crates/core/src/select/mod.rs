//! Hierarchical layer selection.
//!
//! Each round builds one pruning candidate per layer (its `alpha` cheapest
//! filters removed, compensation applied), scores every candidate, and commits
//! the best one. Two scores are available:
//!
//! - [`Selector::Hbgs`]: layerwise relative reconstruction error against the
//!   unpruned network's outputs for that layer.
//! - [`Selector::Hbgts`]: relative error of the final network output, computed
//!   for all layers in one sweep with a [`PropagationBuffer`].
//!
//! Rounds continue until the network's parameter count has dropped by the
//! configured fraction or no layer can be pruned further.

mod finetune;
mod layerwise;
mod tree;

pub use finetune::{finetune_hook, FinetuneHook, IdentityHook, LeastSquaresRecalibration};
pub use layerwise::{reference_outputs, relative_error_hbgs};
pub use tree::{propagate_tree, tree_errors, PropagationBuffer};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compensation::prune_layer;
use crate::error::{Error, Result};
use crate::metrics::layer_params;
use crate::sparse::{flatten_filters, fp_backward_to, fp_omp_to, Direction, SelectionConfig, SelectionResult};
use crate::tensor::{ConvLayer, Dataset, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selector {
    Hbgs,
    Hbgts,
    Uniform,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FpMethod {
    #[serde(rename = "fp-omp")]
    Omp,
    #[serde(rename = "fp-backward")]
    Backward,
}

/// Where layer outputs are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorPoint {
    #[default]
    PostActivation,
    PreActivation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    /// Filters removed from a layer per round.
    pub alpha: usize,
    /// Target fraction of parameters removed network-wide.
    pub beta: f64,
    pub selector: Selector,
    pub fp_method: FpMethod,
    /// Fewest filters any layer may keep.
    pub floor: usize,
    pub seed: u64,
    pub error_point: ErrorPoint,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            alpha: 5,
            beta: 0.5,
            selector: Selector::Hbgts,
            fp_method: FpMethod::Backward,
            floor: 1,
            seed: 0,
            error_point: ErrorPoint::PostActivation,
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 1 {
            return Err(Error::Config("alpha must be at least 1".into()));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::Config(format!("beta must lie in (0, 1), got {}", self.beta)));
        }
        if self.floor < 1 {
            return Err(Error::Config("floor must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-layer scores of one round; `None` marks layers without a candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerScores {
    pub errors: Vec<Option<f64>>,
    /// Examples whose reference output had zero norm.
    pub degenerate: usize,
    /// Composite forward passes used.
    pub passes: usize,
    /// Single-layer evaluations used.
    pub layer_evals: usize,
}

/// A pruned replacement for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    /// The layer the candidate was derived from.
    pub source: ConvLayer,
    pub layer: ConvLayer,
    pub selection: SelectionResult,
}

/// Removes `remove` filters from `layer` with the given method and compensates.
pub fn build_candidate(layer: &ConvLayer, remove: usize, method: FpMethod, config: SelectionConfig) -> Result<Candidate> {
    let n = layer.out_channels();
    if remove == 0 || remove >= n {
        return Err(Error::Config(format!("cannot remove {remove} of {n} filters")));
    }
    let filters = flatten_filters(layer, Direction::Output)?;
    let selection = match method {
        FpMethod::Omp => fp_omp_to(&filters, n - remove, config)?,
        FpMethod::Backward => fp_backward_to(&filters, n - remove, config)?,
    };
    let pruned = prune_layer(layer, &selection)?;
    Ok(Candidate { source: layer.clone(), layer: pruned, selection })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PruneStatus {
    /// The parameter target was reached.
    Completed,
    /// Stopped early: no layer could be pruned further.
    Partial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneRound {
    /// 1-based round number.
    pub round: usize,
    /// Candidate score per layer; `None` for layers that were not eligible.
    pub errors: Vec<Option<f64>>,
    /// Committed layer (0-based).
    pub chosen: Option<usize>,
    /// Filters per layer after the commit.
    pub retained: Vec<usize>,
    /// Cumulative fraction of parameters removed after the commit.
    pub param_reduction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PassCount {
    pub composite_passes: usize,
    pub layer_evals: usize,
}

#[derive(Debug, Clone)]
pub struct PruneOutcome {
    pub network: Network,
    pub rounds: Vec<PruneRound>,
    pub status: PruneStatus,
    pub original_filters: Vec<usize>,
    /// Zero-norm reference outputs skipped while scoring.
    pub degenerate_examples: usize,
    /// Scoring cost of each round.
    pub passes: Vec<PassCount>,
}

impl PruneOutcome {
    pub fn param_reduction(&self) -> f64 {
        self.rounds.last().map_or(0.0, |r| r.param_reduction)
    }
}

fn removable(cfg: &PruneConfig, layer: &ConvLayer) -> usize {
    cfg.alpha.min(layer.out_channels().saturating_sub(cfg.floor))
}

fn network_params(net: &Network) -> u64 {
    net.layers().iter().map(layer_params).sum()
}

/// Step-wise driver shared by all selectors.
pub struct Pruner<'a> {
    cfg: PruneConfig,
    data: &'a Dataset,
    selection: SelectionConfig,
    base_params: u64,
    original_filters: Vec<usize>,
    current: Network,
    reference: Option<Vec<Vec<crate::tensor::Tensor>>>,
    cache: Vec<Option<Candidate>>,
    rounds: Vec<PruneRound>,
    passes: Vec<PassCount>,
    degenerate: usize,
    status: Option<PruneStatus>,
    hook: Box<dyn FinetuneHook + 'a>,
}

impl<'a> Pruner<'a> {
    pub fn new(net: Network, data: &'a Dataset, cfg: PruneConfig) -> Result<Self> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if data.example_shape()[0] != net.input_channels() {
            return Err(Error::Dimension(format!(
                "dataset has {} channels, network expects {}",
                data.example_shape()[0],
                net.input_channels()
            )));
        }
        let reference = match cfg.selector {
            Selector::Hbgs => Some(reference_outputs(&net, data, cfg.error_point)?),
            _ => None,
        };
        Ok(Self {
            data,
            selection: SelectionConfig::default(),
            base_params: network_params(&net),
            original_filters: net.layers().iter().map(ConvLayer::out_channels).collect(),
            cache: vec![None; net.len()],
            current: net,
            reference,
            rounds: Vec::new(),
            passes: Vec::new(),
            degenerate: 0,
            status: None,
            hook: Box::new(IdentityHook),
            cfg,
        })
    }

    pub fn with_hook(mut self, hook: impl FinetuneHook + 'a) -> Self {
        self.hook = Box::new(hook);
        self
    }

    pub fn with_selection_config(mut self, selection: SelectionConfig) -> Self {
        self.selection = selection;
        self.cache.iter_mut().for_each(|c| *c = None);
        self
    }

    pub fn network(&self) -> &Network {
        &self.current
    }

    pub fn rounds(&self) -> &[PruneRound] {
        &self.rounds
    }

    pub fn status(&self) -> Option<PruneStatus> {
        self.status
    }

    pub fn param_reduction(&self) -> f64 {
        1.0 - network_params(&self.current) as f64 / self.base_params as f64
    }

    fn refine(&mut self) -> Result<()> {
        self.current = self.hook.refine(self.current.clone(), self.data)?;
        Ok(())
    }

    /// Candidates for the current network, reusing any whose source layer is unchanged.
    pub fn candidates(&mut self) -> Result<&[Option<Candidate>]> {
        let stale: Vec<usize> = (0..self.current.len())
            .filter(|&c| {
                self.cache[c].as_ref().is_none_or(|cand| cand.source != *self.current.layer(c))
            })
            .collect();
        let (net, cfg, selection) = (&self.current, &self.cfg, self.selection);
        let fresh: Vec<(usize, Option<Candidate>)> = stale
            .par_iter()
            .map(|&c| {
                let layer = net.layer(c);
                let remove = removable(cfg, layer);
                if remove == 0 {
                    return Ok((c, None));
                }
                let cand = build_candidate(layer, remove, cfg.fp_method, selection)?;
                // a commit must shrink the parameter count
                let useful = layer_params(&cand.layer) < layer_params(layer);
                Ok((c, useful.then_some(cand)))
            })
            .collect::<Result<_>>()?;
        for (c, cand) in fresh {
            self.cache[c] = cand;
        }
        Ok(&self.cache)
    }

    /// Runs one selection round. Returns `None` once pruning has finished.
    pub fn step(&mut self) -> Result<Option<&PruneRound>> {
        if self.status.is_some() {
            return Ok(None);
        }
        if self.cfg.selector == Selector::Uniform {
            return self.uniform_round();
        }
        if self.param_reduction() >= self.cfg.beta {
            self.status = Some(PruneStatus::Completed);
            return Ok(None);
        }
        let layers: Vec<Option<ConvLayer>> =
            self.candidates()?.iter().map(|c| c.as_ref().map(|c| c.layer.clone())).collect();
        if layers.iter().all(Option::is_none) {
            self.status = Some(PruneStatus::Partial);
            return Ok(None);
        }

        let round = self.rounds.len() + 1;
        let (errors, chosen) = match self.cfg.selector {
            Selector::Hbgs | Selector::Hbgts => {
                let scores = match (&self.reference, self.cfg.selector) {
                    (Some(reference), Selector::Hbgs) => {
                        relative_error_hbgs(&self.current, reference, &layers, self.data, self.cfg.error_point)?
                    }
                    _ => tree_errors(&self.current, &layers, self.data, self.cfg.error_point)?,
                };
                self.degenerate += scores.degenerate;
                self.passes.push(PassCount { composite_passes: scores.passes, layer_evals: scores.layer_evals });
                let chosen = argmin_layer(&scores.errors);
                (scores.errors, chosen)
            }
            Selector::Random => {
                let eligible: Vec<usize> = (0..layers.len()).filter(|&c| layers[c].is_some()).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
                rng.set_stream(round as u64);
                self.passes.push(PassCount::default());
                (vec![None; layers.len()], eligible[rng.random_range(0..eligible.len())])
            }
            Selector::Uniform => unreachable!("handled above"),
        };

        let committed = layers[chosen].clone().expect("chosen layer has a candidate");
        self.current.replace_layer(chosen, committed)?;
        self.refine()?;

        self.rounds.push(PruneRound {
            round,
            errors,
            chosen: Some(chosen),
            retained: self.current.layers().iter().map(ConvLayer::out_channels).collect(),
            param_reduction: self.param_reduction(),
        });
        Ok(self.rounds.last())
    }

    /// Prunes the same fraction of filters from every layer in one round.
    fn uniform_round(&mut self) -> Result<Option<&PruneRound>> {
        if !self.rounds.is_empty() {
            self.status.get_or_insert(PruneStatus::Completed);
            return Ok(None);
        }
        let mut floor_hit = false;
        let (beta, floor, method, selection) = (self.cfg.beta, self.cfg.floor, self.cfg.fp_method, self.selection);
        let updates: Vec<Option<ConvLayer>> = self
            .current
            .layers()
            .par_iter()
            .map(|layer| {
                let n = layer.out_channels();
                let wanted = ((1.0 - beta) * n as f64).round() as usize;
                let keep = wanted.clamp(floor.min(n), n);
                if keep == n {
                    return Ok((None, wanted < keep));
                }
                let cand = build_candidate(layer, n - keep, method, selection)?;
                Ok((Some(cand.layer), wanted < keep))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .map(|(layer, clamped)| {
                floor_hit |= clamped;
                layer
            })
            .collect();
        for (c, layer) in updates.into_iter().enumerate() {
            if let Some(layer) = layer {
                self.current.replace_layer(c, layer)?;
            }
        }
        self.refine()?;
        self.passes.push(PassCount::default());
        self.status = Some(if floor_hit { PruneStatus::Partial } else { PruneStatus::Completed });
        self.rounds.push(PruneRound {
            round: 1,
            errors: vec![None; self.current.len()],
            chosen: None,
            retained: self.current.layers().iter().map(ConvLayer::out_channels).collect(),
            param_reduction: self.param_reduction(),
        });
        Ok(self.rounds.last())
    }

    pub fn run(mut self) -> Result<PruneOutcome> {
        while self.step()?.is_some() {}
        Ok(self.finish())
    }

    pub fn finish(self) -> PruneOutcome {
        PruneOutcome {
            network: self.current,
            rounds: self.rounds,
            status: self.status.unwrap_or(PruneStatus::Partial),
            original_filters: self.original_filters,
            degenerate_examples: self.degenerate,
            passes: self.passes,
        }
    }
}

/// Lowest score among layers with a candidate; ties go to the lower layer index.
fn argmin_layer(errors: &[Option<f64>]) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for (c, e) in errors.iter().enumerate() {
        if let Some(e) = *e {
            if best.is_none_or(|(_, b)| e < b) {
                best = Some((c, e));
            }
        }
    }
    best.expect("at least one eligible layer").0
}

fn run_with(net: Network, data: &Dataset, cfg: PruneConfig, selector: Selector) -> Result<PruneOutcome> {
    Pruner::new(net, data, PruneConfig { selector, ..cfg })?.run()
}

/// Layer selection by layerwise relative reconstruction error.
pub fn hbgs(net: Network, data: &Dataset, cfg: PruneConfig) -> Result<PruneOutcome> {
    run_with(net, data, cfg, Selector::Hbgs)
}

/// Layer selection by final-output error.
pub fn hbgts(net: Network, data: &Dataset, cfg: PruneConfig) -> Result<PruneOutcome> {
    run_with(net, data, cfg, Selector::Hbgts)
}

/// One-shot pruning of the fraction `beta` of filters from every layer.
pub fn uniform_baseline(net: Network, data: &Dataset, cfg: PruneConfig) -> Result<PruneOutcome> {
    run_with(net, data, cfg, Selector::Uniform)
}

/// Commits a seeded random eligible layer each round.
pub fn random_baseline(net: Network, data: &Dataset, cfg: PruneConfig) -> Result<PruneOutcome> {
    run_with(net, data, cfg, Selector::Random)
}

/// Dispatches on `cfg.selector`.
pub fn prune(net: Network, data: &Dataset, cfg: PruneConfig) -> Result<PruneOutcome> {
    Pruner::new(net, data, cfg)?.run()
}
