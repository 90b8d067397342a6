//! Derivative fitting, discretise-then-optimise and optimise-then-discretise
//! training of closure networks.

mod adjoint;
mod loss;
mod model;
mod optim;

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Dataset, Equation, Split, Trajectory};
use crate::nn::{CnnArchitecture, CnnParams};
use crate::scalar::Scalar;
use crate::solvers::{Method, SolverConfig};

pub use adjoint::{
    adjoint_backward, adjoint_backward_etd, forward_dense, forward_dense_etd, AdjointState,
};
pub use loss::{
    grad_derivative_fit, grad_disc_then_opt, grad_opt_then_disc, loss_derivative_fit,
    loss_trajectory, mse_loss, unrolled_gradient, weighted_loss, LossGrad, LossWeights,
};
pub use model::{Discretisation, Evaluation, Model};
pub use optim::{clip_gradient, Adam, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

/// Fixed step of the coarse Burgers solver, equal to the snapshot spacing `2^-7`.
pub const BURGERS_DT: f64 = 1.0 / 128.0;
/// Step of the exponential integrator for coarse Kuramoto-Sivashinsky models.
pub const KS_DT: f64 = 0.5;
/// Consecutive failed steps tolerated before training is aborted.
pub const MAX_CONSECUTIVE_FAILURES: usize = 10;

const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    DerivativeFit,
    DiscThenOpt,
    OptThenDisc,
}

impl Approach {
    pub fn name(self) -> &'static str {
        match self {
            Approach::DerivativeFit => "derivative_fit",
            Approach::DiscThenOpt => "disc_then_opt",
            Approach::OptThenDisc => "opt_then_disc",
        }
    }
}

impl std::str::FromStr for Approach {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "derivfit" | "derivative_fit" => Ok(Approach::DerivativeFit),
            "dto" | "disc_then_opt" => Ok(Approach::DiscThenOpt),
            "otd" | "opt_then_disc" => Ok(Approach::OptThenDisc),
            _ => Err(Error::Config(format!(
                "unknown approach '{s}' (derivfit, dto, otd)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub approach: Approach,
    pub discretisation: Discretisation,
    /// Unroll length in snapshot intervals (trajectory approaches).
    pub n_t: usize,
    /// Training trajectories are first cut to this many snapshots.
    pub max_snapshots: Option<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_radius: Option<f64>,
    /// Exponent `c` of the snapshot weights `e^{-2cλt}`.
    pub weight_exponent: f64,
    pub solver: SolverConfig,
    pub seed: u64,
    /// Validation every this many epochs (and after the last one).
    pub validate_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            approach: Approach::DiscThenOpt,
            discretisation: Discretisation::Fvm,
            n_t: 1,
            max_snapshots: None,
            epochs: 0,
            batch_size: 8,
            learning_rate: 1e-3,
            clip_radius: None,
            weight_exponent: 0.0,
            solver: SolverConfig::adaptive(SolverConfig::DEFAULT_TOL, SolverConfig::DEFAULT_TOL),
            seed: 0,
            validate_every: 50,
        }
    }
}

/// Names accepted by [`TrainConfig::preset`].
pub const PRESETS: &[&str] = &[
    "burgers-derivfit",
    "burgers-dto",
    "burgers-otd",
    "burgers-derivfit-desk",
    "burgers-dto-desk",
    "burgers-otd-desk",
    "ks-derivfit",
    "ks-otd-short",
    "ks-otd-long",
    "ks-otd-long-c0.5",
    "ks-otd-long-c1.0",
    "ks-otd-long-c1.5",
    "ks-otd-long-c2.0",
    "ks-dto-nt1",
    "ks-dto-nt2",
    "ks-dto-nt4",
    "ks-dto-nt8",
    "ks-dto-nt15",
    "ks-dto-nt30",
    "ks-dto-nt60",
    "ks-dto-nt90",
    "ks-dto-nt100",
    "ks-dto-nt110",
    "ks-dto-nt120",
    "ks-dto-nt1-desk",
    "ks-dto-nt30-desk",
    "ks-dto-nt120-desk",
];

impl TrainConfig {
    /// Named experiment configurations; `-desk` variants run fewer epochs.
    pub fn preset(name: &str) -> Option<Self> {
        let base = Self::default();
        let (stem, desk) = match name.strip_suffix("-desk") {
            Some(s) => (s, true),
            None => (name, false),
        };
        let burgers_fixed = SolverConfig::fixed(Method::Tsit5Fixed, BURGERS_DT);
        let adaptive = base.solver;
        let ks_etd = SolverConfig::fixed(Method::Etdrk4, KS_DT);
        let mut cfg = match stem {
            "burgers-derivfit" => Self {
                approach: Approach::DerivativeFit,
                epochs: 10_000,
                batch_size: 64,
                solver: adaptive,
                ..base
            },
            "burgers-dto" => Self {
                approach: Approach::DiscThenOpt,
                n_t: 64,
                epochs: 20_000,
                solver: burgers_fixed,
                ..base
            },
            "burgers-otd" => Self {
                approach: Approach::OptThenDisc,
                n_t: 64,
                epochs: 20_000,
                solver: adaptive,
                ..base
            },
            "ks-derivfit" => Self {
                approach: Approach::DerivativeFit,
                epochs: 1000,
                batch_size: 128,
                solver: ks_etd,
                ..base
            },
            "ks-otd-short" => Self {
                approach: Approach::OptThenDisc,
                n_t: 24,
                max_snapshots: Some(25),
                epochs: 1000,
                clip_radius: Some(1e-2),
                solver: ks_etd,
                ..base
            },
            s if s.starts_with("ks-otd-long") => {
                let c = match s.strip_prefix("ks-otd-long") {
                    Some("") => 0.0,
                    Some(rest) => rest.strip_prefix("-c")?.parse().ok()?,
                    None => return None,
                };
                if ![0.0, 0.5, 1.0, 1.5, 2.0].contains(&c) {
                    return None;
                }
                Self {
                    approach: Approach::OptThenDisc,
                    n_t: 144,
                    max_snapshots: Some(145),
                    epochs: 100,
                    clip_radius: Some(1e-2),
                    weight_exponent: c,
                    solver: ks_etd,
                    ..base
                }
            }
            s if s.starts_with("ks-dto-nt") => {
                let n_t: usize = s.strip_prefix("ks-dto-nt")?.parse().ok()?;
                if ![1, 2, 4, 8, 15, 30, 60, 90, 100, 110, 120].contains(&n_t) {
                    return None;
                }
                Self {
                    approach: Approach::DiscThenOpt,
                    discretisation: Discretisation::Spectral,
                    n_t,
                    max_snapshots: Some(121),
                    epochs: 5000,
                    solver: ks_etd,
                    ..base
                }
            }
            _ => return None,
        };
        if desk {
            cfg.epochs = match stem {
                s if s.starts_with("burgers-") => 2000,
                "ks-dto-nt1" | "ks-dto-nt30" | "ks-dto-nt120" => 500,
                _ => return None,
            };
        }
        Some(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if self.n_t == 0 {
            return Err(Error::Config("N_t must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if let Some(r) = self.clip_radius {
            if !(r > 0.0) {
                return Err(Error::Config("clip radius must be positive".into()));
            }
        }
        if !(self.weight_exponent >= 0.0 && self.weight_exponent.is_finite()) {
            return Err(Error::Config("weight exponent must be non-negative".into()));
        }
        if self.validate_every == 0 {
            return Err(Error::Config("validation interval must be positive".into()));
        }
        if self.approach == Approach::DiscThenOpt && self.solver.method.is_adaptive() {
            return Err(Error::Config(
                "discretise-then-optimise needs a fixed-step solver".into(),
            ));
        }
        Ok(())
    }
}

/// Initial network parameters for a seed.
pub fn init_params<T: Scalar>(arch: CnnArchitecture, seed: u64) -> CnnParams<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(INIT_STREAM);
    CnnParams::init(arch, &mut rng)
}

/// Cuts each trajectory into consecutive pieces of `n_t + 1` snapshots that
/// share their boundary snapshots. Trailing snapshots that do not fill a piece
/// are dropped. Each piece is paired with the index of its source.
pub fn split_trajectories<T: Scalar>(
    trajectories: &[&Trajectory<T>],
    n_t: usize,
) -> Result<Vec<(usize, Trajectory<T>)>> {
    if n_t == 0 {
        return Err(Error::Config("N_t must be at least 1".into()));
    }
    let mut out = Vec::new();
    let mut dropped = 0;
    for (src, t) in trajectories.iter().enumerate() {
        let intervals = t.n_snapshots().saturating_sub(1);
        let k = intervals / n_t;
        if k == 0 {
            return Err(Error::Config(format!(
                "N_t = {n_t} exceeds the {intervals} intervals of trajectory {src}"
            )));
        }
        dropped += intervals - k * n_t;
        for p in 0..k {
            out.push((src, t.window(p * n_t, n_t + 1)?));
        }
    }
    if dropped > 0 {
        log::warn!("N_t = {n_t} does not divide the trajectories; dropped {dropped} trailing snapshots");
    }
    Ok(out)
}

/// One row of the loss history. Epoch 0 is the untrained network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_metric: Option<f64>,
}

/// CSV with columns `epoch, train_loss, validation_metric` (empty when not computed).
pub fn write_history_csv<W: Write>(history: &[EpochRecord], mut w: W) -> Result<()> {
    writeln!(w, "epoch,train_loss,validation_metric")?;
    for r in history {
        match r.validation_metric {
            Some(m) => writeln!(w, "{},{:e},{:e}", r.epoch, r.train_loss, m)?,
            None => writeln!(w, "{},{:e},", r.epoch, r.train_loss)?,
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T = f64> {
    pub params: CnnParams<T>,
    /// Parameters at the best validation metric (the final ones without validation data).
    pub best: CnnParams<T>,
    pub best_metric: Option<f64>,
    pub history: Vec<EpochRecord>,
    pub failed_steps: usize,
}

enum Samples<'d, T> {
    Pairs(Vec<(usize, &'d [T], &'d [T])>),
    Trajectories(Vec<(usize, Trajectory<T>)>),
}

impl<T: Scalar> Samples<'_, T> {
    fn len(&self) -> usize {
        match self {
            Samples::Pairs(p) => p.len(),
            Samples::Trajectories(t) => t.len(),
        }
    }

    fn source(&self, i: usize) -> usize {
        match self {
            Samples::Pairs(p) => p[i].0,
            Samples::Trajectories(t) => t[i].0,
        }
    }
}

/// Validation score: average VPT in Lyapunov times for Kuramoto-Sivashinsky
/// (higher is better), RMSE for Burgers (lower is better).
pub fn validation_metric<T: Scalar>(
    model: &Model<T>,
    net: &CnnParams<T>,
    dataset: &Dataset<T>,
    solver: &SolverConfig,
) -> Result<Option<f64>> {
    let (ids, refs): (Vec<usize>, Vec<&Trajectory<T>>) = dataset
        .trajectories()
        .iter()
        .zip(dataset.splits())
        .enumerate()
        .filter(|(_, (_, s))| **s == Split::Validation)
        .map(|(i, (t, _))| (i, t))
        .unzip();
    if refs.is_empty() {
        return Ok(None);
    }
    let eval = model.evaluate(Some(net), &ids, &refs, solver)?;
    Ok(Some(match model.equation() {
        Equation::Burgers => eval.report.pooled_rmse,
        Equation::KuramotoSivashinsky => eval.report.vpt_summary().map_or(0.0, |s| s.avg),
    }))
}

fn better(equation: Equation, candidate: f64, best: f64) -> bool {
    match equation {
        Equation::Burgers => candidate < best,
        Equation::KuramotoSivashinsky => candidate > best,
    }
}

struct Trainer<'a, T: Scalar> {
    model: &'a Model<T>,
    cfg: &'a TrainConfig,
    samples: Samples<'a, T>,
    weights: LossWeights<T>,
}

impl<T: Scalar> Trainer<'_, T> {
    fn batch_gradient(&self, net: &CnnParams<T>, idx: &[usize]) -> Result<LossGrad<T>> {
        let res = match &self.samples {
            Samples::Pairs(p) => {
                let batch: Vec<(&[T], &[T])> = idx.iter().map(|&i| (p[i].1, p[i].2)).collect();
                grad_derivative_fit(self.model, net, &batch)
            }
            Samples::Trajectories(t) => {
                let batch: Vec<&Trajectory<T>> = idx.iter().map(|&i| &t[i].1).collect();
                match self.cfg.approach {
                    Approach::OptThenDisc => {
                        grad_opt_then_disc(self.model, net, &batch, &self.weights, &self.cfg.solver)
                    }
                    _ => grad_disc_then_opt(self.model, net, &batch, &self.weights, &self.cfg.solver),
                }
            }
        };
        res.map_err(|e| match e {
            Error::TrainingStep { trajectory, source } => Error::TrainingStep {
                trajectory: self.samples.source(idx[trajectory]),
                source,
            },
            e => e,
        })
    }
}

/// Trains `params` on the training split of `dataset`.
///
/// Every epoch shuffles the samples with a generator seeded from `cfg.seed`,
/// takes one Adam step per batch, and reports an [`EpochRecord`] through
/// `on_epoch`. A batch whose forward or backward pass fails numerically is
/// skipped; more than [`MAX_CONSECUTIVE_FAILURES`] consecutive failures abort.
/// Per-sample work runs on the current rayon pool; gradients are reduced in
/// batch order, so results do not depend on the number of workers.
pub fn train<T: Scalar>(
    model: &Model<T>,
    mut params: CnnParams<T>,
    dataset: &Dataset<T>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &CnnParams<T>),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if model.equation() != dataset.equation || Some(model.grid()) != dataset.grid() {
        return Err(Error::Config("model does not match the dataset".into()));
    }
    let train_set: Vec<&Trajectory<T>> = dataset.subset(Split::Train);
    let train_ids: Vec<usize> = (0..dataset.len())
        .filter(|&i| dataset.splits()[i] == Split::Train)
        .collect();
    if train_set.is_empty() {
        return Err(Error::Config("dataset has no training trajectories".into()));
    }
    let samples = match cfg.approach {
        Approach::DerivativeFit => {
            if !dataset.has_derivatives() {
                return Err(Error::Config(
                    "derivative fitting needs reference derivatives in the dataset".into(),
                ));
            }
            let mut pairs = Vec::new();
            for (&id, t) in train_ids.iter().zip(&train_set) {
                for i in 0..t.n_snapshots() {
                    pairs.push((id, t.snapshot(i), t.derivative(i).expect("checked above")));
                }
            }
            Samples::Pairs(pairs)
        }
        _ => {
            let cut: Vec<Trajectory<T>> = match cfg.max_snapshots {
                Some(m) => train_set
                    .iter()
                    .map(|t| t.window(0, m.min(t.n_snapshots())))
                    .collect::<Result<_>>()?,
                None => train_set.iter().map(|t| (*t).clone()).collect(),
            };
            let refs: Vec<&Trajectory<T>> = cut.iter().collect();
            let pieces = split_trajectories(&refs, cfg.n_t)?;
            Samples::Trajectories(pieces.into_iter().map(|(s, t)| (train_ids[s], t)).collect())
        }
    };
    let weights = if cfg.weight_exponent == 0.0 {
        LossWeights::uniform(cfg.n_t)
    } else {
        let (lambda, _) = model.lyapunov().ok_or_else(|| {
            Error::Config("weighted loss needs a Lyapunov exponent (Kuramoto-Sivashinsky)".into())
        })?;
        LossWeights::new(
            cfg.n_t,
            train_set[0].dt_snap,
            T::lit(cfg.weight_exponent),
            T::lit(lambda),
        )
    };
    let trainer = Trainer {
        model,
        cfg,
        samples,
        weights,
    };
    let n = trainer.samples.len();
    let lr = T::lit(cfg.learning_rate);
    let mut adam = Adam::new(params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    let mut best = params.clone();
    let mut best_metric: Option<f64> = None;
    let mut failed_steps = 0;
    let mut consecutive = 0;

    for epoch in 0..=cfg.epochs {
        let mut loss_sum = 0.0;
        let mut counted = 0usize;
        if epoch > 0 {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(cfg.batch_size) {
            let step = trainer.batch_gradient(&params, chunk).and_then(|mut lg| {
                if epoch > 0 {
                    if let Some(r) = cfg.clip_radius {
                        clip_gradient(&mut lg.grad, T::lit(r));
                    }
                    adam.update(params.theta_mut(), &lg.grad, lr)?;
                }
                Ok(lg.loss)
            });
            match step {
                Ok(loss) => {
                    loss_sum += loss.as_f64() * chunk.len() as f64;
                    counted += chunk.len();
                    consecutive = 0;
                }
                Err(e) if e.is_numerical() => {
                    log::warn!("epoch {epoch}: step failed: {e}");
                    failed_steps += 1;
                    consecutive += 1;
                    if consecutive > MAX_CONSECUTIVE_FAILURES {
                        return Err(Error::Aborted {
                            count: consecutive,
                            last: Box::new(e),
                        });
                    }
                }
                Err(e) => return Err(e),
            }
        }
        let validation_metric = if epoch % cfg.validate_every == 0 || epoch == cfg.epochs {
            let m = validation_metric(model, &params, dataset, &cfg.solver)?;
            if let Some(m) = m {
                if best_metric.is_none_or(|b| better(model.equation(), m, b)) {
                    best_metric = Some(m);
                    best = params.clone();
                }
            }
            m
        } else {
            None
        };
        let rec = EpochRecord {
            epoch,
            train_loss: if counted > 0 { loss_sum / counted as f64 } else { f64::NAN },
            validation_metric,
        };
        log::info!(
            "epoch {epoch}: loss {:.6e}{}",
            rec.train_loss,
            validation_metric.map_or(String::new(), |m| format!(", validation {m:.4}"))
        );
        on_epoch(&rec, &params);
        history.push(rec);
    }
    if best_metric.is_none() {
        best = params.clone();
    }
    Ok(TrainOutcome {
        params,
        best,
        best_metric,
        history,
        failed_steps,
    })
}

#[cfg(test)]
mod tests;
