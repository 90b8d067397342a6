//! Loss functions and their gradients with respect to the network parameters.

use rayon::prelude::*;

use crate::error::{check_len, Error, Result};
use crate::grid::Trajectory;
use crate::nn::CnnParams;
use crate::rhs::Rhs;
use crate::scalar::{all_finite, Scalar};
use crate::solvers::{steps_for, unroll_fixed, EtdStepper, Method, RkStepper, SolverConfig, Stepper};

use super::adjoint::{adjoint_backward, adjoint_backward_etd, forward_dense, forward_dense_etd};
use super::model::Model;

/// Snapshot weights `w_i = e^{-2cλt_i}` (`i = 1..=N_t`, `t_i = iΔt`) and their sum `Z`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights<T = f64> {
    weights: Vec<T>,
    z: T,
}

impl<T: Scalar> LossWeights<T> {
    pub fn new(n_t: usize, dt_snap: T, c: T, lambda_max: T) -> Self {
        let k = T::lit(-2.0) * c * lambda_max;
        let weights: Vec<T> = (1..=n_t).map(|i| (k * T::of_usize(i) * dt_snap).exp()).collect();
        Self::from_weights(weights)
    }

    /// All weights one, so `Z = N_t` and the loss is a plain mean-square error.
    pub fn uniform(n_t: usize) -> Self {
        Self::from_weights(vec![T::one(); n_t])
    }

    fn from_weights(weights: Vec<T>) -> Self {
        let z = weights.iter().copied().sum();
        Self { weights, z }
    }

    pub fn n_t(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn z(&self) -> T {
        self.z
    }
}

/// A batch loss and its parameter gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad<T = f64> {
    pub loss: T,
    pub grad: Vec<T>,
}

fn check_batch<T: Scalar>(batch: &[&Trajectory<T>], n_t: usize) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Precondition("empty batch".into()));
    }
    if n_t == 0 {
        return Err(Error::Config("N_t must be at least 1".into()));
    }
    for t in batch {
        if t.n_snapshots() < n_t + 1 {
            return Err(Error::Precondition(format!(
                "trajectory has {} snapshots, N_t = {n_t} needs {}",
                t.n_snapshots(),
                n_t + 1
            )));
        }
    }
    Ok(())
}

/// `Σ_i w_i ‖pred_i - ref_i‖²` for one trajectory, and the cotangents
/// `2 w_i scale (pred_i - ref_i)` of every snapshot (zero for the initial one).
fn residual<T: Scalar>(
    pred: &[Vec<T>],
    reference: &Trajectory<T>,
    weights: &LossWeights<T>,
    scale: T,
) -> (T, Vec<Vec<T>>) {
    let n_x = reference.n_x();
    let mut sum = T::zero();
    let mut bars = Vec::with_capacity(weights.n_t() + 1);
    bars.push(vec![T::zero(); n_x]);
    for (i, &w) in (1..).zip(weights.weights()) {
        let e: Vec<T> = pred[i].iter().zip(reference.snapshot(i)).map(|(&a, &b)| a - b).collect();
        let sq: T = e.iter().map(|&x| x * x).sum();
        sum += w * sq;
        let f = T::lit(2.0) * w * scale;
        bars.push(e.iter().map(|&x| f * x).collect());
    }
    (sum, bars)
}

fn normaliser<T: Scalar>(n_x: usize, n_p: usize, z: T) -> T {
    T::of_usize(n_x) * T::of_usize(n_p) * z
}

/// `(1/(N_x N_p N_t)) Σ_j Σ_{i=1..N_t} ‖pred_i^{(j)} - ref_i^{(j)}‖²`, where
/// `preds[j]` holds at least `N_t + 1` states starting at the initial one.
pub fn mse_loss<T: Scalar>(preds: &[Vec<Vec<T>>], refs: &[&Trajectory<T>], n_t: usize) -> Result<T> {
    check_len("predictions", refs.len(), preds.len())?;
    check_batch(refs, n_t)?;
    let mut total = T::zero();
    for (p, r) in preds.iter().zip(refs) {
        check_len("predicted snapshots", n_t + 1, p.len().min(n_t + 1))?;
        let mut sum = T::zero();
        for i in 1..=n_t {
            sum += p[i]
                .iter()
                .zip(r.snapshot(i))
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum::<T>();
        }
        total += sum;
    }
    Ok(total / normaliser(refs[0].n_x(), refs.len(), T::of_usize(n_t)))
}

/// `(1/(N_x N_p Z)) Σ_j Σ_i w_i ‖pred_i^{(j)} - ref_i^{(j)}‖²`.
pub fn weighted_loss<T: Scalar>(
    preds: &[Vec<Vec<T>>],
    refs: &[&Trajectory<T>],
    weights: &LossWeights<T>,
) -> Result<T> {
    check_len("predictions", refs.len(), preds.len())?;
    check_batch(refs, weights.n_t())?;
    let mut total = T::zero();
    for (p, r) in preds.iter().zip(refs) {
        check_len("predicted snapshots", weights.n_t() + 1, p.len().min(weights.n_t() + 1))?;
        total += residual(p, r, weights, T::zero()).0;
    }
    Ok(total / normaliser(refs[0].n_x(), refs.len(), weights.z()))
}

/// Solves the model over the first `N_t` intervals of every trajectory and
/// returns the weighted loss with the predictions.
pub fn loss_trajectory<T: Scalar>(
    model: &Model<T>,
    net: &CnnParams<T>,
    batch: &[&Trajectory<T>],
    weights: &LossWeights<T>,
    solver: &SolverConfig,
) -> Result<(T, Vec<Vec<Vec<T>>>)> {
    check_batch(batch, weights.n_t())?;
    let preds = batch
        .par_iter()
        .enumerate()
        .map(|(j, r)| {
            let times = &r.times()[..=weights.n_t()];
            model.predict(Some(net), r.snapshot(0), times, solver).map_err(|e| step_error(j, e))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((weighted_loss(&preds, batch, weights)?, preds))
}

fn step_error(j: usize, e: Error) -> Error {
    Error::TrainingStep {
        trajectory: j,
        source: Box::new(e),
    }
}

/// Sums per-sample `(loss contribution, gradient)` pairs in batch order.
fn reduce<T: Scalar>(parts: Vec<(T, Vec<T>)>, n_params: usize, norm: T) -> Result<LossGrad<T>> {
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); n_params];
    for (s, g) in parts {
        loss += s;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    if !all_finite(&grad) || !loss.is_finite() {
        return Err(Error::NonFiniteGradient);
    }
    Ok(LossGrad {
        loss: loss / norm,
        grad,
    })
}

/// Derivative fitting: `(1/(N_x N)) Σ ‖du_ref/dt - g(u_ref)‖²` over the given
/// `(state, derivative)` pairs, with its gradient from the right-hand side's VJP.
pub fn loss_derivative_fit<T: Scalar, R: Rhs<T> + ?Sized>(
    rhs: &R,
    samples: &[(&[T], &[T])],
) -> Result<LossGrad<T>> {
    if samples.is_empty() {
        return Err(Error::Precondition("empty batch".into()));
    }
    let n_x = rhs.dim();
    for (u, du) in samples {
        check_len("derivative-fit state", n_x, u.len())?;
        check_len("derivative-fit derivative", n_x, du.len())?;
    }
    let norm = T::of_usize(n_x) * T::of_usize(samples.len());
    let scale = T::lit(2.0) / norm;
    let parts = samples
        .par_iter()
        .map(|(u, du)| {
            let mut g = vec![T::zero(); n_x];
            rhs.eval_into(u, &mut g);
            let e: Vec<T> = g.iter().zip(*du).map(|(&a, &b)| a - b).collect();
            let sq: T = e.iter().map(|&x| x * x).sum();
            let w: Vec<T> = e.iter().map(|&x| scale * x).collect();
            let mut gu = vec![T::zero(); n_x];
            let mut gt = vec![T::zero(); rhs.n_params()];
            rhs.vjp_into(u, &w, &mut gu, &mut gt);
            (sq, gt)
        })
        .collect();
    reduce(parts, rhs.n_params(), norm)
}

/// Discretise-then-optimise gradient for any fixed-step stepper: unrolls every
/// trajectory over `N_t` snapshot intervals and backpropagates through the tape.
pub fn unrolled_gradient<T: Scalar, S: Stepper<T> + ?Sized>(
    stepper: &S,
    batch: &[&Trajectory<T>],
    weights: &LossWeights<T>,
) -> Result<LossGrad<T>> {
    let n_t = weights.n_t();
    check_batch(batch, n_t)?;
    let sps = steps_for(batch[0].dt_snap.as_f64(), stepper.dt().as_f64())?;
    let norm = normaliser(batch[0].n_x(), batch.len(), weights.z());
    let scale = T::one() / norm;
    let parts = batch
        .par_iter()
        .enumerate()
        .map(|(j, r)| {
            let (snaps, tape) = unroll_fixed(stepper, r.snapshot(0), n_t, sps).map_err(|e| step_error(j, e))?;
            let (s, bars) = residual(&snaps, r, weights, scale);
            let mut g = vec![T::zero(); stepper.n_params()];
            tape.backward(stepper, &bars, &mut g)?;
            Ok((s, g))
        })
        .collect::<Result<Vec<_>>>()?;
    reduce(parts, stepper.n_params(), norm)
}

/// Discretise-then-optimise gradient of the weighted trajectory loss.
pub fn grad_disc_then_opt<T: Scalar>(
    model: &Model<T>,
    net: &CnnParams<T>,
    batch: &[&Trajectory<T>],
    weights: &LossWeights<T>,
    solver: &SolverConfig,
) -> Result<LossGrad<T>> {
    solver.validate()?;
    let dt = T::lit(solver.dt);
    match solver.method {
        Method::Tsit5Adaptive => Err(Error::Config(
            "discretise-then-optimise needs a fixed-step solver".into(),
        )),
        Method::Etdrk4 => {
            let problem = model.semilinear(Some(net))?;
            unrolled_gradient(&EtdStepper::new(&problem, dt)?, batch, weights)
        }
        m => {
            let rhs = model.rhs(Some(net));
            let tab = m.tableau().expect("explicit method");
            unrolled_gradient(&RkStepper::new(&rhs, tab, dt), batch, weights)
        }
    }
}

/// Optimise-then-discretise gradient: forward solve with a dense record, then
/// the continuous adjoint solved backwards with the same solver settings.
pub fn grad_opt_then_disc<T: Scalar>(
    model: &Model<T>,
    net: &CnnParams<T>,
    batch: &[&Trajectory<T>],
    weights: &LossWeights<T>,
    solver: &SolverConfig,
) -> Result<LossGrad<T>> {
    solver.validate()?;
    let n_t = weights.n_t();
    check_batch(batch, n_t)?;
    let norm = normaliser(batch[0].n_x(), batch.len(), weights.z());
    let scale = T::one() / norm;
    let etd = solver.method == Method::Etdrk4;
    let problem = if etd { Some(model.semilinear(Some(net))?) } else { None };
    let rhs = model.rhs(Some(net));
    let parts = batch
        .par_iter()
        .enumerate()
        .map(|(j, r)| {
            let times = &r.times()[..=n_t];
            let u0 = r.snapshot(0);
            let rec = match &problem {
                Some(p) => forward_dense_etd(p, u0, times, T::lit(solver.dt)),
                None => forward_dense(&rhs, u0, times, solver),
            }
            .map_err(|e| step_error(j, e))?;
            let (s, bars) = residual(&rec.states, r, weights, scale);
            let adj = match &problem {
                Some(p) => adjoint_backward_etd(p, &rec, &bars, T::lit(solver.dt)),
                None => adjoint_backward(&rhs, &rec, &bars, solver),
            }
            .map_err(|e| step_error(j, e))?;
            Ok((s, adj.z))
        })
        .collect::<Result<Vec<_>>>()?;
    reduce(parts, net.len(), norm)
}

/// Derivative-fit gradient of the model on `(state, derivative)` pairs.
pub fn grad_derivative_fit<T: Scalar>(
    model: &Model<T>,
    net: &CnnParams<T>,
    samples: &[(&[T], &[T])],
) -> Result<LossGrad<T>> {
    loss_derivative_fit(&model.rhs(Some(net)), samples)
}
