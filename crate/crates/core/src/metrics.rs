//! Error metrics (RMSE, valid prediction time), Lyapunov quantities, and
//! brute-force checks of the one-step and continuous-time error bounds.
//!
//! Norms are unnormalised Euclidean norms throughout.

use std::borrow::Borrow;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_len, Error, Result};
use crate::grid::Trajectory;
use crate::rhs::LinearRhs;
use crate::scalar::Scalar;
use crate::solvers::{solve, SolverConfig};

/// Default VPT threshold as a fraction of the reference's average energy.
pub const VPT_THRESHOLD: f64 = 0.4;

fn check_pair<T: Scalar>(pred: &Trajectory<T>, reference: &Trajectory<T>) -> Result<()> {
    check_len("trajectory cells", reference.n_x(), pred.n_x())?;
    check_len("trajectory snapshots", reference.n_snapshots(), pred.n_snapshots())
}

/// Root-mean-square error over all cells, snapshots and trajectories, skipping
/// the initial snapshot when `skip_initial` is set.
pub fn rmse<T, P, R>(pred: &[P], reference: &[R], skip_initial: bool) -> Result<T>
where
    T: Scalar,
    P: Borrow<Trajectory<T>>,
    R: Borrow<Trajectory<T>>,
{
    check_len("trajectory count", reference.len(), pred.len())?;
    let mut sum = T::zero();
    let mut count = 0usize;
    for (p, r) in pred.iter().zip(reference) {
        let (p, r) = (p.borrow(), r.borrow());
        check_pair(p, r)?;
        let first = usize::from(skip_initial);
        for i in first..r.n_snapshots() {
            for (&a, &b) in p.snapshot(i).iter().zip(r.snapshot(i)) {
                sum += (a - b) * (a - b);
            }
            count += r.n_x();
        }
    }
    if count == 0 {
        return Err(Error::Precondition("no snapshots to compare".into()));
    }
    Ok((sum / T::of_usize(count)).sqrt())
}

/// Prediction error over time: `‖u(t_i) - u_ref(t_i)‖` at every snapshot and
/// the RMS norm `E_avg` of the reference snapshots after the initial one.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSeries<T = f64> {
    /// Elapsed times `t_i - t_0`.
    pub times: Vec<T>,
    pub errors: Vec<T>,
    pub e_avg: T,
}

impl<T: Scalar> ErrorSeries<T> {
    pub fn new(reference: &Trajectory<T>, pred: &Trajectory<T>) -> Result<Self> {
        check_pair(pred, reference)?;
        let ns = reference.n_snapshots();
        if ns < 2 {
            return Err(Error::Precondition("error series needs at least two snapshots".into()));
        }
        let energy: T = (1..ns)
            .map(|i| reference.snapshot(i).iter().map(|&x| x * x).sum::<T>())
            .sum::<T>()
            / T::of_usize(ns - 1);
        let errors = (0..ns)
            .map(|i| {
                pred.snapshot(i)
                    .iter()
                    .zip(reference.snapshot(i))
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum::<T>()
                    .sqrt()
            })
            .collect();
        Ok(Self {
            times: (0..ns).map(|i| reference.time(i) - reference.t0).collect(),
            errors,
            e_avg: energy.sqrt(),
        })
    }
}

/// Valid prediction time: the first elapsed time `t_i - t_0` (`i ≥ 1`) at which
/// `‖u(t_i) - u_ref(t_i)‖ ≥ threshold · E_avg`. Returns the horizon when the
/// threshold is never reached.
pub fn vpt<T: Scalar>(reference: &Trajectory<T>, pred: &Trajectory<T>, threshold: T) -> Result<T> {
    let s = ErrorSeries::new(reference, pred)?;
    if s.e_avg == T::zero() {
        return Err(Error::Precondition("reference trajectory has zero energy".into()));
    }
    let limit = threshold * s.e_avg;
    let hit = (1..s.errors.len()).find(|&i| s.errors[i] >= limit);
    Ok(s.times[hit.unwrap_or(s.errors.len() - 1)])
}

/// Largest Lyapunov exponent of Kuramoto-Sivashinsky on a domain of length `l`
/// (`0.093 - 0.57/L`), with the Lyapunov time `1/λ`.
pub fn lyapunov(l: f64) -> Result<(f64, f64)> {
    let lambda = 0.093 - 0.57 / l;
    if !(l > 0.0) || !(lambda > 0.0) {
        return Err(Error::Precondition(format!(
            "Lyapunov approximation needs L > {:.4}, got {l}",
            0.57 / 0.093
        )));
    }
    Ok((lambda, 1.0 / lambda))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub min: f64,
    pub avg: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let avg = values.iter().sum::<f64>() / values.len() as f64;
        // the mean can land a rounding error outside [min, max] for equal values
        Some(Self {
            min,
            avg: avg.clamp(min, max),
            max,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub trajectory_id: usize,
    pub rmse: f64,
    pub vpt_time: f64,
    pub vpt_lyapunov: f64,
}

/// Per-trajectory RMSE and VPT, plus the pooled RMSE over all trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
    pub pooled_rmse: f64,
    pub lyapunov_time: f64,
}

impl MetricsReport {
    /// Compares predictions with references, trajectory by trajectory.
    /// `ids` labels the rows (typically indices into the source dataset).
    pub fn evaluate<T, P, R>(
        ids: &[usize],
        pred: &[P],
        reference: &[R],
        lyapunov_time: f64,
    ) -> Result<Self>
    where
        T: Scalar,
        P: Borrow<Trajectory<T>>,
        R: Borrow<Trajectory<T>>,
    {
        check_len("trajectory ids", reference.len(), ids.len())?;
        check_len("trajectory count", reference.len(), pred.len())?;
        let thr = T::lit(VPT_THRESHOLD);
        let mut rows = Vec::with_capacity(ids.len());
        for ((&id, p), r) in ids.iter().zip(pred).zip(reference) {
            let (p, r) = (p.borrow(), r.borrow());
            let e = rmse(std::slice::from_ref(p), std::slice::from_ref(r), true)?.as_f64();
            let v = vpt(r, p, thr)?.as_f64();
            rows.push(MetricsRow {
                trajectory_id: id,
                rmse: e,
                vpt_time: v,
                vpt_lyapunov: v / lyapunov_time,
            });
        }
        Ok(Self {
            rows,
            pooled_rmse: rmse(pred, reference, true)?.as_f64(),
            lyapunov_time,
        })
    }

    pub fn rmse_summary(&self) -> Option<Summary> {
        Summary::of(&self.rows.iter().map(|r| r.rmse).collect::<Vec<_>>())
    }

    pub fn vpt_summary(&self) -> Option<Summary> {
        Summary::of(&self.rows.iter().map(|r| r.vpt_lyapunov).collect::<Vec<_>>())
    }

    /// CSV with columns `trajectory_id, rmse, vpt_time, vpt_lyapunov`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "trajectory_id,rmse,vpt_time,vpt_lyapunov")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{:e},{:e},{:e}",
                r.trajectory_id, r.rmse, r.vpt_time, r.vpt_lyapunov
            )?;
        }
        Ok(())
    }
}

/// Observed errors against a theoretical envelope, per step or time point.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundCheck {
    pub epsilon: f64,
    pub lipschitz: f64,
    pub observed: Vec<f64>,
    pub envelope: Vec<f64>,
    /// Indices where the observed error exceeds the envelope (beyond roundoff slack).
    pub violations: Vec<usize>,
}

impl BoundCheck {
    fn build(epsilon: f64, lipschitz: f64, observed: Vec<f64>, envelope: Vec<f64>, abs_slack: f64) -> Self {
        let violations = observed
            .iter()
            .zip(&envelope)
            .enumerate()
            .filter(|(_, (&o, &e))| !(o <= e * (1.0 + 1e-12) + abs_slack))
            .map(|(i, _)| i)
            .collect();
        Self {
            epsilon,
            lipschitz,
            observed,
            envelope,
            violations,
        }
    }

    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }

    /// Largest `observed / envelope` over points with a positive envelope.
    pub fn max_ratio(&self) -> f64 {
        self.observed
            .iter()
            .zip(&self.envelope)
            .filter(|(_, &e)| e > 0.0)
            .map(|(&o, &e)| o / e)
            .fold(0.0, f64::max)
    }
}

/// `ε (C^k - 1)/(C - 1)`, or `ε k` when `C = 1`.
pub fn discrete_envelope(epsilon: f64, c: f64, k: usize) -> f64 {
    if c == 1.0 {
        epsilon * k as f64
    } else {
        epsilon * (c.powi(k as i32) - 1.0) / (c - 1.0)
    }
}

/// `(ε/C)(e^{Ct} - 1)`.
pub fn continuous_envelope(epsilon: f64, c: f64, t: f64) -> f64 {
    epsilon / c * (c * t).exp_m1()
}

/// Iterates `u_{k+1} = G(u_k)` from `u_ref[0]` and compares with `u_ref` over
/// `steps` steps against the discrete envelope.
pub fn check_discrete_bound<G>(g: G, u_ref: &[Vec<f64>], epsilon: f64, c: f64, steps: usize) -> Result<BoundCheck>
where
    G: Fn(&[f64]) -> Vec<f64>,
{
    if u_ref.len() < steps + 1 {
        return Err(Error::Precondition(format!(
            "reference has {} states, {} needed",
            u_ref.len(),
            steps + 1
        )));
    }
    let mut u = u_ref[0].clone();
    let mut observed = vec![0.0];
    let mut envelope = vec![0.0];
    for k in 1..=steps {
        u = g(&u);
        observed.push(dist(&u, &u_ref[k]));
        envelope.push(discrete_envelope(epsilon, c, k));
    }
    Ok(BoundCheck::build(epsilon, c, observed, envelope, 1e-14))
}

/// Solves `u' = g(u)` from `u_ref(0)` and compares with `u_ref` at `times`
/// against the continuous envelope. `slack` absorbs the solver's own error.
pub fn check_continuous_bound<F>(
    g: &LinearRhs<f64>,
    u_ref: F,
    epsilon: f64,
    c: f64,
    times: &[f64],
    cfg: &SolverConfig,
    slack: f64,
) -> Result<BoundCheck>
where
    F: Fn(f64) -> Vec<f64>,
{
    let t0 = *times
        .first()
        .ok_or_else(|| Error::Precondition("no comparison times".into()))?;
    let rec = solve(g, &u_ref(t0), t0, times, cfg)?;
    let observed = rec
        .states
        .iter()
        .zip(times)
        .map(|(u, &t)| dist(u, &u_ref(t)))
        .collect();
    let envelope = times.iter().map(|&t| continuous_envelope(epsilon, c, t - t0)).collect();
    Ok(BoundCheck::build(epsilon, c, observed, envelope, slack))
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(rng))
}

fn unit_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    loop {
        let v = DVector::<f64>::from_fn(n, |_, _| StandardNormal.sample(rng));
        let norm = v.norm();
        if norm > 1e-8 {
            return v / norm;
        }
    }
}

/// `Q1 diag(s) Q2` with random orthogonal factors and singular values in `[0, c]`, the largest exactly `c`.
fn matrix_with_norm(rng: &mut ChaCha8Rng, n: usize, c: f64) -> DMatrix<f64> {
    let q1 = gaussian_matrix(rng, n).qr().q();
    let q2 = gaussian_matrix(rng, n).qr().q();
    let mut s = DVector::from_fn(n, |_, _| rng.random_range(0.0..c));
    s[0] = c;
    q1 * DMatrix::from_diagonal(&s) * q2
}

/// An affine one-step map with analytic Lipschitz constant and a reference
/// sequence that it reproduces to within `epsilon` per step.
#[derive(Debug, Clone)]
pub struct DiscreteFixture {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub lipschitz: f64,
    pub epsilon: f64,
    pub u_ref: Vec<Vec<f64>>,
}

impl DiscreteFixture {
    /// `rotation` gives an orthogonal `A` (`C = 1`).
    pub fn random(rng: &mut ChaCha8Rng, dim: usize, steps: usize, rotation: bool) -> Self {
        let c = if rotation { 1.0 } else { rng.random_range(0.5..1.5) };
        let a = if rotation {
            gaussian_matrix(rng, dim).qr().q()
        } else {
            matrix_with_norm(rng, dim, c)
        };
        let b = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
        let epsilon = 10f64.powf(rng.random_range(-3.0..-1.0));
        let mut u = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
        let mut u_ref = vec![u.as_slice().to_vec()];
        for _ in 0..steps {
            let delta = unit_vector(rng, dim) * (epsilon * rng.random_range(0.0..=1.0));
            u = &a * &u + &b + delta;
            u_ref.push(u.as_slice().to_vec());
        }
        Self {
            a,
            b,
            lipschitz: c,
            epsilon,
            u_ref,
        }
    }

    pub fn map(&self, u: &[f64]) -> Vec<f64> {
        let v = &self.a * DVector::from_column_slice(u) + &self.b;
        v.as_slice().to_vec()
    }

    pub fn check(&self) -> Result<BoundCheck> {
        check_discrete_bound(|u| self.map(u), &self.u_ref, self.epsilon, self.lipschitz, self.u_ref.len() - 1)
    }
}

/// Linear dynamics `u' = J u` with `‖J‖ = C`, and a reference path solving
/// `u_ref' = J u_ref + ε v` exactly (`‖v‖ = 1`).
#[derive(Debug, Clone)]
pub struct ContinuousFixture {
    pub j: DMatrix<f64>,
    pub v: DVector<f64>,
    pub u0: DVector<f64>,
    pub lipschitz: f64,
    pub epsilon: f64,
}

impl ContinuousFixture {
    pub fn random(rng: &mut ChaCha8Rng, dim: usize) -> Self {
        let c = rng.random_range(0.2..2.0);
        Self {
            j: matrix_with_norm(rng, dim, c),
            v: unit_vector(rng, dim),
            u0: DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0)),
            lipschitz: c,
            epsilon: 10f64.powf(rng.random_range(-3.0..-1.0)),
        }
    }

    /// Closed form via the exponential of the augmented matrix `[[J, εv], [0, 0]]`.
    pub fn reference(&self, t: f64) -> Vec<f64> {
        let n = self.u0.len();
        let mut m = DMatrix::zeros(n + 1, n + 1);
        m.view_mut((0, 0), (n, n)).copy_from(&(&self.j * t));
        m.view_mut((0, n), (n, 1)).copy_from(&(&self.v * (self.epsilon * t)));
        let mut x = DVector::zeros(n + 1);
        x.rows_mut(0, n).copy_from(&self.u0);
        x[n] = 1.0;
        let y = m.exp() * x;
        y.rows(0, n).iter().copied().collect()
    }

    pub fn rhs(&self) -> LinearRhs<f64> {
        let n = self.u0.len();
        let rows: Vec<f64> = (0..n).flat_map(|i| (0..n).map(move |k| (i, k))).map(|(i, k)| self.j[(i, k)]).collect();
        LinearRhs::new(n, rows).expect("square matrix")
    }

    pub fn check(&self, t_end: f64, points: usize) -> Result<BoundCheck> {
        let times: Vec<f64> = (0..=points).map(|i| t_end * i as f64 / points as f64).collect();
        let cfg = SolverConfig::adaptive(CONTINUOUS_TOL, CONTINUOUS_TOL);
        check_continuous_bound(&self.rhs(), |t| self.reference(t), self.epsilon, self.lipschitz, &times, &cfg, CONTINUOUS_SLACK)
    }
}

/// Solver tolerance for the continuous-bound fixtures.
pub const CONTINUOUS_TOL: f64 = 1e-12;
/// Absolute slack granted to the continuous check for the solver's own error.
pub const CONTINUOUS_SLACK: f64 = 1e-8;

/// Outcome of a fixture suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub instances: usize,
    pub violations: Vec<(usize, String)>,
    pub max_ratio: f64,
}

/// Fixtures for the one-step bound: `instances` affine maps (every fifth a
/// rotation, exercising the `C = 1` branch), `steps` steps each.
pub fn discrete_suite(seed: u64, instances: usize, steps: usize) -> Result<SuiteReport> {
    let mut report = SuiteReport {
        name: "discrete",
        instances,
        violations: Vec::new(),
        max_ratio: 0.0,
    };
    for i in 0..instances {
        let mut rng = fixture_rng(seed, i as u64);
        let dim = rng.random_range(2..=4);
        let f = DiscreteFixture::random(&mut rng, dim, steps, i % 5 == 4);
        let chk = f.check()?;
        report.max_ratio = report.max_ratio.max(chk.max_ratio());
        if !chk.holds() {
            report.violations.push((i, format!("{f:?}\n{chk:?}")));
        }
    }
    Ok(report)
}

/// Fixtures for the continuous bound: `instances` linear 2×2 systems over `t ∈ [0, 2]`.
pub fn continuous_suite(seed: u64, instances: usize) -> Result<SuiteReport> {
    let mut report = SuiteReport {
        name: "continuous",
        instances,
        violations: Vec::new(),
        max_ratio: 0.0,
    };
    for i in 0..instances {
        let mut rng = fixture_rng(seed, i as u64);
        let f = ContinuousFixture::random(&mut rng, 2);
        let chk = f.check(2.0, 20)?;
        report.max_ratio = report.max_ratio.max(chk.max_ratio());
        if !chk.holds() {
            report.violations.push((i, format!("{f:?}\n{chk:?}")));
        }
    }
    Ok(report)
}

fn fixture_rng(seed: u64, index: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
