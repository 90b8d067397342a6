//! Time integrators: classical RK4, the Tsitouras 5(4) pair (fixed step and
//! adaptive), ETDRK4 for problems with a stiff circulant linear part, and a
//! differentiable fixed-step unroll.

mod etd;
pub mod tableau;
mod unroll;

pub use etd::{etdrk4_solve, EtdCore, Semilinear};
pub use tableau::{Tableau, RK4, TSIT5};
pub use unroll::{advance, unroll_fixed, EtdStepper, RkStepper, Stepper, Tape};

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::rhs::Rhs;
use crate::scalar::{all_finite, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rk4,
    Tsit5Fixed,
    Tsit5Adaptive,
    Etdrk4,
}

impl Method {
    pub fn is_adaptive(self) -> bool {
        self == Method::Tsit5Adaptive
    }

    /// The explicit tableau, if this is a Runge-Kutta method.
    pub fn tableau(self) -> Option<&'static Tableau> {
        match self {
            Method::Rk4 => Some(&RK4),
            Method::Tsit5Fixed | Method::Tsit5Adaptive => Some(&TSIT5),
            Method::Etdrk4 => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Rk4 => "rk4",
            Method::Tsit5Fixed => "tsit5_fixed",
            Method::Tsit5Adaptive => "tsit5_adaptive",
            Method::Etdrk4 => "etdrk4",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rk4" => Ok(Method::Rk4),
            "tsit5_fixed" | "tsit5" => Ok(Method::Tsit5Fixed),
            "tsit5_adaptive" => Ok(Method::Tsit5Adaptive),
            "etdrk4" => Ok(Method::Etdrk4),
            other => Err(Error::Config(format!("unknown solver method '{other}'"))),
        }
    }
}

/// Integrator settings. For adaptive solves `dt` is the initial step guess
/// (non-positive means "choose automatically").
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: Method,
    pub dt: f64,
    pub abstol: f64,
    pub reltol: f64,
    pub max_steps: usize,
}

impl SolverConfig {
    pub const DEFAULT_TOL: f64 = 1e-6;
    pub const DEFAULT_MAX_STEPS: usize = 1_000_000;

    pub fn fixed(method: Method, dt: f64) -> Self {
        Self {
            method,
            dt,
            abstol: Self::DEFAULT_TOL,
            reltol: Self::DEFAULT_TOL,
            max_steps: Self::DEFAULT_MAX_STEPS,
        }
    }

    pub fn adaptive(abstol: f64, reltol: f64) -> Self {
        Self {
            method: Method::Tsit5Adaptive,
            dt: 0.0,
            abstol,
            reltol,
            max_steps: Self::DEFAULT_MAX_STEPS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.method.is_adaptive() {
            if !(self.abstol > 0.0 && self.reltol > 0.0) {
                return Err(Error::Config("adaptive tolerances must be positive".into()));
            }
        } else if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("fixed step must be positive, got {}", self.dt)));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        Ok(())
    }

    /// Number of fixed steps covering `interval`; errors unless `dt` divides it.
    pub fn steps_for(&self, interval: f64) -> Result<usize> {
        steps_for(interval, self.dt)
    }
}

pub(crate) fn steps_for(interval: f64, dt: f64) -> Result<usize> {
    let ratio = interval / dt;
    let k = ratio.round();
    if k < 1.0 || (ratio - k).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::Config(format!(
            "step {dt} does not divide the interval {interval}"
        )));
    }
    Ok(k as usize)
}

/// A possibly time-dependent first-order system `x' = F(t, x)`.
pub trait OdeSystem<T: Scalar>: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, t: T, x: &[T], out: &mut [T]);
}

/// Adapts an autonomous [`Rhs`] to [`OdeSystem`].
#[derive(Debug, Clone, Copy)]
pub struct Autonomous<R>(pub R);

impl<T: Scalar, R: Rhs<T>> OdeSystem<T> for Autonomous<R> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn eval(&self, _t: T, x: &[T], out: &mut [T]) {
        self.0.eval_into(x, out)
    }
}

/// Accepted step end points with their time derivatives, for cubic Hermite interpolation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DenseRecord<T = f64> {
    pub t: Vec<T>,
    pub u: Vec<Vec<T>>,
    pub du: Vec<Vec<T>>,
}

impl<T: Scalar> DenseRecord<T> {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub(crate) fn push(&mut self, t: T, u: &[T], du: &[T]) {
        self.t.push(t);
        self.u.push(u.to_vec());
        self.du.push(du.to_vec());
    }

    /// Cubic Hermite interpolant at `t` (clamped to the recorded range).
    pub fn interpolate(&self, t: T, out: &mut [T]) {
        let m = self.t.len();
        assert!(m > 0, "empty dense record");
        if m == 1 || t <= self.t[0] {
            out.copy_from_slice(&self.u[0]);
            return;
        }
        if t >= self.t[m - 1] {
            out.copy_from_slice(&self.u[m - 1]);
            return;
        }
        // last index with t_i <= t
        let i = self.t.partition_point(|&ti| ti <= t) - 1;
        let (ta, tb) = (self.t[i], self.t[i + 1]);
        let h = tb - ta;
        let s = (t - ta) / h;
        let (s2, s3) = (s * s, s * s * s);
        let two = T::lit(2.0);
        let three = T::lit(3.0);
        let h00 = two * s3 - three * s2 + T::one();
        let h10 = (s3 - two * s2 + s) * h;
        let h01 = -two * s3 + three * s2;
        let h11 = (s3 - s2) * h;
        let (ua, ub, da, db) = (&self.u[i], &self.u[i + 1], &self.du[i], &self.du[i + 1]);
        for j in 0..out.len() {
            out[j] = h00 * ua[j] + h10 * da[j] + h01 * ub[j] + h11 * db[j];
        }
    }
}

/// Output of a solve: the states at the requested save times, plus the dense
/// record when asked for.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveRecord<T = f64> {
    pub times: Vec<T>,
    pub states: Vec<Vec<T>>,
    pub dense: Option<DenseRecord<T>>,
    pub accepted: usize,
    pub rejected: usize,
    /// Step size the controller would try next (the fixed step for fixed methods).
    pub next_dt: T,
}

pub(crate) fn check_save_times<T: Scalar>(t0: T, save_times: &[T]) -> Result<()> {
    if save_times.is_empty() {
        return Err(Error::Precondition("no save times".into()));
    }
    if save_times[0] != t0 {
        return Err(Error::Precondition("save times must start at t0".into()));
    }
    if save_times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Precondition("save times must be strictly increasing".into()));
    }
    Ok(())
}

/// One explicit Runge-Kutta step of size `h` from `(t, x)`, given `k[0] = F(t, x)`.
/// Fills `k[1..stages]` and writes the new state to `x_new`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn rk_stages<T: Scalar, S: OdeSystem<T> + ?Sized>(
    sys: &S,
    tab: &Tableau,
    stages: usize,
    t: T,
    x: &[T],
    h: T,
    k: &mut [Vec<T>],
    tmp: &mut [T],
    x_new: &mut [T],
) {
    for s in 1..stages {
        tmp.copy_from_slice(x);
        for (l, &a) in tab.a[s].iter().enumerate() {
            if a != 0.0 {
                let ha = h * T::lit(a);
                for (y, &kv) in tmp.iter_mut().zip(&k[l]) {
                    *y += ha * kv;
                }
            }
        }
        sys.eval(t + h * T::lit(tab.c[s]), tmp, &mut k[s]);
    }
    x_new.copy_from_slice(x);
    for (s, &b) in tab.b.iter().enumerate().take(stages) {
        if b != 0.0 {
            let hb = h * T::lit(b);
            for (y, &kv) in x_new.iter_mut().zip(&k[s]) {
                *y += hb * kv;
            }
        }
    }
}

/// Integrates `sys` from `x0` at `save_times[0]`, returning the states at every save time.
pub fn integrate<T: Scalar, S: OdeSystem<T> + ?Sized>(
    sys: &S,
    x0: &[T],
    save_times: &[T],
    cfg: &SolverConfig,
    dense: bool,
) -> Result<SolveRecord<T>> {
    cfg.validate()?;
    check_len("initial state", sys.dim(), x0.len())?;
    let t0 = *save_times
        .first()
        .ok_or_else(|| Error::Precondition("no save times".into()))?;
    check_save_times(t0, save_times)?;
    let tab = cfg.method.tableau().ok_or_else(|| {
        Error::Config("ETDRK4 needs a semilinear problem; use etdrk4_solve".into())
    })?;
    if cfg.method.is_adaptive() {
        integrate_adaptive(sys, tab, x0, save_times, cfg, dense)
    } else {
        integrate_fixed(sys, tab, x0, save_times, cfg, dense)
    }
}

fn integrate_fixed<T: Scalar, S: OdeSystem<T> + ?Sized>(
    sys: &S,
    tab: &Tableau,
    x0: &[T],
    save_times: &[T],
    cfg: &SolverConfig,
    dense: bool,
) -> Result<SolveRecord<T>> {
    let n = x0.len();
    let stages = tab.propagation_stages();
    let mut k = vec![vec![T::zero(); n]; stages];
    let mut tmp = vec![T::zero(); n];
    let mut x = x0.to_vec();
    let mut x_new = vec![T::zero(); n];
    let mut rec = SolveRecord {
        times: save_times.to_vec(),
        states: vec![x.clone()],
        dense: dense.then(DenseRecord::default),
        accepted: 0,
        rejected: 0,
        next_dt: T::lit(cfg.dt),
    };
    let mut t = save_times[0];
    for w in save_times.windows(2) {
        let span = (w[1] - w[0]).as_f64();
        let m = cfg.steps_for(span)?;
        let h = (w[1] - w[0]) / T::of_usize(m);
        for j in 0..m {
            if rec.accepted >= cfg.max_steps {
                return Err(Error::Divergence {
                    max_steps: cfg.max_steps,
                    t: t.as_f64(),
                });
            }
            sys.eval(t, &x, &mut k[0]);
            if let Some(d) = rec.dense.as_mut() {
                d.push(t, &x, &k[0]);
            }
            rk_stages(sys, tab, stages, t, &x, h, &mut k, &mut tmp, &mut x_new);
            std::mem::swap(&mut x, &mut x_new);
            // land exactly on the save time
            t = if j + 1 == m { w[1] } else { w[0] + h * T::of_usize(j + 1) };
            rec.accepted += 1;
            if !all_finite(&x) {
                return Err(Error::BlowUp { t: t.as_f64() });
            }
        }
        rec.states.push(x.clone());
    }
    if let Some(d) = rec.dense.as_mut() {
        sys.eval(t, &x, &mut k[0]);
        d.push(t, &x, &k[0]);
    }
    Ok(rec)
}

/// Root-mean-square of `e_i / (abstol + reltol max(|a_i|, |b_i|))`.
fn scaled_norm<T: Scalar>(e: &[T], a: &[T], b: &[T], abstol: T, reltol: T) -> T {
    let s: T = e
        .iter()
        .zip(a.iter().zip(b))
        .map(|(&ei, (&ai, &bi))| {
            let sc = abstol + reltol * ai.abs().max(bi.abs());
            let r = ei / sc;
            r * r
        })
        .sum();
    (s / T::of_usize(e.len().max(1))).sqrt()
}

fn integrate_adaptive<T: Scalar, S: OdeSystem<T> + ?Sized>(
    sys: &S,
    tab: &Tableau,
    x0: &[T],
    save_times: &[T],
    cfg: &SolverConfig,
    dense: bool,
) -> Result<SolveRecord<T>> {
    let n = x0.len();
    let stages = tab.stages();
    let btilde = tab.btilde.expect("adaptive tableau has an error estimate");
    let (abstol, reltol) = (T::lit(cfg.abstol), T::lit(cfg.reltol));
    let safety = T::lit(0.9);
    let (min_factor, max_factor) = (T::lit(0.2), T::lit(5.0));
    let inv_order = T::lit(1.0 / f64::from(tab.order));

    let mut k = vec![vec![T::zero(); n]; stages];
    let mut tmp = vec![T::zero(); n];
    let mut err = vec![T::zero(); n];
    let mut x = x0.to_vec();
    let mut x_new = vec![T::zero(); n];
    let mut t = save_times[0];
    let t_end = *save_times.last().expect("non-empty save times");
    sys.eval(t, &x, &mut k[0]);

    let mut h = if cfg.dt > 0.0 {
        T::lit(cfg.dt)
    } else {
        let zero = vec![T::zero(); n];
        let d0 = scaled_norm(&x, &x, &zero, abstol, reltol);
        let d1 = scaled_norm(&k[0], &x, &zero, abstol, reltol);
        if d0 < T::lit(1e-5) || d1 < T::lit(1e-5) {
            T::lit(1e-6)
        } else {
            T::lit(0.01) * d0 / d1
        }
    };
    if t_end > t {
        h = h.min(t_end - t);
    }

    let mut rec = SolveRecord {
        times: save_times.to_vec(),
        states: vec![x.clone()],
        dense: dense.then(DenseRecord::default),
        accepted: 0,
        rejected: 0,
        next_dt: h,
    };
    if let Some(d) = rec.dense.as_mut() {
        d.push(t, &x, &k[0]);
    }

    let mut next_save = 1;
    while next_save < save_times.len() {
        if rec.accepted + rec.rejected >= cfg.max_steps {
            return Err(Error::Divergence {
                max_steps: cfg.max_steps,
                t: t.as_f64(),
            });
        }
        let target = save_times[next_save];
        let remaining = target - t;
        // clamp onto the save time, avoiding a sliver of a final step
        let (step, lands) = if h >= remaining * T::lit(0.999_999) {
            (remaining, true)
        } else {
            (h, false)
        };
        rk_stages(sys, tab, stages, t, &x, step, &mut k, &mut tmp, &mut x_new);
        for e in err.iter_mut() {
            *e = T::zero();
        }
        for (s, &bt) in btilde.iter().enumerate() {
            let hb = step * T::lit(bt);
            for (e, &kv) in err.iter_mut().zip(&k[s]) {
                *e += hb * kv;
            }
        }
        let en = scaled_norm(&err, &x, &x_new, abstol, reltol);
        let factor = if en.is_finite() {
            if en == T::zero() {
                max_factor
            } else {
                (safety * en.powf(-inv_order)).max(min_factor).min(max_factor)
            }
        } else {
            min_factor
        };
        if en.is_finite() && en <= T::one() && all_finite(&x_new) {
            t = if lands { target } else { t + step };
            std::mem::swap(&mut x, &mut x_new);
            // first same as last: k[stages-1] was evaluated at the new state
            if tab.fsal {
                let last = k[stages - 1].clone();
                k[0].copy_from_slice(&last);
            } else {
                sys.eval(t, &x, &mut k[0]);
            }
            rec.accepted += 1;
            if let Some(d) = rec.dense.as_mut() {
                d.push(t, &x, &k[0]);
            }
            if lands {
                rec.states.push(x.clone());
                next_save += 1;
            }
            let proposed = step * factor;
            // a step shortened to hit a save time says little about larger steps
            h = if lands && step < h && factor >= T::one() { h } else { proposed };
        } else {
            rec.rejected += 1;
            h = step * factor;
            if !(h > T::lit(1e-14) * t.abs().max(T::one())) {
                return Err(Error::BlowUp { t: t.as_f64() });
            }
        }
    }
    rec.next_dt = h;
    Ok(rec)
}

/// Solves `du/dt = rhs(u)` with an explicit Runge-Kutta method, returning the
/// states at `save_times` (which must start at `t0`).
pub fn solve<T: Scalar, R: Rhs<T>>(
    rhs: &R,
    u0: &[T],
    t0: T,
    save_times: &[T],
    cfg: &SolverConfig,
) -> Result<SolveRecord<T>> {
    check_save_times(t0, save_times)?;
    integrate(&Autonomous(rhs), u0, save_times, cfg, false)
}

/// [`solve`] that also keeps the dense record.
pub fn solve_dense<T: Scalar, R: Rhs<T>>(
    rhs: &R,
    u0: &[T],
    t0: T,
    save_times: &[T],
    cfg: &SolverConfig,
) -> Result<SolveRecord<T>> {
    check_save_times(t0, save_times)?;
    integrate(&Autonomous(rhs), u0, save_times, cfg, true)
}

/// `t0, t0 + dt, …` with `n` entries.
pub fn uniform_times<T: Scalar>(t0: T, dt: T, n: usize) -> Vec<T> {
    (0..n).map(|i| t0 + dt * T::of_usize(i)).collect()
}
