//! Continuous adjoint for `u' = g(u; θ)` with a loss on snapshots.
//!
//! In reversed time `s = T - t` the adjoint solves `y' = Jᵀy`, `z' = J_θᵀy`
//! from `y = z = 0`, with `y` jumping by `∂Loss/∂u(t_i)` at every snapshot.
//! The forward states the Jacobians need are rebuilt by cubic Hermite
//! interpolation of the stored forward solve.

use crate::error::{check_len, Error, Result};
use crate::rhs::Rhs;
use crate::scalar::{all_finite, Scalar};
use crate::solvers::{
    etdrk4_solve, integrate, steps_for, Autonomous, DenseRecord, EtdCore, OdeSystem, Semilinear,
    SolveRecord, SolverConfig,
};

/// Cotangent of the state and accumulated parameter gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointState<T = f64> {
    pub y: Vec<T>,
    pub z: Vec<T>,
}

impl<T: Scalar> AdjointState<T> {
    pub fn zeros(n_x: usize, n_params: usize) -> Self {
        Self {
            y: vec![T::zero(); n_x],
            z: vec![T::zero(); n_params],
        }
    }

    fn pack(&self) -> Vec<T> {
        self.y.iter().chain(&self.z).copied().collect()
    }

    fn unpack(&mut self, x: &[T]) {
        let n = self.y.len();
        self.y.copy_from_slice(&x[..n]);
        self.z.copy_from_slice(&x[n..]);
    }
}

/// Forward solve keeping the dense record the adjoint interpolates.
pub fn forward_dense<T: Scalar, R: Rhs<T> + ?Sized>(
    rhs: &R,
    u0: &[T],
    times: &[T],
    solver: &SolverConfig,
) -> Result<SolveRecord<T>> {
    integrate(&Autonomous(rhs), u0, times, solver, true)
}

/// [`forward_dense`] with ETDRK4 for a semilinear problem.
pub fn forward_dense_etd<T: Scalar, N: Rhs<T>>(
    problem: &Semilinear<T, N>,
    u0: &[T],
    times: &[T],
    dt: T,
) -> Result<SolveRecord<T>> {
    let t0 = *times
        .first()
        .ok_or_else(|| Error::Precondition("no save times".into()))?;
    etdrk4_solve(problem, u0, t0, times, dt, true)
}

fn dense_of<T: Scalar>(rec: &SolveRecord<T>) -> Result<&DenseRecord<T>> {
    rec.dense
        .as_ref()
        .filter(|d| !d.is_empty())
        .ok_or_else(|| Error::Precondition("adjoint needs a dense forward record".into()))
}

fn check_bars<T: Scalar>(rec: &SolveRecord<T>, bars: &[Vec<T>], n: usize) -> Result<()> {
    check_len("snapshot cotangents", rec.times.len(), bars.len())?;
    for b in bars {
        check_len("snapshot cotangent", n, b.len())?;
    }
    Ok(())
}

/// `F(s, [y, z]) = [J(u)ᵀy, J_θ(u)ᵀy]` at `u = u(T - s)`.
struct AdjointSystem<'a, R: ?Sized, T> {
    rhs: &'a R,
    dense: &'a DenseRecord<T>,
    t_end: T,
}

impl<T: Scalar, R: Rhs<T> + ?Sized> AdjointSystem<'_, R, T> {
    fn pullback(&self, s: T, x: &[T], out: &mut [T]) {
        let n = self.rhs.dim();
        let mut u = vec![T::zero(); n];
        self.dense.interpolate(self.t_end - s, &mut u);
        out.iter_mut().for_each(|o| *o = T::zero());
        let (gy, gz) = out.split_at_mut(n);
        self.rhs.vjp_into(&u, &x[..n], gy, gz);
    }
}

impl<T: Scalar, R: Rhs<T> + ?Sized> OdeSystem<T> for AdjointSystem<'_, R, T> {
    fn dim(&self) -> usize {
        self.rhs.dim() + self.rhs.n_params()
    }

    fn eval(&self, s: T, x: &[T], out: &mut [T]) {
        self.pullback(s, x, out)
    }
}

fn add<T: Scalar>(y: &mut [T], b: &[T]) {
    for (a, &v) in y.iter_mut().zip(b) {
        *a += v;
    }
}

/// Solves the adjoint backwards over the forward record with the same solver
/// settings. `bars[i]` is `∂Loss/∂u(t_i)`; returns `y(0)` (the gradient with
/// respect to the initial state) and `z(0)` (the parameter gradient).
pub fn adjoint_backward<T: Scalar, R: Rhs<T> + ?Sized>(
    rhs: &R,
    rec: &SolveRecord<T>,
    bars: &[Vec<T>],
    solver: &SolverConfig,
) -> Result<AdjointState<T>> {
    let n = rhs.dim();
    check_bars(rec, bars, n)?;
    let sys = AdjointSystem {
        rhs,
        dense: dense_of(rec)?,
        t_end: *rec.times.last().expect("non-empty"),
    };
    let mut state = AdjointState::zeros(n, rhs.n_params());
    for i in (1..rec.times.len()).rev() {
        add(&mut state.y, &bars[i]);
        let span = [sys.t_end - rec.times[i], sys.t_end - rec.times[i - 1]];
        let out = integrate(&sys, &state.pack(), &span, solver, false)
            .map_err(|e| Error::Adjoint(Box::new(e)))?;
        state.unpack(out.states.last().expect("two states"));
    }
    add(&mut state.y, &bars[0]);
    Ok(state)
}

/// [`adjoint_backward`] for a semilinear problem, stepping the adjoint with
/// ETDRK4 on the transposed linear part.
pub fn adjoint_backward_etd<T: Scalar, N: Rhs<T>>(
    problem: &Semilinear<T, N>,
    rec: &SolveRecord<T>,
    bars: &[Vec<T>],
    dt: T,
) -> Result<AdjointState<T>> {
    let n = problem.dim();
    check_bars(rec, bars, n)?;
    let sys = AdjointSystem {
        rhs: &problem.nonlinear,
        dense: dense_of(rec)?,
        t_end: *rec.times.last().expect("non-empty"),
    };
    let core = EtdCore::new(problem.fourier(), problem.symbol(), dt)?;
    let mut state = AdjointState::zeros(n, problem.n_params());
    for i in (1..rec.times.len()).rev() {
        add(&mut state.y, &bars[i]);
        let s0 = sys.t_end - rec.times[i];
        let m = steps_for((rec.times[i] - rec.times[i - 1]).as_f64(), dt.as_f64())
            .map_err(|e| Error::Adjoint(Box::new(e)))?;
        let mut x = state.pack();
        for k in 0..m {
            let s = s0 + dt * T::of_usize(k);
            x = core.step(s, &x, |s, x, out| sys.pullback(s, x, out), true, None);
        }
        if !all_finite(&x) {
            return Err(Error::Adjoint(Box::new(Error::BlowUp {
                t: rec.times[i - 1].as_f64(),
            })));
        }
        state.unpack(&x);
    }
    add(&mut state.y, &bars[0]);
    Ok(state)
}
