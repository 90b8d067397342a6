//! Fixed-step unrolling with a tape for reverse-mode differentiation through
//! the solver.

use crate::error::{check_len, Error, Result};
use crate::rhs::Rhs;
use crate::scalar::{all_finite, Scalar};

use super::etd::{EtdCore, Semilinear};
use super::tableau::Tableau;

/// A differentiable one-step map `u ↦ Φ(u; θ)` of fixed step size.
pub trait Stepper<T: Scalar>: Sync {
    fn dim(&self) -> usize;
    fn n_params(&self) -> usize;
    fn dt(&self) -> T;

    /// Advances one step, recording into `stages` whatever the reverse pass needs.
    fn step(&self, u: &[T], stages: &mut Vec<Vec<T>>) -> Vec<T>;

    /// Pulls `bar` (cotangent of the step output) back to the step input,
    /// accumulating parameter gradients.
    fn step_vjp(&self, stages: &[Vec<T>], bar: &[T], grad_theta: &mut [T]) -> Vec<T>;
}

/// An explicit Runge-Kutta method applied to an autonomous right-hand side.
#[derive(Debug, Clone)]
pub struct RkStepper<'t, R, T> {
    pub rhs: R,
    pub tableau: &'t Tableau,
    pub dt: T,
}

impl<'t, R, T> RkStepper<'t, R, T> {
    pub fn new(rhs: R, tableau: &'t Tableau, dt: T) -> Self {
        Self { rhs, tableau, dt }
    }
}

impl<T: Scalar, R: Rhs<T>> Stepper<T> for RkStepper<'_, R, T> {
    fn dim(&self) -> usize {
        self.rhs.dim()
    }

    fn n_params(&self) -> usize {
        self.rhs.n_params()
    }

    fn dt(&self) -> T {
        self.dt
    }

    fn step(&self, u: &[T], stages: &mut Vec<Vec<T>>) -> Vec<T> {
        let tab = self.tableau;
        let s_count = tab.propagation_stages();
        let n = u.len();
        let h = self.dt;
        stages.clear();
        let mut k: Vec<Vec<T>> = Vec::with_capacity(s_count);
        for s in 0..s_count {
            let mut x = u.to_vec();
            for (l, &a) in tab.a[s].iter().enumerate() {
                if a != 0.0 {
                    let ha = h * T::lit(a);
                    for (y, &kv) in x.iter_mut().zip(&k[l]) {
                        *y += ha * kv;
                    }
                }
            }
            let mut ks = vec![T::zero(); n];
            self.rhs.eval_into(&x, &mut ks);
            k.push(ks);
            stages.push(x);
        }
        let mut out = u.to_vec();
        for (s, &b) in tab.b.iter().enumerate().take(s_count) {
            if b != 0.0 {
                let hb = h * T::lit(b);
                for (y, &kv) in out.iter_mut().zip(&k[s]) {
                    *y += hb * kv;
                }
            }
        }
        out
    }

    fn step_vjp(&self, stages: &[Vec<T>], bar: &[T], grad_theta: &mut [T]) -> Vec<T> {
        let tab = self.tableau;
        let h = self.dt;
        let s_count = stages.len();
        let mut kbar: Vec<Vec<T>> = (0..s_count)
            .map(|s| {
                let hb = h * T::lit(tab.b[s]);
                bar.iter().map(|&x| hb * x).collect()
            })
            .collect();
        let mut ubar = bar.to_vec();
        let mut xbar = vec![T::zero(); bar.len()];
        for s in (0..s_count).rev() {
            if kbar[s].iter().all(|x| x.is_zero()) {
                continue;
            }
            xbar.iter_mut().for_each(|x| *x = T::zero());
            self.rhs.vjp_into(&stages[s], &kbar[s], &mut xbar, grad_theta);
            for (u, &x) in ubar.iter_mut().zip(&xbar) {
                *u += x;
            }
            for (l, &a) in tab.a[s].iter().enumerate() {
                if a != 0.0 {
                    let ha = h * T::lit(a);
                    for (kb, &x) in kbar[l].iter_mut().zip(&xbar) {
                        *kb += ha * x;
                    }
                }
            }
        }
        ubar
    }
}

/// ETDRK4 applied to a semilinear problem.
#[derive(Debug, Clone)]
pub struct EtdStepper<'p, T: Scalar, N> {
    problem: &'p Semilinear<T, N>,
    core: EtdCore<'p, T>,
}

impl<'p, T: Scalar, N: Rhs<T>> EtdStepper<'p, T, N> {
    pub fn new(problem: &'p Semilinear<T, N>, dt: T) -> Result<Self> {
        Ok(Self {
            problem,
            core: EtdCore::new(problem.fourier(), problem.symbol(), dt)?,
        })
    }
}

impl<T: Scalar, N: Rhs<T>> Stepper<T> for EtdStepper<'_, T, N> {
    fn dim(&self) -> usize {
        self.problem.dim()
    }

    fn n_params(&self) -> usize {
        self.problem.n_params()
    }

    fn dt(&self) -> T {
        self.core.h()
    }

    fn step(&self, u: &[T], stages: &mut Vec<Vec<T>>) -> Vec<T> {
        let nl = &self.problem.nonlinear;
        self.core
            .step(T::zero(), u, |_, x, out| nl.eval_into(x, out), false, Some(stages))
    }

    fn step_vjp(&self, stages: &[Vec<T>], bar: &[T], grad_theta: &mut [T]) -> Vec<T> {
        self.core.step_vjp(stages, bar, &self.problem.nonlinear, grad_theta)
    }
}

/// Stage records of every step of an unroll.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    steps_per_snapshot: usize,
    steps: Vec<Vec<Vec<T>>>,
}

impl<T: Scalar> Tape<T> {
    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    /// Gradient of a scalar function of the snapshots, given its partial
    /// derivatives `bars[i]` with respect to snapshot `i` (`bars[0]` for the
    /// initial state). Returns the gradient with respect to the initial state
    /// and accumulates the parameter gradient.
    pub fn backward<S: Stepper<T> + ?Sized>(
        &self,
        stepper: &S,
        bars: &[Vec<T>],
        grad_theta: &mut [T],
    ) -> Result<Vec<T>> {
        let n_t = self.steps.len() / self.steps_per_snapshot.max(1);
        check_len("snapshot cotangents", n_t + 1, bars.len())?;
        check_len("parameter gradient", stepper.n_params(), grad_theta.len())?;
        let mut ubar = vec![T::zero(); stepper.dim()];
        for j in (0..self.steps.len()).rev() {
            if (j + 1) % self.steps_per_snapshot == 0 {
                let b = &bars[(j + 1) / self.steps_per_snapshot];
                check_len("snapshot cotangent", ubar.len(), b.len())?;
                for (u, &x) in ubar.iter_mut().zip(b) {
                    *u += x;
                }
            }
            ubar = stepper.step_vjp(&self.steps[j], &ubar, grad_theta);
        }
        for (u, &x) in ubar.iter_mut().zip(&bars[0]) {
            *u += x;
        }
        Ok(ubar)
    }
}

fn run<T: Scalar, S: Stepper<T> + ?Sized>(
    stepper: &S,
    u0: &[T],
    n_t: usize,
    steps_per_snapshot: usize,
    mut tape: Option<&mut Tape<T>>,
) -> Result<Vec<Vec<T>>> {
    check_len("initial state", stepper.dim(), u0.len())?;
    if steps_per_snapshot == 0 {
        return Err(Error::Config("steps per snapshot must be positive".into()));
    }
    let mut snaps = Vec::with_capacity(n_t + 1);
    snaps.push(u0.to_vec());
    let mut u = u0.to_vec();
    let mut stages = Vec::new();
    for i in 0..n_t {
        for j in 0..steps_per_snapshot {
            u = stepper.step(&u, &mut stages);
            if !all_finite(&u) {
                let k = i * steps_per_snapshot + j + 1;
                return Err(Error::BlowUp {
                    t: stepper.dt().as_f64() * k as f64,
                });
            }
            if let Some(t) = tape.as_deref_mut() {
                t.steps.push(std::mem::take(&mut stages));
            }
        }
        snaps.push(u.clone());
    }
    Ok(snaps)
}

/// Runs `n_t` snapshots of `steps_per_snapshot` fixed steps each, returning
/// `n_t + 1` snapshots (the first is `u0`) and the tape for [`Tape::backward`].
pub fn unroll_fixed<T: Scalar, S: Stepper<T> + ?Sized>(
    stepper: &S,
    u0: &[T],
    n_t: usize,
    steps_per_snapshot: usize,
) -> Result<(Vec<Vec<T>>, Tape<T>)> {
    let mut tape = Tape {
        steps_per_snapshot,
        steps: Vec::with_capacity(n_t * steps_per_snapshot),
    };
    let snaps = run(stepper, u0, n_t, steps_per_snapshot, Some(&mut tape))?;
    Ok((snaps, tape))
}

/// [`unroll_fixed`] without recording a tape.
pub fn advance<T: Scalar, S: Stepper<T> + ?Sized>(
    stepper: &S,
    u0: &[T],
    n_t: usize,
    steps_per_snapshot: usize,
) -> Result<Vec<Vec<T>>> {
    run(stepper, u0, n_t, steps_per_snapshot, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::PeriodicGrid;
    use crate::nn::{CnnArchitecture, CnnParams};
    use crate::rhs::{BurgersRhs, ClosureRhs, KsRhs};
    use crate::solvers::{solve, Method, SolverConfig, RK4, TSIT5};
    use crate::spectral::SpectralKs;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rvec(rng: &mut ChaCha8Rng, n: usize, s: f64) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-s..s)).collect()
    }

    #[test]
    fn single_step_matches_solve() {
        let g = PeriodicGrid::new(16, 1.0).unwrap();
        let rhs = BurgersRhs::new(g, 0.0005);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u0 = rvec(&mut rng, 16, 1.0);
        for (tab, m) in [(&RK4, Method::Rk4), (&TSIT5, Method::Tsit5Fixed)] {
            let st = RkStepper::new(rhs, tab, 0.01);
            let (snaps, tape) = unroll_fixed(&st, &u0, 1, 1).unwrap();
            let r = solve(&rhs, &u0, 0.0, &[0.0, 0.01], &SolverConfig::fixed(m, 0.01)).unwrap();
            assert_eq!(snaps[1], r.states[1]);
            assert_eq!(tape.n_steps(), 1);
        }
    }

    fn fd_check<S: Stepper<f64>>(st: &S, u0: &[f64], n_t: usize, sps: usize, tol: f64) {
        let loss = |u: &[f64]| -> f64 {
            let s = advance(st, u, n_t, sps).unwrap();
            s[n_t].iter().map(|x| x * x).sum()
        };
        let (snaps, tape) = unroll_fixed(st, u0, n_t, sps).unwrap();
        let mut bars = vec![vec![0.0; u0.len()]; n_t + 1];
        bars[n_t] = snaps[n_t].iter().map(|x| 2.0 * x).collect();
        let mut gt = vec![0.0; st.n_params()];
        let g = tape.backward(st, &bars, &mut gt).unwrap();
        let h = 1e-6;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..u0.len() {
            let mut up = u0.to_vec();
            up[i] += h;
            let mut um = u0.to_vec();
            um[i] -= h;
            let fd = (loss(&up) - loss(&um)) / (2.0 * h);
            num += (fd - g[i]).powi(2);
            den += fd * fd;
        }
        assert!((num / den).sqrt() < tol, "relative error {}", (num / den).sqrt());
    }

    #[test]
    fn rk_tape_gradient_matches_finite_differences() {
        let g = PeriodicGrid::new(16, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = CnnParams::<f64>::init(CnnArchitecture::small(), &mut rng);
        let rhs = ClosureRhs::new(BurgersRhs::new(g, 0.0005), &net);
        let u0 = rvec(&mut rng, 16, 1.0);
        fd_check(&RkStepper::new(&rhs, &TSIT5, 2f64.powi(-7)), &u0, 3, 1, 1e-6);
        fd_check(&RkStepper::new(&rhs, &RK4, 2f64.powi(-8)), &u0, 3, 2, 1e-6);
    }

    #[test]
    fn etd_tape_gradient_matches_finite_differences() {
        let g = PeriodicGrid::new(16, 8.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = CnnParams::<f64>::init(CnnArchitecture::large(), &mut rng);
        let ks = SpectralKs::new(g).unwrap();
        let p = Semilinear::new(ks.linear_symbol(), ClosureRhs::new(ks.convection(), &net)).unwrap();
        let u0 = rvec(&mut rng, 16, 1.0);
        fd_check(&EtdStepper::new(&p, 0.25).unwrap(), &u0, 3, 2, 1e-6);

        let fvm = KsRhs::new(g);
        let p = Semilinear::new(fvm.linear_symbol(), ClosureRhs::new(fvm.convection(), &net)).unwrap();
        fd_check(&EtdStepper::new(&p, 0.1).unwrap(), &u0, 3, 1, 1e-6);
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let g = PeriodicGrid::new(16, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = CnnParams::<f64>::init(CnnArchitecture::small(), &mut rng);
        let u0 = rvec(&mut rng, 16, 1.0);
        let target = rvec(&mut rng, 16, 1.0);
        let loss = |p: &CnnParams<f64>| -> f64 {
            let rhs = ClosureRhs::new(BurgersRhs::new(g, 0.0005), p);
            let s = advance(&RkStepper::new(&rhs, &TSIT5, 0.01), &u0, 3, 1).unwrap();
            s[1..].iter().flat_map(|v| v.iter().zip(&target).map(|(a, b)| (a - b).powi(2))).sum()
        };
        let rhs = ClosureRhs::new(BurgersRhs::new(g, 0.0005), &net);
        let st = RkStepper::new(&rhs, &TSIT5, 0.01);
        let (snaps, tape) = unroll_fixed(&st, &u0, 3, 1).unwrap();
        let mut bars = vec![vec![0.0; 16]];
        for s in &snaps[1..] {
            bars.push(s.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect());
        }
        let mut gt = vec![0.0; 57];
        tape.backward(&st, &bars, &mut gt).unwrap();
        let h = 1e-6;
        let (mut num, mut den) = (0.0, 0.0);
        for j in 0..57 {
            let mut p = net.clone();
            p.theta_mut()[j] += h;
            let mut m = net.clone();
            m.theta_mut()[j] -= h;
            let fd = (loss(&p) - loss(&m)) / (2.0 * h);
            num += (fd - gt[j]).powi(2);
            den += fd * fd;
        }
        assert!((num / den).sqrt() < 1e-5);
        assert_eq!(gt[56], 0.0);
    }

    #[test]
    fn blow_up_is_reported() {
        let rhs = crate::rhs::LinearRhs::new(1, vec![1000.0]).unwrap();
        let st = RkStepper::new(&rhs, &RK4, 0.1);
        assert!(matches!(advance(&st, &[1.0], 200, 1), Err(Error::BlowUp { .. })));
    }
}
