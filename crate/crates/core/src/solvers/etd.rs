//! Exponential time differencing (Cox-Matthews ETDRK4) for `u' = L u + N(u)`
//! with `L` circulant.

use num_complex::Complex;

use crate::error::{check_len, Error, Result};
use crate::rhs::Rhs;
use crate::scalar::{all_finite, Scalar};
use crate::spectral::{conjugate_asymmetry, Etdrk4Coeffs, Fourier};

use super::{check_save_times, steps_for, DenseRecord, SolveRecord};

/// A semilinear problem: circulant linear part given by its DFT symbol, plus
/// an explicit nonlinear right-hand side.
#[derive(Debug, Clone)]
pub struct Semilinear<T: Scalar, N> {
    fourier: Fourier<T>,
    symbol: Vec<Complex<T>>,
    pub nonlinear: N,
}

impl<T: Scalar, N: Rhs<T>> Semilinear<T, N> {
    /// The symbol must be that of a real operator (`σ_{n-k} = conj(σ_k)`).
    pub fn new(symbol: Vec<Complex<T>>, nonlinear: N) -> Result<Self> {
        check_len("linear symbol", nonlinear.dim(), symbol.len())?;
        let scale = symbol.iter().map(|c| c.norm()).fold(T::one(), T::max);
        if conjugate_asymmetry(&symbol) > T::lit(1e-12) * scale {
            return Err(Error::Precondition(
                "linear symbol does not describe a real operator".into(),
            ));
        }
        Ok(Self {
            fourier: Fourier::new(symbol.len())?,
            symbol,
            nonlinear,
        })
    }

    /// Builds the problem from a dense row-major matrix, which must be circulant.
    pub fn from_matrix(n: usize, a: &[T], nonlinear: N) -> Result<Self> {
        check_len("linear operator", n * n, a.len())?;
        let tol = T::lit(1e-12) * a.iter().fold(T::one(), |m, x| m.max(x.abs()));
        for i in 0..n {
            for j in 0..n {
                if (a[i * n + j] - a[(j + n - i) % n]).abs() > tol {
                    return Err(Error::Precondition(format!(
                        "linear operator is not circulant (entry {i},{j})"
                    )));
                }
            }
        }
        // (A v)_0 = Σ_m a_{0m} e^{2πikm/n} for v_j = e^{2πikj/n}
        let symbol = (0..n)
            .map(|k| {
                (0..n).fold(Complex::new(T::zero(), T::zero()), |s, m| {
                    let th = T::TAU() * T::of_usize((k * m) % n) / T::of_usize(n);
                    s + Complex::from_polar(a[m], th)
                })
            })
            .collect();
        Self::new(symbol, nonlinear)
    }

    pub fn symbol(&self) -> &[Complex<T>] {
        &self.symbol
    }

    pub fn fourier(&self) -> &Fourier<T> {
        &self.fourier
    }

    pub fn apply_linear(&self, x: &[T], transpose: bool) -> Vec<T> {
        self.fourier.apply_symbol(&self.symbol, x, transpose)
    }
}

impl<T: Scalar, N: Rhs<T>> Rhs<T> for Semilinear<T, N> {
    fn dim(&self) -> usize {
        self.symbol.len()
    }

    fn n_params(&self) -> usize {
        self.nonlinear.n_params()
    }

    fn eval_into(&self, u: &[T], out: &mut [T]) {
        self.nonlinear.eval_into(u, out);
        for (o, l) in out.iter_mut().zip(self.apply_linear(u, false)) {
            *o += l;
        }
    }

    fn vjp_into(&self, u: &[T], w: &[T], grad_u: &mut [T], grad_theta: &mut [T]) {
        self.nonlinear.vjp_into(u, w, grad_u, grad_theta);
        for (g, l) in grad_u.iter_mut().zip(self.apply_linear(w, true)) {
            *g += l;
        }
    }
}

/// Which coefficient a linear combination term uses.
#[derive(Clone, Copy)]
enum Coef {
    E,
    E2,
    Q,
    F1,
    F2,
    F3,
}

/// ETDRK4 stepping for a state whose first `n` components carry the circulant
/// linear part; any further components have a zero linear part (so their
/// update reduces to the classical RK4 weights).
#[derive(Debug, Clone)]
pub struct EtdCore<'a, T: Scalar> {
    fourier: &'a Fourier<T>,
    coeffs: Etdrk4Coeffs<T>,
    n: usize,
}

impl<'a, T: Scalar> EtdCore<'a, T> {
    pub fn new(fourier: &'a Fourier<T>, symbol: &[Complex<T>], h: T) -> Result<Self> {
        check_len("linear symbol", fourier.len(), symbol.len())?;
        Ok(Self {
            fourier,
            coeffs: Etdrk4Coeffs::new(symbol, h)?,
            n: symbol.len(),
        })
    }

    pub fn h(&self) -> T {
        self.coeffs.h
    }

    pub fn coeffs(&self) -> &Etdrk4Coeffs<T> {
        &self.coeffs
    }

    fn coef(&self, c: Coef) -> (&[Complex<T>], T) {
        let h = self.coeffs.h;
        let sixth = h / T::lit(6.0);
        match c {
            Coef::E => (&self.coeffs.e, T::one()),
            Coef::E2 => (&self.coeffs.e2, T::one()),
            Coef::Q => (&self.coeffs.q, h / T::lit(2.0)),
            Coef::F1 => (&self.coeffs.f1, sixth),
            Coef::F2 => (&self.coeffs.f2, sixth),
            Coef::F3 => (&self.coeffs.f3, sixth),
        }
    }

    /// `Σ_j C_j x_j` (or `Σ_j C_jᵀ x_j`).
    fn lin(&self, terms: &[(Coef, &[T])], transpose: bool) -> Vec<T> {
        let n = self.n;
        let len = terms[0].1.len();
        let mut acc = vec![Complex::new(T::zero(), T::zero()); n];
        let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
        let mut out = vec![T::zero(); len];
        for &(c, x) in terms {
            let (sym, zero) = self.coef(c);
            for (b, &v) in buf.iter_mut().zip(&x[..n]) {
                *b = Complex::new(v, T::zero());
            }
            self.fourier.forward_in_place(&mut buf);
            for ((a, b), s) in acc.iter_mut().zip(&buf).zip(sym) {
                *a += *b * if transpose { s.conj() } else { *s };
            }
            for (o, &v) in out[n..].iter_mut().zip(&x[n..]) {
                *o += zero * v;
            }
        }
        self.fourier.inverse_in_place(&mut acc);
        for (o, a) in out[..n].iter_mut().zip(acc) {
            *o = a.re;
        }
        out
    }

    /// One step from `(t, u)` for `u' = L u + N(t, u)` (or `Lᵀ` when `transpose`).
    /// When `stages` is given it receives the four nonlinear-term inputs.
    pub fn step<F>(
        &self,
        t: T,
        u: &[T],
        mut nl: F,
        transpose: bool,
        stages: Option<&mut Vec<Vec<T>>>,
    ) -> Vec<T>
    where
        F: FnMut(T, &[T], &mut [T]),
    {
        let h = self.coeffs.h;
        let half = t + h / T::lit(2.0);
        let len = u.len();
        let mut nu = vec![T::zero(); len];
        nl(t, u, &mut nu);
        let a = self.lin(&[(Coef::E2, u), (Coef::Q, &nu)], transpose);
        let mut na = vec![T::zero(); len];
        nl(half, &a, &mut na);
        let b = self.lin(&[(Coef::E2, u), (Coef::Q, &na)], transpose);
        let mut nb = vec![T::zero(); len];
        nl(half, &b, &mut nb);
        let comb: Vec<T> = nb.iter().zip(&nu).map(|(&x, &y)| x + x - y).collect();
        let c = self.lin(&[(Coef::E2, &a), (Coef::Q, &comb)], transpose);
        let mut nc = vec![T::zero(); len];
        nl(t + h, &c, &mut nc);
        let nab: Vec<T> = na.iter().zip(&nb).map(|(&x, &y)| (x + y) + (x + y)).collect();
        let out = self.lin(
            &[(Coef::E, u), (Coef::F1, &nu), (Coef::F2, &nab), (Coef::F3, &nc)],
            transpose,
        );
        if let Some(st) = stages {
            st.clear();
            st.extend([u.to_vec(), a, b, c]);
        }
        out
    }

    /// Reverse-mode derivative of [`EtdCore::step`] for an autonomous nonlinear
    /// term: returns the cotangent of `u` and accumulates parameter gradients.
    pub fn step_vjp<N: Rhs<T> + ?Sized>(
        &self,
        stages: &[Vec<T>],
        bar: &[T],
        nonlinear: &N,
        grad_theta: &mut [T],
    ) -> Vec<T> {
        let len = bar.len();
        let (u, a, b, c) = (&stages[0], &stages[1], &stages[2], &stages[3]);
        let jt = |x: &[T], w: &[T], gt: &mut [T]| {
            let mut g = vec![T::zero(); len];
            nonlinear.vjp_into(x, w, &mut g, gt);
            g
        };
        let add = |x: &mut [T], y: &[T], s: T| {
            for (p, &q) in x.iter_mut().zip(y) {
                *p += s * q;
            }
        };
        let one = T::one();
        let two = T::lit(2.0);

        let mut ubar = self.lin(&[(Coef::E, bar)], true);
        let mut nu_bar = self.lin(&[(Coef::F1, bar)], true);
        let f2 = self.lin(&[(Coef::F2, bar)], true);
        let mut na_bar: Vec<T> = f2.iter().map(|&x| two * x).collect();
        let mut nb_bar = na_bar.clone();
        let nc_bar = self.lin(&[(Coef::F3, bar)], true);

        let c_bar = jt(c, &nc_bar, grad_theta);
        let mut a_bar = self.lin(&[(Coef::E2, &c_bar)], true);
        let qc = self.lin(&[(Coef::Q, &c_bar)], true);
        add(&mut nb_bar, &qc, two);
        add(&mut nu_bar, &qc, -one);

        let b_bar = jt(b, &nb_bar, grad_theta);
        add(&mut ubar, &self.lin(&[(Coef::E2, &b_bar)], true), one);
        add(&mut na_bar, &self.lin(&[(Coef::Q, &b_bar)], true), one);

        add(&mut a_bar, &jt(a, &na_bar, grad_theta), one);
        add(&mut ubar, &self.lin(&[(Coef::E2, &a_bar)], true), one);
        add(&mut nu_bar, &self.lin(&[(Coef::Q, &a_bar)], true), one);

        add(&mut ubar, &jt(u, &nu_bar, grad_theta), one);
        ubar
    }
}

/// Solves `u' = L u + N(u)` with fixed-step ETDRK4, returning the states at
/// `save_times`; `dt` must divide every save interval.
pub fn etdrk4_solve<T: Scalar, N: Rhs<T>>(
    problem: &Semilinear<T, N>,
    u0: &[T],
    t0: T,
    save_times: &[T],
    dt: T,
    dense: bool,
) -> Result<SolveRecord<T>> {
    check_len("initial state", problem.dim(), u0.len())?;
    check_save_times(t0, save_times)?;
    let core = EtdCore::new(problem.fourier(), problem.symbol(), dt)?;
    let mut u = u0.to_vec();
    let mut rec = SolveRecord {
        times: save_times.to_vec(),
        states: vec![u.clone()],
        dense: dense.then(DenseRecord::default),
        accepted: 0,
        rejected: 0,
        next_dt: dt,
    };
    let mut du = vec![T::zero(); u.len()];
    let mut t = t0;
    for w in save_times.windows(2) {
        let m = steps_for((w[1] - w[0]).as_f64(), dt.as_f64())?;
        for j in 0..m {
            if let Some(d) = rec.dense.as_mut() {
                problem.eval_into(&u, &mut du);
                d.push(t, &u, &du);
            }
            u = core.step(t, &u, |_, x, out| problem.nonlinear.eval_into(x, out), false, None);
            t = if j + 1 == m { w[1] } else { w[0] + dt * T::of_usize(j + 1) };
            rec.accepted += 1;
            if !all_finite(&u) {
                return Err(Error::BlowUp { t: t.as_f64() });
            }
        }
        rec.states.push(u.clone());
    }
    if let Some(d) = rec.dense.as_mut() {
        problem.eval_into(&u, &mut du);
        d.push(t, &u, &du);
    }
    Ok(rec)
}
