//! Discretised right-hand sides and their vector-Jacobian products.

use num_complex::Complex;

use crate::error::{check_len, Result};
use crate::grid::PeriodicGrid;
use crate::nn::CnnParams;
use crate::scalar::Scalar;

/// An autonomous ODE right-hand side `du/dt = g(u; θ)` with reverse-mode derivatives.
///
/// The `*_into` methods are the hot path and panic on mismatched lengths; the
/// provided wrappers check shapes and return errors instead.
pub trait Rhs<T: Scalar>: Sync {
    /// State dimension.
    fn dim(&self) -> usize;

    /// Number of trainable parameters the right-hand side depends on.
    fn n_params(&self) -> usize {
        0
    }

    fn eval_into(&self, u: &[T], out: &mut [T]);

    /// Accumulates `wᵀ ∂g/∂u` into `grad_u` and `wᵀ ∂g/∂θ` into `grad_theta`.
    fn vjp_into(&self, u: &[T], w: &[T], grad_u: &mut [T], grad_theta: &mut [T]);

    fn eval(&self, u: &[T]) -> Result<Vec<T>> {
        check_len("rhs state", self.dim(), u.len())?;
        let mut out = vec![T::zero(); u.len()];
        self.eval_into(u, &mut out);
        Ok(out)
    }

    fn vjp_state(&self, u: &[T], w: &[T]) -> Result<Vec<T>> {
        check_len("rhs state", self.dim(), u.len())?;
        check_len("rhs cotangent", self.dim(), w.len())?;
        let mut gu = vec![T::zero(); u.len()];
        let mut gt = vec![T::zero(); self.n_params()];
        self.vjp_into(u, w, &mut gu, &mut gt);
        Ok(gu)
    }

    fn vjp_params(&self, u: &[T], w: &[T]) -> Result<Vec<T>> {
        check_len("rhs state", self.dim(), u.len())?;
        check_len("rhs cotangent", self.dim(), w.len())?;
        let mut gu = vec![T::zero(); u.len()];
        let mut gt = vec![T::zero(); self.n_params()];
        self.vjp_into(u, w, &mut gu, &mut gt);
        Ok(gt)
    }
}

impl<T: Scalar, R: Rhs<T> + ?Sized> Rhs<T> for &R {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn n_params(&self) -> usize {
        (**self).n_params()
    }
    fn eval_into(&self, u: &[T], out: &mut [T]) {
        (**self).eval_into(u, out)
    }
    fn vjp_into(&self, u: &[T], w: &[T], grad_u: &mut [T], grad_theta: &mut [T]) {
        (**self).vjp_into(u, w, grad_u, grad_theta)
    }
}

impl<T: Scalar, R: Rhs<T> + ?Sized> Rhs<T> for Box<R> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn n_params(&self) -> usize {
        (**self).n_params()
    }
    fn eval_into(&self, u: &[T], out: &mut [T]) {
        (**self).eval_into(u, out)
    }
    fn vjp_into(&self, u: &[T], w: &[T], grad_u: &mut [T], grad_theta: &mut [T]) {
        (**self).vjp_into(u, w, grad_u, grad_theta)
    }
}

#[inline]
fn prev(i: usize, n: usize) -> usize {
    if i == 0 {
        n - 1
    } else {
        i - 1
    }
}

#[inline]
fn next(i: usize, n: usize) -> usize {
    if i + 1 == n {
        0
    } else {
        i + 1
    }
}

/// Derivative of `|x|`, with `sign(0) = 0`.
#[inline]
fn sign<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Energy-conserving quadratic flux at face `i + 1/2`, optionally with the
/// Jameson artificial diffusion `α (b - a)`.
#[inline]
fn face_flux<T: Scalar>(a: T, b: T, diffusive: bool) -> T {
    let sixth = T::lit(1.0 / 6.0);
    let mut f = (a * a + a * b + b * b) * sixth;
    if diffusive {
        let alpha = (a + b).abs() * T::lit(0.25) - (b - a) * T::lit(1.0 / 12.0);
        f -= alpha * (b - a);
    }
    f
}

/// Partial derivatives of [`face_flux`] with respect to its left and right arguments.
#[inline]
fn face_flux_grad<T: Scalar>(a: T, b: T, diffusive: bool) -> (T, T) {
    let sixth = T::lit(1.0 / 6.0);
    let mut da = (a + a + b) * sixth;
    let mut db = (a + b + b) * sixth;
    if diffusive {
        // -α d with α = |s|/4 - d/12, s = a + b, d = b - a
        let s = a + b;
        let d = b - a;
        let sg = sign(s);
        let q = T::lit(0.25);
        da += -sg * d * q + s.abs() * q - d * sixth;
        db += -sg * d * q - s.abs() * q + d * sixth;
    }
    (da, db)
}

/// `out_i -= (F_{i+1/2} - F_{i-1/2}) / dx`.
fn add_flux_divergence<T: Scalar>(u: &[T], dx: T, diffusive: bool, out: &mut [T]) {
    let n = u.len();
    let inv_dx = T::one() / dx;
    let mut f_left = face_flux(u[n - 1], u[0], diffusive);
    for i in 0..n {
        let f_right = face_flux(u[i], u[next(i, n)], diffusive);
        out[i] -= (f_right - f_left) * inv_dx;
        f_left = f_right;
    }
}

fn add_flux_divergence_vjp<T: Scalar>(u: &[T], w: &[T], dx: T, diffusive: bool, gu: &mut [T]) {
    let n = u.len();
    let inv_dx = T::one() / dx;
    // Σ_i w_i (-(F_i - F_{i-1})/dx) = Σ_i F_i (w_{i+1} - w_i)/dx
    for i in 0..n {
        let j = next(i, n);
        let c = (w[j] - w[i]) * inv_dx;
        let (da, db) = face_flux_grad(u[i], u[j], diffusive);
        gu[i] += c * da;
        gu[j] += c * db;
    }
}

/// `out_i += scale (u_{i-1} - 2 u_i + u_{i+1})`.
fn add_second_difference<T: Scalar>(u: &[T], scale: T, out: &mut [T]) {
    let n = u.len();
    let two = T::lit(2.0);
    for i in 0..n {
        out[i] += scale * (u[prev(i, n)] - two * u[i] + u[next(i, n)]);
    }
}

/// `out_i += scale (u_{i-2} - 4 u_{i-1} + 6 u_i - 4 u_{i+1} + u_{i+2})`.
fn add_fourth_difference<T: Scalar>(u: &[T], scale: T, out: &mut [T]) {
    let n = u.len();
    let (four, six) = (T::lit(4.0), T::lit(6.0));
    for i in 0..n {
        let (im, ip) = (prev(i, n), next(i, n));
        let (imm, ipp) = (prev(im, n), next(ip, n));
        out[i] += scale * (u[imm] - four * u[im] + six * u[i] - four * u[ip] + u[ipp]);
    }
}

/// Finite-volume viscous Burgers equation with the Jameson energy-stable flux.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BurgersRhs<T = f64> {
    pub grid: PeriodicGrid<T>,
    pub nu: T,
}

impl<T: Scalar> BurgersRhs<T> {
    pub fn new(grid: PeriodicGrid<T>, nu: T) -> Self {
        Self { grid, nu }
    }
}

impl<T: Scalar> Rhs<T> for BurgersRhs<T> {
    fn dim(&self) -> usize {
        self.grid.n_x()
    }

    fn eval_into(&self, u: &[T], out: &mut [T]) {
        assert_eq!(u.len(), self.dim());
        assert_eq!(out.len(), self.dim());
        let dx = self.grid.dx();
        out.fill(T::zero());
        add_second_difference(u, self.nu / (dx * dx), out);
        add_flux_divergence(u, dx, true, out);
    }

    fn vjp_into(&self, u: &[T], w: &[T], grad_u: &mut [T], _grad_theta: &mut [T]) {
        assert_eq!(u.len(), self.dim());
        let dx = self.grid.dx();
        add_second_difference(w, self.nu / (dx * dx), grad_u);
        add_flux_divergence_vjp(u, w, dx, true, grad_u);
    }
}

/// Finite-volume Kuramoto-Sivashinsky equation: quadratic flux without artificial
/// diffusion, 3-point anti-diffusion and 5-point hyper-diffusion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsRhs<T = f64> {
    pub grid: PeriodicGrid<T>,
}

impl<T: Scalar> KsRhs<T> {
    pub fn new(grid: PeriodicGrid<T>) -> Self {
        Self { grid }
    }

    /// The convection term on its own, the explicit part of a semilinear split.
    pub fn convection(&self) -> KsConvection<T> {
        KsConvection { grid: self.grid }
    }

    /// Eigenvalues of the linear (diffusion + hyper-diffusion) stencils per DFT mode.
    pub fn linear_symbol(&self) -> Vec<Complex<T>> {
        let n = self.grid.n_x();
        let dx = self.grid.dx();
        let (dx2, dx4) = (dx * dx, dx * dx * dx * dx);
        (0..n)
            .map(|k| {
                let theta = T::TAU() * T::of_usize(k) / T::of_usize(n);
                let d2 = T::lit(2.0) * theta.cos() - T::lit(2.0);
                Complex::new(-d2 / dx2 - d2 * d2 / dx4, T::zero())
            })
            .collect()
    }
}

impl<T: Scalar> Rhs<T> for KsRhs<T> {
    fn dim(&self) -> usize {
        self.grid.n_x()
    }

    fn eval_into(&self, u: &[T], out: &mut [T]) {
        assert_eq!(u.len(), self.dim());
        assert_eq!(out.len(), self.dim());
        let dx = self.grid.dx();
        out.fill(T::zero());
        add_flux_divergence(u, dx, false, out);
        add_second_difference(u, -T::one() / (dx * dx), out);
        add_fourth_difference(u, -T::one() / (dx * dx * dx * dx), out);
    }

    fn vjp_into(&self, u: &[T], w: &[T], grad_u: &mut [T], _grad_theta: &mut [T]) {
        assert_eq!(u.len(), self.dim());
        let dx = self.grid.dx();
        add_flux_divergence_vjp(u, w, dx, false, grad_u);
        add_second_difference(w, -T::one() / (dx * dx), grad_u);
        add_fourth_difference(w, -T::one() / (dx * dx * dx * dx), grad_u);
    }
}

/// `-(1/2) ∂x(u²)` discretised with the quadratic finite-volume flux.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsConvection<T = f64> {
    pub grid: PeriodicGrid<T>,
}

impl<T: Scalar> Rhs<T> for KsConvection<T> {
    fn dim(&self) -> usize {
        self.grid.n_x()
    }

    fn eval_into(&self, u: &[T], out: &mut [T]) {
        out.fill(T::zero());
        add_flux_divergence(u, self.grid.dx(), false, out);
    }

    fn vjp_into(&self, u: &[T], w: &[T], grad_u: &mut [T], _grad_theta: &mut [T]) {
        add_flux_divergence_vjp(u, w, self.grid.dx(), false, grad_u);
    }
}

/// The zero right-hand side, for pure neural ODEs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoBase {
    pub n_x: usize,
}

impl<T: Scalar> Rhs<T> for NoBase {
    fn dim(&self) -> usize {
        self.n_x
    }

    fn eval_into(&self, _u: &[T], out: &mut [T]) {
        out.fill(T::zero());
    }

    fn vjp_into(&self, _u: &[T], _w: &[T], _grad_u: &mut [T], _grad_theta: &mut [T]) {}
}

/// Dense linear right-hand side `g(u) = A u`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRhs<T = f64> {
    n: usize,
    a: Vec<T>,
}

impl<T: Scalar> LinearRhs<T> {
    pub fn new(n: usize, a: Vec<T>) -> Result<Self> {
        check_len("linear rhs matrix", n * n, a.len())?;
        Ok(Self { n, a })
    }

    pub fn matrix(&self) -> &[T] {
        &self.a
    }
}

impl<T: Scalar> Rhs<T> for LinearRhs<T> {
    fn dim(&self) -> usize {
        self.n
    }

    fn eval_into(&self, u: &[T], out: &mut [T]) {
        for (o, row) in out.iter_mut().zip(self.a.chunks_exact(self.n)) {
            *o = row.iter().zip(u).map(|(&a, &x)| a * x).sum();
        }
    }

    fn vjp_into(&self, _u: &[T], w: &[T], grad_u: &mut [T], _grad_theta: &mut [T]) {
        for (row, &wi) in self.a.chunks_exact(self.n).zip(w) {
            for (g, &a) in grad_u.iter_mut().zip(row) {
                *g += wi * a;
            }
        }
    }
}

/// `g(u; θ) = base(u) + NN(u; θ)`, where the network output is already zero-sum.
#[derive(Debug, Clone)]
pub struct ClosureRhs<'a, B, T: Scalar = f64> {
    pub base: B,
    pub network: Option<&'a CnnParams<T>>,
    pub enabled: bool,
}

impl<'a, B, T: Scalar> ClosureRhs<'a, B, T> {
    pub fn new(base: B, network: &'a CnnParams<T>) -> Self {
        Self {
            base,
            network: Some(network),
            enabled: true,
        }
    }

    /// The base discretisation on its own.
    pub fn without_closure(base: B) -> Self {
        Self {
            base,
            network: None,
            enabled: false,
        }
    }

    fn active(&self) -> Option<&'a CnnParams<T>> {
        if self.enabled {
            self.network
        } else {
            None
        }
    }
}

impl<B: Rhs<T>, T: Scalar> Rhs<T> for ClosureRhs<'_, B, T> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn n_params(&self) -> usize {
        self.network.map_or(0, |p| p.len())
    }

    fn eval_into(&self, u: &[T], out: &mut [T]) {
        self.base.eval_into(u, out);
        if let Some(net) = self.active() {
            let mut y = vec![T::zero(); u.len()];
            net.forward_into(u, &mut y);
            for (o, v) in out.iter_mut().zip(&y) {
                *o += *v;
            }
        }
    }

    fn vjp_into(&self, u: &[T], w: &[T], grad_u: &mut [T], grad_theta: &mut [T]) {
        let nb = self.base.n_params();
        let (gb, gn) = grad_theta.split_at_mut(nb.min(grad_theta.len()));
        self.base.vjp_into(u, w, grad_u, gb);
        if let Some(net) = self.active() {
            net.backward_into(u, w, grad_u, gn);
        }
    }
}
