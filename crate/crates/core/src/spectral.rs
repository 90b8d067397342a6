//! Discrete Fourier transforms, the wavenumber operator, the pseudospectral
//! Kuramoto-Sivashinsky model and ETDRK4 coefficients.
//!
//! Convention: the forward transform is unnormalised, the inverse carries `1/n`.
//! A circulant (periodic stencil) operator acts on mode `k` as multiplication by
//! its symbol `σ_k`; its transpose has symbol `conj(σ_k)`.

use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{check_len, Error, Result};
use crate::grid::PeriodicGrid;
use crate::nn::CnnParams;
use crate::rhs::Rhs;
use crate::scalar::Scalar;

/// Planned forward and inverse transforms of one length.
#[derive(Clone)]
pub struct Fourier<T: Scalar> {
    n: usize,
    fwd: Arc<dyn Fft<T>>,
    inv: Arc<dyn Fft<T>>,
}

impl<T: Scalar> std::fmt::Debug for Fourier<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fourier").field("n", &self.n).finish()
    }
}

impl<T: Scalar> Fourier<T> {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || !n.is_multiple_of(2) {
            return Err(Error::Precondition(format!(
                "Fourier transforms need an even, positive length, got {n}"
            )));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn forward_in_place(&self, buf: &mut [Complex<T>]) {
        self.fwd.process(buf);
    }

    /// Inverse transform including the `1/n` factor.
    pub fn inverse_in_place(&self, buf: &mut [Complex<T>]) {
        self.inv.process(buf);
        let s = T::one() / T::of_usize(self.n);
        for c in buf {
            *c = c.scale(s);
        }
    }

    pub fn forward_real(&self, u: &[T]) -> Vec<Complex<T>> {
        let mut buf: Vec<Complex<T>> = u.iter().map(|&x| Complex::new(x, T::zero())).collect();
        self.forward_in_place(&mut buf);
        buf
    }

    /// Inverse transform keeping only the real part.
    pub fn inverse_real(&self, uh: &[Complex<T>]) -> Vec<T> {
        let mut buf = uh.to_vec();
        self.inverse_in_place(&mut buf);
        buf.into_iter().map(|c| c.re).collect()
    }

    /// Applies the circulant operator with the given symbol (or its transpose) to a real vector.
    pub fn apply_symbol(&self, symbol: &[Complex<T>], x: &[T], transpose: bool) -> Vec<T> {
        let mut buf: Vec<Complex<T>> = x.iter().map(|&v| Complex::new(v, T::zero())).collect();
        self.forward_in_place(&mut buf);
        for (b, s) in buf.iter_mut().zip(symbol) {
            *b *= if transpose { s.conj() } else { *s };
        }
        self.inverse_in_place(&mut buf);
        buf.into_iter().map(|c| c.re).collect()
    }
}

/// Forward DFT `û_k = Σ_j u_j e^{-2πijk/n}`.
pub fn dft<T: Scalar>(u: &[T]) -> Result<Vec<Complex<T>>> {
    Ok(Fourier::new(u.len())?.forward_real(u))
}

/// Inverse DFT with the `1/n` factor.
pub fn idft<T: Scalar>(uh: &[Complex<T>]) -> Result<Vec<Complex<T>>> {
    let f = Fourier::new(uh.len())?;
    let mut buf = uh.to_vec();
    f.inverse_in_place(&mut buf);
    Ok(buf)
}

/// The diagonal of `Λ`: `2πk/L` below the Nyquist mode, zero at it, `2π(k-n)/L` above.
pub fn wavenumbers<T: Scalar>(grid: &PeriodicGrid<T>) -> Vec<T> {
    let n = grid.n_x();
    let c = T::TAU() / grid.length();
    (0..n)
        .map(|k| {
            if k < n / 2 {
                c * T::of_usize(k)
            } else if k == n / 2 {
                T::zero()
            } else {
                -c * T::of_usize(n - k)
            }
        })
        .collect()
}

/// Largest violation of `û_{n-k} = conj(û_k)`.
pub fn conjugate_asymmetry<T: Scalar>(uh: &[Complex<T>]) -> T {
    let n = uh.len();
    (0..n)
        .map(|k| (uh[(n - k) % n] - uh[k].conj()).norm())
        .fold(T::zero(), T::max)
}

/// Pseudospectral Kuramoto-Sivashinsky model `(Λ² - Λ⁴)û - (i/2) Λ F((F⁻¹û)²)`.
#[derive(Debug, Clone)]
pub struct SpectralKs<T: Scalar = f64> {
    grid: PeriodicGrid<T>,
    fourier: Fourier<T>,
    lambda: Vec<T>,
}

impl<T: Scalar> SpectralKs<T> {
    pub fn new(grid: PeriodicGrid<T>) -> Result<Self> {
        Ok(Self {
            fourier: Fourier::new(grid.n_x())?,
            lambda: wavenumbers(&grid),
            grid,
        })
    }

    pub fn grid(&self) -> &PeriodicGrid<T> {
        &self.grid
    }

    pub fn fourier(&self) -> &Fourier<T> {
        &self.fourier
    }

    pub fn wavenumbers(&self) -> &[T] {
        &self.lambda
    }

    /// Per-mode eigenvalues `λ² - λ⁴` of the linear part.
    pub fn linear_symbol(&self) -> Vec<Complex<T>> {
        self.lambda
            .iter()
            .map(|&l| Complex::new(l * l - l * l * l * l, T::zero()))
            .collect()
    }

    /// The nonlinear term as a physical-space right-hand side.
    pub fn convection(&self) -> SpectralConvection<T> {
        SpectralConvection {
            fourier: self.fourier.clone(),
            lambda: self.lambda.clone(),
        }
    }

    /// Time derivative of the Fourier coefficients, optionally with the closure
    /// `F(NN(F⁻¹û))` added.
    pub fn eval_spectral(
        &self,
        uh: &[Complex<T>],
        closure: Option<&CnnParams<T>>,
    ) -> Result<Vec<Complex<T>>> {
        let n = self.grid.n_x();
        check_len("spectral state", n, uh.len())?;
        let scale = uh.iter().map(|c| c.norm()).fold(T::one(), T::max);
        let asym = conjugate_asymmetry(uh);
        if asym > T::lit(1e-10) * scale {
            return Err(Error::Precondition(format!(
                "spectral state is not conjugate-symmetric (violation {asym:e})"
            )));
        }
        let u = self.fourier.inverse_real(uh);
        let sq: Vec<T> = u.iter().map(|&x| x * x).collect();
        let sqh = self.fourier.forward_real(&sq);
        let half = T::lit(0.5);
        let mut out: Vec<Complex<T>> = (0..n)
            .map(|k| {
                let l = self.lambda[k];
                uh[k].scale(l * l - l * l * l * l) - Complex::new(T::zero(), half * l) * sqh[k]
            })
            .collect();
        if let Some(net) = closure {
            let y = net.forward(&u)?;
            for (o, c) in out.iter_mut().zip(self.fourier.forward_real(&y)) {
                *o += c;
            }
        }
        // the input passed the symmetry check; drop the roundoff asymmetry that
        // Λ⁴ would otherwise amplify
        let half_sum: Vec<Complex<T>> = (0..n)
            .map(|k| (out[k] + out[(n - k) % n].conj()).scale(half))
            .collect();
        Ok(half_sum)
    }
}

/// `u ↦ Re F⁻¹(-(i/2) Λ F(u²))`, the pseudospectral convection term in physical space.
#[derive(Debug, Clone)]
pub struct SpectralConvection<T: Scalar = f64> {
    fourier: Fourier<T>,
    lambda: Vec<T>,
}

impl<T: Scalar> SpectralConvection<T> {
    /// `D x` with `D` the spectral derivative (symbol `iλ`).
    fn derivative(&self, x: &[T]) -> Vec<T> {
        let mut buf: Vec<Complex<T>> = x.iter().map(|&v| Complex::new(v, T::zero())).collect();
        self.fourier.forward_in_place(&mut buf);
        for (b, &l) in buf.iter_mut().zip(&self.lambda) {
            *b *= Complex::new(T::zero(), l);
        }
        self.fourier.inverse_in_place(&mut buf);
        buf.into_iter().map(|c| c.re).collect()
    }
}

impl<T: Scalar> Rhs<T> for SpectralConvection<T> {
    fn dim(&self) -> usize {
        self.lambda.len()
    }

    fn eval_into(&self, u: &[T], out: &mut [T]) {
        let sq: Vec<T> = u.iter().map(|&x| x * x).collect();
        let d = self.derivative(&sq);
        let half = T::lit(0.5);
        for (o, v) in out.iter_mut().zip(d) {
            *o = -half * v;
        }
    }

    fn vjp_into(&self, u: &[T], w: &[T], grad_u: &mut [T], _grad_theta: &mut [T]) {
        // D is antisymmetric, so wᵀ(-½ D diag(2u)) = u ⊙ (D w)
        let dw = self.derivative(w);
        for ((g, &x), d) in grad_u.iter_mut().zip(u).zip(dw) {
            *g += x * d;
        }
    }
}

/// Number of contour points used by [`Etdrk4Coeffs::new`].
pub const CONTOUR_POINTS: usize = 32;
/// Contour radius used by [`Etdrk4Coeffs::new`].
pub const CONTOUR_RADIUS: f64 = 1.0;

/// Per-mode ETDRK4 (Cox-Matthews) coefficients for step `h`:
/// `e = e^z`, `e2 = e^{z/2}`, `q = h(e^{z/2}-1)/z` and the three weights
/// `f1, f2, f3` of the final combination, with `z = σh`.
#[derive(Debug, Clone, PartialEq)]
pub struct Etdrk4Coeffs<T = f64> {
    pub h: T,
    pub e: Vec<Complex<T>>,
    pub e2: Vec<Complex<T>>,
    pub q: Vec<Complex<T>>,
    pub f1: Vec<Complex<T>>,
    pub f2: Vec<Complex<T>>,
    pub f3: Vec<Complex<T>>,
}

impl<T: Scalar> Etdrk4Coeffs<T> {
    pub fn new(symbol: &[Complex<T>], h: T) -> Result<Self> {
        Self::with_contour(symbol, h, CONTOUR_POINTS, T::lit(CONTOUR_RADIUS))
    }

    /// Contour-integral evaluation with `m` points on a circle of radius `r` around each `z`.
    pub fn with_contour(symbol: &[Complex<T>], h: T, m: usize, r: T) -> Result<Self> {
        if !(h > T::zero()) || !h.is_finite() {
            return Err(Error::Precondition(format!("ETDRK4 step must be positive, got {h}")));
        }
        if m == 0 || !(r > T::zero()) {
            return Err(Error::Precondition("contour needs points and a positive radius".into()));
        }
        // the φ-combinations are evaluated in binary64 regardless of T
        let hf = h.as_f64();
        let rf = r.as_f64();
        let roots: Vec<Complex<f64>> = (0..m)
            .map(|j| {
                let th = std::f64::consts::TAU * (j as f64 + 0.5) / m as f64;
                Complex::from_polar(rf, th)
            })
            .collect();
        let to_t = |c: Complex<f64>| Complex::new(T::lit(c.re), T::lit(c.im));
        let n = symbol.len();
        let mut out = Self {
            h,
            e: Vec::with_capacity(n),
            e2: Vec::with_capacity(n),
            q: Vec::with_capacity(n),
            f1: Vec::with_capacity(n),
            f2: Vec::with_capacity(n),
            f3: Vec::with_capacity(n),
        };
        for s in symbol {
            let z = Complex::new(s.re.as_f64(), s.im.as_f64()) * hf;
            let mut acc = [Complex::new(0.0, 0.0); 4];
            for &p in &roots {
                let w = z + p;
                let ew = w.exp();
                let w3 = w * w * w;
                acc[0] += ((w * 0.5).exp() - 1.0) / w;
                acc[1] += (-4.0 - w + ew * (4.0 - 3.0 * w + w * w)) / w3;
                acc[2] += (2.0 + w + ew * (w - 2.0)) / w3;
                acc[3] += (-4.0 - 3.0 * w - w * w + ew * (4.0 - w)) / w3;
            }
            let real = z.im == 0.0;
            let fin = |a: Complex<f64>| {
                let v = a * (hf / m as f64);
                to_t(if real { Complex::new(v.re, 0.0) } else { v })
            };
            out.e.push(to_t(z.exp()));
            out.e2.push(to_t((z * 0.5).exp()));
            out.q.push(fin(acc[0]));
            out.f1.push(fin(acc[1]));
            out.f2.push(fin(acc[2]));
            out.f3.push(fin(acc[3]));
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.e.len()
    }

    pub fn is_empty(&self) -> bool {
        self.e.is_empty()
    }
}
