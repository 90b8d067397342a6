//! The two fixed convolutional closure networks.
//!
//! Input `u` (one channel) is augmented to `[u, u²]`, passed through a stack of
//! centred circular convolutions, and the single output channel is projected
//! onto zero-sum vectors (`v ↦ v - mean(v)`), so the closure never changes the
//! total momentum.
//!
//! Parameter layout, per layer in order: weights indexed `[out][in][tap]`, then
//! one bias per output channel.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{check_len, Error, Result};
use crate::io::{read_f64, read_u32, write_f64, write_u32};
use crate::scalar::{dot, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchId {
    /// Two 9-wide layers, 57 parameters.
    Small,
    /// Six 5-wide layers, 533 parameters.
    Large,
}

impl ArchId {
    pub fn code(self) -> u32 {
        match self {
            ArchId::Small => 1,
            ArchId::Large => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            1 => Some(ArchId::Small),
            2 => Some(ArchId::Large),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ArchId::Small => "small",
            ArchId::Large => "large",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayer {
    pub width: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub activation: Activation,
}

impl ConvLayer {
    const fn new(width: usize, c_in: usize, c_out: usize, activation: Activation) -> Self {
        Self {
            width,
            c_in,
            c_out,
            activation,
        }
    }

    pub fn n_weights(&self) -> usize {
        self.width * self.c_in * self.c_out
    }

    pub fn n_params(&self) -> usize {
        self.n_weights() + self.c_out
    }

    fn radius(&self) -> usize {
        self.width / 2
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CnnArchitecture {
    pub id: ArchId,
    pub layers: Vec<ConvLayer>,
}

impl CnnArchitecture {
    pub fn small() -> Self {
        use Activation::*;
        Self {
            id: ArchId::Small,
            layers: vec![ConvLayer::new(9, 2, 2, Tanh), ConvLayer::new(9, 2, 1, Identity)],
        }
    }

    pub fn large() -> Self {
        use Activation::*;
        Self {
            id: ArchId::Large,
            layers: vec![
                ConvLayer::new(5, 2, 4, Tanh),
                ConvLayer::new(5, 4, 6, Tanh),
                ConvLayer::new(5, 6, 6, Tanh),
                ConvLayer::new(5, 6, 4, Tanh),
                ConvLayer::new(5, 4, 2, Tanh),
                ConvLayer::new(5, 2, 1, Identity),
            ],
        }
    }

    pub fn from_id(id: ArchId) -> Self {
        match id {
            ArchId::Small => Self::small(),
            ArchId::Large => Self::large(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(ConvLayer::n_params).sum()
    }

    /// Offset of each layer's block in the flat parameter vector.
    pub fn offsets(&self) -> Vec<usize> {
        self.layers
            .iter()
            .scan(0, |acc, l| {
                let o = *acc;
                *acc += l.n_params();
                Some(o)
            })
            .collect()
    }

    /// Index of the final layer's single bias.
    pub fn last_bias_index(&self) -> usize {
        self.n_params() - 1
    }
}

/// Zero-sum projection `v ↦ v - mean(v)`. Self-adjoint, so the backward pass reuses it.
pub fn project_zero_sum<T: Scalar>(v: &mut [T]) {
    if v.is_empty() {
        return;
    }
    let mean = v.iter().copied().sum::<T>() / T::of_usize(v.len());
    for x in v {
        *x -= mean;
    }
}

/// Trainable parameters together with the architecture they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnParams<T = f64> {
    arch: CnnArchitecture,
    theta: Vec<T>,
}

/// Intermediate values of one forward pass, kept for the backward pass.
struct Trace<T> {
    /// Circularly padded input of each layer, `c_in × (n + 2r)`.
    padded: Vec<Vec<T>>,
    /// Post-activation output of each layer, `c_out × n`.
    outputs: Vec<Vec<T>>,
}

impl<T: Scalar> CnnParams<T> {
    pub fn new(arch: CnnArchitecture, theta: Vec<T>) -> Result<Self> {
        check_len("network parameters", arch.n_params(), theta.len())?;
        Ok(Self { arch, theta })
    }

    pub fn zeros(arch: CnnArchitecture) -> Self {
        let theta = vec![T::zero(); arch.n_params()];
        Self { arch, theta }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(arch: CnnArchitecture, rng: &mut R) -> Self {
        let mut theta = Vec::with_capacity(arch.n_params());
        for l in &arch.layers {
            let fan_in = (l.c_in * l.width) as f64;
            let fan_out = (l.c_out * l.width) as f64;
            let limit = (6.0 / (fan_in + fan_out)).sqrt();
            for _ in 0..l.n_weights() {
                theta.push(T::lit(rng.random_range(-limit..limit)));
            }
            theta.extend(std::iter::repeat_n(T::zero(), l.c_out));
        }
        Self { arch, theta }
    }

    pub fn arch(&self) -> &CnnArchitecture {
        &self.arch
    }

    pub fn theta(&self) -> &[T] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [T] {
        &mut self.theta
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.theta.iter().all(|x| x.is_finite())
    }

    /// Network output for state `u`; always sums to zero.
    pub fn forward(&self, u: &[T]) -> Result<Vec<T>> {
        if u.is_empty() {
            return Err(Error::Precondition("empty network input".into()));
        }
        let mut out = vec![T::zero(); u.len()];
        self.forward_into(u, &mut out);
        Ok(out)
    }

    /// Writes the network output into `out` (same length as `u`).
    pub fn forward_into(&self, u: &[T], out: &mut [T]) {
        assert_eq!(u.len(), out.len(), "network output length");
        let trace = self.trace(u);
        out.copy_from_slice(trace.outputs.last().expect("at least one layer"));
        project_zero_sum(out);
    }

    /// Gradients of `⟨w, forward(u)⟩` with respect to the parameters and to `u`.
    pub fn backward(&self, u: &[T], w: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        check_len("network cotangent", u.len(), w.len())?;
        if u.is_empty() {
            return Err(Error::Precondition("empty network input".into()));
        }
        let mut gt = vec![T::zero(); self.theta.len()];
        let mut gu = vec![T::zero(); u.len()];
        self.backward_into(u, w, &mut gu, &mut gt);
        Ok((gt, gu))
    }

    /// Accumulates `wᵀ ∂NN/∂u` into `grad_u` and `wᵀ ∂NN/∂θ` into `grad_theta`.
    pub fn backward_into(&self, u: &[T], w: &[T], grad_u: &mut [T], grad_theta: &mut [T]) {
        let n = u.len();
        assert_eq!(w.len(), n, "network cotangent length");
        assert_eq!(grad_u.len(), n, "network input gradient length");
        assert_eq!(grad_theta.len(), self.theta.len(), "network parameter gradient length");
        if w.iter().all(|x| x.is_zero()) {
            return;
        }
        let trace = self.trace(u);
        let offsets = self.arch.offsets();
        let last = self.arch.layers.len() - 1;

        // cotangent of the last layer's (identity-activated) output
        let mut g = w.to_vec();
        project_zero_sum(&mut g);

        for (li, layer) in self.arch.layers.iter().enumerate().rev() {
            let off = offsets[li];
            let (weights, _) = self.theta[off..off + layer.n_params()].split_at(layer.n_weights());
            let (gw, gb) =
                grad_theta[off..off + layer.n_params()].split_at_mut(layer.n_weights());
            if layer.activation == Activation::Tanh {
                for (gi, &y) in g.iter_mut().zip(&trace.outputs[li]) {
                    *gi *= T::one() - y * y;
                }
            }
            let gx = conv_backward(layer, weights, &trace.padded[li], &g, n, gw, gb);
            if li == last {
                // the projection annihilates constants, so this bias has no effect
                gb.iter_mut().for_each(|x| *x = T::zero());
            }
            g = gx;
        }

        // augmentation [u, u²]
        let (g_lin, g_sq) = g.split_at(n);
        for i in 0..n {
            grad_u[i] += g_lin[i] + T::lit(2.0) * u[i] * g_sq[i];
        }
    }

    fn trace(&self, u: &[T]) -> Trace<T> {
        let n = u.len();
        let mut x: Vec<T> = u.iter().copied().chain(u.iter().map(|&v| v * v)).collect();
        let offsets = self.arch.offsets();
        let mut padded = Vec::with_capacity(self.arch.layers.len());
        let mut outputs = Vec::with_capacity(self.arch.layers.len());
        for (li, layer) in self.arch.layers.iter().enumerate() {
            let off = offsets[li];
            let (weights, biases) =
                self.theta[off..off + layer.n_params()].split_at(layer.n_weights());
            let xp = pad_circular(&x, layer.c_in, n, layer.radius());
            let mut y = conv_forward(layer, weights, biases, &xp, n);
            if layer.activation == Activation::Tanh {
                for v in &mut y {
                    *v = tanh(*v);
                }
            }
            padded.push(xp);
            outputs.push(y.clone());
            x = y;
        }
        Trace { padded, outputs }
    }
}

/// `tanh` through a single `exp`; absolute error stays at roundoff level and
/// the saturated tails are exact.
fn tanh<T: Scalar>(x: T) -> T {
    let two = T::lit(2.0);
    T::one() - two / ((two * x).exp() + T::one())
}

fn pad_circular<T: Scalar>(x: &[T], channels: usize, n: usize, r: usize) -> Vec<T> {
    let pw = n + 2 * r;
    let mut xp = Vec::with_capacity(channels * pw);
    for c in 0..channels {
        let row = &x[c * n..(c + 1) * n];
        for j in 0..pw {
            xp.push(row[(j + n * (r / n + 1) - r) % n]);
        }
    }
    xp
}

fn conv_forward<T: Scalar>(
    layer: &ConvLayer,
    weights: &[T],
    biases: &[T],
    xp: &[T],
    n: usize,
) -> Vec<T> {
    let pw = n + 2 * layer.radius();
    let mut out = vec![T::zero(); layer.c_out * n];
    for (o, row) in out.chunks_exact_mut(n).enumerate() {
        row.fill(biases[o]);
        for c in 0..layer.c_in {
            let xrow = &xp[c * pw..(c + 1) * pw];
            let wrow = &weights[(o * layer.c_in + c) * layer.width..][..layer.width];
            for (k, &wk) in wrow.iter().enumerate() {
                for (r, &xv) in row.iter_mut().zip(&xrow[k..k + n]) {
                    *r += wk * xv;
                }
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients; returns the cotangent of the (unpadded) layer input.
fn conv_backward<T: Scalar>(
    layer: &ConvLayer,
    weights: &[T],
    xp: &[T],
    gz: &[T],
    n: usize,
    gw: &mut [T],
    gb: &mut [T],
) -> Vec<T> {
    let r = layer.radius();
    let pw = n + 2 * r;
    let mut gxp = vec![T::zero(); layer.c_in * pw];
    for (o, grow) in gz.chunks_exact(n).enumerate() {
        gb[o] += grow.iter().copied().sum::<T>();
        for c in 0..layer.c_in {
            let xrow = &xp[c * pw..(c + 1) * pw];
            let base = (o * layer.c_in + c) * layer.width;
            for k in 0..layer.width {
                gw[base + k] += dot(grow, &xrow[k..k + n]);
                let wk = weights[base + k];
                for (a, &g) in gxp[c * pw + k..c * pw + k + n].iter_mut().zip(grow) {
                    *a += wk * g;
                }
            }
        }
    }
    let mut gx = vec![T::zero(); layer.c_in * n];
    for c in 0..layer.c_in {
        for j in 0..pw {
            gx[c * n + (j + n * (r / n + 1) - r) % n] += gxp[c * pw + j];
        }
    }
    gx
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"NCP1";
const CHECKPOINT_VERSION: u32 = 1;

/// Writes the "NCP1" checkpoint: magic, version, architecture id, parameter count
/// (all little-endian `u32`), then the parameters as little-endian binary64.
pub fn write_checkpoint<T: Scalar, W: Write>(params: &CnnParams<T>, mut w: W) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    write_u32(&mut w, CHECKPOINT_VERSION)?;
    write_u32(&mut w, params.arch.id.code())?;
    write_u32(&mut w, params.theta.len() as u32)?;
    for &x in &params.theta {
        write_f64(&mut w, x.as_f64())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<T: Scalar, R: Read>(mut r: R) -> Result<CnnParams<T>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("checkpoint truncated before magic".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let code = read_u32(&mut r)?;
    let arch = ArchId::from_code(code)
        .map(CnnArchitecture::from_id)
        .ok_or_else(|| Error::Format(format!("unknown architecture id {code}")))?;
    let count = read_u32(&mut r)? as usize;
    if count != arch.n_params() {
        return Err(Error::Format(format!(
            "checkpoint declares {count} parameters but the {} architecture has {}",
            arch.id.name(),
            arch.n_params()
        )));
    }
    let mut theta = Vec::with_capacity(count);
    for _ in 0..count {
        theta.push(T::lit(read_f64(&mut r)?));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint parameters".into()));
    }
    CnnParams::new(arch, theta)
}

pub fn save_checkpoint<T: Scalar>(params: &CnnParams<T>, path: impl AsRef<Path>) -> Result<()> {
    write_checkpoint(params, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<CnnParams<T>> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

/// Loads a checkpoint and insists on a particular architecture.
pub fn load_checkpoint_for<T: Scalar>(
    path: impl AsRef<Path>,
    expected: &CnnArchitecture,
) -> Result<CnnParams<T>> {
    let p: CnnParams<T> = load_checkpoint(path)?;
    if p.arch.id != expected.id {
        return Err(Error::ArchitectureMismatch {
            expected: expected.id.name().into(),
            expected_params: expected.n_params(),
            found: p.arch.id.name().into(),
            found_params: p.len(),
        });
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::shift;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-scale..scale)).collect()
    }

    fn random_params(arch: CnnArchitecture, seed: u64) -> CnnParams<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = random_vec(&mut rng, arch.n_params(), 0.5);
        CnnParams::new(arch, theta).unwrap()
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(CnnArchitecture::small().n_params(), 9 * 2 * 2 + 2 + 9 * 2 + 1);
        assert_eq!(CnnArchitecture::small().n_params(), 57);
        assert_eq!(CnnArchitecture::large().n_params(), 44 + 126 + 186 + 124 + 42 + 11);
        assert_eq!(CnnArchitecture::large().n_params(), 533);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(CnnParams::<f64>::init(CnnArchitecture::small(), &mut rng).len(), 57);
        assert_eq!(CnnParams::<f64>::init(CnnArchitecture::large(), &mut rng).len(), 533);
    }

    #[test]
    fn zero_params_give_zero_output() {
        let p = CnnParams::<f64>::zeros(CnnArchitecture::large());
        let u: Vec<f64> = (0..32).map(|i| (i as f64 * 0.3).sin() + 1.0).collect();
        assert!(p.forward(&u).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn init_is_reproducible_with_zero_biases() {
        let a = CnnParams::<f64>::init(CnnArchitecture::small(), &mut ChaCha8Rng::seed_from_u64(5));
        let b = CnnParams::<f64>::init(CnnArchitecture::small(), &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
        let arch = CnnArchitecture::small();
        for (off, l) in arch.offsets().iter().zip(&arch.layers) {
            let biases = &a.theta()[off + l.n_weights()..off + l.n_params()];
            assert!(biases.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn output_sums_to_zero_and_is_shift_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for arch in [CnnArchitecture::small(), CnnArchitecture::large()] {
            let p = random_params(arch, 2);
            let u = random_vec(&mut rng, 64, 2.0);
            let y = p.forward(&u).unwrap();
            assert!(y.iter().sum::<f64>().abs() < 1e-12);
            for s in [1, 5, 63] {
                let ys = p.forward(&shift(&u, s)).unwrap();
                for (a, b) in ys.iter().zip(shift(&y, s)) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn projection_is_idempotent() {
        let mut v: Vec<f64> = (0..17).map(|i| (i as f64).exp().ln_1p()).collect();
        project_zero_sum(&mut v);
        let once = v.clone();
        project_zero_sum(&mut v);
        for (a, b) in once.iter().zip(&v) {
            assert!((a - b).abs() <= 1e-15);
        }
    }

    /// Central finite differences of `⟨w, forward⟩` with respect to each parameter.
    fn fd_param_grad(p: &CnnParams<f64>, u: &[f64], w: &[f64], h: f64) -> Vec<f64> {
        (0..p.len())
            .map(|j| {
                let mut pp = p.clone();
                pp.theta_mut()[j] += h;
                let mut pm = p.clone();
                pm.theta_mut()[j] -= h;
                let fp: f64 = pp.forward(u).unwrap().iter().zip(w).map(|(a, b)| a * b).sum();
                let fm: f64 = pm.forward(u).unwrap().iter().zip(w).map(|(a, b)| a * b).sum();
                (fp - fm) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-300);
        num / den
    }

    #[test]
    fn small_net_param_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = random_params(CnnArchitecture::small(), 12);
        let u = random_vec(&mut rng, 16, 1.5);
        let w = random_vec(&mut rng, 16, 1.0);
        let (gt, _) = p.backward(&u, &w).unwrap();
        let fd = fd_param_grad(&p, &u, &w, 1e-6);
        assert!(rel_err(&gt, &fd) < 1e-6, "{}", rel_err(&gt, &fd));
        for (j, (a, b)) in gt.iter().zip(&fd).enumerate() {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-3), "param {j}: {a} vs {b}");
        }
        assert_eq!(gt[p.arch().last_bias_index()], 0.0);
    }

    #[test]
    fn large_net_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = random_params(CnnArchitecture::large(), 22);
        let u = random_vec(&mut rng, 16, 1.5);
        let w = random_vec(&mut rng, 16, 1.0);
        let (gt, gu) = p.backward(&u, &w).unwrap();
        assert!(rel_err(&gt, &fd_param_grad(&p, &u, &w, 1e-6)) < 1e-6);
        assert_eq!(gt[p.arch().last_bias_index()], 0.0);
        let h = 1e-6;
        let fd_u: Vec<f64> = (0..u.len())
            .map(|i| {
                let mut up = u.clone();
                up[i] += h;
                let mut um = u.clone();
                um[i] -= h;
                let fp: f64 = p.forward(&up).unwrap().iter().zip(&w).map(|(a, b)| a * b).sum();
                let fm: f64 = p.forward(&um).unwrap().iter().zip(&w).map(|(a, b)| a * b).sum();
                (fp - fm) / (2.0 * h)
            })
            .collect();
        assert!(rel_err(&gu, &fd_u) < 1e-6);
    }

    #[test]
    fn zero_cotangent_gives_zero_gradients() {
        let p = random_params(CnnArchitecture::small(), 4);
        let u = vec![0.3; 16];
        let (gt, gu) = p.backward(&u, &[0.0; 16]).unwrap();
        assert!(gt.iter().chain(&gu).all(|&x| x == 0.0));
    }

    #[test]
    fn directional_derivative_converges_at_second_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let p = random_params(CnnArchitecture::small(), 32);
        let u = random_vec(&mut rng, 32, 1.0);
        let w = random_vec(&mut rng, 32, 1.0);
        let v = random_vec(&mut rng, p.len(), 1.0);
        let (gt, _) = p.backward(&u, &w).unwrap();
        let exact: f64 = gt.iter().zip(&v).map(|(a, b)| a * b).sum();
        let err = |h: f64| {
            let mut pp = p.clone();
            let mut pm = p.clone();
            for j in 0..p.len() {
                pp.theta_mut()[j] += h * v[j];
                pm.theta_mut()[j] -= h * v[j];
            }
            let fp: f64 = pp.forward(&u).unwrap().iter().zip(&w).map(|(a, b)| a * b).sum();
            let fm: f64 = pm.forward(&u).unwrap().iter().zip(&w).map(|(a, b)| a * b).sum();
            ((fp - fm) / (2.0 * h) - exact).abs()
        };
        let (e1, e2) = (err(1e-2), err(5e-3));
        let order = (e1 / e2).log2();
        assert!(order > 1.8, "observed order {order}");
    }

    #[test]
    fn checkpoint_roundtrip_and_errors() {
        let p = random_params(CnnArchitecture::large(), 7);
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 8 * 533);
        let q: CnnParams<f64> = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(
            p.theta().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            q.theta().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );

        let err = read_checkpoint::<f64, _>(&buf[..buf.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Format(_) | Error::Io(_)), "{err}");
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint::<f64, _>(&bad[..]), Err(Error::Format(_))));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ncp");
        save_checkpoint(&p, &path).unwrap();
        let err = load_checkpoint_for::<f64>(&path, &CnnArchitecture::small()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("57") && msg.contains("533"), "{msg}");
    }

    #[test]
    fn works_in_single_precision() {
        let p64 = random_params(CnnArchitecture::small(), 8);
        let p32 = CnnParams::<f32>::new(
            CnnArchitecture::small(),
            p64.theta().iter().map(|&x| x as f32).collect(),
        )
        .unwrap();
        let u: Vec<f64> = (0..16).map(|i| (i as f64 * 0.4).cos()).collect();
        let u32: Vec<f32> = u.iter().map(|&x| x as f32).collect();
        let y64 = p64.forward(&u).unwrap();
        let y32 = p32.forward(&u32).unwrap();
        for (a, b) in y64.iter().zip(&y32) {
            assert!((a - *b as f64).abs() < 1e-4);
        }
    }
}
