//! Periodic grid geometry, snapshot containers and dataset assembly.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_len, Error, Result};
use crate::scalar::Scalar;

/// Smallest admissible cell count.
pub const MIN_CELLS: usize = 4;

/// Uniform 1-D periodic layout of `n_x` finite volumes on `[0, length)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodicGrid<T = f64> {
    n_x: usize,
    length: T,
}

impl<T: Scalar> PeriodicGrid<T> {
    /// Spectral routines need an even mode count.
    pub fn new(n_x: usize, length: T) -> Result<Self> {
        if n_x < MIN_CELLS || !n_x.is_multiple_of(2) {
            return Err(Error::Precondition(format!(
                "grid needs an even cell count >= {MIN_CELLS}, got {n_x}"
            )));
        }
        if !(length > T::zero()) || !length.is_finite() {
            return Err(Error::Precondition(format!(
                "domain length must be positive and finite, got {length}"
            )));
        }
        Ok(Self { n_x, length })
    }

    #[inline]
    pub fn n_x(&self) -> usize {
        self.n_x
    }

    #[inline]
    pub fn length(&self) -> T {
        self.length
    }

    #[inline]
    pub fn dx(&self) -> T {
        self.length / T::of_usize(self.n_x)
    }

    /// Cell centres `(i + 1/2) dx`.
    pub fn centres(&self) -> Vec<T> {
        let dx = self.dx();
        (0..self.n_x)
            .map(|i| (T::of_usize(i) + T::lit(0.5)) * dx)
            .collect()
    }

    /// The grid obtained by merging `factor` neighbouring cells.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.n_x.is_multiple_of(factor) {
            return Err(Error::Precondition(format!(
                "downsampling factor {factor} does not divide {}",
                self.n_x
            )));
        }
        Self::new(self.n_x / factor, self.length)
    }
}

/// Which PDE a dataset was generated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Equation {
    Burgers,
    KuramotoSivashinsky,
}

impl Equation {
    /// Tag stored in the dataset file header.
    pub fn tag(self) -> u32 {
        match self {
            Equation::Burgers => 1,
            Equation::KuramotoSivashinsky => 2,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            1 => Some(Equation::Burgers),
            2 => Some(Equation::KuramotoSivashinsky),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn byte(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Validation => 1,
            Split::Test => 2,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Split::Train),
            1 => Some(Split::Validation),
            2 => Some(Split::Test),
            _ => None,
        }
    }
}

/// A sequence of equally spaced snapshots, stored time-major (one contiguous row per snapshot).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T = f64> {
    pub grid: PeriodicGrid<T>,
    pub t0: T,
    pub dt_snap: T,
    states: Vec<T>,
    derivatives: Option<Vec<T>>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn new(
        grid: PeriodicGrid<T>,
        t0: T,
        dt_snap: T,
        states: Vec<T>,
        derivatives: Option<Vec<T>>,
    ) -> Result<Self> {
        let n = grid.n_x();
        if states.is_empty() || !states.len().is_multiple_of(n) {
            return Err(Error::Precondition(format!(
                "state buffer of length {} is not a positive multiple of n_x = {n}",
                states.len()
            )));
        }
        if let Some(d) = &derivatives {
            check_len("trajectory derivatives", states.len(), d.len())?;
        }
        Ok(Self {
            grid,
            t0,
            dt_snap,
            states,
            derivatives,
        })
    }

    /// Builds a trajectory from a list of equally long snapshots.
    pub fn from_snapshots(
        grid: PeriodicGrid<T>,
        t0: T,
        dt_snap: T,
        snapshots: &[Vec<T>],
    ) -> Result<Self> {
        let n = grid.n_x();
        let mut states = Vec::with_capacity(snapshots.len() * n);
        for s in snapshots {
            check_len("snapshot", n, s.len())?;
            states.extend_from_slice(s);
        }
        Self::new(grid, t0, dt_snap, states, None)
    }

    #[inline]
    pub fn n_x(&self) -> usize {
        self.grid.n_x()
    }

    #[inline]
    pub fn n_snapshots(&self) -> usize {
        self.states.len() / self.grid.n_x()
    }

    #[inline]
    pub fn snapshot(&self, i: usize) -> &[T] {
        let n = self.n_x();
        &self.states[i * n..(i + 1) * n]
    }

    pub fn derivative(&self, i: usize) -> Option<&[T]> {
        let n = self.n_x();
        self.derivatives.as_ref().map(|d| &d[i * n..(i + 1) * n])
    }

    pub fn has_derivatives(&self) -> bool {
        self.derivatives.is_some()
    }

    pub fn states(&self) -> &[T] {
        &self.states
    }

    pub fn derivatives(&self) -> Option<&[T]> {
        self.derivatives.as_deref()
    }

    pub fn time(&self, i: usize) -> T {
        self.t0 + T::of_usize(i) * self.dt_snap
    }

    pub fn times(&self) -> Vec<T> {
        (0..self.n_snapshots()).map(|i| self.time(i)).collect()
    }

    pub fn with_derivatives(mut self, derivatives: Vec<T>) -> Result<Self> {
        check_len("trajectory derivatives", self.states.len(), derivatives.len())?;
        self.derivatives = Some(derivatives);
        Ok(self)
    }

    /// Copy of snapshots `[start, start + len)`, keeping derivatives when present.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.n_snapshots() {
            return Err(Error::Precondition(format!(
                "window [{start}, {}) outside trajectory of {} snapshots",
                start + len,
                self.n_snapshots()
            )));
        }
        let n = self.n_x();
        let range = start * n..(start + len) * n;
        Ok(Self {
            grid: self.grid,
            t0: self.time(start),
            dt_snap: self.dt_snap,
            states: self.states[range.clone()].to_vec(),
            derivatives: self.derivatives.as_ref().map(|d| d[range].to_vec()),
        })
    }
}

/// A collection of trajectories sharing grid, spacing and length, with split labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T = f64> {
    pub equation: Equation,
    pub seed: u64,
    trajectories: Vec<Trajectory<T>>,
    splits: Vec<Split>,
}

impl<T: Scalar> Dataset<T> {
    /// All trajectories are labelled `Train` initially.
    pub fn new(equation: Equation, seed: u64, trajectories: Vec<Trajectory<T>>) -> Result<Self> {
        let splits = vec![Split::Train; trajectories.len()];
        Self::with_splits(equation, seed, trajectories, splits)
    }

    pub fn with_splits(
        equation: Equation,
        seed: u64,
        trajectories: Vec<Trajectory<T>>,
        splits: Vec<Split>,
    ) -> Result<Self> {
        check_len("split labels", trajectories.len(), splits.len())?;
        if let Some(first) = trajectories.first() {
            for t in &trajectories[1..] {
                if t.grid != first.grid
                    || t.dt_snap != first.dt_snap
                    || t.t0 != first.t0
                    || t.n_snapshots() != first.n_snapshots()
                    || t.has_derivatives() != first.has_derivatives()
                {
                    return Err(Error::Precondition(
                        "dataset trajectories must share grid, t0, spacing, length and derivative presence".into(),
                    ));
                }
            }
        }
        Ok(Self {
            equation,
            seed,
            trajectories,
            splits,
        })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn trajectories(&self) -> &[Trajectory<T>] {
        &self.trajectories
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn grid(&self) -> Option<PeriodicGrid<T>> {
        self.trajectories.first().map(|t| t.grid)
    }

    pub fn n_snapshots(&self) -> usize {
        self.trajectories.first().map_or(0, |t| t.n_snapshots())
    }

    pub fn has_derivatives(&self) -> bool {
        self.trajectories.first().is_some_and(|t| t.has_derivatives())
    }

    /// Trajectories carrying the given label, in stored order.
    pub fn subset(&self, split: Split) -> Vec<&Trajectory<T>> {
        self.trajectories
            .iter()
            .zip(&self.splits)
            .filter(|(_, s)| **s == split)
            .map(|(t, _)| t)
            .collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.splits.iter().filter(|s| **s == split).count()
    }

    pub fn into_trajectories(self) -> Vec<Trajectory<T>> {
        self.trajectories
    }
}

/// Relabels `ds` in stored order: first `train`, then `validation`, then `test` trajectories.
pub fn split_dataset<T: Scalar>(
    mut ds: Dataset<T>,
    (train, validation, test): (usize, usize, usize),
) -> Result<Dataset<T>> {
    if train + validation + test != ds.len() {
        return Err(Error::Precondition(format!(
            "split counts {train}+{validation}+{test} do not sum to {} trajectories",
            ds.len()
        )));
    }
    ds.splits = std::iter::repeat_n(Split::Train, train)
        .chain(std::iter::repeat_n(Split::Validation, validation))
        .chain(std::iter::repeat_n(Split::Test, test))
        .collect();
    Ok(ds)
}

/// Number of Fourier modes excited in a random initial state.
pub const INITIAL_MAX_WAVENUMBER: usize = 10;
/// Peak amplitude of a random initial state.
pub const INITIAL_PEAK: f64 = 2.0;

/// Sum of sine and cosine waves with wave numbers `1..=10` and unit complex Gaussian
/// amplitudes, rescaled so that `max |u_i| = 2`.
///
/// Draw order: for each `k`, real and imaginary part of the `+k` amplitude, then of the `-k` one.
pub fn random_initial_state<T: Scalar, R: Rng + ?Sized>(
    grid: &PeriodicGrid<T>,
    rng: &mut R,
) -> Result<Vec<T>> {
    let n = grid.n_x();
    if n < 32 {
        return Err(Error::Precondition(format!(
            "random initial states need n_x >= 32 to resolve wave number {INITIAL_MAX_WAVENUMBER}, got {n}"
        )));
    }
    let mut amps = Vec::with_capacity(INITIAL_MAX_WAVENUMBER);
    for _ in 0..INITIAL_MAX_WAVENUMBER {
        let pos: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let neg: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
        amps.push((pos, neg));
    }
    let mut u: Vec<f64> = (0..n)
        .map(|i| {
            amps.iter()
                .enumerate()
                .map(|(k, (p, m))| {
                    let phase = 2.0 * PI * ((k + 1) * i % n) as f64 / n as f64;
                    let (s, c) = phase.sin_cos();
                    // Re(p e^{i phase}) + Re(m e^{-i phase})
                    (p[0] * c - p[1] * s) + (m[0] * c + m[1] * s)
                })
                .sum()
        })
        .collect();
    let peak = u.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let scale = INITIAL_PEAK / peak;
    for x in &mut u {
        *x *= scale;
    }
    Ok(u.into_iter().map(T::lit).collect())
}

/// Averages every `factor` neighbouring cells of a single snapshot.
pub fn downsample_state<T: Scalar>(fine: &[T], factor: usize) -> Result<Vec<T>> {
    if factor == 0 || !fine.len().is_multiple_of(factor) {
        return Err(Error::Precondition(format!(
            "downsampling factor {factor} does not divide {}",
            fine.len()
        )));
    }
    let inv = T::one() / T::of_usize(factor);
    Ok(fine
        .chunks_exact(factor)
        .map(|c| c.iter().copied().sum::<T>() * inv)
        .collect())
}

/// Chunk-mean downsampling in space of states and (when present) derivatives.
pub fn downsample<T: Scalar>(fine: &Trajectory<T>, factor: usize) -> Result<Trajectory<T>> {
    let grid = fine.grid.coarsen(factor)?;
    let states = downsample_state(&fine.states, factor)?;
    let derivatives = fine
        .derivatives
        .as_ref()
        .map(|d| downsample_state(d, factor))
        .transpose()?;
    Trajectory::new(grid, fine.t0, fine.dt_snap, states, derivatives)
}

/// Circular shift by `s` cells: `out[(i + s) mod n] = u[i]`.
pub fn shift<T: Copy>(u: &[T], s: usize) -> Vec<T> {
    let n = u.len();
    let mut out = u.to_vec();
    out.rotate_right(s % n.max(1));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grid_rejects_odd_and_small() {
        assert!(PeriodicGrid::new(7, 1.0).is_err());
        assert!(PeriodicGrid::new(9, 1.0).is_err());
        assert!(PeriodicGrid::new(2, 1.0).is_err());
        assert!(PeriodicGrid::new(8, 0.0).is_err());
        let g = PeriodicGrid::new(64, 1.0).unwrap();
        assert_eq!(g.dx() * 64.0, 1.0);
    }

    #[test]
    fn initial_state_peak_mean_and_band() {
        let g = PeriodicGrid::new(128, 1.0).unwrap();
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u: Vec<f64> = random_initial_state(&g, &mut rng).unwrap();
            let peak = u.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
            assert!((peak - 2.0).abs() < 1e-12);
            let mean = u.iter().sum::<f64>() / u.len() as f64;
            assert!(mean.abs() < 1e-12);
            // direct DFT: only |k| <= 10 present
            let n = u.len();
            for k in 11..n / 2 {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, x) in u.iter().enumerate() {
                    let ph = -2.0 * PI * (k * i % n) as f64 / n as f64;
                    re += x * ph.cos();
                    im += x * ph.sin();
                }
                assert!(re.abs() < 1e-10 && im.abs() < 1e-10, "mode {k}");
            }
        }
    }

    #[test]
    fn initial_state_needs_32_cells() {
        let g = PeriodicGrid::new(16, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(random_initial_state::<f64, _>(&g, &mut rng).is_err());
    }

    #[test]
    fn initial_state_is_seed_reproducible() {
        let g = PeriodicGrid::new(64, 1.0).unwrap();
        let a: Vec<f64> = random_initial_state(&g, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b: Vec<f64> = random_initial_state(&g, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(
            a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn downsample_ramp() {
        let g = PeriodicGrid::new(8, 8.0).unwrap();
        let u: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let t = Trajectory::new(g, 0.0, 1.0, u, None).unwrap();
        let c = downsample(&t, 2).unwrap();
        assert_eq!(c.snapshot(0), &[0.5, 2.5, 4.5, 6.5]);
        assert_eq!(c.n_x(), 4);
    }

    #[test]
    fn downsample_identity_and_constant() {
        let g = PeriodicGrid::new(16, 1.0).unwrap();
        let u: Vec<f64> = (0..32).map(|i| (i as f64).sin()).collect();
        let t = Trajectory::new(g, 0.0, 0.5, u, None).unwrap();
        assert_eq!(downsample(&t, 1).unwrap(), t);
        let c = Trajectory::new(g, 0.0, 0.5, vec![3.25; 32], None).unwrap();
        let d = downsample(&c, 2).unwrap();
        assert!(d.states().iter().all(|&x| x == 3.25));
        assert_eq!(d.n_snapshots(), 2);
    }

    #[test]
    fn downsample_rejects_non_divisor() {
        let g = PeriodicGrid::new(12, 1.0).unwrap();
        let t = Trajectory::new(g, 0.0, 0.5, vec![0.0; 12], None).unwrap();
        assert!(downsample(&t, 5).is_err());
    }

    fn toy(n_traj: usize) -> Dataset<f64> {
        let g = PeriodicGrid::new(8, 1.0).unwrap();
        let trajs = (0..n_traj)
            .map(|j| Trajectory::new(g, 0.0, 0.1, vec![j as f64; 16], None).unwrap())
            .collect();
        Dataset::new(Equation::Burgers, 1, trajs).unwrap()
    }

    #[test]
    fn split_counts() {
        let ds = split_dataset(toy(128), (96, 0, 32)).unwrap();
        assert_eq!(ds.count(Split::Train), 96);
        assert_eq!(ds.count(Split::Test), 32);
        assert_eq!(ds.splits()[95], Split::Train);
        assert_eq!(ds.splits()[96], Split::Test);

        let ds = split_dataset(toy(100), (80, 10, 10)).unwrap();
        assert_eq!(ds.subset(Split::Validation)[0].snapshot(0)[0], 80.0);
        assert_eq!(ds.subset(Split::Test)[0].snapshot(0)[0], 90.0);

        let ds = split_dataset(toy(5), (5, 0, 0)).unwrap();
        assert!(ds.splits().iter().all(|s| *s == Split::Train));

        assert!(split_dataset(toy(5), (3, 1, 0)).is_err());
    }

    #[test]
    fn dataset_rejects_mixed_shapes() {
        let g = PeriodicGrid::new(8, 1.0).unwrap();
        let a = Trajectory::new(g, 0.0, 0.1, vec![0.0; 16], None).unwrap();
        let b = Trajectory::new(g, 0.0, 0.1, vec![0.0; 24], None).unwrap();
        assert!(Dataset::new(Equation::Burgers, 0, vec![a, b]).is_err());
    }

    #[test]
    fn window_keeps_derivatives() {
        let g = PeriodicGrid::new(8, 1.0).unwrap();
        let s: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let t = Trajectory::new(g, 1.0, 0.5, s.clone(), Some(s)).unwrap();
        let w = t.window(2, 3).unwrap();
        assert_eq!(w.n_snapshots(), 3);
        assert_eq!(w.t0, 2.0);
        assert_eq!(w.snapshot(0)[0], 16.0);
        assert_eq!(w.derivative(2).unwrap()[7], 39.0);
        assert!(t.window(3, 3).is_err());
    }

    #[test]
    fn shift_moves_right() {
        assert_eq!(shift(&[1, 2, 3, 4], 1), vec![4, 1, 2, 3]);
    }
}
