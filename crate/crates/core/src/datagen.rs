//! Reference data: random initial states solved on a fine grid, sampled at
//! fixed snapshot spacing, and averaged down to the coarse grid.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    downsample, random_initial_state, split_dataset, Dataset, Equation, PeriodicGrid, Trajectory,
};
use crate::rhs::{BurgersRhs, KsRhs, Rhs};
use crate::scalar::Scalar;
use crate::solvers::{etdrk4_solve, solve, uniform_times, Method, Semilinear, SolverConfig};

/// Viscosity of the Burgers experiments.
pub const BURGERS_NU: f64 = 0.0005;
/// Fresh initial states tried per trajectory before generation fails.
pub const MAX_ATTEMPTS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub equation: Equation,
    pub fine_n_x: usize,
    pub coarse_n_x: usize,
    /// Viscosity (Burgers only).
    pub nu: f64,
    pub length: f64,
    /// End of the fine solve, which starts at `t = 0`.
    pub t_end: f64,
    pub dt_snap: f64,
    pub trajectories: usize,
    /// Train, validation and test counts, assigned in stored order.
    pub splits: (usize, usize, usize),
    /// Leading snapshots dropped as transients.
    pub discard: usize,
    pub seed: u64,
    pub solver: SolverConfig,
}

impl GenConfig {
    /// 4096 cells averaged to 64, `t ∈ [0, 0.5]` every `2^-7`, 128 trajectories (96/0/32).
    pub fn burgers(seed: u64) -> Self {
        Self {
            equation: Equation::Burgers,
            fine_n_x: 4096,
            coarse_n_x: 64,
            nu: BURGERS_NU,
            length: 1.0,
            t_end: 0.5,
            dt_snap: 1.0 / 128.0,
            trajectories: 128,
            splits: (96, 0, 32),
            discard: 0,
            seed,
            solver: SolverConfig::adaptive(1e-8, 1e-8),
        }
    }

    /// 1024 cells averaged to 128 on `L = 64`, `t ∈ [0, 272]` every `1/2`
    /// with the first 32 snapshots dropped (513 kept), 100 trajectories (80/10/10).
    pub fn ks(seed: u64) -> Self {
        Self {
            equation: Equation::KuramotoSivashinsky,
            fine_n_x: 1024,
            coarse_n_x: 128,
            nu: 0.0,
            length: 64.0,
            t_end: 272.0,
            dt_snap: 0.5,
            trajectories: 100,
            splits: (80, 10, 10),
            discard: 32,
            seed,
            solver: SolverConfig::fixed(Method::Etdrk4, 0.05),
        }
    }

    pub fn preset(name: &str, seed: u64) -> Option<Self> {
        match name {
            "burgers" => Some(Self::burgers(seed)),
            "ks" => Some(Self::ks(seed)),
            _ => None,
        }
    }

    /// Snapshots per solve, including `t = 0`.
    pub fn solved_snapshots(&self) -> usize {
        (self.t_end / self.dt_snap).round() as usize + 1
    }

    /// Snapshots per stored trajectory.
    pub fn kept_snapshots(&self) -> usize {
        self.solved_snapshots().saturating_sub(self.discard)
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if self.coarse_n_x == 0 || !self.fine_n_x.is_multiple_of(self.coarse_n_x) {
            return Err(Error::Config(format!(
                "coarse n_x {} does not divide fine n_x {}",
                self.coarse_n_x, self.fine_n_x
            )));
        }
        PeriodicGrid::new(self.fine_n_x, self.length)?.coarsen(self.fine_n_x / self.coarse_n_x)?;
        let ratio = self.t_end / self.dt_snap;
        if !(self.dt_snap > 0.0) || (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) || ratio < 1.0 {
            return Err(Error::Config(format!(
                "snapshot spacing {} does not divide t_end {}",
                self.dt_snap, self.t_end
            )));
        }
        if self.kept_snapshots() == 0 {
            return Err(Error::Config("transient discard removes every snapshot".into()));
        }
        let (a, b, c) = self.splits;
        if a + b + c != self.trajectories {
            return Err(Error::Config(format!(
                "split counts {a}+{b}+{c} do not sum to {} trajectories",
                self.trajectories
            )));
        }
        if self.equation == Equation::Burgers && !(self.nu >= 0.0) {
            return Err(Error::Config("viscosity must be non-negative".into()));
        }
        if self.equation == Equation::KuramotoSivashinsky && self.solver.method != Method::Etdrk4 {
            return Err(Error::Config(
                "Kuramoto-Sivashinsky data is generated with ETDRK4".into(),
            ));
        }
        Ok(())
    }
}

/// Generator for trajectory `index`, attempt `attempt`: one ChaCha stream per pair.
pub fn trajectory_rng(seed: u64, index: usize, attempt: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((attempt as u64) << 32) | index as u64);
    rng
}

/// A generated dataset, with the fine-grid trajectories when requested.
#[derive(Debug, Clone)]
pub struct Generated<T = f64> {
    pub coarse: Dataset<T>,
    pub fine: Option<Dataset<T>>,
    /// Initial states that were redrawn after a failed fine solve, as `(trajectory, attempt)`.
    pub retries: Vec<(usize, usize)>,
}

enum FineRhs<T: Scalar> {
    Burgers(BurgersRhs<T>),
    Ks(Semilinear<T, crate::rhs::KsConvection<T>>, KsRhs<T>),
}

impl<T: Scalar> FineRhs<T> {
    fn new(cfg: &GenConfig, grid: PeriodicGrid<T>) -> Result<Self> {
        Ok(match cfg.equation {
            Equation::Burgers => FineRhs::Burgers(BurgersRhs::new(grid, T::lit(cfg.nu))),
            Equation::KuramotoSivashinsky => {
                let ks = KsRhs::new(grid);
                FineRhs::Ks(Semilinear::new(ks.linear_symbol(), ks.convection())?, ks)
            }
        })
    }

    fn rhs(&self) -> &dyn Rhs<T> {
        match self {
            FineRhs::Burgers(r) => r,
            FineRhs::Ks(_, r) => r,
        }
    }

    fn solve(&self, u0: &[T], times: &[T], solver: &SolverConfig) -> Result<Vec<Vec<T>>> {
        let rec = match self {
            FineRhs::Burgers(r) => solve(r, u0, times[0], times, solver)?,
            FineRhs::Ks(p, _) => etdrk4_solve(p, u0, times[0], times, T::lit(solver.dt), false)?,
        };
        Ok(rec.states)
    }
}

/// Solves one fine trajectory (with derivatives), after transient removal.
fn fine_trajectory<T: Scalar>(
    cfg: &GenConfig,
    fine: &FineRhs<T>,
    grid: PeriodicGrid<T>,
    index: usize,
) -> Result<(Trajectory<T>, usize)> {
    let times = uniform_times(T::zero(), T::lit(cfg.dt_snap), cfg.solved_snapshots());
    let mut last = None;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = trajectory_rng(cfg.seed, index, attempt);
        let u0 = random_initial_state(&grid, &mut rng)?;
        match fine.solve(&u0, &times, &cfg.solver) {
            Ok(states) => {
                let kept = &states[cfg.discard..];
                let mut derivs = Vec::with_capacity(kept.len() * grid.n_x());
                for s in kept {
                    derivs.extend(fine.rhs().eval(s)?);
                }
                let traj = Trajectory::new(
                    grid,
                    times[cfg.discard],
                    T::lit(cfg.dt_snap),
                    kept.concat(),
                    Some(derivs),
                )?;
                return Ok((traj, attempt));
            }
            Err(e) if e.is_numerical() => {
                log::warn!("trajectory {index}: fine solve failed on attempt {attempt}: {e}");
                last = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Runs the pipeline. Trajectories are solved on the current rayon pool; each
/// draws from its own stream, so the output does not depend on the worker count.
pub fn generate<T: Scalar>(cfg: &GenConfig, keep_fine: bool) -> Result<Generated<T>> {
    cfg.validate()?;
    let grid = PeriodicGrid::new(cfg.fine_n_x, T::lit(cfg.length))?;
    let factor = cfg.fine_n_x / cfg.coarse_n_x;
    let fine_rhs = FineRhs::new(cfg, grid)?;
    let results = (0..cfg.trajectories)
        .into_par_iter()
        .map(|i| {
            let (fine, attempt) = fine_trajectory(cfg, &fine_rhs, grid, i)?;
            log::debug!("trajectory {i} done");
            let coarse = downsample(&fine, factor)?;
            Ok((coarse, keep_fine.then_some(fine), attempt))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut coarse = Vec::with_capacity(results.len());
    let mut fine = Vec::new();
    let mut retries = Vec::new();
    for (i, (c, f, attempt)) in results.into_iter().enumerate() {
        coarse.push(c);
        fine.extend(f);
        if attempt > 0 {
            retries.push((i, attempt));
        }
    }
    let label = |ts| -> Result<Dataset<T>> {
        split_dataset(Dataset::new(cfg.equation, cfg.seed, ts)?, cfg.splits)
    };
    Ok(Generated {
        coarse: label(coarse)?,
        fine: if keep_fine { Some(label(fine)?) } else { None },
        retries,
    })
}
