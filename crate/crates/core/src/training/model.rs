//! Coarse dynamics a closure network is attached to, plus forecasting and evaluation.

use serde::{Deserialize, Serialize};

use crate::datagen::BURGERS_NU;
use crate::error::{Error, Result};
use crate::grid::{Dataset, Equation, PeriodicGrid, Trajectory};
use crate::metrics::{lyapunov, MetricsReport};
use crate::nn::{ArchId, CnnParams};
use crate::rhs::{BurgersRhs, ClosureRhs, KsRhs, Rhs};
use crate::scalar::Scalar;
use crate::solvers::{etdrk4_solve, solve, Method, Semilinear, SolverConfig};
use crate::spectral::SpectralKs;

/// Spatial discretisation of the coarse model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discretisation {
    /// Finite volumes, as used to generate the data.
    Fvm,
    /// Pseudospectral (Kuramoto-Sivashinsky only).
    Spectral,
}

impl std::str::FromStr for Discretisation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fvm" => Ok(Self::Fvm),
            "spectral" => Ok(Self::Spectral),
            _ => Err(Error::Config(format!("unknown discretisation '{s}' (fvm, spectral)"))),
        }
    }
}

#[derive(Debug, Clone)]
enum Kind<T: Scalar> {
    Burgers(BurgersRhs<T>),
    KsFvm(KsRhs<T>),
    KsSpectral(SpectralKs<T>),
}

/// A coarse discretisation to which a closure network may be added.
#[derive(Debug, Clone)]
pub struct Model<T: Scalar = f64> {
    kind: Kind<T>,
}

impl<T: Scalar> Model<T> {
    pub fn burgers(grid: PeriodicGrid<T>, nu: T) -> Self {
        Self {
            kind: Kind::Burgers(BurgersRhs::new(grid, nu)),
        }
    }

    pub fn ks(grid: PeriodicGrid<T>, discretisation: Discretisation) -> Result<Self> {
        let kind = match discretisation {
            Discretisation::Fvm => Kind::KsFvm(KsRhs::new(grid)),
            Discretisation::Spectral => Kind::KsSpectral(SpectralKs::new(grid)?),
        };
        Ok(Self { kind })
    }

    pub fn for_dataset(dataset: &Dataset<T>, discretisation: Discretisation) -> Result<Self> {
        let grid = dataset
            .grid()
            .ok_or_else(|| Error::Precondition("dataset has no trajectories".into()))?;
        match dataset.equation {
            Equation::Burgers if discretisation == Discretisation::Fvm => {
                Ok(Self::burgers(grid, T::lit(BURGERS_NU)))
            }
            Equation::Burgers => Err(Error::Config(
                "Burgers models only have a finite-volume discretisation".into(),
            )),
            Equation::KuramotoSivashinsky => Self::ks(grid, discretisation),
        }
    }

    pub fn equation(&self) -> Equation {
        match self.kind {
            Kind::Burgers(_) => Equation::Burgers,
            _ => Equation::KuramotoSivashinsky,
        }
    }

    pub fn discretisation(&self) -> Discretisation {
        match self.kind {
            Kind::KsSpectral(_) => Discretisation::Spectral,
            _ => Discretisation::Fvm,
        }
    }

    pub fn grid(&self) -> PeriodicGrid<T> {
        match &self.kind {
            Kind::Burgers(r) => r.grid,
            Kind::KsFvm(r) => r.grid,
            Kind::KsSpectral(s) => *s.grid(),
        }
    }

    pub fn n_x(&self) -> usize {
        self.grid().n_x()
    }

    /// Network architecture used with this equation.
    pub fn architecture(&self) -> ArchId {
        match self.equation() {
            Equation::Burgers => ArchId::Small,
            Equation::KuramotoSivashinsky => ArchId::Large,
        }
    }

    /// Largest Lyapunov exponent for weighting and VPT units (Kuramoto-Sivashinsky only).
    pub fn lyapunov(&self) -> Option<(f64, f64)> {
        match self.equation() {
            Equation::Burgers => None,
            Equation::KuramotoSivashinsky => lyapunov(self.grid().length().as_f64()).ok(),
        }
    }

    /// The full right-hand side `f(u) + NN(u)` (or `f(u)` without a network).
    pub fn rhs<'a>(&'a self, net: Option<&'a CnnParams<T>>) -> Box<dyn Rhs<T> + 'a> {
        match &self.kind {
            Kind::Burgers(r) => closure(r, net),
            Kind::KsFvm(r) => closure(r, net),
            Kind::KsSpectral(s) => Box::new(
                Semilinear::new(s.linear_symbol(), closure(s.convection(), net))
                    .expect("spectral symbol is real"),
            ),
        }
    }

    /// Stiff linear part plus explicit remainder, for exponential integrators.
    pub fn semilinear<'a>(
        &'a self,
        net: Option<&'a CnnParams<T>>,
    ) -> Result<Semilinear<T, Box<dyn Rhs<T> + 'a>>> {
        match &self.kind {
            Kind::Burgers(_) => Err(Error::Config(
                "ETDRK4 needs a stiff linear part; Burgers has none".into(),
            )),
            Kind::KsFvm(r) => Semilinear::new(r.linear_symbol(), closure(r.convection(), net)),
            Kind::KsSpectral(s) => Semilinear::new(s.linear_symbol(), closure(s.convection(), net)),
        }
    }

    /// Solves the model from `u0` and returns the states at `times`.
    pub fn predict(
        &self,
        net: Option<&CnnParams<T>>,
        u0: &[T],
        times: &[T],
        solver: &SolverConfig,
    ) -> Result<Vec<Vec<T>>> {
        let t0 = *times
            .first()
            .ok_or_else(|| Error::Precondition("no prediction times".into()))?;
        let rec = if solver.method == Method::Etdrk4 {
            etdrk4_solve(&self.semilinear(net)?, u0, t0, times, T::lit(solver.dt), false)?
        } else {
            solve(&self.rhs(net), u0, t0, times, solver)?
        };
        Ok(rec.states)
    }

    /// Predicts a whole reference trajectory from its initial state. A blow-up
    /// or divergence is not an error here: the states from the failure onwards
    /// are `+∞` and the failure is returned alongside.
    pub fn forecast(
        &self,
        net: Option<&CnnParams<T>>,
        reference: &Trajectory<T>,
        solver: &SolverConfig,
    ) -> Result<(Trajectory<T>, Option<Error>)> {
        let times = reference.times();
        let u0 = reference.snapshot(0);
        let (states, failure) = match self.predict(net, u0, &times, solver) {
            Ok(s) => (s, None),
            Err(e) if e.is_numerical() => {
                // march interval by interval to keep the prefix before the failure
                let mut states = vec![u0.to_vec()];
                for w in times.windows(2) {
                    match self.predict(net, states.last().expect("non-empty"), w, solver) {
                        Ok(mut s) => states.push(s.pop().expect("two states")),
                        Err(_) => break,
                    }
                }
                states.resize(times.len(), vec![T::infinity(); u0.len()]);
                (states, Some(e))
            }
            Err(e) => return Err(e),
        };
        let traj = Trajectory::from_snapshots(reference.grid, reference.t0, reference.dt_snap, &states)?;
        Ok((traj, failure))
    }

    /// Forecasts every reference and scores the predictions. VPT is reported in
    /// Lyapunov times for Kuramoto-Sivashinsky and in time units for Burgers.
    pub fn evaluate(
        &self,
        net: Option<&CnnParams<T>>,
        ids: &[usize],
        references: &[&Trajectory<T>],
        solver: &SolverConfig,
    ) -> Result<Evaluation<T>> {
        use rayon::prelude::*;
        let results: Vec<_> = references
            .par_iter()
            .map(|r| self.forecast(net, r, solver))
            .collect::<Result<_>>()?;
        let mut predictions = Vec::with_capacity(results.len());
        let mut failures = Vec::new();
        for (&id, (p, f)) in ids.iter().zip(results) {
            if let Some(e) = f {
                failures.push((id, e));
            }
            predictions.push(p);
        }
        let t_lyap = self.lyapunov().map_or(1.0, |(_, t)| t);
        let report = MetricsReport::evaluate(ids, &predictions, references, t_lyap)?;
        Ok(Evaluation {
            report,
            predictions,
            failures,
        })
    }
}

fn closure<'a, B: Rhs<T> + 'a, T: Scalar>(base: B, net: Option<&'a CnnParams<T>>) -> Box<dyn Rhs<T> + 'a> {
    match net {
        Some(n) => Box::new(ClosureRhs::new(base, n)),
        None => Box::new(ClosureRhs::without_closure(base)),
    }
}

/// Metrics with the predictions they were computed from.
#[derive(Debug)]
pub struct Evaluation<T = f64> {
    pub report: MetricsReport,
    pub predictions: Vec<Trajectory<T>>,
    /// Trajectories whose forecast failed, with the solver error.
    pub failures: Vec<(usize, Error)>,
}
