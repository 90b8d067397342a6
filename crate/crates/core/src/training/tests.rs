use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::datagen::{generate, GenConfig};
use crate::grid::PeriodicGrid;
use crate::nn::{CnnArchitecture, CnnParams};
use crate::rhs::Rhs;
use crate::solvers::{uniform_times, SolverConfig};

const TAU: f64 = std::f64::consts::TAU;

fn net(arch: CnnArchitecture, seed: u64) -> CnnParams {
    CnnParams::init(arch, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn wave(n: usize, phase: f64, amp: f64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let x = TAU * (i as f64 + 0.5) / n as f64;
            amp * ((x + phase).sin() + 0.3 * (2.0 * x - phase).cos())
        })
        .collect()
}

/// Snapshots that drift away from any model solution: a translating wave.
fn reference(grid: PeriodicGrid, phase: f64, amp: f64, dt_snap: f64, n_snap: usize) -> Trajectory {
    let snaps: Vec<Vec<f64>> = (0..n_snap)
        .map(|i| wave(grid.n_x(), phase + 0.4 * i as f64 * dt_snap, amp * (1.0 - 0.2 * i as f64 * dt_snap)))
        .collect();
    Trajectory::from_snapshots(grid, 0.0, dt_snap, &snaps).unwrap()
}

fn burgers_batch(n_x: usize, n_snap: usize, dt_snap: f64) -> (Model, Vec<Trajectory>) {
    let g = PeriodicGrid::new(n_x, 1.0).unwrap();
    let refs = (0..2).map(|j| reference(g, 0.7 * j as f64, 0.8, dt_snap, n_snap)).collect();
    (Model::burgers(g, 0.01), refs)
}

fn ks_batch(n_x: usize, n_snap: usize, dt_snap: f64, d: Discretisation) -> (Model, Vec<Trajectory>) {
    let g = PeriodicGrid::new(n_x, 22.0).unwrap();
    let refs = (0..2).map(|j| reference(g, 1.3 * j as f64, 1.0, dt_snap, n_snap)).collect();
    (Model::ks(g, d).unwrap(), refs)
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

/// Central differences of `f` in the listed parameter directions.
fn fd_grad(p: &CnnParams, idx: &[usize], h: f64, f: impl Fn(&CnnParams) -> f64) -> Vec<f64> {
    idx.iter()
        .map(|&k| {
            let mut plus = p.clone();
            plus.theta_mut()[k] += h;
            let mut minus = p.clone();
            minus.theta_mut()[k] -= h;
            (f(&plus) - f(&minus)) / (2.0 * h)
        })
        .collect()
}

fn pick(g: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&k| g[k]).collect()
}

#[test]
fn derivative_fit_exact_model_has_zero_loss() {
    let g = PeriodicGrid::new(16, 1.0).unwrap();
    let m = Model::burgers(g, 0.01);
    let p = net(CnnArchitecture::small(), 1);
    let states: Vec<Vec<f64>> = (0..3).map(|j| wave(16, j as f64, 1.0)).collect();
    let derivs: Vec<Vec<f64>> = states.iter().map(|u| m.rhs(Some(&p)).eval(u).unwrap()).collect();
    let samples: Vec<(&[f64], &[f64])> = states.iter().zip(&derivs).map(|(u, d)| (&u[..], &d[..])).collect();
    let lg = grad_derivative_fit(&m, &p, &samples).unwrap();
    assert_eq!(lg.loss, 0.0);
    assert!(lg.grad.iter().all(|&x| x == 0.0));
}

#[test]
fn derivative_fit_gradient_matches_finite_differences() {
    let g = PeriodicGrid::new(16, 1.0).unwrap();
    let m = Model::burgers(g, 0.01);
    let p = net(CnnArchitecture::small(), 2);
    let states: Vec<Vec<f64>> = (0..4).map(|j| wave(16, j as f64, 1.0)).collect();
    let derivs: Vec<Vec<f64>> = (0..4).map(|j| wave(16, 2.0 * j as f64, 3.0)).collect();
    let samples: Vec<(&[f64], &[f64])> = states.iter().zip(&derivs).map(|(u, d)| (&u[..], &d[..])).collect();
    let lg = grad_derivative_fit(&m, &p, &samples).unwrap();
    let idx: Vec<usize> = (0..p.len()).collect();
    let fd = fd_grad(&p, &idx, 1e-6, |q| grad_derivative_fit(&m, q, &samples).unwrap().loss);
    assert!(max_rel(&lg.grad, &fd) < 1e-6, "{}", max_rel(&lg.grad, &fd));
    // the mean over samples does not depend on their order
    let mut rev = samples.clone();
    rev.reverse();
    let lr = grad_derivative_fit(&m, &p, &rev).unwrap();
    assert!((lr.loss - lg.loss).abs() <= 1e-14 * lg.loss);
    assert!(max_rel(&lr.grad, &lg.grad) < 1e-13);
}

#[test]
fn trajectory_loss_vanishes_on_generated_data() {
    let (m, _) = burgers_batch(16, 5, 1.0 / 64.0);
    let p = net(CnnArchitecture::small(), 3);
    let solver = SolverConfig::fixed(Method::Tsit5Fixed, 1.0 / 256.0);
    let times = uniform_times(0.0, 1.0 / 64.0, 5);
    let snaps = m.predict(Some(&p), &wave(16, 0.2, 1.0), &times, &solver).unwrap();
    let r = Trajectory::from_snapshots(m.grid(), 0.0, 1.0 / 64.0, &snaps).unwrap();
    let w = LossWeights::uniform(4);
    let (loss, _) = loss_trajectory(&m, &p, &[&r], &w, &solver).unwrap();
    assert_eq!(loss, 0.0);
    for lg in [
        grad_disc_then_opt(&m, &p, &[&r], &w, &solver).unwrap(),
        grad_opt_then_disc(&m, &p, &[&r], &w, &solver).unwrap(),
    ] {
        assert_eq!(lg.loss, 0.0);
        assert!(lg.grad.iter().all(|&x| x == 0.0));
    }
}

#[test]
fn unweighted_loss_is_bit_identical_to_mse() {
    let (m, refs) = ks_batch(32, 6, 0.5, Discretisation::Spectral);
    let p = net(CnnArchitecture::large(), 4);
    let batch: Vec<&Trajectory> = refs.iter().collect();
    let solver = SolverConfig::fixed(Method::Etdrk4, 0.25);
    let (lambda, _) = m.lyapunov().unwrap();
    let w0 = LossWeights::new(5, 0.5, 0.0, lambda);
    let (weighted, preds) = loss_trajectory(&m, &p, &batch, &w0, &solver).unwrap();
    let plain = mse_loss(&preds, &batch, 5).unwrap();
    assert_eq!(weighted.to_bits(), plain.to_bits());
    let uniform = weighted_loss(&preds, &batch, &LossWeights::uniform(5)).unwrap();
    assert_eq!(uniform.to_bits(), plain.to_bits());
}

#[test]
fn snapshot_weights() {
    let (lambda, dt, c) = (0.0841, 0.5, 1.5);
    let w = LossWeights::new(144, dt, c, lambda);
    assert_eq!(w.n_t(), 144);
    let sum: f64 = w.weights().iter().map(|x| x / w.z()).sum();
    assert!((sum - 1.0).abs() < 1e-12);
    let ratio = (-2.0 * c * lambda * dt).exp();
    for pair in w.weights().windows(2) {
        assert!((pair[1] / pair[0] - ratio).abs() < 1e-12);
    }
    assert!((w.weights()[0] - ratio).abs() < 1e-15);
    assert_eq!(LossWeights::<f64>::uniform(7).z(), 7.0);
}

#[test]
fn disc_then_opt_matches_finite_differences_burgers() {
    let (m, refs) = burgers_batch(16, 4, 1.0 / 64.0);
    let p = net(CnnArchitecture::small(), 5);
    let batch: Vec<&Trajectory> = refs.iter().collect();
    let solver = SolverConfig::fixed(Method::Tsit5Fixed, 1.0 / 128.0);
    let w = LossWeights::new(3, 1.0 / 64.0, 1.0, 2.0);
    let lg = grad_disc_then_opt(&m, &p, &batch, &w, &solver).unwrap();
    let idx: Vec<usize> = (0..p.len()).collect();
    let fd = fd_grad(&p, &idx, 1e-5, |q| loss_trajectory(&m, q, &batch, &w, &solver).unwrap().0);
    assert!(max_rel(&lg.grad, &fd) < 1e-5, "{}", max_rel(&lg.grad, &fd));
    let direct = loss_trajectory(&m, &p, &batch, &w, &solver).unwrap().0;
    assert!((lg.loss - direct).abs() <= 1e-14 * direct);
}

#[test]
fn disc_then_opt_matches_finite_differences_ks() {
    for d in [Discretisation::Fvm, Discretisation::Spectral] {
        let (m, refs) = ks_batch(32, 3, 0.5, d);
        let p = net(CnnArchitecture::large(), 6);
        let batch: Vec<&Trajectory> = refs.iter().collect();
        let solver = SolverConfig::fixed(Method::Etdrk4, 0.25);
        let w = LossWeights::uniform(2);
        let lg = grad_disc_then_opt(&m, &p, &batch, &w, &solver).unwrap();
        let idx: Vec<usize> = (0..p.len()).step_by(23).chain([p.len() - 2]).collect();
        let fd = fd_grad(&p, &idx, 1e-5, |q| loss_trajectory(&m, q, &batch, &w, &solver).unwrap().0);
        let g = pick(&lg.grad, &idx);
        assert!(max_rel(&g, &fd) < 1e-5, "{d:?}: {}", max_rel(&g, &fd));
    }
}

#[test]
fn single_interval_gradient_is_one_step_vjp() {
    // N_t = 1 with one RK4 step: dL/dθ = (2/(N_x Z)) eᵀ ∂Φ/∂θ, built here from
    // the stage VJPs written out by hand.
    let (m, refs) = burgers_batch(16, 2, 1.0 / 64.0);
    let p = net(CnnArchitecture::small(), 7);
    let h = 1.0 / 64.0;
    let rhs = m.rhs(Some(&p));
    let u = refs[0].snapshot(0);
    let k1 = rhs.eval(u).unwrap();
    let at = |k: &[f64], c: f64| -> Vec<f64> { u.iter().zip(k).map(|(a, b)| a + c * h * b).collect() };
    let u2 = at(&k1, 0.5);
    let k2 = rhs.eval(&u2).unwrap();
    let u3 = at(&k2, 0.5);
    let k3 = rhs.eval(&u3).unwrap();
    let u4 = at(&k3, 1.0);
    let k4 = rhs.eval(&u4).unwrap();
    let next: Vec<f64> = (0..16).map(|i| u[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect();
    let e: Vec<f64> = next.iter().zip(refs[0].snapshot(1)).map(|(a, b)| a - b).collect();
    let bar: Vec<f64> = e.iter().map(|x| 2.0 * x / 16.0).collect();
    // reverse through the stages
    let scale = |v: &[f64], c: f64| -> Vec<f64> { v.iter().map(|x| c * x).collect() };
    let mut gt = vec![0.0; p.len()];
    let mut gu = vec![0.0; 16];
    let w4 = scale(&bar, h / 6.0);
    let mut b4 = vec![0.0; 16];
    rhs.vjp_into(&u4, &w4, &mut b4, &mut gt);
    let w3: Vec<f64> = (0..16).map(|i| h / 3.0 * bar[i] + h * b4[i]).collect();
    let mut b3 = vec![0.0; 16];
    rhs.vjp_into(&u3, &w3, &mut b3, &mut gt);
    let w2: Vec<f64> = (0..16).map(|i| h / 3.0 * bar[i] + 0.5 * h * b3[i]).collect();
    let mut b2 = vec![0.0; 16];
    rhs.vjp_into(&u2, &w2, &mut b2, &mut gt);
    let w1: Vec<f64> = (0..16).map(|i| h / 6.0 * bar[i] + 0.5 * h * b2[i]).collect();
    rhs.vjp_into(u, &w1, &mut gu, &mut gt);
    let lg = grad_disc_then_opt(&m, &p, &[&refs[0]], &LossWeights::uniform(1), &SolverConfig::fixed(Method::Rk4, h)).unwrap();
    assert!(max_rel(&lg.grad, &gt) < 1e-13, "{}", max_rel(&lg.grad, &gt));
}

/// `u' = θu`, one parameter.
struct Growth(f64);

impl Rhs<f64> for Growth {
    fn dim(&self) -> usize {
        1
    }
    fn n_params(&self) -> usize {
        1
    }
    fn eval_into(&self, u: &[f64], out: &mut [f64]) {
        out[0] = self.0 * u[0];
    }
    fn vjp_into(&self, u: &[f64], w: &[f64], gu: &mut [f64], gt: &mut [f64]) {
        gu[0] += self.0 * w[0];
        gt[0] += u[0] * w[0];
    }
}

#[test]
fn adjoint_matches_closed_form_for_linear_growth() {
    let (theta, u0, r, t1) = (-0.7, 1.3, 0.2, 1.5);
    let solver = SolverConfig::adaptive(1e-11, 1e-11);
    let rhs = Growth(theta);
    let rec = forward_dense(&rhs, &[u0], &[0.0, t1], &solver).unwrap();
    let ut = rec.states[1][0];
    let exact = u0 * (theta * t1).exp();
    assert!((ut - exact).abs() < 1e-9);
    let bars = vec![vec![0.0], vec![2.0 * (ut - r)]];
    let adj = adjoint_backward(&rhs, &rec, &bars, &solver).unwrap();
    let dtheta = 2.0 * (exact - r) * u0 * t1 * (theta * t1).exp();
    let du0 = 2.0 * (exact - r) * (theta * t1).exp();
    assert!((adj.z[0] - dtheta).abs() < 1e-6 * dtheta.abs());
    assert!((adj.y[0] - du0).abs() < 1e-6 * du0.abs());
}

#[test]
fn opt_then_disc_agrees_with_disc_then_opt() {
    let (m, refs) = burgers_batch(16, 4, 1.0 / 64.0);
    let p = net(CnnArchitecture::small(), 8);
    let batch: Vec<&Trajectory> = refs.iter().collect();
    let w = LossWeights::uniform(3);
    let dto = grad_disc_then_opt(&m, &p, &batch, &w, &SolverConfig::fixed(Method::Tsit5Fixed, 1.0 / 1024.0)).unwrap();
    let otd = grad_opt_then_disc(&m, &p, &batch, &w, &SolverConfig::adaptive(1e-10, 1e-10)).unwrap();
    assert!(max_rel(&otd.grad, &dto.grad) < 1e-3, "{}", max_rel(&otd.grad, &dto.grad));
}

#[test]
fn opt_then_disc_agrees_with_disc_then_opt_etd() {
    let (m, refs) = ks_batch(32, 3, 0.5, Discretisation::Spectral);
    let p = net(CnnArchitecture::large(), 9);
    let batch: Vec<&Trajectory> = refs.iter().collect();
    let w = LossWeights::uniform(2);
    let solver = SolverConfig::fixed(Method::Etdrk4, 1.0 / 64.0);
    let dto = grad_disc_then_opt(&m, &p, &batch, &w, &solver).unwrap();
    let otd = grad_opt_then_disc(&m, &p, &batch, &w, &solver).unwrap();
    assert!(max_rel(&otd.grad, &dto.grad) < 1e-3, "{}", max_rel(&otd.grad, &dto.grad));
}

#[test]
fn opt_then_disc_converges_to_disc_then_opt() {
    let (m, refs) = burgers_batch(16, 3, 1.0 / 32.0);
    let p = net(CnnArchitecture::small(), 10);
    let batch: Vec<&Trajectory> = refs.iter().collect();
    let w = LossWeights::uniform(2);
    let gap = |h: f64| {
        let s = SolverConfig::fixed(Method::Tsit5Fixed, h);
        let dto = grad_disc_then_opt(&m, &p, &batch, &w, &s).unwrap();
        let otd = grad_opt_then_disc(&m, &p, &batch, &w, &s).unwrap();
        otd.grad.iter().zip(&dto.grad).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    };
    let gaps: Vec<f64> = [1.0 / 64.0, 1.0 / 128.0, 1.0 / 256.0].map(gap).to_vec();
    for pair in gaps.windows(2) {
        let order = (pair[0] / pair[1]).log2();
        assert!(order >= 1.0, "gaps {gaps:?}");
    }
}

#[test]
fn splitting_counts() {
    let g = PeriodicGrid::new(8, 1.0).unwrap();
    let long: Vec<Trajectory> = (0..4).map(|j| reference(g, j as f64, 1.0, 0.5, 121)).collect();
    let refs: Vec<&Trajectory> = long.iter().collect();
    let pieces = split_trajectories(&refs, 30).unwrap();
    assert_eq!(pieces.len(), 16);
    assert!(pieces.iter().all(|(_, t)| t.n_snapshots() == 31));
    assert_eq!(pieces[1].1.snapshot(0), long[0].snapshot(30));
    assert_eq!(pieces[1].1.t0, 15.0);
    assert_eq!(pieces[5].0, 1);
    let eights = split_trajectories(&refs[..1], 8).unwrap();
    assert_eq!(eights.len(), 15);
    assert!(eights.iter().all(|(_, t)| t.n_snapshots() == 9));
    let whole = split_trajectories(&refs[..1], 120).unwrap();
    assert_eq!(whole.len(), 1);
    assert_eq!(whole[0].1, long[0]);
    assert!(split_trajectories(&refs, 121).is_err());
    assert!(split_trajectories(&refs, 0).is_err());
}

fn tiny_burgers_dataset() -> Dataset {
    let cfg = GenConfig {
        fine_n_x: 256,
        coarse_n_x: 32,
        t_end: 1.0 / 16.0,
        trajectories: 5,
        splits: (3, 1, 1),
        ..GenConfig::burgers(11)
    };
    generate(&cfg, false).unwrap().coarse
}

fn tiny_cfg(approach: Approach, epochs: usize) -> TrainConfig {
    TrainConfig {
        approach,
        n_t: 4,
        epochs,
        batch_size: 2,
        learning_rate: 1e-2,
        solver: SolverConfig::fixed(Method::Tsit5Fixed, BURGERS_DT),
        validate_every: 2,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_epochs_leave_parameters_unchanged() {
    let ds = tiny_burgers_dataset();
    let m = Model::for_dataset(&ds, Discretisation::Fvm).unwrap();
    let p: CnnParams = init_params(CnnArchitecture::small(), 1);
    let out = train(&m, p.clone(), &ds, &tiny_cfg(Approach::DiscThenOpt, 0), |_, _| {}).unwrap();
    assert_eq!(out.params, p);
    assert_eq!(out.history.len(), 1);
    assert_eq!(out.history[0].epoch, 0);
    assert!(out.history[0].train_loss > 0.0);
    assert!(out.history[0].validation_metric.is_some());
}

#[test]
fn training_runs_and_is_independent_of_worker_count() {
    let ds = tiny_burgers_dataset();
    let m = Model::for_dataset(&ds, Discretisation::Fvm).unwrap();
    for approach in [Approach::DerivativeFit, Approach::DiscThenOpt, Approach::OptThenDisc] {
        let mut cfg = tiny_cfg(approach, 3);
        if approach == Approach::OptThenDisc {
            cfg.solver = SolverConfig::adaptive(1e-6, 1e-6);
        }
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let mut seen = 0;
                let p = init_params(CnnArchitecture::small(), 1);
                let out = train(&m, p, &ds, &cfg, |_, _| seen += 1).unwrap();
                assert_eq!(seen, 4);
                out
            })
        };
        let (a, b) = (run(1), run(4));
        assert_eq!(a.history.len(), 4);
        assert!(a.history.iter().all(|r| r.train_loss.is_finite()));
        assert_eq!(
            a.history.iter().map(|r| r.validation_metric.is_some()).collect::<Vec<_>>(),
            vec![true, false, true, true]
        );
        assert_eq!(a.params, b.params, "{approach:?}");
        assert_eq!(a.history, b.history);
        assert_ne!(a.params, init_params(CnnArchitecture::small(), 1));
    }
}

#[test]
fn training_reduces_the_loss() {
    let ds = tiny_burgers_dataset();
    let m = Model::for_dataset(&ds, Discretisation::Fvm).unwrap();
    let p = init_params(CnnArchitecture::small(), 2);
    let out = train(&m, p, &ds, &tiny_cfg(Approach::DiscThenOpt, 20), |_, _| {}).unwrap();
    let first = out.history[0].train_loss;
    let last = out.history.last().unwrap().train_loss;
    assert!(last < first, "{first} -> {last}");
    assert!(out.best_metric.unwrap() <= out.history[0].validation_metric.unwrap());
}

#[test]
fn history_csv_layout() {
    let h = [
        EpochRecord { epoch: 0, train_loss: 0.5, validation_metric: Some(0.25) },
        EpochRecord { epoch: 1, train_loss: 0.125, validation_metric: None },
    ];
    let mut buf = Vec::new();
    write_history_csv(&h, &mut buf).unwrap();
    assert_eq!(
        String::from_utf8(buf).unwrap(),
        "epoch,train_loss,validation_metric\n0,5e-1,2.5e-1\n1,1.25e-1,\n"
    );
}

#[test]
fn presets_and_config_checks() {
    for name in PRESETS {
        let cfg = TrainConfig::preset(name).unwrap_or_else(|| panic!("{name}"));
        cfg.validate().unwrap();
    }
    assert_eq!(TrainConfig::preset("ks-dto-nt30").unwrap().max_snapshots, Some(121));
    assert_eq!(TrainConfig::preset("ks-otd-long-c1.5").unwrap().weight_exponent, 1.5);
    assert_eq!(TrainConfig::preset("burgers-dto-desk").unwrap().epochs, 2000);
    assert!(TrainConfig::preset("ks-dto-nt7").is_none());
    assert!(TrainConfig::preset("ks-otd-short-desk").is_none());
    let bad = TrainConfig {
        approach: Approach::DiscThenOpt,
        solver: SolverConfig::adaptive(1e-6, 1e-6),
        ..TrainConfig::default()
    };
    assert!(bad.validate().is_err());
    assert_eq!("dto".parse::<Approach>().unwrap(), Approach::DiscThenOpt);
    assert!("sgd".parse::<Approach>().is_err());
}

#[test]
fn batch_gradient_is_mean_of_sample_gradients() {
    let (m, refs) = burgers_batch(16, 4, 1.0 / 64.0);
    let p = net(CnnArchitecture::small(), 12);
    let batch: Vec<&Trajectory> = refs.iter().collect();
    let w = LossWeights::new(3, 1.0 / 64.0, 0.5, 1.0);
    let check = |grad: &dyn Fn(&[&Trajectory]) -> LossGrad| {
        let full = grad(&batch);
        let parts: Vec<LossGrad> = batch.iter().map(|r| grad(&[*r])).collect();
        let mean_loss = parts.iter().map(|g| g.loss).sum::<f64>() / 2.0;
        let mean: Vec<f64> = (0..p.len()).map(|k| parts.iter().map(|g| g.grad[k]).sum::<f64>() / 2.0).collect();
        assert!((full.loss - mean_loss).abs() <= 1e-12 * mean_loss);
        assert!(max_rel(&full.grad, &mean) <= 1e-12, "{}", max_rel(&full.grad, &mean));
    };
    let fixed = SolverConfig::fixed(Method::Tsit5Fixed, 1.0 / 128.0);
    check(&|b| grad_disc_then_opt(&m, &p, b, &w, &fixed).unwrap());
    check(&|b| grad_opt_then_disc(&m, &p, b, &w, &fixed).unwrap());
    let samples: Vec<(Vec<f64>, Vec<f64>)> = (0..2).map(|j| (wave(16, j as f64, 1.0), wave(16, 3.0 * j as f64, 2.0))).collect();
    let pairs: Vec<(&[f64], &[f64])> = samples.iter().map(|(u, d)| (&u[..], &d[..])).collect();
    let full = grad_derivative_fit(&m, &p, &pairs).unwrap();
    let a = grad_derivative_fit(&m, &p, &pairs[..1]).unwrap();
    let b = grad_derivative_fit(&m, &p, &pairs[1..]).unwrap();
    let mean: Vec<f64> = a.grad.iter().zip(&b.grad).map(|(x, y)| (x + y) / 2.0).collect();
    assert!(max_rel(&full.grad, &mean) <= 1e-12);
}
