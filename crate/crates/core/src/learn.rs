//! Desk-scale asynchronous SGD on synthetic least-squares tasks.
//!
//! The learning loop is driven by the event log of a network simulation:
//! whenever a task is dispatched the current iterate is snapshotted, the
//! client's gradient is evaluated at that snapshot, and the update lands
//! only when the task finishes its route, scaled by `eta / (n * p_i)` so
//! that the expected applied step matches synchronous SGD. Because the
//! snapshot ages while the task is in flight, every applied update carries
//! exactly the staleness the queueing analysis prices in, which is what
//! makes these runs a direct empirical probe of the round-complexity
//! bounds.
//!
//! Tasks are tiny linear regressions with analytic losses, gradients, and a
//! solvable global optimum, so whole trade-off studies run in seconds.

use crate::model::{LearningConstants, ModelError, ModelKind, SystemConfig};
use crate::simulate::{
    self, Horizon, ServiceLaw, SimulateError, TraceEvent, TraceKind,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A run is cut off once the loss exceeds this: the step size has made the
/// quadratic recursion expansive and no later iterate can recover.
pub const DIVERGENCE_LOSS: f64 = 1e12;

const RIDGE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("task needs at least one client and a positive dimension")]
    EmptyTask,
    #[error("task has {task} clients but the config has {config}")]
    ClientMismatch { task: usize, config: usize },
    #[error("learning rate eta = {0} must be positive and finite")]
    BadEta(f64),
    #[error("round budget must be at least 1")]
    BadRounds,
    #[error("constant estimation needs at least one sample point")]
    NoSamples,
    #[error("normal equations are singular; the task has no unique optimum")]
    SingularSystem,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Simulate(#[from] SimulateError),
}

/// A synthetic federated least-squares problem. Client `i` owns the rows
/// `features[i]` with targets `targets[i]` and the loss
/// `f_i(w) = ||A_i w - b_i||^2 / (2 rows_i)`; the global objective is the
/// plain average over clients. `w_star` and `f_star` solve the global
/// problem exactly, so suboptimality is always measurable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederatedTask {
    pub features: Vec<Vec<Vec<f64>>>,
    pub targets: Vec<Vec<f64>>,
    pub w0: Vec<f64>,
    pub noise_sigma: f64,
    pub w_star: Vec<f64>,
    pub f_star: f64,
}

impl FederatedTask {
    pub fn n(&self) -> usize {
        self.features.len()
    }

    pub fn dim(&self) -> usize {
        self.w0.len()
    }

    pub fn client_loss(&self, client: usize, w: &[f64]) -> f64 {
        let rows = &self.features[client];
        let mut sum = 0.0;
        for (row, &target) in rows.iter().zip(&self.targets[client]) {
            let r = dot(row, w) - target;
            sum += r * r;
        }
        sum / (2.0 * rows.len() as f64)
    }

    pub fn client_gradient(&self, client: usize, w: &[f64]) -> Vec<f64> {
        let rows = &self.features[client];
        let mut grad = vec![0.0; w.len()];
        for (row, &target) in rows.iter().zip(&self.targets[client]) {
            let r = dot(row, w) - target;
            for (g, &x) in grad.iter_mut().zip(row) {
                *g += r * x;
            }
        }
        let scale = 1.0 / rows.len() as f64;
        for g in &mut grad {
            *g *= scale;
        }
        grad
    }

    pub fn loss(&self, w: &[f64]) -> f64 {
        (0..self.n()).map(|i| self.client_loss(i, w)).sum::<f64>() / self.n() as f64
    }

    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; w.len()];
        for i in 0..self.n() {
            for (g, gi) in grad.iter_mut().zip(self.client_gradient(i, w)) {
                *g += gi;
            }
        }
        let scale = 1.0 / self.n() as f64;
        for g in &mut grad {
            *g *= scale;
        }
        grad
    }

    /// Averaged-Hessian product `H v` without forming `H`.
    fn hessian_product(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for client in 0..self.n() {
            let rows = &self.features[client];
            let scale = 1.0 / rows.len() as f64;
            for row in rows {
                let rv = dot(row, v) * scale;
                for (o, &x) in out.iter_mut().zip(row) {
                    *o += rv * x;
                }
            }
        }
        let scale = 1.0 / self.n() as f64;
        for o in &mut out {
            *o *= scale;
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solve `a x = b` by Gaussian elimination with partial pivoting.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>, LearnError> {
    let d = b.len();
    for col in 0..d {
        let pivot = (col..d)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty range");
        if a[pivot][col].abs() < 1e-12 {
            return Err(LearnError::SingularSystem);
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..d {
            let (pivot_rows, rest) = a.split_at_mut(row);
            let pivot = &pivot_rows[col];
            let target = &mut rest[0];
            let factor = target[col] / pivot[col];
            if factor == 0.0 {
                continue;
            }
            for (t, &v) in target[col..].iter_mut().zip(&pivot[col..]) {
                *t -= factor * v;
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; d];
    for col in (0..d).rev() {
        let mut acc = b[col];
        for k in col + 1..d {
            acc -= a[col][k] * x[k];
        }
        x[col] = acc / a[col][col];
    }
    Ok(x)
}

/// Build a random federated least-squares task: every client gets
/// `dim + 4` Gaussian rows plus a faint ridge (so each local problem is
/// strongly convex), and its local optimum is drawn at distance scale
/// `heterogeneity` from the origin. `noise_sigma` is the standard deviation
/// of the gradient noise injected during training.
pub fn make_synthetic_task(
    n: usize,
    dim: usize,
    heterogeneity: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<FederatedTask, LearnError> {
    if n == 0 || dim == 0 {
        return Err(LearnError::EmptyTask);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let mut local_opt = vec![0.0; dim];
        for w in &mut local_opt {
            let z: f64 = StandardNormal.sample(&mut rng);
            *w = heterogeneity * z;
        }
        let mut rows = Vec::with_capacity(dim + 4 + dim);
        for _ in 0..dim + 4 {
            let mut row = vec![0.0; dim];
            for x in &mut row {
                *x = StandardNormal.sample(&mut rng);
            }
            rows.push(row);
        }
        for j in 0..dim {
            let mut row = vec![0.0; dim];
            row[j] = RIDGE.sqrt();
            rows.push(row);
        }
        let b: Vec<f64> = rows.iter().map(|row| dot(row, &local_opt)).collect();
        features.push(rows);
        targets.push(b);
    }
    let mut task = FederatedTask {
        features,
        targets,
        w0: vec![0.0; dim],
        noise_sigma,
        w_star: vec![0.0; dim],
        f_star: 0.0,
    };
    let mut h = vec![vec![0.0; dim]; dim];
    let mut rhs = vec![0.0; dim];
    for client in 0..n {
        let rows = &task.features[client];
        let scale = 1.0 / (n as f64 * rows.len() as f64);
        for (row, &target) in rows.iter().zip(&task.targets[client]) {
            for j in 0..dim {
                rhs[j] += scale * row[j] * target;
                for k in 0..dim {
                    h[j][k] += scale * row[j] * row[k];
                }
            }
        }
    }
    task.w_star = solve_dense(h, rhs)?;
    task.f_star = task.loss(&task.w_star);
    Ok(task)
}

/// Estimate the constants the complexity bounds need, by direct measurement
/// on the task: smoothness from power iteration on the averaged Hessian,
/// dissimilarity and gradient bounds from the maxima over `sample_count`
/// points on the sphere of the given `radius` around the optimum (plus the
/// start iterate), and the initial gap exactly.
pub fn estimate_constants(
    task: &FederatedTask,
    sample_count: usize,
    radius: f64,
    seed: u64,
) -> Result<LearningConstants, LearnError> {
    if sample_count == 0 {
        return Err(LearnError::NoSamples);
    }
    let dim = task.dim();
    let mut v = vec![1.0 / (dim as f64).sqrt(); dim];
    let mut l = 0.0;
    for _ in 0..200 {
        let hv = task.hessian_product(&v);
        l = dot(&hv, &hv).sqrt();
        if l == 0.0 {
            break;
        }
        v = hv.iter().map(|x| x / l).collect();
    }
    let delta = task.loss(&task.w0) - task.f_star;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(sample_count + 1);
    for _ in 0..sample_count {
        let mut z: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = dot(&z, &z).sqrt();
        if norm == 0.0 {
            continue;
        }
        for (zj, wj) in z.iter_mut().zip(&task.w_star) {
            *zj = wj + radius * *zj / norm;
        }
        points.push(z);
    }
    points.push(task.w0.clone());
    let mut m_max = 0.0_f64;
    let mut g_max = 0.0_f64;
    for w in &points {
        let full = task.gradient(w);
        for i in 0..task.n() {
            let local = task.client_gradient(i, w);
            let mut dev = 0.0;
            let mut norm = 0.0;
            for (lj, fj) in local.iter().zip(&full) {
                dev += (lj - fj) * (lj - fj);
                norm += lj * lj;
            }
            m_max = m_max.max(dev.sqrt());
            g_max = g_max.max(norm.sqrt());
        }
    }
    Ok(LearningConstants::new(delta, l, task.noise_sigma, m_max, g_max)?)
}

/// One applied update of a training run. `staleness` counts the updates
/// applied while this one was in flight; `loss` and `grad_norm_sq` are
/// evaluated at the iterate right after the update landed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub k: u64,
    pub t: f64,
    pub energy: f64,
    pub loss: f64,
    pub grad_norm_sq: f64,
    pub client: usize,
    pub staleness: u64,
}

/// Outcome of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnResult {
    pub eta: f64,
    pub seed: u64,
    pub trajectory: Vec<TrajectoryPoint>,
    pub final_w: Vec<f64>,
    pub final_loss: f64,
    pub diverged: bool,
}

/// The learning-rate grid the CLI sweeps when no rate is given: the
/// theoretical ceiling and two halvings of it.
pub fn eta_candidates(eta_max: f64) -> Vec<f64> {
    vec![eta_max, eta_max / 2.0, eta_max / 4.0]
}

struct Replay<'a> {
    config: &'a SystemConfig,
    with_cs: bool,
    p_cs: f64,
    down: Vec<u32>,
    up: Vec<u32>,
    comp_pending: Vec<u32>,
    cs_pending: u32,
    clock: f64,
    energy: f64,
}

impl<'a> Replay<'a> {
    fn new(config: &'a SystemConfig, model: ModelKind) -> Self {
        let n = config.n();
        let (with_cs, p_cs) = match (model, &config.cs) {
            (ModelKind::WithCs, Some(cs)) => (true, cs.p_cs),
            _ => (false, 0.0),
        };
        Replay {
            config,
            with_cs,
            p_cs,
            down: vec![0; n],
            up: vec![0; n],
            comp_pending: vec![0; n],
            cs_pending: 0,
            clock: 0.0,
            energy: 0.0,
        }
    }

    /// Advance the energy integral to the event and apply its occupancy
    /// change. Returns true when the event applies an update.
    fn step(&mut self, event: &TraceEvent) -> bool {
        let mut p = if self.cs_pending > 0 { self.p_cs } else { 0.0 };
        for (i, c) in self.config.clients.iter().enumerate() {
            p += c.p_d * self.down[i] as f64 + c.p_u * self.up[i] as f64;
            if self.comp_pending[i] > 0 {
                p += c.p_c;
            }
        }
        self.energy += p * (event.time - self.clock);
        self.clock = event.time;
        let i = event.client;
        match event.kind {
            TraceKind::Dispatch => {
                self.down[i] += 1;
                false
            }
            TraceKind::DownlinkDone => {
                self.down[i] -= 1;
                self.comp_pending[i] += 1;
                false
            }
            TraceKind::ComputeDone => {
                self.comp_pending[i] -= 1;
                self.up[i] += 1;
                false
            }
            TraceKind::UplinkDone => {
                self.up[i] -= 1;
                if self.with_cs {
                    self.cs_pending += 1;
                    false
                } else {
                    true
                }
            }
            TraceKind::CentralDone => {
                self.cs_pending -= 1;
                true
            }
        }
    }
}

/// Run asynchronous SGD for `k_rounds` applied updates on the given task,
/// with the network described by `config` scheduling the updates. Gradients
/// are evaluated at the iterate each task was dispatched with, perturbed by
/// isotropic Gaussian noise of total standard deviation `noise_sigma`, and
/// applied with the compensation `eta / (n * p_i)`.
pub fn run_generalized_async_sgd(
    task: &FederatedTask,
    config: &SystemConfig,
    model: ModelKind,
    law: ServiceLaw,
    eta: f64,
    k_rounds: u64,
    seed: u64,
) -> Result<LearnResult, LearnError> {
    if task.n() != config.n() {
        return Err(LearnError::ClientMismatch {
            task: task.n(),
            config: config.n(),
        });
    }
    if !(eta.is_finite() && eta > 0.0) {
        return Err(LearnError::BadEta(eta));
    }
    if k_rounds == 0 {
        return Err(LearnError::BadRounds);
    }
    let (_, trace) =
        simulate::run_simulation_traced(config, model, law, Horizon::Rounds(k_rounds), 0, seed)?;
    let n = task.n();
    let dim = task.dim();
    let mut noise_rng = {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX);
        rng
    };
    let per_coord_noise = task.noise_sigma / (dim as f64).sqrt();
    let mut replay = Replay::new(config, model);
    let mut w = task.w0.clone();
    let mut snapshots: Vec<Option<(Vec<f64>, u64)>> = Vec::new();
    let mut trajectory = Vec::with_capacity(k_rounds as usize);
    let mut applied = 0u64;
    let mut diverged = false;
    for event in &trace {
        let applies = replay.step(event);
        let slot = event.task as usize;
        if event.kind == TraceKind::Dispatch {
            if slot >= snapshots.len() {
                snapshots.resize(slot + 1, None);
            }
            snapshots[slot] = Some((w.clone(), applied));
            continue;
        }
        if !applies {
            continue;
        }
        let (snapshot, dispatch_round) = snapshots[slot]
            .take()
            .expect("every applied task was dispatched first");
        let staleness = applied - dispatch_round;
        let mut grad = task.client_gradient(event.client, &snapshot);
        if task.noise_sigma > 0.0 {
            for g in &mut grad {
                let z: f64 = StandardNormal.sample(&mut noise_rng);
                *g += per_coord_noise * z;
            }
        }
        let scale = eta / (n as f64 * config.routing[event.client]);
        for (wj, gj) in w.iter_mut().zip(&grad) {
            *wj -= scale * gj;
        }
        applied += 1;
        let loss = task.loss(&w);
        let full = task.gradient(&w);
        trajectory.push(TrajectoryPoint {
            k: applied,
            t: event.time,
            energy: replay.energy,
            loss,
            grad_norm_sq: dot(&full, &full),
            client: event.client,
            staleness,
        });
        if !loss.is_finite() || loss > DIVERGENCE_LOSS {
            diverged = true;
            break;
        }
    }
    let final_loss = task.loss(&w);
    Ok(LearnResult {
        eta,
        seed,
        trajectory,
        final_w: w,
        final_loss,
        diverged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ClientProfile, RoutingVector};

    fn scalar_task() -> FederatedTask {
        FederatedTask {
            features: vec![vec![vec![1.0]]],
            targets: vec![vec![0.0]],
            w0: vec![2.0],
            noise_sigma: 0.0,
            w_star: vec![0.0],
            f_star: 0.0,
        }
    }

    fn unit_config(n: usize, m: usize) -> SystemConfig {
        SystemConfig::new(
            vec![ClientProfile::unit(); n],
            RoutingVector::uniform(n).unwrap(),
            m,
            None,
        )
        .unwrap()
    }

    #[test]
    fn sequential_run_contracts_exactly() {
        let mut task = scalar_task();
        task.w0 = vec![1.0];
        let config = unit_config(1, 1);
        let result = run_generalized_async_sgd(
            &task,
            &config,
            ModelKind::NoCs,
            ServiceLaw::Deterministic,
            0.1,
            50,
            0,
        )
        .unwrap();
        let mut expected = 1.0_f64;
        for _ in 0..50 {
            expected -= 0.1 * expected;
        }
        assert_eq!(result.final_w, vec![expected]);
        assert!(!result.diverged);
        assert_eq!(result.trajectory.len(), 50);
        assert!(result.trajectory.iter().all(|p| p.staleness == 0));
        assert_eq!(result.final_loss, 0.5 * expected * expected);
    }

    #[test]
    fn constants_of_the_scalar_task_are_exact() {
        let task = scalar_task();
        let consts = estimate_constants(&task, 16, 2.0, 1).unwrap();
        assert!((consts.l_smooth - 1.0).abs() < 1e-12);
        assert_eq!(consts.delta, 2.0);
        assert_eq!(consts.sigma, 0.0);
        assert!((consts.g_bound - 2.0).abs() < 1e-12);
        assert!(consts.m_dissim.abs() < 1e-12);
    }

    #[test]
    fn synthetic_task_is_reproducible_and_solved() {
        let a = make_synthetic_task(3, 6, 1.5, 0.2, 9).unwrap();
        let b = make_synthetic_task(3, 6, 1.5, 0.2, 9).unwrap();
        assert_eq!(a, b);
        let c = make_synthetic_task(3, 6, 1.5, 0.2, 10).unwrap();
        assert_ne!(a.features, c.features);
        let grad = a.gradient(&a.w_star);
        let norm = dot(&grad, &grad).sqrt();
        assert!(norm < 1e-9, "gradient norm at optimum: {norm}");
        assert!(a.loss(&a.w0) > a.f_star);
        for w in [&a.w0, &a.w_star] {
            assert!(a.loss(w) >= a.f_star - 1e-12, "{:?}", w);
        }
    }

    #[test]
    fn dissimilarity_grows_with_heterogeneity() {
        let low = make_synthetic_task(4, 5, 0.0, 0.0, 3).unwrap();
        let high = make_synthetic_task(4, 5, 4.0, 0.0, 3).unwrap();
        let c_low = estimate_constants(&low, 64, 1.0, 5).unwrap();
        let c_high = estimate_constants(&high, 64, 1.0, 5).unwrap();
        assert!(
            c_high.m_dissim > c_low.m_dissim,
            "{} vs {}",
            c_high.m_dissim,
            c_low.m_dissim
        );
    }

    #[test]
    fn trajectory_clocks_are_monotone_and_loss_improves() {
        let task = make_synthetic_task(3, 4, 0.5, 0.1, 7).unwrap();
        let config = unit_config(3, 4);
        let result = run_generalized_async_sgd(
            &task,
            &config,
            ModelKind::NoCs,
            ServiceLaw::Exponential,
            0.05,
            800,
            17,
        )
        .unwrap();
        assert!(!result.diverged);
        assert_eq!(result.trajectory.len(), 800);
        for pair in result.trajectory.windows(2) {
            assert!(pair[1].t >= pair[0].t);
            assert!(pair[1].energy >= pair[0].energy);
            assert_eq!(pair[1].k, pair[0].k + 1);
        }
        let max_stale = result.trajectory.iter().map(|p| p.staleness).max().unwrap();
        assert!(max_stale >= 1, "concurrency 4 must produce stale updates");
        assert!(result.final_loss < task.loss(&task.w0));
        assert!(result.final_loss >= task.f_star - 1e-12);
    }

    #[test]
    fn oversized_steps_are_flagged_as_divergent()  {
        let task = make_synthetic_task(2, 3, 0.5, 0.0, 11).unwrap();
        let config = unit_config(2, 2);
        let result = run_generalized_async_sgd(
            &task,
            &config,
            ModelKind::NoCs,
            ServiceLaw::Exponential,
            50.0,
            400,
            5,
        )
        .unwrap();
        assert!(result.diverged);
        assert!(result.trajectory.len() < 400);
    }

    #[test]
    fn runs_are_seed_deterministic() {
        let task = make_synthetic_task(2, 3, 1.0, 0.3, 2).unwrap();
        let config = unit_config(2, 3);
        let a = run_generalized_async_sgd(
            &task,
            &config,
            ModelKind::NoCs,
            ServiceLaw::Lognormal,
            0.05,
            300,
            8,
        )
        .unwrap();
        let b = run_generalized_async_sgd(
            &task,
            &config,
            ModelKind::NoCs,
            ServiceLaw::Lognormal,
            0.05,
            300,
            8,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let task = make_synthetic_task(2, 3, 1.0, 0.0, 1).unwrap();
        let config = unit_config(3, 2);
        assert!(matches!(
            run_generalized_async_sgd(
                &task,
                &config,
                ModelKind::NoCs,
                ServiceLaw::Exponential,
                0.1,
                10,
                0,
            ),
            Err(LearnError::ClientMismatch { .. })
        ));
        let config = unit_config(2, 2);
        assert!(matches!(
            run_generalized_async_sgd(
                &task,
                &config,
                ModelKind::NoCs,
                ServiceLaw::Exponential,
                -0.1,
                10,
                0,
            ),
            Err(LearnError::BadEta(_))
        ));
        assert!(matches!(
            run_generalized_async_sgd(
                &task,
                &config,
                ModelKind::NoCs,
                ServiceLaw::Exponential,
                0.1,
                0,
                0,
            ),
            Err(LearnError::BadRounds)
        ));
        assert!(matches!(
            estimate_constants(&task, 0, 1.0, 0),
            Err(LearnError::NoSamples)
        ));
        assert!(matches!(
            make_synthetic_task(0, 3, 1.0, 0.0, 0),
            Err(LearnError::EmptyTask)
        ));
    }

    #[test]
    fn eta_grid_halves_downward() {
        assert_eq!(eta_candidates(0.8), vec![0.8, 0.4, 0.2]);
    }
}
