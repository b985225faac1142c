//! Routing and concurrency optimization.
//!
//! Every objective here is a smooth function of the routing vector whose
//! exact gradient the analysis layer already provides, so optimization is
//! plain first-order descent: the routing vector is reparameterized through a
//! softmax (keeping iterates strictly inside the simplex), Adam runs in the
//! unconstrained coordinates, and a handful of random restarts guard against
//! bad initializations. Concurrency is searched sequentially with warm
//! starts, since the per-`m` optima move slowly. The Pareto front between
//! wall-clock time and energy is traced by scalarizing the two normalized
//! objectives and sweeping the mixing weight.

use crate::analysis::{self, AnalysisError};
use crate::buzen::{self, BuzenError, NormalizationTable};
use crate::complexity::{self, ComplexityError, EnergyProfile};
use crate::model::{LearningConstants, ModelKind, SystemConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::ops::RangeInclusive;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("joint objective needs rho in [0, 1], got {0:?}")]
    BadRho(Option<f64>),
    #[error("target accuracy eps = {0} must be positive and finite")]
    BadEpsilon(f64),
    #[error("objective asks for the central-server variant but the config has no cs block")]
    MissingCs,
    #[error("warm-start routing has {got} entries but there are {expected} clients")]
    BadInit { expected: usize, got: usize },
    #[error("concurrency range is empty")]
    EmptyRange,
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Buzen(#[from] BuzenError),
    #[error(transparent)]
    Complexity(#[from] ComplexityError),
}

/// What to minimize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    /// Rounds to reach the target accuracy.
    MinRounds,
    /// Negative steady-state throughput.
    MaxThroughput,
    /// Wall-clock time to accuracy: rounds over throughput.
    MinTime,
    /// Energy to accuracy: rounds times energy per round.
    MinEnergy,
    /// `rho * energy + (1 - rho) * time`, each normalized by its standalone
    /// optimum.
    JointTimeEnergy,
}

/// A fully specified optimization target: the objective, its accuracy and
/// problem constants, which network variant to evaluate, and the trade-off
/// weight for the joint objective.
#[derive(Debug, Clone)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    pub rho: Option<f64>,
    pub eps: f64,
    pub consts: LearningConstants,
    pub model: ModelKind,
}

impl ObjectiveSpec {
    pub fn new(
        kind: ObjectiveKind,
        rho: Option<f64>,
        eps: f64,
        consts: LearningConstants,
        model: ModelKind,
    ) -> Result<Self, OptimizeError> {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(OptimizeError::BadEpsilon(eps));
        }
        match (kind, rho) {
            (ObjectiveKind::JointTimeEnergy, Some(r)) if (0.0..=1.0).contains(&r) => {}
            (ObjectiveKind::JointTimeEnergy, r) => return Err(OptimizeError::BadRho(r)),
            (_, None) => {}
            (_, r) => return Err(OptimizeError::BadRho(r)),
        }
        Ok(ObjectiveSpec {
            kind,
            rho,
            eps,
            consts,
            model,
        })
    }
}

/// Knobs of the descent loop. The defaults are the reference configuration
/// used by the acceptance suite.
#[derive(Debug, Clone)]
pub struct OptimizeOptions {
    /// Adam iterations per restart.
    pub max_iters: usize,
    /// Restarts per call: one warm start plus `restarts - 1` random draws.
    pub restarts: usize,
    /// Adam step size.
    pub step: f64,
    /// Stop once the softmax-coordinate gradient falls below this, in
    /// infinity norm.
    pub grad_tol: f64,
    /// Master seed for the random restarts.
    pub seed: u64,
    /// Concurrency search stops after this many consecutive values of `m`
    /// without improvement.
    pub patience: usize,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions {
            max_iters: 2000,
            restarts: 5,
            step: 0.05,
            grad_tol: 1e-7,
            seed: 0,
            patience: 2,
        }
    }
}

/// One recorded step of the winning restart.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub objective: f64,
}

/// Outcome of a routing (and possibly concurrency) optimization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub p_star: Vec<f64>,
    pub m_star: usize,
    pub objective_value: f64,
    pub trace: Vec<TracePoint>,
    pub restarts_used: usize,
}

/// Standalone optima used to normalize the joint objective.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct JointNormalizers {
    pub tau_star: f64,
    pub e_star: f64,
}

/// One point of a time/energy trade-off sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub rho: f64,
    pub m_star: usize,
    pub p_star: Vec<f64>,
    pub objective_value: f64,
    pub tau: f64,
    pub energy: f64,
    pub tau_norm: f64,
    pub energy_norm: f64,
}

/// Map unconstrained coordinates to the interior of the simplex, with the
/// usual max shift so huge coordinates cannot overflow.
pub fn softmax_routing(theta: &[f64]) -> Vec<f64> {
    let max = theta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = theta.iter().map(|&t| (t - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn energy_profile_for(config: &SystemConfig, model: ModelKind) -> EnergyProfile {
    let mut profile = EnergyProfile::from_config(config);
    if model == ModelKind::NoCs {
        profile.cs_cost = 0.0;
    }
    profile
}

/// Evaluation context for one config and objective description.
struct Workspace<'a> {
    config: &'a SystemConfig,
    consts: &'a LearningConstants,
    eps: f64,
    mu_cs: Option<f64>,
    profile: EnergyProfile,
}

impl<'a> Workspace<'a> {
    fn new(
        config: &'a SystemConfig,
        consts: &'a LearningConstants,
        eps: f64,
        model: ModelKind,
    ) -> Result<Self, OptimizeError> {
        let mu_cs = match model {
            ModelKind::NoCs => None,
            ModelKind::WithCs => {
                Some(config.cs.as_ref().ok_or(OptimizeError::MissingCs)?.mu_cs)
            }
        };
        Ok(Workspace {
            config,
            consts,
            eps,
            mu_cs,
            profile: energy_profile_for(config, model),
        })
    }

    fn table(&self, p: &[f64], m: usize) -> Result<NormalizationTable, OptimizeError> {
        Ok(match self.mu_cs {
            None => buzen::normalization_constants(&self.config.clients, p, m)?,
            Some(mu) => {
                buzen::normalization_constants_with_cs(&self.config.clients, p, m, mu)?
            }
        })
    }

    fn delays(
        &self,
        table: &NormalizationTable,
        p: &[f64],
        m: usize,
    ) -> Result<Vec<f64>, OptimizeError> {
        Ok(match self.mu_cs {
            None => analysis::expected_delays(table, &self.config.clients, p, m)?,
            Some(mu) => analysis::expected_delays_cs(table, &self.config.clients, p, m, mu)?,
        })
    }

    fn delay_jacobian(
        &self,
        table: &NormalizationTable,
        p: &[f64],
        m: usize,
    ) -> Result<Vec<Vec<f64>>, OptimizeError> {
        Ok(match self.mu_cs {
            None => analysis::delay_jacobian(table, &self.config.clients, p, m)?,
            Some(mu) => analysis::delay_jacobian_cs(table, &self.config.clients, p, m, mu)?,
        })
    }

    fn throughput_gradient(
        &self,
        table: &NormalizationTable,
        p: &[f64],
        m: usize,
    ) -> Result<Vec<f64>, OptimizeError> {
        Ok(match self.mu_cs {
            None => analysis::throughput_gradient(table, &self.config.clients, p, m)?,
            Some(mu) => {
                analysis::throughput_gradient_cs(table, &self.config.clients, p, m, mu)?
            }
        })
    }

    /// Rounds-to-accuracy and its routing gradient at `(p, m)`.
    fn rounds_and_grad(
        &self,
        p: &[f64],
        m: usize,
        delays: &[f64],
        jacobian: &[Vec<f64>],
    ) -> (f64, Vec<f64>) {
        let n = p.len() as f64;
        let b_over = 4.0 + self.consts.b() / self.eps;
        let front = 24.0 * self.consts.l_smooth * self.consts.delta / (n * self.eps);
        let inv_sum: f64 = p.iter().map(|&pi| 1.0 / pi).sum();
        let stale_sum: f64 = delays
            .iter()
            .zip(p)
            .map(|(&d, &pi)| d / (pi * pi))
            .sum();
        let stale_coef = self.consts.c() * (m as f64 - 1.0) / self.eps;
        let q = (stale_coef * stale_sum).max(0.0);
        let value = front * (b_over * inv_sum / n + q.sqrt());
        let grad = (0..p.len())
            .map(|j| {
                let mut g = -b_over / (n * p[j] * p[j]);
                if q > 0.0 {
                    let ds: f64 = (0..p.len())
                        .map(|i| jacobian[i][j] / (p[i] * p[i]))
                        .sum::<f64>()
                        - 2.0 * delays[j] / (p[j] * p[j] * p[j]);
                    g += stale_coef * ds / (2.0 * q.sqrt());
                }
                front * g
            })
            .collect();
        (value, grad)
    }

    /// Objective value and routing gradient at `(p, m)` for a prepared kind.
    fn eval(
        &self,
        prepared: &Prepared,
        p: &[f64],
        m: usize,
    ) -> Result<(f64, Vec<f64>), OptimizeError> {
        let table = self.table(p, m)?;
        if let Prepared::MaxThroughput = prepared {
            let lambda = analysis::throughput(&table);
            let grad = self.throughput_gradient(&table, p, m)?;
            return Ok((-lambda, grad.iter().map(|g| -g).collect()));
        }
        let delays = self.delays(&table, p, m)?;
        let jacobian = self.delay_jacobian(&table, p, m)?;
        let (k, k_grad) = self.rounds_and_grad(p, m, &delays, &jacobian);
        match prepared {
            Prepared::MinRounds => Ok((k, k_grad)),
            Prepared::MinEnergy => Ok(self.energy_from_rounds(p, k, &k_grad)),
            Prepared::MinTime => {
                self.time_from_rounds(&table, p, m, k, &k_grad)
            }
            Prepared::Joint { rho, tau_star, e_star } => {
                let (e, e_grad) = self.energy_from_rounds(p, k, &k_grad);
                let (t, t_grad) = self.time_from_rounds(&table, p, m, k, &k_grad)?;
                let value = rho * e / e_star + (1.0 - rho) * t / tau_star;
                let grad = e_grad
                    .iter()
                    .zip(&t_grad)
                    .map(|(ge, gt)| rho * ge / e_star + (1.0 - rho) * gt / tau_star)
                    .collect();
                Ok((value, grad))
            }
            Prepared::MaxThroughput => unreachable!(),
        }
    }

    fn energy_from_rounds(&self, p: &[f64], k: f64, k_grad: &[f64]) -> (f64, Vec<f64>) {
        let e_round = complexity::energy_per_round(&self.profile, p);
        let value = k * e_round;
        let grad = k_grad
            .iter()
            .zip(&self.profile.per_task_cost)
            .map(|(gk, &cost)| gk * e_round + k * cost)
            .collect();
        (value, grad)
    }

    fn time_from_rounds(
        &self,
        table: &NormalizationTable,
        p: &[f64],
        m: usize,
        k: f64,
        k_grad: &[f64],
    ) -> Result<(f64, Vec<f64>), OptimizeError> {
        let lambda = analysis::throughput(table);
        let l_grad = self.throughput_gradient(table, p, m)?;
        let value = k / lambda;
        let grad = k_grad
            .iter()
            .zip(&l_grad)
            .map(|(gk, gl)| (gk * lambda - k * gl) / (lambda * lambda))
            .collect();
        Ok((value, grad))
    }
}

enum Prepared {
    MinRounds,
    MaxThroughput,
    MinTime,
    MinEnergy,
    Joint { rho: f64, tau_star: f64, e_star: f64 },
}

fn restart_rng(seed: u64, restart: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (restart as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn adam_descent(
    ws: &Workspace,
    prepared: &Prepared,
    m: usize,
    mut theta: Vec<f64>,
    opts: &OptimizeOptions,
) -> Result<(Vec<f64>, f64, Vec<TracePoint>), OptimizeError> {
    let n = theta.len();
    let (beta1, beta2, adam_eps) = (0.9, 0.999, 1e-8);
    let mut m1 = vec![0.0; n];
    let mut m2 = vec![0.0; n];
    let mut trace = Vec::new();
    for iter in 0..opts.max_iters {
        let p = softmax_routing(&theta);
        let (value, grad_p) = ws.eval(prepared, &p, m)?;
        trace.push(TracePoint {
            iteration: iter,
            objective: value,
        });
        if !value.is_finite() {
            break;
        }
        let inner: f64 = grad_p.iter().zip(&p).map(|(g, pi)| g * pi).sum();
        let grad_theta: Vec<f64> = grad_p
            .iter()
            .zip(&p)
            .map(|(g, pi)| pi * (g - inner))
            .collect();
        let max_abs = grad_theta.iter().fold(0.0_f64, |acc, g| acc.max(g.abs()));
        if max_abs < opts.grad_tol {
            break;
        }
        let t = (iter + 1) as f64;
        for j in 0..n {
            m1[j] = beta1 * m1[j] + (1.0 - beta1) * grad_theta[j];
            m2[j] = beta2 * m2[j] + (1.0 - beta2) * grad_theta[j] * grad_theta[j];
            let m1_hat = m1[j] / (1.0 - beta1.powf(t));
            let m2_hat = m2[j] / (1.0 - beta2.powf(t));
            theta[j] -= opts.step * m1_hat / (m2_hat.sqrt() + adam_eps);
        }
    }
    let p = softmax_routing(&theta);
    let (value, _) = ws.eval(prepared, &p, m)?;
    trace.push(TracePoint {
        iteration: trace.len(),
        objective: value,
    });
    Ok((p, value, trace))
}

fn optimize_prepared(
    ws: &Workspace,
    prepared: &Prepared,
    m: usize,
    init: Option<&[f64]>,
    opts: &OptimizeOptions,
) -> Result<OptimizationResult, OptimizeError> {
    let n = ws.config.n();
    if let Some(init) = init {
        if init.len() != n {
            return Err(OptimizeError::BadInit {
                expected: n,
                got: init.len(),
            });
        }
    }
    let restarts = opts.restarts.max(1);
    let mut best: Option<(f64, Vec<f64>, Vec<TracePoint>)> = None;
    for r in 0..restarts {
        let theta0: Vec<f64> = if r == 0 {
            match init {
                Some(p) => p.iter().map(|&pi| pi.max(1e-300).ln()).collect(),
                None => vec![0.0; n],
            }
        } else {
            let mut rng = restart_rng(opts.seed, r);
            (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
        };
        let (p, value, trace) = adam_descent(ws, prepared, m, theta0, opts)?;
        let better = match &best {
            None => true,
            Some((best_value, _, _)) => value < *best_value,
        };
        if better {
            best = Some((value, p, trace));
        }
    }
    let (objective_value, p_star, trace) = best.expect("at least one restart runs");
    debug_assert!(
        (p_star.iter().sum::<f64>() - 1.0).abs() < 1e-10,
        "softmax output must stay on the simplex"
    );
    Ok(OptimizationResult {
        p_star,
        m_star: m,
        objective_value,
        trace,
        restarts_used: restarts,
    })
}

fn prepare(
    config: &SystemConfig,
    spec: &ObjectiveSpec,
    normalizer_range: RangeInclusive<usize>,
    opts: &OptimizeOptions,
) -> Result<Prepared, OptimizeError> {
    Ok(match spec.kind {
        ObjectiveKind::MinRounds => Prepared::MinRounds,
        ObjectiveKind::MaxThroughput => Prepared::MaxThroughput,
        ObjectiveKind::MinTime => Prepared::MinTime,
        ObjectiveKind::MinEnergy => Prepared::MinEnergy,
        ObjectiveKind::JointTimeEnergy => {
            let norms = joint_normalizers(
                config,
                &spec.consts,
                spec.eps,
                spec.model,
                normalizer_range,
                opts,
            )?;
            Prepared::Joint {
                rho: spec.rho.expect("validated at construction"),
                tau_star: norms.tau_star,
                e_star: norms.e_star,
            }
        }
    })
}

/// The standalone optima that normalize the joint objective: `e_star` is the
/// closed-form energy minimum (always attained at concurrency 1), `tau_star`
/// the time minimum found by a concurrency search over `m_range`.
pub fn joint_normalizers(
    config: &SystemConfig,
    consts: &LearningConstants,
    eps: f64,
    model: ModelKind,
    m_range: RangeInclusive<usize>,
    opts: &OptimizeOptions,
) -> Result<JointNormalizers, OptimizeError> {
    let profile = energy_profile_for(config, model);
    let e_star = complexity::minimal_energy(consts, &profile, eps)?;
    let time_spec = ObjectiveSpec::new(ObjectiveKind::MinTime, None, eps, *consts, model)?;
    let best_time = search_concurrency(config, &time_spec, m_range, opts)?;
    Ok(JointNormalizers {
        tau_star: best_time.objective_value,
        e_star,
    })
}

/// Minimize the objective over routing vectors at fixed concurrency `m`,
/// starting from `init` (or uniform coordinates) plus random restarts.
///
/// For the joint objective the normalizers are computed internally over
/// concurrency `1..=max(m, 30)`; use [`pareto_sweep`] or
/// [`joint_normalizers`] to control that range explicitly.
pub fn optimize_routing(
    config: &SystemConfig,
    spec: &ObjectiveSpec,
    m: usize,
    init: Option<&[f64]>,
    opts: &OptimizeOptions,
) -> Result<OptimizationResult, OptimizeError> {
    let ws = Workspace::new(config, &spec.consts, spec.eps, spec.model)?;
    let prepared = prepare(config, spec, 1..=m.max(30), opts)?;
    optimize_prepared(&ws, &prepared, m, init, opts)
}

/// Minimize the objective jointly over the routing vector and the
/// concurrency levels in `m_range`, sweeping `m` upward and warm-starting
/// each level from the previous optimum. Stops early after
/// `opts.patience` consecutive levels without improvement.
pub fn search_concurrency(
    config: &SystemConfig,
    spec: &ObjectiveSpec,
    m_range: RangeInclusive<usize>,
    opts: &OptimizeOptions,
) -> Result<OptimizationResult, OptimizeError> {
    let ws = Workspace::new(config, &spec.consts, spec.eps, spec.model)?;
    let prepared = prepare(config, spec, m_range.clone(), opts)?;
    search_prepared(&ws, &prepared, m_range, opts)
}

fn search_prepared(
    ws: &Workspace,
    prepared: &Prepared,
    m_range: RangeInclusive<usize>,
    opts: &OptimizeOptions,
) -> Result<OptimizationResult, OptimizeError> {
    let mut warm: Option<Vec<f64>> = None;
    let mut best: Option<OptimizationResult> = None;
    let mut bad_streak = 0;
    let mut any = false;
    for m in m_range {
        any = true;
        let result = optimize_prepared(ws, prepared, m, warm.as_deref(), opts)?;
        warm = Some(result.p_star.clone());
        let improved = best
            .as_ref()
            .is_none_or(|b| result.objective_value < b.objective_value);
        if improved {
            best = Some(result);
            bad_streak = 0;
        } else {
            bad_streak += 1;
            if bad_streak >= opts.patience.max(1) {
                break;
            }
        }
    }
    if !any {
        return Err(OptimizeError::EmptyRange);
    }
    let best = best.expect("non-empty range yields a result");
    debug_assert!({
        let (v, _) = ws.eval(prepared, &best.p_star, best.m_star)?;
        (v - best.objective_value).abs() <= 1e-9 * best.objective_value.abs().max(1.0)
    });
    Ok(best)
}

/// Wall-clock time and energy to accuracy at one operating point `(p, m)`,
/// exactly as the optimizer's objectives measure them.
pub fn operating_point_costs(
    config: &SystemConfig,
    consts: &LearningConstants,
    eps: f64,
    model: ModelKind,
    p: &[f64],
    m: usize,
) -> Result<(f64, f64), OptimizeError> {
    let ws = Workspace::new(config, consts, eps, model)?;
    let table = ws.table(p, m)?;
    let delays = ws.delays(&table, p, m)?;
    let k = complexity::round_complexity(consts, p, &delays, m, eps)?;
    let lambda = analysis::throughput(&table);
    let energy_round = complexity::energy_per_round(&ws.profile, p);
    Ok((k / lambda, k * energy_round))
}

/// Sweep the trade-off weight `rho` over the joint objective, reusing one set
/// of normalizers for the whole sweep. `rho = 0` reduces to pure time
/// minimization, `rho = 1` to pure energy minimization.
pub fn pareto_sweep(
    config: &SystemConfig,
    consts: &LearningConstants,
    eps: f64,
    model: ModelKind,
    rhos: &[f64],
    m_range: RangeInclusive<usize>,
    opts: &OptimizeOptions,
) -> Result<Vec<ParetoPoint>, OptimizeError> {
    let ws = Workspace::new(config, consts, eps, model)?;
    let norms = joint_normalizers(config, consts, eps, model, m_range.clone(), opts)?;
    let mut points = Vec::with_capacity(rhos.len());
    for &rho in rhos {
        if !(0.0..=1.0).contains(&rho) {
            return Err(OptimizeError::BadRho(Some(rho)));
        }
        let prepared = Prepared::Joint {
            rho,
            tau_star: norms.tau_star,
            e_star: norms.e_star,
        };
        let best = search_prepared(&ws, &prepared, m_range.clone(), opts)?;
        let (tau, energy) =
            operating_point_costs(config, consts, eps, model, &best.p_star, best.m_star)?;
        points.push(ParetoPoint {
            rho,
            m_star: best.m_star,
            p_star: best.p_star,
            objective_value: best.objective_value,
            tau,
            energy,
            tau_norm: tau / norms.tau_star,
            energy_norm: energy / norms.e_star,
        });
    }
    Ok(points)
}
