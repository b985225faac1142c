//! Convergence budgets on top of the steady-state analysis: how many update
//! rounds the asynchronous SGD scheme needs to reach a target stationarity
//! `eps`, the largest safe learning rate, and what those rounds cost in
//! wall-clock time and energy.
//!
//! Round counts come in two variants. The default assumes a uniform bound on
//! client gradient norms and charges staleness through the expected relative
//! delays. The alternative drops the gradient bound and instead charges a
//! worst-case system term built only from service rates, which is looser but
//! applies to unbounded-heterogeneity objectives.

use crate::analysis::{self, AnalysisError};
use crate::buzen::{self, BuzenError};
use crate::model::{LearningConstants, SystemConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ComplexityError {
    #[error("target accuracy eps = {0} must be positive and finite")]
    BadEpsilon(f64),
    #[error("delays vector has {got} entries but there are {expected} clients")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Buzen(#[from] BuzenError),
}

/// Which round-complexity bound a report was computed under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundVariant {
    BoundedG,
    UnboundedG,
}

/// One system evaluated end to end at a target accuracy: rounds to reach it,
/// the learning-rate ceiling, the steady-state throughput, and the implied
/// wall-clock and energy budgets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub bound_variant: BoundVariant,
    pub k_eps: f64,
    pub eta_max: f64,
    pub lambda: f64,
    pub tau_eps: f64,
    pub energy_round: f64,
    pub e_eps: f64,
}

/// Energy cost structure of a system: `per_task_cost[i]` is the energy one
/// task consumes end to end at client `i` (power draw times mean holding time
/// of each stage), and `cs_cost` the energy of one central-server service.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyProfile {
    pub per_task_cost: Vec<f64>,
    pub cs_cost: f64,
}

impl EnergyProfile {
    pub fn from_config(config: &SystemConfig) -> Self {
        let per_task_cost = config
            .clients
            .iter()
            .map(|c| c.p_c / c.mu_c + c.p_u / c.mu_u + c.p_d / c.mu_d)
            .collect();
        let cs_cost = config.cs.as_ref().map_or(0.0, |cs| cs.p_cs / cs.mu_cs);
        EnergyProfile { per_task_cost, cs_cost }
    }
}

fn check_eps(eps: f64) -> Result<(), ComplexityError> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(ComplexityError::BadEpsilon(eps));
    }
    Ok(())
}

fn check_dims(expected: usize, got: usize) -> Result<(), ComplexityError> {
    if expected != got {
        return Err(ComplexityError::DimensionMismatch { expected, got });
    }
    Ok(())
}

fn inverse_p_sum(p: &[f64]) -> f64 {
    p.iter().map(|&pi| 1.0 / pi).sum()
}

fn staleness_sum(delays: &[f64], p: &[f64]) -> f64 {
    delays
        .iter()
        .zip(p)
        .map(|(&d, &pi)| d / (pi * pi))
        .sum()
}

/// Rounds needed to drive the expected gradient norm below `eps`, under the
/// bounded-gradient assumptions. `delays` must be the expected relative
/// delays of the same `(p, m)` operating point.
///
/// Grows linearly in `1/eps` through the variance term and adds a staleness
/// term scaling as `sqrt((m-1)/eps * sum_i delay_i / p_i^2)`.
pub fn round_complexity(
    consts: &LearningConstants,
    p: &[f64],
    delays: &[f64],
    m: usize,
    eps: f64,
) -> Result<f64, ComplexityError> {
    check_eps(eps)?;
    check_dims(p.len(), delays.len())?;
    let n = p.len() as f64;
    let variance_term = (4.0 + consts.b() / eps) * inverse_p_sum(p) / n;
    let staleness =
        (consts.c() * (m as f64 - 1.0) / eps * staleness_sum(delays, p)).max(0.0);
    Ok(24.0 * consts.l_smooth * consts.delta / (n * eps) * (variance_term + staleness.sqrt()))
}

/// Rounds bound that does not assume bounded gradients: staleness is charged
/// through a worst-case system constant built from service rates alone, plus
/// a dissimilarity term. Looser than [`round_complexity`] but valid for
/// unbounded heterogeneity.
pub fn round_complexity_unbounded(
    consts: &LearningConstants,
    config: &SystemConfig,
    p: &[f64],
    delays: &[f64],
    m: usize,
    eps: f64,
) -> Result<f64, ComplexityError> {
    check_eps(eps)?;
    check_dims(p.len(), delays.len())?;
    check_dims(config.clients.len(), p.len())?;
    let n = p.len() as f64;
    let mf = m as f64;
    let uplink_total: f64 = config.clients.iter().map(|c| c.mu_u).sum();
    let s_sys: f64 = (mf - 1.0)
        * uplink_total
        * config
            .clients
            .iter()
            .zip(p)
            .map(|(c, &pi)| (1.0 / c.mu_d + 1.0 / c.mu_u + mf / c.mu_c) / (pi * pi))
            .sum::<f64>();
    let variance_term = (2.0 + consts.b() / eps) * inverse_p_sum(p) / n;
    let system_term = ((mf - 1.0) * s_sys).max(0.0).sqrt();
    let dissim_term =
        (consts.b() * (mf - 1.0) / (2.0 * eps) * staleness_sum(delays, p)).max(0.0).sqrt();
    Ok(96.0 * consts.l_smooth * consts.delta / (n * eps)
        * (variance_term + system_term + dissim_term))
}

/// Largest learning rate for which the bounded-gradient convergence guarantee
/// holds at this operating point: the binding constraint among curvature,
/// variance, and staleness ceilings. Terms with a vanishing denominator
/// (no noise, or no staleness at `m = 1`) drop out as infinite.
pub fn max_learning_rate(
    consts: &LearningConstants,
    p: &[f64],
    delays: &[f64],
    m: usize,
    eps: f64,
) -> Result<f64, ComplexityError> {
    check_eps(eps)?;
    check_dims(p.len(), delays.len())?;
    let n = p.len() as f64;
    let l = consts.l_smooth;
    let inv_sum = inverse_p_sum(p);
    let curvature = n * n / (8.0 * l * inv_sum);
    let variance = if consts.b() > 0.0 {
        n * n * eps / (2.0 * l * consts.b() * inv_sum)
    } else {
        f64::INFINITY
    };
    let q = consts.c() * (m as f64 - 1.0) * staleness_sum(delays, p);
    let staleness = if q > 0.0 {
        n * eps.sqrt() / (2.0 * l) / q.sqrt()
    } else {
        f64::INFINITY
    };
    Ok(curvature.min(variance).min(staleness))
}

/// Wall-clock budget: rounds divided by steady-state throughput.
pub fn expected_time(k_eps: f64, lambda: f64) -> f64 {
    k_eps / lambda
}

/// Expected energy drawn per applied update: every round costs one central
/// service (if present) plus one end-to-end task at client `i` with
/// probability `p_i`. Does not depend on the concurrency level.
pub fn energy_per_round(profile: &EnergyProfile, p: &[f64]) -> f64 {
    profile.cs_cost
        + profile
            .per_task_cost
            .iter()
            .zip(p)
            .map(|(&e, &pi)| pi * e)
            .sum::<f64>()
}

/// The routing vector minimizing total energy to accuracy at concurrency 1:
/// `p_i` proportional to `1 / sqrt(cs_cost + per_task_cost_i)`. Heavier
/// clients are sampled less, but never zeroed out.
pub fn energy_optimal_routing(profile: &EnergyProfile) -> Vec<f64> {
    let weights: Vec<f64> = profile
        .per_task_cost
        .iter()
        .map(|&e| 1.0 / (profile.cs_cost + e).sqrt())
        .collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// Closed-form minimum of `rounds * energy_per_round` over routing vectors at
/// concurrency 1: the variance prefactor times `(sum_i sqrt(cs_cost +
/// per_task_cost_i))^2`.
pub fn minimal_energy(
    consts: &LearningConstants,
    profile: &EnergyProfile,
    eps: f64,
) -> Result<f64, ComplexityError> {
    check_eps(eps)?;
    let n = profile.per_task_cost.len() as f64;
    let root_sum: f64 = profile
        .per_task_cost
        .iter()
        .map(|&e| (profile.cs_cost + e).sqrt())
        .sum();
    Ok(24.0 * consts.l_smooth * consts.delta / (n * n * eps)
        * (4.0 + consts.b() / eps)
        * root_sum
        * root_sum)
}

/// Evaluate one configuration end to end: build the normalization table for
/// its variant, read off delays and throughput, and assemble rounds, learning
/// rate, time, and energy budgets.
pub fn complexity_report(
    config: &SystemConfig,
    consts: &LearningConstants,
    eps: f64,
    variant: BoundVariant,
) -> Result<ComplexityReport, ComplexityError> {
    check_eps(eps)?;
    let p = config.routing.as_slice();
    let m = config.m;
    let (delays, lambda) = match &config.cs {
        None => {
            let table = buzen::normalization_constants(&config.clients, p, m)?;
            (
                analysis::expected_delays(&table, &config.clients, p, m)?,
                analysis::throughput(&table),
            )
        }
        Some(cs) => {
            let table =
                buzen::normalization_constants_with_cs(&config.clients, p, m, cs.mu_cs)?;
            (
                analysis::expected_delays_cs(&table, &config.clients, p, m, cs.mu_cs)?,
                analysis::throughput(&table),
            )
        }
    };
    let k_eps = match variant {
        BoundVariant::BoundedG => round_complexity(consts, p, &delays, m, eps)?,
        BoundVariant::UnboundedG => {
            round_complexity_unbounded(consts, config, p, &delays, m, eps)?
        }
    };
    let eta_max = max_learning_rate(consts, p, &delays, m, eps)?;
    let profile = EnergyProfile::from_config(config);
    let energy_round = energy_per_round(&profile, p);
    Ok(ComplexityReport {
        bound_variant: variant,
        k_eps,
        eta_max,
        lambda,
        tau_eps: expected_time(k_eps, lambda),
        energy_round,
        e_eps: k_eps * energy_round,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ClientProfile;

    fn zero_noise_consts() -> LearningConstants {
        LearningConstants::new(1.0, 1.0, 0.0, 0.0, 0.0).unwrap()
    }

    #[test]
    fn single_client_single_task_round_count() {
        let consts = zero_noise_consts();
        let k = round_complexity(&consts, &[1.0], &[0.0], 1, 1.0).unwrap();
        assert_eq!(k, 96.0);
    }

    #[test]
    fn unbounded_variant_single_client_two_tasks() {
        let consts = zero_noise_consts();
        let config = SystemConfig::uniform(vec![ClientProfile::unit()], 2).unwrap();
        let k =
            round_complexity_unbounded(&consts, &config, &[1.0], &[1.0], 2, 1.0).unwrap();
        assert_eq!(k, 384.0);
    }

    #[test]
    fn learning_rate_caps_at_curvature_term() {
        let consts = zero_noise_consts();
        let eta = max_learning_rate(&consts, &[1.0], &[0.0], 1, 1e12).unwrap();
        assert_eq!(eta, 1.0 / 8.0);
    }

    #[test]
    fn learning_rate_shrinks_with_noise_and_staleness() {
        let consts = LearningConstants::new(1.0, 1.0, 1.0, 5.0, 14.0).unwrap();
        let quiet = zero_noise_consts();
        let p = [0.5, 0.5];
        let delays = [1.5, 1.5];
        let noisy = max_learning_rate(&consts, &p, &delays, 4, 0.01).unwrap();
        let calm = max_learning_rate(&quiet, &p, &delays, 4, 0.01).unwrap();
        assert!(noisy < calm);
        assert!(noisy > 0.0);
    }

    #[test]
    fn time_budget_divides_by_throughput() {
        assert_eq!(expected_time(96.0, 1.0 / 3.0), 288.0);
    }

    #[test]
    fn energy_per_round_ignores_concurrency() {
        let profile = EnergyProfile {
            per_task_cost: vec![1.0, 4.0],
            cs_cost: 0.3,
        };
        let e = energy_per_round(&profile, &[0.25, 0.75]);
        assert!((e - (0.3 + 0.25 + 3.0)).abs() < 1e-15);
    }

    #[test]
    fn energy_routing_prefers_cheap_clients() {
        let profile = EnergyProfile {
            per_task_cost: vec![1.0, 4.0],
            cs_cost: 0.0,
        };
        let p = energy_optimal_routing(&profile);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn minimal_energy_matches_direct_evaluation_at_the_optimum() {
        let consts = LearningConstants::new(2.0, 3.0, 0.7, 1.2, 2.0).unwrap();
        let profile = EnergyProfile {
            per_task_cost: vec![1.0, 4.0, 0.25],
            cs_cost: 0.5,
        };
        let eps = 0.05;
        let p_star = energy_optimal_routing(&profile);
        let delays = vec![0.0; 3];
        let k = round_complexity(&consts, &p_star, &delays, 1, eps).unwrap();
        let direct = k * energy_per_round(&profile, &p_star);
        let closed = minimal_energy(&consts, &profile, eps).unwrap();
        assert!(
            (direct - closed).abs() < 1e-9 * closed,
            "direct {direct} vs closed {closed}"
        );
        let sqrt_sum: f64 = profile
            .per_task_cost
            .iter()
            .map(|&e| (e + 0.5).sqrt())
            .sum();
        assert!((closed / (sqrt_sum * sqrt_sum)
            - 24.0 * consts.l_smooth * consts.delta / (9.0 * eps) * (4.0 + consts.b() / eps))
        .abs()
            < 1e-9);
    }

    #[test]
    fn round_count_decreases_with_looser_accuracy() {
        let consts = LearningConstants::new(1.0, 1.0, 1.0, 5.0, 14.0).unwrap();
        let p = [0.3, 0.7];
        let delays = [2.0, 1.0];
        let tight = round_complexity(&consts, &p, &delays, 4, 0.01).unwrap();
        let loose = round_complexity(&consts, &p, &delays, 4, 0.1).unwrap();
        assert!(tight > loose);
    }

    #[test]
    fn report_pipeline_is_consistent() {
        let config = SystemConfig::uniform(vec![ClientProfile::unit()], 1).unwrap();
        let consts = zero_noise_consts();
        let report = complexity_report(&config, &consts, 1.0, BoundVariant::BoundedG).unwrap();
        assert_eq!(report.k_eps, 96.0);
        assert!((report.lambda - 1.0 / 3.0).abs() < 1e-13);
        assert!((report.tau_eps - 288.0).abs() < 1e-10);
        assert_eq!(report.energy_round, 0.0);
        assert_eq!(report.e_eps, 0.0);
        assert_eq!(report.eta_max, 0.125);
    }

    #[test]
    fn rejects_bad_epsilon() {
        let consts = zero_noise_consts();
        assert!(matches!(
            round_complexity(&consts, &[1.0], &[0.0], 1, 0.0),
            Err(ComplexityError::BadEpsilon(_))
        ));
        assert!(matches!(
            max_learning_rate(&consts, &[1.0], &[0.0], 1, f64::NAN),
            Err(ComplexityError::BadEpsilon(_))
        ));
    }
}
