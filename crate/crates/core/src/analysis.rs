//! Closed-form steady-state quantities of the network: expected per-client
//! relative delays, their Jacobian with respect to the routing vector, the
//! update throughput, and its gradient.
//!
//! The relative delay of client `i` is the expected number of updates the
//! server applies while one of client `i`'s tasks is in flight, seen by that
//! task (equivalently: the staleness of the gradient it brings back). Under
//! the product-form stationary law every such quantity is a finite sum of
//! normalization-constant ratios; gradients come for free because
//! log-derivatives of normalization constants are station occupancy moments,
//! so differentiation turns into covariance computations instead of numeric
//! perturbation.
//!
//! All routing arguments are raw positive weights. Delays are invariant under
//! scaling of the whole vector, and the Jacobian/gradient formulas are exact
//! partial derivatives in these raw coordinates, which is precisely what the
//! finite-difference acceptance oracles perturb.

use crate::buzen::NormalizationTable;
use crate::model::{ClientProfile, ModelKind};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("operation for the {expected} variant got a {got} table")]
    VariantMismatch { expected: ModelKind, got: ModelKind },
    #[error("table covers populations up to {have}, but the operation needs {needed}")]
    TableTooSmall { needed: usize, have: usize },
    #[error("routing vector has {got} entries but there are {expected} clients")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("concurrency m must be at least 1")]
    BadConcurrency,
    #[error("central server rate mu_cs = {0} must be positive and finite")]
    BadCsRate(f64),
}

/// Expected relative delays, their Jacobian in the raw routing coordinates,
/// and the variant they were computed under.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DelayReport {
    pub delays: Vec<f64>,
    pub jacobian: Vec<Vec<f64>>,
    pub model: ModelKind,
}

/// The intermediate coefficients behind delays and second moments: `gamma`
/// are communication loads, `beta1`/`beta2` compute-queue tail sums at
/// population offsets one and two, `alpha`/`psi` the second-moment kernels,
/// and the `*_cs` fields their central-server analogues (zero or empty in a
/// base-variant table).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoefficientTable {
    pub gamma: Vec<f64>,
    pub beta1: Vec<f64>,
    pub beta2: Vec<f64>,
    pub alpha: Vec<Vec<f64>>,
    pub psi: Vec<Vec<f64>>,
    pub beta_cs1: f64,
    pub beta_cs2: f64,
    pub alpha_cs_row: Vec<f64>,
    pub alpha_cs_pair: Vec<Vec<f64>>,
}

fn check_args(
    table: &NormalizationTable,
    clients: &[ClientProfile],
    p: &[f64],
    m: usize,
    needed_population: usize,
    expected_variant: ModelKind,
) -> Result<(), AnalysisError> {
    if table.variant() != expected_variant {
        return Err(AnalysisError::VariantMismatch {
            expected: expected_variant,
            got: table.variant(),
        });
    }
    if clients.len() != p.len() {
        return Err(AnalysisError::DimensionMismatch {
            expected: clients.len(),
            got: p.len(),
        });
    }
    if m < 1 {
        return Err(AnalysisError::BadConcurrency);
    }
    if table.population() < needed_population {
        return Err(AnalysisError::TableTooSmall {
            needed: needed_population,
            have: table.population(),
        });
    }
    Ok(())
}

/// Ratio helper around one table and one fixed denominator population.
struct Ratios<'a> {
    table: &'a NormalizationTable,
    log_den: f64,
}

impl<'a> Ratios<'a> {
    fn new(table: &'a NormalizationTable, denominator_population: isize) -> Self {
        Ratios {
            table,
            log_den: table.log_value(denominator_population),
        }
    }

    /// `load^k * Z_{pop} / Z_den`, where `load = exp(log_load)`; zero when
    /// `pop` is negative.
    fn term(&self, log_load: f64, k: isize, pop: isize) -> f64 {
        (k as f64 * log_load + self.table.log_value(pop) - self.log_den).exp()
    }

    /// `Z_{pop} / Z_den`.
    fn plain(&self, pop: isize) -> f64 {
        (self.table.log_value(pop) - self.log_den).exp()
    }

    /// Tail sum `sum_{k=1}^{m-ell} load^k Z_{m-ell-k} / Z_den` with an extra
    /// per-term weight.
    fn tail(&self, log_load: f64, m: isize, ell: isize, weight: impl Fn(isize) -> f64) -> f64 {
        let mut sum = 0.0;
        let mut k = 1;
        while k <= m - ell {
            sum += weight(k) * self.term(log_load, k, m - ell - k);
            k += 1;
        }
        sum
    }

    /// Log-domain backward recurrence for the cross-station kernel:
    /// `out[k] = ln sum_{l>=1} load^l Z_{m-1-k-l} / Z_den`. Summing
    /// `exp(k*other_load + out[k])` over `k >= 1` then yields the double tail
    /// sum over `k, l >= 1`, `k + l <= m-1` in O(m) per station pair side.
    fn cross_kernel(&self, log_load: f64, m: isize) -> Vec<f64> {
        let len = (m - 1).max(0) as usize + 1;
        let mut out = vec![f64::NEG_INFINITY; len];
        let mut k = m - 2;
        while k >= 0 {
            let t = self.table.log_value(m - 2 - k) - self.log_den;
            let prev = out[(k + 1) as usize];
            let merged = if prev == f64::NEG_INFINITY {
                t
            } else if t == f64::NEG_INFINITY {
                prev
            } else {
                let (hi, lo) = if t >= prev { (t, prev) } else { (prev, t) };
                hi + (lo - hi).exp().ln_1p()
            };
            out[k as usize] = log_load + merged;
            k -= 1;
        }
        out
    }
}

fn log_compute_loads(clients: &[ClientProfile], p: &[f64]) -> Vec<f64> {
    clients
        .iter()
        .zip(p)
        .map(|(c, &pi)| (pi / c.mu_c).ln())
        .collect()
}

fn gammas(clients: &[ClientProfile], p: &[f64]) -> Vec<f64> {
    clients
        .iter()
        .zip(p)
        .map(|(c, &pi)| pi * (1.0 / c.mu_d + 1.0 / c.mu_u))
        .collect()
}

/// Coefficients common to both variants, evaluated against `table` with
/// denominator population `m-1`. Pass `mu_cs` iff the table is the
/// central-server variant.
pub fn coefficient_table(
    table: &NormalizationTable,
    clients: &[ClientProfile],
    p: &[f64],
    m: usize,
    mu_cs: Option<f64>,
) -> Result<CoefficientTable, AnalysisError> {
    let expected_variant = match mu_cs {
        None => ModelKind::NoCs,
        Some(_) => ModelKind::WithCs,
    };
    check_args(table, clients, p, m, m - 1, expected_variant)?;
    if let Some(mu) = mu_cs {
        if !(mu.is_finite() && mu > 0.0) {
            return Err(AnalysisError::BadCsRate(mu));
        }
    }
    let n = clients.len();
    let mi = m as isize;
    let r = Ratios::new(table, mi - 1);
    let loads = log_compute_loads(clients, p);
    let gamma = gammas(clients, p);

    let beta1: Vec<f64> = loads.iter().map(|&ll| r.tail(ll, mi, 1, |_| 1.0)).collect();
    let beta2: Vec<f64> = loads.iter().map(|&ll| r.tail(ll, mi, 2, |_| 1.0)).collect();

    let kernels: Vec<Vec<f64>> = loads.iter().map(|&ll| r.cross_kernel(ll, mi)).collect();
    let mut alpha = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            alpha[i][j] = if i == j {
                r.tail(loads[i], mi, 1, |k| (2 * k - 1) as f64)
            } else {
                let mut sum = 0.0;
                for (k, &lk) in kernels[j].iter().enumerate().skip(1) {
                    sum += (k as f64 * loads[i] + lk).exp();
                }
                sum
            };
        }
    }

    let z2 = r.plain(mi - 2);
    let z3 = r.plain(mi - 3);
    let mut psi = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            psi[i][j] = gamma[i] * (gamma[j] * z3 + if i == j { z2 } else { 0.0 });
        }
    }

    let (beta_cs1, beta_cs2, alpha_cs_row, alpha_cs_pair) = match mu_cs {
        None => (0.0, 0.0, Vec::new(), Vec::new()),
        Some(mu) => {
            // Central-station load carries the weight sum (see the table
            // construction); class shares of its queue are p_i over that sum.
            let sigma: f64 = p.iter().sum();
            let ll_cs = (sigma / mu).ln();
            let b1 = r.tail(ll_cs, mi, 1, |_| 1.0);
            let b2 = r.tail(ll_cs, mi, 2, |_| 1.0);
            let row: Vec<f64> = kernels
                .iter()
                .map(|kern| {
                    let mut sum = 0.0;
                    for (k, &lk) in kern.iter().enumerate().skip(1) {
                        sum += (k as f64 * ll_cs + lk).exp();
                    }
                    sum
                })
                .collect();
            let s1 = r.tail(ll_cs, mi, 1, |k| (k - 1) as f64);
            let mut pair = vec![vec![0.0; n]; n];
            for i in 0..n {
                let ri = p[i] / sigma;
                for j in 0..n {
                    let rj = p[j] / sigma;
                    pair[i][j] = 2.0 * ri * rj * s1 + if i == j { ri * b1 } else { 0.0 };
                }
            }
            (b1, b2, row, pair)
        }
    };

    Ok(CoefficientTable {
        gamma,
        beta1,
        beta2,
        alpha,
        psi,
        beta_cs1,
        beta_cs2,
        alpha_cs_row,
        alpha_cs_pair,
    })
}

/// Expected relative delay of each client in the base network at concurrency
/// `m`: the mean number of other updates applied while one of this client's
/// tasks is in flight. The sum over clients is exactly `m - 1`.
pub fn expected_delays(
    table: &NormalizationTable,
    clients: &[ClientProfile],
    p: &[f64],
    m: usize,
) -> Result<Vec<f64>, AnalysisError> {
    check_args(table, clients, p, m, m - 1, ModelKind::NoCs)?;
    let mi = m as isize;
    let r = Ratios::new(table, mi - 1);
    let z2 = r.plain(mi - 2);
    Ok(clients
        .iter()
        .zip(p)
        .map(|(c, &pi)| {
            let beta1 = r.tail((pi / c.mu_c).ln(), mi, 1, |_| 1.0);
            beta1 + pi * (1.0 / c.mu_d + 1.0 / c.mu_u) * z2
        })
        .collect())
}

/// Expected relative delays in the central-server variant. Client `i` now
/// also waits behind the shared central queue, in proportion `p_i` of its
/// stationary occupancy.
pub fn expected_delays_cs(
    table: &NormalizationTable,
    clients: &[ClientProfile],
    p: &[f64],
    m: usize,
    mu_cs: f64,
) -> Result<Vec<f64>, AnalysisError> {
    check_args(table, clients, p, m, m - 1, ModelKind::WithCs)?;
    if !(mu_cs.is_finite() && mu_cs > 0.0) {
        return Err(AnalysisError::BadCsRate(mu_cs));
    }
    let mi = m as isize;
    let r = Ratios::new(table, mi - 1);
    let z2 = r.plain(mi - 2);
    let sigma: f64 = p.iter().sum();
    let beta_cs1 = r.tail((sigma / mu_cs).ln(), mi, 1, |_| 1.0);
    Ok(clients
        .iter()
        .zip(p)
        .map(|(c, &pi)| {
            let beta1 = r.tail((pi / c.mu_c).ln(), mi, 1, |_| 1.0);
            pi / sigma * beta_cs1 + beta1 + pi * (1.0 / c.mu_d + 1.0 / c.mu_u) * z2
        })
        .collect())
}

fn jacobian_from_coefficients(
    coeffs: &CoefficientTable,
    delays: &[f64],
    p: &[f64],
    with_cs: bool,
) -> Vec<Vec<f64>> {
    let n = p.len();
    let sigma: f64 = p.iter().sum();
    let mut jac = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut second = coeffs.alpha[i][j]
                + coeffs.beta2[i] * coeffs.gamma[j]
                + coeffs.beta2[j] * coeffs.gamma[i]
                + coeffs.psi[i][j];
            if with_cs {
                let (ri, rj) = (p[i] / sigma, p[j] / sigma);
                second += coeffs.alpha_cs_pair[i][j]
                    + ri * coeffs.alpha_cs_row[j]
                    + rj * coeffs.alpha_cs_row[i]
                    + coeffs.beta_cs2 * (ri * coeffs.gamma[j] + rj * coeffs.gamma[i]);
            }
            jac[i][j] = (second - delays[i] * delays[j]) / p[j];
        }
    }
    jac
}

/// Exact Jacobian `d delays / d p` of the base variant in raw routing
/// coordinates. Row `i`, column `j` is the derivative of client `i`'s delay
/// with respect to `p_j`; each column sums to zero because total delay is
/// pinned at `m - 1`.
pub fn delay_jacobian(
    table: &NormalizationTable,
    clients: &[ClientProfile],
    p: &[f64],
    m: usize,
) -> Result<Vec<Vec<f64>>, AnalysisError> {
    let coeffs = coefficient_table(table, clients, p, m, None)?;
    let delays = expected_delays(table, clients, p, m)?;
    Ok(jacobian_from_coefficients(&coeffs, &delays, p, false))
}

/// Exact delay Jacobian of the central-server variant.
pub fn delay_jacobian_cs(
    table: &NormalizationTable,
    clients: &[ClientProfile],
    p: &[f64],
    m: usize,
    mu_cs: f64,
) -> Result<Vec<Vec<f64>>, AnalysisError> {
    let coeffs = coefficient_table(table, clients, p, m, Some(mu_cs))?;
    let delays = expected_delays_cs(table, clients, p, m, mu_cs)?;
    Ok(jacobian_from_coefficients(&coeffs, &delays, p, true))
}

/// Steady-state update throughput at the table's own population `m`: the
/// ratio `Z_{m-1} / Z_m`, in updates per unit time. Works for both variants.
pub fn throughput(table: &NormalizationTable) -> f64 {
    assert!(table.population() >= 1, "throughput needs population >= 1");
    table.ratio(table.population())
}

/// Expected tasks at client `j`'s stations (plus its share of the central
/// queue, for that variant) under population `pop`, per client.
fn client_station_sums(
    table: &NormalizationTable,
    clients: &[ClientProfile],
    p: &[f64],
    pop: isize,
    mu_cs: Option<f64>,
) -> Vec<f64> {
    let r = Ratios::new(table, pop);
    let link_ratio = r.plain(pop - 1);
    let sigma: f64 = p.iter().sum();
    let cs_queue = mu_cs.map_or(0.0, |mu| {
        let ll = (sigma / mu).ln();
        let mut sum = 0.0;
        for k in 1..=pop.max(0) {
            sum += r.term(ll, k, pop - k);
        }
        sum
    });
    clients
        .iter()
        .zip(p)
        .map(|(c, &pi)| {
            let ll = (pi / c.mu_c).ln();
            let mut compute = 0.0;
            for k in 1..=pop.max(0) {
                compute += r.term(ll, k, pop - k);
            }
            compute + pi * (1.0 / c.mu_d + 1.0 / c.mu_u) * link_ratio + pi / sigma * cs_queue
        })
        .collect()
}

fn throughput_gradient_impl(
    table: &NormalizationTable,
    clients: &[ClientProfile],
    p: &[f64],
    m: usize,
    mu_cs: Option<f64>,
) -> Vec<f64> {
    let lambda = (table.log_value(m as isize - 1) - table.log_value(m as isize)).exp();
    let at_m1 = client_station_sums(table, clients, p, m as isize - 1, mu_cs);
    let at_m = client_station_sums(table, clients, p, m as isize, mu_cs);
    (0..clients.len())
        .map(|j| lambda / p[j] * (at_m1[j] - at_m[j]))
        .collect()
}

/// Exact gradient of throughput with respect to the raw routing weights, for
/// the base variant. Satisfies `sum_j p_j * grad_j = -lambda`, the scaling
/// law `lambda(c p) = lambda(p) / c` in differential form.
pub fn throughput_gradient(
    table: &NormalizationTable,
    clients: &[ClientProfile],
    p: &[f64],
    m: usize,
) -> Result<Vec<f64>, AnalysisError> {
    check_args(table, clients, p, m, m, ModelKind::NoCs)?;
    Ok(throughput_gradient_impl(table, clients, p, m, None))
}

/// Exact throughput gradient for the central-server variant.
pub fn throughput_gradient_cs(
    table: &NormalizationTable,
    clients: &[ClientProfile],
    p: &[f64],
    m: usize,
    mu_cs: f64,
) -> Result<Vec<f64>, AnalysisError> {
    check_args(table, clients, p, m, m, ModelKind::WithCs)?;
    if !(mu_cs.is_finite() && mu_cs > 0.0) {
        return Err(AnalysisError::BadCsRate(mu_cs));
    }
    Ok(throughput_gradient_impl(table, clients, p, m, Some(mu_cs)))
}

/// Delays plus Jacobian for whichever variant the table was built under.
/// `mu_cs` must be given exactly when the table is the central-server
/// variant.
pub fn delay_report(
    table: &NormalizationTable,
    clients: &[ClientProfile],
    p: &[f64],
    m: usize,
    mu_cs: Option<f64>,
) -> Result<DelayReport, AnalysisError> {
    match (table.variant(), mu_cs) {
        (ModelKind::NoCs, None) => Ok(DelayReport {
            delays: expected_delays(table, clients, p, m)?,
            jacobian: delay_jacobian(table, clients, p, m)?,
            model: ModelKind::NoCs,
        }),
        (ModelKind::WithCs, Some(mu)) => Ok(DelayReport {
            delays: expected_delays_cs(table, clients, p, m, mu)?,
            jacobian: delay_jacobian_cs(table, clients, p, m, mu)?,
            model: ModelKind::WithCs,
        }),
        (got, _) => Err(AnalysisError::VariantMismatch {
            expected: match got {
                ModelKind::NoCs => ModelKind::WithCs,
                ModelKind::WithCs => ModelKind::NoCs,
            },
            got,
        }),
    }
}
