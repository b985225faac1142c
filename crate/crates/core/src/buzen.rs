//! Normalization constants of the closed network.
//!
//! The stationary law of the network is a product over stations of per-station
//! weights, divided by a normalization constant `Z_{n,k}` that sums those
//! products over every way to place `k` tasks on the stations. Everything the
//! analysis layer computes is a ratio of such constants, so this module is the
//! numerical foundation of the crate.
//!
//! Two construction paths are provided and tested against each other:
//!
//! * [`brute_force_constant`]: direct enumeration of all station occupancies,
//!   exponentially large but trivially correct, used as the test oracle.
//! * [`normalization_constants`] / [`normalization_constants_with_cs`]: the
//!   convolution recursion, O(n m^2) time and O(m) space, which folds one
//!   station into a running population-indexed table at a time.
//!
//! Constants grow or shrink geometrically in the population, so the recursion
//! runs entirely in log space and the finished table is stored as mantissas
//! under a shared per-task scale factor (see [`NormalizationTable`]).

use crate::model::{ClientProfile, ModelKind};
use thiserror::Error;

/// Mantissas are kept within [1e-100, 1e100]; this is ln(1e100).
const SCALE_WINDOW: f64 = 230.25850929940457;

/// Default cap on the number of enumerated states in [`brute_force_constant`].
pub const DEFAULT_ENUMERATION_CAP: usize = 2_000_000;

#[derive(Debug, Error)]
pub enum BuzenError {
    #[error("no clients given")]
    NoClients,
    #[error("routing vector has {got} entries but there are {expected} clients")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("station load ln(p/mu) is not finite for client {client} (p = {p}, rates must be positive)")]
    BadLoad { client: usize, p: f64 },
    #[error("central server rate mu_cs = {0} must be positive and finite")]
    BadCsRate(f64),
    #[error(
        "no scale factor keeps all mantissas representable; the load spread is too extreme \
         (max |ln load| = {max_abs_log_load:.3} at station {station})"
    )]
    ScaleOverflow {
        max_abs_log_load: f64,
        station: String,
    },
    #[error("enumeration would visit about {states:.3e} states, above the cap of {cap}")]
    EnumerationTooLarge { states: f64, cap: usize },
}

/// Normalization constants `Z_{n,0..=m}` for one fixed system, stored as
/// `values[k] * exp(k * log_scale)`.
///
/// The shared scale keeps every mantissa within [1e-100, 1e100] even when the
/// raw constants overflow f64 by thousands of orders of magnitude, while
/// leaving per-population ratios exact: `Z_{k-1}/Z_k` needs one subtraction of
/// logs. `values[0]` is exactly 1 in every table.
#[derive(Debug, Clone)]
pub struct NormalizationTable {
    values: Vec<f64>,
    log_scale: f64,
    variant: ModelKind,
}

impl NormalizationTable {
    /// Largest population in the table.
    pub fn population(&self) -> usize {
        self.values.len() - 1
    }

    pub fn variant(&self) -> ModelKind {
        self.variant
    }

    /// Mantissas, indexed by population.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Shared per-task scale: `Z_k = values[k] * exp(k * log_scale)`.
    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    /// Natural log of `Z_k`. Populations below zero have `Z_k = 0`, encoded
    /// as negative infinity so that `exp` of derived expressions vanishes.
    ///
    /// Panics if `k` exceeds the table's population.
    pub fn log_value(&self, k: isize) -> f64 {
        if k < 0 {
            return f64::NEG_INFINITY;
        }
        let k = k as usize;
        assert!(
            k < self.values.len(),
            "population {k} beyond table population {}",
            self.values.len() - 1
        );
        self.values[k].ln() + k as f64 * self.log_scale
    }

    /// `Z_k` as a plain float; may overflow for extreme systems, prefer
    /// [`Self::log_value`] in computations.
    pub fn value(&self, k: usize) -> f64 {
        self.log_value(k as isize).exp()
    }

    /// The ratio `Z_{k-1} / Z_k`, finite and strictly positive for every
    /// `1 <= k <= population`. For `k = m` this is the network throughput.
    pub fn ratio(&self, k: usize) -> f64 {
        assert!(k >= 1, "ratio needs population at least 1");
        (self.log_value(k as isize - 1) - self.log_value(k as isize)).exp()
    }

    fn from_log_values(logz: &[f64], variant: ModelKind, loads: &[(String, f64)]) -> Result<Self, BuzenError> {
        let m = logz.len() - 1;
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for (k, &lz) in logz.iter().enumerate().skip(1) {
            lo = lo.max((lz - SCALE_WINDOW) / k as f64);
            hi = hi.min((lz + SCALE_WINDOW) / k as f64);
        }
        if lo > hi {
            let (station, max_abs_log_load) = loads
                .iter()
                .map(|(name, ll)| (name.clone(), ll.abs()))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap_or((String::from("none"), 0.0));
            return Err(BuzenError::ScaleOverflow {
                max_abs_log_load,
                station,
            });
        }
        let log_scale = if m == 0 { 0.0 } else { (logz[m] / m as f64).clamp(lo, hi) };
        let values = logz
            .iter()
            .enumerate()
            .map(|(k, &lz)| if k == 0 { 1.0 } else { (lz - k as f64 * log_scale).exp() })
            .collect();
        Ok(NormalizationTable {
            values,
            log_scale,
            variant,
        })
    }
}

fn logaddexp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Fold a single-server station of log load `ll` into the table in place:
/// each population gains the option of queueing one more task here.
fn fold_single_server(logz: &mut [f64], ll: f64) {
    for k in 1..logz.len() {
        logz[k] = logaddexp(logz[k], ll + logz[k - 1]);
    }
}

/// Fold an infinite-server station of log load `ll` into the table: the
/// station holds `j` tasks with weight load^j / j!.
fn fold_infinite_server(logz: &mut Vec<f64>, ll: f64, ln_fact: &[f64]) {
    let m = logz.len() - 1;
    let mut next = Vec::with_capacity(m + 1);
    for k in 0..=m {
        let mut max = f64::NEG_INFINITY;
        for j in 0..=k {
            let term = j as f64 * ll - ln_fact[j] + logz[k - j];
            if term > max {
                max = term;
            }
        }
        if max == f64::NEG_INFINITY {
            next.push(f64::NEG_INFINITY);
            continue;
        }
        let mut sum = 0.0;
        for j in 0..=k {
            sum += (j as f64 * ll - ln_fact[j] + logz[k - j] - max).exp();
        }
        next.push(max + sum.ln());
    }
    *logz = next;
}

fn ln_factorials(m: usize) -> Vec<f64> {
    let mut lf = Vec::with_capacity(m + 1);
    lf.push(0.0);
    for j in 1..=m {
        lf.push(lf[j - 1] + (j as f64).ln());
    }
    lf
}

struct StationLoads {
    /// (station label, log load) for diagnostics.
    labeled: Vec<(String, f64)>,
    /// Log load of each compute station.
    compute: Vec<f64>,
    /// Log load of each downlink and uplink station, interleaved per client.
    down: Vec<f64>,
    up: Vec<f64>,
    /// Log load of the central-server station, if present.
    cs: Option<f64>,
}

fn station_loads(
    clients: &[ClientProfile],
    p: &[f64],
    mu_cs: Option<f64>,
) -> Result<StationLoads, BuzenError> {
    if clients.is_empty() {
        return Err(BuzenError::NoClients);
    }
    if clients.len() != p.len() {
        return Err(BuzenError::DimensionMismatch {
            expected: clients.len(),
            got: p.len(),
        });
    }
    let mut loads = StationLoads {
        labeled: Vec::new(),
        compute: Vec::new(),
        down: Vec::new(),
        up: Vec::new(),
        cs: None,
    };
    if let Some(mu) = mu_cs {
        if !(mu.is_finite() && mu > 0.0) {
            return Err(BuzenError::BadCsRate(mu));
        }
        // The central station aggregates one class per client, so its load is
        // (sum of weights)/mu_cs; that keeps every constant polynomial in the
        // raw weights, which the gradient identities differentiate. On the
        // simplex the sum is 1 and the load is just 1/mu_cs.
        let ll = (p.iter().sum::<f64>() / mu).ln();
        if !ll.is_finite() {
            return Err(BuzenError::BadCsRate(mu));
        }
        loads.labeled.push((String::from("cs"), ll));
        loads.cs = Some(ll);
    }
    for (i, (client, &pi)) in clients.iter().zip(p).enumerate() {
        for (label, mu, dest) in [
            ("compute", client.mu_c, &mut loads.compute),
            ("down", client.mu_d, &mut loads.down),
            ("up", client.mu_u, &mut loads.up),
        ] {
            let ll = (pi / mu).ln();
            if !ll.is_finite() {
                return Err(BuzenError::BadLoad { client: i, p: pi });
            }
            loads.labeled.push((format!("{label}[{i}]"), ll));
            dest.push(ll);
        }
    }
    Ok(loads)
}

fn build_table(
    loads: &StationLoads,
    m: usize,
    variant: ModelKind,
) -> Result<NormalizationTable, BuzenError> {
    let ln_fact = ln_factorials(m);
    let mut logz: Vec<f64>;
    let mut remaining_compute: &[f64] = &loads.compute;
    match loads.cs {
        Some(ll_cs) => {
            logz = (0..=m).map(|k| k as f64 * ll_cs).collect();
        }
        None => {
            logz = (0..=m).map(|k| k as f64 * loads.compute[0]).collect();
            remaining_compute = &loads.compute[1..];
        }
    }
    for &ll in remaining_compute {
        fold_single_server(&mut logz, ll);
    }
    for &ll in &loads.down {
        fold_infinite_server(&mut logz, ll, &ln_fact);
    }
    for &ll in &loads.up {
        fold_infinite_server(&mut logz, ll, &ln_fact);
    }
    NormalizationTable::from_log_values(&logz, variant, &loads.labeled)
}

/// Normalization constants `Z_{n,0..=m}` of the base network: per client one
/// single-server compute station plus infinite-server downlink and uplink
/// stations, populated by `m` circulating tasks.
///
/// `p` is taken as raw per-client weights; it does not have to sum to one
/// (constants for scaled weights differ by an exact per-population factor,
/// which all steady-state ratios cancel).
pub fn normalization_constants(
    clients: &[ClientProfile],
    p: &[f64],
    m: usize,
) -> Result<NormalizationTable, BuzenError> {
    let loads = station_loads(clients, p, None)?;
    build_table(&loads, m, ModelKind::NoCs)
}

/// Normalization constants `W_{n,0..=m}` of the network extended with a
/// single-server central-processing station of rate `mu_cs` (load 1/mu_cs),
/// traversed by every task between uplink and re-dispatch.
pub fn normalization_constants_with_cs(
    clients: &[ClientProfile],
    p: &[f64],
    m: usize,
    mu_cs: f64,
) -> Result<NormalizationTable, BuzenError> {
    let loads = station_loads(clients, p, Some(mu_cs))?;
    build_table(&loads, m, ModelKind::WithCs)
}

enum StationKind {
    SingleServer,
    InfiniteServer,
}

struct EnumStation {
    kind: StationKind,
    load: f64,
}

impl EnumStation {
    fn weight(&self, x: usize, fact: &[f64]) -> f64 {
        match self.kind {
            StationKind::SingleServer => self.load.powi(x as i32),
            StationKind::InfiniteServer => self.load.powi(x as i32) / fact[x],
        }
    }
}

fn enumeration_stations(clients: &[ClientProfile], p: &[f64], mu_cs: Option<f64>) -> Vec<EnumStation> {
    let mut stations = Vec::new();
    if let Some(mu) = mu_cs {
        stations.push(EnumStation {
            kind: StationKind::SingleServer,
            load: p.iter().sum::<f64>() / mu,
        });
    }
    for (client, &pi) in clients.iter().zip(p) {
        stations.push(EnumStation {
            kind: StationKind::SingleServer,
            load: pi / client.mu_c,
        });
        stations.push(EnumStation {
            kind: StationKind::InfiniteServer,
            load: pi / client.mu_d,
        });
        stations.push(EnumStation {
            kind: StationKind::InfiniteServer,
            load: pi / client.mu_u,
        });
    }
    stations
}

fn compositions_count(stations: usize, k: usize) -> f64 {
    // C(stations + k - 1, k), computed in floating point: only the order of
    // magnitude matters for the cap check.
    let mut c = 1.0_f64;
    for j in 1..=k {
        c *= (stations + k - j) as f64 / j as f64;
    }
    c
}

struct Enumeration {
    z: f64,
    z_err: f64,
    occupancy: Vec<f64>,
}

fn enumerate_states(
    stations: &[EnumStation],
    k: usize,
    cap: usize,
) -> Result<Enumeration, BuzenError> {
    let states = compositions_count(stations.len(), k);
    if states > cap as f64 {
        return Err(BuzenError::EnumerationTooLarge { states, cap });
    }
    let mut fact = vec![1.0_f64; k + 1];
    for j in 1..=k {
        fact[j] = fact[j - 1] * j as f64;
    }
    let mut result = Enumeration {
        z: 0.0,
        z_err: 0.0,
        occupancy: vec![0.0; stations.len()],
    };
    let mut counts = vec![0usize; stations.len()];
    fn recurse(
        stations: &[EnumStation],
        fact: &[f64],
        idx: usize,
        remaining: usize,
        weight: f64,
        counts: &mut [usize],
        result: &mut Enumeration,
    ) {
        if idx + 1 == stations.len() {
            counts[idx] = remaining;
            let w = weight * stations[idx].weight(remaining, fact);
            // Kahan-compensated accumulation keeps the oracle exact enough to
            // pin 1e-10 relative tolerances.
            let y = w - result.z_err;
            let t = result.z + y;
            result.z_err = (t - result.z) - y;
            result.z = t;
            for (occ, &c) in result.occupancy.iter_mut().zip(counts.iter()) {
                *occ += w * c as f64;
            }
            return;
        }
        for x in 0..=remaining {
            counts[idx] = x;
            recurse(
                stations,
                fact,
                idx + 1,
                remaining - x,
                weight * stations[idx].weight(x, fact),
                counts,
                result,
            );
        }
    }
    recurse(stations, &fact, 0, k, 1.0, &mut counts, &mut result);
    Ok(result)
}

/// Test oracle: the normalization constant by direct enumeration of every
/// placement of `k` tasks on the stations, with a state-count cap of
/// [`DEFAULT_ENUMERATION_CAP`]. Pass `mu_cs` to enumerate the
/// central-server variant.
pub fn brute_force_constant(
    clients: &[ClientProfile],
    p: &[f64],
    k: usize,
    mu_cs: Option<f64>,
) -> Result<f64, BuzenError> {
    brute_force_constant_with_cap(clients, p, k, mu_cs, DEFAULT_ENUMERATION_CAP)
}

/// [`brute_force_constant`] with an explicit state-count cap.
pub fn brute_force_constant_with_cap(
    clients: &[ClientProfile],
    p: &[f64],
    k: usize,
    mu_cs: Option<f64>,
    cap: usize,
) -> Result<f64, BuzenError> {
    if clients.is_empty() {
        return Err(BuzenError::NoClients);
    }
    if clients.len() != p.len() {
        return Err(BuzenError::DimensionMismatch {
            expected: clients.len(),
            got: p.len(),
        });
    }
    let stations = enumeration_stations(clients, p, mu_cs);
    Ok(enumerate_states(&stations, k, cap)?.z)
}

/// Test oracle: expected number of tasks at each of client `j`'s stations,
/// summed per client, under the stationary law with population `k`. For the
/// central-server variant this includes client `j`'s share `p_j * E[queue]`
/// of the central queue, since classes occupy it in routing proportion.
pub fn brute_force_client_sums(
    clients: &[ClientProfile],
    p: &[f64],
    k: usize,
    mu_cs: Option<f64>,
) -> Result<Vec<f64>, BuzenError> {
    if clients.is_empty() {
        return Err(BuzenError::NoClients);
    }
    if clients.len() != p.len() {
        return Err(BuzenError::DimensionMismatch {
            expected: clients.len(),
            got: p.len(),
        });
    }
    let stations = enumeration_stations(clients, p, mu_cs);
    let e = enumerate_states(&stations, k, DEFAULT_ENUMERATION_CAP)?;
    let offset = usize::from(mu_cs.is_some());
    let cs_mean = if offset == 1 { e.occupancy[0] / e.z } else { 0.0 };
    let weight_sum: f64 = p.iter().sum();
    let sums = (0..clients.len())
        .map(|j| {
            let base = offset + 3 * j;
            let own: f64 = e.occupancy[base..base + 3].iter().sum::<f64>() / e.z;
            own + p[j] / weight_sum * cs_mean
        })
        .collect();
    Ok(sums)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_clients(n: usize) -> Vec<ClientProfile> {
        vec![ClientProfile::unit(); n]
    }

    #[test]
    fn oracle_single_client_unit_rates() {
        let clients = unit_clients(1);
        assert_eq!(brute_force_constant(&clients, &[1.0], 0, None).unwrap(), 1.0);
        assert_eq!(brute_force_constant(&clients, &[1.0], 1, None).unwrap(), 3.0);
        assert_eq!(brute_force_constant(&clients, &[1.0], 2, None).unwrap(), 5.0);
    }

    #[test]
    fn oracle_single_client_with_cs() {
        let clients = unit_clients(1);
        assert_eq!(
            brute_force_constant(&clients, &[1.0], 1, Some(1.0)).unwrap(),
            4.0
        );
        assert_eq!(
            brute_force_constant(&clients, &[1.0], 2, Some(1.0)).unwrap(),
            9.0
        );
    }

    #[test]
    fn oracle_two_symmetric_clients() {
        let clients = unit_clients(2);
        let z1 = brute_force_constant(&clients, &[0.5, 0.5], 1, None).unwrap();
        assert!((z1 - 3.0).abs() < 1e-14);
    }

    #[test]
    fn oracle_enforces_cap() {
        let clients = unit_clients(3);
        let err = brute_force_constant_with_cap(&clients, &[0.3, 0.3, 0.4], 6, None, 10);
        assert!(matches!(err, Err(BuzenError::EnumerationTooLarge { .. })));
    }

    #[test]
    fn recursion_matches_hand_values() {
        let clients = unit_clients(1);
        let table = normalization_constants(&clients, &[1.0], 2).unwrap();
        assert_eq!(table.values()[0], 1.0);
        assert!((table.value(1) - 3.0).abs() < 1e-12);
        assert!((table.value(2) - 5.0).abs() < 1e-12);
        assert_eq!(table.variant(), ModelKind::NoCs);

        let cs = normalization_constants_with_cs(&clients, &[1.0], 2, 1.0).unwrap();
        assert!((cs.value(1) - 4.0).abs() < 1e-12);
        assert!((cs.value(2) - 9.0).abs() < 1e-12);
        assert_eq!(cs.variant(), ModelKind::WithCs);
    }

    #[test]
    fn population_zero_table_is_one() {
        let table = normalization_constants(&unit_clients(2), &[0.5, 0.5], 0).unwrap();
        assert_eq!(table.values(), &[1.0]);
        assert_eq!(table.log_value(0), 0.0);
    }

    #[test]
    fn negative_population_has_log_value_minus_infinity() {
        let table = normalization_constants(&unit_clients(1), &[1.0], 1).unwrap();
        assert_eq!(table.log_value(-1), f64::NEG_INFINITY);
        assert_eq!(table.log_value(-1).exp(), 0.0);
    }

    fn asymmetric_clients() -> (Vec<ClientProfile>, Vec<f64>) {
        (
            vec![
                ClientProfile::from_rates(2.0, 0.7, 3.1),
                ClientProfile::from_rates(0.4, 5.0, 1.2),
                ClientProfile::from_rates(9.0, 0.1, 0.6),
            ],
            vec![0.2, 0.5, 0.3],
        )
    }

    #[test]
    fn recursion_matches_oracle_base() {
        let (clients, p) = asymmetric_clients();
        for m in 0..=5 {
            let table = normalization_constants(&clients, &p, m).unwrap();
            for k in 0..=m {
                let oracle = brute_force_constant(&clients, &p, k, None).unwrap();
                let got = table.value(k);
                assert!(
                    (got - oracle).abs() <= 1e-12 * oracle,
                    "m={m} k={k}: {got} vs oracle {oracle}"
                );
            }
        }
    }

    #[test]
    fn recursion_matches_oracle_with_cs() {
        let (clients, p) = asymmetric_clients();
        for mu_cs in [0.3, 1.0, 7.5] {
            let table = normalization_constants_with_cs(&clients, &p, 5, mu_cs).unwrap();
            for k in 0..=5 {
                let oracle = brute_force_constant(&clients, &p, k, Some(mu_cs)).unwrap();
                let got = table.value(k);
                assert!(
                    (got - oracle).abs() <= 1e-12 * oracle,
                    "mu_cs={mu_cs} k={k}: {got} vs oracle {oracle}"
                );
            }
        }
    }

    #[test]
    fn ratios_are_finite_and_positive() {
        let (clients, p) = asymmetric_clients();
        let table = normalization_constants(&clients, &p, 60).unwrap();
        for k in 1..=60 {
            let r = table.ratio(k);
            assert!(r.is_finite() && r > 0.0, "ratio({k}) = {r}");
        }
    }

    #[test]
    fn scaling_weights_shifts_logs_exactly() {
        let (clients, p) = asymmetric_clients();
        let c = 7.0;
        let scaled: Vec<f64> = p.iter().map(|v| v * c).collect();
        let base = normalization_constants(&clients, &p, 20).unwrap();
        let shifted = normalization_constants(&clients, &scaled, 20).unwrap();
        for k in 0..=20 {
            let expected = base.log_value(k as isize) + k as f64 * c.ln();
            let got = shifted.log_value(k as isize);
            assert!(
                (got - expected).abs() <= 1e-10 * expected.abs().max(1.0),
                "k={k}: {got} vs {expected}"
            );
        }
    }

    #[test]
    fn constants_increase_with_any_load() {
        let (clients, p) = asymmetric_clients();
        let base = normalization_constants(&clients, &p, 6).unwrap();
        let mut slower = clients.clone();
        slower[1].mu_c *= 0.5;
        let bumped = normalization_constants(&slower, &p, 6).unwrap();
        for k in 1..=6 {
            assert!(bumped.log_value(k) > base.log_value(k));
        }
    }

    #[test]
    fn fast_central_server_recovers_base_constants() {
        let (clients, p) = asymmetric_clients();
        let m = 8;
        let mu_cs = 1e8;
        let base = normalization_constants(&clients, &p, m).unwrap();
        let cs = normalization_constants_with_cs(&clients, &p, m, mu_cs).unwrap();
        for k in 0..=m {
            let gap = (cs.log_value(k as isize) - base.log_value(k as isize)).abs();
            assert!(
                gap <= 10.0 * m as f64 / mu_cs,
                "k={k}: log gap {gap} too large"
            );
        }
    }

    #[test]
    fn extreme_loads_stay_representable() {
        let clients = vec![
            ClientProfile::from_rates(4e3, 9e3, 5e3),
            ClientProfile::from_rates(3e3, 8e3, 7e3),
        ];
        let table = normalization_constants(&clients, &[0.5, 0.5], 300).unwrap();
        for k in 1..=300 {
            assert!(table.values()[k].is_finite() && table.values()[k] > 0.0);
            assert!(table.ratio(k).is_finite());
        }
        let tiny = vec![
            ClientProfile::from_rates(2e-4, 5e-4, 1e-4),
            ClientProfile::from_rates(4e-4, 3e-4, 2e-4),
        ];
        let table = normalization_constants(&tiny, &[0.5, 0.5], 300).unwrap();
        for k in 1..=300 {
            assert!(table.values()[k].is_finite() && table.values()[k] > 0.0);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let clients = unit_clients(2);
        assert!(matches!(
            normalization_constants(&clients, &[1.0], 3),
            Err(BuzenError::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn client_sums_match_population() {
        // Total occupancy across all stations is the whole population.
        let (clients, p) = asymmetric_clients();
        for k in 1..=4 {
            let sums = brute_force_client_sums(&clients, &p, k, None).unwrap();
            let total: f64 = sums.iter().sum();
            assert!((total - k as f64).abs() < 1e-10, "k={k}: total {total}");
            let sums_cs = brute_force_client_sums(&clients, &p, k, Some(2.0)).unwrap();
            let total: f64 = sums_cs.iter().sum();
            assert!((total - k as f64).abs() < 1e-10, "cs k={k}: total {total}");
        }
    }

    proptest! {
        #[test]
        fn recursion_agrees_with_oracle_on_random_instances(
            n in 1usize..=3,
            m in 0usize..=4,
            seed_rates in proptest::collection::vec(0.1f64..10.0, 9),
            weights in proptest::collection::vec(0.05f64..1.0, 3),
            mu_cs in proptest::option::of(0.1f64..10.0),
        ) {
            let clients: Vec<ClientProfile> = (0..n)
                .map(|i| ClientProfile::from_rates(
                    seed_rates[3 * i],
                    seed_rates[3 * i + 1],
                    seed_rates[3 * i + 2],
                ))
                .collect();
            let total: f64 = weights[..n].iter().sum();
            let p: Vec<f64> = weights[..n].iter().map(|w| w / total).collect();
            let table = match mu_cs {
                None => normalization_constants(&clients, &p, m).unwrap(),
                Some(mu) => normalization_constants_with_cs(&clients, &p, m, mu).unwrap(),
            };
            for k in 0..=m {
                let oracle = brute_force_constant(&clients, &p, k, mu_cs).unwrap();
                let got = table.value(k);
                prop_assert!(
                    (got - oracle).abs() <= 1e-9 * oracle.max(1.0),
                    "k={}: {} vs {}", k, got, oracle
                );
            }
        }
    }
}
