//! Domain types shared by every other module: client service profiles, routing
//! vectors on the probability simplex, system configuration (clients, routing,
//! concurrency, optional central-server stage), and the smoothness/noise
//! constants that parameterize the convergence bounds.
//!
//! A system is a closed network: `m` tasks circulate forever between a central
//! server and `n` clients. Each task is routed to client `i` with probability
//! `p_i`, traverses that client's downlink, compute, and uplink stages, and
//! returns to the server, which applies one model update per returning task.

use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

/// Slack tolerated in a routing vector's sum before it is rejected rather than
/// renormalized.
pub const ROUTING_SUM_TOLERANCE: f64 = 1e-9;

/// Smallest admissible routing probability. Entries below this would make the
/// inverse-probability terms of the convergence bounds meaningless.
pub const MIN_ROUTING_PROBABILITY: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("failed to read config file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse config JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("config lists no clients")]
    NoClients,
    #[error("client {client}: non-positive rate {field} = {value}")]
    NonPositiveRate {
        client: usize,
        field: &'static str,
        value: f64,
    },
    #[error("client {client}: negative power draw {field} = {value}")]
    NegativePower {
        client: usize,
        field: &'static str,
        value: f64,
    },
    #[error("routing vector has {got} entries but there are {expected} clients")]
    RoutingLength { expected: usize, got: usize },
    #[error("routing entry {index} = {value} is outside ({MIN_ROUTING_PROBABILITY}, 1]")]
    RoutingEntry { index: usize, value: f64 },
    #[error("routing entries sum to {sum}, more than {ROUTING_SUM_TOLERANCE} away from 1")]
    RoutingSum { sum: f64 },
    #[error("concurrency m must be at least 1")]
    BadConcurrency,
    #[error("central server: non-positive service rate mu_cs = {0}")]
    NonPositiveCsRate(f64),
    #[error("central server: negative power draw p_cs = {0}")]
    NegativeCsPower(f64),
    #[error("{field} = {value} must be positive")]
    NonPositiveConstant { field: &'static str, value: f64 },
    #[error("{field} = {value} must be non-negative")]
    NegativeConstant { field: &'static str, value: f64 },
}

/// Which network variant a quantity was computed under: the base model where
/// an update is applied the instant an uplink transfer finishes, or the
/// extended model with an explicit single-server central-processing stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    NoCs,
    WithCs,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::NoCs => write!(f, "nocs"),
            ModelKind::WithCs => write!(f, "cs"),
        }
    }
}

/// Service rates and power draws of one client.
///
/// Rates are stage speeds (tasks per unit time): `mu_d` downlink, `mu_c`
/// compute, `mu_u` uplink. Powers are the corresponding draws while the stage
/// is active: the compute stage draws `p_c` while busy, the links draw `p_d`
/// and `p_u` per in-flight transfer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientProfile {
    pub mu_d: f64,
    pub mu_c: f64,
    pub mu_u: f64,
    #[serde(default)]
    pub p_d: f64,
    #[serde(default)]
    pub p_c: f64,
    #[serde(default)]
    pub p_u: f64,
}

impl ClientProfile {
    /// Profile with unit rates and no power draw, handy in tests.
    pub fn unit() -> Self {
        ClientProfile {
            mu_d: 1.0,
            mu_c: 1.0,
            mu_u: 1.0,
            p_d: 0.0,
            p_c: 0.0,
            p_u: 0.0,
        }
    }

    /// Rates-only constructor; power draws default to zero.
    pub fn from_rates(mu_d: f64, mu_c: f64, mu_u: f64) -> Self {
        ClientProfile {
            mu_d,
            mu_c,
            mu_u,
            p_d: 0.0,
            p_c: 0.0,
            p_u: 0.0,
        }
    }

    fn validate(&self, client: usize) -> Result<(), ModelError> {
        for (field, value) in [("mu_d", self.mu_d), ("mu_c", self.mu_c), ("mu_u", self.mu_u)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(ModelError::NonPositiveRate { client, field, value });
            }
        }
        for (field, value) in [("p_d", self.p_d), ("p_c", self.p_c), ("p_u", self.p_u)] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(ModelError::NegativePower { client, field, value });
            }
        }
        Ok(())
    }
}

/// A probability vector over clients: every entry in (0, 1], entries summing
/// to 1 after construction. Vectors whose raw sum is within
/// [`ROUTING_SUM_TOLERANCE`] of 1 are renormalized; anything further off is
/// rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct RoutingVector {
    p: Vec<f64>,
}

impl RoutingVector {
    pub fn new(p: Vec<f64>) -> Result<Self, ModelError> {
        if p.is_empty() {
            return Err(ModelError::NoClients);
        }
        for (index, &value) in p.iter().enumerate() {
            if !(MIN_ROUTING_PROBABILITY..=1.0 + ROUTING_SUM_TOLERANCE).contains(&value) {
                return Err(ModelError::RoutingEntry { index, value });
            }
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > ROUTING_SUM_TOLERANCE {
            return Err(ModelError::RoutingSum { sum });
        }
        let p = p.into_iter().map(|v| v / sum).collect();
        Ok(RoutingVector { p })
    }

    /// The uniform vector (1/n, ..., 1/n).
    pub fn uniform(n: usize) -> Result<Self, ModelError> {
        if n == 0 {
            return Err(ModelError::NoClients);
        }
        RoutingVector::new(vec![1.0 / n as f64; n])
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }
}

impl TryFrom<Vec<f64>> for RoutingVector {
    type Error = ModelError;

    fn try_from(p: Vec<f64>) -> Result<Self, ModelError> {
        RoutingVector::new(p)
    }
}

impl From<RoutingVector> for Vec<f64> {
    fn from(r: RoutingVector) -> Vec<f64> {
        r.p
    }
}

impl std::ops::Index<usize> for RoutingVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.p[i]
    }
}

/// Service rate and power draw of the optional central-processing stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsParams {
    pub mu_cs: f64,
    #[serde(default)]
    pub p_cs: f64,
}

/// Full description of one system: client profiles, routing, concurrency, and
/// the optional central-server stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub clients: Vec<ClientProfile>,
    pub routing: RoutingVector,
    pub m: usize,
    #[serde(default)]
    pub cs: Option<CsParams>,
}

impl SystemConfig {
    pub fn new(
        clients: Vec<ClientProfile>,
        routing: RoutingVector,
        m: usize,
        cs: Option<CsParams>,
    ) -> Result<Self, ModelError> {
        let config = SystemConfig { clients, routing, m, cs };
        config.validate()?;
        Ok(config)
    }

    /// Convenience constructor: uniform routing, no central-server stage.
    pub fn uniform(clients: Vec<ClientProfile>, m: usize) -> Result<Self, ModelError> {
        let n = clients.len();
        SystemConfig::new(clients, RoutingVector::uniform(n)?, m, None)
    }

    pub fn n(&self) -> usize {
        self.clients.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.clients.is_empty() {
            return Err(ModelError::NoClients);
        }
        for (i, client) in self.clients.iter().enumerate() {
            client.validate(i)?;
        }
        if self.routing.len() != self.clients.len() {
            return Err(ModelError::RoutingLength {
                expected: self.clients.len(),
                got: self.routing.len(),
            });
        }
        if self.m < 1 {
            return Err(ModelError::BadConcurrency);
        }
        if let Some(cs) = &self.cs {
            if !(cs.mu_cs.is_finite() && cs.mu_cs > 0.0) {
                return Err(ModelError::NonPositiveCsRate(cs.mu_cs));
            }
            if !(cs.p_cs.is_finite() && cs.p_cs >= 0.0) {
                return Err(ModelError::NegativeCsPower(cs.p_cs));
            }
        }
        Ok(())
    }

    /// Copy of this config with a different routing vector.
    pub fn with_routing(&self, routing: RoutingVector) -> Self {
        SystemConfig {
            clients: self.clients.clone(),
            routing,
            m: self.m,
            cs: self.cs.clone(),
        }
    }

    /// Copy of this config with a different concurrency level.
    pub fn with_concurrency(&self, m: usize) -> Self {
        SystemConfig {
            clients: self.clients.clone(),
            routing: self.routing.clone(),
            m,
            cs: self.cs.clone(),
        }
    }
}

/// Load a [`SystemConfig`] from a JSON file of the shape
/// `{"clients": [...], "routing": [...], "m": 4, "cs": {...} | null}`.
pub fn load_system_config(path: impl AsRef<Path>) -> Result<SystemConfig, ModelError> {
    let text = std::fs::read_to_string(path)?;
    let config: SystemConfig = serde_json::from_str(&text)?;
    config.validate()?;
    Ok(config)
}

/// Uniform routing over `n` clients.
pub fn uniform_routing(n: usize) -> Result<RoutingVector, ModelError> {
    RoutingVector::uniform(n)
}

/// Problem constants of the optimization objective: initial suboptimality
/// `delta`, smoothness `l_smooth`, gradient noise `sigma`, client dissimilarity
/// `m_dissim`, and the uniform gradient bound `g_bound`.
///
/// The bound coefficients `b` and `c` are always derived on the fly from
/// `sigma`, `m_dissim`, and `g_bound`, so they cannot drift out of sync.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningConstants {
    pub delta: f64,
    pub l_smooth: f64,
    pub sigma: f64,
    pub m_dissim: f64,
    pub g_bound: f64,
}

impl LearningConstants {
    pub fn new(
        delta: f64,
        l_smooth: f64,
        sigma: f64,
        m_dissim: f64,
        g_bound: f64,
    ) -> Result<Self, ModelError> {
        if !(l_smooth.is_finite() && l_smooth > 0.0) {
            return Err(ModelError::NonPositiveConstant {
                field: "l_smooth",
                value: l_smooth,
            });
        }
        for (field, value) in [
            ("delta", delta),
            ("sigma", sigma),
            ("m_dissim", m_dissim),
            ("g_bound", g_bound),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(ModelError::NegativeConstant { field, value });
            }
        }
        Ok(LearningConstants {
            delta,
            l_smooth,
            sigma,
            m_dissim,
            g_bound,
        })
    }

    /// Variance-plus-dissimilarity coefficient 6(sigma^2 + 2 m_dissim^2).
    pub fn b(&self) -> f64 {
        6.0 * (self.sigma * self.sigma + 2.0 * self.m_dissim * self.m_dissim)
    }

    /// Variance-plus-gradient-bound coefficient 6(sigma^2 + g_bound^2).
    pub fn c(&self) -> f64 {
        6.0 * (self.sigma * self.sigma + self.g_bound * self.g_bound)
    }
}
