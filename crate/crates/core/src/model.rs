//! Domain types and the closed-form rate equations of the two-secondary-user
//! cooperative relaying network.
//!
//! Channel qualities are stored as *success* probabilities (the complement of
//! the outage probability). Link matrices are indexed `[rank - 1][user - 1]`,
//! where the rank is the position at which the user starts transmitting.
//! Ratios between rank-2 and rank-1 links are always derived from the stored
//! links, never stored themselves.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Errors raised by the rate equations and by configuration validation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{field}: value {value} is not a probability in [0, 1]")]
    InvalidProbability { field: String, value: f64 },

    #[error("{field}: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("transmission window vanished: 1 - {rank} * tau/T = {remaining} <= 0")]
    VanishedWindow { rank: u32, remaining: f64 },

    #[error("primary queue unstable: lambda_p = {lambda_p} exceeds mu_p = {mu_p}")]
    PrimaryInfeasible { lambda_p: f64, mu_p: f64 },

    #[error("division of {numerator} by zero in {context}")]
    DivisionByZero { numerator: f64, context: &'static str },

    #[error("inconsistent occupancy: {0}")]
    InconsistentOccupancy(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

pub(crate) fn check_prob(field: &str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(ModelError::InvalidProbability {
            field: field.to_string(),
            value,
        })
    }
}

/// Guarded ratio: `0 / 0 = 0`, `x / 0` with `x > 0` is an error.
pub fn guarded_ratio(numerator: f64, denominator: f64, context: &'static str) -> Result<f64> {
    if denominator > 0.0 {
        Ok(numerator / denominator)
    } else if numerator == 0.0 {
        Ok(0.0)
    } else {
        Err(ModelError::DivisionByZero { numerator, context })
    }
}

/// A secondary transmitter's link to a receiver.
///
/// `Direct` links carry a success probability for one (rank, user) cell.
/// `Derived` links evaluate `a * exp(-b * 2^(c / (1 - i * tau/T)))` at the
/// rank index `i` of the cell they are evaluated for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SecondaryLink {
    Direct {
        success: f64,
    },
    Derived {
        a: f64,
        b: f64,
        c: f64,
        tau_over_t: f64,
    },
}

impl SecondaryLink {
    pub fn direct(success: f64) -> Self {
        SecondaryLink::Direct { success }
    }

    pub fn success(&self, rank_index: u32) -> Result<f64> {
        link_success(self, rank_index)
    }

    fn validate(&self, field: &str) -> Result<()> {
        match *self {
            SecondaryLink::Direct { success } => check_prob(field, success),
            SecondaryLink::Derived {
                a,
                b,
                c,
                tau_over_t,
            } => {
                check_prob(&format!("{field}.a"), a)?;
                if !(b > 0.0 && b.is_finite()) {
                    return Err(ModelError::InvalidParameter {
                        field: format!("{field}.b"),
                        reason: format!("must be positive, got {b}"),
                    });
                }
                if !(c > 0.0 && c.is_finite()) {
                    return Err(ModelError::InvalidParameter {
                        field: format!("{field}.c"),
                        reason: format!("must be positive, got {c}"),
                    });
                }
                if !(0.0..0.5).contains(&tau_over_t) {
                    return Err(ModelError::InvalidParameter {
                        field: format!("{field}.tau_over_t"),
                        reason: format!("must lie in [0, 0.5), got {tau_over_t}"),
                    });
                }
                Ok(())
            }
        }
    }
}

/// Success probability of a secondary link when transmission starts after
/// `rank_index` sensing windows.
///
/// Direct links were already indexed by rank when stored, so the rank index
/// is ignored for them.
pub fn link_success(link: &SecondaryLink, rank_index: u32) -> Result<f64> {
    match *link {
        SecondaryLink::Direct { success } => Ok(success),
        SecondaryLink::Derived {
            a,
            b,
            c,
            tau_over_t,
        } => {
            let remaining = 1.0 - f64::from(rank_index) * tau_over_t;
            if remaining <= 0.0 {
                return Err(ModelError::VanishedWindow {
                    rank: rank_index,
                    remaining,
                });
            }
            let p = a * (-b * (c / remaining).exp2()).exp();
            Ok(p.clamp(0.0, 1.0))
        }
    }
}

/// 2x2 link matrix, indexed `[rank - 1][user - 1]`.
pub type LinkMatrix = [[SecondaryLink; 2]; 2];

/// Exogenous environment of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub lambda_p: f64,
    pub lambda_1: f64,
    pub lambda_2: f64,
    /// Primary direct link success.
    pub p_succ_primary: f64,
    /// Primary to s1 overhearing success.
    pub p_succ_p_to_s1: f64,
    /// Primary to s2 overhearing success.
    pub p_succ_p_to_s2: f64,
    /// Secondary transmitter to secondary receiver.
    pub secondary_links: LinkMatrix,
    /// Secondary transmitter to primary receiver (relayed primary packets).
    pub relay_links: LinkMatrix,
}

impl SystemConfig {
    /// Builds a config from rank-1 links and rank-2/rank-1 ratios, the way
    /// figure parameter sets are usually quoted.
    #[allow(clippy::too_many_arguments)]
    pub fn from_ratios(
        lambda_p: f64,
        p_succ_primary: f64,
        p_succ_p_to_s: [f64; 2],
        secondary_rank1: [f64; 2],
        secondary_ratio: [f64; 2],
        relay_rank1: [f64; 2],
        relay_ratio: [f64; 2],
    ) -> Self {
        let d = SecondaryLink::direct;
        SystemConfig {
            lambda_p,
            lambda_1: 0.0,
            lambda_2: 0.0,
            p_succ_primary,
            p_succ_p_to_s1: p_succ_p_to_s[0],
            p_succ_p_to_s2: p_succ_p_to_s[1],
            secondary_links: [
                [d(secondary_rank1[0]), d(secondary_rank1[1])],
                [
                    d(secondary_rank1[0] * secondary_ratio[0]),
                    d(secondary_rank1[1] * secondary_ratio[1]),
                ],
            ],
            relay_links: [
                [d(relay_rank1[0]), d(relay_rank1[1])],
                [
                    d(relay_rank1[0] * relay_ratio[0]),
                    d(relay_rank1[1] * relay_ratio[1]),
                ],
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_prob("lambda_p", self.lambda_p)?;
        check_prob("lambda_1", self.lambda_1)?;
        check_prob("lambda_2", self.lambda_2)?;
        check_prob("p_succ_primary", self.p_succ_primary)?;
        check_prob("p_succ_p_to_s1", self.p_succ_p_to_s1)?;
        check_prob("p_succ_p_to_s2", self.p_succ_p_to_s2)?;
        for (name, m) in [
            ("secondary_links", &self.secondary_links),
            ("relay_links", &self.relay_links),
        ] {
            for (i, row) in m.iter().enumerate() {
                for (j, link) in row.iter().enumerate() {
                    link.validate(&format!("{name}[{}][{}]", i + 1, j + 1))?;
                }
            }
            for j in 0..2 {
                let first = link_success(&m[0][j], 1)?;
                let second = link_success(&m[1][j], 2)?;
                if second > first {
                    return Err(ModelError::InvalidParameter {
                        field: format!("{name}[2][{}]", j + 1),
                        reason: format!(
                            "rank-2 success {second} exceeds rank-1 success {first}"
                        ),
                    });
                }
            }
        }
        Ok(())
    }

    /// Success of the secondary link of `user` (1 or 2) at `rank` (1 or 2).
    pub fn secondary_success(&self, rank: usize, user: usize) -> f64 {
        success_at(&self.secondary_links, rank, user)
    }

    /// Success of the relay link (to the primary receiver) of `user` at `rank`.
    pub fn relay_success(&self, rank: usize, user: usize) -> f64 {
        success_at(&self.relay_links, rank, user)
    }

    pub fn p_succ_p_to(&self, user: usize) -> f64 {
        match user {
            1 => self.p_succ_p_to_s1,
            _ => self.p_succ_p_to_s2,
        }
    }

    /// Rank-2 over rank-1 ratio of the secondary link of `user`.
    pub fn delta(&self, user: usize) -> Result<f64> {
        guarded_ratio(
            self.secondary_success(2, user),
            self.secondary_success(1, user),
            "secondary link ratio",
        )
    }

    /// Rank-2 over rank-1 ratio of the relay link of `user`.
    pub fn delta_relay(&self, user: usize) -> Result<f64> {
        guarded_ratio(
            self.relay_success(2, user),
            self.relay_success(1, user),
            "relay link ratio",
        )
    }

    /// Copy with every derived link replaced by its evaluated direct value.
    pub fn resolved(&self) -> Result<SystemConfig> {
        let mut out = self.clone();
        for m in [&mut out.secondary_links, &mut out.relay_links] {
            for (i, row) in m.iter_mut().enumerate() {
                for link in row.iter_mut() {
                    *link = SecondaryLink::direct(link_success(link, i as u32 + 1)?);
                }
            }
        }
        Ok(out)
    }

    /// The same network with the two secondary users relabelled.
    pub fn swapped(&self) -> SystemConfig {
        let swap = |m: &LinkMatrix| [[m[0][1], m[0][0]], [m[1][1], m[1][0]]];
        SystemConfig {
            lambda_p: self.lambda_p,
            lambda_1: self.lambda_2,
            lambda_2: self.lambda_1,
            p_succ_primary: self.p_succ_primary,
            p_succ_p_to_s1: self.p_succ_p_to_s2,
            p_succ_p_to_s2: self.p_succ_p_to_s1,
            secondary_links: swap(&self.secondary_links),
            relay_links: swap(&self.relay_links),
        }
    }
}

fn success_at(m: &LinkMatrix, rank: usize, user: usize) -> f64 {
    // Validated configs never fail here; a vanished window reads as zero success.
    link_success(&m[rank - 1][user - 1], rank as u32).unwrap_or(0.0)
}

/// Controllable parameters of the protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    /// Probability that s1 is ranked first for sensing and access.
    pub epsilon: f64,
    /// Probability that s1 is ranked first for decoding primary packets.
    pub rho: f64,
    pub p1: f64,
    pub p2: f64,
    pub f1: f64,
    pub f2: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    #[serde(default)]
    pub tie_rho_to_epsilon: bool,
}

impl Default for Policy {
    fn default() -> Self {
        Policy {
            epsilon: 0.5,
            rho: 0.5,
            p1: 0.5,
            p2: 0.5,
            f1: 0.0,
            f2: 0.0,
            alpha1: 0.5,
            alpha2: 0.5,
            tie_rho_to_epsilon: false,
        }
    }
}

impl Policy {
    /// The decoding-rank probability actually in force.
    pub fn effective_rho(&self) -> f64 {
        if self.tie_rho_to_epsilon {
            self.epsilon
        } else {
            self.rho
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_prob("epsilon", self.epsilon)?;
        check_prob("rho", self.rho)?;
        check_prob("p1", self.p1)?;
        check_prob("p2", self.p2)?;
        check_prob("f1", self.f1)?;
        check_prob("f2", self.f2)?;
        check_prob("alpha1", self.alpha1)?;
        check_prob("alpha2", self.alpha2)?;
        if self.tie_rho_to_epsilon && self.rho != self.epsilon {
            return Err(ModelError::InvalidParameter {
                field: "rho".into(),
                reason: "must equal epsilon when tied".into(),
            });
        }
        Ok(())
    }

    pub fn swapped(&self) -> Policy {
        Policy {
            epsilon: 1.0 - self.epsilon,
            rho: 1.0 - self.rho,
            p1: self.p2,
            p2: self.p1,
            f1: self.f2,
            f2: self.f1,
            alpha1: self.alpha2,
            alpha2: self.alpha1,
            tie_rho_to_epsilon: self.tie_rho_to_epsilon,
        }
    }

    pub fn p(&self, user: usize) -> f64 {
        if user == 1 {
            self.p1
        } else {
            self.p2
        }
    }

    pub fn f(&self, user: usize) -> f64 {
        if user == 1 {
            self.f1
        } else {
            self.f2
        }
    }

    pub fn alpha(&self, user: usize) -> f64 {
        if user == 1 {
            self.alpha1
        } else {
            self.alpha2
        }
    }
}

/// How the secondary users share idle slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Access {
    /// Probabilistic ranking; the second-ranked user transmits late on a
    /// weaker link.
    Ordered,
    /// Independent transmit coins after a common sensing window; simultaneous
    /// transmissions collide.
    RandomAccess,
}

/// Which family of bound a scheme belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundKind {
    Inner,
    Noncoop,
    Outer,
}

/// Every dominant-system / bound variant the analysis evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scheme {
    OrderedInnerDom1,
    OrderedInnerDom2,
    OrderedNoncoopDom1,
    OrderedNoncoopDom2,
    OrderedOuterDom1,
    OrderedOuterDom2,
    RAInnerDom1,
    RAInnerDom2,
    RANoncoopDom1,
    RANoncoopDom2,
    RAOuterDom1,
    RAOuterDom2,
}

impl Scheme {
    pub const ALL: [Scheme; 12] = [
        Scheme::OrderedInnerDom1,
        Scheme::OrderedInnerDom2,
        Scheme::OrderedNoncoopDom1,
        Scheme::OrderedNoncoopDom2,
        Scheme::OrderedOuterDom1,
        Scheme::OrderedOuterDom2,
        Scheme::RAInnerDom1,
        Scheme::RAInnerDom2,
        Scheme::RANoncoopDom1,
        Scheme::RANoncoopDom2,
        Scheme::RAOuterDom1,
        Scheme::RAOuterDom2,
    ];

    pub fn access(self) -> Access {
        use Scheme::*;
        match self {
            OrderedInnerDom1 | OrderedInnerDom2 | OrderedNoncoopDom1 | OrderedNoncoopDom2
            | OrderedOuterDom1 | OrderedOuterDom2 => Access::Ordered,
            _ => Access::RandomAccess,
        }
    }

    pub fn kind(self) -> BoundKind {
        use Scheme::*;
        match self {
            OrderedInnerDom1 | OrderedInnerDom2 | RAInnerDom1 | RAInnerDom2 => BoundKind::Inner,
            OrderedNoncoopDom1 | OrderedNoncoopDom2 | RANoncoopDom1 | RANoncoopDom2 => {
                BoundKind::Noncoop
            }
            _ => BoundKind::Outer,
        }
    }

    /// 1 when s1 is the user forced to transmit dummies, 2 otherwise.
    pub fn dominant_user(self) -> usize {
        use Scheme::*;
        match self {
            OrderedInnerDom1 | OrderedNoncoopDom1 | OrderedOuterDom1 | RAInnerDom1
            | RANoncoopDom1 | RAOuterDom1 => 1,
            _ => 2,
        }
    }

    /// Queues that transmit dummy packets whenever they are empty.
    ///
    /// Inner systems pad one own queue and the other user's relay queue;
    /// the noncooperative and outer constructions pad one own queue only.
    pub fn dummy_queues(self) -> &'static [QueueId] {
        match (self.kind(), self.dominant_user()) {
            (BoundKind::Inner, 1) => &[QueueId::Q1, QueueId::Q2r],
            (BoundKind::Inner, _) => &[QueueId::Q2, QueueId::Q1r],
            (_, 1) => &[QueueId::Q1],
            (_, _) => &[QueueId::Q2],
        }
    }

    /// The same construction with the users relabelled.
    pub fn mirrored(self) -> Scheme {
        use Scheme::*;
        match self {
            OrderedInnerDom1 => OrderedInnerDom2,
            OrderedInnerDom2 => OrderedInnerDom1,
            OrderedNoncoopDom1 => OrderedNoncoopDom2,
            OrderedNoncoopDom2 => OrderedNoncoopDom1,
            OrderedOuterDom1 => OrderedOuterDom2,
            OrderedOuterDom2 => OrderedOuterDom1,
            RAInnerDom1 => RAInnerDom2,
            RAInnerDom2 => RAInnerDom1,
            RANoncoopDom1 => RANoncoopDom2,
            RANoncoopDom2 => RANoncoopDom1,
            RAOuterDom1 => RAOuterDom2,
            RAOuterDom2 => RAOuterDom1,
        }
    }

    pub fn name(self) -> &'static str {
        use Scheme::*;
        match self {
            OrderedInnerDom1 => "OrderedInnerDom1",
            OrderedInnerDom2 => "OrderedInnerDom2",
            OrderedNoncoopDom1 => "OrderedNoncoopDom1",
            OrderedNoncoopDom2 => "OrderedNoncoopDom2",
            OrderedOuterDom1 => "OrderedOuterDom1",
            OrderedOuterDom2 => "OrderedOuterDom2",
            RAInnerDom1 => "RAInnerDom1",
            RAInnerDom2 => "RAInnerDom2",
            RANoncoopDom1 => "RANoncoopDom1",
            RANoncoopDom2 => "RANoncoopDom2",
            RAOuterDom1 => "RAOuterDom1",
            RAOuterDom2 => "RAOuterDom2",
        }
    }

    /// Policy with the scheme's structural constraints applied: acceptance
    /// factors zeroed for noncooperative schemes and `rho` tied to `epsilon`
    /// when requested.
    pub fn effective_policy(self, pol: &Policy) -> Policy {
        let mut p = *pol;
        if self.kind() == BoundKind::Noncoop {
            p.f1 = 0.0;
            p.f2 = 0.0;
        }
        if p.tie_rho_to_epsilon {
            p.rho = p.epsilon;
        }
        p
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        Scheme::ALL
            .iter()
            .copied()
            .find(|sc| sc.name().to_ascii_lowercase() == norm)
            .ok_or_else(|| format!("unknown scheme '{s}'"))
    }
}

/// The five queues of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QueueId {
    Qp,
    Q1,
    Q2,
    Q1r,
    Q2r,
}

impl QueueId {
    pub const ALL: [QueueId; 5] = [QueueId::Qp, QueueId::Q1, QueueId::Q2, QueueId::Q1r, QueueId::Q2r];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            QueueId::Qp => "Qp",
            QueueId::Q1 => "Q1",
            QueueId::Q2 => "Q2",
            QueueId::Q1r => "Q1r",
            QueueId::Q2r => "Q2r",
        }
    }
}

/// Queue-empty probabilities fed to the general service-rate equations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Occupancy {
    pub primary_empty: f64,
    pub q1_empty: f64,
    pub q2_empty: f64,
    pub q1r_empty: f64,
    pub q2r_empty: f64,
    /// Pr{Q1 = 0, Q1r = 0}
    pub user1_idle: f64,
    /// Pr{Q2 = 0, Q2r = 0}
    pub user2_idle: f64,
}

impl Occupancy {
    /// All secondary queues backlogged.
    pub fn saturated(primary_empty: f64) -> Self {
        Occupancy {
            primary_empty,
            q1_empty: 0.0,
            q2_empty: 0.0,
            q1r_empty: 0.0,
            q2r_empty: 0.0,
            user1_idle: 0.0,
            user2_idle: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("primary_empty", self.primary_empty),
            ("q1_empty", self.q1_empty),
            ("q2_empty", self.q2_empty),
            ("q1r_empty", self.q1r_empty),
            ("q2r_empty", self.q2r_empty),
            ("user1_idle", self.user1_idle),
            ("user2_idle", self.user2_idle),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ModelError::InconsistentOccupancy(format!(
                    "{name} = {v} outside [0, 1]"
                )));
            }
        }
        if self.user1_idle > self.q1_empty.min(self.q1r_empty) {
            return Err(ModelError::InconsistentOccupancy(format!(
                "Pr{{Q1=0,Q1r=0}} = {} exceeds a marginal",
                self.user1_idle
            )));
        }
        if self.user2_idle > self.q2_empty.min(self.q2r_empty) {
            return Err(ModelError::InconsistentOccupancy(format!(
                "Pr{{Q2=0,Q2r=0}} = {} exceeds a marginal",
                self.user2_idle
            )));
        }
        Ok(())
    }
}

/// Service rates of the four secondary queues.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ServiceRates {
    pub mu_1: f64,
    pub mu_2: f64,
    pub mu_1r: f64,
    pub mu_2r: f64,
}

/// All rates evaluated for one (config, policy, lambda_1, lambda_2) tuple
/// under one scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatePoint {
    pub scheme: Scheme,
    pub mu_p: f64,
    pub pi_pe: f64,
    pub lambda_1r: f64,
    pub lambda_2r: f64,
    pub mu_1: f64,
    pub mu_2: f64,
    pub mu_1r: f64,
    pub mu_2r: f64,
}

impl RatePoint {
    pub fn service(&self, q: QueueId) -> f64 {
        match q {
            QueueId::Qp => self.mu_p,
            QueueId::Q1 => self.mu_1,
            QueueId::Q2 => self.mu_2,
            QueueId::Q1r => self.mu_1r,
            QueueId::Q2r => self.mu_2r,
        }
    }
}

/// Service rate of the primary queue: direct success, or acceptance by the
/// first secondary user (in decoding order) that decodes and accepts.
pub fn primary_service_rate(cfg: &SystemConfig, pol: &Policy) -> f64 {
    let a = cfg.p_succ_p_to_s1 * pol.f1;
    let b = cfg.p_succ_p_to_s2 * pol.f2;
    let direct = cfg.p_succ_primary;
    direct + (1.0 - direct) * (a + b - a * b)
}

/// Probability that the primary queue is empty.
pub fn primary_empty_prob(lambda_p: f64, mu_p: f64) -> Result<f64> {
    if lambda_p > mu_p {
        return Err(ModelError::PrimaryInfeasible { lambda_p, mu_p });
    }
    let ratio = guarded_ratio(lambda_p, mu_p, "primary load")?;
    Ok((1.0 - ratio).clamp(0.0, 1.0))
}

/// Arrival rates into the relay queues `(lambda_1r, lambda_2r)`.
pub fn relay_arrival_rates(cfg: &SystemConfig, pol: &Policy, pi_pe: f64) -> (f64, f64) {
    let rho = pol.effective_rho();
    let a = cfg.p_succ_p_to_s1 * pol.f1;
    let b = cfg.p_succ_p_to_s2 * pol.f2;
    let busy_fail = (1.0 - pi_pe) * (1.0 - cfg.p_succ_primary);
    let l1r = busy_fail * a * (rho + (1.0 - rho) * (1.0 - b));
    let l2r = busy_fail * b * ((1.0 - rho) + rho * (1.0 - a));
    (l1r, l2r)
}

/// General service rates of the four secondary queues for given occupancy
/// probabilities.
///
/// This is the single evaluation of the service-rate equations; every
/// dominant system is obtained by feeding it degenerate occupancies.
pub fn conditional_service_rates(
    cfg: &SystemConfig,
    pol: &Policy,
    occ: &Occupancy,
    access: Access,
) -> Result<ServiceRates> {
    occ.validate()?;
    let pi = occ.primary_empty;
    // Bracket selecting the own queue (p_j) or the relay queue (1 - p_j).
    let own_share = |p: f64, relay_empty: f64| p * (1.0 - relay_empty) + relay_empty;
    let relay_share = |p: f64, own_empty: f64| (1.0 - p) * (1.0 - own_empty) + own_empty;

    let own1 = own_share(pol.p1, occ.q1r_empty);
    let own2 = own_share(pol.p2, occ.q2r_empty);
    let rel1 = relay_share(pol.p1, occ.q1_empty);
    let rel2 = relay_share(pol.p2, occ.q2_empty);

    let rates = match access {
        Access::Ordered => {
            let eps = pol.epsilon;
            let (d1, d2) = (cfg.delta(1)?, cfg.delta(2)?);
            let (d1r, d2r) = (cfg.delta_relay(1)?, cfg.delta_relay(2)?);
            let first1 = eps;
            let first2 = 1.0 - eps;
            ServiceRates {
                mu_1: pi
                    * cfg.secondary_success(1, 1)
                    * (first1 + first2 * d1 * occ.user2_idle)
                    * own1,
                mu_2: pi
                    * cfg.secondary_success(1, 2)
                    * (first2 + first1 * d2 * occ.user1_idle)
                    * own2,
                mu_1r: pi
                    * cfg.relay_success(1, 1)
                    * (first1 + first2 * d1r * occ.user2_idle)
                    * rel1,
                mu_2r: pi
                    * cfg.relay_success(1, 2)
                    * (first2 + first1 * d2r * occ.user1_idle)
                    * rel2,
            }
        }
        Access::RandomAccess => {
            let (a1, a2) = (pol.alpha1, pol.alpha2);
            // Probability the other user stays silent.
            let quiet2 = (1.0 - occ.user2_idle) * (1.0 - a2) + occ.user2_idle;
            let quiet1 = (1.0 - occ.user1_idle) * (1.0 - a1) + occ.user1_idle;
            ServiceRates {
                mu_1: quiet2 * own1 * pi * cfg.secondary_success(1, 1) * a1,
                mu_2: quiet1 * own2 * pi * cfg.secondary_success(1, 2) * a2,
                mu_1r: quiet2 * rel1 * pi * cfg.relay_success(1, 1) * a1,
                mu_2r: quiet1 * rel2 * pi * cfg.relay_success(1, 2) * a2,
            }
        }
    };
    Ok(rates)
}
