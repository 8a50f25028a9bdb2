//! Dominant-system and bound specializations of the general rate equations,
//! and stability checks of an arrival-rate pair.
//!
//! Every scheme is expressed through [`conditional_service_rates`] with
//! degenerate occupancies:
//!
//! * queues padded with dummy packets are never empty,
//! * relay queues of the noncooperative systems are always empty,
//! * the outer constructions upper-bound the service rates by treating the
//!   relay queues as empty inside the own-queue brackets and the joint idle
//!   probabilities,
//! * the remaining (real) queues get their stationary empty probability
//!   `1 - lambda / mu`.
//!
//! The real queues' service rates never depend on other real queues, so a
//! single substitution pass resolves each system.

use crate::model::{
    conditional_service_rates, guarded_ratio, primary_empty_prob, primary_service_rate,
    relay_arrival_rates, BoundKind, ModelError, Occupancy, Policy, QueueId, RatePoint, Result,
    Scheme, ServiceRates, SystemConfig,
};

/// Arrivals must stay this far below service to count as stable.
pub const STABILITY_MARGIN: f64 = 1e-9;

/// Stability constraint labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Constraint {
    PrimaryStability,
    Q1,
    Q2,
    Q1r,
    Q2r,
}

impl Constraint {
    pub fn queue(self) -> QueueId {
        match self {
            Constraint::PrimaryStability => QueueId::Qp,
            Constraint::Q1 => QueueId::Q1,
            Constraint::Q2 => QueueId::Q2,
            Constraint::Q1r => QueueId::Q1r,
            Constraint::Q2r => QueueId::Q2r,
        }
    }

    fn all() -> [Constraint; 5] {
        [
            Constraint::PrimaryStability,
            Constraint::Q1,
            Constraint::Q2,
            Constraint::Q1r,
            Constraint::Q2r,
        ]
    }
}

/// Outcome of checking one arrival pair under one scheme and policy.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    pub rates: RatePoint,
    pub lambda_1: f64,
    pub lambda_2: f64,
    pub lambda_p: f64,
    pub feasible: bool,
    pub violated: Vec<Constraint>,
}

impl FeasibilityReport {
    pub fn arrival(&self, c: Constraint) -> f64 {
        match c {
            Constraint::PrimaryStability => self.lambda_p,
            Constraint::Q1 => self.lambda_1,
            Constraint::Q2 => self.lambda_2,
            Constraint::Q1r => self.rates.lambda_1r,
            Constraint::Q2r => self.rates.lambda_2r,
        }
    }

    pub fn service(&self, c: Constraint) -> f64 {
        self.rates.service(c.queue())
    }

    /// Total amount by which arrivals exceed the admissible service level.
    pub fn violation(&self) -> f64 {
        Constraint::all()
            .iter()
            .map(|&c| {
                let lam = self.arrival(c);
                if lam == 0.0 {
                    0.0
                } else {
                    (lam - (self.service(c) - STABILITY_MARGIN)).max(0.0)
                }
            })
            .sum()
    }
}

/// An empty arrival stream is stable regardless of service.
pub fn satisfies(arrival: f64, service: f64) -> bool {
    arrival == 0.0 || arrival <= service - STABILITY_MARGIN
}

/// Stationary empty probability of a real queue, `1 - lambda / mu` clipped
/// to `[0, 1]`. An overloaded queue is treated as never empty.
pub fn empty_probability(arrival: f64, service: f64) -> f64 {
    match guarded_ratio(arrival, service, "queue load") {
        Ok(load) => (1.0 - load).clamp(0.0, 1.0),
        Err(_) => 0.0,
    }
}

/// Evaluates all rates of `scheme` at `(lambda_1, lambda_2)` and checks every
/// stability constraint.
pub fn evaluate_scheme(
    scheme: Scheme,
    cfg: &SystemConfig,
    pol: &Policy,
    lambda_1: f64,
    lambda_2: f64,
) -> Result<FeasibilityReport> {
    let pol = scheme.effective_policy(pol);
    let access = scheme.access();
    let mu_p = primary_service_rate(cfg, &pol);
    let pi_pe = primary_empty_prob(cfg.lambda_p, mu_p)?;
    let (lambda_1r, lambda_2r) = relay_arrival_rates(cfg, &pol, pi_pe);
    let arrivals = [cfg.lambda_p, lambda_1, lambda_2, lambda_1r, lambda_2r];

    // Empty probabilities of Q1, Q2, Q1r, Q2r.
    let mut empty = [1.0f64; 4];
    let mut unresolved = [true; 4];
    for q in scheme.dummy_queues() {
        let k = q.index() - 1;
        empty[k] = 0.0;
        unresolved[k] = false;
    }
    if scheme.kind() != BoundKind::Inner {
        for k in [2, 3] {
            empty[k] = 1.0;
            unresolved[k] = false;
        }
    }

    let occupancy = |e: &[f64; 4]| Occupancy {
        primary_empty: pi_pe,
        q1_empty: e[0],
        q2_empty: e[1],
        q1r_empty: e[2],
        q2r_empty: e[3],
        // Exact here: within each user one queue is pinned to 0 or 1.
        user1_idle: e[0] * e[2],
        user2_idle: e[1] * e[3],
    };

    let first = conditional_service_rates(cfg, &pol, &occupancy(&empty), access)?;
    let first_mu = [first.mu_1, first.mu_2, first.mu_1r, first.mu_2r];
    for k in 0..4 {
        if unresolved[k] {
            empty[k] = empty_probability(arrivals[k + 1], first_mu[k]);
        }
    }
    let ServiceRates {
        mu_1,
        mu_2,
        mu_1r,
        mu_2r,
    } = conditional_service_rates(cfg, &pol, &occupancy(&empty), access)?;
    debug_assert!((0..4).all(|k| !unresolved[k] || [mu_1, mu_2, mu_1r, mu_2r][k] == first_mu[k]));

    let rates = RatePoint {
        scheme,
        mu_p,
        pi_pe,
        lambda_1r,
        lambda_2r,
        mu_1,
        mu_2,
        mu_1r,
        mu_2r,
    };
    let mut report = FeasibilityReport {
        rates,
        lambda_1,
        lambda_2,
        lambda_p: cfg.lambda_p,
        feasible: true,
        violated: Vec::new(),
    };
    for c in Constraint::all() {
        if !satisfies(report.arrival(c), report.service(c)) {
            report.violated.push(c);
        }
    }
    report.feasible = report.violated.is_empty();
    Ok(report)
}

/// Largest `lambda_1` that keeps `scheme` stable under a fixed policy at
/// `lambda_2`, together with the report at that point.
///
/// Returns `Err(violation)` when even `lambda_1 = 0` is infeasible, where
/// `violation` measures how far the policy is from feasibility.
///
/// `mu_1` never depends on `lambda_1`, and the remaining rates depend on it
/// only through `Pr{Q1 = 0} = 1 - lambda_1 / mu_1`, so every constraint is
/// affine in `lambda_1` on `[0, mu_1]`.
pub fn lambda1_capacity(
    scheme: Scheme,
    cfg: &SystemConfig,
    pol: &Policy,
    lambda_2: f64,
) -> std::result::Result<(f64, FeasibilityReport), f64> {
    let at_zero = match evaluate_scheme(scheme, cfg, pol, 0.0, lambda_2) {
        Ok(r) => r,
        Err(ModelError::PrimaryInfeasible { lambda_p, mu_p }) => {
            return Err(1.0 + (lambda_p - mu_p));
        }
        Err(_) => return Err(f64::INFINITY),
    };
    if !at_zero.feasible {
        return Err(at_zero.violation());
    }
    let mu_1 = at_zero.rates.mu_1;
    if mu_1 <= STABILITY_MARGIN {
        return Ok((0.0, at_zero));
    }
    let at_full = evaluate_scheme(scheme, cfg, pol, mu_1, lambda_2).map_err(|_| f64::INFINITY)?;

    let mut t_max: f64 = 1.0;
    for c in [Constraint::Q2, Constraint::Q1r, Constraint::Q2r] {
        let lam = at_zero.arrival(c);
        if lam == 0.0 {
            continue;
        }
        let s0 = at_zero.service(c) - STABILITY_MARGIN - lam;
        let s1 = at_full.service(c) - STABILITY_MARGIN - lam;
        if s1 < 0.0 {
            t_max = t_max.min(s0 / (s0 - s1));
        }
    }
    let mut lambda_1 = (t_max * mu_1).min(mu_1 - STABILITY_MARGIN).max(0.0);

    // Guard against rounding at the binding constraint.
    for _ in 0..8 {
        let r = evaluate_scheme(scheme, cfg, pol, lambda_1, lambda_2).map_err(|_| f64::INFINITY)?;
        if r.feasible {
            return Ok((lambda_1, r));
        }
        lambda_1 = (lambda_1 - 1e-12 * lambda_1.max(1.0)).max(0.0);
    }
    Ok((0.0, at_zero))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig2() -> SystemConfig {
        SystemConfig::from_ratios(
            0.35,
            0.5,
            [0.7, 0.7],
            [0.8, 0.8],
            [0.875, 0.66],
            [0.8, 0.9],
            [0.8, 0.8],
        )
    }

    fn fig3() -> SystemConfig {
        SystemConfig::from_ratios(
            0.25,
            0.5,
            [0.85, 0.85],
            [0.9, 0.9],
            [0.8, 0.8],
            [0.9, 0.9],
            [0.9, 0.9],
        )
    }

    #[test]
    fn noncoop_corner_at_full_priority() {
        let pol = Policy {
            epsilon: 1.0,
            ..Policy::default()
        };
        let ok = evaluate_scheme(Scheme::OrderedNoncoopDom1, &fig2(), &pol, 0.239, 0.0).unwrap();
        assert!(ok.feasible, "{ok:?}");
        assert!((ok.rates.mu_1 - 0.24).abs() < 1e-15);
        let bad = evaluate_scheme(Scheme::OrderedNoncoopDom1, &fig2(), &pol, 0.241, 0.0).unwrap();
        assert_eq!(bad.violated, vec![Constraint::Q1]);
    }

    #[test]
    fn empty_secondaries_are_always_feasible() {
        let pol = Policy {
            epsilon: 0.3,
            f1: 0.4,
            f2: 0.9,
            ..Policy::default()
        };
        for s in Scheme::ALL {
            let r = evaluate_scheme(s, &fig2(), &pol, 0.0, 0.0).unwrap();
            // Relay queues can still be overloaded by a poor policy; here they are not.
            assert!(
                r.violated.iter().all(|c| matches!(c, Constraint::Q1r | Constraint::Q2r)),
                "{s}: {:?}",
                r.violated
            );
        }
        let noncoop = Policy::default();
        for s in Scheme::ALL {
            assert!(evaluate_scheme(s, &fig2(), &noncoop, 0.0, 0.0).unwrap().feasible);
        }
    }

    #[test]
    fn inner_dom1_closed_forms() {
        let cfg = fig3();
        let pol = Policy {
            epsilon: 0.6,
            rho: 0.3,
            p1: 0.7,
            p2: 0.8,
            f1: 0.5,
            f2: 0.4,
            ..Policy::default()
        };
        let (l1, l2) = (0.05, 0.04);
        let r = evaluate_scheme(Scheme::OrderedInnerDom1, &cfg, &pol, l1, l2).unwrap();
        let pi = r.rates.pi_pe;
        let mu_1r = pi * 0.9 * 0.6 * 0.3;
        let mu_2 = pi * 0.9 * 0.4 * 0.8;
        let x = r.rates.lambda_1r / mu_1r;
        let mu_1 = pi * 0.9 * 0.6 * (0.7 * x + 1.0 - x);
        let y = l2 / mu_2;
        let mu_2r = pi * 0.9 * 0.4 * (0.2 * y + 1.0 - y);
        for (got, want) in [
            (r.rates.mu_1r, mu_1r),
            (r.rates.mu_2, mu_2),
            (r.rates.mu_1, mu_1),
            (r.rates.mu_2r, mu_2r),
        ] {
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }
    }

    #[test]
    fn inner_dom2_closed_forms() {
        let cfg = fig3();
        let pol = Policy {
            epsilon: 0.6,
            rho: 0.3,
            p1: 0.7,
            p2: 0.8,
            f1: 0.5,
            f2: 0.4,
            ..Policy::default()
        };
        let (l1, l2) = (0.05, 0.04);
        let r = evaluate_scheme(Scheme::OrderedInnerDom2, &cfg, &pol, l1, l2).unwrap();
        let pi = r.rates.pi_pe;
        let mu_1 = pi * 0.9 * 0.6 * 0.7;
        let x = l1 / mu_1;
        let mu_1r = pi * 0.9 * 0.6 * (0.3 * x + 1.0 - x);
        let mu_2r = pi * 0.9 * 0.4 * 0.2;
        let y = r.rates.lambda_2r / mu_2r;
        let mu_2 = pi * 0.9 * 0.4 * (0.8 * y + 1.0 - y);
        for (got, want) in [
            (r.rates.mu_1, mu_1),
            (r.rates.mu_1r, mu_1r),
            (r.rates.mu_2r, mu_2r),
            (r.rates.mu_2, mu_2),
        ] {
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }
    }

    #[test]
    fn outer_dom1_closed_forms() {
        let cfg = fig3();
        let pol = Policy {
            epsilon: 0.6,
            rho: 0.3,
            p1: 0.7,
            p2: 0.8,
            f1: 0.5,
            f2: 0.4,
            ..Policy::default()
        };
        let l2 = 0.04;
        let r = evaluate_scheme(Scheme::OrderedOuterDom1, &cfg, &pol, 0.05, l2).unwrap();
        let pi = r.rates.pi_pe;
        let mu_2 = pi * 0.9 * 0.4;
        let e2 = 1.0 - l2 / mu_2;
        let mu_1 = pi * 0.9 * (0.6 + 0.4 * 0.8 * e2);
        let mu_1r = pi * 0.9 * (0.6 + 0.4 * 0.9 * e2) * 0.3;
        let mu_2r = pi * 0.9 * 0.4 * (0.2 * (1.0 - e2) + e2);
        for (got, want) in [
            (r.rates.mu_2, mu_2),
            (r.rates.mu_1, mu_1),
            (r.rates.mu_1r, mu_1r),
            (r.rates.mu_2r, mu_2r),
        ] {
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }
    }

    #[test]
    fn ra_inner_dom1_closed_forms() {
        let cfg = fig3();
        let pol = Policy {
            alpha1: 0.7,
            alpha2: 0.4,
            rho: 0.3,
            p1: 0.7,
            p2: 0.8,
            f1: 0.5,
            f2: 0.4,
            ..Policy::default()
        };
        let l2 = 0.02;
        let r = evaluate_scheme(Scheme::RAInnerDom1, &cfg, &pol, 0.01, l2).unwrap();
        let pi = r.rates.pi_pe;
        let mu_1r = pi * 0.9 * 0.7 * 0.6 * 0.3;
        let mu_2 = pi * 0.9 * 0.3 * 0.4 * 0.8;
        let x = r.rates.lambda_1r / mu_1r;
        let mu_1 = pi * 0.9 * 0.7 * 0.6 * (0.7 * x + 1.0 - x);
        let y = l2 / mu_2;
        let mu_2r = pi * 0.9 * 0.3 * 0.4 * (0.2 * y + 1.0 - y);
        for (got, want) in [
            (r.rates.mu_1r, mu_1r),
            (r.rates.mu_2, mu_2),
            (r.rates.mu_1, mu_1),
            (r.rates.mu_2r, mu_2r),
        ] {
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }
    }

    #[test]
    fn noncoop_forces_zero_acceptance() {
        let pol = Policy {
            epsilon: 0.7,
            f1: 0.9,
            f2: 0.9,
            ..Policy::default()
        };
        let r = evaluate_scheme(Scheme::OrderedNoncoopDom2, &fig2(), &pol, 0.05, 0.02).unwrap();
        assert_eq!(r.rates.lambda_1r, 0.0);
        assert_eq!(r.rates.lambda_2r, 0.0);
        assert_eq!(r.rates.mu_p, 0.5);
        assert!((r.rates.pi_pe - 0.3).abs() < 1e-15);
    }

    #[test]
    fn inner_without_cooperation_at_full_priority_matches_noncoop() {
        let pol = Policy {
            epsilon: 1.0,
            p2: 1.0,
            ..Policy::default()
        };
        for l1 in [0.0, 0.1, 0.239, 0.25] {
            let a = evaluate_scheme(Scheme::OrderedInnerDom1, &fig2(), &pol, l1, 0.0).unwrap();
            let b = evaluate_scheme(Scheme::OrderedNoncoopDom1, &fig2(), &pol, l1, 0.0).unwrap();
            assert_eq!(a.feasible, b.feasible);
            assert_eq!(a.violated, b.violated);
            assert_eq!(a.rates.mu_1, b.rates.mu_1);
            assert_eq!(a.rates.mu_2, b.rates.mu_2);
        }
    }

    #[test]
    fn inner_without_cooperation_is_dominated_by_noncoop() {
        let pol = Policy {
            epsilon: 0.6,
            p2: 0.7,
            ..Policy::default()
        };
        let a = evaluate_scheme(Scheme::OrderedInnerDom1, &fig2(), &pol, 0.1, 0.05).unwrap();
        let b = evaluate_scheme(Scheme::OrderedNoncoopDom1, &fig2(), &pol, 0.1, 0.05).unwrap();
        assert!(a.rates.mu_1 <= b.rates.mu_1);
        assert!(a.rates.mu_2 <= b.rates.mu_2);
    }

    #[test]
    fn primary_overload_is_an_error() {
        let mut cfg = fig2();
        cfg.lambda_p = 0.6;
        let r = evaluate_scheme(Scheme::OrderedInnerDom1, &cfg, &Policy::default(), 0.0, 0.0);
        assert!(matches!(r, Err(ModelError::PrimaryInfeasible { .. })));
    }

    #[test]
    fn division_guard_surfaces_as_violation() {
        // eps = 1 and p1 = 1 leave Q1r with no service while it receives packets.
        let pol = Policy {
            epsilon: 1.0,
            p1: 1.0,
            f1: 1.0,
            ..Policy::default()
        };
        let r = evaluate_scheme(Scheme::OrderedInnerDom1, &fig2(), &pol, 0.0, 0.0).unwrap();
        assert_eq!(r.rates.mu_1r, 0.0);
        assert!(r.violated.contains(&Constraint::Q1r));
    }

    #[test]
    fn capacity_matches_corner_value() {
        let pol = Policy {
            epsilon: 1.0,
            ..Policy::default()
        };
        let (cap, r) = lambda1_capacity(Scheme::OrderedNoncoopDom1, &fig2(), &pol, 0.0).unwrap();
        assert!(r.feasible);
        assert!((cap - 0.24).abs() < 1e-8);
    }

    #[test]
    fn capacity_reports_infeasible_policy() {
        let pol = Policy {
            epsilon: 1.0,
            ..Policy::default()
        };
        // s2 never gets a first-rank slot in the first dominant system.
        let v = lambda1_capacity(Scheme::OrderedNoncoopDom1, &fig2(), &pol, 0.01).unwrap_err();
        assert!(v > 0.0);
    }
}
