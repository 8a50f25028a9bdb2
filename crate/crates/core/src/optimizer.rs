//! Multistart derivative-free maximization and stability-region sweeps.
//!
//! The local search is a pattern search on a box that polls the coordinate
//! directions plus a few random ones. The best local optima of the first
//! pass are searched again with more directions and a slower step decay. Candidates are ranked feasibility-first: any feasible point
//! beats any infeasible one, infeasible points are ranked by total constraint
//! violation, and feasible points by objective value. Starts are a shifted
//! Halton sequence, so start `k` is the same point no matter how many starts
//! are requested.

use crate::analysis::lambda1_capacity;
use crate::model::{Access, BoundKind, Policy, Scheme, SystemConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Objective value of one trial point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub value: f64,
    /// Zero for feasible points.
    pub violation: f64,
}

impl Candidate {
    pub fn feasible(value: f64) -> Self {
        Candidate {
            value,
            violation: 0.0,
        }
    }

    pub fn infeasible(violation: f64) -> Self {
        Candidate {
            value: f64::NEG_INFINITY,
            violation: violation.max(f64::MIN_POSITIVE),
        }
    }

    pub fn is_feasible(&self) -> bool {
        self.violation == 0.0
    }

    fn better_than(&self, other: &Candidate) -> bool {
        match (self.is_feasible(), other.is_feasible()) {
            (true, true) => self.value > other.value,
            (true, false) => true,
            (false, true) => false,
            (false, false) => self.violation < other.violation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSettings {
    pub n_starts: usize,
    pub initial_step: f64,
    pub step_tol: f64,
    pub max_evals_per_start: usize,
    /// Random poll directions per dimension, on top of the coordinate ones.
    pub random_directions: usize,
    /// Failed polls in a row before the step halves.
    pub patience: usize,
    /// How many of the best local optima get a second, more thorough search.
    pub polish: usize,
    pub seed: u64,
    pub tie_rho_to_epsilon: bool,
}

impl Default for SearchSettings {
    fn default() -> Self {
        SearchSettings {
            n_starts: 64,
            initial_step: 0.25,
            step_tol: 1e-6,
            max_evals_per_start: 20_000,
            random_directions: 2,
            patience: 2,
            polish: 6,
            seed: 0x5eed,
            tie_rho_to_epsilon: false,
        }
    }
}

impl SearchSettings {
    fn polishing(&self) -> SearchSettings {
        SearchSettings {
            initial_step: self.initial_step / 4.0,
            random_directions: self.random_directions.max(1) * 4,
            patience: self.patience.max(1) * 4,
            max_evals_per_start: self.max_evals_per_start * 4,
            ..*self
        }
    }
}

/// Best point found by [`multistart_maximize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Optimum {
    pub point: Vec<f64>,
    pub value: f64,
    /// Index of the start that produced the optimum (extra starts first).
    pub start: usize,
}

const HALTON_BASES: [u32; 10] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29];

fn radical_inverse(mut index: u64, base: u32) -> f64 {
    let b = u64::from(base);
    let inv = 1.0 / f64::from(base);
    let mut f = inv;
    let mut r = 0.0;
    while index > 0 {
        r += f * (index % b) as f64;
        index /= b;
        f *= inv;
    }
    r
}

/// `n_starts` quasi-random points in `[0, 1)^dim`, Cranley-Patterson rotated
/// by a shift drawn from `seed`.
pub fn start_points(dim: usize, n_starts: usize, seed: u64) -> Vec<Vec<f64>> {
    assert!(dim <= HALTON_BASES.len(), "at most {} dimensions", HALTON_BASES.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
    (0..n_starts)
        .map(|k| {
            (0..dim)
                .map(|d| (radical_inverse(k as u64 + 1, HALTON_BASES[d]) + shift[d]).fract())
                .collect()
        })
        .collect()
}

/// Pattern search from `x0`, maximizing `f` inside `[lower, upper]`.
///
/// Each poll tries the coordinate directions, then random unit directions
/// drawn from `seed`. The first improving trial is taken and the step
/// doubles; after `patience` failed polls the step halves.
pub fn pattern_search<F>(
    f: &F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    settings: &SearchSettings,
    seed: u64,
) -> (Vec<f64>, Candidate)
where
    F: Fn(&[f64]) -> Candidate,
{
    let n = x0.len();
    let width: Vec<f64> = (0..n).map(|d| upper[d] - lower[d]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..n).map(|d| x0[d].clamp(lower[d], upper[d])).collect();
    let mut fx = f(&x);
    let mut evals = 1usize;
    let mut step = settings.initial_step;
    let mut fails = 0usize;
    let mut y = x.clone();
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity((1 + settings.random_directions) * n);
    while step >= settings.step_tol && evals < settings.max_evals_per_start {
        dirs.clear();
        for d in 0..n {
            let mut e = vec![0.0; n];
            e[d] = 1.0;
            dirs.push(e);
        }
        for _ in 0..settings.random_directions * n {
            let mut r: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                r.iter_mut().for_each(|v| *v /= norm);
                dirs.push(r);
            }
        }
        let mut improved = false;
        'poll: for dir in &dirs {
            for sign in [1.0, -1.0] {
                for d in 0..n {
                    y[d] = (x[d] + sign * step * dir[d] * width[d]).clamp(lower[d], upper[d]);
                }
                if y == x {
                    continue;
                }
                let fy = f(&y);
                evals += 1;
                if fy.better_than(&fx) {
                    x.copy_from_slice(&y);
                    fx = fy;
                    improved = true;
                    break 'poll;
                }
            }
        }
        if improved {
            fails = 0;
            step = (step * 2.0).min(settings.initial_step);
        } else {
            fails += 1;
            if fails >= settings.patience.max(1) {
                fails = 0;
                step *= 0.5;
            }
        }
    }
    (x, fx)
}

/// Best feasible local optimum over `extra_starts` followed by `n_starts`
/// quasi-random starts. `None` when no start reaches feasibility.
pub fn multistart_maximize<F>(
    f: F,
    lower: &[f64],
    upper: &[f64],
    extra_starts: &[Vec<f64>],
    settings: &SearchSettings,
) -> Option<Optimum>
where
    F: Fn(&[f64]) -> Candidate,
{
    assert!(settings.n_starts >= 1 || !extra_starts.is_empty());
    let dim = lower.len();
    let unit = start_points(dim, settings.n_starts, settings.seed);
    let starts = extra_starts.iter().cloned().chain(unit.into_iter().map(|u| {
        u.iter()
            .enumerate()
            .map(|(d, t)| lower[d] + t * (upper[d] - lower[d]))
            .collect::<Vec<f64>>()
    }));

    let mut found: Vec<(Vec<f64>, Candidate, usize)> = starts
        .enumerate()
        .map(|(k, x0)| {
            let (x, fx) = pattern_search(&f, &x0, lower, upper, settings, mix_seed(settings.seed, 0x10ca1, k as u64));
            (x, fx, k)
        })
        .filter(|(_, fx, _)| fx.is_feasible())
        .collect();
    // best first, ties to the earlier start
    found.sort_by(|a, b| b.1.value.total_cmp(&a.1.value).then(a.2.cmp(&b.2)));

    let polish = settings.polishing();
    let mut best: Option<(Vec<f64>, Candidate, usize)> = None;
    for (x, fx, k) in found.into_iter().take(settings.polish.max(1)) {
        let (x, fx) = if settings.polish > 0 {
            let (px, pfx) = pattern_search(&f, &x, lower, upper, &polish, mix_seed(settings.seed, 0x9011, k as u64));
            if pfx.better_than(&fx) {
                (px, pfx)
            } else {
                (x, fx)
            }
        } else {
            (x, fx)
        };
        if best.as_ref().is_none_or(|(_, b, _)| fx.better_than(b)) {
            best = Some((x, fx, k));
        }
    }
    best.map(|(point, c, start)| Optimum {
        point,
        value: c.value,
        start,
    })
}

/// Decision variables of the policy box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyVar {
    Epsilon,
    Rho,
    P1,
    P2,
    F1,
    F2,
    Alpha1,
    Alpha2,
}

impl PolicyVar {
    fn set(self, pol: &mut Policy, v: f64) {
        match self {
            PolicyVar::Epsilon => pol.epsilon = v,
            PolicyVar::Rho => pol.rho = v,
            PolicyVar::P1 => pol.p1 = v,
            PolicyVar::P2 => pol.p2 = v,
            PolicyVar::F1 => pol.f1 = v,
            PolicyVar::F2 => pol.f2 = v,
            PolicyVar::Alpha1 => pol.alpha1 = v,
            PolicyVar::Alpha2 => pol.alpha2 = v,
        }
    }

    fn get(self, pol: &Policy) -> f64 {
        match self {
            PolicyVar::Epsilon => pol.epsilon,
            PolicyVar::Rho => pol.rho,
            PolicyVar::P1 => pol.p1,
            PolicyVar::P2 => pol.p2,
            PolicyVar::F1 => pol.f1,
            PolicyVar::F2 => pol.f2,
            PolicyVar::Alpha1 => pol.alpha1,
            PolicyVar::Alpha2 => pol.alpha2,
        }
    }
}

/// The variables a scheme's rates actually depend on. Tying `rho` to
/// `epsilon` only applies to ordered access, where `epsilon` exists.
pub fn search_vars(scheme: Scheme, tie_rho_to_epsilon: bool) -> Vec<PolicyVar> {
    use PolicyVar::*;
    match (scheme.access(), scheme.kind()) {
        (Access::Ordered, BoundKind::Noncoop) => vec![Epsilon],
        (Access::RandomAccess, BoundKind::Noncoop) => vec![Alpha1, Alpha2],
        (Access::Ordered, _) => {
            let mut v = vec![Epsilon, P1, P2, F1, F2];
            if !tie_rho_to_epsilon {
                v.push(Rho);
            }
            v
        }
        (Access::RandomAccess, _) => vec![Alpha1, Alpha2, P1, P2, F1, F2, Rho],
    }
}

/// Policy with every variable the scheme ignores reset to its default.
pub fn canonical_policy(scheme: Scheme, pol: &Policy, tie_rho_to_epsilon: bool) -> Policy {
    let tie = tie_rho_to_epsilon && scheme.access() == Access::Ordered;
    let mut out = Policy {
        tie_rho_to_epsilon: tie,
        ..Policy::default()
    };
    for v in search_vars(scheme, tie) {
        v.set(&mut out, v.get(pol));
    }
    scheme.effective_policy(&out)
}

fn policy_from(scheme: Scheme, vars: &[PolicyVar], x: &[f64], tie: bool) -> Policy {
    let mut pol = Policy {
        tie_rho_to_epsilon: tie,
        ..Policy::default()
    };
    for (v, &val) in vars.iter().zip(x) {
        v.set(&mut pol, val);
    }
    scheme.effective_policy(&pol)
}

/// Maximum stable `lambda_1` at `lambda_2` over the policy box, with the
/// maximizing policy. `None` when no start finds a feasible policy.
pub fn max_lambda1_given_lambda2(
    scheme: Scheme,
    cfg: &SystemConfig,
    lambda_2: f64,
    search: &SearchSettings,
) -> Option<(f64, Policy)> {
    max_lambda1_with_starts(scheme, cfg, lambda_2, search, &[])
}

fn max_lambda1_with_starts(
    scheme: Scheme,
    cfg: &SystemConfig,
    lambda_2: f64,
    search: &SearchSettings,
    warm: &[Policy],
) -> Option<(f64, Policy)> {
    let cfg = cfg.resolved().ok()?;
    let tie = search.tie_rho_to_epsilon && scheme.access() == Access::Ordered;
    let vars = search_vars(scheme, tie);
    let lower = vec![0.0; vars.len()];
    let upper = vec![1.0; vars.len()];
    let extra: Vec<Vec<f64>> = warm
        .iter()
        .map(|p| vars.iter().map(|v| v.get(p)).collect())
        .collect();
    let objective = |x: &[f64]| {
        let pol = policy_from(scheme, &vars, x, tie);
        match lambda1_capacity(scheme, &cfg, &pol, lambda_2) {
            Ok((cap, _)) => Candidate::feasible(cap),
            Err(v) => Candidate::infeasible(v),
        }
    };
    let best = multistart_maximize(objective, &lower, &upper, &extra, search)?;
    let pol = policy_from(scheme, &vars, &best.point, tie);
    Some((best.value, canonical_policy(scheme, &pol, tie)))
}

/// One point of a swept boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSample {
    pub lambda_2: f64,
    pub lambda_1_max: Option<f64>,
    pub argmax: Option<Policy>,
    /// Scheme that attains the maximum.
    pub scheme: Option<Scheme>,
}

/// A swept stability boundary: the largest stable `lambda_1` at each grid
/// value of `lambda_2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub schemes: Vec<Scheme>,
    pub grid_step: f64,
    pub tie_rho_to_epsilon: bool,
    pub samples: Vec<RegionSample>,
}

impl Region {
    pub fn empty(grid_step: f64) -> Self {
        Region {
            schemes: Vec::new(),
            grid_step,
            tie_rho_to_epsilon: false,
            samples: Vec::new(),
        }
    }

    /// `lambda_1_max` at the sample nearest to `lambda_2`.
    pub fn value_at(&self, lambda_2: f64) -> Option<f64> {
        self.samples
            .iter()
            .min_by(|a, b| {
                (a.lambda_2 - lambda_2)
                    .abs()
                    .total_cmp(&(b.lambda_2 - lambda_2).abs())
            })
            .and_then(|s| s.lambda_1_max)
    }

    /// Largest `lambda_2` with a feasible sample.
    pub fn max_lambda2(&self) -> Option<f64> {
        self.samples
            .iter()
            .filter(|s| s.lambda_1_max.is_some())
            .map(|s| s.lambda_2)
            .next_back()
    }
}

/// Grid `0, step, 2 step, ...` up to 1.
pub fn lambda2_grid(step: f64) -> Vec<f64> {
    assert!(step > 0.0, "grid step must be positive");
    let n = (1.0 / step + 1e-9).floor() as usize;
    (0..=n).map(|k| k as f64 * step).collect()
}

fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over a simple combination
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const SWEEP_BLOCK: usize = 8;

/// Allowed downward slack before a boundary counts as non-monotone.
pub const MONOTONE_TOL: f64 = 1e-3;

fn point_settings(search: &SearchSettings, scheme: Scheme, k: usize) -> SearchSettings {
    SearchSettings {
        seed: mix_seed(search.seed, scheme as u64 + 1, k as u64),
        ..*search
    }
}

/// Boundary of a single scheme over the grid, with non-monotone points
/// re-searched using more starts and the neighbouring optimum as a warm start.
pub fn scheme_boundary(
    scheme: Scheme,
    cfg: &SystemConfig,
    grid: &[f64],
    search: &SearchSettings,
) -> Vec<RegionSample> {
    // Feasibility only gets harder as lambda_2 grows, so the sweep stops once
    // a whole block past the last feasible point comes back empty. The block
    // size is fixed so the output does not depend on the worker count.
    let mut pts: Vec<Option<(f64, Policy)>> = Vec::with_capacity(grid.len());
    for block in (0..grid.len()).collect::<Vec<_>>().chunks(SWEEP_BLOCK) {
        let seen_feasible = pts.iter().any(Option::is_some);
        let tail_empty = pts.len() >= SWEEP_BLOCK && pts[pts.len() - SWEEP_BLOCK..].iter().all(Option::is_none);
        if seen_feasible && tail_empty {
            pts.resize(grid.len(), None);
            break;
        }
        let found: Vec<_> = block
            .par_iter()
            .map(|&k| max_lambda1_given_lambda2(scheme, cfg, grid[k], &point_settings(search, scheme, k)))
            .collect();
        pts.extend(found);
    }

    for k in (0..grid.len().saturating_sub(1)).rev() {
        let Some((next_v, next_pol)) = pts[k + 1] else {
            continue;
        };
        let needs_retry = match pts[k] {
            None => true,
            Some((v, _)) => v < next_v - MONOTONE_TOL,
        };
        if needs_retry {
            let mut s = point_settings(search, scheme, k);
            s.n_starts *= 4;
            let retry = max_lambda1_with_starts(scheme, cfg, grid[k], &s, &[next_pol]);
            if let Some(r) = retry {
                if pts[k].is_none_or(|(v, _)| r.0 > v) {
                    pts[k] = Some(r);
                }
            }
        }
    }

    grid.iter()
        .zip(pts)
        .map(|(&l2, p)| RegionSample {
            lambda_2: l2,
            lambda_1_max: p.map(|(v, _)| v),
            argmax: p.map(|(_, pol)| pol),
            scheme: p.map(|_| scheme),
        })
        .collect()
}

/// Sweeps every scheme over the `lambda_2` grid and unions the boundaries.
pub fn boundary_sweep(
    schemes: &[Scheme],
    cfg: &SystemConfig,
    grid_step: f64,
    search: &SearchSettings,
) -> Region {
    let grid = lambda2_grid(grid_step);
    let regions: Vec<Region> = schemes
        .iter()
        .map(|&s| Region {
            schemes: vec![s],
            grid_step,
            tie_rho_to_epsilon: search.tie_rho_to_epsilon,
            samples: scheme_boundary(s, cfg, &grid, search),
        })
        .collect();
    let mut out = region_union(&regions);
    out.grid_step = grid_step;
    out.tie_rho_to_epsilon = search.tie_rho_to_epsilon;
    out
}

fn resample(region: &Region, grid: &[f64]) -> Vec<RegionSample> {
    let s = &region.samples;
    grid.iter()
        .map(|&l2| {
            let hi = s.partition_point(|p| p.lambda_2 < l2);
            let exact = s.get(hi).filter(|p| (p.lambda_2 - l2).abs() <= 1e-12);
            if let Some(p) = exact {
                return RegionSample {
                    lambda_2: l2,
                    ..p.clone()
                };
            }
            let none = RegionSample {
                lambda_2: l2,
                lambda_1_max: None,
                argmax: None,
                scheme: None,
            };
            if hi == 0 || hi >= s.len() {
                return none;
            }
            let (a, b) = (&s[hi - 1], &s[hi]);
            match (a.lambda_1_max, b.lambda_1_max) {
                (Some(va), Some(vb)) => {
                    let t = (l2 - a.lambda_2) / (b.lambda_2 - a.lambda_2);
                    RegionSample {
                        lambda_2: l2,
                        lambda_1_max: Some(va + t * (vb - va)),
                        argmax: a.argmax,
                        scheme: a.scheme,
                    }
                }
                _ => none,
            }
        })
        .collect()
}

fn same_grid(a: &Region, b: &Region) -> bool {
    a.samples.len() == b.samples.len()
        && a
            .samples
            .iter()
            .zip(&b.samples)
            .all(|(x, y)| x.lambda_2 == y.lambda_2)
}

/// Pointwise maximum of several boundaries. Regions on different grids are
/// linearly interpolated onto the finest one first.
pub fn region_union(regions: &[Region]) -> Region {
    let nonempty: Vec<&Region> = regions.iter().filter(|r| !r.samples.is_empty()).collect();
    let mut schemes: Vec<Scheme> = Vec::new();
    for r in regions {
        for &s in &r.schemes {
            if !schemes.contains(&s) {
                schemes.push(s);
            }
        }
    }
    let Some(finest) = nonempty
        .iter()
        .copied()
        .min_by(|a, b| a.grid_step.total_cmp(&b.grid_step))
    else {
        let step = regions.first().map_or(0.0, |r| r.grid_step);
        return Region {
            schemes,
            ..Region::empty(step)
        };
    };
    let grid: Vec<f64> = finest.samples.iter().map(|s| s.lambda_2).collect();
    let aligned: Vec<Vec<RegionSample>> = nonempty
        .iter()
        .map(|r| {
            if same_grid(r, finest) {
                r.samples.clone()
            } else {
                resample(r, &grid)
            }
        })
        .collect();

    let samples = (0..grid.len())
        .map(|k| {
            let mut best = aligned[0][k].clone();
            for other in &aligned[1..] {
                let cand = &other[k];
                let wins = match (cand.lambda_1_max, best.lambda_1_max) {
                    (Some(c), Some(b)) => c > b,
                    (Some(_), None) => true,
                    _ => false,
                };
                if wins {
                    best = cand.clone();
                }
            }
            best
        })
        .collect();
    Region {
        schemes,
        grid_step: finest.grid_step,
        tie_rho_to_epsilon: nonempty.iter().all(|r| r.tie_rho_to_epsilon),
        samples,
    }
}
