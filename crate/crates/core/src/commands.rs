//! The `region`, `simulate` and `validate` commands, independent of argument
//! parsing so they can be driven from tests.

use crate::analysis::evaluate_scheme;
use crate::config::{ConfigError, ExperimentSpec, RegionSpec};
use crate::model::{
    primary_empty_prob, primary_service_rate, relay_arrival_rates, Policy, QueueId, Scheme,
};
use crate::optimizer::{boundary_sweep, Region, SearchSettings};
use crate::output::{region_csv, Metadata, RegionFile};
use crate::simulator::{simulate_traced, stability_verdict, write_trace, Estimate, Variant, Verdict};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("primary queue cannot be stabilized: lambda_p = {lambda_p} exceeds the best mu_p = {mu_p}")]
    PrimaryInfeasible { lambda_p: f64, mu_p: f64 },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Model(#[from] crate::model::ModelError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::PrimaryInfeasible { .. } => 3,
            CliError::Validation(_) => 4,
            CliError::Io { .. } | CliError::Model(_) => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    let mut f = std::fs::File::create(path).map_err(io_err(path))?;
    f.write_all(contents.as_bytes()).map_err(io_err(path))?;
    f.sync_all().map_err(io_err(path))
}

/// Largest primary service rate any acceptance policy can reach.
pub fn best_primary_rate(spec: &ExperimentSpec) -> f64 {
    let full = Policy {
        f1: 1.0,
        f2: 1.0,
        ..Policy::default()
    };
    primary_service_rate(&spec.system, &full)
}

fn check_primary(spec: &ExperimentSpec) -> Result<(), CliError> {
    let mu_p = best_primary_rate(spec);
    if spec.system.lambda_p > mu_p {
        return Err(CliError::PrimaryInfeasible {
            lambda_p: spec.system.lambda_p,
            mu_p,
        });
    }
    Ok(())
}

/// Sweeps one configured region.
pub fn sweep_region(spec: &ExperimentSpec, region: &RegionSpec) -> Region {
    let search = SearchSettings {
        tie_rho_to_epsilon: region.tie_rho_to_epsilon,
        ..spec.search
    };
    let mut r = boundary_sweep(&region.schemes, &spec.system, spec.grid_step, &search);
    r.schemes = region.schemes.clone();
    r
}

/// Sweeps every region of `spec`, writing `metadata.json` and one
/// `<region>.csv` per region into `out_dir`. Each CSV is written as soon as
/// its region is done.
pub fn cmd_region(spec: &ExperimentSpec, out_dir: &Path) -> Result<Vec<(RegionSpec, Region)>, CliError> {
    check_primary(spec)?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let files: Vec<RegionFile> = spec
        .regions
        .iter()
        .map(|r| RegionFile {
            name: r.name.clone(),
            file: format!("{}.csv", r.name),
            schemes: r.schemes.clone(),
            tie_rho_to_epsilon: r.tie_rho_to_epsilon,
        })
        .collect();
    let meta = Metadata::new(&spec.name, &spec.source, spec.grid_step, spec.search, files.clone());
    write_file(&out_dir.join("metadata.json"), &meta.to_json())?;

    let mut out = Vec::new();
    for (rs, file) in spec.regions.iter().zip(&files) {
        let region = sweep_region(spec, rs);
        write_file(&out_dir.join(&file.file), &region_csv(&region))?;
        out.push((rs.clone(), region));
    }
    Ok(out)
}

/// One simulated operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimPoint {
    pub lambda_1: f64,
    pub lambda_2: f64,
    pub variant: Variant,
    pub policy: Policy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateReport {
    pub text: String,
    pub primary_feasible: bool,
    /// Largest |empirical - analytic| in standard errors over every compared
    /// rate.
    pub max_abs_delta_se: f64,
}

fn push_compare(out: &mut String, worst: &mut f64, key: &str, est: Estimate, analytic: f64) {
    let z = est.z_score(analytic);
    *worst = worst.max(z.abs());
    let _ = writeln!(out, "{key}.empirical = {}", est.value);
    let _ = writeln!(out, "{key}.se = {}", est.se);
    let _ = writeln!(out, "{key}.analytic = {analytic}");
    let _ = writeln!(out, "{key}.delta_se = {z}");
}

/// Simulates one point and compares the empirical rates with their closed
/// forms. Service rates are compared only for dominant systems, where the
/// closed forms are exact.
pub fn cmd_simulate(
    spec: &ExperimentSpec,
    point: &SimPoint,
    slots: u64,
    seed: u64,
    trace_out: Option<&Path>,
) -> Result<SimulateReport, CliError> {
    let cfg = &spec.system;
    let trace_slots = if trace_out.is_some() { spec.simulation.trace_slots.max(1) } else { 0 };
    let (mut stats, trace) = simulate_traced(
        cfg,
        &point.policy,
        point.lambda_1,
        point.lambda_2,
        point.variant,
        slots,
        seed,
        trace_slots,
    )?;
    stats.verdict = stability_verdict(&stats, &spec.simulation.thresholds);
    if let Some(path) = trace_out {
        let f = std::fs::File::create(path).map_err(io_err(path))?;
        write_trace(std::io::BufWriter::new(f), &trace).map_err(io_err(path))?;
    }

    let pol = match point.variant {
        Variant::Dominant(s) => s.effective_policy(&point.policy),
        Variant::Original(_) => point.policy,
    };
    let mu_p = primary_service_rate(cfg, &pol);
    let pi = primary_empty_prob(cfg.lambda_p, mu_p).ok();

    let mut t = String::new();
    let _ = writeln!(t, "experiment = {}", spec.name);
    let _ = writeln!(t, "variant = {}", point.variant);
    let _ = writeln!(t, "lambda_p = {}", cfg.lambda_p);
    let _ = writeln!(t, "lambda_1 = {}", point.lambda_1);
    let _ = writeln!(t, "lambda_2 = {}", point.lambda_2);
    for (k, v) in [
        ("epsilon", pol.epsilon),
        ("rho", pol.effective_rho()),
        ("p1", pol.p1),
        ("p2", pol.p2),
        ("f1", pol.f1),
        ("f2", pol.f2),
        ("alpha1", pol.alpha1),
        ("alpha2", pol.alpha2),
    ] {
        let _ = writeln!(t, "policy.{k} = {v}");
    }
    let _ = writeln!(t, "slots = {slots}");
    let _ = writeln!(t, "seed = {seed}");
    let _ = writeln!(t, "primary_feasible = {}", pi.is_some());
    let _ = writeln!(t, "verdict = {}", stats.verdict);
    for q in QueueId::ALL {
        let s = stats.queue(q);
        let n = q.name();
        let _ = writeln!(t, "{n}.arrivals = {}", s.arrivals);
        let _ = writeln!(t, "{n}.departures = {}", s.departures);
        let _ = writeln!(t, "{n}.final_len = {}", s.final_len);
        let _ = writeln!(t, "{n}.mean_len = {}", s.mean_len);
        let _ = writeln!(t, "{n}.drift = {}", s.drift);
    }
    let _ = writeln!(t, "busy_slots = {}", stats.busy_slots);
    let _ = writeln!(t, "direct_departures = {}", stats.direct_departures);
    let _ = writeln!(t, "relayed_departures = {}", stats.relayed_departures);

    let mut worst: f64 = 0.0;
    if let Some(est) = stats.empirical_mu_p {
        push_compare(&mut t, &mut worst, "mu_p", est, mu_p);
    }
    if let Some(pi) = pi {
        let (l1r, l2r) = relay_arrival_rates(cfg, &pol, pi);
        push_compare(&mut t, &mut worst, "lambda_1r", stats.empirical_relay_arrivals[0], l1r);
        push_compare(&mut t, &mut worst, "lambda_2r", stats.empirical_relay_arrivals[1], l2r);
        let arrivals = [cfg.lambda_p, point.lambda_1, point.lambda_2, l1r, l2r];
        for q in QueueId::ALL {
            let key = format!("throughput.{}", q.name());
            push_compare(&mut t, &mut worst, &key, stats.queue(q).throughput, arrivals[q.index()]);
        }
        if let Variant::Dominant(scheme) = point.variant {
            let r = evaluate_scheme(scheme, cfg, &pol, point.lambda_1, point.lambda_2)?;
            let _ = writeln!(t, "analytic_feasible = {}", r.feasible);
            for q in [QueueId::Q1, QueueId::Q2, QueueId::Q1r, QueueId::Q2r] {
                let key = format!("service.{}", q.name());
                push_compare(&mut t, &mut worst, &key, stats.queue(q).service, r.rates.service(q));
            }
        }
    }
    let _ = writeln!(t, "max_abs_delta_se = {worst}");
    Ok(SimulateReport {
        text: t,
        primary_feasible: pi.is_some(),
        max_abs_delta_se: worst,
    })
}

/// One validation point and its simulated verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationPoint {
    pub lambda_1: f64,
    pub lambda_2: f64,
    pub scheme: Scheme,
    pub policy: Policy,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationSummary {
    pub inner: Vec<ValidationPoint>,
    pub exterior: Vec<ValidationPoint>,
}

impl ValidationSummary {
    pub fn count(points: &[ValidationPoint], v: Verdict) -> usize {
        points.iter().filter(|p| p.verdict == v).count()
    }

    /// Every inner point is stable and no exterior point is.
    pub fn passed(&self) -> bool {
        self.inner.iter().all(|p| p.verdict == Verdict::Stable)
            && self.exterior.iter().all(|p| p.verdict != Verdict::Stable)
    }

    pub fn render(&self) -> String {
        let mut t = String::new();
        for (label, pts) in [("inner", &self.inner), ("exterior", &self.exterior)] {
            for (i, p) in pts.iter().enumerate() {
                let _ = writeln!(
                    t,
                    "{label}[{i}] lambda_1 = {} lambda_2 = {} scheme = {} verdict = {}",
                    p.lambda_1, p.lambda_2, p.scheme, p.verdict
                );
            }
        }
        for (label, pts) in [("inner", &self.inner), ("exterior", &self.exterior)] {
            let _ = writeln!(
                t,
                "{label}: {} points, {} stable, {} unstable, {} inconclusive",
                pts.len(),
                Self::count(pts, Verdict::Stable),
                Self::count(pts, Verdict::Unstable),
                Self::count(pts, Verdict::Inconclusive)
            );
        }
        let _ = writeln!(t, "result = {}", if self.passed() { "pass" } else { "fail" });
        t
    }
}

/// Distance outside the outer boundary at which exterior points are probed.
pub const EXTERIOR_SCALE: f64 = 1.1;

/// Picks `k` points strictly inside `inner` (a random fraction in
/// `[0.3, 0.8]` of a boundary point, simulated with that point's optimal
/// policy) and `k` points pushed `EXTERIOR_SCALE` outside `outer`, then
/// simulates the original system at each.
pub fn validate_regions(
    spec: &ExperimentSpec,
    inner: &Region,
    outer: Option<&Region>,
    k: usize,
    slots: u64,
    seed: u64,
) -> Result<ValidationSummary, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a11_da7e);
    let candidates = |r: &Region| -> Vec<(f64, f64, Scheme, Policy)> {
        r.samples
            .iter()
            .filter_map(|s| match (s.lambda_1_max, s.scheme, s.argmax) {
                (Some(v), Some(sc), Some(p)) if v > 0.0 => Some((v, s.lambda_2, sc, p)),
                _ => None,
            })
            .collect()
    };

    let mut jobs: Vec<(bool, f64, f64, Scheme, Policy)> = Vec::new();
    let inner_c = candidates(inner);
    if k > 0 && inner_c.is_empty() {
        return Err(CliError::Validation("inner region has no interior".into()));
    }
    for &(v, l2, sc, p) in inner_c.choose_multiple(&mut rng, k) {
        let u = rng.gen_range(0.3..=0.8);
        jobs.push((true, u * v, u * l2, sc, p));
    }
    if let Some(outer) = outer {
        let outer_c: Vec<_> = candidates(outer)
            .into_iter()
            .filter(|&(v, l2, _, _)| EXTERIOR_SCALE * v <= 1.0 && EXTERIOR_SCALE * l2 <= 1.0)
            .collect();
        for &(v, l2, sc, p) in outer_c.choose_multiple(&mut rng, k) {
            jobs.push((false, EXTERIOR_SCALE * v, EXTERIOR_SCALE * l2, sc, p));
        }
    }

    let th = spec.simulation.thresholds;
    let results: Vec<Result<(bool, ValidationPoint), CliError>> = jobs
        .par_iter()
        .enumerate()
        .map(|(i, &(is_inner, l1, l2, sc, p))| {
            let (mut stats, _) = simulate_traced(
                &spec.system,
                &p,
                l1,
                l2,
                Variant::Original(sc.access()),
                slots,
                seed.wrapping_add(i as u64),
                0,
            )?;
            stats.verdict = stability_verdict(&stats, &th);
            Ok((
                is_inner,
                ValidationPoint {
                    lambda_1: l1,
                    lambda_2: l2,
                    scheme: sc,
                    policy: p,
                    verdict: stats.verdict,
                },
            ))
        })
        .collect();
    let mut summary = ValidationSummary {
        inner: Vec::new(),
        exterior: Vec::new(),
    };
    for r in results {
        let (is_inner, p) = r?;
        if is_inner {
            summary.inner.push(p);
        } else {
            summary.exterior.push(p);
        }
    }
    Ok(summary)
}

/// Sweeps the configured inner and outer regions and validates them by
/// simulation.
pub fn cmd_validate(spec: &ExperimentSpec, slots: u64, seed: u64) -> Result<ValidationSummary, CliError> {
    check_primary(spec)?;
    let v = &spec.validate;
    if v.points == 0 {
        return Ok(ValidationSummary {
            inner: Vec::new(),
            exterior: Vec::new(),
        });
    }
    let find = |name: &str| {
        spec.region(name)
            .ok_or_else(|| CliError::Usage(format!("no region named '{name}'")))
    };
    let inner = sweep_region(spec, find(&v.inner)?);
    let outer = match &v.outer {
        Some(name) => Some(sweep_region(spec, find(name)?)),
        None => None,
    };
    validate_regions(spec, &inner, outer.as_ref(), v.points, slots, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::FIG2;

    fn fig2() -> ExperimentSpec {
        ExperimentSpec::from_toml(FIG2).unwrap()
    }

    #[test]
    fn exit_codes_are_distinct() {
        let codes = [
            CliError::Usage(String::new()).exit_code(),
            CliError::PrimaryInfeasible { lambda_p: 1.0, mu_p: 0.5 }.exit_code(),
            CliError::Validation(String::new()).exit_code(),
        ];
        assert_eq!(codes, [2, 3, 4]);
    }

    #[test]
    fn empty_scheme_list_writes_header_only() {
        let mut spec = fig2();
        spec.regions = vec![RegionSpec {
            name: "nothing".into(),
            schemes: vec![],
            tie_rho_to_epsilon: false,
        }];
        let dir = tempfile::tempdir().unwrap();
        cmd_region(&spec, dir.path()).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("nothing.csv")).unwrap();
        assert_eq!(csv, format!("{}\n", crate::output::CSV_HEADER));
        let meta = std::fs::read_to_string(dir.path().join("metadata.json")).unwrap();
        assert!(meta.contains(&crate::output::git_blob_sha1(FIG2.as_bytes())));
    }

    #[test]
    fn overloaded_primary_is_flagged() {
        let mut spec = fig2();
        spec.system.lambda_p = 0.99;
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(cmd_region(&spec, dir.path()).unwrap_err().exit_code(), 3);
        let point = SimPoint {
            lambda_1: 0.01,
            lambda_2: 0.01,
            variant: Variant::Original(crate::model::Access::Ordered),
            policy: spec.policy,
        };
        let rep = cmd_simulate(&spec, &point, 10_000, 1, None).unwrap();
        assert!(!rep.primary_feasible);
        assert!(rep.text.contains("primary_feasible = false"));
    }

    #[test]
    fn noncooperative_point_matches_closed_forms() {
        let spec = fig2();
        let point = SimPoint {
            lambda_1: 0.1,
            lambda_2: 0.05,
            variant: Variant::Dominant(Scheme::OrderedNoncoopDom1),
            policy: Policy {
                epsilon: 0.7,
                ..spec.policy
            },
        };
        let a = cmd_simulate(&spec, &point, 1_000_000, 3, None).unwrap();
        assert!(a.text.contains("verdict = Stable"), "{}", a.text);
        assert!(a.max_abs_delta_se < 3.5, "{}", a.text);
        let b = cmd_simulate(&spec, &point, 1_000_000, 3, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_points_is_a_trivial_pass() {
        let mut spec = fig2();
        spec.validate.points = 0;
        let s = cmd_validate(&spec, 1000, 1).unwrap();
        assert!(s.passed());
        assert!(s.inner.is_empty() && s.exterior.is_empty());
    }
}
