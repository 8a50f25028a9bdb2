//! Region CSV files and the metadata written next to them.

use crate::analysis::STABILITY_MARGIN;
use crate::model::{Access, Policy, Scheme};
use crate::optimizer::{Region, RegionSample, SearchSettings, MONOTONE_TOL};
use serde::{Deserialize, Serialize};
use sha1::{Digest, Sha1};

pub const CSV_HEADER: &str = "lambda2,lambda1_max,scheme,eps,rho,p1,p2,f1,f2,alpha1,alpha2";

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("line {line}: {reason}")]
pub struct CsvError {
    pub line: usize,
    pub reason: String,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per grid point. Fields a scheme does not use are left empty:
/// `alpha1, alpha2` under ordered access and `eps` under random access.
pub fn region_csv(region: &Region) -> String {
    let mut out = String::with_capacity(64 * (region.samples.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for s in &region.samples {
        let mut cols = vec![s.lambda_2.to_string(), opt(s.lambda_1_max)];
        match (s.scheme, s.argmax) {
            (Some(sc), Some(p)) => {
                let ordered = sc.access() == Access::Ordered;
                cols.push(sc.name().to_string());
                cols.push(opt(ordered.then_some(p.epsilon)));
                cols.extend([p.rho, p.p1, p.p2, p.f1, p.f2].map(|x| x.to_string()));
                cols.push(opt((!ordered).then_some(p.alpha1)));
                cols.push(opt((!ordered).then_some(p.alpha2)));
            }
            _ => cols.extend(std::iter::repeat_n(String::new(), 9)),
        }
        out.push_str(&cols.join(","));
        out.push('\n');
    }
    out
}

/// Inverse of [`region_csv`]. The region-level fields are not stored in the
/// CSV and are taken from the arguments.
pub fn parse_region_csv(
    text: &str,
    schemes: &[Scheme],
    grid_step: f64,
    tie_rho_to_epsilon: bool,
) -> Result<Region, CsvError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == CSV_HEADER => {}
        _ => {
            return Err(CsvError {
                line: 1,
                reason: "missing or unexpected header".into(),
            })
        }
    }
    let mut samples = Vec::new();
    for (i, line) in lines {
        let err = |reason: String| CsvError { line: i + 1, reason };
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 11 {
            return Err(err(format!("expected 11 columns, found {}", cols.len())));
        }
        let num = |k: usize| -> Result<Option<f64>, CsvError> {
            if cols[k].is_empty() {
                return Ok(None);
            }
            cols[k]
                .parse::<f64>()
                .map(Some)
                .map_err(|e| err(format!("column {}: {e}", k + 1)))
        };
        let lambda_2 = num(0)?.ok_or_else(|| err("lambda2 is empty".into()))?;
        let lambda_1_max = num(1)?;
        let (scheme, argmax) = if cols[2].is_empty() {
            (None, None)
        } else {
            let sc: Scheme = cols[2].parse().map_err(err)?;
            let d = Policy::default();
            let ordered = sc.access() == Access::Ordered;
            let need = |k: usize| num(k)?.ok_or_else(|| err(format!("column {} is empty", k + 1)));
            let p = Policy {
                epsilon: if ordered { need(3)? } else { d.epsilon },
                rho: need(4)?,
                p1: need(5)?,
                p2: need(6)?,
                f1: need(7)?,
                f2: need(8)?,
                alpha1: if ordered { d.alpha1 } else { need(9)? },
                alpha2: if ordered { d.alpha2 } else { need(10)? },
                tie_rho_to_epsilon: tie_rho_to_epsilon && ordered,
            };
            (Some(sc), Some(p))
        };
        samples.push(RegionSample {
            lambda_2,
            lambda_1_max,
            argmax,
            scheme,
        });
    }
    Ok(Region {
        schemes: schemes.to_vec(),
        grid_step,
        tie_rho_to_epsilon,
        samples,
    })
}

/// Hash git would give the file as a blob.
pub fn git_blob_sha1(content: &[u8]) -> String {
    let mut h = Sha1::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    format!("{:x}", h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionFile {
    pub name: String,
    pub file: String,
    pub schemes: Vec<Scheme>,
    pub tie_rho_to_epsilon: bool,
}

/// Sidecar describing how a set of region CSVs was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub tool: String,
    pub version: String,
    pub experiment: String,
    pub config_sha1: String,
    pub grid_step: f64,
    pub search: SearchSettings,
    pub stability_margin: f64,
    pub monotone_tolerance: f64,
    pub regions: Vec<RegionFile>,
}

impl Metadata {
    pub fn new(experiment: &str, config_text: &str, grid_step: f64, search: SearchSettings, regions: Vec<RegionFile>) -> Self {
        Metadata {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            experiment: experiment.into(),
            config_sha1: git_blob_sha1(config_text.as_bytes()),
            grid_step,
            search,
            stability_margin: STABILITY_MARGIN,
            monotone_tolerance: MONOTONE_TOL,
            regions,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("metadata serializes");
        s.push('\n');
        s
    }
}
