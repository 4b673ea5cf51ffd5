//! Monte Carlo volume of a verified region, relative to the domain of
//! attraction estimated by forward simulation.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::system::DynamicalSystem;
use crate::zubovdata::{sample_uniform, simulate_all, Classification, IntegrationOptions, Simulator};

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("no sample converged in simulation; the reference volume is zero")]
    DegenerateReference,
    #[error("cache {path}: {message}")]
    Cache { path: PathBuf, message: String },
}

/// Sample points of the domain and their simulated fate. Integration
/// failures count as undetermined.
#[derive(Debug, Clone, PartialEq)]
pub struct DoaReference {
    pub points: Vec<Vec<f64>>,
    pub classes: Vec<Classification>,
    pub seed: u64,
}

impl DoaReference {
    pub fn converged(&self, k: usize) -> bool {
        self.classes[k] == Classification::Converged
    }

    pub fn converged_count(&self) -> usize {
        self.count(Classification::Converged)
    }

    pub fn count(&self, c: Classification) -> usize {
        self.classes.iter().filter(|v| **v == c).count()
    }
}

/// Which set the region volume is divided by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    SimulatedDoa,
    Domain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeEstimate {
    pub reference: Reference,
    pub fraction: f64,
    /// 95% normal-approximation half-width of `fraction`.
    pub half_width: f64,
    pub region_count: usize,
    pub reference_count: usize,
    /// Region samples that simulation did not classify as converging.
    pub region_outside_doa: usize,
}

/// Simulates `n_mc` uniform samples of the domain.
pub fn simulate_doa(sys: &DynamicalSystem, n_mc: usize, seed: u64, options: IntegrationOptions) -> DoaReference {
    let points = sample_uniform(&sys.domain, n_mc, seed);
    let sim = Simulator::new(sys, options);
    let classes = simulate_all(&sim, &points)
        .into_iter()
        .map(|r| r.map_or(Classification::Undetermined, |t| t.classification))
        .collect();
    DoaReference { points, classes, seed }
}

fn cache_key(sys: &DynamicalSystem, n_mc: usize, seed: u64, options: &IntegrationOptions) -> String {
    let mut h = Sha256::new();
    let names = sys.vars();
    for e in &sys.f.exprs {
        h.update(e.display(names).to_string().as_bytes());
        h.update(b";");
    }
    for i in &sys.domain.0 {
        h.update(i.lo.to_le_bytes());
        h.update(i.hi.to_le_bytes());
    }
    h.update((n_mc as u64).to_le_bytes());
    h.update(seed.to_le_bytes());
    h.update(serde_json::to_string(options).unwrap_or_default().as_bytes());
    let digest = h.finalize();
    digest[..8].iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// [`simulate_doa`] backed by a file cache in `dir`. Points are regenerated
/// from the seed; the cache stores one character (`c`, `d`, `u`) per sample.
pub fn cached_doa(
    sys: &DynamicalSystem,
    n_mc: usize,
    seed: u64,
    options: IntegrationOptions,
    dir: &Path,
) -> Result<DoaReference, VolumeError> {
    let path = dir.join(format!("doa-{}-{}.txt", sys.name, cache_key(sys, n_mc, seed, &options)));
    let cache_err = |message: String| VolumeError::Cache {
        path: path.clone(),
        message,
    };
    if let Ok(text) = std::fs::read_to_string(&path) {
        let flags = text.trim();
        let classes: Option<Vec<Classification>> = flags
            .bytes()
            .map(|b| match b {
                b'c' => Some(Classification::Converged),
                b'd' => Some(Classification::Diverged),
                b'u' => Some(Classification::Undetermined),
                _ => None,
            })
            .collect();
        match classes {
            Some(classes) if classes.len() == n_mc => {
                return Ok(DoaReference {
                    points: sample_uniform(&sys.domain, n_mc, seed),
                    classes,
                    seed,
                })
            }
            _ => log::warn!("ignoring malformed cache {}", path.display()),
        }
    }
    let r = simulate_doa(sys, n_mc, seed, options);
    let flags: Vec<u8> = r
        .classes
        .iter()
        .map(|c| match c {
            Classification::Converged => b'c',
            Classification::Diverged => b'd',
            Classification::Undetermined => b'u',
        })
        .collect();
    std::fs::create_dir_all(dir).map_err(|e| cache_err(e.to_string()))?;
    super::write_atomic(&path, &flags).map_err(|e| cache_err(e.to_string()))?;
    Ok(r)
}

/// Fraction of the reference set covered by `region`.
pub fn estimate_volume(
    reference: &DoaReference,
    region: impl Fn(&[f64]) -> bool + Sync,
    kind: Reference,
) -> Result<VolumeEstimate, VolumeError> {
    let inside: Vec<bool> = reference.points.par_iter().map(|x| region(x)).collect();
    let region_count = inside.iter().filter(|v| **v).count();
    let region_outside_doa = inside
        .iter()
        .enumerate()
        .filter(|(k, r)| **r && !reference.converged(*k))
        .count();
    let reference_count = match kind {
        Reference::SimulatedDoa => reference.converged_count(),
        Reference::Domain => reference.points.len(),
    };
    if reference_count == 0 {
        return Err(VolumeError::DegenerateReference);
    }
    let n = reference_count as f64;
    let fraction = region_count as f64 / n;
    let p = fraction.min(1.0);
    Ok(VolumeEstimate {
        reference: kind,
        fraction,
        half_width: 1.96 * (p * (1.0 - p) / n).sqrt(),
        region_count,
        reference_count,
        region_outside_doa,
    })
}
