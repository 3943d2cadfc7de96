//! Run configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::boundary::{BCKind, BcSpec, BcTag};
use crate::error::{Error, Result};
use crate::mesh::{self, MeshGeneratorSpec, SimplicialComplex};
use crate::propagator::{ModeCount, TimeGrid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeshSource {
    File { file: PathBuf },
    Generator(MeshGeneratorSpec),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Modes {
    Count(usize),
    Named(ModesKeyword),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModesKeyword {
    All,
}

impl Default for Modes {
    fn default() -> Self {
        Modes::Named(ModesKeyword::All)
    }
}

impl Modes {
    pub fn count(self) -> ModeCount {
        match self {
            Modes::Named(ModesKeyword::All) => ModeCount::All,
            Modes::Count(m) => ModeCount::First(m),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    #[serde(default)]
    pub t0: f64,
    /// omitted: 1/√λ_max of the operator in use
    #[serde(default)]
    pub dt: Option<f64>,
    pub samples: usize,
}

fn default_budget() -> usize {
    12
}
fn default_pairs() -> usize {
    5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: String,
    #[serde(default)]
    pub seed: u64,
    pub k: usize,
    #[serde(default)]
    pub modes: Modes,
    #[serde(default)]
    pub refine: usize,
    /// generator budget for the radical computation
    #[serde(default = "default_budget")]
    pub budget: usize,
    /// random pairs per randomized check
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub mesh: MeshSource,
    pub bc: BcSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<TimeSpec>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.check_static()?;
        Ok(cfg)
    }

    /// Reads a config; relative mesh paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::parse(&text)?;
        if let MeshSource::File { file } = &mut cfg.mesh {
            if file.is_relative() {
                if let Some(dir) = path.parent() {
                    *file = dir.join(&*file);
                }
            }
        }
        Ok(cfg)
    }

    fn check_static(&self) -> Result<()> {
        if self.experiment.is_empty() || self.experiment.contains(['/', '\\']) || self.experiment.starts_with('.') {
            return Err(Error::Precondition(format!("experiment name '{}' is not a plain directory name", self.experiment)));
        }
        if let MeshSource::Generator(g) = &self.mesh {
            g.validate()?;
        }
        if let Some(t) = &self.time {
            if t.samples < 3 {
                return Err(Error::Precondition("time.samples must be at least 3".into()));
            }
            if let Some(dt) = t.dt {
                if !(dt > 0.0) {
                    return Err(Error::Precondition("time.dt must be positive".into()));
                }
            }
        }
        if self.modes == Modes::Count(0) {
            return Err(Error::Precondition("modes must be positive".into()));
        }
        Ok(())
    }

    /// Mesh after `refine` uniform refinements, with degree checks.
    pub fn build_mesh(&self) -> Result<SimplicialComplex> {
        let c = match &self.mesh {
            MeshSource::File { file } => mesh::load(file)?,
            MeshSource::Generator(g) => mesh::generate(g)?,
        };
        let c = c.refine_times(self.refine)?;
        let hi = c.dim() + 1;
        if self.k > hi {
            return Err(Error::DegreeOutOfRange { degree: self.k, lo: 0, hi });
        }
        if matches!(self.bc.kind, BcTag::MaxwellNormal | BcTag::MaxwellTangential) && !(1..=c.dim()).contains(&self.k) {
            return Err(Error::DegreeOutOfRange { degree: self.k, lo: 1, hi: c.dim() });
        }
        Ok(c)
    }

    pub fn resolve_bc(&self, c: &SimplicialComplex) -> Result<BCKind> {
        BCKind::resolve(&self.bc, c)
    }

    /// Time grid from the config, or a default resolving λ_max with `samples` points.
    pub fn grid(&self, lambda_max: f64, default_samples: usize) -> Result<TimeGrid> {
        let fallback = if lambda_max > 0.0 { 1.0 / lambda_max.sqrt() } else { 0.1 };
        match &self.time {
            Some(t) => TimeGrid::new(t.t0, t.dt.unwrap_or(fallback), t.samples),
            None => TimeGrid::new(0.0, fallback, default_samples),
        }
    }

    /// Hex sha256 of the canonical JSON form of the effective config.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canon.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ANNULUS: &str = r#"
experiment = "annulus"
seed = 3
k = 1
[mesh]
family = "annulus"
inner_radius = 1.0
outer_radius = 2.0
resolution = 2
[bc]
kind = "maxwell_normal"
"#;

    #[test]
    fn parses_generator_and_defaults() {
        let c = RunConfig::parse(ANNULUS).unwrap();
        assert_eq!(c.modes, Modes::Named(ModesKeyword::All));
        assert_eq!(c.budget, 12);
        assert!(matches!(c.mesh, MeshSource::Generator(MeshGeneratorSpec::Annulus { resolution: 2, .. })));
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn modes_accepts_integer() {
        let text = ANNULUS.replace("k = 1", "k = 1\nmodes = 7");
        assert_eq!(RunConfig::parse(&text).unwrap().modes.count(), ModeCount::First(7));
    }

    #[test]
    fn file_source_and_errors() {
        let text = ANNULUS.replace("family = \"annulus\"\ninner_radius = 1.0\nouter_radius = 2.0\nresolution = 2", "file = \"m.json\"");
        assert!(matches!(RunConfig::parse(&text).unwrap().mesh, MeshSource::File { .. }));
        assert!(RunConfig::parse("experiment = 1").is_err());
        let bad = ANNULUS.replace("inner_radius = 1.0", "inner_radius = 3.0");
        assert!(matches!(RunConfig::parse(&bad), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn hash_changes_with_seed() {
        let a = RunConfig::parse(ANNULUS).unwrap();
        let mut b = a.clone();
        b.seed = 4;
        assert_ne!(a.hash(), b.hash());
    }
}
