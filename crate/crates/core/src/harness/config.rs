//! Experiment configuration, read from TOML.
//!
//! ```toml
//! schema_version = 1
//! seed = 2006
//! replicates = 200
//! procedures = ["a", "b", "c"]
//! f30 = ["omitted", "numerator", "denominator"]
//! levels = ["national", "area", "post_stratum"]
//! exclusion_mode = "sci"          # or "recommended"
//! negative_cells = "reject"       # or "clamp_to_zero"
//! strict = false                  # abort on the first estimator failure
//!
//! [population]
//! persons = 50000
//!
//! [capture]
//! pi_census = 0.92                # one value, or one per post-stratum
//! pi_pes = [0.9, 0.9, 0.85, ...]
//!
//! [sample]
//! districts_per_area = 4          # omit with full_frame = true
//! urban_take = 50                 # or "all"
//! ```
//!
//! Every section and field is optional; missing values take the defaults
//! below. Unknown fields are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{F30Placement, NegativeCellPolicy, Procedure};
use crate::groups::GroupLevel;
use crate::matching::{ExclusionMode, MatchErrorModel};
use crate::popsim::{CaptureProbabilities, CensusConfig, PesConfig, PopulationConfig};
use crate::sampling::{SampleDesign, Take};

pub const SCHEMA_VERSION: u32 = 1;

/// A scalar applied to every post-stratum, or one value per post-stratum.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(untagged)]
pub enum PerStratum {
    All(f64),
    Each(Vec<f64>),
}

impl PerStratum {
    fn expand(&self, name: &str, strata: u16) -> Result<Vec<f64>> {
        match self {
            PerStratum::All(v) => Ok(vec![*v; strata as usize]),
            PerStratum::Each(v) if v.len() == strata as usize => Ok(v.clone()),
            PerStratum::Each(v) => Err(Error::Config(format!(
                "capture.{name} has {} values for {strata} post-strata",
                v.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaptureConfig {
    pub pi_census: PerStratum,
    pub pi_pes: PerStratum,
    pub dependence: PerStratum,
    pub heterogeneity: PerStratum,
}

impl Default for CaptureConfig {
    fn default() -> Self {
        Self {
            pi_census: PerStratum::All(0.92),
            pi_pes: PerStratum::All(0.9),
            dependence: PerStratum::All(0.0),
            heterogeneity: PerStratum::All(0.0),
        }
    }
}

impl CaptureConfig {
    pub fn probabilities(&self, strata: u16) -> Result<CaptureProbabilities> {
        let probs = CaptureProbabilities {
            pi_census: self.pi_census.expand("pi_census", strata)?,
            pi_pes: self.pi_pes.expand("pi_pes", strata)?,
            dependence: self.dependence.expand("dependence", strata)?,
            heterogeneity: self.heterogeneity.expand("heterogeneity", strata)?,
        };
        probs.validate(strata)?;
        Ok(probs)
    }
}

/// Households taken per district: a count, or `"all"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(untagged)]
pub enum TakeSpec {
    Count(usize),
    Keyword(AllKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AllKeyword {
    All,
}

impl TakeSpec {
    fn take(self) -> Take {
        match self {
            TakeSpec::Count(n) => Take::Households(n),
            TakeSpec::Keyword(AllKeyword::All) => Take::All,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    /// Every district and every household: the PES covers the whole frame.
    pub full_frame: bool,
    pub districts_per_area: usize,
    pub urban_take: TakeSpec,
    pub rural_take: TakeSpec,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            full_frame: false,
            districts_per_area: 4,
            urban_take: TakeSpec::Count(50),
            rural_take: TakeSpec::Count(100),
        }
    }
}

impl SampleConfig {
    pub fn design(&self, seed: u64) -> SampleDesign {
        if self.full_frame {
            return SampleDesign::full_frame(seed);
        }
        SampleDesign {
            districts_per_cell: Some(self.districts_per_area),
            urban_take: self.urban_take.take(),
            rural_take: self.rural_take.take(),
            seed,
            ..SampleDesign::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub replicates: u64,
    pub procedures: Vec<Procedure>,
    pub f30: Vec<F30Placement>,
    pub levels: Vec<GroupLevel>,
    pub exclusion_mode: ExclusionMode,
    pub negative_cells: NegativeCellPolicy,
    /// Abort on the first estimator failure instead of recording it per cell.
    pub strict: bool,
    pub population: PopulationConfig,
    pub capture: CaptureConfig,
    pub census: CensusConfig,
    pub pes: PesConfig,
    pub sample: SampleConfig,
    pub matching: MatchErrorModel,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 2006,
            replicates: 100,
            procedures: Procedure::ALL.to_vec(),
            f30: F30Placement::ALL.to_vec(),
            levels: GroupLevel::ALL.to_vec(),
            exclusion_mode: ExclusionMode::Sci,
            negative_cells: NegativeCellPolicy::Reject,
            strict: false,
            population: PopulationConfig::default(),
            capture: CaptureConfig::default(),
            census: CensusConfig::default(),
            pes: PesConfig::default(),
            sample: SampleConfig::default(),
            matching: MatchErrorModel::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if self.procedures.is_empty() && self.f30.is_empty() {
            return Err(Error::Config("no estimators selected".into()));
        }
        if self.levels.is_empty() {
            return Err(Error::Config("no grouping levels selected".into()));
        }
        if self.procedures.contains(&Procedure::B) && !self.matching.match_in_movers {
            return Err(Error::Config("procedure b needs matching.match_in_movers = true".into()));
        }
        self.population.validate()?;
        self.capture.probabilities(self.population.post_strata())?;
        self.census.validate()?;
        self.pes.validate()?;
        self.matching.validate()?;
        if !self.sample.full_frame && self.sample.districts_per_area > self.population.districts_per_area as usize {
            return Err(Error::Config(format!(
                "sample.districts_per_area = {} exceeds population.districts_per_area = {}",
                self.sample.districts_per_area, self.population.districts_per_area
            )));
        }
        Ok(())
    }

    pub fn capture_probabilities(&self) -> Result<CaptureProbabilities> {
        self.capture.probabilities(self.population.post_strata())
    }

    /// A world satisfying every dual-system assumption, with no movers and a
    /// census that counts everyone: estimates should equal the truth exactly.
    pub fn perfect_world(persons: usize) -> Self {
        Self {
            population: PopulationConfig {
                persons,
                mover_rate: 0.0,
                birth_rate: 0.0,
                death_rate: 0.0,
                ..PopulationConfig::default()
            },
            capture: CaptureConfig {
                pi_census: PerStratum::All(1.0),
                pi_pes: PerStratum::All(1.0),
                ..CaptureConfig::default()
            },
            census: CensusConfig::perfect(),
            pes: PesConfig::perfect(),
            sample: SampleConfig { full_frame: true, ..SampleConfig::default() },
            ..Self::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::perfect_world(1000);
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn parses_variants_and_takes() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            schema_version = 1
            procedures = ["a", "c"]
            f30 = ["numerator", "in_denominator"]
            exclusion_mode = "recommended"
            [capture]
            pi_pes = [0.8, 0.8, 0.8, 0.8, 0.8, 0.9, 0.9, 0.9, 0.9, 0.9]
            [sample]
            urban_take = "all"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.procedures, [Procedure::A, Procedure::C]);
        assert_eq!(cfg.f30, [F30Placement::InNumerator, F30Placement::InDenominator]);
        assert_eq!(cfg.sample.design(0).urban_take, Take::All);
        assert_eq!(cfg.capture_probabilities().unwrap().pi_pes[5], 0.9);
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            "schema_version = 2",
            "replicates = 0",
            "procedures = [\"d\"]",
            "bogus = 1",
            "[capture]\npi_pes = [0.9, 0.9]",
            "[capture]\npi_census = 1.5",
            "[population]\nmover_rate = 1.0",
        ] {
            assert!(ExperimentConfig::from_toml(text).is_err(), "{text}");
        }
    }
}
