//! Run configuration: TOML with fixed sections, unknown keys rejected.
//!
//! ```toml
//! experiment = "ym"            # or "hym"
//! preset = "flat-gap"          # informational label
//!
//! [geometry]
//! n = 3
//! sizes = [8]                  # one entry means a cubic lattice
//! spacing = 0.125
//!
//! [bundle]
//! rank = 2
//! kind = "complex"             # or "real"
//! twist = "none"               # "abelian" or "clock-shift"
//! fluxes = [[0, 1, 1]]         # (mu, nu, c) with mu < nu
//!
//! [initial]
//! kind = "random"              # zero | random | smooth-random | bump | file | smooth-metric
//! amplitude = 0.005
//! seed = 7
//!
//! [flow]      # FlowConfig
//! [hym]       # HymConfig
//! [monitor]   # MonitorConfig, plus radii_count
//! [output]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowConfig;
use crate::hym::HymConfig;
use crate::lattice::{build_torus, LatticeGeometry, Torus, TwistCocycle};
use crate::lie::ScalarKind;
use crate::monitors::MonitorConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    #[default]
    Ym,
    Hym,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub n: usize,
    pub sizes: Vec<usize>,
    pub spacing: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            n: 3,
            sizes: vec![8],
            spacing: 0.125,
        }
    }
}

impl GeometryConfig {
    pub fn resolved_sizes(&self) -> Vec<usize> {
        if self.sizes.len() == 1 {
            vec![self.sizes[0]; self.n]
        } else {
            self.sizes.clone()
        }
    }

    pub fn build(&self) -> Result<LatticeGeometry> {
        LatticeGeometry::new(self.n, &self.resolved_sizes(), self.spacing)
    }

    /// Same physical box at `side` sites along every axis (cubic boxes only).
    pub fn refined(&self, side: usize) -> Result<Self> {
        let sizes = self.resolved_sizes();
        if sizes.iter().any(|&s| s != sizes[0]) {
            return Err(Error::Config("refinement needs a cubic lattice".into()));
        }
        Ok(Self {
            n: self.n,
            sizes: vec![side],
            spacing: self.spacing * sizes[0] as f64 / side as f64,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TwistKind {
    #[default]
    None,
    Abelian,
    ClockShift,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BundleConfig {
    pub rank: usize,
    pub kind: ScalarKind,
    pub twist: TwistKind,
    pub fluxes: Vec<(usize, usize, i64)>,
}

impl Default for BundleConfig {
    fn default() -> Self {
        Self {
            rank: 2,
            kind: ScalarKind::Complex,
            twist: TwistKind::None,
            fluxes: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialKind {
    Zero,
    /// I.i.d. link values.
    #[default]
    Random,
    /// Few low Fourier modes; the same continuum field at every resolution.
    SmoothRandom,
    Bump,
    File,
    SmoothMetric,
}

/// Initial data. For Yang-Mills runs the connection is the constant-curvature
/// connection of the declared flux (zero without flux) plus the chosen
/// perturbation; for HYM runs `smooth-metric` draws `K_0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialConfig {
    pub kind: InitialKind,
    pub amplitude: f64,
    /// Bump scale (length units).
    pub scale: f64,
    /// Bump centre; the box centre when empty.
    pub center: Vec<f64>,
    pub strength: f64,
    pub seed: u64,
    /// Highest Fourier mode of smooth data.
    pub modes: i32,
    /// Number of Fourier terms of `smooth-random` data.
    pub terms: usize,
    /// Checkpoint holding the connection for `kind = "file"`.
    pub path: Option<PathBuf>,
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self {
            kind: InitialKind::Random,
            amplitude: 0.01,
            scale: 0.25,
            center: Vec::new(),
            strength: 1.0,
            seed: 1,
            modes: 1,
            terms: 6,
            path: None,
        }
    }
}

/// `MonitorConfig` rejects unknown keys for the whole section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonitorSection {
    #[serde(flatten)]
    pub config: MonitorConfig,
    /// Radii `2a, 3a, ...` generated when `radii` is empty.
    pub radii_count: usize,
    /// End the run once the detector fires.
    pub stop_on_concentration: bool,
}

impl Default for MonitorSection {
    fn default() -> Self {
        Self {
            config: MonitorConfig::default(),
            radii_count: 3,
            stop_on_concentration: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub series: String,
    pub summary: String,
    pub checkpoint: String,
    /// Checkpoint every this many monitor rows; 0 writes only the final state.
    pub checkpoint_every: u64,
    /// Also keep each periodic checkpoint as `<checkpoint>.<rows>`.
    pub keep_checkpoints: bool,
    pub threads: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            series: "series.csv".into(),
            summary: "summary.toml".into(),
            checkpoint: "checkpoint.bin".into(),
            checkpoint_every: 0,
            keep_checkpoints: false,
            threads: 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub preset: Option<String>,
    pub geometry: GeometryConfig,
    pub bundle: BundleConfig,
    pub initial: InitialConfig,
    pub flow: FlowConfig,
    pub hym: HymConfig,
    pub monitor: MonitorSection,
    pub output: OutputConfig,
}

// `deny_unknown_fields` does not survive `#[serde(flatten)]`, so the
// monitor table is checked by hand.
fn check_monitor_keys(text: &str) -> Result<()> {
    let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let Some(monitor) = table.get("monitor").and_then(|v| v.as_table()) else {
        return Ok(());
    };
    let known = toml::Table::try_from(MonitorSection::default()).map_err(|e| Error::Config(e.to_string()))?;
    for key in monitor.keys() {
        if key != "sigma1" && !known.contains_key(key) {
            return Err(Error::Config(format!("unknown key `{key}` in [monitor]")));
        }
    }
    Ok(())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        check_monitor_keys(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.geometry.build()?;
        self.flow.validate()?;
        self.hym.validate()?;
        self.monitor_config(&g).validate(&g)?;
        if self.output.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        if self.experiment == Experiment::Hym && self.initial.kind != InitialKind::SmoothMetric {
            return Err(Error::Config("HYM runs start from initial.kind = \"smooth-metric\"".into()));
        }
        if self.experiment == Experiment::Ym && self.initial.kind == InitialKind::SmoothMetric {
            return Err(Error::Config("smooth-metric initial data needs experiment = \"hym\"".into()));
        }
        if self.initial.kind == InitialKind::File && self.initial.path.is_none() {
            return Err(Error::Config("initial.kind = \"file\" needs initial.path".into()));
        }
        Ok(())
    }

    pub fn torus(&self) -> Result<std::sync::Arc<Torus>> {
        let g = self.geometry.build()?;
        let b = &self.bundle;
        let twist = match b.twist {
            TwistKind::None => {
                if !b.fluxes.is_empty() {
                    return Err(Error::Config("fluxes need twist = \"abelian\" or \"clock-shift\"".into()));
                }
                TwistCocycle::untwisted(g.dim(), b.rank, b.kind)
            }
            TwistKind::Abelian => {
                if b.kind != ScalarKind::Complex {
                    return Err(Error::Config("abelian flux needs a complex bundle".into()));
                }
                TwistCocycle::abelian(g.dim(), b.rank, &b.fluxes)
            }
            TwistKind::ClockShift => TwistCocycle::clock_shift(g.dim(), b.rank, &b.fluxes)?,
        };
        build_torus(g, twist)
    }

    pub fn monitor_config(&self, geometry: &LatticeGeometry) -> MonitorConfig {
        let mut m = self.monitor.config.clone();
        if m.radii.is_empty() {
            m.radii = MonitorConfig::default_radii(geometry, self.monitor.radii_count);
        }
        m
    }

    /// Command-line overrides.
    pub fn apply_overrides(&mut self, seed: Option<u64>, cadence: Option<u64>, threads: Option<usize>) {
        if let Some(s) = seed {
            self.initial.seed = s;
        }
        if let Some(c) = cadence {
            self.flow.cadence = c;
            self.hym.cadence = c;
        }
        if let Some(t) = threads {
            self.output.threads = t;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml("[flow]\ndt_inital = 0.1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("dt_inital"), "{msg}");
        assert!(RunConfig::from_toml("colour = 1\n").is_err());
        assert!(RunConfig::from_toml("[monitor]\nwindow = 3\nbogus = 1\n").is_err());
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let cfg = RunConfig::from_toml(
            "[geometry]\nn = 2\nsizes = [16]\nspacing = 0.0625\n[bundle]\nrank = 1\ntwist = \"abelian\"\nfluxes = [[0, 1, 1]]\n[flow]\nt_end = 0.5\n",
        )
        .unwrap();
        assert_eq!(cfg.flow.t_end, 0.5);
        assert_eq!(cfg.flow.cadence, FlowConfig::default().cadence);
        let t = cfg.torus().unwrap();
        assert_eq!(t.twist().chern(2, 0, 1), 1);
        assert_eq!(t.geometry().sizes(), &[16, 16]);
    }

    #[test]
    fn invalid_values_are_reported() {
        assert!(RunConfig::from_toml("[flow]\ndt_min = 0.0\n").is_err());
        assert!(RunConfig::from_toml("[geometry]\nn = 2\nsizes = [4, 4, 4]\nspacing = 0.25\n").is_err());
        assert!(RunConfig::from_toml("experiment = \"hym\"\n").is_err());
        let bad = RunConfig::from_toml("[bundle]\ntwist = \"none\"\nfluxes = [[0, 1, 1]]\n").unwrap();
        assert!(bad.torus().is_err());
    }

    #[test]
    fn refinement_keeps_the_box() {
        let g = GeometryConfig {
            n: 5,
            sizes: vec![8],
            spacing: 0.125,
        };
        let r = g.refined(12).unwrap();
        assert_eq!(r.sizes, vec![12]);
        assert!((r.spacing * 12.0 - 1.0).abs() < 1e-15);
    }
}
