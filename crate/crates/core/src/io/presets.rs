//! Built-in experiments. Each is an ordinary TOML configuration.

use crate::error::{Error, Result};
use crate::io::config::RunConfig;

pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub toml: &'static str,
}

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "flat-gap",
        description: "untwisted T^3 at 8^3, rank 2, small smooth A_0; flows to a flat connection",
        toml: r#"experiment = "ym"
preset = "flat-gap"

[geometry]
n = 3
sizes = [8]
spacing = 0.125

[bundle]
rank = 2
kind = "complex"
twist = "none"

[initial]
kind = "smooth-random"
amplitude = 0.003
modes = 1
terms = 6
seed = 11

[flow]
scheme = "heun"
t_end = 4.0
dt_init = 1e-4
dt_max = 0.05
tolerance = 1e-7
gtol = 1e-10
cadence = 10

[monitor]
gtol = 1e-10
"#,
    },
    Preset {
        name: "abelian-harmonic",
        description: "U(1) line bundle of degree 1 on the unit T^2 at 16^2; flows to the harmonic curvature",
        toml: r#"experiment = "ym"
preset = "abelian-harmonic"

[geometry]
n = 2
sizes = [16]
spacing = 0.0625

[bundle]
rank = 1
kind = "complex"
twist = "abelian"
fluxes = [[0, 1, 1]]

[initial]
kind = "smooth-random"
amplitude = 0.3
modes = 2
terms = 6
seed = 5

[flow]
scheme = "rk4"
t_end = 3.0
dt_init = 1e-4
dt_max = 0.05
tolerance = 1e-8
gtol = 1e-10
cadence = 10

[monitor]
gtol = 1e-10
"#,
    },
    Preset {
        name: "bump-n5",
        description: "instanton-core bump on a small T^5 at 8^5; scale-invariant concentration monitors",
        toml: BUMP_N5,
    },
    Preset {
        name: "hym-conformal",
        description: "Hermitian-Yang-Mills flow of a rank-2 metric on the complex torus at 32^2 after conformal normalisation",
        toml: r#"experiment = "hym"
preset = "hym-conformal"

[geometry]
n = 2
sizes = [32]
spacing = 0.03125

[bundle]
rank = 2
kind = "complex"
twist = "none"

[initial]
kind = "smooth-metric"
amplitude = 0.5
modes = 2
seed = 3

[hym]
t_end = 1.0
dt_init = 1e-4
dt_max = 1e-2
tolerance = 1e-5
cadence = 20
"#,
    },
];

const BUMP_N5: &str = r#"experiment = "ym"
preset = "bump-n5"

# Box of side 2e-5 so that the total energy is below 1e-2. In five
# dimensions the energy scales like the box side while the concentration
# values do not.
[geometry]
n = 5
sizes = [8]
spacing = 2.5e-6

[bundle]
rank = 2
kind = "complex"
twist = "none"

[initial]
kind = "bump"
scale = 5e-6
strength = 1.0
seed = 2

[flow]
scheme = "heun"
t_end = 4e-12
dt_init = 1e-14
dt_min = 1e-24
dt_max = 1e-11
tolerance = 1e-3
cadence = 5

[monitor]
window = 4
radii_count = 2
"#;

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.name).collect()
}

pub fn find_preset(name: &str) -> Result<&'static Preset> {
    PRESETS
        .iter()
        .find(|p| p.name == name)
        .ok_or_else(|| Error::Config(format!("unknown preset {name:?}; available: {}", preset_names().join(", "))))
}

pub fn preset(name: &str) -> Result<RunConfig> {
    RunConfig::from_toml(find_preset(name)?.toml)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_parses_and_builds() {
        for p in PRESETS {
            let cfg = preset(p.name).unwrap();
            assert_eq!(cfg.preset.as_deref(), Some(p.name));
            cfg.torus().unwrap();
        }
        assert!(preset("nope").is_err());
    }
}
