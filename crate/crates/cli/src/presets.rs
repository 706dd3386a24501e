//! Built-in scenarios reproducing the simulation studies.
//!
//! Each preset expands to one or more named runs. A run is an ordinary
//! scenario, so the emitted `config.json` can be fed back to `run`.

use crate::config::{
    BandClass, ClassConfig, ConstraintClass, ConstraintConfig, GridParams, NominalClass, Profile, Scenario,
    VerifyOptions, Which, SCHEMA_VERSION,
};

pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
}

pub const PRESETS: [Preset; 7] = [
    Preset {
        name: "tv_fig1",
        description: "total variation, N(-1,1) vs N(1,1), eps0 = eps1 in {0.1, 0.08875}",
    },
    Preset {
        name: "contamination_fig1",
        description: "lower contamination, N(-1,1) vs N(1,1), eps0 = eps1 = 0.1",
    },
    Preset {
        name: "band_fig9",
        description: "band model, lower 0.8 N(+-1,4), upper (1+eps) N(+-1,4), eps in {0.2, 0.5, 1.5}",
    },
    Preset {
        name: "band_fig10",
        description: "band model as band_fig9 with eps in {0.2, 0.5, 1.5, 19}",
    },
    Preset {
        name: "band_fig88",
        description: "band model with alternative upper bound 1.5 N(1,9), degenerate Type B",
    },
    Preset {
        name: "moment_fig19",
        description: "moment classes, E0[Y] in [-2,-0.5], E0[Y^2] in [0,2], E1[Y] in [0.5,2], E1[Y^2] in [2,4]",
    },
    Preset {
        name: "ppoint_fig21",
        description: "p-point classes, G0[-5,3) <= 0.3, G1[0,3) >= 0.8",
    },
];

/// A named run of a preset.
pub struct PresetRun {
    pub run: String,
    pub scenario: Scenario,
}

fn gaussian(mean: f64, variance: f64) -> Profile {
    Profile::Gaussian {
        mean,
        variance,
        scale: 1.0,
    }
}

fn scaled(scale: f64, mean: f64, variance: f64) -> Profile {
    Profile::Gaussian { mean, variance, scale }
}

fn scenario(name: String, grid: Option<GridParams>, class: ClassConfig) -> Scenario {
    Scenario {
        schema_version: SCHEMA_VERSION,
        name,
        grid,
        seed: 20_240_601,
        class,
        verify: Some(VerifyOptions::default()),
        output_dir: None,
    }
}

fn standard_grid() -> Option<GridParams> {
    Some(GridParams {
        x_min: -12.0,
        x_max: 12.0,
        n: 2001,
    })
}

fn convex_grid() -> Option<GridParams> {
    Some(GridParams {
        x_min: -6.0,
        x_max: 6.0,
        n: 201,
    })
}

fn unit_gaussians(eps: f64) -> NominalClass {
    NominalClass {
        nominal0: gaussian(-1.0, 1.0),
        nominal1: gaussian(1.0, 1.0),
        eps0: eps,
        eps1: eps,
    }
}

fn band(upper0: f64, upper1: (f64, f64)) -> ClassConfig {
    ClassConfig::Band(BandClass {
        g0_lower: scaled(0.8, -1.0, 4.0),
        g0_upper: scaled(upper0, -1.0, 4.0),
        g1_lower: scaled(0.8, 1.0, 4.0),
        g1_upper: scaled(upper1.0, 1.0, upper1.1),
        nominal0: Some(gaussian(-1.0, 4.0)),
        nominal1: Some(gaussian(1.0, 4.0)),
    })
}

fn band_runs(preset: &str, eps: &[f64]) -> Vec<PresetRun> {
    eps.iter()
        .map(|&e| {
            let run = format!("eps_{e}");
            PresetRun {
                scenario: scenario(format!("{preset}_{run}"), standard_grid(), band(1.0 + e, (1.0 + e, 4.0))),
                run,
            }
        })
        .collect()
}

fn constraint_class(constraints: Vec<ConstraintConfig>) -> ConstraintClass {
    ConstraintClass {
        constraints,
        nominal0: None,
        nominal1: None,
        solver: None,
    }
}

fn moment(hypothesis: Which, power: u32, lower: f64, upper: f64) -> ConstraintConfig {
    ConstraintConfig::Moment {
        hypothesis,
        power,
        lower: Some(lower),
        upper: Some(upper),
    }
}

/// Expands a preset into its runs, or `None` for an unknown name.
pub fn preset_runs(name: &str) -> Option<Vec<PresetRun>> {
    let single = |class: ClassConfig, grid: Option<GridParams>| {
        vec![PresetRun {
            run: "default".into(),
            scenario: scenario(name.to_string(), grid, class),
        }]
    };
    let runs = match name {
        "tv_fig1" => [0.1, 0.08875]
            .iter()
            .map(|&e| {
                let run = format!("eps_{e}");
                PresetRun {
                    scenario: scenario(format!("{name}_{run}"), standard_grid(), ClassConfig::Tv(unit_gaussians(e))),
                    run,
                }
            })
            .collect(),
        "contamination_fig1" => single(ClassConfig::LowerContamination(unit_gaussians(0.1)), standard_grid()),
        "band_fig9" => band_runs(name, &[0.2, 0.5, 1.5]),
        "band_fig10" => band_runs(name, &[0.2, 0.5, 1.5, 19.0]),
        "band_fig88" => single(band(1.5, (1.5, 9.0)), standard_grid()),
        "moment_fig19" => single(
            ClassConfig::Moment(constraint_class(vec![
                moment(Which::H0, 1, -2.0, -0.5),
                moment(Which::H0, 2, 0.0, 2.0),
                moment(Which::H1, 1, 0.5, 2.0),
                moment(Which::H1, 2, 2.0, 4.0),
            ])),
            convex_grid(),
        ),
        "ppoint_fig21" => single(
            ClassConfig::Ppoint(constraint_class(vec![
                ConstraintConfig::Probability {
                    hypothesis: Which::H0,
                    from: -5.0,
                    to: 3.0,
                    lower: None,
                    upper: Some(0.3),
                },
                ConstraintConfig::Probability {
                    hypothesis: Which::H1,
                    from: 0.0,
                    to: 3.0,
                    lower: Some(0.8),
                    upper: None,
                },
            ])),
            convex_grid(),
        ),
        _ => return None,
    };
    Some(runs)
}
