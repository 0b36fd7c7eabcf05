//! Named parameter sets and the JSON model file format.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DensityGrid, GridFn};
use crate::model::ModelParams;
use crate::synthetic::{besov_density, besov_perturbation};

pub const PRESETS: [&str; 4] = ["theta-star", "besov-pair", "rough-vs-smooth", "iid"];

/// Resolution a preset uses when none is given.
pub fn default_resolution(name: &str) -> u32 {
    match name {
        "besov-pair" | "rough-vs-smooth" => 14,
        _ => 6,
    }
}

/// `p = 0.2`, `q = 0.3`, `f₀ = 1`, `f₁ = 1 + h/2`.
pub fn theta_star(resolution: u32) -> ModelParams {
    let h = GridFn::haar_step(resolution);
    let f1 = DensityGrid::try_from(GridFn::constant(resolution, 1.0).lin_comb(1.0, &h, 0.5)).expect("valid density");
    ModelParams::new(0.2, 0.3, DensityGrid::uniform(resolution), f1).expect("valid parameter")
}

/// `f₀` of Besov regularity ½ with minimum 0.6 and `f₁ = f₀ + h/2`.
pub fn besov_pair(resolution: u32) -> Result<ModelParams> {
    let f0 = besov_density(resolution, 0.5, 0.6)?;
    let f1 = DensityGrid::try_from(f0.lin_comb(1.0, &GridFn::haar_step(resolution), 0.5))?;
    ModelParams::new(0.2, 0.3, f0, f1)
}

/// `f₁ = 1` and `f₀` a Besov-½ perturbation of it, with `δ = ε = ζ = 0.15`.
pub fn rough_vs_smooth(resolution: u32) -> Result<ModelParams> {
    let bump = besov_perturbation(resolution, 0.5, 0.15)?;
    let f0 = DensityGrid::try_from(GridFn::constant(resolution, 1.0).lin_comb(1.0, &bump, 1.0))?;
    ModelParams::new(0.15, 0.7, f0, DensityGrid::uniform(resolution))
}

pub fn iid(resolution: u32) -> ModelParams {
    let u = DensityGrid::uniform(resolution);
    ModelParams::new(0.5, 0.5, u.clone(), u).expect("valid parameter")
}

pub fn preset(name: &str, resolution: Option<u32>) -> Result<ModelParams> {
    let res = resolution.unwrap_or_else(|| default_resolution(name));
    if res == 0 {
        return Err(Error::param("resolution", "must be at least 1"));
    }
    match name {
        "theta-star" => Ok(theta_star(res)),
        "besov-pair" => besov_pair(res),
        "rough-vs-smooth" => rough_vs_smooth(res),
        "iid" => Ok(iid(res)),
        other => Err(Error::Config(format!(
            "unknown model preset `{other}` (expected one of {})",
            PRESETS.join(", ")
        ))),
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridJson {
    #[serde(rename = "D")]
    d: u32,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelJson {
    p: f64,
    q: f64,
    f0: GridJson,
    f1: GridJson,
}

/// `{"p": .., "q": .., "f0": {"D": .., "values": [..]}, "f1": {..}}`.
pub fn model_to_json(theta: &ModelParams) -> String {
    let grid = |f: &DensityGrid| GridJson {
        d: f.resolution(),
        values: f.values().to_vec(),
    };
    serde_json::to_string(&ModelJson {
        p: theta.p(),
        q: theta.q(),
        f0: grid(theta.f0()),
        f1: grid(theta.f1()),
    })
    .expect("model serializes")
}

pub fn model_from_json(text: &str) -> Result<ModelParams> {
    let raw: ModelJson = serde_json::from_str(text).map_err(|e| Error::Record(e.to_string()))?;
    let f0 = DensityGrid::new(raw.f0.d, raw.f0.values)?;
    let f1 = DensityGrid::new(raw.f1.d, raw.f1.values)?;
    ModelParams::new(raw.p, raw.q, f0, f1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{reparametrize, spectral_gap};

    #[test]
    fn presets_build() {
        for name in PRESETS {
            let theta = preset(name, Some(8)).unwrap();
            assert_eq!(theta.resolution(), 8);
        }
        assert!(preset("nope", None).is_err());
    }

    #[test]
    fn rough_preset_distances() {
        let theta = rough_vs_smooth(12).unwrap();
        let (delta, eps, zeta) = theta.frontier_distances();
        assert!((delta - 0.15).abs() < 1e-15);
        assert!((eps - 0.15).abs() < 1e-12);
        assert!((zeta - 0.15).abs() < 1e-12);
        assert!((spectral_gap(&theta) - 0.85).abs() < 1e-12);
    }

    #[test]
    fn besov_pair_direction_is_haar_step() {
        let theta = besov_pair(10).unwrap();
        let psi2 = reparametrize(&theta).psi2.unwrap();
        assert!(psi2.max_abs_diff(&GridFn::haar_step(10).scaled(-1.0)) < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let theta = besov_pair(6).unwrap();
        let back = model_from_json(&model_to_json(&theta)).unwrap();
        assert_eq!(back, theta);
        assert!(model_from_json("{\"p\": 0.1}").is_err());
    }
}
