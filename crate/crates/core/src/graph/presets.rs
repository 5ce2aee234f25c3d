//! Named parameter presets that size a policy for a given horizon.
//!
//! The asymptotic settings are kept as exponents of `T`; the constants in front
//! (group counts, growth ratios, scale factors) are free knobs so the presets
//! stay feasible at desk-scale horizons. Logarithms are natural, floored at 1.

use serde::{Deserialize, Serialize};

use super::{build_l_level, build_three_level, build_two_level, InfoGraph, LevelSpec};
use crate::error::{Error, Result};

pub const PAPER_2LEVEL: &str = "paper-2level";
pub const PAPER_3LEVEL: &str = "paper-3level";
pub const PAPER_LLEVEL_THM: &str = "paper-Llevel-thm";
pub const PAPER_LLEVEL_COR: &str = "paper-Llevel-cor";

pub const PRESET_NAMES: [&str; 4] = [
    PAPER_2LEVEL,
    PAPER_3LEVEL,
    PAPER_LLEVEL_THM,
    PAPER_LLEVEL_COR,
];

/// Default groups-per-axis for the multi-level presets.
pub const DEFAULT_SIGMA: u64 = 4;

/// A named preset plus its optional knobs. Unset knobs take the preset default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PresetParams {
    pub name: String,
    /// Groups per axis (three-level: number of groups per level).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<u64>,
    /// Multiplier on the first-level size formula.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t1_scale: Option<f64>,
    /// Multiplier on the second-level size formula (three-level only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t2_scale: Option<f64>,
    /// Number of levels (L-level presets; the corollary preset derives it when absent).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<u32>,
    /// Per-level growth ratio `T_l / T_{l-1}` (corollary preset; default `sigma^4`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth: Option<f64>,
    /// Paths per first-level group (corollary preset; default `growth`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t1: Option<u64>,
    /// Γ-group size multiplier (default `sigma - 1`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_factor: Option<u64>,
    /// Full-disclosure path length; callers fall back to their own default when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path_len: Option<u64>,
}

impl PresetParams {
    pub fn named(name: &str) -> Self {
        Self {
            name: name.to_string(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !PRESET_NAMES.contains(&self.name.as_str()) {
            return Err(Error::config(format!(
                "unknown preset `{}` (expected one of {})",
                self.name,
                PRESET_NAMES.join(", ")
            )));
        }
        if self.sigma == Some(0) {
            return Err(Error::config("sigma must be at least 1"));
        }
        for (what, x) in [("t1_scale", self.t1_scale), ("t2_scale", self.t2_scale)] {
            if let Some(x) = x {
                if !(x.is_finite() && x > 0.0) {
                    return Err(Error::config(format!("{what} must be positive")));
                }
            }
        }
        if let Some(g) = self.growth {
            if !(g.is_finite() && g > 1.0) {
                return Err(Error::config("growth must exceed 1"));
            }
        }
        Ok(())
    }

    fn sigma(&self) -> u64 {
        self.sigma.unwrap_or(DEFAULT_SIGMA)
    }

    /// Builds the graph for horizon `t` with full-disclosure paths of `path_len` rounds.
    pub fn build(&self, horizon: u64, path_len: u64) -> Result<InfoGraph> {
        self.validate()?;
        match self.name.as_str() {
            PAPER_2LEVEL => {
                let t1 = two_level_t1(horizon, path_len, self.t1_scale.unwrap_or(1.0));
                build_two_level(horizon, t1, path_len)
            }
            PAPER_3LEVEL => {
                let (t1, t2) = three_level_sizes(
                    horizon,
                    self.t1_scale.unwrap_or(1.0),
                    self.t2_scale.unwrap_or(1.0),
                );
                build_three_level(horizon, t1, t2, self.sigma(), path_len)
            }
            PAPER_LLEVEL_THM => build_l_level(&self.theorem_spec(horizon, path_len)?, horizon),
            PAPER_LLEVEL_COR => build_l_level(&self.corollary_spec(horizon, path_len)?, horizon),
            _ => unreachable!("validated above"),
        }
    }

    /// Level sizes for the fixed-L theorem setting:
    /// `T_l = T^{(2^L - 2^{L-l}) / (2^L - 1)} / sigma^3` for `l < L`, top level filled with the rest.
    pub fn theorem_spec(&self, horizon: u64, path_len: u64) -> Result<LevelSpec> {
        let levels = self.levels.unwrap_or(4);
        if !(2..=30).contains(&levels) {
            return Err(Error::config("levels must be in [2, 30]"));
        }
        let sigma = self.sigma();
        let s3 = (sigma as f64).powi(3);
        let denom = (1u64 << levels) as f64 - 1.0;
        let mut sizes: Vec<u64> = (1..levels)
            .map(|l| {
                let num = (1u64 << levels) as f64 - (1u64 << (levels - l)) as f64;
                let scale = if l == 1 {
                    self.t1_scale.unwrap_or(1.0)
                } else {
                    1.0
                };
                let raw = scale * (horizon as f64).powf(num / denom) / s3;
                (raw.floor() as u64).max(1)
            })
            .collect();
        sizes.push(1);
        fill_top(sigma, sizes, path_len, self.gamma_factor, levels, horizon)
    }

    /// Level sizes for the geometric corollary setting: `T_l = t1 * growth^{l-1}`,
    /// `L = floor(ln T / ln growth)` reduced until the lower levels fit, top level filled.
    pub fn corollary_spec(&self, horizon: u64, path_len: u64) -> Result<LevelSpec> {
        let sigma = self.sigma();
        let growth = self.growth.unwrap_or((sigma as f64).powi(4));
        let t1 = self.t1.unwrap_or(growth.round() as u64).max(1);
        let size = |l: u32| -> u64 { (t1 as f64 * growth.powi(l as i32 - 1)).round() as u64 };
        let mut levels = match self.levels {
            Some(l) => l,
            None => ((horizon as f64).ln() / growth.ln()).floor().max(2.0) as u32,
        };
        if levels < 2 {
            return Err(Error::config("levels must be at least 2"));
        }
        loop {
            let mut sizes: Vec<u64> = (1..levels).map(size).collect();
            sizes.push(1);
            match fill_top(sigma, sizes, path_len, self.gamma_factor, levels, horizon) {
                Ok(spec) => return Ok(spec),
                Err(e) if self.levels.is_some() || levels == 2 => return Err(e),
                Err(_) => levels -= 1,
            }
        }
    }
}

fn ln_floor1(t: u64) -> f64 {
    (t as f64).ln().max(1.0)
}

/// `ceil(scale * T^{2/3} ln(T)^{1/3})`, capped so the paths fit.
pub fn two_level_t1(horizon: u64, path_len: u64, scale: f64) -> u64 {
    let t = horizon as f64;
    let raw = (scale * t.powf(2.0 / 3.0) * ln_floor1(horizon).powf(1.0 / 3.0)).ceil() as u64;
    raw.clamp(1, (horizon / path_len.max(1)).max(1))
}

/// `(ceil(T^{4/7} ln^{-1/7} T), ceil(T^{6/7} ln^{-5/7} T))`, each scaled.
pub fn three_level_sizes(horizon: u64, t1_scale: f64, t2_scale: f64) -> (u64, u64) {
    let t = horizon as f64;
    let ln = ln_floor1(horizon);
    let t1 = (t1_scale * t.powf(4.0 / 7.0) * ln.powf(-1.0 / 7.0)).ceil() as u64;
    let t2 = (t2_scale * t.powf(6.0 / 7.0) * ln.powf(-5.0 / 7.0)).ceil() as u64;
    (t1.max(1), t2.max(1))
}

/// Sets the top-level group size from the rounds left after the lower levels.
fn fill_top(
    sigma: u64,
    mut sizes: Vec<u64>,
    path_len: u64,
    gamma_factor: Option<u64>,
    levels: u32,
    horizon: u64,
) -> Result<LevelSpec> {
    let mut spec = LevelSpec {
        num_levels: levels,
        sigma,
        group_sizes: sizes.clone(),
        path_len,
        gamma_factor,
    };
    let lower: u64 = spec.level_rounds()?[..levels as usize - 1].iter().sum();
    let per_top = sigma * sigma * (1 + spec.gamma());
    if lower + per_top > horizon {
        return Err(Error::config(format!(
            "{levels}-level preset needs more than {} rounds but T = {horizon}",
            lower + per_top - 1
        )));
    }
    *sizes.last_mut().unwrap() = (horizon - lower) / per_top;
    spec.group_sizes = sizes;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::validate_transitive;

    #[test]
    fn two_level_t1_formula() {
        // ceil(1024^{2/3} * ln(1024)^{1/3})
        let expect = (1024f64.powf(2.0 / 3.0) * 1024f64.ln().cbrt()).ceil() as u64;
        assert_eq!(two_level_t1(1024, 2, 1.0), expect);
        assert_eq!(two_level_t1(1, 2, 1.0), 1);
        let g = PresetParams::named(PAPER_2LEVEL).build(1024, 2).unwrap();
        assert!(validate_transitive(&g).is_empty());
    }

    #[test]
    fn three_level_fits_desk_grid() {
        for k in 10..=16 {
            let t = 1u64 << k;
            let g = PresetParams::named(PAPER_3LEVEL).build(t, 2).unwrap();
            assert_eq!(g.horizon(), t);
            assert_eq!(g.num_levels(), 3);
        }
    }

    #[test]
    fn theorem_sizes_grow() {
        let p = PresetParams {
            levels: Some(4),
            ..PresetParams::named(PAPER_LLEVEL_THM)
        };
        let spec = p.theorem_spec(1 << 16, 2).unwrap();
        assert_eq!(spec.num_levels, 4);
        assert!(spec.group_sizes[1] > spec.group_sizes[0]);
        assert!(spec.group_sizes[2] > spec.group_sizes[1]);
        assert!(spec.implied_total().unwrap() <= 1 << 16);
    }

    #[test]
    fn corollary_literal_and_scaled() {
        // literal growth sigma^4 = 256 does not fit a 1024-round horizon
        assert!(PresetParams::named(PAPER_LLEVEL_COR)
            .build(1024, 2)
            .is_err());
        let p = PresetParams {
            growth: Some(2.0),
            t1: Some(1),
            ..PresetParams::named(PAPER_LLEVEL_COR)
        };
        let spec = p.corollary_spec(1 << 14, 2).unwrap();
        assert!(spec.num_levels >= 3);
        for l in 1..spec.num_levels as usize - 1 {
            assert_eq!(spec.group_sizes[l], 2 * spec.group_sizes[l - 1]);
        }
        assert!(spec.implied_total().unwrap() <= 1 << 14);
    }

    #[test]
    fn unknown_preset_rejected() {
        assert!(PresetParams::named("nope").build(100, 2).is_err());
    }
}
