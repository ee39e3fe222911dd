//! Pipeline configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::align::AlignParams;
use crate::error::{Error, Result};
use crate::mesh::DeformParams;
use crate::profile::DetectParams;
use crate::register::PatternIntensityParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub pi_r: usize,
    pub pi_delta: f64,
    pub band_sa: usize,
    pub band_la: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub mu: f64,
    pub d_cutoff: f64,
    pub n_theta: usize,
    /// Registration search radius, pixels.
    pub search_radius: u32,
    /// Alignment search radius, pixels.
    pub align_radius: u32,
    pub align_passes: usize,
    pub align_la_pass: bool,
    pub skip_align: bool,
    pub n_ring_vertices: usize,
    pub n_interp_rings: usize,
    /// Rays per SA slice gap on LA images.
    pub n_interp: usize,
    pub icm_max_sweeps: usize,
    pub max_iters: usize,
    pub min_move: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            pi_r: 5,
            pi_delta: 0.1,
            band_sa: 7,
            band_la: 9,
            lambda: 0.005,
            gamma: 0.7,
            alpha: 0.3,
            beta: 0.3,
            mu: 0.1,
            d_cutoff: 3.0,
            n_theta: 79,
            search_radius: 15,
            align_radius: 10,
            align_passes: 3,
            align_la_pass: false,
            skip_align: false,
            n_ring_vertices: 80,
            n_interp_rings: 3,
            n_interp: 4,
            icm_max_sweeps: 50,
            max_iters: 30,
            min_move: 0.1,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.pi().validate()?;
        self.deform().validate()?;
        for (name, band) in [("band_sa", self.band_sa), ("band_la", self.band_la)] {
            if band == 0 || band % 2 == 0 {
                return Err(Error::validation(format!("{name} must be odd, got {band}")));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::validation("lambda must be non-negative"));
        }
        if self.n_theta < 3 {
            return Err(Error::validation("n_theta must be at least 3"));
        }
        if self.n_ring_vertices < 4 || self.n_ring_vertices % 2 != 0 {
            return Err(Error::validation("n_ring_vertices must be even and at least 4"));
        }
        if self.n_interp == 0 {
            return Err(Error::validation("n_interp must be at least 1"));
        }
        if self.icm_max_sweeps == 0 {
            return Err(Error::validation("icm_max_sweeps must be at least 1"));
        }
        Ok(())
    }

    pub fn pi(&self) -> PatternIntensityParams {
        PatternIntensityParams {
            r: self.pi_r,
            delta: self.pi_delta,
        }
    }

    pub fn align(&self) -> AlignParams {
        AlignParams {
            search_radius: self.align_radius,
            max_passes: self.align_passes,
            la_pass: self.align_la_pass,
        }
    }

    pub fn detect_sa(&self) -> DetectParams {
        DetectParams {
            band: self.band_sa,
            lambda: self.lambda,
            max_sweeps: self.icm_max_sweeps,
        }
    }

    pub fn detect_la(&self) -> DetectParams {
        DetectParams {
            band: self.band_la,
            ..self.detect_sa()
        }
    }

    pub fn deform(&self) -> DeformParams {
        DeformParams {
            gamma: self.gamma,
            alpha: self.alpha,
            beta: self.beta,
            mu: self.mu,
            d_cutoff: self.d_cutoff,
            max_iters: self.max_iters,
            min_move: self.min_move,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::validation(format!("config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_are_valid() {
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c = PipelineConfig::from_toml("lambda = 0.01\nband_sa = 9\n").unwrap();
        assert_eq!(c.lambda, 0.01);
        assert_eq!(c.band_sa, 9);
        assert_eq!(c.n_theta, 79);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(PipelineConfig::from_toml("band_sa = 8").is_err());
        assert!(PipelineConfig::from_toml("gamma = 0.0").is_err());
        assert!(PipelineConfig::from_toml("n_ring_vertices = 81").is_err());
        assert!(PipelineConfig::from_toml("bogus = 1").is_err());
    }

    proptest! {
        #[test]
        fn toml_round_trip(lambda in 0.0..1.0f64, delta in 0.001..10.0f64, band in 0usize..6, gamma in 0.01..1.0f64, n in 2usize..100) {
            let c = PipelineConfig {
                lambda,
                pi_delta: delta,
                band_la: 2 * band + 1,
                gamma,
                n_ring_vertices: 2 * n,
                ..Default::default()
            };
            prop_assert_eq!(PipelineConfig::from_toml(&c.to_toml()).unwrap(), c);
        }
    }
}
