//! Angular sampling grids with quadrature weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::gauss_legendre;

/// Power angular spectrum support over which patterns are sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PasKind {
    /// Ring at theta = pi/2 with uniform azimuth weights (support 2*pi sr).
    Uniform2dAzimuth,
    /// Full sphere (support 4*pi sr).
    Uniform3dSphere,
}

/// Discrete set of spatial angles with quadrature weights.
///
/// Pattern matrices carry one row per (angle, polarization), so discrete
/// inner products with the weights folded in approximate surface integrals
/// over the PAS support. The per-angle weights sum to `support / polarizations`
/// so that the total over all rows equals the support measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleGrid {
    /// (theta, phi) in radians, theta in [0, pi], phi in [0, 2*pi).
    pub samples: Vec<(f64, f64)>,
    /// Positive quadrature weights in steradians, one per angular sample.
    pub weights: Vec<f64>,
    /// 1 (theta-hat only) or 2 (theta-hat block stacked over phi-hat block).
    pub polarizations: usize,
}

impl AngleGrid {
    /// Gauss-Legendre in cos(theta) x uniform trapezoid in phi over the full
    /// sphere. `n_theta` polar nodes give `2 * n_theta` azimuth nodes.
    pub fn full_sphere(n_theta: usize, polarizations: usize) -> Self {
        let n_phi = 2 * n_theta;
        let (ct, wt) = gauss_legendre(n_theta);
        let d_phi = 2.0 * std::f64::consts::PI / n_phi as f64;
        let mut samples = Vec::with_capacity(n_theta * n_phi);
        let mut weights = Vec::with_capacity(n_theta * n_phi);
        for (c, w) in ct.iter().zip(&wt) {
            let theta = c.acos();
            for j in 0..n_phi {
                let phi = j as f64 * d_phi;
                samples.push((theta, phi));
                weights.push(w * d_phi / polarizations as f64);
            }
        }
        AngleGrid {
            samples,
            weights,
            polarizations,
        }
    }

    /// Uniform ring at theta = pi/2, used for the 2D uniform-azimuth PAS.
    pub fn azimuth_ring(n_phi: usize, polarizations: usize) -> Self {
        let d_phi = 2.0 * std::f64::consts::PI / n_phi as f64;
        let samples = (0..n_phi)
            .map(|j| (std::f64::consts::FRAC_PI_2, j as f64 * d_phi))
            .collect();
        let weights = vec![d_phi / polarizations as f64; n_phi];
        AngleGrid {
            samples,
            weights,
            polarizations,
        }
    }

    pub fn for_pas(pas: PasKind, resolution: usize, polarizations: usize) -> Self {
        match pas {
            PasKind::Uniform2dAzimuth => AngleGrid::azimuth_ring(resolution, polarizations),
            PasKind::Uniform3dSphere => AngleGrid::full_sphere(resolution, polarizations),
        }
    }

    /// Total number of pattern rows: angular samples times polarizations.
    pub fn k(&self) -> usize {
        self.samples.len() * self.polarizations
    }

    pub fn n_angles(&self) -> usize {
        self.samples.len()
    }

    /// Sum of row weights, i.e. sum(weights) * polarizations.
    pub fn support_measure(&self) -> f64 {
        self.weights.iter().sum::<f64>() * self.polarizations as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.len() != self.weights.len() {
            return Err(Error::Dimension {
                field: "grid.weights",
                expected: self.samples.len(),
                got: self.weights.len(),
            });
        }
        if self.polarizations != 1 && self.polarizations != 2 {
            return Err(Error::Invalid(format!(
                "polarizations must be 1 or 2, got {}",
                self.polarizations
            )));
        }
        for (i, &w) in self.weights.iter().enumerate() {
            if !(w > 0.0) || !w.is_finite() {
                return Err(Error::Invalid(format!("weight[{i}] = {w} is not positive")));
            }
        }
        for (i, &(theta, phi)) in self.samples.iter().enumerate() {
            if !(0.0..=std::f64::consts::PI).contains(&theta) {
                return Err(Error::Invalid(format!("theta[{i}] = {theta} out of [0, pi]")));
            }
            if !(0.0..2.0 * std::f64::consts::PI).contains(&phi) {
                return Err(Error::Invalid(format!("phi[{i}] = {phi} out of [0, 2*pi)")));
            }
        }
        Ok(())
    }
}
