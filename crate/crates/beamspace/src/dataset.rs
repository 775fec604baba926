//! N-port datasets: angular grid, open-circuit steering matrix and impedance
//! matrix, plus a synthetic Hertzian-dipole-grid generator and NPORT-JSON I/O.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::AngleGrid;

pub type CMat = DMatrix<Complex64>;

/// Free-space impedance in ohms.
pub const ETA_FREE_SPACE: f64 = 376.730313668;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PortTag {
    #[serde(rename = "surface-gap")]
    SurfaceGap,
    #[serde(rename = "ground-feed")]
    GroundFeed,
}

/// Open-circuit port data for an N-port structure.
///
/// Column n of `e` is the radiation pattern of port n excited by a unit
/// current with all other ports open, sampled over the grid with the
/// quadrature weights pre-folded as sqrt(weight). Discrete inner products of
/// columns therefore approximate surface integrals over the PAS support.
#[derive(Debug, Clone, PartialEq)]
pub struct PortDataset {
    pub frequency_hz: f64,
    pub eta_ohm: f64,
    pub grid: AngleGrid,
    /// K x N steering matrix, weights folded.
    pub e: CMat,
    /// N x N open-circuit impedance matrix, ohms.
    pub z: CMat,
    /// 0-based indices of ports usable as feeds (1-based in NPORT-JSON).
    pub feasible_feeds: Vec<usize>,
    pub tags: Vec<PortTag>,
}

impl PortDataset {
    pub fn n_ports(&self) -> usize {
        self.e.ncols()
    }

    pub fn k(&self) -> usize {
        self.e.nrows()
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.frequency_hz
    }

    /// Checks the structural invariants: grid consistency, K >= N,
    /// reciprocity of Z and finiteness of E.
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.e.nrows() != self.grid.k() {
            return Err(Error::Dimension {
                field: "E.rows",
                expected: self.grid.k(),
                got: self.e.nrows(),
            });
        }
        if self.k() < self.n_ports() {
            return Err(Error::Dimension {
                field: "E (K < N)",
                expected: self.n_ports(),
                got: self.k(),
            });
        }
        if self.z.nrows() != self.n_ports() || self.z.ncols() != self.n_ports() {
            return Err(Error::Dimension {
                field: "Z",
                expected: self.n_ports(),
                got: self.z.nrows().max(self.z.ncols()),
            });
        }
        if self.tags.len() != self.n_ports() {
            return Err(Error::Dimension {
                field: "tags",
                expected: self.n_ports(),
                got: self.tags.len(),
            });
        }
        for &f in &self.feasible_feeds {
            if f >= self.n_ports() {
                return Err(Error::Invalid(format!(
                    "feasible feed index {f} out of range (N = {})",
                    self.n_ports()
                )));
            }
        }
        for (r, c) in (0..self.k()).flat_map(|r| (0..self.n_ports()).map(move |c| (r, c))) {
            let v = self.e[(r, c)];
            if !v.re.is_finite() || !v.im.is_finite() {
                return Err(Error::NonFinite {
                    field: "E",
                    row: r,
                    col: c,
                });
            }
        }
        self.check_reciprocity(1e-9)?;
        Ok(())
    }

    /// ||Z - Z^T||_max must stay below `rel_tol * ||Z||_max`.
    pub fn check_reciprocity(&self, rel_tol: f64) -> Result<()> {
        let n = self.z.nrows();
        let z_max = self
            .z
            .iter()
            .map(|v| v.norm())
            .fold(0.0f64, f64::max)
            .max(f64::MIN_POSITIVE);
        let mut residual = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                residual = residual.max((self.z[(i, j)] - self.z[(j, i)]).norm());
            }
        }
        if residual > rel_tol * z_max {
            return Err(Error::Reciprocity {
                residual,
                tol: rel_tol * z_max,
            });
        }
        Ok(())
    }

    /// Max relative deviation of Re{diag Z} from the pattern-overlap
    /// resistances (1/eta) Re{diag E^H E}. Zero (to rounding) for generator
    /// output; advisory for imported data.
    pub fn lossless_residual(&self) -> f64 {
        let n = self.n_ports();
        let mut worst = 0.0f64;
        for i in 0..n {
            let overlap = self.e.column(i).norm_squared() / self.eta_ohm;
            let r = self.z[(i, i)].re;
            let scale = overlap.abs().max(r.abs()).max(f64::MIN_POSITIVE);
            worst = worst.max((overlap - r).abs() / scale);
        }
        worst
    }
}

/// Dipole axis assignment for the synthetic generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum OrientationPolicy {
    /// All elements along z-hat.
    #[default]
    AllZ,
    /// Checkerboard of x-hat and y-hat elements.
    AlternateXy,
}

/// Parameters for [`synthesize_dipole_grid`].
#[derive(Debug, Clone)]
pub struct DipoleGridSpec {
    pub rows: usize,
    pub cols: usize,
    /// Element pitch in meters.
    pub spacing_m: f64,
    pub frequency_hz: f64,
    pub orientation: OrientationPolicy,
    pub grid: AngleGrid,
    /// Diagonal self-reactance of the synthetic reactance model, ohms.
    pub x_self_ohm: f64,
    /// Defaults to every port when `None`.
    pub feasible_feeds: Option<Vec<usize>>,
    /// Hertzian sub-element length in meters; defaults to the pitch capped at
    /// lambda/10. Set it to the pitch when subdividing a fixed structure so
    /// the total radiation resistance stays constant with density.
    pub sub_element_length_m: Option<f64>,
}

impl DipoleGridSpec {
    pub fn new(rows: usize, cols: usize, spacing_m: f64, frequency_hz: f64, grid: AngleGrid) -> Self {
        DipoleGridSpec {
            rows,
            cols,
            spacing_m,
            frequency_hz,
            orientation: OrientationPolicy::AllZ,
            grid,
            x_self_ohm: 0.0,
            feasible_feeds: None,
            sub_element_length_m: None,
        }
    }
}

fn unit_r_hat(theta: f64, phi: f64) -> [f64; 3] {
    [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]
}

/// (theta-hat, phi-hat) components of a unit dipole along `axis`.
fn dipole_components(axis: [f64; 3], theta: f64, phi: f64) -> (f64, f64) {
    let theta_hat = [theta.cos() * phi.cos(), theta.cos() * phi.sin(), -theta.sin()];
    let phi_hat = [-phi.sin(), phi.cos(), 0.0];
    let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    (dot(axis, theta_hat), dot(axis, phi_hat))
}

/// Builds a physically consistent synthetic dataset of Hertzian dipoles on a
/// planar rows x cols grid.
///
/// Re{Z} is the pattern-overlap mutual resistance (1/eta) Re{E^H E}; Im{Z} is
/// the configured diagonal self-reactance plus the cot(k d) mutual-reactance
/// stand-in clamped to 5 * R_self. The output is lossless-consistent by
/// construction.
pub fn synthesize_dipole_grid(spec: &DipoleGridSpec) -> Result<PortDataset> {
    if spec.rows * spec.cols == 0 {
        return Err(Error::Invalid("rows * cols must be >= 1".into()));
    }
    if !(spec.spacing_m > 0.0) {
        return Err(Error::Invalid(format!(
            "spacing must be positive, got {}",
            spec.spacing_m
        )));
    }
    if !(spec.frequency_hz > 0.0) {
        return Err(Error::Invalid("frequency must be positive".into()));
    }
    spec.grid.validate()?;
    let n = spec.rows * spec.cols;
    let k_rows = spec.grid.k();
    if k_rows < n {
        return Err(Error::Dimension {
            field: "grid (K < N)",
            expected: n,
            got: k_rows,
        });
    }

    let eta = ETA_FREE_SPACE;
    let lambda = SPEED_OF_LIGHT / spec.frequency_hz;
    let k_wave = 2.0 * std::f64::consts::PI / lambda;
    // Hertzian length: element pitch, capped at lambda/10 to stay electrically
    // short even for widely spaced test layouts.
    let dl = spec
        .sub_element_length_m
        .unwrap_or_else(|| spec.spacing_m.min(lambda / 10.0));
    if !(dl > 0.0) {
        return Err(Error::Invalid("sub-element length must be positive".into()));
    }
    let r_self = eta * (k_wave * dl).powi(2) / (6.0 * std::f64::consts::PI);

    // Positions centered on the origin in the xy-plane.
    let mut positions = Vec::with_capacity(n);
    let mut axes = Vec::with_capacity(n);
    for r in 0..spec.rows {
        for c in 0..spec.cols {
            let x = (c as f64 - (spec.cols as f64 - 1.0) / 2.0) * spec.spacing_m;
            let y = (r as f64 - (spec.rows as f64 - 1.0) / 2.0) * spec.spacing_m;
            positions.push([x, y, 0.0]);
            let axis = match spec.orientation {
                OrientationPolicy::AllZ => [0.0, 0.0, 1.0],
                OrientationPolicy::AlternateXy => {
                    if (r + c) % 2 == 0 {
                        [1.0, 0.0, 0.0]
                    } else {
                        [0.0, 1.0, 0.0]
                    }
                }
            };
            axes.push(axis);
        }
    }

    let n_angles = spec.grid.n_angles();
    let mut e = CMat::zeros(k_rows, n);
    for (col, (&pos, &axis)) in positions.iter().zip(&axes).enumerate() {
        // Unnormalized column, then scaled so (1/eta)||col||^2 = R_self.
        let mut norm_sq = 0.0;
        for (a, (&(theta, phi), &w)) in spec.grid.samples.iter().zip(&spec.grid.weights).enumerate()
        {
            let r_hat = unit_r_hat(theta, phi);
            let phase = k_wave * (r_hat[0] * pos[0] + r_hat[1] * pos[1] + r_hat[2] * pos[2]);
            let rot = Complex64::new(0.0, phase).exp();
            let (ct, cp) = dipole_components(axis, theta, phi);
            let sw = w.sqrt();
            e[(a, col)] = rot * Complex64::new(sw * ct, 0.0);
            norm_sq += w * ct * ct;
            if spec.grid.polarizations == 2 {
                e[(n_angles + a, col)] = rot * Complex64::new(sw * cp, 0.0);
                norm_sq += w * cp * cp;
            }
        }
        if norm_sq <= 0.0 {
            return Err(Error::Invalid(format!(
                "element {col} radiates no power into the selected PAS support"
            )));
        }
        let scale = (eta * r_self / norm_sq).sqrt();
        for r in 0..k_rows {
            e[(r, col)] *= Complex64::new(scale, 0.0);
        }
    }

    // Re{Z} from pattern overlap, symmetrized exactly.
    let gram = e.adjoint() * &e;
    let mut z = CMat::zeros(n, n);
    for i in 0..n {
        z[(i, i)] = Complex64::new(gram[(i, i)].re / eta, spec.x_self_ohm);
        for j in (i + 1)..n {
            let r_mut = 0.5 * (gram[(i, j)].re + gram[(j, i)].re) / eta;
            let d = {
                let a = positions[i];
                let b = positions[j];
                ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
            };
            // Hilbert-transform-free reactance stand-in, clamped away from
            // the cot singularity.
            let x_mut = (r_mut * (k_wave * d).tan().recip()).clamp(-5.0 * r_self, 5.0 * r_self);
            let v = Complex64::new(r_mut, x_mut);
            z[(i, j)] = v;
            z[(j, i)] = v;
        }
    }

    let dataset = PortDataset {
        frequency_hz: spec.frequency_hz,
        eta_ohm: eta,
        grid: spec.grid.clone(),
        e,
        z,
        feasible_feeds: spec
            .feasible_feeds
            .clone()
            .unwrap_or_else(|| (0..n).collect()),
        tags: vec![PortTag::GroundFeed; n],
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Array of omnidirectional (constant-magnitude) reference elements, each
/// with self resistance `r_self_ohm`. Useful as an analytically tractable
/// oracle structure.
pub fn synthesize_isotropic_array(
    positions: &[[f64; 3]],
    r_self_ohm: f64,
    frequency_hz: f64,
    grid: AngleGrid,
) -> Result<PortDataset> {
    let n = positions.len();
    let k_rows = grid.k();
    if k_rows < n {
        return Err(Error::Dimension {
            field: "grid (K < N)",
            expected: n,
            got: k_rows,
        });
    }
    grid.validate()?;
    let eta = ETA_FREE_SPACE;
    let k_wave = 2.0 * std::f64::consts::PI * frequency_hz / SPEED_OF_LIGHT;
    let measure = grid.support_measure();
    let amp = (eta * r_self_ohm / measure).sqrt();
    let n_angles = grid.n_angles();
    let mut e = CMat::zeros(k_rows, n);
    for (col, pos) in positions.iter().enumerate() {
        for (a, (&(theta, phi), &w)) in grid.samples.iter().zip(&grid.weights).enumerate() {
            let r_hat = unit_r_hat(theta, phi);
            let phase = k_wave * (r_hat[0] * pos[0] + r_hat[1] * pos[1] + r_hat[2] * pos[2]);
            let v = Complex64::new(0.0, phase).exp() * Complex64::new(amp * w.sqrt(), 0.0);
            for b in 0..grid.polarizations {
                e[(b * n_angles + a, col)] = v;
            }
        }
    }
    let gram = e.adjoint() * &e;
    let mut z = CMat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let r = 0.5 * (gram[(i, j)].re + gram[(j, i)].re) / eta;
            z[(i, j)] = Complex64::new(r, 0.0);
        }
    }
    let dataset = PortDataset {
        frequency_hz,
        eta_ohm: eta,
        grid,
        e,
        z,
        feasible_feeds: (0..n).collect(),
        tags: vec![PortTag::GroundFeed; n],
    };
    dataset.validate()?;
    Ok(dataset)
}

// ---------------------------------------------------------------------------
// NPORT-JSON
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct GridJson {
    theta: Vec<f64>,
    phi: Vec<f64>,
    weight: Vec<f64>,
    polarizations: usize,
}

#[derive(Serialize, Deserialize)]
struct MatrixJson {
    re: Vec<f64>,
    im: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct DatasetJson {
    frequency_hz: f64,
    eta_ohm: f64,
    grid: GridJson,
    #[serde(rename = "E")]
    e: MatrixJson,
    #[serde(rename = "Z")]
    z: MatrixJson,
    /// 1-based port indices.
    feasible_feeds: Vec<usize>,
    tags: Vec<PortTag>,
}

fn matrix_to_json(m: &CMat) -> MatrixJson {
    // Row-major.
    let mut re = Vec::with_capacity(m.nrows() * m.ncols());
    let mut im = Vec::with_capacity(m.nrows() * m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            re.push(m[(r, c)].re);
            im.push(m[(r, c)].im);
        }
    }
    MatrixJson { re, im }
}

fn matrix_from_json(j: &MatrixJson, rows: usize, cols: usize, field: &str) -> Result<CMat> {
    if j.re.len() != rows * cols || j.im.len() != rows * cols {
        return Err(Error::Schema {
            field: field.to_string(),
            reason: format!(
                "expected {} entries ({rows} x {cols}), got re = {}, im = {}",
                rows * cols,
                j.re.len(),
                j.im.len()
            ),
        });
    }
    let mut m = CMat::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            let idx = r * cols + c;
            m[(r, c)] = Complex64::new(j.re[idx], j.im[idx]);
        }
    }
    Ok(m)
}

pub fn save_dataset(dataset: &PortDataset, path: &Path) -> Result<()> {
    let json = DatasetJson {
        frequency_hz: dataset.frequency_hz,
        eta_ohm: dataset.eta_ohm,
        grid: GridJson {
            theta: dataset.grid.samples.iter().map(|s| s.0).collect(),
            phi: dataset.grid.samples.iter().map(|s| s.1).collect(),
            weight: dataset.grid.weights.clone(),
            polarizations: dataset.grid.polarizations,
        },
        e: matrix_to_json(&dataset.e),
        z: matrix_to_json(&dataset.z),
        feasible_feeds: dataset.feasible_feeds.iter().map(|&i| i + 1).collect(),
        tags: dataset.tags.clone(),
    };
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(file, &json)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<PortDataset> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let json: DatasetJson = serde_json::from_reader(file)?;
    if json.grid.theta.len() != json.grid.phi.len() || json.grid.theta.len() != json.grid.weight.len()
    {
        return Err(Error::Schema {
            field: "grid".into(),
            reason: "theta, phi and weight arrays must have equal length".into(),
        });
    }
    let grid = AngleGrid {
        samples: json
            .grid
            .theta
            .iter()
            .zip(&json.grid.phi)
            .map(|(&t, &p)| (t, p))
            .collect(),
        weights: json.grid.weight.clone(),
        polarizations: json.grid.polarizations,
    };
    grid.validate()?;
    let k_rows = grid.k();
    let n = (json.z.re.len() as f64).sqrt().round() as usize;
    if n * n != json.z.re.len() {
        return Err(Error::Schema {
            field: "Z".into(),
            reason: format!("entry count {} is not a perfect square", json.z.re.len()),
        });
    }
    let e = matrix_from_json(&json.e, k_rows, n, "E")?;
    let z = matrix_from_json(&json.z, n, n, "Z")?;
    let mut feasible = Vec::with_capacity(json.feasible_feeds.len());
    for &f in &json.feasible_feeds {
        if f == 0 || f > n {
            return Err(Error::Schema {
                field: "feasible_feeds".into(),
                reason: format!("1-based index {f} out of range 1..={n}"),
            });
        }
        feasible.push(f - 1);
    }
    let dataset = PortDataset {
        frequency_hz: json.frequency_hz,
        eta_ohm: json.eta_ohm,
        grid,
        e,
        z,
        feasible_feeds: feasible,
        tags: json.tags,
    };
    if dataset.k() < dataset.n_ports() {
        return Err(Error::Dimension {
            field: "E (K < N)",
            expected: dataset.n_ports(),
            got: dataset.k(),
        });
    }
    dataset.check_reciprocity(1e-6)?;
    dataset.validate()?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::AngleGrid;

    fn small_spec() -> DipoleGridSpec {
        DipoleGridSpec::new(2, 1, 0.05, 2.4e9, AngleGrid::full_sphere(12, 1))
    }

    #[test]
    fn single_element() {
        let mut spec = small_spec();
        spec.rows = 1;
        spec.x_self_ohm = 3.0;
        let ds = synthesize_dipole_grid(&spec).unwrap();
        assert_eq!(ds.n_ports(), 1);
        let lambda = ds.wavelength();
        let k = 2.0 * std::f64::consts::PI / lambda;
        let dl = spec.spacing_m.min(lambda / 10.0);
        let r_self = ETA_FREE_SPACE * (k * dl).powi(2) / (6.0 * std::f64::consts::PI);
        assert!((ds.z[(0, 0)].re - r_self).abs() < 1e-9 * r_self);
        assert!((ds.z[(0, 0)].im - 3.0).abs() < 1e-12);
        // K_T = [R_self].
        let kt = ds.e.adjoint() * &ds.e / Complex64::from(ds.eta_ohm);
        assert!((kt[(0, 0)].re - r_self).abs() < 1e-10 * r_self);
    }

    #[test]
    fn widely_spaced_mutual_resistance_decays() {
        let mut spec = small_spec();
        let lambda = SPEED_OF_LIGHT / spec.frequency_hz;
        // Away from multiples of lambda/2 where cot(kd) in the reactance
        // stand-in is singular and the clamp kicks in.
        spec.spacing_m = 10.3 * lambda;
        spec.grid = AngleGrid::full_sphere(48, 1);
        let ds = synthesize_dipole_grid(&spec).unwrap();
        let ratio = ds.z[(0, 1)].norm() / ds.z[(0, 0)].re;
        assert!(ratio < 0.05, "ratio = {ratio}");
    }

    #[test]
    fn generator_output_is_lossless_consistent() {
        let ds = synthesize_dipole_grid(&small_spec()).unwrap();
        assert!(ds.lossless_residual() < 1e-12);
        ds.validate().unwrap();
    }

    #[test]
    fn rejects_bad_spacing_and_small_grids() {
        let mut spec = small_spec();
        spec.spacing_m = 0.0;
        assert!(synthesize_dipole_grid(&spec).is_err());
        let mut spec = small_spec();
        spec.rows = 40;
        spec.cols = 40;
        spec.grid = AngleGrid::full_sphere(4, 1);
        assert!(matches!(
            synthesize_dipole_grid(&spec),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ds = synthesize_dipole_grid(&small_spec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.json");
        save_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn load_rejects_k_less_than_n() {
        let ds = synthesize_dipole_grid(&small_spec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.json");
        save_dataset(&ds, &path).unwrap();
        let mut raw: serde_json::Value =
            serde_json::from_reader(std::fs::File::open(&path).unwrap()).unwrap();
        // Truncate the grid to a single angle: K = 1 < N = 2.
        for key in ["theta", "phi", "weight"] {
            let arr = raw["grid"][key].as_array().unwrap()[..1].to_vec();
            raw["grid"][key] = serde_json::Value::Array(arr);
        }
        let k = ds.k();
        let trim = |v: &serde_json::Value| {
            serde_json::Value::Array(v.as_array().unwrap()[..v.as_array().unwrap().len() / k].to_vec())
        };
        raw["E"]["re"] = trim(&raw["E"]["re"]);
        raw["E"]["im"] = trim(&raw["E"]["im"]);
        serde_json::to_writer(std::fs::File::create(&path).unwrap(), &raw).unwrap();
        assert!(load_dataset(&path).is_err());
    }

    #[test]
    fn load_rejects_reciprocity_violation() {
        let ds = synthesize_dipole_grid(&small_spec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.json");
        save_dataset(&ds, &path).unwrap();
        let mut raw: serde_json::Value =
            serde_json::from_reader(std::fs::File::open(&path).unwrap()).unwrap();
        let z01 = raw["Z"]["re"][1].as_f64().unwrap();
        raw["Z"]["re"][1] = serde_json::json!(z01 + 1.0);
        serde_json::to_writer(std::fs::File::create(&path).unwrap(), &raw).unwrap();
        match load_dataset(&path) {
            Err(Error::Reciprocity { .. }) => {}
            other => panic!("expected reciprocity error, got {other:?}"),
        }
    }
}
