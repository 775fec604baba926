//! Correlation matrix of the steering matrix and its modal decomposition
//! into radiation resistances, a unitary current basis and an orthonormal
//! pattern basis.

use nalgebra::linalg::SymmetricEigen;
use num_complex::Complex64;

use crate::dataset::{CMat, PortDataset};
use crate::error::{Error, Result};

/// Relative eigenvalue gap below which eigenpairs are treated as degenerate
/// ties and re-orthogonalized deterministically.
const TIE_GAP_REL: f64 = 1e-12;

/// Relative floor below which trailing modes are flagged numerically
/// degenerate instead of inverted.
pub const EPS_FLOOR_REL: f64 = 1e-12;

/// Modal decomposition of the transmit correlation matrix.
#[derive(Debug, Clone)]
pub struct ModalBasis {
    /// Radiation resistances (eigenvalues), descending, ohms.
    pub lambda: Vec<f64>,
    /// Unitary current basis; column i excites pattern i.
    pub q: CMat,
    /// K x N orthonormal pattern basis, (1/eta) B^H B = I on the usable part.
    pub b: CMat,
    pub k_t: CMat,
    pub eta_ohm: f64,
    /// Index of the first numerically degenerate mode, if any; `b` columns
    /// from here on are zeroed.
    pub degenerate_from: Option<usize>,
}

impl ModalBasis {
    pub fn n(&self) -> usize {
        self.lambda.len()
    }

    /// Number of modes with eigenvalues above the degeneracy floor.
    pub fn usable_rank(&self) -> usize {
        self.degenerate_from.unwrap_or(self.lambda.len())
    }

    /// Restriction to the `p` strongest modes.
    pub fn top(&self, p: usize) -> ModalBasis {
        assert!(p <= self.n());
        ModalBasis {
            lambda: self.lambda[..p].to_vec(),
            q: self.q.columns(0, p).into_owned(),
            b: self.b.columns(0, p).into_owned(),
            k_t: self.k_t.clone(),
            eta_ohm: self.eta_ohm,
            degenerate_from: self.degenerate_from.filter(|&d| d < p),
        }
    }

    /// max |(1/eta) B^H B - I| over the usable modes.
    pub fn orthonormality_residual(&self) -> f64 {
        let r = self.usable_rank();
        let b = self.b.columns(0, r);
        let gram = b.adjoint() * b / Complex64::from(self.eta_ohm);
        let mut worst = 0.0f64;
        for i in 0..r {
            for j in 0..r {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gram[(i, j)] - Complex64::from(target)).norm());
            }
        }
        worst
    }

    /// max |K_T - Q diag(lambda) Q^H|.
    pub fn reconstruction_residual(&self) -> f64 {
        let n = self.n();
        let mut rec = CMat::zeros(n, n);
        for i in 0..n {
            let qi = self.q.column(i);
            let li = Complex64::from(self.lambda[i]);
            for r in 0..n {
                for c in 0..n {
                    rec[(r, c)] += li * qi[r] * qi[c].conj();
                }
            }
        }
        (0..n)
            .flat_map(|r| (0..n).map(move |c| (r, c)))
            .map(|(r, c)| (self.k_t[(r, c)] - rec[(r, c)]).norm())
            .fold(0.0, f64::max)
    }
}

/// K_T = (1/eta) E^H E, Hermitian PSD.
pub fn compute_correlation(dataset: &PortDataset) -> Result<CMat> {
    for (r, c) in (0..dataset.k()).flat_map(|r| (0..dataset.n_ports()).map(move |c| (r, c))) {
        let v = dataset.e[(r, c)];
        if !v.re.is_finite() || !v.im.is_finite() {
            return Err(Error::NonFinite {
                field: "E",
                row: r,
                col: c,
            });
        }
    }
    let mut k_t = dataset.e.adjoint() * &dataset.e / Complex64::from(dataset.eta_ohm);
    // Exact Hermitian symmetrization removes rounding asymmetry.
    let n = k_t.nrows();
    for i in 0..n {
        k_t[(i, i)] = Complex64::new(k_t[(i, i)].re, 0.0);
        for j in (i + 1)..n {
            let avg = 0.5 * (k_t[(i, j)] + k_t[(j, i)].conj());
            k_t[(i, j)] = avg;
            k_t[(j, i)] = avg.conj();
        }
    }
    Ok(k_t)
}

/// Eigendecomposition of K_T with descending eigenvalues, deterministic
/// tie handling and the whitened pattern basis B = E Q Lambda^{-1/2}.
pub fn modal_decomposition(k_t: &CMat, dataset: &PortDataset) -> Result<ModalBasis> {
    let n = k_t.nrows();
    if k_t.ncols() != n {
        return Err(Error::Dimension {
            field: "K_T",
            expected: n,
            got: k_t.ncols(),
        });
    }
    let eig = SymmetricEigen::new(k_t.clone());
    // Sort descending.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let lambda: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut q = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        q.set_column(dst, &eig.eigenvectors.column(src));
    }

    let l1 = lambda.first().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
    canonicalize_ties(&mut q, &lambda, l1);
    fix_phases(&mut q);

    let eps_floor = EPS_FLOOR_REL * l1;
    let degenerate_from = lambda.iter().position(|&l| l <= eps_floor);

    let usable = degenerate_from.unwrap_or(n);
    let mut b = CMat::zeros(dataset.k(), n);
    for i in 0..usable {
        let col = &dataset.e * q.column(i) / Complex64::from(lambda[i].sqrt());
        b.set_column(i, &col);
    }
    // Symmetric re-orthonormalization of the usable block: eigenvector error
    // of weak modes (relative ~ eps / (lambda_i / lambda_1)) leaks into the
    // Gram; multiplying by Gram^{-1/2} restores (1/eta) B^H B = I to machine
    // precision without leaving span(E).
    if usable > 0 {
        let bu = b.columns(0, usable).into_owned();
        let gram = bu.adjoint() * &bu / Complex64::from(dataset.eta_ohm);
        let geig = SymmetricEigen::new(gram);
        let mut inv_sqrt = CMat::zeros(usable, usable);
        for i in 0..usable {
            let g = geig.eigenvalues[i].max(f64::MIN_POSITIVE);
            let vi = geig.eigenvectors.column(i);
            let scale = Complex64::from(1.0 / g.sqrt());
            for r in 0..usable {
                for c in 0..usable {
                    inv_sqrt[(r, c)] += scale * vi[r] * vi[c].conj();
                }
            }
        }
        let polished = bu * inv_sqrt;
        for i in 0..usable {
            b.set_column(i, &polished.column(i));
        }
    }

    Ok(ModalBasis {
        lambda,
        q,
        b,
        k_t: k_t.clone(),
        eta_ohm: dataset.eta_ohm,
        degenerate_from,
    })
}

/// Within blocks of (near-)equal eigenvalues, replaces the eigenvectors by a
/// Gram-Schmidt basis of the canonical-coordinate projections so the output
/// does not depend on the backend's arbitrary rotation of the eigenspace.
fn canonicalize_ties(q: &mut CMat, lambda: &[f64], l1: f64) {
    let n = lambda.len();
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && (lambda[end - 1] - lambda[end]).abs() < TIE_GAP_REL * l1 {
            end += 1;
        }
        let width = end - start;
        if width > 1 {
            let block = q.columns(start, width).into_owned();
            // Projector applied to canonical basis vectors in index order.
            let mut basis: Vec<nalgebra::DVector<Complex64>> = Vec::with_capacity(width);
            for coord in 0..n {
                if basis.len() == width {
                    break;
                }
                // P e_coord = block (block^H e_coord).
                let coeffs = block.adjoint().column(coord).into_owned();
                let mut v = &block * coeffs;
                for prev in &basis {
                    let proj = prev.dotc(&v);
                    v -= prev * proj;
                }
                let norm = v.norm();
                if norm > 1e-8 {
                    v /= Complex64::from(norm);
                    basis.push(v);
                }
            }
            if basis.len() == width {
                for (offset, v) in basis.iter().enumerate() {
                    q.set_column(start + offset, v);
                }
            }
        }
        start = end;
    }
}

/// Rotates each column so its largest-magnitude entry is real positive.
fn fix_phases(q: &mut CMat) {
    for c in 0..q.ncols() {
        let mut best = 0;
        let mut best_norm = 0.0;
        for r in 0..q.nrows() {
            let m = q[(r, c)].norm();
            if m > best_norm + 1e-14 {
                best_norm = m;
                best = r;
            }
        }
        if best_norm > 0.0 {
            let rot = (q[(best, c)] / Complex64::from(best_norm)).conj();
            for r in 0..q.nrows() {
                q[(r, c)] *= rot;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synthesize_dipole_grid, DipoleGridSpec, ETA_FREE_SPACE};
    use crate::grid::AngleGrid;
    use nalgebra::DVector;
    use num_complex::Complex64;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Dataset wrapper around an explicit steering matrix for direct tests.
    fn dataset_from_e(e: CMat) -> PortDataset {
        let n = e.ncols();
        let k = e.nrows();
        let grid = AngleGrid {
            samples: vec![(std::f64::consts::FRAC_PI_2, 0.0); k],
            weights: vec![1.0; k],
            polarizations: 1,
        };
        let gram = e.adjoint() * &e;
        let mut z = CMat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                z[(i, j)] = Complex64::new(
                    0.5 * (gram[(i, j)].re + gram[(j, i)].re) / ETA_FREE_SPACE,
                    0.0,
                );
            }
        }
        PortDataset {
            frequency_hz: 2.4e9,
            eta_ohm: ETA_FREE_SPACE,
            grid,
            e,
            z,
            feasible_feeds: (0..n).collect(),
            tags: vec![crate::dataset::PortTag::GroundFeed; n],
        }
    }

    #[test]
    fn orthogonal_columns_give_identity() {
        let eta = ETA_FREE_SPACE;
        let s = eta.sqrt();
        let mut e = CMat::zeros(2, 2);
        e[(0, 0)] = Complex64::from(s);
        e[(1, 1)] = Complex64::from(s);
        let ds = dataset_from_e(e);
        let kt = compute_correlation(&ds).unwrap();
        assert!((kt[(0, 0)].re - 1.0).abs() < 1e-12);
        assert!((kt[(1, 1)].re - 1.0).abs() < 1e-12);
        assert!(kt[(0, 1)].norm() < 1e-14);
    }

    #[test]
    fn isotropic_port_matches_solid_angle_integral() {
        // |e|^2 = eta * R / (4 pi) over the full sphere must give K_T = [R].
        let r = 73.0;
        let grid = AngleGrid::full_sphere(24, 1);
        let amp = (ETA_FREE_SPACE * r / (4.0 * std::f64::consts::PI)).sqrt();
        let k = grid.k();
        let mut e = CMat::zeros(k, 1);
        for (row, &w) in grid.weights.iter().enumerate() {
            e[(row, 0)] = Complex64::from(amp * w.sqrt());
        }
        let ds = PortDataset {
            frequency_hz: 2.4e9,
            eta_ohm: ETA_FREE_SPACE,
            grid,
            e,
            z: CMat::from_element(1, 1, Complex64::from(r)),
            feasible_feeds: vec![0],
            tags: vec![crate::dataset::PortTag::GroundFeed],
        };
        let kt = compute_correlation(&ds).unwrap();
        assert!((kt[(0, 0)].re - r).abs() / r < 1e-6);
    }

    #[test]
    fn co_polarized_pair_correlation_is_sinc() {
        // Two isotropic ports at separation d under the 3D-uniform PAS:
        // off-diagonal / diagonal = sin(kd) / (kd).
        let freq = 2.4e9;
        let lambda = crate::dataset::SPEED_OF_LIGHT / freq;
        let d = 0.37 * lambda;
        let ds = crate::dataset::synthesize_isotropic_array(
            &[[0.0, 0.0, 0.0], [d, 0.0, 0.0]],
            73.0,
            freq,
            AngleGrid::full_sphere(48, 1),
        )
        .unwrap();
        let kt = compute_correlation(&ds).unwrap();
        let kd = 2.0 * std::f64::consts::PI * d / lambda;
        let expected = kd.sin() / kd;
        let got = (kt[(0, 1)] / kt[(0, 0)]).re;
        assert!(
            (got - expected).abs() < 1e-4,
            "got {got}, expected {expected}"
        );
        assert!((kt[(0, 1)] / kt[(0, 0)]).im.abs() < 1e-10);
    }

    #[test]
    fn diagonal_input() {
        let mut kt = CMat::zeros(2, 2);
        kt[(0, 0)] = Complex64::from(4.0);
        kt[(1, 1)] = Complex64::from(1.0);
        let e = CMat::identity(2, 2) * Complex64::from(ETA_FREE_SPACE.sqrt());
        let ds = dataset_from_e(e);
        let basis = modal_decomposition(&kt, &ds).unwrap();
        assert!((basis.lambda[0] - 4.0).abs() < 1e-12);
        assert!((basis.lambda[1] - 1.0).abs() < 1e-12);
        assert!((basis.q[(0, 0)].re - 1.0).abs() < 1e-10);
        assert!((basis.q[(1, 1)].re - 1.0).abs() < 1e-10);
    }

    #[test]
    fn hand_evd_2x2() {
        let mut kt = CMat::zeros(2, 2);
        kt[(0, 0)] = Complex64::from(2.0);
        kt[(0, 1)] = Complex64::from(1.0);
        kt[(1, 0)] = Complex64::from(1.0);
        kt[(1, 1)] = Complex64::from(2.0);
        let e = CMat::identity(2, 2) * Complex64::from(ETA_FREE_SPACE.sqrt());
        let ds = dataset_from_e(e);
        let basis = modal_decomposition(&kt, &ds).unwrap();
        assert!((basis.lambda[0] - 3.0).abs() < 1e-12);
        assert!((basis.lambda[1] - 1.0).abs() < 1e-12);
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        for (col, signs) in [(0, [1.0, 1.0]), (1, [1.0, -1.0])] {
            let v = basis.q.column(col);
            // Phase-fixed output has the dominant entry real positive.
            let aligned = (v[0].re * signs[0] + v[1].re * signs[1]).abs();
            assert!(
                (aligned - 2.0 * inv_sqrt2).abs() < 1e-10,
                "column {col}: {v:?}"
            );
        }
    }

    #[test]
    fn random_hermitian_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 8;
        let mut a = CMat::zeros(n, n);
        for r in 0..n {
            for c in 0..n {
                a[(r, c)] = Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
            }
        }
        let kt = a.adjoint() * &a; // Hermitian PSD.
        let e = CMat::identity(n, n) * Complex64::from(ETA_FREE_SPACE.sqrt());
        let ds = dataset_from_e(e);
        let basis = modal_decomposition(&kt, &ds).unwrap();
        assert!(basis.reconstruction_residual() < 1e-10 * basis.lambda[0]);
    }

    #[test]
    fn dipole_grid_basis_invariants() {
        let spec = DipoleGridSpec::new(3, 3, 0.02, 2.4e9, AngleGrid::full_sphere(16, 1));
        let ds = synthesize_dipole_grid(&spec).unwrap();
        let kt = compute_correlation(&ds).unwrap();
        let basis = modal_decomposition(&kt, &ds).unwrap();
        let l1 = basis.lambda[0];
        for w in basis.lambda.windows(2) {
            assert!(w[0] >= w[1]);
        }
        // ||Q Q^H - I||_max < 1e-10.
        let qq = &basis.q * basis.q.adjoint();
        for r in 0..basis.n() {
            for c in 0..basis.n() {
                let target = if r == c { 1.0 } else { 0.0 };
                assert!((qq[(r, c)] - Complex64::from(target)).norm() < 1e-10);
            }
        }
        assert!(basis.orthonormality_residual() < 1e-8);
        assert!(basis.reconstruction_residual() < 1e-8 * l1);
        // Eq-style pattern orthogonality: (1/eta) <E q_i, E q_j> = delta_ij lambda_i.
        let f = &ds.e * &basis.q;
        let gram = f.adjoint() * &f / Complex64::from(ds.eta_ohm);
        for i in 0..basis.n() {
            for j in 0..basis.n() {
                let target = if i == j { basis.lambda[i] } else { 0.0 };
                assert!(
                    (gram[(i, j)] - Complex64::from(target)).norm() < 1e-8 * l1,
                    "({i},{j})"
                );
            }
        }
    }

    #[test]
    fn radiated_power_quadratic_form() {
        let spec = DipoleGridSpec::new(2, 2, 0.03, 2.4e9, AngleGrid::full_sphere(12, 1));
        let ds = synthesize_dipole_grid(&spec).unwrap();
        let kt = compute_correlation(&ds).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let i: DVector<Complex64> = DVector::from_fn(4, |_, _| {
                Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
            });
            let lhs = (&ds.e * &i).norm_squared() / ds.eta_ohm;
            let rhs = i.dotc(&(&kt * &i)).re;
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn scaling_covariance() {
        let spec = DipoleGridSpec::new(2, 2, 0.03, 2.4e9, AngleGrid::full_sphere(12, 1));
        let ds = synthesize_dipole_grid(&spec).unwrap();
        let kt = compute_correlation(&ds).unwrap();
        let basis = modal_decomposition(&kt, &ds).unwrap();
        let c = 3.5;
        let mut scaled = ds.clone();
        scaled.e *= Complex64::from(c);
        let kt2 = compute_correlation(&scaled).unwrap();
        let basis2 = modal_decomposition(&kt2, &scaled).unwrap();
        for (a, b) in basis.lambda.iter().zip(&basis2.lambda) {
            assert!((b - c * c * a).abs() < 1e-8 * c * c * basis.lambda[0]);
        }
        // Eigenspaces unchanged: compare projectors of the leading mode.
        let p1 = basis.q.column(0) * basis.q.column(0).adjoint();
        let p2 = basis2.q.column(0) * basis2.q.column(0).adjoint();
        let diff = (&p1 - &p2).iter().map(|v| v.norm()).fold(0.0f64, f64::max);
        assert!(diff < 1e-8);
    }

    #[test]
    fn degenerate_modes_flagged_not_fatal() {
        // Rank-1 K_T with N = 2: second eigenvalue collapses to the floor.
        let mut e = CMat::zeros(4, 2);
        for r in 0..4 {
            e[(r, 0)] = Complex64::from(1.0);
            e[(r, 1)] = Complex64::from(1.0);
        }
        let ds = dataset_from_e(e);
        let kt = compute_correlation(&ds).unwrap();
        let basis = modal_decomposition(&kt, &ds).unwrap();
        assert_eq!(basis.degenerate_from, Some(1));
        assert_eq!(basis.usable_rank(), 1);
    }
}
