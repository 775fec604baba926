//! Loaded N-port synthesis: feed/parasitic partition, induced parasitic
//! currents and the far-field patterns of the fed structure.

use nalgebra::linalg::LU;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dataset::CMat;
use crate::error::{Error, Result};

/// Condition estimate above which the loaded parasitic system is rejected.
const COND_LIMIT: f64 = 1e12;

/// Impedance matrix split into feed (A) and parasitic (P) blocks.
#[derive(Debug, Clone)]
pub struct Partition {
    pub z_a: CMat,
    pub z_ap: CMat,
    pub z_pa: CMat,
    pub z_p: CMat,
    /// 0-based port indices of the feeds, ascending.
    pub feed_idx: Vec<usize>,
    /// 0-based indices of the remaining ports, ascending.
    pub parasitic_idx: Vec<usize>,
}

pub fn partition_impedance(z: &CMat, feeds: &[usize]) -> Result<Partition> {
    let n = z.nrows();
    if z.ncols() != n {
        return Err(Error::Dimension {
            field: "z",
            expected: n,
            got: z.ncols(),
        });
    }
    let mut feed_idx: Vec<usize> = feeds.to_vec();
    feed_idx.sort_unstable();
    feed_idx.dedup();
    if feed_idx.len() != feeds.len() {
        return Err(Error::Invalid("duplicate feed indices".into()));
    }
    if feed_idx.iter().any(|&f| f >= n) {
        return Err(Error::Invalid(format!("feed index out of range 0..{n}")));
    }
    let parasitic_idx: Vec<usize> = (0..n).filter(|i| !feed_idx.contains(i)).collect();
    let take = |rows: &[usize], cols: &[usize]| {
        CMat::from_fn(rows.len(), cols.len(), |r, c| z[(rows[r], cols[c])])
    };
    Ok(Partition {
        z_a: take(&feed_idx, &feed_idx),
        z_ap: take(&feed_idx, &parasitic_idx),
        z_pa: take(&parasitic_idx, &feed_idx),
        z_p: take(&parasitic_idx, &parasitic_idx),
        feed_idx,
        parasitic_idx,
    })
}

/// Currents induced on the parasitic ports by unit feed currents, one column
/// per feed: i_P = -(Z_P + jX^L)^{-1} Z_PA. A load of `None` leaves the port
/// open; its row is zero and it is removed from the solve.
pub fn parasitic_current_map(part: &Partition, loads: &[Option<f64>]) -> Result<CMat> {
    let np = part.parasitic_idx.len();
    let q = part.feed_idx.len();
    if loads.len() != np {
        return Err(Error::Dimension {
            field: "loads",
            expected: np,
            got: loads.len(),
        });
    }
    let closed: Vec<usize> = (0..np).filter(|&i| loads[i].is_some()).collect();
    let mut map = CMat::zeros(np, q);
    if closed.is_empty() {
        return Ok(map);
    }
    let mut sys = CMat::from_fn(closed.len(), closed.len(), |r, c| {
        part.z_p[(closed[r], closed[c])]
    });
    for (r, &i) in closed.iter().enumerate() {
        sys[(r, r)] += Complex64::new(0.0, loads[i].unwrap());
    }
    let rhs = CMat::from_fn(closed.len(), q, |r, c| part.z_pa[(closed[r], c)]);
    let lu = LU::new(sys);
    let diag: Vec<f64> = (0..closed.len()).map(|i| lu.u()[(i, i)].norm()).collect();
    let dmax = diag.iter().cloned().fold(0.0, f64::max);
    let dmin = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    let cond = if dmin > 0.0 { dmax / dmin } else { f64::INFINITY };
    if !cond.is_finite() || cond > COND_LIMIT {
        return Err(Error::Singular { cond });
    }
    let sol = lu
        .solve(&rhs)
        .ok_or(Error::Singular { cond })?;
    for (r, &i) in closed.iter().enumerate() {
        for c in 0..q {
            map[(i, c)] = -sol[(r, c)];
        }
    }
    Ok(map)
}

/// Far-field patterns of the fed structure and the full port-current columns
/// that generate them.
#[derive(Debug, Clone)]
pub struct SynthesizedPatterns {
    /// K x Q pattern matrix, one column per feed.
    pub e_fed: CMat,
    /// N x Q port currents: unit feed excitation plus induced parasitics.
    pub currents: CMat,
}

pub fn synthesize_patterns(
    e: &CMat,
    part: &Partition,
    loads: &[Option<f64>],
) -> Result<SynthesizedPatterns> {
    let n = part.feed_idx.len() + part.parasitic_idx.len();
    if e.ncols() != n {
        return Err(Error::Dimension {
            field: "e",
            expected: n,
            got: e.ncols(),
        });
    }
    let map = parasitic_current_map(part, loads)?;
    let q = part.feed_idx.len();
    let mut currents = CMat::zeros(n, q);
    for (c, &f) in part.feed_idx.iter().enumerate() {
        currents[(f, c)] = Complex64::from(1.0);
    }
    for (r, &p) in part.parasitic_idx.iter().enumerate() {
        for c in 0..q {
            currents[(p, c)] = map[(r, c)];
        }
    }
    let e_fed = e * &currents;
    Ok(SynthesizedPatterns { e_fed, currents })
}

/// Normalized pattern correlation matrix rho_jk of the fed columns.
pub fn correlation_matrix(e_fed: &CMat) -> CMat {
    let q = e_fed.ncols();
    let norms: Vec<f64> = (0..q).map(|j| e_fed.column(j).norm()).collect();
    CMat::from_fn(q, q, |j, k| {
        let d = norms[j] * norms[k];
        if d > 0.0 {
            e_fed.column(j).dotc(&e_fed.column(k)) / d
        } else {
            Complex64::from(0.0)
        }
    })
}

/// Sum of off-diagonal correlation magnitudes, the optimizer objective.
pub fn correlation_objective(e_fed: &CMat) -> f64 {
    let rho = correlation_matrix(e_fed);
    let q = rho.ncols();
    let mut acc = 0.0;
    for j in 0..q {
        for k in 0..q {
            if j != k {
                acc += rho[(j, k)].norm();
            }
        }
    }
    acc
}

/// Effective modal radiation resistances of a fed structure: eigenvalues of
/// the fed-pattern correlation, each divided by the squared current norm the
/// mode drives through the whole structure. Descending.
pub fn fed_effective_resistances(syn: &SynthesizedPatterns, eta_ohm: f64) -> Vec<f64> {
    let k_fed = (syn.e_fed.adjoint() * &syn.e_fed) / Complex64::from(eta_ohm);
    let (lam_f, q_f) = crate::capacity::herm_eig_desc(&k_fed);
    let g = syn.currents.adjoint() * &syn.currents;
    let mut lam_eff: Vec<f64> = (0..k_fed.ncols())
        .map(|i| {
            let qi = q_f.column(i);
            let cost = (qi.adjoint() * &g * qi)[(0, 0)].re;
            if cost > 0.0 {
                lam_f[i] / cost
            } else {
                0.0
            }
        })
        .collect();
    lam_eff.sort_by(|a, b| b.partial_cmp(a).unwrap());
    lam_eff
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub outer: usize,
    pub stage: String,
    pub objective: f64,
    /// 1-based feed ports after this step.
    pub feeds: Vec<usize>,
}

/// Serialized optimizer outcome. `feeds` are 1-based port numbers; `loads`
/// covers the non-feed ports in ascending port order, `null` meaning open.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeedLoadConfig {
    pub feeds: Vec<usize>,
    pub loads: Vec<Option<f64>>,
    pub objective: f64,
    pub iteration_log: Vec<IterationRecord>,
}

impl FeedLoadConfig {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        let cfg: FeedLoadConfig = serde_json::from_reader(std::io::BufReader::new(f))?;
        if cfg.feeds.iter().any(|&f| f == 0) {
            return Err(Error::Schema {
                field: "feeds".into(),
                reason: "feed ports are 1-based".into(),
            });
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric_z(n: usize, rng: &mut ChaCha8Rng) -> CMat {
        let mut z = DMatrix::from_fn(n, n, |_, _| {
            Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        });
        z = &z + z.transpose(); // reciprocity: symmetric, not Hermitian
        for i in 0..n {
            z[(i, i)] += Complex64::from(n as f64); // keep the solves well posed
        }
        z
    }

    fn random_e(k: usize, n: usize, rng: &mut ChaCha8Rng) -> CMat {
        DMatrix::from_fn(k, n, |_, _| {
            Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        })
    }

    #[test]
    fn partition_blocks_line_up() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = random_symmetric_z(5, &mut rng);
        let part = partition_impedance(&z, &[1, 3]).unwrap();
        assert_eq!(part.feed_idx, vec![1, 3]);
        assert_eq!(part.parasitic_idx, vec![0, 2, 4]);
        assert_eq!(part.z_a[(0, 1)], z[(1, 3)]);
        assert_eq!(part.z_p[(2, 0)], z[(4, 0)]);
        assert_eq!(part.z_pa[(1, 1)], z[(2, 3)]);
        assert_eq!(part.z_ap[(0, 2)], z[(1, 4)]);
    }

    #[test]
    fn superposition_oracle() {
        // The synthesized column must equal the pattern radiated by the full
        // port-current vector: E_fed = E * [i_A; i_P].
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..100 {
            let n = 2 + (trial % 19);
            let k = n + 4;
            let z = random_symmetric_z(n, &mut rng);
            let e = random_e(k, n, &mut rng);
            let q = 1 + trial % n.min(3);
            let feeds: Vec<usize> = (0..q).map(|i| (i * 2) % n).collect();
            let mut feeds = feeds;
            feeds.sort_unstable();
            feeds.dedup();
            let part = partition_impedance(&z, &feeds).unwrap();
            let np = part.parasitic_idx.len();
            let loads: Vec<Option<f64>> = (0..np)
                .map(|i| {
                    if i % 4 == 3 {
                        None
                    } else {
                        Some(200.0 * (rng.gen::<f64>() - 0.5))
                    }
                })
                .collect();
            let syn = synthesize_patterns(&e, &part, &loads).unwrap();
            let direct = &e * &syn.currents;
            assert!((&syn.e_fed - &direct).norm() < 1e-10);
            // KVL on the loaded parasitic rows.
            for (r, &p) in part.parasitic_idx.iter().enumerate() {
                if let Some(x) = loads[r] {
                    for c in 0..part.feed_idx.len() {
                        let mut v = Complex64::from(0.0);
                        for col in 0..z.ncols() {
                            v += z[(p, col)] * syn.currents[(col, c)];
                        }
                        v += Complex64::new(0.0, x) * syn.currents[(p, c)];
                        assert!(v.norm() < 1e-9, "KVL residual {}", v.norm());
                    }
                }
            }
        }
    }

    #[test]
    fn all_open_recovers_feed_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let z = random_symmetric_z(6, &mut rng);
        let e = random_e(10, 6, &mut rng);
        let part = partition_impedance(&z, &[0, 4]).unwrap();
        let loads = vec![None; 4];
        let syn = synthesize_patterns(&e, &part, &loads).unwrap();
        assert!((syn.e_fed.column(0) - e.column(0)).norm() < 1e-14);
        assert!((syn.e_fed.column(1) - e.column(4)).norm() < 1e-14);
    }

    #[test]
    fn singular_loaded_system_rejected() {
        // Z_P 1x1 purely reactive, load cancels it exactly.
        let mut z = CMat::zeros(2, 2);
        z[(0, 0)] = Complex64::from(50.0);
        z[(1, 1)] = Complex64::new(0.0, 30.0);
        z[(0, 1)] = Complex64::from(5.0);
        z[(1, 0)] = Complex64::from(5.0);
        let part = partition_impedance(&z, &[0]).unwrap();
        let r = parasitic_current_map(&part, &[Some(-30.0)]);
        assert!(matches!(r, Err(Error::Singular { .. })));
    }

    #[test]
    fn correlation_matrix_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let e = random_e(16, 4, &mut rng);
        let rho = correlation_matrix(&e);
        for j in 0..4 {
            assert!((rho[(j, j)] - Complex64::from(1.0)).norm() < 1e-12);
            for k in 0..4 {
                assert!(rho[(j, k)].norm() <= 1.0 + 1e-12);
                assert!((rho[(j, k)] - rho[(k, j)].conj()).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn objective_invariant_to_column_phase_and_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let e = random_e(16, 3, &mut rng);
        let base = correlation_objective(&e);
        let mut scaled = e.clone();
        let factor = Complex64::new(0.0, 1.3).exp() * 2.5;
        for r in 0..scaled.nrows() {
            scaled[(r, 1)] *= factor;
        }
        assert!((correlation_objective(&scaled) - base).abs() < 1e-12);
    }

    #[test]
    fn objective_continuous_in_loads() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let z = random_symmetric_z(5, &mut rng);
        let e = random_e(12, 5, &mut rng);
        let part = partition_impedance(&z, &[0, 1]).unwrap();
        let mut loads = vec![Some(40.0), Some(-15.0), Some(5.0)];
        let f0 = correlation_objective(&synthesize_patterns(&e, &part, &loads).unwrap().e_fed);
        loads[1] = Some(-15.0 + 1e-6);
        let f1 = correlation_objective(&synthesize_patterns(&e, &part, &loads).unwrap().e_fed);
        assert!((f1 - f0).abs() < 1e-3);
    }

    #[test]
    fn config_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        let cfg = FeedLoadConfig {
            feeds: vec![2, 5],
            loads: vec![Some(12.5), None, Some(-3.0)],
            objective: 0.25,
            iteration_log: vec![IterationRecord {
                outer: 0,
                stage: "loads".into(),
                objective: 0.3,
                feeds: vec![2, 5],
            }],
        };
        cfg.save(&path).unwrap();
        let back = FeedLoadConfig::load(&path).unwrap();
        assert_eq!(back.feeds, cfg.feeds);
        assert_eq!(back.loads, cfg.loads);
        assert_eq!(back.objective.to_bits(), cfg.objective.to_bits());
    }
}
