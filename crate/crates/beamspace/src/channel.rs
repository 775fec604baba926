//! Beamspace channel realizations.
//!
//! With ideally isolated receive antennas and the orthonormal transmit
//! pattern basis, the beamspace channel reduces to an i.i.d. CN(0,1) matrix
//! H_iid; the port-domain channel is recovered as H_iid Lambda^{1/2} Q^H.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::CMat;
use crate::error::{Error, Result};
use crate::grid::PasKind;
use crate::modal::ModalBasis;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelSpec {
    /// Receive-antenna count (N <= M required at use sites).
    pub m: usize,
    pub pas: PasKind,
    pub rng_seed: u64,
    pub trials: usize,
}

impl ChannelSpec {
    pub fn new(m: usize, rng_seed: u64, trials: usize) -> Self {
        ChannelSpec {
            m,
            pas: PasKind::Uniform3dSphere,
            rng_seed,
            trials,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 1 {
            return Err(Error::Invalid("M must be >= 1".into()));
        }
        if self.trials < 1 {
            return Err(Error::Invalid("trials must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ChannelRealization {
    pub h_iid: CMat,
    pub trial_index: usize,
    /// (seed, stream) pair that regenerates this trial.
    pub seed_state: (u64, u64),
}

/// Reproducible per-trial substream: trial t is independent of execution
/// order of the other trials.
pub fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

fn standard_complex<R: Rng>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Draws H_iid (M x N) with i.i.d. CN(0,1) entries for one trial.
///
/// This is the fast path; it is distributionally equivalent to the explicit
/// (1/eta) E_R^H H_v B_T construction in [`draw_h_iid_slow`].
pub fn draw_h_iid(spec: &ChannelSpec, basis: &ModalBasis, trial: usize) -> Result<ChannelRealization> {
    spec.validate()?;
    let n = basis.usable_rank();
    if spec.m < n {
        return Err(Error::Invalid(format!(
            "M = {} must be >= usable basis rank {n}",
            spec.m
        )));
    }
    let mut rng = trial_rng(spec.rng_seed, trial);
    let h_iid = DMatrix::from_fn(spec.m, n, |_, _| standard_complex(&mut rng));
    Ok(ChannelRealization {
        h_iid,
        trial_index: trial,
        seed_state: (spec.rng_seed, trial as u64),
    })
}

/// Slow oracle path: materializes the K x K virtual channel H_v and an ideal
/// orthonormal receive basis E_R, then forms (1/eta) E_R^H H_v B_T.
pub fn draw_h_iid_slow(
    spec: &ChannelSpec,
    basis: &ModalBasis,
    trial: usize,
) -> Result<ChannelRealization> {
    spec.validate()?;
    let k = basis.b.nrows();
    let n = basis.usable_rank();
    let e_r = ideal_receive_basis(k, spec.m, basis.eta_ohm, spec.rng_seed);
    let mut rng = trial_rng(spec.rng_seed, trial);
    let h_v = DMatrix::from_fn(k, k, |_, _| standard_complex(&mut rng));
    let b = basis.b.columns(0, n);
    let h_iid = (e_r.adjoint() * h_v * b) / Complex64::from(basis.eta_ohm);
    Ok(ChannelRealization {
        h_iid,
        trial_index: trial,
        seed_state: (spec.rng_seed, trial as u64),
    })
}

/// Deterministic K x M basis with (1/eta) E_R^H E_R = I, from the QR of a
/// seeded random matrix.
pub fn ideal_receive_basis(k: usize, m: usize, eta_ohm: f64, seed: u64) -> CMat {
    assert!(m <= k, "receive basis needs M <= K");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_ba5e);
    let a = DMatrix::from_fn(k, m, |_, _| standard_complex(&mut rng));
    let qr = a.qr();
    qr.q() * Complex64::from(eta_ohm.sqrt())
}

/// H = H_iid Lambda^{1/2} Q^H (port-domain channel).
pub fn compose_channel(h_iid: &CMat, basis: &ModalBasis) -> Result<CMat> {
    let n = h_iid.ncols();
    if n > basis.n() {
        return Err(Error::Dimension {
            field: "H_iid.cols",
            expected: basis.n(),
            got: n,
        });
    }
    let mut scaled = h_iid.clone();
    for c in 0..n {
        let s = Complex64::from(basis.lambda[c].max(0.0).sqrt());
        for r in 0..h_iid.nrows() {
            scaled[(r, c)] *= s;
        }
    }
    Ok(scaled * basis.q.columns(0, n).adjoint())
}
