use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use sha2::{Digest, Sha256};

use beamspace::capacity::{
    capacity_current_weighted, dual_wf_diag, monte_carlo_capacity,
    ConstraintSpec, GainSpectrum, Policy,
};
use beamspace::channel::trial_rng;
use beamspace::dataset::{
    load_dataset, save_dataset, synthesize_dipole_grid, CMat, DipoleGridSpec, PortDataset,
    SPEED_OF_LIGHT,
};
use beamspace::error::Error;
use beamspace::grid::AngleGrid;
use beamspace::modal::{compute_correlation, modal_decomposition, ModalBasis};
use beamspace::network::{partition_impedance, synthesize_patterns};
use beamspace::optimizer::{alternate, OptimizerOptions};
use rand_distr::{Distribution, StandardNormal};

#[derive(Parser)]
#[command(name = "beamspace", version, about = "Beamspace capacity and loaded N-port experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Radiated,
    Current,
    Dual,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Ep,
    Wf,
}

#[derive(Clone, Copy, ValueEnum)]
enum RxArg {
    Mirror,
    Ideal,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize a dipole-grid port dataset and save it as NPORT-JSON.
    Gen {
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        /// Element spacing in meters.
        #[arg(long)]
        spacing: f64,
        /// Frequency in Hz.
        #[arg(long)]
        freq: f64,
        /// Polar samples of the full-sphere grid (azimuth gets twice this).
        #[arg(long, default_value_t = 16)]
        theta: usize,
        /// Feasible feed ports, 1-based comma list; all ports if omitted.
        #[arg(long)]
        feeds: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo capacity curve over P for one constraint mode and policy.
    Bounds {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long, value_enum, default_value = "wf")]
        policy: PolicyArg,
        #[arg(long, default_value_t = 20.0)]
        snr_db: f64,
        /// Dual-constraint ratio I_in^2 / P_rad; required for --mode dual.
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long, default_value = "1,2,4,8")]
        p_list: String,
        #[arg(long, default_value_t = 500)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Effective aerial degrees of freedom over a geometric epsilon grid.
    Eadof {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        eps_min: f64,
        #[arg(long, default_value_t = 1.0)]
        eps_max: f64,
        #[arg(long, default_value_t = 100)]
        eps_count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Current-constraint capacity vs sub-elements per wavelength.
    Convergence {
        #[arg(long, default_value = "2,4,6,8,10")]
        densities: String,
        #[arg(long, default_value_t = 20.0)]
        snr_db: f64,
        #[arg(long, default_value_t = 2.4e9)]
        freq: f64,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "mirror")]
        rx: RxArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Alternating feed/load optimization plus a capacity comparison.
    Optimize {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        q: usize,
        #[arg(long, default_value_t = 3)]
        restarts: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 20.0)]
        snr_db: f64,
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
        #[arg(long)]
        out_config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump the modal resistance spectrum of a dataset as CSV.
    Export {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    if let Ok(v) = std::env::var("BEAMSPACE_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Singular { .. }
        | Error::NonConvergence { .. }
        | Error::NonFinite { .. }
        | Error::Infeasible { .. } => 3,
        _ => 2,
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, Error> {
    s.split(',')
        .map(|t| t.trim().parse::<T>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| Error::Invalid(format!("cannot parse {what} list: {s}")))
}

fn fp(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), Error> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn write_manifest(
    out: &Path,
    command: &str,
    params: serde_json::Value,
    seed: u64,
    dataset: Option<&Path>,
) -> Result<(), Error> {
    let dataset_sha256 = match dataset {
        Some(p) => {
            let bytes = std::fs::read(p)?;
            let mut h = Sha256::new();
            h.update(&bytes);
            Some(format!("{:x}", h.finalize()))
        }
        None => None,
    };
    let ts = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let manifest = serde_json::json!({
        "command": command,
        "params": params,
        "seed": seed,
        "dataset_sha256": dataset_sha256,
        "version": env!("CARGO_PKG_VERSION"),
        "timestamp_unix": ts,
    });
    let mut path = out.as_os_str().to_owned();
    path.push(".manifest.json");
    std::fs::write(PathBuf::from(path), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn load_basis(path: &Path) -> Result<(PortDataset, ModalBasis), Error> {
    let ds = load_dataset(path)?;
    let kt = compute_correlation(&ds)?;
    let basis = modal_decomposition(&kt, &ds)?;
    Ok((ds, basis))
}

fn run(cmd: Cmd) -> Result<(), Error> {
    match cmd {
        Cmd::Gen {
            rows,
            cols,
            spacing,
            freq,
            theta,
            feeds,
            out,
        } => {
            let mut spec =
                DipoleGridSpec::new(rows, cols, spacing, freq, AngleGrid::full_sphere(theta, 2));
            if let Some(list) = &feeds {
                let one_based: Vec<usize> = parse_list(list, "feeds")?;
                if one_based.iter().any(|&f| f == 0 || f > rows * cols) {
                    return Err(Error::Invalid("feed ports are 1-based".into()));
                }
                spec.feasible_feeds = Some(one_based.iter().map(|&f| f - 1).collect());
            }
            let ds = synthesize_dipole_grid(&spec)?;
            save_dataset(&ds, &out)?;
            write_manifest(
                &out,
                "gen",
                serde_json::json!({
                    "rows": rows, "cols": cols, "spacing": spacing,
                    "freq": freq, "theta": theta, "feeds": feeds,
                }),
                0,
                Some(&out),
            )
        }
        Cmd::Bounds {
            dataset,
            mode,
            policy,
            snr_db,
            epsilon,
            p_list,
            trials,
            seed,
            out,
        } => {
            let (_, basis) = load_basis(&dataset)?;
            let budget = 10f64.powf(snr_db / 10.0);
            let cons = match mode {
                ModeArg::Radiated => ConstraintSpec::radiated(budget, 1.0),
                ModeArg::Current => ConstraintSpec::current(budget, 1.0),
                ModeArg::Dual => {
                    let eps = epsilon
                        .ok_or_else(|| Error::Invalid("--epsilon required for dual mode".into()))?;
                    ConstraintSpec::dual(budget, eps * budget, 1.0)
                }
            };
            let pol = match policy {
                PolicyArg::Ep => Policy::Ep,
                PolicyArg::Wf => Policy::Wf,
            };
            let ps: Vec<usize> = parse_list(&p_list, "P")?;
            let curve = monte_carlo_capacity(&basis, &cons, pol, &ps, seed, trials)?;
            let rows: Vec<Vec<String>> = curve
                .iter()
                .map(|pt| {
                    vec![
                        pt.p.to_string(),
                        format!("{:?}", pt.policy).to_lowercase(),
                        format!("{:?}", pt.mode).to_lowercase(),
                        fp(pt.snr_db),
                        fp(pt.epsilon),
                        fp(pt.capacity_mean_bits),
                        fp(pt.capacity_std),
                        pt.n_eff.to_string(),
                        fp(pt.ideal_mean_bits),
                        pt.infeasible.to_string(),
                    ]
                })
                .collect();
            write_csv(
                &out,
                &[
                    "p",
                    "policy",
                    "mode",
                    "snr_db",
                    "epsilon",
                    "capacity_mean_bits",
                    "capacity_std",
                    "n_eff",
                    "ideal_mean_bits",
                    "infeasible",
                ],
                &rows,
            )?;
            write_manifest(
                &out,
                "bounds",
                serde_json::json!({
                    "mode": format!("{:?}", cons.mode), "policy": &p_list,
                    "snr_db": snr_db, "epsilon": epsilon, "p_list": &p_list,
                    "trials": trials,
                }),
                seed,
                Some(&dataset),
            )
        }
        Cmd::Eadof {
            dataset,
            eps_min,
            eps_max,
            eps_count,
            out,
        } => {
            if !(eps_min > 0.0 && eps_max > eps_min && eps_count >= 2) {
                return Err(Error::Invalid("need 0 < eps_min < eps_max, count >= 2".into()));
            }
            let (_, basis) = load_basis(&dataset)?;
            let lambda = &basis.lambda[..basis.usable_rank()];
            let ratio = (eps_max / eps_min).powf(1.0 / (eps_count - 1) as f64);
            let mut rows = Vec::with_capacity(eps_count);
            let mut prev = 0usize;
            for i in 0..eps_count {
                let eps = eps_min * ratio.powi(i as i32);
                let n_eff = beamspace::capacity::eadof(lambda, eps);
                debug_assert!(n_eff >= prev);
                prev = n_eff;
                rows.push(vec![fp(eps), n_eff.to_string()]);
            }
            write_csv(&out, &["epsilon", "n_eff"], &rows)?;
            write_manifest(
                &out,
                "eadof",
                serde_json::json!({ "eps_min": eps_min, "eps_max": eps_max, "eps_count": eps_count }),
                0,
                Some(&dataset),
            )
        }
        Cmd::Convergence {
            densities,
            snr_db,
            freq,
            trials,
            seed,
            rx,
            out,
        } => {
            let ds_list: Vec<usize> = parse_list(&densities, "density")?;
            if ds_list.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Invalid("densities must be ascending".into()));
            }
            let rows = convergence_rows(&ds_list, snr_db, freq, trials, seed, rx)?;
            write_csv(
                &out,
                &[
                    "density_per_wavelength",
                    "n_ports",
                    "usable_rank",
                    "capacity_mean_bits",
                    "capacity_std",
                ],
                &rows,
            )?;
            write_manifest(
                &out,
                "convergence",
                serde_json::json!({
                    "densities": &densities, "snr_db": snr_db, "freq": freq,
                    "trials": trials, "rx": match rx { RxArg::Mirror => "mirror", RxArg::Ideal => "ideal" },
                }),
                seed,
                None,
            )
        }
        Cmd::Optimize {
            dataset,
            q,
            restarts,
            seed,
            trials,
            snr_db,
            epsilon,
            out_config,
            out,
        } => {
            let (ds, basis) = load_basis(&dataset)?;
            let opts = OptimizerOptions::default();
            let mut best: Option<(beamspace::network::FeedLoadConfig, _)> = None;
            for r in 0..restarts.max(1) {
                let (cfg, state) = alternate(&ds, q, seed.wrapping_add(r), &opts)?;
                if best.as_ref().map_or(true, |(b, _)| cfg.objective < b.objective) {
                    best = Some((cfg, state));
                }
            }
            let (cfg, _) = best.unwrap();
            cfg.save(&out_config)?;
            let budget = 10f64.powf(snr_db / 10.0);
            let cons = ConstraintSpec::dual(budget, epsilon * budget, 1.0);
            let cmp = fed_capacity_comparison(&ds, &basis, &cfg, &cons, seed, trials)?;
            let row = vec![
                q.to_string(),
                fp(snr_db),
                fp(epsilon),
                fp(cmp.0),
                fp(cmp.1),
                fp(cmp.2),
                fp(cfg.objective),
            ];
            write_csv(
                &out,
                &[
                    "q",
                    "snr_db",
                    "epsilon",
                    "fed_mean_bits",
                    "bound_mean_bits",
                    "ideal_mean_bits",
                    "objective",
                ],
                &[row],
            )?;
            write_manifest(
                &out,
                "optimize",
                serde_json::json!({
                    "q": q, "restarts": restarts, "trials": trials,
                    "snr_db": snr_db, "epsilon": epsilon,
                }),
                seed,
                Some(&dataset),
            )
        }
        Cmd::Export { dataset, out } => {
            let (_, basis) = load_basis(&dataset)?;
            let rows: Vec<Vec<String>> = basis
                .lambda
                .iter()
                .enumerate()
                .map(|(i, &l)| vec![(i + 1).to_string(), fp(l)])
                .collect();
            write_csv(&out, &["mode", "lambda_ohm"], &rows)?;
            write_manifest(&out, "export", serde_json::json!({}), 0, Some(&dataset))
        }
    }
}

fn convergence_rows(
    densities: &[usize],
    snr_db: f64,
    freq: f64,
    trials: usize,
    seed: u64,
    rx: RxArg,
) -> Result<Vec<Vec<String>>, Error> {
    let wavelength = SPEED_OF_LIGHT / freq;
    let i_in_sq = 10f64.powf(snr_db / 10.0);
    let spec = ConstraintSpec::current(i_in_sq, 1.0);
    let mut rows = Vec::new();
    for &d in densities {
        if d < 2 {
            return Err(Error::Invalid("density must be >= 2".into()));
        }
        // One square wavelength aperture, d sub-elements per wavelength,
        // 2D azimuth PAS, single polarization.
        let grid = AngleGrid::azimuth_ring(512, 1);
        let mut gspec = DipoleGridSpec::new(d, d, wavelength / d as f64, freq, grid);
        // Subdividing a fixed aperture: sub-element length tracks the pitch so
        // the aggregate radiation resistance is density-independent.
        gspec.sub_element_length_m = Some(gspec.spacing_m);
        let ds = synthesize_dipole_grid(&gspec)?;
        let kt = compute_correlation(&ds)?;
        let basis = modal_decomposition(&kt, &ds)?;
        let n = basis.usable_rank();
        let lambda = &basis.lambda[..n];
        let lambda_rx: Vec<f64> = match rx {
            RxArg::Mirror => lambda.to_vec(),
            RxArg::Ideal => vec![1.0; n],
        };
        let mut caps = Vec::with_capacity(trials);
        for t in 0..trials {
            let mut rng = trial_rng(seed, t);
            let h = CMat::from_fn(n, n, |_, _| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(re, im) / 2f64.sqrt()
            });
            let r = capacity_current_weighted(&h, lambda, &lambda_rx, &spec, Policy::Wf)?;
            caps.push(r.capacity_bits);
        }
        let mean = caps.iter().sum::<f64>() / trials as f64;
        let var = caps.iter().map(|c| (c - mean).powi(2)).sum::<f64>()
            / (trials.max(2) - 1) as f64;
        rows.push(vec![
            d.to_string(),
            ds.n_ports().to_string(),
            n.to_string(),
            fp(mean),
            fp(var.sqrt()),
        ]);
    }
    Ok(rows)
}

/// Monte Carlo (fed system, no-feed top-Q bound, ideal MIMO) capacity means
/// for an optimized feed/load configuration under the dual constraints.
fn fed_capacity_comparison(
    ds: &PortDataset,
    basis: &ModalBasis,
    cfg: &beamspace::network::FeedLoadConfig,
    cons: &ConstraintSpec,
    seed: u64,
    trials: usize,
) -> Result<(f64, f64, f64), Error> {
    let feeds0: Vec<usize> = cfg.feeds.iter().map(|&f| f - 1).collect();
    let part = partition_impedance(&ds.z, &feeds0)?;
    let syn = synthesize_patterns(&ds.e, &part, &cfg.loads)?;
    let q = feeds0.len();
    let lam_eff = beamspace::network::fed_effective_resistances(&syn, ds.eta_ohm);
    let lam_top = &basis.top(q.min(basis.usable_rank())).lambda;

    let mut fed_acc = 0.0;
    let mut bound_acc = 0.0;
    let mut ideal_acc = 0.0;
    for t in 0..trials {
        let mut rng = trial_rng(seed, t);
        let h = CMat::from_fn(q, q, |_, _| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(re, im) / 2f64.sqrt()
        });
        let s = GainSpectrum::from_channel(&h).s;
        fed_acc += dual_wf_diag(&s, &lam_eff, cons)?.capacity_bits;
        bound_acc += dual_wf_diag(&s[..lam_top.len()], lam_top, cons)?.capacity_bits;
        let ideal = ConstraintSpec::radiated(cons.p_rad, cons.sigma_sq);
        ideal_acc += beamspace::capacity::capacity_radiated(&h, &ideal, Policy::Wf)?.capacity_bits;
    }
    let t = trials as f64;
    Ok((fed_acc / t, bound_acc / t, ideal_acc / t))
}
