use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use anyhow::Context;
use kgflow::nonlinearity::check_null;
use kgflow::profile::{fit_modified_scattering, phi, FitOptions, FrameOptions, NormalFormObserver, ProfileSeries, StationObserver};
use kgflow::semiclassical::{gaussian_symbol, lambda_probe_symbol, moyal_error, opnorm_probe, BenchOptions, NormTarget, ScalingFit};
use kgflow::solver::{run, write_norms, write_snapshot, Observer, RunOutput, SolverError};
use serde::Serialize;

use crate::config::{RunConfig, Target};
use crate::Command;

pub struct Failure {
    pub code: u8,
    pub inner: anyhow::Error,
}

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 2, inner: e.into() }
}

fn runtime_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 1, inner: e.into() }
}

type Res<T> = Result<T, Failure>;

pub fn dispatch(cmd: Command, config: Option<&Path>, out: &Path) -> Res<()> {
    let mut cfg = match config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display())).map_err(config_err)?;
            RunConfig::parse(&text).with_context(|| format!("parsing {}", p.display())).map_err(config_err)?
        }
        None => RunConfig::default(),
    };
    cfg.validate().map_err(config_err)?;
    if cfg.solver.dt.is_none() {
        let grid = cfg.grid().map_err(config_err)?;
        cfg.solver.dt = Some(cfg.solver.to_solver().resolved_dt(&grid));
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display())).map_err(runtime_err)?;
    let resolved = serde_json::to_string_pretty(&cfg).map_err(runtime_err)?;
    fs::write(out.join("resolved_config.json"), resolved + "\n").map_err(runtime_err)?;
    match cmd {
        Command::CheckNull => check_null_cmd(&cfg, out),
        Command::Simulate => simulate(&cfg, out, &mut []).map(|_| ()),
        Command::ExtractProfile => extract_profile(&cfg, out).map(|_| ()),
        Command::FitScattering => fit_scattering(&cfg, out),
        Command::MoyalBench => moyal_bench(&cfg, out),
        Command::OpnormBench => opnorm_bench(&cfg, out),
    }
}

fn create(out: &Path, name: &str) -> Res<BufWriter<File>> {
    let p = out.join(name);
    File::create(&p).map(BufWriter::new).with_context(|| format!("creating {}", p.display())).map_err(runtime_err)
}

#[derive(Serialize)]
struct NullJson {
    nonlinearity: String,
    verdict: bool,
    /// `Q(x) = (1 - x^2)^(3/2) Phi(x)`, ascending powers, exact rationals
    #[serde(rename = "Q_coefficients")]
    q_coefficients: Vec<String>,
    phi: String,
    phi1_description: String,
    phi1_at_zero: f64,
}

fn check_null_cmd(cfg: &RunConfig, out: &Path) -> Res<()> {
    let p = cfg.nonlinearity().map_err(config_err)?;
    let rep = check_null(&p).map_err(config_err)?;
    let json = NullJson {
        nonlinearity: p.to_string(),
        verdict: rep.verdict,
        q_coefficients: rep.q_coeffs.iter().map(|c| c.to_string()).collect(),
        phi: rep.phi.to_string(),
        phi1_description: rep.phi1.to_string(),
        phi1_at_zero: rep.phi1.eval(0.0).map_err(runtime_err)?,
    };
    let text = serde_json::to_string_pretty(&json).map_err(runtime_err)?;
    fs::write(out.join("null_report.json"), text + "\n").map_err(runtime_err)?;
    println!("verdict: {}", rep.verdict);
    Ok(())
}

fn simulate(cfg: &RunConfig, out: &Path, observers: &mut [&mut dyn Observer<f64>]) -> Res<RunOutput<f64>> {
    let p = cfg.nonlinearity().map_err(config_err)?;
    let grid = cfg.grid().map_err(config_err)?;
    match run(&grid, &cfg.solver.to_solver(), &p, observers) {
        Ok(o) => {
            write_norms(&o.norms, create(out, "norms.csv")?).map_err(runtime_err)?;
            write_snapshot(&grid, &o.final_state, create(out, "snapshot_final.csv")?).map_err(runtime_err)?;
            Ok(o)
        }
        Err(f) => {
            if let Some(partial) = &f.partial {
                write_norms(&partial.norms, create(out, "norms.csv")?).map_err(runtime_err)?;
                write_snapshot(&grid, &partial.final_state, create(out, "snapshot_last_good.csv")?).map_err(runtime_err)?;
            }
            match f.error {
                SolverError::Blowup { .. } | SolverError::NaN { .. } => Err(runtime_err(f.error)),
                e => Err(config_err(e)),
            }
        }
    }
}

fn extract_profile(cfg: &RunConfig, out: &Path) -> Res<ProfileSeries> {
    if cfg.profile.stations.is_empty() {
        return Err(config_err(kgflow::profile::ProfileError::InsufficientData("empty station list".into())));
    }
    let p = cfg.nonlinearity().map_err(config_err)?;
    let mut so = StationObserver::new(cfg.solver.epsilon, cfg.profile.stations.clone(), cfg.solver.t_end, cfg.solver.sample_dt).map_err(config_err)?;
    let fo = FrameOptions { half_width: cfg.frame.half_width, xi_max: cfg.frame.xi_max, delta0: cfg.profile.delta0, gamma_width: cfg.frame.gamma_width };
    let mut nf = NormalFormObserver::new(cfg.profile.normal_form_times.clone(), p, fo);
    simulate(cfg, out, &mut [&mut so, &mut nf])?;
    so.series.write_csv(create(out, "profile.csv")?).map_err(runtime_err)?;
    if !nf.records.is_empty() {
        let mut w = csv::Writer::from_writer(create(out, "normal_form.csv")?);
        w.write_record(["t", "vsigma_minus_vlambda_linf", "f_minus_vlambda_linf"]).map_err(runtime_err)?;
        for (t, a, b) in &nf.records {
            w.write_record([t, a, b].map(|v| format!("{v:.17e}"))).map_err(runtime_err)?;
        }
        w.flush().map_err(runtime_err)?;
    }
    Ok(so.series)
}

fn fit_scattering(cfg: &RunConfig, out: &Path) -> Res<()> {
    let series = match &cfg.profile.series {
        Some(path) => {
            let f = File::open(path).with_context(|| format!("opening {path}")).map_err(config_err)?;
            ProfileSeries::read_csv(cfg.solver.epsilon, f).map_err(config_err)?
        }
        None => extract_profile(cfg, out)?,
    };
    let phis: Vec<f64> = series.stations.iter().map(|&x| phi(x)).collect();
    let opts = FitOptions { t_min: cfg.profile.t_min, inverse_t: cfg.profile.inverse_t };
    let p = cfg.nonlinearity().map_err(config_err)?;
    let fit = fit_modified_scattering(&series, &phis, &opts).map_err(config_err)?.with_prediction(&p).map_err(config_err)?;
    fit.write_csv(create(out, "fit.csv")?).map_err(runtime_err)?;
    for s in &fit.stations {
        println!("x = {:+.3}: slope {:.6e}, predicted {:.6e}", s.x, s.phase_slope, s.predicted_slope.unwrap_or(f64::NAN));
    }
    Ok(())
}

fn write_bench(out: &Path, name: &str, label: &str, rows: &[(String, ScalingFit)]) -> Res<()> {
    let mut w = csv::Writer::from_writer(create(out, name)?);
    w.write_record(["h", label, "error", "fitted_slope"]).map_err(runtime_err)?;
    for (tag, fit) in rows {
        for pt in &fit.points {
            w.write_record([format!("{:.17e}", pt.h), tag.clone(), format!("{:.17e}", pt.value), format!("{:.17e}", fit.slope)]).map_err(runtime_err)?;
        }
        for warn in &fit.warnings {
            eprintln!("warning: {warn}");
        }
    }
    w.flush().map_err(runtime_err)
}

fn moyal_bench(cfg: &RunConfig, out: &Path) -> Res<()> {
    let b = &cfg.bench;
    let a = gaussian_symbol(0.0, 0.0, b.sigma);
    let c = gaussian_symbol(b.shift[0], b.shift[1], b.sigma);
    let hs: Vec<f64> = b.h_exponents.iter().map(|&e| 2f64.powi(-e)).collect();
    let opts = BenchOptions { half_width: b.half_width, xi_max: b.xi_max, iterations: b.iterations, seed: cfg.seed };
    let mut rows = vec![];
    for &k in &b.orders {
        let fit = moyal_error(&a, &c, k, &hs, &opts).map_err(config_err)?;
        println!("k = {k}: slope {:.4}", fit.slope);
        rows.push((k.to_string(), fit));
    }
    write_bench(out, "moyal.csv", "k", &rows)
}

fn opnorm_bench(cfg: &RunConfig, out: &Path) -> Res<()> {
    let b = &cfg.bench;
    let hs: Vec<f64> = b.probe_exponents.iter().map(|&e| 2f64.powi(-e)).collect();
    let opts = BenchOptions { half_width: b.probe_half_width, xi_max: b.probe_xi_max, iterations: b.iterations, seed: cfg.seed };
    let (target, tag) = match b.target {
        Target::L2ToL2 => (NormTarget::L2ToL2, "l2-to-l2"),
        Target::L2ToLinf => (NormTarget::L2ToLinf, "l2-to-linf"),
    };
    let fit = opnorm_probe(&lambda_probe_symbol(b.probe_width), &hs, target, &opts).map_err(config_err)?;
    println!("{tag}: exponent {:.4}", fit.slope);
    write_bench(out, "opnorm.csv", "target", &[(tag.to_string(), fit)])
}
