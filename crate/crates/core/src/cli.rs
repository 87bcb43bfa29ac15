//! Command-line front end: argument parsing, run configuration and dispatch
//! to the pipelines. Every output records the configuration it came from.

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::bounds::bounds_report;
use crate::certify::certify_local_min;
use crate::descent::{descend, random_polygon, DescentConfig};
use crate::error::{Error, Result};
use crate::hessian::hessian_spectrum;
use crate::report::document;
use crate::stability::stability_trials;
use crate::torsion::torsion_report;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Spectrum,
    Certify,
    Descend,
    Bounds,
    Stability,
    Torsion,
}

#[derive(Debug, Parser)]
#[command(name = "polyspec", version, about = "Spectral shape optimization on polygons")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Hessian spectrum of J at the regular polygon.
    Spectrum(Args),
    /// Error budget and local-minimality verdict.
    Certify(Args),
    /// Gradient descent from a seeded random polygon.
    Descend(Args),
    /// Analytic constants of the finite reduction.
    Bounds(Args),
    /// Perturbation bounds against measured eigenvalue drift.
    Stability(Args),
    /// Torsion functional and its scale-invariant Hessian.
    Torsion(Args),
}

#[derive(Clone, Debug, clap::Args)]
pub struct Args {
    #[arg(long, default_value_t = 5)]
    pub n: usize,
    #[arg(long, default_value_t = 64)]
    pub m: usize,
    /// `lo:hi:count` or a comma-separated list.
    #[arg(long, default_value = "0.01:0.49:49")]
    pub gamma_grid: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output path prefix; `.json` (and `.csv` where tabular) are appended.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, env = "POLYSPEC_THREADS")]
    pub threads: Option<usize>,
    /// Upper bound `K` on `l_n^* / pi` for `bounds`.
    #[arg(long, default_value_t = 8.0)]
    pub k_bound: f64,
    /// Covering radius for `bounds`.
    #[arg(long, default_value_t = 1e-3)]
    pub delta: f64,
    /// Perturbation size for `stability`.
    #[arg(long, default_value_t = 1e-3)]
    pub eps: f64,
    /// Trial count for `stability`.
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    /// Finest refinement level for `descend` and `stability`.
    #[arg(long, default_value_t = 6)]
    pub levels: usize,
}

/// Validated configuration, recorded verbatim in every output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    pub n: usize,
    pub m: usize,
    pub gamma_grid: Vec<f64>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub k_bound: f64,
    pub delta: f64,
    pub eps: f64,
    pub trials: usize,
    pub levels: usize,
}

/// Parses `lo:hi:count` (inclusive, evenly spaced) or `g1,g2,...`.
pub fn parse_gamma_grid(spec: &str) -> Result<Vec<f64>> {
    let num = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("gamma grid entry {s:?}: {e}")));
    let grid = if let Some((lo, rest)) = spec.split_once(':') {
        let (hi, count) = rest
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("gamma grid {spec:?} must be lo:hi:count")))?;
        let (lo, hi) = (num(lo)?, num(hi)?);
        let count: usize = count.trim().parse().map_err(|e| Error::Parse(format!("gamma grid count: {e}")))?;
        match count {
            0 => Vec::new(),
            1 => vec![lo],
            c => (0..c).map(|i| lo + (hi - lo) * i as f64 / (c - 1) as f64).collect(),
        }
    } else {
        spec.split(',').map(num).collect::<Result<Vec<_>>>()?
    };
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty gamma grid".into()));
    }
    if let Some(g) = grid.iter().find(|g| !(**g > 0.0 && **g < 0.5)) {
        return Err(Error::InvalidArgument(format!("gamma must lie in (0, 1/2), got {g}")));
    }
    Ok(grid)
}

impl RunConfig {
    pub fn from_args(command: Command, a: &Args) -> Result<Self> {
        if a.n < 3 {
            return Err(Error::InvalidArgument(format!("n must be at least 3, got {}", a.n)));
        }
        if a.m == 0 {
            return Err(Error::InvalidArgument("m must be positive".into()));
        }
        if a.threads == Some(0) {
            return Err(Error::InvalidArgument("threads must be positive".into()));
        }
        let gamma_grid = parse_gamma_grid(&a.gamma_grid)?;
        Ok(Self {
            command,
            n: a.n,
            m: a.m,
            gamma_grid,
            seed: a.seed,
            out: a.out.clone(),
            threads: a.threads,
            k_bound: a.k_bound,
            delta: a.delta,
            eps: a.eps,
            trials: a.trials,
            levels: a.levels,
        })
    }
}

impl Cli {
    pub fn config(&self) -> Result<RunConfig> {
        let (c, a) = match &self.command {
            Sub::Spectrum(a) => (Command::Spectrum, a),
            Sub::Certify(a) => (Command::Certify, a),
            Sub::Descend(a) => (Command::Descend, a),
            Sub::Bounds(a) => (Command::Bounds, a),
            Sub::Stability(a) => (Command::Stability, a),
            Sub::Torsion(a) => (Command::Torsion, a),
        };
        RunConfig::from_args(c, a)
    }
}

/// JSON document and optional CSV table of one run.
#[derive(Clone, Debug)]
pub struct Output {
    pub json: String,
    pub csv: Option<String>,
}

#[derive(Serialize)]
struct StabilityResult {
    trials: Vec<crate::stability::StabilityTrial>,
    all_hold: bool,
}

fn stability_csv(t: &[crate::stability::StabilityTrial]) -> String {
    use crate::report::{fmt_sig, hex};
    let mut s = String::from("seed,eps,measured,bound,e1,e2,e3,e4,measured_hex,bound_hex\n");
    for r in t {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.seed,
            fmt_sig(r.eps),
            fmt_sig(r.measured),
            fmt_sig(r.bound),
            fmt_sig(r.bounds.e1),
            fmt_sig(r.bounds.e2),
            fmt_sig(r.bounds.e3),
            fmt_sig(r.bounds.e4),
            hex(r.measured),
            hex(r.bound)
        ));
    }
    s
}

/// Runs the configured command.
pub fn run(cfg: &RunConfig) -> Result<Output> {
    match cfg.command {
        Command::Spectrum => {
            let s = hessian_spectrum(cfg.n, cfg.m)?;
            Ok(Output { json: document(cfg, &s)?, csv: Some(s.to_csv()) })
        }
        Command::Certify => {
            let v = certify_local_min(cfg.n, cfg.m, &cfg.gamma_grid)?;
            Ok(Output { json: document(cfg, &v)?, csv: None })
        }
        Command::Descend => {
            let dc = DescentConfig {
                levels: (2..=cfg.levels.max(2)).collect(),
                eval_levels: (cfg.levels.max(2), cfg.levels.max(2) + 1),
                seed: cfg.seed,
                ..Default::default()
            };
            let r = descend(&random_polygon(cfg.n, cfg.seed)?, &dc)?;
            Ok(Output { json: document(cfg, &r)?, csv: Some(r.to_csv()) })
        }
        Command::Bounds => {
            let b = bounds_report(cfg.k_bound, cfg.n, cfg.delta)?;
            Ok(Output { json: document(cfg, &b)?, csv: None })
        }
        Command::Stability => {
            let trials = stability_trials(cfg.n, cfg.eps, cfg.trials, cfg.seed, cfg.levels)?;
            let all_hold = trials.iter().all(|t| t.holds());
            let csv = stability_csv(&trials);
            Ok(Output { json: document(cfg, &StabilityResult { trials, all_hold })?, csv: Some(csv) })
        }
        Command::Torsion => {
            let t = torsion_report(cfg.n, cfg.m)?;
            Ok(Output { json: document(cfg, &t)?, csv: Some(t.to_csv()) })
        }
    }
}

/// Writes `out.json` / `out.csv`, or prints the JSON when no path is set.
pub fn emit(cfg: &RunConfig, out: &Output) -> Result<()> {
    match &cfg.out {
        Some(p) => {
            std::fs::write(p.with_extension("json"), &out.json)?;
            if let Some(csv) = &out.csv {
                std::fs::write(p.with_extension("csv"), csv)?;
            }
        }
        None => {
            use std::io::Write;
            writeln!(std::io::stdout().lock(), "{}", out.json)?;
        }
    }
    Ok(())
}

/// Error report printed on failure.
pub fn error_json(e: &Error) -> String {
    serde_json::json!({ "error": e.to_string() }).to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Result<RunConfig> {
        let mut v = vec!["polyspec"];
        v.extend_from_slice(args);
        Cli::try_parse_from(v).map_err(|e| Error::Parse(e.to_string()))?.config()
    }

    #[test]
    fn gamma_grids() {
        let g = parse_gamma_grid("0.1:0.3:3").unwrap();
        assert_eq!(g.len(), 3);
        assert!((g[1] - 0.2).abs() < 1e-15);
        assert_eq!(parse_gamma_grid("0.25, 0.3").unwrap(), vec![0.25, 0.3]);
        assert!(parse_gamma_grid("0.5").is_err());
        assert!(parse_gamma_grid("0.1:0.2").is_err());
        assert!(parse_gamma_grid("x").is_err());
        let d = crate::certify::default_gamma_grid();
        let p = parse_gamma_grid("0.01:0.49:49").unwrap();
        assert!(p.iter().zip(&d).all(|(a, b)| (a - b).abs() < 1e-15) && p.len() == d.len());
    }

    #[test]
    fn flags_and_validation() {
        let c = parse(&["bounds", "--n", "6", "--seed", "7", "--threads", "2"]).unwrap();
        assert_eq!((c.command, c.n, c.seed, c.threads), (Command::Bounds, 6, 7, Some(2)));
        assert!(parse(&["spectrum", "--n", "2"]).is_err());
        assert!(parse(&["spectrum", "--threads", "0"]).is_err());
        assert!(parse(&["frobnicate"]).is_err());
    }

    #[test]
    fn bounds_document_records_config_and_round_trips() {
        let c = parse(&["bounds", "--n", "5"]).unwrap();
        let out = run(&c).unwrap();
        let back: crate::bounds::BoundsReport = crate::report::load_result(&out.json).unwrap();
        assert_eq!(back.constants.k, crate::bounds::surgery_constants(8.0).unwrap().k);
        assert_eq!(back.d_max, crate::bounds::surgery_constants(8.0).unwrap().d_max(5));
        let v: serde_json::Value = serde_json::from_str(&out.json).unwrap();
        assert_eq!(v["config"]["n"], 5);
        assert_eq!(v["config"]["command"], "bounds");
        assert_eq!(run(&c).unwrap().json, out.json);
    }

    #[test]
    fn coarse_spectrum_reports_four_zeros() {
        let c = parse(&["spectrum", "--n", "5", "--m", "4"]).unwrap();
        let out = run(&c).unwrap();
        let s: crate::hessian::HessianSpectrum = crate::report::load_result(&out.json).unwrap();
        assert_eq!(s.zero_count, 4);
        assert!(out.csv.unwrap().lines().count() > 1);
    }
}
