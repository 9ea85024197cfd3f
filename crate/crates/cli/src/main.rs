//! `robcov` command line: estimate on CSV data, run simulation studies,
//! and run the statistical validation suites.

use clap::{Parser, Subcommand};
use robcov::elliptical::{read_data_csv, AnyDataMatrix, DataMatrix};
use robcov::harness::{run_experiment, validation_suite, ExperimentConfig, ExperimentKind};
use robcov::shrinkage::{estimate, EstimateOptions, EstimatorFamily, SphericityMethod};
use robcov::{Error, Field, Scalar};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(name = "robcov", version, about = "Robust shrinkage covariance estimation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit a shrinkage M-estimator on a CSV data matrix.
    Estimate {
        /// Input CSV (rows = observations; `#field=complex` header for
        /// interleaved re/im columns).
        #[arg(long)]
        input: PathBuf,
        /// rscm | rhub | rtyl | rmvt, optionally suffixed -ell1/-ell2.
        #[arg(long)]
        method: String,
        /// Huber quantile level.
        #[arg(long, default_value_t = 0.7)]
        q: f64,
        /// Sphericity estimator: ell1 (default) or ell2.
        #[arg(long)]
        sphericity: Option<String>,
        /// Output JSON path.
        #[arg(long)]
        output: PathBuf,
    },
    /// Run a Monte Carlo experiment from a JSON config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config worker thread count (0 = auto).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run a closed-form validation suite and exit nonzero on failure.
    Validate {
        /// lemma1 | lemma2 | theta | beta_oracle
        #[arg(long)]
        suite: String,
        #[arg(long)]
        config: PathBuf,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_)
        | Error::Parse { .. }
        | Error::Io(_)
        | Error::Domain(_)
        | Error::DegenerateInput(_)
        | Error::InsufficientSample { .. } => 2,
        Error::NotPositiveDefinite(_)
        | Error::Conditioning(_)
        | Error::DivergentIntegral(_)
        | Error::BracketFailure { .. } => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.cmd {
        Cmd::Estimate {
            input,
            method,
            q,
            sphericity,
            output,
        } => {
            let (family, sph) = parse_method(&method, sphericity.as_deref())?;
            let data = read_data_csv(BufReader::new(File::open(&input)?))?;
            let opts = EstimateOptions {
                huber_q: q,
                ..EstimateOptions::default()
            };
            let json = match data {
                AnyDataMatrix::Real(m) => estimate_json(&m, family, sph, &opts)?,
                AnyDataMatrix::Complex(m) => estimate_json(&m, family, sph, &opts)?,
            };
            let mut w = BufWriter::new(File::create(&output)?);
            serde_json::to_writer_pretty(&mut w, &json)
                .map_err(|e| Error::Config(format!("serialize output: {e}")))?;
            writeln!(w)?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Simulate {
            config,
            out,
            seed,
            threads,
        } => {
            let text = std::fs::read_to_string(&config)?;
            let mut cfg = ExperimentConfig::from_json(&text)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(t) = threads {
                cfg.threads = t;
            }
            let start = Instant::now();
            let result = run_experiment(&cfg)?;
            let elapsed = start.elapsed();
            let mut w = BufWriter::new(File::create(&out)?);
            result.write_csv(&mut w)?;
            eprintln!(
                "{}: {} rows in {:.2}s",
                cfg.experiment.name(),
                result.rows.len(),
                elapsed.as_secs_f64()
            );
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Validate { suite, config } => {
            let text = std::fs::read_to_string(&config)?;
            let mut cfg = ExperimentConfig::from_json(&text)?;
            apply_suite(&mut cfg, &suite)?;
            let outcome = validation_suite(&cfg)?;
            for row in &outcome.result.rows {
                if row.statistic.ends_with("_z") {
                    println!(
                        "{} {} n={} {} = {:+.3}",
                        cfg.experiment.name(),
                        row.method,
                        row.n,
                        row.statistic,
                        row.mean
                    );
                }
            }
            if outcome.pass {
                println!("suite {suite}: PASS (max |z| = {:.3})", outcome.max_abs_z);
                Ok(ExitCode::SUCCESS)
            } else {
                println!("suite {suite}: FAIL (max |z| = {:.3})", outcome.max_abs_z);
                Ok(ExitCode::from(3))
            }
        }
    }
}

fn parse_method(
    method: &str,
    sphericity: Option<&str>,
) -> Result<(EstimatorFamily, SphericityMethod), Error> {
    let norm = method.trim().to_ascii_lowercase();
    let (family_str, suffix) = match norm.split_once('-') {
        Some((f, s)) => (f.to_string(), Some(s.to_string())),
        None => (norm, None),
    };
    let family = match family_str.as_str() {
        "rscm" => EstimatorFamily::Rscm,
        "rhub" => EstimatorFamily::Rhub,
        "rtyl" => EstimatorFamily::Rtyl,
        "rmvt" => EstimatorFamily::Rmvt,
        other => return Err(Error::Config(format!("unknown method `{other}`"))),
    };
    let parse_sph = |s: &str| match s {
        "ell1" => Ok(SphericityMethod::Ell1),
        "ell2" => Ok(SphericityMethod::Ell2),
        other => Err(Error::Config(format!("unknown sphericity `{other}`"))),
    };
    let sph = match (suffix.as_deref(), sphericity) {
        (Some(a), Some(b)) => {
            let sa = parse_sph(a)?;
            let sb = parse_sph(b)?;
            if sa != sb {
                return Err(Error::Config(format!(
                    "method suffix `{a}` conflicts with --sphericity {b}"
                )));
            }
            sa
        }
        (Some(a), None) => parse_sph(a)?,
        (None, Some(b)) => parse_sph(b)?,
        (None, None) => SphericityMethod::Ell1,
    };
    Ok((family, sph))
}

fn apply_suite(cfg: &mut ExperimentConfig, suite: &str) -> Result<(), Error> {
    match suite {
        "lemma1" => {
            cfg.experiment = ExperimentKind::LemmaValidation;
            cfg.field = Field::Real;
        }
        "lemma2" => {
            cfg.experiment = ExperimentKind::LemmaValidation;
            cfg.field = Field::Complex;
        }
        "theta" => cfg.experiment = ExperimentKind::ThetaUnbiased,
        "beta_oracle" => cfg.experiment = ExperimentKind::BetaOracle,
        other => {
            return Err(Error::Config(format!(
                "unknown suite `{other}` (expected lemma1, lemma2, theta or beta_oracle)"
            )))
        }
    }
    Ok(())
}

fn estimate_json<T: Scalar>(
    data: &DataMatrix<T>,
    family: EstimatorFamily,
    sph: SphericityMethod,
    opts: &EstimateOptions,
) -> Result<serde_json::Value, Error> {
    let (est, report) = estimate(data, family, sph, opts)?;
    let p = est.p();
    let matrix: Vec<Vec<serde_json::Value>> = (0..p)
        .map(|i| {
            (0..p)
                .map(|j| {
                    let v = est.matrix[(i, j)];
                    match T::FIELD {
                        Field::Real => serde_json::json!(v.re()),
                        Field::Complex => serde_json::json!([v.re(), v.im()]),
                    }
                })
                .collect()
        })
        .collect();
    Ok(serde_json::json!({
        "schema": 1,
        "method": report.method,
        "field": T::FIELD.to_string(),
        "n": data.n(),
        "p": p,
        "beta": report.beta,
        "gamma_hat": report.gamma.gamma_hat,
        "gamma_raw": report.gamma.raw,
        "sphericity": report.gamma.method,
        "psi1_hat": report.psi1.psi1_hat,
        "psi1_source": report.psi1.source,
        "kappa_hat": report.kappa_hat,
        "nu_hat": report.nu.as_ref().map(|d| d.nu_hat),
        "nu0": report.nu.as_ref().map(|d| d.nu0),
        "eta_o_hat": report.eta_o_hat,
        "iterations": report.iterations,
        "converged": report.converged,
        "matrix": matrix,
    }))
}
