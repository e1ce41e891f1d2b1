use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use quasicopula::simharness::{
    draw_design, load_dataset, load_study_config, run_sim_study, write_dataset, write_report,
    DataSchema,
};
use quasicopula::{
    fit, CovKind, CovarianceSpec, Family, FitConfig, Link, QcError, QuasiCopulaModel, Result,
    SamplingUnit,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;
use std::process::ExitCode;

/// Fit, sample and simulate quasi-copula models.
#[derive(Parser)]
#[command(name = "qc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a long-format CSV file.
    Fit(FitArgs),
    /// Draw a synthetic dataset and write it as long-format CSV.
    Sample(SampleArgs),
    /// Run a simulation study described by a key = value config file.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    /// Base family, or one per response column separated by commas.
    #[arg(long, default_value = "poisson")]
    family: String,
    #[arg(long, default_value = "vc")]
    covariance: String,
    /// Only the canonical link of each family is supported.
    #[arg(long, default_value = "canonical")]
    link: String,
    #[arg(long, default_value = "id")]
    id_column: String,
    /// Response column, or two separated by commas for a bivariate fit.
    #[arg(long, default_value = "y")]
    response: String,
    #[arg(long)]
    no_intercept: bool,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Maximum number of block ascent iterations.
    #[arg(long, default_value_t = 10)]
    max_iters: usize,
    /// Maximum number of joint quasi-Newton iterations.
    #[arg(long, default_value_t = 15)]
    max_qn_iters: usize,
    #[arg(long, overrides_with = "no_se")]
    se: bool,
    #[arg(long, overrides_with = "se")]
    no_se: bool,
    /// CSV file for the estimates; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long, default_value = "poisson")]
    family: String,
    /// Dispersion of the family (τ for gaussian, r for negbin).
    #[arg(long)]
    dispersion: Option<f64>,
    #[arg(long, default_value = "vc")]
    covariance: String,
    #[arg(long, default_value_t = 0.1)]
    theta: f64,
    #[arg(long, default_value_t = 0.1)]
    sigma2: f64,
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    /// Coefficients, the first for the intercept.
    #[arg(long, default_value = "0.2,-0.1,0.1", value_delimiter = ',', allow_hyphen_values = true)]
    beta: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    d: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Directory for mse.csv, estimates.csv and report.md.
    #[arg(long)]
    out: PathBuf,
}

fn covariance_template(kind: CovKind, theta: f64, sigma2: f64, rho: f64) -> CovarianceSpec {
    match kind {
        CovKind::Vc => CovarianceSpec::random_intercept(theta),
        CovKind::Ar1 => CovarianceSpec::ar1(sigma2, rho),
        CovKind::Cs => CovarianceSpec::cs(sigma2, rho),
    }
}

fn check_link(link: &str, families: &[Family]) -> Result<()> {
    let wanted = link.trim().to_ascii_lowercase();
    if wanted == "canonical" {
        return Ok(());
    }
    for f in families {
        let name = match f.link() {
            Some(Link::Identity) => "identity",
            Some(Link::Log) => "log",
            Some(Link::Logit) => "logit",
            None => "",
        };
        if name != wanted {
            return Err(QcError::Unsupported(format!(
                "link '{link}' for family {}; only the canonical link is available",
                f.name()
            )));
        }
    }
    Ok(())
}

fn run_fit(args: &FitArgs) -> Result<bool> {
    let families = args
        .family
        .split(',')
        .map(Family::from_name)
        .collect::<Result<Vec<_>>>()?;
    check_link(&args.link, &families)?;
    let responses: Vec<String> = args.response.split(',').map(|s| s.trim().to_string()).collect();
    if families.len() != responses.len() {
        return Err(QcError::Config(format!(
            "{} families for {} response columns",
            families.len(),
            responses.len()
        )));
    }
    let schema = DataSchema {
        id_column: args.id_column.clone(),
        response_columns: responses.clone(),
        covariate_columns: None,
        intercept: !args.no_intercept,
    };
    let ds = load_dataset(&args.data, &schema)?;
    let p = ds.units[0].x.ncols();
    let kind = CovKind::from_name(&args.covariance)?;
    let template = QuasiCopulaModel::new(
        DVector::zeros(p),
        covariance_template(kind, 0.0, 0.1, 0.0),
        families,
    );
    let config = FitConfig {
        tol: args.tol,
        max_block_iters: args.max_iters,
        max_qn_iters: args.max_qn_iters,
        compute_se: !args.no_se,
        ..FitConfig::default()
    };
    let res = fit(&ds.units, &template, &config)?;

    let mut labels: Vec<String> = Vec::new();
    for o in 0..responses.len() {
        for c in &ds.covariate_names {
            labels.push(if responses.len() > 1 {
                format!("{}:{c}", responses[o])
            } else {
                c.clone()
            });
        }
    }
    labels.extend(res.param_names.iter().skip(p).cloned());
    let est = res.estimates();
    let mut rows = vec![["parameter".to_string(), "estimate".into(), "se".into()]];
    for (i, name) in labels.iter().enumerate() {
        let se = res.se.as_ref().map_or("NA".to_string(), |s| s[i].to_string());
        rows.push([name.clone(), est[i].to_string(), se]);
    }
    rows.push(["loglik".into(), res.loglik.to_string(), "NA".into()]);
    let csv_text: String = rows.iter().map(|r| r.join(",") + "\n").collect();
    match &args.out {
        Some(path) => std::fs::write(path, &csv_text)?,
        None => print!("{csv_text}"),
    }

    eprintln!(
        "{} units, {} observations ({} rows excluded)",
        ds.units.len(),
        ds.n_obs(),
        ds.excluded_rows
    );
    eprintln!(
        "loglik {:.6}, {} block + {} quasi-Newton iterations, converged: {}",
        res.loglik, res.block_iters, res.qn_iters, res.converged
    );
    for (i, name) in labels.iter().enumerate() {
        match &res.se {
            Some(s) => eprintln!("  {name:<20} {:>12.6} ({:.6})", est[i], s[i]),
            None => eprintln!("  {name:<20} {:>12.6}", est[i]),
        }
    }
    for w in &res.warnings {
        eprintln!("warning: {w}");
    }
    Ok(res.converged)
}

fn run_sample(args: &SampleArgs) -> Result<()> {
    let mut family = Family::from_name(&args.family)?;
    if let Some(v) = args.dispersion {
        if family.dispersion().is_none() {
            return Err(QcError::Config(format!("family {} has no dispersion", family.name())));
        }
        family = family.with_dispersion(v);
    }
    let kind = CovKind::from_name(&args.covariance)?;
    let model = QuasiCopulaModel::new(
        DVector::from_column_slice(&args.beta),
        covariance_template(kind, args.theta, args.sigma2, args.rho),
        vec![family],
    );
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut units = Vec::with_capacity(args.n);
    for _ in 0..args.n {
        let mut u = SamplingUnit::new(DVector::zeros(args.d), draw_design(args.d, args.beta.len(), &mut rng));
        u.y = quasicopula::sampler::sample_unit(&model, &u, &mut rng)?;
        units.push(u);
    }
    write_dataset(&args.out, &units, true)
}

fn run_simulate(args: &SimulateArgs) -> Result<bool> {
    let cfg = load_study_config(&args.config)?;
    let res = run_sim_study(&cfg)?;
    write_report(&res, &args.out)?;
    for r in res.replicates.iter().filter(|r| r.error.is_some()) {
        eprintln!(
            "n={} d={} replicate {}: {}",
            r.n,
            r.d,
            r.rep,
            r.error.as_deref().unwrap_or_default()
        );
    }
    eprintln!("wrote {}", args.out.display());
    Ok(!res.any_nonconverged())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Fit(a) => run_fit(a),
        Command::Sample(a) => run_sample(a).map(|_| true),
        Command::Simulate(a) => run_simulate(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("some fits did not converge");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
