mod io;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sinoma_core::fluct::{self, Segmentation};
use sinoma_core::noise::{self, EpEvalMode, SinomaConfig};
use sinoma_core::regress::{self, Method, NoiseRatio, SlopeEstimate};
use sinoma_core::series::PairedSeries;
use sinoma_core::stream::{self, Role};
use sinoma_core::synth::{self, DatasetRecipe};

use report::{ConfigEcho, RunReport};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "sinoma", version, about = "Errors-in-variables slope estimation by noise matching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic paired series described by a TOML recipe.
    Generate {
        recipe: PathBuf,
        out: PathBuf,
    },
    /// Fit a slope with one estimator; OLS, INV and RMA are always reported alongside.
    Fit(FitArgs),
    /// Explanatory-power curves over [c_OLS, c_INV] and the Q_EP / delta_EP indicators.
    Diagnose(DiagnoseArgs),
    /// Run noise matching and report recovered noise and noiseless standard deviations.
    Recover(RecoverArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Ols,
    Inv,
    Rma,
    Evm,
    Sinoma,
}

#[derive(Clone, Copy, ValueEnum)]
enum EpModeArg {
    Endpoints,
    GridMax,
}

#[derive(Args, Clone)]
struct SinomaArgs {
    /// Seed for every random draw (ChaCha20 streams).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Iterations per replicate.
    #[arg(long, default_value_t = 50)]
    iterations: usize,
    /// Independent replicates averaged into the final estimate.
    #[arg(long, default_value_t = 10)]
    replicates: usize,
    /// Stop when |Q_EP - 1| falls below this.
    #[arg(long, default_value_t = 0.01)]
    q_tol: f64,
    /// Stop when the Q-implied slope is this close to the RMA slope of the modified pair.
    #[arg(long, default_value_t = 0.01)]
    slope_tol: f64,
    /// Slope grid size for --ep-mode grid-max.
    #[arg(long, default_value_t = 21)]
    grid_points: usize,
    /// endpoints: partial powers at c_OLS and c_INV; grid-max: maxima over the slope grid.
    #[arg(long, value_enum, default_value = "endpoints")]
    ep_mode: EpModeArg,
    /// Warm-up noise variance as a fraction of each series' variance.
    #[arg(long, default_value_t = 1e-3)]
    tiny_noise: f64,
    /// Worker threads for replicates (default: all cores). Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Fit even when both series look like white noise.
    #[arg(long)]
    allow_white: bool,
}

impl SinomaArgs {
    fn config(&self) -> SinomaConfig {
        SinomaConfig {
            seed: self.seed,
            max_iterations: self.iterations,
            replicates: self.replicates,
            q_tolerance: self.q_tol,
            slope_tolerance: self.slope_tol,
            grid_points: self.grid_points,
            ep_eval_mode: match self.ep_mode {
                EpModeArg::Endpoints => EpEvalMode::Endpoints,
                EpModeArg::GridMax => EpEvalMode::GridMax,
            },
            tiny_noise_factor: self.tiny_noise,
            reject_white: !self.allow_white,
            ..SinomaConfig::default()
        }
    }
}

#[derive(Args)]
struct FitArgs {
    input: PathBuf,
    #[arg(long, value_enum, default_value = "ols")]
    method: MethodArg,
    /// Noise ratio S2_delta / S2_epsilon for --method evm ("inf" allowed).
    #[arg(long, value_parser = parse_lambda)]
    lambda: Option<NoiseRatio>,
    /// Write the JSON run report here.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Write the per-iteration trace of --method sinoma as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    sinoma: SinomaArgs,
}

#[derive(Args)]
struct DiagnoseArgs {
    input: PathBuf,
    /// CSV of slope, ep, ep_prime, ep_hat across [c_OLS, c_INV].
    #[arg(long)]
    out: PathBuf,
    /// Also write per-interval records to <PREFIX>-ols.csv and <PREFIX>-inv.csv.
    #[arg(long)]
    intervals: Option<PathBuf>,
    #[arg(long, default_value_t = 21)]
    grid_points: usize,
    /// Add the warm-up noise first, for nearly noiseless series.
    #[arg(long)]
    warm_up: bool,
    #[arg(long, default_value_t = 1e-3)]
    tiny_noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct RecoverArgs {
    input: PathBuf,
    #[arg(long)]
    json: Option<PathBuf>,
    #[command(flatten)]
    sinoma: SinomaArgs,
}

fn parse_lambda(s: &str) -> std::result::Result<NoiseRatio, String> {
    let v = match s.trim() {
        "inf" | "infinity" => f64::INFINITY,
        other => other.parse::<f64>().map_err(|e| e.to_string())?,
    };
    NoiseRatio::new(v).map_err(|e| e.to_string())
}

/// How a command ended when it did not fail.
enum Outcome {
    Done,
    NotConverged,
}

enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => {
            eprintln!("warning: noise matching did not converge in every replicate; report written");
            ExitCode::from(EXIT_NOT_CONVERGED)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            if let Some(sinoma_core::Error::TooFewFluctuations { .. }) = e.downcast_ref::<sinoma_core::Error>() {
                eprintln!("hint: nearly noiseless series need warm-up noise (diagnose --warm-up)");
            }
            ExitCode::from(EXIT_DATA)
        }
    }
}

fn run(command: Command) -> std::result::Result<Outcome, Failure> {
    match command {
        Command::Generate { recipe, out } => generate(&recipe, &out).map_err(Failure::from),
        Command::Fit(args) => fit(args),
        Command::Diagnose(args) => diagnose(args).map_err(Failure::from),
        Command::Recover(args) => recover(args).map_err(Failure::from),
    }
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build()?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

fn generate(recipe_path: &Path, out: &Path) -> Result<Outcome> {
    let text = std::fs::read_to_string(recipe_path).with_context(|| format!("cannot read {}", recipe_path.display()))?;
    let recipe = DatasetRecipe::from_toml(&text)?;
    let base = recipe_path.parent().unwrap_or(Path::new("."));
    let (x, y, c) = recipe.generate(base)?;
    io::write_pair(out, c.pair.x(), c.pair.y())?;

    let m = c.pair.summary();
    println!("wrote {} rows to {}", c.pair.len(), out.display());
    println!("lambda = {}, R2 = {:.4}", fmt_ratio(recipe.noise()?.lambda()), m.r_squared);
    let k = synth::noise_covariances(&x, &y, &c);
    for (name, v) in [("cov(eps, delta)", k.eps_delta), ("cov(eps, x)", k.eps_x), ("cov(delta, y)", k.delta_y)] {
        if v.abs() >= 1e-3 {
            eprintln!("warning: realized {name} = {v:.4} (ideal noise has 0)");
        }
    }
    Ok(Outcome::Done)
}

fn fmt_ratio(r: NoiseRatio) -> String {
    match r {
        NoiseRatio::Finite(v) => format!("{v:.6}"),
        NoiseRatio::Infinite => "inf".to_string(),
    }
}

/// OLS, INV and RMA on the raw pair; INV is skipped at zero covariance.
fn baseline(pair: &PairedSeries) -> Vec<SlopeEstimate> {
    let mut out = vec![regress::fit_ols(pair)];
    out.extend(regress::fit_inv(pair).ok());
    let mut rma = regress::fit_rma(pair);
    // RMA takes the sign of the covariance.
    rma.slope *= pair.summary().cov_xy.signum();
    rma.intercept = pair.summary().mean_y - rma.slope * pair.summary().mean_x;
    out.push(rma);
    out
}

fn precondition_warnings(pair: &PairedSeries) -> Vec<String> {
    let mut w = Vec::new();
    if pair.summary().cov_xy < 0.0 {
        w.push("negative covariance: y was negated for fitting, slopes are reported with sign -1".into());
    }
    for (name, s) in [("x", pair.x()), ("y", pair.y())] {
        if let Err(e) = fluct::segment(s) {
            w.push(format!("{name}: {e}"));
        }
    }
    let ols = regress::fit_ols(pair).slope.abs();
    if ols > regress::STEEPNESS_THRESHOLD {
        w.push(format!("steep slope: y divided by c_OLS = {ols:.4} before noise matching"));
    }
    w
}

fn sinoma_warnings(r: &noise::SinomaResult, w: &mut Vec<String>) {
    if !r.converged {
        let n = r.replicates.iter().filter(|r| !r.converged).count();
        w.push(format!("{n} of {} replicates did not converge; best bracketed slope used", r.replicates.len()));
    }
    if r.clamped {
        w.push("noise-matched slope fell outside [c_OLS, c_INV] and was clamped".into());
    }
    match &r.noise {
        None => w.push("noise variances are not identifiable for this run".into()),
        Some(n) if n.non_physical => w.push("non-physical noise estimate (negative or exceeding observed variance)".into()),
        _ => {}
    }
    if let Some(wc) = &r.whiteness {
        if wc.hazard {
            w.push(format!(
                "both series look like white noise (p = {:.3}, {:.3}); estimates are unreliable",
                wc.p_x, wc.p_y
            ));
        }
    }
}

fn fit(args: FitArgs) -> std::result::Result<Outcome, Failure> {
    match (args.method, args.lambda) {
        (MethodArg::Evm, None) => return Err(Failure::Usage("--lambda is required for --method evm".into())),
        (MethodArg::Evm, Some(_)) => {}
        (_, Some(_)) => return Err(Failure::Usage("--lambda applies only to --method evm".into())),
        _ => {}
    }
    if args.trace.is_some() && !matches!(args.method, MethodArg::Sinoma) {
        return Err(Failure::Usage("--trace applies only to --method sinoma".into()));
    }
    let (pair, input) = io::read_pair(&args.input)?;
    let mut warnings = precondition_warnings(&pair);
    let mut estimates = baseline(&pair);
    let mut sinoma = None;
    let config = args.sinoma.config();

    match args.method {
        MethodArg::Evm => {
            let lambda = args.lambda.unwrap_or(NoiseRatio::Infinite);
            let (signed, sign) = regress::sign_normalize(&pair).map_err(anyhow::Error::from)?;
            let mut est = regress::fit_evm(&signed, lambda).map_err(anyhow::Error::from)?;
            est.slope *= sign.factor();
            est.intercept = pair.summary().mean_y - est.slope * pair.summary().mean_x;
            estimates.push(est);
        }
        MethodArg::Sinoma => {
            let r = with_threads(args.sinoma.threads, || noise::fit_sinoma(&pair, &config))?
                .map_err(anyhow::Error::from)?;
            estimates.push(SlopeEstimate {
                method: Method::Sinoma,
                slope: r.slope,
                intercept: r.intercept,
                lambda: Some(r.lambda_evm),
            });
            sinoma_warnings(&r, &mut warnings);
            sinoma = Some(r);
        }
        _ => {}
    }

    let converged = sinoma.as_ref().is_none_or(|r| r.converged);
    let report = RunReport {
        command: "fit".into(),
        config: ConfigEcho::new(args.method.to_possible_value().expect("no skipped variants").get_name().to_string(), args.lambda, &config, args.sinoma.threads),
        input,
        moments: *pair.summary(),
        estimates,
        sinoma,
        diagnostic: None,
        warnings,
    };
    report.print_summary();
    if let Some(path) = &args.trace {
        write_trace(path, report.sinoma.as_ref().expect("sinoma result present"))?;
    }
    if let Some(path) = &args.json {
        io::write_json(path, &report)?;
    }
    Ok(if converged { Outcome::Done } else { Outcome::NotConverged })
}

#[derive(Serialize)]
struct TraceRow {
    replicate: usize,
    iteration: usize,
    s2_epsilon_artificial: f64,
    s2_delta_artificial: f64,
    q_ep: Option<f64>,
    c_tilde: Option<f64>,
}

fn write_trace(path: &Path, r: &noise::SinomaResult) -> Result<()> {
    let rows = r.replicates.iter().flat_map(|rep| {
        rep.trace.iter().map(move |t| TraceRow {
            replicate: rep.replicate,
            iteration: t.iteration,
            s2_epsilon_artificial: t.s2_epsilon_artificial,
            s2_delta_artificial: t.s2_delta_artificial,
            q_ep: t.q_ep,
            c_tilde: t.c_tilde,
        })
    });
    io::write_rows(path, rows)
}

#[derive(Serialize)]
struct IntervalRow {
    start: usize,
    end: usize,
    a_obs: f64,
    a_mod: f64,
    overlap: f64,
    ep: f64,
    ep_prime: f64,
    ep_hat: f64,
}

fn interval_rows(pair: &PairedSeries, slope: f64) -> Result<Vec<IntervalRow>> {
    let m = pair.summary();
    let est = SlopeEstimate { method: Method::Evm, slope, intercept: m.mean_y - slope * m.mean_x, lambda: None };
    let modeled = regress::predict(pair.x(), &est);
    let (records, _) = fluct::explanatory_powers(pair.y(), &modeled)?;
    Ok(records
        .into_iter()
        .map(|r| IntervalRow {
            start: r.start,
            end: r.end,
            a_obs: r.a_obs,
            a_mod: r.a_mod,
            overlap: r.overlap,
            ep: r.ep,
            ep_prime: r.ep_prime,
            ep_hat: r.ep_hat,
        })
        .collect())
}

fn diagnose(args: DiagnoseArgs) -> Result<Outcome> {
    let (raw, input) = io::read_pair(&args.input)?;
    let mut warnings = precondition_warnings(&raw);
    let (signed, _) = regress::sign_normalize(&raw)?;
    let pair = if args.warm_up {
        let m = signed.summary();
        let mut rng = stream::stream(args.seed, Role::Artificial, 0);
        let x = noise::add_artificial_noise(signed.x(), args.tiny_noise * m.var_x, &mut rng)?;
        let y = noise::add_artificial_noise(signed.y(), args.tiny_noise * m.var_y, &mut rng)?;
        warnings.push(format!("warm-up noise added ({} x variance, seed {})", args.tiny_noise, args.seed));
        PairedSeries::new(x, y)?
    } else {
        signed
    };

    let curve = noise::ep_curve(&pair, args.grid_points, Segmentation::Extrema(fluct::BoundaryKind::Maxima))?;
    io::write_rows(&args.out, &curve)?;
    let diag = noise::q_ep(&pair, EpEvalMode::Endpoints, args.grid_points)?;
    if let Some(prefix) = &args.intervals {
        let ols = regress::fit_ols(&pair).slope;
        let inv = regress::fit_inv(&pair)?.slope;
        let name = |suffix: &str| {
            let mut p = prefix.clone().into_os_string();
            p.push(suffix);
            PathBuf::from(p)
        };
        io::write_rows(&name("-ols.csv"), interval_rows(&pair, ols)?)?;
        io::write_rows(&name("-inv.csv"), interval_rows(&pair, inv)?)?;
    }

    println!("q_ep            {:.6}", diag.q_ep);
    println!("delta_ep        {:.6}", diag.delta_ep);
    println!("ep_hat(c_OLS)   {:.6}", diag.ep_hat_at_ols);
    println!("ep_prime(c_INV) {:.6}", diag.ep_prime_at_inv);
    println!("wrote {} grid points to {}", curve.len(), args.out.display());
    for w in &warnings {
        eprintln!("warning: {w}");
    }

    if let Some(path) = &args.json {
        let config = SinomaConfig { seed: args.seed, tiny_noise_factor: args.tiny_noise, grid_points: args.grid_points, ..SinomaConfig::default() };
        let report = RunReport {
            command: "diagnose".into(),
            config: ConfigEcho::new("diagnose".into(), None, &config, None),
            input,
            moments: *pair.summary(),
            estimates: baseline(&pair),
            sinoma: None,
            diagnostic: Some(noise::QepDiagnostic { slope_grid: Some(curve), ..diag }),
            warnings,
        };
        io::write_json(path, &report)?;
    }
    Ok(Outcome::Done)
}

fn recover(args: RecoverArgs) -> Result<Outcome> {
    let (pair, input) = io::read_pair(&args.input)?;
    let config = args.sinoma.config();
    let mut warnings = precondition_warnings(&pair);
    let r = with_threads(args.sinoma.threads, || noise::fit_sinoma(&pair, &config))??;
    sinoma_warnings(&r, &mut warnings);
    report::print_recovery_table(&r);
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let converged = r.converged;
    if let Some(path) = &args.json {
        let report = RunReport {
            command: "recover".into(),
            config: ConfigEcho::new("sinoma".into(), None, &config, args.sinoma.threads),
            input,
            moments: *pair.summary(),
            estimates: baseline(&pair),
            sinoma: Some(r),
            diagnostic: None,
            warnings,
        };
        io::write_json(path, &report)?;
    }
    Ok(if converged { Outcome::Done } else { Outcome::NotConverged })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_arguments() {
        assert_eq!(parse_lambda("4.41").unwrap(), NoiseRatio::Finite(4.41));
        assert_eq!(parse_lambda("inf").unwrap(), NoiseRatio::Infinite);
        assert_eq!(parse_lambda("0").unwrap(), NoiseRatio::Finite(0.0));
        assert!(parse_lambda("-1").is_err());
        assert!(parse_lambda("abc").is_err());
    }

    #[test]
    fn flags_map_onto_config() {
        let cli = Cli::try_parse_from(["sinoma", "fit", "d.csv", "--method", "sinoma", "--seed", "9", "--q-tol", "0.05", "--ep-mode", "grid-max", "--allow-white"]).unwrap();
        let Command::Fit(args) = cli.command else { panic!("expected fit") };
        let c = args.sinoma.config();
        assert_eq!((c.seed, c.q_tolerance, c.ep_eval_mode, c.reject_white), (9, 0.05, EpEvalMode::GridMax, false));
        assert!(c.validate().is_ok());
        let d = SinomaArgs { allow_white: false, ..args.sinoma }.config();
        assert_eq!(SinomaConfig { seed: 9, q_tolerance: 0.05, ep_eval_mode: EpEvalMode::GridMax, ..SinomaConfig::default() }, d);
    }
}
