use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use tailcomb::angular::{
    asymptotic_ratio, classify_ratio, t_copula_lambda, DiscreteAngularMeasure,
};
use tailcomb::combiners::{CombinationTest, CombinerSpec, MaxLinearCoefficients, Weights};
use tailcomb::experiments::format::fmt_g17;
use tailcomb::experiments::presets::{self, preset_models};
use tailcomb::experiments::{
    low_count_warning, parse_grid, parse_tests, run_calibration, run_falsifier, run_power,
    run_tail_scale, CalibrationRecord, Direction, PowerConfig, PowerRecord, TailScaleRecord,
    BASELINE_NAME,
};
use tailcomb::samplers::{ModelSpec, SigmaSpec};
use tailcomb::transforms::PValueVector;
use tailcomb::{Error, Result};

/// Heavy-tailed p-value combination tests.
#[derive(Parser)]
#[command(name = "tailcomb", version, about)]
struct Cli {
    /// TOML file with one table per subcommand; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Combine p-value vectors, one per input line.
    Combine(CombineArgs),
    /// Asymptotic calibration ratio of a combiner under an angular measure.
    Ratio(RatioArgs),
    /// Upper tail-dependence coefficient of the bivariate t copula.
    Lambda(LambdaArgs),
    /// Monte Carlo type I error calibration.
    Calibrate(CalibrateArgs),
    /// Power study under a multivariate t location shift.
    Power(PowerArgs),
    /// Search for angular measures that miscalibrate a combiner.
    Falsify(FalsifyArgs),
    /// Direct estimates of t P[h(X) > t] on raw model statistics.
    Tailscale(TailscaleArgs),
}

#[derive(Args)]
struct CombineArgs {
    /// pct, cct, tippett, fct or powermean
    #[arg(long)]
    test: Option<String>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Weights file (whitespace or comma separated).
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Block file for fct: one block per line, one-based indices.
    #[arg(long)]
    blocks: Option<PathBuf>,
    /// P-value file, `-` for stdin.
    #[arg(long)]
    pvalues: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RatioArgs {
    /// linear[:W], tippett, powermean:G[:W], maxlinear:BLOCKS[:W]
    #[arg(long)]
    combiner: Option<String>,
    #[arg(long)]
    measure: Option<PathBuf>,
    /// Replace the tail index stored in the measure file.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args)]
struct LambdaArgs {
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
}

#[derive(Args)]
struct ModelArgs {
    /// Model file or preset (t, gaussian, frechet, breiman-axes, s1s-axes).
    #[arg(long)]
    model: Option<String>,
    /// Degrees of freedom for the t preset, comma separated.
    #[arg(long)]
    nu: Option<String>,
    #[arg(long)]
    d: Option<usize>,
    /// ar:RHO, exch:RHO or identity
    #[arg(long)]
    sigma: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    n: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core. Output does not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    tests: Option<String>,
    #[arg(long)]
    alphas: Option<String>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct PowerArgs {
    /// Only `t` is supported.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    sigma: Option<String>,
    /// top or bottom eigenvector of the inverse correlation matrix
    #[arg(long)]
    direction: Option<String>,
    /// FROM:TO:COUNT or a list; must include 0.
    #[arg(long)]
    effects: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    tests: Option<String>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct FalsifyArgs {
    #[arg(long)]
    combiner: Option<String>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    atoms: Option<usize>,
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TailscaleArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    combiner: Option<String>,
    #[arg(long)]
    thresholds: Option<String>,
    #[command(flatten)]
    run: RunArgs,
}

/// Values from one table of the config file, falling back to its top level.
struct Settings {
    table: toml::Table,
    section: &'static str,
}

impl Settings {
    fn load(path: Option<&Path>, section: &'static str) -> Result<Self> {
        let table = match path {
            None => toml::Table::new(),
            Some(p) => fs::read_to_string(p)?
                .parse::<toml::Table>()
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        };
        Ok(Self { table, section })
    }

    fn raw(&self, key: &str) -> Option<&toml::Value> {
        self.table
            .get(self.section)
            .and_then(|s| s.as_table())
            .and_then(|s| s.get(key))
            .or_else(|| self.table.get(key).filter(|v| !v.is_table()))
    }

    fn get<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>> {
        self.raw(key)
            .map(|v| {
                v.clone()
                    .try_into()
                    .map_err(|e| Error::Config(format!("config key '{key}': {e}")))
            })
            .transpose()
    }

    fn opt<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> Result<Option<T>> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }

    fn pick<T: DeserializeOwned>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        Ok(self.opt(flag, key)?.unwrap_or(default))
    }

    fn require<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> Result<T> {
        self.opt(flag, key)?
            .ok_or_else(|| Error::Config(format!("missing --{key}")))
    }

    /// A list given as a flag string, a config string, or a config array.
    fn list(&self, flag: Option<String>, key: &str, default: &str) -> Result<String> {
        if let Some(f) = flag {
            return Ok(f);
        }
        Ok(match self.raw(key) {
            None => default.to_string(),
            Some(toml::Value::String(s)) => s.clone(),
            Some(toml::Value::Array(items)) => items
                .iter()
                .map(|v| match v {
                    toml::Value::Integer(i) => Ok(i.to_string()),
                    toml::Value::Float(f) => Ok(f.to_string()),
                    toml::Value::String(s) => Ok(s.clone()),
                    other => Err(Error::Config(format!(
                        "config key '{key}': bad entry {other}"
                    ))),
                })
                .collect::<Result<Vec<_>>>()?
                .join(","),
            Some(other) => {
                return Err(Error::Config(format!(
                    "config key '{key}': bad value {other}"
                )))
            }
        })
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn read_numbers(path: &Path) -> Result<Vec<f64>> {
    parse_grid(fs::read_to_string(path)?.trim())
}

fn parse_numbers(line: &str) -> Result<Vec<f64>> {
    line.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad p-value '{t}'")))
        })
        .collect()
}

fn build_combine_test(args: &CombineArgs, s: &Settings, d: usize) -> Result<CombinationTest> {
    let name: String = s.require(args.test.clone(), "test")?;
    let weights_path: Option<PathBuf> = s.opt(args.weights.clone(), "weights")?;
    let blocks_path: Option<PathBuf> = s.opt(args.blocks.clone(), "blocks")?;
    let gamma: Option<f64> = s.opt(args.gamma, "gamma")?;
    let weights = |k: usize| -> Result<Weights> {
        match &weights_path {
            Some(p) => {
                let w = Weights::new(read_numbers(p)?)?;
                if w.len() != k {
                    return Err(Error::Config(format!(
                        "{} weights given, expected {k}",
                        w.len()
                    )));
                }
                Ok(w)
            }
            None => Weights::uniform(k),
        }
    };
    match name.to_ascii_lowercase().as_str() {
        "pct" => Ok(CombinationTest::pct(weights(d)?)),
        "cct" => Ok(CombinationTest::cct(weights(d)?)),
        "tippett" => Ok(CombinationTest::tippett()),
        "powermean" => {
            let g = gamma.ok_or_else(|| Error::Config("powermean needs --gamma".into()))?;
            CombinationTest::power_mean(weights(d)?, g)
        }
        "fct" => {
            let blocks: Vec<Vec<usize>> = match &blocks_path {
                Some(p) => fs::read_to_string(p)?
                    .lines()
                    .filter(|l| !l.trim().is_empty())
                    .map(|l| {
                        l.split(|c: char| c == ',' || c.is_whitespace())
                            .filter(|t| !t.is_empty())
                            .map(|t| match t.parse::<usize>() {
                                Ok(i) if i >= 1 => Ok(i - 1),
                                _ => Err(Error::Parse(format!("bad one-based block index '{t}'"))),
                            })
                            .collect()
                    })
                    .collect::<Result<_>>()?,
                None => (0..d).map(|j| vec![j]).collect(),
            };
            let w = weights(blocks.len())?;
            Ok(CombinationTest::fct(MaxLinearCoefficients::new(
                blocks, w, d,
            )?))
        }
        other => Err(Error::Config(format!("unknown test '{other}'"))),
    }
}

fn cmd_combine(args: CombineArgs, cfg: Option<&Path>) -> Result<()> {
    let s = Settings::load(cfg, "combine")?;
    let input: PathBuf = s.require(args.pvalues.clone(), "pvalues")?;
    let text = if input.as_os_str() == "-" {
        let mut buf = String::new();
        io::stdin().read_to_string(&mut buf)?;
        buf
    } else {
        fs::read_to_string(&input)?
    };
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(parse_numbers)
        .collect::<Result<_>>()?;
    let Some(first) = rows.first() else {
        return Err(Error::Config("no p-value vectors in the input".into()));
    };
    let d = first.len();
    let test = build_combine_test(&args, &s, d)?;
    let mut out = String::new();
    for (i, row) in rows.into_iter().enumerate() {
        if row.len() != d {
            return Err(Error::Parse(format!(
                "line {} has {} p-values, expected {d}",
                i + 1,
                row.len()
            )));
        }
        let p = test.combined_pvalue(&PValueVector::new(row)?)?;
        out.push_str(&fmt_g17(p));
        out.push('\n');
    }
    let out_path: Option<PathBuf> = s.opt(args.out, "out")?;
    emit(out_path.as_deref(), &out)
}

fn cmd_ratio(args: RatioArgs, cfg: Option<&Path>) -> Result<()> {
    let s = Settings::load(cfg, "ratio")?;
    let spec: String = s.require(args.combiner, "combiner")?;
    let path: PathBuf = s.require(args.measure, "measure")?;
    let mut m = DiscreteAngularMeasure::load(&path)?;
    if let Some(b) = s.opt(args.beta, "beta")? {
        m = m.with_beta(b)?;
    }
    let tol = s.pick(args.tol, "tol", 1e-9)?;
    let combiner = CombinerSpec::parse(&spec, m.dim())?;
    let ratio = asymptotic_ratio(&combiner, &m)?;
    println!("ratio {}", fmt_g17(ratio));
    println!("class {}", classify_ratio(ratio, tol).name());
    Ok(())
}

fn cmd_lambda(args: LambdaArgs, cfg: Option<&Path>) -> Result<()> {
    let s = Settings::load(cfg, "lambda")?;
    let nu = s.require(args.nu, "nu")?;
    let rho = s.require(args.rho, "rho")?;
    println!("{}", fmt_g17(t_copula_lambda(nu, rho)?));
    Ok(())
}

fn load_models(args: ModelArgs, s: &Settings) -> Result<Vec<ModelSpec>> {
    let model: String = s.require(args.model, "model")?;
    if Path::new(&model).is_file() {
        return Ok(vec![ModelSpec::load(&model)?]);
    }
    let nus = parse_grid(&s.list(args.nu, "nu", "1")?)?;
    let d = s.pick(args.d, "d", presets::D)?;
    let sigma = SigmaSpec::parse(&s.pick(args.sigma, "sigma", "ar:0.5".to_string())?)?;
    preset_models(&model, &nus, d, &sigma)
}

fn model_dim(spec: &ModelSpec) -> Result<usize> {
    Ok(spec.prepare()?.d())
}

fn cmd_calibrate(args: CalibrateArgs, cfg: Option<&Path>) -> Result<()> {
    let s = Settings::load(cfg, "calibrate")?;
    let models = load_models(args.model, &s)?;
    let tests = s.list(args.tests, "tests", "pct,cct,tippett")?;
    let alphas = parse_grid(&s.list(args.alphas, "alphas", "1e-2,1e-3,1e-4")?)?;
    let n = s.pick(args.run.n, "n", presets::N_FULL)?;
    let seed = s.pick(args.run.seed, "seed", presets::SEED)?;
    let workers = s.pick(args.run.workers, "workers", 0)?;
    if let Some(w) = low_count_warning(n, &alphas) {
        eprintln!("warning: {w}");
    }
    let mut records = Vec::new();
    for model in &models {
        let tests = parse_tests(&tests, model_dim(model)?)?;
        records.extend(run_calibration(model, &tests, &alphas, n, seed, workers)?);
    }
    let out: Option<PathBuf> = s.opt(args.run.out, "out")?;
    emit(out.as_deref(), &CalibrationRecord::to_csv(&records))
}

fn cmd_power(args: PowerArgs, cfg: Option<&Path>) -> Result<()> {
    let s = Settings::load(cfg, "power")?;
    let preset = s.pick(args.preset, "preset", "t".to_string())?;
    if preset != "t" {
        return Err(Error::Config(format!(
            "power study supports only the t preset, got '{preset}'"
        )));
    }
    let d = s.pick(args.d, "d", presets::D)?;
    let config = PowerConfig {
        nu: s.pick(args.nu, "nu", 10.0)?,
        d,
        sigma: SigmaSpec::parse(&s.pick(args.sigma, "sigma", "ar:0.5".to_string())?)?,
        direction: Direction::parse(&s.pick(args.direction, "direction", "bottom".to_string())?)?,
        effects: parse_grid(&s.list(args.effects, "effects", "0:40:21")?)?,
        alpha: s.pick(args.alpha, "alpha", 0.05)?,
        n: s.pick(args.run.n, "n", presets::N_DESK)?,
        seed: s.pick(args.run.seed, "seed", presets::SEED)?,
    };
    let tests = parse_tests(&s.list(args.tests, "tests", "pct,cct")?, d)?;
    let workers = s.pick(args.run.workers, "workers", 0)?;
    eprintln!(
        "note: baseline '{BASELINE_NAME}' is the simple-vs-simple likelihood ratio at the true location, \
         thresholded at the empirical null quantile"
    );
    let records = run_power(&config, &tests, workers)?;
    let out: Option<PathBuf> = s.opt(args.run.out, "out")?;
    emit(out.as_deref(), &PowerRecord::to_csv(&records))
}

fn cmd_falsify(args: FalsifyArgs, cfg: Option<&Path>) -> Result<()> {
    let s = Settings::load(cfg, "falsify")?;
    let spec: String = s.require(args.combiner, "combiner")?;
    let d = s.pick(args.d, "d", 2)?;
    let combiner = CombinerSpec::parse(&spec, d)?;
    let report = run_falsifier(
        &combiner,
        d,
        s.pick(args.beta, "beta", 1.0)?,
        s.pick(args.atoms, "atoms", 8)?,
        s.pick(args.budget, "budget", 10_000)?,
        s.pick(args.seed, "seed", presets::SEED)?,
    )?;
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    let out: Option<PathBuf> = s.opt(args.out, "out")?;
    emit(out.as_deref(), &json)
}

fn cmd_tailscale(args: TailscaleArgs, cfg: Option<&Path>) -> Result<()> {
    let s = Settings::load(cfg, "tailscale")?;
    let models = load_models(args.model, &s)?;
    let spec: String = s.require(args.combiner, "combiner")?;
    let thresholds = parse_grid(&s.list(args.thresholds, "thresholds", "1e2,1e3,1e4")?)?;
    let n = s.pick(args.run.n, "n", presets::N_FULL)?;
    let seed = s.pick(args.run.seed, "seed", presets::SEED)?;
    let workers = s.pick(args.run.workers, "workers", 0)?;
    let mut records = Vec::new();
    for model in &models {
        let combiner = CombinerSpec::parse(&spec, model_dim(model)?)?;
        records.extend(run_tail_scale(
            model,
            &combiner,
            &thresholds,
            n,
            seed,
            workers,
        )?);
    }
    let out: Option<PathBuf> = s.opt(args.run.out, "out")?;
    emit(out.as_deref(), &TailScaleRecord::to_csv(&records))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = cli.config.as_deref();
    let result = match cli.command {
        Command::Combine(a) => cmd_combine(a, cfg),
        Command::Ratio(a) => cmd_ratio(a, cfg),
        Command::Lambda(a) => cmd_lambda(a, cfg),
        Command::Calibrate(a) => cmd_calibrate(a, cfg),
        Command::Power(a) => cmd_power(a, cfg),
        Command::Falsify(a) => cmd_falsify(a, cfg),
        Command::Tailscale(a) => cmd_tailscale(a, cfg),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tailcomb: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
