use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use spikebench_core::amp::{init_u1, run_amp_from};
use spikebench_core::bayes_theory::{bbp_top_singular, theory_point};
use spikebench_core::ensembles::build_instance;
use spikebench_core::harness::{
    fig1_preset, run_experiment, trial_seed, write_outputs, ExperimentConfig, Fig1Side, HarnessError, OutputFormat,
    Scale,
};
use spikebench_core::rng::{derive_seed, rng_from_seed};
use spikebench_core::spectral::{j_scaling, spectral_pair};
use spikebench_core::state_evolution::{se_cumulants, se_predict_metrics, StateEvolution};
use spikebench_core::SingularLaw;

#[derive(Parser)]
#[command(name = "spikebench", version, about = "Rank-one spike estimation benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mismatched Bayes theory points over the grid.
    Theory(Common),
    /// Per-iteration metrics of one AMP run per grid point.
    Amp(Common),
    /// Per-iteration state evolution predictions.
    Se(Common),
    /// Top singular value and spectral estimator metrics of one instance per grid point.
    Spectral(Common),
    /// Full experiment from a JSON config.
    Experiment(Common),
    /// The four-estimator comparison presets.
    Fig1 {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = SideArg::Both)]
        side: SideArg,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON). Defaults to the matched Poisson preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = ScaleArg::Desk)]
    scale: ScaleArg,
    #[arg(long, value_enum, default_value_t = FormatArg::Both)]
    format: FormatArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Paper,
    Desk,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Svg,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum SideArg {
    PoissonMatched,
    GaussianScaled4,
    Both,
}

enum Failure {
    Config(String),
    Numerical(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Numerical(e.to_string())
        }
    }
}

fn num(e: impl std::fmt::Display) -> Failure {
    Failure::Numerical(e.to_string())
}

impl Common {
    fn scale(&self) -> Scale {
        match self.scale {
            ScaleArg::Paper => Scale::Paper,
            ScaleArg::Desk => Scale::Desk,
        }
    }

    fn format(&self) -> OutputFormat {
        match self.format {
            FormatArg::Csv => OutputFormat::Csv,
            FormatArg::Svg => OutputFormat::Svg,
            FormatArg::Both => OutputFormat::Both,
        }
    }

    fn apply_overrides(&self, mut cfg: ExperimentConfig) -> Result<ExperimentConfig, Failure> {
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.base_seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn load(&self, side: Fig1Side) -> Result<ExperimentConfig, Failure> {
        let cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => fig1_preset(side, self.scale()),
        };
        self.apply_overrides(cfg)
    }
}

fn write_table(dir: &Path, name: &str, body: &str) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Numerical(format!("cannot create {}: {e}", dir.display())))?;
    let p = dir.join(name);
    fs::write(&p, body).map_err(|e| Failure::Numerical(format!("cannot write {}: {e}", p.display())))?;
    println!("{}", p.display());
    Ok(())
}

fn law_of(cfg: &ExperimentConfig) -> Result<SingularLaw, Failure> {
    cfg.noise.law(cfg.aspect).map_err(num)
}

fn theory(cfg: &ExperimentConfig) -> Result<(), Failure> {
    let law = law_of(cfg)?;
    let mut s = String::from("lambda_star,lambda,regime,m,q,mse,overlap\n");
    for &ls in &cfg.lambda_star_grid {
        let p = theory_point(&law, cfg.mismatch_rule.lambda(ls), ls).map_err(num)?;
        let regime = serde_json::to_value(p.regime).map_err(num)?;
        let _ = writeln!(s, "{},{},{},{},{},{},{}", p.lambda_star, p.lambda, regime.as_str().unwrap_or("?"), p.m, p.q, p.mse, p.overlap);
    }
    write_table(&cfg.output_dir, "theory.csv", &s)
}

fn amp(cfg: &ExperimentConfig) -> Result<(), Failure> {
    let (n, m) = cfg.dims();
    let mut s = String::from("lambda_star,lambda,t,overlap_u,overlap_v,overlap,mse\n");
    for (point, &ls) in cfg.lambda_star_grid.iter().enumerate() {
        let lambda = cfg.mismatch_rule.lambda(ls);
        let seed = trial_seed(cfg.base_seed, point, 0, 0);
        let inst = build_instance(ls, &cfg.noise, n, m, seed).map_err(num)?;
        let acfg = cfg.amp.config(lambda);
        let u1 = init_u1(&inst, acfg.init_corr, &mut rng_from_seed(derive_seed(seed, 1))).map_err(num)?;
        let state = run_amp_from(&inst, &acfg, u1).map_err(num)?;
        for r in &state.history {
            let _ = writeln!(s, "{ls},{lambda},{},{},{},{},{}", r.t, r.overlap_u, r.overlap_v, r.overlap, r.mse);
        }
    }
    write_table(&cfg.output_dir, "amp.csv", &s)
}

fn se(cfg: &ExperimentConfig) -> Result<(), Failure> {
    let law = law_of(cfg)?;
    let t_max = cfg.amp.t_max;
    let kappas = se_cumulants(&law, t_max).map_err(num)?;
    let mut s = String::from("lambda_star,lambda,t,overlap,mse,nu,mu\n");
    for &ls in &cfg.lambda_star_grid {
        let lambda = cfg.mismatch_rule.lambda(ls);
        let runner = StateEvolution::new(kappas.clone(), &cfg.amp.config(lambda), cfg.mc).map_err(num)?;
        let states = runner.run(ls, cfg.amp.init_corr, t_max).map_err(num)?;
        let last = states.last().expect("nonempty");
        for (k, metrics) in se_predict_metrics(last).iter().enumerate() {
            let _ = writeln!(s, "{ls},{lambda},{},{},{},{},{}", metrics.t, metrics.overlap, metrics.mse, last.nu_vec[k], last.mu_vec[k]);
        }
    }
    write_table(&cfg.output_dir, "se.csv", &s)
}

fn spectral(cfg: &ExperimentConfig) -> Result<(), Failure> {
    let law = law_of(cfg)?;
    let gauss = SingularLaw::gaussian(cfg.aspect).map_err(num)?;
    let (n, m) = cfg.spectral_dims();
    let mut s = String::from("lambda_star,lambda,sigma1,bbp,j_optspec,j_gauspec,overlap,mse_optspec,mse_gauspec\n");
    for (point, &ls) in cfg.lambda_star_grid.iter().enumerate() {
        let lambda = cfg.mismatch_rule.lambda(ls);
        let inst = build_instance(ls, &cfg.noise, n, m, trial_seed(cfg.base_seed, point, 0, 1)).map_err(num)?;
        let (os, gs) = spectral_pair(&inst, lambda).map_err(num)?;
        let bbp = bbp_top_singular(&law, ls).map_err(num)?;
        let j_gs = j_scaling(&gauss, lambda).map_err(num)?;
        let _ = writeln!(
            s,
            "{ls},{lambda},{},{bbp},{},{j_gs},{},{},{}",
            os.sigma1,
            os.j_scale,
            spikebench_core::ensembles::overlap_of(&os.u1, &os.v1, &inst),
            os.mse(&inst),
            gs.mse(&inst)
        );
    }
    write_table(&cfg.output_dir, "spectral.csv", &s)
}

fn experiment(cfg: &ExperimentConfig, format: OutputFormat) -> Result<(), Failure> {
    let report = run_experiment(cfg)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    for p in write_outputs(&report, cfg, &cfg.output_dir, format)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let default_side = Fig1Side::PoissonMatched;
    match cli.command {
        Command::Theory(c) => theory(&c.load(default_side)?),
        Command::Amp(c) => amp(&c.load(default_side)?),
        Command::Se(c) => se(&c.load(default_side)?),
        Command::Spectral(c) => spectral(&c.load(default_side)?),
        Command::Experiment(c) => {
            if c.config.is_none() {
                return Err(Failure::Config("experiment needs --config".into()));
            }
            experiment(&c.load(default_side)?, c.format())
        }
        Command::Fig1 { common, side } => {
            if common.config.is_some() {
                return Err(Failure::Config("fig1 uses built-in presets; use `experiment --config` instead".into()));
            }
            let sides = match side {
                SideArg::PoissonMatched => vec![Fig1Side::PoissonMatched],
                SideArg::GaussianScaled4 => vec![Fig1Side::GaussianScaled4],
                SideArg::Both => vec![Fig1Side::PoissonMatched, Fig1Side::GaussianScaled4],
            };
            for side in sides {
                let mut cfg = common.load(side)?;
                if let Some(out) = &common.out {
                    let tag = serde_json::to_value(side).map_err(num)?;
                    cfg.output_dir = out.join(tag.as_str().unwrap_or("fig1"));
                }
                experiment(&cfg, common.format())?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
