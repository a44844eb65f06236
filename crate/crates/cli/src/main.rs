//! `ris-sim`: batch driver for the feedback experiments.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use ris_feedback::beamforming::CeoParams;
use ris_feedback::codec::{overhead, OverheadReport};
use ris_feedback::harness::{fig4_spec, fig5_spec, format_sig6, sweep, Axis, ResultTable, Scheme, SweepSpec};
use ris_feedback::SystemConfig;
use serde::Serialize;

const DEFAULT_TRIALS: usize = 500;
/// Below this many trials per point the summary gets a variance warning.
const FEW_TRIALS: usize = 100;

#[derive(Debug, Parser)]
#[command(name = "ris-sim", version, about = "RIS channel-feedback Monte-Carlo simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Rate against per-user feedback overhead (sweeps B).
    Fig4(RunArgs),
    /// Rate against AoD grid resolution (sweeps G_t).
    Fig5(RunArgs),
    /// Print the feedback bit budget.
    Overhead(RunArgs),
    /// Generic sweep over --bits or --gt.
    Sweep(RunArgs),
}

#[derive(Debug, Args, Clone, Default)]
struct RunArgs {
    /// Flat key = value config file; keys are the system config fields,
    /// CEO settings use a `ceo_` prefix, `trials` sets the trial count.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, created if missing; defaults to the working
    /// directory. `overhead` writes nothing unless this is given.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Comma-separated scheme names.
    #[arg(long)]
    schemes: Option<String>,
    /// Comma-separated grid resolutions.
    #[arg(long)]
    gt: Option<String>,
    /// Comma-separated codeword bit counts.
    #[arg(long)]
    bits: Option<String>,
    #[arg(long)]
    quiet: bool,
}

impl RunArgs {
    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }
}

/// Resolved inputs of a run, echoed to `manifest.json`.
#[derive(Debug, Serialize)]
struct RunManifest {
    command: String,
    config_path: Option<PathBuf>,
    out_dir: PathBuf,
    seed: u64,
    trials: usize,
    schemes: Vec<Scheme>,
    axis: Option<Axis>,
    quiet: bool,
    config: SystemConfig,
    ceo: CeoParams,
    overhead: OverheadReport,
}

#[derive(Debug)]
enum Failure {
    /// Bad flags, config, or output location.
    Usage(String),
    /// The simulation itself failed.
    Runtime(String),
}

impl Failure {
    fn exit_code(&self) -> ExitCode {
        match self {
            Failure::Usage(_) => ExitCode::from(1),
            Failure::Runtime(_) => ExitCode::from(2),
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => m,
        }
    }
}

struct FileSettings {
    config: SystemConfig,
    ceo: CeoParams,
    trials: Option<usize>,
}

fn load_settings(path: Option<&Path>) -> Result<FileSettings, Failure> {
    let Some(path) = path else {
        return Ok(FileSettings {
            config: SystemConfig::default(),
            ceo: CeoParams::default(),
            trials: None,
        });
    };
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    parse_settings(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn parse_settings(text: &str) -> Result<FileSettings, String> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| e.to_string())?;
    let mut system = toml::Table::new();
    let mut ceo = toml::Table::new();
    let mut trials = None;
    for (key, value) in table {
        if let Some(k) = key.strip_prefix("ceo_") {
            ceo.insert(k.to_string(), value);
        } else if key == "trials" {
            let t = value.as_integer().filter(|&t| t >= 1).ok_or("trials must be a positive integer")?;
            trials = Some(t as usize);
        } else {
            system.insert(key, value);
        }
    }
    let config: SystemConfig = system.try_into().map_err(|e: toml::de::Error| e.to_string())?;
    let ceo: CeoParams = ceo.try_into().map_err(|e: toml::de::Error| format!("ceo_*: {e}"))?;
    Ok(FileSettings { config, ceo, trials })
}

fn parse_list<T: std::str::FromStr>(flag: &str, raw: &str) -> Result<Vec<T>, Failure> {
    let values: Result<Vec<T>, _> = raw.split(',').map(|s| s.trim().parse::<T>()).collect();
    match values {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => Err(Failure::Usage(format!("--{flag}: malformed list '{raw}'"))),
    }
}

fn parse_schemes(raw: &str) -> Result<Vec<Scheme>, Failure> {
    raw.split(',')
        .map(|s| s.parse::<Scheme>().map_err(|e| Failure::Usage(format!("--schemes: {e}"))))
        .collect()
}

fn axis_override(args: &RunArgs) -> Result<Option<Axis>, Failure> {
    match (&args.bits, &args.gt) {
        (Some(_), Some(_)) => Err(Failure::Usage("--bits and --gt are mutually exclusive".into())),
        (Some(b), None) => Ok(Some(Axis::CodewordBits(parse_list("bits", b)?))),
        (None, Some(g)) => {
            let grid: Vec<usize> = parse_list("gt", g)?;
            if grid.contains(&0) {
                return Err(Failure::Usage("--gt: grid resolutions must be positive".into()));
            }
            Ok(Some(Axis::GridResolution(grid)))
        }
        (None, None) => Ok(None),
    }
}

fn build_spec(name: &str, args: &RunArgs) -> Result<(SweepSpec, Option<&'static str>), Failure> {
    let settings = load_settings(args.config.as_deref())?;
    let mut base = settings.config;
    if let Some(seed) = args.seed {
        base.rng_seed = seed;
    }
    let trials = args.trials.or(settings.trials).unwrap_or(DEFAULT_TRIALS);
    let axis = axis_override(args)?;
    let (mut spec, file) = match name {
        "fig4" => (fig4_spec(&base, trials), Some("fig4.csv")),
        "fig5" => (fig5_spec(&base, trials), Some("fig5.csv")),
        _ => {
            let axis = axis
                .clone()
                .ok_or_else(|| Failure::Usage("sweep needs --bits or --gt".into()))?;
            let spec = SweepSpec {
                axis,
                trials,
                base: base.clone(),
                ceo: CeoParams::default(),
                schemes: vec![Scheme::Proposed, Scheme::Conventional, Scheme::PerfectCsit],
            };
            (spec, None)
        }
    };
    spec.ceo = settings.ceo;
    if let Some(axis) = axis {
        spec.axis = axis;
    }
    if let Some(raw) = &args.schemes {
        spec.schemes = parse_schemes(raw)?;
    }
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok((spec, file))
}

fn prepare_out_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Usage(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: &str, failure: fn(String) -> Failure) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| failure(format!("cannot write {}: {e}", path.display())))
}

fn write_manifest(command: &str, args: &RunArgs, spec: &SweepSpec, axis: Option<Axis>) -> Result<(), Failure> {
    let manifest = RunManifest {
        command: command.to_string(),
        config_path: args.config.clone(),
        out_dir: args.out_dir(),
        seed: spec.base.rng_seed,
        trials: spec.trials,
        schemes: spec.schemes.clone(),
        axis,
        quiet: args.quiet,
        config: spec.base.clone(),
        ceo: spec.ceo.clone(),
        overhead: overhead(&spec.base),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Failure::Runtime(e.to_string()))?;
    write_file(&args.out_dir().join("manifest.json"), &(json + "\n"), Failure::Usage)
}

fn run_sweep(command: &str, args: &RunArgs) -> Result<(), Failure> {
    let (spec, file) = build_spec(command, args)?;
    prepare_out_dir(&args.out_dir())?;
    write_manifest(command, args, &spec, Some(spec.axis.clone()))?;
    if spec.trials < FEW_TRIALS {
        eprintln!(
            "warning: {} trials per point; mean rates will have high variance",
            spec.trials
        );
    }
    let started = Instant::now();
    let table = sweep(&spec).map_err(|e| Failure::Runtime(e.to_string()))?;
    let csv_name = file.unwrap_or("sweep.csv");
    write_file(&args.out_dir().join(csv_name), &table.to_csv(), Failure::Runtime)?;
    if !args.quiet {
        print_summary(&table, csv_name, started.elapsed().as_secs_f64());
    }
    Ok(())
}

fn print_summary(table: &ResultTable, file: &str, seconds: f64) {
    println!("{:<22} {:>10} {:>10} {:>10} {:>10}", "scheme", "axis", "bits", "rate", "stderr");
    for r in &table.rows {
        let opt = |x: Option<f64>| x.map(format_sig6).unwrap_or_else(|| "-".into());
        println!(
            "{:<22} {:>10} {:>10} {:>10} {:>10}",
            r.scheme.name(),
            opt(r.axis_value),
            opt(r.per_user_bits),
            format_sig6(r.mean_rate),
            format_sig6(r.stderr)
        );
    }
    println!("wrote {file} ({} rows, {seconds:.1} s)", table.rows.len());
}

fn run_overhead(args: &RunArgs) -> Result<(), Failure> {
    let settings = load_settings(args.config.as_deref())?;
    let mut config = settings.config;
    if let Some(seed) = args.seed {
        config.rng_seed = seed;
    }
    if args.gt.is_some() {
        return Err(Failure::Usage("overhead takes --bits, not --gt".into()));
    }
    let bits: Vec<u32> = match &args.bits {
        Some(raw) => parse_list("bits", raw)?,
        None => vec![config.b],
    };
    for &b in &bits {
        SystemConfig { b, ..config.clone() }
            .validate()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    if let Some(out) = &args.out {
        prepare_out_dir(out)?;
        let spec = SweepSpec {
            axis: Axis::CodewordBits(bits.clone()),
            trials: 1,
            base: config.clone(),
            ceo: settings.ceo,
            schemes: Vec::new(),
        };
        write_manifest("overhead", args, &spec, Some(spec.axis.clone()))?;
    }
    if let [b] = bits[..] {
        print!("{}", overhead_breakdown(&SystemConfig { b, ..config }));
    } else {
        print!("{}", overhead_table(&config, &bits));
    }
    Ok(())
}

fn overhead_breakdown(config: &SystemConfig) -> String {
    let r = overhead(config);
    let ratio = config.coherence_ratio;
    let mut s = String::new();
    s += &format!(
        "step 1 (support)     {:>5} bits raw  x {} / {ratio} = {}\n",
        r.step1_bits,
        format_sig6(config.step1_user_fraction),
        format_sig6(r.step1_amortized)
    );
    s += &format!(
        "step 2 (angles)      {:>5} bits raw  / {ratio} = {}\n",
        r.step2_bits,
        format_sig6(r.step2_amortized)
    );
    s += &format!("step 3 (codewords)   {:>5} bits raw  = {}\n", r.step3_bits, r.step3_bits);
    if r.gain_bits > 0 {
        s += &format!("gain phases          {:>5} bits raw  = {}\n", r.gain_bits, r.gain_bits);
    }
    s += &format!("raw total            {:>5} bits\n", r.raw_total());
    s += &format!(
        "per-user amortized   {} bits ({} / {} / {})\n",
        format_sig6(r.per_user_amortized_bits),
        format_sig6(r.step1_amortized),
        format_sig6(r.step2_amortized),
        r.step3_bits + r.gain_bits
    );
    s
}

fn overhead_table(config: &SystemConfig, bits: &[u32]) -> String {
    let mut s = format!(
        "{:>3} {:>8} {:>8} {:>8} {:>8} {:>12}\n",
        "B", "step1", "step2", "step3", "raw", "amortized"
    );
    for &b in bits {
        let r = overhead(&SystemConfig { b, ..config.clone() });
        s += &format!(
            "{:>3} {:>8} {:>8} {:>8} {:>8} {:>12}\n",
            b,
            format_sig6(r.step1_amortized),
            format_sig6(r.step2_amortized),
            r.step3_bits + r.gain_bits,
            r.raw_total(),
            format_sig6(r.per_user_amortized_bits)
        );
    }
    s
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("RIS_SIM_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| Failure::Usage(format!("RIS_SIM_THREADS: expected a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::Runtime(e.to_string()))
}

fn run(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    match &cli.command {
        Command::Fig4(args) => run_sweep("fig4", args),
        Command::Fig5(args) => run_sweep("fig5", args),
        Command::Sweep(args) => run_sweep("sweep", args),
        Command::Overhead(args) => run_overhead(args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.exit_code()
        }
    }
}
