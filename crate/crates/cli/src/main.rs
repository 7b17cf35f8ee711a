//! `combsound`: synthesize sounder waveforms, simulate acquisitions, estimate
//! impulse responses, run route scenarios and self-validate.
//!
//! Every command prints one JSON summary on stdout. Failures exit nonzero
//! with `{"error": {"kind": ..., "message": ...}}` on stderr.

mod validate;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use combsound::channel::{oracle_responses, read_acquisition, simulate_acquisition_with, write_acquisition};
use combsound::config::{Sounder, MULHOUSE};
use combsound::estimator::{estimate_all, CalibrationRecord, Method};
use combsound::iq::{write_atomic, write_signal, IqMetadata};
use combsound::par::Execution;
use combsound::scenario::{
    cable_acquisition, ir_file_name, load_scenario, point_seed, run_scenario, write_ir_csv, RunOptions, ScenarioSpec,
    REPORT_FILE,
};
use combsound::waveform::synthesize;
use combsound::Error;

#[derive(Parser, Debug)]
#[command(
    name = "combsound",
    version,
    about = "Simultaneous multi-transmitter channel sounding simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Sounder config file (TOML), optionally with a [scenario] table.
    #[arg(long, global = true, conflicts_with = "preset")]
    config: Option<PathBuf>,

    /// Built-in sounder preset, used when no config is given.
    #[arg(long, global = true, default_value = MULHOUSE)]
    preset: String,

    /// Noise seed; overrides the scenario's.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Receiver; overrides the scenario's.
    #[arg(long, global = true, value_enum)]
    method: Option<MethodArg>,

    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    /// Process batch points one at a time.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write each transmitter's periodic waveform over one record.
    Synth,
    /// Write one acquisition per scenario point, plus oracle responses.
    Simulate,
    /// Estimate all impulse responses from acquisition files.
    Estimate {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Cable acquisition to calibrate against.
        #[arg(long)]
        calibration: Option<PathBuf>,
    },
    /// Simulate, estimate and score every scenario point.
    Run,
    /// Built-in self checks, plus co-located and two-site example data.
    Validate,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Inversion,
    Correlation,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Inversion => Method::Inversion,
            MethodArg::Correlation => Method::Correlation,
        }
    }
}

/// Failure with a machine-readable kind.
#[derive(Debug)]
pub struct Failure {
    kind: String,
    message: String,
}

impl Failure {
    pub fn new(kind: &str, message: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self::new(e.kind(), e.to_string())
    }
}

type CliResult<T> = Result<T, Failure>;

struct Context {
    sounder: Sounder,
    spec: ScenarioSpec,
    out_dir: PathBuf,
    exec: Execution,
}

impl Context {
    fn from_cli(cli: &Cli) -> CliResult<Self> {
        let (sounder, mut spec) = match &cli.config {
            Some(path) => load_scenario(path)?,
            None => (Sounder::preset(&cli.preset)?, ScenarioSpec::default()),
        };
        if let Some(seed) = cli.seed {
            spec.seed = seed;
        }
        if let Some(method) = cli.method {
            spec.method = method.into();
        }
        let exec = if cli.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        };
        Ok(Self {
            sounder,
            spec,
            out_dir: cli.out_dir.clone(),
            exec,
        })
    }

    fn out(&self, name: &str) -> CliResult<PathBuf> {
        fs::create_dir_all(&self.out_dir).map_err(|e| Error::io(&self.out_dir, e))?;
        Ok(self.out_dir.join(name))
    }

    /// Scenario points, or one identity point when the scenario lists none.
    fn points(&self) -> CliResult<Vec<Vec<combsound::channel::TapProfile>>> {
        let points = self.spec.point_profiles(&self.sounder)?;
        if points.is_empty() {
            Ok(ScenarioSpec::identity().point_profiles(&self.sounder)?)
        } else {
            Ok(points)
        }
    }
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

fn synth(ctx: &Context) -> CliResult<Value> {
    let s = &ctx.sounder;
    let mut files = Vec::new();
    for (i, comb) in s.combs().iter().enumerate() {
        let n = i + 1;
        let signal = synthesize(comb, s.sample_rate(), s.span())?;
        let meta = IqMetadata {
            role: Some("transmit".into()),
            fingerprint: Some(s.fingerprint().into()),
            transmitters: Some(s.transmitters()),
            channel: Some(n),
            ..IqMetadata::for_signal(&signal)
        };
        let path = ctx.out(&format!("tx{n}.iq"))?;
        write_signal(&path, &signal, &meta)?;
        files.push(display(&path));
    }
    let config = ctx.out("sounder.toml")?;
    write_atomic(&config, s.config().to_toml()?.as_bytes())?;
    Ok(json!({
        "command": "synth",
        "fingerprint": s.fingerprint(),
        "samples": s.record_len(),
        "files": files,
        "config": display(&config),
    }))
}

fn simulate(ctx: &Context) -> CliResult<Value> {
    let s = &ctx.sounder;
    let points = ctx.points()?;
    let dir = ctx.out("")?;
    let written = ctx.exec.try_map_indexed(points.len(), |i| -> Result<String, Error> {
        let rec = simulate_acquisition_with(s, &points[i], &ctx.spec.equipment, point_seed(ctx.spec.seed, i as u64))?;
        let path = dir.join(format!("acq_{i:05}.iq"));
        write_acquisition(&path, &rec)?;
        for oracle in oracle_responses(s, &points[i])? {
            write_ir_csv(&dir.join(format!("oracle_{i:05}_ch{}.csv", oracle.channel())), &oracle)?;
        }
        Ok(display(&path))
    })?;
    let profiles = serde_json::to_string_pretty(&points).map_err(|e| Failure::new("format", e.to_string()))?;
    write_atomic(&dir.join("profiles.json"), profiles.as_bytes())?;
    let mut summary = json!({
        "command": "simulate",
        "fingerprint": s.fingerprint(),
        "points": points.len(),
        "acquisitions": written,
    });
    if !ctx.spec.equipment.is_empty() {
        let cable = dir.join("cable.iq");
        write_acquisition(&cable, &cable_acquisition(s, &ctx.spec.equipment)?)?;
        summary["cable"] = json!(display(&cable));
    }
    Ok(summary)
}

fn estimate(ctx: &Context, inputs: &[PathBuf], calibration: Option<&Path>) -> CliResult<Value> {
    let s = &ctx.sounder;
    let cal = match calibration {
        Some(path) => {
            let cable = read_acquisition(path)?;
            if cable.fingerprint != s.fingerprint() {
                return Err(Error::FingerprintMismatch {
                    record: cable.fingerprint,
                    config: s.fingerprint().into(),
                }
                .into());
            }
            Some(CalibrationRecord::from_cable(&cable, s)?)
        }
        None => None,
    };
    let dir = ctx.out("")?;
    let written = ctx
        .exec
        .try_map_indexed(inputs.len(), |i| -> Result<Vec<String>, Error> {
            let input = &inputs[i];
            let rec = read_acquisition(input)?;
            let stem = input
                .file_stem()
                .map(|x| x.to_string_lossy().into_owned())
                .unwrap_or_default();
            estimate_all(&rec, cal.as_ref(), s, ctx.spec.method)?
                .iter()
                .map(|est| {
                    let path = dir.join(format!("{stem}_ch{}.csv", est.channel()));
                    write_ir_csv(&path, est).map(|_| display(&path))
                })
                .collect()
        })?;
    Ok(json!({
        "command": "estimate",
        "method": ctx.spec.method,
        "calibrated": cal.is_some(),
        "files": written.concat(),
    }))
}

fn run(ctx: &Context) -> CliResult<Value> {
    let points = ctx.points()?;
    let options = RunOptions {
        out_dir: Some(ctx.out_dir.clone()),
        exec: ctx.exec,
        ..RunOptions::from_spec(&ctx.spec)
    };
    let report = run_scenario(&ctx.sounder, &points, &options)?;
    let finite = |v: f64| if v.is_finite() { json!(v) } else { json!(v.to_string()) };
    Ok(json!({
        "command": "run",
        "method": report.method,
        "points": report.points.len(),
        "ir_files": report.points.len() * report.transmitters,
        "first_ir_file": display(&ctx.out_dir.join(ir_file_name(0, 1))),
        "worst_nmse_db": finite(report.worst_nmse_db()),
        "worst_channel_difference_db": report.worst_channel_difference_db().map(finite),
        "report": display(&ctx.out_dir.join(REPORT_FILE)),
    }))
}

fn dispatch(cli: &Cli) -> CliResult<Value> {
    let ctx = Context::from_cli(cli)?;
    match &cli.command {
        Command::Synth => synth(&ctx),
        Command::Simulate => simulate(&ctx),
        Command::Estimate { inputs, calibration } => estimate(&ctx, inputs, calibration.as_deref()),
        Command::Run => run(&ctx),
        Command::Validate => validate::validate(&ctx.sounder, &ctx.out("")?, ctx.spec.method),
    }
}

fn error_record(kind: &str, message: &str) -> String {
    json!({ "error": { "kind": kind, "message": message } }).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help, --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", error_record("usage", e.to_string().trim_end()));
            return ExitCode::from(2);
        }
    };
    match dispatch(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("{}", error_record(&f.kind, &f.message));
            ExitCode::FAILURE
        }
    }
}
