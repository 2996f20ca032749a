use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Arg, ArgAction, ArgMatches, Command};
use unissl::config::{known_keys, RawConfig, OUTPUT_ROOT_ENV};
use unissl::pipeline::{self, Stages};
use unissl::Result;

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

fn run_args(cmd: Command) -> Command {
    let cmd = cmd.arg(Arg::new("config").long("config").value_name("FILE").help("TOML file of config keys"));
    known_keys().fold(cmd, |cmd, key| {
        let arg = Arg::new(key).long(flag_name(key)).value_name("VALUE");
        let arg = if key == "deterministic" || key == "probe_standardize" {
            arg.num_args(0..=1).default_missing_value("true")
        } else {
            arg
        };
        cmd.arg(arg)
    })
}

fn cli() -> Command {
    Command::new("unissl")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Domain-agnostic self-supervised pretraining with linear-probe transfer")
        .after_help(format!("The output root defaults to ${OUTPUT_ROOT_ENV}, then ./runs."))
        .subcommand_required(true)
        .subcommand(run_args(Command::new("pretrain").about("Pretrain (or resume) and write a checkpoint")))
        .subcommand(run_args(Command::new("transfer").about("Linear-probe the run's checkpoint")))
        .subcommand(run_args(Command::new("all").about("Pretrain, transfer and summarize")))
        .subcommand(
            Command::new("report").about("Aggregate reports of every run under the output root").arg(
                Arg::new("output_dir").long("output-dir").value_name("DIR").action(ArgAction::Set),
            ),
        )
}

fn resolve(m: &ArgMatches) -> Result<unissl::config::RunConfig> {
    let file = match m.get_one::<String>("config") {
        Some(p) => RawConfig::from_file(&PathBuf::from(p))?,
        None => RawConfig::default(),
    };
    let mut flags = RawConfig::default();
    for key in known_keys() {
        if let Some(v) = m.get_one::<String>(key) {
            flags.set_flag(key, v)?;
        }
    }
    file.merge(flags).resolve()
}

fn run(m: &ArgMatches) -> Result<()> {
    let (name, sub) = m.subcommand().expect("subcommand is required");
    if name == "report" {
        let root = sub
            .get_one::<String>("output_dir")
            .cloned()
            .or_else(|| std::env::var(OUTPUT_ROOT_ENV).ok())
            .unwrap_or_else(|| "runs".into());
        let summaries = pipeline::report(&PathBuf::from(root))?;
        print!("{}", pipeline::render_table(&summaries));
        return Ok(());
    }
    let cfg = resolve(sub)?;
    let stages = match name {
        "pretrain" => Stages::Pretrain,
        "transfer" => Stages::Transfer,
        _ => Stages::All,
    };
    let manifest = pipeline::run_experiment(&cfg, stages)?;
    let dir = pipeline::run_dir(&cfg);
    println!("run {} at step {}", manifest.run_id, manifest.step);
    if stages != Stages::Pretrain {
        let reports = pipeline::read_reports(&dir.join(pipeline::REPORTS_FILE))?;
        for r in reports {
            println!("{} {} {} = {:.4}", r.domain, r.report.task, r.report.metric.as_str(), r.report.value);
        }
    }
    println!("{}", dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
