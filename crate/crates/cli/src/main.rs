use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use obfusim::{config, Outcome, Overrides, Runner, Scale, Stage};

/// Runs one stage of the obfuscation experiment pipeline.
#[derive(Debug, Parser)]
#[command(name = "obfusim", version)]
struct Args {
    stage: Stage,
    /// JSON config; fields left out come from the scale preset.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config and OBFUSIM_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config and OBFUSIM_SCALE.
    #[arg(long, value_enum)]
    scale: Option<Scale>,
    /// Run directory.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Rerun even when the inputs are unchanged.
    #[arg(long)]
    force: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let run = || -> obfusim::Result<()> {
        let cfg = config::load(&args.config, &Overrides { seed: args.seed, scale: args.scale })?;
        let mut runner = Runner::new(cfg, &args.out)?;
        runner.force = args.force;
        for (stage, outcome) in runner.run(args.stage)? {
            let verb = if outcome == Outcome::Skipped { "up to date" } else { "done" };
            println!("{stage}: {verb}");
        }
        println!("{} artifacts in {}", runner.manifest().artifact_count(), runner.dir().join("manifest.json").display());
        Ok(())
    };
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
