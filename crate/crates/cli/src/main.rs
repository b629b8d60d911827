use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ncs_cli::config::{theorem, GammaConfig};
use ncs_cli::pipeline::{self, Artifacts, SynthesisRequest};
use ncs_cli::{CliError, ToolkitConfig};

#[derive(Parser)]
#[command(name = "ncs", version, about = "Buffered networked control: synthesis and simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Discretize the plant and write discretization.json.
    Discretize { config: PathBuf },
    /// Solve the LMIs and write synthesis.json, synthesis.txt, controller.json.
    Synthesize {
        config: PathBuf,
        #[command(flatten)]
        synth: SynthArgs,
    },
    /// Simulate a controller file over the configured seeds.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        controller: PathBuf,
    },
    /// Run every [[compare]] entry on common network realizations.
    Compare { config: PathBuf },
    /// Write the assembled LMI system as text.
    DumpLmi {
        config: PathBuf,
        #[command(flatten)]
        synth: SynthArgs,
    },
    /// Discretize, synthesize, verify, simulate and report in one go.
    Run { config: PathBuf },
}

#[derive(Args)]
struct SynthArgs {
    /// 1 static, 2 switched, 3 extended.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    theorem: Option<u8>,
    /// Fixed decay rate shared by all modes.
    #[arg(long, conflicts_with_all = ["per_mode_gamma", "maximize"])]
    gamma: Option<f64>,
    /// Fixed per-mode decay rates, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1.., conflicts_with = "maximize")]
    per_mode_gamma: Option<Vec<f64>>,
    /// Bisect on the decay rate.
    #[arg(long)]
    maximize: bool,
    /// With --maximize, the 1-based modes whose rate is raised (others stay 0).
    #[arg(long, value_delimiter = ',', requires = "maximize")]
    free: Option<Vec<usize>>,
}

impl SynthArgs {
    fn request(&self, cfg: &ToolkitConfig) -> Result<SynthesisRequest, CliError> {
        let mut req = SynthesisRequest::from_config(cfg)?;
        if let Some(t) = self.theorem {
            req.theorem = theorem(t)?;
        }
        if let Some(g) = self.gamma {
            req.gamma = GammaConfig::Fixed { value: g };
        }
        if let Some(values) = &self.per_mode_gamma {
            req.gamma = GammaConfig::PerMode { values: values.clone() };
        }
        if self.maximize {
            req.gamma = GammaConfig::Maximize {
                free: self.free.clone().unwrap_or_default(),
            };
        }
        // re-run the schema check on the overridden request
        let mut check = cfg.clone();
        check.synthesis.theorem = req.theorem.number();
        check.synthesis.gamma = req.gamma.clone();
        check.validate()?;
        Ok(req)
    }
}

fn run(cmd: &Command) -> Result<String, CliError> {
    match cmd {
        Command::Discretize { config } => {
            let cfg = ToolkitConfig::load(config)?;
            let d = pipeline::run_discretize(&cfg)?;
            Ok(format!("A_d = {:.4}\nB_d = {:.4}", d.a_d, d.b_d))
        }
        Command::Synthesize { config, synth } => {
            let cfg = ToolkitConfig::load(config)?;
            let req = synth.request(&cfg)?;
            let run = pipeline::run_synthesize(&cfg, &req)?;
            Ok(ncs_cli::report::synthesis_text(&run.section, run.verification.as_ref()))
        }
        Command::Simulate { config, controller } => {
            let cfg = ToolkitConfig::load(config)?;
            let rec = pipeline::run_simulate(&cfg, controller)?;
            let settled = rec.seeds.iter().filter(|s| s.summary.settling_step.is_some()).count();
            Ok(format!("{}: {} seeds, {settled} settled", rec.controller, rec.seeds.len()))
        }
        Command::Compare { config } => {
            let cfg = ToolkitConfig::load(config)?;
            let rep = pipeline::run_compare(&cfg)?;
            let lines: Vec<String> = rep
                .pairs
                .iter()
                .map(|p| format!("{} faster than {} on {} seeds, slower on {}, tied on {}", p.a, p.b, p.a_faster, p.b_faster, p.ties))
                .collect();
            Ok(lines.join("\n"))
        }
        Command::DumpLmi { config, synth } => {
            let cfg = ToolkitConfig::load(config)?;
            let req = synth.request(&cfg)?;
            let path = pipeline::run_dump_lmi(&cfg, &req)?;
            Ok(format!("wrote {}", path.display()))
        }
        Command::Run { config } => {
            let cfg = ToolkitConfig::load(config)?;
            let rep = pipeline::run_pipeline(&cfg)?;
            Ok(ncs_cli::report::run_text(&rep))
        }
    }
}

fn stage(cmd: &Command) -> &'static str {
    match cmd {
        Command::Discretize { .. } => "discretize",
        Command::Synthesize { .. } => "synthesize",
        Command::Simulate { .. } => "simulate",
        Command::Compare { .. } => "compare",
        Command::DumpLmi { .. } => "dump-lmi",
        Command::Run { .. } => "run",
    }
}

fn config_path(cmd: &Command) -> &PathBuf {
    match cmd {
        Command::Discretize { config }
        | Command::Synthesize { config, .. }
        | Command::Simulate { config, .. }
        | Command::Compare { config }
        | Command::DumpLmi { config, .. }
        | Command::Run { config } => config,
    }
}

fn clear_error(cmd: &Command) {
    if let Ok(cfg) = ToolkitConfig::load(config_path(cmd)) {
        let _ = std::fs::remove_file(Artifacts::for_config(&cfg).path("error.json"));
    }
}

/// Best effort: the error record also goes to `error.json` when the config
/// can be read.
fn write_error(cmd: &Command, record: &ncs_cli::error::ErrorRecord) {
    if let Ok(cfg) = ToolkitConfig::load(config_path(cmd)) {
        let _ = Artifacts::for_config(&cfg).write_json("error.json", record);
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(text) => {
            clear_error(&cli.command);
            let _ = writeln!(std::io::stdout(), "{}", text.trim_end());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let record = e.record(stage(&cli.command));
            eprintln!("{}", serde_json::to_string(&record).expect("error records serialise"));
            write_error(&cli.command, &record);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
