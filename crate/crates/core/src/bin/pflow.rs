use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pflow::run::{apply_seed_override, output_dir, run};
use pflow::scenario::{parse_scenario, presets, Analysis, Scenario};

/// Poincaré-sphere analysis of linear control systems.
#[derive(Parser)]
#[command(name = "pflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a built-in example scenario.
    Preset {
        name: String,
        /// Comma-separated analysis kinds; replaces the preset's list (preset parameters are kept).
        #[arg(long, value_delimiter = ',')]
        analyses: Option<Vec<String>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the built-in scenarios.
    ListPresets,
    /// Run the acceptance suite.
    Verify,
}

fn select(sc: &mut Scenario, kinds: &[String]) -> pflow::Result<()> {
    let mut picked = Vec::new();
    for k in kinds {
        let k = k.trim();
        match sc.analyses.iter().find(|a| a.kind() == k) {
            Some(a) => picked.push(a.clone()),
            None => picked.push(Analysis::from_kind(k)?),
        }
    }
    sc.analyses = picked;
    sc.validate()
}

fn execute(mut sc: Scenario, out: Option<PathBuf>) -> pflow::Result<ExitCode> {
    apply_seed_override(&mut sc)?;
    let dir = output_dir(&sc, out.as_deref());
    let rep = run(&sc, &dir)?;
    for a in &rep.analyses {
        let status = if a.passed() { "ok" } else { "FAIL" };
        println!("{:<14} {status:<4} {:>8.2}s", a.kind, a.seconds);
        if let Some(e) = &a.error {
            println!("    error: {e}");
        }
        for c in a.assertions.iter().filter(|c| !c.passed) {
            println!("    failed: {} ({})", c.name, c.detail);
        }
    }
    println!("report: {}", dir.join("report.json").display());
    Ok(ExitCode::from(rep.exit_code() as u8))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Run { scenario, out } => std::fs::read_to_string(&scenario)
            .map_err(pflow::Error::from)
            .and_then(|t| parse_scenario(&t))
            .and_then(|sc| execute(sc, out)),
        Command::Preset { name, analyses, out } => presets::get(&name).and_then(|mut sc| {
            if let Some(k) = analyses {
                select(&mut sc, &k)?;
            }
            execute(sc, out)
        }),
        Command::ListPresets => {
            for name in presets::names() {
                let sc = presets::get(name).expect("embedded presets are valid");
                let kinds: Vec<&str> = sc.analyses.iter().map(Analysis::kind).collect();
                println!("{name}  n={}  [{}]", sc.system.a.len(), kinds.join(", "));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify => {
            let results = pflow::acceptance::run_all();
            for r in &results {
                println!("{r}");
            }
            Ok(if results.iter().all(|r| r.passed) { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    };
    res.unwrap_or_else(|e| {
        eprintln!("pflow: {e}");
        ExitCode::from(2)
    })
}
