use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use emo_core::memstore::MemoryStore;
use emo_lab::config::ExperimentConfig;
use emo_lab::experiments::output_dir;
use emo_lab::{parse_config, run_experiment, ExperimentKind, LabError};

#[derive(Parser)]
#[command(name = "emo-lab", version, about = "Episodic memory optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run { config: PathBuf },
    /// Print a complete config with every default spelled out.
    PrintDefaults {
        #[arg(long, default_value = "compare-optimizers")]
        experiment: String,
    },
    /// Parse and validate a config without running it.
    Validate { config: PathBuf },
    /// Summarise a memory snapshot.
    InspectMemory { snapshot: PathBuf },
}

fn load(path: &PathBuf) -> Result<ExperimentConfig, LabError> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    parse_config(&text)
}

fn configure_threads() -> Result<(), LabError> {
    if let Ok(v) = std::env::var("EMO_THREADS") {
        let n: usize = v.parse().map_err(|_| LabError::config("EMO_THREADS", format!("not a thread count: `{v}`")))?;
        if n == 0 {
            return Err(LabError::config("EMO_THREADS", "must be >= 1"));
        }
        // fails only if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn inspect(path: &PathBuf) -> Result<String, LabError> {
    let bytes = std::fs::read(path).map_err(|e| LabError::io(path, e))?;
    let store = MemoryStore::load(&bytes)?;
    let mut out = format!(
        "capacity: {}\noccupancy: {}/{}\ncontroller: {}\nclock_hand: {}\nglobal_tick: {}\nfrozen: {}\nd_key: {}\n",
        store.capacity(),
        store.len(),
        store.capacity(),
        store.controller().as_str(),
        store.clock_hand(),
        store.global_tick(),
        store.is_frozen(),
        store.d_key(),
    );
    out.push_str("layers:\n");
    for (name, shape) in store.schema() {
        out.push_str(&format!("  {name} {shape:?}\n"));
    }
    out.push_str("slots (index, key_norm, inserted, last_access, ref):\n");
    for (i, (slot, norm)) in store.slots().iter().zip(store.key_norms()).enumerate() {
        out.push_str(&format!(
            "  {i} {norm:.6} {} {} {}\n",
            slot.insert_tick,
            slot.last_access_tick,
            u8::from(slot.ref_bit)
        ));
    }
    Ok(out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Run { config } => {
            let cfg = load(&config)?;
            let base = std::env::current_dir().map_err(|e| LabError::io(&config, e))?;
            let out = output_dir(&cfg, &base);
            let outcome = run_experiment(&cfg, &out)?;
            println!("{}", outcome.status);
            Ok(())
        }
        Command::PrintDefaults { experiment } => {
            let kind = ExperimentKind::parse(&experiment).ok_or_else(|| {
                let known: Vec<&str> = ExperimentKind::ALL.iter().map(|k| k.as_str()).collect();
                LabError::config("experiment", format!("unknown experiment `{experiment}` ({})", known.join(", ")))
            })?;
            print!("{}", ExperimentConfig::default_for(kind).to_toml());
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = load(&config)?;
            println!("ok {} {}", cfg.experiment.as_str(), cfg.hash());
            Ok(())
        }
        Command::InspectMemory { snapshot } => {
            print!("{}", inspect(&snapshot)?);
            Ok(())
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
