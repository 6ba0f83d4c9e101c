use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vclos::cli::{
    adversarial_two_jobs, run_experiment, verify_collective, write_atomic, ExperimentConfig, VerifyReport,
    OUTPUT_DIR_ENV,
};
use vclos::patterns::Collective;
use vclos::routing::{collision_monte_carlo, collisions_csv, CollisionParams};
use vclos::sim::{synthesize_trace, write_trace, JobMix};

#[derive(Parser)]
#[command(name = "vclos", version, about = "Contention-free GPU cluster scheduling experiments")]
struct Cli {
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every cell of an experiment config.
    Run {
        config: PathBuf,
        /// Overrides the config and the environment.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Overrides the config's seed list.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// ECMP collision Monte Carlo; writes `scale,count,fraction` CSV.
    Collisions {
        #[arg(long, value_delimiter = ',', default_value = "64,256,1024,2048")]
        scales: Vec<usize>,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Check that source routing keeps a collective contention-free.
    Verify {
        /// ring, hier_ring, hd, all_to_all, pipeline or double_binary_tree.
        #[arg(required_unless_present = "adversarial")]
        collective: Option<Collective>,
        #[arg(short = 'n', long, default_value_t = 64)]
        ranks: usize,
        #[arg(long, default_value_t = 8)]
        leaves: usize,
        #[arg(long)]
        gpus_per_server: Option<usize>,
        /// Check the two-job example that defeats spine-index routing.
        #[arg(long)]
        adversarial: bool,
    },
    /// Write a synthetic JSON-lines trace.
    SynthTrace {
        #[arg(long, default_value_t = 120.0)]
        lambda: f64,
        #[arg(long, default_value_t = 5000)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// TOML file with `[[classes]]` entries.
        #[arg(long)]
        mix: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<(), String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| e.to_string())?;
    s.push('\n');
    match std::io::stdout().write_all(s.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.to_string()),
        _ => Ok(()),
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, String> {
    match cli.cmd {
        Cmd::Run {
            config,
            output_dir,
            seeds,
        } => {
            let mut cfg = ExperimentConfig::load(&config).map_err(|e| e.to_string())?;
            if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
                cfg.output_dir = PathBuf::from(dir);
            }
            if let Some(dir) = output_dir {
                cfg.output_dir = dir;
            }
            if let Some(s) = seeds {
                cfg.seeds = s;
                cfg.validate().map_err(|e| e.to_string())?;
            }
            let out = run_experiment(&cfg).map_err(|e| e.to_string())?;
            if cli.json {
                print_json(&out)?;
            } else {
                for c in &out.cells {
                    let k = c.cell;
                    match (&c.summary, &c.error) {
                        (_, Some(e)) => println!("{} FAILED: {e}", k.file_stem()),
                        (Some(s), None) => println!(
                            "{}: avg JCT {:.1} s, JRT {:.1} s, JWT {:.1} s, fragmentation {}/{} (gpu/network)",
                            k.file_stem(),
                            s.avg_jct,
                            s.avg_jrt,
                            s.avg_jwt,
                            s.fragmentation.gpu_caused,
                            s.fragmentation.network_caused
                        ),
                        (None, None) => {}
                    }
                }
                println!("results in {}", out.output_dir.display());
            }
            Ok(if out.failed() > 0 {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            })
        }
        Cmd::Collisions {
            scales,
            trials,
            seeds,
            output,
        } => {
            if trials == 0 || scales.is_empty() || seeds.is_empty() {
                return Err("need at least one scale, seed and trial".into());
            }
            let res = collision_monte_carlo(&CollisionParams { scales, trials, seeds });
            let csv = collisions_csv(&res);
            if let Some(p) = &output {
                write_atomic(p, &csv).map_err(|e| format!("{}: {e}", p.display()))?;
            }
            if cli.json {
                print_json(&res)?;
            } else if output.is_none() {
                print!("{csv}");
            } else {
                for r in &res {
                    println!(
                        "{:5} GPUs ({}x{}): P(contention) {:.4}, P(>=6 flows) {:.4}",
                        r.scale, r.leaves, r.spines, r.p_any, r.p_ge6
                    );
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Verify {
            collective,
            ranks,
            leaves,
            gpus_per_server,
            adversarial,
        } => {
            let rep: VerifyReport = if adversarial {
                adversarial_two_jobs()?
            } else {
                verify_collective(collective.expect("required by clap"), ranks, leaves, gpus_per_server)?
            };
            if cli.json {
                print_json(&rep)?;
            } else {
                let verdict = if rep.pass { "PASS" } else { "FAIL" };
                println!(
                    "{verdict}: {} steps, max {} flows per link (bound {})",
                    rep.steps, rep.max, rep.bound
                );
                if let Some(w) = &rep.witness {
                    println!("  step {} link {:?} carries {:?}", w.step, w.link, w.flows);
                }
            }
            Ok(if rep.pass { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Cmd::SynthTrace {
            lambda,
            count,
            seed,
            mix,
            output,
        } => {
            let mix = match mix {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| format!("{}: {e}", p.display()))?;
                    toml::from_str::<JobMix>(&text).map_err(|e| format!("{}: {e}", p.display()))?
                }
                None => JobMix::default(),
            };
            let jobs = synthesize_trace(&mix, lambda, count, seed)?;
            let mut buf = Vec::new();
            write_trace(&jobs, &mut buf).map_err(|e| e.to_string())?;
            let text = String::from_utf8(buf).map_err(|e| e.to_string())?;
            match output {
                Some(p) => write_atomic(&p, &text).map_err(|e| format!("{}: {e}", p.display()))?,
                None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| e.to_string())?,
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
