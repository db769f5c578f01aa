// Copyright (c) The bioledger Authors
// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bioledger::extractor::ChainStatus;
use bioledger::harness::{
    generate_synthetic_gallery, inject_noise_at, inject_template_noise, run_experiment_on, tamper_extractor_block,
    Architecture, Condition, ExperimentConfig, GalleryFile, HarnessError, System, GALLERY_FILE,
};
use bioledger::matcher::ConsensusOutcome;
use bioledger::metrics::Metric;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bioledger", version, about = "Tamper-evident biometric identification experiments")]
struct Cli {
    /// TOML experiment configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configured seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides the configured metric
    #[arg(long, global = true, value_parser = parse_metric)]
    metric: Option<Metric>,

    /// State and output directory
    #[arg(long, global = true, default_value = "bioledger-out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic gallery to <out>/gallery.txt
    Gen,
    /// Enroll a gallery into <out>: chain, snapshot, matcher tree, archive, ledger
    Enroll {
        /// Gallery file; a synthetic one is generated when omitted
        #[arg(long)]
        gallery: Option<PathBuf>,
    },
    /// Run one identification through the ledger and the matcher tree
    Identify(IdentifyArgs),
    /// Tamper with enrolled templates or extractor blocks
    Tamper(TamperArgs),
    /// Check the chain and the tree against their enrollment state
    Audit,
    /// Restore tampered blocks and leaves
    Restore,
    /// Run the traditional-versus-proposed comparison and write a report
    Experiment {
        /// Use this gallery instead of a synthetic one
        #[arg(long)]
        gallery: Option<PathBuf>,
    },
    /// Print a report written by `experiment`
    Report,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct IdentifyArgs {
    /// Noisy sample of this gallery identity
    #[arg(long)]
    label: Option<String>,
    /// Comma-separated raw sample
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    vector: Option<Vec<f64>>,
}

#[derive(Args)]
struct TamperArgs {
    /// Gallery index of a leaf to perturb (repeatable)
    #[arg(long)]
    leaf: Vec<usize>,
    /// Perturb this fraction of all templates, chosen at random
    #[arg(long, conflicts_with = "leaf")]
    fraction: Option<f64>,
    /// Noise std for template tampering; defaults to the configured one
    #[arg(long)]
    sigma: Option<f64>,
    /// Extractor block to perturb
    #[arg(long)]
    block: Option<usize>,
    /// Amount added to one parameter of the block
    #[arg(long, default_value_t = 0.1, allow_hyphen_values = true)]
    epsilon: f64,
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    s.parse()
}

impl Cli {
    /// Configuration for commands that start from scratch.
    fn fresh_config(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(metric) = self.metric {
            config.metric = metric;
        }
        config.validate()?;
        Ok(config)
    }

    fn gallery(&self, path: Option<&Path>, config: &ExperimentConfig) -> Result<GalleryFile, HarnessError> {
        match path {
            Some(p) => GalleryFile::read(p),
            None => generate_synthetic_gallery(config),
        }
    }

    fn load(&self) -> Result<System, HarnessError> {
        System::load(&self.out)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> Result<ExitCode, HarnessError> {
    match &cli.command {
        Command::Gen => {
            let config = cli.fresh_config()?;
            let gallery = generate_synthetic_gallery(&config)?;
            std::fs::create_dir_all(&cli.out)?;
            let path = cli.out.join(GALLERY_FILE);
            gallery.write(&path)?;
            println!("wrote {} identities of dimension {} to {}", gallery.len(), gallery.dim, path.display());
        }
        Command::Enroll { gallery } => {
            let config = cli.fresh_config()?;
            let gallery = cli.gallery(gallery.as_deref(), &config)?;
            let system = System::create_in(&cli.out, &gallery, &config)?;
            let sizes: Vec<usize> = system.tree.chiefs().iter().map(|c| c.leaves.len()).collect();
            println!("enrolled {} templates into {}", gallery.len(), cli.out.display());
            println!("chain: {} blocks, notary hash {}", system.chain.len(), system.chain.notary().hash.short());
            println!("tree: {} chiefs {:?}, root hash {}", sizes.len(), sizes, system.tree.hash().short());
        }
        Command::Identify(args) => {
            let mut system = cli.load()?;
            let metric = cli.metric.unwrap_or(system.config.metric);
            let raw = match (&args.label, &args.vector) {
                (Some(label), _) => system.probe_for(label)?,
                (_, Some(v)) => v.clone(),
                _ => unreachable!("clap requires one of --label / --vector"),
            };
            let id = system.identify(&raw, metric)?;
            println!("identity {} score {:.6} ({metric})", id.identity, id.score);
            for o in &id.outcomes {
                let verdict = match o.outcome {
                    ConsensusOutcome::Accepted => "accepted".to_string(),
                    ConsensusOutcome::ScrutinyTriggered => format!("scrutiny, flagged leaves {:?}", o.flagged),
                };
                println!("  chief {}: {} -> {} {:.6}", o.chief, verdict, o.decided.identity, o.decided.score);
            }
            let top: Vec<String> = id.candidates.iter().take(5).map(|c| format!("{} {:.4}", c.identity, c.score)).collect();
            println!("  top candidates: {}", top.join(", "));
            println!("  ledger entries: {}", system.ledger.len());
        }
        Command::Tamper(args) => {
            let mut system = cli.load()?;
            let seed = cli.seed.unwrap_or(system.config.seed) ^ system.ledger.len() as u64;
            let sigma = args.sigma.unwrap_or(system.config.noise_sigma);
            let mut touched = false;
            if !args.leaf.is_empty() {
                inject_noise_at(&mut system.tree, &args.leaf, sigma, seed)?;
                println!("perturbed leaves {:?} with sigma {sigma}", args.leaf);
                touched = true;
            }
            if let Some(fraction) = args.fraction {
                let chosen = inject_template_noise(&mut system.tree, sigma, seed, fraction)?;
                println!("perturbed {} leaves with sigma {sigma}: {chosen:?}", chosen.len());
                touched = true;
            }
            if let Some(block) = args.block {
                tamper_extractor_block(&mut system.chain, block, args.epsilon)?;
                println!("perturbed block {block} by {}", args.epsilon);
                touched = true;
            }
            if !touched {
                return Err(HarnessError::InvalidConfig("nothing to tamper: give --leaf, --fraction or --block".into()));
            }
            system.save(&cli.out)?;
        }
        Command::Audit => {
            let system = cli.load()?;
            let report = system.audit()?;
            for line in report.lines() {
                println!("{line}");
            }
            if !report.is_intact() {
                if report.chain != ChainStatus::NotaryMismatch || !report.tree.is_intact() {
                    println!("run `bioledger restore` to return to the stable state");
                }
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Restore => {
            let mut system = cli.load()?;
            let restored = system.restore()?;
            system.save(&cli.out)?;
            println!("restored blocks {:?} and leaves {:?}", restored.blocks, restored.leaves);
            let status = if system.audit()?.is_intact() { "intact" } else { "still tampered" };
            println!("audit: {status}");
        }
        Command::Experiment { gallery } => {
            let config = cli.fresh_config()?;
            let gallery = cli.gallery(gallery.as_deref(), &config)?;
            let report = run_experiment_on(&gallery, &config)?;
            report.write(&cli.out)?;
            print_rank1(report.metric.name(), |a, c| report.rank1(a, c));
            println!("report written to {}", cli.out.display());
        }
        Command::Report => {
            let text = std::fs::read_to_string(cli.out.join("summary.json"))?;
            let summary: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| HarnessError::Parse { line: e.line(), message: e.to_string() })?;
            print_summary(&summary);
            if let Ok(timings) = std::fs::read_to_string(cli.out.join("timings.tsv")) {
                println!("\ntimings (seconds, summed over probes)");
                for line in timings.lines().skip(1) {
                    let f: Vec<&str> = line.split('\t').collect();
                    if let [term, secs, probes] = f.as_slice() {
                        println!("  {term:<16} {secs:>12} over {probes} probes");
                    }
                }
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn print_rank1(metric: &str, rank1: impl Fn(Architecture, Condition) -> Option<f64>) {
    println!("rank-1 accuracy ({metric})");
    println!("  {:<12} {:>14} {:>14}", "", "before_tamper", "after_tamper");
    for a in [Architecture::Traditional, Architecture::Proposed] {
        let cell = |c| rank1(a, c).map_or("-".to_string(), |v| format!("{:.4}", v));
        println!("  {:<12} {:>14} {:>14}", a.name(), cell(Condition::BeforeTamper), cell(Condition::AfterTamper));
    }
}

fn print_summary(summary: &serde_json::Value) {
    let evaluations = summary["evaluations"].as_array().cloned().unwrap_or_default();
    let lookup = |a: Architecture, c: Condition| {
        evaluations
            .iter()
            .find(|e| e["architecture"] == a.name() && e["condition"] == c.name())
            .and_then(|e| e["rank1"].as_f64())
    };
    print_rank1(summary["metric"].as_str().unwrap_or("?"), lookup);
    println!(
        "\n{} identities, {} probes, {} chiefs at fanout {}, seed {}",
        summary["gallery_size"], summary["probes"], summary["chiefs"], summary["fanout"], summary["seed"]
    );
    println!(
        "tampered {} templates, localized {} (exact: {})",
        summary["tampered_templates"], summary["localized_templates"], summary["localization_exact"]
    );
    println!("\nCMC");
    for e in &evaluations {
        let points: Vec<String> = e["cmc"]
            .as_array()
            .map(|v| v.iter().filter_map(|x| x.as_f64()).map(|x| format!("{x:.3}")).collect())
            .unwrap_or_default();
        let name = format!("{}/{}", e["architecture"].as_str().unwrap_or("?"), e["condition"].as_str().unwrap_or("?"));
        println!("  {name:<28} {}", points.join(" "));
    }
}
