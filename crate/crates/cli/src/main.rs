use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use rlvae::chem::{parse_smiles, write_canonical_smiles, MolGraph};
use rlvae::data::{ingest, Dataset, IngestOptions, Role};
use rlvae::editdist::{mdp_edit_distance_capped, DEFAULT_MAX_STATES};
use rlvae::experiments::{
    choose_starts, evaluate_reconstruction, explore_grid, perturb_sweep, write_csv, Decoder, EvalOptions, Policy,
    SweepOptions,
};
use rlvae::fingerprints::{atom_pair_fingerprint, morgan_fingerprint, path_fingerprint, similarities, SimilarityConfig};
use rlvae::mdp::{idealized_episode, MdpConfig};
use rlvae::model::Model;
use rlvae::nn::Checkpoint;
use rlvae::training::{checkpoint_train_config, train, TrainConfig};
use serde_json::{json, Value};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Molecular graph autoencoder with a value-function decoder.
#[derive(Parser, Debug)]
#[command(name = "rlvae", version)]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// JSON training config, overlaid on the chosen preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for parallel searches (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the canonical SMILES of each input.
    Canonicalize {
        smiles: Vec<String>,
        /// Read SMILES from a file, one per line.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Print the sparse fingerprints of a molecule as JSON.
    Fingerprint {
        smiles: String,
        #[arg(long, default_value_t = 3)]
        radius: u32,
        #[arg(long, default_value_t = 7)]
        path_length: usize,
    },
    /// Print the reward components R(s, y) of a state against a target.
    Similarity { state: String, target: String },
    /// Print the idealized episode that builds a target, as CSV.
    Episode {
        smiles: String,
        #[arg(long, default_value_t = 20)]
        max_steps: usize,
    },
    /// Minimum number of search-MDP actions between two molecules.
    Editdist {
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
        #[arg(long, default_value_t = 5)]
        max_steps: usize,
        #[arg(long, default_value_t = DEFAULT_MAX_STATES)]
        max_states: usize,
    },
    /// Filter, deduplicate and fold-split a SMILES list into a manifest.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        max_heavy_atoms: Option<usize>,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Train on one split of a manifest.
    Train(TrainArgs),
    /// Reconstruction accuracy of a checkpoint on one split.
    Evaluate(EvaluateArgs),
    /// Latent perturbation sweep around starting molecules.
    Perturb(PerturbArgs),
    /// Decode an 11 x 11 grid spanned by two random latent directions.
    Explore(ExploreArgs),
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Manifest CSV written by `ingest`.
    #[arg(long)]
    data: PathBuf,
    /// Split to use: train, tune or test.
    #[arg(long)]
    split: Option<String>,
    /// Use only the first N molecules of the split.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Output directory for metrics.csv and checkpoints.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    steps: u64,
    /// Base preset: full or desk.
    #[arg(long, default_value = "full")]
    preset: String,
    /// Overrides checkpoint_every from the config.
    #[arg(long)]
    checkpoint_every: Option<u64>,
    /// Progress line on stderr every N steps (0 = silent).
    #[arg(long, default_value_t = 0)]
    log_every: u64,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// greedy-decode or random-walk.
    #[arg(long, default_value = "greedy-decode")]
    policy: String,
    /// Per-molecule CSV.
    #[arg(long)]
    out: PathBuf,
    /// Edit-distance search depth (0 skips the search).
    #[arg(long, default_value_t = 3)]
    edit_max_steps: usize,
    #[arg(long, default_value_t = 200_000)]
    edit_max_states: usize,
}

#[derive(Args, Debug)]
struct PerturbArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    starts: usize,
    #[arg(long, default_value_t = 100)]
    repeats: usize,
}

#[derive(Args, Debug)]
struct ExploreArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Starting molecule.
    #[arg(long)]
    smiles: String,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
}

type Outcome = Result<(), Failure>;

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn data(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Data(e.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            eprintln!("run `rlvae --help` for usage");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Canonicalize { smiles, input } => canonicalize(smiles, input.as_deref()),
        Command::Fingerprint {
            smiles,
            radius,
            path_length,
        } => {
            let g = molecule(smiles)?;
            let norm = rlvae::chem::normalized(&g);
            let show = |fp: &rlvae::fingerprints::SparseFingerprint| -> Value {
                fp.entries().iter().map(|&(k, c)| json!([format!("{k:016x}"), c])).collect()
            };
            let out = json!({
                "smiles": write_canonical_smiles(&g),
                "morgan": show(&morgan_fingerprint(&norm, *radius)),
                "path": show(&path_fingerprint(&norm, *path_length)),
                "atom_pair": show(&atom_pair_fingerprint(&norm)),
            });
            println!("{}", serde_json::to_string_pretty(&out).expect("json"));
            Ok(())
        }
        Command::Similarity { state, target } => {
            let (s, y) = (molecule(state)?, molecule(target)?);
            let sim = similarities(&s, &y, &SimilarityConfig::default());
            let out = json!({
                "morgan": sim.morgan,
                "path": sim.path,
                "atom_pair": sim.pair,
                "atom_count": sim.atom_count,
                "reward": sim.reward(),
            });
            println!("{}", serde_json::to_string_pretty(&out).expect("json"));
            Ok(())
        }
        Command::Episode { smiles, max_steps } => {
            let y = molecule(smiles)?;
            let cfg = MdpConfig {
                max_steps: *max_steps,
                ..MdpConfig::decoder()
            };
            let sim = SimilarityConfig::default();
            let ep = idealized_episode(&y, &cfg, &mut |s| rlvae::fingerprints::reward(s, &y, &sim)).map_err(data)?;
            let mut out = std::io::stdout().lock();
            let _ = writeln!(out, "t,action,state,reward,terminal");
            for tr in &ep.steps {
                let _ = writeln!(
                    out,
                    "{},{},{},{:.6},{}",
                    tr.t,
                    tr.action,
                    write_canonical_smiles(&tr.state),
                    tr.reward,
                    tr.terminal as u8
                );
            }
            Ok(())
        }
        Command::Editdist {
            from,
            to,
            max_steps,
            max_states,
        } => {
            let (a, b) = (molecule(from)?, molecule(to)?);
            println!("{}", mdp_edit_distance_capped(&a, &b, *max_steps, *max_states));
            Ok(())
        }
        Command::Ingest {
            input,
            out,
            max_heavy_atoms,
            limit,
        } => {
            let opts = IngestOptions {
                seed: cli.seed,
                max_heavy_atoms: *max_heavy_atoms,
                limit: *limit,
            };
            let d = ingest(input, &opts).map_err(data)?;
            d.write_manifest(out).map_err(data)?;
            let sizes = [Role::Train, Role::Tune, Role::Test].map(|r| d.split(r).len());
            let report = json!({
                "report": d.report,
                "train": sizes[0],
                "tune": sizes[1],
                "test": sizes[2],
            });
            println!("{}", serde_json::to_string_pretty(&report).expect("json"));
            Ok(())
        }
        Command::Train(a) => run_train(cli, a),
        Command::Evaluate(a) => run_evaluate(cli, a),
        Command::Perturb(a) => run_perturb(cli, a),
        Command::Explore(a) => {
            let (model, mdp) = load_model(&a.checkpoint)?;
            let start = molecule(&a.smiles)?;
            let mut dec = Decoder::new(&model, mdp);
            let rows = explore_grid(&mut dec, &start, cli.seed).map_err(data)?;
            write_csv(&a.out, &rows).map_err(data)
        }
    }
}

fn molecule(smiles: &str) -> Result<MolGraph, Failure> {
    parse_smiles(smiles).with_context(|| format!("cannot parse `{smiles}`")).map_err(data)
}

fn canonicalize(smiles: &[String], input: Option<&Path>) -> Outcome {
    let mut all: Vec<String> = smiles.to_vec();
    if let Some(p) = input {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display())).map_err(data)?;
        all.extend(text.lines().filter_map(|l| l.split_whitespace().next()).map(str::to_string));
    }
    if all.is_empty() {
        return Err(usage(anyhow!("no SMILES given")));
    }
    let mut out = std::io::stdout().lock();
    for s in &all {
        let g = molecule(s)?;
        let _ = writeln!(out, "{}", write_canonical_smiles(&g));
    }
    Ok(())
}

/// Recursively overlays `patch` onto `base`.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn train_config(cli: &Cli, preset: &str) -> Result<TrainConfig, Failure> {
    let base = match preset {
        "full" => TrainConfig::default(),
        "desk" => TrainConfig::desk(),
        other => return Err(usage(anyhow!("unknown preset `{other}` (expected full or desk)"))),
    };
    let Some(path) = &cli.config else {
        return Ok(base);
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(data)?;
    let patch: Value = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(usage)?;
    let mut value = serde_json::to_value(&base).expect("config serializes");
    merge(&mut value, patch);
    let cfg: TrainConfig = serde_json::from_value(value)
        .with_context(|| format!("invalid config {}", path.display()))
        .map_err(usage)?;
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn role(name: Option<&str>, default: Role) -> Result<Role, Failure> {
    match name {
        None => Ok(default),
        Some(s) => Role::parse(s).ok_or_else(|| usage(anyhow!("unknown split `{s}` (expected train, tune or test)"))),
    }
}

fn load_split(a: &DataArgs, default: Role) -> Result<Vec<(String, MolGraph)>, Failure> {
    let r = role(a.split.as_deref(), default)?;
    let d = Dataset::read_manifest(&a.data).map_err(data)?;
    let mut mols: Vec<(String, MolGraph)> = d.split(r).into_iter().map(|x| (x.id.clone(), x.graph())).collect();
    if let Some(n) = a.limit {
        mols.truncate(n);
    }
    if mols.is_empty() {
        return Err(data(anyhow!("split {} of {} is empty", r.as_str(), a.data.display())));
    }
    Ok(mols)
}

fn load_model(path: &Path) -> Result<(Model, MdpConfig), Failure> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display())).map_err(data)?;
    let cfg = checkpoint_train_config(&ck).map_err(data)?;
    let model = Model::from_checkpoint(&ck, "online/").map_err(data)?;
    Ok((model, cfg.mdp()))
}

fn run_train(cli: &Cli, a: &TrainArgs) -> Outcome {
    let mut cfg = train_config(cli, &a.preset)?;
    if let Some(every) = a.checkpoint_every {
        cfg.checkpoint_every = every;
    }
    let mols = load_split(&a.data, Role::Train)?;
    let graphs: Vec<MolGraph> = mols.into_iter().map(|(_, g)| g).collect();
    fs::create_dir_all(&a.out).map_err(data)?;
    let config_json = serde_json::to_string_pretty(&cfg).expect("config serializes");
    fs::write(a.out.join("config.json"), config_json + "\n").map_err(data)?;
    let every = a.log_every;
    let outcome = train(cfg, graphs, a.steps, cli.seed, Some(&a.out), |row| {
        if every > 0 && row.step % every == 0 {
            eprintln!(
                "step {} lr {:.3e} eps {:.4} td {:.5} kl {:.3} buffer {}",
                row.step, row.lr, row.epsilon, row.td_loss, row.kl, row.buffer_size
            );
        }
    })
    .map_err(data)?;
    if let Some(last) = outcome.checkpoints.last() {
        println!("{}", last.display());
    }
    Ok(())
}

fn run_evaluate(cli: &Cli, a: &EvaluateArgs) -> Outcome {
    let policy =
        Policy::parse(&a.policy).ok_or_else(|| usage(anyhow!("unknown policy `{}` (expected greedy-decode or random-walk)", a.policy)))?;
    let (model, mdp) = load_model(&a.checkpoint)?;
    let mols = load_split(&a.data, Role::Test)?;
    let opts = EvalOptions {
        policy,
        seed: cli.seed,
        edit_max_steps: a.edit_max_steps,
        edit_max_states: a.edit_max_states,
    };
    let mut dec = Decoder::new(&model, mdp);
    let (rows, summary) = evaluate_reconstruction(&mut dec, &mols, &opts).map_err(data)?;
    write_csv(&a.out, &rows).map_err(data)?;
    println!("{}", serde_json::to_string_pretty(&summary).expect("json"));
    Ok(())
}

fn run_perturb(cli: &Cli, a: &PerturbArgs) -> Outcome {
    let (model, mdp) = load_model(&a.checkpoint)?;
    let pool = load_split(&a.data, Role::Tune)?;
    let starts = choose_starts(&pool, a.starts, cli.seed).map_err(data)?;
    let opts = SweepOptions {
        seed: cli.seed,
        repeats: a.repeats,
        ..SweepOptions::default()
    };
    let mut dec = Decoder::new(&model, mdp);
    let rows = perturb_sweep(&mut dec, &starts, &opts).map_err(data)?;
    write_csv(&a.out, &rows).map_err(data)?;
    println!("{} rows", rows.len());
    Ok(())
}
