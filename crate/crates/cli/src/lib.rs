//! Command implementations behind the `jumptree` binary.
//!
//! Every command returns a [`CliError`] carrying the process exit code: 1 for
//! unreadable or malformed input, 2 for invalid configuration, 3 for
//! numerical failure.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use jumptree::crf::BaseMeasure;
use jumptree::oracle::{self, TruncationSpec};
use jumptree::pmcmc::{self, read_chain, write_chain};
use jumptree::posterior::{self, Report};
use jumptree::synth::{self, ExperimentSpec, Scheme};
use jumptree::tree::{parse_newick, parse_observation_records};
use jumptree::{Error, JumpVector, McmcConfig, RateConfig, RateMode, Resampling, Tree};

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
        }
    }

    fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::new(1, format!("{}: {err}", path.display()))
    }
}

impl From<Error> for CliError {
    fn from(err: Error) -> Self {
        let code = match &err {
            Error::Config(_) | Error::JumpLength { .. } | Error::TooLarge(_) | Error::EmptySegment(_) => 2,
            Error::ZeroProbability(_) => 3,
            _ => 1,
        };
        CliError::new(code, err.to_string())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

pub type CliResult<T = ()> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "jumptree", version, about = "Detect distributional jumps on a tree")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run particle MCMC on a tree and its observations.
    Infer(InferArgs),
    /// Generate a synthetic instance.
    Simulate(SimulateArgs),
    /// Recompute summaries from a stored run.
    Summarize(SummarizeArgs),
    /// Score per-branch results against ground truth.
    Eval(EvalArgs),
    /// Exact likelihood by enumeration, for small instances.
    #[command(hide = true)]
    Oracle(OracleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RateModeArg {
    Fixed,
    Learned,
}

#[derive(Debug, Clone, Args)]
pub struct InferArgs {
    /// Newick tree file.
    #[arg(long)]
    pub tree: PathBuf,
    /// Tab-separated `label<TAB>value` observations.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50_000)]
    pub iters: usize,
    /// Fraction of iterations discarded as burn-in.
    #[arg(long, default_value_t = 0.5)]
    pub burnin: f64,
    #[arg(long, default_value_t = 100)]
    pub particles: usize,
    #[arg(long, default_value_t = 0.5)]
    pub discount: f64,
    #[arg(long, value_enum, default_value_t = RateModeArg::Learned)]
    pub rate_mode: RateModeArg,
    /// Jump rate for the fixed mode; defaults to prior-mean-jumps / total length.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub prior_mean_jumps: f64,
    #[arg(long)]
    pub seed: u64,
    /// Independent chains, run concurrently with derived seeds.
    #[arg(long, default_value_t = 1)]
    pub chains: usize,
    /// Scale rescaled branch lengths so that they sum to the branch count.
    #[arg(long)]
    pub normalize_branches: bool,
    /// Number of categories; defaults to max(2, largest value + 1).
    #[arg(long)]
    pub categories: Option<usize>,
    /// Resample only when the particle ESS falls below this fraction.
    #[arg(long)]
    pub adaptive_resampling: Option<f64>,
}

impl InferArgs {
    pub fn config(&self) -> McmcConfig {
        let rate = RateConfig {
            mode: match self.rate_mode {
                RateModeArg::Fixed => RateMode::Fixed,
                RateModeArg::Learned => RateMode::Learned,
            },
            lambda: self.lambda,
            prior_mean_jumps: self.prior_mean_jumps,
        };
        McmcConfig {
            iterations: self.iters,
            burn_in: self.burnin,
            particles: self.particles,
            discount: self.discount,
            rate,
            seed: self.seed,
            normalize_branches: self.normalize_branches,
            resampling: match self.adaptive_resampling {
                Some(threshold) => Resampling::Adaptive { threshold },
                None => Resampling::EveryStep,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    TwoGroup,
    Nested,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value_t = SchemeArg::TwoGroup)]
    pub scheme: SchemeArg,
    #[arg(long, default_value_t = 100)]
    pub leaves: usize,
    /// Total variation between adjacent groups.
    #[arg(long)]
    pub tv: f64,
    #[arg(long)]
    pub seed: u64,
    /// Replication index; each index uses its own generator stream.
    #[arg(long, default_value_t = 0)]
    pub replicate: usize,
    #[arg(long, default_value_t = 0.1)]
    pub window_lo: f64,
    #[arg(long, default_value_t = 0.5)]
    pub window_hi: f64,
    /// Number of jump branches; defaults to 1 (two-group) or 3 (nested).
    #[arg(long)]
    pub jumps: Option<usize>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SummarizeArgs {
    /// Directory written by `infer`.
    #[arg(long)]
    pub run: PathBuf,
    /// Override the burn-in fraction recorded in the manifest.
    #[arg(long)]
    pub burnin: Option<f64>,
    /// Where to write summary.json and cocluster.csv; defaults to the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// summary.json produced by `infer` or `summarize`.
    #[arg(long)]
    pub summary: PathBuf,
    /// truth.json produced by `simulate`.
    #[arg(long)]
    pub truth: PathBuf,
    /// Extra methods as NAME=FILE, each a `branch<TAB>score` table.
    #[arg(long = "scores", value_name = "NAME=FILE")]
    pub scores: Vec<String>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub tree: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated jump counts per branch.
    #[arg(long)]
    pub jumps: String,
    #[arg(long, default_value_t = 0.5)]
    pub discount: f64,
    #[arg(long)]
    pub categories: Option<usize>,
}

pub fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Infer(a) => infer(&a).map(|_| ()),
        Command::Simulate(a) => simulate(&a),
        Command::Summarize(a) => summarize(&a).map(|_| ()),
        Command::Eval(a) => eval(&a).map(|_| ()),
        Command::Oracle(a) => run_oracle(&a),
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Reads a tree and its observations; the alphabet defaults to
/// `max(2, largest value + 1)`.
pub fn load_instance(tree: &Path, data: &Path, categories: Option<usize>) -> CliResult<(Tree, InputHashes)> {
    let tree_text = read_text(tree)?;
    let data_text = read_text(data)?;
    let parsed = parse_newick(&tree_text)?;
    let records = parse_observation_records(&data_text)?;
    let alphabet = match categories {
        Some(k) => k,
        None => records.iter().map(|r| r.1 as usize + 1).max().unwrap_or(2).max(2),
    };
    let tree_with_data = parsed.with_alphabet(alphabet)?.attach_observations(&records)?;
    let hashes = InputHashes {
        tree: FileHash {
            path: tree.display().to_string(),
            sha256: sha256_hex(tree_text.as_bytes()),
        },
        data: FileHash {
            path: data.display().to_string(),
            sha256: sha256_hex(data_text.as_bytes()),
        },
    };
    Ok((tree_with_data, hashes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputHashes {
    pub tree: FileHash,
    pub data: FileHash,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainManifest {
    pub seed_stream: u64,
    pub chain_file: String,
    pub sha256: String,
    pub smc_calls: u64,
    pub runtime_secs: f64,
}

/// Everything needed to reproduce and re-summarize a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: McmcConfig,
    pub chains: Vec<ChainManifest>,
    pub categories: usize,
    pub inputs: InputHashes,
    /// Input tree without observations; node ids follow its parse order.
    pub tree_newick: String,
    pub rescaled_lengths: Vec<f64>,
    /// Wall-clock time of all chains, excluding I/O.
    pub runtime_secs: f64,
    pub wall_secs: f64,
}

impl RunManifest {
    /// The tree the sampler ran on, without observations.
    pub fn working_tree(&self) -> CliResult<Tree> {
        let tree = parse_newick(&self.tree_newick)?;
        Ok(tree.with_branch_lengths(&self.rescaled_lengths)?)
    }
}

fn chain_seed_rng(seed: u64, stream: u64) -> jumptree::SeededRng {
    let mut rng = jumptree::rng_from_seed(seed);
    rng.set_stream(stream);
    rng
}

/// Output of one `infer` call.
#[derive(Debug)]
pub struct InferOutcome {
    pub manifest: RunManifest,
    pub report: Report,
    pub per_chain: Vec<Report>,
}

pub fn infer(args: &InferArgs) -> CliResult<InferOutcome> {
    let started = Instant::now();
    let config = args.config();
    config.validate()?;
    if args.chains == 0 {
        return Err(CliError::new(2, "at least one chain is required"));
    }
    if let Some(t) = args.adaptive_resampling {
        if !(t > 0.0 && t <= 1.0) {
            return Err(CliError::new(2, format!("adaptive threshold {t} must lie in (0, 1]")));
        }
    }
    let (tree, inputs) = load_instance(&args.tree, &args.data, args.categories)?;
    let working = config.prepare_tree(&tree);

    let results: Vec<jumptree::Result<jumptree::Chain>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..args.chains)
            .map(|i| {
                let tree = &tree;
                let config = &config;
                scope.spawn(move || pmcmc::run(tree, config, &mut chain_seed_rng(config.seed, i as u64)))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("chain thread panicked")).collect()
    });
    let chains = results.into_iter().collect::<jumptree::Result<Vec<_>>>()?;
    let runtime_secs = started.elapsed().as_secs_f64();

    fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    let mut manifests = Vec::new();
    let mut per_chain = Vec::new();
    let single = chains.len() == 1;
    for (i, chain) in chains.iter().enumerate() {
        let suffix = if single { String::new() } else { format!("-{}", i + 1) };
        let chain_file = format!("chain{suffix}.tsv");
        let mut bytes = Vec::new();
        write_chain(&chain.records, &mut bytes).map_err(|e| CliError::io(&args.out, e))?;
        fs::write(args.out.join(&chain_file), &bytes).map_err(|e| CliError::io(&args.out.join(&chain_file), e))?;
        manifests.push(ChainManifest {
            seed_stream: i as u64,
            chain_file,
            sha256: sha256_hex(&bytes),
            smc_calls: chain.smc_calls,
            runtime_secs: chain.runtime_secs,
        });
        if !single {
            let report = posterior::summarize(&chain.records, &working, &config.rate, config.burn_in, chain.runtime_secs)?;
            write_report(&args.out, &suffix, &report, &working)?;
            per_chain.push(report);
        }
    }
    let sampler_secs = if single { chains[0].runtime_secs } else { runtime_secs };
    let record_slices: Vec<&[jumptree::ChainRecord]> = chains.iter().map(|c| c.records.as_slice()).collect();
    let report = posterior::summarize_pooled(&record_slices, &working, &config.rate, config.burn_in, sampler_secs)?;
    write_report(&args.out, "", &report, &working)?;

    let manifest = RunManifest {
        command: "infer".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: config.clone(),
        chains: manifests,
        categories: tree.alphabet(),
        inputs,
        tree_newick: tree.to_newick(),
        rescaled_lengths: working.branch_lengths(),
        runtime_secs: sampler_secs,
        wall_secs: started.elapsed().as_secs_f64(),
    };
    let manifest_text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write_text(&args.out.join("manifest.json"), &manifest_text)?;

    print_report(&report, &working);
    Ok(InferOutcome {
        manifest,
        report,
        per_chain,
    })
}

fn write_report(dir: &Path, suffix: &str, report: &Report, tree: &Tree) -> CliResult {
    write_text(&dir.join(format!("summary{suffix}.json")), &report.summary.to_json())?;
    write_text(&dir.join(format!("cocluster{suffix}.csv")), &report.cocluster.to_csv(tree))
}

fn print_report(report: &Report, tree: &Tree) {
    let s = &report.summary;
    let names: Vec<String> = s
        .median_jump_branches
        .iter()
        .map(|&b| format!("{b}({})", tree.node_name(tree.branch_child(b))))
        .collect();
    println!("log10 K: {}", s.log10_bayes_factor);
    println!(
        "median jump branches: {}",
        if names.is_empty() { "none".to_string() } else { names.join(" ") }
    );
    println!("ESS(lambda): {:.1}", s.ess_lambda);
    println!("ESS/s: {:.3}", s.ess_per_second);
}

pub fn summarize(args: &SummarizeArgs) -> CliResult<Report> {
    let manifest_path = args.run.join("manifest.json");
    let manifest: RunManifest = serde_json::from_str(&read_text(&manifest_path)?)
        .map_err(|e| CliError::new(1, format!("{}: {e}", manifest_path.display())))?;
    let working = manifest.working_tree()?;
    let burn_in = args.burnin.unwrap_or(manifest.config.burn_in);
    let mut all = Vec::new();
    for c in &manifest.chains {
        let path = args.run.join(&c.chain_file);
        let file = fs::File::open(&path).map_err(|e| CliError::io(&path, e))?;
        let records = read_chain(BufReader::new(file), working.num_branches())
            .map_err(|e| CliError::new(1, format!("{}: {e}", path.display())))?;
        if records.len() != manifest.config.iterations {
            return Err(CliError::new(
                1,
                format!(
                    "{}: {} records, manifest expects {}",
                    path.display(),
                    records.len(),
                    manifest.config.iterations
                ),
            ));
        }
        all.push(records);
    }
    let slices: Vec<&[jumptree::ChainRecord]> = all.iter().map(Vec::as_slice).collect();
    let report = posterior::summarize_pooled(&slices, &working, &manifest.config.rate, burn_in, manifest.runtime_secs)?;
    let out = args.out.clone().unwrap_or_else(|| args.run.clone());
    fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    write_report(&out, "", &report, &working)?;
    print_report(&report, &working);
    Ok(report)
}

/// Ground truth written by `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub spec: ExperimentSpec,
    pub replicate: usize,
    pub num_branches: usize,
    pub jump_branches: Vec<usize>,
    /// Name of the node below each jump branch.
    pub jump_children: Vec<String>,
    pub group_probabilities: Vec<f64>,
    pub emp_tv: Vec<Option<f64>>,
}

pub fn simulate(args: &SimulateArgs) -> CliResult {
    let scheme = match args.scheme {
        SchemeArg::TwoGroup => Scheme::TwoGroup,
        SchemeArg::Nested => Scheme::Nested,
    };
    let mut spec = match scheme {
        Scheme::TwoGroup => ExperimentSpec::two_group(args.leaves, args.tv, args.replicate + 1, args.seed),
        Scheme::Nested => ExperimentSpec::nested(args.leaves, args.tv, args.replicate + 1, args.seed),
    };
    spec.window = (args.window_lo, args.window_hi);
    if let Some(j) = args.jumps {
        spec.jumps = j;
    }
    spec.validate()?;
    let inst = spec.instance(args.replicate)?;
    fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    write_text(&args.out.join("tree.nwk"), &(inst.tree.to_newick() + "\n"))?;
    let mut data = String::from("node\tvalue\n");
    for (label, value) in inst.data.records(&inst.tree) {
        data.push_str(&format!("{label}\t{value}\n"));
    }
    write_text(&args.out.join("data.tsv"), &data)?;
    let truth = Truth {
        spec,
        replicate: args.replicate,
        num_branches: inst.tree.num_branches(),
        jump_children: inst
            .jump_branches
            .iter()
            .map(|&b| inst.tree.node_name(inst.tree.branch_child(b)))
            .collect(),
        jump_branches: inst.jump_branches,
        group_probabilities: inst.data.group_probabilities(),
        emp_tv: inst.data.emp_tv.iter().map(|&x| x.is_finite().then_some(x)).collect(),
    };
    let text = serde_json::to_string_pretty(&truth).expect("truth serializes") + "\n";
    write_text(&args.out.join("truth.json"), &text)?;
    println!("wrote tree.nwk, data.tsv and truth.json to {}", args.out.display());
    Ok(())
}

fn summary_probabilities(path: &Path) -> CliResult<Vec<f64>> {
    let value: serde_json::Value =
        serde_json::from_str(&read_text(path)?).map_err(|e| CliError::new(1, format!("{}: {e}", path.display())))?;
    let branches = value["branches"]
        .as_array()
        .ok_or_else(|| CliError::new(1, format!("{}: no branches array", path.display())))?;
    branches
        .iter()
        .enumerate()
        .map(|(i, b)| {
            if b["branch"].as_u64() != Some(i as u64) {
                return Err(CliError::new(1, format!("{}: branches out of order", path.display())));
            }
            b["probability"]
                .as_f64()
                .ok_or_else(|| CliError::new(1, format!("{}: bad probability for branch {i}", path.display())))
        })
        .collect()
}

/// Reads `branch<TAB>score` lines; a non-numeric first line is a header.
pub fn read_scores(path: &Path) -> CliResult<Vec<(usize, f64)>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split('\t');
        let (Some(b), Some(s)) = (cols.next(), cols.next()) else {
            return Err(CliError::new(1, format!("{}:{}: expected two columns", path.display(), i + 1)));
        };
        match (b.trim().parse::<usize>(), s.trim().parse::<f64>()) {
            (Ok(b), Ok(s)) => out.push((b, s)),
            _ if out.is_empty() && i == 0 => continue,
            _ => return Err(CliError::new(1, format!("{}:{}: malformed score", path.display(), i + 1))),
        }
    }
    Ok(out)
}

pub fn eval(args: &EvalArgs) -> CliResult<Vec<(String, f64)>> {
    let truth: Truth = serde_json::from_str(&read_text(&args.truth)?)
        .map_err(|e| CliError::new(1, format!("{}: {e}", args.truth.display())))?;
    let truth_vec = synth::truth_vector(truth.num_branches, &truth.jump_branches);
    let mut methods = vec![("jumptree".to_string(), summary_probabilities(&args.summary)?)];
    for spec in &args.scores {
        let Some((name, file)) = spec.split_once('=') else {
            return Err(CliError::new(2, format!("--scores expects NAME=FILE, got {spec}")));
        };
        let pairs = read_scores(Path::new(file))?;
        let mut scores = vec![f64::NAN; truth.num_branches];
        for (b, s) in pairs {
            if b >= truth.num_branches {
                return Err(CliError::new(2, format!("{name}: branch {b} does not exist")));
            }
            scores[b] = s;
        }
        methods.push((name.to_string(), scores));
    }
    let mut roc_csv = String::from("method,fpr,tpr\n");
    let mut auc_csv = String::from("method,auc\n");
    let mut aucs = Vec::new();
    for (name, scores) in &methods {
        if scores.len() != truth.num_branches || scores.iter().any(|s| s.is_nan()) {
            return Err(CliError::new(
                2,
                format!("{name}: scores do not cover the {} branches of the truth", truth.num_branches),
            ));
        }
        let roc = synth::roc_auc(scores, &truth_vec)?;
        for (f, t) in &roc.points {
            roc_csv.push_str(&format!("{name},{f},{t}\n"));
        }
        auc_csv.push_str(&format!("{name},{}\n", roc.auc));
        println!("{name}\tAUC {:.4}", roc.auc);
        aucs.push((name.clone(), roc.auc));
    }
    fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    write_text(&args.out.join("roc.csv"), &roc_csv)?;
    write_text(&args.out.join("auc.csv"), &auc_csv)?;
    Ok(aucs)
}

fn run_oracle(args: &OracleArgs) -> CliResult {
    let (tree, _) = load_instance(&args.tree, &args.data, args.categories)?;
    let jumps: Vec<u32> = args
        .jumps
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::new(2, "jumps must be comma-separated counts"))?;
    let base = BaseMeasure::uniform(tree.alphabet());
    let p = oracle::exact_likelihood(&JumpVector(jumps), &tree, args.discount, &base, &TruncationSpec::default())?;
    println!("{p:e}");
    Ok(())
}
