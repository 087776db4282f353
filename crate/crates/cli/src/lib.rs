//! Command-line front end: argument parsing, output files and exit codes.

pub mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use indelphy_core::newick::NewickTree;
use indelphy_core::reconstruct::{
    distance_table, tree_reconstruct, DistanceBackend, OracleBackend, Reconstruction, SignatureBackend,
};
use indelphy_core::rng::RngStream;
use indelphy_core::signature::BlockScheme;
use indelphy_core::sim::{evolve_tree, parse_leaf_file, write_leaf_file, write_lineage_file};
use indelphy_core::tree::ModelTree;
use indelphy_core::unrooted::{rf_distance, ReconstructedTree};
use indelphy_core::validation::{
    self, bounds_sweep, check_block_balance, check_bitshifts, check_deep_distance, check_lengths,
    check_pseudo_block_gap, check_signature_variance, check_unbiasedness, reconstruction_trials_for,
    self_test_bitshifts, self_test_block_balance, self_test_lengths, sweep_table, with_thread_cap, CheckOptions,
    LemmaReport, Mode, ReconstructionOutcome, SweepRow, TrialBatch,
};
use indelphy_core::Error as CoreError;
use serde::Serialize;

use crate::config::ExperimentConfig;

#[derive(Debug, Parser)]
#[command(name = "indelphy", version, about = "Simulate, reconstruct and validate phylogenies under the CFN-Indel process")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate leaf sequences down a model tree.
    Simulate(Common),
    /// Reconstruct a tree from leaf sequences or from oracle distances.
    Reconstruct(ReconstructArgs),
    /// Run Monte Carlo checks of the concentration properties.
    Validate(ValidateArgs),
    /// Repeated simulate-and-reconstruct trials over a sweep of k.
    Experiment(ExperimentArgs),
    /// Robinson-Foulds distance between two Newick trees.
    Rf {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

/// Options shared by the experiment-style commands. Flags override values
/// read from `--config`.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// key=value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Edge-parameter file; defaults to a balanced tree.
    #[arg(long)]
    pub tree: Option<PathBuf>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub p_sub: Option<f64>,
    #[arg(long)]
    pub p_del: Option<f64>,
    #[arg(long)]
    pub p_ins: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// sym or asym.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Comma-separated sweep over k.
    #[arg(long, value_delimiter = ',')]
    pub ks: Option<Vec<usize>>,
    #[arg(long)]
    pub zeta: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long)]
    pub lambda_min: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub slack: Option<f64>,
    #[arg(long)]
    pub track_lineage: bool,
    /// Also write a JSON report and print it.
    #[arg(long)]
    pub json: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[command(flatten)]
    pub common: Common,
    /// Leaf sequence file (`label<TAB>bits`).
    #[arg(long)]
    pub leaves: Option<PathBuf>,
    /// Model tree (edge-parameter file or Newick); distances are read off it
    /// exactly instead of estimated.
    #[arg(long)]
    pub oracle_tree: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Comma-separated checks: lengths, bitshifts, balance, self-test,
    /// unbiasedness, variance, deep, pseudo-gap, sweep, or all.
    #[arg(long, value_delimiter = ',', default_value = "lengths,bitshifts,balance")]
    pub checks: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub common: Common,
    /// Keep rows already in the output directory and run only missing trials.
    #[arg(long)]
    pub resume: bool,
    /// Write wall-clock timings to timings.tsv.
    #[arg(long)]
    pub timings: bool,
}

impl Common {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(t) = &self.tree {
            cfg.tree = config::TreeSpec::File(t.clone());
        }
        macro_rules! take {
            ($($f:ident),*) => { $( if let Some(v) = self.$f.clone() { cfg.$f = v; } )* };
        }
        take!(depth, p_sub, p_del, p_ins, seed, trials, k, ks, zeta, delta, eps, slack, out);
        if let Some(m) = &self.mode {
            cfg.mode = m.parse()?;
        }
        if self.r.is_some() {
            cfg.r = self.r;
        }
        if self.lambda_min.is_some() {
            cfg.lambda_min = self.lambda_min;
        }
        cfg.track_lineage |= self.track_lineage;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Exit status for an error: 2 when reconstruction stalled, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    let stalled = err
        .chain()
        .any(|c| matches!(c.downcast_ref::<CoreError>(), Some(CoreError::Stall { .. })));
    if stalled {
        2
    } else {
        1
    }
}

/// Worker cap from `INDELPHY_THREADS`.
fn thread_cap() -> Result<Option<usize>> {
    match std::env::var("INDELPHY_THREADS") {
        Ok(v) if !v.trim().is_empty() => {
            let n: usize = v.trim().parse().map_err(|_| anyhow!("INDELPHY_THREADS={v:?} is not a count"))?;
            Ok(Some(n))
        }
        _ => Ok(None),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    with_thread_cap(thread_cap()?, move || match cli.command {
        Command::Simulate(c) => simulate(&c),
        Command::Reconstruct(a) => reconstruct(&a),
        Command::Validate(a) => validate(&a),
        Command::Experiment(a) => experiment(&a),
        Command::Rf { a, b, json } => rf(&a, &b, json),
    })?
}

/// Output directory with one writer per file.
struct Outputs {
    dir: PathBuf,
    hash: String,
}

impl Outputs {
    fn create(cfg: &ExperimentConfig, hash: String) -> Result<Self> {
        fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
        let o = Self {
            dir: cfg.out.clone(),
            hash,
        };
        o.write("config.txt", &format!("{}config_hash={}\n", cfg.canonical(), o.hash))?;
        Ok(o)
    }

    fn write(&self, name: &str, body: &str) -> Result<()> {
        let p = self.dir.join(name);
        fs::write(&p, body).with_context(|| format!("writing {}", p.display()))
    }

    /// Text file whose first line records the config hash.
    fn write_stamped(&self, name: &str, body: &str) -> Result<()> {
        self.write(name, &format!("# config_hash={}\n{body}", self.hash))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<String> {
        let s = serde_json::to_string_pretty(value)? + "\n";
        self.write(name, &s)?;
        Ok(s)
    }
}

fn read(p: &Path) -> Result<String> {
    fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))
}

// ---------------------------------------------------------------- simulate

#[derive(Serialize)]
struct SimulateReport {
    config_hash: String,
    root_length: usize,
    leaf_lengths: BTreeMap<String, usize>,
}

fn root_length(mode: Mode, k: usize) -> usize {
    match mode {
        Mode::Sym => 2 * k,
        Mode::Asym => k,
    }
}

fn simulate(c: &Common) -> Result<()> {
    let cfg = c.resolve()?;
    let tree = cfg.model_tree()?;
    let out = Outputs::create(&cfg, cfg.hash(&[])?)?;
    let k_root = root_length(cfg.mode, cfg.k);
    let assign = evolve_tree(&tree, k_root, &RngStream::new(cfg.seed, 0), cfg.track_lineage)?;
    out.write_stamped("leaves.tsv", &write_leaf_file(&tree, &assign))?;
    if cfg.track_lineage {
        out.write_stamped("lineage.tsv", &write_lineage_file(&tree, &assign)?)?;
    }
    out.write_stamped("tree.params", &tree.to_params_text())?;
    out.write("tree.nwk", &format!("{}\n", tree.to_newick()))?;
    let leaf_lengths = tree
        .leaves()
        .iter()
        .map(|&l| (tree.label(l).unwrap_or_default().to_string(), assign.seq(l).len()))
        .collect::<BTreeMap<_, _>>();
    println!(
        "simulated {} leaves from a root of {} bits into {}",
        leaf_lengths.len(),
        k_root,
        out.dir.display()
    );
    if c.json {
        let rep = SimulateReport {
            config_hash: out.hash.clone(),
            root_length: k_root,
            leaf_lengths,
        };
        print!("{}", out.write_json("simulate.json", &rep)?);
    }
    Ok(())
}

// ------------------------------------------------------------- reconstruct

#[derive(Serialize)]
struct ReconstructReport {
    config_hash: String,
    newick: String,
    levels: usize,
    backend: String,
    rf_to_oracle: Option<usize>,
    log: Vec<String>,
}

/// Reads a model tree from an edge-parameter file or a Newick file.
fn load_model(path: &Path, lambda_min: Option<f64>) -> Result<ModelTree> {
    let text = read(path)?;
    if text.trim_start().starts_with('(') {
        let lm = lambda_min.ok_or_else(|| anyhow!("a Newick oracle tree needs --lambda-min"))?;
        Ok(ModelTree::from_newick(&NewickTree::parse(&text)?, lm)?)
    } else {
        Ok(match lambda_min {
            Some(lm) => ModelTree::parse_params(&text, lm)?,
            None => ModelTree::parse_params_auto(&text)?,
        })
    }
}

fn reconstruct(a: &ReconstructArgs) -> Result<()> {
    let cfg = a.common.resolve()?;
    let mut inputs = Vec::new();
    for p in [&a.leaves, &a.oracle_tree].into_iter().flatten() {
        inputs.push(fs::read(p).with_context(|| format!("reading {}", p.display()))?);
    }
    let input_refs: Vec<&[u8]> = inputs.iter().map(Vec::as_slice).collect();
    let hash = cfg.hash(&input_refs)?;

    let (result, backend_name, oracle): (Reconstruction, String, Option<ModelTree>) = match &a.oracle_tree {
        Some(p) => {
            let model = load_model(p, cfg.lambda_min)?;
            let labels = match &a.leaves {
                Some(l) => parse_leaf_file(&read(l)?)?.into_iter().map(|(n, _)| n).collect(),
                None => validation::leaf_labels(&model),
            };
            let mut rc = cfg.reconstruct_config(model.lambda_min());
            rc.log = true;
            let backend = OracleBackend::new(&model, &labels)?;
            let r = tree_reconstruct(&labels, &backend, &rc)?;
            (r, "oracle".into(), Some(model))
        }
        None => {
            let path = a
                .leaves
                .as_ref()
                .ok_or_else(|| anyhow!("reconstruct needs --leaves or --oracle-tree"))?;
            let records = parse_leaf_file(&read(path)?).with_context(|| format!("in {}", path.display()))?;
            let (labels, seqs): (Vec<String>, Vec<_>) = records.into_iter().unzip();
            let lambda_min = match cfg.lambda_min {
                Some(lm) => lm,
                None => cfg.model_tree()?.lambda_min(),
            };
            let scheme = BlockScheme::new(cfg.k, cfg.zeta)?;
            let backend = match cfg.mode {
                Mode::Sym => SignatureBackend::symmetric(&seqs, &scheme)?,
                Mode::Asym => SignatureBackend::asymmetric(&seqs, scheme.big_l)?,
            };
            let mut rc = cfg.reconstruct_config(lambda_min);
            rc.log = true;
            let r = tree_reconstruct(&labels, &backend, &rc)?;
            (r, backend.source_name().to_string(), None)
        }
    };

    let out = Outputs::create(&cfg, hash)?;
    let newick = result.tree.to_newick();
    out.write("tree.nwk", &format!("{newick}\n"))?;
    out.write_stamped("decisions.log", &(result.tree.log.join("\n") + "\n"))?;
    out.write_stamped("distances.tsv", &distance_table(&result.distances))?;
    let rf_to_oracle = match &oracle {
        Some(m) => Some(rf_distance(&result.tree, &ReconstructedTree::from_model(m))?),
        None => None,
    };
    println!("{newick}");
    if let Some(rf) = rf_to_oracle {
        println!("rf to oracle tree: {rf}");
    }
    if a.common.json {
        let rep = ReconstructReport {
            config_hash: out.hash.clone(),
            newick,
            levels: result.levels,
            backend: backend_name,
            rf_to_oracle,
            log: result.tree.log.clone(),
        };
        print!("{}", out.write_json("reconstruct.json", &rep)?);
    }
    Ok(())
}

// ---------------------------------------------------------------- validate

const ALL_CHECKS: [&str; 9] = [
    "lengths",
    "bitshifts",
    "balance",
    "self-test",
    "unbiasedness",
    "variance",
    "deep",
    "pseudo-gap",
    "sweep",
];

#[derive(Serialize)]
struct ValidateReport {
    config_hash: String,
    reports: Vec<LemmaReport>,
    sweep: Vec<SweepRow>,
}

fn validate(a: &ValidateArgs) -> Result<()> {
    let cfg = a.common.resolve()?;
    let mut checks: Vec<String> = Vec::new();
    for c in &a.checks {
        if c == "all" {
            checks.extend(ALL_CHECKS.iter().map(|s| s.to_string()));
        } else if ALL_CHECKS.contains(&c.as_str()) {
            checks.push(c.clone());
        } else {
            bail!("unknown check {c:?}; expected one of {} or all", ALL_CHECKS.join(", "));
        }
    }
    checks.dedup();
    let tree = cfg.model_tree()?;
    let opts = CheckOptions {
        slack: cfg.slack,
        ..CheckOptions::default()
    };
    let needs_lineage = checks.iter().any(|c| c == "bitshifts" || c == "self-test");
    let mut batch = TrialBatch::new(tree.clone(), cfg.mode, cfg.k, cfg.trials, cfg.seed)?;
    if needs_lineage || cfg.track_lineage {
        batch = batch.with_lineage();
    }
    let mut reports = Vec::new();
    let mut sweep = Vec::new();
    for c in &checks {
        match c.as_str() {
            "lengths" => reports.push(check_lengths(&batch, &opts)?),
            "bitshifts" => reports.push(check_bitshifts(&batch, &opts)?),
            "balance" => reports.push(check_block_balance(&batch, &opts)?),
            "self-test" => {
                reports.push(self_test_lengths(&batch, &opts)?);
                reports.push(self_test_bitshifts(&batch, &opts)?);
                reports.push(self_test_block_balance(&batch, &opts)?);
            }
            "unbiasedness" => {
                let leaves = tree.leaves();
                let pairs: Vec<_> = leaves
                    .iter()
                    .enumerate()
                    .flat_map(|(i, &x)| leaves[i + 1..].iter().map(move |&y| (x, y)))
                    .collect();
                let plain = TrialBatch::new(tree.clone(), cfg.mode, cfg.k, cfg.trials, cfg.seed)?;
                reports.push(check_unbiasedness(&plain, &pairs, cfg.zeta, 1.0, &opts, false)?);
            }
            "variance" => {
                let mk = |lambda: f64| -> Result<TrialBatch> {
                    let p = indelphy_core::tree::EdgeParams::with_length(lambda, 0.0, 0.0)?;
                    Ok(TrialBatch::new(
                        ModelTree::balanced(cfg.depth, p)?,
                        Mode::Sym,
                        cfg.k,
                        cfg.trials,
                        cfg.seed,
                    )?)
                };
                let heights: Vec<usize> = (1..=cfg.depth).collect();
                reports.push(check_signature_variance(&mk(0.30)?, &mk(0.45)?, &heights, cfg.zeta, &opts)?);
            }
            "deep" => {
                let root_kids = tree.children(tree.root()).to_vec();
                if root_kids.len() != 2 {
                    bail!("the deep-distance check needs a binary root");
                }
                let plain = TrialBatch::new(tree.clone(), cfg.mode, cfg.k, cfg.trials, cfg.seed)?;
                reports.push(check_deep_distance(
                    &plain,
                    &[(root_kids[0], root_kids[1])],
                    1,
                    cfg.eps,
                    cfg.zeta,
                    0.9,
                )?);
            }
            "pseudo-gap" => {
                let ks = if cfg.ks.len() >= 2 {
                    cfg.ks.clone()
                } else {
                    vec![cfg.k, 4 * cfg.k, 16 * cfg.k]
                };
                let batches = ks
                    .iter()
                    .map(|&k| TrialBatch::new(tree.clone(), cfg.mode, k, cfg.trials, cfg.seed))
                    .collect::<indelphy_core::Result<Vec<_>>>()?;
                reports.push(check_pseudo_block_gap(&batches, cfg.zeta)?);
            }
            "sweep" => sweep = bounds_sweep(&tree, cfg.mode, &cfg.sweep(), cfg.trials, cfg.seed)?,
            _ => unreachable!(),
        }
    }
    let out = Outputs::create(&cfg, cfg.hash(&[])?)?;
    let mut tsv = format!("{}\n", LemmaReport::tsv_header());
    let mut summary = String::new();
    for r in &reports {
        tsv.push_str(&r.tsv_row());
        tsv.push('\n');
        summary.push_str(&r.summary());
    }
    out.write_stamped("reports.tsv", &tsv)?;
    out.write_stamped("summary.txt", &summary)?;
    if !sweep.is_empty() {
        out.write_stamped("sweep.tsv", &sweep_table(&sweep))?;
    }
    print!("{summary}");
    if !sweep.is_empty() {
        print!("{}", sweep_table(&sweep));
    }
    if a.common.json {
        let rep = ValidateReport {
            config_hash: out.hash.clone(),
            reports,
            sweep,
        };
        print!("{}", out.write_json("reports.json", &rep)?);
    }
    Ok(())
}

// -------------------------------------------------------------- experiment

/// One reconstruction trial of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultRecord {
    pub k: usize,
    pub trial: usize,
    pub rf: Option<usize>,
    pub success: bool,
    pub stalled: bool,
    pub error: Option<String>,
    pub newick: Option<String>,
}

impl ResultRecord {
    fn from_outcome(k: usize, o: ReconstructionOutcome) -> Self {
        Self {
            k,
            trial: o.trial,
            rf: o.rf,
            success: o.success,
            stalled: o.stalled,
            error: o.error,
            newick: o.newick,
        }
    }

    const HEADER: &'static str = "k\ttrial\trf\tsuccess\tstalled\terror\tnewick";

    fn tsv(&self) -> String {
        let opt = |s: &Option<String>| s.clone().unwrap_or_else(|| "-".into()).replace(['\t', '\n'], " ");
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.k,
            self.trial,
            self.rf.map_or_else(|| "-".into(), |r| r.to_string()),
            self.success as u8,
            self.stalled as u8,
            opt(&self.error),
            opt(&self.newick)
        )
    }

    fn parse(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 7 {
            bail!("expected 7 columns in results row, found {}", f.len());
        }
        let opt = |s: &str| (s != "-").then(|| s.to_string());
        Ok(Self {
            k: f[0].parse()?,
            trial: f[1].parse()?,
            rf: opt(f[2]).map(|s| s.parse()).transpose()?,
            success: f[3] == "1",
            stalled: f[4] == "1",
            error: opt(f[5]),
            newick: opt(f[6]),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepSummary {
    pub k: usize,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_rf: Option<f64>,
    pub stalls: usize,
}

fn summarize(k: usize, rows: &[&ResultRecord]) -> SweepSummary {
    let successes = rows.iter().filter(|r| r.success).count();
    let rfs: Vec<usize> = rows.iter().filter_map(|r| r.rf).collect();
    SweepSummary {
        k,
        trials: rows.len(),
        successes,
        success_rate: successes as f64 / rows.len().max(1) as f64,
        mean_rf: (!rfs.is_empty()).then(|| rfs.iter().sum::<usize>() as f64 / rfs.len() as f64),
        stalls: rows.iter().filter(|r| r.stalled).count(),
    }
}

fn read_results(path: &Path) -> Result<Vec<ResultRecord>> {
    read(path)?
        .lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty() && *l != ResultRecord::HEADER)
        .map(ResultRecord::parse)
        .collect()
}

fn stored_hash(dir: &Path) -> Result<Option<String>> {
    let p = dir.join("config.txt");
    if !p.exists() {
        return Ok(None);
    }
    Ok(read(&p)?
        .lines()
        .find_map(|l| l.strip_prefix("config_hash="))
        .map(str::to_string))
}

#[derive(Serialize)]
struct ExperimentReport<'a> {
    config_hash: &'a str,
    summary: &'a [SweepSummary],
    results: &'a [ResultRecord],
}

fn experiment(a: &ExperimentArgs) -> Result<()> {
    let cfg = a.common.resolve()?;
    let hash = cfg.hash(&[])?;
    let results_path = cfg.out.join("results.tsv");
    let mut rows: Vec<ResultRecord> = Vec::new();
    if a.resume && results_path.exists() {
        match stored_hash(&cfg.out)? {
            Some(h) if h == hash => rows = read_results(&results_path)?,
            Some(h) => bail!("config hash mismatch: {} was written with {h}, current config is {hash}", cfg.out.display()),
            None => bail!("cannot resume: {} has no config.txt", cfg.out.display()),
        }
    }
    let out = Outputs::create(&cfg, hash)?;
    let tree = cfg.model_tree()?;
    let rc = cfg.reconstruct_config(cfg.lambda_min.unwrap_or(tree.lambda_min()));
    let mut timings = String::from("k\ttrials_run\tseconds\n");
    for k in cfg.sweep() {
        let done: Vec<usize> = rows.iter().filter(|r| r.k == k).map(|r| r.trial).collect();
        let todo: Vec<usize> = (0..cfg.trials).filter(|t| !done.contains(t)).collect();
        if todo.is_empty() {
            continue;
        }
        let batch = TrialBatch::new(tree.clone(), cfg.mode, k, cfg.trials, cfg.seed)?;
        let start = Instant::now();
        let outcomes = reconstruction_trials_for(&batch, cfg.zeta, &rc, &todo)?;
        timings.push_str(&format!("{k}\t{}\t{:.3}\n", todo.len(), start.elapsed().as_secs_f64()));
        rows.extend(outcomes.into_iter().map(|o| ResultRecord::from_outcome(k, o)));
        rows.sort_by_key(|r| (r.k, r.trial));
        // rewrite after each k so an interrupted run keeps finished rows
        let body: String = rows.iter().map(|r| r.tsv() + "\n").collect();
        out.write_stamped("results.tsv", &format!("{}\n{body}", ResultRecord::HEADER))?;
    }
    let body: String = rows.iter().map(|r| r.tsv() + "\n").collect();
    out.write_stamped("results.tsv", &format!("{}\n{body}", ResultRecord::HEADER))?;

    let summary: Vec<SweepSummary> = cfg
        .sweep()
        .into_iter()
        .map(|k| summarize(k, &rows.iter().filter(|r| r.k == k).collect::<Vec<_>>()))
        .collect();
    let mut tsv = String::from("k\ttrials\tsuccesses\tsuccess_rate\tmean_rf\tstalls\n");
    for s in &summary {
        tsv.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            s.k,
            s.trials,
            s.successes,
            s.success_rate,
            s.mean_rf.map_or_else(|| "-".into(), |m| m.to_string()),
            s.stalls
        ));
    }
    out.write_stamped("summary.tsv", &tsv)?;
    if a.timings {
        out.write("timings.tsv", &timings)?;
    }
    print!("{tsv}");
    if a.common.json {
        let rep = ExperimentReport {
            config_hash: &out.hash,
            summary: &summary,
            results: &rows,
        };
        print!("{}", out.write_json("experiment.json", &rep)?);
    }
    Ok(())
}

// ---------------------------------------------------------------------- rf

fn rf(a: &Path, b: &Path, json: bool) -> Result<()> {
    let load = |p: &Path| -> Result<ReconstructedTree> {
        let nw = NewickTree::parse(&read(p)?).with_context(|| format!("in {}", p.display()))?;
        Ok(ReconstructedTree::from_newick(&nw)?)
    };
    let d = rf_distance(&load(a)?, &load(b)?)?;
    if json {
        println!("{}", serde_json::json!({ "rf": d }));
    } else {
        println!("{d}");
    }
    Ok(())
}
