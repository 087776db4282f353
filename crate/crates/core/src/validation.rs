//! Monte Carlo checks of the concentration properties the reconstruction
//! relies on.
//!
//! Every checker simulates a [`TrialBatch`], reduces one statistic per trial
//! and folds the trials in order into a [`LemmaReport`]. Trials run on the
//! rayon pool but results are always merged in trial order, so a report only
//! depends on the batch parameters and the base seed.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bitstring::Bitstring;
use crate::error::{Error, Result};
use crate::estimators::{deep_distance, odd_block_correlation, reconstruct_signature, Hierarchy};
use crate::reconstruct::{tree_reconstruct, ReconstructConfig, SignatureBackend};
use crate::rng::RngStream;
use crate::signature::{
    block_signature, pseudo_signature_vector, scaled_block_len, signature_vector, BlockScheme, SignatureVector,
};
use crate::sim::{evolve_tree, max_normalized_shift_all_pairs, SequenceAssignment};
use crate::tree::{ModelTree, NodeId};
use crate::unrooted::{rf_distance, ReconstructedTree};

/// Whether the tree is treated with equal insertion and deletion rates
/// (root length `2k`, true blocks) or with drifting lengths (root length `k`,
/// pseudo-blocks at the leaves).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Sym,
    Asym,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Sym => "sym",
            Mode::Asym => "asym",
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sym" => Ok(Mode::Sym),
            "asym" => Ok(Mode::Asym),
            other => Err(Error::Config(format!("mode must be sym or asym, got {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrialBatch {
    pub tree: ModelTree,
    pub mode: Mode,
    /// Nominal sequence length.
    pub k: usize,
    pub trials: usize,
    pub seed: u64,
    pub track_lineage: bool,
}

impl TrialBatch {
    pub fn new(tree: ModelTree, mode: Mode, k: usize, trials: usize, seed: u64) -> Result<Self> {
        if trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        Ok(Self {
            tree,
            mode,
            k,
            trials,
            seed,
            track_lineage: false,
        })
    }

    pub fn with_lineage(mut self) -> Self {
        self.track_lineage = true;
        self
    }

    /// `2k` in symmetric mode, `k` otherwise.
    pub fn root_length(&self) -> usize {
        match self.mode {
            Mode::Sym => 2 * self.k,
            Mode::Asym => self.k,
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.tree.leaves().len()
    }

    pub fn log_n(&self) -> f64 {
        (self.leaf_count() as f64).log2()
    }

    /// Trial `t` draws from stream `t` of the base seed.
    pub fn simulate(&self, t: usize) -> Result<SequenceAssignment> {
        evolve_tree(
            &self.tree,
            self.root_length(),
            &RngStream::new(self.seed, t as u64),
            self.track_lineage,
        )
    }

    /// Runs `f` on every simulated trial in parallel; results come back in
    /// trial order.
    pub fn map_trials<T, F>(&self, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize, SequenceAssignment) -> Result<T> + Sync,
    {
        let all: Vec<usize> = (0..self.trials).collect();
        self.map_subset(&all, f)
    }

    /// [`TrialBatch::map_trials`] over selected trial indices, in the order
    /// given.
    pub fn map_subset<T, F>(&self, trials: &[usize], f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize, SequenceAssignment) -> Result<T> + Sync,
    {
        trials
            .par_iter()
            .map(|&t| f(t, self.simulate(t)?))
            .collect()
    }

    /// Block scheme for the nominal length.
    pub fn scheme(&self, zeta: f64) -> Result<BlockScheme> {
        BlockScheme::new(self.k, zeta)
    }

    /// Leaf signature vectors for one trial: true blocks in symmetric mode,
    /// pseudo-blocks otherwise.
    pub fn leaf_signatures(&self, assign: &SequenceAssignment, scheme: &BlockScheme) -> Result<HashMap<NodeId, SignatureVector>> {
        self.tree
            .leaves()
            .iter()
            .map(|&x| {
                let s = match self.mode {
                    Mode::Sym => signature_vector(x, assign.seq(x), scheme)?,
                    Mode::Asym => pseudo_signature_vector(x, assign.seq(x), scheme.big_l)?,
                };
                Ok((x, s))
            })
            .collect()
    }
}

/// Runs `f` on a rayon pool capped at `threads` workers, or on the global
/// pool when no cap is given.
pub fn with_thread_cap<R, F>(threads: Option<usize>, f: F) -> Result<R>
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Count, sum and sum of squares; merging is associative.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Moments {
    pub n: usize,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn merge(&mut self, other: &Moments) {
        self.n += other.n;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.sum / self.n as f64
        }
    }

    /// Sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            return f64::NAN;
        }
        let n = self.n as f64;
        ((self.sum_sq - self.sum * self.sum / n) / (n - 1.0)).max(0.0)
    }

    /// Standard error of the mean.
    pub fn se(&self) -> f64 {
        (self.variance() / self.n as f64).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Detail {
    pub name: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LemmaReport {
    pub lemma: String,
    /// What `observed` measures.
    pub statistic: String,
    pub observed: f64,
    pub bound: f64,
    pub pass: bool,
    pub samples: usize,
    pub details: Vec<Detail>,
}

impl LemmaReport {
    fn new(lemma: &str, statistic: &str, observed: f64, bound: f64, pass: bool, samples: usize) -> Self {
        Self {
            lemma: lemma.into(),
            statistic: statistic.into(),
            observed,
            bound,
            pass,
            samples,
            details: Vec::new(),
        }
    }

    fn detail(&mut self, name: impl Into<String>, value: f64) {
        self.details.push(Detail {
            name: name.into(),
            value,
        });
    }

    pub fn tsv_header() -> &'static str {
        "lemma\tstatistic\tobserved\tbound\tpass\tsamples"
    }

    pub fn tsv_row(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.lemma,
            self.statistic,
            self.observed,
            self.bound,
            if self.pass { "pass" } else { "fail" },
            self.samples
        )
    }

    /// Human-readable multi-line summary.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "{} [{}]: {} = {:.6} vs bound {:.6} over {} samples\n",
            self.lemma,
            if self.pass { "PASS" } else { "FAIL" },
            self.statistic,
            self.observed,
            self.bound,
            self.samples
        );
        for d in &self.details {
            let _ = writeln!(s, "  {} = {}", d.name, d.value);
        }
        s
    }
}

/// Pass-rule knobs. `slack` multiplies each high-probability bound;
/// `pass_rate` is the fraction of trials that must satisfy it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CheckOptions {
    pub slack: f64,
    pub pass_rate: f64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            slack: 1.0,
            pass_rate: 0.99,
        }
    }
}

/// Per-trial edit applied before a checker looks at the trial; used by the
/// self-tests to plant violations.
type Tamper<'a> = &'a (dyn Fn(SequenceAssignment) -> SequenceAssignment + Sync);

fn untouched(a: SequenceAssignment) -> SequenceAssignment {
    a
}

fn fraction(flags: &[bool]) -> f64 {
    flags.iter().filter(|&&b| b).count() as f64 / flags.len() as f64
}

// ---------------------------------------------------------------- lengths

/// Largest relative deviation allowed for `k_a / eta(a) / k_r` at a node of
/// the given depth: `depth * 2 log2 n / sqrt(k_r eta)`.
pub fn asym_length_envelope(depth: usize, log_n: f64, k_r: usize, eta: f64) -> f64 {
    depth as f64 * 2.0 * log_n / (k_r as f64 * eta).sqrt()
}

struct LengthStat {
    ok: bool,
    /// Symmetric: (min, max) of `len / k`. Asymmetric: largest deviation and
    /// largest deviation relative to its envelope.
    lo: f64,
    hi: f64,
}

fn length_stat(batch: &TrialBatch, assign: &SequenceAssignment, opts: &CheckOptions) -> Result<LengthStat> {
    let t = &batch.tree;
    match batch.mode {
        Mode::Sym => {
            let k = batch.k as f64;
            let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
            for v in 0..t.len() {
                let r = assign.seq(v).len() as f64 / k;
                lo = lo.min(r);
                hi = hi.max(r);
            }
            let ok = lo * opts.slack >= 1.0 && hi <= 4.0 * opts.slack;
            Ok(LengthStat { ok, lo, hi })
        }
        Mode::Asym => {
            let k_r = assign.root_length();
            let (mut dev, mut rel) = (0.0f64, 0.0f64);
            for v in 1..t.len() {
                let eta = t.eta(v)?;
                let d = (assign.seq(v).len() as f64 / eta / k_r as f64 - 1.0).abs();
                dev = dev.max(d);
                rel = rel.max(d / asym_length_envelope(t.depth(v), batch.log_n(), k_r, eta));
            }
            Ok(LengthStat {
                ok: rel <= opts.slack,
                lo: dev,
                hi: rel,
            })
        }
    }
}

fn lengths_impl(batch: &TrialBatch, opts: &CheckOptions, tamper: Tamper) -> Result<LemmaReport> {
    let stats = batch.map_trials(|_, a| length_stat(batch, &tamper(a), opts))?;
    let flags: Vec<bool> = stats.iter().map(|s| s.ok).collect();
    let rate = fraction(&flags);
    let mut rep = LemmaReport::new(
        "lengths",
        "fraction of trials with every node length in range",
        rate,
        opts.pass_rate,
        rate >= opts.pass_rate,
        batch.trials,
    );
    match batch.mode {
        Mode::Sym => {
            rep.detail("min length / k", stats.iter().map(|s| s.lo).fold(f64::INFINITY, f64::min));
            rep.detail("max length / k", stats.iter().map(|s| s.hi).fold(0.0, f64::max));
        }
        Mode::Asym => {
            rep.detail("max |k_a / eta / k_r - 1|", stats.iter().map(|s| s.lo).fold(0.0, f64::max));
            rep.detail("max deviation / envelope", stats.iter().map(|s| s.hi).fold(0.0, f64::max));
        }
    }
    Ok(rep)
}

/// Symmetric mode: every node length lies in `[k, 4k]` given root length
/// `2k`. Asymmetric mode: `k_a / eta(a)` stays within the depth-scaled
/// envelope of `k_r`.
pub fn check_lengths(batch: &TrialBatch, opts: &CheckOptions) -> Result<LemmaReport> {
    lengths_impl(batch, opts, &untouched)
}

// -------------------------------------------------------------- bitshifts

/// `4 (log2 n)^2 sqrt(k)`.
pub fn bitshift_bound(n: usize, k: usize) -> f64 {
    let l = (n as f64).log2();
    4.0 * l * l * (k as f64).sqrt()
}

fn bitshifts_impl(batch: &TrialBatch, opts: &CheckOptions, tamper: Tamper) -> Result<LemmaReport> {
    if !batch.track_lineage {
        return Err(Error::LineageMissing);
    }
    let bound = bitshift_bound(batch.leaf_count(), batch.k);
    let shifts = batch.map_trials(|_, a| max_normalized_shift_all_pairs(&tamper(a), &batch.tree))?;
    let flags: Vec<bool> = shifts.iter().map(|&s| s <= bound * opts.slack).collect();
    let rate = fraction(&flags);
    let mut rep = LemmaReport::new(
        "bitshifts",
        "fraction of trials with every normalized shift within the bound",
        rate,
        opts.pass_rate,
        rate >= opts.pass_rate,
        batch.trials,
    );
    rep.detail("shift bound", bound * opts.slack);
    rep.detail("max shift", shifts.iter().copied().fold(0.0, f64::max));
    rep.detail("mean max shift", shifts.iter().sum::<f64>() / shifts.len() as f64);
    Ok(rep)
}

/// No shared bit moves by more than `4 (log2 n)^2 sqrt(k)` normalized
/// positions between any two nodes. Needs lineage tracking.
pub fn check_bitshifts(batch: &TrialBatch, opts: &CheckOptions) -> Result<LemmaReport> {
    bitshifts_impl(batch, opts, &untouched)
}

// ---------------------------------------------------------- block balance

/// Largest `|zeros - m/2| / sqrt(m)` over aligned windows of every dyadic
/// length `2 <= m <= len`. Single bits are skipped since they always give
/// exactly 1/2.
pub fn max_dyadic_balance(bits: &Bitstring) -> f64 {
    let len = bits.len();
    let stat = |ones: usize, m: usize| (m as f64 / 2.0 - ones as f64).abs() / (m as f64).sqrt();
    let mut best = 0.0f64;
    let mut m = 2;
    while m < 64 && m <= len {
        for j in 0..len / m {
            best = best.max(stat(bits.read_bits(j * m, m).count_ones() as usize, m));
        }
        m *= 2;
    }
    // windows of 64 bits or more are word aligned
    let full = len / 64;
    let mut counts: Vec<usize> = bits.words()[..full].iter().map(|w| w.count_ones() as usize).collect();
    let mut m = 64;
    while !counts.is_empty() {
        for &c in &counts {
            best = best.max(stat(c, m));
        }
        counts = counts.chunks_exact(2).map(|p| p[0] + p[1]).collect();
        m *= 2;
    }
    best
}

fn balance_impl(batch: &TrialBatch, opts: &CheckOptions, tamper: Tamper) -> Result<LemmaReport> {
    let bound = batch.log_n() * opts.slack;
    let stats = batch.map_trials(|_, a| {
        let a = tamper(a);
        Ok(a.seqs().iter().map(max_dyadic_balance).fold(0.0, f64::max))
    })?;
    let flags: Vec<bool> = stats.iter().map(|&s| s <= bound).collect();
    let rate = fraction(&flags);
    let mut rep = LemmaReport::new(
        "block-balance",
        "fraction of trials with every dyadic window balanced",
        rate,
        opts.pass_rate,
        rate >= opts.pass_rate,
        batch.trials,
    );
    rep.detail("balance bound", bound);
    rep.detail("max |zeros - m/2| / sqrt(m)", stats.iter().copied().fold(0.0, f64::max));
    Ok(rep)
}

/// Every dyadic window of every node has `|zeros - m/2| <= sqrt(m) log2 n`.
pub fn check_block_balance(batch: &TrialBatch, opts: &CheckOptions) -> Result<LemmaReport> {
    balance_impl(batch, opts, &untouched)
}

/// The three regularity conditions for one trial. The bit-shift condition is
/// only included when the assignment carries lineage.
pub fn is_regular(batch: &TrialBatch, assign: &SequenceAssignment, opts: &CheckOptions) -> Result<bool> {
    if !length_stat(batch, assign, opts)?.ok {
        return Ok(false);
    }
    let bound = batch.log_n() * opts.slack;
    if assign.seqs().iter().any(|s| max_dyadic_balance(s) > bound) {
        return Ok(false);
    }
    if assign.has_lineage() {
        let shift = max_normalized_shift_all_pairs(assign, &batch.tree)?;
        return Ok(shift <= bitshift_bound(batch.leaf_count(), batch.k) * opts.slack);
    }
    Ok(true)
}

// -------------------------------------------------------------- self-tests

fn first_leaf(batch: &TrialBatch) -> NodeId {
    batch.tree.leaves()[0]
}

fn retag(mut rep: LemmaReport) -> LemmaReport {
    rep.lemma.push_str("/self-test");
    rep
}

/// Runs the length checker after truncating one leaf to a quarter of the
/// root length. Must fail.
pub fn self_test_lengths(batch: &TrialBatch, opts: &CheckOptions) -> Result<LemmaReport> {
    let leaf = first_leaf(batch);
    let keep = batch.root_length() / 4;
    let tamper = move |a: SequenceAssignment| {
        let (mut seqs, mut lineage, root) = a.into_parts();
        let mut short = Bitstring::new();
        short.extend_from_range(&seqs[leaf], 0, keep.min(seqs[leaf].len()));
        seqs[leaf] = short;
        if let Some(l) = lineage.as_mut() {
            l[leaf].truncate(keep);
        }
        SequenceAssignment::from_parts(seqs, lineage, root)
    };
    lengths_impl(batch, opts, &tamper).map(retag)
}

/// Runs the shift checker after prepending fresh bits to one leaf so that
/// each of its inherited bits moves past twice the bound. Must fail.
pub fn self_test_bitshifts(batch: &TrialBatch, opts: &CheckOptions) -> Result<LemmaReport> {
    let leaf = first_leaf(batch);
    let eta = batch.tree.eta(leaf)?;
    let pad = (2.0 * bitshift_bound(batch.leaf_count(), batch.k) * opts.slack * eta).ceil() as usize + 1;
    let tamper = move |a: SequenceAssignment| {
        let fresh = a.id_bound();
        let (mut seqs, mut lineage, root) = a.into_parts();
        let mut padded = Bitstring::zeros(pad);
        padded.extend_from_range(&seqs[leaf], 0, seqs[leaf].len());
        seqs[leaf] = padded;
        if let Some(l) = lineage.as_mut() {
            let mut ids: Vec<u64> = (fresh..fresh + pad as u64).collect();
            ids.extend_from_slice(&l[leaf]);
            l[leaf] = ids;
        }
        SequenceAssignment::from_parts(seqs, lineage, root)
    };
    bitshifts_impl(batch, opts, &tamper).map(retag)
}

/// Runs the balance checker after replacing one leaf with all zeros. Must
/// fail.
pub fn self_test_block_balance(batch: &TrialBatch, opts: &CheckOptions) -> Result<LemmaReport> {
    let leaf = first_leaf(batch);
    let tamper = move |mut a: SequenceAssignment| {
        let n = a.seq(leaf).len();
        *a.seq_mut(leaf) = Bitstring::zeros(n);
        a
    };
    balance_impl(batch, opts, &tamper).map(retag)
}

// ------------------------------------------------------------ unbiasedness

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairRatio {
    pub a: NodeId,
    pub b: NodeId,
    pub d: f64,
    pub all: Moments,
    /// Restricted to regular trials; empty unless conditioning was requested.
    pub regular: Moments,
}

/// Per-pair moments of `4 C e^{d}`, where `C` is the odd-block correlation.
/// Trials whose sequences are too short for the block scheme are skipped.
pub fn unbiasedness_ratios(
    batch: &TrialBatch,
    pairs: &[(NodeId, NodeId)],
    zeta: f64,
    condition: Option<&CheckOptions>,
) -> Result<(Vec<PairRatio>, usize)> {
    let scheme = batch.scheme(zeta)?;
    let dists = pairs
        .iter()
        .map(|&(a, b)| batch.tree.path_distance(a, b))
        .collect::<Result<Vec<_>>>()?;
    let mut nodes: Vec<NodeId> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
    nodes.sort_unstable();
    nodes.dedup();
    let per_trial = batch.map_trials(|_, assign| {
        let regular = match condition {
            Some(o) => is_regular(batch, &assign, o)?,
            None => false,
        };
        let mut sigs = HashMap::new();
        for &v in &nodes {
            let s = match batch.mode {
                Mode::Sym => signature_vector(v, assign.seq(v), &scheme),
                Mode::Asym => pseudo_signature_vector(v, assign.seq(v), scheme.big_l),
            };
            match s {
                Ok(s) => {
                    sigs.insert(v, s);
                }
                Err(Error::InsufficientLength { .. }) => return Ok(None),
                Err(e) => return Err(e),
            }
        }
        let ratios = pairs
            .iter()
            .zip(&dists)
            .map(|(&(a, b), &d)| Ok(4.0 * odd_block_correlation(&sigs[&a].values, &sigs[&b].values)? * d.exp()))
            .collect::<Result<Vec<f64>>>()?;
        Ok(Some((ratios, regular)))
    })?;
    let mut out: Vec<PairRatio> = pairs
        .iter()
        .zip(&dists)
        .map(|(&(a, b), &d)| PairRatio {
            a,
            b,
            d,
            all: Moments::default(),
            regular: Moments::default(),
        })
        .collect();
    let mut skipped = 0;
    for t in per_trial {
        let Some((ratios, regular)) = t else {
            skipped += 1;
            continue;
        };
        for (p, r) in out.iter_mut().zip(ratios) {
            p.all.push(r);
            if regular {
                p.regular.push(r);
            }
        }
    }
    Ok((out, skipped))
}

/// The mean of `4 C e^{d}` lies within `1 +- 0.1 slack` for every pair with
/// `d <= d_max`. With `condition`, the statistic restricted to regular
/// trials is reported alongside.
pub fn check_unbiasedness(
    batch: &TrialBatch,
    pairs: &[(NodeId, NodeId)],
    zeta: f64,
    d_max: f64,
    opts: &CheckOptions,
    condition: bool,
) -> Result<LemmaReport> {
    let (ratios, skipped) = unbiasedness_ratios(batch, pairs, zeta, condition.then_some(opts))?;
    let tol = 0.1 * opts.slack;
    let in_scope: Vec<&PairRatio> = ratios.iter().filter(|p| p.d <= d_max + 1e-12).collect();
    let worst = in_scope
        .iter()
        .map(|p| (p.all.mean() - 1.0).abs())
        .fold(0.0, f64::max);
    let pass = !in_scope.is_empty() && skipped < batch.trials && worst <= tol;
    let mut rep = LemmaReport::new(
        "unbiasedness",
        "largest |mean(4 C e^d) - 1| over pairs",
        worst,
        tol,
        pass,
        batch.trials - skipped,
    );
    rep.detail("pairs checked", in_scope.len() as f64);
    rep.detail("trials skipped", skipped as f64);
    if condition {
        let worst_reg = in_scope
            .iter()
            .map(|p| (p.regular.mean() - 1.0).abs())
            .fold(0.0, f64::max);
        rep.detail("largest deviation on regular trials", worst_reg);
        rep.detail("regular trials", in_scope.first().map_or(0.0, |p| p.regular.n as f64));
    }
    for p in in_scope {
        rep.detail(format!("mean {}-{} d={:.4}", p.a, p.b, p.d), p.all.mean());
        rep.detail(format!("se {}-{}", p.a, p.b), p.all.se());
    }
    Ok(rep)
}

// ----------------------------------------------------- signature variance

/// Mean of `hat s_{a,i}^2` over nodes at each requested height, blocks and
/// trials, with `hat s` built from exact distances.
pub fn signature_variance_series(batch: &TrialBatch, heights: &[usize], zeta: f64) -> Result<Vec<f64>> {
    let scheme = batch.scheme(zeta)?;
    let tree = &batch.tree;
    let kd = tree.known_distances();
    let by_height = tree.nodes_by_height();
    for &h in heights {
        if h >= by_height.len() {
            return Err(Error::Domain(format!("tree has no nodes at height {h}")));
        }
    }
    let below: HashMap<NodeId, Vec<NodeId>> = heights
        .iter()
        .flat_map(|&h| by_height[h].iter().copied())
        .map(|v| (v, tree.leaves_below(v)))
        .collect();
    let per_trial = batch.map_trials(|_, assign| {
        let sigs = batch.leaf_signatures(&assign, &scheme)?;
        heights
            .iter()
            .map(|&h| {
                let mut m = Moments::default();
                for &v in &by_height[h] {
                    let s = reconstruct_signature(&sigs, &below[&v], &kd, v)?;
                    s.values.iter().for_each(|x| m.push(x * x));
                }
                Ok(m)
            })
            .collect::<Result<Vec<Moments>>>()
    })?;
    let mut acc = vec![Moments::default(); heights.len()];
    for t in &per_trial {
        for (a, m) in acc.iter_mut().zip(t) {
            a.merge(m);
        }
    }
    Ok(acc.iter().map(Moments::mean).collect())
}

/// `E[hat s^2]` for a balanced tree with substitution-only edges of length
/// `lambda`, at height `h`.
pub fn signature_variance_closed_form(lambda: f64, h: usize) -> f64 {
    let mut sum = 1.0;
    for j in 1..=h {
        sum += 2f64.powi(j as i32 - 1) * (-2.0 * j as f64 * lambda).exp();
    }
    0.25 * ((2.0 * lambda).exp() / 2.0).powi(h as i32) * sum
}

fn max_min_ratio(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    max / min
}

fn mean_step_ratio(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return f64::NAN;
    }
    v.windows(2).map(|w| w[1] / w[0]).sum::<f64>() / (v.len() - 1) as f64
}

/// Below the threshold `E[hat s^2]` stays bounded across heights (max/min at
/// most `4 slack`); above it the control series grows by a mean factor of at
/// least 1.2 per height.
pub fn check_signature_variance(
    below: &TrialBatch,
    above: &TrialBatch,
    heights: &[usize],
    zeta: f64,
    opts: &CheckOptions,
) -> Result<LemmaReport> {
    if heights.len() < 2 {
        return Err(Error::Domain("need at least two heights".into()));
    }
    let sb = signature_variance_series(below, heights, zeta)?;
    let sa = signature_variance_series(above, heights, zeta)?;
    let spread = max_min_ratio(&sb);
    let growth = mean_step_ratio(&sa);
    let bound = 4.0 * opts.slack;
    let mut rep = LemmaReport::new(
        "signature-variance",
        "max/min of E[hat s^2] across heights below the threshold",
        spread,
        bound,
        spread <= bound && growth >= 1.2,
        below.trials,
    );
    rep.detail("mean growth factor above the threshold", growth);
    rep.detail("required growth factor", 1.2);
    for (i, &h) in heights.iter().enumerate() {
        rep.detail(format!("below h={h}"), sb[i]);
    }
    for (i, &h) in heights.iter().enumerate() {
        rep.detail(format!("above h={h}"), sa[i]);
    }
    Ok(rep)
}

// ---------------------------------------------------------- deep distance

/// Fraction of trials in which the deep estimate for each pair lands within
/// `eps` of the true distance. Pairs must share a depth of at least
/// `offset` below them.
pub fn deep_distance_hits(
    batch: &TrialBatch,
    pairs: &[(NodeId, NodeId)],
    offset: usize,
    eps: f64,
    zeta: f64,
) -> Result<Vec<f64>> {
    let scheme = batch.scheme(zeta)?;
    let kd = batch.tree.known_distances();
    let truth = pairs
        .iter()
        .map(|&(a, b)| batch.tree.path_distance(a, b))
        .collect::<Result<Vec<_>>>()?;
    let per_trial = batch.map_trials(|_, assign| {
        let sigs = match batch.leaf_signatures(&assign, &scheme) {
            Ok(s) => s,
            Err(Error::InsufficientLength { .. }) => return Ok(vec![false; pairs.len()]),
            Err(e) => return Err(e),
        };
        pairs
            .iter()
            .zip(&truth)
            .map(|(&(a, b), &d)| {
                let est = deep_distance(&batch.tree, a, b, offset, &sigs, &kd);
                Ok(match est {
                    Ok(e) => (e.estimate - d).abs() < eps,
                    Err(Error::AllInfinite) => false,
                    Err(e) => return Err(e),
                })
            })
            .collect::<Result<Vec<bool>>>()
    })?;
    Ok((0..pairs.len())
        .map(|i| per_trial.iter().filter(|t| t[i]).count() as f64 / batch.trials as f64)
        .collect())
}

/// Every pair's hit rate is at least `threshold`.
pub fn check_deep_distance(
    batch: &TrialBatch,
    pairs: &[(NodeId, NodeId)],
    offset: usize,
    eps: f64,
    zeta: f64,
    threshold: f64,
) -> Result<LemmaReport> {
    let hits = deep_distance_hits(batch, pairs, offset, eps, zeta)?;
    let worst = hits.iter().copied().fold(1.0, f64::min);
    let mut rep = LemmaReport::new(
        "deep-distance",
        "smallest P(|d_hat - d| < eps) over pairs",
        worst,
        threshold,
        worst >= threshold,
        batch.trials,
    );
    rep.detail("eps", eps);
    rep.detail("offset", offset as f64);
    for (&(a, b), h) in pairs.iter().zip(&hits) {
        rep.detail(format!("hit rate {a}-{b}"), *h);
    }
    Ok(rep)
}

// ------------------------------------------------------- pseudo-block gap

/// Largest `|s' - s|` over leaves and blocks, where `s'` uses pseudo-blocks
/// (`len / L`) and `s` uses the drift-scaled block length
/// `floor(l_r eta(a))`. Blocks that do not fit under both lengths are
/// skipped.
pub fn pseudo_block_gap(tree: &ModelTree, assign: &SequenceAssignment, big_l: usize) -> Result<f64> {
    let l_r = assign.root_length() / big_l;
    let mut gap = 0.0f64;
    for &x in tree.leaves() {
        let bits = assign.seq(x);
        let l_a = scaled_block_len(l_r, tree.eta(x)?);
        let l_p = bits.len() / big_l;
        if l_a == 0 || l_p == 0 {
            continue;
        }
        for i in 1..=big_l {
            if i * l_a.max(l_p) > bits.len() {
                break;
            }
            let s = block_signature(bits, l_a, i)?;
            let p = block_signature(bits, l_p, i)?;
            gap = gap.max((s - p).abs());
        }
    }
    Ok(gap)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median pseudo-block gap for each batch of a sweep over `k`.
pub fn pseudo_block_gap_medians(batches: &[TrialBatch], zeta: f64) -> Result<Vec<f64>> {
    batches
        .iter()
        .map(|b| {
            let big_l = b.scheme(zeta)?.big_l;
            Ok(median(b.map_trials(|_, a| pseudo_block_gap(&b.tree, &a, big_l))?))
        })
        .collect()
}

/// The median gap does not grow along the sweep and ends below where it
/// started (or is zero throughout).
pub fn check_pseudo_block_gap(batches: &[TrialBatch], zeta: f64) -> Result<LemmaReport> {
    if batches.len() < 2 {
        return Err(Error::Domain("the k sweep needs at least two batches".into()));
    }
    let med = pseudo_block_gap_medians(batches, zeta)?;
    let monotone = med.windows(2).all(|w| w[1] <= w[0]);
    let zero = med.iter().all(|&m| m == 0.0);
    let last = *med.last().unwrap();
    let mut rep = LemmaReport::new(
        "pseudo-block-gap",
        "median max |s' - s| at the largest k",
        last,
        med[0],
        monotone && (zero || last < med[0]),
        batches.iter().map(|b| b.trials).sum(),
    );
    for (b, m) in batches.iter().zip(&med) {
        rep.detail(format!("median gap k={}", b.k), *m);
    }
    Ok(rep)
}

// --------------------------------------------------------- reconstruction

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReconstructionOutcome {
    pub trial: usize,
    pub rf: Option<usize>,
    pub success: bool,
    pub stalled: bool,
    pub error: Option<String>,
    pub newick: Option<String>,
}

/// Leaf labels of a model tree, in leaf order.
pub fn leaf_labels(tree: &ModelTree) -> Vec<String> {
    tree.leaves()
        .iter()
        .map(|&l| tree.label(l).unwrap_or_default().to_string())
        .collect()
}

/// Simulates each trial and reconstructs it from leaf signatures, scoring
/// the result by Robinson-Foulds distance to the model tree.
pub fn reconstruction_trials(batch: &TrialBatch, zeta: f64, cfg: &ReconstructConfig) -> Result<Vec<ReconstructionOutcome>> {
    let all: Vec<usize> = (0..batch.trials).collect();
    reconstruction_trials_for(batch, zeta, cfg, &all)
}

/// [`reconstruction_trials`] restricted to the given trial indices.
pub fn reconstruction_trials_for(
    batch: &TrialBatch,
    zeta: f64,
    cfg: &ReconstructConfig,
    trials: &[usize],
) -> Result<Vec<ReconstructionOutcome>> {
    cfg.validate()?;
    let scheme = batch.scheme(zeta)?;
    let labels = leaf_labels(&batch.tree);
    let truth = ReconstructedTree::from_model(&batch.tree);
    batch.map_subset(trials, |trial, assign| {
        let seqs = assign.into_leaf_seqs(&batch.tree);
        let backend = match batch.mode {
            Mode::Sym => SignatureBackend::symmetric(&seqs, &scheme),
            Mode::Asym => SignatureBackend::asymmetric(&seqs, scheme.big_l),
        };
        let result = backend.and_then(|b| tree_reconstruct(&labels, &b, cfg));
        Ok(match result {
            Ok(r) => {
                let rf = rf_distance(&r.tree, &truth)?;
                ReconstructionOutcome {
                    trial,
                    rf: Some(rf),
                    success: rf == 0,
                    stalled: false,
                    error: None,
                    newick: Some(r.tree.to_newick()),
                }
            }
            Err(e) => ReconstructionOutcome {
                trial,
                rf: None,
                success: false,
                stalled: matches!(e, Error::Stall { .. }),
                error: Some(e.to_string()),
                newick: None,
            },
        })
    })
}

pub fn success_rate(outcomes: &[ReconstructionOutcome]) -> f64 {
    if outcomes.is_empty() {
        return 0.0;
    }
    outcomes.iter().filter(|o| o.success).count() as f64 / outcomes.len() as f64
}

// ------------------------------------------------------------ bounds sweep

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub k: usize,
    pub lemma: String,
    pub observed: f64,
    pub bound: f64,
}

/// For each `k`, the worst regularity statistics over the trials next to the
/// bounds they are checked against.
pub fn bounds_sweep(tree: &ModelTree, mode: Mode, ks: &[usize], trials: usize, seed: u64) -> Result<Vec<SweepRow>> {
    let opts = CheckOptions::default();
    let mut rows = Vec::new();
    for &k in ks {
        let batch = TrialBatch::new(tree.clone(), mode, k, trials, seed)?.with_lineage();
        let stats = batch.map_trials(|_, a| {
            let len = length_stat(&batch, &a, &opts)?;
            let shift = max_normalized_shift_all_pairs(&a, &batch.tree)?;
            let bal = a.seqs().iter().map(max_dyadic_balance).fold(0.0, f64::max);
            Ok((len, shift, bal))
        })?;
        let row = |lemma: &str, observed: f64, bound: f64| SweepRow {
            k,
            lemma: lemma.into(),
            observed,
            bound,
        };
        match mode {
            Mode::Sym => {
                rows.push(row("lengths-min", stats.iter().map(|s| s.0.lo).fold(f64::INFINITY, f64::min), 1.0));
                rows.push(row("lengths-max", stats.iter().map(|s| s.0.hi).fold(0.0, f64::max), 4.0));
            }
            Mode::Asym => {
                rows.push(row("lengths-envelope", stats.iter().map(|s| s.0.hi).fold(0.0, f64::max), 1.0));
            }
        }
        rows.push(row(
            "bitshifts",
            stats.iter().map(|s| s.1).fold(0.0, f64::max),
            bitshift_bound(batch.leaf_count(), k),
        ));
        rows.push(row("block-balance", stats.iter().map(|s| s.2).fold(0.0, f64::max), batch.log_n()));
    }
    Ok(rows)
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut s = String::from("k\tlemma\tobserved\tbound\n");
    for r in rows {
        let _ = writeln!(s, "{}\t{}\t{}\t{}", r.k, r.lemma, r.observed, r.bound);
    }
    s
}
