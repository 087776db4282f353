//! Experiment configuration as flat `key=value` text.
//!
//! The canonical form lists every key except `out` in sorted order; its
//! SHA-256 (plus the bytes of any input files) is the config hash stamped on
//! every output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use indelphy_core::reconstruct::ReconstructConfig;
use indelphy_core::tree::{EdgeParams, ModelTree};
use indelphy_core::validation::Mode;
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq)]
pub enum TreeSpec {
    /// Balanced tree built from `depth` and the `p_*` keys.
    Balanced,
    /// Edge-parameter file (`child parent p_sub p_del p_ins [label]`).
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub tree: TreeSpec,
    pub depth: usize,
    pub p_sub: f64,
    pub p_del: f64,
    pub p_ins: f64,
    pub k: usize,
    /// Sweep over `k`; empty means just `k`.
    pub ks: Vec<usize>,
    pub zeta: f64,
    pub delta: f64,
    pub r: Option<f64>,
    pub lambda_min: Option<f64>,
    pub eps: f64,
    pub slack: f64,
    pub mode: Mode,
    pub trials: usize,
    pub seed: u64,
    pub track_lineage: bool,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            tree: TreeSpec::Balanced,
            depth: 3,
            p_sub: 0.05,
            p_del: 0.02,
            p_ins: 0.02,
            k: 10_000,
            ks: Vec::new(),
            zeta: 0.07,
            delta: 1.0,
            r: None,
            lambda_min: None,
            eps: 0.5,
            slack: 1.0,
            mode: Mode::Sym,
            trials: 1,
            seed: 0,
            track_lineage: false,
            out: PathBuf::from("out"),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| anyhow!("bad value {v:?} for {key}"))
}

fn parse_auto(key: &str, v: &str) -> Result<Option<f64>> {
    if v == "auto" {
        Ok(None)
    } else {
        parse_num(key, v).map(Some)
    }
}

fn fmt_auto(x: Option<f64>) -> String {
    x.map_or_else(|| "auto".to_string(), |v| v.to_string())
}

impl ExperimentConfig {
    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "tree" => {
                self.tree = if v == "balanced" {
                    TreeSpec::Balanced
                } else {
                    TreeSpec::File(PathBuf::from(v))
                }
            }
            "depth" => self.depth = parse_num(key, v)?,
            "p_sub" => self.p_sub = parse_num(key, v)?,
            "p_del" => self.p_del = parse_num(key, v)?,
            "p_ins" => self.p_ins = parse_num(key, v)?,
            "k" => self.k = parse_num(key, v)?,
            "ks" => {
                self.ks = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse_num(key, s))
                    .collect::<Result<_>>()?
            }
            "zeta" => self.zeta = parse_num(key, v)?,
            "delta" => self.delta = parse_num(key, v)?,
            "r" => self.r = parse_auto(key, v)?,
            "lambda_min" => self.lambda_min = parse_auto(key, v)?,
            "eps" => self.eps = parse_num(key, v)?,
            "slack" => self.slack = parse_num(key, v)?,
            "mode" => self.mode = v.parse()?,
            "trials" => self.trials = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "track_lineage" => self.track_lineage = parse_num(key, v)?,
            "out" => self.out = PathBuf::from(v),
            other => bail!("unknown key {other:?}"),
        }
        Ok(())
    }

    /// Parses `key=value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key=value", i + 1))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                bail!("line {}: duplicate key {key:?}", i + 1);
            }
            cfg.set(key, value.trim()).with_context(|| format!("line {}", i + 1))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.depth > 20 {
            bail!("depth = {} must be in 1..=20", self.depth);
        }
        EdgeParams::new(self.p_sub, self.p_del, self.p_ins)?;
        for &k in self.ks.iter().chain([&self.k]) {
            if k < 4 {
                bail!("k = {k} must be at least 4");
            }
        }
        if !(self.zeta > 0.0 && self.zeta < 0.5) {
            bail!("zeta = {} must be in (0, 1/2)", self.zeta);
        }
        if self.trials == 0 {
            bail!("trials must be at least 1");
        }
        for (name, v) in [("eps", self.eps), ("slack", self.slack)] {
            if !(v > 0.0 && v.is_finite()) {
                bail!("{name} = {v} must be positive");
            }
        }
        self.reconstruct_config(self.lambda_min.unwrap_or(1.0)).validate()?;
        Ok(())
    }

    /// Every key except `out`, sorted, one `key=value` per line.
    pub fn canonical(&self) -> String {
        let tree = match &self.tree {
            TreeSpec::Balanced => "balanced".to_string(),
            TreeSpec::File(p) => p.display().to_string(),
        };
        let ks: Vec<String> = self.ks.iter().map(usize::to_string).collect();
        let mut pairs = vec![
            ("delta", self.delta.to_string()),
            ("depth", self.depth.to_string()),
            ("eps", self.eps.to_string()),
            ("k", self.k.to_string()),
            ("ks", ks.join(",")),
            ("lambda_min", fmt_auto(self.lambda_min)),
            ("mode", self.mode.as_str().to_string()),
            ("p_del", self.p_del.to_string()),
            ("p_ins", self.p_ins.to_string()),
            ("p_sub", self.p_sub.to_string()),
            ("r", fmt_auto(self.r)),
            ("seed", self.seed.to_string()),
            ("slack", self.slack.to_string()),
            ("track_lineage", self.track_lineage.to_string()),
            ("trials", self.trials.to_string()),
            ("tree", tree),
            ("zeta", self.zeta.to_string()),
        ];
        pairs.sort();
        let mut s = String::new();
        for (k, v) in pairs {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// Hex SHA-256 of the canonical text, the tree file (if any) and `inputs`.
    pub fn hash(&self, inputs: &[&[u8]]) -> Result<String> {
        let mut h = Sha256::new();
        h.update(self.canonical().as_bytes());
        if let TreeSpec::File(p) = &self.tree {
            h.update(fs::read(p).with_context(|| format!("reading {}", p.display()))?);
        }
        for i in inputs {
            h.update(i);
        }
        let mut hex = String::with_capacity(64);
        for b in h.finalize() {
            let _ = write!(hex, "{b:02x}");
        }
        Ok(hex)
    }

    pub fn model_tree(&self) -> Result<ModelTree> {
        Ok(match &self.tree {
            TreeSpec::Balanced => {
                ModelTree::balanced(self.depth, EdgeParams::new(self.p_sub, self.p_del, self.p_ins)?)?
            }
            TreeSpec::File(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                match self.lambda_min {
                    Some(lm) => ModelTree::parse_params(&text, lm)?,
                    None => ModelTree::parse_params_auto(&text)?,
                }
            }
        })
    }

    /// Nominal lengths of a sweep: `ks`, or just `k`.
    pub fn sweep(&self) -> Vec<usize> {
        if self.ks.is_empty() {
            vec![self.k]
        } else {
            self.ks.clone()
        }
    }

    pub fn reconstruct_config(&self, lambda_min: f64) -> ReconstructConfig {
        let mut c = ReconstructConfig::new(lambda_min);
        c.delta = self.delta;
        c.r = self.r;
        c
    }
}
