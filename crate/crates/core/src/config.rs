//! `key = value` run configuration covering synthesis, network, training and
//! alignment settings.
//!
//! Keys are `section.field` (`synth.points`, `train.lr`, ...). The bare field
//! name is accepted when only one section has it; bare `seed` sets every seed.
//! Lines starting with `#` and blank lines are ignored.

use std::fmt::Write as _;
use std::path::Path;

use crate::align::AlignConfig;
use crate::error::{Error, Result};
use crate::net::NetConfig;
use crate::synth::{ShapeFamily, SynthConfig};
use crate::train::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub align: AlignConfig,
}

/// Every qualified key, in dump order.
pub const KEYS: &[&str] = &[
    "synth.shape",
    "synth.min_pieces",
    "synth.max_pieces",
    "synth.points",
    "synth.eta",
    "synth.perturbation",
    "synth.seed",
    "net.d_model",
    "net.d_desc",
    "net.heads",
    "net.head_dim",
    "net.ffn_dim",
    "net.k",
    "net.tau",
    "net.sinkhorn_iters",
    "train.epochs",
    "train.batch_size",
    "train.lr",
    "train.min_lr",
    "train.alpha",
    "train.beta",
    "train.gamma",
    "train.beta_epoch",
    "train.gamma_epoch",
    "train.checkpoint_every",
    "train.seed",
    "align.ransac_iters",
    "align.ransac_tau",
    "align.invert_edge_weight",
    "align.min_inliers",
    "align.seed",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

/// `auto` (or `none`) means "derive from other settings".
fn parse_auto(key: &str, value: &str) -> Result<Option<usize>> {
    match value {
        "auto" | "none" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

fn show_auto(v: Option<usize>) -> String {
    v.map_or_else(|| "auto".to_string(), |x| x.to_string())
}

/// Qualified key for `key`, resolving bare field names.
pub fn resolve_key(key: &str) -> Result<Vec<&'static str>> {
    if let Some(k) = KEYS.iter().find(|k| **k == key) {
        return Ok(vec![k]);
    }
    let matches: Vec<&'static str> =
        KEYS.iter().copied().filter(|k| k.split_once('.').is_some_and(|(_, f)| f == key)).collect();
    match matches.len() {
        0 => Err(Error::Config(format!("unknown key `{key}`; valid keys: {}", KEYS.join(", ")))),
        1 => Ok(matches),
        _ if key == "seed" => Ok(matches),
        _ => Err(Error::Config(format!("ambiguous key `{key}`; use one of {}", matches.join(", ")))),
    }
}

impl RunConfig {
    /// Sets one key; `key` may be bare or qualified.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        for k in resolve_key(key.trim())? {
            self.set_qualified(k, value)?;
        }
        Ok(())
    }

    fn set_qualified(&mut self, k: &str, v: &str) -> Result<()> {
        let (s, n, t, a) = (&mut self.synth, &mut self.net, &mut self.train, &mut self.align);
        match k {
            "synth.shape" => {
                s.shape = match v {
                    "any" | "mixed" => None,
                    name => Some(ShapeFamily::parse(name).ok_or_else(|| {
                        let names: Vec<&str> = ShapeFamily::ALL.iter().map(|f| f.name()).collect();
                        Error::Config(format!("`{k}`: unknown shape `{name}`; expected any, {}", names.join(", ")))
                    })?),
                }
            }
            "synth.min_pieces" => s.min_pieces = parse(k, v)?,
            "synth.max_pieces" => s.max_pieces = parse(k, v)?,
            "synth.points" => s.points = parse(k, v)?,
            "synth.eta" => s.eta = parse(k, v)?,
            "synth.perturbation" => s.perturbation = parse(k, v)?,
            "synth.seed" => s.seed = parse(k, v)?,
            "net.d_model" => n.d_model = parse(k, v)?,
            "net.d_desc" => n.d_desc = parse(k, v)?,
            "net.heads" => n.heads = parse(k, v)?,
            "net.head_dim" => n.head_dim = parse(k, v)?,
            "net.ffn_dim" => n.ffn_dim = parse(k, v)?,
            "net.k" => n.k = parse(k, v)?,
            "net.tau" => n.tau = parse(k, v)?,
            "net.sinkhorn_iters" => n.sinkhorn_iters = parse(k, v)?,
            "train.epochs" => t.epochs = parse(k, v)?,
            "train.batch_size" => t.batch_size = parse(k, v)?,
            "train.lr" => t.lr = parse(k, v)?,
            "train.min_lr" => t.min_lr = parse(k, v)?,
            "train.alpha" => t.alpha = parse(k, v)?,
            "train.beta" => t.beta = parse(k, v)?,
            "train.gamma" => t.gamma = parse(k, v)?,
            "train.beta_epoch" => t.beta_epoch = parse_auto(k, v)?,
            "train.gamma_epoch" => t.gamma_epoch = parse_auto(k, v)?,
            "train.checkpoint_every" => t.checkpoint_every = parse(k, v)?,
            "train.seed" => t.seed = parse(k, v)?,
            "align.ransac_iters" => a.ransac.iters = parse(k, v)?,
            "align.ransac_tau" => a.ransac.threshold = parse(k, v)?,
            "align.invert_edge_weight" => a.invert_edge_weight = parse(k, v)?,
            "align.min_inliers" => a.min_inliers = parse(k, v)?,
            "align.seed" => a.ransac.seed = parse(k, v)?,
            other => unreachable!("key table and setter disagree on `{other}`"),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<String> {
        let ks = resolve_key(key)?;
        let k = ks[0];
        let (s, n, t, a) = (&self.synth, &self.net, &self.train, &self.align);
        Ok(match k {
            "synth.shape" => s.shape.map_or("any", |f| f.name()).to_string(),
            "synth.min_pieces" => s.min_pieces.to_string(),
            "synth.max_pieces" => s.max_pieces.to_string(),
            "synth.points" => s.points.to_string(),
            "synth.eta" => s.eta.to_string(),
            "synth.perturbation" => s.perturbation.to_string(),
            "synth.seed" => s.seed.to_string(),
            "net.d_model" => n.d_model.to_string(),
            "net.d_desc" => n.d_desc.to_string(),
            "net.heads" => n.heads.to_string(),
            "net.head_dim" => n.head_dim.to_string(),
            "net.ffn_dim" => n.ffn_dim.to_string(),
            "net.k" => n.k.to_string(),
            "net.tau" => n.tau.to_string(),
            "net.sinkhorn_iters" => n.sinkhorn_iters.to_string(),
            "train.epochs" => t.epochs.to_string(),
            "train.batch_size" => t.batch_size.to_string(),
            "train.lr" => t.lr.to_string(),
            "train.min_lr" => t.min_lr.to_string(),
            "train.alpha" => t.alpha.to_string(),
            "train.beta" => t.beta.to_string(),
            "train.gamma" => t.gamma.to_string(),
            "train.beta_epoch" => show_auto(t.beta_epoch),
            "train.gamma_epoch" => show_auto(t.gamma_epoch),
            "train.checkpoint_every" => t.checkpoint_every.to_string(),
            "train.seed" => t.seed.to_string(),
            "align.ransac_iters" => a.ransac.iters.to_string(),
            "align.ransac_tau" => a.ransac.threshold.to_string(),
            "align.invert_edge_weight" => a.invert_edge_weight.to_string(),
            "align.min_inliers" => a.min_inliers.to_string(),
            "align.seed" => a.ransac.seed.to_string(),
            other => unreachable!("key table and getter disagree on `{other}`"),
        })
    }

    /// Applies `key = value` lines; errors carry the 1-based line number.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", no + 1)))?;
            self.set(k, v).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", no + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config file {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    /// Every key with its current value, one `key = value` line each.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for k in KEYS {
            let _ = writeln!(out, "{k} = {}", self.get(k).expect("table key"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.net.validate()?;
        self.train.validate()?;
        if self.align.ransac.iters == 0 || !(self.align.ransac.threshold > 0.0) {
            return Err(Error::Config("align.ransac_iters and align.ransac_tau must be positive".into()));
        }
        Ok(())
    }
}
