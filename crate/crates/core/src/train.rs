//! Joint training: segmentation from the start, matching and rigidity losses
//! switched on at configurable epochs.

use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::Point3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::{gt_matrix, loss_mat, loss_seg, rigidity_loss, sinkhorn_var};
use crate::net::{prepare_object, Network, ObjectPrep};
use crate::synth::PointCloudObject;
use crate::tensor::{adam_step, AdamState, CosineSchedule, Graph, ParamId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub min_lr: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// First epoch with the matching loss; `None` means `floor(0.04 · epochs)`.
    pub beta_epoch: Option<usize>,
    /// First epoch with the rigidity loss; `None` means `floor(0.8 · epochs)`.
    pub gamma_epoch: Option<usize>,
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 4,
            lr: 1e-3,
            min_lr: 1e-5,
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            beta_epoch: None,
            gamma_epoch: None,
            checkpoint_every: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn beta_start(&self) -> usize {
        self.beta_epoch.unwrap_or(self.epochs * 4 / 100)
    }

    pub fn gamma_start(&self) -> usize {
        self.gamma_epoch.unwrap_or(self.epochs * 8 / 10)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0) || !(self.min_lr >= 0.0) || self.min_lr > self.lr {
            return Err(Error::Config(format!("need 0 <= min_lr <= lr and lr > 0, got lr={} min_lr={}", self.lr, self.min_lr)));
        }
        for (name, w) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::Config(format!("{name} must be a finite non-negative weight, got {w}")));
            }
        }
        let (b, c) = (self.beta_start(), self.gamma_start());
        if b > c || c > self.epochs {
            return Err(Error::Config(format!(
                "need beta_epoch <= gamma_epoch <= epochs, got {b} <= {c} <= {}",
                self.epochs
            )));
        }
        Ok(())
    }

    pub fn schedule(&self) -> CosineSchedule {
        CosineSchedule { base_lr: self.lr, min_lr: self.min_lr, total_epochs: self.epochs }
    }
}

/// Weighted loss contributions for one object (or their mean over objects).
/// A gated term is exactly zero.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub seg: f64,
    pub mat: f64,
    pub rig: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossTerms,
}

type Grads = Vec<(ParamId, Vec<f64>)>;

/// Forward and (optionally) backward pass of the joint loss on one object.
/// The descriptor head sees the ground-truth fracture points.
pub fn object_loss(
    net: &Network,
    obj: &PointCloudObject,
    prep: &ObjectPrep,
    cfg: &TrainConfig,
    epoch: usize,
    with_grad: bool,
) -> Result<(LossTerms, Option<Grads>)> {
    let mut g = Graph::new();
    let fw = net.forward(&mut g, prep)?;
    let seg = loss_seg(&mut g, fw.confidence, &obj.labels)?;
    let mut total = g.scale(seg, cfg.alpha)?;
    let mut terms = LossTerms { seg: cfg.alpha * g.value(seg).item(), ..LossTerms::default() };

    let use_mat = epoch >= cfg.beta_start() && cfg.beta > 0.0;
    let use_rig = epoch >= cfg.gamma_start() && cfg.gamma > 0.0;
    let rows = obj.fracture_indices();
    if (use_mat || use_rig) && rows.len() >= 2 {
        let (p, d) = net.descriptor_head(&mut g, fw.features, &rows)?;
        let logits = net.affinity_logits(&mut g, p, d)?;
        let soft = sinkhorn_var(&mut g, logits, net.cfg.sinkhorn_iters)?;
        if use_mat {
            let gt = gt_matrix(&rows, &obj.gt_match);
            let lm = loss_mat(&mut g, soft, &gt)?;
            let w = g.scale(lm, cfg.beta)?;
            terms.mat = g.value(w).item();
            total = g.add(total, w)?;
        }
        if use_rig {
            let local: Vec<Point3<f64>> = rows.iter().map(|&r| obj.points[r]).collect();
            let piece: Vec<usize> = rows.iter().map(|&r| obj.piece_id[r]).collect();
            let (lr, _) = rigidity_loss(&mut g, soft, &local, &piece)?;
            // Same 1/N̂ normalization as the matching loss; the raw sum grows
            // with the fracture point count and swamps the other terms.
            let w = g.scale(lr, cfg.gamma / rows.len() as f64)?;
            terms.rig = g.value(w).item();
            total = g.add(total, w)?;
        }
    }
    terms.total = g.value(total).item();
    if !with_grad {
        return Ok((terms, None));
    }
    g.backward(total)?;
    Ok((terms, Some(g.param_grads())))
}

/// Object order for `epoch`; depends only on `(seed, epoch, n)`.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    order.shuffle(&mut rng);
    order
}

/// Training state over a fixed dataset.
pub struct Trainer<'a> {
    pub net: Network,
    pub cfg: TrainConfig,
    pub adam: AdamState,
    pub history: Vec<EpochRecord>,
    data: &'a [PointCloudObject],
    preps: Vec<ObjectPrep>,
    next_epoch: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(net: Network, data: &'a [PointCloudObject], cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::Empty("training set"));
        }
        if let Some((i, o)) = data.iter().enumerate().find(|(_, o)| o.n_pieces < 2) {
            return Err(Error::InvalidArgument(format!("object {i} has {} piece(s); training needs at least 2", o.n_pieces)));
        }
        let k = net.cfg.k;
        let preps = data.par_iter().map(|o| prepare_object(o, k)).collect::<Result<Vec<_>>>()?;
        let adam = AdamState::new(&net.store, cfg.schedule());
        Ok(Self { net, cfg, adam, history: Vec::new(), data, preps, next_epoch: 0 })
    }

    /// Continue from `epoch` (used after loading a checkpoint).
    pub fn set_epoch(&mut self, epoch: usize) {
        self.next_epoch = epoch;
    }

    pub fn epoch(&self) -> usize {
        self.next_epoch
    }

    pub fn is_done(&self) -> bool {
        self.next_epoch >= self.cfg.epochs
    }

    /// Loss of one batch (no update) at the current epoch.
    pub fn batch_loss(&self, batch: &[usize]) -> Result<LossTerms> {
        let e = self.next_epoch;
        let losses = batch
            .par_iter()
            .map(|&i| object_loss(&self.net, &self.data[i], &self.preps[i], &self.cfg, e, false).map(|r| r.0))
            .collect::<Result<Vec<_>>>()?;
        Ok(mean_terms(&losses))
    }

    /// Batches of the current epoch in order.
    pub fn batches(&self) -> Vec<Vec<usize>> {
        epoch_order(self.cfg.seed, self.next_epoch, self.data.len())
            .chunks(self.cfg.batch_size)
            .map(|c| c.to_vec())
            .collect()
    }

    /// Runs one epoch: forward/backward in parallel inside each batch, gradients
    /// reduced in batch order and averaged, then one Adam step per batch.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let epoch = self.next_epoch;
        let lr = self.cfg.schedule().lr(epoch);
        let mut all = Vec::with_capacity(self.data.len());
        for batch in self.batches() {
            let results: Vec<(LossTerms, Option<Grads>)> = batch
                .par_iter()
                .map(|&i| object_loss(&self.net, &self.data[i], &self.preps[i], &self.cfg, epoch, true))
                .collect::<Result<Vec<_>>>()?;
            self.net.store.zero_grad();
            let scale = 1.0 / batch.len() as f64;
            for (&obj, (terms, grads)) in batch.iter().zip(results) {
                if !terms.total.is_finite() {
                    return Err(Error::NonFiniteLoss { object: obj, epoch });
                }
                for (id, gr) in grads.unwrap_or_default() {
                    self.net.store.accumulate(id, &gr, scale)?;
                }
                all.push(terms);
            }
            adam_step(&mut self.net.store, &mut self.adam, epoch)?;
        }
        let rec = EpochRecord { epoch, lr, loss: mean_terms(&all) };
        log::info!(
            "epoch {epoch}: lr {lr:.2e} seg {:.4} mat {:.4} rig {:.4} total {:.4}",
            rec.loss.seg,
            rec.loss.mat,
            rec.loss.rig,
            rec.loss.total
        );
        self.history.push(rec);
        self.next_epoch += 1;
        Ok(rec)
    }
}

fn mean_terms(terms: &[LossTerms]) -> LossTerms {
    let n = terms.len().max(1) as f64;
    let mut m = LossTerms::default();
    for t in terms {
        m.seg += t.seg / n;
        m.mat += t.mat / n;
        m.rig += t.rig / n;
        m.total += t.total / n;
    }
    m
}

pub const CURVES_FILE: &str = "train.csv";
pub const FINAL_CHECKPOINT: &str = "checkpoint.bin";

pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("checkpoint_epoch{epoch:04}.bin"))
}

pub fn write_curves<W: Write>(w: &mut W, history: &[EpochRecord]) -> Result<()> {
    writeln!(w, "epoch,lr,L_seg,L_mat,L_rig,total")?;
    for r in history {
        writeln!(w, "{},{:e},{:e},{:e},{:e},{:e}", r.epoch, r.lr, r.loss.seg, r.loss.mat, r.loss.rig, r.loss.total)?;
    }
    Ok(())
}

/// Full run. With `out_dir`, writes a checkpoint every `checkpoint_every`
/// epochs, the final checkpoint and `train.csv` (rewritten after every epoch).
pub fn train(
    net: Network,
    data: &[PointCloudObject],
    cfg: TrainConfig,
    out_dir: Option<&Path>,
) -> Result<(Network, Vec<EpochRecord>)> {
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut trainer = Trainer::new(net, data, cfg)?;
    while !trainer.is_done() {
        let rec = trainer.run_epoch()?;
        if let Some(dir) = out_dir {
            let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(CURVES_FILE))?);
            write_curves(&mut f, &trainer.history)?;
            f.flush()?;
            let every = trainer.cfg.checkpoint_every;
            if every > 0 && (rec.epoch + 1) % every == 0 {
                trainer.net.save(&checkpoint_path(dir, rec.epoch + 1))?;
            }
        }
    }
    if let Some(dir) = out_dir {
        trainer.net.save(&dir.join(FINAL_CHECKPOINT))?;
    }
    Ok((trainer.net, trainer.history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::NetConfig;
    use crate::synth::{generate_dataset, SynthConfig};

    fn tiny_net() -> Network {
        let cfg = NetConfig { d_model: 8, d_desc: 8, heads: 2, head_dim: 4, ffn_dim: 8, k: 8, ..NetConfig::default() };
        Network::new(cfg, 3).unwrap()
    }

    fn tiny_data(count: usize) -> Vec<PointCloudObject> {
        let cfg = SynthConfig { min_pieces: 2, max_pieces: 3, points: 200, seed: 5, ..SynthConfig::default() };
        generate_dataset(&cfg, count).unwrap()
    }

    #[test]
    fn default_gates_scale_with_epochs() {
        let cfg = TrainConfig::default();
        assert_eq!((cfg.beta_start(), cfg.gamma_start()), (2, 48));
        let cfg = TrainConfig { epochs: 250, ..TrainConfig::default() };
        assert_eq!((cfg.beta_start(), cfg.gamma_start()), (10, 200));
    }

    #[test]
    fn rejects_out_of_order_gates() {
        let cfg = TrainConfig { beta_epoch: Some(30), gamma_epoch: Some(20), ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn gated_terms_are_exactly_zero() {
        let data = tiny_data(1);
        let net = tiny_net();
        let cfg = TrainConfig { epochs: 10, beta_epoch: Some(5), gamma_epoch: Some(8), ..TrainConfig::default() };
        let prep = prepare_object(&data[0], net.cfg.k).unwrap();
        let (t, _) = object_loss(&net, &data[0], &prep, &cfg, 4, false).unwrap();
        assert_eq!((t.mat, t.rig), (0.0, 0.0));
        assert_eq!(t.total, t.seg);
        let (t, _) = object_loss(&net, &data[0], &prep, &cfg, 5, false).unwrap();
        assert!(t.mat > 0.0);
        assert_eq!(t.rig, 0.0);
        let (t, _) = object_loss(&net, &data[0], &prep, &cfg, 8, false).unwrap();
        assert!(t.rig > 0.0);
    }

    #[test]
    fn epoch_order_is_a_permutation() {
        let mut o = epoch_order(1, 3, 17);
        o.sort_unstable();
        assert_eq!(o, (0..17).collect::<Vec<_>>());
        assert_ne!(epoch_order(1, 3, 17), epoch_order(1, 4, 17));
    }

    #[test]
    fn same_seed_same_weights() {
        let data = tiny_data(3);
        let cfg = TrainConfig { epochs: 2, batch_size: 2, beta_epoch: Some(1), gamma_epoch: Some(1), ..TrainConfig::default() };
        let (a, ha) = train(tiny_net(), &data, cfg.clone(), None).unwrap();
        let (b, hb) = train(tiny_net(), &data, cfg, None).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a.store, b.store);
    }

    #[test]
    fn rejects_single_piece_objects() {
        let mut data = tiny_data(1);
        data[0].n_pieces = 1;
        assert!(Trainer::new(tiny_net(), &data, TrainConfig::default()).is_err());
    }
}
