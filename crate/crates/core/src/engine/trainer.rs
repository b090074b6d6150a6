//! The alternating discriminator / generator training loop.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, NodeId};
use crate::data::UnpairedSet;
use crate::error::{Error, Result};
use crate::imaging::{augment, AugmentSpec, Image};
use crate::losses::{
    attention_loss_node, cycle_loss_node, discriminator_loss_node, generator_adv_loss_node, gmm_em_fit, gmm_nll_node,
    l1_node, perceptual_loss_node, reconstructive_loss_node, FeatureExtractor, LossComponents, LossTerm,
};
use crate::params::{Group, ParamId};
use crate::tensor::Tensor;

use super::checkpoint::Checkpoint;
use super::config::TrainingConfig;
use super::optim::AdamHyper;

pub const TRAIN_LOG: &str = "train_log.csv";
pub const GMM_LOG: &str = "gmm_log.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const TRAIN_LOG_HEADER: &str = "step,epoch,lr,l_adv,l_att,l_cc,l_p,l_gmm,l_r,total";
pub const GMM_LOG_HEADER: &str = "epoch,iter,nll";

/// One optimizer step. `components` are unweighted and averaged over the
/// batch; terms that are disabled (or weighted 0) stay at 0.
#[derive(Clone, Debug, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub components: LossComponents,
    /// Generator-side objective `Σ λ_t · L_t` as evaluated by the graph.
    pub total: f64,
    /// Discriminator objective summed over both domains (0 when the
    /// adversarial term is inactive).
    pub d_loss: f64,
}

impl StepLog {
    pub fn csv_row(&self) -> String {
        let c = &self.components;
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.step, self.epoch, self.lr, c.adv, c.att, c.cc, c.p, c.gmm, c.r, self.total
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmLogRow {
    pub epoch: u64,
    pub iter: usize,
    pub nll: f64,
}

/// Per-step randomness (augmentation and prior targets) depends only on
/// `(seed, step)`, so a resumed run replays the same draws.
fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7261_696e_5f73_7465);
    rng.set_stream(step);
    rng
}

fn accumulate(acc: &mut Vec<(ParamId, Tensor)>, grads: Vec<(ParamId, Tensor)>, scale: f64) {
    if acc.is_empty() {
        *acc = grads.into_iter().map(|(id, g)| (id, g.map(|v| v * scale))).collect();
        return;
    }
    for ((a_id, a), (id, g)) in acc.iter_mut().zip(grads) {
        debug_assert_eq!(*a_id, id);
        a.scale_add_assign(&g, scale);
    }
}

struct Prepared {
    graph: Graph,
    r: NodeId,
    n: NodeId,
    n_r: NodeId,
    r_n: NodeId,
    att_r: NodeId,
    att_n: NodeId,
    r_rec: NodeId,
    n_rec: NodeId,
}

pub struct Trainer {
    pub state: Checkpoint,
    extractor: FeatureExtractor,
    out_dir: Option<PathBuf>,
    last_checkpoint: Option<PathBuf>,
    residuals: Vec<f64>,
    residual_stride: usize,
    pub history: Vec<StepLog>,
    pub gmm_history: Vec<GmmLogRow>,
}

impl Trainer {
    pub fn new(config: TrainingConfig, out_dir: Option<&Path>) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::initial(config)?, out_dir)
    }

    /// Continue from a saved state; logs are appended in `out_dir`.
    pub fn from_checkpoint(state: Checkpoint, out_dir: Option<&Path>) -> Result<Self> {
        state.config.validate()?;
        let extractor = if state.config.perceptual_extractor.is_empty() {
            FeatureExtractor::default()
        } else {
            FeatureExtractor::from_archive(Path::new(&state.config.perceptual_extractor))?
        };
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            // Rows written after the checkpoint was taken are replayed, so drop them.
            let logs = [(TRAIN_LOG, TRAIN_LOG_HEADER, state.step), (GMM_LOG, GMM_LOG_HEADER, state.epoch)];
            for (name, header, keep_upto) in logs {
                let path = dir.join(name);
                let mut text = format!("{header}\n");
                if let Ok(old) = std::fs::read_to_string(&path) {
                    for line in old.lines().skip(1) {
                        let key = line.split(',').next().and_then(|k| k.parse::<u64>().ok());
                        if key.is_some_and(|k| k <= keep_upto) {
                            text.push_str(line);
                            text.push('\n');
                        }
                    }
                }
                std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            }
        }
        Ok(Trainer {
            state,
            extractor,
            out_dir: out_dir.map(Path::to_path_buf),
            last_checkpoint: None,
            residuals: Vec::new(),
            residual_stride: 1,
            history: Vec::new(),
            gmm_history: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.state.config
    }

    pub fn last_checkpoint(&self) -> Option<&Path> {
        self.last_checkpoint.as_deref()
    }

    /// Train until `config.epochs` epochs are complete.
    pub fn run(&mut self, data: &UnpairedSet, mut on_step: impl FnMut(&StepLog)) -> Result<()> {
        while self.state.epoch < self.state.config.epochs {
            self.train_epoch(data, &mut on_step)?;
        }
        Ok(())
    }

    pub fn train_epoch(&mut self, data: &UnpairedSet, on_step: &mut impl FnMut(&StepLog)) -> Result<()> {
        let cfg = self.state.config.clone();
        for img in data.rain.iter().chain(&data.norain) {
            if img.image.height() < cfg.crop_size || img.image.width() < cfg.crop_size {
                return Err(Error::dataset(&img.name, format!("image is smaller than crop_size {}", cfg.crop_size)));
            }
        }
        let epoch = self.state.epoch + 1;
        let lr = cfg.lr_at(epoch);
        let pairs: Vec<(&Image, &Image)> = data.epoch(cfg.seed, epoch).collect();
        let values = 3 * cfg.crop_size * cfg.crop_size * pairs.len();
        self.residual_stride = values.div_ceil(cfg.gmm_max_samples).max(1);
        self.residuals.clear();
        for batch in pairs.chunks(cfg.batch_size) {
            let log = self.train_step(batch, epoch, lr)?;
            if let Some(dir) = &self.out_dir {
                append(&dir.join(TRAIN_LOG), &format!("{}\n", log.csv_row()))?;
            }
            on_step(&log);
            self.history.push(log);
        }
        if cfg.losses.is_active(LossTerm::Gmm)
            && epoch.is_multiple_of(cfg.gmm_refit_interval)
            && !self.residuals.is_empty()
        {
            self.refit_gmm(epoch)?;
        }
        self.residuals.clear();
        self.state.epoch = epoch;
        if let Some(dir) = self.out_dir.clone() {
            let periodic = cfg.checkpoint_interval > 0 && epoch.is_multiple_of(cfg.checkpoint_interval);
            if periodic {
                let path = dir.join(CHECKPOINT_DIR).join(format!("epoch-{epoch:04}.ckpt"));
                self.state.save(&path)?;
                self.last_checkpoint = Some(path);
            }
            if epoch == cfg.epochs {
                let path = dir.join(FINAL_CHECKPOINT);
                self.state.save(&path)?;
                self.last_checkpoint = Some(path);
            }
        }
        Ok(())
    }

    fn refit_gmm(&mut self, epoch: u64) -> Result<()> {
        let cfg = &self.state.config;
        let fit = gmm_em_fit(&self.residuals, cfg.gmm_components, cfg.gmm_em_iters, cfg.seed.wrapping_add(epoch))?;
        let rows: Vec<GmmLogRow> =
            fit.trajectory.iter().enumerate().map(|(iter, &nll)| GmmLogRow { epoch, iter, nll }).collect();
        if let Some(dir) = &self.out_dir {
            let text: String = rows.iter().map(|r| format!("{},{},{}\n", r.epoch, r.iter, r.nll)).collect();
            append(&dir.join(GMM_LOG), &text)?;
        }
        self.gmm_history.extend(rows);
        self.state.gmm = fit.model;
        Ok(())
    }

    fn only_groups(&self, grads: &[(ParamId, Tensor)], groups: &[Group]) -> bool {
        grads.iter().all(|(id, _)| groups.contains(&self.state.bundle.store.entry(*id).group))
    }

    fn hyper(&self, lr: f64) -> AdamHyper {
        let c = &self.state.config;
        AdamHyper { lr, beta1: c.beta1, beta2: c.beta2, eps: c.adam_eps, weight_decay: c.weight_decay }
    }

    fn prepare(&self, r: &Image, n: &Image) -> Result<Prepared> {
        let bundle = &self.state.bundle;
        let mut graph = Graph::new(&Group::GENERATOR_SIDE);
        let ri = graph.constant(r.tensor().clone());
        let ni = graph.constant(n.tensor().clone());
        let f = bundle.translate_forward_nodes(&mut graph, ri, ni)?;
        let b = bundle.translate_backward_nodes(&mut graph, f.n_r, f.r_n)?;
        Ok(Prepared {
            graph,
            r: ri,
            n: ni,
            n_r: f.n_r,
            r_n: f.r_n,
            att_r: f.att_r,
            att_n: f.att_n,
            r_rec: b.r_rec,
            n_rec: b.n_rec,
        })
    }

    /// `D_R` and `D_N` on real images and detached fakes.
    fn discriminator_objective(&self, g: &mut Graph, p: &Prepared) -> Result<NodeId> {
        let bundle = &self.state.bundle;
        let store = &bundle.store;
        let real_r = g.constant(p.graph.value(p.r).clone());
        let real_n = g.constant(p.graph.value(p.n).clone());
        let fake_r = g.constant(p.graph.value(p.r_n).clone());
        let fake_n = g.constant(p.graph.value(p.n_r).clone());
        let sr = bundle.d_r.forward(g, store, real_r)?;
        let sf = bundle.d_r.forward(g, store, fake_r)?;
        let lr = discriminator_loss_node(g, &sr, &sf)?;
        let sr = bundle.d_n.forward(g, store, real_n)?;
        let sf = bundle.d_n.forward(g, store, fake_n)?;
        let ln = discriminator_loss_node(g, &sr, &sf)?;
        g.add(lr, ln)
    }

    /// Appends every active term to the generator graph and returns the
    /// weighted total with the term nodes.
    fn generator_objective(&self, p: &mut Prepared, rng: &mut ChaCha8Rng) -> Result<(NodeId, Vec<(LossTerm, NodeId)>)> {
        let cfg = &self.state.config;
        let w = &cfg.losses;
        let bundle = &self.state.bundle;
        let store = &bundle.store;
        let g = &mut p.graph;
        let mut terms = Vec::new();
        if w.is_active(LossTerm::Adv) {
            let sn = bundle.d_n.forward(g, store, p.n_r)?;
            let sr = bundle.d_r.forward(g, store, p.r_n)?;
            let a = generator_adv_loss_node(g, &sn)?;
            let b = generator_adv_loss_node(g, &sr)?;
            terms.push((LossTerm::Adv, g.add(a, b)?));
        }
        if w.is_active(LossTerm::Att) {
            let target = cfg.attention_prior.sample_target(g.value(p.att_r).shape(), rng);
            terms.push((LossTerm::Att, attention_loss_node(g, p.att_r, p.att_n, &target)?));
        }
        if w.is_active(LossTerm::Cc) {
            terms.push((LossTerm::Cc, cycle_loss_node(g, p.r, p.r_rec, p.n, p.n_rec)?));
        }
        if w.is_active(LossTerm::P) {
            terms.push((LossTerm::P, perceptual_loss_node(g, &self.extractor, p.n_r, p.r)?));
        }
        if w.is_active(LossTerm::Gmm) {
            let residual = g.sub(p.r, p.n_r)?;
            terms.push((LossTerm::Gmm, gmm_nll_node(g, residual, &self.state.gmm)?));
        }
        if w.is_active(LossTerm::R) {
            terms.push((LossTerm::R, reconstructive_loss_node(g, p.att_r, p.n_r, p.r)?));
        }
        if w.is_active(LossTerm::Id) {
            let id_n = bundle.g_n.forward(g, store, p.att_n, p.n)?;
            let id_r = bundle.g_r.forward(g, store, p.att_r, p.r)?;
            let a = l1_node(g, id_n, p.n)?;
            let b = l1_node(g, id_r, p.r)?;
            terms.push((LossTerm::Id, g.add(a, b)?));
        }
        let weighted: Vec<(NodeId, f64)> = terms.iter().map(|&(t, node)| (node, w.weight(t))).collect();
        let total = if weighted.is_empty() { g.constant(Tensor::scalar(0.0)) } else { g.combine(&weighted)? };
        Ok((total, terms))
    }

    /// One discriminator update followed by one generator/extractor update
    /// on a batch of `(rainy, rain-free)` images.
    pub fn train_step(&mut self, batch: &[(&Image, &Image)], epoch: u64, lr: f64) -> Result<StepLog> {
        if batch.is_empty() {
            return Err(Error::Parameter("empty batch".into()));
        }
        let step = self.state.step + 1;
        let cfg = self.state.config.clone();
        let mut rng = step_rng(cfg.seed, step);
        let scale = 1.0 / batch.len() as f64;
        let hyper = self.hyper(lr);
        let non_finite = |this: &Self| Error::NonFinite { step, last_checkpoint: this.last_checkpoint.clone() };

        let mut prepared = Vec::with_capacity(batch.len());
        for (r, n) in batch {
            let spec = |seed| AugmentSpec { crop: cfg.crop_size, flip_probability: cfg.flip_probability, seed };
            let r = augment(&(*r).clone().into_rgb(), &spec(rng.gen()))?;
            let n = augment(&(*n).clone().into_rgb(), &spec(rng.gen()))?;
            prepared.push(self.prepare(&r, &n)?);
        }

        let mut d_loss = 0.0;
        if cfg.losses.is_active(LossTerm::Adv) {
            let mut grads = Vec::new();
            for p in &prepared {
                let mut g = Graph::new(&Group::DISCRIMINATOR_SIDE);
                let obj = self.discriminator_objective(&mut g, p)?;
                let v = g.value(obj).item();
                if !v.is_finite() {
                    return Err(non_finite(self));
                }
                d_loss += scale * v;
                g.backward(obj)?;
                accumulate(&mut grads, g.param_grads(), scale);
            }
            debug_assert!(self.only_groups(&grads, &Group::DISCRIMINATOR_SIDE));
            self.state.adam.step(&mut self.state.bundle.store, &grads, &hyper);
        }

        let mut grads = Vec::new();
        let mut components = LossComponents::default();
        let mut total = 0.0;
        for p in &mut prepared {
            let (obj, terms) = self.generator_objective(p, &mut rng)?;
            let v = p.graph.value(obj).item();
            if !v.is_finite() {
                return Err(non_finite(self));
            }
            total += scale * v;
            for (t, node) in terms {
                components.set(t, components.get(t) + scale * p.graph.value(node).item());
            }
            p.graph.backward(obj)?;
            accumulate(&mut grads, p.graph.param_grads(), scale);
            if cfg.losses.is_active(LossTerm::Gmm) {
                let (r, n_r) = (p.graph.value(p.r), p.graph.value(p.n_r));
                let stride = self.residual_stride;
                self.residuals.extend(r.data().iter().zip(n_r.data()).step_by(stride).map(|(a, b)| a - b));
            }
        }
        debug_assert!(self.only_groups(&grads, &Group::GENERATOR_SIDE));
        self.state.adam.step(&mut self.state.bundle.store, &grads, &hyper);
        self.state.step = step;
        Ok(StepLog { step, epoch, lr, components, total, d_loss })
    }
}

fn append(path: &Path, text: &str) -> Result<()> {
    let mut f = OpenOptions::new().append(true).create(true).open(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
