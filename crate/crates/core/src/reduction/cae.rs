//! Convolutional autoencoder: stride-2 conv stages with batch norm down to a
//! dense latent layer, mirrored by transposed convolutions.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use romforge_nn::layers::{BatchNormSpec, Conv2dSpec, DenseSpec};
use romforge_nn::{glorot_init, Activation, Adam, AdamConfig, LayerSpec, ModelFile, Sequential, Tensor};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::Reducer;
use crate::error::{CoreError, Result};
use crate::field::Field;
use crate::snapshots::{Normalization, SnapshotSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaeConfig {
    pub n_latent: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
    /// Output channels of the successive stride-2 stages.
    #[serde(default = "default_filters")]
    pub filters: Vec<usize>,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
    #[serde(default = "default_true")]
    pub batch_norm: bool,
    #[serde(default = "default_val")]
    pub validation_fraction: f64,
    /// Random subset of training snapshots used for fitting.
    #[serde(default)]
    pub max_snapshots: Option<usize>,
}

fn default_alpha() -> f64 {
    1e-6
}
fn default_batch() -> usize {
    32
}
fn default_lr() -> f64 {
    1e-3
}
fn default_filters() -> Vec<usize> {
    vec![4, 8, 16]
}
fn default_kernel() -> usize {
    5
}
fn default_true() -> bool {
    true
}
fn default_val() -> f64 {
    0.1
}

impl Default for CaeConfig {
    fn default() -> Self {
        Self {
            n_latent: 4,
            alpha: default_alpha(),
            epochs: 50,
            batch_size: default_batch(),
            learning_rate: default_lr(),
            seed: 0,
            filters: default_filters(),
            kernel: default_kernel(),
            batch_norm: true,
            validation_fraction: default_val(),
            max_snapshots: None,
        }
    }
}

impl CaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_latent == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(CoreError::config("cae n_latent, epochs and batch_size must be positive"));
        }
        if self.filters.is_empty() || self.filters.contains(&0) {
            return Err(CoreError::config("cae filters must be a nonempty list of positive counts"));
        }
        if self.kernel % 2 == 0 {
            return Err(CoreError::config("cae kernel must be odd"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(CoreError::config("cae validation_fraction must lie in [0, 1)"));
        }
        if !(self.alpha >= 0.0) || !(self.learning_rate > 0.0) {
            return Err(CoreError::config("cae alpha must be >= 0 and learning_rate > 0"));
        }
        Ok(())
    }
}

/// Layer specs of the encoder and decoder for `channels × ny × nx` inputs.
pub fn cae_architecture(nx: usize, ny: usize, channels: usize, cfg: &CaeConfig) -> Result<(Vec<LayerSpec>, Vec<LayerSpec>)> {
    cfg.validate()?;
    let f = 1usize << cfg.filters.len();
    if nx % f != 0 || ny % f != 0 {
        return Err(CoreError::config(format!(
            "field {nx}x{ny} is not divisible by 2^{} as the cae stride chain requires",
            cfg.filters.len()
        )));
    }
    let conv = |ci, co, transposed, activation| {
        LayerSpec::Conv2d(Conv2dSpec {
            in_channels: ci,
            out_channels: co,
            kernel: [cfg.kernel, cfg.kernel],
            stride: 2,
            transposed,
            activation,
        })
    };
    let (bx, by) = (nx / f, ny / f);
    let top = *cfg.filters.last().expect("nonempty");
    let flat = top * bx * by;
    let mut enc = Vec::new();
    let mut prev = channels;
    for &c in &cfg.filters {
        enc.push(conv(prev, c, false, Activation::LeakyRelu));
        if cfg.batch_norm {
            enc.push(LayerSpec::BatchNorm(BatchNormSpec::new(c)));
        }
        prev = c;
    }
    enc.push(LayerSpec::Reshape { shape: vec![flat] });
    enc.push(LayerSpec::Dense(DenseSpec {
        in_width: flat,
        out_width: cfg.n_latent,
        activation: Activation::Linear,
        bias: true,
    }));
    let mut dec = vec![
        LayerSpec::Dense(DenseSpec {
            in_width: cfg.n_latent,
            out_width: flat,
            activation: Activation::LeakyRelu,
            bias: true,
        }),
        LayerSpec::Reshape {
            shape: vec![top, by, bx],
        },
    ];
    let mut prev = top;
    for (k, &c) in cfg.filters.iter().rev().enumerate().skip(1) {
        let _ = k;
        dec.push(conv(prev, c, true, Activation::LeakyRelu));
        if cfg.batch_norm {
            dec.push(LayerSpec::BatchNorm(BatchNormSpec::new(c)));
        }
        prev = c;
    }
    dec.push(conv(prev, channels, true, Activation::Linear));
    Ok((enc, dec))
}

#[derive(Clone, Debug)]
pub struct CaeModel {
    pub nx: usize,
    pub ny: usize,
    pub channels: usize,
    pub config: CaeConfig,
    pub encoder: Sequential<f64>,
    pub decoder: Sequential<f64>,
    pub normalization: Normalization,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CaeTraining {
    /// Entry 0: initial model on the epoch-0 batches; entry `e`: mean batch
    /// loss while training epoch `e - 1`.
    pub train_loss: Vec<f64>,
    /// Inference-mode reconstruction loss after each epoch.
    pub validation_loss: Vec<f64>,
    pub best_epoch: usize,
    pub n_train_snapshots: usize,
    pub n_validation_snapshots: usize,
}

const INFER_BATCH: usize = 256;

/// Shuffled sample order of epoch `epoch`.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

/// Stacks normalized sample vectors into a `[B, C, H, W]` batch.
fn batch(data: &[Vec<f64>], idx: &[usize], shape: [usize; 3]) -> Result<Tensor<f64>> {
    let items: Vec<&[f64]> = idx.iter().map(|&k| data[k].as_slice()).collect();
    Ok(Tensor::stack(&items, &shape)?)
}

/// Mean over the batch of `‖x − x̂‖²`, and its gradient w.r.t. `x̂`.
fn recon_loss(x: &Tensor<f64>, y: &Tensor<f64>) -> (f64, Tensor<f64>) {
    let b = x.batch() as f64;
    let mut g = y.clone();
    let mut l = 0.0;
    for (gv, &xv) in g.data_mut().iter_mut().zip(x.data()) {
        let d = *gv - xv;
        l += d * d;
        *gv = 2.0 * d / b;
    }
    (l / b, g)
}

/// Loss of an autoencoder `net` on one batch, training-mode statistics.
pub fn batch_loss(net: &Sequential<f64>, x: &Tensor<f64>, alpha: f64) -> Result<f64> {
    let y = net.forward(x, true)?;
    Ok(recon_loss(x, &y).0 + alpha * net.sum_sq_params())
}

/// Initialized autoencoder (encoder layers followed by decoder layers).
pub fn initial_autoencoder(nx: usize, ny: usize, channels: usize, cfg: &CaeConfig) -> Result<(Sequential<f64>, usize)> {
    let (enc, dec) = cae_architecture(nx, ny, channels, cfg)?;
    let n_enc = enc.len();
    let mut net = Sequential::from_specs(enc.into_iter().chain(dec))?;
    glorot_init(&mut net, cfg.seed);
    Ok((net, n_enc))
}

/// Normalized training snapshots after the optional subsampling, split into
/// `(fit, validation)` sets.
pub fn training_snapshots(set: &SnapshotSet, cfg: &CaeConfig) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut all: Vec<Vec<f64>> = set
        .train()
        .iter()
        .flat_map(|t| t.states.iter())
        .map(|f| set.normalization.normalize(f).values)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut idx: Vec<usize> = (0..all.len()).collect();
    idx.shuffle(&mut rng);
    if let Some(m) = cfg.max_snapshots {
        idx.truncate(m.max(1));
    }
    let n_val = ((idx.len() as f64) * cfg.validation_fraction).round() as usize;
    let n_val = n_val.min(idx.len().saturating_sub(1));
    let mut take = |ks: &[usize]| ks.iter().map(|&k| std::mem::take(&mut all[k])).collect::<Vec<_>>();
    let val = take(&idx[..n_val]);
    let fit = take(&idx[n_val..]);
    (fit, val)
}

fn mean_recon(net: &Sequential<f64>, data: &[Vec<f64>], shape: [usize; 3]) -> Result<f64> {
    let mut total = 0.0;
    for chunk in (0..data.len()).collect::<Vec<_>>().chunks(INFER_BATCH) {
        let x = batch(data, chunk, shape)?;
        let y = net.forward(&x, false)?;
        total += recon_loss(&x, &y).0 * chunk.len() as f64;
    }
    Ok(total / data.len() as f64)
}

/// Trains on the dataset's training trajectories; returns the best
/// validation checkpoint with recalibrated batch-norm statistics.
pub fn cae_fit(set: &SnapshotSet, cfg: &CaeConfig) -> Result<(CaeModel, CaeTraining)> {
    let (fit, val) = training_snapshots(set, cfg);
    cae_fit_data(set.nx, set.ny, set.channels, &set.normalization, &fit, &val, cfg)
}

pub fn cae_fit_data(
    nx: usize,
    ny: usize,
    channels: usize,
    normalization: &Normalization,
    fit: &[Vec<f64>],
    val: &[Vec<f64>],
    cfg: &CaeConfig,
) -> Result<(CaeModel, CaeTraining)> {
    if fit.is_empty() {
        return Err(CoreError::config("cae training needs at least one snapshot"));
    }
    let shape = [channels, ny, nx];
    let (mut net, n_enc) = initial_autoencoder(nx, ny, channels, cfg)?;
    let mut opt = Adam::new(AdamConfig {
        learning_rate: cfg.learning_rate,
        ..AdamConfig::default()
    });
    let mut hist = CaeTraining {
        n_train_snapshots: fit.len(),
        n_validation_snapshots: val.len(),
        ..Default::default()
    };
    {
        let order = epoch_order(cfg.seed, 0, fit.len());
        let mut acc = 0.0;
        let chunks: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        for c in &chunks {
            acc += batch_loss(&net, &batch(fit, c, shape)?, cfg.alpha)?;
        }
        hist.train_loss.push(acc / chunks.len() as f64);
    }
    let mut best = (f64::INFINITY, net.clone(), 0usize);
    for epoch in 0..cfg.epochs {
        let order = epoch_order(cfg.seed, epoch, fit.len());
        let mut acc = 0.0;
        let mut nb = 0;
        for (bi, c) in order.chunks(cfg.batch_size).enumerate() {
            let x = batch(fit, c, shape)?;
            let (y, caches) = net.forward_cached(&x, true)?;
            let (l, dy) = recon_loss(&x, &y);
            let loss = l + cfg.alpha * net.sum_sq_params();
            if !loss.is_finite() {
                return Err(CoreError::NonFinite(format!("cae loss at epoch {epoch}, batch {bi}")));
            }
            let (mut grads, _) = net.backward(&caches, &dy)?;
            for (g, p) in grads.iter_mut().zip(net.param_blocks()) {
                for (gv, &pv) in g.iter_mut().zip(p) {
                    *gv += 2.0 * cfg.alpha * pv;
                }
            }
            net.update_running_stats(&caches);
            opt.step(net.param_blocks_mut(), &grads);
            acc += loss;
            nb += 1;
        }
        hist.train_loss.push(acc / nb as f64);
        let v = if val.is_empty() { acc / nb as f64 } else { mean_recon(&net, val, shape)? };
        hist.validation_loss.push(v);
        if v < best.0 {
            best = (v, net.clone(), epoch);
        }
    }
    let (_, mut net, best_epoch) = best;
    hist.best_epoch = best_epoch;
    recalibrate(&mut net, fit, shape)?;
    let decoder = Sequential {
        layers: net.layers.split_off(n_enc),
    };
    Ok((
        CaeModel {
            nx,
            ny,
            channels,
            config: cfg.clone(),
            encoder: net,
            decoder,
            normalization: normalization.clone(),
        },
        hist,
    ))
}

/// Replaces batch-norm running statistics by the exact population
/// statistics of the training data.
fn recalibrate(net: &mut Sequential<f64>, data: &[Vec<f64>], shape: [usize; 3]) -> Result<()> {
    if !net.has_batch_norm() {
        return Ok(());
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut acts: Vec<Tensor<f64>> = idx.chunks(INFER_BATCH).map(|c| batch(data, c, shape)).collect::<Result<_>>()?;
    for li in 0..net.layers.len() {
        if let romforge_nn::Layer::BatchNorm(bn) = &mut net.layers[li] {
            let c = bn.spec.channels;
            let mut sum = vec![0.0; c];
            let mut sq = vec![0.0; c];
            let mut count = 0.0;
            for a in &acts {
                let per = a.item_len() / c;
                for b in 0..a.batch() {
                    for ch in 0..c {
                        let s = &a.data()[(b * c + ch) * per..(b * c + ch + 1) * per];
                        sum[ch] += s.iter().sum::<f64>();
                        sq[ch] += s.iter().map(|v| v * v).sum::<f64>();
                    }
                }
                count += (a.batch() * per) as f64;
            }
            for ch in 0..c {
                let m = sum[ch] / count;
                bn.running_mean[ch] = m;
                bn.running_var[ch] = (sq[ch] / count - m * m).max(0.0);
            }
        }
        let layer = &net.layers[li];
        acts = acts.iter().map(|a| layer.forward(a, false).map(|r| r.0)).collect::<romforge_nn::Result<_>>()?;
    }
    Ok(())
}

impl CaeModel {
    /// Normalized-space encoding of a batch of normalized vectors.
    pub fn encode_normalized(&self, xs: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let shape = [self.channels, self.ny, self.nx];
        let mut out = Vec::with_capacity(xs.len());
        for chunk in xs.chunks(INFER_BATCH) {
            let x = Tensor::stack(chunk, &shape)?;
            let z = self.encoder.forward(&x, false)?;
            out.extend(z.data().chunks(self.config.n_latent).map(|c| c.to_vec()));
        }
        Ok(out)
    }

    pub fn from_model_file(f: &ModelFile) -> Result<Self> {
        let m = &f.meta;
        let get = |k: &str| {
            m.get(k)
                .and_then(|v| v.as_u64())
                .map(|v| v as usize)
                .ok_or_else(|| CoreError::Format(format!("cae manifest lacks {k}")))
        };
        let config: CaeConfig =
            serde_json::from_value(m["config"].clone()).map_err(|e| CoreError::Format(format!("cae config: {e}")))?;
        let normalization: Normalization = serde_json::from_value(m["normalization"].clone())
            .map_err(|e| CoreError::Format(format!("cae normalization: {e}")))?;
        Ok(Self {
            nx: get("nx")?,
            ny: get("ny")?,
            channels: get("channels")?,
            config,
            encoder: f.network("encoder")?,
            decoder: f.network("decoder")?,
            normalization,
        })
    }
}

impl Reducer for CaeModel {
    fn n_latent(&self) -> usize {
        self.config.n_latent
    }

    fn field_shape(&self) -> (usize, usize, usize) {
        (self.nx, self.ny, self.channels)
    }

    fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    fn kind(&self) -> &'static str {
        "cae"
    }

    fn encode(&self, fields: &[&Field]) -> Result<Vec<Vec<f64>>> {
        let norm: Vec<Vec<f64>> = fields
            .iter()
            .map(|f| {
                self.check_field(f)?;
                Ok(self.normalization.normalize(f).values)
            })
            .collect::<Result<_>>()?;
        let refs: Vec<&[f64]> = norm.iter().map(|v| v.as_slice()).collect();
        self.encode_normalized(&refs)
    }

    fn decode(&self, codes: &[Vec<f64>]) -> Result<Vec<Field>> {
        let nl = self.n_latent();
        let mut out = Vec::with_capacity(codes.len());
        for chunk in codes.chunks(INFER_BATCH) {
            if let Some(c) = chunk.iter().find(|c| c.len() != nl) {
                return Err(CoreError::mismatch("latent width", nl, c.len()));
            }
            let refs: Vec<&[f64]> = chunk.iter().map(|c| c.as_slice()).collect();
            let z = Tensor::stack(&refs, &[nl])?;
            let y = self.decoder.forward(&z, false)?;
            let per = self.nx * self.ny * self.channels;
            for v in y.data().chunks(per) {
                let f = Field::from_values(self.nx, self.ny, self.channels, v.to_vec())?;
                out.push(self.normalization.denormalize(&f));
            }
        }
        Ok(out)
    }

    fn to_model_file(&self) -> Result<ModelFile> {
        let mut f = ModelFile::new(json!({
            "kind": "cae",
            "nx": self.nx,
            "ny": self.ny,
            "channels": self.channels,
            "n_latent": self.n_latent(),
            "config": self.config,
            "normalization": self.normalization,
        }));
        f.add_network("encoder", &self.encoder);
        f.add_network("decoder", &self.decoder);
        Ok(f)
    }
}
