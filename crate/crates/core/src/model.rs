//! Sequence heads over the precomputed hop sequences.
//!
//! Both models share a trunk: a per-position linear map into the hidden
//! width, per-position standardization with learned affine parameters, and
//! dropout. The Conv head runs two same-padded 1-D convolutions with a ReLU
//! between, then mean-pools over positions; the Attn head optionally adds
//! sinusoidal positional encodings and pools with learnable-query attention.
//! A single affine classifier maps the pooled vector to logits.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{self, DropoutMask, SeqNormCache};
use crate::tensor::{Parameter, Tensor};

pub use crate::data::LabelKind as TaskKind;

pub const SEQNORM_EPS: f64 = 1e-5;
pub const MODEL_MAGIC: &[u8; 4] = b"N2SM";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Conv,
    Attn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub head: HeadKind,
    /// Hop count L; sequences have `hops + 1` positions.
    pub hops: usize,
    /// Input feature dimension d.
    pub in_dim: usize,
    /// Hidden width d' shared by the trunk and heads.
    pub hidden_dim: usize,
    pub num_classes: usize,
    /// Conv head only; must be odd.
    #[serde(default = "default_kernel_size")]
    pub kernel_size: usize,
    /// Attn head only; ignored by the conv head.
    #[serde(default = "default_use_pe")]
    pub use_positional_encoding: bool,
    pub dropout_rate: f64,
    pub task: TaskKind,
}

fn default_kernel_size() -> usize {
    3
}

fn default_use_pe() -> bool {
    true
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_size % 2 == 0 {
            return Err(Error::invalid(format!(
                "kernel_size must be odd, got {}",
                self.kernel_size
            )));
        }
        if self.hidden_dim == 0 || self.in_dim == 0 || self.num_classes == 0 {
            return Err(Error::invalid("hidden_dim, in_dim and num_classes must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn positions(&self) -> usize {
        self.hops + 1
    }
}

/// Closed-form number of learnable scalars for a config. The positional
/// encoding table is deterministic, so the attention head costs the same
/// with or without it.
pub fn parameter_count(config: &ModelConfig) -> usize {
    let p = config.positions();
    let d = config.in_dim;
    let h = config.hidden_dim;
    let c = config.num_classes;
    let trunk = p * h * d + 2 * p * h;
    let head = match config.head {
        HeadKind::Conv => 2 * (h * h * config.kernel_size + h),
        HeadKind::Attn => h,
    };
    let classifier = c * h + c;
    trunk + head + classifier
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Vec<Parameter>,
    /// Deterministic positional table, present only for Attn with PE.
    positional: Option<Tensor>,
}

// Fixed parameter order; indices into `params`.
const P_TRUNK_W: usize = 0;
const P_GAMMA: usize = 1;
const P_BETA: usize = 2;

impl Model {
    pub fn new(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let p = config.positions();
        let d = config.in_dim;
        let h = config.hidden_dim;
        let c = config.num_classes;

        let mut params = Vec::new();
        params.push(Parameter::new(
            "trunk.weight",
            uniform_fan_init(&[p, h, d], d, h, rng),
        ));
        params.push(Parameter::new("trunk.gamma", Tensor::scalar_fill(&[p, h], 1.0)));
        params.push(Parameter::new("trunk.beta", Tensor::zeros(&[p, h])));

        match config.head {
            HeadKind::Conv => {
                let k = config.kernel_size;
                for layer in 1..=2 {
                    params.push(Parameter::new(
                        format!("conv{layer}.kernel"),
                        uniform_fan_init(&[h, h, k], h * k, h * k, rng),
                    ));
                    params.push(Parameter::new(format!("conv{layer}.bias"), Tensor::zeros(&[h])));
                }
            }
            HeadKind::Attn => {
                // A zero query would start at exactly uniform attention;
                // a small normal init keeps early training stable.
                let normal = Normal::new(0.0, 0.1).expect("valid sigma");
                let q: Vec<f64> = (0..h).map(|_| normal.sample(rng)).collect();
                params.push(Parameter::new("attn.query", Tensor::from_values(&[h], q)?));
            }
        }
        params.push(Parameter::new(
            "classifier.weight",
            uniform_fan_init(&[c, h], h, c, rng),
        ));
        params.push(Parameter::new("classifier.bias", Tensor::zeros(&[c])));

        let positional = match config.head {
            HeadKind::Attn if config.use_positional_encoding => {
                Some(ops::positional_encoding(config.hops, h))
            }
            _ => None,
        };
        Ok(Model { config, params, positional })
    }

    pub fn parameter_total(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn param(&self, name: &str) -> &Parameter {
        self.params
            .iter()
            .find(|p| p.name == name)
            .unwrap_or_else(|| panic!("unknown parameter '{name}'"))
    }

    fn head_param_base(&self) -> usize {
        3
    }

    fn classifier_indices(&self) -> (usize, usize) {
        let n = self.params.len();
        (n - 2, n - 1)
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.tensor.zero_grad();
        }
    }

    /// Run the trunk and head. `batch` is `[B, hops + 1, in_dim]`.
    pub fn forward(
        &self,
        batch: &Tensor,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<(Tensor, ForwardCache)> {
        let (bsz, positions, d) = match batch.shape() {
            [b, p, d] => (*b, *p, *d),
            other => {
                return Err(Error::dimension(format!("batch must be [B, P, d], got {other:?}")))
            }
        };
        if positions != self.config.positions() {
            return Err(Error::dimension(format!(
                "sequence length mismatch: batch has {positions} positions, model expects {}",
                self.config.positions()
            )));
        }
        if d != self.config.in_dim {
            return Err(Error::dimension(format!(
                "feature dim mismatch: batch has {d}, model expects {}",
                self.config.in_dim
            )));
        }

        let linear_out = ops::linear_fwd(batch, &self.params[P_TRUNK_W].tensor)?;
        let (norm_out, norm_cache) = ops::seqnorm_fwd(
            &linear_out,
            &self.params[P_GAMMA].tensor,
            &self.params[P_BETA].tensor,
            SEQNORM_EPS,
        )?;
        let (dropped, dropout_mask) =
            ops::dropout_fwd(&norm_out, self.config.dropout_rate, training, rng)?;

        let base = self.head_param_base();
        let (pooled, head) = match self.config.head {
            HeadKind::Conv => {
                let conv1_out = ops::conv1d_fwd(
                    &dropped,
                    &self.params[base].tensor,
                    &self.params[base + 1].tensor,
                )?;
                let relu_out = ops::relu_fwd(&conv1_out);
                let conv2_out = ops::conv1d_fwd(
                    &relu_out,
                    &self.params[base + 2].tensor,
                    &self.params[base + 3].tensor,
                )?;
                let pooled = ops::mean_pool_fwd(&conv2_out)?;
                (pooled, HeadCache::Conv { conv1_out, relu_out })
            }
            HeadKind::Attn => {
                let keys = match &self.positional {
                    Some(pe) => ops::add_positional(&dropped, pe)?,
                    None => dropped.clone(),
                };
                let (pooled, alpha) =
                    ops::query_attention_fwd(&keys, &self.params[base].tensor)?;
                (pooled, HeadCache::Attn { keys, alpha })
            }
        };

        let (cw, cb) = self.classifier_indices();
        let logits = classifier_fwd(
            &pooled,
            &self.params[cw].tensor,
            &self.params[cb].tensor,
        )?;
        if !logits.is_finite() {
            return Err(Error::NonFinite("model produced non-finite logits".into()));
        }
        let cache = ForwardCache {
            bsz,
            linear_out,
            norm_cache,
            dropout_mask,
            dropped,
            head,
            pooled,
        };
        Ok((logits, cache))
    }

    /// Accumulate parameter gradients for a batch given the logit gradient.
    pub fn backward(&mut self, batch: &Tensor, cache: &ForwardCache, dlogits: &Tensor) -> Result<()> {
        let (cw, cb) = self.classifier_indices();
        let (dpooled, dcw, dcb) =
            classifier_bwd(&cache.pooled, &self.params[cw].tensor, dlogits)?;
        self.params[cw].tensor.accumulate_grad(dcw.values());
        self.params[cb].tensor.accumulate_grad(dcb.values());

        let base = self.head_param_base();
        let positions = self.config.positions();
        let ddropped = match &cache.head {
            HeadCache::Conv { conv1_out, relu_out } => {
                let dconv2_out = ops::mean_pool_bwd(cache.bsz, positions, &dpooled)?;
                let (drelu, dk2, db2) =
                    ops::conv1d_bwd(relu_out, &self.params[base + 2].tensor, &dconv2_out)?;
                self.params[base + 2].tensor.accumulate_grad(dk2.values());
                self.params[base + 3].tensor.accumulate_grad(db2.values());
                let dconv1_out = ops::relu_bwd(conv1_out, &drelu);
                let (dx, dk1, db1) =
                    ops::conv1d_bwd(&cache.dropped, &self.params[base].tensor, &dconv1_out)?;
                self.params[base].tensor.accumulate_grad(dk1.values());
                self.params[base + 1].tensor.accumulate_grad(db1.values());
                dx
            }
            HeadCache::Attn { keys, alpha } => {
                let (dkeys, dq) =
                    ops::query_attention_bwd(keys, &self.params[base].tensor, alpha, &dpooled)?;
                self.params[base].tensor.accumulate_grad(dq.values());
                // the positional table is constant, so its add is transparent
                dkeys
            }
        };

        let dnorm_out = ops::dropout_bwd(&cache.dropout_mask, &ddropped);
        let (dlinear, dgamma, dbeta) = ops::seqnorm_bwd(
            &cache.linear_out,
            &self.params[P_GAMMA].tensor,
            &cache.norm_cache,
            &dnorm_out,
        )?;
        self.params[P_GAMMA].tensor.accumulate_grad(dgamma.values());
        self.params[P_BETA].tensor.accumulate_grad(dbeta.values());
        let (_, dw) = ops::linear_bwd(batch, &self.params[P_TRUNK_W].tensor, &dlinear)?;
        self.params[P_TRUNK_W].tensor.accumulate_grad(dw.values());
        Ok(())
    }

    /// Jointly permute the per-position parameter stacks (trunk weight,
    /// gamma, beta) by `perm[new_position] = old_position`. Together with the
    /// matching input permutation this is the equivariance the PE-free
    /// attention head exhibits. Test support.
    pub fn permute_position_params(&mut self, perm: &[usize]) -> Result<()> {
        let p = self.config.positions();
        if perm.len() != p {
            return Err(Error::dimension("permutation length != positions"));
        }
        for (idx, row_len) in [
            (P_TRUNK_W, self.config.hidden_dim * self.config.in_dim),
            (P_GAMMA, self.config.hidden_dim),
            (P_BETA, self.config.hidden_dim),
        ] {
            let old = self.params[idx].tensor.values().to_vec();
            let v = self.params[idx].tensor.values_mut();
            for (new_pos, &old_pos) in perm.iter().enumerate() {
                v[new_pos * row_len..(new_pos + 1) * row_len]
                    .copy_from_slice(&old[old_pos * row_len..(old_pos + 1) * row_len]);
            }
        }
        Ok(())
    }
}

fn uniform_fan_init(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    let numel: usize = shape.iter().product();
    let values: Vec<f64> = (0..numel).map(|_| dist.sample(rng)).collect();
    Tensor::from_values(shape, values).expect("shape/value agreement")
}

/// Affine map from pooled vectors to logits: `logits = r W^T + b`.
fn classifier_fwd(pooled: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (bsz, h) = match pooled.shape() {
        [b, h] => (*b, *h),
        other => return Err(Error::dimension(format!("pooled must be [B, H], got {other:?}"))),
    };
    let (c, wh) = (weight.shape()[0], weight.shape()[1]);
    if wh != h || bias.shape() != [c] {
        return Err(Error::dimension("classifier parameter shapes inconsistent"));
    }
    let mut logits = Tensor::zeros(&[bsz, c]);
    let rv = pooled.values();
    let wv = weight.values();
    let bv = bias.values();
    for b in 0..bsz {
        let row = &rv[b * h..(b + 1) * h];
        let out = &mut logits.values_mut()[b * c..(b + 1) * c];
        for (ci, o) in out.iter_mut().enumerate() {
            let wrow = &wv[ci * h..(ci + 1) * h];
            let mut acc = bv[ci];
            for (wi, xi) in wrow.iter().zip(row) {
                acc += wi * xi;
            }
            *o = acc;
        }
    }
    Ok(logits)
}

fn classifier_bwd(
    pooled: &Tensor,
    weight: &Tensor,
    dlogits: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (bsz, h) = (pooled.shape()[0], pooled.shape()[1]);
    let c = weight.shape()[0];
    let rv = pooled.values();
    let wv = weight.values();
    let gv = dlogits.values();
    let mut dpooled = Tensor::zeros(pooled.shape());
    let mut dweight = Tensor::zeros(weight.shape());
    let mut dbias = Tensor::zeros(&[c]);
    for b in 0..bsz {
        let grow = &gv[b * c..(b + 1) * c];
        let rrow = &rv[b * h..(b + 1) * h];
        let drow = &mut dpooled.values_mut()[b * h..(b + 1) * h];
        for (ci, &g) in grow.iter().enumerate() {
            let wrow = &wv[ci * h..(ci + 1) * h];
            for (di, wi) in drow.iter_mut().zip(wrow) {
                *di += g * wi;
            }
        }
        let _ = rrow;
    }
    for ci in 0..c {
        let wrow = &mut dweight.values_mut()[ci * h..(ci + 1) * h];
        let mut bias_acc = 0.0;
        for b in 0..bsz {
            let g = gv[b * c + ci];
            bias_acc += g;
            let rrow = &rv[b * h..(b + 1) * h];
            for (wi, xi) in wrow.iter_mut().zip(rrow) {
                *wi += g * xi;
            }
        }
        dbias.values_mut()[ci] = bias_acc;
    }
    Ok((dpooled, dweight, dbias))
}

/// Saved activations from [`Model::forward`] needed by the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    bsz: usize,
    linear_out: Tensor,
    norm_cache: SeqNormCache,
    dropout_mask: DropoutMask,
    dropped: Tensor,
    head: HeadCache,
    pooled: Tensor,
}

#[derive(Debug, Clone)]
enum HeadCache {
    Conv { conv1_out: Tensor, relu_out: Tensor },
    Attn { keys: Tensor, alpha: Tensor },
}

impl ForwardCache {
    /// Attention weights of the last forward pass (Attn head only).
    pub fn attention_weights(&self) -> Option<&Tensor> {
        match &self.head {
            HeadCache::Attn { alpha, .. } => Some(alpha),
            HeadCache::Conv { .. } => None,
        }
    }
}

/// Class decisions from logits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Predictions {
    /// Argmax class per sample; ties break to the lowest index.
    Single(Vec<u32>),
    /// Sigmoid >= 0.5 (logit >= 0) per class per sample.
    Multi(Vec<u8>),
}

pub fn predict(task: TaskKind, logits: &Tensor) -> Predictions {
    let (bsz, c) = (logits.shape()[0], logits.shape()[1]);
    match task {
        TaskKind::SingleLabel => {
            let mut out = Vec::with_capacity(bsz);
            for b in 0..bsz {
                let row = &logits.values()[b * c..(b + 1) * c];
                let mut best = 0usize;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                out.push(best as u32);
            }
            Predictions::Single(out)
        }
        TaskKind::MultiLabel => {
            let out = logits.values().iter().map(|&z| u8::from(z >= 0.0)).collect();
            Predictions::Multi(out)
        }
    }
}

/// Write a model as a JSON config header followed by the binary parameter
/// payload.
pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    write_model(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_model(model: &Model, w: &mut impl Write) -> Result<()> {
    let json = serde_json::to_vec(&model.config)
        .map_err(|e| Error::format(format!("config serialization failed: {e}")))?;
    w.write_all(MODEL_MAGIC)?;
    w.write_u32::<LittleEndian>(json.len() as u32)?;
    w.write_all(&json)?;
    crate::tensor::write_parameters(w, &model.params)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let mut r = BufReader::new(File::open(path.as_ref())?);
    read_model(&mut r)
}

pub fn read_model(r: &mut impl Read) -> Result<Model> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::format("model file too short"))?;
    if &magic != MODEL_MAGIC {
        return Err(Error::format(format!(
            "model magic mismatch: got {:?}",
            String::from_utf8_lossy(&magic)
        )));
    }
    let json_len = r.read_u32::<LittleEndian>()? as usize;
    let mut json = vec![0u8; json_len];
    r.read_exact(&mut json).map_err(|_| Error::format("truncated model header"))?;
    let config: ModelConfig = serde_json::from_slice(&json)
        .map_err(|e| Error::format(format!("bad model config header: {e}")))?;
    config.validate()?;
    let params = crate::tensor::read_parameters(r)?;

    // Rebuild through Model::new for the canonical parameter list, then
    // overwrite values from the file, validating names and shapes.
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut model = Model::new(config, &mut rng)?;
    if params.len() != model.params.len() {
        return Err(Error::format(format!(
            "checkpoint has {} parameters, model expects {}",
            params.len(),
            model.params.len()
        )));
    }
    for (slot, loaded) in model.params.iter_mut().zip(params) {
        if slot.name != loaded.name {
            return Err(Error::format(format!(
                "parameter order mismatch: expected '{}', found '{}'",
                slot.name, loaded.name
            )));
        }
        if slot.tensor.shape() != loaded.tensor.shape() {
            return Err(Error::format(format!(
                "parameter '{}' has shape {:?}, expected {:?}",
                slot.name,
                loaded.tensor.shape(),
                slot.tensor.shape()
            )));
        }
        slot.tensor = loaded.tensor;
        slot.tensor.alloc_grad();
    }
    Ok(model)
}
