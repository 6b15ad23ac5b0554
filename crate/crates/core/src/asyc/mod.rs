//! Cross-attention bilateral classifier: shared encoder, stacked parallel
//! self/cross-attention blocks, per-side abnormality head, absolute
//! difference asymmetry head, and online class activation maps.

mod block;
mod encoder;

use bimg_tensor::nn::Linear;
use bimg_tensor::ops::sigmoid;
use bimg_tensor::params::normal_tensor;
use bimg_tensor::{Bound, ParameterStore, Scalar, Tape, Tensor, Var};
use rand::Rng;

pub use block::{swap_halves, AsyBlock};
pub use encoder::{Encoder, EncoderConfig, EncoderFeatures};

use crate::error::{Error, Result};
use crate::grid::Plane;
use crate::imgio::resample::upsample_bilinear_centered;
use crate::imgio::BilateralPair;

pub const POS_EMBEDDING: &str = "asyt.pos";
pub const HEAD_ABNORMAL: &str = "head.ab";
pub const HEAD_ASYMMETRY: &str = "head.asy";

#[derive(Debug, Clone, PartialEq)]
pub struct AsycConfig {
    pub image_h: usize,
    pub image_w: usize,
    pub encoder: EncoderConfig,
    /// Zero disables the transformer (and its positional embedding).
    pub num_blocks: usize,
    pub num_heads: usize,
    pub ffn_hidden: usize,
    /// Ablation switch: off replaces the cross-attention branch by zeros.
    pub cross_attention: bool,
}

impl Default for AsycConfig {
    fn default() -> Self {
        AsycConfig {
            image_h: 1024,
            image_w: 512,
            encoder: EncoderConfig::default(),
            num_blocks: 12,
            num_heads: 8,
            ffn_hidden: 512,
            cross_attention: true,
        }
    }
}

impl AsycConfig {
    /// 16x8 images, 8-wide embeddings, two heads, one block.
    pub fn tiny() -> Self {
        AsycConfig {
            image_h: 16,
            image_w: 8,
            encoder: EncoderConfig {
                stem_width: 4,
                stem_kernel: 3,
                stem_stride: 1,
                stem_pool: false,
                widths: [4, 4, 8, 8],
                blocks: [1, 1, 1, 1],
                strides: [1, 2, 2, 2],
                max_groups: 2,
            },
            num_blocks: 1,
            num_heads: 2,
            ffn_hidden: 16,
            cross_attention: true,
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.encoder.out_channels()
    }

    pub fn grid(&self) -> Result<(usize, usize)> {
        self.encoder.grid(self.image_h, self.image_w)
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.grid()?;
        if self.num_blocks > 0 && (self.num_heads == 0 || self.embed_dim() % self.num_heads != 0) {
            return Err(Error::Config(format!(
                "embedding width {} is not divisible by {} heads",
                self.embed_dim(),
                self.num_heads
            )));
        }
        if self.num_blocks > 0 && self.ffn_hidden == 0 {
            return Err(Error::Config("ffn_hidden must be positive".into()));
        }
        Ok(())
    }
}

/// Tape handles of one forward pass over `B` pairs stacked `[rights; lefts]`.
#[derive(Debug, Clone, Copy)]
pub struct AsycTrace {
    pub pairs: usize,
    pub features: EncoderFeatures,
    /// `[2B, C, h, w]`.
    pub f_out: Var,
    /// `[2B]`: rights then lefts.
    pub logit_ab: Var,
    /// `[B]`.
    pub logit_asy: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsycOutput<T> {
    pub p_r: T,
    pub p_l: T,
    pub p_asy: T,
    pub logit_r: T,
    pub logit_l: T,
    pub logit_asy: T,
    pub cam_r: Plane<T>,
    pub cam_l: Plane<T>,
    /// `[C, h, w]`.
    pub f_out_r: Tensor<T>,
    pub f_out_l: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct Asyc {
    pub config: AsycConfig,
    pub encoder: Encoder,
    pub blocks: Vec<AsyBlock>,
    head_ab: Linear,
    head_asy: Linear,
}

/// `[2B, 1, H, W]` with rights first.
pub fn stack_sides<T: Scalar>(pairs: &[&BilateralPair<T>]) -> Result<Tensor<T>> {
    let Some(first) = pairs.first() else {
        return Err(Error::Validation("empty batch".into()));
    };
    let (h, w) = first.dims();
    let mut data = Vec::with_capacity(2 * pairs.len() * h * w);
    for side in 0..2 {
        for p in pairs {
            if p.dims() != (h, w) {
                return Err(Error::Validation(format!("{}: image size differs within the batch", p.pair_id)));
            }
            let img = if side == 0 { &p.right } else { &p.left };
            data.extend_from_slice(img.pixels.data());
        }
    }
    Ok(Tensor::from_vec(&[2 * pairs.len(), 1, h, w], data)?)
}

/// Per-image min-max normalised `ReLU(sum_c w_c f_c)` upsampled to
/// `target`; constant maps become all zeros.
pub fn compute_cam<T: Scalar>(f_out: &Tensor<T>, weights: &[T], target: (usize, usize)) -> Result<Plane<T>> {
    let s = f_out.shape();
    if s.len() != 3 || s[0] != weights.len() {
        return Err(Error::Validation(format!("CAM needs [C, h, w] features and C weights, got {s:?}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let d = f_out.data();
    let grid = Plane::from_fn(h, w, |r, q| {
        let mut acc = T::zero();
        for (k, &wk) in weights.iter().enumerate().take(c) {
            acc += wk * d[(k * h + r) * w + q];
        }
        acc.max(T::zero())
    });
    let up = upsample_bilinear_centered(&grid, target.0, target.1);
    Ok(up.min_max_normalized().unwrap_or_else(|| Plane::zeros(target.0, target.1)))
}

impl Asyc {
    pub fn new(config: AsycConfig) -> Result<Self> {
        config.validate()?;
        let c = config.embed_dim();
        let blocks = (0..config.num_blocks)
            .map(|i| AsyBlock::new(&format!("asyt.b{i}"), c, config.num_heads, config.ffn_hidden))
            .collect::<Result<Vec<_>>>()?;
        Ok(Asyc {
            encoder: Encoder::new(config.encoder.clone())?,
            blocks,
            head_ab: Linear::new(HEAD_ABNORMAL, c, 1),
            head_asy: Linear::new(HEAD_ASYMMETRY, c, 1),
            config,
        })
    }

    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParameterStore<T>> {
        let mut store = ParameterStore::new();
        self.encoder.init(&mut store, rng);
        if !self.blocks.is_empty() {
            let (h, w) = self.config.grid()?;
            store.insert(POS_EMBEDDING, normal_tensor(rng, &[h * w, self.config.embed_dim()], 0.02));
        }
        for b in &self.blocks {
            b.init(&mut store, rng);
        }
        self.head_ab.init(&mut store, rng);
        self.head_asy.init(&mut store, rng);
        Ok(store)
    }

    /// Runs the stacked blocks on `f: [2B, C, h, w]`.
    pub fn transform<T: Scalar>(&self, tape: &mut Tape<T>, p: &mut Bound<'_, T>, f: Var) -> Result<Var> {
        if self.blocks.is_empty() {
            return Ok(f);
        }
        let s = tape.shape(f).to_vec();
        let (h, w) = (s[2], s[3]);
        let tokens = tape.to_tokens(f)?;
        let pos = p.var(tape, POS_EMBEDDING)?;
        let mut t = tape.add_broadcast0(tokens, pos)?;
        for b in &self.blocks {
            t = b.forward(tape, p, t, self.config.cross_attention)?;
        }
        Ok(tape.from_tokens(t, h, w)?)
    }

    /// Self- and cross-attention weights of every block for input `x`.
    pub fn attention_maps<T: Scalar>(&self, store: &ParameterStore<T>, x: &Tensor<T>) -> Result<Vec<(Tensor<T>, Tensor<T>)>> {
        let mut tape = Tape::new();
        let mut p = Bound::frozen(store);
        let xv = tape.constant(x.clone());
        let f = self.encoder.forward(&mut tape, &mut p, xv)?.last();
        let tokens = tape.to_tokens(f)?;
        let pos = p.var(&mut tape, POS_EMBEDDING)?;
        let mut t = tape.add_broadcast0(tokens, pos)?;
        let mut maps = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            maps.push(b.attention_weights(store, tape.value(t))?);
            t = b.forward(&mut tape, &mut p, t, self.config.cross_attention)?;
        }
        Ok(maps)
    }

    /// Abnormality logits `[N]` of feature maps `[N, C, h, w]`.
    pub fn abnormal_logits<T: Scalar>(&self, tape: &mut Tape<T>, p: &mut Bound<'_, T>, f_out: Var) -> Result<Var> {
        let g = tape.global_avg_pool(f_out)?;
        let z = self.head_ab.forward(tape, p, g)?;
        let n = tape.shape(z)[0];
        Ok(tape.reshape(z, &[n])?)
    }

    /// Asymmetry logits `[B]` from `|f_r - f_l|` of the full maps.
    pub fn asymmetry_logits<T: Scalar>(&self, tape: &mut Tape<T>, p: &mut Bound<'_, T>, f_r: Var, f_l: Var) -> Result<Var> {
        let d = tape.sub(f_r, f_l)?;
        let d = tape.abs(d);
        let g = tape.global_avg_pool(d)?;
        let z = self.head_asy.forward(tape, p, g)?;
        let n = tape.shape(z)[0];
        Ok(tape.reshape(z, &[n])?)
    }

    /// `x: [2B, 1, H, W]` stacked `[rights; lefts]`.
    pub fn forward_tape<T: Scalar>(&self, tape: &mut Tape<T>, p: &mut Bound<'_, T>, x: Var) -> Result<AsycTrace> {
        let s = tape.shape(x).to_vec();
        if s.len() != 4 || s[0] % 2 != 0 || s[1] != 1 || s[2] != self.config.image_h || s[3] != self.config.image_w {
            return Err(Error::Validation(format!(
                "expected [2B, 1, {}, {}] input, got {s:?}",
                self.config.image_h, self.config.image_w
            )));
        }
        let b = s[0] / 2;
        let features = self.encoder.forward(tape, p, x)?;
        let f_out = self.transform(tape, p, features.last())?;
        let logit_ab = self.abnormal_logits(tape, p, f_out)?;
        let f_r = tape.slice(f_out, 0, 0, b)?;
        let f_l = tape.slice(f_out, 0, b, b)?;
        let logit_asy = self.asymmetry_logits(tape, p, f_r, f_l)?;
        Ok(AsycTrace { pairs: b, features, f_out, logit_ab, logit_asy })
    }

    /// Abnormality-head weights, the CAM channel weights.
    pub fn cam_weights<T: Scalar>(&self, store: &ParameterStore<T>) -> Result<Vec<T>> {
        Ok(store.require(&self.head_ab.weight_name())?.data().to_vec())
    }

    /// CAMs `[2B, 1, H, W]` of a traced pass, detached from the tape.
    pub fn cams<T: Scalar>(&self, store: &ParameterStore<T>, f_out: &Tensor<T>) -> Result<Tensor<T>> {
        let w = self.cam_weights(store)?;
        let (n, c, h, wd) = f_out.dims4()?;
        let (hh, ww) = (self.config.image_h, self.config.image_w);
        let mut data = Vec::with_capacity(n * hh * ww);
        for i in 0..n {
            let fi = Tensor::from_vec(&[c, h, wd], f_out.data()[i * c * h * wd..(i + 1) * c * h * wd].to_vec())?;
            data.extend(compute_cam(&fi, &w, (hh, ww))?.into_vec());
        }
        Ok(Tensor::from_vec(&[n, 1, hh, ww], data)?)
    }

    /// Inference over a batch of stacked sides; parameters are frozen.
    pub fn infer<T: Scalar>(&self, store: &ParameterStore<T>, x: &Tensor<T>) -> Result<Vec<AsycOutput<T>>> {
        let mut tape = Tape::new();
        let mut p = Bound::frozen(store);
        let xv = tape.constant(x.clone());
        let tr = self.forward_tape(&mut tape, &mut p, xv)?;
        Ok(self.outputs(store, &tape, &tr)?)
    }

    /// Per-pair outputs read off a traced pass.
    pub fn outputs<T: Scalar>(&self, store: &ParameterStore<T>, tape: &Tape<T>, tr: &AsycTrace) -> Result<Vec<AsycOutput<T>>> {
        let b = tr.pairs;
        let f_out = tape.value(tr.f_out);
        let cams = self.cams(store, f_out)?;
        let (_, c, h, w) = f_out.dims4()?;
        let plane = (self.config.image_h, self.config.image_w);
        let cam = |i: usize| {
            let n = plane.0 * plane.1;
            Plane::new(plane.0, plane.1, cams.data()[i * n..(i + 1) * n].to_vec())
        };
        let feat = |i: usize| Tensor::from_vec(&[c, h, w], f_out.data()[i * c * h * w..(i + 1) * c * h * w].to_vec());
        let za = tape.value(tr.logit_ab).data();
        let zs = tape.value(tr.logit_asy).data();
        (0..b)
            .map(|i| {
                Ok(AsycOutput {
                    p_r: sigmoid(za[i]),
                    p_l: sigmoid(za[b + i]),
                    p_asy: sigmoid(zs[i]),
                    logit_r: za[i],
                    logit_l: za[b + i],
                    logit_asy: zs[i],
                    cam_r: cam(i)?,
                    cam_l: cam(b + i)?,
                    f_out_r: feat(i)?,
                    f_out_l: feat(b + i)?,
                })
            })
            .collect()
    }

    pub fn forward<T: Scalar>(&self, store: &ParameterStore<T>, pair: &BilateralPair<T>) -> Result<AsycOutput<T>> {
        let x = stack_sides(&[pair])?;
        Ok(self.infer(store, &x)?.remove(0))
    }
}

#[cfg(test)]
mod tests;
