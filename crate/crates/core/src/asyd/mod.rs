//! Two-channel disentanglement decoder shared by both sides: maps the
//! transformer output plus the encoder intermediates to a normal image
//! `x_n` and an abnormality image `x_ab`.

use bimg_tensor::nn::{Conv2d, GroupNorm};
use bimg_tensor::{Bound, ParameterStore, Scalar, Tape, Tensor, TensorError, Var};
use rand::Rng;

use crate::asyc::{stack_sides, Asyc, AsycOutput, EncoderConfig, EncoderFeatures};
use crate::error::{Error, Result};
use crate::grid::Plane;
use crate::imgio::{BilateralPair, GrayImage, Laterality};

pub const OUTPUT_CONV: &str = "dec.out";
/// Initial bias of the abnormality channel, `sigmoid(-4) ~ 0.018`.
pub const ABNORMAL_BIAS_INIT: f64 = -4.0;
const LOGIT_CLAMP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderConfig {
    /// Output widths of the six fusion blocks: deepest (`f_out` with the
    /// last stage), stages 3, 2, 1, the stem, and the input image.
    pub widths: [usize; 6],
    pub max_groups: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig { widths: [256, 128, 64, 64, 32, 16], max_groups: 32 }
    }
}

impl DecoderConfig {
    pub fn tiny() -> Self {
        DecoderConfig { widths: [8, 8, 4, 4, 4, 4], max_groups: 2 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_groups == 0 || self.widths.contains(&0) {
            return Err(Error::Config("decoder widths and groups must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct FuseBlock {
    conv: Conv2d,
    gn: GroupNorm,
}

impl FuseBlock {
    fn new(i: usize, in_ch: usize, out_ch: usize, groups: usize) -> Self {
        FuseBlock {
            conv: Conv2d::new(format!("dec.b{i}.conv"), in_ch, out_ch, 3, 1, 1).without_bias(),
            gn: GroupNorm::new(format!("dec.b{i}.gn"), out_ch, groups),
        }
    }

    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &mut Bound<'_, T>, x: Var) -> Result<Var> {
        let h = self.conv.forward(tape, p, x)?;
        let h = self.gn.forward(tape, p, h)?;
        Ok(tape.relu(h))
    }
}

/// Decoder outputs `[2B, 1, H, W]` on the tape.
#[derive(Debug, Clone, Copy)]
pub struct DecoderTrace {
    pub x_n: Var,
    pub x_ab: Var,
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub config: DecoderConfig,
    blocks: Vec<FuseBlock>,
    out: Conv2d,
}

/// Upsamples `x` to the spatial size of `skip` and concatenates channels.
fn fuse_skip<T: Scalar>(tape: &mut Tape<T>, x: Var, skip: Var) -> Result<Var> {
    let (n, _, h, w) = tape.value(x).dims4()?;
    let (sn, _, sh, sw) = tape.value(skip).dims4()?;
    if n != sn || sh % h != 0 || sw % w != 0 {
        return Err(TensorError::shape("decoder skip", &[n, 0, h, w], &[sn, 0, sh, sw]).into());
    }
    let up = tape.upsample_nearest(x, sh / h, sw / w)?;
    Ok(tape.concat(&[up, skip], 1)?)
}

impl Decoder {
    pub fn new(config: DecoderConfig, encoder: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        let w = config.widths;
        let e = encoder.widths;
        let inputs = [2 * e[3], w[0] + e[2], w[1] + e[1], w[2] + e[0], w[3] + encoder.stem_width, w[4] + 1];
        let g = config.max_groups;
        let blocks = (0..6).map(|i| FuseBlock::new(i, inputs[i], w[i], g)).collect();
        let out = Conv2d::new(OUTPUT_CONV, w[5], 2, 3, 1, 1);
        Ok(Decoder { config, blocks, out })
    }

    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, rng: &mut R) -> ParameterStore<T> {
        let mut store = ParameterStore::new();
        for b in &self.blocks {
            b.conv.init(&mut store, rng);
            b.gn.init(&mut store);
        }
        self.out.init(&mut store, rng);
        let bias = store.make_mut(&format!("{OUTPUT_CONV}.b")).expect("output bias initialised");
        bias.data_mut()[0] = T::zero();
        bias.data_mut()[1] = T::lit(ABNORMAL_BIAS_INIT);
        store
    }

    /// `x: [2B, 1, H, W]` is the classifier input, `f_out` the transformer
    /// output of the same pass.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &mut Bound<'_, T>,
        x: Var,
        features: &EncoderFeatures,
        f_out: Var,
    ) -> Result<DecoderTrace> {
        let s4 = features.stages[3];
        if tape.shape(f_out) != tape.shape(s4) {
            return Err(TensorError::shape("decoder input", tape.shape(s4), tape.shape(f_out)).into());
        }
        let h = tape.concat(&[f_out, s4], 1)?;
        let mut h = self.blocks[0].forward(tape, p, h)?;
        let skips = [features.stages[2], features.stages[1], features.stages[0], features.stem, x];
        for (block, skip) in self.blocks[1..].iter().zip(skips) {
            let fused = fuse_skip(tape, h, skip)?;
            h = block.forward(tape, p, fused)?;
        }
        let y = self.out.forward(tape, p, h)?;
        let n = tape.shape(y)[0];
        let normal = tape.slice(y, 1, 0, 1)?;
        let abnormal = tape.slice(y, 1, 1, 1)?;
        // The normal channel predicts a correction to the input's logit.
        let eps = T::lit(LOGIT_CLAMP);
        let base = tape.value(x).map(|v| {
            let v = v.max(eps).min(T::one() - eps);
            (v / (T::one() - v)).ln()
        });
        debug_assert_eq!(base.shape()[0], n);
        let base = tape.constant(base);
        let z = tape.add(normal, base)?;
        Ok(DecoderTrace { x_n: tape.sigmoid(z), x_ab: tape.sigmoid(abnormal) })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisentangledPair<T> {
    pub x_n: GrayImage<T>,
    pub x_ab: Plane<T>,
    pub side: Laterality,
}

/// Everything one joint pass yields for a pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Disentangled<T> {
    pub right: DisentangledPair<T>,
    pub left: DisentangledPair<T>,
    pub asyc: AsycOutput<T>,
}

impl<T> Disentangled<T> {
    pub fn side(&self, side: Laterality) -> &DisentangledPair<T> {
        match side {
            Laterality::Right => &self.right,
            Laterality::Left => &self.left,
        }
    }
}

/// Runs classifier and decoder jointly over a batch with frozen parameters.
pub fn disentangle_batch<T: Scalar>(
    asyc: &Asyc,
    asyc_store: &ParameterStore<T>,
    decoder: &Decoder,
    decoder_store: &ParameterStore<T>,
    pairs: &[&BilateralPair<T>],
) -> Result<Vec<Disentangled<T>>> {
    let x = stack_sides(pairs)?;
    let mut tape = Tape::new();
    let mut pa = Bound::frozen(asyc_store);
    let mut pg = Bound::frozen(decoder_store);
    let xv = tape.constant(x);
    let tr = asyc.forward_tape(&mut tape, &mut pa, xv)?;
    let dec = decoder.forward(&mut tape, &mut pg, xv, &tr.features, tr.f_out)?;
    let outputs = asyc.outputs(asyc_store, &tape, &tr)?;
    let b = pairs.len();
    let plane = |v: Var, i: usize| -> Result<Plane<T>> {
        let t: &Tensor<T> = tape.value(v);
        let (_, _, h, w) = t.dims4()?;
        Plane::new(h, w, t.data()[i * h * w..(i + 1) * h * w].to_vec())
    };
    let mut out = Vec::with_capacity(b);
    for (i, asyc) in outputs.into_iter().enumerate() {
        let mut sides = Vec::with_capacity(2);
        for (k, lat) in [(i, Laterality::Right), (b + i, Laterality::Left)] {
            let view = pairs[i].side(lat).view;
            sides.push(DisentangledPair { x_n: GrayImage::new(plane(dec.x_n, k)?, lat, view)?, x_ab: plane(dec.x_ab, k)?, side: lat });
        }
        let left = sides.pop().expect("two sides");
        let right = sides.pop().expect("two sides");
        out.push(Disentangled { right, left, asyc });
    }
    Ok(out)
}

pub fn disentangle_pair<T: Scalar>(
    asyc: &Asyc,
    asyc_store: &ParameterStore<T>,
    decoder: &Decoder,
    decoder_store: &ParameterStore<T>,
    pair: &BilateralPair<T>,
) -> Result<Disentangled<T>> {
    Ok(disentangle_batch(asyc, asyc_store, decoder, decoder_store, &[pair])?.remove(0))
}
