//! Loss assembly and the two-objective self-adversarial training step.
//!
//! Phase 1 copies the classifier into a frozen discriminator and updates
//! classifier and decoder on `λ·(L_diag, L_rec, L_dics, L_syn)`. Phase 2
//! updates the classifier alone on the detached normals of phase 1.

mod checkpoint;
mod fit;

use bimg_tensor::{Adam, AdamConfig, Bound, ParameterStore, Scalar, Tape, Tensor, Var};

pub use checkpoint::{checkpoint_config, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use crate::seeds::derive_seed;
pub use fit::{fit, load_split, prepare_batch, resolve_tumor_set, validation_aucs, FitSummary, METRICS_HEADER};

use crate::asyc::{stack_sides, Asyc, EncoderFeatures};
use crate::asyd::{Decoder, DecoderTrace};
use crate::error::{Error, Result};
use crate::imgio::BilateralPair;
use crate::synthlab::SynthesisRecord;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub diag: f64,
    pub rec: f64,
    pub dics: f64,
    pub syn: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { diag: 1.0, rec: 0.1, dics: 1.0, syn: 0.5 }
    }
}

impl LossWeights {
    /// Classifier-only training: every decoder term switched off.
    pub fn classifier_only() -> Self {
        LossWeights { diag: 1.0, rec: 0.0, dics: 0.0, syn: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        for (k, v) in [("lambda_diag", self.diag), ("lambda_rec", self.rec), ("lambda_dics", self.dics), ("lambda_syn", self.syn)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("key `{k}`: must be a nonnegative number")));
            }
        }
        Ok(())
    }

    /// Whether any term needs the decoder.
    pub fn uses_decoder(&self) -> bool {
        self.rec > 0.0 || self.dics > 0.0 || self.syn > 0.0
    }
}

/// Labels of `B` pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labels {
    pub y_r: Vec<bool>,
    pub y_l: Vec<bool>,
    pub y_asy: Vec<bool>,
}

impl Labels {
    pub fn of<T>(pairs: &[&BilateralPair<T>]) -> Self {
        Labels {
            y_r: pairs.iter().map(|p| p.y_r).collect(),
            y_l: pairs.iter().map(|p| p.y_l).collect(),
            y_asy: pairs.iter().map(|p| p.y_asy).collect(),
        }
    }

    pub fn zeros(b: usize) -> Self {
        Labels { y_r: vec![false; b], y_l: vec![false; b], y_asy: vec![false; b] }
    }

    pub fn len(&self) -> usize {
        self.y_asy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_asy.is_empty()
    }

    pub fn swapped(&self) -> Self {
        Labels { y_r: self.y_l.clone(), y_l: self.y_r.clone(), y_asy: self.y_asy.clone() }
    }

    fn side_targets<T: Scalar>(&self) -> Vec<T> {
        self.y_r.iter().chain(&self.y_l).map(|&y| if y { T::one() } else { T::zero() }).collect()
    }

    fn pair_targets<T: Scalar>(&self) -> Vec<T> {
        self.y_asy.iter().map(|&y| if y { T::one() } else { T::zero() }).collect()
    }
}

/// One training sample: a real pair or a synthesized one with its
/// pre-insertion original.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub pair: BilateralPair<T>,
    pub real: Option<BilateralPair<T>>,
    /// `[right, left]`: sides carrying inserted tumors.
    pub synthesized: [bool; 2],
}

impl<T: Scalar> Sample<T> {
    pub fn real(pair: BilateralPair<T>) -> Self {
        Sample { pair, real: None, synthesized: [false; 2] }
    }

    pub fn synthetic(record: SynthesisRecord<T>) -> Self {
        let synthesized = [record.synthesized(crate::imgio::Laterality::Right), record.synthesized(crate::imgio::Laterality::Left)];
        Sample { pair: record.fake, real: Some(record.real), synthesized }
    }
}

/// Stacked tensors of one batch, sides `[rights; lefts]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub x: Tensor<T>,
    /// Pre-insertion images; equal to `x` on non-synthesized sides.
    pub real: Tensor<T>,
    /// `[2B]`, true where `L_syn` applies.
    pub syn_gate: Vec<bool>,
    pub labels: Labels,
}

impl<T: Scalar> Batch<T> {
    pub fn new(samples: &[Sample<T>]) -> Result<Self> {
        let pairs: Vec<&BilateralPair<T>> = samples.iter().map(|s| &s.pair).collect();
        let x = stack_sides(&pairs)?;
        let mut reals = Vec::with_capacity(samples.len());
        for s in samples {
            match (&s.real, s.synthesized.iter().any(|&v| v)) {
                (Some(r), _) => reals.push(r),
                (None, false) => reals.push(&s.pair),
                (None, true) => {
                    return Err(Error::Validation(format!("{}: synthesized sample lacks its real image", s.pair.pair_id)));
                }
            }
        }
        let real = stack_sides(&reals)?;
        if real.shape() != x.shape() {
            return Err(Error::Validation("real and synthesized images differ in size".into()));
        }
        let syn_gate = (0..2).flat_map(|side| samples.iter().map(move |s| s.synthesized[side])).collect();
        Ok(Batch { x, real, syn_gate, labels: Labels::of(&pairs) })
    }

    pub fn pairs(&self) -> usize {
        self.labels.len()
    }

    pub fn synthesized_sides(&self) -> usize {
        self.syn_gate.iter().filter(|&&g| g).count()
    }
}

/// `L_diag`: BCE of the asymmetry head plus the per-side BCE of the
/// abnormality head, each averaged over the batch.
pub fn loss_cls<T: Scalar>(tape: &mut Tape<T>, logit_ab: Var, logit_asy: Var, labels: &Labels) -> Result<Var> {
    let asy = tape.bce_with_logits(logit_asy, &labels.pair_targets())?;
    // Mean over 2B sides is half the sum of the two per-side means.
    let sides = tape.bce_with_logits(logit_ab, &labels.side_targets())?;
    let sides = tape.scale(sides, T::lit(2.0));
    Ok(tape.add(asy, sides)?)
}

fn pair_pixels(shape: &[usize]) -> Result<usize> {
    if shape.len() != 4 || shape[0] % 2 != 0 || shape[0] == 0 {
        return Err(Error::Validation(format!("expected side-stacked [2B, 1, H, W], got {shape:?}")));
    }
    Ok(shape[0] / 2 * shape[2] * shape[3])
}

/// `L_rec = |(1-M)x - (1-M)x_n|_1 + |Mx - x_ab|_1`, summed over both sides and
/// averaged over pairs and pixels. `cam` is a constant.
pub fn loss_rec<T: Scalar>(tape: &mut Tape<T>, x: &Tensor<T>, x_n: Var, x_ab: Var, cam: &Tensor<T>) -> Result<Var> {
    let shape = x.shape().to_vec();
    for s in [tape.shape(x_n), tape.shape(x_ab), cam.shape()] {
        if s != shape.as_slice() {
            return Err(bimg_tensor::TensorError::shape("loss_rec", &shape, s).into());
        }
    }
    let norm = pair_pixels(&shape)?;
    let inv_m = tape.constant(cam.map(|m| T::one() - m));
    let bg = tape.constant(cam.zip_map(x, |m, v| (T::one() - m) * v)?);
    let fg = tape.constant(cam.zip_map(x, |m, v| m * v)?);
    let bg_n = tape.mul(inv_m, x_n)?;
    let d1 = tape.sub(bg, bg_n)?;
    let d1 = tape.abs(d1);
    let d2 = tape.sub(fg, x_ab)?;
    let d2 = tape.abs(d2);
    let s = tape.add(d1, d2)?;
    let s = tape.sum_all(s);
    Ok(tape.scale(s, T::one() / T::from_usize_lossy(norm)))
}

/// Frozen copy of the classifier parameters. Storage is shared until the
/// optimizer writes to the original, which then detaches its own copy.
pub fn copy_discriminator<T: Scalar>(asyc: &ParameterStore<T>) -> ParameterStore<T> {
    asyc.clone()
}

/// `L_dics`: the frozen discriminator scores the generated normals against
/// all-zero targets. Gradients reach only `x_n`.
pub fn loss_dics<T: Scalar>(tape: &mut Tape<T>, asyc: &Asyc, disc: &ParameterStore<T>, x_n: Var) -> Result<Var> {
    let mut pd = Bound::frozen(disc);
    let tr = asyc.forward_tape(tape, &mut pd, x_n)?;
    loss_cls(tape, tr.logit_ab, tr.logit_asy, &Labels::zeros(tr.pairs))
}

/// `L_syn = sum_i gate_i |x_n,i - real_i|_1`, averaged over pairs and pixels.
pub fn loss_syn<T: Scalar>(tape: &mut Tape<T>, x_n: Var, real: &Tensor<T>, gate: &[bool]) -> Result<Var> {
    let shape = real.shape().to_vec();
    if tape.shape(x_n) != shape.as_slice() || gate.len() != shape[0] {
        return Err(bimg_tensor::TensorError::shape("loss_syn", &shape, tape.shape(x_n)).into());
    }
    let norm = pair_pixels(&shape)?;
    let per = real.numel() / shape[0];
    let g: Vec<T> = gate.iter().flat_map(|&on| std::iter::repeat(if on { T::one() } else { T::zero() }).take(per)).collect();
    let g = tape.constant(Tensor::from_vec(&shape, g)?);
    let r = tape.constant(real.clone());
    let d = tape.sub(x_n, r)?;
    let d = tape.mul(d, g)?;
    let d = tape.abs(d);
    let s = tape.sum_all(d);
    Ok(tape.scale(s, T::one() / T::from_usize_lossy(norm)))
}

/// `L_refine`: classifier loss with the original labels on detached
/// generated normals `[2B, 1, H, W]`.
pub fn loss_refine<T: Scalar>(tape: &mut Tape<T>, asyc: &Asyc, p: &mut Bound<'_, T>, x_n: &Tensor<T>, labels: &Labels) -> Result<Var> {
    let x = tape.constant(x_n.clone());
    let tr = asyc.forward_tape(tape, p, x)?;
    loss_cls(tape, tr.logit_ab, tr.logit_asy, labels)
}

/// Classifier and decoder definitions shared by every step.
#[derive(Debug, Clone)]
pub struct Models {
    pub asyc: Asyc,
    pub decoder: Decoder,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOptions {
    pub weights: LossWeights,
    pub lr: f64,
    pub refine: bool,
    pub detach_decoder_input: bool,
}

impl Default for StepOptions {
    fn default() -> Self {
        StepOptions { weights: LossWeights::default(), lr: 1e-4, refine: true, detach_decoder_input: true }
    }
}

/// The phase-1 graph of one batch.
pub struct Phase1<T> {
    pub tape: Tape<T>,
    pub total: Var,
    pub diag: Var,
    pub rec: Option<Var>,
    pub dics: Option<Var>,
    pub syn: Option<Var>,
    pub decoded: Option<DecoderTrace>,
    /// CAMs `[2B, 1, H, W]` used as the reconstruction prior.
    pub cam: Tensor<T>,
}

impl<T: Scalar> Phase1<T> {
    pub fn value(&self, v: Option<Var>) -> T {
        v.map(|v| self.tape.value(v).item()).unwrap_or_else(T::zero)
    }
}

fn detach_features<T: Scalar>(tape: &mut Tape<T>, f: &EncoderFeatures) -> EncoderFeatures {
    EncoderFeatures { stem: tape.detach(f.stem), stages: f.stages.map(|s| tape.detach(s)) }
}

/// Builds the weighted phase-1 loss. `cam` overrides the CAM prior, which
/// is otherwise read off this pass; components with zero weight are
/// skipped.
#[allow(clippy::too_many_arguments)]
pub fn phase1<T: Scalar>(
    models: &Models,
    pa: &mut Bound<'_, T>,
    pg: &mut Bound<'_, T>,
    disc: &ParameterStore<T>,
    batch: &Batch<T>,
    opts: &StepOptions,
    cam: Option<&Tensor<T>>,
) -> Result<Phase1<T>> {
    let w = opts.weights;
    let mut tape = Tape::new();
    let x = tape.constant(batch.x.clone());
    let tr = models.asyc.forward_tape(&mut tape, pa, x)?;
    let diag = loss_cls(&mut tape, tr.logit_ab, tr.logit_asy, &batch.labels)?;
    let cam = match cam {
        Some(c) => c.clone(),
        None => models.asyc.cams(pa.store(), tape.value(tr.f_out))?,
    };
    let mut total = tape.scale(diag, T::lit(w.diag));
    let (mut rec, mut dics, mut syn, mut decoded) = (None, None, None, None);
    if w.uses_decoder() {
        let (features, f_out) = if opts.detach_decoder_input {
            (detach_features(&mut tape, &tr.features), tape.detach(tr.f_out))
        } else {
            (tr.features, tr.f_out)
        };
        let d = models.decoder.forward(&mut tape, pg, x, &features, f_out)?;
        let mut add = |tape: &mut Tape<T>, v: Var, lambda: f64| -> Result<Var> {
            let s = tape.scale(v, T::lit(lambda));
            total = tape.add(total, s)?;
            Ok(v)
        };
        if w.rec > 0.0 {
            let v = loss_rec(&mut tape, &batch.x, d.x_n, d.x_ab, &cam)?;
            rec = Some(add(&mut tape, v, w.rec)?);
        }
        if w.dics > 0.0 {
            let v = loss_dics(&mut tape, &models.asyc, disc, d.x_n)?;
            dics = Some(add(&mut tape, v, w.dics)?);
        }
        if w.syn > 0.0 {
            let v = loss_syn(&mut tape, d.x_n, &batch.real, &batch.syn_gate)?;
            syn = Some(add(&mut tape, v, w.syn)?);
        }
        decoded = Some(d);
    }
    Ok(Phase1 { tape, total, diag, rec, dics, syn, decoded, cam })
}

/// Parameters, optimizer moments and counters of a run.
#[derive(Debug, Clone)]
pub struct TrainState<T> {
    pub asyc: ParameterStore<T>,
    pub decoder: ParameterStore<T>,
    /// Discriminator copy made by the latest step.
    pub disc: ParameterStore<T>,
    pub opt_asyc: Adam<T>,
    pub opt_decoder: Adam<T>,
    pub step: u64,
    /// Index of the epoch in progress.
    pub epoch: u64,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(asyc: ParameterStore<T>, decoder: ParameterStore<T>) -> Self {
        TrainState {
            disc: asyc.clone(),
            asyc,
            decoder,
            opt_asyc: Adam::new(AdamConfig::default()),
            opt_decoder: Adam::new(AdamConfig::default()),
            step: 0,
            epoch: 0,
        }
    }

    pub fn init<R: rand::Rng + ?Sized>(models: &Models, rng: &mut R) -> Result<Self> {
        let asyc = models.asyc.init(rng)?;
        let decoder = models.decoder.init(rng);
        Ok(Self::new(asyc, decoder))
    }
}

/// Loss components of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub total: f64,
    pub diag: f64,
    pub rec: f64,
    pub dics: f64,
    pub syn: f64,
    pub refine: Option<f64>,
}

impl StepRecord {
    pub fn weighted_sum(&self, w: &LossWeights) -> f64 {
        w.diag * self.diag + w.rec * self.rec + w.dics * self.dics + w.syn * self.syn
    }
}

fn finite<T: Scalar>(v: T, component: &str, step: u64) -> Result<f64> {
    let v = v.as_f64();
    if !v.is_finite() {
        return Err(Error::NonFinite { component: component.into(), step });
    }
    Ok(v)
}

/// One two-phase update.
pub fn train_step<T: Scalar>(models: &Models, state: &mut TrainState<T>, batch: &Batch<T>, opts: &StepOptions) -> Result<StepRecord> {
    let step = state.step;
    state.disc = copy_discriminator(&state.asyc);
    let (record, ga, gg, normals) = {
        let mut pa = Bound::trainable(&state.asyc);
        let mut pg = Bound::trainable(&state.decoder);
        let ph = phase1(models, &mut pa, &mut pg, &state.disc, batch, opts, None)?;
        let record = StepRecord {
            step,
            epoch: state.epoch,
            lr: opts.lr,
            total: finite(ph.tape.value(ph.total).item(), "total", step)?,
            diag: finite(ph.value(Some(ph.diag)), "L_diag", step)?,
            rec: finite(ph.value(ph.rec), "L_rec", step)?,
            dics: finite(ph.value(ph.dics), "L_dics", step)?,
            syn: finite(ph.value(ph.syn), "L_syn", step)?,
            refine: None,
        };
        let grads = ph.tape.backward(ph.total)?;
        let (ga, gg) = (pa.grads(&grads), pg.grads(&grads));
        if !ga.all_finite() || !gg.all_finite() {
            return Err(Error::NonFinite { component: "phase-1 gradient".into(), step });
        }
        let normals = ph.decoded.map(|d| ph.tape.value(d.x_n).clone());
        (record, ga, gg, normals)
    };
    state.opt_asyc.update(&mut state.asyc, &ga, opts.lr);
    state.opt_decoder.update(&mut state.decoder, &gg, opts.lr);
    let mut record = record;
    if let (true, Some(x_n)) = (opts.refine, normals) {
        let mut tape = Tape::new();
        let ga = {
            let mut pa = Bound::trainable(&state.asyc);
            let l = loss_refine(&mut tape, &models.asyc, &mut pa, &x_n, &batch.labels)?;
            record.refine = Some(finite(tape.value(l).item(), "L_refine", step)?);
            let grads = tape.backward(l)?;
            pa.grads(&grads)
        };
        if !ga.all_finite() {
            return Err(Error::NonFinite { component: "phase-2 gradient".into(), step });
        }
        state.opt_asyc.update(&mut state.asyc, &ga, opts.lr);
    }
    state.step += 1;
    Ok(record)
}
