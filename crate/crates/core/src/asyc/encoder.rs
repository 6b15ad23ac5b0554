//! Residual convolutional encoder shared by both sides.

use bimg_tensor::nn::{Conv2d, GroupNorm};
use bimg_tensor::{Bound, ParameterStore, Scalar, Tape, Var};
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub stem_width: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub stem_pool: bool,
    pub widths: [usize; 4],
    pub blocks: [usize; 4],
    pub strides: [usize; 4],
    /// Upper bound on GroupNorm groups per layer.
    pub max_groups: usize,
}

impl Default for EncoderConfig {
    /// The 18-layer layout: 7x7/2 stem, 3x3/2 max-pool, four stages of two
    /// basic blocks.
    fn default() -> Self {
        EncoderConfig {
            stem_width: 64,
            stem_kernel: 7,
            stem_stride: 2,
            stem_pool: true,
            widths: [64, 128, 256, 512],
            blocks: [2, 2, 2, 2],
            strides: [1, 2, 2, 2],
            max_groups: 32,
        }
    }
}

impl EncoderConfig {
    pub fn stem_stride_total(&self) -> usize {
        self.stem_stride * if self.stem_pool { 2 } else { 1 }
    }

    /// Downsampling factor of the final stage.
    pub fn total_stride(&self) -> usize {
        self.stem_stride_total() * self.strides.iter().product::<usize>()
    }

    pub fn out_channels(&self) -> usize {
        self.widths[3]
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.stem_width, self.stem_kernel, self.stem_stride, self.max_groups];
        if all.iter().chain(&self.widths).chain(&self.blocks).chain(&self.strides).any(|&v| v == 0) {
            return Err(Error::Config("encoder dimensions, blocks and strides must be positive".into()));
        }
        if self.stem_kernel % 2 == 0 {
            return Err(Error::Config("stem kernel must be odd".into()));
        }
        Ok(())
    }

    /// Feature-grid size for an `h x w` input, or an error if the strides
    /// do not divide it.
    pub fn grid(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let s = self.total_stride();
        if h % s != 0 || w % s != 0 {
            return Err(Error::Config(format!("image {h}x{w} is not divisible by the encoder stride {s}")));
        }
        Ok((h / s, w / s))
    }
}

#[derive(Debug, Clone)]
struct BasicBlock {
    conv1: Conv2d,
    gn1: GroupNorm,
    conv2: Conv2d,
    gn2: GroupNorm,
    shortcut: Option<(Conv2d, GroupNorm)>,
}

impl BasicBlock {
    fn new(name: &str, in_ch: usize, out_ch: usize, stride: usize, groups: usize) -> Self {
        let shortcut = (stride != 1 || in_ch != out_ch).then(|| {
            (
                Conv2d::new(format!("{name}.down"), in_ch, out_ch, 1, stride, 0).without_bias(),
                GroupNorm::new(format!("{name}.down_gn"), out_ch, groups),
            )
        });
        BasicBlock {
            conv1: Conv2d::new(format!("{name}.conv1"), in_ch, out_ch, 3, stride, 1).without_bias(),
            gn1: GroupNorm::new(format!("{name}.gn1"), out_ch, groups),
            conv2: Conv2d::new(format!("{name}.conv2"), out_ch, out_ch, 3, 1, 1).without_bias(),
            gn2: GroupNorm::new(format!("{name}.gn2"), out_ch, groups),
            shortcut,
        }
    }

    fn init<T: Scalar, R: Rng + ?Sized>(&self, store: &mut ParameterStore<T>, rng: &mut R) {
        self.conv1.init(store, rng);
        self.gn1.init(store);
        self.conv2.init(store, rng);
        self.gn2.init(store);
        if let Some((c, g)) = &self.shortcut {
            c.init(store, rng);
            g.init(store);
        }
    }

    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &mut Bound<'_, T>, x: Var) -> Result<Var> {
        let h = self.conv1.forward(tape, p, x)?;
        let h = self.gn1.forward(tape, p, h)?;
        let h = tape.relu(h);
        let h = self.conv2.forward(tape, p, h)?;
        let h = self.gn2.forward(tape, p, h)?;
        let skip = match &self.shortcut {
            Some((c, g)) => {
                let s = c.forward(tape, p, x)?;
                g.forward(tape, p, s)?
            }
            None => x,
        };
        let y = tape.add(h, skip)?;
        Ok(tape.relu(y))
    }
}

/// Intermediate maps kept for the decoder's skip connections.
#[derive(Debug, Clone, Copy)]
pub struct EncoderFeatures {
    /// Stem output before pooling.
    pub stem: Var,
    pub stages: [Var; 4],
}

impl EncoderFeatures {
    pub fn last(&self) -> Var {
        self.stages[3]
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: EncoderConfig,
    stem: Conv2d,
    stem_gn: GroupNorm,
    stages: Vec<Vec<BasicBlock>>,
}

impl Encoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let g = config.max_groups;
        let stem = Conv2d::new("enc.stem", 1, config.stem_width, config.stem_kernel, config.stem_stride, config.stem_kernel / 2)
            .without_bias();
        let stem_gn = GroupNorm::new("enc.stem_gn", config.stem_width, g);
        let mut in_ch = config.stem_width;
        let mut stages = Vec::new();
        for s in 0..4 {
            let mut blocks = Vec::new();
            for b in 0..config.blocks[s] {
                let stride = if b == 0 { config.strides[s] } else { 1 };
                blocks.push(BasicBlock::new(&format!("enc.s{}.b{b}", s + 1), in_ch, config.widths[s], stride, g));
                in_ch = config.widths[s];
            }
            stages.push(blocks);
        }
        Ok(Encoder { config, stem, stem_gn, stages })
    }

    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, store: &mut ParameterStore<T>, rng: &mut R) {
        self.stem.init(store, rng);
        self.stem_gn.init(store);
        for block in self.stages.iter().flatten() {
            block.init(store, rng);
        }
    }

    /// `x: [N, 1, H, W]`.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &mut Bound<'_, T>, x: Var) -> Result<EncoderFeatures> {
        let h = self.stem.forward(tape, p, x)?;
        let h = self.stem_gn.forward(tape, p, h)?;
        let stem = tape.relu(h);
        let mut h = if self.config.stem_pool { tape.max_pool2d(stem, 3, 2, 1)? } else { stem };
        let mut outs = [stem; 4];
        for (s, blocks) in self.stages.iter().enumerate() {
            for block in blocks {
                h = block.forward(tape, p, h)?;
            }
            outs[s] = h;
        }
        Ok(EncoderFeatures { stem, stages: outs })
    }
}
