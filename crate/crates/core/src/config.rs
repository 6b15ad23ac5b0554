//! Flat `key = value` run configuration. Unknown keys are rejected; the
//! echo lists every key in declaration order and parses back to an equal
//! configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use bimg_tensor::StepDecay;

use crate::asyc::{AsycConfig, EncoderConfig};
use crate::asyd::DecoderConfig;
use crate::error::{Error, Result};
use crate::selfadv::LossWeights;

/// A value type that round-trips through its config text form.
pub trait ConfigValue: Sized {
    fn parse_value(s: &str) -> std::result::Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! from_str_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> std::result::Result<Self, String> {
                s.parse().map_err(|e| format!("cannot parse `{s}`: {e}"))
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

from_str_value!(usize, u64, f64, String);

impl ConfigValue for bool {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "true" | "1" | "yes" | "on" => Ok(true),
            "false" | "0" | "no" | "off" => Ok(false),
            _ => Err(format!("`{s}` is not a boolean")),
        }
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for Option<PathBuf> {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        Ok((!s.is_empty()).then(|| PathBuf::from(s)))
    }
    fn render(&self) -> String {
        self.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
    }
}

impl<const N: usize> ConfigValue for [usize; N] {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        let v: Vec<usize> = s
            .split(',')
            .map(|t| t.trim().parse::<usize>().map_err(|e| format!("cannot parse `{t}`: {e}")))
            .collect::<std::result::Result<_, _>>()?;
        v.try_into().map_err(|v: Vec<usize>| format!("expected {N} comma-separated values, got {}", v.len()))
    }
    fn render(&self) -> String {
        self.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
    }
}

/// Scalar type used for training and inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl ConfigValue for Precision {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(format!("`{s}` is not one of f32, f64")),
        }
    }
    fn render(&self) -> String {
        match self {
            Precision::F32 => "f32".into(),
            Precision::F64 => "f64".into(),
        }
    }
}

macro_rules! run_config {
    ($($(#[doc = $doc:literal])* $field:ident : $ty:ty = $default:expr;)*) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct RunConfig {
            $($(#[doc = $doc])* pub $field: $ty,)*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                RunConfig { $($field: $default,)* }
            }
        }

        impl RunConfig {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($field)),*];

            /// Sets one key from its text form.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                let value = value.trim();
                match key.trim() {
                    $(stringify!($field) => {
                        self.$field = <$ty as ConfigValue>::parse_value(value)
                            .map_err(|m| Error::Config(format!("key `{}`: {m}", stringify!($field))))?;
                    })*
                    other => return Err(Error::Config(format!("unknown key `{other}`"))),
                }
                Ok(())
            }

            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$((stringify!($field), ConfigValue::render(&self.$field)),)*]
            }
        }
    };
}

run_config! {
    /// Canonical image height after preprocessing.
    image_h: usize = 1024;
    image_w: usize = 512;
    train_manifest: Option<PathBuf> = None;
    val_manifest: Option<PathBuf> = None;
    test_manifest: Option<PathBuf> = None;
    /// Name of the dataset the training manifest comes from.
    train_dataset: String = "train".into();
    /// Empty, `procedural`, or a tumor-set directory.
    tumor_set: String = String::new();
    /// Overrides the origin recorded in the tumor set.
    tumor_set_origin: String = String::new();
    procedural_tumors: usize = 64;
    enc_stem_width: usize = 64;
    enc_stem_kernel: usize = 7;
    enc_stem_stride: usize = 2;
    enc_stem_pool: bool = true;
    enc_widths: [usize; 4] = [64, 128, 256, 512];
    enc_blocks: [usize; 4] = [2, 2, 2, 2];
    enc_strides: [usize; 4] = [1, 2, 2, 2];
    groups: usize = 32;
    num_blocks: usize = 12;
    num_heads: usize = 8;
    ffn_hidden: usize = 512;
    cross_attention: bool = true;
    dec_widths: [usize; 6] = [256, 128, 64, 64, 32, 16];
    lambda_diag: f64 = 1.0;
    lambda_rec: f64 = 0.1;
    lambda_dics: f64 = 1.0;
    lambda_syn: f64 = 0.5;
    /// Second objective: classifier refinement on generated normals.
    refine: bool = true;
    /// Stops decoder losses from reaching the classifier through `f_out`
    /// and the skip connections.
    detach_decoder_input: bool = true;
    lr: f64 = 1e-4;
    lr_decay: f64 = 0.1;
    lr_period: u64 = 20;
    epochs: u64 = 50;
    batch_size: usize = 8;
    synth_fraction: f64 = 0.5;
    augment: bool = false;
    zoom_min: f64 = 0.9;
    zoom_max: f64 = 1.1;
    crop_fraction: f64 = 0.9;
    seed: u64 = 0;
    deterministic: bool = true;
    precision: Precision = Precision::F32;
    cam_threshold: f64 = 0.5;
    bootstrap_resamples: usize = 1000;
    ci_level: f64 = 0.95;
    resume: Option<PathBuf> = None;
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o.split_once('=').ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn write_echo(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.echo()).map_err(|e| Error::io(path, e))
    }

    pub fn asyc_config(&self) -> AsycConfig {
        AsycConfig {
            image_h: self.image_h,
            image_w: self.image_w,
            encoder: EncoderConfig {
                stem_width: self.enc_stem_width,
                stem_kernel: self.enc_stem_kernel,
                stem_stride: self.enc_stem_stride,
                stem_pool: self.enc_stem_pool,
                widths: self.enc_widths,
                blocks: self.enc_blocks,
                strides: self.enc_strides,
                max_groups: self.groups,
            },
            num_blocks: self.num_blocks,
            num_heads: self.num_heads,
            ffn_hidden: self.ffn_hidden,
            cross_attention: self.cross_attention,
        }
    }

    pub fn decoder_config(&self) -> DecoderConfig {
        DecoderConfig { widths: self.dec_widths, max_groups: self.groups }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights { diag: self.lambda_diag, rec: self.lambda_rec, dics: self.lambda_dics, syn: self.lambda_syn }
    }

    pub fn schedule(&self) -> StepDecay {
        StepDecay { base_lr: self.lr, factor: self.lr_decay, period: self.lr_period }
    }

    pub fn validate(&self) -> Result<()> {
        self.asyc_config().validate()?;
        self.decoder_config().validate()?;
        self.loss_weights().validate()?;
        let bad = |k: &str, why: &str| Err(Error::Config(format!("key `{k}`: {why}")));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", "must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay", "must lie in (0, 1]");
        }
        if self.epochs == 0 {
            return bad("epochs", "must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if !(0.0..=1.0).contains(&self.synth_fraction) {
            return bad("synth_fraction", "must lie in [0, 1]");
        }
        if !(self.cam_threshold > 0.0 && self.cam_threshold < 1.0) {
            return bad("cam_threshold", "must lie in (0, 1)");
        }
        if self.bootstrap_resamples < 1000 {
            return bad("bootstrap_resamples", "must be at least 1000");
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return bad("ci_level", "must lie in (0, 1)");
        }
        self.augment_params().validate()?;
        Ok(())
    }

    pub fn augment_params(&self) -> crate::imgio::AugmentParams {
        crate::imgio::AugmentParams { zoom_min: self.zoom_min, zoom_max: self.zoom_max, crop_fraction: self.crop_fraction }
    }

    /// Small model used by the toy phantom runs: 128x64 inputs, a four-stage
    /// encoder reducing by 16, two transformer blocks.
    pub fn toy() -> Self {
        RunConfig {
            image_h: 128,
            image_w: 64,
            train_dataset: "phantom".into(),
            tumor_set: "procedural".into(),
            enc_stem_width: 16,
            enc_stem_kernel: 3,
            enc_stem_stride: 1,
            enc_stem_pool: true,
            enc_widths: [16, 32, 64, 64],
            enc_blocks: [1, 1, 1, 1],
            enc_strides: [1, 2, 2, 2],
            groups: 8,
            num_blocks: 2,
            num_heads: 4,
            ffn_hidden: 128,
            dec_widths: [64, 32, 32, 16, 16, 16],
            lr: 1e-3,
            lr_period: 8,
            epochs: 10,
            ..RunConfig::default()
        }
    }
}
