//! Bilateral mammogram asymmetry analysis: pairing and preprocessing,
//! synthetic lesion insertion, the cross-attention classifier, the
//! disentangling decoder, self-adversarial training and evaluation.

pub mod asyc;
pub mod asyd;
pub mod config;
pub mod error;
pub mod evalkit;
pub mod grid;
pub mod imgio;
pub mod seeds;
pub mod selfadv;
pub mod synthlab;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use grid::{BinaryMask, Plane};
pub use imgio::{BilateralPair, GrayImage, Laterality, View};

pub type Image32 = GrayImage<f32>;
pub type Image64 = GrayImage<f64>;
pub type Pair32 = BilateralPair<f32>;
pub type Pair64 = BilateralPair<f64>;
