//! Parallel self- and cross-attention block over both sides' tokens.
//!
//! Tokens of a batch of `B` pairs are stacked `[rights; lefts]` along axis
//! 0, so the contralateral context of every row is the batch with its two
//! halves exchanged.

use bimg_tensor::nn::{LayerNorm, Linear, MultiHeadAttention};
use bimg_tensor::{Bound, ParameterStore, Scalar, Tape, Tensor, Var};
use rand::Rng;

use crate::error::{Error, Result};

/// Rows `[B..2B, 0..B]` of a `[2B, ...]` variable.
pub fn swap_halves<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let n = tape.shape(x)[0];
    if n % 2 != 0 {
        return Err(Error::Validation(format!("side-stacked batch has odd length {n}")));
    }
    let b = n / 2;
    let r = tape.slice(x, 0, 0, b)?;
    let l = tape.slice(x, 0, b, b)?;
    Ok(tape.concat(&[l, r], 0)?)
}

#[derive(Debug, Clone)]
pub struct AsyBlock {
    pub dim: usize,
    pub hidden: usize,
    norm: LayerNorm,
    sa: MultiHeadAttention,
    ca: MultiHeadAttention,
    ffn_in: Linear,
    ffn_out: Linear,
}

impl AsyBlock {
    pub fn new(name: &str, dim: usize, heads: usize, hidden: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!("embedding width {dim} is not divisible by {heads} heads")));
        }
        Ok(AsyBlock {
            dim,
            hidden,
            norm: LayerNorm::new(format!("{name}.ln"), dim),
            sa: MultiHeadAttention::new(format!("{name}.sa"), dim, heads),
            ca: MultiHeadAttention::new(format!("{name}.ca"), dim, heads),
            ffn_in: Linear::new(format!("{name}.ffn1"), 3 * dim, hidden),
            ffn_out: Linear::new(format!("{name}.ffn2"), hidden, dim),
        })
    }

    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, store: &mut ParameterStore<T>, rng: &mut R) {
        self.norm.init(store);
        self.sa.init(store, rng);
        self.ca.init(store, rng);
        self.ffn_in.init(store, rng);
        self.ffn_out.init(store, rng);
    }

    /// `tokens: [2B, L, C]` stacked `[rights; lefts]`. With
    /// `cross_attention` off the cross branch contributes zeros.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &mut Bound<'_, T>, tokens: Var, cross_attention: bool) -> Result<Var> {
        let n = self.norm.forward(tape, p, tokens)?;
        let sa = self.sa.forward(tape, p, n, n)?;
        let ca = if cross_attention {
            let ctx = swap_halves(tape, n)?;
            self.ca.forward(tape, p, n, ctx)?
        } else {
            tape.constant(Tensor::zeros(tape.shape(n)))
        };
        let cat = tape.concat(&[n, sa, ca], 2)?;
        let h = self.ffn_in.forward(tape, p, cat)?;
        let h = tape.relu(h);
        let h = self.ffn_out.forward(tape, p, h)?;
        Ok(tape.add(tokens, h)?)
    }

    /// Self- and cross-attention weights `[2B, heads, L, L]` of the block.
    pub fn attention_weights<T: Scalar>(&self, store: &ParameterStore<T>, tokens: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut tape = Tape::new();
        let mut p = Bound::frozen(store);
        let t = tape.constant(tokens.clone());
        let n = self.norm.forward(&mut tape, &mut p, t)?;
        let ctx = swap_halves(&mut tape, n)?;
        let sa = self.sa.weights(store, tape.value(n), tape.value(n))?;
        let ca = self.ca.weights(store, tape.value(n), tape.value(ctx))?;
        Ok((sa, ca))
    }
}
