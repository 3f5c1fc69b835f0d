use super::caption::{Caption, Vocab, MAX_TOKENS, PAD};
use crate::error::{dim_err, Result};
use crate::numerics::{Scalar, Tensor};
use crate::params::{Init, ParamBuilder};

/// Learned token-embedding table; padding rows read as zero.
#[derive(Clone)]
pub struct TextEncoder<S: Scalar = f32> {
    pub table: Tensor<S>,
}

impl<S: Scalar> TextEncoder<S> {
    pub fn new(pb: &ParamBuilder<S>, dim: usize) -> Result<Self> {
        Ok(Self {
            table: pb.get("embedding", &[Vocab::size(), dim], Init::Normal(1.0))?,
        })
    }

    pub fn dim(&self) -> usize {
        self.table.dim(1)
    }

    /// `[B, K, e]` embeddings of padded token rows.
    pub fn embed_tokens(&self, tokens: &[Vec<usize>]) -> Result<Tensor<S>> {
        let b = tokens.len();
        let mut ids = Vec::with_capacity(b * MAX_TOKENS);
        let mut mask = Vec::with_capacity(b * MAX_TOKENS);
        for row in tokens {
            if row.len() != MAX_TOKENS {
                return Err(dim_err!("token row of length {}, expected {MAX_TOKENS}", row.len()));
            }
            for &t in row {
                if t >= Vocab::size() {
                    return Err(crate::Error::Vocabulary(format!("#{t}")));
                }
                ids.push(t);
                mask.push(if t == PAD { 0.0 } else { 1.0 });
            }
        }
        let rows = self.table.index_select(&ids)?;
        let mask = Tensor::<S>::from_f64(&mask, &[b * MAX_TOKENS, 1])?;
        rows.mul(&mask)?.reshape(&[b, MAX_TOKENS, self.dim()])
    }

    pub fn embed(&self, captions: &[&Caption]) -> Result<Tensor<S>> {
        let rows: Vec<Vec<usize>> = captions.iter().map(|c| c.tokens.clone()).collect();
        self.embed_tokens(&rows)
    }
}

/// `[K, e]` embedding of one caption string.
pub fn embed_text<S: Scalar>(encoder: &TextEncoder<S>, caption: &str) -> Result<Tensor<S>> {
    let c = Caption::parse(caption)?;
    let e = encoder.embed(&[&c])?;
    e.reshape(&e.shape()[1..])
}
