//! The inverted sequence-to-sequence forecaster.
//!
//! Every variate's lookback series is one token; augmented tokens are
//! appended after the `N` originals, the backbone mixes all `N + M` tokens,
//! and only the first `N` are projected to forecasts. There is no positional
//! encoding anywhere.
//!
//! All tape-level functions work on a batch of windows stacked along the
//! token axis: window `b` owns rows `b·(N+M) .. (b+1)·(N+M)`.

pub mod checkpoint;
mod params;

pub use params::{
    Affine, AttentionParams, BlockParams, InvertedModelParams, MlpParams, ModelParams, Norm, ParamTree,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::augment::{self, AugmentationConfig, AugmentedTokens};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    /// Pre-norm multi-head self-attention over tokens plus a GELU FFN.
    Attention,
    /// Per-token two-layer GELU MLP; tokens never interact.
    Mlp,
}

impl Backbone {
    pub fn as_str(self) -> &'static str {
        match self {
            Backbone::Attention => "attention",
            Backbone::Mlp => "mlp",
        }
    }
}

impl fmt::Display for Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention" => Ok(Backbone::Attention),
            "mlp" => Ok(Backbone::Mlp),
            _ => Err(Error::config(format!("unknown backbone {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: Backbone,
    /// Lookback length `T`.
    pub lookback: usize,
    /// Prediction length `S`.
    pub horizon: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub layers: usize,
    pub heads: usize,
    /// Reuse the original-series embedding for augmented groups whose token
    /// length equals the lookback.
    pub share_original_embedding: bool,
    pub augmentation: AugmentationConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: Backbone::Attention,
            lookback: 96,
            horizon: 96,
            d_model: 128,
            d_ff: 256,
            layers: 2,
            heads: 8,
            share_original_embedding: false,
            augmentation: AugmentationConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lookback", self.lookback),
            ("horizon", self.horizon),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("layers", self.layers),
            ("heads", self.heads),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{name} must be >= 1")));
            }
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::config(format!(
                "heads ({}) must divide d_model ({})",
                self.heads, self.d_model
            )));
        }
        self.augmentation.validate(self.lookback)
    }
}

/// How a stacked batch is laid out along the token axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub batch: usize,
    pub n_variates: usize,
    /// `N + M`.
    pub tokens_per_window: usize,
}

impl Layout {
    pub fn rows(&self) -> usize {
        self.batch * self.tokens_per_window
    }
}

/// Model inputs for a batch of windows, already in token orientation.
#[derive(Clone, Debug)]
pub struct TokenBatch {
    /// `(B·N)×T`: row `b·N + n` is variate `n` of window `b`.
    pub originals: Tensor,
    /// Per group, `(B·M_g)×J_g`: row `b·M_g + m` is token `m` of window `b`.
    pub groups: Vec<Tensor>,
    pub batch: usize,
    pub n_variates: usize,
    pub group_counts: Vec<usize>,
}

impl TokenBatch {
    /// Stacks `T×N` windows and their augmentations. All windows must share
    /// a shape and a group structure.
    pub fn new(windows: &[&Tensor], augs: &[AugmentedTokens]) -> Result<Self> {
        let first = windows
            .first()
            .ok_or_else(|| Error::contract("a batch needs at least one window"))?;
        if windows.len() != augs.len() {
            return Err(Error::contract("one augmentation per window is required"));
        }
        let (t, n) = (first.rows(), first.cols());
        let shapes = augs[0].shapes();
        let mut originals = Vec::with_capacity(windows.len() * t * n);
        let mut groups: Vec<Vec<f64>> = vec![Vec::new(); shapes.len()];
        for (x, a) in windows.iter().zip(augs) {
            if x.shape() != [t, n] {
                return Err(Error::Shape {
                    op: "token batch",
                    lhs: first.shape().to_vec(),
                    rhs: x.shape().to_vec(),
                });
            }
            if a.shapes() != shapes {
                return Err(Error::contract("augmented token groups differ across the batch"));
            }
            originals.extend(x.transpose()?.into_data());
            for (dst, g) in groups.iter_mut().zip(&a.groups) {
                dst.extend_from_slice(g.tokens.data());
            }
        }
        let b = windows.len();
        Ok(Self {
            originals: Tensor::matrix(b * n, t, originals)?,
            groups: groups
                .into_iter()
                .zip(&shapes)
                .map(|(d, s)| Tensor::matrix(b * s.count, s.token_length, d))
                .collect::<Result<_>>()?,
            batch: b,
            n_variates: n,
            group_counts: shapes.iter().map(|s| s.count).collect(),
        })
    }

    pub fn layout(&self) -> Layout {
        Layout {
            batch: self.batch,
            n_variates: self.n_variates,
            tokens_per_window: self.n_variates + self.group_counts.iter().sum::<usize>(),
        }
    }
}

/// Embeds original and augmented tokens and interleaves them per window:
/// the `N` originals first, then each augmented group in order.
pub fn embed_tokens(tape: &mut Tape, params: &ModelParams<Var>, batch: &TokenBatch) -> Result<Var> {
    if params.embed_augmented.len() != batch.groups.len() {
        return Err(Error::config(format!(
            "{} augmented token groups but {} registered embeddings",
            batch.groups.len(),
            params.embed_augmented.len()
        )));
    }
    let x = tape.leaf(batch.originals.clone());
    let mut parts = vec![tape.affine(x, params.embed_original.weight, params.embed_original.bias)?];
    for (g, (tokens, embed)) in batch.groups.iter().zip(&params.embed_augmented).enumerate() {
        let embed = embed.as_ref().unwrap_or(&params.embed_original);
        if tape.shape(embed.weight)[0] != tokens.cols() {
            return Err(Error::config(format!(
                "augmented group {g} has token length {} but its embedding expects {}",
                tokens.cols(),
                tape.shape(embed.weight)[0]
            )));
        }
        let xg = tape.leaf(tokens.clone());
        parts.push(tape.affine(xg, embed.weight, embed.bias)?);
    }
    let stacked = tape.concat_rows(&parts)?;

    let layout = batch.layout();
    let n = batch.n_variates;
    let mut order = Vec::with_capacity(layout.rows());
    for b in 0..batch.batch {
        order.extend(b * n..(b + 1) * n);
        let mut offset = batch.batch * n;
        for &count in &batch.group_counts {
            order.extend(offset + b * count..offset + (b + 1) * count);
            offset += batch.batch * count;
        }
    }
    tape.gather_rows(stacked, &order)
}

fn feed_forward(tape: &mut Tape, h: Var, ff_in: &Affine<Var>, ff_out: &Affine<Var>) -> Result<Var> {
    let hidden = tape.affine(h, ff_in.weight, ff_in.bias)?;
    let act = tape.gelu(hidden)?;
    tape.affine(act, ff_out.weight, ff_out.bias)
}

/// Pre-norm self-attention and feed-forward, both residual. Returns the
/// block output and the attention weights `[B·heads, N+M, N+M]`.
pub fn attention_block_with_weights(
    tape: &mut Tape,
    h: Var,
    p: &AttentionParams<Var>,
    layout: Layout,
    heads: usize,
) -> Result<(Var, Var)> {
    let d = tape.shape(h)[1];
    if tape.shape(h)[0] != layout.rows() || !d.is_multiple_of(heads) {
        return Err(Error::Shape {
            op: "attention_block",
            lhs: tape.shape(h).to_vec(),
            rhs: vec![layout.rows(), d],
        });
    }
    let (b, tk, dh) = (layout.batch, layout.tokens_per_window, d / heads);
    let a = tape.layer_norm(h, p.norm1.gain, p.norm1.bias, LAYER_NORM_EPS)?;
    let split = |tape: &mut Tape, proj: &Affine<Var>| -> Result<Var> {
        let y = tape.affine(a, proj.weight, proj.bias)?;
        let y = tape.reshape(y, &[b, tk, heads, dh])?;
        let y = tape.permute(y, &[0, 2, 1, 3])?;
        tape.reshape(y, &[b * heads, tk, dh])
    };
    let q = split(tape, &p.query)?;
    let k = split(tape, &p.key)?;
    let v = split(tape, &p.value)?;
    let scores = tape.batch_matmul(q, k, true)?;
    let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt())?;
    let weights = tape.softmax(scores)?;
    let mixed = tape.batch_matmul(weights, v, false)?;
    let mixed = tape.reshape(mixed, &[b, heads, tk, dh])?;
    let mixed = tape.permute(mixed, &[0, 2, 1, 3])?;
    let mixed = tape.reshape(mixed, &[b * tk, d])?;
    let attended = tape.affine(mixed, p.output.weight, p.output.bias)?;
    let h = tape.add(h, attended)?;

    let f = tape.layer_norm(h, p.norm2.gain, p.norm2.bias, LAYER_NORM_EPS)?;
    let f = feed_forward(tape, f, &p.ff_in, &p.ff_out)?;
    Ok((tape.add(h, f)?, weights))
}

pub fn attention_block(tape: &mut Tape, h: Var, p: &AttentionParams<Var>, layout: Layout, heads: usize) -> Result<Var> {
    attention_block_with_weights(tape, h, p, layout, heads).map(|(out, _)| out)
}

/// Per-token layer norm, GELU MLP and residual.
pub fn mlp_block(tape: &mut Tape, h: Var, p: &MlpParams<Var>) -> Result<Var> {
    let f = tape.layer_norm(h, p.norm.gain, p.norm.bias, LAYER_NORM_EPS)?;
    let f = feed_forward(tape, f, &p.ff_in, &p.ff_out)?;
    tape.add(h, f)
}

/// Projects every token to the horizon and keeps the first `N` of each
/// window. Output is `(B·N)×S`, row `b·N + n` forecasting variate `n`.
pub fn project_select(tape: &mut Tape, h: Var, projection: &Affine<Var>, layout: Layout) -> Result<Var> {
    if layout.n_variates > layout.tokens_per_window {
        return Err(Error::contract(format!(
            "cannot select {} tokens out of {}",
            layout.n_variates, layout.tokens_per_window
        )));
    }
    let projected = tape.affine(h, projection.weight, projection.bias)?;
    let keep: Vec<usize> = (0..layout.batch)
        .flat_map(|b| {
            let start = b * layout.tokens_per_window;
            start..start + layout.n_variates
        })
        .collect();
    tape.gather_rows(projected, &keep)
}

/// Full forward pass on a tape. When `trace` is given, the hidden state
/// after embedding and after every block is pushed onto it.
pub fn forward_tape(
    tape: &mut Tape,
    params: &ModelParams<Var>,
    config: &ModelConfig,
    batch: &TokenBatch,
    mut trace: Option<&mut Vec<Var>>,
) -> Result<Var> {
    let layout = batch.layout();
    let mut h = embed_tokens(tape, params, batch)?;
    if let Some(t) = trace.as_deref_mut() {
        t.push(h);
    }
    for block in &params.blocks {
        h = match block {
            BlockParams::Attention(p) => attention_block(tape, h, p, layout, config.heads)?,
            BlockParams::Mlp(p) => mlp_block(tape, h, p)?,
        };
        if let Some(t) = trace.as_deref_mut() {
            t.push(h);
        }
    }
    project_select(tape, h, &params.projection, layout)
}

/// Forecasts for a batch of `T×N` windows with precomputed augmentations.
/// Returns one `N×S` matrix per window.
pub fn predict_batch(
    params: &InvertedModelParams,
    config: &ModelConfig,
    windows: &[&Tensor],
    augs: &[AugmentedTokens],
) -> Result<Vec<Tensor>> {
    let batch = TokenBatch::new(windows, augs)?;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let out = forward_tape(&mut tape, &bound, config, &batch, None)?;
    let (n, s) = (batch.n_variates, config.horizon);
    let data = tape.value(out).data();
    (0..batch.batch)
        .map(|b| Tensor::matrix(n, s, data[b * n * s..(b + 1) * n * s].to_vec()))
        .collect()
}

/// Augments a single `T×N` window and forecasts it (`N×S`).
pub fn forward(x: &Tensor, config: &ModelConfig, params: &InvertedModelParams) -> Result<Tensor> {
    if x.ndim() != 2 || x.rows() != config.lookback {
        return Err(Error::contract(format!(
            "window shape {:?} does not match lookback {}",
            x.shape(),
            config.lookback
        )));
    }
    x.check_finite("forward input")?;
    let aug = augment::augment(x, &config.augmentation)?;
    let mut out = predict_batch(params, config, &[x], &[aug])?;
    Ok(out.remove(0))
}
