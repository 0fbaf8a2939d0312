//! Parameter trees, generic over the leaf type so the same structure holds
//! tensors, tape handles or gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Backbone, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{Gradients, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Affine<T> {
    pub weight: T,
    pub bias: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Norm<T> {
    pub gain: T,
    pub bias: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams<T> {
    pub norm1: Norm<T>,
    pub query: Affine<T>,
    pub key: Affine<T>,
    pub value: Affine<T>,
    pub output: Affine<T>,
    pub norm2: Norm<T>,
    pub ff_in: Affine<T>,
    pub ff_out: Affine<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams<T> {
    pub norm: Norm<T>,
    pub ff_in: Affine<T>,
    pub ff_out: Affine<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockParams<T> {
    Attention(AttentionParams<T>),
    Mlp(MlpParams<T>),
}

/// All learnable weights of the forecaster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<T> {
    pub embed_original: Affine<T>,
    /// One embedding per augmented token group; `None` when the group reuses
    /// `embed_original`.
    pub embed_augmented: Vec<Option<Affine<T>>>,
    pub blocks: Vec<BlockParams<T>>,
    pub projection: Affine<T>,
}

pub type InvertedModelParams = ModelParams<Tensor>;

/// Structure-preserving traversal shared by every parameter node.
pub trait ParamTree<T> {
    type Mapped<U>;

    fn visit<'a>(&'a self, path: &str, f: &mut dyn FnMut(&str, &'a T));
    fn visit_mut(&mut self, path: &str, f: &mut dyn FnMut(&str, &mut T));
    fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> Self::Mapped<U>;
}

fn join(path: &str, name: &str) -> String {
    if path.is_empty() {
        name.to_string()
    } else {
        format!("{path}.{name}")
    }
}

impl<T> ParamTree<T> for Affine<T> {
    type Mapped<U> = Affine<U>;

    fn visit<'a>(&'a self, path: &str, f: &mut dyn FnMut(&str, &'a T)) {
        f(&join(path, "weight"), &self.weight);
        f(&join(path, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, path: &str, f: &mut dyn FnMut(&str, &mut T)) {
        f(&join(path, "weight"), &mut self.weight);
        f(&join(path, "bias"), &mut self.bias);
    }

    fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> Affine<U> {
        Affine {
            weight: f(&self.weight),
            bias: f(&self.bias),
        }
    }
}

impl<T> ParamTree<T> for Norm<T> {
    type Mapped<U> = Norm<U>;

    fn visit<'a>(&'a self, path: &str, f: &mut dyn FnMut(&str, &'a T)) {
        f(&join(path, "gain"), &self.gain);
        f(&join(path, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, path: &str, f: &mut dyn FnMut(&str, &mut T)) {
        f(&join(path, "gain"), &mut self.gain);
        f(&join(path, "bias"), &mut self.bias);
    }

    fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> Norm<U> {
        Norm {
            gain: f(&self.gain),
            bias: f(&self.bias),
        }
    }
}

impl<T> ParamTree<T> for AttentionParams<T> {
    type Mapped<U> = AttentionParams<U>;

    fn visit<'a>(&'a self, path: &str, f: &mut dyn FnMut(&str, &'a T)) {
        self.norm1.visit(&join(path, "norm1"), f);
        self.query.visit(&join(path, "query"), f);
        self.key.visit(&join(path, "key"), f);
        self.value.visit(&join(path, "value"), f);
        self.output.visit(&join(path, "output"), f);
        self.norm2.visit(&join(path, "norm2"), f);
        self.ff_in.visit(&join(path, "ff_in"), f);
        self.ff_out.visit(&join(path, "ff_out"), f);
    }

    fn visit_mut(&mut self, path: &str, f: &mut dyn FnMut(&str, &mut T)) {
        self.norm1.visit_mut(&join(path, "norm1"), f);
        self.query.visit_mut(&join(path, "query"), f);
        self.key.visit_mut(&join(path, "key"), f);
        self.value.visit_mut(&join(path, "value"), f);
        self.output.visit_mut(&join(path, "output"), f);
        self.norm2.visit_mut(&join(path, "norm2"), f);
        self.ff_in.visit_mut(&join(path, "ff_in"), f);
        self.ff_out.visit_mut(&join(path, "ff_out"), f);
    }

    fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> AttentionParams<U> {
        AttentionParams {
            norm1: self.norm1.map(f),
            query: self.query.map(f),
            key: self.key.map(f),
            value: self.value.map(f),
            output: self.output.map(f),
            norm2: self.norm2.map(f),
            ff_in: self.ff_in.map(f),
            ff_out: self.ff_out.map(f),
        }
    }
}

impl<T> ParamTree<T> for MlpParams<T> {
    type Mapped<U> = MlpParams<U>;

    fn visit<'a>(&'a self, path: &str, f: &mut dyn FnMut(&str, &'a T)) {
        self.norm.visit(&join(path, "norm"), f);
        self.ff_in.visit(&join(path, "ff_in"), f);
        self.ff_out.visit(&join(path, "ff_out"), f);
    }

    fn visit_mut(&mut self, path: &str, f: &mut dyn FnMut(&str, &mut T)) {
        self.norm.visit_mut(&join(path, "norm"), f);
        self.ff_in.visit_mut(&join(path, "ff_in"), f);
        self.ff_out.visit_mut(&join(path, "ff_out"), f);
    }

    fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> MlpParams<U> {
        MlpParams {
            norm: self.norm.map(f),
            ff_in: self.ff_in.map(f),
            ff_out: self.ff_out.map(f),
        }
    }
}

impl<T> ParamTree<T> for BlockParams<T> {
    type Mapped<U> = BlockParams<U>;

    fn visit<'a>(&'a self, path: &str, f: &mut dyn FnMut(&str, &'a T)) {
        match self {
            BlockParams::Attention(p) => p.visit(&join(path, "attention"), f),
            BlockParams::Mlp(p) => p.visit(&join(path, "mlp"), f),
        }
    }

    fn visit_mut(&mut self, path: &str, f: &mut dyn FnMut(&str, &mut T)) {
        match self {
            BlockParams::Attention(p) => p.visit_mut(&join(path, "attention"), f),
            BlockParams::Mlp(p) => p.visit_mut(&join(path, "mlp"), f),
        }
    }

    fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> BlockParams<U> {
        match self {
            BlockParams::Attention(p) => BlockParams::Attention(p.map(f)),
            BlockParams::Mlp(p) => BlockParams::Mlp(p.map(f)),
        }
    }
}

impl<T> ParamTree<T> for ModelParams<T> {
    type Mapped<U> = ModelParams<U>;

    fn visit<'a>(&'a self, path: &str, f: &mut dyn FnMut(&str, &'a T)) {
        self.embed_original.visit(&join(path, "embed_original"), f);
        for (g, e) in self.embed_augmented.iter().enumerate() {
            if let Some(e) = e {
                e.visit(&join(path, &format!("embed_augmented.{g}")), f);
            }
        }
        for (l, b) in self.blocks.iter().enumerate() {
            b.visit(&join(path, &format!("blocks.{l}")), f);
        }
        self.projection.visit(&join(path, "projection"), f);
    }

    fn visit_mut(&mut self, path: &str, f: &mut dyn FnMut(&str, &mut T)) {
        self.embed_original.visit_mut(&join(path, "embed_original"), f);
        for (g, e) in self.embed_augmented.iter_mut().enumerate() {
            if let Some(e) = e {
                e.visit_mut(&join(path, &format!("embed_augmented.{g}")), f);
            }
        }
        for (l, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(path, &format!("blocks.{l}")), f);
        }
        self.projection.visit_mut(&join(path, "projection"), f);
    }

    fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> ModelParams<U> {
        ModelParams {
            embed_original: self.embed_original.map(f),
            embed_augmented: self
                .embed_augmented
                .iter()
                .map(|e| e.as_ref().map(|e| e.map(f)))
                .collect(),
            blocks: self.blocks.iter().map(|b| b.map(f)).collect(),
            projection: self.projection.map(f),
        }
    }
}

impl<T> ModelParams<T> {
    /// Leaves in traversal order, with dotted paths.
    pub fn named(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, t| out.push((name.to_string(), t)));
        out
    }
}

impl ModelParams<Var> {
    /// Collects the gradient of every bound parameter.
    pub fn gradients(&self, grads: &Gradients) -> ModelParams<Tensor> {
        self.map(&mut |v| {
            grads
                .get(*v)
                .cloned()
                .expect("backward yields a gradient for every parameter")
        })
    }
}

fn uniform_affine(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Affine<Tensor> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Affine {
        weight: Tensor::from_fn(&[fan_in, fan_out], |_| rng.random_range(-bound..bound)),
        bias: Tensor::from_fn(&[fan_out], |_| rng.random_range(-bound..bound)),
    }
}

fn unit_norm(d: usize) -> Norm<Tensor> {
    Norm {
        gain: Tensor::full(&[d], 1.0),
        bias: Tensor::zeros(&[d]),
    }
}

impl ModelParams<Tensor> {
    /// Seeded initialization: affine maps draw weights and biases from
    /// `U(−1/√fan_in, 1/√fan_in)`; layer norms start at gain 1, bias 0.
    pub fn init(config: &ModelConfig, n_variates: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if n_variates == 0 {
            return Err(Error::config("model needs at least one variate"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (t, d, dff) = (config.lookback, config.d_model, config.d_ff);
        let embed_original = uniform_affine(&mut rng, t, d);
        let embed_augmented = config
            .augmentation
            .group_shapes(t, n_variates)
            .iter()
            .map(|g| {
                if config.share_original_embedding && g.token_length == t {
                    None
                } else {
                    Some(uniform_affine(&mut rng, g.token_length, d))
                }
            })
            .collect();
        let blocks = (0..config.layers)
            .map(|_| match config.backbone {
                Backbone::Attention => BlockParams::Attention(AttentionParams {
                    norm1: unit_norm(d),
                    query: uniform_affine(&mut rng, d, d),
                    key: uniform_affine(&mut rng, d, d),
                    value: uniform_affine(&mut rng, d, d),
                    output: uniform_affine(&mut rng, d, d),
                    norm2: unit_norm(d),
                    ff_in: uniform_affine(&mut rng, d, dff),
                    ff_out: uniform_affine(&mut rng, dff, d),
                }),
                Backbone::Mlp => BlockParams::Mlp(MlpParams {
                    norm: unit_norm(d),
                    ff_in: uniform_affine(&mut rng, d, dff),
                    ff_out: uniform_affine(&mut rng, dff, d),
                }),
            })
            .collect();
        let projection = uniform_affine(&mut rng, d, config.horizon);
        Ok(Self {
            embed_original,
            embed_augmented,
            blocks,
            projection,
        })
    }

    /// Registers every tensor as a parameter on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> ModelParams<Var> {
        self.map(&mut |t| tape.param(t.clone()))
    }

    pub fn parameter_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// Sets all augmented-token embeddings to zero.
    pub fn zero_augmented_embeddings(&mut self) {
        for e in self.embed_augmented.iter_mut().flatten() {
            e.weight.data_mut().fill(0.0);
            e.bias.data_mut().fill(0.0);
        }
    }

    /// Checks every shape against `config` and the variate count.
    pub fn validate(&self, config: &ModelConfig, n_variates: usize) -> Result<()> {
        let reference = Self::init(config, n_variates, 0)?;
        let mine = self.named();
        let want = reference.named();
        if mine.len() != want.len() {
            return Err(Error::config(format!(
                "parameter set has {} tensors, configuration expects {}",
                mine.len(),
                want.len()
            )));
        }
        for ((name, t), (wname, w)) in mine.iter().zip(&want) {
            if name != wname || t.shape() != w.shape() {
                return Err(Error::config(format!(
                    "parameter {name} has shape {:?}, configuration expects {wname} with shape {:?}",
                    t.shape(),
                    w.shape()
                )));
            }
        }
        Ok(())
    }
}
