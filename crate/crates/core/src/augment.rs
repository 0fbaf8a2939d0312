//! Token augmentation of a lookback window.
//!
//! A window `X` is a `T×N` matrix (rows are timesteps). Every strategy emits
//! extra tokens as rows of an `M×J` matrix; the model embeds each group of
//! tokens with its own affine map.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{self, FilterOptions};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    None,
    /// Cross-variation patching.
    Cvp,
    /// Top-K frequency filtering.
    Ff,
    Jitter,
    Scaling,
    /// Cross-variation patches followed by frequency-filtered series.
    Compound,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::None,
        Strategy::Cvp,
        Strategy::Ff,
        Strategy::Jitter,
        Strategy::Scaling,
        Strategy::Compound,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::None => "none",
            Strategy::Cvp => "cvp",
            Strategy::Ff => "ff",
            Strategy::Jitter => "jitter",
            Strategy::Scaling => "scaling",
            Strategy::Compound => "compound",
        }
    }

    /// Whether the strategy draws random numbers.
    pub fn is_stochastic(self) -> bool {
        matches!(self, Strategy::Jitter | Strategy::Scaling)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown strategy {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    pub strategy: Strategy,
    pub patch_len: usize,
    pub top_k: usize,
    pub jitter_sigma: f64,
    pub scaling_sigma: f64,
    pub seed: u64,
    /// Keep the DC bin in frequency filtering regardless of its rank.
    pub keep_dc: bool,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::None,
            patch_len: 16,
            top_k: 5,
            jitter_sigma: 0.03,
            scaling_sigma: 0.1,
            seed: 0,
            keep_dc: false,
        }
    }
}

impl AugmentationConfig {
    pub fn new(strategy: Strategy) -> Self {
        Self {
            strategy,
            ..Self::default()
        }
    }

    /// Checks the configuration against a lookback length `t`.
    pub fn validate(&self, t: usize) -> Result<()> {
        if self.patch_len == 0 {
            return Err(Error::config("patch_len must be >= 1"));
        }
        if self.top_k == 0 {
            return Err(Error::config("top_k must be >= 1"));
        }
        if !(self.jitter_sigma >= 0.0 && self.scaling_sigma >= 0.0) {
            return Err(Error::config("augmentation sigmas must be >= 0"));
        }
        if matches!(self.strategy, Strategy::Cvp | Strategy::Compound) && self.patch_len > t {
            return Err(Error::config(format!(
                "patch_len {} exceeds lookback {t}",
                self.patch_len
            )));
        }
        if matches!(self.strategy, Strategy::Ff | Strategy::Compound) && self.top_k > spectral::bin_count(t) {
            return Err(Error::config(format!(
                "top_k {} exceeds the {} one-sided bins of a length-{t} window",
                self.top_k,
                spectral::bin_count(t)
            )));
        }
        Ok(())
    }

    /// Token groups this configuration produces for a `t×n` window.
    pub fn group_shapes(&self, t: usize, n: usize) -> Vec<GroupShape> {
        let cvp = GroupShape {
            tag: Strategy::Cvp,
            count: t / self.patch_len.max(1),
            token_length: self.patch_len * n,
        };
        let series = |tag| GroupShape {
            tag,
            count: n,
            token_length: t,
        };
        match self.strategy {
            Strategy::None => vec![],
            Strategy::Cvp => vec![cvp],
            Strategy::Ff | Strategy::Jitter | Strategy::Scaling => vec![series(self.strategy)],
            Strategy::Compound => vec![cvp, series(Strategy::Ff)],
        }
    }

    /// Copy with a different RNG seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

/// Shape of one augmented token group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupShape {
    pub tag: Strategy,
    pub count: usize,
    pub token_length: usize,
}

/// Tokens of one strategy, one token per row.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenGroup {
    pub tag: Strategy,
    pub tokens: Tensor,
}

impl TokenGroup {
    pub fn len(&self) -> usize {
        self.tokens.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn token_length(&self) -> usize {
        self.tokens.cols()
    }

    pub fn token(&self, m: usize) -> &[f64] {
        self.tokens.row(m)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedTokens {
    pub strategy: Strategy,
    pub groups: Vec<TokenGroup>,
}

impl AugmentedTokens {
    pub fn empty() -> Self {
        Self {
            strategy: Strategy::None,
            groups: vec![],
        }
    }

    fn single(tag: Strategy, tokens: Tensor) -> Self {
        Self {
            strategy: tag,
            groups: vec![TokenGroup { tag, tokens }],
        }
    }

    /// Total token count `M` across groups.
    pub fn token_count(&self) -> usize {
        self.groups.iter().map(TokenGroup::len).sum()
    }

    pub fn shapes(&self) -> Vec<GroupShape> {
        self.groups
            .iter()
            .map(|g| GroupShape {
                tag: g.tag,
                count: g.len(),
                token_length: g.token_length(),
            })
            .collect()
    }

    /// All tokens of the given length, stacked in group order.
    pub fn tokens_of_length(&self, j: usize) -> Vec<&[f64]> {
        self.groups
            .iter()
            .filter(|g| g.token_length() == j)
            .flat_map(|g| (0..g.len()).map(move |m| g.token(m)))
            .collect()
    }
}

fn check_window(x: &Tensor) -> Result<(usize, usize)> {
    if x.ndim() != 2 || x.rows() == 0 || x.cols() == 0 {
        return Err(Error::contract(format!(
            "window must be a non-empty T×N matrix, got shape {:?}",
            x.shape()
        )));
    }
    Ok((x.rows(), x.cols()))
}

/// Splits the window into `⌊T/P⌋` blocks of `P` timesteps and flattens each
/// block time-major (all `N` values of a timestep are adjacent). Trailing
/// timesteps that do not fill a block are dropped.
pub fn cross_variation_patch(x: &Tensor, patch_len: usize) -> Result<AugmentedTokens> {
    let (t, n) = check_window(x)?;
    if patch_len == 0 || patch_len > t {
        return Err(Error::contract(format!(
            "patch length must satisfy 1 <= P <= T = {t}, got {patch_len}"
        )));
    }
    let m = t / patch_len;
    let j = patch_len * n;
    // row-major T×N storage is already time-major within each block
    let tokens = Tensor::matrix(m, j, x.data()[..m * j].to_vec())?;
    Ok(AugmentedTokens::single(Strategy::Cvp, tokens))
}

/// Each variate filtered to its top-`k` frequencies, one token per variate.
pub fn frequency_filter_augment(x: &Tensor, k: usize) -> Result<AugmentedTokens> {
    frequency_filter_augment_with(x, k, FilterOptions::default())
}

pub fn frequency_filter_augment_with(x: &Tensor, k: usize, opts: FilterOptions) -> Result<AugmentedTokens> {
    let (t, n) = check_window(x)?;
    let mut data = Vec::with_capacity(t * n);
    for col in 0..n {
        data.extend(spectral::frequency_filter_with(&x.column(col), k, opts)?);
    }
    Ok(AugmentedTokens::single(Strategy::Ff, Tensor::matrix(n, t, data)?))
}

fn normal(mean: f64, sigma: f64) -> Result<Normal<f64>> {
    Normal::new(mean, sigma).map_err(|e| Error::config(format!("invalid sigma {sigma}: {e}")))
}

/// Adds iid `Normal(0, sigma²)` noise; one token per variate.
pub fn jitter(x: &Tensor, sigma: f64, rng: &mut impl rand::Rng) -> Result<AugmentedTokens> {
    let (t, n) = check_window(x)?;
    let dist = normal(0.0, sigma)?;
    let noisy: Vec<f64> = x.data().iter().map(|v| v + dist.sample(rng)).collect();
    let tokens = Tensor::matrix(t, n, noisy)?.transpose()?;
    Ok(AugmentedTokens::single(Strategy::Jitter, tokens))
}

/// Multiplies each variate by its own factor drawn from `Normal(1, sigma²)`.
pub fn scaling(x: &Tensor, sigma: f64, rng: &mut impl rand::Rng) -> Result<AugmentedTokens> {
    let (_, n) = check_window(x)?;
    let factors = scaling_factors(n, sigma, rng)?;
    let mut tokens = x.transpose()?;
    for (col, a) in factors.iter().enumerate() {
        for t in 0..tokens.cols() {
            let v = tokens.at(col, t);
            tokens.set(col, t, a * v);
        }
    }
    Ok(AugmentedTokens::single(Strategy::Scaling, tokens))
}

pub fn scaling_factors(n: usize, sigma: f64, rng: &mut impl rand::Rng) -> Result<Vec<f64>> {
    let dist = normal(1.0, sigma)?;
    Ok((0..n).map(|_| dist.sample(rng)).collect())
}

/// Applies the configured strategy. Pure in `(x, config)`: stochastic
/// strategies draw from a generator seeded with `config.seed`.
pub fn augment(x: &Tensor, config: &AugmentationConfig) -> Result<AugmentedTokens> {
    let (t, _) = check_window(x)?;
    config.validate(t)?;
    let opts = FilterOptions {
        always_keep_dc: config.keep_dc,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    match config.strategy {
        Strategy::None => Ok(AugmentedTokens::empty()),
        Strategy::Cvp => cross_variation_patch(x, config.patch_len),
        Strategy::Ff => frequency_filter_augment_with(x, config.top_k, opts),
        Strategy::Jitter => jitter(x, config.jitter_sigma, &mut rng),
        Strategy::Scaling => scaling(x, config.scaling_sigma, &mut rng),
        Strategy::Compound => {
            let mut groups = cross_variation_patch(x, config.patch_len)?.groups;
            groups.extend(frequency_filter_augment_with(x, config.top_k, opts)?.groups);
            Ok(AugmentedTokens {
                strategy: Strategy::Compound,
                groups,
            })
        }
    }
}

/// Mixes a base seed with an epoch and window index (splitmix64 finalizer),
/// giving every (epoch, window) pair its own reproducible stream.
pub fn derive_seed(base: u64, epoch: u64, window: u64) -> u64 {
    let mut z = base
        ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ window.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert_eq, prop_assume, proptest};
    use std::f64::consts::PI;

    fn window(t: usize, n: usize) -> Tensor {
        Tensor::from_fn(&[t, n], |i| ((i * 7 + 3) % 17) as f64 * 0.25 - 1.0)
    }

    #[test]
    fn cvp_counts() {
        let a = cross_variation_patch(&window(96, 7), 16).unwrap();
        assert_eq!(a.token_count(), 6);
        assert_eq!(a.groups[0].token_length(), 112);

        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let a = cross_variation_patch(&x, 1).unwrap();
        assert_eq!(a.groups[0].tokens, x);

        let x = window(5, 3);
        let a = cross_variation_patch(&x, 2).unwrap();
        assert_eq!(a.token_count(), 2);
        assert_eq!(a.groups[0].tokens.data(), &x.data()[..12]);
        assert!(cross_variation_patch(&x, 6).is_err());
        assert!(cross_variation_patch(&x, 0).is_err());
    }

    #[test]
    fn cvp_is_time_major() {
        let x = Tensor::from_rows(&[vec![1.0, 10.0], vec![2.0, 20.0], vec![3.0, 30.0], vec![4.0, 40.0]]).unwrap();
        let a = cross_variation_patch(&x, 2).unwrap();
        assert_eq!(a.groups[0].token(0), &[1.0, 10.0, 2.0, 20.0]);
        assert_eq!(a.groups[0].token(1), &[3.0, 30.0, 4.0, 40.0]);
    }

    #[test]
    fn ff_constant_and_max_k() {
        let x = Tensor::from_fn(&[24, 3], |i| (i % 3) as f64 + 0.5);
        for k in [1, 4, 13] {
            let a = frequency_filter_augment(&x, k).unwrap();
            assert!(a.groups[0].tokens.transpose().unwrap().max_abs_diff(&x) < 1e-12);
        }
        let x = window(30, 4);
        let a = frequency_filter_augment(&x, 16).unwrap();
        assert!(a.groups[0].tokens.transpose().unwrap().max_abs_diff(&x) < 1e-9);
        assert!(frequency_filter_augment(&x, 17).is_err());
    }

    #[test]
    fn ff_pure_sinusoid_columns_survive_k1() {
        let t = 48;
        let x = Tensor::from_fn(&[t, 3], |i| {
            let (ti, n) = ((i / 3) as f64, i % 3);
            (2.0 * PI * (n + 2) as f64 * ti / t as f64 + n as f64).sin() * (n + 1) as f64
        });
        let a = frequency_filter_augment(&x, 1).unwrap();
        assert!(a.groups[0].tokens.transpose().unwrap().max_abs_diff(&x) < 1e-9);
    }

    #[test]
    fn ff_noisy_columns_delegate_to_spectral() {
        let x = window(40, 3);
        let a = frequency_filter_augment(&x, 3).unwrap();
        for n in 0..3 {
            let want = spectral::frequency_filter(&x.column(n), 3).unwrap();
            assert_eq!(a.groups[0].token(n), &want[..]);
        }
    }

    #[test]
    fn jitter_zero_sigma_and_determinism() {
        let x = window(20, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = jitter(&x, 0.0, &mut rng).unwrap();
        assert_eq!(a.groups[0].tokens, x.transpose().unwrap());

        let cfg = AugmentationConfig {
            strategy: Strategy::Jitter,
            jitter_sigma: 0.2,
            seed: 42,
            ..Default::default()
        };
        assert_eq!(augment(&x, &cfg).unwrap(), augment(&x, &cfg).unwrap());
        assert_ne!(augment(&x, &cfg).unwrap(), augment(&x, &cfg.with_seed(43)).unwrap());
    }

    #[test]
    fn jitter_std_matches_sigma() {
        let x = Tensor::zeros(&[100, 100]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = jitter(&x, 0.1, &mut rng).unwrap();
        let d = a.groups[0].tokens.data();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let std = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d.len() as f64).sqrt();
        assert!((0.097..=0.103).contains(&std), "std = {std}");
    }

    #[test]
    fn scaling_cases() {
        let x = window(16, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(scaling(&x, 0.0, &mut rng).unwrap().groups[0].tokens, x.transpose().unwrap());

        let mut z = window(16, 3);
        for t in 0..16 {
            z.set(t, 1, 0.0);
        }
        let a = scaling(&z, 0.5, &mut rng).unwrap();
        assert!(a.groups[0].token(1).iter().all(|v| *v == 0.0));

        let f1 = scaling_factors(1000, 0.1, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let f2 = scaling_factors(1000, 0.1, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(f1, f2);
        assert!(f1.iter().all(|a| (0.5..=1.5).contains(a)));
    }

    #[test]
    fn augment_dispatch() {
        let x = window(96, 7);
        let none = augment(&x, &AugmentationConfig::new(Strategy::None)).unwrap();
        assert_eq!(none.token_count(), 0);

        let cfg = AugmentationConfig::new(Strategy::Compound);
        let a = augment(&x, &cfg).unwrap();
        assert_eq!(a.shapes(), cfg.group_shapes(96, 7));
        assert_eq!(
            a.shapes(),
            vec![
                GroupShape { tag: Strategy::Cvp, count: 6, token_length: 112 },
                GroupShape { tag: Strategy::Ff, count: 7, token_length: 96 },
            ]
        );
    }

    #[test]
    fn validate_rejects_bad_configs() {
        let mut cfg = AugmentationConfig::new(Strategy::Ff);
        cfg.top_k = 50;
        assert!(cfg.validate(96).is_err());
        cfg.top_k = 49;
        assert!(cfg.validate(96).is_ok());
        let cfg = AugmentationConfig {
            strategy: Strategy::Cvp,
            patch_len: 97,
            ..Default::default()
        };
        assert!(cfg.validate(96).is_err());
        assert_eq!("compound".parse::<Strategy>().unwrap(), Strategy::Compound);
        assert!("rotation".parse::<Strategy>().is_err());
    }

    proptest! {
        #[test]
        fn cvp_shape_law_and_values(t in 1usize..80, n in 1usize..6, p in 1usize..20) {
            prop_assume!(p <= t);
            let x = Tensor::from_fn(&[t, n], |i| i as f64 * 1.5 - 3.0);
            let a = cross_variation_patch(&x, p).unwrap();
            let m = t / p;
            prop_assert_eq!(a.groups[0].tokens.shape(), &[m, p * n]);
            let mut got = a.groups[0].tokens.data().to_vec();
            let mut want = x.data()[..m * p * n].to_vec();
            got.sort_by(f64::total_cmp);
            want.sort_by(f64::total_cmp);
            prop_assert_eq!(got, want);
        }

        #[test]
        fn ff_shape_law(t in 1usize..64, n in 1usize..5, kf in 0.0f64..1.0) {
            let k = 1 + ((spectral::bin_count(t) - 1) as f64 * kf) as usize;
            let x = Tensor::from_fn(&[t, n], |i| ((i * 13) % 7) as f64);
            let a = frequency_filter_augment(&x, k).unwrap();
            prop_assert_eq!(a.groups[0].tokens.shape(), &[n, t]);
        }
    }
}
