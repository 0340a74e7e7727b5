//! Full forecaster: instance normalization, RevIN affine, encoder,
//! spectral block, decoder and the inverse transforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::aplc::{AplcBlock, AplcConfig};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::kan::Linear;
use crate::params::{ParamId, ParamStore};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Look-back length `L`.
    pub lookback: usize,
    /// Forecast horizon `τ`.
    pub horizon: usize,
    /// Observed channels `C`.
    pub channels: usize,
    /// Latent width `K`.
    pub latent_dim: usize,
    pub aplc: AplcConfig,
    /// `δ` added to the per-instance standard deviation.
    pub norm_eps: f64,
    /// Minimum `|γ|` used when inverting the RevIN affine.
    pub gamma_floor: f64,
    pub layer_norm_eps: f64,
}

impl ModelConfig {
    pub fn new(lookback: usize, horizon: usize, channels: usize, latent_dim: usize) -> Self {
        Self {
            lookback,
            horizon,
            channels,
            latent_dim,
            aplc: AplcConfig::default(),
            norm_eps: 1e-5,
            gamma_floor: 1e-4,
            layer_norm_eps: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("lookback", self.lookback),
            ("horizon", self.horizon),
            ("channels", self.channels),
            ("latent_dim", self.latent_dim),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.aplc.seq_enabled && self.lookback < 2 {
            return Err(Error::Config("temporal branch needs lookback >= 2".into()));
        }
        if self.aplc.chan_enabled && self.latent_dim < 2 {
            return Err(Error::Config("channel branch needs latent_dim >= 2".into()));
        }
        Ok(())
    }
}

/// Layer normalization over the last axis with learnable gain and offset.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub dim: usize,
    pub gain: ParamId,
    pub offset: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize, eps: f64) -> Self {
        Self {
            dim,
            gain: store.add(format!("{name}.gain"), Tensor::ones(&[dim])),
            offset: store.add(format!("{name}.offset"), Tensor::zeros(&[dim])),
            eps,
        }
    }

    pub fn forward<'t, T: Real>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let last = x.shape().len() - 1;
        let mean = x.mean(last, true)?;
        let centered = x.sub(mean)?;
        let inv_std = centered.var(last, true)?.add_scalar(T::c(self.eps)).sqrt().reciprocal();
        let normed = centered.mul(inv_std)?;
        normed.mul(tape.param(store, self.gain))?.add(tape.param(store, self.offset))
    }
}

/// Per-instance, per-channel statistics over the look-back axis, `[B, 1, C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats<T: Real> {
    pub mean: Tensor<T>,
    /// Biased standard deviation (without `δ`).
    pub std: Tensor<T>,
    pub eps: f64,
}

impl<T: Real> NormStats<T> {
    /// Computes statistics of `x: [B, L, C]` along `L`.
    pub fn from_input(x: &Tensor<T>, eps: f64) -> Result<Self> {
        let shape = x.shape();
        if shape.len() != 3 {
            return Err(Error::shape(shape, &[0, 0, 0], "input must be [B, L, C]"));
        }
        let (b, l, c) = (shape[0], shape[1], shape[2]);
        let lf = T::c(l as f64);
        let mut mean = vec![T::zero(); b * c];
        let mut std = vec![T::zero(); b * c];
        let d = x.data();
        for bi in 0..b {
            for ci in 0..c {
                let col = (0..l).map(|t| d[(bi * l + t) * c + ci]);
                let m = col.clone().sum::<T>() / lf;
                let v = col.map(|v| (v - m) * (v - m)).sum::<T>() / lf;
                mean[bi * c + ci] = m;
                std[bi * c + ci] = v.sqrt();
            }
        }
        Ok(Self {
            mean: Tensor::new(&[b, 1, c], mean)?,
            std: Tensor::new(&[b, 1, c], std)?,
            eps,
        })
    }

    /// `std + δ`
    pub fn scale(&self) -> Tensor<T> {
        let e = T::c(self.eps);
        self.std.map(|s| s + e)
    }
}

/// `(x - mean) / (std + δ)`
pub fn normalize<'t, T: Real>(x: Var<'t, T>, stats: &NormStats<T>) -> Result<Var<'t, T>> {
    let tape = x.tape();
    let mean = tape.constant(stats.mean.clone());
    let inv = tape.constant(stats.scale().map(|s| T::one() / s));
    x.sub(mean)?.mul(inv)
}

/// `y·(std + δ) + mean`
pub fn denormalize<'t, T: Real>(y: Var<'t, T>, stats: &NormStats<T>) -> Result<Var<'t, T>> {
    let tape = y.tape();
    y.mul(tape.constant(stats.scale()))?.add(tape.constant(stats.mean.clone()))
}

/// `γ·x + β` over the channel axis.
pub fn revin<'t, T: Real>(x: Var<'t, T>, gamma: Var<'t, T>, beta: Var<'t, T>) -> Result<Var<'t, T>> {
    x.mul(gamma)?.add(beta)
}

/// `((y - β) / γ)·(std + δ) + mean`, with `|γ|` floored at `gamma_floor`.
pub fn inverse_revin<'t, T: Real>(
    y: Var<'t, T>,
    stats: &NormStats<T>,
    gamma: Var<'t, T>,
    beta: Var<'t, T>,
    gamma_floor: f64,
) -> Result<Var<'t, T>> {
    let g = gamma.floor_magnitude(T::c(gamma_floor)).reciprocal();
    denormalize(y.sub(beta)?.mul(g)?, stats)
}

/// Output of one forward pass.
pub struct Forecast<'t, T: Real> {
    /// `[B, τ, C]` in the original data scale.
    pub prediction: Var<'t, T>,
    pub stats: NormStats<T>,
}

#[derive(Debug, Clone)]
pub struct AprnetModel<T: Real> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub revin_gamma: ParamId,
    pub revin_beta: ParamId,
    pub encoder: Linear,
    pub pre_norm: LayerNorm,
    pub aplc: Option<AplcBlock>,
    pub post_norm: LayerNorm,
    /// Temporal decoder `L -> τ`.
    pub dec_time: Linear,
    /// Feature decoder `K -> C`.
    pub dec_feat: Linear,
}

impl<T: Real> AprnetModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let (l, tau, c, k) = (config.lookback, config.horizon, config.channels, config.latent_dim);
        let revin_gamma = params.add("revin.gamma", Tensor::ones(&[c]));
        let revin_beta = params.add("revin.beta", Tensor::zeros(&[c]));
        let encoder = Linear::new(&mut params, "encoder", c, k, &mut rng);
        let pre_norm = LayerNorm::new(&mut params, "pre_norm", k, config.layer_norm_eps);
        let aplc = if config.aplc.seq_enabled || config.aplc.chan_enabled {
            Some(AplcBlock::new(&mut params, l, k, &config.aplc, &mut rng)?)
        } else {
            None
        };
        let post_norm = LayerNorm::new(&mut params, "post_norm", k, config.layer_norm_eps);
        let dec_time = Linear::new(&mut params, "decoder.time", l, tau, &mut rng);
        let dec_feat = Linear::new(&mut params, "decoder.feature", k, c, &mut rng);
        Ok(Self {
            config,
            params,
            revin_gamma,
            revin_beta,
            encoder,
            pre_norm,
            aplc,
            post_norm,
            dec_time,
            dec_feat,
        })
    }

    /// Same parameters with the spectral block removed from the graph.
    pub fn without_aplc(&self) -> Self {
        let mut m = self.clone();
        m.aplc = None;
        m
    }

    /// Same model at another float width.
    pub fn cast<U: Real>(&self) -> AprnetModel<U> {
        AprnetModel {
            config: self.config.clone(),
            params: self.params.cast(),
            revin_gamma: self.revin_gamma,
            revin_beta: self.revin_beta,
            encoder: self.encoder.clone(),
            pre_norm: self.pre_norm.clone(),
            aplc: self.aplc.clone(),
            post_norm: self.post_norm.clone(),
            dec_time: self.dec_time.clone(),
            dec_feat: self.dec_feat.clone(),
        }
    }

    /// Sets both fusion weights and optionally freezes them.
    pub fn set_fusion(&mut self, alpha: f64, beta: f64, frozen: bool) {
        if let Some(block) = &self.aplc {
            let (a, b) = (block.alpha, block.beta);
            self.params.get_mut(a).data_mut()[0] = T::c(alpha);
            self.params.get_mut(b).data_mut()[0] = T::c(beta);
            self.params.set_frozen(a, frozen);
            self.params.set_frozen(b, frozen);
        }
    }

    pub fn count_parameters(&self) -> usize {
        self.params.scalar_count()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let s = x.shape();
        if s.len() != 3 || s[1] != self.config.lookback || s[2] != self.config.channels {
            return Err(Error::shape(
                s,
                &[0, self.config.lookback, self.config.channels],
                "model input [B, L, C]",
            ));
        }
        if !x.is_finite() {
            return Err(Error::Data("model input contains non-finite values".into()));
        }
        Ok(())
    }

    /// Forward pass recorded on `tape`: `[B, L, C] -> [B, τ, C]`.
    pub fn forward<'t>(&self, tape: &'t Tape<T>, x: &Tensor<T>) -> Result<Forecast<'t, T>> {
        self.check_input(x)?;
        let p = &self.params;
        let stats = NormStats::from_input(x, self.config.norm_eps)?;
        let gamma = tape.param(p, self.revin_gamma);
        let beta = tape.param(p, self.revin_beta);

        let xn = normalize(tape.constant(x.clone()), &stats)?;
        let xr = revin(xn, gamma, beta)?;
        let h = self.encoder.forward(tape, p, xr)?;
        let z = self.pre_norm.forward(tape, p, h)?;
        let y_hat = match &self.aplc {
            Some(block) => block.forward(tape, p, z)?,
            None => z,
        };
        let d = self.post_norm.forward(tape, p, y_hat)?;
        // [B, L, K] -> [B, K, L] -> [B, K, τ] -> [B, τ, K] -> [B, τ, C]
        let dt = self.dec_time.forward(tape, p, d.transpose(&[0, 2, 1])?)?;
        let y_bar = self.dec_feat.forward(tape, p, dt.transpose(&[0, 2, 1])?)?;
        let prediction = inverse_revin(y_bar, &stats, gamma, beta, self.config.gamma_floor)?;
        Ok(Forecast { prediction, stats })
    }

    /// Forward pass without keeping the graph.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        Ok(self.forward(&tape, x)?.prediction.value())
    }
}
