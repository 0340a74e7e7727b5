//! Amplitude-phase local correlation block.
//!
//! Each branch transforms the latent `[B, L, K]` along one axis, derives a
//! per-bin gain from the amplitude spectrum and a per-bin phase shift from
//! the phase spectrum, rebuilds the spectrum and returns to the time domain.
//! The two branches are fused residually: `z + α·K₁ + β·K₂`.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::kan::{swap_core, CoreKind, KanOptions, KlcCore, Linear};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Real;
use crate::spectral::{self, num_bins};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateActivation {
    Sigmoid,
    /// Softmax across the frequency bins of each lane.
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchAxis {
    /// Transform along the look-back axis `L`.
    Temporal,
    /// Transform along the latent-channel axis `K`.
    Channel,
}

impl BranchAxis {
    fn axis(self) -> usize {
        match self {
            BranchAxis::Temporal => 1,
            BranchAxis::Channel => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AplcConfig {
    pub seq_enabled: bool,
    pub chan_enabled: bool,
    pub amp_enabled: bool,
    pub phase_enabled: bool,
    pub core: CoreKind,
    pub kan: KanOptions,
    pub conv_kernel: usize,
    pub gate: GateActivation,
    /// Initial gate value produced by the sigmoid head.
    pub gate_init: f64,
}

impl Default for AplcConfig {
    fn default() -> Self {
        Self {
            seq_enabled: true,
            chan_enabled: true,
            amp_enabled: true,
            phase_enabled: true,
            core: CoreKind::Kan,
            kan: KanOptions::default(),
            conv_kernel: 3,
            gate: GateActivation::Sigmoid,
            gate_init: 1.0 - 1e-3,
        }
    }
}

/// Core layer followed by an alignment map, both over the frequency axis.
#[derive(Debug, Clone)]
pub struct HeadPath {
    pub core: KlcCore,
    pub align: Linear,
}

impl HeadPath {
    fn forward<'t, T: Real>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let local = self.core.forward(tape, store, x)?;
        self.align.forward(tape, store, local)
    }

    fn parameter_count(&self) -> usize {
        self.core.parameter_count() + self.align.parameter_count()
    }
}

/// Gate and shift producers for one branch. A disabled path is `None`.
#[derive(Debug, Clone)]
pub struct KlcHead {
    pub bins: usize,
    pub amp: Option<HeadPath>,
    pub phase: Option<HeadPath>,
    pub gate: GateActivation,
}

impl KlcHead {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        bins: usize,
        cfg: &AplcConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let mut path = |label: &str, bias: f64, rng: &mut R| -> Result<HeadPath> {
            let core = swap_core(
                cfg.core,
                store,
                &format!("{name}.{label}_core"),
                bins,
                bins,
                &cfg.kan,
                cfg.conv_kernel,
                rng,
            )?;
            let align = Linear::with_init(
                store,
                &format!("{name}.{label}_align"),
                Tensor::zeros(&[bins, bins]),
                Tensor::full(&[bins], T::c(bias)),
            );
            Ok(HeadPath { core, align })
        };
        let gate_bias = match cfg.gate {
            GateActivation::Sigmoid => logit(cfg.gate_init),
            GateActivation::Softmax => 0.0,
        };
        let amp = if cfg.amp_enabled {
            Some(path("amp", gate_bias, rng)?)
        } else {
            None
        };
        let phase = if cfg.phase_enabled {
            Some(path("phase", 0.0, rng)?)
        } else {
            None
        };
        Ok(Self {
            bins,
            amp,
            phase,
            gate: cfg.gate,
        })
    }

    /// Gate in `(0, 1)` from amplitude spectra laid out `[.., bins]`.
    pub fn gate<'t, T: Real>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        amplitude: Var<'t, T>,
    ) -> Result<Option<Var<'t, T>>> {
        let Some(path) = &self.amp else { return Ok(None) };
        let logits = path.forward(tape, store, amplitude)?;
        Ok(Some(match self.gate {
            GateActivation::Sigmoid => logits.sigmoid(),
            GateActivation::Softmax => logits.softmax_last(),
        }))
    }

    /// Unbounded phase shift in radians from phase spectra laid out `[.., bins]`.
    pub fn shift<'t, T: Real>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        phase: Var<'t, T>,
    ) -> Result<Option<Var<'t, T>>> {
        match &self.phase {
            Some(path) => path.forward(tape, store, phase).map(Some),
            None => Ok(None),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.amp.iter().chain(self.phase.iter()).map(HeadPath::parameter_count).sum()
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// One spectral branch: FFT along `axis`, gate/shift from the head, rebuild, inverse FFT.
pub fn branch_forward<'t, T: Real>(
    tape: &'t Tape<T>,
    store: &ParamStore<T>,
    z: Var<'t, T>,
    axis: BranchAxis,
    head: &KlcHead,
) -> Result<Var<'t, T>> {
    let shape = z.shape();
    if shape.len() != 3 {
        return Err(Error::shape(&shape, &[0, 0, 0], "branch input must be [B, L, K]"));
    }
    let ax = axis.axis();
    let n = shape[ax];
    if num_bins(n) != head.bins {
        return Err(Error::shape(&shape, &[head.bins], "branch bins vs head"));
    }
    let (re, im) = spectral::rfft(z, ax)?;
    let spec = spectral::to_amp_phase(re, im, n)?;
    // Heads work with the frequency axis last.
    let to_last = |v: Var<'t, T>| -> Result<Var<'t, T>> {
        match axis {
            BranchAxis::Temporal => v.transpose(&[0, 2, 1]),
            BranchAxis::Channel => Ok(v),
        }
    };
    let gate = match head.amp {
        Some(_) => head.gate(tape, store, to_last(spec.amplitude)?)?.map(to_last).transpose()?,
        None => None,
    };
    let shift = match head.phase {
        Some(_) => head.shift(tape, store, to_last(spec.phase)?)?.map(to_last).transpose()?,
        None => None,
    };
    let (re2, im2) = spectral::reconstruct(&spec, gate, shift)?;
    spectral::irfft(re2, im2, n, ax)
}

#[derive(Debug, Clone)]
pub struct AplcBlock {
    pub seq_head: Option<KlcHead>,
    pub chan_head: Option<KlcHead>,
    /// Fusion weight of the temporal branch, shape `[1]`.
    pub alpha: ParamId,
    /// Fusion weight of the channel branch, shape `[1]`.
    pub beta: ParamId,
    pub config: AplcConfig,
}

impl AplcBlock {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        lookback: usize,
        latent: usize,
        cfg: &AplcConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if lookback < 2 || latent < 2 {
            return Err(Error::Config(format!(
                "spectral branches need lookback and latent dim >= 2 (got {lookback}, {latent})"
            )));
        }
        let seq_head = if cfg.seq_enabled {
            Some(KlcHead::new(store, "aplc.seq", num_bins(lookback), cfg, rng)?)
        } else {
            None
        };
        let chan_head = if cfg.chan_enabled {
            Some(KlcHead::new(store, "aplc.chan", num_bins(latent), cfg, rng)?)
        } else {
            None
        };
        let alpha = store.add("aplc.alpha", Tensor::zeros(&[1]));
        let beta = store.add("aplc.beta", Tensor::zeros(&[1]));
        Ok(Self {
            seq_head,
            chan_head,
            alpha,
            beta,
            config: cfg.clone(),
        })
    }

    /// `z + α·K₁·[seq] + β·K₂·[chan]`
    pub fn forward<'t, T: Real>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        z: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let mut out = z;
        if let Some(head) = &self.seq_head {
            let k1 = branch_forward(tape, store, z, BranchAxis::Temporal, head)?;
            out = out.add(tape.param(store, self.alpha).mul(k1)?)?;
        }
        if let Some(head) = &self.chan_head {
            let k2 = branch_forward(tape, store, z, BranchAxis::Channel, head)?;
            out = out.add(tape.param(store, self.beta).mul(k2)?)?;
        }
        Ok(out)
    }

    pub fn parameter_count(&self) -> usize {
        2 + self.seq_head.iter().chain(self.chan_head.iter()).map(KlcHead::parameter_count).sum::<usize>()
    }
}
