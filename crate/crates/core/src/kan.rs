//! KAN layer over B-spline bases, plus the affine and 1-D convolution cores
//! that can stand in for it inside a KLC head.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Real;
use crate::spline::SplineGrid;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct KanOptions {
    pub grid_intervals: usize,
    pub degree: usize,
    pub range: (f64, f64),
    /// Squash inputs with `tanh` before basis evaluation.
    pub squash: bool,
    /// Add the `silu` residual path.
    pub residual: bool,
    /// Std of the initial spline coefficients, relative to `1/sqrt(in_dim)`.
    pub coeff_init_scale: f64,
}

impl Default for KanOptions {
    fn default() -> Self {
        Self {
            grid_intervals: 5,
            degree: 3,
            range: (-1.0, 1.0),
            squash: true,
            residual: true,
            coeff_init_scale: 0.1,
        }
    }
}

/// Affine map `y = x·W + b` with `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Self::with_init(
            store,
            name,
            Tensor::uniform(&[in_dim, out_dim], -bound, bound, rng),
            Tensor::zeros(&[out_dim]),
        )
    }

    pub fn with_init<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        weight: Tensor<T>,
        bias: Tensor<T>,
    ) -> Self {
        let (in_dim, out_dim) = (weight.shape()[0], weight.shape()[1]);
        Self {
            in_dim,
            out_dim,
            weight: store.add(format!("{name}.weight"), weight),
            bias: store.add(format!("{name}.bias"), bias),
        }
    }

    pub fn forward<'t, T: Real>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        check_last(&x, self.in_dim, "linear input")?;
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        x.matmul(w)?.add(b)
    }

    pub fn parameter_count(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }
}

/// `out_j = Σ_i [Σ_k c_jik·B_k(x_i) + w_ji·silu(x_i)] + b_j`
#[derive(Debug, Clone)]
pub struct KanLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `[out, in, num_basis]`
    pub coeffs: ParamId,
    /// `[out, in]`; absent when the residual path is disabled.
    pub residual_weight: Option<ParamId>,
    pub bias: ParamId,
    pub grid: SplineGrid,
    pub squash: bool,
}

impl KanLayer {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        opts: &KanOptions,
        rng: &mut R,
    ) -> Result<Self> {
        let grid = SplineGrid::uniform(opts.range.0, opts.range.1, opts.grid_intervals, opts.degree)?;
        let nb = grid.num_basis();
        let scale = opts.coeff_init_scale / (in_dim as f64).sqrt();
        let bound = 1.0 / (in_dim as f64).sqrt();
        let coeffs = store.add(
            format!("{name}.coeffs"),
            Tensor::normal(&[out_dim, in_dim, nb], scale, rng),
        );
        let residual_weight = opts.residual.then(|| {
            store.add(
                format!("{name}.residual_weight"),
                Tensor::uniform(&[out_dim, in_dim], -bound, bound, rng),
            )
        });
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]));
        Ok(Self {
            in_dim,
            out_dim,
            coeffs,
            residual_weight,
            bias,
            grid,
            squash: opts.squash,
        })
    }

    pub fn num_basis(&self) -> usize {
        self.grid.num_basis()
    }

    pub fn forward<'t, T: Real>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let shape = x.shape();
        check_last(&x, self.in_dim, "kan input")?;
        let rows = x.value_len() / self.in_dim;
        let flat = x.reshape(&[rows, self.in_dim])?;
        let squashed = if self.squash { flat.tanh() } else { flat };
        let coeffs = tape.param(store, self.coeffs);
        let mut out = squashed.spline_contract(coeffs, &self.grid)?;
        if let Some(rw) = self.residual_weight {
            let w = tape.param(store, rw).transpose(&[1, 0])?;
            out = out.add(flat.silu()?.matmul(w)?)?;
        }
        out = out.add(tape.param(store, self.bias))?;
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = self.out_dim;
        out.reshape(&out_shape)
    }

    pub fn parameter_count(&self) -> usize {
        let spline = self.out_dim * self.in_dim * self.num_basis();
        let residual = if self.residual_weight.is_some() {
            self.out_dim * self.in_dim
        } else {
            0
        };
        spline + residual + self.out_dim
    }
}

/// Shared-kernel "same" convolution along the last axis followed by an affine map.
#[derive(Debug, Clone)]
pub struct Conv1dCore {
    pub kernel: ParamId,
    pub kernel_width: usize,
    pub affine: Linear,
}

impl Conv1dCore {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        kernel_width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if kernel_width % 2 == 0 {
            return Err(Error::Argument(format!(
                "conv1d kernel width must be odd, got {kernel_width}"
            )));
        }
        let mut k = Tensor::zeros(&[kernel_width]);
        k.data_mut()[kernel_width / 2] = T::one();
        let kernel = store.add(format!("{name}.kernel"), k);
        let affine = Linear::new(store, &format!("{name}.affine"), in_dim, out_dim, rng);
        Ok(Self {
            kernel,
            kernel_width,
            affine,
        })
    }

    pub fn forward<'t, T: Real>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        check_last(&x, self.affine.in_dim, "conv1d input")?;
        let k = tape.param(store, self.kernel);
        let y = x.conv1d_same(k)?;
        self.affine.forward(tape, store, y)
    }

    pub fn parameter_count(&self) -> usize {
        self.kernel_width + self.affine.parameter_count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CoreKind {
    Kan,
    Linear,
    Conv1d,
}

impl CoreKind {
    pub const ALL: [CoreKind; 3] = [CoreKind::Kan, CoreKind::Linear, CoreKind::Conv1d];

    pub fn as_str(self) -> &'static str {
        match self {
            CoreKind::Kan => "kan",
            CoreKind::Linear => "linear",
            CoreKind::Conv1d => "conv1d",
        }
    }
}

impl fmt::Display for CoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "kan" => Ok(CoreKind::Kan),
            "linear" => Ok(CoreKind::Linear),
            "conv1d" | "conv" => Ok(CoreKind::Conv1d),
            other => Err(Error::Argument(format!(
                "unknown KLC core kind {other:?} (expected kan, linear or conv1d)"
            ))),
        }
    }
}

/// Interchangeable layer mapping `[.., in] -> [.., out]`.
#[derive(Debug, Clone)]
pub enum KlcCore {
    Kan(KanLayer),
    Linear(Linear),
    Conv1d(Conv1dCore),
}

impl KlcCore {
    pub fn kind(&self) -> CoreKind {
        match self {
            KlcCore::Kan(_) => CoreKind::Kan,
            KlcCore::Linear(_) => CoreKind::Linear,
            KlcCore::Conv1d(_) => CoreKind::Conv1d,
        }
    }

    pub fn forward<'t, T: Real>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        match self {
            KlcCore::Kan(l) => l.forward(tape, store, x),
            KlcCore::Linear(l) => l.forward(tape, store, x),
            KlcCore::Conv1d(l) => l.forward(tape, store, x),
        }
    }

    pub fn parameter_count(&self) -> usize {
        match self {
            KlcCore::Kan(l) => l.parameter_count(),
            KlcCore::Linear(l) => l.parameter_count(),
            KlcCore::Conv1d(l) => l.parameter_count(),
        }
    }
}

/// Builds a core of the requested kind with fresh parameters in `store`.
#[allow(clippy::too_many_arguments)]
pub fn swap_core<T: Real, R: Rng + ?Sized>(
    kind: CoreKind,
    store: &mut ParamStore<T>,
    name: &str,
    in_dim: usize,
    out_dim: usize,
    kan: &KanOptions,
    conv_kernel: usize,
    rng: &mut R,
) -> Result<KlcCore> {
    Ok(match kind {
        CoreKind::Kan => KlcCore::Kan(KanLayer::new(store, name, in_dim, out_dim, kan, rng)?),
        CoreKind::Linear => KlcCore::Linear(Linear::new(store, name, in_dim, out_dim, rng)),
        CoreKind::Conv1d => {
            KlcCore::Conv1d(Conv1dCore::new(store, name, in_dim, out_dim, conv_kernel, rng)?)
        }
    })
}

fn check_last<T: Real>(x: &Var<'_, T>, want: usize, context: &'static str) -> Result<()> {
    let shape = x.shape();
    match shape.last() {
        Some(&d) if d == want => Ok(()),
        _ => Err(Error::shape(&shape, &[want], context)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn constant_coeffs_collapse_to_constant() {
        let mut store = ParamStore::<f64>::new();
        let opts = KanOptions {
            residual: false,
            ..KanOptions::default()
        };
        let layer = KanLayer::new(&mut store, "k", 1, 1, &opts, &mut rng()).unwrap();
        store.get_mut(layer.coeffs).data_mut().fill(0.75);
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_f64(&[5, 1], &[-3.0, -0.4, 0.0, 0.9, 10.0]).unwrap());
        let y = layer.forward(&tape, &store, x).unwrap().value();
        for v in y.data() {
            assert!((v - 0.75).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_layer_is_bias() {
        let mut store = ParamStore::<f64>::new();
        let layer = KanLayer::new(&mut store, "k", 3, 2, &KanOptions::default(), &mut rng()).unwrap();
        store.get_mut(layer.coeffs).data_mut().fill(0.0);
        store.get_mut(layer.residual_weight.unwrap()).data_mut().fill(0.0);
        store.get_mut(layer.bias).data_mut().copy_from_slice(&[1.5, -2.0]);
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_f64(&[2, 3], &[0.1, 0.2, 0.3, -4.0, 5.0, 6.0]).unwrap());
        let y = layer.forward(&tape, &store, x).unwrap().value();
        assert_eq!(y.data(), &[1.5, -2.0, 1.5, -2.0]);
    }

    #[test]
    fn residual_only_is_weighted_silu() {
        let mut store = ParamStore::<f64>::new();
        let layer = KanLayer::new(&mut store, "k", 2, 2, &KanOptions::default(), &mut rng()).unwrap();
        store.get_mut(layer.coeffs).data_mut().fill(0.0);
        let w = [0.5, -1.0, 2.0, 0.25];
        store.get_mut(layer.residual_weight.unwrap()).data_mut().copy_from_slice(&w);
        store.get_mut(layer.bias).data_mut().copy_from_slice(&[0.1, 0.2]);
        let xs = [0.3, -1.7];
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_f64(&[1, 2], &xs).unwrap());
        let y = layer.forward(&tape, &store, x).unwrap().value();
        let silu = |v: f64| v / (1.0 + (-v).exp());
        for j in 0..2 {
            let want = w[j * 2] * silu(xs[0]) + w[j * 2 + 1] * silu(xs[1]) + [0.1, 0.2][j];
            assert!((y.data()[j] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn input_dim_mismatch() {
        let mut store = ParamStore::<f64>::new();
        let layer = KanLayer::new(&mut store, "k", 3, 2, &KanOptions::default(), &mut rng()).unwrap();
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 4]));
        assert!(matches!(layer.forward(&tape, &store, x), Err(Error::Shape { .. })));
    }

    #[test]
    fn unsquashed_out_of_range_is_counted() {
        let mut store = ParamStore::<f64>::new();
        let opts = KanOptions {
            squash: false,
            ..KanOptions::default()
        };
        let layer = KanLayer::new(&mut store, "k", 2, 1, &opts, &mut rng()).unwrap();
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_f64(&[1, 2], &[0.5, 3.0]).unwrap());
        layer.forward(&tape, &store, x).unwrap();
        assert_eq!(tape.out_of_range_count(), 1);
    }

    #[test]
    fn linear_identity_and_conv_identity() {
        let mut store = ParamStore::<f64>::new();
        let lin = Linear::with_init(&mut store, "l", Tensor::eye(4), Tensor::zeros(&[4]));
        let conv = Conv1dCore::new(&mut store, "c", 4, 4, 3, &mut rng()).unwrap();
        store.get_mut(conv.affine.weight).data_mut().copy_from_slice(Tensor::<f64>::eye(4).data());
        let data = [1.0, -2.0, 3.5, 0.25, 9.0, 8.0, 7.0, 6.0];
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_f64(&[2, 4], &data).unwrap());
        assert_eq!(lin.forward(&tape, &store, x).unwrap().value().data(), &data);
        assert_eq!(store.get(conv.kernel).data(), &[0.0, 1.0, 0.0]);
        assert_eq!(conv.forward(&tape, &store, x).unwrap().value().data(), &data);
    }

    #[test]
    fn core_kinds_share_shape_contract() {
        let mut store = ParamStore::<f64>::new();
        let tape = Tape::new();
        let x = tape.constant(Tensor::normal(&[2, 3, 9], 1.0, &mut rng()));
        for kind in CoreKind::ALL {
            let core = swap_core(kind, &mut store, kind.as_str(), 9, 9, &KanOptions::default(), 3, &mut rng())
                .unwrap();
            assert_eq!(core.kind(), kind);
            assert_eq!(core.forward(&tape, &store, x).unwrap().shape(), vec![2, 3, 9]);
        }
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("KAN".parse::<CoreKind>().unwrap(), CoreKind::Kan);
        assert_eq!("conv1d".parse::<CoreKind>().unwrap(), CoreKind::Conv1d);
        assert!(matches!("mlp".parse::<CoreKind>(), Err(Error::Argument(_))));
        let mut store = ParamStore::<f64>::new();
        assert!(Conv1dCore::new(&mut store, "c", 4, 4, 2, &mut rng()).is_err());
    }

    #[test]
    fn parameter_counts_match_store() {
        let mut store = ParamStore::<f64>::new();
        let layer = KanLayer::new(&mut store, "k", 7, 5, &KanOptions::default(), &mut rng()).unwrap();
        assert_eq!(layer.parameter_count(), store.scalar_count());
        assert_eq!(layer.parameter_count(), 5 * 7 * 8 + 5 * 7 + 5);
    }
}
