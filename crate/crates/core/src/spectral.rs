//! One-sided real FFT along any axis, amplitude/phase split, and the
//! gain/shift spectral reconstruction.
//!
//! Convention: forward transform is un-normalized
//! (`X_k = Σ_t x_t e^{-2πikt/n}`, `k = 0..=n/2`), the inverse carries `1/n`.
//! The imaginary parts of the DC bin and, for even `n`, the Nyquist bin are
//! stored as exact zeros.

use rustfft::num_complex::Complex;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::split_axis;

/// Smoothing term inside the amplitude square root.
pub const AMP_EPS: f64 = 1e-8;

pub fn num_bins(n: usize) -> usize {
    n / 2 + 1
}

/// Amplitude/phase pair over one-sided bins.
#[derive(Clone, Copy)]
pub struct Spectrum<'t, T: Real> {
    pub amplitude: Var<'t, T>,
    pub phase: Var<'t, T>,
    pub source_length: usize,
}

/// Forward one-sided transform along `axis`. Returns `(re, im)`.
pub fn rfft<'t, T: Real>(x: Var<'t, T>, axis: usize) -> Result<(Var<'t, T>, Var<'t, T>)> {
    let packed = x.tape().rfft_packed(x, axis)?;
    Ok((packed.slice_first(0)?, packed.slice_first(1)?))
}

/// Inverse of [`rfft`]; `source_length` is the time-domain extent to restore.
pub fn irfft<'t, T: Real>(
    re: Var<'t, T>,
    im: Var<'t, T>,
    source_length: usize,
    axis: usize,
) -> Result<Var<'t, T>> {
    re.tape().irfft(re, im, source_length, axis)
}

/// `amplitude = sqrt(re² + im² + ε²)`, `phase = atan2(im, re)`.
pub fn to_amp_phase<'t, T: Real>(
    re: Var<'t, T>,
    im: Var<'t, T>,
    source_length: usize,
) -> Result<Spectrum<'t, T>> {
    let power = re.mul(re)?.add(im.mul(im)?)?;
    let amplitude = power.add_scalar(T::c(AMP_EPS * AMP_EPS)).sqrt();
    let phase = im.atan2(re)?;
    Ok(Spectrum {
        amplitude,
        phase,
        source_length,
    })
}

/// Complex pair from a spectrum scaled by `gain` and rotated by `shift`:
/// `re = gain·A·cos(shift + P)`, `im = gain·A·sin(shift + P)`.
/// `None` stands for gain ≡ 1 / shift ≡ 0.
pub fn reconstruct<'t, T: Real>(
    spec: &Spectrum<'t, T>,
    gain: Option<Var<'t, T>>,
    shift: Option<Var<'t, T>>,
) -> Result<(Var<'t, T>, Var<'t, T>)> {
    let shape = spec.amplitude.shape();
    for v in gain.iter().chain(shift.iter()) {
        if v.shape() != shape {
            return Err(Error::shape(&shape, &v.shape(), "spectral reconstruction"));
        }
    }
    let angle = match shift {
        Some(s) => s.add(spec.phase)?,
        None => spec.phase,
    };
    let mag = match gain {
        Some(g) => g.mul(spec.amplitude)?,
        None => spec.amplitude,
    };
    Ok((mag.mul(angle.cos())?, mag.mul(angle.sin())?))
}

fn gather_lanes<T: Real>(
    data: &[T],
    outer: usize,
    extent: usize,
    inner: usize,
    n: usize,
    buf: &mut Vec<Complex<T>>,
) {
    buf.clear();
    buf.resize(outer * inner * n, Complex::new(T::zero(), T::zero()));
    for o in 0..outer {
        for i in 0..inner {
            let lane = &mut buf[(o * inner + i) * n..(o * inner + i + 1) * n];
            for t in 0..extent.min(n) {
                lane[t].re = data[(o * extent + t) * inner + i];
            }
        }
    }
}

/// Raw forward kernel. `shape[axis]` is the signal length; the returned
/// vectors are laid out with that axis replaced by `n/2 + 1` bins.
pub(crate) fn rfft_raw<T: Real>(data: &[T], shape: &[usize], axis: usize) -> (Vec<T>, Vec<T>) {
    let (outer, n, inner) = split_axis(shape, axis);
    let nb = num_bins(n);
    let mut buf = Vec::new();
    gather_lanes(data, outer, n, inner, n, &mut buf);
    T::fft_plan(n, false).process(&mut buf);
    let mut re = vec![T::zero(); outer * nb * inner];
    let mut im = vec![T::zero(); outer * nb * inner];
    for o in 0..outer {
        for i in 0..inner {
            let lane = &buf[(o * inner + i) * n..(o * inner + i + 1) * n];
            for k in 0..nb {
                let dst = (o * nb + k) * inner + i;
                re[dst] = lane[k].re;
                im[dst] = lane[k].im;
            }
            im[(o * nb) * inner + i] = T::zero();
            if n % 2 == 0 {
                im[(o * nb + nb - 1) * inner + i] = T::zero();
            }
        }
    }
    (re, im)
}

/// Raw inverse kernel; `shape` is the bin-domain shape (axis extent `n/2 + 1`).
pub(crate) fn irfft_raw<T: Real>(
    re: &[T],
    im: &[T],
    shape: &[usize],
    axis: usize,
    n: usize,
) -> Vec<T> {
    let (outer, nb, inner) = split_axis(shape, axis);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); outer * inner * n];
    for o in 0..outer {
        for i in 0..inner {
            let lane = &mut buf[(o * inner + i) * n..(o * inner + i + 1) * n];
            for k in 0..nb {
                let src = (o * nb + k) * inner + i;
                let mut v = Complex::new(re[src], im[src]);
                if k == 0 || (n % 2 == 0 && k == nb - 1) {
                    v.im = T::zero();
                }
                lane[k] = v;
                if k > 0 && n - k > k {
                    lane[n - k] = v.conj();
                }
            }
        }
    }
    T::fft_plan(n, true).process(&mut buf);
    let scale = T::one() / T::c(n as f64);
    let mut out = vec![T::zero(); outer * n * inner];
    for o in 0..outer {
        for i in 0..inner {
            let lane = &buf[(o * inner + i) * n..(o * inner + i + 1) * n];
            for t in 0..n {
                out[(o * n + t) * inner + i] = lane[t].re * scale;
            }
        }
    }
    out
}

/// Adjoint of [`rfft_raw`]: `dx_t = Re Σ_k (gre_k + i·gim_k) e^{+2πikt/n}`.
pub(crate) fn rfft_adjoint<T: Real>(
    gre: &[T],
    gim: &[T],
    bin_shape: &[usize],
    axis: usize,
    n: usize,
) -> Vec<T> {
    let (outer, nb, inner) = split_axis(bin_shape, axis);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); outer * inner * n];
    for o in 0..outer {
        for i in 0..inner {
            let lane = &mut buf[(o * inner + i) * n..(o * inner + i + 1) * n];
            for k in 0..nb {
                let src = (o * nb + k) * inner + i;
                let pinned = k == 0 || (n % 2 == 0 && k == nb - 1);
                lane[k] = Complex::new(gre[src], if pinned { T::zero() } else { gim[src] });
            }
        }
    }
    T::fft_plan(n, true).process(&mut buf);
    let mut out = vec![T::zero(); outer * n * inner];
    for o in 0..outer {
        for i in 0..inner {
            let lane = &buf[(o * inner + i) * n..(o * inner + i + 1) * n];
            for t in 0..n {
                out[(o * n + t) * inner + i] = lane[t].re;
            }
        }
    }
    out
}

/// Adjoint of [`irfft_raw`]: `(w_k / n) · rfft(g)_k` with one-sided weights
/// `w = 1` at DC/Nyquist and `2` elsewhere.
pub(crate) fn irfft_adjoint<T: Real>(
    g: &[T],
    time_shape: &[usize],
    axis: usize,
) -> (Vec<T>, Vec<T>) {
    let (outer, n, inner) = split_axis(time_shape, axis);
    let nb = num_bins(n);
    let (mut re, mut im) = rfft_raw(g, time_shape, axis);
    let inv_n = T::one() / T::c(n as f64);
    for o in 0..outer {
        for k in 0..nb {
            let edge = k == 0 || (n % 2 == 0 && k == nb - 1);
            let w = if edge { inv_n } else { inv_n + inv_n };
            for i in 0..inner {
                let idx = (o * nb + k) * inner + i;
                re[idx] *= w;
                im[idx] *= w;
            }
        }
    }
    (re, im)
}
