mod common;

use std::f64::consts::PI;

use aprnet_core::spectral::{irfft, reconstruct, rfft, to_amp_phase};
use aprnet_core::{Tape, Tensor};
use common::rng;
use proptest::prelude::*;

/// Direct `O(n²)` one-sided DFT.
fn dft(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    (0..=n / 2)
        .map(|k| {
            x.iter().enumerate().fold((0.0, 0.0), |(re, im), (t, &v)| {
                let a = -2.0 * PI * (k * t) as f64 / n as f64;
                (re + v * a.cos(), im + v * a.sin())
            })
        })
        .unzip()
}

fn forward(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let tape = Tape::new();
    let v = tape.constant(Tensor::new(&[x.len()], x.to_vec()).unwrap());
    let (re, im) = rfft(v, 0).unwrap();
    (re.value().into_data(), im.value().into_data())
}

fn inverse(re: &[f64], im: &[f64], n: usize) -> Vec<f64> {
    let tape = Tape::new();
    let r = tape.constant(Tensor::new(&[re.len()], re.to_vec()).unwrap());
    let i = tape.constant(Tensor::new(&[im.len()], im.to_vec()).unwrap());
    irfft(r, i, n, 0).unwrap().value().into_data()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn signal(n: usize, seed: u64) -> Vec<f64> {
    Tensor::<f64>::uniform(&[n], -1.0, 1.0, &mut rng(seed)).into_data()
}

#[test]
fn cosine_lands_in_bin_one() {
    let x: Vec<f64> = (0..8).map(|t| (2.0 * PI * t as f64 / 8.0).cos()).collect();
    let (re, im) = forward(&x);
    let (ore, oim) = dft(&x);
    assert!((ore[1] - 4.0).abs() < 1e-9 && oim[1].abs() < 1e-9);
    assert!(max_diff(&re, &ore) < 1e-9);
    assert!(max_diff(&im, &oim) < 1e-9);
    for k in [0, 2, 3, 4] {
        assert!(re[k].abs() < 1e-9 && im[k].abs() < 1e-9, "bin {k}");
    }
}

#[test]
fn bin_one_inverts_to_cosine() {
    let mut re = vec![0.0; 5];
    re[1] = 4.0;
    let x = inverse(&re, &[0.0; 5], 8);
    let want: Vec<f64> = (0..8).map(|t| (2.0 * PI * t as f64 / 8.0).cos()).collect();
    assert!(max_diff(&x, &want) < 1e-12);
}

#[test]
fn direct_dft_agreement_all_lengths() {
    for n in 2..=64 {
        let x = signal(n, n as u64);
        let (re, im) = forward(&x);
        let (ore, oim) = dft(&x);
        assert_eq!(re.len(), n / 2 + 1);
        assert!(max_diff(&re, &ore) < 1e-9, "n={n}");
        assert!(max_diff(&im, &oim) < 1e-9, "n={n}");
    }
}

#[test]
fn round_trip_all_lengths() {
    for n in 2..=64 {
        let x = signal(n, 100 + n as u64);
        let (re, im) = forward(&x);
        assert!(max_diff(&inverse(&re, &im, n), &x) < 1e-10, "n={n}");
    }
}

#[test]
fn mismatched_bins_rejected() {
    let tape = Tape::new();
    let r = tape.constant(Tensor::<f64>::zeros(&[4]));
    let i = tape.constant(Tensor::<f64>::zeros(&[4]));
    assert!(irfft(r, i, 8, 0).is_err());
    let short = tape.constant(Tensor::<f64>::zeros(&[1]));
    assert!(rfft(short, 0).is_err());
}

#[test]
fn pi_shift_negates_spectrum() {
    let x = signal(12, 7);
    let tape = Tape::new();
    let v = tape.constant(Tensor::new(&[12], x).unwrap());
    let (re, im) = rfft(v, 0).unwrap();
    let spec = to_amp_phase(re, im, 12).unwrap();
    let shape = spec.amplitude.shape();
    let gain = tape.constant(Tensor::ones(&shape));
    let shift = tape.constant(Tensor::full(&shape, PI));
    let (r2, i2) = reconstruct(&spec, Some(gain), Some(shift)).unwrap();
    for (a, b) in r2.value().data().iter().zip(re.value().data()) {
        assert!((a + b).abs() < 1e-9);
    }
    for (a, b) in i2.value().data().iter().zip(im.value().data()) {
        assert!((a + b).abs() < 1e-9);
    }
}

#[test]
fn zero_gain_silences_signal() {
    let tape = Tape::new();
    let v = tape.constant(Tensor::new(&[10], signal(10, 3)).unwrap());
    let (re, im) = rfft(v, 0).unwrap();
    let spec = to_amp_phase(re, im, 10).unwrap();
    let gain = tape.constant(Tensor::zeros(&spec.amplitude.shape()));
    let (r2, i2) = reconstruct(&spec, Some(gain), None).unwrap();
    let y = irfft(r2, i2, 10, 0).unwrap().value();
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn origin_has_epsilon_amplitude_and_zero_phase() {
    let tape = Tape::new();
    let z = tape.constant(Tensor::<f64>::zeros(&[1]));
    let s = to_amp_phase(z, z, 2).unwrap();
    assert!((s.amplitude.value().item() - 1e-8).abs() < 1e-20);
    assert_eq!(s.phase.value().item(), 0.0);
}

proptest! {
    #[test]
    fn parseval(x in prop::collection::vec(-10.0f64..10.0, 2..=64)) {
        let n = x.len();
        let (re, im) = forward(&x);
        let weighted: f64 = (0..re.len())
            .map(|k| {
                let w = if k == 0 || (n % 2 == 0 && k == n / 2) { 1.0 } else { 2.0 };
                w * (re[k] * re[k] + im[k] * im[k])
            })
            .sum();
        let energy: f64 = x.iter().map(|v| v * v).sum();
        prop_assert!((energy - weighted / n as f64).abs() < 1e-8 * energy.max(1.0));
    }

    #[test]
    fn linearity(
        pair in (2usize..=64).prop_flat_map(|n| (
            prop::collection::vec(-1.0f64..1.0, n),
            prop::collection::vec(-1.0f64..1.0, n),
        )),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let (x, y) = pair;
        let mix: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let (mr, mi) = forward(&mix);
        let (xr, xi) = forward(&x);
        let (yr, yi) = forward(&y);
        for k in 0..mr.len() {
            prop_assert!((mr[k] - (a * xr[k] + b * yr[k])).abs() < 1e-10);
            prop_assert!((mi[k] - (a * xi[k] + b * yi[k])).abs() < 1e-10);
        }
    }

    #[test]
    fn identity_reconstruction(x in prop::collection::vec(-5.0f64..5.0, 2..=64)) {
        let n = x.len();
        let tape = Tape::new();
        let v = tape.constant(Tensor::new(&[n], x.clone()).unwrap());
        let (re, im) = rfft(v, 0).unwrap();
        let spec = to_amp_phase(re, im, n).unwrap();
        let (r2, i2) = reconstruct(&spec, None, None).unwrap();
        let y = irfft(r2, i2, n, 0).unwrap().value();
        prop_assert!(max_diff(y.data(), &x) < 1e-6);
    }

    #[test]
    fn spectrum_invariants(x in prop::collection::vec(-5.0f64..5.0, 2..=64)) {
        let n = x.len();
        let tape = Tape::new();
        let v = tape.constant(Tensor::new(&[n], x).unwrap());
        let (re, im) = rfft(v, 0).unwrap();
        let spec = to_amp_phase(re, im, n).unwrap();
        let amp = spec.amplitude.value();
        let phase = spec.phase.value();
        prop_assert_eq!(amp.len(), n / 2 + 1);
        prop_assert!(amp.data().iter().all(|&a| a >= 0.0));
        let on_axis = |p: f64| p == 0.0 || (p.abs() - PI).abs() < 1e-12;
        prop_assert!(on_axis(phase.data()[0]));
        if n % 2 == 0 {
            prop_assert!(on_axis(phase.data()[n / 2]));
        }
    }
}
