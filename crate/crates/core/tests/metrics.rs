mod common;

use aprnet_core::train::mse_loss;
use aprnet_core::{mse_mae, smape_mase_owa, Tape, Tensor};
use common::rng;
use proptest::prelude::*;

#[test]
fn mse_mae_match_loop() {
    let p = Tensor::<f64>::normal(&[2, 3], 1.0, &mut rng(1)).into_data();
    let t = Tensor::<f64>::normal(&[2, 3], 1.0, &mut rng(2)).into_data();
    let (mut se, mut ae) = (0.0, 0.0);
    for i in 0..6 {
        se += (p[i] - t[i]) * (p[i] - t[i]);
        ae += (p[i] - t[i]).abs();
    }
    let (mse, mae) = mse_mae(&p, &t).unwrap();
    assert!((mse - se / 6.0).abs() < 1e-12);
    assert!((mae - ae / 6.0).abs() < 1e-12);
    assert_eq!(mse_mae(&[0.0, 0.0], &[1.0, -1.0]).unwrap(), (1.0, 1.0));
}

#[test]
fn matching_ratios_give_unit_owa() {
    let insample = [1.0, 2.0, 3.0];
    let r = smape_mase_owa(&[3.0, 3.0], &[2.0, 4.0], &insample, 1, 1.0, 1.0).unwrap();
    let r2 = smape_mase_owa(&[3.0, 3.0], &[2.0, 4.0], &insample, 1, r.smape, r.mase).unwrap();
    assert!((r2.owa - 1.0).abs() < 1e-15);
}

#[test]
fn loss_gradient_vanishes_at_target() {
    let y = Tensor::<f32>::normal(&[2, 4, 3], 1.0, &mut rng(3));
    let tape = Tape::new();
    let p = tape.leaf(y.clone().with_grad());
    let loss = mse_loss(p, &y).unwrap();
    let grads = tape.backward(loss).unwrap();
    assert!(grads.get(p).unwrap().iter().all(|&g| g == 0.0));
}

fn series(len: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (
        prop::collection::vec(-100.0f64..100.0, len),
        prop::collection::vec(-100.0f64..100.0, len),
    )
}

proptest! {
    #[test]
    fn scaled_errors_ranges_and_permutation(
        (pred, target) in (1usize..40).prop_flat_map(series),
        insample in prop::collection::vec(-10.0f64..10.0, 3..30),
        shift in 0usize..40,
    ) {
        let r = smape_mase_owa(&pred, &target, &insample, 1, 10.0, 1.0);
        let Ok(r) = r else { return Ok(()) };
        prop_assert!((0.0..=200.0).contains(&r.smape));
        prop_assert!(r.mase >= 0.0);

        let n = pred.len();
        let rot = |v: &[f64]| (0..n).map(|i| v[(i + shift) % n]).collect::<Vec<_>>();
        let (rp, rt) = (rot(&pred), rot(&target));
        let q = smape_mase_owa(&rp, &rt, &insample, 1, 10.0, 1.0).unwrap();
        prop_assert!((q.smape - r.smape).abs() < 1e-9);
        prop_assert!((q.mase - r.mase).abs() < 1e-9);
        let (a, b) = (mse_mae(&pred, &target).unwrap(), mse_mae(&rp, &rt).unwrap());
        prop_assert!((a.0 - b.0).abs() < 1e-9 * a.0.max(1.0));
        prop_assert!((a.1 - b.1).abs() < 1e-9 * a.1.max(1.0));
    }
}
