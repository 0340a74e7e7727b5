#![allow(dead_code)]

use aprnet_core::{ParamStore, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;

/// Gradient magnitude below which errors are measured absolutely.
/// Central differences at `STEP` carry roughly `1e-10` of rounding noise.
pub const GRAD_FLOOR: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `|a - n| / max(|a|, |n|, floor)`
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Max relative error between the tape gradient and central differences of
/// `Σ w ⊙ f(inputs)` with fixed random weights `w`, over every input element.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], seed: u64, f: F) -> f64
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Var<'t, f64>,
{
    let weights = {
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let shape = f(&tape, &vars).shape();
        Tensor::<f64>::uniform(&shape, -1.0, 1.0, &mut rng(seed ^ 0xabc))
    };
    let objective = |ins: &[Tensor<f64>]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<_> = ins.iter().map(|t| tape.constant(t.clone())).collect();
        let y = f(&tape, &vars);
        y.mul(tape.constant(weights.clone())).unwrap().sum_all().value().item()
    };
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone().with_grad())).collect();
    let y = f(&tape, &vars);
    let loss = y.mul(tape.constant(weights.clone())).unwrap().sum_all();
    let grads = tape.backward(loss).unwrap();
    let mut worst = 0.0f64;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[k].len()]);
        for i in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= STEP;
            let numeric = (objective(&plus) - objective(&minus)) / (2.0 * STEP);
            worst = worst.max(rel_err(analytic[i], numeric, GRAD_FLOOR));
        }
    }
    worst
}

/// Same as [`check_inputs`] but over every parameter element of `store`.
/// Returns the worst relative error and the name of the parameter holding it.
pub fn check_params<F>(store: &ParamStore<f64>, seed: u64, f: F) -> (f64, String)
where
    F: for<'t> Fn(&'t Tape<f64>, &ParamStore<f64>) -> Var<'t, f64>,
{
    let weights = {
        let tape = Tape::new();
        let shape = f(&tape, store).shape();
        Tensor::<f64>::uniform(&shape, -1.0, 1.0, &mut rng(seed ^ 0xdef))
    };
    let objective = |s: &ParamStore<f64>| -> f64 {
        let tape = Tape::new();
        let y = f(&tape, s);
        y.mul(tape.constant(weights.clone())).unwrap().sum_all().value().item()
    };
    let mut analytic_store = store.clone();
    analytic_store.zero_grad();
    {
        let tape = Tape::new();
        let y = f(&tape, &analytic_store);
        let loss = y.mul(tape.constant(weights.clone())).unwrap().sum_all();
        let mut grads_into = analytic_store.clone();
        tape.backward_into(loss, &mut grads_into).unwrap();
        analytic_store = grads_into;
    }
    let mut worst = (0.0f64, String::new());
    let mut probe = store.clone();
    for id in store.ids() {
        let analytic = analytic_store.get(id).grad.clone().unwrap();
        for i in 0..store.get(id).len() {
            let orig = store.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = orig + STEP;
            let up = objective(&probe);
            probe.get_mut(id).data_mut()[i] = orig - STEP;
            let down = objective(&probe);
            probe.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let e = rel_err(analytic[i], numeric, GRAD_FLOOR);
            if e > worst.0 {
                worst = (e, format!("{}[{i}] analytic {} numeric {}", store.name(id), analytic[i], numeric));
            }
        }
    }
    worst
}
