mod common;

use autostpp::numkit::{finite_diff, numeric_gradient, Activation, Tape, Tensor, Var};
use autostpp::Result;
use common::{rel_err, rng, uniform};

/// Checks tape gradients of `loss(inputs)` against central differences.
fn check_primitive(name: &str, shapes: &[&[usize]], lo: f64, hi: f64, loss: impl for<'t> Fn(&[Var<'t>]) -> Result<Var<'t>>) {
    let mut r = rng(name.len() as u64 * 7919);
    for trial in 0..100 {
        let inputs: Vec<Tensor> = shapes.iter().map(|s| uniform(&mut r, s, lo, hi)).collect();
        let tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone()).unwrap()).collect();
        let out = loss(&vars).unwrap();
        let grads = tape.backward(out).unwrap();
        for (i, x) in inputs.iter().enumerate() {
            let f = |xi: &Tensor| -> Result<f64> {
                let tape = Tape::new();
                let vars: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, t)| tape.constant(if j == i { xi.clone() } else { t.clone() }).unwrap())
                    .collect();
                loss(&vars)?.item()
            };
            let fd = numeric_gradient(&f, x, 1e-6).unwrap();
            let g = grads.by_index(i);
            for (a, b) in g.data().iter().zip(fd.data()) {
                assert!(rel_err(*a, *b, 1e-3) < 1e-5, "{name} trial {trial} input {i}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn every_primitive_matches_finite_differences() {
    let m: &[usize] = &[3, 4];
    check_primitive("add", &[m, m], -2.0, 2.0, |v| v[0].add(&v[1])?.mul(&v[0])?.sum());
    check_primitive("sub", &[m, m], -2.0, 2.0, |v| v[0].sub(&v[1])?.mul(&v[1])?.sum());
    check_primitive("mul", &[m, m], -2.0, 2.0, |v| v[0].mul(&v[1])?.sum());
    check_primitive("scalar_mul", &[m, &[1]], -2.0, 2.0, |v| v[0].mul(&v[1])?.mul(&v[0])?.sum());
    check_primitive("scalar_add", &[&[1], m], -2.0, 2.0, |v| v[0].add(&v[1])?.tanh()?.sum());
    check_primitive("scale", &[m], -2.0, 2.0, |v| v[0].scale(-1.7)?.add_scalar(0.3)?.tanh()?.sum());
    check_primitive("matmul", &[m, &[4, 2]], -2.0, 2.0, |v| v[0].matmul(&v[1])?.tanh()?.sum());
    check_primitive("matmul_t", &[m, &[5, 4]], -2.0, 2.0, |v| v[0].matmul_t(&v[1])?.tanh()?.sum());
    check_primitive("add_row", &[m, &[1, 4]], -2.0, 2.0, |v| v[0].add_row(&v[1])?.tanh()?.sum());
    check_primitive("mul_row", &[m, &[1, 4]], -2.0, 2.0, |v| v[0].mul_row(&v[1])?.tanh()?.sum());
    check_primitive("col_as_row", &[m], -2.0, 2.0, |v| v[0].col_as_row(2)?.tanh()?.sum());
    check_primitive("slice_rows", &[m], -2.0, 2.0, |v| v[0].slice_rows(1, 3)?.tanh()?.sum());
    check_primitive("segment_sum", &[m], -2.0, 2.0, |v| {
        v[0].segment_sum(vec![1, 0, 1].into(), 2)?.tanh()?.sum()
    });
    check_primitive("tanh", &[m], -2.0, 2.0, |v| v[0].tanh()?.mul(&v[0])?.sum());
    check_primitive("softplus", &[m], -2.0, 2.0, |v| v[0].softplus()?.mul(&v[0])?.sum());
    check_primitive("exp", &[m], -2.0, 2.0, |v| v[0].exp()?.sum());
    check_primitive("log", &[m], 0.1, 2.0, |v| v[0].log()?.mul(&v[0])?.sum());
    for act in [Activation::Tanh, Activation::Softplus, Activation::SoftplusCubed] {
        for order in 0..=3 {
            check_primitive(act.name(), &[m], -2.0, 2.0, move |v| v[0].act(act, order)?.sum());
        }
    }
}

fn mlp_loss<'t>(p: &[Var<'t>], x: &Var<'t>) -> Result<Var<'t>> {
    let h = x.matmul_t(&p[0])?.add_row(&p[1])?.tanh()?;
    h.matmul_t(&p[2])?.add_row(&p[3])?.sum()
}

#[test]
fn two_layer_mlp_gradients_match_finite_differences() {
    let mut r = rng(5);
    for _ in 0..10 {
        let params = [
            uniform(&mut r, &[6, 3], -1.0, 1.0),
            uniform(&mut r, &[1, 6], -1.0, 1.0),
            uniform(&mut r, &[1, 6], -1.0, 1.0),
            uniform(&mut r, &[1, 1], -1.0, 1.0),
        ];
        let x = uniform(&mut r, &[4, 3], -2.0, 2.0);
        let tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|t| tape.param(t.clone()).unwrap()).collect();
        let xv = tape.constant(x.clone()).unwrap();
        let grads = tape.backward(mlp_loss(&vars, &xv).unwrap()).unwrap();
        for (i, p) in params.iter().enumerate() {
            let f = |pi: &Tensor| -> Result<f64> {
                let tape = Tape::new();
                let vars: Vec<Var> = params
                    .iter()
                    .enumerate()
                    .map(|(j, t)| tape.constant(if j == i { pi.clone() } else { t.clone() }).unwrap())
                    .collect();
                let xv = tape.constant(x.clone())?;
                mlp_loss(&vars, &xv)?.item()
            };
            for k in 0..p.numel() {
                let fd = finite_diff(&f, p, &[k], 1e-5).unwrap();
                let g = grads.by_index(i).data()[k];
                assert!(rel_err(g, fd, 1e-2) < 1e-5, "param {i}[{k}]: {g} vs {fd}");
            }
        }
    }
}

#[test]
fn tape_replay_is_bit_identical() {
    let run = || {
        let mut r = rng(99);
        let w = uniform(&mut r, &[8, 3], -1.0, 1.0);
        let x = uniform(&mut r, &[16, 3], -2.0, 2.0);
        let tape = Tape::new();
        let wv = tape.param(w).unwrap();
        let xv = tape.constant(x).unwrap();
        let loss = xv.matmul_t(&wv).unwrap().softplus().unwrap().log().unwrap().sum().unwrap();
        let g = tape.backward(loss).unwrap();
        (loss.item().unwrap().to_bits(), g.by_index(0).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
    };
    assert_eq!(run(), run());
}

#[test]
fn finite_inputs_in_domain_stay_finite() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::column(vec![-700.0, -2.0, 0.0, 2.0, 700.0])).unwrap();
    for v in [x.tanh(), x.softplus(), x.act(Activation::SoftplusCubed, 3), x.act(Activation::Tanh, 3)] {
        assert!(v.unwrap().value().all_finite());
    }
    let big = tape.constant(Tensor::scalar(710.0)).unwrap().exp();
    assert!(big.is_err(), "exp overflow must surface as an error, not Inf");
}
