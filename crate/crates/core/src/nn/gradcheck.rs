//! Central-difference gradient checks for every differentiable tape op.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[allow(unused_imports)]
use num_traits::Float;

use super::layer::ConvGeom;
use super::real::Real;
use super::tape::{Mode, Tape, Var};
use super::tensor::Tensor;

/// Ops covered by [`case`], by index.
pub const OPS: [&str; 12] = [
    "conv2d",
    "conv1d",
    "batch_norm2d",
    "batch_norm1d",
    "relu",
    "softmax",
    "global_avg_pool",
    "linear",
    "concat",
    "slice",
    "channel_scale",
    "cross_entropy",
];

/// Worst relative gradient error of op `op` over one random configuration.
pub fn check_op<F: Real>(op: usize, rng: &mut ChaCha8Rng, step: f64) -> f64 {
    let (inputs, build) = case::<F>(op, rng);
    grad_error(inputs, build, step, rng)
}

pub type Build<F> = Box<dyn Fn(&mut Tape<'static, F>, &[Var]) -> Var>;

fn rand_tensor<F: Real>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<F> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| F::of(rng.random_range(-1.0..1.0))).collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn run<F: Real>(inputs: &[Tensor<F>], build: &Build<F>) -> (Tape<'static, F>, Vec<Var>, Var) {
    let mut tape = Tape::<F>::standalone(Mode::Train);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars);
    (tape, vars, out)
}

fn objective<F: Real>(inputs: &[Tensor<F>], build: &Build<F>, seed: &[f64]) -> f64 {
    let (tape, _, out) = run(inputs, build);
    tape.value(out)
        .data()
        .iter()
        .zip(seed)
        .map(|(a, b)| a.f64() * b)
        .sum()
}

/// Max relative error between tape and central-difference gradients.
pub fn grad_error<F: Real>(
    inputs: Vec<Tensor<F>>,
    build: Build<F>,
    step: f64,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let (mut tape, vars, out) = run(&inputs, &build);
    let seed: Vec<f64> = (0..tape.value(out).len())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let seed_f: Vec<F> = seed.iter().map(|&v| F::of(v)).collect();
    tape.backward_with(out, &seed_f).unwrap();
    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = tape
            .grad(vars[i])
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![F::zero(); input.len()]);
        for j in 0..input.len() {
            let mut plus = inputs.clone();
            let mut minus = inputs.clone();
            let v = input.data()[j].f64();
            plus[i].data_mut()[j] = F::of(v + step);
            minus[i].data_mut()[j] = F::of(v - step);
            let num =
                (objective(&plus, &build, &seed) - objective(&minus, &build, &seed)) / (2.0 * step);
            let a = analytic[j].f64();
            let err = (a - num).abs() / (1.0f64).max(a.abs()).max(num.abs());
            worst = worst.max(err);
        }
    }
    worst
}

fn conv_case<F: Real>(rng: &mut ChaCha8Rng, one_d: bool) -> (Vec<Tensor<F>>, Build<F>) {
    let b = rng.random_range(1..3);
    let c = rng.random_range(1..4);
    let o = rng.random_range(1..4);
    let k = rng.random_range(1..4);
    let s = rng.random_range(1..3);
    let p = rng.random_range(0..k);
    let h = rng.random_range(k..k + 5);
    let geom = if one_d {
        ConvGeom::along_time(k, s, p)
    } else {
        ConvGeom::square(k, s, p)
    };
    let (xs, ws) = if one_d {
        (vec![b, c, h], vec![o, c, k])
    } else {
        let w = rng.random_range(k..k + 4);
        (vec![b, c, h, w], vec![o, c, k, k])
    };
    let inputs = vec![
        rand_tensor(rng, &xs),
        rand_tensor(rng, &ws),
        rand_tensor(rng, &[o]),
    ];
    (
        inputs,
        Box::new(move |t, v| t.conv(v[0], v[1], v[2], geom).unwrap()),
    )
}

pub fn case<F: Real>(kind: usize, rng: &mut ChaCha8Rng) -> (Vec<Tensor<F>>, Build<F>) {
    let b = rng.random_range(2..4);
    let c = rng.random_range(1..4);
    let t = rng.random_range(2..5);
    match kind {
        0 => conv_case(rng, false),
        1 => conv_case(rng, true),
        2 => {
            let shape = [b, c, t, rng.random_range(1..4)];
            let inputs = vec![
                rand_tensor(rng, &shape),
                rand_tensor(rng, &[c]),
                rand_tensor(rng, &[c]),
            ];
            (
                inputs,
                Box::new(|t, v| t.batch_norm(v[0], v[1], v[2], None).unwrap()),
            )
        }
        3 => {
            let shape = [b, c, t];
            let inputs = vec![
                rand_tensor(rng, &shape),
                rand_tensor(rng, &[c]),
                rand_tensor(rng, &[c]),
            ];
            (
                inputs,
                Box::new(|t, v| t.batch_norm(v[0], v[1], v[2], None).unwrap()),
            )
        }
        4 => {
            let mut x = rand_tensor::<F>(rng, &[b, c, t]);
            // keep away from the kink
            for v in x.data_mut() {
                if v.f64().abs() < 0.05 {
                    *v = F::of(0.3);
                }
            }
            (vec![x], Box::new(|t, v| t.relu(v[0])))
        }
        5 => {
            let axis = rng.random_range(0..3);
            let x = rand_tensor(rng, &[b, c, t]);
            (
                vec![x],
                Box::new(move |t, v| t.softmax(v[0], axis).unwrap()),
            )
        }
        6 => {
            let x = rand_tensor(rng, &[b, c, t, 2]);
            (vec![x], Box::new(|t, v| t.gap(v[0]).unwrap()))
        }
        7 => {
            let (d, o) = (rng.random_range(1..5), rng.random_range(1..5));
            let inputs = vec![
                rand_tensor(rng, &[b, d]),
                rand_tensor(rng, &[o, d]),
                rand_tensor(rng, &[o]),
            ];
            (inputs, Box::new(|t, v| t.linear(v[0], v[1], v[2]).unwrap()))
        }
        8 => {
            let axis = rng.random_range(0..3);
            let mut s1 = vec![b, c, t];
            let mut s2 = s1.clone();
            s1[axis] += 1;
            s2[axis] = rng.random_range(1..3);
            let inputs = vec![rand_tensor(rng, &s1), rand_tensor(rng, &s2)];
            (
                inputs,
                Box::new(move |t, v| t.concat(&[v[0], v[1], v[0]], axis).unwrap()),
            )
        }
        9 => {
            let x = rand_tensor(rng, &[b, c, t + 2]);
            let start = rng.random_range(0..3);
            (
                vec![x],
                Box::new(move |t, v| {
                    t.slice(v[0], 2, start, t.shape(v[0])[2] - 2 - start + 1)
                        .unwrap()
                }),
            )
        }
        10 => {
            let inputs = vec![
                rand_tensor(rng, &[b, c, t, 2]),
                rand_tensor(rng, &[b, c, 1]),
            ];
            (
                inputs,
                Box::new(|t, v| t.channel_scale(v[0], v[1]).unwrap()),
            )
        }
        _ => {
            let l = rng.random_range(2..6);
            let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..l)).collect();
            let eps = rng.random_range(0.0..0.3);
            let x = rand_tensor(rng, &[b, l]);
            (
                vec![x],
                Box::new(move |t, v| {
                    let p = t.softmax(v[0], 1).unwrap();
                    t.cross_entropy(p, &labels, eps).unwrap()
                }),
            )
        }
    }
}
