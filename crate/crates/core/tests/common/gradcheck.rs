//! Central finite-difference checks of the tape in 64-bit precision.

use fedsemi::nn::{BatchNormMode, LstmVars, RunningStats, Tape, Var};
use fedsemi::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CASES: usize = 100;
pub const TOLERANCE: f64 = 1e-4;
const STEP: f64 = 1e-6;

pub type Build = dyn Fn(&mut Tape<f64>, &[Var]) -> Var;

fn random(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

fn loss(inputs: &[Tensor<f64>], f: &Build) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let l = f(&mut tape, &vars);
    tape.value(l).item()
}

/// Largest relative error over all inputs, each measured as
/// `‖analytic − numeric‖ / (‖analytic‖ + ‖numeric‖)`.
pub fn max_rel_error(inputs: &[Tensor<f64>], f: &Build) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let l = f(&mut tape, &vars);
    let grads = tape.backward(l).unwrap();
    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.wrt(vars[i], input);
        let mut numeric = vec![0.0; input.len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let mut shifted = inputs.to_vec();
            shifted[i].data_mut()[j] += STEP;
            let up = loss(&shifted, f);
            shifted[i].data_mut()[j] -= 2.0 * STEP;
            let down = loss(&shifted, f);
            *slot = (up - down) / (2.0 * STEP);
        }
        let diff: f64 = analytic.data().iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum();
        let norm_a: f64 = analytic.data().iter().map(|a| a * a).sum();
        let norm_n: f64 = numeric.iter().map(|n| n * n).sum();
        let denom = norm_a.sqrt() + norm_n.sqrt();
        if denom > 1e-12 {
            worst = worst.max(diff.sqrt() / denom);
        }
    }
    worst
}

/// Inputs and loss of one random case of a layer.
pub struct Case {
    pub inputs: Vec<Tensor<f64>>,
    pub build: Box<Build>,
}

fn mse_to_target(target: Tensor<f64>) -> impl Fn(&mut Tape<f64>, Var) -> Var {
    move |tape, y| {
        let t = tape.constant(target.clone());
        tape.mse(y, t).unwrap()
    }
}

pub fn dense_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, inp, out) = (rng.random_range(1..5), rng.random_range(1..6), rng.random_range(1..6));
    let head = mse_to_target(random(&[n, out], 1.0, &mut rng));
    Case {
        inputs: vec![
            random(&[n, inp], 1.0, &mut rng),
            random(&[out, inp], 1.0, &mut rng),
            random(&[out], 1.0, &mut rng),
        ],
        build: Box::new(move |tape, v| {
            let y = tape.linear(v[0], v[1], Some(v[2])).unwrap();
            head(tape, y)
        }),
    }
}

pub fn conv1d_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, cin, cout) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
    let k = rng.random_range(1..4);
    let pad = rng.random_range(0..k);
    let len = rng.random_range(k..k + 5);
    let lout = len + 2 * pad + 1 - k;
    let head = mse_to_target(random(&[n, cout, lout], 1.0, &mut rng));
    Case {
        inputs: vec![
            random(&[n, cin, len], 1.0, &mut rng),
            random(&[cout, cin, k], 1.0, &mut rng),
            random(&[cout], 1.0, &mut rng),
        ],
        build: Box::new(move |tape, v| {
            let y = tape.conv1d(v[0], v[1], Some(v[2]), pad).unwrap();
            head(tape, y)
        }),
    }
}

pub fn conv1d_transpose_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, cin, cout) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
    let k = rng.random_range(1..4);
    let pad = rng.random_range(0..k);
    let len = rng.random_range(2 * pad + 1..2 * pad + 6);
    let lout = len + k - 1 - 2 * pad;
    let head = mse_to_target(random(&[n, cout, lout], 1.0, &mut rng));
    Case {
        inputs: vec![
            random(&[n, cin, len], 1.0, &mut rng),
            random(&[cin, cout, k], 1.0, &mut rng),
            random(&[cout], 1.0, &mut rng),
        ],
        build: Box::new(move |tape, v| {
            let y = tape.conv1d_transpose(v[0], v[1], Some(v[2]), pad).unwrap();
            head(tape, y)
        }),
    }
}

/// Training-mode batch norm, gradients through the batch statistics.
///
/// At least four values per channel: with two nearly equal values the batch
/// variance approaches epsilon and the loss curves too sharply for the
/// finite-difference step.
pub fn batchnorm_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, c, len) = (rng.random_range(2..5), rng.random_range(1..4), rng.random_range(2..5));
    let head = mse_to_target(random(&[n, c, len], 1.0, &mut rng));
    Case {
        inputs: vec![
            random(&[n, c, len], 2.0, &mut rng),
            random(&[c], 1.5, &mut rng),
            random(&[c], 1.0, &mut rng),
        ],
        build: Box::new(move |tape, v| {
            let mut rs = RunningStats::new(c);
            let y = tape.batchnorm(v[0], v[1], v[2], &mut rs, BatchNormMode::Train).unwrap();
            head(tape, y)
        }),
    }
}

/// One to three steps of a cell; inputs are h0, c0, the 12 gate tensors and
/// one input per step.
pub fn lstm_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, inp, hid) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
    let steps = rng.random_range(1..4);
    let mut inputs = vec![random(&[b, hid], 1.0, &mut rng), random(&[b, hid], 1.0, &mut rng)];
    for shape in [[hid, inp].as_slice(), &[hid, hid], &[hid]] {
        for _ in 0..4 {
            inputs.push(random(shape, 1.0, &mut rng));
        }
    }
    for _ in 0..steps {
        inputs.push(random(&[b, inp], 1.0, &mut rng));
    }
    let th = random(&[b, hid], 1.0, &mut rng);
    let tc = random(&[b, hid], 1.0, &mut rng);
    Case {
        inputs,
        build: Box::new(move |tape, v| {
            let p = LstmVars {
                w_ih: std::array::from_fn(|g| v[2 + g]),
                w_hh: std::array::from_fn(|g| v[6 + g]),
                bias: std::array::from_fn(|g| v[10 + g]),
            };
            let (mut h, mut c) = (v[0], v[1]);
            for &x in &v[14..] {
                (h, c) = tape.lstm_step(x, h, c, &p).unwrap();
            }
            let th = tape.constant(th.clone());
            let tc = tape.constant(tc.clone());
            let lh = tape.mse(h, th).unwrap();
            let lc = tape.mse(c, tc).unwrap();
            tape.add(lh, lc).unwrap()
        }),
    }
}

pub fn softmax_ce_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, k) = (rng.random_range(1..6), rng.random_range(2..6));
    let targets: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    Case {
        inputs: vec![random(&[n, k], 2.0, &mut rng)],
        build: Box::new(move |tape, v| {
            let p = tape.softmax(v[0]);
            tape.cross_entropy(p, &targets).unwrap()
        }),
    }
}

pub fn mse_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, k) = (rng.random_range(1..6), rng.random_range(1..6));
    Case {
        inputs: vec![random(&[n, k], 1.0, &mut rng), random(&[n, k], 1.0, &mut rng)],
        build: Box::new(|tape, v| tape.mse(v[0], v[1]).unwrap()),
    }
}

pub const LAYERS: [(&str, fn(u64) -> Case); 7] = [
    ("dense", dense_case),
    ("conv1d", conv1d_case),
    ("conv1d_transpose", conv1d_transpose_case),
    ("batchnorm", batchnorm_case),
    ("lstm_cell", lstm_case),
    ("softmax_cross_entropy", softmax_ce_case),
    ("mse", mse_case),
];

/// Worst relative error of one layer over [`CASES`] seeds.
pub fn check_layer(make: fn(u64) -> Case) -> f64 {
    (0..CASES as u64)
        .map(|seed| {
            let c = make(seed);
            max_rel_error(&c.inputs, &*c.build)
        })
        .fold(0.0, f64::max)
}
