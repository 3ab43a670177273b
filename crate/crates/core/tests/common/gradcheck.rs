//! Central finite-difference checks of the differentiable ops at 64-bit.
//! Each check scalarizes the op output with a BCE against fixed soft
//! targets and compares tape gradients with central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spreadcast::numerics::{Activation, BnMode, Graph, RngStream, Tape, Tensor, Var};

pub const SHAPES_PER_OP: usize = 20;
pub const REL_TOL: f64 = 1e-4;
const H: f64 = 1e-6;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(lo..hi))
}

/// Values bounded away from zero, so kinks at 0 are never straddled.
fn rand_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.gen_range(0.05..1.5);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn dim(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.gen_range(lo..=hi)
}

type Build = dyn Fn(&mut Tape<f64>, &[Var]) -> Var;

/// Scalarizes `build`'s output with a BCE against fixed soft targets so
/// every output element gets a distinct upstream weight, then compares the
/// tape gradient of every input with central differences.
fn check(op: &str, inputs: &[Tensor<f64>], build: &Build, seed: u64) -> Result<f64, String> {
    let targets = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
        let out = build(&mut tape, &vars);
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        rand_tensor(&mut r, tape.value(out).shape(), 0.0, 1.0)
    };
    let loss_of = |ins: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.leaf(t.clone(), false)).collect();
        let out = build(&mut tape, &vars);
        let t = tape.input(targets.clone());
        let l = tape.bce_with_logits(&out, &t).unwrap();
        tape.value(l).item()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = build(&mut tape, &vars);
    let t = tape.input(targets.clone());
    let loss = tape.bce_with_logits(&out, &t).unwrap();
    let grads = tape.backward(loss).unwrap();

    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let analytic: Vec<f64> = match grads.get(vars[i]) {
            Some(g) => g.to_vec(),
            None => vec![0.0; input.numel()],
        };
        let mut numeric = Vec::with_capacity(input.numel());
        for j in 0..input.numel() {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            let mut p = input.to_vec();
            p[j] += H;
            plus[i] = Tensor::new(input.shape(), p).unwrap();
            let mut m = input.to_vec();
            m[j] -= H;
            minus[i] = Tensor::new(input.shape(), m).unwrap();
            numeric.push((loss_of(&plus) - loss_of(&minus)) / (2.0 * H));
        }
        let diff: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let scale = na.max(nn);
        if scale < 1e-12 {
            continue;
        }
        let rel = diff / scale;
        if !(rel < REL_TOL) {
            return Err(format!(
                "{op}: input {i} relative error {rel:e} (|g| = {scale:e})"
            ));
        }
        worst = worst.max(rel);
    }
    Ok(worst)
}

fn run_cases(
    op: &str,
    mut case: impl FnMut(&mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Box<Build>),
) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(op.bytes().map(u64::from).sum());
    let mut worst: f64 = 0.0;
    for s in 0..SHAPES_PER_OP {
        let (inputs, build) = case(&mut rng);
        worst = worst.max(check(op, &inputs, &*build, s as u64)?);
    }
    Ok(worst)
}

pub fn conv_shapes(rng: &mut ChaCha8Rng) -> ([usize; 5], [usize; 3], [usize; 3], usize) {
    let x = [
        dim(rng, 1, 2),
        dim(rng, 1, 4),
        dim(rng, 1, 5),
        dim(rng, 1, 5),
        dim(rng, 1, 3),
    ];
    let k = [dim(rng, 1, 3), dim(rng, 1, 4), dim(rng, 1, 4)];
    let s = [dim(rng, 1, 2), dim(rng, 1, 2), dim(rng, 1, 3)];
    (x, k, s, dim(rng, 1, 3))
}

pub fn conv3d_gradients() -> Result<f64, String> {
    run_cases("conv3d", |rng| {
        let (x, k, s, cout) = conv_shapes(rng);
        let inputs = vec![
            rand_tensor(rng, &x, -1.0, 1.0),
            rand_tensor(rng, &[k[0], k[1], k[2], x[4], cout], -0.5, 0.5),
            rand_tensor(rng, &[cout], -0.2, 0.2),
        ];
        (
            inputs,
            Box::new(move |t: &mut Tape<f64>, v: &[Var]| t.conv3d(&v[0], &v[1], &v[2], s).unwrap()),
        )
    })
}

pub fn conv3d_transpose_gradients() -> Result<f64, String> {
    run_cases("conv3d_transpose", |rng| {
        let (x, k, s, cout) = conv_shapes(rng);
        let inputs = vec![
            rand_tensor(rng, &x, -1.0, 1.0),
            rand_tensor(rng, &[k[0], k[1], k[2], cout, x[4]], -0.5, 0.5),
            rand_tensor(rng, &[cout], -0.2, 0.2),
        ];
        (
            inputs,
            Box::new(move |t: &mut Tape<f64>, v: &[Var]| {
                t.conv3d_transpose(&v[0], &v[1], &v[2], s).unwrap()
            }),
        )
    })
}

fn small_shape(rng: &mut ChaCha8Rng) -> Vec<usize> {
    vec![
        dim(rng, 1, 2),
        dim(rng, 1, 3),
        dim(rng, 1, 4),
        dim(rng, 1, 4),
        dim(rng, 1, 3),
    ]
}

pub fn batch_norm_train_gradients() -> Result<f64, String> {
    run_cases("batch_norm_train", |rng| {
        let mut shape = small_shape(rng);
        // at least two samples per channel so the batch variance is nonzero
        shape[2] = shape[2].max(2);
        let c = shape[4];
        let inputs = vec![
            rand_tensor(rng, &shape, -2.0, 2.0),
            rand_tensor(rng, &[c], 0.5, 1.5),
            rand_tensor(rng, &[c], -0.5, 0.5),
        ];
        (
            inputs,
            Box::new(|t: &mut Tape<f64>, v: &[Var]| {
                t.batch_norm(&v[0], &v[1], &v[2], BnMode::Train, 1e-3)
                    .unwrap()
                    .0
            }),
        )
    })
}

pub fn batch_norm_infer_gradients() -> Result<f64, String> {
    run_cases("batch_norm_infer", |rng| {
        let shape = small_shape(rng);
        let c = shape[4];
        let mean = rand_tensor(rng, &[c], -0.5, 0.5).to_vec();
        let var = rand_tensor(rng, &[c], 0.2, 2.0).to_vec();
        let inputs = vec![
            rand_tensor(rng, &shape, -2.0, 2.0),
            rand_tensor(rng, &[c], 0.5, 1.5),
            rand_tensor(rng, &[c], -0.5, 0.5),
        ];
        (
            inputs,
            Box::new(move |t: &mut Tape<f64>, v: &[Var]| {
                t.batch_norm(
                    &v[0],
                    &v[1],
                    &v[2],
                    BnMode::Infer {
                        mean: &mean,
                        var: &var,
                    },
                    1e-3,
                )
                .unwrap()
                .0
            }),
        )
    })
}

pub fn dropout_gradients() -> Result<f64, String> {
    run_cases("dropout", |rng| {
        let shape = small_shape(rng);
        let seed = rng.gen::<u64>();
        let rate = rng.gen_range(0.1..0.7);
        (
            vec![rand_tensor(rng, &shape, -2.0, 2.0)],
            Box::new(move |t: &mut Tape<f64>, v: &[Var]| {
                t.dropout(&v[0], rate, &mut RngStream::new(seed, 0), true)
                    .unwrap()
            }),
        )
    })
}

pub fn activation_gradients() -> Result<f64, String> {
    let kinds = [
        Activation::Identity,
        Activation::Relu,
        Activation::LeakyRelu(0.2),
        Activation::Tanh,
        Activation::Sigmoid,
    ];
    let mut worst: f64 = 0.0;
    for kind in kinds {
        let w = run_cases(&format!("activation {kind:?}"), |rng| {
            let shape = small_shape(rng);
            (
                vec![rand_away_from_zero(rng, &shape)],
                Box::new(move |t: &mut Tape<f64>, v: &[Var]| t.activation(&v[0], kind).unwrap()),
            )
        })?;
        worst = worst.max(w);
    }
    Ok(worst)
}

pub fn concat_gradients() -> Result<f64, String> {
    run_cases("concat", |rng| {
        let a = small_shape(rng);
        let axis = dim(rng, 0, 4);
        let mut b = a.clone();
        b[axis] = dim(rng, 1, 3);
        (
            vec![
                rand_tensor(rng, &a, -2.0, 2.0),
                rand_tensor(rng, &b, -2.0, 2.0),
            ],
            Box::new(move |t: &mut Tape<f64>, v: &[Var]| t.concat(&[v[0], v[1]], axis).unwrap()),
        )
    })
}

fn sub_box(rng: &mut ChaCha8Rng, big: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let small: Vec<usize> = big.iter().map(|&b| dim(rng, 1, b)).collect();
    let off: Vec<usize> = big
        .iter()
        .zip(&small)
        .map(|(&b, &s)| dim(rng, 0, b - s))
        .collect();
    (off, small)
}

pub fn crop_gradients() -> Result<f64, String> {
    run_cases("crop", |rng| {
        let big = small_shape(rng);
        let (off, small) = sub_box(rng, &big);
        (
            vec![rand_tensor(rng, &big, -2.0, 2.0)],
            Box::new(move |t: &mut Tape<f64>, v: &[Var]| t.crop(&v[0], &off, &small).unwrap()),
        )
    })
}

pub fn pad_gradients() -> Result<f64, String> {
    run_cases("pad", |rng| {
        let big = small_shape(rng);
        let (off, small) = sub_box(rng, &big);
        (
            vec![rand_tensor(rng, &small, -2.0, 2.0)],
            Box::new(move |t: &mut Tape<f64>, v: &[Var]| t.pad(&v[0], &off, &big).unwrap()),
        )
    })
}

pub fn add_gradients() -> Result<f64, String> {
    run_cases("add", |rng| {
        let s = small_shape(rng);
        (
            vec![
                rand_tensor(rng, &s, -2.0, 2.0),
                rand_tensor(rng, &s, -2.0, 2.0),
            ],
            Box::new(|t: &mut Tape<f64>, v: &[Var]| t.add(&v[0], &v[1]).unwrap()),
        )
    })
}

pub fn scale_gradients() -> Result<f64, String> {
    run_cases("scale", |rng| {
        let s = small_shape(rng);
        let k = rng.gen_range(-3.0..3.0);
        (
            vec![rand_tensor(rng, &s, -2.0, 2.0)],
            Box::new(move |t: &mut Tape<f64>, v: &[Var]| t.scale(&v[0], k).unwrap()),
        )
    })
}

pub fn sum_gradients() -> Result<f64, String> {
    run_cases("sum", |rng| {
        let s = small_shape(rng);
        (
            vec![rand_tensor(rng, &s, -0.5, 0.5)],
            Box::new(|t: &mut Tape<f64>, v: &[Var]| t.sum(&v[0]).unwrap()),
        )
    })
}

// Losses are scalar already; feeding them through the BCE scalarizer
// still exercises their backward pass through the chain rule.
pub fn bce_gradients() -> Result<f64, String> {
    run_cases("bce_with_logits", |rng| {
        let s = small_shape(rng);
        let targets = rand_tensor(rng, &s, 0.0, 1.0);
        (
            vec![rand_tensor(rng, &s, -3.0, 3.0)],
            Box::new(move |t: &mut Tape<f64>, v: &[Var]| {
                let y = t.input(targets.clone());
                t.bce_with_logits(&v[0], &y).unwrap()
            }),
        )
    })
}

pub fn l1_gradients() -> Result<f64, String> {
    run_cases("l1_loss", |rng| {
        let s = small_shape(rng);
        let a = rand_tensor(rng, &s, -2.0, 2.0);
        let gap = rand_away_from_zero(rng, &s);
        let b = Tensor::new(
            s.clone(),
            a.data()
                .iter()
                .zip(gap.data())
                .map(|(x, g)| x + g)
                .collect(),
        )
        .unwrap();
        (
            vec![a, b],
            Box::new(|t: &mut Tape<f64>, v: &[Var]| t.l1_loss(&v[0], &v[1]).unwrap()),
        )
    })
}

type Check = fn() -> Result<f64, String>;

/// Every differentiable op with its check; each returns the worst
/// relative error over its random shapes.
pub const ALL: &[(&str, Check)] = &[
    ("conv3d", conv3d_gradients),
    ("conv3d_transpose", conv3d_transpose_gradients),
    ("batch_norm (train)", batch_norm_train_gradients),
    ("batch_norm (infer)", batch_norm_infer_gradients),
    ("dropout", dropout_gradients),
    ("activations", activation_gradients),
    ("concat", concat_gradients),
    ("crop", crop_gradients),
    ("pad", pad_gradients),
    ("add", add_gradients),
    ("scale", scale_gradients),
    ("sum", sum_gradients),
    ("bce_with_logits", bce_gradients),
    ("l1_loss", l1_gradients),
];
