//! Central finite differences against the tape's reverse pass.
//!
//! Every check returns ||analytic − numeric|| / max(||analytic||, ||numeric||)
//! over all inputs it perturbs.

use rand::Rng;

use super::{Encoder, ModelConfig};
use crate::tensor::{Tape, Tensor, Var};

pub const STEP: f64 = 1e-6;

/// A named check drawing its inputs from the given generator.
pub type Case = (String, Box<dyn Fn(&mut dyn rand::RngCore) -> f64>);

/// Uniform in [-1, 1), kept clear of the ReLU kink so a finite step never
/// straddles it.
pub fn random_tensor(shape: Vec<usize>, rng: &mut dyn rand::RngCore) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.gen_range(-1.0..1.0);
        if v.abs() < 1e-2 {
            v + 0.05
        } else {
            v
        }
    })
}

fn norm_error(analytic: impl Iterator<Item = f64>, numeric: impl Iterator<Item = f64>) -> f64 {
    let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
    for (a, n) in analytic.zip(numeric) {
        diff += (a - n).powi(2);
        na += a * a;
        nn += n * n;
    }
    diff.sqrt() / na.sqrt().max(nn.sqrt()).max(1e-300)
}

/// Checks the gradient of the scalar `f` with respect to every input.
pub fn relative_error(inputs: Vec<Tensor>, f: impl Fn(&mut Tape<'_>, &[Var]) -> Var) -> f64 {
    let inputs: Vec<Tensor> = inputs.into_iter().map(Tensor::trainable).collect();
    let analytic: Vec<f64> = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
        let loss = f(&mut tape, &vars);
        let g = tape.backward(loss).expect("backward");
        vars.iter().flat_map(|v| g.get(*v).expect("leaf gradient").to_vec()).collect()
    };
    let eval = |ts: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ts.iter().map(|t| tape.leaf(t)).collect();
        let loss = f(&mut tape, &vars);
        tape.value(loss)[0]
    };
    let mut numeric = Vec::with_capacity(analytic.len());
    for (k, t) in inputs.iter().enumerate() {
        for i in 0..t.numel() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += STEP;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= STEP;
            numeric.push((eval(&plus) - eval(&minus)) / (2.0 * STEP));
        }
    }
    norm_error(analytic.into_iter(), numeric.into_iter())
}

fn conv_case(kernel: usize, dilation: usize) -> Case {
    (
        format!("conv k={kernel} d={dilation}"),
        Box::new(move |rng| {
            let x = random_tensor(vec![2, 3, 21], rng);
            let w = random_tensor(vec![4, 3, kernel], rng);
            let b = random_tensor(vec![4], rng);
            let target = random_tensor(vec![2, 4, 21], rng);
            relative_error(vec![x, w, b, target], |tape, v| {
                let y = tape.conv1d(v[0], v[1], v[2], dilation).expect("conv");
                tape.mse(y, v[3]).expect("mse")
            })
        }),
    )
}

fn unary_case(name: &str, shape: Vec<usize>, out: Vec<usize>, op: fn(&mut Tape<'_>, Var) -> Var) -> Case {
    (
        name.to_string(),
        Box::new(move |rng| {
            let x = random_tensor(shape.clone(), rng);
            let t = random_tensor(out.clone(), rng);
            relative_error(vec![x, t], |tape, v| {
                let y = op(tape, v[0]);
                tape.mse(y, v[1]).expect("mse")
            })
        }),
    )
}

/// One case per layer kind: pointwise and dilated convolutions, pooling,
/// upsampling, both nonlinearities and the loss.
pub fn layer_cases() -> Vec<Case> {
    let mut cases = vec![conv_case(1, 1)];
    for d in [1, 4, 16] {
        cases.push(conv_case(3, d));
    }
    cases.push(unary_case("avgpool", vec![2, 3, 20], vec![2, 3, 4], |t, x| {
        t.avgpool1d(x, 5).expect("pool")
    }));
    cases.push(unary_case("upsample", vec![2, 3, 4], vec![2, 3, 20], |t, x| {
        t.upsample_nearest(x, 5).expect("upsample")
    }));
    cases.push(unary_case("relu", vec![2, 3, 9], vec![2, 3, 9], |t, x| t.relu(x)));
    cases.push(unary_case("sigmoid", vec![2, 3, 9], vec![2, 3, 9], |t, x| t.sigmoid(x)));
    cases.push((
        "mse".into(),
        Box::new(|rng| {
            let a = random_tensor(vec![3, 2, 7], rng);
            let b = random_tensor(vec![3, 2, 7], rng);
            relative_error(vec![a, b], |tape, v| tape.mse(v[0], v[1]).expect("mse"))
        }),
    ));
    cases
}

/// A small model with the full encoder chain: three pointwise convs, the
/// dilated block, two pools and the sigmoid latent.
pub fn micro_model() -> ModelConfig {
    ModelConfig {
        n_params: 3,
        n_notes: 2,
        freq_channels: 4,
        frames: 20,
        pre_filters: [5, 6, 6],
        dilated_kernel: 3,
        dilations: [1, 4, 16],
        enc_filters: [5, 4],
        pools: [5, 2, 1],
        upsamples: [1, 2, 5],
    }
}

/// Gradients of every encoder weight and of the input through the whole
/// encoder, for a fresh encoder drawn from `rng`.
pub fn encoder_error(cfg: &ModelConfig, rng: &mut dyn rand::RngCore) -> f64 {
    let mut rng = rng;
    let enc = Encoder::new(cfg, &mut rng);
    let (c, l) = (cfg.freq_channels, cfg.frames);
    let x = Tensor::from_fn(vec![2, c, l], |_| rng.gen_range(0.0..1.0)).trainable();
    let target = Tensor::from_fn(vec![2, cfg.n_params, cfg.n_notes], |_| rng.gen_range(0.0..1.0));

    let loss_of = |enc: &Encoder, x: &Tensor| {
        let mut tape = Tape::new();
        let xv = tape.leaf(x);
        let tv = tape.constant(&target);
        let (z, _) = enc.forward(&mut tape, xv, true, None).expect("forward");
        let l = tape.mse(z, tv).expect("mse");
        tape.value(l)[0]
    };
    let analytic = {
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let tv = tape.constant(&target);
        let (z, bound) = enc.forward(&mut tape, xv, true, None).expect("forward");
        let l = tape.mse(z, tv).expect("mse");
        let g = tape.backward(l).expect("backward");
        let gx = g.get(xv).expect("input gradient").to_vec();
        let mut e2 = enc.clone();
        e2.accumulate(&g, &bound);
        let mut out = gx;
        for conv in &e2.convs {
            for p in conv.params() {
                out.extend_from_slice(p.grad().expect("weight gradient"));
            }
        }
        out
    };

    let mut numeric = Vec::with_capacity(analytic.len());
    for i in 0..x.numel() {
        let (mut p, mut m) = (x.clone(), x.clone());
        p.data_mut()[i] += STEP;
        m.data_mut()[i] -= STEP;
        numeric.push((loss_of(&enc, &p) - loss_of(&enc, &m)) / (2.0 * STEP));
    }
    for li in 0..enc.convs.len() {
        for which in 0..2 {
            for i in 0..enc.convs[li].params()[which].numel() {
                let mut p = enc.clone();
                p.convs[li].params_mut()[which].data_mut()[i] += STEP;
                let mut m = enc.clone();
                m.convs[li].params_mut()[which].data_mut()[i] -= STEP;
                numeric.push((loss_of(&p, &x) - loss_of(&m, &x)) / (2.0 * STEP));
            }
        }
    }
    norm_error(analytic.into_iter(), numeric.into_iter())
}
