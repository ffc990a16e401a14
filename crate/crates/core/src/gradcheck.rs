//! Double-precision finite-difference checks of every differentiable op and of
//! a whole small model.
//!
//! Each check wraps the op output `y` in `l1_loss(y, y0 + d)` where `y0` is the
//! unperturbed output and every `|d| >= 0.1` has a random sign, which turns the
//! scalar loss into a random ±1 projection of `y` whose kinks stay far from the
//! perturbed points. Analytic gradients of every input are compared with central
//! differences by norm-wise relative error.

use crate::imaging::DegradationSpace;
use crate::model::{forward, ArchConfig, ForwardOptions, Model, ModelError, Weights};
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, TensorError, Var};

pub const STEP: f64 = 1e-5;
pub const OP_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub name: String,
    /// Largest norm-wise relative error over the inputs.
    pub rel_err: f64,
    pub tolerance: f64,
    /// Number of scalar inputs perturbed.
    pub entries: usize,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.rel_err < self.tolerance
    }
}

impl std::fmt::Display for GradCheck {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<20} rel_err {:.3e} (< {:.0e}) over {} entries: {}",
            self.name,
            self.rel_err,
            self.tolerance,
            self.entries,
            if self.passed() { "ok" } else { "FAIL" }
        )
    }
}

type Build<'a> = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var, ModelError> + 'a;

fn projected_loss(build: &Build, inputs: &[Tensor<f64>], target: &Tensor<f64>, grad: bool) -> Result<(Tape<f64>, Var, Vec<Var>), ModelError> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t, grad)).collect();
    let y = build(&mut tape, &vars)?;
    let t = tape.leaf(target, false);
    let loss = tape.l1_loss(y, t)?;
    Ok((tape, loss, vars))
}

/// Compares analytic and central-difference gradients of `build` with respect to
/// every entry of every input.
pub fn check(name: &str, inputs: Vec<Tensor<f64>>, build: &Build, tolerance: f64, rng: &mut Rng) -> Result<GradCheck, ModelError> {
    let y0 = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t, false)).collect();
        let y = build(&mut tape, &vars)?;
        tape.tensor(y)?
    };
    let target = Tensor::from_fn(y0.shape().to_vec(), |i| {
        let d = 0.1 + rng.uniform();
        y0.data()[i] + if rng.coin() { d } else { -d }
    });

    let (mut tape, loss, vars) = projected_loss(build, &inputs, &target, true)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(&inputs)
        .map(|(&v, t)| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let eval = |inputs: &[Tensor<f64>]| -> Result<f64, ModelError> {
        let (tape, loss, _) = projected_loss(build, inputs, &target, false)?;
        Ok(tape.value(loss)?[0])
    };
    let mut worst: f64 = 0.0;
    let mut entries = 0;
    let mut work = inputs.clone();
    for (k, a) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; a.len()];
        for (i, n) in numeric.iter_mut().enumerate() {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + STEP;
            let up = eval(&work)?;
            work[k].data_mut()[i] = orig - STEP;
            let down = eval(&work)?;
            work[k].data_mut()[i] = orig;
            *n = (up - down) / (2.0 * STEP);
        }
        entries += a.len();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = a.iter().zip(&numeric).map(|(x, y)| x - y).collect();
        let scale = norm(a).max(norm(&numeric));
        let rel = if scale == 0.0 { 0.0 } else { norm(&diff) / scale };
        worst = worst.max(rel);
    }
    Ok(GradCheck {
        name: name.to_string(),
        rel_err: worst,
        tolerance,
        entries,
    })
}

fn normal(rng: &mut Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.normal() * scale)
}

/// Values with magnitude at least 0.05, keeping ReLU away from its kink.
fn off_zero(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = 0.05 + rng.uniform();
        if rng.coin() {
            m
        } else {
            -m
        }
    })
}

fn t(r: Result<Var, TensorError>) -> Result<Var, ModelError> {
    r.map_err(ModelError::from)
}

/// Per-op checks, in a fixed order.
pub fn op_checks(seed: u64) -> Result<Vec<GradCheck>, ModelError> {
    let mut rng = Rng::new(seed);
    let r = &mut rng;
    let tol = OP_TOLERANCE;
    let mut out = Vec::new();

    let inputs = vec![normal(r, &[2, 5, 6], 1.0), normal(r, &[3, 2, 3, 3], 0.5), normal(r, &[3], 0.5)];
    out.push(check("conv2d", inputs, &|tp, v| t(tp.conv2d(v[0], v[1], Some(v[2]), 1, 1)), tol, r)?);

    let inputs = vec![normal(r, &[2, 7, 6], 1.0), normal(r, &[3, 2, 3, 3], 0.5), normal(r, &[3], 0.5)];
    out.push(check("conv2d_stride2", inputs, &|tp, v| t(tp.conv2d(v[0], v[1], Some(v[2]), 2, 1)), tol, r)?);

    let inputs = vec![normal(r, &[2, 6, 5], 1.0), normal(r, &[4, 2, 3, 3], 0.5)];
    out.push(check("conv2d_nobias", inputs, &|tp, v| t(tp.conv2d(v[0], v[1], None, 1, 0)), tol, r)?);

    let inputs = vec![off_zero(r, &[3, 4, 4])];
    out.push(check("relu", inputs, &|tp, v| t(tp.relu(v[0])), tol, r)?);

    let inputs = vec![normal(r, &[3, 4, 5], 1.0), normal(r, &[3], 1.0)];
    out.push(check("scale_channels", inputs, &|tp, v| t(tp.scale_channels(v[0], v[1])), tol, r)?);

    let inputs = vec![normal(r, &[2, 3, 3], 1.0), normal(r, &[2, 3, 3], 1.0)];
    out.push(check("add", inputs, &|tp, v| t(tp.add(v[0], v[1])), tol, r)?);

    let inputs = vec![normal(r, &[2, 3, 3], 1.0)];
    out.push(check("mul_scalar", inputs, &|tp, v| t(tp.mul_scalar(v[0], -1.7)), tol, r)?);

    let inputs = vec![normal(r, &[8, 3, 2], 1.0)];
    out.push(check("pixel_shuffle", inputs, &|tp, v| t(tp.pixel_shuffle(v[0], 2)), tol, r)?);

    let inputs = vec![normal(r, &[2, 6, 4], 1.0)];
    out.push(check("pixel_unshuffle", inputs, &|tp, v| t(tp.pixel_unshuffle(v[0], 2)), tol, r)?);

    let inputs = vec![normal(r, &[3], 1.0), normal(r, &[5, 3], 1.0)];
    out.push(check("linear_nobias", inputs, &|tp, v| t(tp.linear_nobias(v[0], v[1])), tol, r)?);

    // pred - target stays at least 0.1 away from the kink
    let target = normal(r, &[2, 3, 3], 1.0);
    let pred = Tensor::from_fn(target.shape().to_vec(), |i| {
        let d = 0.1 + r.uniform();
        target.data()[i] + if r.coin() { d } else { -d }
    });
    out.push(check("l1_loss", vec![pred, target], &|tp, v| t(tp.l1_loss(v[0], v[1])), tol, r)?);

    let inputs = vec![normal(r, &[2, 3, 4], 1.0)];
    out.push(check("sum", inputs, &|tp, v| t(tp.sum(v[0])), tol, r)?);
    Ok(out)
}

/// Whole-model check on the tiny architecture (C=8, B=2, G=2) with a 16×16 input:
/// gradients of every parameter, the input image and the condition vector.
pub fn model_check(seed: u64) -> Result<GradCheck, ModelError> {
    let arch = ArchConfig::tiny();
    let model = Model::<f64>::new(arch, DegradationSpace::desk_2d(), seed)?;
    let mut rng = Rng::new(seed ^ 0x5eed);
    let mut inputs: Vec<Tensor<f64>> = model.weights.leaves().into_iter().cloned().collect();
    let n_weights = inputs.len();
    inputs.push(Tensor::from_fn([3, 16, 16], |_| rng.uniform()));
    inputs.push(Tensor::from_fn([2], |_| 0.2 + 0.6 * rng.uniform()));
    let shapes = Weights::shapes(&arch, true);
    let build = move |tape: &mut Tape<f64>, v: &[Var]| {
        let mut it = v[..n_weights].iter();
        let w = shapes.map(|_, _| *it.next().expect("one var per leaf"));
        forward(tape, &arch, &w, v[n_weights], Some(v[n_weights + 1]), ForwardOptions::default())
    };
    check("model_tiny_16x16", inputs, &build, MODEL_TOLERANCE, &mut rng)
}

/// Every op check followed by the whole-model check.
pub fn run_suite(seed: u64) -> Result<Vec<GradCheck>, ModelError> {
    let mut all = op_checks(seed)?;
    all.push(model_check(seed)?);
    Ok(all)
}
