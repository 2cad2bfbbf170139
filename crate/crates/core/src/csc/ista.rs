//! Reference convolutional sparse coding solver.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{conv2d, conv2d_transpose, sst, ConvFilter, Shape, Tensor};

/// Power-iteration cap used when estimating the step-size bound.
pub const POWER_ITERATIONS: usize = 50;
/// Relative change at which power iteration stops early.
pub const POWER_TOLERANCE: f64 = 1e-6;

/// One CSC instance: an image, a dictionary, and solver settings.
///
/// The dictionary maps codes to images, so its weight has shape
/// `(c, q, s, s)`.
#[derive(Clone, Debug)]
pub struct IstaProblem {
    pub image: Tensor<f64>,
    pub dictionary: ConvFilter<f64>,
    pub lambda: f64,
    pub rho: f64,
    pub iterations: usize,
}

impl IstaProblem {
    pub fn new(
        image: Tensor<f64>,
        dictionary: ConvFilter<f64>,
        lambda: f64,
        rho: f64,
        iterations: usize,
    ) -> Result<Self> {
        if !(lambda > 0.0) || !(rho > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "lambda and rho must be positive (got {lambda}, {rho})"
            )));
        }
        if iterations == 0 {
            return Err(Error::InvalidArgument("iterations must be positive".into()));
        }
        let s = image.shape();
        if s.n != 1 || s.c != dictionary.q_out() {
            return Err(Error::shape(
                "ista problem",
                format!("(1, {}, h, w) image", dictionary.q_out()),
                s,
            ));
        }
        if dictionary.bias.is_some() {
            return Err(Error::InvalidArgument("dictionary must not carry a bias".into()));
        }
        Ok(IstaProblem {
            image,
            dictionary,
            lambda,
            rho,
            iterations,
        })
    }

    pub fn code_shape(&self) -> Shape {
        self.image.shape().with_c(self.dictionary.q_in())
    }

    fn check_code(&self, z: &Tensor<f64>) -> Result<()> {
        z.expect_shape("ista code", self.code_shape())
    }
}

/// `½‖x − d*z‖² + λ‖z‖₁`.
pub fn csc_objective(p: &IstaProblem, z: &Tensor<f64>) -> Result<f64> {
    p.check_code(z)?;
    let recon = conv2d(z, &p.dictionary)?;
    let fit: f64 = p
        .image
        .data()
        .iter()
        .zip(recon.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let l1: f64 = z.data().iter().map(|v| v.abs()).sum();
    Ok(0.5 * fit + p.lambda * l1)
}

/// One proximal gradient step.
pub fn ista_step(p: &IstaProblem, z: &Tensor<f64>) -> Result<Tensor<f64>> {
    p.check_code(z)?;
    let residual = p.image.sub(&conv2d(z, &p.dictionary)?)?;
    let back = conv2d_transpose(&residual, &p.dictionary)?;
    let moved = z.add(&back.scale(1.0 / p.rho))?;
    let t = p.lambda / p.rho;
    sst(&moved, &vec![t; p.dictionary.q_in()])
}

#[derive(Clone, Debug)]
pub struct IstaSolution {
    pub code: Tensor<f64>,
    /// Objective at the zero start followed by the value after each step,
    /// so `trace.len() == iterations + 1`.
    pub trace: Vec<f64>,
}

/// Runs `p.iterations` steps from the zero code.
pub fn ista_solve(p: &IstaProblem) -> Result<IstaSolution> {
    let mut z = Tensor::zeros(p.code_shape());
    let mut trace = Vec::with_capacity(p.iterations + 1);
    trace.push(csc_objective(p, &z)?);
    for k in 1..=p.iterations {
        z = ista_step(p, &z)?;
        let f = csc_objective(p, &z)?;
        if !f.is_finite() {
            return Err(Error::Divergence(format!(
                "objective became non-finite at iteration {k}; rho {} is likely below the Lipschitz constant",
                p.rho
            )));
        }
        trace.push(f);
    }
    Ok(IstaSolution { code: z, trace })
}

/// Largest eigenvalue of `z ↦ dᵀ*(d*z)` on `h × w` codes, by power
/// iteration from a fixed pseudo-random start.
pub fn lipschitz_constant(d: &ConvFilter<f64>, h: usize, w: usize) -> Result<f64> {
    power_iteration(d, h, w, POWER_ITERATIONS, POWER_TOLERANCE)
}

pub fn power_iteration(d: &ConvFilter<f64>, h: usize, w: usize, iterations: usize, tol: f64) -> Result<f64> {
    let shape = Shape::new(1, d.q_in(), h, w);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v = Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0));
    normalize(&mut v);
    let mut estimate = 0.0;
    for _ in 0..iterations {
        let mut av = conv2d_transpose(&conv2d(&v, d)?, d)?;
        let norm = norm2(&av);
        if norm == 0.0 {
            return Ok(0.0);
        }
        let done = (norm - estimate).abs() <= tol * norm;
        estimate = norm;
        av.data_mut().iter_mut().for_each(|x| *x /= norm);
        v = av;
        if done {
            break;
        }
    }
    Ok(estimate)
}

/// Dictionary of `atoms` random `size × size` filters over `channels`
/// image channels, entries uniform in `[-0.5, 0.5)`.
pub fn random_dictionary(channels: usize, atoms: usize, size: usize, seed: u64) -> Result<ConvFilter<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::from_fn(Shape::new(channels, atoms, size, size), |_, _, _, _| {
        rng.random_range(-0.5..0.5)
    });
    ConvFilter::new(w, None)
}

/// Step size `1.05·L`.
pub fn auto_rho(d: &ConvFilter<f64>, h: usize, w: usize) -> Result<f64> {
    Ok(1.05 * lipschitz_constant(d, h, w)?)
}

fn norm2(t: &Tensor<f64>) -> f64 {
    t.data().iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn normalize(t: &mut Tensor<f64>) {
    let n = norm2(t);
    if n > 0.0 {
        t.data_mut().iter_mut().for_each(|x| *x /= n);
    }
}
