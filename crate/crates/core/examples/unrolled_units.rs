//! Builds dictionary convolutional units that reproduce ISTA exactly, then
//! compares them with a randomly initialised learnable stack.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cscfuse::csc::{
    auto_rho, dcu_stack_forward, ista_step, random_dictionary, ActivationKind, DcuParams, DcuStack, IstaProblem,
};
use cscfuse::nn::Mode;
use cscfuse::pipelines::synth_ivf_pair_sized;
use cscfuse::tensor::Tensor;

fn main() -> cscfuse::Result<()> {
    let (_, visible) = synth_ivf_pair_sized(3, 24, 24)?;
    let image = visible.into_pixels().cast::<f64>();
    let dict = random_dictionary(1, 8, 3, 11)?;
    let rho = auto_rho(&dict, 24, 24)?;
    let problem = IstaProblem::new(image.clone(), dict.clone(), 0.05, rho, 1)?;

    for depth in 1..=5 {
        let unit = DcuParams::ista_step(&dict, problem.lambda, rho)?;
        let stack = DcuStack::new(vec![unit; depth])?;
        let unrolled = dcu_stack_forward(&stack, &image, Mode::Eval)?;
        let mut z = Tensor::zeros(problem.code_shape());
        for _ in 0..depth {
            z = ista_step(&problem, &z)?;
        }
        println!("depth {depth}: max |units - ista| = {:.2e}", unrolled.max_abs_diff(&z)?);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for kind in [ActivationKind::Sst, ActivationKind::Prelu, ActivationKind::Relu] {
        let learnable = DcuStack::<f64>::init(3, 1, 8, 3, kind, &mut rng)?;
        let code = dcu_stack_forward(&learnable, &image, Mode::Eval)?;
        let active = code.data().iter().filter(|v| **v != 0.0).count();
        println!("{kind:?} stack of 3: {active} of {} code entries active", code.numel());
    }
    Ok(())
}
