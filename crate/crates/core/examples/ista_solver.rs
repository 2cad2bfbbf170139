//! Sparse-codes a synthetic image with the reference ISTA solver and prints
//! the objective trace.
//!
//! ```text
//! cargo run --release --example ista_solver -- [lambda] [iterations]
//! ```

use cscfuse::csc::{auto_rho, ista_solve, lipschitz_constant, random_dictionary, IstaProblem};
use cscfuse::pipelines::synth_ivf_pair_sized;

fn main() -> cscfuse::Result<()> {
    let mut args = std::env::args().skip(1);
    let lambda: f64 = args.next().map_or(0.05, |s| s.parse().expect("lambda is a number"));
    let iterations: usize = args.next().map_or(50, |s| s.parse().expect("iterations is an integer"));

    let (_, visible) = synth_ivf_pair_sized(0, 32, 32)?;
    let image = visible.into_pixels().cast::<f64>();
    let dict = random_dictionary(1, 8, 3, 7)?;
    let lipschitz = lipschitz_constant(&dict, 32, 32)?;
    let rho = auto_rho(&dict, 32, 32)?;
    println!("Lipschitz bound {lipschitz:.4}, step size 1/{rho:.4}");

    let problem = IstaProblem::new(image, dict, lambda, rho, iterations)?;
    let solution = ista_solve(&problem)?;
    for (k, f) in solution
        .trace
        .iter()
        .enumerate()
        .filter(|(k, _)| k % 5 == 0 || *k == iterations)
    {
        println!("iteration {k:>3}  objective {f:.6}");
    }
    let rises = solution.trace.windows(2).filter(|w| w[1] > w[0] + 1e-7).count();
    let zeros = solution.code.data().iter().filter(|v| **v == 0.0).count();
    println!("steps that increased the objective: {rises}");
    println!(
        "code sparsity {:.1}% ({} of {} entries are zero)",
        100.0 * zeros as f64 / solution.code.numel() as f64,
        zeros,
        solution.code.numel()
    );
    Ok(())
}
