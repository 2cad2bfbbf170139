//! Runs the finite-difference gradient suite, optionally for one module.
//!
//! ```text
//! cargo run --release --example gradient_checks -- [tensor|csc|imaging|losses|pipelines]
//! ```

use cscfuse::gradsuite::run_gradient_suite;

fn main() -> cscfuse::Result<()> {
    let module = std::env::args().nth(1);
    let cases = run_gradient_suite(module.as_deref(), false)?;
    for c in &cases {
        println!(
            "{:<10} {:<24} rel. error {:.2e} / {:.0e}  {}",
            c.module,
            c.name,
            c.report.max_rel_error,
            c.tolerance,
            if c.passed() { "ok" } else { "FAIL" }
        );
    }
    let failed = cases.iter().filter(|c| !c.passed()).count();
    println!("{} of {} checks passed", cases.len() - failed, cases.len());
    if failed > 0 {
        std::process::exit(1);
    }
    Ok(())
}
