//! The 2D convection-diffusion pair: stability numbers, mass balance and the
//! HF/LF gap at one parameter point.

use bifikle::crossval::relative_error;
use bifikle::models::convdiff::source_field;
use bifikle::models::{ConvDiffParams, ConvDiffProblem, Problem};

fn main() -> bifikle::error::Result<()> {
    let problem = ConvDiffProblem::standard();
    for (name, solver) in [("HF", problem.hf_solver()), ("LF", problem.lf_solver())] {
        println!("{name}: dt = {}, Courant number = {:.3}", solver.dt(), solver.courant());
    }
    let theta = [0.03, 0.065, 0.5, 0.7];
    let p = ConvDiffParams::from_slice(&theta)?;
    let start = std::time::Instant::now();
    let fine = problem.eval_hf_fine(&theta)?;
    println!("HF solve took {:.2?}", start.elapsed());
    let source = source_field(&p, problem.hf_solver().grid())?;
    println!("HF mass {:.6e}, source mass x T {:.6e}", fine.integral(), source.integral() * 2.5);
    let hf = problem.eval_hf(&theta)?;
    let lf = problem.eval_lf(&theta)?;
    println!("relative LF error on the coarse grid: {:.4e}", relative_error(problem.grid(), hf.values(), lf.values()));
    Ok(())
}
