//! Complex Hermitian linear algebra and a small dense conic solver.

mod conic;
mod hermitian;
mod ipm;

pub use conic::{BlockId, Cone, ConicProblem, ConicSolution, LinearConstraint, Lmi, LmiTerm, SolveStatus, SolverOptions, Term};
pub use hermitian::{hermitian_to_real_embedding, principal_rank_one, HermitianMatrix};
pub use ipm::solve_conic;

pub type Complex = num_complex::Complex64;
pub type CMatrix = nalgebra::DMatrix<Complex>;
pub type CVector = nalgebra::DVector<Complex>;

pub fn c(re: f64, im: f64) -> Complex {
    Complex::new(re, im)
}
