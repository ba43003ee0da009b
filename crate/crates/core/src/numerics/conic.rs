use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::hermitian::HermitianMatrix;
use crate::error::{Error, Result};

/// Handle to a decision block inside a [`ConicProblem`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BlockId(pub(crate) usize);

impl BlockId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cone {
    /// Hermitian and positive semidefinite.
    Psd,
    /// Hermitian, otherwise unconstrained. A 1x1 free block is a real scalar.
    Free,
}

/// One real-valued linear functional of a block.
#[derive(Clone, Debug)]
pub enum Term {
    /// `Re tr(C X)`
    Trace(BlockId, HermitianMatrix),
    /// `Re(coef * X[i][j])`
    Entry { block: BlockId, i: usize, j: usize, coef: Complex64 },
    /// `v^H X v`
    Quadratic(BlockId, DVector<Complex64>),
}

impl Term {
    /// `coef * x` for a scalar (1x1) block.
    pub fn scalar(block: BlockId, coef: f64) -> Term {
        Term::Entry { block, i: 0, j: 0, coef: Complex64::new(coef, 0.0) }
    }
}

#[derive(Clone, Debug)]
pub struct LinearConstraint {
    pub terms: Vec<Term>,
    pub rhs: f64,
}

#[derive(Clone, Debug)]
pub enum LmiTerm {
    /// `scale * G X G^H`, with `G` the identity when `map` is `None`.
    Congruence { block: BlockId, map: Option<DMatrix<Complex64>>, scale: f64 },
    /// `x * B` for a scalar block `x`.
    Scaled { block: BlockId, coef: HermitianMatrix },
}

/// `constant + sum(terms) ⪰ 0`
#[derive(Clone, Debug)]
pub struct Lmi {
    pub constant: HermitianMatrix,
    pub terms: Vec<LmiTerm>,
}

#[derive(Clone, Debug)]
pub(crate) enum EntryRule {
    Value { block: BlockId, i: usize, j: usize, value: Complex64 },
    Linked { block: BlockId, i: usize, j: usize, source: BlockId, si: usize, sj: usize, rot: Complex64 },
}

/// A maximization problem over Hermitian blocks with trace-linear objective
/// and constraints, PSD cones, explicit LMIs and entry-level equalities.
#[derive(Clone, Debug, Default)]
pub struct ConicProblem {
    pub(crate) blocks: Vec<(usize, Cone)>,
    pub(crate) objective: Vec<Term>,
    pub(crate) equalities: Vec<LinearConstraint>,
    pub(crate) inequalities: Vec<LinearConstraint>,
    pub(crate) lmis: Vec<Lmi>,
    pub(crate) rules: Vec<EntryRule>,
}

impl ConicProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_block(&mut self, dim: usize, cone: Cone) -> BlockId {
        self.blocks.push((dim, cone));
        BlockId(self.blocks.len() - 1)
    }

    pub fn add_scalar(&mut self, nonnegative: bool) -> BlockId {
        self.add_block(1, if nonnegative { Cone::Psd } else { Cone::Free })
    }

    pub fn block_dim(&self, b: BlockId) -> usize {
        self.blocks[b.0].0
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Adds to the (maximized) objective.
    pub fn maximize(&mut self, term: Term) {
        self.objective.push(term);
    }

    pub fn add_equality(&mut self, terms: Vec<Term>, rhs: f64) {
        self.equalities.push(LinearConstraint { terms, rhs });
    }

    /// `sum(terms) <= rhs`
    pub fn add_inequality(&mut self, terms: Vec<Term>, rhs: f64) {
        self.inequalities.push(LinearConstraint { terms, rhs });
    }

    pub fn add_lmi(&mut self, lmi: Lmi) {
        self.lmis.push(lmi);
    }

    /// Pins `X[i][j]` (and its mirror) to `value`.
    pub fn fix_entry(&mut self, block: BlockId, i: usize, j: usize, value: Complex64) {
        self.rules.push(EntryRule::Value { block, i, j, value });
    }

    /// Constrains `X[i][j] = rot * Y[si][sj]` where `Y` is `source`. The source
    /// entry must not itself be linked later in the rule list.
    pub fn link_entry(&mut self, block: BlockId, i: usize, j: usize, source: BlockId, si: usize, sj: usize, rot: Complex64) {
        self.rules.push(EntryRule::Linked { block, i, j, source, si, sj, rot });
    }

    pub(crate) fn validate(&self, cap: usize) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::InvalidParameter("conic problem has no decision blocks".into()));
        }
        for &(dim, _) in &self.blocks {
            if dim == 0 {
                return Err(Error::Dimension("decision block of dimension 0".into()));
            }
            if dim > cap {
                return Err(Error::Capacity { dim, cap });
            }
        }
        let check_block = |b: BlockId| -> Result<usize> {
            self.blocks
                .get(b.0)
                .map(|x| x.0)
                .ok_or_else(|| Error::Dimension(format!("unknown block {}", b.0)))
        };
        let check_term = |t: &Term| -> Result<()> {
            match t {
                Term::Trace(b, c) => {
                    if check_block(*b)? != c.dim() {
                        return Err(Error::Dimension(format!("trace coefficient {} vs block {}", c.dim(), check_block(*b)?)));
                    }
                }
                Term::Entry { block, i, j, .. } => {
                    let n = check_block(*block)?;
                    if *i >= n || *j >= n {
                        return Err(Error::Dimension(format!("entry ({i},{j}) outside block of size {n}")));
                    }
                }
                Term::Quadratic(b, v) => {
                    if check_block(*b)? != v.len() {
                        return Err(Error::Dimension("quadratic vector length".into()));
                    }
                }
            }
            Ok(())
        };
        for t in self.objective.iter().chain(self.equalities.iter().chain(&self.inequalities).flat_map(|c| &c.terms)) {
            check_term(t)?;
        }
        for lmi in &self.lmis {
            let n = lmi.constant.dim();
            if n > cap {
                return Err(Error::Capacity { dim: n, cap });
            }
            let mut seen = Vec::new();
            for t in &lmi.terms {
                let b = match t {
                    LmiTerm::Congruence { block, map, .. } => {
                        let nb = check_block(*block)?;
                        match map {
                            Some(g) if g.nrows() != n || g.ncols() != nb => {
                                return Err(Error::Dimension(format!(
                                    "LMI map is {}x{}, expected {n}x{nb}",
                                    g.nrows(),
                                    g.ncols()
                                )))
                            }
                            None if nb != n => {
                                return Err(Error::Dimension(format!("identity LMI term needs block {nb} = LMI {n}")))
                            }
                            _ => {}
                        }
                        *block
                    }
                    LmiTerm::Scaled { block, coef } => {
                        if check_block(*block)? != 1 || coef.dim() != n {
                            return Err(Error::Dimension("scaled LMI term needs a scalar block and matching coefficient".into()));
                        }
                        *block
                    }
                };
                if seen.contains(&b) {
                    return Err(Error::InvalidParameter(format!("block {} appears twice in one LMI", b.0)));
                }
                seen.push(b);
            }
        }
        for r in &self.rules {
            let (b, i, j) = match r {
                EntryRule::Value { block, i, j, .. } => (*block, *i, *j),
                EntryRule::Linked { block, i, j, source, si, sj, .. } => {
                    let ns = check_block(*source)?;
                    if *si >= ns || *sj >= ns {
                        return Err(Error::Dimension("linked source entry out of range".into()));
                    }
                    if source == block {
                        return Err(Error::InvalidParameter("entry links within one block are not supported".into()));
                    }
                    (*block, *i, *j)
                }
            };
            let n = check_block(b)?;
            if i >= n || j >= n {
                return Err(Error::Dimension(format!("fixed entry ({i},{j}) outside block of size {n}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverOptions {
    pub feasibility_tol: f64,
    pub gap_tol: f64,
    pub max_iterations: usize,
    /// Largest block or LMI dimension accepted.
    pub max_block_dim: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { feasibility_tol: 1e-7, gap_tol: 1e-6, max_iterations: 200, max_block_dim: 64 }
    }
}

impl SolverOptions {
    /// Same tolerance for feasibility and gap.
    pub fn with_tol(tol: f64) -> Self {
        Self { feasibility_tol: tol, gap_tol: tol, ..Self::default() }
    }
}

#[derive(Clone, Debug)]
pub struct ConicSolution {
    pub blocks: Vec<HermitianMatrix>,
    pub objective: f64,
    /// Upper bound from the dual iterate; meaningful when the dual residual is small.
    pub dual_bound: f64,
    /// Relative violation of the problem's own constraints.
    pub primal_residual: f64,
    /// Relative residual of the dual equality.
    pub dual_residual: f64,
    pub dual_gap: f64,
    pub status: SolveStatus,
    pub iterations: usize,
}

impl ConicSolution {
    pub fn block(&self, b: BlockId) -> &HermitianMatrix {
        &self.blocks[b.0]
    }

    pub fn scalar(&self, b: BlockId) -> f64 {
        self.blocks[b.0][(0, 0)].re
    }
}
