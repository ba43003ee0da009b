//! Primal-dual interior-point method for [`ConicProblem`].
//!
//! The problem is compiled into the standard dual form
//!
//! ```text
//! maximize  b'y
//! s.t.      C_j + L_j(y) ⪰ 0      (Hermitian LMIs)
//!           A y <= c              (linear rows)
//!           E y  = f
//! ```
//!
//! where `y` stacks the free real parameters of every block (real and
//! imaginary parts of off-diagonal entries, real diagonals, after eliminating
//! fixed and linked entries). Complex blocks are handled in native complex
//! arithmetic, which is the same cone as the real embedding. Search directions
//! use the HKM scaling with a Mehrotra predictor-corrector.

use faer::linalg::solvers::{DenseSolveCore, Solve};
use faer::{c64, Mat, Side};
use nalgebra::DMatrix;

use super::conic::{Cone, ConicProblem, ConicSolution, EntryRule, LmiTerm, SolveStatus, SolverOptions, Term};
use super::hermitian::HermitianMatrix;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default)]
struct Form {
    constant: c64,
    vars: Vec<(usize, c64)>,
}

impl Form {
    fn conj(&self) -> Form {
        Form { constant: self.constant.conj(), vars: self.vars.iter().map(|&(v, k)| (v, k.conj())).collect() }
    }

    fn scale(&self, w: c64) -> Form {
        Form { constant: self.constant * w, vars: self.vars.iter().map(|&(v, k)| (v, k * w)).collect() }
    }

    fn is_real(&self) -> bool {
        let tol = 1e-12;
        self.constant.im.abs() <= tol * self.constant.norm().max(1.0) && self.vars.iter().all(|(_, k)| k.im.abs() <= tol * k.norm().max(1.0))
    }

    fn realify(mut self) -> Form {
        self.constant.im = 0.0;
        for (_, k) in &mut self.vars {
            k.im = 0.0;
        }
        self
    }
}

struct EntryApp {
    i: usize,
    j: usize,
    vars: Vec<(usize, c64)>,
}

struct BlockMap {
    dim: usize,
    forms: Vec<Form>,
    apps: Vec<EntryApp>,
}

impl BlockMap {
    fn form(&self, i: usize, j: usize) -> &Form {
        &self.forms[i * self.dim + j]
    }

    fn constant(&self) -> Mat<c64> {
        let n = self.dim;
        let mut out = Mat::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let c = self.form(i, j).constant;
                out[(i, j)] = c;
                out[(j, i)] = c.conj();
            }
        }
        out
    }

    fn linear(&self, dy: &[f64]) -> Mat<c64> {
        let n = self.dim;
        let mut out = Mat::zeros(n, n);
        for a in &self.apps {
            let mut z = c64::new(0.0, 0.0);
            for &(v, k) in &a.vars {
                z += k * dy[v];
            }
            if a.i == a.j {
                out[(a.i, a.i)] = c64::new(z.re, 0.0);
            } else {
                out[(a.i, a.j)] = z;
                out[(a.j, a.i)] = z.conj();
            }
        }
        out
    }
}

#[derive(Clone, Debug, Default)]
struct SparseRow {
    idx: Vec<usize>,
    val: Vec<f64>,
}

impl SparseRow {
    fn dot(&self, y: &[f64]) -> f64 {
        self.idx.iter().zip(&self.val).map(|(&i, &v)| v * y[i]).sum()
    }

    fn axpy(&self, alpha: f64, out: &mut [f64]) {
        for (&i, &v) in self.idx.iter().zip(&self.val) {
            out[i] += alpha * v;
        }
    }

    fn norm(&self) -> f64 {
        self.val.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

struct CTerm {
    block: usize,
    g: Option<Mat<c64>>,
    scale: f64,
}

struct STerm {
    var: usize,
    b: Mat<c64>,
}

struct CLmi {
    n: usize,
    c: Mat<c64>,
    cterms: Vec<CTerm>,
    sterms: Vec<STerm>,
}

struct Compiled {
    m: usize,
    blocks: Vec<BlockMap>,
    b: Vec<f64>,
    b0: f64,
    lp: Vec<SparseRow>,
    c_lp: Vec<f64>,
    eq: Vec<SparseRow>,
    f_eq: Vec<f64>,
    lmis: Vec<CLmi>,
}

fn to_faer(m: &DMatrix<num_complex::Complex64>) -> Mat<c64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn canon(i: usize, j: usize) -> (usize, usize, bool) {
    if i <= j {
        (i, j, false)
    } else {
        (j, i, true)
    }
}

fn compile(p: &ConicProblem) -> Result<Compiled> {
    let nb = p.blocks.len();
    let mut forms: Vec<Vec<Option<Form>>> = p.blocks.iter().map(|&(n, _)| vec![None; n * n]).collect();
    let mut linked: Vec<Vec<bool>> = p.blocks.iter().map(|&(n, _)| vec![false; n * n]).collect();

    for r in &p.rules {
        match r {
            EntryRule::Value { block, i, j, value } => {
                let n = p.blocks[block.0].0;
                let (i, j, swapped) = canon(*i, *j);
                let v = if swapped { value.conj() } else { *value };
                let mut f = Form { constant: v, vars: vec![] };
                if i == j {
                    if !f.is_real() {
                        return Err(Error::InvalidParameter(format!("diagonal entry ({i},{i}) fixed to non-real {value}")));
                    }
                    f = f.realify();
                }
                let slot = &mut forms[block.0][i * n + j];
                if let Some(prev) = slot {
                    if (prev.constant - f.constant).norm() > 1e-12 {
                        return Err(Error::InvalidParameter(format!("entry ({i},{j}) fixed twice to different values")));
                    }
                }
                *slot = Some(f);
            }
            EntryRule::Linked { block, i, j, .. } => {
                let n = p.blocks[block.0].0;
                let (i, j, _) = canon(*i, *j);
                linked[block.0][i * n + j] = true;
            }
        }
    }

    let mut m = 0;
    for (b, &(n, _)) in p.blocks.iter().enumerate() {
        for i in 0..n {
            for j in i..n {
                if forms[b][i * n + j].is_some() || linked[b][i * n + j] {
                    continue;
                }
                let vars = if i == j {
                    m += 1;
                    vec![(m - 1, c64::new(1.0, 0.0))]
                } else {
                    m += 2;
                    vec![(m - 2, c64::new(1.0, 0.0)), (m - 1, c64::new(0.0, 1.0))]
                };
                forms[b][i * n + j] = Some(Form { constant: c64::new(0.0, 0.0), vars });
            }
        }
    }

    for r in &p.rules {
        if let EntryRule::Linked { block, i, j, source, si, sj, rot } = r {
            let n = p.blocks[block.0].0;
            let ns = p.blocks[source.0].0;
            let (ti, tj, tswap) = canon(*i, *j);
            let (ci, cj, sswap) = canon(*si, *sj);
            let src = forms[source.0][ci * ns + cj].clone().ok_or_else(|| {
                Error::InvalidParameter(format!("link source ({si},{sj}) of block {} is itself unresolved", source.0))
            })?;
            let src = if sswap { src.conj() } else { src };
            let mut f = src.scale(*rot);
            if tswap {
                f = f.conj();
            }
            if ti == tj {
                if !f.is_real() {
                    return Err(Error::InvalidParameter(format!("diagonal entry ({ti},{ti}) linked to a non-real value")));
                }
                f = f.realify();
            }
            let slot = &mut forms[block.0][ti * n + tj];
            if slot.is_some() {
                return Err(Error::InvalidParameter(format!("entry ({ti},{tj}) of block {} constrained twice", block.0)));
            }
            *slot = Some(f);
        }
    }

    let mut blocks = Vec::with_capacity(nb);
    for (b, &(n, _)) in p.blocks.iter().enumerate() {
        let fs: Vec<Form> = forms[b].iter().map(|f| f.clone().unwrap_or_default()).collect();
        let mut apps = Vec::new();
        for i in 0..n {
            for j in i..n {
                let f = &fs[i * n + j];
                if !f.vars.is_empty() {
                    apps.push(EntryApp { i, j, vars: f.vars.clone() });
                }
            }
        }
        blocks.push(BlockMap { dim: n, forms: fs, apps });
    }

    let linear = |terms: &[Term]| -> (SparseRow, f64) {
        let mut acc = vec![0.0; m];
        let mut touched = vec![false; m];
        let mut constant = 0.0;
        let mut add = |block: usize, i: usize, j: usize, w: c64, acc: &mut Vec<f64>| {
            let (i, j, swapped) = canon(i, j);
            let w = if swapped { w.conj() } else { w };
            let f = blocks[block].form(i, j);
            constant += (w * f.constant).re;
            for &(v, k) in &f.vars {
                acc[v] += (w * k).re;
                touched[v] = true;
            }
        };
        for t in terms {
            match t {
                Term::Entry { block, i, j, coef } => add(block.0, *i, *j, *coef, &mut acc),
                Term::Trace(block, c) => {
                    let n = c.dim();
                    for i in 0..n {
                        add(block.0, i, i, c64::new(c[(i, i)].re, 0.0), &mut acc);
                        for j in (i + 1)..n {
                            add(block.0, i, j, c[(j, i)] * 2.0, &mut acc);
                        }
                    }
                }
                Term::Quadratic(block, v) => {
                    let n = v.len();
                    for i in 0..n {
                        add(block.0, i, i, c64::new(v[i].norm_sqr(), 0.0), &mut acc);
                        for j in (i + 1)..n {
                            add(block.0, i, j, v[j] * v[i].conj() * 2.0, &mut acc);
                        }
                    }
                }
            }
        }
        let mut row = SparseRow::default();
        for v in 0..m {
            if touched[v] && acc[v] != 0.0 {
                row.idx.push(v);
                row.val.push(acc[v]);
            }
        }
        (row, constant)
    };

    let (obj, b0) = linear(&p.objective);
    let mut bvec = vec![0.0; m];
    obj.axpy(1.0, &mut bvec);

    let mut lp = Vec::new();
    let mut c_lp = Vec::new();
    for c in &p.inequalities {
        let (row, k) = linear(&c.terms);
        lp.push(row);
        c_lp.push(c.rhs - k);
    }
    let mut eq = Vec::new();
    let mut f_eq = Vec::new();
    for c in &p.equalities {
        let (row, k) = linear(&c.terms);
        if row.idx.is_empty() {
            if (c.rhs - k).abs() > 1e-9 * (1.0 + c.rhs.abs()) {
                return Err(Error::InvalidParameter("equality constraint on fixed entries is violated".into()));
            }
            continue;
        }
        eq.push(row);
        f_eq.push(c.rhs - k);
    }

    let mut lmis = Vec::new();
    for (b, &(n, cone)) in p.blocks.iter().enumerate() {
        if cone != Cone::Psd {
            continue;
        }
        if n == 1 {
            let f = blocks[b].form(0, 0);
            if f.vars.is_empty() {
                if f.constant.re < 0.0 {
                    return Err(Error::InvalidParameter(format!("scalar block {b} fixed to a negative value")));
                }
                continue;
            }
            let mut row = SparseRow::default();
            for &(v, k) in &f.vars {
                row.idx.push(v);
                row.val.push(-k.re);
            }
            lp.push(row);
            c_lp.push(f.constant.re);
        } else if !blocks[b].apps.is_empty() {
            lmis.push(CLmi { n, c: blocks[b].constant(), cterms: vec![CTerm { block: b, g: None, scale: 1.0 }], sterms: vec![] });
        }
    }
    for l in &p.lmis {
        let n = l.constant.dim();
        let mut c = to_faer(l.constant.as_matrix());
        let mut cterms = Vec::new();
        let mut sterms = Vec::new();
        for t in &l.terms {
            match t {
                LmiTerm::Congruence { block, map, scale } => {
                    let g = map.as_ref().map(to_faer);
                    let xc = blocks[block.0].constant();
                    let contrib = match &g {
                        Some(g) => g * &xc * g.adjoint(),
                        None => xc,
                    };
                    c += contrib * faer::Scale(c64::new(*scale, 0.0));
                    cterms.push(CTerm { block: block.0, g, scale: *scale });
                }
                LmiTerm::Scaled { block, coef } => {
                    let f = blocks[block.0].form(0, 0);
                    let bm = to_faer(coef.as_matrix());
                    c += &bm * faer::Scale(c64::new(f.constant.re, 0.0));
                    for &(v, k) in &f.vars {
                        sterms.push(STerm { var: v, b: &bm * faer::Scale(c64::new(k.re, 0.0)) });
                    }
                }
            }
        }
        lmis.push(CLmi { n, c, cterms, sterms });
    }

    Ok(Compiled { m, blocks, b: bvec, b0, lp, c_lp, eq, f_eq, lmis })
}

fn herm_part(a: &Mat<c64>) -> Mat<c64> {
    let n = a.nrows();
    Mat::from_fn(n, n, |i, j| (a[(i, j)] + a[(j, i)].conj()) * 0.5)
}

fn inner(a: &Mat<c64>, b: &Mat<c64>) -> f64 {
    // Re tr(a b) for Hermitian a
    let n = a.nrows();
    let mut s = 0.0;
    for j in 0..n {
        for i in 0..n {
            s += (a[(i, j)] * b[(j, i)]).re;
        }
    }
    s
}

fn fro(a: &Mat<c64>) -> f64 {
    a.norm_l2()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Largest `alpha` with `x + alpha * dx ⪰ 0`, given `x ≻ 0`.
fn psd_step(x: &Mat<c64>, dx: &Mat<c64>) -> f64 {
    let Ok(llt) = x.llt(Side::Lower) else { return 0.0 };
    let l = llt.L();
    let mut z = dx.clone();
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(l, z.as_mut(), faer::Par::Seq);
    let mut w = z.adjoint().to_owned();
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(l, w.as_mut(), faer::Par::Seq);
    let w = herm_part(&w);
    match w.self_adjoint_eigenvalues(Side::Lower) {
        Ok(ev) => {
            let lo = ev.iter().copied().fold(f64::INFINITY, f64::min);
            if lo >= 0.0 {
                f64::INFINITY
            } else {
                -1.0 / lo
            }
        }
        Err(_) => 0.0,
    }
}

fn lp_step(x: &[f64], dx: &[f64]) -> f64 {
    x.iter().zip(dx).filter(|(_, &d)| d < 0.0).map(|(&v, &d)| -v / d).fold(f64::INFINITY, f64::min)
}

#[derive(Clone)]
struct Direction {
    dy: Vec<f64>,
    dlam: Vec<f64>,
    dx: Vec<Mat<c64>>,
    ds: Vec<Mat<c64>>,
    dxl: Vec<f64>,
    dsl: Vec<f64>,
}

struct Factor {
    llt: faer::linalg::solvers::Llt<f64>,
    // M^{-1} E^T and the factored E M^{-1} E^T when equalities are present
    z: Option<Mat<f64>>,
    k: Option<faer::linalg::solvers::PartialPivLu<f64>>,
}

struct Residuals {
    rp: Vec<f64>,
    rd: Vec<Mat<c64>>,
    rlp: Vec<f64>,
    re: Vec<f64>,
}

struct Outcome {
    status: SolveStatus,
    iter: usize,
    stats: [f64; 5],
    y: Vec<f64>,
    first: usize,
}

struct Ipm<'a> {
    cp: &'a Compiled,
    y: Vec<f64>,
    lam: Vec<f64>,
    x: Vec<Mat<c64>>,
    s: Vec<Mat<c64>>,
    xl: Vec<f64>,
    sl: Vec<f64>,
}

impl<'a> Ipm<'a> {
    fn new(cp: &'a Compiled) -> Self {
        let m = cp.m;
        // rough operator norms per variable, used only to size the starting point
        let mut var_norm = vec![0.0f64; m];
        for l in &cp.lmis {
            for t in &l.cterms {
                let colnorm: Vec<f64> = match &t.g {
                    Some(g) => (0..g.ncols()).map(|c| g.col(c).norm_l2()).collect(),
                    None => vec![1.0; cp.blocks[t.block].dim],
                };
                for a in &cp.blocks[t.block].apps {
                    let f = if a.i == a.j { 1.0 } else { 2f64.sqrt() };
                    for &(v, k) in &a.vars {
                        let val = t.scale.abs() * colnorm[a.i] * colnorm[a.j] * f * k.norm();
                        var_norm[v] = var_norm[v].hypot(val);
                    }
                }
            }
            for st in &l.sterms {
                var_norm[st.var] = var_norm[st.var].hypot(fro(&st.b));
            }
        }
        let ratio = (0..m).map(|v| (1.0 + cp.b[v].abs()) / (1.0 + var_norm[v])).fold(0.0, f64::max);
        let amax = var_norm.iter().copied().fold(0.0, f64::max);
        let mut x = Vec::new();
        let mut s = Vec::new();
        for l in &cp.lmis {
            let n = l.n as f64;
            let xi = 10f64.max(n.sqrt()).max(n * ratio);
            let eta = 10f64.max(n.sqrt()).max(amax).max(fro(&l.c));
            x.push(Mat::<c64>::identity(l.n, l.n) * faer::Scale(c64::new(xi, 0.0)));
            s.push(Mat::<c64>::identity(l.n, l.n) * faer::Scale(c64::new(eta, 0.0)));
        }
        let mut xl = Vec::new();
        let mut sl = Vec::new();
        for (r, c) in cp.lp.iter().zip(&cp.c_lp) {
            let an = r.norm();
            xl.push(10f64.max(ratio));
            sl.push(10f64.max(an).max(c.abs()));
        }
        Ipm { cp, y: vec![0.0; m], lam: vec![0.0; cp.eq.len()], x, s, xl, sl }
    }

    fn lmap(&self, j: usize, dy: &[f64]) -> Mat<c64> {
        let l = &self.cp.lmis[j];
        let mut out = Mat::<c64>::zeros(l.n, l.n);
        for t in &l.cterms {
            let dxb = self.cp.blocks[t.block].linear(dy);
            let term = match &t.g {
                Some(g) => g * &dxb * g.adjoint(),
                None => dxb,
            };
            out += term * faer::Scale(c64::new(t.scale, 0.0));
        }
        for st in &l.sterms {
            out += &st.b * faer::Scale(c64::new(dy[st.var], 0.0));
        }
        out
    }

    /// out += L_j^*(w), i.e. out[v] += Re tr(dL/dy_v * w)
    fn ladj(&self, j: usize, w: &Mat<c64>, out: &mut [f64]) {
        let l = &self.cp.lmis[j];
        for t in &l.cterms {
            let p = match &t.g {
                Some(g) => g.adjoint() * w * g,
                None => w.clone(),
            };
            for a in &self.cp.blocks[t.block].apps {
                for &(v, k) in &a.vars {
                    let val = if a.i == a.j { (k * p[(a.i, a.i)]).re } else { (k * p[(a.j, a.i)] + k.conj() * p[(a.i, a.j)]).re };
                    out[v] += t.scale * val;
                }
            }
        }
        for st in &l.sterms {
            out[st.var] += inner(&st.b, w);
        }
    }

    fn residuals(&self) -> Residuals {
        let cp = self.cp;
        let mut rp = cp.b.clone();
        for j in 0..cp.lmis.len() {
            self.ladj(j, &self.x[j], &mut rp);
        }
        for (r, &xv) in cp.lp.iter().zip(&self.xl) {
            r.axpy(-xv, &mut rp);
        }
        for (r, &lv) in cp.eq.iter().zip(&self.lam) {
            r.axpy(-lv, &mut rp);
        }
        let rd = (0..cp.lmis.len()).map(|j| &cp.lmis[j].c + self.lmap(j, &self.y) - &self.s[j]).collect();
        let rlp = cp.lp.iter().enumerate().map(|(i, r)| cp.c_lp[i] - r.dot(&self.y) - self.sl[i]).collect();
        let re = cp.eq.iter().enumerate().map(|(i, r)| cp.f_eq[i] - r.dot(&self.y)).collect();
        Residuals { rp, rd, rlp, re }
    }

    fn schur(&self, sinv: &[Mat<c64>]) -> Mat<f64> {
        let cp = self.cp;
        let m = cp.m;
        let mut up = vec![0.0f64; m * m];
        let mut add = |v: usize, w: usize, val: f64| {
            let (r, c) = if v <= w { (v, w) } else { (w, v) };
            up[c * m + r] += val;
        };
        for (j, l) in cp.lmis.iter().enumerate() {
            let x = &self.x[j];
            let si = &sinv[j];
            let xg: Vec<Mat<c64>> = l.cterms.iter().map(|t| match &t.g { Some(g) => x * g, None => x.clone() }).collect();
            let sg: Vec<Mat<c64>> = l.cterms.iter().map(|t| match &t.g { Some(g) => si * g, None => si.clone() }).collect();
            for t1 in 0..l.cterms.len() {
                for t2 in t1..l.cterms.len() {
                    let (a, b) = (&l.cterms[t1], &l.cterms[t2]);
                    let q = match &a.g { Some(g) => g.adjoint() * &xg[t2], None => xg[t2].clone() };
                    let r = match &b.g { Some(g) => g.adjoint() * &sg[t1], None => sg[t1].clone() };
                    accumulate_pair(
                        &cp.blocks[a.block].apps,
                        &cp.blocks[b.block].apps,
                        &q,
                        &r,
                        a.scale * b.scale,
                        t1 == t2,
                        &mut add,
                    );
                }
            }
            for (s1, st) in l.sterms.iter().enumerate() {
                let bx = &st.b * x;
                for (t2, b) in l.cterms.iter().enumerate() {
                    let p = sg[t2].adjoint() * (&st.b * &xg[t2]);
                    for e in &cp.blocks[b.block].apps {
                        for &(w, k) in &e.vars {
                            let val = if e.i == e.j { (k * p[(e.i, e.i)]).re } else { (k * p[(e.j, e.i)] + k.conj() * p[(e.i, e.j)]).re };
                            let dup = if w == st.var { 2.0 } else { 1.0 };
                            add(st.var, w, dup * b.scale * val);
                        }
                    }
                }
                for st2 in &l.sterms[s1..] {
                    let val = inner(&bx, &(&st2.b * si));
                    let same = std::ptr::eq(st, st2);
                    let dup = if !same && st.var == st2.var { 2.0 } else { 1.0 };
                    add(st.var, st2.var, dup * val);
                }
            }
        }
        for (i, r) in cp.lp.iter().enumerate() {
            let d = self.xl[i] / self.sl[i];
            for a in 0..r.idx.len() {
                let va = d * r.val[a];
                for b in 0..=a {
                    add(r.idx[a], r.idx[b], va * r.val[b]);
                }
            }
        }
        Mat::from_fn(m, m, |i, j| if i <= j { up[j * m + i] } else { 0.0 })
    }

    fn factor(&self, mut mm: Mat<f64>) -> Option<Factor> {
        let cp = self.cp;
        let m = cp.m;
        let maxdiag = (0..m).map(|i| mm[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
        let mut reg = 0.0;
        let llt = loop {
            match mm.llt(Side::Upper) {
                Ok(l) => break l,
                Err(_) => {
                    let next = if reg == 0.0 { 1e-13 * maxdiag } else { reg * 10.0 };
                    if next > 1e-4 * maxdiag {
                        return None;
                    }
                    for i in 0..m {
                        mm[(i, i)] += next - reg;
                    }
                    reg = next;
                }
            }
        };
        if cp.eq.is_empty() {
            return Some(Factor { llt, z: None, k: None });
        }
        let p = cp.eq.len();
        let mut z = Mat::<f64>::zeros(m, p);
        for (k, r) in cp.eq.iter().enumerate() {
            for (&i, &v) in r.idx.iter().zip(&r.val) {
                z[(i, k)] = v;
            }
        }
        llt.solve_in_place(&mut z);
        let kmat = Mat::<f64>::from_fn(p, p, |a, b| cp.eq[a].idx.iter().zip(&cp.eq[a].val).map(|(&i, &v)| v * z[(i, b)]).sum());
        Some(Factor { llt, z: Some(z), k: Some(kmat.partial_piv_lu()) })
    }

    fn solve(&self, f: &Factor, rhs: &[f64], re: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let m = self.cp.m;
        let mut t = Mat::<f64>::from_fn(m, 1, |i, _| rhs[i]);
        f.llt.solve_in_place(&mut t);
        let mut dy: Vec<f64> = (0..m).map(|i| t[(i, 0)]).collect();
        let mut dlam = Vec::new();
        if let (Some(z), Some(k)) = (&f.z, &f.k) {
            let p = self.cp.eq.len();
            let mut g = Mat::<f64>::from_fn(p, 1, |a, _| self.cp.eq[a].dot(&dy) - re[a]);
            k.solve_in_place(&mut g);
            dlam = (0..p).map(|a| g[(a, 0)]).collect();
            for i in 0..m {
                for a in 0..p {
                    dy[i] -= z[(i, a)] * dlam[a];
                }
            }
        }
        (dy, dlam)
    }

    #[allow(clippy::too_many_arguments)]
    fn direction(
        &self,
        f: &Factor,
        res: &Residuals,
        sinv: &[Mat<c64>],
        sigma_mu: f64,
        corr: Option<&Direction>,
    ) -> Direction {
        let cp = self.cp;
        let nl = cp.lmis.len();
        // H_j = sigma_mu S^{-1} - X - X Rd S^{-1} - dXa dSa S^{-1}
        let mut h = Vec::with_capacity(nl);
        for j in 0..nl {
            let mut hj = &sinv[j] * faer::Scale(c64::new(sigma_mu, 0.0)) - &self.x[j] - &self.x[j] * &res.rd[j] * &sinv[j];
            if let Some(c) = corr {
                hj -= &c.dx[j] * &c.ds[j] * &sinv[j];
            }
            h.push(hj);
        }
        let hl: Vec<f64> = (0..cp.lp.len())
            .map(|i| {
                let mut v = sigma_mu / self.sl[i] - self.xl[i] - self.xl[i] / self.sl[i] * res.rlp[i];
                if let Some(c) = corr {
                    v -= c.dxl[i] * c.dsl[i] / self.sl[i];
                }
                v
            })
            .collect();
        let mut rhs = res.rp.clone();
        for j in 0..nl {
            self.ladj(j, &h[j], &mut rhs);
        }
        for (i, r) in cp.lp.iter().enumerate() {
            r.axpy(-hl[i], &mut rhs);
        }
        let (dy, dlam) = self.solve(f, &rhs, &res.re);
        let mut dx = Vec::with_capacity(nl);
        let mut ds = Vec::with_capacity(nl);
        for j in 0..nl {
            let dsj = &res.rd[j] + self.lmap(j, &dy);
            let mut dxj = &sinv[j] * faer::Scale(c64::new(sigma_mu, 0.0)) - &self.x[j] - &self.x[j] * &dsj * &sinv[j];
            if let Some(c) = corr {
                dxj -= &c.dx[j] * &c.ds[j] * &sinv[j];
            }
            dx.push(herm_part(&dxj));
            ds.push(herm_part(&dsj));
        }
        let dsl: Vec<f64> = cp.lp.iter().enumerate().map(|(i, r)| res.rlp[i] - r.dot(&dy)).collect();
        let dxl: Vec<f64> = (0..cp.lp.len()).map(|i| hl[i] + self.xl[i] / self.sl[i] * (res.rlp[i] - dsl[i])).collect();
        let mut d = Direction { dy, dlam, dx, ds, dxl, dsl };
        self.refine(f, res, sinv, &mut d);
        d
    }

    /// What is left of the linearized primal and equality residuals after
    /// taking the full step `d`.
    fn step_mismatch(&self, res: &Residuals, d: &Direction) -> (Vec<f64>, Vec<f64>) {
        let cp = self.cp;
        let mut e = res.rp.clone();
        for j in 0..cp.lmis.len() {
            self.ladj(j, &d.dx[j], &mut e);
        }
        for (r, &v) in cp.lp.iter().zip(&d.dxl) {
            r.axpy(-v, &mut e);
        }
        for (r, &v) in cp.eq.iter().zip(&d.dlam) {
            r.axpy(-v, &mut e);
        }
        let ee = cp.eq.iter().enumerate().map(|(a, r)| res.re[a] - r.dot(&d.dy)).collect();
        (e, ee)
    }

    /// One round of iterative refinement. Near a rank-deficient optimum the
    /// Schur matrix is badly conditioned and the primal residual otherwise
    /// creeps back up over the last few iterations.
    fn refine(&self, f: &Factor, res: &Residuals, sinv: &[Mat<c64>], d: &mut Direction) {
        let cp = self.cp;
        let (e, ee) = self.step_mismatch(res, d);
        let before = norm(&e) + norm(&ee);
        if before == 0.0 {
            return;
        }
        let (dy, dlam) = self.solve(f, &e, &ee);
        let mut t = d.clone();
        for (a, b) in t.dy.iter_mut().zip(&dy) {
            *a += b;
        }
        for (a, b) in t.dlam.iter_mut().zip(&dlam) {
            *a += b;
        }
        for j in 0..cp.lmis.len() {
            let l = self.lmap(j, &dy);
            t.dx[j] = herm_part(&(&t.dx[j] - &self.x[j] * &l * &sinv[j]));
            t.ds[j] = herm_part(&(&t.ds[j] + &l));
        }
        for (i, r) in cp.lp.iter().enumerate() {
            let v = r.dot(&dy);
            t.dsl[i] -= v;
            t.dxl[i] += self.xl[i] / self.sl[i] * v;
        }
        let (e2, ee2) = self.step_mismatch(res, &t);
        if norm(&e2) + norm(&ee2) < before {
            *d = t;
        }
    }

    fn steps(&self, d: &Direction) -> (f64, f64) {
        let mut ap = lp_step(&self.xl, &d.dxl);
        let mut ad = lp_step(&self.sl, &d.dsl);
        for j in 0..self.cp.lmis.len() {
            ap = ap.min(psd_step(&self.x[j], &d.dx[j]));
            ad = ad.min(psd_step(&self.s[j], &d.ds[j]));
        }
        (ap, ad)
    }

    fn complementarity(&self) -> f64 {
        let mut g: f64 = self.x.iter().zip(&self.s).map(|(x, s)| inner(x, s)).sum();
        g += self.xl.iter().zip(&self.sl).map(|(a, b)| a * b).sum::<f64>();
        g
    }

    fn barrier_dim(&self) -> f64 {
        (self.cp.lmis.iter().map(|l| l.n).sum::<usize>() + self.cp.lp.len()).max(1) as f64
    }

    fn objectives(&self) -> (f64, f64) {
        let cp = self.cp;
        let pobj = cp.b.iter().zip(&self.y).map(|(a, b)| a * b).sum::<f64>() + cp.b0;
        let mut dobj = cp.b0;
        for (l, x) in cp.lmis.iter().zip(&self.x) {
            dobj += inner(&l.c, x);
        }
        dobj += cp.c_lp.iter().zip(&self.xl).map(|(a, b)| a * b).sum::<f64>();
        dobj += cp.f_eq.iter().zip(&self.lam).map(|(a, b)| a * b).sum::<f64>();
        (pobj, dobj)
    }

    fn run(&mut self, opts: &SolverOptions) -> Outcome {
        let mut best: Option<Outcome> = None;
        let mut closest: Option<(f64, Outcome)> = None;
        let (status, iter, stats) = self.iterate(opts, &mut best, &mut closest);
        match (status, best, closest) {
            (SolveStatus::Optimal, _, _) | (SolveStatus::Infeasible, _, _) => Outcome { status, iter, stats, y: self.y.clone(), first: iter },
            (_, Some(b), _) => b,
            (_, None, Some((_, c))) => Outcome { status, ..c },
            (_, None, None) => Outcome { status, iter, stats, y: self.y.clone(), first: iter },
        }
    }

    /// Runs until the tolerances are met ten times over. An iterate that meets
    /// them once is remembered in `best` and returned if later progress stalls.
    /// `closest` tracks the iterate with the smallest worst relative residual,
    /// returned when the tolerances are never met.
    fn iterate(&mut self, opts: &SolverOptions, best: &mut Option<Outcome>, closest: &mut Option<(f64, Outcome)>) -> (SolveStatus, usize, [f64; 5]) {
        let cp = self.cp;
        let nl = cp.lmis.len();
        let nb = 1.0 + norm(&cp.b);
        let nc = 1.0 + (cp.lmis.iter().map(|l| fro(&l.c).powi(2)).sum::<f64>() + cp.c_lp.iter().map(|c| c * c).sum::<f64>() + cp.f_eq.iter().map(|c| c * c).sum::<f64>()).sqrt();
        let mut stall = 0;
        let mut last = [f64::INFINITY; 5];
        for iter in 0..=opts.max_iterations {
            let res = self.residuals();
            let (pobj, dobj) = self.objectives();
            let feas = {
                let rd: f64 = res.rd.iter().map(|r| fro(r).powi(2)).sum::<f64>() + norm(&res.rlp).powi(2) + norm(&res.re).powi(2);
                rd.sqrt() / nc
            };
            let dfeas = norm(&res.rp) / nb;
            let compl = self.complementarity();
            let gap = compl.max((dobj - pobj).abs()) / (1.0 + pobj.abs() + dobj.abs());
            last = [pobj, dobj, feas, dfeas, gap];
            if !(feas.is_finite() && dfeas.is_finite() && gap.is_finite()) {
                return (SolveStatus::MaxIterations, iter, last);
            }
            let merit = (feas / opts.feasibility_tol).max(dfeas / opts.feasibility_tol).max(gap / opts.gap_tol);
            match closest {
                Some((m, c)) if merit >= *m => {
                    // numerical breakdown past the attainable accuracy
                    if merit > 1e3 * *m || iter - c.iter >= 25 {
                        return (SolveStatus::MaxIterations, iter, last);
                    }
                }
                _ => *closest = Some((merit, Outcome { status: SolveStatus::MaxIterations, iter, stats: last, y: self.y.clone(), first: iter })),
            }
            if feas <= opts.feasibility_tol && dfeas <= opts.feasibility_tol && gap <= opts.gap_tol {
                let extra = best.as_ref().map_or(0, |b| iter - b.first);
                if (feas <= 0.1 * opts.feasibility_tol && dfeas <= 0.1 * opts.feasibility_tol && gap <= 0.1 * opts.gap_tol) || extra >= 5 {
                    return (SolveStatus::Optimal, iter, last);
                }
                let first = best.as_ref().map_or(iter, |b| b.first);
                *best = Some(Outcome { status: SolveStatus::Optimal, iter, stats: last, y: self.y.clone(), first });
            }
            // infeasibility certificate: a nonnegative combination of constraints
            // whose value is negative while its y-coefficients nearly vanish
            let kappa = -(dobj - cp.b0);
            if kappa > 0.0 {
                let mut ray = res.rp.clone();
                for (a, b) in ray.iter_mut().zip(&cp.b) {
                    *a -= b;
                }
                if norm(&ray) * nc <= 1e-8 * kappa * nb.max(1.0) && feas > opts.feasibility_tol {
                    return (SolveStatus::Infeasible, iter, last);
                }
            }
            if iter == opts.max_iterations {
                break;
            }
            let mut sinv = Vec::with_capacity(nl);
            for j in 0..nl {
                match self.s[j].llt(Side::Lower) {
                    Ok(l) => sinv.push(herm_part(&l.inverse())),
                    Err(_) => return (SolveStatus::MaxIterations, iter, last),
                }
            }
            let Some(fac) = self.factor(self.schur(&sinv)) else {
                return (SolveStatus::MaxIterations, iter, last);
            };
            let mu = compl / self.barrier_dim();
            let pred = self.direction(&fac, &res, &sinv, 0.0, None);
            let (ap, ad) = self.steps(&pred);
            let (ap, ad) = (ap.min(1.0), ad.min(1.0));
            let mut mu_aff = 0.0;
            for j in 0..nl {
                let xa = &self.x[j] + &pred.dx[j] * faer::Scale(c64::new(ap, 0.0));
                let sa = &self.s[j] + &pred.ds[j] * faer::Scale(c64::new(ad, 0.0));
                mu_aff += inner(&xa, &sa);
            }
            for i in 0..cp.lp.len() {
                mu_aff += (self.xl[i] + ap * pred.dxl[i]) * (self.sl[i] + ad * pred.dsl[i]);
            }
            mu_aff /= self.barrier_dim();
            let expo = 3f64.max(3.0 * ap.min(ad).powi(2));
            let sigma = (mu_aff / mu).max(0.0).powf(expo).min(1.0);
            let corr = self.direction(&fac, &res, &sinv, sigma * mu, Some(&pred));
            let (ap, ad) = self.steps(&corr);
            let gamma = 0.9 + 0.09 * ap.min(ad).min(1.0);
            let ap = (gamma * ap).min(1.0);
            let ad = (gamma * ad).min(1.0);
            if ap < 1e-10 && ad < 1e-10 {
                stall += 1;
                if stall > 3 {
                    return (SolveStatus::MaxIterations, iter, last);
                }
            } else {
                stall = 0;
            }
            let sp = faer::Scale(c64::new(ap, 0.0));
            let sd = faer::Scale(c64::new(ad, 0.0));
            for j in 0..nl {
                self.x[j] = herm_part(&(&self.x[j] + &corr.dx[j] * sp));
                self.s[j] = herm_part(&(&self.s[j] + &corr.ds[j] * sd));
            }
            for i in 0..cp.lp.len() {
                self.xl[i] += ap * corr.dxl[i];
                self.sl[i] += ad * corr.dsl[i];
            }
            for (l, d) in self.lam.iter_mut().zip(&corr.dlam) {
                *l += ap * d;
            }
            for (y, d) in self.y.iter_mut().zip(&corr.dy) {
                *y += ad * d;
            }
        }
        (SolveStatus::MaxIterations, opts.max_iterations, last)
    }
}

#[allow(clippy::too_many_arguments)]
fn accumulate_pair(
    apps1: &[EntryApp],
    apps2: &[EntryApp],
    q: &Mat<c64>,
    r: &Mat<c64>,
    scale: f64,
    same: bool,
    add: &mut impl FnMut(usize, usize, f64),
) {
    // q = G1^H X G2 (n1 x n2), r = G2^H S^{-1} G1 (n2 x n1); rt[i][l] = r[l][i]
    let n1 = q.nrows();
    let n2 = q.ncols();
    let qv: Vec<c64> = (0..n1 * n2).map(|t| q[(t / n2, t % n2)]).collect();
    let rt: Vec<c64> = (0..n1 * n2).map(|t| r[(t % n2, t / n2)]).collect();
    let zero = c64::new(0.0, 0.0);
    for (ia, ea) in apps1.iter().enumerate() {
        let (i, j) = (ea.i, ea.j);
        let qi = &qv[i * n2..(i + 1) * n2];
        let qj = &qv[j * n2..(j + 1) * n2];
        let ri = &rt[i * n2..(i + 1) * n2];
        let rj = &rt[j * n2..(j + 1) * n2];
        let upto = if same { ia + 1 } else { apps2.len() };
        for (ib, eb) in apps2[..upto].iter().enumerate() {
            let (k, l) = (eb.i, eb.j);
            let (a, b) = match (i == j, k == l) {
                (false, false) => (qj[k] * ri[l] + (qi[l] * rj[k]).conj(), qj[l] * ri[k] + (qi[k] * rj[l]).conj()),
                (true, false) => (qi[k] * ri[l], qi[l] * ri[k]),
                (false, true) => (qj[k] * ri[k] + (qi[k] * rj[k]).conj(), zero),
                (true, true) => (qi[k] * ri[k], zero),
            };
            for (pa, &(v, kap)) in ea.vars.iter().enumerate() {
                for (pb, &(w, lam)) in eb.vars.iter().enumerate() {
                    if same && ia == ib && pb < pa {
                        continue;
                    }
                    let zl = lam * a + lam.conj() * b;
                    let mut val = scale * (kap * zl).re;
                    if !same && v == w {
                        val *= 2.0;
                    }
                    add(v, w, val);
                }
            }
        }
    }
}

/// Solves a [`ConicProblem`]. Deterministic: identical inputs give bitwise
/// identical outputs.
pub fn solve_conic(p: &ConicProblem, opts: &SolverOptions) -> Result<ConicSolution> {
    p.validate(opts.max_block_dim)?;
    let cp = compile(p)?;
    let mut ipm = Ipm::new(&cp);
    let out = ipm.run(opts);
    let (status, iterations, [pobj, dobj, feas, dfeas, gap]) = (out.status, out.iter, out.stats);
    let blocks = cp
        .blocks
        .iter()
        .map(|bm| {
            let x = bm.constant() + bm.linear(&out.y);
            HermitianMatrix::symmetrized(DMatrix::from_fn(bm.dim, bm.dim, |i, j| x[(i, j)]))
        })
        .collect();
    Ok(ConicSolution {
        blocks,
        objective: pobj,
        dual_bound: dobj,
        primal_residual: feas,
        dual_residual: dfeas,
        dual_gap: gap,
        status,
        iterations,
    })
}
