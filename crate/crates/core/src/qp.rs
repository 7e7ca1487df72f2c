//! Dense convex quadratic programming.
//!
//! Solves `minimize ½ zᵀPz + qᵀz subject to Gz ≤ h` with a primal-dual
//! interior-point method (Mehrotra predictor-corrector). Matrices are stored
//! densely at the interface; internally each constraint row keeps only its
//! nonzeros and the reduced Newton system is factored with a zero-skipping
//! Cholesky under a degree-ascending variable order, which makes the
//! triangular rows produced by condensed MPC problems cheap.
//!
//! Every `Optimal` answer is certified by [`kkt_residuals`], computed from the
//! problem data and the returned primal/dual pair only.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("P is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("P is not positive semidefinite")]
    NotPsd,
    #[error("non-finite entry in problem data")]
    NonFinite,
    #[error("no feasible grid point")]
    NoFeasibleGridPoint,
}

/// `minimize ½ zᵀPz + qᵀz  s.t.  Gz ≤ h`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    p: DMatrix<f64>,
    q: DVector<f64>,
    g: DMatrix<f64>,
    h: DVector<f64>,
}

const SYMMETRY_TOL: f64 = 1e-9;
const PSD_TOL: f64 = 1e-8;

impl QuadraticProgram {
    pub fn new(
        p: DMatrix<f64>,
        q: DVector<f64>,
        g: DMatrix<f64>,
        h: DVector<f64>,
    ) -> Result<Self, QpError> {
        let n = q.len();
        if n == 0 {
            return Err(QpError::Dimension("need at least one variable".into()));
        }
        if p.nrows() != n || p.ncols() != n {
            return Err(QpError::Dimension(format!(
                "P is {}x{}, expected {n}x{n}",
                p.nrows(),
                p.ncols()
            )));
        }
        if g.ncols() != n || g.nrows() != h.len() {
            return Err(QpError::Dimension(format!(
                "G is {}x{}, h has {} rows, n = {n}",
                g.nrows(),
                g.ncols(),
                h.len()
            )));
        }
        let finite = [p.as_slice(), q.as_slice(), g.as_slice(), h.as_slice()]
            .iter()
            .all(|s| s.iter().all(|x| x.is_finite()));
        if !finite {
            return Err(QpError::NonFinite);
        }
        let mut asym = 0.0f64;
        for j in 0..n {
            for i in j + 1..n {
                asym = asym.max((p[(i, j)] - p[(j, i)]).abs());
            }
        }
        if asym >= SYMMETRY_TOL {
            return Err(QpError::NotSymmetric(asym));
        }
        // Cholesky of P + tol·I exists iff every eigenvalue of P exceeds -tol.
        let mut shifted = DenseSym::from_matrix(&p);
        shifted.add_diagonal(PSD_TOL);
        if !shifted.cholesky_strict() {
            return Err(QpError::NotPsd);
        }
        Ok(Self { p, q, g, h })
    }

    /// Unconstrained problem (`m = 0`).
    pub fn unconstrained(p: DMatrix<f64>, q: DVector<f64>) -> Result<Self, QpError> {
        let n = q.len();
        Self::new(p, q, DMatrix::zeros(0, n), DVector::zeros(0))
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }
    pub fn q(&self) -> &DVector<f64> {
        &self.q
    }
    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }
    pub fn h(&self) -> &DVector<f64> {
        &self.h
    }
    pub fn num_vars(&self) -> usize {
        self.q.len()
    }
    pub fn num_constraints(&self) -> usize {
        self.h.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.p * z)) + self.q.dot(z)
    }

    pub fn is_feasible(&self, z: &DVector<f64>, slack: f64) -> bool {
        let gz = &self.g * z;
        gz.iter().zip(self.h.iter()).all(|(a, b)| *a <= b + slack)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 20_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    PrimalInfeasible,
    /// The objective is unbounded below on the feasible set.
    DualInfeasible,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: DVector<f64>,
    /// Multipliers of `Gz ≤ h`.
    pub lambda: DVector<f64>,
    pub status: QpStatus,
    /// Scaled primal residual, see [`KktResiduals`].
    pub primal_residual: f64,
    /// Scaled stationarity residual, see [`KktResiduals`].
    pub dual_residual: f64,
    pub objective: f64,
    pub iterations: usize,
    /// Farkas vector `y ≥ 0` with `Gᵀy ≈ 0`, `hᵀy < 0` when infeasible.
    pub certificate: Option<DVector<f64>>,
    pub note: Option<String>,
}

/// Scaled KKT residuals of a primal/dual pair.
///
/// * `primal`: `max(Gz − h)⁺ / (1 + ‖h‖∞)`
/// * `dual`: `‖Pz + q + Gᵀλ‖∞ / (1 + max(‖Pz‖∞, ‖q‖∞, ‖Gᵀλ‖∞))`
/// * `complementarity`: `maxᵢ λᵢ |hᵢ − (Gz)ᵢ| / (1 + |f(z)|)`
/// * `dual_sign`: `max(−λ)⁺`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
    pub dual_sign: f64,
}

impl KktResiduals {
    pub fn within(&self, tol: f64) -> bool {
        self.primal <= tol
            && self.dual <= tol
            && self.complementarity <= tol
            && self.dual_sign <= tol
    }
}

pub fn kkt_residuals(qp: &QuadraticProgram, z: &DVector<f64>, lambda: &DVector<f64>) -> KktResiduals {
    let pz = &qp.p * z;
    let gz = &qp.g * z;
    let gtl = qp.g.tr_mul(lambda);
    let h_norm = qp.h.amax();
    let primal = gz
        .iter()
        .zip(qp.h.iter())
        .map(|(a, b)| a - b)
        .fold(0.0, f64::max)
        / (1.0 + h_norm);
    let stat = (&pz + &qp.q + &gtl).amax();
    let scale = 1.0 + pz.amax().max(qp.q.amax()).max(gtl.amax());
    let obj = 0.5 * z.dot(&pz) + qp.q.dot(z);
    let comp = lambda
        .iter()
        .zip(gz.iter().zip(qp.h.iter()))
        .map(|(l, (a, b))| (l * (b - a)).abs())
        .fold(0.0, f64::max)
        / (1.0 + obj.abs());
    let sign = lambda.iter().map(|l| -l).fold(0.0, f64::max);
    KktResiduals {
        primal,
        dual: stat / scale,
        complementarity: comp,
        dual_sign: sign,
    }
}

/// Constraint matrix by rows, nonzeros only.
struct SparseRows {
    start: Vec<usize>,
    idx: Vec<usize>,
    val: Vec<f64>,
}

impl SparseRows {
    fn from_dense(g: &DMatrix<f64>) -> Self {
        let (m, n) = g.shape();
        let mut start = Vec::with_capacity(m + 1);
        let mut idx = Vec::new();
        let mut val = Vec::new();
        start.push(0);
        for i in 0..m {
            for j in 0..n {
                let a = g[(i, j)];
                if a != 0.0 {
                    idx.push(j);
                    val.push(a);
                }
            }
            start.push(idx.len());
        }
        Self {
            start,
            idx,
            val,

        }
    }

    fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.start[i]..self.start[i + 1];
        (&self.idx[r.clone()], &self.val[r])
    }

    fn mul(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let (ix, vx) = self.row(i);
            *o = ix.iter().zip(vx).map(|(&j, &a)| a * x[j]).sum();
        }
    }

    fn tr_mul(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &yi) in y.iter().enumerate() {
            if yi == 0.0 {
                continue;
            }
            let (ix, vx) = self.row(i);
            for (&j, &a) in ix.iter().zip(vx) {
                out[j] += a * yi;
            }
        }
    }
}

/// Symmetric matrix stored as a full row-major square; only the lower
/// triangle is meaningful after factorization.
struct DenseSym {
    n: usize,
    a: Vec<f64>,
}

impl DenseSym {
    fn zeros(n: usize) -> Self {
        Self {
            n,
            a: vec![0.0; n * n],
        }
    }

    fn from_matrix(m: &DMatrix<f64>) -> Self {
        let n = m.nrows();
        let mut out = Self::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                out.a[i * n + j] = m[(i, j)];
            }
        }
        out
    }

    fn add_diagonal(&mut self, d: f64) {
        for i in 0..self.n {
            self.a[i * self.n + i] += d;
        }
    }

    /// In-place lower Cholesky. Fails on a non-positive pivot.
    fn cholesky_strict(&mut self) -> bool {
        self.factor(None)
    }

    /// In-place lower Cholesky; tiny pivots are replaced by `floor`.
    fn cholesky_regularized(&mut self, floor: f64) {
        self.factor(Some(floor));
    }

    fn factor(&mut self, floor: Option<f64>) -> bool {
        let n = self.n;
        let a = &mut self.a;
        let mut nz: Vec<usize> = Vec::with_capacity(n);
        let mut lk: Vec<f64> = Vec::with_capacity(n);
        for k in 0..n {
            let mut d = a[k * n + k];
            if !(d > 0.0) || !d.is_finite() {
                match floor {
                    Some(f) => d = f,
                    None => return false,
                }
            } else if let Some(f) = floor {
                d = d.max(f);
            }
            let lkk = d.sqrt();
            a[k * n + k] = lkk;
            nz.clear();
            lk.clear();
            for i in k + 1..n {
                let v = a[i * n + k];
                if v != 0.0 {
                    let l = v / lkk;
                    a[i * n + k] = l;
                    nz.push(i);
                    lk.push(l);
                }
            }
            let Some(&first) = nz.first() else {
                continue;
            };
            let contiguous = nz[nz.len() - 1] - first + 1 == nz.len();
            for (pos, &i) in nz.iter().enumerate() {
                let lik = lk[pos];
                if contiguous {
                    let row = &mut a[i * n + first..=i * n + i];
                    for (x, l) in row.iter_mut().zip(&lk[..=pos]) {
                        *x -= lik * l;
                    }
                } else {
                    let row = &mut a[i * n..=i * n + i];
                    for (&j, l) in nz[..=pos].iter().zip(&lk[..=pos]) {
                        row[j] -= lik * l;
                    }
                }
            }
        }
        true
    }

    /// Solves `L Lᵀ x = b` in place.
    fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        let a = &self.a;
        for i in 0..n {
            let row = &a[i * n..i * n + i];
            let s: f64 = row.iter().zip(&b[..i]).map(|(l, x)| l * x).sum();
            b[i] = (b[i] - s) / a[i * n + i];
        }
        for i in (0..n).rev() {
            let xi = b[i] / a[i * n + i];
            b[i] = xi;
            if xi != 0.0 {
                let row = &a[i * n..i * n + i];
                for (bj, l) in b[..i].iter_mut().zip(row) {
                    *bj -= l * xi;
                }
            }
        }
    }
}

/// Solver workspace bound to one problem.
struct Ipm<'a> {
    qp: &'a QuadraticProgram,
    n: usize,
    m: usize,
    rows: SparseRows,
    /// Lower-triangle (in permuted order) entries of P, as (pi, pj, value).
    p_entries: Vec<(usize, usize, f64)>,
    /// Row nonzeros mapped to permuted variable indices.
    rows_perm: Vec<Vec<(usize, f64)>>,
    /// `perm[k]` is the original index of permuted variable `k`.
    perm: Vec<usize>,
    inv: Vec<usize>,
    p_dense: Vec<f64>,
}

impl<'a> Ipm<'a> {
    fn new(qp: &'a QuadraticProgram) -> Self {
        let n = qp.num_vars();
        let m = qp.num_constraints();
        let rows = SparseRows::from_dense(&qp.g);

        // Static degree-ascending order on the pattern of P + GᵀG.
        let mut pattern = vec![false; n * n];
        for i in 0..n {
            for j in 0..n {
                if qp.p[(i, j)] != 0.0 {
                    pattern[i * n + j] = true;
                }
            }
        }
        for r in 0..m {
            let (ix, _) = rows.row(r);
            for &a in ix {
                for &b in ix {
                    pattern[a * n + b] = true;
                }
            }
        }
        let degree: Vec<usize> = (0..n)
            .map(|i| pattern[i * n..(i + 1) * n].iter().filter(|&&x| x).count())
            .collect();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.sort_by_key(|&i| (degree[i], i));
        let mut inv = vec![0; n];
        for (k, &i) in perm.iter().enumerate() {
            inv[i] = k;
        }

        let mut p_entries = Vec::new();
        let mut p_dense = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let v = qp.p[(i, j)];
                p_dense[i * n + j] = v;
                if v != 0.0 && inv[i] >= inv[j] {
                    p_entries.push((inv[i], inv[j], v));
                }
            }
        }
        let rows_perm = (0..m)
            .map(|r| {
                let (ix, vx) = rows.row(r);
                let mut r: Vec<(usize, f64)> =
                    ix.iter().zip(vx).map(|(&j, &v)| (inv[j], v)).collect();
                r.sort_by_key(|e| e.0);
                r
            })
            .collect();

        Self {
            qp,
            n,
            m,
            rows,
            p_entries,
            rows_perm,
            perm,
            inv,
            p_dense,
        }
    }

    fn p_mul(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.p_dense[i * n..(i + 1) * n]
                .iter()
                .zip(x)
                .map(|(a, b)| a * b)
                .sum();
        }
    }

    /// Factor `P + Gᵀ diag(w) G + reg·I` in permuted order into `k`.
    fn factor(&self, w: &[f64], reg: f64, k: &mut DenseSym) {
        let n = self.n;
        for i in 0..n {
            k.a[i * n..=i * n + i].fill(0.0);
        }
        for &(i, j, v) in &self.p_entries {
            k.a[i * n + j] += v;
        }
        for (row, &wi) in self.rows_perm.iter().zip(w) {
            for (ai, &(i, vi)) in row.iter().enumerate() {
                let s = wi * vi;
                let dst = &mut k.a[i * n..=i * n + i];
                for &(j, vj) in &row[..=ai] {
                    dst[j] += s * vj;
                }
            }
        }
        let max_diag = (0..n).map(|i| k.a[i * n + i]).fold(0.0, f64::max);
        k.add_diagonal(reg);
        k.cholesky_regularized(1e-14 * (1.0 + max_diag));
    }

    fn solve_reduced(&self, chol: &DenseSym, rhs: &[f64], out: &mut [f64]) {
        let mut b: Vec<f64> = self.perm.iter().map(|&i| rhs[i]).collect();
        chol.solve_in_place(&mut b);
        for (i, o) in out.iter_mut().enumerate() {
            *o = b[self.inv[i]];
        }
    }

    /// [`kkt_residuals`] from vectors the iteration already holds.
    #[allow(clippy::too_many_arguments)]
    fn residuals(
        &self,
        z: &[f64],
        lam: &[f64],
        pz: &[f64],
        gz: &[f64],
        gtl: &[f64],
        r_d: &[f64],
        h_norm: f64,
    ) -> KktResiduals {
        let h = self.qp.h.as_slice();
        let q = self.qp.q.as_slice();
        let amax = |v: &[f64]| v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let primal = gz
            .iter()
            .zip(h)
            .map(|(a, b)| a - b)
            .fold(0.0, f64::max)
            / (1.0 + h_norm);
        let scale = 1.0 + amax(pz).max(amax(q)).max(amax(gtl));
        let obj = 0.5 * dot(z, pz) + dot(q, z);
        let comp = lam
            .iter()
            .zip(gz.iter().zip(h))
            .map(|(l, (a, b))| (l * (b - a)).abs())
            .fold(0.0, f64::max)
            / (1.0 + obj.abs());
        KktResiduals {
            primal,
            dual: amax(r_d) / scale,
            complementarity: comp,
            dual_sign: 0.0,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn newton(
        &self,
        chol: &DenseSym,
        w: &[f64],
        s: &[f64],
        lam: &[f64],
        r_d: &[f64],
        r_p: &[f64],
        r_c: &[f64],
        dz: &mut [f64],
        dl: &mut [f64],
        ds: &mut [f64],
    ) {
        let (n, m) = (self.n, self.m);
        let t: Vec<f64> = (0..m).map(|i| w[i] * (r_p[i] - r_c[i] / lam[i])).collect();
        let mut gt = vec![0.0; n];
        self.rows.tr_mul(&t, &mut gt);
        let rhs: Vec<f64> = (0..n).map(|j| -r_d[j] - gt[j]).collect();
        self.solve_reduced(chol, &rhs, dz);
        let mut gdz = vec![0.0; m];
        self.rows.mul(dz, &mut gdz);
        for i in 0..m {
            dl[i] = w[i] * (gdz[i] + r_p[i] - r_c[i] / lam[i]);
            ds[i] = -(r_c[i] + s[i] * dl[i]) / lam[i];
        }
    }

    fn run(&self, settings: &QpSettings) -> QpSolution {
        let (n, m) = (self.n, self.m);
        let qp = self.qp;
        let q: Vec<f64> = qp.q.iter().copied().collect();
        let h: Vec<f64> = qp.h.iter().copied().collect();
        let h_norm = h.iter().fold(0.0f64, |a, b| a.max(b.abs()));

        // Initial point: minimise ½zᵀPz + qᵀz + ½‖Gz − h‖², then shift.
        let ones = vec![1.0; m];
        let mut chol = DenseSym::zeros(n);
        self.factor(&ones, 1e-8, &mut chol);
        let mut gth = vec![0.0; n];
        self.rows.tr_mul(&h, &mut gth);
        let rhs: Vec<f64> = (0..n).map(|j| -q[j] + gth[j]).collect();
        let mut z = vec![0.0; n];
        self.solve_reduced(&chol, &rhs, &mut z);
        let mut gz = vec![0.0; m];
        self.rows.mul(&z, &mut gz);
        let mut s: Vec<f64> = (0..m).map(|i| h[i] - gz[i]).collect();
        let mut lam: Vec<f64> = s.iter().map(|x| -x).collect();
        shift_positive(&mut s);
        shift_positive(&mut lam);

        let mut pz = vec![0.0; n];
        let mut gtl = vec![0.0; n];
        let mut r_d = vec![0.0; n];
        let mut r_p = vec![0.0; m];
        let mut dz = vec![0.0; n];
        let mut dl = vec![0.0; m];
        let mut ds = vec![0.0; m];
        let mut dz_a = vec![0.0; n];
        let mut dl_a = vec![0.0; m];
        let mut ds_a = vec![0.0; m];
        let mut stalled = 0usize;
        let mut best_merit = f64::INFINITY;

        for it in 0..settings.max_iter {
            self.rows.mul(&z, &mut gz);
            self.p_mul(&z, &mut pz);
            self.rows.tr_mul(&lam, &mut gtl);
            for j in 0..n {
                r_d[j] = pz[j] + q[j] + gtl[j];
            }
            for i in 0..m {
                r_p[i] = gz[i] + s[i] - h[i];
            }
            let mu = dot(&s, &lam) / m as f64;

            let res = self.residuals(&z, &lam, &pz, &gz, &gtl, &r_d, h_norm);
            if res.within(0.5 * settings.tol) {
                let zv = DVector::from_column_slice(&z);
                let lv = DVector::from_column_slice(&lam);
                if kkt_residuals(qp, &zv, &lv).within(settings.tol) {
                    return finish(qp, zv, lv, QpStatus::Optimal, it, None, None);
                }
            }

            if let Some((y, radius)) = farkas(&self.rows, &lam, &h, n) {
                let note = format!(
                    "Farkas certificate: no feasible point with |z|∞ < {radius:.3e}"
                );
                let (zv, lv) = (DVector::from_vec(z), DVector::from_vec(lam));
                let mut sol = finish(qp, zv, lv, QpStatus::PrimalInfeasible, it, None, Some(note));
                sol.certificate = Some(DVector::from_vec(y));
                return sol;
            }
            if z.iter().any(|x| x.abs() > 1e12) {
                let note = "iterates diverged; objective unbounded below".to_string();
                let (zv, lv) = (DVector::from_vec(z), DVector::from_vec(lam));
                return finish(qp, zv, lv, QpStatus::DualInfeasible, it, None, Some(note));
            }

            let merit = res.primal.max(res.dual).max(mu / (1.0 + h_norm));
            if merit < 0.999 * best_merit {
                best_merit = merit;
                stalled = 0;
            } else {
                stalled += 1;
                if stalled > 60 {
                    let note = format!("no progress for {stalled} iterations");
                    let (zv, lv) = (DVector::from_vec(z), DVector::from_vec(lam));
                    return finish(qp, zv, lv, QpStatus::IterationLimit, it, None, Some(note));
                }
            }

            let w: Vec<f64> = (0..m).map(|i| lam[i] / s[i]).collect();
            self.factor(&w, 1e-12, &mut chol);

            // Predictor.
            let r_c: Vec<f64> = (0..m).map(|i| s[i] * lam[i]).collect();
            self.newton(&chol, &w, &s, &lam, &r_d, &r_p, &r_c, &mut dz_a, &mut dl_a, &mut ds_a);
            let a_aff = max_step(&s, &ds_a).min(max_step(&lam, &dl_a)).min(1.0);
            let mu_aff = (0..m)
                .map(|i| (s[i] + a_aff * ds_a[i]) * (lam[i] + a_aff * dl_a[i]))
                .sum::<f64>()
                / m as f64;
            let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

            // Corrector.
            let r_c: Vec<f64> = (0..m)
                .map(|i| s[i] * lam[i] + ds_a[i] * dl_a[i] - sigma * mu)
                .collect();
            self.newton(&chol, &w, &s, &lam, &r_d, &r_p, &r_c, &mut dz, &mut dl, &mut ds);
            let alpha = (0.99 * max_step(&s, &ds).min(max_step(&lam, &dl))).min(1.0);

            for j in 0..n {
                z[j] += alpha * dz[j];
            }
            for i in 0..m {
                s[i] = (s[i] + alpha * ds[i]).max(1e-300);
                lam[i] = (lam[i] + alpha * dl[i]).max(1e-300);
            }
        }

        let zv = DVector::from_vec(z);
        let lv = DVector::from_vec(lam);
        finish(qp, zv, lv, QpStatus::IterationLimit, settings.max_iter, None, None)
    }
}

fn finish(
    qp: &QuadraticProgram,
    z: DVector<f64>,
    lambda: DVector<f64>,
    status: QpStatus,
    iterations: usize,
    certificate: Option<DVector<f64>>,
    note: Option<String>,
) -> QpSolution {
    let res = kkt_residuals(qp, &z, &lambda);
    QpSolution {
        objective: qp.objective(&z),
        primal_residual: res.primal,
        dual_residual: res.dual,
        z,
        lambda,
        status,
        iterations,
        certificate,
        note,
    }
}

/// Checks whether the normalised multipliers prove `{Gz ≤ h}` empty inside a
/// large ball: `y ≥ 0`, `hᵀy < 0`, and `|yᵀGz| ≤ ‖Gᵀy‖₁ ‖z‖∞ < |hᵀy|`.
fn farkas(rows: &SparseRows, lam: &[f64], h: &[f64], n: usize) -> Option<(Vec<f64>, f64)> {
    let scale = lam.iter().fold(0.0f64, |a, &b| a.max(b));
    if scale < 1e3 {
        return None;
    }
    let y: Vec<f64> = lam.iter().map(|l| l / scale).collect();
    let hy = dot(h, &y);
    if hy >= 0.0 {
        return None;
    }
    let mut gty = vec![0.0; n];
    rows.tr_mul(&y, &mut gty);
    let g1: f64 = gty.iter().map(|x| x.abs()).sum();
    let radius = if g1 == 0.0 { f64::INFINITY } else { -hy / g1 };
    (radius > 1e6).then_some((y, radius))
}

fn shift_positive(v: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let shift = if min <= 0.0 { 1.0 - min } else { 0.0 };
    for x in v.iter_mut() {
        *x = (*x + shift).max(1e-2);
    }
}

fn max_step(x: &[f64], dx: &[f64]) -> f64 {
    x.iter()
        .zip(dx)
        .filter(|(_, d)| **d < 0.0)
        .map(|(x, d)| -x / d)
        .fold(f64::INFINITY, f64::min)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves the program to the scaled tolerance `settings.tol`.
pub fn solve(qp: &QuadraticProgram, settings: &QpSettings) -> QpSolution {
    assert!(settings.tol > 0.0, "tolerance must be positive");
    if qp.num_constraints() == 0 {
        return solve_unconstrained(qp, settings);
    }
    Ipm::new(qp).run(settings)
}

fn solve_unconstrained(qp: &QuadraticProgram, settings: &QpSettings) -> QpSolution {
    let svd = qp.p.clone().svd(true, true);
    let z = svd
        .solve(&(-&qp.q), 1e-12 * (1.0 + qp.p.amax()))
        .unwrap_or_else(|_| DVector::zeros(qp.num_vars()));
    let lambda = DVector::zeros(0);
    let res = kkt_residuals(qp, &z, &lambda);
    let (status, note) = if res.within(settings.tol) {
        (QpStatus::Optimal, None)
    } else {
        (
            QpStatus::DualInfeasible,
            Some("q has a component outside the range of P".to_string()),
        )
    };
    finish(qp, z, lambda, status, 1, None, note)
}

/// Box and resolution for [`brute_force_reference`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub step: f64,
}

/// Exhaustive grid search over a box: the best feasible grid point.
/// A test oracle for small problems (`n ≤ 4`).
pub fn brute_force_reference(
    qp: &QuadraticProgram,
    grid: &GridSpec,
) -> Result<DVector<f64>, QpError> {
    let n = qp.num_vars();
    if n > 4 || grid.lower.len() != n || grid.upper.len() != n || !(grid.step > 0.0) {
        return Err(QpError::Dimension(
            "grid search needs n <= 4, matching bounds and a positive step".into(),
        ));
    }
    let counts: Vec<usize> = (0..n)
        .map(|k| ((grid.upper[k] - grid.lower[k]) / grid.step).floor().max(0.0) as usize + 1)
        .collect();
    let m = qp.num_constraints();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut index = vec![0usize; n];
    let mut z = vec![0.0; n];
    'outer: loop {
        for k in 0..n {
            z[k] = grid.lower[k] + index[k] as f64 * grid.step;
        }
        let feasible = (0..m).all(|i| {
            let gz: f64 = (0..n).map(|j| qp.g[(i, j)] * z[j]).sum();
            gz <= qp.h[i] + 1e-12
        });
        if feasible {
            let mut f = 0.0;
            for i in 0..n {
                f += qp.q[i] * z[i];
                for j in 0..n {
                    f += 0.5 * z[i] * qp.p[(i, j)] * z[j];
                }
            }
            if best.as_ref().is_none_or(|(b, _)| f < *b) {
                best = Some((f, z.clone()));
            }
        }
        for k in 0..n {
            index[k] += 1;
            if index[k] < counts[k] {
                continue 'outer;
            }
            index[k] = 0;
        }
        break;
    }
    best.map(|(_, z)| DVector::from_vec(z))
        .ok_or(QpError::NoFeasibleGridPoint)
}
