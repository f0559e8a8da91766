//! Dense primal active-set solver for convex QPs
//!
//! ```text
//! min  1/2 x'Hx + h'x   s.t.  lower <= x <= upper,  A x <= b
//! ```
//!
//! `H` only needs to be positive semidefinite. Each iteration solves the
//! equality-constrained subproblem on the free variables; a Cholesky fast path
//! handles the positive definite case and a null-space eigen decomposition the
//! singular one, where zero-curvature descent directions are followed to the
//! next blocking constraint. Ties are broken by the lowest constraint index:
//! lower bounds `0..n`, upper bounds `n..2n`, rows `2n..2n+m`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    /// Inequality rows `a x <= b`; may have zero rows.
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl QpProblem {
    pub fn boxed(
        hessian: DMatrix<f64>,
        gradient: DVector<f64>,
        lower: DVector<f64>,
        upper: DVector<f64>,
    ) -> Self {
        let n = gradient.len();
        Self {
            hessian,
            gradient,
            lower,
            upper,
            a: DMatrix::zeros(0, n),
            b: DVector::zeros(0),
        }
    }

    pub fn n(&self) -> usize {
        self.gradient.len()
    }

    pub fn m(&self) -> usize {
        self.b.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.gradient.dot(x)
    }

    fn check(&self) -> Result<()> {
        let n = self.n();
        let ok = self.hessian.shape() == (n, n)
            && self.lower.len() == n
            && self.upper.len() == n
            && self.a.ncols() == n
            && self.a.nrows() == self.b.len();
        if !ok {
            return Err(Error::Dimension(
                "QP data has inconsistent dimensions".into(),
            ));
        }
        let sym = (&self.hessian - self.hessian.transpose()).amax();
        if sym > 1e-10 * (1.0 + self.hessian.amax()) {
            return Err(Error::Dimension(format!(
                "QP Hessian is not symmetric (asymmetry {sym:e})"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum QpStatus {
    Optimal,
    /// Iteration limit reached; the returned point is the best feasible iterate.
    MaxIterations,
    /// No feasible point. `certificate` holds nonnegative weights `y` (bounds
    /// first as `[lower; upper]`, then rows) proving inconsistency.
    Infeasible {
        certificate: Vec<f64>,
    },
    /// The objective decreases without bound along a feasible ray.
    Unbounded,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KktResidual {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.complementarity)
    }
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Multipliers of `lower <= x` (nonnegative).
    pub lower_mult: DVector<f64>,
    /// Multipliers of `x <= upper` (nonnegative).
    pub upper_mult: DVector<f64>,
    /// Multipliers of the inequality rows (nonnegative).
    pub row_mult: DVector<f64>,
    pub objective: f64,
    pub kkt: KktResidual,
    pub status: QpStatus,
    pub iterations: usize,
    /// Constraint indices active at the solution, ascending.
    pub active: Vec<usize>,
}

/// Initial point and working-set guess.
#[derive(Clone, Debug, Default)]
pub struct WarmStart {
    pub x: Option<DVector<f64>>,
    pub active: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct QpSettings {
    pub max_iterations: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            max_iterations: 500,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bound {
    Free,
    Lower,
    Upper,
    /// `lower == upper`
    Fixed,
}

enum Step {
    /// Minimizer of the subproblem along the working face.
    Newton(DVector<f64>),
    /// Descent direction of zero curvature.
    Ray(DVector<f64>),
}

struct Working {
    bounds: Vec<Bound>,
    rows: Vec<usize>,
}

impl Working {
    fn free(&self) -> Vec<usize> {
        (0..self.bounds.len())
            .filter(|&j| self.bounds[j] == Bound::Free)
            .collect()
    }

    fn ids(&self, n: usize) -> Vec<usize> {
        let mut ids = Vec::new();
        for (j, b) in self.bounds.iter().enumerate() {
            match b {
                Bound::Lower => ids.push(j),
                Bound::Upper | Bound::Fixed => ids.push(n + j),
                Bound::Free => {}
            }
        }
        ids.extend(self.rows.iter().map(|r| 2 * n + r));
        ids.sort_unstable();
        ids
    }
}

/// Solve a convex QP from an optional warm start.
pub fn solve_qp(problem: &QpProblem, warm: &WarmStart) -> Result<QpSolution> {
    solve_qp_with(problem, warm, &QpSettings::default())
}

pub fn solve_qp_with(
    problem: &QpProblem,
    warm: &WarmStart,
    settings: &QpSettings,
) -> Result<QpSolution> {
    problem.check()?;
    let n = problem.n();
    let m = problem.m();

    // Inconsistent bounds: y_lower_j = y_upper_j = 1 gives 0 <= u_j - l_j < 0.
    if let Some(j) = (0..n).find(|&j| problem.lower[j] > problem.upper[j]) {
        let mut cert = vec![0.0; 2 * n + m];
        cert[j] = 1.0;
        cert[n + j] = 1.0;
        return Ok(infeasible(problem, cert));
    }

    let mut x = match &warm.x {
        Some(x0) if x0.len() == n => x0.clone(),
        _ => DVector::zeros(n),
    };
    for j in 0..n {
        x[j] = x[j].clamp(problem.lower[j], problem.upper[j]);
    }

    let feas_tol = 1e-12 * (1.0 + problem.b.amax().max(problem.a.amax()));
    if m > 0 && (0..m).any(|r| row_slack(problem, &x, r) < -feas_tol) {
        match phase_one(problem, &x, settings)? {
            Ok(feasible) => x = feasible,
            Err(cert) => return Ok(infeasible(problem, cert)),
        }
    }

    let mut working = Working {
        bounds: (0..n)
            .map(|j| {
                if problem.lower[j] == problem.upper[j] {
                    Bound::Fixed
                } else {
                    Bound::Free
                }
            })
            .collect(),
        rows: Vec::new(),
    };
    for &id in &warm.active {
        if id < n && working.bounds[id] == Bound::Free && x[id] == problem.lower[id] {
            working.bounds[id] = Bound::Lower;
        } else if (n..2 * n).contains(&id)
            && working.bounds[id - n] == Bound::Free
            && x[id - n] == problem.upper[id - n]
        {
            working.bounds[id - n] = Bound::Upper;
        } else if (2 * n..2 * n + m).contains(&id) {
            let r = id - 2 * n;
            if row_slack(problem, &x, r).abs() <= feas_tol && !working.rows.contains(&r) {
                working.rows.push(r);
            }
        }
    }
    // Warm rows must stay independent on the free set; drop any that are not.
    if !working.rows.is_empty() {
        let free = working.free();
        let mut kept: Vec<usize> = Vec::new();
        for &r in &working.rows {
            let mut trial = kept.clone();
            trial.push(r);
            if row_rank(problem, &trial, &free) == trial.len() {
                kept = trial;
            }
        }
        working.rows = kept;
    }

    let scale = 1.0 + problem.hessian.amax() + problem.gradient.amax();
    let mut at_face_min = false;
    let mut iterations = 0;
    let mut status = QpStatus::MaxIterations;

    while iterations < settings.max_iterations {
        iterations += 1;
        let g = &problem.hessian * &x + &problem.gradient;
        let free = working.free();

        let step = if at_face_min {
            None
        } else {
            Some(face_step(problem, &g, &working, &free)?)
        };
        at_face_min = false;

        let direction = match step {
            Some(Step::Newton(p)) if p.amax() > 1e-13 * (1.0 + x.amax()) => Some((p, false)),
            Some(Step::Ray(p)) => Some((p, true)),
            _ => None,
        };

        match direction {
            None => {
                let (lambda, mu) = multipliers(problem, &g, &working, &free);
                let tol = 1e-11 * scale * (1.0 + x.amax());
                // Most negative multiplier, lowest constraint index on ties.
                let mut worst: Option<(f64, usize)> = None;
                for (j, b) in working.bounds.iter().enumerate() {
                    let id = match b {
                        Bound::Lower => j,
                        Bound::Upper => n + j,
                        _ => continue,
                    };
                    if mu[j] < -tol
                        && worst.is_none_or(|(v, wid)| mu[j] < v || (mu[j] == v && id < wid))
                    {
                        worst = Some((mu[j], id));
                    }
                }
                for (k, &r) in working.rows.iter().enumerate() {
                    let id = 2 * n + r;
                    if lambda[k] < -tol
                        && worst
                            .is_none_or(|(v, wid)| lambda[k] < v || (lambda[k] == v && id < wid))
                    {
                        worst = Some((lambda[k], id));
                    }
                }
                match worst {
                    None => {
                        status = QpStatus::Optimal;
                        break;
                    }
                    Some((_, id)) if id < 2 * n => working.bounds[id % n] = Bound::Free,
                    Some((_, id)) => working.rows.retain(|&r| r != id - 2 * n),
                }
            }
            Some((p, is_ray)) => {
                let (alpha, blocking) = ratio_test(problem, &x, &p, &working, is_ray);
                if blocking.is_none() && is_ray {
                    status = QpStatus::Unbounded;
                    break;
                }
                x.axpy(alpha, &p, 1.0);
                match blocking {
                    Some(id) if id < n => {
                        x[id] = problem.lower[id];
                        working.bounds[id] = Bound::Lower;
                    }
                    Some(id) if id < 2 * n => {
                        x[id - n] = problem.upper[id - n];
                        working.bounds[id - n] = Bound::Upper;
                    }
                    Some(id) => working.rows.push(id - 2 * n),
                    None => at_face_min = true,
                }
            }
        }
    }

    Ok(finish(problem, x, &working, status, iterations))
}

fn row_slack(problem: &QpProblem, x: &DVector<f64>, r: usize) -> f64 {
    problem.b[r] - problem.a.row(r).dot(&x.transpose())
}

fn row_rank(problem: &QpProblem, rows: &[usize], free: &[usize]) -> usize {
    if rows.is_empty() || free.is_empty() {
        return 0;
    }
    let a = DMatrix::from_fn(rows.len(), free.len(), |i, k| problem.a[(rows[i], free[k])]);
    let svd = a.svd(false, false);
    let tol = 1e-10 * (1.0 + svd.singular_values.amax());
    svd.singular_values.iter().filter(|s| **s > tol).count()
}

fn sub_hessian(problem: &QpProblem, free: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(free.len(), free.len(), |i, k| {
        problem.hessian[(free[i], free[k])]
    })
}

fn face_step(
    problem: &QpProblem,
    g: &DVector<f64>,
    working: &Working,
    free: &[usize],
) -> Result<Step> {
    let n = problem.n();
    let nf = free.len();
    let mut full = DVector::zeros(n);
    if nf == 0 {
        return Ok(Step::Newton(full));
    }
    let hf = sub_hessian(problem, free);
    let gf = DVector::from_fn(nf, |i, _| g[free[i]]);
    let rows = &working.rows;
    let af = DMatrix::from_fn(rows.len(), nf, |i, k| problem.a[(rows[i], free[k])]);

    if let Some(chol) = hf.clone().cholesky() {
        let hinv_g = chol.solve(&gf);
        let pf = if rows.is_empty() {
            -hinv_g
        } else {
            let hinv_at = chol.solve(&af.transpose());
            let schur = &af * &hinv_at;
            let rhs = -(&af * &hinv_g);
            let lambda = schur
                .clone()
                .cholesky()
                .map(|c| c.solve(&rhs))
                .or_else(|| schur.clone().lu().solve(&rhs))
                .ok_or_else(|| Error::Dimension("dependent working rows".into()))?;
            -(hinv_g + hinv_at * lambda)
        };
        for (i, &j) in free.iter().enumerate() {
            full[j] = pf[i];
        }
        return Ok(Step::Newton(full));
    }

    // Singular reduced Hessian: work in an orthonormal basis of null(A_F).
    let z = if rows.is_empty() {
        DMatrix::identity(nf, nf)
    } else {
        null_space(&af)
    };
    if z.ncols() == 0 {
        return Ok(Step::Newton(full));
    }
    let hr = z.transpose() * &hf * &z;
    let hr = (&hr + hr.transpose()) * 0.5;
    let gr = z.transpose() * &gf;
    let eig = hr.symmetric_eigen();
    let lmax = eig.eigenvalues.amax();
    let tol = 1e-10 * (1.0 + lmax);
    let mut flat = DVector::zeros(gr.len());
    let mut newton = DVector::zeros(gr.len());
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        let c = v.dot(&gr);
        if l <= tol {
            flat -= v * c;
        } else {
            newton -= v * (c / l);
        }
    }
    let gscale = 1e-12 * (1.0 + gf.amax());
    let (pr, ray) = if flat.amax() > gscale {
        (flat, true)
    } else {
        (newton, false)
    };
    let pf = z * pr;
    for (i, &j) in free.iter().enumerate() {
        full[j] = pf[i];
    }
    Ok(if ray {
        Step::Ray(full)
    } else {
        Step::Newton(full)
    })
}

fn null_space(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, n) = a.shape();
    // Pad to square so the SVD returns a full set of right singular vectors.
    let mut padded = DMatrix::zeros(n.max(m), n);
    padded.rows_mut(0, m).copy_from(a);
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("v_t requested");
    let smax = svd.singular_values.amax();
    let tol = 1e-10 * (1.0 + smax);
    let cols: Vec<usize> = (0..n).filter(|&k| svd.singular_values[k] <= tol).collect();
    DMatrix::from_fn(n, cols.len(), |i, k| vt[(cols[k], i)])
}

/// Row multipliers by least squares on the free set, then bound multipliers.
fn multipliers(
    problem: &QpProblem,
    g: &DVector<f64>,
    working: &Working,
    free: &[usize],
) -> (DVector<f64>, DVector<f64>) {
    let n = problem.n();
    let rows = &working.rows;
    let lambda = if rows.is_empty() || free.is_empty() {
        DVector::zeros(rows.len())
    } else {
        let af = DMatrix::from_fn(rows.len(), free.len(), |i, k| problem.a[(rows[i], free[k])]);
        let gf = DVector::from_fn(free.len(), |i, _| g[free[i]]);
        let normal = &af * af.transpose();
        let rhs = -(&af * gf);
        normal
            .clone()
            .cholesky()
            .map(|c| c.solve(&rhs))
            .unwrap_or_else(|| {
                normal
                    .svd(true, true)
                    .solve(&rhs, 1e-14)
                    .unwrap_or_else(|_| DVector::zeros(rows.len()))
            })
    };
    let mut reduced = g.clone();
    for (k, &r) in rows.iter().enumerate() {
        reduced += problem.a.row(r).transpose() * lambda[k];
    }
    let mut mu = DVector::zeros(n);
    for (j, b) in working.bounds.iter().enumerate() {
        mu[j] = match b {
            Bound::Lower => reduced[j],
            Bound::Upper => -reduced[j],
            // Equality-fixed variables carry a free-sign multiplier.
            Bound::Fixed => reduced[j],
            Bound::Free => 0.0,
        };
    }
    (lambda, mu)
}

fn ratio_test(
    problem: &QpProblem,
    x: &DVector<f64>,
    p: &DVector<f64>,
    working: &Working,
    is_ray: bool,
) -> (f64, Option<usize>) {
    let n = problem.n();
    let mut alpha = if is_ray { f64::INFINITY } else { 1.0 };
    let mut blocking = None;
    let consider = |a: f64, id: usize, alpha: &mut f64, blocking: &mut Option<usize>| {
        let a = a.max(0.0);
        if a < *alpha || (a == *alpha && blocking.map_or(a.is_finite(), |b: usize| id < b)) {
            *alpha = a;
            *blocking = Some(id);
        }
    };
    for j in 0..n {
        if working.bounds[j] != Bound::Free || p[j] == 0.0 {
            continue;
        }
        if p[j] < 0.0 && problem.lower[j].is_finite() {
            consider(
                (problem.lower[j] - x[j]) / p[j],
                j,
                &mut alpha,
                &mut blocking,
            );
        } else if p[j] > 0.0 && problem.upper[j].is_finite() {
            consider(
                (problem.upper[j] - x[j]) / p[j],
                n + j,
                &mut alpha,
                &mut blocking,
            );
        }
    }
    for r in 0..problem.m() {
        if working.rows.contains(&r) {
            continue;
        }
        let ap = problem.a.row(r).dot(&p.transpose());
        if ap > 1e-14 * (1.0 + p.amax()) {
            consider(
                row_slack(problem, x, r) / ap,
                2 * n + r,
                &mut alpha,
                &mut blocking,
            );
        }
    }
    (alpha, blocking)
}

fn finish(
    problem: &QpProblem,
    x: DVector<f64>,
    working: &Working,
    status: QpStatus,
    iterations: usize,
) -> QpSolution {
    let n = problem.n();
    let g = &problem.hessian * &x + &problem.gradient;
    let free = working.free();
    let (lambda, mu) = multipliers(problem, &g, working, &free);

    let mut lower_mult = DVector::zeros(n);
    let mut upper_mult = DVector::zeros(n);
    for (j, b) in working.bounds.iter().enumerate() {
        match b {
            Bound::Lower => lower_mult[j] = mu[j].max(0.0),
            Bound::Upper => upper_mult[j] = mu[j].max(0.0),
            Bound::Fixed => {
                if mu[j] >= 0.0 {
                    lower_mult[j] = mu[j];
                } else {
                    upper_mult[j] = -mu[j];
                }
            }
            Bound::Free => {}
        }
    }
    let mut row_mult = DVector::zeros(problem.m());
    for (k, &r) in working.rows.iter().enumerate() {
        row_mult[r] = lambda[k].max(0.0);
    }
    let kkt = kkt_residual(problem, &x, &lower_mult, &upper_mult, &row_mult);
    QpSolution {
        objective: problem.objective(&x),
        active: working.ids(n),
        x,
        lower_mult,
        upper_mult,
        row_mult,
        kkt,
        status,
        iterations,
    }
}

/// Stationarity, primal feasibility and complementarity residuals (infinity norms).
pub fn kkt_residual(
    problem: &QpProblem,
    x: &DVector<f64>,
    lower_mult: &DVector<f64>,
    upper_mult: &DVector<f64>,
    row_mult: &DVector<f64>,
) -> KktResidual {
    let n = problem.n();
    let mut grad = &problem.hessian * x + &problem.gradient - lower_mult + upper_mult;
    if problem.m() > 0 {
        grad += problem.a.transpose() * row_mult;
    }
    let mut primal: f64 = 0.0;
    let mut comp: f64 = 0.0;
    for j in 0..n {
        primal = primal
            .max(problem.lower[j] - x[j])
            .max(x[j] - problem.upper[j]);
        if problem.lower[j].is_finite() {
            comp = comp.max((lower_mult[j] * (x[j] - problem.lower[j])).abs());
        }
        if problem.upper[j].is_finite() {
            comp = comp.max((upper_mult[j] * (problem.upper[j] - x[j])).abs());
        }
    }
    for r in 0..problem.m() {
        let s = row_slack(problem, x, r);
        primal = primal.max(-s);
        comp = comp.max((row_mult[r] * s).abs());
    }
    KktResidual {
        stationarity: grad.amax(),
        primal: primal.max(0.0),
        complementarity: comp,
    }
}

fn infeasible(problem: &QpProblem, certificate: Vec<f64>) -> QpSolution {
    let n = problem.n();
    QpSolution {
        x: DVector::zeros(n),
        lower_mult: DVector::zeros(n),
        upper_mult: DVector::zeros(n),
        row_mult: DVector::zeros(problem.m()),
        objective: f64::NAN,
        kkt: KktResidual {
            stationarity: f64::NAN,
            primal: f64::INFINITY,
            complementarity: f64::NAN,
        },
        status: QpStatus::Infeasible { certificate },
        iterations: 0,
        active: Vec::new(),
    }
}

/// Minimize the total row violation `sum t` over `A x - t <= b, t >= 0`.
/// Returns a feasible `x` or a certificate.
fn phase_one(
    problem: &QpProblem,
    x0: &DVector<f64>,
    settings: &QpSettings,
) -> Result<std::result::Result<DVector<f64>, Vec<f64>>> {
    let n = problem.n();
    let m = problem.m();
    let dim = n + m;
    let mut a = DMatrix::zeros(m, dim);
    a.view_mut((0, 0), (m, n)).copy_from(&problem.a);
    for r in 0..m {
        a[(r, n + r)] = -1.0;
    }
    let mut gradient = DVector::zeros(dim);
    gradient.rows_mut(n, m).fill(1.0);
    let mut lower = DVector::from_element(dim, 0.0);
    let mut upper = DVector::from_element(dim, f64::INFINITY);
    lower.rows_mut(0, n).copy_from(&problem.lower);
    upper.rows_mut(0, n).copy_from(&problem.upper);
    let mut start = DVector::zeros(dim);
    start.rows_mut(0, n).copy_from(x0);
    for r in 0..m {
        start[n + r] = (-row_slack(problem, x0, r)).max(0.0);
    }
    let aux = QpProblem {
        hessian: DMatrix::zeros(dim, dim),
        gradient,
        lower,
        upper,
        a,
        b: problem.b.clone(),
    };
    let sol = solve_qp_with(
        &aux,
        &WarmStart {
            x: Some(start),
            active: Vec::new(),
        },
        &QpSettings {
            max_iterations: settings.max_iterations.max(10 * dim),
        },
    )?;
    let violation: f64 = sol.x.rows(n, m).sum();
    if violation <= 1e-9 * (1.0 + problem.b.amax()) {
        let mut x = sol.x.rows(0, n).into_owned();
        for j in 0..n {
            x[j] = x[j].clamp(problem.lower[j], problem.upper[j]);
        }
        Ok(Ok(x))
    } else {
        let mut cert = vec![0.0; 2 * n + m];
        for j in 0..n {
            cert[j] = sol.lower_mult[j];
            cert[n + j] = sol.upper_mult[j];
        }
        for r in 0..m {
            cert[2 * n + r] = sol.row_mult[r];
        }
        Ok(Err(cert))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_solution_is_newton_point() {
        let h = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let g = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let inf = DVector::from_element(3, f64::INFINITY);
        let p = QpProblem::boxed(h.clone(), g.clone(), -&inf, inf);
        let s = solve_qp(&p, &WarmStart::default()).unwrap();
        let exact = -h.clone().lu().solve(&g).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.x - exact).amax() < 1e-12);
        assert!(s.kkt.max() < 1e-10);
    }

    #[test]
    fn one_dimensional_upper_bound() {
        // min 1/2 u^2 - u s.t. u <= 0.5
        let p = QpProblem::boxed(
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, -1.0),
            DVector::from_element(1, f64::NEG_INFINITY),
            DVector::from_element(1, 0.5),
        );
        let s = solve_qp(&p, &WarmStart::default()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.x[0] - 0.5).abs() < 1e-15);
        assert!((s.upper_mult[0] - 0.5).abs() < 1e-15);
        assert_eq!(s.active, vec![1]);
    }

    #[test]
    fn same_constraint_as_a_row() {
        let inf = DVector::from_element(1, f64::INFINITY);
        let p = QpProblem {
            hessian: DMatrix::from_element(1, 1, 1.0),
            gradient: DVector::from_element(1, -1.0),
            lower: -&inf,
            upper: inf,
            a: DMatrix::from_element(1, 1, 1.0),
            b: DVector::from_element(1, 0.5),
        };
        let s = solve_qp(&p, &WarmStart::default()).unwrap();
        assert!((s.x[0] - 0.5).abs() < 1e-14);
        assert!((s.row_mult[0] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn crossed_bounds_are_infeasible() {
        let p = QpProblem::boxed(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DVector::from_vec(vec![0.0, 1.0]),
            DVector::from_vec(vec![1.0, 0.0]),
        );
        let s = solve_qp(&p, &WarmStart::default()).unwrap();
        match s.status {
            QpStatus::Infeasible { certificate } => {
                assert_eq!(certificate[1], 1.0);
                assert_eq!(certificate[3], 1.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inconsistent_rows_are_infeasible() {
        // x1 + x2 <= -1 with x in [0, 1]^2.
        let p = QpProblem {
            hessian: DMatrix::identity(2, 2),
            gradient: DVector::zeros(2),
            lower: DVector::zeros(2),
            upper: DVector::from_element(2, 1.0),
            a: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            b: DVector::from_element(1, -1.0),
        };
        let s = solve_qp(&p, &WarmStart::default()).unwrap();
        let QpStatus::Infeasible { certificate } = s.status else {
            panic!("expected infeasible");
        };
        // y_row * (a x) <= y_row * b while y_lower * x >= 0: row weight must be positive.
        assert!(certificate[4] > 0.0);
        assert!(certificate.iter().all(|c| *c >= 0.0));
    }

    #[test]
    fn phase_one_finds_feasible_start() {
        // min (x1-2)^2 + (x2-2)^2 s.t. x1 + x2 <= 1, x1 >= 0.8 (row), from origin violating nothing but far.
        let inf = DVector::from_element(2, f64::INFINITY);
        let p = QpProblem {
            hessian: DMatrix::identity(2, 2) * 2.0,
            gradient: DVector::from_vec(vec![-4.0, -4.0]),
            lower: -&inf,
            upper: inf,
            a: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, -1.0, 0.0]),
            b: DVector::from_vec(vec![1.0, -0.8]),
        };
        let s = solve_qp(&p, &WarmStart::default()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!(
            (s.x[0] - 0.8).abs() < 1e-12 && (s.x[1] - 0.2).abs() < 1e-12,
            "{}",
            s.x
        );
        assert!(s.kkt.max() < 1e-10);
    }

    #[test]
    fn linear_objective_goes_to_a_vertex() {
        let p = QpProblem::boxed(
            DMatrix::zeros(2, 2),
            DVector::from_vec(vec![1.0, -2.0]),
            DVector::from_element(2, -1.0),
            DVector::from_element(2, 3.0),
        );
        let s = solve_qp(&p, &WarmStart::default()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_eq!(s.x.as_slice(), &[-1.0, 3.0]);
    }

    #[test]
    fn unbounded_ray_is_reported() {
        let p = QpProblem::boxed(
            DMatrix::zeros(1, 1),
            DVector::from_element(1, 1.0),
            DVector::from_element(1, f64::NEG_INFINITY),
            DVector::from_element(1, 0.0),
        );
        assert_eq!(
            solve_qp(&p, &WarmStart::default()).unwrap().status,
            QpStatus::Unbounded
        );
    }

    #[test]
    fn warm_start_with_correct_active_set_is_immediate() {
        let p = QpProblem::boxed(
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![-3.0, 0.5]),
            DVector::from_element(2, -1.0),
            DVector::from_element(2, 1.0),
        );
        let cold = solve_qp(&p, &WarmStart::default()).unwrap();
        let warm = solve_qp(
            &p,
            &WarmStart {
                x: Some(cold.x.clone()),
                active: cold.active.clone(),
            },
        )
        .unwrap();
        assert_eq!(warm.x, cold.x);
        assert!(warm.iterations <= 2);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let p = QpProblem::boxed(
            DMatrix::identity(2, 2),
            DVector::zeros(3),
            DVector::zeros(3),
            DVector::zeros(3),
        );
        assert!(matches!(
            solve_qp(&p, &WarmStart::default()),
            Err(Error::Dimension(_))
        ));
    }
}
