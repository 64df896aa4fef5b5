//! Dense dual active-set solver (Goldfarb–Idnani) for strictly convex QPs
//! with a diagonal Hessian:
//!
//! ```text
//! min ½ xᵀ diag(h) x + cᵀ x   s.t.  aᵢᵀ x = bᵢ (equalities),  aⱼᵀ x ≥ bⱼ (inequalities)
//! ```
//!
//! Constraint rows are stored sparsely. The factorization keeps `J = L⁻ᵀ Q`
//! and the upper-triangular `R` with `Jᵀ N = [R; 0]` for the active normals `N`.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    Equality,
    GreaterEqual,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
    pub kind: ConstraintKind,
}

impl Constraint {
    pub fn ge(coeffs: Vec<(usize, f64)>, rhs: f64) -> Self {
        Self {
            coeffs,
            rhs,
            kind: ConstraintKind::GreaterEqual,
        }
    }

    pub fn eq(coeffs: Vec<(usize, f64)>, rhs: f64) -> Self {
        Self {
            coeffs,
            rhs,
            kind: ConstraintKind::Equality,
        }
    }

    fn dot(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(i, v)| v * x[i]).sum()
    }

    fn norm(&self) -> f64 {
        self.coeffs.iter().map(|&(_, v)| v * v).sum::<f64>().sqrt()
    }

    /// Signed slack `aᵀx - b`; negative means violated for `≥` rows.
    pub fn slack(&self, x: &[f64]) -> f64 {
        self.dot(x) - self.rhs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadProgram {
    pub hessian_diag: Vec<f64>,
    pub linear: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Error, PartialEq)]
pub enum QpError {
    #[error("Hessian entry {index} is {value}; the solver needs a positive diagonal")]
    NotPositiveDefinite { index: usize, value: f64 },
    #[error("constraints are infeasible (constraint {constraint})")]
    Infeasible { constraint: usize },
    #[error("equality constraints are linearly dependent (constraint {constraint})")]
    DependentEqualities { constraint: usize },
    #[error("no convergence after {iterations} iterations (max violation {max_violation:e})")]
    NoConvergence {
        iterations: usize,
        max_violation: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Indices of constraints active at the solution.
    pub active: Vec<usize>,
    /// Lagrange multipliers matching `active`.
    pub multipliers: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct QpSettings {
    /// Feasibility tolerance on constraint slacks, scaled by the row norm.
    pub feas_tol: f64,
    pub max_iterations: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            feas_tol: 1e-11,
            max_iterations: 20_000,
        }
    }
}

struct Factor {
    n: usize,
    /// Columns of J, each of length n.
    j: Vec<Vec<f64>>,
    /// Row-major n×n storage, only the leading q×q upper triangle is used.
    r: Vec<f64>,
    q: usize,
}

impl Factor {
    fn new(h: &[f64]) -> Self {
        let n = h.len();
        let j = (0..n)
            .map(|c| {
                let mut col = vec![0.0; n];
                col[c] = 1.0 / h[c].sqrt();
                col
            })
            .collect();
        Self {
            n,
            j,
            r: vec![0.0; n * n],
            q: 0,
        }
    }

    fn r_at(&self, row: usize, col: usize) -> f64 {
        self.r[row * self.n + col]
    }

    fn r_set(&mut self, row: usize, col: usize, v: f64) {
        self.r[row * self.n + col] = v;
    }

    /// d = Jᵀ a for a sparse row a.
    fn project(&self, a: &Constraint, sign: f64) -> Vec<f64> {
        self.j
            .iter()
            .map(|col| sign * a.coeffs.iter().map(|&(i, v)| v * col[i]).sum::<f64>())
            .collect()
    }

    /// Primal step direction z = J₂ d₂.
    fn primal_direction(&self, d: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.n];
        for k in self.q..self.n {
            let dk = d[k];
            if dk != 0.0 {
                for (zi, ji) in z.iter_mut().zip(&self.j[k]) {
                    *zi += dk * ji;
                }
            }
        }
        z
    }

    /// Dual step direction r = R⁻¹ d₁ by back substitution.
    fn dual_direction(&self, d: &[f64]) -> Vec<f64> {
        let q = self.q;
        let mut r = vec![0.0; q];
        for i in (0..q).rev() {
            let mut s = d[i];
            for k in i + 1..q {
                s -= self.r_at(i, k) * r[k];
            }
            r[i] = s / self.r_at(i, i);
        }
        r
    }

    fn rotate_j(&mut self, a: usize, b: usize, c: f64, s: f64) {
        let (lo, hi) = self.j.split_at_mut(b);
        let ca = &mut lo[a];
        let cb = &mut hi[0];
        for (x, y) in ca.iter_mut().zip(cb.iter_mut()) {
            let xa = *x;
            let yb = *y;
            *x = c * xa + s * yb;
            *y = -s * xa + c * yb;
        }
    }

    /// Appends a constraint whose projection is `d`. Returns false when the
    /// new normal is (numerically) dependent on the active ones.
    fn add(&mut self, mut d: Vec<f64>) -> bool {
        let n = self.n;
        for k in (self.q + 1..n).rev() {
            let a = d[k - 1];
            let b = d[k];
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            d[k - 1] = h;
            d[k] = 0.0;
            self.rotate_j(k - 1, k, c, s);
        }
        let q = self.q;
        let scale = d[..=q].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if d[q].abs() <= 1e-14 * scale.max(1.0) {
            return false;
        }
        for (i, value) in d.iter().enumerate().take(q + 1) {
            self.r_set(i, q, *value);
        }
        self.q += 1;
        true
    }

    /// Removes the active constraint at position `l`.
    fn drop(&mut self, l: usize) {
        let q = self.q;
        for col in l..q - 1 {
            for row in 0..=col + 1 {
                let v = self.r_at(row, col + 1);
                self.r_set(row, col, v);
            }
        }
        for row in 0..q {
            self.r_set(row, q - 1, 0.0);
        }
        for k in l..q - 1 {
            let a = self.r_at(k, k);
            let b = self.r_at(k + 1, k);
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            for col in k..q - 1 {
                let x = self.r_at(k, col);
                let y = self.r_at(k + 1, col);
                self.r_set(k, col, c * x + s * y);
                self.r_set(k + 1, col, -s * x + c * y);
            }
            self.rotate_j(k, k + 1, c, s);
        }
        for col in 0..q {
            self.r_set(q - 1, col, 0.0);
        }
        self.q -= 1;
    }
}

struct Active {
    index: usize,
    sign: f64,
    multiplier: f64,
}

pub fn solve(problem: &QuadProgram, settings: &QpSettings) -> Result<QpSolution, QpError> {
    for (index, &value) in problem.hessian_diag.iter().enumerate() {
        if !(value > 0.0 && value.is_finite()) {
            return Err(QpError::NotPositiveDefinite { index, value });
        }
    }
    let mut x: Vec<f64> = problem
        .hessian_diag
        .iter()
        .zip(&problem.linear)
        .map(|(h, c)| -c / h)
        .collect();
    let mut factor = Factor::new(&problem.hessian_diag);
    let mut active: Vec<Active> = Vec::new();
    let mut is_active = vec![false; problem.constraints.len()];
    let norms: Vec<f64> = problem.constraints.iter().map(|c| c.norm().max(1e-300)).collect();
    let mut iterations = 0usize;

    let equalities: Vec<usize> = problem
        .constraints
        .iter()
        .enumerate()
        .filter(|(_, c)| c.kind == ConstraintKind::Equality)
        .map(|(i, _)| i)
        .collect();
    for p in equalities {
        let sign = if problem.constraints[p].slack(&x) > 0.0 { -1.0 } else { 1.0 };
        add_constraint(
            problem,
            &mut x,
            &mut factor,
            &mut active,
            &mut is_active,
            p,
            sign,
            &mut iterations,
            settings,
        )?;
    }

    loop {
        if iterations > settings.max_iterations {
            return Err(QpError::NoConvergence {
                iterations,
                max_violation: max_violation(problem, &x),
            });
        }
        let mut chosen = None;
        let mut worst = -settings.feas_tol;
        for (i, c) in problem.constraints.iter().enumerate() {
            if is_active[i] || c.kind == ConstraintKind::Equality {
                continue;
            }
            let s = c.slack(&x) / norms[i];
            if s < worst {
                worst = s;
                chosen = Some(i);
            }
        }
        let Some(p) = chosen else { break };
        add_constraint(
            problem,
            &mut x,
            &mut factor,
            &mut active,
            &mut is_active,
            p,
            1.0,
            &mut iterations,
            settings,
        )?;
    }

    let objective = 0.5
        * x.iter()
            .zip(&problem.hessian_diag)
            .map(|(xi, h)| h * xi * xi)
            .sum::<f64>()
        + x.iter().zip(&problem.linear).map(|(xi, c)| c * xi).sum::<f64>();
    Ok(QpSolution {
        x,
        objective,
        active: active.iter().map(|a| a.index).collect(),
        multipliers: active.iter().map(|a| a.sign * a.multiplier).collect(),
        iterations,
    })
}

#[allow(clippy::too_many_arguments)]
fn add_constraint(
    problem: &QuadProgram,
    x: &mut [f64],
    factor: &mut Factor,
    active: &mut Vec<Active>,
    is_active: &mut [bool],
    p: usize,
    sign: f64,
    iterations: &mut usize,
    settings: &QpSettings,
) -> Result<(), QpError> {
    let cons = &problem.constraints[p];
    let is_eq = cons.kind == ConstraintKind::Equality;
    let mut u_p = 0.0;
    loop {
        *iterations += 1;
        if *iterations > settings.max_iterations {
            return Err(QpError::NoConvergence {
                iterations: *iterations,
                max_violation: max_violation(problem, x),
            });
        }
        let slack = sign * cons.slack(x);
        let d = factor.project(cons, sign);
        let z = factor.primal_direction(&d);
        let r = factor.dual_direction(&d);

        let mut t1 = f64::INFINITY;
        let mut drop_at = None;
        for (k, a) in active.iter().enumerate() {
            if problem.constraints[a.index].kind == ConstraintKind::Equality {
                continue;
            }
            if r[k] > 0.0 {
                let t = a.multiplier / r[k];
                if t < t1 {
                    t1 = t;
                    drop_at = Some(k);
                }
            }
        }
        let zn: f64 = sign * cons.coeffs.iter().map(|&(i, v)| v * z[i]).sum::<f64>();
        let dd: f64 = d.iter().map(|v| v * v).sum();
        let t2 = if zn > 1e-13 * dd { -slack / zn } else { f64::INFINITY };
        let t = t1.min(t2);
        if !t.is_finite() {
            return Err(if is_eq {
                QpError::DependentEqualities { constraint: p }
            } else {
                QpError::Infeasible { constraint: p }
            });
        }
        if t2.is_finite() {
            for (xi, zi) in x.iter_mut().zip(&z) {
                *xi += t * zi;
            }
        }
        for (a, rk) in active.iter_mut().zip(&r) {
            a.multiplier -= t * rk;
        }
        u_p += t;
        if t2 <= t1 {
            if !factor.add(d) {
                return Err(QpError::DependentEqualities { constraint: p });
            }
            active.push(Active {
                index: p,
                sign,
                multiplier: u_p,
            });
            is_active[p] = true;
            return Ok(());
        }
        let l = drop_at.expect("partial step implies a blocking constraint");
        is_active[active[l].index] = false;
        active.remove(l);
        factor.drop(l);
    }
}

/// Largest constraint violation of `x` (0 when feasible).
pub fn max_violation(problem: &QuadProgram, x: &[f64]) -> f64 {
    problem
        .constraints
        .iter()
        .map(|c| {
            let s = c.slack(x);
            match c.kind {
                ConstraintKind::Equality => s.abs(),
                ConstraintKind::GreaterEqual => (-s).max(0.0),
            }
        })
        .fold(0.0, f64::max)
}

/// Norm of the Lagrangian gradient `Hx + c - Σ λᵢ aᵢ` at a solution.
pub fn stationarity_residual(problem: &QuadProgram, sol: &QpSolution) -> f64 {
    let mut g: Vec<f64> = sol
        .x
        .iter()
        .zip(&problem.hessian_diag)
        .zip(&problem.linear)
        .map(|((x, h), c)| h * x + c)
        .collect();
    for (&idx, &lambda) in sol.active.iter().zip(&sol.multipliers) {
        for &(i, v) in &problem.constraints[idx].coeffs {
            g[i] -= lambda * v;
        }
    }
    g.iter().map(|v| v * v).sum::<f64>().sqrt()
}
