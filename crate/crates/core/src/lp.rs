//! Small dense linear-program solver.
//!
//! Two-phase tableau simplex with Bland's pivoting rule. Problems in this
//! crate have tens of variables, so a dense tableau is the right tool and
//! Bland's rule gives a deterministic final basis, which in turn makes the
//! reported duals reproducible.
//!
//! Problems are stated as
//!
//! ```text
//! minimise    c·x
//! subject to  a_i·x  (<= | >= | =)  b_i
//!             0 <= x_j <= u_j       (u_j optional)
//! ```
//!
//! and the solution carries one dual value per constraint row, defined as the
//! derivative of the optimal objective with respect to that row's `b_i`.

use thiserror::Error;

const EPS: f64 = 1e-9;
const MAX_PIVOTS: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinearProgram {
    cost: Vec<f64>,
    upper: Vec<Option<f64>>,
    rows: Vec<Constraint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// One entry per constraint added with [`LinearProgram::add_constraint`].
    pub duals: Vec<f64>,
    pub pivots: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LpError {
    #[error("problem is infeasible")]
    Infeasible,
    #[error("problem is unbounded")]
    Unbounded,
    #[error("pivot limit reached after {0} pivots")]
    PivotLimit(usize),
    #[error("non-finite coefficient in {0}")]
    NonFinite(&'static str),
}

impl LinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a variable `0 <= x <= upper` with the given cost; returns its index.
    pub fn add_var(&mut self, cost: f64, upper: Option<f64>) -> usize {
        self.cost.push(cost);
        self.upper.push(upper);
        self.cost.len() - 1
    }

    /// Adds a row; returns its index in [`LpSolution::duals`].
    pub fn add_constraint(&mut self, coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64) -> usize {
        self.rows.push(Constraint { coeffs, sense, rhs });
        self.rows.len() - 1
    }

    pub fn num_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.rows
    }

    pub fn upper_bound(&self, var: usize) -> Option<f64> {
        self.upper[var]
    }

    /// Row activity `a_i·x`.
    pub fn activity(&self, row: usize, x: &[f64]) -> f64 {
        self.rows[row].coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }

    /// Checks bounds and rows against `x` with absolute tolerance `tol`.
    pub fn is_feasible(&self, x: &[f64], tol: f64) -> bool {
        let bounds_ok = x.iter().zip(&self.upper).all(|(&v, u)| {
            v >= -tol && u.is_none_or(|u| v <= u + tol)
        });
        bounds_ok
            && self.rows.iter().enumerate().all(|(i, r)| {
                let lhs = self.activity(i, x);
                match r.sense {
                    Sense::Le => lhs <= r.rhs + tol,
                    Sense::Ge => lhs >= r.rhs - tol,
                    Sense::Eq => (lhs - r.rhs).abs() <= tol,
                }
            })
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.cost.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    pub fn solve(&self) -> Result<LpSolution, LpError> {
        if self.cost.iter().any(|c| !c.is_finite()) {
            return Err(LpError::NonFinite("objective"));
        }
        if self.rows.iter().any(|r| !r.rhs.is_finite() || r.coeffs.iter().any(|(_, a)| !a.is_finite())) {
            return Err(LpError::NonFinite("constraints"));
        }
        if self.upper.iter().flatten().any(|u| !u.is_finite() || *u < 0.0) {
            return Err(LpError::NonFinite("bounds"));
        }
        Tableau::build(self).run(self)
    }
}

/// Column layout: structural | slack/surplus | artificial | rhs.
struct Tableau {
    rows: usize,
    n_struct: usize,
    n_real: usize,
    width: usize,
    t: Vec<f64>,
    obj: Vec<f64>,
    basis: Vec<usize>,
    /// +1 or -1 per row, the sign applied to make the rhs non-negative.
    flip: Vec<f64>,
    n_user_rows: usize,
    pivots: usize,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let n_struct = lp.cost.len();
        // User rows first, then one `x_j <= u_j` row per bounded variable.
        let mut rows: Vec<(Vec<(usize, f64)>, Sense, f64)> = lp
            .rows
            .iter()
            .map(|r| (r.coeffs.clone(), r.sense, r.rhs))
            .collect();
        for (j, u) in lp.upper.iter().enumerate() {
            if let Some(u) = u {
                rows.push((vec![(j, 1.0)], Sense::Le, *u));
            }
        }
        let m = rows.len();
        let n_slack = rows.iter().filter(|r| r.1 != Sense::Eq).count();
        let n_real = n_struct + n_slack;
        let width = n_real + m + 1;
        let mut t = vec![0.0; m * width];
        let mut flip = vec![1.0; m];
        let mut slack_col = n_struct;
        for (i, (coeffs, sense, rhs)) in rows.iter().enumerate() {
            let row = &mut t[i * width..(i + 1) * width];
            for &(j, a) in coeffs {
                row[j] += a;
            }
            match sense {
                Sense::Le => {
                    row[slack_col] = 1.0;
                    slack_col += 1;
                }
                Sense::Ge => {
                    row[slack_col] = -1.0;
                    slack_col += 1;
                }
                Sense::Eq => {}
            }
            row[width - 1] = *rhs;
            if *rhs < 0.0 {
                flip[i] = -1.0;
                for v in row[..n_real].iter_mut() {
                    *v = -*v;
                }
                row[width - 1] = -*rhs;
            }
            row[n_real + i] = 1.0;
        }
        Tableau {
            rows: m,
            n_struct,
            n_real,
            width,
            t,
            obj: vec![0.0; width],
            basis: (0..m).map(|i| n_real + i).collect(),
            flip,
            n_user_rows: lp.rows.len(),
            pivots: 0,
        }
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.width + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.at(i, self.width - 1)
    }

    /// Sets the reduced-cost row for costs `c` over all columns.
    fn price_out(&mut self, c: &[f64]) {
        let w = self.width;
        self.obj.iter_mut().for_each(|v| *v = 0.0);
        self.obj[..c.len()].copy_from_slice(c);
        for i in 0..self.rows {
            let cb = c.get(self.basis[i]).copied().unwrap_or(0.0);
            if cb != 0.0 {
                for j in 0..w {
                    self.obj[j] -= cb * self.t[i * w + j];
                }
            }
        }
    }

    fn pivot(&mut self, r: usize, col: usize) {
        let w = self.width;
        let p = self.t[r * w + col];
        for j in 0..w {
            self.t[r * w + j] /= p;
        }
        self.t[r * w + col] = 1.0;
        let pivot_row: Vec<f64> = self.t[r * w..(r + 1) * w].to_vec();
        for i in 0..self.rows {
            if i == r {
                continue;
            }
            let f = self.t[i * w + col];
            if f != 0.0 {
                let row = &mut self.t[i * w..(i + 1) * w];
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[col] = 0.0;
            }
        }
        let f = self.obj[col];
        if f != 0.0 {
            for (v, pv) in self.obj.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
            self.obj[col] = 0.0;
        }
        self.basis[r] = col;
        self.pivots += 1;
    }

    /// Bland's rule over columns `< allowed`.
    fn iterate(&mut self, allowed: usize) -> Result<(), LpError> {
        loop {
            if self.pivots > MAX_PIVOTS {
                return Err(LpError::PivotLimit(self.pivots));
            }
            let Some(col) = (0..allowed).find(|&j| self.obj[j] < -EPS) else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows {
                let a = self.at(i, col);
                if a > EPS {
                    let ratio = self.rhs(i) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - EPS || (ratio <= lr + EPS && self.basis[i] < self.basis[li]) {
                                Some((i, ratio))
                            } else {
                                Some((li, lr))
                            }
                        }
                    };
                }
            }
            match leave {
                Some((r, _)) => self.pivot(r, col),
                None => return Err(LpError::Unbounded),
            }
        }
    }

    fn run(mut self, lp: &LinearProgram) -> Result<LpSolution, LpError> {
        // Phase 1: minimise the sum of artificials.
        let mut phase1 = vec![0.0; self.n_real + self.rows];
        phase1[self.n_real..].iter_mut().for_each(|c| *c = 1.0);
        self.price_out(&phase1);
        self.iterate(self.n_real)?;
        let infeasibility: f64 = (0..self.rows)
            .filter(|&i| self.basis[i] >= self.n_real)
            .map(|i| self.rhs(i))
            .sum();
        let scale = 1.0 + (0..self.rows).map(|i| self.rhs(i).abs()).fold(0.0, f64::max);
        if infeasibility > 1e-7 * scale {
            return Err(LpError::Infeasible);
        }
        // Drive zero-level artificials out where a real column can replace them.
        for i in 0..self.rows {
            if self.basis[i] >= self.n_real {
                if let Some(col) = (0..self.n_real).find(|&j| self.at(i, j).abs() > 1e-7) {
                    self.pivot(i, col);
                }
            }
        }

        // Phase 2 over the real columns only.
        let mut costs = vec![0.0; self.n_real + self.rows];
        costs[..self.n_struct].copy_from_slice(&lp.cost);
        self.price_out(&costs);
        self.iterate(self.n_real)?;

        let mut x = vec![0.0; self.n_struct];
        for i in 0..self.rows {
            let b = self.basis[i];
            if b < self.n_struct {
                x[b] = self.rhs(i).max(0.0);
            }
        }
        // The artificial block holds B^-1, so y = c_B B^-1 reads off directly.
        let duals = (0..self.n_user_rows)
            .map(|k| {
                let y: f64 = (0..self.rows)
                    .map(|i| costs[self.basis[i]] * self.at(i, self.n_real + k))
                    .sum();
                let y = y * self.flip[k];
                if y.abs() < EPS {
                    0.0
                } else {
                    y
                }
            })
            .collect();
        Ok(LpSolution {
            objective: lp.objective(&x),
            x,
            duals,
            pivots: self.pivots,
        })
    }
}
