//! Dense two-phase tableau simplex for `min c'x s.t. A x <= b, x >= 0`.

use nalgebra::DMatrix;

use crate::error::{PegError, Result};

const EPS: f64 = 1e-11;

/// Pivots with the largest reduced cost until this many consecutive degenerate
/// steps, then falls back to Bland's rule, which cannot cycle.
const DEGENERATE_SWITCH: usize = 50;

/// Row-major dense tableau: constraint rows followed by one objective row;
/// the last column is the right-hand side.
struct Tableau {
    data: Vec<f64>,
    cols: usize,
    basis: Vec<usize>,
    rows: usize,
}

impl Tableau {
    fn new(rows: usize, cols: usize) -> Self {
        Tableau {
            data: vec![0.0; (rows + 1) * cols],
            cols,
            basis: vec![0; rows],
            rows,
        }
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    fn rhs(&self) -> usize {
        self.cols - 1
    }

    /// `row[dst] += f * row[src]`.
    fn add_row(&mut self, dst: usize, f: f64, src: usize) {
        let cols = self.cols;
        let (d, s) = if dst < src {
            let (a, b) = self.data.split_at_mut(src * cols);
            (&mut a[dst * cols..(dst + 1) * cols], &b[..cols])
        } else {
            let (a, b) = self.data.split_at_mut(dst * cols);
            (&mut b[..cols], &a[src * cols..(src + 1) * cols])
        };
        for (x, y) in d.iter_mut().zip(s) {
            *x += f * y;
        }
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let cols = self.cols;
        let p = self.at(r, c);
        for x in &mut self.data[r * cols..(r + 1) * cols] {
            *x /= p;
        }
        for i in 0..=self.rows {
            if i != r {
                let f = self.at(i, c);
                if f != 0.0 {
                    self.add_row(i, -f, r);
                    self.set(i, c, 0.0);
                }
            }
        }
        self.basis[r] = c;
    }

    /// Minimizes the objective row over the first `allowed` columns.
    fn run(&mut self, allowed: usize, max_iter: usize) -> Result<()> {
        let obj = self.rows;
        let rhs = self.rhs();
        let mut degenerate = 0;
        for _ in 0..max_iter {
            let bland = degenerate >= DEGENERATE_SWITCH;
            let mut enter = None;
            let mut best = -EPS;
            for c in 0..allowed {
                let rc = self.at(obj, c);
                if rc < -EPS {
                    if bland {
                        enter = Some(c);
                        break;
                    }
                    if rc < best {
                        best = rc;
                        enter = Some(c);
                    }
                }
            }
            let Some(c) = enter else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let a = self.at(r, c);
                if a > EPS {
                    let ratio = self.at(r, rhs) / a;
                    let better = match leave {
                        None => true,
                        Some((lr, lv)) => {
                            ratio < lv - EPS || (ratio <= lv + EPS && self.basis[r] < self.basis[lr])
                        }
                    };
                    if better {
                        leave = Some((r, ratio));
                    }
                }
            }
            let Some((r, ratio)) = leave else {
                return Err(PegError::Infeasible("linear program is unbounded".into()));
            };
            degenerate = if ratio.abs() <= EPS { degenerate + 1 } else { 0 };
            self.pivot(r, c);
        }
        Err(PegError::NoConvergence)
    }
}

/// Solves `min c'x` subject to `A x <= b` and `x >= 0`.
pub fn minimize(c: &[f64], a: &DMatrix<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let (m, n) = a.shape();
    if c.len() != n || b.len() != m {
        return Err(PegError::Dimension("linear program dimensions disagree".into()));
    }
    // columns: x (n), slacks (m), artificials (one per negative rhs), rhs
    let neg: Vec<usize> = (0..m).filter(|&i| b[i] < 0.0).collect();
    let n_art = neg.len();
    let cols = n + m + n_art + 1;
    let rhs = cols - 1;
    let mut tab = Tableau::new(m, cols);
    let mut art = 0;
    for i in 0..m {
        let s = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            tab.set(i, j, s * a[(i, j)]);
        }
        tab.set(i, n + i, s);
        tab.set(i, rhs, s * b[i]);
        if b[i] < 0.0 {
            tab.set(i, n + m + art, 1.0);
            tab.basis[i] = n + m + art;
            art += 1;
        } else {
            tab.basis[i] = n + i;
        }
    }
    let max_iter = 50 * (m + n + n_art).max(10);
    if n_art > 0 {
        // phase one: minimize the sum of artificials, priced out of the basis
        for &i in &neg {
            tab.add_row(m, -1.0, i);
        }
        for j in n + m..n + m + n_art {
            tab.set(m, j, 0.0);
        }
        tab.run(n + m, max_iter)?;
        let scale = 1.0 + b.iter().fold(0.0_f64, |s, v| s.max(v.abs()));
        if -tab.at(m, rhs) > 1e-9 * scale {
            return Err(PegError::Infeasible("linear program has no feasible point".into()));
        }
        // drive remaining (zero-valued) artificials out of the basis
        for r in 0..m {
            if tab.basis[r] >= n + m {
                if let Some(c) = (0..n + m).find(|&c| tab.at(r, c).abs() > 1e-9) {
                    tab.pivot(r, c);
                }
            }
        }
        for j in n + m..n + m + n_art {
            for i in 0..=m {
                tab.set(i, j, 0.0);
            }
        }
    }
    // phase two objective in terms of the current basis
    for j in 0..cols {
        tab.set(m, j, if j < n { c[j] } else { 0.0 });
    }
    for r in 0..m {
        let bj = tab.basis[r];
        let cb = if bj < n { c[bj] } else { 0.0 };
        if cb != 0.0 {
            tab.add_row(m, -cb, r);
        }
    }
    tab.run(n + m, max_iter)?;
    let mut x = vec![0.0; n];
    for r in 0..m {
        if tab.basis[r] < n {
            x[tab.basis[r]] = tab.at(r, rhs).max(0.0);
        }
    }
    Ok(x)
}
