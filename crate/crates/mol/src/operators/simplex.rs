//! Dense two-phase simplex for the small stencil-stabilization LPs.
//!
//! Solves `min c^T x` subject to `A x = b`, `x >= 0`. Bland's pivoting rule
//! guarantees termination; the tableaus here are on the order of ten rows, so
//! speed is irrelevant.

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LpOutcome {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub outcome: LpOutcome,
    pub x: Vec<f64>,
    pub objective: f64,
}

struct Tableau {
    /// rows x (cols + 1); the last column is the right-hand side.
    data: Vec<Vec<f64>>,
    cost: Vec<f64>,
    cost_rhs: f64,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn price_out(&mut self) {
        for (r, &bi) in self.basis.clone().iter().enumerate() {
            let factor = self.cost[bi];
            if factor != 0.0 {
                for c in 0..self.cols {
                    self.cost[c] -= factor * self.data[r][c];
                }
                self.cost_rhs -= factor * self.data[r][self.cols];
            }
        }
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let piv = self.data[row][col];
        for c in 0..=self.cols {
            self.data[row][c] /= piv;
        }
        for r in 0..self.data.len() {
            if r != row {
                let factor = self.data[r][col];
                if factor != 0.0 {
                    for c in 0..=self.cols {
                        self.data[r][c] -= factor * self.data[row][c];
                    }
                }
            }
        }
        let factor = self.cost[col];
        if factor != 0.0 {
            for c in 0..self.cols {
                self.cost[c] -= factor * self.data[row][c];
            }
            self.cost_rhs -= factor * self.data[row][self.cols];
        }
        self.basis[row] = col;
    }

    /// Bland's rule: entering variable is the lowest-index column with a
    /// negative reduced cost; leaving row breaks ratio ties by lowest basis
    /// index.
    fn run(&mut self, allowed: &[bool]) -> LpOutcome {
        loop {
            let entering = (0..self.cols).find(|&c| allowed[c] && self.cost[c] < -EPS);
            let col = match entering {
                Some(c) => c,
                None => return LpOutcome::Optimal,
            };
            let mut best: Option<(usize, f64)> = None;
            for r in 0..self.data.len() {
                let a = self.data[r][col];
                if a > EPS {
                    let ratio = self.data[r][self.cols] / a;
                    let better = match best {
                        None => true,
                        Some((br, bratio)) => {
                            ratio < bratio - EPS
                                || (ratio < bratio + EPS && self.basis[r] < self.basis[br])
                        }
                    };
                    if better {
                        best = Some((r, ratio));
                    }
                }
            }
            match best {
                Some((row, _)) => self.pivot(row, col),
                None => return LpOutcome::Unbounded,
            }
        }
    }
}

/// Two-phase simplex on `min c^T x, A x = b, x >= 0`.
pub fn solve_lp(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> LpSolution {
    let m = a.len();
    let n = c.len();
    assert_eq!(b.len(), m);
    for row in a {
        assert_eq!(row.len(), n);
    }

    let cols = n + m;
    let mut data = Vec::with_capacity(m);
    for (i, row) in a.iter().enumerate() {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        let mut t = vec![0.0; cols + 1];
        for (j, &v) in row.iter().enumerate() {
            t[j] = sign * v;
        }
        t[n + i] = 1.0;
        t[cols] = sign * b[i];
        data.push(t);
    }
    let mut phase1_cost = vec![0.0; cols];
    for j in n..cols {
        phase1_cost[j] = 1.0;
    }
    let mut tab = Tableau {
        data,
        cost: phase1_cost,
        cost_rhs: 0.0,
        basis: (n..cols).collect(),
        cols,
    };
    tab.price_out();
    let allowed = vec![true; cols];
    if tab.run(&allowed) == LpOutcome::Unbounded {
        // Phase 1 objective is bounded below by zero; cannot happen.
        unreachable!("phase 1 simplex reported unbounded");
    }
    if -tab.cost_rhs > 1e-7 {
        return LpSolution {
            outcome: LpOutcome::Infeasible,
            x: vec![0.0; n],
            objective: f64::NAN,
        };
    }
    // Pivot any artificial variable still in the basis out on an original
    // column; a row with no eligible pivot is redundant and stays inert.
    for r in 0..m {
        if tab.basis[r] >= n {
            if let Some(col) = (0..n).find(|&c| tab.data[r][c].abs() > EPS) {
                tab.pivot(r, col);
            }
        }
    }

    let mut structural = vec![false; cols];
    for (flag, _) in structural.iter_mut().zip(0..n) {
        *flag = true;
    }
    tab.cost = {
        let mut full = vec![0.0; cols];
        full[..n].copy_from_slice(c);
        full
    };
    tab.cost_rhs = 0.0;
    tab.price_out();
    let outcome = tab.run(&structural);
    let mut x = vec![0.0; n];
    for (r, &bi) in tab.basis.iter().enumerate() {
        if bi < n {
            x[bi] = tab.data[r][tab.cols];
        }
    }
    let objective = c.iter().zip(&x).map(|(ci, xi)| ci * xi).sum();
    LpSolution {
        outcome,
        x,
        objective,
    }
}
