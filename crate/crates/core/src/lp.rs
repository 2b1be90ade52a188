//! Dense two-phase simplex for small linear programs.
//!
//! Solves `min cᵀx` subject to rows `aᵢᵀx {≤, ≥, =} bᵢ` and `x ≥ 0`.
//! Bland's rule is used for both entering and leaving variables so the
//! method cannot cycle; that is slow for big problems but instances here
//! have at most a few hundred rows.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

impl LinearProgram {
    pub fn new(objective: Vec<f64>) -> Self {
        Self {
            objective,
            constraints: Vec::new(),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) {
        assert_eq!(coeffs.len(), self.objective.len(), "constraint width");
        self.constraints.push(Constraint {
            coeffs,
            relation,
            rhs,
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

const EPS: f64 = 1e-10;

struct Tableau {
    rows: usize,
    width: usize,
    data: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.at(i, self.width - 1)
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.width;
        let p = self.data[r * w + c];
        for j in 0..w {
            self.data[r * w + j] /= p;
        }
        self.data[r * w + c] = 1.0;
        for i in 0..self.rows {
            if i == r {
                continue;
            }
            let f = self.data[i * w + c];
            if f == 0.0 {
                continue;
            }
            for j in 0..w {
                let v = self.data[r * w + j];
                if v != 0.0 {
                    self.data[i * w + j] -= f * v;
                }
            }
            self.data[i * w + c] = 0.0;
        }
        self.basis[r] = c;
    }

    /// Minimises `cost` over columns `< allowed`; returns the status.
    fn optimize(
        &mut self,
        cost: &[f64],
        allowed: usize,
        max_pivots: usize,
        pivots: &mut usize,
    ) -> LpStatus {
        loop {
            let mut entering = None;
            for j in 0..allowed {
                if self.basis.contains(&j) {
                    continue;
                }
                let z: f64 = (0..self.rows)
                    .map(|i| cost[self.basis[i]] * self.at(i, j))
                    .sum();
                if cost[j] - z < -EPS {
                    entering = Some(j);
                    break;
                }
            }
            let Some(c) = entering else {
                return LpStatus::Optimal;
            };
            let mut leaving: Option<(usize, f64)> = None;
            for i in 0..self.rows {
                let a = self.at(i, c);
                if a > EPS {
                    let ratio = self.rhs(i) / a;
                    let better = match leaving {
                        None => true,
                        Some((r, best)) => {
                            ratio < best - EPS
                                || (ratio <= best + EPS && self.basis[i] < self.basis[r])
                        }
                    };
                    if better {
                        leaving = Some((i, ratio));
                    }
                }
            }
            let Some((r, _)) = leaving else {
                return LpStatus::Unbounded;
            };
            if *pivots >= max_pivots {
                return LpStatus::IterationLimit;
            }
            self.pivot(r, c);
            *pivots += 1;
        }
    }
}

pub fn solve(lp: &LinearProgram, max_pivots: usize) -> LpSolution {
    let n = lp.n_vars();
    let m = lp.constraints.len();

    // Normalise rows and make every right-hand side non-negative.
    let mut rows: Vec<(Vec<f64>, Relation, f64)> = Vec::with_capacity(m);
    for c in &lp.constraints {
        let scale = c.coeffs.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let scale = if scale > 0.0 { scale } else { 1.0 };
        let mut coeffs: Vec<f64> = c.coeffs.iter().map(|v| v / scale).collect();
        let mut rhs = c.rhs / scale;
        let mut rel = c.relation;
        if rhs < 0.0 {
            coeffs.iter_mut().for_each(|v| *v = -*v);
            rhs = -rhs;
            rel = match rel {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
        }
        rows.push((coeffs, rel, rhs));
    }

    let n_slack = rows.iter().filter(|r| r.1 != Relation::Eq).count();
    let n_art = rows.iter().filter(|r| r.1 != Relation::Le).count();
    let art_start = n + n_slack;
    let width = art_start + n_art + 1;
    let mut t = Tableau {
        rows: m,
        width,
        data: vec![0.0; m * width],
        basis: vec![0; m],
    };
    let (mut s, mut a) = (n, art_start);
    for (i, (coeffs, rel, rhs)) in rows.iter().enumerate() {
        t.data[i * width..i * width + n].copy_from_slice(coeffs);
        t.data[i * width + width - 1] = *rhs;
        match rel {
            Relation::Le => {
                t.data[i * width + s] = 1.0;
                t.basis[i] = s;
                s += 1;
            }
            Relation::Ge => {
                t.data[i * width + s] = -1.0;
                s += 1;
                t.data[i * width + a] = 1.0;
                t.basis[i] = a;
                a += 1;
            }
            Relation::Eq => {
                t.data[i * width + a] = 1.0;
                t.basis[i] = a;
                a += 1;
            }
        }
    }

    let mut pivots = 0;
    if n_art > 0 {
        let mut phase1 = vec![0.0; width - 1];
        phase1[art_start..].iter_mut().for_each(|c| *c = 1.0);
        let status = t.optimize(&phase1, width - 1, max_pivots, &mut pivots);
        if status == LpStatus::IterationLimit {
            return finish(LpStatus::IterationLimit, &t, lp, n, pivots);
        }
        let infeasibility: f64 = (0..m)
            .filter(|&i| t.basis[i] >= art_start)
            .map(|i| t.rhs(i))
            .sum();
        if infeasibility > 1e-8 {
            return finish(LpStatus::Infeasible, &t, lp, n, pivots);
        }
        // Drive zero-level artificials out of the basis where possible.
        for i in 0..m {
            if t.basis[i] >= art_start {
                if let Some(c) = (0..art_start).find(|&j| t.at(i, j).abs() > 1e-9) {
                    t.pivot(i, c);
                }
            }
        }
    }

    let mut cost = vec![0.0; width - 1];
    cost[..n].copy_from_slice(&lp.objective);
    let status = t.optimize(&cost, art_start, max_pivots, &mut pivots);
    finish(status, &t, lp, n, pivots)
}

fn finish(
    status: LpStatus,
    t: &Tableau,
    lp: &LinearProgram,
    n: usize,
    pivots: usize,
) -> LpSolution {
    let mut x = vec![0.0; n];
    for i in 0..t.rows {
        if t.basis[i] < n {
            x[t.basis[i]] = t.rhs(i).max(0.0);
        }
    }
    let objective = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    LpSolution {
        status,
        x,
        objective,
        pivots,
    }
}
