//! Optimal transport between ingredient distributions.
//!
//! [`sinkhorn`] solves the entropic-regularized problem in the log domain and
//! returns the transport cost of the regularized plan together with the dual
//! potential used as the gradient of the loss. [`exact_emd`] solves the
//! unregularized transportation problem exactly with the transportation
//! simplex method on the union of supports; it backs evaluation and acts as an
//! oracle for the Sinkhorn solver.

use std::collections::VecDeque;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::recipe::AmountVector;

const MASS_TOL: f64 = 1e-9;
const ANNEAL_START: f64 = 16.0;
const ANNEAL_TOL: f64 = 1e-3;
const OVERRELAX: f64 = 1.8;
const RELAX_BELOW: f64 = 1e-2;
/// Largest `lambda * max_cost` for which the scaling-domain iteration is used.
const KERNEL_LIMIT: f64 = 500.0;

/// A balanced transport problem between two unit-mass histograms over the
/// same `n` bins.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportProblem {
    a: Vec<f64>,
    b: Vec<f64>,
    cost: Array2<f64>,
}

impl TransportProblem {
    pub fn new(a: Vec<f64>, b: Vec<f64>, cost: Array2<f64>) -> Result<Self> {
        let n = a.len();
        if b.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: b.len(),
            });
        }
        if cost.dim() != (n, n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: cost.nrows(),
            });
        }
        check_histogram(&a)?;
        check_histogram(&b)?;
        for i in 0..n {
            if cost[[i, i]] != 0.0 {
                return Err(Error::InvalidInput(format!("cost diagonal at {i} is nonzero")));
            }
            for j in 0..n {
                let c = cost[[i, j]];
                if !c.is_finite() || c < 0.0 || c != cost[[j, i]] {
                    return Err(Error::InvalidInput(format!(
                        "cost must be finite, nonnegative and symmetric; entry ({i},{j}) = {c}"
                    )));
                }
            }
        }
        Ok(Self { a, b, cost })
    }

    /// Builds the ground cost `distances^p` from a distance matrix.
    pub fn from_distances(a: Vec<f64>, b: Vec<f64>, distances: &Array2<f64>, p: f64) -> Result<Self> {
        Self::new(a, b, ground_cost(distances, p))
    }

    pub fn source(&self) -> &[f64] {
        &self.a
    }

    pub fn target(&self) -> &[f64] {
        &self.b
    }

    pub fn cost(&self) -> &Array2<f64> {
        &self.cost
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }
}

fn check_histogram(h: &[f64]) -> Result<()> {
    if let Some(i) = h.iter().position(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::InvalidInput(format!("histogram entry {i} = {}", h[i])));
    }
    let total: f64 = h.iter().sum();
    if total == 0.0 {
        return Err(Error::EmptyDistribution);
    }
    if (total - 1.0).abs() > MASS_TOL {
        return Err(Error::InvalidInput(format!("histogram sums to {total}, expected 1")));
    }
    Ok(())
}

/// Elementwise `distances^p`.
pub fn ground_cost(distances: &Array2<f64>, p: f64) -> Array2<f64> {
    if p == 1.0 {
        distances.clone()
    } else {
        distances.mapv(|d| d.powf(p))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    /// Inverse regularization strength; larger is closer to exact transport.
    pub lambda: f64,
    pub max_iters: usize,
    /// L1 marginal violation at which iteration stops.
    pub tol: f64,
    /// Ground-metric exponent applied when building costs from distances.
    pub p: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            lambda: 200.0,
            max_iters: 2000,
            tol: 1e-8,
            p: 1.0,
        }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("sinkhorn lambda must be > 0, got {}", self.lambda)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig(format!("sinkhorn tol must be > 0, got {}", self.tol)));
        }
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return Err(Error::InvalidConfig(format!("ground exponent p must be >= 1, got {}", self.p)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("sinkhorn max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportResult {
    /// Transport cost `<plan, cost>` of the regularized plan after rounding
    /// it onto the exact marginals.
    pub value: f64,
    /// Regularized objective `<a, f> + <b, g>`; its exact gradient with
    /// respect to `a` is the dual potential `f`.
    pub dual_value: f64,
    /// Source dual potential centered to zero mean.
    pub gradient: Vec<f64>,
    pub plan: Array2<f64>,
    pub converged: bool,
    pub iters_used: usize,
}

/// Entropic-regularized transport between the two histograms of `problem`.
pub fn sinkhorn(problem: &TransportProblem, config: &SinkhornConfig) -> Result<TransportResult> {
    sinkhorn_dense(&problem.a, &problem.b, problem.cost.view(), config)
}

fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + terms.map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Log-domain Sinkhorn on a possibly rectangular cost. `a` and `b` must be
/// nonnegative with equal total mass; zero-mass bins are skipped during the
/// iterations and their potentials filled in afterwards by one soft
/// c-transform.
///
/// With the plan parametrized as `P_ij = a_i b_j exp(lambda (f_i + g_j - C_ij))`
/// the potentials stay finite for zero-mass bins and converge to the exact
/// transport duals as `lambda` grows.
pub fn sinkhorn_dense(
    a: &[f64],
    b: &[f64],
    cost: ArrayView2<f64>,
    config: &SinkhornConfig,
) -> Result<TransportResult> {
    config.validate()?;
    let (n, m) = cost.dim();
    if a.len() != n || b.len() != m {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a.len(),
        });
    }
    let sa: Vec<usize> = (0..n).filter(|&i| a[i] > 0.0).collect();
    let sb: Vec<usize> = (0..m).filter(|&j| b[j] > 0.0).collect();
    if sa.is_empty() || sb.is_empty() {
        return Err(Error::EmptyDistribution);
    }
    let log_a: Vec<f64> = a.iter().map(|x| x.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|x| x.ln()).collect();
    let support = Support {
        a: sa.iter().map(|&i| a[i]).collect(),
        b: sb.iter().map(|&j| b[j]).collect(),
        log_a: sa.iter().map(|&i| log_a[i]).collect(),
        log_b: sb.iter().map(|&j| log_b[j]).collect(),
        cost: Array2::from_shape_fn((sa.len(), sb.len()), |(r, c)| cost[[sa[r], sb[c]]]),
    };
    let mut fs = vec![0.0; sa.len()];
    let mut gs = vec![0.0; sb.len()];

    // Warm start: solve a ladder of weaker regularizations first, each
    // doubling lambda up to the target, then spend the rest of the budget at
    // the target. The intermediate stages get at most half the budget.
    let max_cost = support.cost.fold(0.0f64, |m, &c| m.max(c));
    let mut stages = Vec::new();
    let mut lam = config.lambda;
    while lam * max_cost > ANNEAL_START {
        lam /= 2.0;
        stages.push(lam);
    }
    stages.reverse();
    let mut iters_used = 0;
    for &lam in &stages {
        let cap = config.max_iters / 2 / stages.len();
        let run = support.solve(&mut fs, &mut gs, lam, config.tol.max(ANNEAL_TOL), cap, false);
        iters_used += run?.0;
    }
    let lambda = config.lambda;
    let (used, converged) =
        support.solve(&mut fs, &mut gs, lambda, config.tol, config.max_iters - iters_used, true)?;
    iters_used += used;

    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    for (k, &i) in sa.iter().enumerate() {
        f[i] = fs[k];
    }
    for (k, &j) in sb.iter().enumerate() {
        g[j] = gs[k];
    }
    for i in 0..n {
        if a[i] <= 0.0 {
            let lse = log_sum_exp(sb.iter().map(|&j| log_b[j] + lambda * (g[j] - cost[[i, j]])));
            f[i] = -lse / lambda;
        }
    }
    for j in 0..m {
        if b[j] <= 0.0 {
            let lse = log_sum_exp(sa.iter().map(|&i| log_a[i] + lambda * (f[i] - cost[[i, j]])));
            g[j] = -lse / lambda;
        }
    }
    if f.iter().chain(&g).any(|x| !x.is_finite()) {
        return Err(Error::NumericalBlowup("non-finite dual potential".into()));
    }

    let mut plan = Array2::zeros((n, m));
    for &i in &sa {
        for &j in &sb {
            plan[[i, j]] = (log_a[i] + log_b[j] + lambda * (f[i] + g[j] - cost[[i, j]])).exp();
        }
    }
    round_to_marginals(&mut plan, a, b);
    let value = plan.iter().zip(cost.iter()).map(|(p, c)| p * c).sum::<f64>();
    let dual_value = sa.iter().map(|&i| a[i] * f[i]).sum::<f64>()
        + sb.iter().map(|&j| b[j] * g[j]).sum::<f64>();
    let mean = f.iter().sum::<f64>() / n as f64;
    let gradient = f.iter().map(|x| x - mean).collect();
    if !converged {
        log::debug!("sinkhorn stopped after {iters_used} iterations without reaching tol {}", config.tol);
    }
    Ok(TransportResult {
        value: value.max(0.0),
        dual_value,
        gradient,
        plan,
        converged,
        iters_used,
    })
}

fn blowup(err: f64, iter: usize) -> Error {
    Error::NumericalBlowup(format!("sinkhorn marginal error became {err} at iteration {iter}"))
}

/// Projects an approximately feasible plan onto the transport polytope of
/// `a` and `b`: rows and then columns are scaled down to their marginals and
/// the leftover mass is redistributed as a rank-one coupling of the deficits.
/// The result has exact marginals whenever `a` and `b` have equal mass.
fn round_to_marginals(plan: &mut Array2<f64>, a: &[f64], b: &[f64]) {
    for (i, mut row) in plan.rows_mut().into_iter().enumerate() {
        let s = row.sum();
        if s > a[i] {
            row *= a[i] / s;
        }
    }
    for (j, mut col) in plan.columns_mut().into_iter().enumerate() {
        let s = col.sum();
        if s > b[j] {
            col *= b[j] / s;
        }
    }
    let row_def: Vec<f64> = plan.rows().into_iter().zip(a).map(|(r, &x)| (x - r.sum()).max(0.0)).collect();
    let col_def: Vec<f64> = plan.columns().into_iter().zip(b).map(|(c, &x)| (x - c.sum()).max(0.0)).collect();
    let total: f64 = row_def.iter().sum();
    if total > 0.0 {
        for (i, &ri) in row_def.iter().enumerate().filter(|(_, &r)| r > 0.0) {
            for (j, &cj) in col_def.iter().enumerate() {
                plan[[i, j]] += ri * cj / total;
            }
        }
    }
}

/// Marginals and cost restricted to the supports of both histograms.
struct Support {
    a: Vec<f64>,
    b: Vec<f64>,
    log_a: Vec<f64>,
    log_b: Vec<f64>,
    cost: Array2<f64>,
}

impl Support {
    /// Runs up to `cap` sweeps at `lambda`, starting from the potentials in
    /// `f` and `g`. Returns the sweeps used and whether the column violation
    /// fell below `tol`. Works on the scalings `exp(lambda f)` while they stay
    /// in floating-point range and finishes in the log domain otherwise.
    fn solve(
        &self,
        f: &mut [f64],
        g: &mut [f64],
        lambda: f64,
        tol: f64,
        cap: usize,
        relax: bool,
    ) -> Result<(usize, bool)> {
        let mut relaxer = Relaxer::new(relax);
        let mut used = 0;
        let max_cost = self.cost.fold(0.0f64, |m, &c| m.max(c));
        if lambda * max_cost <= KERNEL_LIMIT {
            let kernel = self.cost.mapv(|c| (-lambda * c).exp());
            let mut u: Vec<f64> = f.iter().map(|x| (lambda * x).exp()).collect();
            let mut v: Vec<f64> = g.iter().map(|x| (lambda * x).exp()).collect();
            let (mut last_u, mut last_v) = (u.clone(), v.clone());
            let mut failed = false;
            let mut converged = false;
            while used < cap {
                used += 1;
                let err = self.kernel_sweep(&kernel, &mut u, &mut v, relaxer.omega);
                if !err.is_finite() || u.iter().chain(&v).any(|x| !(x.is_finite() && *x > 0.0)) {
                    // scalings left the representable range: continue from
                    // the last good iterate in the log domain
                    failed = true;
                    break;
                }
                last_u.copy_from_slice(&u);
                last_v.copy_from_slice(&v);
                if err < tol {
                    converged = true;
                    break;
                }
                relaxer.update(err);
            }
            for (fi, ui) in f.iter_mut().zip(&last_u) {
                *fi = ui.ln() / lambda;
            }
            for (gj, vj) in g.iter_mut().zip(&last_v) {
                *gj = vj.ln() / lambda;
            }
            if !failed {
                return Ok((used, converged));
            }
            relaxer = Relaxer::new(relax);
        }
        while used < cap {
            used += 1;
            let err = self.log_sweep(f, g, lambda, relaxer.omega);
            if !err.is_finite() {
                return Err(blowup(err, used));
            }
            if err < tol {
                return Ok((used, true));
            }
            relaxer.update(err);
        }
        Ok((used, false))
    }

    /// One row and one column update on the scalings. Returns the L1 column
    /// violation before the column update.
    fn kernel_sweep(&self, kernel: &Array2<f64>, u: &mut [f64], v: &mut [f64], omega: f64) -> f64 {
        for (i, ui) in u.iter_mut().enumerate() {
            let s: f64 = kernel.row(i).iter().zip(&self.b).zip(v.iter()).map(|((k, b), v)| k * b * v).sum();
            let target = 1.0 / s;
            *ui = if omega == 1.0 { target } else { *ui * (target / *ui).powf(omega) };
        }
        let mut err = 0.0;
        for (j, vj) in v.iter_mut().enumerate() {
            let t: f64 = kernel.column(j).iter().zip(&self.a).zip(u.iter()).map(|((k, a), u)| k * a * u).sum();
            err += self.b[j] * (*vj * t - 1.0).abs();
            let target = 1.0 / t;
            *vj = if omega == 1.0 { target } else { *vj * (target / *vj).powf(omega) };
        }
        err
    }

    /// Same update as [`Support::kernel_sweep`] on the potentials, with
    /// log-sum-exp stabilization.
    fn log_sweep(&self, f: &mut [f64], g: &mut [f64], lambda: f64, omega: f64) -> f64 {
        let cost = &self.cost;
        for (i, fi) in f.iter_mut().enumerate() {
            let lse = log_sum_exp(self.log_b.iter().enumerate().map(|(j, lb)| lb + lambda * (g[j] - cost[[i, j]])));
            *fi += omega * (-lse / lambda - *fi);
        }
        let mut err = 0.0;
        for (j, gj) in g.iter_mut().enumerate() {
            let lse = log_sum_exp(self.log_a.iter().enumerate().map(|(i, la)| la + lambda * (f[i] - cost[[i, j]])));
            let g_new = -lse / lambda;
            // column mass before this update was b_j exp(lambda (g_j - g_new))
            err += self.b[j] * (lambda * (*gj - g_new)).exp_m1().abs();
            *gj += omega * (g_new - *gj);
        }
        err
    }
}

/// Over-relaxation schedule: plain updates far from the fixed point,
/// `OVERRELAX` once the violation is small, and plain updates for good if
/// relaxing ever makes the violation jump.
struct Relaxer {
    enabled: bool,
    omega: f64,
    last_err: f64,
}

impl Relaxer {
    fn new(enabled: bool) -> Self {
        Self {
            enabled,
            omega: 1.0,
            last_err: f64::INFINITY,
        }
    }

    fn update(&mut self, err: f64) {
        if self.omega > 1.0 && err > 2.0 * self.last_err {
            self.enabled = false;
        }
        self.omega = if self.enabled && err < RELAX_BELOW { OVERRELAX } else { 1.0 };
        self.last_err = err;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactTransport {
    pub value: f64,
    pub plan: Array2<f64>,
}

/// Exact optimal transport of `problem`, solved on the union of supports.
pub fn exact_emd(problem: &TransportProblem) -> Result<ExactTransport> {
    let n = problem.len();
    let support: Vec<usize> = (0..n)
        .filter(|&i| problem.a[i] > 0.0 || problem.b[i] > 0.0)
        .collect();
    if support.is_empty() {
        return Err(Error::EmptyDistribution);
    }
    let a: Vec<f64> = support.iter().map(|&i| problem.a[i]).collect();
    let b: Vec<f64> = support.iter().map(|&i| problem.b[i]).collect();
    let sub = Array2::from_shape_fn((support.len(), support.len()), |(r, c)| {
        problem.cost[[support[r], support[c]]]
    });
    let solved = transport_simplex(&a, &b, sub.view())?;
    let mut plan = Array2::zeros((n, n));
    for (r, &i) in support.iter().enumerate() {
        for (c, &j) in support.iter().enumerate() {
            plan[[i, j]] = solved.plan[[r, c]];
        }
    }
    Ok(ExactTransport {
        value: solved.value,
        plan,
    })
}

/// Transportation simplex (northwest-corner start, MODI pricing) on a
/// rectangular problem. Zero-mass rows and columns are dropped before solving.
pub fn transport_simplex(a: &[f64], b: &[f64], cost: ArrayView2<f64>) -> Result<ExactTransport> {
    let (n_full, m_full) = cost.dim();
    if a.len() != n_full || b.len() != m_full {
        return Err(Error::DimensionMismatch {
            expected: n_full,
            got: a.len(),
        });
    }
    let rows: Vec<usize> = (0..n_full).filter(|&i| a[i] > 0.0).collect();
    let cols: Vec<usize> = (0..m_full).filter(|&j| b[j] > 0.0).collect();
    if rows.is_empty() || cols.is_empty() {
        return Err(Error::EmptyDistribution);
    }
    let total_a: f64 = rows.iter().map(|&i| a[i]).sum();
    let total_b: f64 = cols.iter().map(|&j| b[j]).sum();
    if ((total_a - total_b) / total_a.max(total_b)).abs() > 1e-7 {
        return Err(Error::InvalidInput(format!(
            "unbalanced transport: {total_a} vs {total_b}"
        )));
    }
    let supply: Vec<f64> = rows.iter().map(|&i| a[i] / total_a).collect();
    let demand: Vec<f64> = cols.iter().map(|&j| b[j] / total_b).collect();
    let c = Array2::from_shape_fn((rows.len(), cols.len()), |(r, k)| cost[[rows[r], cols[k]]]);

    let (flow, _) = solve_transportation(&supply, &demand, &c)?;
    let mut plan = Array2::zeros((n_full, m_full));
    let mut value = 0.0;
    for (r, &i) in rows.iter().enumerate() {
        for (k, &j) in cols.iter().enumerate() {
            let x = flow[[r, k]] * total_a;
            plan[[i, j]] = x;
            value += x * cost[[i, j]];
        }
    }
    Ok(ExactTransport {
        value: value.max(0.0),
        plan,
    })
}

/// Core solver on strictly positive supplies and demands with equal totals.
/// Returns the optimal flow and the number of pivots.
fn solve_transportation(
    supply: &[f64],
    demand: &[f64],
    cost: &Array2<f64>,
) -> Result<(Array2<f64>, usize)> {
    let n = supply.len();
    let m = demand.len();
    let mut flow = Array2::zeros((n, m));
    let mut basic = Array2::from_elem((n, m), false);
    // tree edges, as (row, col)
    let mut basis: Vec<(usize, usize)> = Vec::with_capacity(n + m - 1);

    // northwest corner; ties advance the row so the basis stays a spanning tree
    let mut s = supply.to_vec();
    let mut d = demand.to_vec();
    let (mut i, mut j) = (0, 0);
    loop {
        let x = s[i].min(d[j]);
        flow[[i, j]] = x;
        basic[[i, j]] = true;
        basis.push((i, j));
        s[i] -= x;
        d[j] -= x;
        if i == n - 1 && j == m - 1 {
            break;
        }
        if j == m - 1 || (i < n - 1 && s[i] <= d[j]) {
            i += 1;
        } else {
            j += 1;
        }
    }
    debug_assert_eq!(basis.len(), n + m - 1);

    let scale = cost.iter().fold(0.0f64, |acc, c| acc.max(c.abs())).max(1.0);
    let eps = 1e-12 * scale;
    let max_pivots = 50 * (n + m) * (n + m) + 1000;
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; m];
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n + m];
    for pivot in 0..max_pivots {
        // potentials from the basis tree, rooted at row 0
        for list in adj.iter_mut() {
            list.clear();
        }
        for &(r, k) in &basis {
            adj[r].push(n + k);
            adj[n + k].push(r);
        }
        let mut known = vec![false; n + m];
        known[0] = true;
        u[0] = 0.0;
        let mut queue = VecDeque::from([0usize]);
        while let Some(node) = queue.pop_front() {
            for &next in &adj[node] {
                if known[next] {
                    continue;
                }
                known[next] = true;
                if node < n {
                    let k = next - n;
                    v[k] = cost[[node, k]] - u[node];
                } else {
                    let k = node - n;
                    u[next] = cost[[next, k]] - v[k];
                }
                queue.push_back(next);
            }
        }

        // most negative reduced cost, first index on ties
        let mut best = -eps;
        let mut entering = None;
        for r in 0..n {
            for k in 0..m {
                if basic[[r, k]] {
                    continue;
                }
                let reduced = cost[[r, k]] - u[r] - v[k];
                if reduced < best {
                    best = reduced;
                    entering = Some((r, k));
                }
            }
        }
        let Some((er, ek)) = entering else {
            return Ok((flow, pivot));
        };

        // tree path from row `er` to column `ek`
        let mut parent = vec![usize::MAX; n + m];
        parent[er] = er;
        let mut queue = VecDeque::from([er]);
        while let Some(node) = queue.pop_front() {
            if node == n + ek {
                break;
            }
            for &next in &adj[node] {
                if parent[next] == usize::MAX {
                    parent[next] = node;
                    queue.push_back(next);
                }
            }
        }
        // walk back from column ek: cells alternate -, +, -, ...
        let mut cycle: Vec<((usize, usize), bool)> = Vec::new();
        let mut node = n + ek;
        let mut minus = true;
        while node != er {
            let prev = parent[node];
            let cell = if node >= n { (prev, node - n) } else { (node, prev - n) };
            cycle.push((cell, minus));
            minus = !minus;
            node = prev;
        }
        let mut theta = f64::INFINITY;
        let mut leaving = None;
        for &(cell, is_minus) in &cycle {
            if is_minus && flow[cell] < theta {
                theta = flow[cell];
                leaving = Some(cell);
            }
        }
        let leaving = leaving.expect("cycle through the entering cell has a minus cell");
        let theta = theta.max(0.0);
        flow[[er, ek]] = theta;
        for &(cell, is_minus) in &cycle {
            if is_minus {
                flow[cell] = (flow[cell] - theta).max(0.0);
            } else {
                flow[cell] += theta;
            }
        }
        flow[leaving] = 0.0;
        basic[leaving] = false;
        basic[[er, ek]] = true;
        let pos = basis.iter().position(|&c| c == leaving).expect("leaving cell is basic");
        basis[pos] = (er, ek);
    }
    Err(Error::NumericalBlowup(format!(
        "transportation simplex did not terminate within {max_pivots} pivots"
    )))
}

/// Gram-scaled earth mover's distance between two amount vectors under the
/// distance matrix `distances`: the exact transport cost between the
/// unit-mass normalizations, multiplied by the ground-truth total.
pub fn emd_metric(predicted: &AmountVector, truth: &AmountVector, distances: &Array2<f64>) -> Result<f64> {
    let n = truth.len();
    if predicted.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: predicted.len(),
        });
    }
    if distances.dim() != (n, n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: distances.nrows(),
        });
    }
    let total = truth.total();
    let a = predicted.normalized()?;
    let b = truth.normalized()?;
    let solved = transport_simplex(&a, &b, distances.view())?;
    Ok(total * solved.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn problem(a: Vec<f64>, b: Vec<f64>, cost: Array2<f64>) -> TransportProblem {
        TransportProblem::new(a, b, cost).unwrap()
    }

    #[test]
    fn forced_single_move() {
        let p = problem(vec![1.0, 0.0], vec![0.0, 1.0], array![[0.0, 0.5], [0.5, 0.0]]);
        let cfg = SinkhornConfig {
            lambda: 500.0,
            ..Default::default()
        };
        let r = sinkhorn(&p, &cfg).unwrap();
        assert!((r.value - 0.5).abs() < 1e-3, "{}", r.value);
        assert!(r.converged);
        assert!((exact_emd(&p).unwrap().value - 0.5).abs() < 1e-15);
    }

    #[test]
    fn identical_marginals_approach_diagonal() {
        let a = vec![0.2, 0.3, 0.5];
        let cost = array![[0.0, 0.4, 0.9], [0.4, 0.0, 0.3], [0.9, 0.3, 0.0]];
        let p = problem(a.clone(), a.clone(), cost);
        assert_eq!(exact_emd(&p).unwrap().value, 0.0);
        let mut last = f64::INFINITY;
        for lambda in [10.0, 50.0, 200.0, 1000.0] {
            let cfg = SinkhornConfig {
                lambda,
                max_iters: 20_000,
                ..Default::default()
            };
            let r = sinkhorn(&p, &cfg).unwrap();
            assert!(r.value <= last + 1e-12);
            last = r.value;
        }
        assert!(last < 1e-6, "{last}");
        let cfg = SinkhornConfig {
            lambda: 1000.0,
            max_iters: 20_000,
            ..Default::default()
        };
        let r = sinkhorn(&p, &cfg).unwrap();
        for i in 0..3 {
            assert!((r.plan[[i, i]] - a[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn three_bin_line_metric() {
        let cost = Array2::from_shape_fn((3, 3), |(i, j)| (i as f64 - j as f64).abs());
        let p = problem(vec![0.5, 0.5, 0.0], vec![0.0, 0.5, 0.5], cost);
        let r = exact_emd(&p).unwrap();
        assert!((r.value - 1.0).abs() < 1e-12);
        let rows: Vec<f64> = r.plan.rows().into_iter().map(|row| row.sum()).collect();
        assert!((rows[0] - 0.5).abs() < 1e-12 && (rows[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_and_invalid() {
        assert!(matches!(
            TransportProblem::new(vec![0.0, 0.0], vec![0.5, 0.5], Array2::zeros((2, 2))),
            Err(Error::EmptyDistribution)
        ));
        assert!(TransportProblem::new(vec![0.4, 0.4], vec![0.5, 0.5], Array2::zeros((2, 2))).is_err());
        assert!(TransportProblem::new(
            vec![0.5, 0.5],
            vec![0.5, 0.5],
            array![[0.0, 1.0], [0.5, 0.0]]
        )
        .is_err());
        let bad = SinkhornConfig {
            lambda: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn emd_metric_scaling() {
        let m = array![[0.0, 0.2, 1.0], [0.2, 0.0, 1.0], [1.0, 1.0, 0.0]];
        let v = AmountVector::new(vec![0.0, 1000.0, 0.0]).unwrap();
        let vh = AmountVector::new(vec![1000.0, 0.0, 0.0]).unwrap();
        assert!((emd_metric(&vh, &v, &m).unwrap() - 200.0).abs() < 1e-9);
        assert_eq!(emd_metric(&v, &v, &m).unwrap(), 0.0);
        let same_group = array![[0.0, 0.0, 1.0], [0.0, 0.0, 1.0], [1.0, 1.0, 0.0]];
        let a = AmountVector::new(vec![300.0, 700.0, 0.0]).unwrap();
        let b = AmountVector::new(vec![900.0, 100.0, 0.0]).unwrap();
        assert_eq!(emd_metric(&a, &b, &same_group).unwrap(), 0.0);
    }

    #[test]
    fn degenerate_northwest_start() {
        // equal supplies and demands force simultaneous exhaustion in NW corner
        let a = [0.25; 4];
        let cost = Array2::from_shape_fn((4, 4), |(i, j)| ((i * 3 + j * 5) % 7) as f64 / 7.0);
        let r = transport_simplex(&a, &a, cost.view()).unwrap();
        for i in 0..4 {
            assert!((r.plan.row(i).sum() - 0.25).abs() < 1e-12);
            assert!((r.plan.column(i).sum() - 0.25).abs() < 1e-12);
        }
    }
}
