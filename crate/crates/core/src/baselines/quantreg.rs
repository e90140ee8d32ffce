//! Linear quantile regression.
//!
//! The pinball-loss minimum is a linear program whose optimum interpolates
//! `p` observations. Iteratively reweighted least squares, with `|u|`
//! approximated by `u^2 / max(|u_prev|, eps)`, gets close to it cheaply. The
//! rows with the smallest IRLS residuals then seed an exact vertex descent
//! that stops when no edge of the current vertex lowers the loss.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::conformal::check_alpha;
use crate::error::{Error, Result};
use crate::interval::PredictionInterval;
use crate::models::{design_matrix, least_squares, OutcomeTransform};

/// `u (tau - 1{u < 0})`.
pub fn pinball_loss(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        u * (tau - 1.0)
    } else {
        u * tau
    }
}

/// Mean pinball loss of `y - design * beta`; `design` includes the intercept column.
pub fn mean_pinball_loss(design: &DMatrix<f64>, y: &[f64], beta: &[f64], tau: f64) -> f64 {
    let n = design.nrows();
    let mut total = 0.0;
    for i in 0..n {
        let fit: f64 = (0..design.ncols()).map(|j| design[(i, j)] * beta[j]).sum();
        total += pinball_loss(y[i] - fit, tau);
    }
    total / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantRegOptions {
    pub epsilon: f64,
    pub max_iterations: usize,
    /// Largest coefficient change that counts as converged.
    pub tolerance: f64,
    /// Relative change in pinball loss between iterations that counts as converged.
    pub loss_tolerance: f64,
    /// Cap on vertex pivots after IRLS.
    pub max_pivots: usize,
}

impl Default for QuantRegOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            max_iterations: 100,
            tolerance: 1e-8,
            loss_tolerance: 1e-12,
            max_pivots: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantRegDiagnostics {
    pub tau: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Largest absolute coefficient change in the last IRLS step.
    pub last_change: f64,
    pub loss: f64,
    pub pivots: usize,
    /// The coefficients are a vertex with no descending edge, i.e. an exact optimum.
    pub exact: bool,
}

impl fmt::Display for QuantRegDiagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "tau {} after {} iterations and {} pivots (last change {:e}, loss {})",
            self.tau, self.iterations, self.pivots, self.last_change, self.loss
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantRegFit {
    /// `[intercept, slope_1, ..., slope_p]`
    pub coefficients: Vec<f64>,
    pub diagnostics: QuantRegDiagnostics,
}

impl QuantRegFit {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.coefficients[0]
            + self.coefficients[1..]
                .iter()
                .zip(x)
                .map(|(b, v)| b * v)
                .sum::<f64>()
    }
}

fn weighted_solve(design: &DMatrix<f64>, y: &[f64], weights: &[f64]) -> Option<DVector<f64>> {
    let k = design.ncols();
    let mut xtwx = DMatrix::<f64>::zeros(k, k);
    let mut xtwy = DVector::<f64>::zeros(k);
    for (i, (&w, &yi)) in weights.iter().zip(y).enumerate() {
        let row = design.row(i);
        for a in 0..k {
            let wa = w * row[a];
            xtwy[a] += wa * yi;
            for b in a..k {
                xtwx[(a, b)] += wa * row[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            xtwx[(a, b)] = xtwx[(b, a)];
        }
    }
    match xtwx.clone().cholesky() {
        Some(ch) => Some(ch.solve(&xtwy)),
        None => xtwx.lu().solve(&xtwy),
    }
}

fn residuals(design: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>) -> Vec<f64> {
    let fitted = design * beta;
    y.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect()
}

/// Picks `k` linearly independent rows, preferring small |residual|.
fn initial_basis(design: &DMatrix<f64>, resid: &[f64]) -> Option<Vec<usize>> {
    let k = design.ncols();
    let mut order: Vec<usize> = (0..resid.len()).collect();
    order.sort_by(|&a, &b| resid[a].abs().total_cmp(&resid[b].abs()));
    let mut basis = Vec::with_capacity(k);
    let mut ortho: Vec<DVector<f64>> = Vec::with_capacity(k);
    for &i in &order {
        let mut v = design.row(i).transpose();
        let norm = v.norm();
        for q in &ortho {
            let c = q.dot(&v);
            v -= q * c;
        }
        let rest = v.norm();
        if rest > 1e-8 * norm {
            ortho.push(v / rest);
            basis.push(i);
            if basis.len() == k {
                return Some(basis);
            }
        }
    }
    None
}

struct Vertex {
    beta: DVector<f64>,
    pivots: usize,
    optimal: bool,
}

/// One-sided slope of the loss of a zero-residual row moving by `a` per unit step.
fn kink_slope(a: f64, tau: f64) -> f64 {
    if a > 0.0 {
        (1.0 - tau) * a
    } else {
        -tau * a
    }
}

/// Vertex descent on the summed pinball loss. Column `j` of the inverse basis
/// matrix moves only basis row `j` off its zero residual; each pivot takes the
/// steepest such edge to its exact line minimum and swaps in the row whose
/// residual reaches zero there.
fn vertex_descent(
    design: &DMatrix<f64>,
    y: &[f64],
    tau: f64,
    mut basis: Vec<usize>,
    max_pivots: usize,
) -> Option<Vertex> {
    let (n, k) = design.shape();
    let mut pivots = 0;
    loop {
        let sub = DMatrix::from_fn(k, k, |i, j| design[(basis[i], j)]);
        let lu = sub.lu();
        let beta = lu.solve(&DVector::from_iterator(k, basis.iter().map(|&i| y[i])))?;
        let inverse = lu.try_inverse()?;
        let r = residuals(design, y, &beta);
        let mut in_basis = vec![false; n];
        for &i in &basis {
            in_basis[i] = true;
        }
        let is_zero = |i: usize| r[i].abs() <= 1e-12 * (1.0 + y[i].abs());

        let mut gradient = DVector::<f64>::zeros(k);
        let mut degenerate = Vec::new();
        for i in 0..n {
            if in_basis[i] {
                continue;
            }
            if is_zero(i) {
                degenerate.push(i);
                continue;
            }
            let weight = if r[i] > 0.0 { -tau } else { 1.0 - tau };
            gradient += design.row(i).transpose() * weight;
        }

        let mut steepest: Option<(f64, DVector<f64>, usize)> = None;
        for j in 0..k {
            let column = inverse.column(j).into_owned();
            for sign in [1.0, -1.0] {
                let d = &column * sign;
                let own = if sign > 0.0 { 1.0 - tau } else { tau };
                let slope = gradient.dot(&d)
                    + own
                    + degenerate
                        .iter()
                        .map(|&i| kink_slope((design.row(i) * &d)[0], tau))
                        .sum::<f64>();
                let tol = 1e-10 * (1.0 + gradient.dot(&d).abs());
                if slope < -tol && steepest.as_ref().is_none_or(|(s, _, _)| slope < *s) {
                    steepest = Some((slope, d, j));
                }
            }
        }
        let Some((mut slope, d, leaving)) = steepest else {
            return Some(Vertex {
                beta,
                pivots,
                optimal: true,
            });
        };
        if pivots == max_pivots {
            return Some(Vertex {
                beta,
                pivots,
                optimal: false,
            });
        }

        let a = design * &d;
        let mut breaks: Vec<(f64, usize)> = (0..n)
            .filter(|&i| !in_basis[i] && !is_zero(i) && a[i] != 0.0)
            .map(|i| (r[i] / a[i], i))
            .filter(|&(t, _)| t > 0.0)
            .collect();
        breaks.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut entering = None;
        for &(_, i) in &breaks {
            slope += a[i].abs();
            if slope >= 0.0 {
                entering = Some(i);
                break;
            }
        }
        let entering = entering?;
        basis[leaving] = entering;
        pivots += 1;
    }
}

/// Minimises the mean pinball loss of `y` on `[1 | features]` at level `tau`.
pub fn quantreg_fit(
    features: &DMatrix<f64>,
    y: &[f64],
    tau: f64,
    options: QuantRegOptions,
) -> Result<QuantRegFit> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::param("tau", format!("{tau} is not inside (0, 1)")));
    }
    let (n, p) = features.shape();
    if y.len() != n {
        return Err(Error::Shape(format!("{n} feature rows but {} outcomes", y.len())));
    }
    if n < p + 1 {
        return Err(Error::SingularDesign);
    }
    let design = design_matrix(features);
    let mut beta = least_squares(&design, &DVector::from_column_slice(y))?;

    let mut iterations = 0;
    let mut last_change = f64::INFINITY;
    let mut converged = false;
    let mut weights = vec![0.0; n];
    let mut prev_loss = f64::INFINITY;
    let mut best = (f64::INFINITY, beta.clone());
    while iterations < options.max_iterations {
        iterations += 1;
        let r = residuals(&design, y, &beta);
        let loss = r.iter().map(|&u| pinball_loss(u, tau)).sum::<f64>() / n as f64;
        if loss < best.0 {
            best = (loss, beta.clone());
        }
        // each step minimises a majoriser of the smoothed loss, so a flat loss
        // means a stationary point even when the coefficients still jitter
        if (prev_loss - loss).abs() <= options.loss_tolerance * loss.max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
        prev_loss = loss;
        for (w, &ri) in weights.iter_mut().zip(&r) {
            let side = if ri < 0.0 { 1.0 - tau } else { tau };
            *w = side / ri.abs().max(options.epsilon);
        }
        let next = weighted_solve(&design, y, &weights).ok_or(Error::SingularDesign)?;
        last_change = (&next - &beta).amax();
        beta = next;
        if last_change < options.tolerance {
            converged = true;
            break;
        }
    }
    let final_loss = mean_pinball_loss(&design, y, beta.as_slice(), tau);
    if best.0 < final_loss {
        beta = best.1;
    }

    let mut coefficients: Vec<f64> = beta.iter().copied().collect();
    let mut loss = mean_pinball_loss(&design, y, &coefficients, tau);
    let mut exact = false;
    let mut pivots = 0;
    let vertex = initial_basis(&design, &residuals(&design, y, &beta))
        .and_then(|basis| vertex_descent(&design, y, tau, basis, options.max_pivots));
    if let Some(vertex) = vertex {
        pivots = vertex.pivots;
        let candidate: Vec<f64> = vertex.beta.iter().copied().collect();
        let candidate_loss = mean_pinball_loss(&design, y, &candidate, tau);
        if candidate.iter().all(|c| c.is_finite()) && (vertex.optimal || candidate_loss <= loss) {
            coefficients = candidate;
            loss = candidate_loss;
            exact = vertex.optimal;
        }
    }

    let diagnostics = QuantRegDiagnostics {
        tau,
        iterations,
        converged,
        last_change,
        loss,
        pivots,
        exact,
    };
    if !converged && !exact {
        return Err(Error::NonConvergence(diagnostics));
    }
    Ok(QuantRegFit {
        coefficients,
        diagnostics,
    })
}

/// Lower and upper quantile fits on a transformed outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantRegModel {
    pub lower: QuantRegFit,
    pub upper: QuantRegFit,
    pub transform: OutcomeTransform,
}

impl QuantRegModel {
    /// Fits `tau = alpha/2` and `tau = 1 - alpha/2` to `transform(y)`.
    pub fn fit(
        features: &DMatrix<f64>,
        y: &[f64],
        alpha: f64,
        transform: OutcomeTransform,
        options: QuantRegOptions,
    ) -> Result<Self> {
        check_alpha(alpha)?;
        let target = transform.forward_all(y)?;
        Ok(Self {
            lower: quantreg_fit(features, &target, alpha / 2.0, options)?,
            upper: quantreg_fit(features, &target, 1.0 - alpha / 2.0, options)?,
            transform,
        })
    }

    /// Interval on the raw scale; the bool reports crossed (swapped) quantiles.
    pub fn interval(&self, x: &[f64]) -> Result<(PredictionInterval, bool)> {
        let k = self.lower.coefficients.len() - 1;
        if x.len() != k {
            return Err(Error::Shape(format!("expected {k} features, got {}", x.len())));
        }
        let mut lo = self.lower.predict(x);
        let mut hi = self.upper.predict(x);
        let crossed = lo > hi;
        if crossed {
            std::mem::swap(&mut lo, &mut hi);
        }
        let lo = self.transform.inverse(lo).0;
        let hi = self.transform.inverse(hi).0;
        Ok((PredictionInterval::new(lo, hi)?, crossed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn toy(n: usize, seed: u64) -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.7).unwrap();
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..3.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.0 + 0.5 * v + noise.sample(&mut rng)).collect();
        (DMatrix::from_column_slice(n, 1, &x), y)
    }

    /// Brute-force minimum of the mean pinball loss over a coefficient grid,
    /// refined twice around the best cell.
    fn grid_minimum(design: &DMatrix<f64>, y: &[f64], tau: f64) -> f64 {
        let (mut c0, mut c1, mut span) = (0.0, 0.0, 4.0);
        let mut best = f64::INFINITY;
        for _ in 0..4 {
            let steps = 200;
            let (mut b0, mut b1) = (c0, c1);
            for i in 0..=steps {
                for j in 0..=steps {
                    let a = c0 - span + 2.0 * span * i as f64 / steps as f64;
                    let b = c1 - span + 2.0 * span * j as f64 / steps as f64;
                    let l = mean_pinball_loss(design, y, &[a, b], tau);
                    if l < best {
                        best = l;
                        b0 = a;
                        b1 = b;
                    }
                }
            }
            c0 = b0;
            c1 = b1;
            span /= 20.0;
        }
        best
    }

    #[test]
    fn constant_outcome() {
        let x = DMatrix::from_column_slice(6, 1, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let y = [4.0; 6];
        for tau in [0.05, 0.5, 0.95] {
            let fit = quantreg_fit(&x, &y, tau, QuantRegOptions::default()).unwrap();
            assert!((fit.coefficients[0] - 4.0).abs() < 1e-9);
            assert!(fit.coefficients[1].abs() < 1e-9);
        }
        let model =
            QuantRegModel::fit(&x, &y, 0.1, OutcomeTransform::Identity, QuantRegOptions::default())
                .unwrap();
        let (iv, crossed) = model.interval(&[2.5]).unwrap();
        assert!(!crossed);
        assert!((iv.lower() - 4.0).abs() < 1e-9 && (iv.upper() - 4.0).abs() < 1e-9);
    }

    #[test]
    fn median_fit_matches_brute_force() {
        let (x, y) = toy(80, 3);
        let fit = quantreg_fit(&x, &y, 0.5, QuantRegOptions::default()).unwrap();
        let design = design_matrix(&x);
        let brute = grid_minimum(&design, &y, 0.5);
        assert!(fit.diagnostics.loss <= brute + 1e-4, "{} vs {}", fit.diagnostics.loss, brute);
    }

    #[test]
    fn tail_fits_match_brute_force() {
        let (x, y) = toy(60, 9);
        let design = design_matrix(&x);
        for tau in [0.05, 0.25, 0.9] {
            let fit = quantreg_fit(&x, &y, tau, QuantRegOptions::default()).unwrap();
            let brute = grid_minimum(&design, &y, tau);
            assert!(fit.diagnostics.loss <= brute + 1e-4, "tau {tau}");
            let zero = mean_pinball_loss(&design, &y, &[0.0, 0.0], tau);
            assert!(fit.diagnostics.loss <= zero);
        }
    }

    /// Best line through any two observations; the optimum is one of them.
    fn vertex_minimum(design: &DMatrix<f64>, y: &[f64], tau: f64) -> f64 {
        let n = y.len();
        let mut best = f64::INFINITY;
        for i in 0..n {
            for j in i + 1..n {
                let (xi, xj) = (design[(i, 1)], design[(j, 1)]);
                if xi == xj {
                    continue;
                }
                let slope = (y[j] - y[i]) / (xj - xi);
                let beta = [y[i] - slope * xi, slope];
                best = best.min(mean_pinball_loss(design, y, &beta, tau));
            }
        }
        best
    }

    #[test]
    fn vertex_enumeration_agrees_from_any_warm_start() {
        let (x, y) = toy(50, 21);
        let design = design_matrix(&x);
        let crude = QuantRegOptions {
            max_iterations: 1,
            ..Default::default()
        };
        for tau in [0.05, 0.5, 0.95] {
            let exact = vertex_minimum(&design, &y, tau);
            for options in [QuantRegOptions::default(), crude] {
                let fit = quantreg_fit(&x, &y, tau, options).unwrap();
                assert!(fit.diagnostics.exact);
                assert!((fit.diagnostics.loss - exact).abs() <= 1e-12 * exact.max(1.0), "tau {tau}");
            }
        }
    }

    #[test]
    fn atom_at_zero_is_reproduced_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 400;
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|v| if rng.random_bool(0.8) { 0.0 } else { 1.0 + 3.0 * v })
            .collect();
        let fit = quantreg_fit(&DMatrix::from_column_slice(n, 1, &x), &y, 0.05, QuantRegOptions::default())
            .unwrap();
        assert_eq!(fit.coefficients, vec![0.0, 0.0]);
    }

    #[test]
    fn crossing_is_swapped_and_flagged() {
        let fit = |c: Vec<f64>, tau| QuantRegFit {
            coefficients: c,
            diagnostics: QuantRegDiagnostics {
                tau,
                iterations: 0,
                converged: true,
                last_change: 0.0,
                loss: 0.0,
                pivots: 0,
                exact: true,
            },
        };
        let model = QuantRegModel {
            lower: fit(vec![2.0, 1.0], 0.05),
            upper: fit(vec![1.0, 0.0], 0.95),
            transform: OutcomeTransform::Identity,
        };
        let (iv, crossed) = model.interval(&[1.0]).unwrap();
        assert!(crossed);
        assert_eq!((iv.lower(), iv.upper()), (1.0, 3.0));
    }
}
