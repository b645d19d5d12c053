//! Minimum-norm point of the convex hull of finitely many vectors in weighted L².
//!
//! Primary method is Wolfe's active-set iteration run on the Gram matrix:
//! a major cycle adds the vertex most violating the first-order condition,
//! minor cycles move to the affine minimizer of the active set and drop
//! vertices whose weight hits zero. If the active set stalls (a singular
//! affine system or a vertex that will not enter), an accelerated projected
//! gradient on the simplex takes over from the best iterate, with periodic
//! affine polishing on its support.

use nalgebra::{DMatrix, DVector};

use super::ConvexWeights;
use crate::error::{Error, Result};
use crate::filtered_space::{FiniteFilteredSpace, RandomVariable};

pub const DEFAULT_TOL: f64 = 1e-10;

/// Weights below this are treated as leaving the active set.
const DROP: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    ActiveSet,
    ProjectedGradient,
}

#[derive(Debug, Clone)]
pub struct MinNormPoint {
    pub weights: ConvexWeights,
    pub point: RandomVariable,
    pub norm: f64,
    /// `max_j max(0, −⟨g, f_j − g⟩) / max(1, ‖f_j‖₂)`.
    pub certificate_gap: f64,
    /// Unscaled `max_j max(0, −⟨g, f_j − g⟩)`.
    pub raw_gap: f64,
    /// Certified lower bound on the minimum norm, `(‖g‖² − raw_gap) / ‖g‖`.
    pub lower_bound: f64,
    pub iterations: usize,
    pub method: Method,
}

struct Gram {
    m: usize,
    g: Vec<f64>,
    scales: Vec<f64>,
}

impl Gram {
    fn new(space: &FiniteFilteredSpace, vectors: &[RandomVariable]) -> Self {
        let m = vectors.len();
        let mut g = vec![0.0; m * m];
        for i in 0..m {
            for j in i..m {
                let v = space.inner(&vectors[i], &vectors[j]);
                g[i * m + j] = v;
                g[j * m + i] = v;
            }
        }
        let scales = (0..m).map(|j| g[j * m + j].max(0.0).sqrt().max(1.0)).collect();
        Gram { m, g, scales }
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.g[i * self.m + j]
    }

    fn apply(&self, lambda: &[f64]) -> Vec<f64> {
        (0..self.m).map(|i| (0..self.m).map(|j| self.at(i, j) * lambda[j]).sum()).collect()
    }

    /// `(scaled gap, most violating index)` of the first-order condition at `lambda`.
    fn certificate(&self, lambda: &[f64]) -> (f64, usize) {
        let gl = self.apply(lambda);
        let xx: f64 = gl.iter().zip(lambda).map(|(a, b)| a * b).sum();
        let mut worst = (f64::NEG_INFINITY, 0);
        for (j, (g, scale)) in gl.iter().zip(&self.scales).enumerate() {
            let scaled = (xx - g) / scale;
            if scaled > worst.0 {
                worst = (scaled, j);
            }
        }
        (worst.0.max(0.0), worst.1)
    }

    fn objective(&self, lambda: &[f64]) -> f64 {
        let gl = self.apply(lambda);
        gl.iter().zip(lambda).map(|(a, b)| a * b).sum()
    }

    /// Minimizer of `μᵀ G_S μ` subject to `Σ μ = 1` over the index set `active`.
    fn affine_minimizer(&self, active: &[usize]) -> Option<Vec<f64>> {
        let k = active.len();
        let mut kkt = DMatrix::<f64>::zeros(k + 1, k + 1);
        for (a, &i) in active.iter().enumerate() {
            for (b, &j) in active.iter().enumerate() {
                kkt[(a, b)] = self.at(i, j);
            }
            kkt[(a, k)] = 1.0;
            kkt[(k, a)] = 1.0;
        }
        let mut rhs = DVector::<f64>::zeros(k + 1);
        rhs[k] = 1.0;
        let sol = kkt.clone().lu().solve(&rhs)?;
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let residual = (&kkt * &sol - &rhs).amax();
        let scale = kkt.amax().max(1.0) * sol.amax().max(1.0);
        if residual > 1e-9 * scale {
            return None;
        }
        Some(sol.iter().take(k).copied().collect())
    }
}

struct Outcome {
    lambda: Vec<f64>,
    iterations: usize,
    converged: bool,
}

fn wolfe(gram: &Gram, tol: f64, cap: usize) -> Outcome {
    let m = gram.m;
    // earliest vertex whose squared norm is within tolerance of the smallest
    let smallest = (0..m).map(|j| gram.at(j, j)).fold(f64::INFINITY, f64::min);
    let start = (0..m).find(|&j| gram.at(j, j) <= smallest + tol * smallest.max(1.0)).expect("at least one vector");
    let mut lambda = vec![0.0; m];
    lambda[start] = 1.0;
    let mut active = vec![start];
    let mut iterations = 0;
    while iterations < cap {
        iterations += 1;
        let (gap, entering) = gram.certificate(&lambda);
        if gap <= 0.5 * tol {
            return Outcome { lambda, iterations, converged: true };
        }
        if active.contains(&entering) {
            break;
        }
        active.push(entering);
        let mut minor = 0;
        loop {
            minor += 1;
            if minor > m + 2 {
                return Outcome { lambda, iterations, converged: false };
            }
            let Some(mu) = gram.affine_minimizer(&active) else {
                return Outcome { lambda, iterations, converged: false };
            };
            if mu.iter().all(|&x| x > DROP) {
                for (&i, &x) in active.iter().zip(&mu) {
                    lambda[i] = x;
                }
                break;
            }
            // move toward mu until the first weight reaches zero
            let mut theta = 1.0;
            let mut leaving = None;
            for (&i, &x) in active.iter().zip(&mu) {
                if x <= DROP {
                    let t = lambda[i] / (lambda[i] - x);
                    if t < theta || leaving.is_none() {
                        theta = t;
                        leaving = Some(i);
                    }
                }
            }
            let theta = theta.clamp(0.0, 1.0);
            for (&i, &x) in active.iter().zip(&mu) {
                lambda[i] = (1.0 - theta) * lambda[i] + theta * x;
            }
            if let Some(i) = leaving {
                lambda[i] = 0.0;
            }
            active.retain(|&i| lambda[i] > DROP);
            for (i, l) in lambda.iter_mut().enumerate() {
                if !active.contains(&i) {
                    *l = 0.0;
                }
            }
            if active.is_empty() || !active.contains(&entering) && minor == 1 && leaving == Some(entering) {
                return Outcome { lambda, iterations, converged: false };
            }
            normalize(&mut lambda);
        }
    }
    Outcome { lambda, iterations, converged: false }
}

fn normalize(lambda: &mut [f64]) {
    for x in lambda.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    let total: f64 = lambda.iter().sum();
    for x in lambda.iter_mut() {
        *x /= total;
    }
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut shift = 0.0;
    for (k, &x) in sorted.iter().enumerate() {
        cumsum += x;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if x - t > 0.0 {
            shift = t;
        }
    }
    v.iter().map(|&x| (x - shift).max(0.0)).collect()
}

fn projected_gradient(gram: &Gram, start: Vec<f64>, tol: f64, cap: usize) -> Outcome {
    let m = gram.m;
    let lipschitz = 2.0
        * (0..m).map(|i| (0..m).map(|j| gram.at(i, j).abs()).sum::<f64>()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let step = 1.0 / lipschitz;
    let mut best = start.clone();
    let mut best_obj = gram.objective(&best);
    let mut x = start.clone();
    let mut y = start;
    let mut t = 1.0f64;
    for it in 1..=cap {
        let grad = gram.apply(&y);
        let moved: Vec<f64> = y.iter().zip(&grad).map(|(yi, gi)| yi - 2.0 * step * gi).collect();
        let next = project_simplex(&moved);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = next.iter().zip(&x).map(|(a, b)| a + (t - 1.0) / t_next * (a - b)).collect();
        x = next;
        t = t_next;
        let obj = gram.objective(&x);
        if obj < best_obj {
            best_obj = obj;
            best = x.clone();
        }
        if it % 16 == 0 || it == cap {
            let support: Vec<usize> = (0..m).filter(|&i| best[i] > 1e-12).collect();
            if let Some(mu) = gram.affine_minimizer(&support) {
                if mu.iter().all(|&v| v >= 0.0) {
                    let mut polished = vec![0.0; m];
                    for (&i, &v) in support.iter().zip(&mu) {
                        polished[i] = v;
                    }
                    normalize(&mut polished);
                    if gram.certificate(&polished).0 <= 0.5 * tol {
                        return Outcome { lambda: polished, iterations: it, converged: true };
                    }
                }
            }
            if gram.certificate(&best).0 <= 0.5 * tol {
                return Outcome { lambda: best, iterations: it, converged: true };
            }
        }
    }
    Outcome { lambda: best, iterations: cap, converged: false }
}

/// Direct (not Gram-based) evaluation of the point and its optimality certificate.
fn finish(
    space: &FiniteFilteredSpace,
    vectors: &[RandomVariable],
    lambda: Vec<f64>,
    iterations: usize,
    method: Method,
) -> MinNormPoint {
    let n = space.num_atoms();
    let mut point = vec![0.0; n];
    for (f, &w) in vectors.iter().zip(&lambda) {
        if w != 0.0 {
            for (p, v) in point.iter_mut().zip(f.values()) {
                *p += w * v;
            }
        }
    }
    let point = RandomVariable::from_vec_unchecked(point);
    let gg = space.inner(&point, &point);
    let mut raw_gap: f64 = 0.0;
    let mut certificate_gap: f64 = 0.0;
    for f in vectors {
        let d = (gg - space.inner(&point, f)).max(0.0);
        raw_gap = raw_gap.max(d);
        certificate_gap = certificate_gap.max(d / space.l2_norm(f).max(1.0));
    }
    let norm = gg.sqrt();
    let lower_bound = if norm > 0.0 { ((gg - raw_gap) / norm).max(0.0) } else { 0.0 };
    MinNormPoint {
        weights: ConvexWeights::from_solver(0, lambda),
        point,
        norm,
        certificate_gap,
        raw_gap,
        lower_bound,
        iterations,
        method,
    }
}

/// Minimum-norm point of `conv{vectors}` with certificate `⟨g, f_j − g⟩ ≥ −tol·max(1, ‖f_j‖₂)`.
///
/// Iteration cap is `10 · (number of vectors) · (atom count)`.
pub fn min_norm_convex_hull(space: &FiniteFilteredSpace, vectors: &[RandomVariable], tol: f64) -> Result<MinNormPoint> {
    if vectors.is_empty() {
        return Err(Error::EmptyHull);
    }
    for f in vectors {
        space.check_len(f.len())?;
    }
    assert!(tol > 0.0, "tolerance must be positive");
    let gram = Gram::new(space, vectors);
    let cap = 10 * vectors.len() * space.num_atoms();

    let first = wolfe(&gram, tol, cap);
    if first.converged {
        let sol = finish(space, vectors, first.lambda.clone(), first.iterations, Method::ActiveSet);
        if sol.certificate_gap <= tol {
            return Ok(sol);
        }
    }
    let spent = first.iterations;
    let second = projected_gradient(&gram, first.lambda, tol, cap.saturating_sub(spent).max(cap / 2));
    let sol = finish(space, vectors, second.lambda, spent + second.iterations, Method::ProjectedGradient);
    if sol.certificate_gap <= tol {
        return Ok(sol);
    }
    Err(Error::NoConvergence {
        iterations: sol.iterations,
        gap: sol.certificate_gap,
        weights: sol.weights.weights().to_vec(),
        point: sol.point.into_vec(),
    })
}
