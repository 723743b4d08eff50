//! Legendre-Gauss-Lobatto grid machinery on the reference interval [-1, 1].
//!
//! A [`Grid`] bundles the LGL nodes, the matching quadrature weights, the
//! barycentric interpolation weights and the first-order differentiation
//! matrix. Everything is computed once at construction; the grid is
//! immutable afterwards.

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BasisError {
    #[error("invalid polynomial order {0}: must be at least 1")]
    InvalidOrder(usize),
    #[error("point {0} lies outside the reference interval [-1, 1]")]
    Domain(f64),
    #[error("expected {expected} nodal values, got {got}")]
    Length { expected: usize, got: usize },
}

const NEWTON_TOL: f64 = 1e-15;
const NEWTON_MAX_ITER: usize = 100;

/// Legendre polynomials `P_N(x)` and `P_{N-1}(x)` by the three-term recurrence.
pub fn legendre_pair(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p_prev, mut p) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let next = ((2.0 * kf - 1.0) * x * p - (kf - 1.0) * p_prev) / kf;
        p_prev = p;
        p = next;
    }
    (p, p_prev)
}

/// LGL nodes of order `n`, ascending: -1, the roots of `P_N'`, +1.
///
/// Newton iteration on `(1 - x^2) P_N'(x)` started from the Chebyshev-Lobatto
/// points `cos(pi j / N)`.
pub fn lgl_nodes(n: usize) -> Result<Vec<f64>, BasisError> {
    if n < 1 {
        return Err(BasisError::InvalidOrder(n));
    }
    let nf = n as f64;
    let mut nodes: Vec<f64> = (0..=n)
        .map(|j| -(std::f64::consts::PI * j as f64 / nf).cos())
        .collect();
    for x in nodes.iter_mut().skip(1).take(n.saturating_sub(1)) {
        for _ in 0..NEWTON_MAX_ITER {
            // With q = (1-x^2) P_N', q' = -N(N+1) P_N, and the Legendre
            // identity (1-x^2) P_N' = N (P_{N-1} - x P_N), the Newton update
            // collapses to a ratio of P_N and P_{N-1}.
            let (p, p_prev) = legendre_pair(n, *x);
            let dx = (*x * p - p_prev) / ((nf + 1.0) * p);
            *x -= dx;
            if dx.abs() < NEWTON_TOL {
                break;
            }
        }
    }
    nodes[0] = -1.0;
    nodes[n] = 1.0;
    // Enforce exact mirror symmetry.
    for j in 0..=n / 2 {
        let m = 0.5 * (nodes[n - j] - nodes[j]);
        nodes[j] = -m;
        nodes[n - j] = m;
    }
    if n % 2 == 0 {
        nodes[n / 2] = 0.0;
    }
    Ok(nodes)
}

/// Quadrature weights `2 / (N (N+1) P_N(x_j)^2)` for LGL nodes.
pub fn lgl_weights(nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len() - 1;
    let nf = n as f64;
    nodes
        .iter()
        .map(|&x| {
            let (p, _) = legendre_pair(n, x);
            2.0 / (nf * (nf + 1.0) * p * p)
        })
        .collect()
}

/// Barycentric weights `1 / prod_{k != j} (x_j - x_k)`, normalized so the
/// largest magnitude is one.
pub fn barycentric_weights(nodes: &[f64]) -> Vec<f64> {
    let mut w: Vec<f64> = nodes
        .iter()
        .enumerate()
        .map(|(j, &xj)| {
            let prod: f64 = nodes
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != j)
                .map(|(_, &xk)| xj - xk)
                .product();
            1.0 / prod
        })
        .collect();
    let scale = w.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    w.iter_mut().for_each(|v| *v /= scale);
    w
}

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let (mut sum, mut comp) = (0.0_f64, 0.0_f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// First-order differentiation matrix. Off-diagonals from the barycentric
/// formula, diagonal as the negative row sum.
pub fn diff_matrix(nodes: &[f64], bary: &[f64]) -> DMatrix<f64> {
    let m = nodes.len();
    let mut d = DMatrix::zeros(m, m);
    for j in 0..m {
        for k in 0..m {
            if k != j {
                d[(j, k)] = (bary[k] / bary[j]) / (nodes[j] - nodes[k]);
            }
        }
        d[(j, j)] = -compensated_sum((0..m).filter(|&k| k != j).map(|k| d[(j, k)]));
    }
    d
}

/// Barycentric (second form) evaluation of the interpolant through
/// `(nodes[j], values[j])` at `tau`.
pub fn interpolate(nodes: &[f64], bary: &[f64], values: &[f64], tau: f64) -> Result<f64, BasisError> {
    if values.len() != nodes.len() {
        return Err(BasisError::Length { expected: nodes.len(), got: values.len() });
    }
    if !(-1.0..=1.0).contains(&tau) {
        return Err(BasisError::Domain(tau));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for ((&x, &b), &f) in nodes.iter().zip(bary).zip(values) {
        let diff = tau - x;
        if diff == 0.0 {
            return Ok(f);
        }
        let t = b / diff;
        num += t * f;
        den += t;
    }
    Ok(num / den)
}

/// One LGL segment of polynomial order `N` (N+1 nodes).
#[derive(Debug, Clone)]
pub struct Grid {
    order: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    bary: Vec<f64>,
    diff: DMatrix<f64>,
}

impl Grid {
    pub fn new(order: usize) -> Result<Self, BasisError> {
        let nodes = lgl_nodes(order)?;
        let weights = lgl_weights(&nodes);
        let bary = barycentric_weights(&nodes);
        let diff = diff_matrix(&nodes, &bary);
        Ok(Self { order, nodes, weights, bary, diff })
    }

    /// Polynomial degree N.
    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of nodes, N + 1.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bary_weights(&self) -> &[f64] {
        &self.bary
    }

    pub fn diff_matrix(&self) -> &DMatrix<f64> {
        &self.diff
    }

    pub fn interpolate(&self, values: &[f64], tau: f64) -> Result<f64, BasisError> {
        interpolate(&self.nodes, &self.bary, values, tau)
    }

    /// Quadrature of nodal samples over [-1, 1].
    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    /// Physical times `t_j = T (tau_j + 1) / 2` for a horizon `[0, T]`.
    pub fn times(&self, horizon: f64) -> Vec<f64> {
        self.nodes.iter().map(|&tau| to_time(tau, horizon)).collect()
    }
}

/// `t = T (tau + 1) / 2`.
pub fn to_time(tau: f64, horizon: f64) -> f64 {
    0.5 * horizon * (tau + 1.0)
}

/// `tau = 2 t / T - 1`, clamped against round-off at the endpoints.
pub fn to_tau(t: f64, horizon: f64) -> f64 {
    let tau = 2.0 * t / horizon - 1.0;
    if (tau + 1.0).abs() < 1e-15 {
        -1.0
    } else if (tau - 1.0).abs() < 1e-15 {
        1.0
    } else {
        tau
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn order_zero_rejected() {
        assert_eq!(lgl_nodes(0), Err(BasisError::InvalidOrder(0)));
        assert!(Grid::new(0).is_err());
    }

    #[test]
    fn small_orders_closed_form() {
        assert_eq!(lgl_nodes(1).unwrap(), vec![-1.0, 1.0]);
        assert_eq!(lgl_nodes(2).unwrap(), vec![-1.0, 0.0, 1.0]);
        let r = (3.0_f64 / 7.0).sqrt();
        let n4 = lgl_nodes(4).unwrap();
        for (a, b) in n4.iter().zip([-1.0, -r, 0.0, r, 1.0]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-14);
        }
        assert_abs_diff_eq!(n4[3], 0.6546536707, epsilon = 1e-10);

        let w1 = lgl_weights(&lgl_nodes(1).unwrap());
        assert_eq!(w1, vec![1.0, 1.0]);
        let w2 = lgl_weights(&lgl_nodes(2).unwrap());
        for (a, b) in w2.iter().zip([1.0 / 3.0, 4.0 / 3.0, 1.0 / 3.0]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        let w4 = lgl_weights(&n4);
        for (a, b) in w4.iter().zip([0.1, 49.0 / 90.0, 32.0 / 45.0, 49.0 / 90.0, 0.1]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn diff_matrix_low_orders() {
        let g1 = Grid::new(1).unwrap();
        let expect1 = [[-0.5, 0.5], [-0.5, 0.5]];
        for j in 0..2 {
            for k in 0..2 {
                assert_abs_diff_eq!(g1.diff_matrix()[(j, k)], expect1[j][k], epsilon = 1e-15);
            }
        }
        let g2 = Grid::new(2).unwrap();
        let expect2 = [[-1.5, 2.0, -0.5], [-0.5, 0.0, 0.5], [0.5, -2.0, 1.5]];
        for j in 0..3 {
            for k in 0..3 {
                assert_abs_diff_eq!(g2.diff_matrix()[(j, k)], expect2[j][k], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn constants_have_zero_derivative() {
        for n in [1, 2, 5, 17, 40, 100] {
            let g = Grid::new(n).unwrap();
            for row in g.diff_matrix().row_iter() {
                assert!(compensated_sum(row.iter().copied()).abs() < 1e-12, "n={n}");
            }
        }
    }

    #[test]
    fn high_order_nodes_are_sane() {
        let g = Grid::new(100).unwrap();
        assert!(g.nodes().windows(2).all(|w| w[0] < w[1]));
        assert_abs_diff_eq!(g.weights().iter().sum::<f64>(), 2.0, epsilon = 1e-13);
        assert!(g.weights().iter().all(|&w| w > 0.0));
        for j in 0..=100 {
            assert!((g.nodes()[j] + g.nodes()[100 - j]).abs() <= 1e-14);
        }
    }

    #[test]
    fn interpolation_at_nodes_and_domain() {
        let g = Grid::new(2).unwrap();
        let vals: Vec<f64> = g.nodes().iter().map(|t| t * t).collect();
        assert_abs_diff_eq!(g.interpolate(&vals, 0.5).unwrap(), 0.25, epsilon = 1e-15);
        for j in 0..3 {
            assert_eq!(g.interpolate(&vals, g.nodes()[j]).unwrap(), vals[j]);
        }
        assert_eq!(g.interpolate(&vals, 1.5), Err(BasisError::Domain(1.5)));
        assert!(matches!(g.interpolate(&vals[..2], 0.0), Err(BasisError::Length { .. })));
        let c = vec![3.25; 3];
        assert_abs_diff_eq!(g.interpolate(&c, -0.77).unwrap(), 3.25, epsilon = 1e-15);
    }

    #[test]
    fn time_map_round_trip() {
        assert_eq!(to_time(-1.0, 2.2), 0.0);
        assert_eq!(to_time(1.0, 2.2), 2.2);
        assert_eq!(to_tau(2.2, 2.2), 1.0);
        assert_eq!(to_tau(0.0, 2.2), -1.0);
    }
}
