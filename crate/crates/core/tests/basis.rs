use proptest::prelude::*;
use psdae::basis::{compensated_sum, Grid};

fn poly(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

fn poly_derivative(coeffs: &[f64], x: f64) -> f64 {
    let d: Vec<f64> = coeffs.iter().enumerate().skip(1).map(|(k, c)| k as f64 * c).collect();
    poly(&d, x)
}

fn poly_integral(coeffs: &[f64]) -> f64 {
    coeffs.iter().enumerate().filter(|(k, _)| k % 2 == 0).map(|(k, c)| 2.0 * c / (k as f64 + 1.0)).sum()
}

#[test]
fn weights_sum_to_two() {
    for n in 1..=100 {
        let g = Grid::new(n).unwrap();
        assert!((compensated_sum(g.weights().iter().copied()) - 2.0).abs() <= 1e-13, "N={n}");
    }
}

#[test]
fn nodes_and_weights_are_symmetric() {
    for n in 1..=64 {
        let g = Grid::new(n).unwrap();
        let (x, w) = (g.nodes(), g.weights());
        for j in 0..=n {
            assert!((x[j] + x[n - j]).abs() < 1e-14, "N={n} j={j}");
            assert!((w[j] - w[n - j]).abs() < 1e-14, "N={n} j={j}");
        }
        assert!(x.windows(2).all(|p| p[0] < p[1]));
    }
}

#[test]
fn interpolation_error_decays_spectrally() {
    let f = |x: f64| (2.0 * x).exp() * (3.0 * x).cos();
    let probes: Vec<f64> = (0..101).map(|i| -1.0 + 2.0 * i as f64 / 100.0).collect();
    let err = |n: usize| {
        let g = Grid::new(n).unwrap();
        let v: Vec<f64> = g.nodes().iter().map(|&x| f(x)).collect();
        probes.iter().map(|&x| (g.interpolate(&v, x).unwrap() - f(x)).abs()).fold(0.0, f64::max)
    };
    let (e4, e8, e16) = (err(4), err(8), err(16));
    assert!(e8 < 1e-2 * e4, "{e4:e} {e8:e}");
    assert!(e16 < 1e-6 * e8, "{e8:e} {e16:e}");
    assert!(e16 < 1e-10);
}

proptest! {
    #[test]
    fn quadrature_exact_to_degree_2n_minus_1(n in 1usize..40, seed in proptest::collection::vec(-1.0..1.0f64, 80)) {
        let g = Grid::new(n).unwrap();
        let coeffs = &seed[..2 * n];
        let v: Vec<f64> = g.nodes().iter().map(|&x| poly(coeffs, x)).collect();
        prop_assert!((g.integrate(&v) - poly_integral(coeffs)).abs() <= 1e-10);
    }

    #[test]
    fn differentiation_exact_to_degree_n(n in 1usize..40, seed in proptest::collection::vec(-1.0..1.0f64, 41)) {
        let g = Grid::new(n).unwrap();
        let coeffs = &seed[..=n];
        let v = nalgebra::DVector::from_iterator(n + 1, g.nodes().iter().map(|&x| poly(coeffs, x)));
        let dv = g.diff_matrix() * v;
        for (j, &x) in g.nodes().iter().enumerate() {
            prop_assert!((dv[j] - poly_derivative(coeffs, x)).abs() <= 1e-9, "N={} node {}", n, j);
        }
    }

    #[test]
    fn interpolant_reproduces_degree_n(n in 1usize..30, seed in proptest::collection::vec(-1.0..1.0f64, 31), tau in -1.0..1.0f64) {
        let g = Grid::new(n).unwrap();
        let coeffs = &seed[..=n];
        let v: Vec<f64> = g.nodes().iter().map(|&x| poly(coeffs, x)).collect();
        prop_assert!((g.interpolate(&v, tau).unwrap() - poly(coeffs, tau)).abs() <= 1e-10);
    }
}
