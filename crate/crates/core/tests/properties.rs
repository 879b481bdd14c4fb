use nalgebra::DMatrix;
use proptest::prelude::*;

use switchopt_core::analysis::bregman_xlogx;
use switchopt_core::chain::{stationary, Generator};
use switchopt_core::expr::Expr;
use switchopt_core::graph::{lambda2, symmetric_eigenvalues, Graph};

fn template(c: [f64; 4]) -> String {
    format!(
        "{}*x1^2*x2 + exp({}*x1 - 0.5*x2) + ln(1 + x2^2) * {} + x1/(2 + x2^2) - {}*x1*x2^3",
        c[0], c[1], c[2], c[3]
    )
}

fn fd(e: &Expr, x: &[f64], k: usize) -> f64 {
    let h = 1e-4 * x[k].abs().max(1.0);
    let at = |d: f64| {
        let mut y = x.to_vec();
        y[k] += d;
        e.eval(&y).unwrap()
    };
    // fourth-order central stencil
    (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h)
}

fn connected(nodes: usize, edges: &[(usize, usize)]) -> bool {
    let mut seen = vec![false; nodes];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        for &(a, b) in edges {
            for (p, q) in [(a, b), (b, a)] {
                if p == v && !seen[q] {
                    seen[q] = true;
                    stack.push(q);
                }
            }
        }
    }
    seen.into_iter().all(|s| s)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn gradient_agrees_with_finite_differences(
        c in prop::array::uniform4(-2.0f64..2.0),
        x in prop::array::uniform2(-1.5f64..1.5),
    ) {
        let e = Expr::parse(&template(c), 2).unwrap();
        let g = e.grad(&x).unwrap();
        for k in 0..2 {
            let approx = fd(&e, &x, k);
            prop_assert!((g[k] - approx).abs() <= 1e-6 * g[k].abs().max(1.0), "k={k} ad={} fd={approx}", g[k]);
        }
    }

    #[test]
    fn gradient_is_linear(
        c in prop::array::uniform4(-2.0f64..2.0),
        d in prop::array::uniform4(-2.0f64..2.0),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        x in prop::array::uniform2(-1.5f64..1.5),
    ) {
        let e = Expr::parse(&template(c), 2).unwrap();
        let f = Expr::parse(&template(d), 2).unwrap();
        let combined = e.combine(a, &f, b).grad(&x).unwrap();
        let (ge, gf) = (e.grad(&x).unwrap(), f.grad(&x).unwrap());
        for k in 0..2 {
            let expected = a * ge[k] + b * gf[k];
            prop_assert!((combined[k] - expected).abs() <= 1e-12 * expected.abs().max(1.0));
        }
    }

    #[test]
    fn laplacian_invariants(nodes in 2usize..8, mask in any::<u32>()) {
        let mut edges = Vec::new();
        let mut bit = 0;
        for a in 0..nodes {
            for b in a + 1..nodes {
                if mask >> (bit % 32) & 1 == 1 {
                    edges.push((a, b));
                }
                bit += 1;
            }
        }
        let g = Graph::new(nodes, edges.clone()).unwrap();
        let l = g.laplacian();
        prop_assert_eq!(&l, &l.transpose());
        for i in 0..nodes {
            prop_assert!(l.row(i).sum().abs() <= 1e-12);
        }
        let eig = symmetric_eigenvalues(&l).unwrap();
        prop_assert!(eig.iter().all(|&v| v >= -1e-10));
        let l2 = lambda2(&l).unwrap();
        prop_assert_eq!(l2 > 1e-9, connected(nodes, &edges));
    }

    #[test]
    fn stationary_distribution_invariants(
        modes in 2usize..7,
        rates in prop::collection::vec(0.05f64..4.0, 36),
    ) {
        let mut q = DMatrix::from_fn(modes, modes, |i, j| if i == j { 0.0 } else { rates[i * 6 + j] });
        for i in 0..modes {
            let s = q.row(i).sum();
            q[(i, i)] = -s;
        }
        let generator = Generator::new(q.clone()).unwrap();
        let pi = stationary(&generator).unwrap();
        let p = pi.as_slice();
        prop_assert!(p.iter().all(|&v| v > 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-14);
        let v = DMatrix::from_row_slice(1, modes, p) * &q;
        prop_assert!(v.amax() <= 1e-12 * q.amax().max(1.0));
    }

    #[test]
    fn bregman_is_nonnegative(a in 1e-6f64..1e3, b in 1e-6f64..1e3) {
        prop_assert!(bregman_xlogx(a, b) >= -1e-12 * a.max(b));
    }
}

#[test]
fn bregman_reference_value() {
    // 2 ln 2 - 1
    assert!((bregman_xlogx(2.0, 1.0) - 0.386_294_361_119_890_6).abs() < 1e-12);
    assert_eq!(bregman_xlogx(1.5, 1.5), 0.0);
}

#[test]
fn bregman_nonnegative_on_grid() {
    let mut min = f64::INFINITY;
    for i in 0..100 {
        for j in 0..100 {
            let a = 10f64.powf(-4.0 + 7.0 * i as f64 / 99.0);
            let b = 10f64.powf(-4.0 + 7.0 * j as f64 / 99.0);
            min = min.min(bregman_xlogx(a, b) / a.max(b));
        }
    }
    assert!(min >= -1e-12, "min scaled divergence {min}");
}
