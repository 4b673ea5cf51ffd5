//! Randomized invariants: expression printing, interval enclosures,
//! derivatives, the Lyapunov solver and network bounds.

use proptest::prelude::*;

use roa_core::expr::{default_var_names, parse, Expr};
use roa_core::interval::{Interval, IntervalBox};
use roa_core::learner::MlpNet;
use roa_core::linalg::{lyapunov_residual, lyapunov_solve, Matrix};
use roa_core::neuralverify::{net_gradient_interval, net_interval};

const NVARS: usize = 3;

fn leaf() -> impl Strategy<Value = Expr> {
    prop_oneof![
        (0..NVARS).prop_map(Expr::var),
        (-4i32..=4).prop_map(|k| Expr::constant(k as f64 * 0.5)),
        (-1000.0f64..1000.0).prop_map(|v| Expr::constant((v * 1e3).round() / 1e6)),
    ]
}

/// Expressions without domain restrictions, so every evaluation succeeds.
/// `kinks` adds the non-differentiable `abs` and `min`.
fn expr_with(kinks: bool) -> impl Strategy<Value = Expr> {
    leaf().prop_recursive(4, 24, 2, move |inner| {
        let smooth = prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a.add(&b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a.sub(&b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a.mul(&b)),
            (inner.clone(), 0u32..4).prop_map(|(a, n)| a.powi(n)),
            inner.clone().prop_map(|a| a.neg()),
            inner.clone().prop_map(|a| a.sin()),
            inner.clone().prop_map(|a| a.cos()),
            inner.clone().prop_map(|a| a.tanh()),
            inner.clone().prop_map(|a| a.tanh().exp()),
        ];
        if kinks {
            prop_oneof![
                8 => smooth,
                1 => inner.clone().prop_map(|a| a.abs()),
                1 => (inner.clone(), inner).prop_map(|(a, b)| a.min(&b)),
            ]
            .boxed()
        } else {
            smooth.boxed()
        }
    })
}

fn expr() -> impl Strategy<Value = Expr> {
    expr_with(true)
}

fn small_box() -> impl Strategy<Value = IntervalBox> {
    prop::collection::vec((-2.0f64..2.0, 0.0f64..1.5), NVARS).prop_map(|v| {
        IntervalBox::new(v.into_iter().map(|(lo, w)| Interval::new(lo, lo + w)).collect())
    })
}

fn point_in(b: &IntervalBox, t: &[f64]) -> Vec<f64> {
    b.0.iter().zip(t).map(|(i, s)| i.lo + s * (i.hi - i.lo)).collect()
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn printed_expressions_parse_back(e in expr(), x in prop::collection::vec(-2.0f64..2.0, NVARS)) {
        let names = default_var_names(NVARS);
        let text = e.display(&names).to_string();
        let back = parse(&text, &names).unwrap();
        prop_assert_eq!(back.display(&names).to_string(), text.clone());
        let (u, v) = (e.eval(&x).unwrap(), back.eval(&x).unwrap());
        prop_assert!(close(u, v, 1e-12), "{text}: {u} vs {v}");
    }

    #[test]
    fn interval_evaluation_encloses_samples(
        e in expr(),
        b in small_box(),
        ts in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, NVARS), 20),
    ) {
        let enc = e.eval_interval(&b).unwrap();
        for t in &ts {
            let x = point_in(&b, t);
            let v = e.eval(&x).unwrap();
            prop_assert!(enc.contains(v), "{v} escapes {enc:?}");
        }
    }

    #[test]
    fn interval_evaluation_is_inclusion_monotone(e in expr(), b in small_box(), d in 0..NVARS) {
        let whole = e.eval_interval(&b).unwrap();
        let (l, r) = b.bisect(d);
        for half in [l, r] {
            let part = e.eval_interval(&half).unwrap();
            prop_assert!(part.is_subset_of(&whole), "{part:?} not in {whole:?}");
        }
    }

    #[test]
    fn symbolic_derivative_matches_central_difference(
        e in expr_with(false),
        x in prop::collection::vec(-1.5f64..1.5, NVARS),
        v in 0..NVARS,
    ) {
        let d = e.differentiate(v).unwrap();
        let h = 1e-5;
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp[v] += h;
        xm[v] -= h;
        let fd = (e.eval(&xp).unwrap() - e.eval(&xm).unwrap()) / (2.0 * h);
        let exact = d.eval(&x).unwrap();
        prop_assert!(close(exact, fd, 1e-6), "d/dx{}: {exact} vs {fd}", v + 1);
    }

    #[test]
    fn lyapunov_solution_has_small_residual(n in 1usize..7, entries in prop::collection::vec(-3.0f64..3.0, 36)) {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| entries[i * n..(i + 1) * n].to_vec()).collect();
        let m = Matrix::from_rows(&rows).unwrap();
        let a = m.sub(&Matrix::identity(n).scale(m.frobenius_norm() + 1.0));
        let q = Matrix::identity(n);
        let p = lyapunov_solve(&a, &q).unwrap();
        prop_assert!(p.is_positive_definite());
        prop_assert!(lyapunov_residual(&a, &q, &p) < 1e-10 * q.frobenius_norm());
    }

    #[test]
    fn network_bounds_enclose_samples(
        seed in 0u64..1000,
        b in prop::collection::vec((-3.0f64..3.0, 0.0f64..2.0), 2),
        ts in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 20),
    ) {
        let net = MlpNet::with_hidden(2, 2, 8, seed).unwrap();
        let bx = IntervalBox::new(b.iter().map(|(lo, w)| Interval::new(*lo, lo + w)).collect());
        let enc = net_interval(&net, &bx).unwrap();
        let grad = net_gradient_interval(&net, &bx).unwrap();
        for (s, t) in &ts {
            let x = point_in(&bx, &[*s, *t]);
            prop_assert!(enc.contains(net.forward(&x)));
            let g = net.input_gradient(&x);
            for (gi, ei) in g.iter().zip(&grad) {
                prop_assert!(ei.contains(*gi), "{gi} escapes {ei:?}");
            }
        }
    }
}
