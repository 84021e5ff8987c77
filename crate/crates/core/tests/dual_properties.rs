//! Property tests for the ordered dual and the label functionals.

use bvm_core::dual::{eval_f, eval_g, eval_f_real, eval_g_real, DualEvent, OrderedDual};
use bvm_core::moment::eval_fk;
use bvm_core::Error;
use proptest::prelude::*;

fn event() -> impl Strategy<Value = (bool, usize, usize)> {
    (any::<bool>(), 0usize..8, 0usize..12)
}

proptest! {
    #[test]
    fn order_rules_keep_sites_distinct_and_sizes_consistent(
        root in 0usize..12,
        events in proptest::collection::vec(event(), 0..60),
    ) {
        let mut d = OrderedDual::new(root);
        for (birth, index, to) in events {
            let before = d.sites.clone();
            let ev = if birth { DualEvent::Birth { index, to } } else { DualEvent::Jump { index, to } };
            match d.apply_order_rules(ev) {
                Err(Error::StaleIndex { len, .. }) => {
                    prop_assert!(index >= len);
                    prop_assert_eq!(&d.sites, &before);
                    continue;
                }
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
                Ok(()) => {}
            }
            let mut sorted = d.sites.clone();
            sorted.sort_unstable();
            sorted.dedup();
            prop_assert_eq!(sorted.len(), d.sites.len());
            prop_assert!(d.sites.contains(&to));
            if birth {
                prop_assert!(d.sites.len() == before.len() || d.sites.len() == before.len() + 1);
                // the parent is still alive
                prop_assert!(d.sites.contains(&before[index]));
            } else {
                prop_assert!(d.sites.len() == before.len() || d.sites.len() + 1 == before.len());
            }
            // particles not involved keep their relative order
            let kept: Vec<usize> = before.iter().copied().filter(|s| *s != before[index] && *s != to).collect();
            let now: Vec<usize> = d.sites.iter().copied().filter(|s| *s != before[index] && *s != to).collect();
            prop_assert_eq!(kept, now);
        }
    }

    #[test]
    fn binary_functionals_telescope(
        sites in proptest::collection::btree_set(0usize..16, 1..8),
        xi in proptest::collection::vec(0u8..2, 16),
        eta_mask in proptest::collection::vec(any::<bool>(), 16),
    ) {
        let d = OrderedDual { sites: sites.into_iter().collect() };
        let eta: Vec<u8> = xi.iter().zip(&eta_mask).map(|(&x, &m)| x * u8::from(m)).collect();
        let f = eval_f(&d, &xi);
        let g = eval_g(&d, &xi, &eta);
        prop_assert!(f == 0.0 || f == 1.0);
        prop_assert!(g == 0.0 || g == 1.0);
        prop_assert!(f + g <= 1.0);
        // with every type-1 site labeled, F + G = 1 exactly
        prop_assert_eq!(f + eval_g(&d, &xi, &xi), 1.0);
    }

    #[test]
    fn real_functionals_stay_in_the_unit_interval(
        sites in proptest::collection::btree_set(0usize..10, 1..6),
        u in proptest::collection::vec(0.0f64..=1.0, 10),
        frac in proptest::collection::vec(0.0f64..=1.0, 10),
    ) {
        let d = OrderedDual { sites: sites.into_iter().collect() };
        let l: Vec<f64> = u.iter().zip(&frac).map(|(a, b)| a * b).collect();
        let f = eval_f_real(&d, |y| u[y]);
        let g = eval_g_real(&d, |y| u[y], |y| l[y]);
        prop_assert!((0.0..=1.0).contains(&f) && g >= 0.0 && f + g <= 1.0 + 1e-12);
        let full = eval_g_real(&d, |y| u[y], |y| u[y]);
        prop_assert!((f + full - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fk_is_monotone_and_telescopes(
        z in proptest::collection::vec(0.0f64..=1.0, 1..7),
        frac in proptest::collection::vec(0.0f64..=1.0, 7),
        bump in 0.0f64..0.5,
        k in 0usize..7,
    ) {
        let n = z.len();
        let k = k.min(n);
        let ell: Vec<f64> = z.iter().zip(&frac).map(|(zi, f)| (1.0 - zi) * f).collect();
        let base = eval_fk(&z, &ell, k).unwrap();
        let more: Vec<f64> = ell.iter().zip(&z).map(|(l, zi)| (l + bump).min(1.0 - zi)).collect();
        prop_assert!(eval_fk(&z, &more, k).unwrap() >= base - 1e-12);
        let higher_z: Vec<f64> = z.iter().map(|zi| (zi + bump).min(1.0)).collect();
        prop_assert!(eval_fk(&higher_z, &ell, k).unwrap() >= base - 1e-12);
        // fully labeled: F_1 = 1 - F_0
        let u: Vec<f64> = z.iter().map(|zi| 1.0 - zi).collect();
        let f0 = eval_fk(&z, &u, 0).unwrap();
        let f1 = eval_fk(&z, &u, 1).unwrap();
        prop_assert!((f0 + f1 - 1.0).abs() < 1e-12);
        prop_assert!(eval_fk(&z, &ell, n + 1).is_err());
    }
}

#[test]
fn single_label_functional_at_two_points() {
    // F_1 = ell(x_1) + ell(x_2) z(x_1)
    let v = eval_fk(&[0.3, 0.6], &[0.2, 0.1], 1).unwrap();
    assert!((v - (0.2 + 0.1 * 0.3)).abs() < 1e-15);
    assert_eq!(eval_fk(&[0.3, 0.6], &[0.0, 0.0], 1).unwrap(), 0.0);
    assert_eq!(eval_fk(&[1.0; 4], &[0.0; 4], 0).unwrap(), 1.0);
}
