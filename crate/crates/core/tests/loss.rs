use proptest::prelude::*;
use sscxr_core::pretrain::{masked_l1_grad, masked_l1_loss, LossReduction};

fn case() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-2.0f64..2.0, n),
            prop::collection::vec(-2.0f64..2.0, n),
            prop::collection::vec(prop::bool::ANY.prop_map(|b| if b { 1.0 } else { 0.0 }), n),
        )
    })
}

proptest! {
    #[test]
    fn sum_is_count_times_mean((x, y, m) in case()) {
        let s = masked_l1_loss(&x, &y, &m, LossReduction::Sum).unwrap();
        let mean = masked_l1_loss(&x, &y, &m, LossReduction::MeanMasked).unwrap();
        let k = m.iter().filter(|&&v| v == 1.0).count() as f64;
        prop_assert!((s - mean * k).abs() <= 1e-9 * (1.0 + s));
        prop_assert!(s >= 0.0);
    }

    #[test]
    fn unmasked_pixels_do_not_matter((x, y, m) in case(), shift in -5.0f64..5.0) {
        let y2: Vec<f64> = y.iter().zip(&m).map(|(&v, &mm)| if mm == 0.0 { v + shift } else { v }).collect();
        for r in [LossReduction::Sum, LossReduction::MeanMasked] {
            prop_assert_eq!(masked_l1_loss(&x, &y, &m, r).unwrap(), masked_l1_loss(&x, &y2, &m, r).unwrap());
            let g = masked_l1_grad(&x, &y2, &m, r).unwrap();
            prop_assert!(g.iter().zip(&m).all(|(&gv, &mm)| mm == 1.0 || gv == 0.0));
        }
    }

    #[test]
    fn perfect_reconstruction_costs_nothing((x, _y, m) in case()) {
        prop_assert_eq!(masked_l1_loss(&x, &x, &m, LossReduction::Sum).unwrap(), 0.0);
    }

    #[test]
    fn gradient_matches_central_differences((x, y, m) in case()) {
        for r in [LossReduction::Sum, LossReduction::MeanMasked] {
            let g = masked_l1_grad(&x, &y, &m, r).unwrap();
            for i in 0..y.len() {
                // stay away from the kink of |.|
                if (x[i] - y[i]).abs() < 1e-3 {
                    continue;
                }
                let h = 1e-6;
                let mut yp = y.clone();
                let mut ym = y.clone();
                yp[i] += h;
                ym[i] -= h;
                let fd = (masked_l1_loss(&x, &yp, &m, r).unwrap() - masked_l1_loss(&x, &ym, &m, r).unwrap()) / (2.0 * h);
                prop_assert!((fd - g[i]).abs() <= 1e-6, "{} vs {}", fd, g[i]);
            }
        }
    }
}

#[test]
fn empty_mask_gives_zero_mean() {
    let x = [0.5, 0.2];
    let y = [0.1, 0.9];
    assert_eq!(masked_l1_loss(&x, &y, &[0.0, 0.0], LossReduction::MeanMasked).unwrap(), 0.0);
}

#[test]
fn shape_and_mask_errors() {
    assert!(masked_l1_loss(&[1.0], &[1.0, 2.0], &[1.0], LossReduction::Sum).is_err());
    assert!(masked_l1_loss(&[1.0], &[2.0], &[0.5], LossReduction::Sum).is_err());
}
