use crate::error::{Error, Result};

/// Probability floor used by [`cross_entropy`].
pub const PROB_FLOOR: f64 = 1e-12;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Max-subtracted softmax, in place.
pub fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Empty("softmax logits"));
    }
    let mut v = logits.to_vec();
    softmax_in_place(&mut v);
    Ok(v)
}

/// `dlogits = p ⊙ (dp − ⟨p, dp⟩)`
pub fn softmax_backward(p: &[f64], dp: &[f64], dlogits: &mut [f64]) {
    let dot: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
    for ((o, &pi), &di) in dlogits.iter_mut().zip(p).zip(dp) {
        *o = pi * (di - dot);
    }
}

/// `−ln max(p[true], 1e-12)`
pub fn cross_entropy(probs: &[f64], true_index: usize) -> Result<f64> {
    let p = probs.get(true_index).ok_or(Error::IndexOutOfRange {
        index: true_index,
        len: probs.len(),
    })?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Gradient of `cross_entropy(softmax(logits), k)` w.r.t. the logits.
/// Zero when the floor is active, matching the clamped loss.
pub fn cross_entropy_logit_grad(probs: &[f64], true_index: usize, out: &mut [f64]) {
    if probs[true_index] < PROB_FLOOR {
        out.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    for (i, (o, &p)) in out.iter_mut().zip(probs).enumerate() {
        *o = if i == true_index { p - 1.0 } else { p };
    }
}

/// `−w·y·ln σ(x) − (1−y)·ln(1−σ(x))`, in softplus form.
pub fn weighted_bce(logit: f64, label: bool, pos_weight: f64) -> f64 {
    if label {
        pos_weight * softplus(-logit)
    } else {
        softplus(logit)
    }
}

pub fn weighted_bce_grad(logit: f64, label: bool, pos_weight: f64) -> f64 {
    if label {
        pos_weight * (sigmoid(logit) - 1.0)
    } else {
        sigmoid(logit)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    #[test]
    fn uniform_softmax() {
        let p = softmax(&[3.0; 7]).unwrap();
        for v in p {
            assert!((v - 1.0 / 7.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_is_stable() {
        let p = softmax(&[0.0, 1000.0]).unwrap();
        assert!(p[0] < 1e-300 && (p[1] - 1.0).abs() < 1e-15);
        assert!(softmax(&[]).is_err());
    }

    #[test]
    fn cross_entropy_cases() {
        assert_eq!(cross_entropy(&[0.0, 1.0, 0.0], 1).unwrap(), 0.0);
        let n = 5;
        let u = vec![1.0 / n as f64; n];
        assert!((cross_entropy(&u, 3).unwrap() - (n as f64).ln()).abs() < 1e-12);
        assert!((cross_entropy(&[1.0, 0.0], 1).unwrap() + PROB_FLOOR.ln()).abs() < 1e-9);
        assert!(matches!(cross_entropy(&u, 5), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn bce_cases() {
        assert!((weighted_bce(0.0, true, 4.0) - 4.0 * LN_2).abs() < 1e-15);
        assert!((weighted_bce(0.0, false, 4.0) - LN_2).abs() < 1e-15);
        assert!(weighted_bce(800.0, true, 4.0) < 1e-300);
        assert!((weighted_bce(800.0, false, 4.0) - 800.0).abs() < 1e-12);
    }

    #[test]
    fn ce_logit_gradient_matches_central_differences() {
        let logits = [0.3, -1.2, 2.0, 0.7, -0.4];
        let h = 1e-6;
        for k in 0..logits.len() {
            let p = softmax(&logits).unwrap();
            let mut g = vec![0.0; logits.len()];
            cross_entropy_logit_grad(&p, k, &mut g);
            for i in 0..logits.len() {
                let mut a = logits;
                a[i] += h;
                let mut b = logits;
                b[i] -= h;
                let fd = (cross_entropy(&softmax(&a).unwrap(), k).unwrap()
                    - cross_entropy(&softmax(&b).unwrap(), k).unwrap())
                    / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-6 * fd.abs().max(g[i].abs()) + 1e-10, "{fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn softmax_backward_matches_central_differences() {
        let logits = [0.5, -0.5, 1.5];
        let w = [2.0, -1.0, 0.5];
        let f = |l: &[f64]| softmax(l).unwrap().iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let p = softmax(&logits).unwrap();
        let mut g = [0.0; 3];
        softmax_backward(&p, &w, &mut g);
        for i in 0..3 {
            let mut a = logits;
            a[i] += 1e-6;
            let mut b = logits;
            b[i] -= 1e-6;
            let fd = (f(&a) - f(&b)) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn softmax_shift_invariant(v in proptest::collection::vec(-50.0f64..50.0, 1..12), c in -100.0f64..100.0) {
            let p = softmax(&v).unwrap();
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let q = softmax(&shifted).unwrap();
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&x| x > 0.0));
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn bce_gradient_matches_central_differences(x in -8.0f64..8.0, y: bool) {
            let h = 1e-6;
            let fd = (weighted_bce(x + h, y, 4.0) - weighted_bce(x - h, y, 4.0)) / (2.0 * h);
            let an = weighted_bce_grad(x, y, 4.0);
            prop_assert!((fd - an).abs() <= 1e-6 * fd.abs().max(an.abs()) + 1e-9);
        }
    }
}
