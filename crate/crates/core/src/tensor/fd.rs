//! Central finite differences, the independent oracle every analytic
//! gradient in this crate is checked against. Kept free of tape types on
//! purpose: it only ever sees a closure from tensor to scalar.

use super::{Element, Tensor};

/// Central-difference gradient of f at x, one coordinate at a time:
/// df/dx_i ≈ (f(x + h·e_i) - f(x - h·e_i)) / 2h. The difference quotient is
/// formed in f64 regardless of E so the oracle itself adds no rounding
/// noise beyond f's own evaluation.
pub fn finite_diff_grad<E: Element>(
    f: impl Fn(&Tensor<E>) -> E,
    x: &Tensor<E>,
    h: f64,
) -> Tensor<E> {
    let coords: Vec<usize> = (0..x.len()).collect();
    finite_diff_at(f, x, &coords, h)
}

/// Same quotient, restricted to the given flat coordinates. Entries off the
/// list are zero. Used where a full sweep is out of budget (whole-model
/// checks sample coordinates per parameter).
pub fn finite_diff_at<E: Element>(
    f: impl Fn(&Tensor<E>) -> E,
    x: &Tensor<E>,
    coords: &[usize],
    h: f64,
) -> Tensor<E> {
    let mut grad = vec![E::zero(); x.len()];
    let mut probe = x.clone();
    for &i in coords {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + E::from_f64(h);
        let up = f(&probe).to_f64();
        probe.data_mut()[i] = orig - E::from_f64(h);
        let down = f(&probe).to_f64();
        probe.data_mut()[i] = orig;
        grad[i] = E::from_f64((up - down) / (2.0 * h));
    }
    Tensor::new(x.shape().to_vec(), grad).expect("grad matches x shape")
}

/// Relative agreement check with an absolute floor: |a - b| must not exceed
/// tol · max(1, |a|, |b|) at any coordinate. Returns the worst offender as
/// (index, analytic, numeric) for diagnostics, or None when all pass.
pub fn worst_mismatch<E: Element>(
    analytic: &[E],
    numeric: &[E],
    tol: f64,
) -> Option<(usize, f64, f64)> {
    let mut worst: Option<(usize, f64, f64, f64)> = None;
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let (a, n) = (a.to_f64(), n.to_f64());
        let scale = 1.0f64.max(a.abs()).max(n.abs());
        let err = (a - n).abs() / scale;
        if err > tol && worst.is_none_or(|(_, _, _, w)| err > w) {
            worst = Some((i, a, n, err));
        }
    }
    worst.map(|(i, a, n, _)| (i, a, n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_matches_polynomial_gradient() {
        // f = sum(x^3): df/dx_i = 3 x_i^2
        let f = |t: &Tensor<f64>| t.data().iter().map(|v| v * v * v).sum::<f64>();
        let x = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let g = finite_diff_grad(f, &x, 1e-5);
        let expect = [0.75, 3.0, 12.0];
        for (a, b) in g.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn worst_mismatch_flags_disagreement() {
        assert!(worst_mismatch(&[1.0f64, 2.0], &[1.0, 2.0], 1e-9).is_none());
        let bad = worst_mismatch(&[1.0f64, 2.0], &[1.0, 2.5], 1e-3);
        assert_eq!(bad.map(|(i, _, _)| i), Some(1));
    }
}
