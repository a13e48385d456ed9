//! Dense f64 kernels behind the tape operations.
//!
//! All loops are sequential with a fixed summation order, so results are
//! bit-reproducible between runs on the same build.

/// out[i,j] += sum_p a[i,p] * b[p,j]; a is m×k, b is k×n, out is m×n.
pub fn mm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o += av * bv;
            }
        }
    }
}

/// out[i,j] += sum_p a[i,p] * b[j,p]; a is m×k, b is n×k (B transposed), out is m×n.
///
/// Materializes Bᵀ once so the inner loop is a vectorizable axpy instead of
/// a scalar reduction.
pub fn mm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    let mut bt = vec![0.0; k * n];
    for j in 0..n {
        for p in 0..k {
            bt[p * n + j] = b[j * k + p];
        }
    }
    mm_nn(a, &bt, m, k, n, out);
}

/// out[i,j] += sum_p a[p,i] * b[p,j]; a is k×m (A transposed), b is k×n, out is m×n.
pub fn mm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o += av * bv;
            }
        }
    }
}

/// In-place stabilized softmax over a contiguous lane.
pub fn softmax_lane(lane: &mut [f64]) {
    let max = lane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in lane.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in lane.iter_mut() {
        *v /= sum;
    }
}

/// log(sum_j exp(lane[j])) with max-subtraction.
pub fn logsumexp(lane: &[f64]) -> f64 {
    let max = lane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = lane.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b.iter()).map(|(&x, &y)| x * y).sum()
}

pub fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// d/dx of silu: sigma(x) * (1 + x * (1 - sigma(x))).
pub fn silu_derivative(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mm_nn_matches_hand_product() {
        // [[1,2],[3,4]] x [[0],[1]] = [[2],[4]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [0.0, 1.0];
        let mut out = [0.0; 2];
        mm_nn(&a, &b, 2, 2, 1, &mut out);
        assert_eq!(out, [2.0, 4.0]);
    }

    #[test]
    fn transposed_forms_agree_with_plain_form() {
        let a: Vec<f64> = (0..6).map(|i| i as f64 * 0.5 - 1.0).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect(); // 3x4

        let mut c = vec![0.0; 8];
        mm_nn(&a, &b, 2, 3, 4, &mut c);

        // b transposed to 4x3, then mm_nt should reproduce c.
        let mut bt = vec![0.0; 12];
        for r in 0..3 {
            for col in 0..4 {
                bt[col * 3 + r] = b[r * 4 + col];
            }
        }
        let mut c2 = vec![0.0; 8];
        mm_nt(&a, &bt, 2, 3, 4, &mut c2);
        for (x, y) in c.iter().zip(c2.iter()) {
            assert!((x - y).abs() < 1e-12);
        }

        // a transposed to 3x2, then mm_tn should reproduce c.
        let mut at = vec![0.0; 6];
        for r in 0..2 {
            for col in 0..3 {
                at[col * 2 + r] = a[r * 3 + col];
            }
        }
        let mut c3 = vec![0.0; 8];
        mm_tn(&at, &b, 2, 3, 4, &mut c3);
        for (x, y) in c.iter().zip(c3.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_lane_is_stable_for_large_inputs() {
        let mut lane = [1000.0, 0.0];
        softmax_lane(&mut lane);
        assert!(lane[0] > 1.0 - 1e-12);
        assert!(lane[1] < 1e-12);
        assert!((lane[0] + lane[1] - 1.0).abs() < 1e-12);
    }
}
