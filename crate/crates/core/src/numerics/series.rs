//! Truncated power series over a generic numeric field.
//!
//! A series is stored as its coefficient vector `[a_0, a_1, ..., a_N]`.

use num_traits::Num;

/// Product of two series truncated at degree `order`.
pub fn mul<T: Num + Clone>(a: &[T], b: &[T], order: usize) -> Vec<T> {
    let mut out = vec![T::zero(); order + 1];
    for (i, ai) in a.iter().enumerate().take(order + 1) {
        if ai.is_zero() {
            continue;
        }
        for (j, bj) in b.iter().enumerate().take(order + 1 - i) {
            out[i + j] = out[i + j].clone() + ai.clone() * bj.clone();
        }
    }
    out
}

/// Multiplicative inverse of a series with nonzero constant term.
pub fn recip<T: Num + Clone>(a: &[T], order: usize) -> Vec<T> {
    let a0 = a[0].clone();
    let mut out = vec![T::zero(); order + 1];
    out[0] = T::one() / a0.clone();
    for k in 1..=order {
        let mut s = T::zero();
        for j in 1..=k.min(a.len() - 1) {
            s = s + a[j].clone() * out[k - j].clone();
        }
        out[k] = T::zero() - s / a0.clone();
    }
    out
}

/// Coefficients of `w(x) = x / T(C(x))` up to degree `order`, where
/// `C(x) = Σ_{j≥1} c[j-1] x^j` and `T(z) = (αz+1)(z+1)`.
pub fn argument_series<T: Num + Clone>(c: &[T], alpha: &T, order: usize) -> Vec<T> {
    let mut cs = vec![T::zero(); order + 1];
    for (j, cj) in c.iter().enumerate() {
        if j + 1 <= order {
            cs[j + 1] = cj.clone();
        }
    }
    let c2 = mul(&cs, &cs, order);
    let one_plus_alpha = T::one() + alpha.clone();
    let tc: Vec<T> = (0..=order)
        .map(|k| {
            let base = if k == 0 { T::one() } else { T::zero() };
            base + one_plus_alpha.clone() * cs[k].clone() + alpha.clone() * c2[k].clone()
        })
        .collect();
    let inv = recip(&tc, order);
    let mut w = vec![T::zero(); order + 1];
    for k in 1..=order {
        w[k] = inv[k - 1].clone();
    }
    w
}

/// Powers `w^1, ..., w^order`, each truncated at degree `order`.
pub fn powers<T: Num + Clone>(w: &[T], order: usize) -> Vec<Vec<T>> {
    let mut out: Vec<Vec<T>> = Vec::with_capacity(order);
    let mut cur = w.to_vec();
    cur.truncate(order + 1);
    for _ in 0..order {
        let next = mul(&cur, w, order);
        out.push(cur);
        cur = next;
    }
    out
}
