//! One-sided Jacobi SVD for small square matrices, row-major `f64`.

const MAX_SWEEPS: usize = 80;

/// `A = U diag(sigma) V^T` for a `d x d` matrix. Singular values are not sorted. Columns of
/// `U` belonging to (numerically) zero singular values are completed to an orthonormal basis;
/// the returned flags mark them.
pub struct Svd {
    pub u: Vec<f64>,
    pub sigma: Vec<f64>,
    pub v: Vec<f64>,
    pub completed: Vec<bool>,
}

pub fn jacobi_svd(a: &[f64], d: usize) -> Svd {
    assert_eq!(a.len(), d * d);
    // columns stored contiguously so rotations touch two slices
    let mut cols: Vec<Vec<f64>> = (0..d).map(|j| (0..d).map(|i| a[i * d + j]).collect()).collect();
    let mut vcols: Vec<Vec<f64>> = (0..d)
        .map(|j| (0..d).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..d {
            for q in p + 1..d {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut vcols, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let sigma: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    let smax = sigma.iter().cloned().fold(0.0, f64::max);
    let tol = smax * 1e-12 * d as f64;
    let mut completed = vec![false; d];
    let mut ucols: Vec<Option<Vec<f64>>> = cols
        .iter()
        .zip(&sigma)
        .map(|(c, &s)| (s > tol && s > 0.0).then(|| c.iter().map(|x| x / s).collect()))
        .collect();
    for j in 0..d {
        if ucols[j].is_none() {
            let basis: Vec<Vec<f64>> = ucols.iter().flatten().cloned().collect();
            ucols[j] = Some(complete(&basis, d));
            completed[j] = true;
        }
    }
    let mut u = vec![0.0; d * d];
    let mut v = vec![0.0; d * d];
    for j in 0..d {
        let uc = ucols[j].as_ref().expect("completed");
        for i in 0..d {
            u[i * d + j] = uc[i];
            v[i * d + j] = vcols[j][i];
        }
    }
    Svd { u, sigma, v, completed }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    for (x, y) in left[p].iter_mut().zip(right[0].iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// A unit vector orthogonal to every vector in `basis` (assumed orthonormal).
fn complete(basis: &[Vec<f64>], d: usize) -> Vec<f64> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for k in 0..d {
        let mut e = vec![0.0; d];
        e[k] = 1.0;
        for _ in 0..2 {
            for b in basis {
                let proj = dot(&e, b);
                e.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
            }
        }
        let n = dot(&e, &e).sqrt();
        if best.as_ref().map_or(true, |(bn, _)| n > *bn + 1e-12) {
            best = Some((n, e));
        }
    }
    let (n, e) = best.expect("d > 0");
    e.into_iter().map(|x| x / n).collect()
}

/// Determinant by partial-pivot LU.
pub fn determinant(a: &[f64], d: usize) -> f64 {
    let mut m = a.to_vec();
    let mut det = 1.0;
    for k in 0..d {
        let piv = (k..d)
            .max_by(|&i, &j| m[i * d + k].abs().total_cmp(&m[j * d + k].abs()))
            .expect("non-empty");
        if m[piv * d + k] == 0.0 {
            return 0.0;
        }
        if piv != k {
            for j in 0..d {
                m.swap(k * d + j, piv * d + j);
            }
            det = -det;
        }
        let p = m[k * d + k];
        det *= p;
        for i in k + 1..d {
            let f = m[i * d + k] / p;
            for j in k..d {
                m[i * d + j] -= f * m[k * d + j];
            }
        }
    }
    det
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn reconstruct(s: &Svd, d: usize) -> Vec<f64> {
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = (0..d).map(|k| s.u[i * d + k] * s.sigma[k] * s.v[j * d + k]).sum();
            }
        }
        out
    }

    fn orth_err(m: &[f64], d: usize) -> f64 {
        let mut e = 0.0;
        for i in 0..d {
            for j in 0..d {
                let g: f64 = (0..d).map(|k| m[k * d + i] * m[k * d + j]).sum();
                e += (g - if i == j { 1.0 } else { 0.0 }).powi(2);
            }
        }
        e.sqrt()
    }

    #[test]
    fn reconstructs_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for d in [1, 2, 5, 17] {
            let a: Vec<f64> = (0..d * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let s = jacobi_svd(&a, d);
            let r = reconstruct(&s, d);
            let err: f64 = a.iter().zip(&r).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            assert!(err < 1e-12, "d={d} err={err}");
            assert!(orth_err(&s.u, d) < 1e-12 && orth_err(&s.v, d) < 1e-12);
        }
    }

    #[test]
    fn completes_rank_deficient_factors() {
        // rank one: outer product
        let d = 4;
        let x = [1.0, 2.0, 0.0, -1.0];
        let y = [0.5, 0.0, 1.0, 1.0];
        let a: Vec<f64> = (0..d * d).map(|k| x[k / d] * y[k % d]).collect();
        let s = jacobi_svd(&a, d);
        assert_eq!(s.completed.iter().filter(|c| **c).count(), 3);
        assert!(orth_err(&s.u, d) < 1e-12);
        let r = reconstruct(&s, d);
        assert!(a.iter().zip(&r).all(|(p, q)| (p - q).abs() < 1e-12));
    }

    #[test]
    fn determinant_matches_cofactor_expansion() {
        let a = [2.0, -1.0, 0.0, 1.0, 3.0, 2.0, 0.0, 5.0, -4.0];
        let cof = 2.0 * (3.0 * -4.0 - 2.0 * 5.0) - (-1.0) * (1.0 * -4.0 - 0.0) + 0.0;
        assert!((determinant(&a, 3) - cof).abs() < 1e-12);
        assert_eq!(determinant(&[0.0, 1.0, 1.0, 0.0], 2), -1.0);
    }
}
