use crate::real::Real;
use crate::rng::RngStream;

/// `rows x cols` row-major matrix with orthonormal rows (rows <= cols) or
/// orthonormal columns (rows > cols), scaled by `gain`. Built by modified
/// Gram-Schmidt QR of a standard-normal draw with the sign of `diag(R)`
/// folded into `Q`.
pub(crate) fn orthogonal<T: Real>(rows: usize, cols: usize, gain: f64, rng: &mut RngStream) -> Vec<T> {
    let (tall, short) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    // `short` vectors of length `tall`, each a column of the tall matrix.
    let mut vecs: Vec<Vec<f64>> = (0..short)
        .map(|_| (0..tall).map(|_| rng.normal::<f64>()).collect())
        .collect();
    for j in 0..short {
        for k in 0..j {
            let (done, rest) = vecs.split_at_mut(j);
            let proj: f64 = done[k].iter().zip(&rest[0]).map(|(a, b)| a * b).sum();
            rest[0].iter_mut().zip(&done[k]).for_each(|(v, q)| *v -= proj * q);
        }
        let norm = vecs[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        // diag(R) > 0 after normalisation, so no sign flip is needed here.
        let inv = if norm > 0.0 { 1.0 / norm } else { 0.0 };
        vecs[j].iter_mut().for_each(|v| *v *= inv);
    }
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let v = if rows >= cols { vecs[c][r] } else { vecs[r][c] };
            out[r * cols + c] = T::lit(gain * v);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gram(m: &[f64], rows: usize, cols: usize, by_rows: bool) -> Vec<f64> {
        let n = if by_rows { rows } else { cols };
        let get = |i: usize, k: usize| if by_rows { m[i * cols + k] } else { m[k * cols + i] };
        let len = if by_rows { cols } else { rows };
        let mut g = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                g[i * n + j] = (0..len).map(|k| get(i, k) * get(j, k)).sum();
            }
        }
        g
    }

    #[test]
    fn orthonormal_in_both_orientations() {
        let mut rng = RngStream::new(11);
        for &(rows, cols, by_rows) in &[(4, 7, true), (7, 4, false), (5, 5, true)] {
            let m: Vec<f64> = orthogonal(rows, cols, 1.0, &mut rng);
            let g = gram(&m, rows, cols, by_rows);
            let n = if by_rows { rows } else { cols };
            for i in 0..n {
                for j in 0..n {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((g[i * n + j] - expect).abs() < 1e-12);
                }
            }
        }
    }
}
