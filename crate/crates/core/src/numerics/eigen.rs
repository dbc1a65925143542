use crate::Matrix;

/// Eigen-decomposition of a real symmetric matrix.
#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    /// Sorted nonincreasing.
    pub values: Vec<f64>,
    /// Column `j` is the eigenvector of `values[j]`, with its
    /// largest-magnitude entry made positive.
    pub vectors: Matrix,
}

/// Cyclic Jacobi rotations until the off-diagonal norm falls below
/// `tol` times the Frobenius norm.
pub fn symmetric_eigen(a: &Matrix, tol: f64) -> SymmetricEigen {
    let n = a.rows();
    assert_eq!(n, a.cols(), "matrix must be square");
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    let frob: f64 = m.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
    let threshold = tol * frob.max(f64::MIN_POSITIVE);

    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= threshold {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq.abs() < f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = v.select_columns(&order);
    for j in 0..n {
        let mut lead = 0;
        for i in 1..n {
            if vectors[(i, j)].abs() > vectors[(lead, j)].abs() {
                lead = i;
            }
        }
        if vectors[(lead, j)] < 0.0 {
            for i in 0..n {
                vectors[(i, j)] = -vectors[(i, j)];
            }
        }
    }
    SymmetricEigen { values, vectors }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reconstructs_symmetric_matrix() {
        let a = Matrix::from_rows(&[[4.0, 1.0, 2.0], [1.0, 3.0, 0.5], [2.0, 0.5, 5.0]]);
        let e = symmetric_eigen(&a, 1e-14);
        let mut lambda = Matrix::zeros(3, 3);
        for i in 0..3 {
            lambda[(i, i)] = e.values[i];
        }
        let back = e.vectors.matmul(&lambda).matmul(&e.vectors.transpose());
        for i in 0..3 {
            for j in 0..3 {
                assert!((back[(i, j)] - a[(i, j)]).abs() < 1e-12);
            }
        }
        assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
        let trace: f64 = e.values.iter().sum();
        assert!((trace - 12.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_input_is_already_solved() {
        let a = Matrix::from_rows(&[[1.0, 0.0], [0.0, 3.0]]);
        let e = symmetric_eigen(&a, 1e-12);
        assert_eq!(e.values, vec![3.0, 1.0]);
        assert_eq!(e.vectors, Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]));
    }
}
