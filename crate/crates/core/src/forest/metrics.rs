use crate::Matrix;

/// `counts[true][pred]`.
pub fn confusion_matrix(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; n_classes]; n_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        m[t][p] += 1;
    }
    m
}

/// F1 of every class, `None` for classes absent from both truth and prediction.
/// Empty precision or recall denominators count as 0.
pub fn per_class_f1(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Vec<Option<f64>> {
    let m = confusion_matrix(y_true, y_pred, n_classes);
    (0..n_classes)
        .map(|c| {
            let tp = m[c][c] as f64;
            let actual: usize = m[c].iter().sum();
            let predicted: usize = m.iter().map(|r| r[c]).sum();
            if actual == 0 && predicted == 0 {
                return None;
            }
            let precision = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
            let recall = if actual > 0 { tp / actual as f64 } else { 0.0 };
            Some(if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            })
        })
        .collect()
}

/// Unweighted mean F1 over the classes that occur in truth or prediction.
pub fn macro_f1(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> f64 {
    let f1: Vec<f64> = per_class_f1(y_true, y_pred, n_classes).into_iter().flatten().collect();
    if f1.is_empty() {
        0.0
    } else {
        f1.iter().sum::<f64>() / f1.len() as f64
    }
}

/// Divides each row by its sum; all-zero rows stay zero.
pub fn row_normalize(counts: &[Vec<usize>]) -> Matrix {
    let k = counts.len();
    let mut out = Matrix::zeros(k, k);
    for (i, row) in counts.iter().enumerate() {
        let s: usize = row.iter().sum();
        if s > 0 {
            for (j, &c) in row.iter().enumerate() {
                out[(i, j)] = c as f64 / s as f64;
            }
        }
    }
    out
}
