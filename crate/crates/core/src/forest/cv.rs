use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use super::{macro_f1, row_normalize, train_forest, ForestError, ForestParams};
use crate::rng::{derive_seed, stream_rng};
use crate::Matrix;

/// Macro F1 and (truth, prediction) pairs of one fold.
type FoldResult = Result<(f64, Vec<(usize, usize)>), ForestError>;

const FOLD_STREAM: u64 = 0x666f_6c64;

/// Outcome of stratified k-fold cross validation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CvReport {
    pub fold_f1: Vec<f64>,
    pub mean_f1: f64,
    /// Sample standard deviation across folds.
    pub sd_f1: f64,
    /// Pooled `counts[true][pred]` over all held-out rows.
    pub confusion_counts: Vec<Vec<usize>>,
    /// Row-normalized pooled confusion matrix; the diagonal is per-class recall.
    pub confusion: Matrix,
    pub warnings: Vec<String>,
}

/// Assigns every row to a fold, stratified by class: each class's rows are
/// shuffled and dealt round-robin, continuing where the previous class stopped.
pub fn stratified_folds(y: &[usize], n_classes: usize, n_folds: usize, seed: u64) -> Vec<usize> {
    let mut fold_of = vec![0; y.len()];
    let mut rng = stream_rng(seed, &[FOLD_STREAM]);
    let mut next = 0;
    for c in 0..n_classes {
        let mut members: Vec<usize> = (0..y.len()).filter(|&i| y[i] == c).collect();
        members.shuffle(&mut rng);
        for i in members {
            fold_of[i] = next;
            next = (next + 1) % n_folds;
        }
    }
    fold_of
}

/// Stratified k-fold cross validation with macro F1 per fold.
pub fn cross_validate(
    x: &Matrix,
    y: &[usize],
    classes: &[String],
    feature_names: &[String],
    params: &ForestParams,
    n_folds: usize,
) -> Result<CvReport, ForestError> {
    if n_folds < 2 {
        return Err(ForestError::TooFewFolds(n_folds));
    }
    let k = classes.len();
    let mut warnings = Vec::new();
    for (c, name) in classes.iter().enumerate() {
        let n = y.iter().filter(|&&l| l == c).count();
        if n > 0 && n < n_folds {
            warnings.push(format!(
                "class {name} has {n} members, fewer than {n_folds} folds; stratification degrades"
            ));
        }
    }
    let fold_of = stratified_folds(y, k, n_folds, params.seed);
    let results: Vec<FoldResult> = (0..n_folds)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = (0..y.len()).filter(|&i| fold_of[i] != f).collect();
            let test: Vec<usize> = (0..y.len()).filter(|&i| fold_of[i] == f).collect();
            let mut fold_params = params.clone();
            fold_params.seed = derive_seed(params.seed, &[FOLD_STREAM, f as u64]);
            let y_train: Vec<usize> = train.iter().map(|&i| y[i]).collect();
            let forest = train_forest(&x.select_rows(&train), &y_train, classes, feature_names, &fold_params)?;
            let x_test = x.select_rows(&test);
            let pred = forest.predict_matrix(&x_test)?;
            let truth: Vec<usize> = test.iter().map(|&i| y[i]).collect();
            Ok((macro_f1(&truth, &pred, k), truth.into_iter().zip(pred).collect()))
        })
        .collect();
    let mut fold_f1 = Vec::with_capacity(n_folds);
    let mut counts = vec![vec![0; k]; k];
    for r in results {
        let (f1, pairs) = r?;
        fold_f1.push(f1);
        for (t, p) in pairs {
            counts[t][p] += 1;
        }
    }
    let mean = fold_f1.iter().sum::<f64>() / n_folds as f64;
    let var = fold_f1.iter().map(|f| (f - mean) * (f - mean)).sum::<f64>() / (n_folds - 1) as f64;
    Ok(CvReport {
        mean_f1: mean,
        sd_f1: var.sqrt(),
        fold_f1,
        confusion: row_normalize(&counts),
        confusion_counts: counts,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_are_stratified() {
        let y: Vec<usize> = (0..50).map(|i| usize::from(i >= 20)).collect();
        let folds = stratified_folds(&y, 2, 5, 1);
        for f in 0..5 {
            let zeros = (0..50).filter(|&i| folds[i] == f && y[i] == 0).count();
            let ones = (0..50).filter(|&i| folds[i] == f && y[i] == 1).count();
            assert_eq!((zeros, ones), (4, 6));
        }
    }

    #[test]
    fn separable_data_scores_perfectly() {
        let rows: Vec<[f64; 2]> = (0..60).map(|i| [(i % 3) as f64 + 0.01 * i as f64, 0.0]).collect();
        let y: Vec<usize> = (0..60).map(|i| i % 3).collect();
        let classes: Vec<String> = vec!["C1".into(), "C2".into(), "C3".into()];
        let names: Vec<String> = vec!["a".into(), "b".into()];
        let mut p = ForestParams::new(4);
        p.n_trees = 15;
        let rep = cross_validate(&Matrix::from_rows(&rows), &y, &classes, &names, &p, 5).unwrap();
        assert!(rep.fold_f1.iter().all(|&f| f == 1.0), "{:?}", rep.fold_f1);
        for i in 0..3 {
            assert_eq!(rep.confusion[(i, i)], 1.0);
        }
        assert!(cross_validate(&Matrix::from_rows(&rows), &y, &classes, &names, &p, 1).is_err());
    }
}
