use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vhb_core::forest::{bootstrap_sample, cross_validate, train_forest, ForestParams, Node, Tree};
use vhb_core::Matrix;

fn dataset(seed: u64, n: usize, d: usize, k: usize) -> (Matrix, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for _ in 0..n {
        let c = rng.random_range(0..k);
        let row: Vec<f64> = (0..d)
            .map(|j| {
                if j < 2 {
                    c as f64 + rng.random_range(-1.0..1.0)
                } else {
                    rng.random::<f64>()
                }
            })
            .collect();
        rows.push(row);
        y.push(c);
    }
    (Matrix::from_rows(&rows), y)
}

fn labels(k: usize) -> Vec<String> {
    (1..=k).map(|i| format!("C{i}")).collect()
}

fn names(d: usize) -> Vec<String> {
    (0..d).map(|i| format!("f{i}")).collect()
}

/// Plain recursive CART: exhaustive midpoint enumeration with scores
/// recomputed from scratch, first-best in (feature, threshold) order.
fn cart(x: &Matrix, y: &[usize], k: usize, rows: Vec<usize>, nodes: &mut Vec<Node>) -> usize {
    let me = nodes.len();
    let mut counts = vec![0u32; k];
    for &r in &rows {
        counts[y[r]] += 1;
    }
    let vote = (0..k).fold(0, |b, c| if counts[c] > counts[b] { c } else { b });
    let leaf = Node::Leaf {
        counts: counts.clone(),
        vote,
        cover: 0.0,
    };
    if rows.iter().all(|&r| y[r] == y[rows[0]]) || rows.len() < 2 {
        nodes.push(leaf);
        return me;
    }
    let gini = |side: &[usize]| -> f64 {
        let mut c = vec![0u64; k];
        for &r in side {
            c[y[r]] += 1;
        }
        let n = side.len() as u64;
        if n == 0 {
            0.0
        } else {
            n as f64 - c.iter().map(|v| v * v).sum::<u64>() as f64 / n as f64
        }
    };
    let mut best: Option<(usize, f64, f64)> = None;
    for f in 0..x.cols() {
        let mut vals: Vec<f64> = rows.iter().map(|&r| x[(r, f)]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let mid = w[0] + (w[1] - w[0]) / 2.0;
            let t = if mid < w[1] { mid } else { w[0] };
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[(i, f)] <= t);
            let s = gini(&l) + gini(&r);
            if best.is_none_or(|b| s < b.2) {
                best = Some((f, t, s));
            }
        }
    }
    let Some((feature, threshold, _)) = best else {
        nodes.push(leaf);
        return me;
    };
    nodes.push(leaf);
    let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[(i, feature)] <= threshold);
    let left = cart(x, y, k, l, nodes);
    let right = cart(x, y, k, r, nodes);
    nodes[me] = Node::Split {
        feature,
        threshold,
        left,
        right,
        cover: 0.0,
    };
    me
}

#[test]
fn single_tree_equals_plain_cart_on_same_bootstrap() {
    for seed in 0..5 {
        let (x, y) = dataset(seed, 120, 4, 3);
        let mut p = ForestParams::new(seed + 100);
        p.n_trees = 1;
        p.n_features_per_split = Some(4);
        let f = train_forest(&x, &y, &labels(3), &names(4), &p).unwrap();
        let (sample, _) = bootstrap_sample(&p, &y, 3, 0);
        let mut nodes = Vec::new();
        cart(&x, &y, 3, sample, &mut nodes);
        let mut oracle = Tree { nodes };
        oracle.set_covers(&x);
        assert_eq!(f.trees[0], oracle, "seed {seed}");
    }
}

#[test]
fn deterministic_and_normalized() {
    let (x, y) = dataset(1, 200, 6, 4);
    let mut p = ForestParams::new(42);
    p.n_trees = 50;
    let a = train_forest(&x, &y, &labels(4), &names(6), &p).unwrap();
    let b = train_forest(&x, &y, &labels(4), &names(6), &p).unwrap();
    assert_eq!(a, b);
    let proba = a.predict_proba_matrix(&x).unwrap();
    for i in 0..x.rows() {
        let s: f64 = proba.row(i).iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(proba.row(i).iter().all(|&v| v >= 0.0));
    }
    let cv1 = cross_validate(&x, &y, &labels(4), &names(6), &p, 5).unwrap();
    let cv2 = cross_validate(&x, &y, &labels(4), &names(6), &p, 5).unwrap();
    assert_eq!(cv1, cv2);
    for r in 0..4 {
        let s: f64 = cv1.confusion.row(r).iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
    }
    assert!(cv1.fold_f1.iter().all(|f| (0.0..=1.0).contains(f)));
}

#[test]
fn column_permutation_leaves_predictions_unchanged() {
    let (x, y) = dataset(2, 150, 5, 3);
    let mut p = ForestParams::new(8);
    p.n_trees = 30;
    let f = train_forest(&x, &y, &labels(3), &names(5), &p).unwrap();
    let perm = [3, 0, 4, 1, 2];
    let xp = x.select_columns(&perm);
    let fp = f.permute_features(&perm);
    assert_eq!(
        f.predict_proba_matrix(&x).unwrap(),
        fp.predict_proba_matrix(&xp).unwrap()
    );

    // Retraining on the permuted columns (names travel with them) grows
    // the same trees up to the relabeling, at the default subset size.
    let names_p: Vec<String> = perm.iter().map(|&i| format!("f{i}")).collect();
    let retrained = train_forest(&xp, &y, &labels(3), &names_p, &p).unwrap();
    assert_eq!(retrained.trees, fp.trees);
    assert_eq!(
        f.predict_proba_matrix(&x).unwrap(),
        retrained.predict_proba_matrix(&xp).unwrap()
    );
}

#[test]
fn duplicating_a_row_does_not_lower_its_own_probability() {
    let (x, y) = dataset(4, 80, 3, 3);
    let target = 0;
    let mut up = 0;
    let mut down = 0;
    for seed in 0..20 {
        let mut p = ForestParams::new(seed);
        p.n_trees = 60;
        let base = train_forest(&x, &y, &labels(3), &names(3), &p).unwrap();
        let mut rows: Vec<Vec<f64>> = (0..x.rows()).map(|i| x.row(i).to_vec()).collect();
        let mut yy = y.clone();
        for _ in 0..5 {
            rows.push(x.row(target).to_vec());
            yy.push(y[target]);
        }
        let dup = train_forest(&Matrix::from_rows(&rows), &yy, &labels(3), &names(3), &p).unwrap();
        let before = base.predict_proba(x.row(target)).unwrap()[y[target]];
        let after = dup.predict_proba(x.row(target)).unwrap()[y[target]];
        if after > before {
            up += 1;
        } else if after < before {
            down += 1;
        }
    }
    assert!(up >= down, "up {up} down {down}");
}
