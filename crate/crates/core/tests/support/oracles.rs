//! Independent reference implementations used by the integration and
//! acceptance tests. Everything here favors obviousness over speed.
#![allow(dead_code)]

use rand::Rng;
use vhb_core::forest::{Node, Tree};

/// Sum of squared deviations from the mean, two-pass.
pub fn ssd(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m) * (x - m)).sum()
}

/// Exhaustive optimal k-class partition of sorted values into contiguous
/// runs. Returns (within-class SSD, cut values = first value of each upper class).
pub fn brute_jenks(sorted: &[f64], k: usize) -> (f64, Vec<f64>) {
    let mut best = (f64::INFINITY, Vec::new());
    let mut cuts = Vec::with_capacity(k - 1);
    fn go(sorted: &[f64], k: usize, start: usize, cuts: &mut Vec<usize>, best: &mut (f64, Vec<f64>)) {
        let n = sorted.len();
        if cuts.len() == k - 1 {
            let mut bounds = vec![0];
            bounds.extend(cuts.iter().copied());
            bounds.push(n);
            // Cuts between equal values are not valid class boundaries.
            if cuts.iter().any(|&c| sorted[c - 1] == sorted[c]) {
                return;
            }
            let total: f64 = bounds.windows(2).map(|w| ssd(&sorted[w[0]..w[1]])).sum();
            if total < best.0 {
                *best = (total, cuts.iter().map(|&c| sorted[c]).collect());
            }
            return;
        }
        for c in start..n {
            cuts.push(c);
            go(sorted, k, c + 1, cuts, best);
            cuts.pop();
        }
    }
    if k == 1 {
        return (ssd(sorted), Vec::new());
    }
    go(sorted, k, 1, &mut cuts, &mut best);
    best
}

/// Conditional expectation of a tree's output for `class` given that only
/// the features in `known` are observed: unknown splits average their
/// children weighted by cover.
pub fn cond_expectation(tree: &Tree, node: usize, x: &[f64], known: u32, class: usize) -> f64 {
    match &tree.nodes[node] {
        Node::Leaf { vote, .. } => f64::from(u8::from(*vote == class)),
        Node::Split {
            feature,
            threshold,
            left,
            right,
            cover,
        } => {
            if known & (1 << feature) != 0 {
                let next = if x[*feature] <= *threshold { *left } else { *right };
                cond_expectation(tree, next, x, known, class)
            } else {
                let cl = tree.nodes[*left].cover();
                let cr = tree.nodes[*right].cover();
                (cl * cond_expectation(tree, *left, x, known, class)
                    + cr * cond_expectation(tree, *right, x, known, class))
                    / cover
            }
        }
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// Shapley values by enumerating every feature subset.
pub fn brute_shapley(tree: &Tree, x: &[f64], n_features: usize, class: usize) -> Vec<f64> {
    let d = n_features;
    let mut phi = vec![0.0; d];
    for (i, p) in phi.iter_mut().enumerate() {
        for s in 0u32..(1 << d) {
            if s & (1 << i) != 0 {
                continue;
            }
            let size = s.count_ones() as usize;
            let w = factorial(size) * factorial(d - size - 1) / factorial(d);
            *p += w * (cond_expectation(tree, 0, x, s | (1 << i), class) - cond_expectation(tree, 0, x, s, class));
        }
    }
    phi
}

/// A random tree of depth at most `max_depth` over `d` features in [0, 1),
/// with consistent integer covers and random one-hot leaves over `k` classes.
pub fn random_tree<R: Rng>(rng: &mut R, max_depth: usize, d: usize, k: usize) -> Tree {
    fn build<R: Rng>(rng: &mut R, depth: usize, max_depth: usize, d: usize, k: usize, nodes: &mut Vec<Node>) -> usize {
        let me = nodes.len();
        if depth == max_depth || (depth > 0 && rng.random_bool(0.25)) {
            let vote = rng.random_range(0..k);
            let mut counts = vec![0; k];
            counts[vote] = 1;
            nodes.push(Node::Leaf {
                counts,
                vote,
                cover: f64::from(rng.random_range(1..20u32)),
            });
            return me;
        }
        nodes.push(Node::Leaf {
            counts: vec![],
            vote: 0,
            cover: 0.0,
        });
        let feature = rng.random_range(0..d);
        let threshold = rng.random_range(0.1..0.9);
        let left = build(rng, depth + 1, max_depth, d, k, nodes);
        let right = build(rng, depth + 1, max_depth, d, k, nodes);
        let cover = nodes[left].cover() + nodes[right].cover();
        nodes[me] = Node::Split {
            feature,
            threshold,
            left,
            right,
            cover,
        };
        me
    }
    let mut nodes = Vec::new();
    build(rng, 0, max_depth, d, k, &mut nodes);
    Tree { nodes }
}

/// Pearson correlation, two-pass with population moments.
pub fn two_pass_pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Corpus drawn from `n_topics` planted topics, each owning `vocab /
/// n_topics` words with Zipf-like weights. Most documents draw from one
/// topic; the rest mix in a second. Returns the documents and each planted
/// topic's top-5 words.
pub fn planted_corpus<R: Rng>(
    rng: &mut R,
    n_docs: usize,
    vocab: usize,
    n_topics: usize,
) -> (Vec<Vec<String>>, Vec<Vec<String>>) {
    let per = vocab / n_topics;
    let word = |t: usize, j: usize| format!("t{t}w{j:03}");
    let weights: Vec<f64> = (0..per).map(|j| 1.0 / (j as f64 + 2.0)).collect();
    let total: f64 = weights.iter().sum();
    let draw = |rng: &mut R, t: usize| {
        let mut u = rng.random::<f64>() * total;
        for (j, w) in weights.iter().enumerate() {
            if u < *w {
                return word(t, j);
            }
            u -= w;
        }
        word(t, per - 1)
    };
    let docs = (0..n_docs)
        .map(|_| {
            let main = rng.random_range(0..n_topics);
            let other = if rng.random_bool(0.2) {
                Some((main + rng.random_range(1..n_topics)) % n_topics)
            } else {
                None
            };
            let len = rng.random_range(20..40);
            (0..len)
                .map(|_| match other {
                    Some(o) if rng.random_bool(0.3) => draw(rng, o),
                    _ => draw(rng, main),
                })
                .collect()
        })
        .collect();
    let tops = (0..n_topics).map(|t| (0..5).map(|j| word(t, j)).collect()).collect();
    (docs, tops)
}

/// Best one-to-one matching of recovered to planted word lists by overlap,
/// by trying every permutation. Returns the per-planted-topic overlaps.
pub fn best_overlap(recovered: &[Vec<String>], planted: &[Vec<String>]) -> Vec<usize> {
    let k = planted.len();
    let overlap = |r: &Vec<String>, p: &Vec<String>| r.iter().filter(|w| p.contains(w)).count();
    let mut perm: Vec<usize> = (0..recovered.len()).collect();
    let mut best: (usize, Vec<usize>) = (0, vec![0; k]);
    fn permute(perm: &mut Vec<usize>, i: usize, f: &mut dyn FnMut(&[usize])) {
        if i == perm.len() {
            f(perm);
            return;
        }
        for j in i..perm.len() {
            perm.swap(i, j);
            permute(perm, i + 1, f);
            perm.swap(i, j);
        }
    }
    permute(&mut perm, 0, &mut |p| {
        let per: Vec<usize> = (0..k).map(|t| overlap(&recovered[p[t]], &planted[t])).collect();
        let s: usize = per.iter().sum();
        if s > best.0 {
            best = (s, per);
        }
    });
    best.1
}

/// Two columns whose sample Pearson correlation is exactly `r` up to
/// rounding: a random direction and an orthogonalized partner.
pub fn correlated_pair<R: Rng>(rng: &mut R, n: usize, r: f64) -> (Vec<f64>, Vec<f64>) {
    let center = |v: &mut Vec<f64>| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter_mut().for_each(|x| *x -= m);
    };
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut u: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    center(&mut u);
    center(&mut v);
    let nu = norm(&u);
    u.iter_mut().for_each(|x| *x /= nu);
    let proj: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
    v.iter_mut().zip(&u).for_each(|(b, a)| *b -= proj * a);
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let s = (1.0 - r * r).sqrt();
    let y = u.iter().zip(&v).map(|(a, b)| r * a + s * b).collect();
    (u, y)
}
