//! Accuracy-independent diversity measures for populations of networks.
//!
//! Behavioural diversity compares the sets of test samples two networks get
//! wrong. Weight-space distances compare populations of flat vectors.

use ndarray::{Array2, ArrayView1};

use crate::par::{self, Execution};
use crate::{Error, Result};

/// Population mean and standard deviation (ddof 0). NaN for empty input.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Sorted indices of misclassified test samples.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WrongSet(Vec<usize>);

impl WrongSet {
    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn wrong_set(predictions: &[usize], labels: &[usize]) -> Result<WrongSet> {
    if predictions.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    Ok(WrongSet(
        predictions.iter().zip(labels).enumerate().filter(|(_, (p, y))| p != y).map(|(i, _)| i).collect(),
    ))
}

/// Intersection over union; 1 when both sets are empty, 0 when exactly one is.
pub fn iou(a: &WrongSet, b: &WrongSet) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.0.len() && j < b.0.len() {
        match a.0[i].cmp(&b.0[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    inter as f64 / (a.len() + b.len() - inter) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxIou {
    pub per_query: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// For every query, the largest IoU against the references. With
/// `exclude_self`, query `i` is not compared with reference `i` (the two
/// lists are the same population).
pub fn max_iou(queries: &[WrongSet], references: &[WrongSet], exclude_self: bool) -> Result<MaxIou> {
    let needed = if exclude_self { 2 } else { 1 };
    if references.len() < needed {
        return Err(Error::Argument(format!(
            "max-IoU needs at least {needed} reference networks, got {}",
            references.len()
        )));
    }
    let per_query: Vec<f64> = queries
        .iter()
        .enumerate()
        .map(|(i, q)| {
            references
                .iter()
                .enumerate()
                .filter(|(j, _)| !(exclude_self && *j == i))
                .map(|(_, r)| iou(q, r))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let (mean, std) = mean_std(&per_query);
    Ok(MaxIou { per_query, mean, std })
}

/// Exact 1-D Wasserstein-1 distance between two empirical distributions:
/// the integral of `|F_a^{-1}(u) - F_b^{-1}(u)|` over `u` in `[0, 1]`.
/// For equal sizes this is the mean absolute difference of sorted samples.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut u = 0.0;
    let mut total = 0.0;
    while i < na && j < nb {
        // next breakpoint of either quantile function
        let ua = (i + 1) as f64 / na as f64;
        let ub = (j + 1) as f64 / nb as f64;
        let next = ua.min(ub);
        total += (next - u) * (a[i] - b[j]).abs();
        u = next;
        if ua <= next {
            i += 1;
        }
        if ub <= next {
            j += 1;
        }
    }
    total
}

/// Jensen-Shannon distance (square root of the base-2 divergence) between
/// 100-bin histograms over the pooled range.
pub fn jensen_shannon(a: &[f64], b: &[f64]) -> f64 {
    const BINS: usize = 100;
    let lo = a.iter().chain(b).cloned().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).cloned().fold(f64::NEG_INFINITY, f64::max);
    let hist = |xs: &[f64]| {
        let mut h = vec![0.0; BINS];
        for &x in xs {
            let bin = if hi > lo {
                (((x - lo) / (hi - lo)) * BINS as f64).floor().min((BINS - 1) as f64) as usize
            } else {
                0
            };
            h[bin] += 1.0;
        }
        let n = xs.len() as f64;
        h.iter_mut().for_each(|v| *v /= n);
        h
    };
    let (p, q) = (hist(a), hist(b));
    let kl = |x: &[f64], m: &[f64]| -> f64 {
        x.iter().zip(m).filter(|(xi, _)| **xi > 0.0).map(|(xi, mi)| xi * (xi / mi).log2()).sum()
    };
    let m: Vec<f64> = p.iter().zip(&q).map(|(x, y)| 0.5 * (x + y)).collect();
    (0.5 * kl(&p, &m) + 0.5 * kl(&q, &m)).max(0.0).sqrt()
}

fn l2(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let denom = a.dot(&a).sqrt() * b.dot(&b).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        a.dot(&b) / denom
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Distances {
    pub wasserstein: f64,
    pub jensen_shannon: f64,
    pub cosine: f64,
    pub l2: f64,
    pub nn_mean: f64,
    pub nn_std: f64,
}

impl Distances {
    pub fn to_key_values(&self) -> String {
        format!(
            "wasserstein={}\njensen_shannon={}\ncosine={}\nl2={}\nnn_mean={}\nnn_std={}\n",
            self.wasserstein, self.jensen_shannon, self.cosine, self.l2, self.nn_mean, self.nn_std
        )
    }
}

/// Weight-space distances between populations `a` and `b` (one vector per
/// row). When `a` and `b` are the same population the nearest-neighbour
/// search skips each row's own index.
pub fn distribution_distances(exec: Execution, a: &Array2<f64>, b: &Array2<f64>) -> Result<Distances> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::Argument("distance sets must be nonempty".into()));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::Argument(format!("dimension mismatch: {} vs {}", a.ncols(), b.ncols())));
    }
    let same = a == b;
    if same && a.nrows() < 2 {
        return Err(Error::Argument("self nearest-neighbour distance needs two vectors".into()));
    }
    let pooled_a: Vec<f64> = a.iter().cloned().collect();
    let pooled_b: Vec<f64> = b.iter().cloned().collect();
    let rows = par::map_indexed(exec, a.nrows(), |i| {
        let mut cos = 0.0;
        let mut dist = 0.0;
        let mut nn = f64::INFINITY;
        for j in 0..b.nrows() {
            let d = l2(a.row(i), b.row(j));
            cos += cosine(a.row(i), b.row(j));
            dist += d;
            if !(same && i == j) {
                nn = nn.min(d);
            }
        }
        (cos, dist, nn)
    });
    let pairs = (a.nrows() * b.nrows()) as f64;
    let nn: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let (nn_mean, nn_std) = mean_std(&nn);
    Ok(Distances {
        wasserstein: wasserstein_1d(&pooled_a, &pooled_b),
        jensen_shannon: jensen_shannon(&pooled_a, &pooled_b),
        cosine: rows.iter().map(|r| r.0).sum::<f64>() / pairs,
        l2: rows.iter().map(|r| r.1).sum::<f64>() / pairs,
        nn_mean,
        nn_std,
    })
}

/// Smallest L2 distance between two distinct rows.
pub fn min_pairwise_l2(x: &Array2<f64>) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..x.nrows() {
        for j in i + 1..x.nrows() {
            best = best.min(l2(x.row(i), x.row(j)));
        }
    }
    best
}
