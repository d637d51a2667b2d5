//! Two-cluster k-means over patch vectors and foreground identification.
//!
//! The smaller cluster is treated as foreground (lesion patches are scarce).
//! Soft foreground probabilities come from a temperature softmax over the
//! negated centroid distances and drive the masking order.

use std::cmp::Ordering;

use crate::error::{invalid, shape_err, Error, Result};
use crate::numerics::{softmax_slice, Rng, Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterModel<T: Scalar = f64> {
    /// `2 × d`.
    pub centroids: Tensor<T>,
    pub iterations_run: usize,
    pub converged: bool,
    /// Within-cluster sum of squares of the final centroids.
    pub objective: T,
    /// Objective of each Lloyd assignment step, in order.
    pub objective_history: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterAssignment<T: Scalar = f64> {
    /// 1 = foreground, 0 = background.
    pub hard_label: Vec<u8>,
    pub dist_fg: Vec<T>,
    pub dist_bg: Vec<T>,
    pub p_fg: Vec<T>,
    pub foreground_cluster: usize,
}

impl<T: Scalar> ClusterAssignment<T> {
    /// Fallback used when clustering is degenerate: every patch is background.
    pub fn all_background(n: usize) -> Self {
        Self {
            hard_label: vec![0; n],
            dist_fg: vec![T::zero(); n],
            dist_bg: vec![T::zero(); n],
            p_fg: vec![T::zero(); n],
            foreground_cluster: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.hard_label.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hard_label.is_empty()
    }

    pub fn foreground_count(&self) -> usize {
        self.hard_label.iter().filter(|&&l| l == 1).count()
    }
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
}

fn nearest<T: Scalar>(v: &[T], centroids: &Tensor<T>) -> (usize, T) {
    let d0 = sq_dist(v, centroids.row(0));
    let d1 = sq_dist(v, centroids.row(1));
    if d1 < d0 {
        (1, d1)
    } else {
        (0, d0)
    }
}

/// Within-cluster sum of squares under nearest-centroid assignment.
pub fn objective<T: Scalar>(vectors: &Tensor<T>, centroids: &Tensor<T>) -> T {
    (0..vectors.rows()).map(|i| nearest(vectors.row(i), centroids).1).sum()
}

fn check_input<T: Scalar>(vectors: &Tensor<T>) -> Result<(usize, usize)> {
    let (n, d) = vectors.dims2()?;
    if n < 2 {
        return Err(invalid(format!("k-means needs at least 2 vectors, got {n}")));
    }
    let first = vectors.row(0);
    if (1..n).all(|i| vectors.row(i) == first) {
        return Err(Error::Degenerate("all vectors are identical".into()));
    }
    Ok((n, d))
}

fn plusplus_seed<T: Scalar>(vectors: &Tensor<T>, rng: &mut Rng) -> Result<Tensor<T>> {
    let (n, d) = vectors.dims2()?;
    let first = rng.below(n)?;
    let weights: Vec<f64> = (0..n).map(|i| sq_dist(vectors.row(i), vectors.row(first)).as_f64()).collect();
    let total: f64 = weights.iter().sum();
    let mut target = rng.uniform(0.0, total)?;
    let mut second = n - 1;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 && target < w {
            second = i;
            break;
        }
        target -= w;
    }
    // float residue can walk past the end; fall back to the last point with positive weight
    if weights[second] == 0.0 {
        second = weights.iter().rposition(|&w| w > 0.0).expect("two distinct vectors exist");
    }
    let mut data = Vec::with_capacity(2 * d);
    data.extend_from_slice(vectors.row(first));
    data.extend_from_slice(vectors.row(second));
    Tensor::matrix(2, d, data)
}

/// Lloyd iterations from a k-means++ seeding.
///
/// Stops once the largest centroid move drops below `tol` or after `max_iter`
/// iterations. An emptied cluster is re-seeded at the point farthest from the
/// surviving centroid.
pub fn kmeans_fit<T: Scalar>(vectors: &Tensor<T>, rng: &mut Rng, max_iter: usize, tol: T) -> Result<ClusterModel<T>> {
    check_input(vectors)?;
    let centroids = plusplus_seed(vectors, rng)?;
    lloyd(vectors, centroids, max_iter, tol)
}

/// Centroids of the two halves of a split through the mean, perpendicular to
/// the leading principal direction. `None` when one half is empty.
fn principal_seed<T: Scalar>(vectors: &Tensor<T>) -> Result<Option<Tensor<T>>> {
    let (n, d) = vectors.dims2()?;
    let inv_n = 1.0 / n as f64;
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, &x) in mean.iter_mut().zip(vectors.row(i)) {
            *m += x.as_f64() * inv_n;
        }
    }
    let centered: Vec<Vec<f64>> =
        (0..n).map(|i| vectors.row(i).iter().zip(&mean).map(|(&x, m)| x.as_f64() - m).collect()).collect();
    // power iteration on the scatter matrix, started from the widest point
    let mut dir = centered
        .iter()
        .max_by(|a, b| {
            let na: f64 = a.iter().map(|x| x * x).sum();
            let nb: f64 = b.iter().map(|x| x * x).sum();
            na.partial_cmp(&nb).unwrap_or(Ordering::Equal)
        })
        .expect("n >= 2")
        .clone();
    for _ in 0..200 {
        let mut next = vec![0.0; d];
        for c in &centered {
            let proj: f64 = c.iter().zip(&dir).map(|(a, b)| a * b).sum();
            for (v, &x) in next.iter_mut().zip(c) {
                *v += proj * x;
            }
        }
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        dir = next.into_iter().map(|x| x / norm).collect();
    }
    let mut sums = vec![T::zero(); 2 * d];
    let mut counts = [0usize; 2];
    for (i, c) in centered.iter().enumerate() {
        let side = usize::from(c.iter().zip(&dir).map(|(a, b)| a * b).sum::<f64>() > 0.0);
        counts[side] += 1;
        for (s, &x) in sums[side * d..(side + 1) * d].iter_mut().zip(vectors.row(i)) {
            *s += x;
        }
    }
    if counts.contains(&0) {
        return Ok(None);
    }
    for c in 0..2 {
        let inv = T::one() / T::of(counts[c] as f64);
        for s in &mut sums[c * d..(c + 1) * d] {
            *s *= inv;
        }
    }
    Ok(Some(Tensor::matrix(2, d, sums)?))
}

fn lloyd<T: Scalar>(vectors: &Tensor<T>, mut centroids: Tensor<T>, max_iter: usize, tol: T) -> Result<ClusterModel<T>> {
    let (n, d) = vectors.dims2()?;
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations_run = 0;
    let mut labels = vec![0usize; n];

    while iterations_run < max_iter {
        iterations_run += 1;
        let mut obj = T::zero();
        for (i, label) in labels.iter_mut().enumerate() {
            let (c, dist) = nearest(vectors.row(i), &centroids);
            *label = c;
            obj += dist;
        }
        history.push(obj);

        let mut sums = vec![T::zero(); 2 * d];
        let mut counts = [0usize; 2];
        for (i, &c) in labels.iter().enumerate() {
            counts[c] += 1;
            for (s, &x) in sums[c * d..(c + 1) * d].iter_mut().zip(vectors.row(i)) {
                *s += x;
            }
        }
        let mut next = Tensor::zeros(&[2, d]);
        for c in 0..2 {
            if counts[c] > 0 {
                let inv = T::one() / T::of(counts[c] as f64);
                for (dst, &s) in next.row_mut(c).iter_mut().zip(&sums[c * d..(c + 1) * d]) {
                    *dst = s * inv;
                }
            }
        }
        if let Some(empty) = (0..2).find(|&c| counts[c] == 0) {
            let survivor = 1 - empty;
            let far = (0..n)
                .max_by(|&a, &b| {
                    let da = sq_dist(vectors.row(a), next.row(survivor));
                    let db = sq_dist(vectors.row(b), next.row(survivor));
                    da.partial_cmp(&db).unwrap_or(Ordering::Equal).then(b.cmp(&a))
                })
                .expect("n >= 2");
            next.row_mut(empty).copy_from_slice(vectors.row(far));
        }

        let shift = (0..2)
            .map(|c| sq_dist(centroids.row(c), next.row(c)).sqrt())
            .fold(T::zero(), |m, s| m.max(s));
        centroids = next;
        if shift < tol {
            converged = true;
            break;
        }
    }

    let centroids = hartigan_refine(vectors, centroids);
    let objective = objective(vectors, &centroids);
    if history.last().is_none_or(|&last| objective < last) {
        history.push(objective);
    }
    Ok(ClusterModel { centroids, iterations_run, converged, objective, objective_history: history })
}

/// Single-point transfers that lower the within-cluster sum of squares,
/// repeated until none is left. Lloyd fixed points are not always stable
/// under such moves.
fn hartigan_refine<T: Scalar>(vectors: &Tensor<T>, centroids: Tensor<T>) -> Tensor<T> {
    let (n, d) = (vectors.rows(), centroids.cols());
    let mut labels: Vec<usize> = (0..n).map(|i| nearest(vectors.row(i), &centroids).0).collect();
    let mut counts = [0usize; 2];
    let mut sums = vec![T::zero(); 2 * d];
    for (i, &c) in labels.iter().enumerate() {
        counts[c] += 1;
        for (s, &x) in sums[c * d..(c + 1) * d].iter_mut().zip(vectors.row(i)) {
            *s += x;
        }
    }
    if counts.contains(&0) {
        return centroids;
    }
    let mean = |sums: &[T], counts: &[usize; 2], c: usize| -> Vec<T> {
        let inv = T::one() / T::of(counts[c] as f64);
        sums[c * d..(c + 1) * d].iter().map(|&s| s * inv).collect()
    };
    // bounded so float ties cannot cycle
    for _ in 0..n * n {
        let mut moved = false;
        for i in 0..n {
            let from = labels[i];
            let to = 1 - from;
            if counts[from] < 2 {
                continue;
            }
            let (nf, nt) = (T::of(counts[from] as f64), T::of(counts[to] as f64));
            let loss = sq_dist(vectors.row(i), &mean(&sums, &counts, from)) * nf / (nf - T::one());
            let gain = sq_dist(vectors.row(i), &mean(&sums, &counts, to)) * nt / (nt + T::one());
            if gain < loss * T::of(1.0 - 1e-12) {
                labels[i] = to;
                counts[from] -= 1;
                counts[to] += 1;
                for (k, &x) in vectors.row(i).iter().enumerate() {
                    sums[from * d + k] -= x;
                    sums[to * d + k] += x;
                }
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    let mut data = mean(&sums, &counts, 0);
    data.extend(mean(&sums, &counts, 1));
    Tensor::matrix(2, d, data).expect("two centroids of width d")
}

/// Best of `restarts` k-means fits (lowest objective, earliest on ties).
///
/// The first fit starts from a principal-direction split of the data; the
/// others start from independent k-means++ seedings.
pub fn kmeans_fit_restarts<T: Scalar>(
    vectors: &Tensor<T>,
    rng: &Rng,
    restarts: usize,
    max_iter: usize,
    tol: T,
) -> Result<ClusterModel<T>> {
    check_input(vectors)?;
    let mut best: Option<ClusterModel<T>> = None;
    for r in 0..restarts.max(1) {
        let mut stream = rng.split_with("kmeans-restart", &[r as u64]);
        let seed = match r {
            0 => principal_seed(vectors)?,
            _ => None,
        };
        let fit = match seed {
            Some(centroids) => lloyd(vectors, centroids, max_iter, tol)?,
            None => kmeans_fit(vectors, &mut stream, max_iter, tol)?,
        };
        if best.as_ref().is_none_or(|b| fit.objective < b.objective) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Hard labels, centroid distances and soft foreground probabilities.
pub fn assign<T: Scalar>(model: &ClusterModel<T>, vectors: &Tensor<T>, temperature: T) -> Result<ClusterAssignment<T>> {
    let (n, d) = vectors.dims2()?;
    let (_, cd) = model.centroids.dims2()?;
    if d != cd {
        return Err(shape_err(format!("vectors have width {d}, centroids {cd}")));
    }
    if !(temperature > T::zero()) {
        return Err(invalid(format!("temperature must be positive, got {temperature}")));
    }
    let mut d0 = Vec::with_capacity(n);
    let mut d1 = Vec::with_capacity(n);
    let mut counts = [0usize; 2];
    for i in 0..n {
        let a = sq_dist(vectors.row(i), model.centroids.row(0)).sqrt();
        let b = sq_dist(vectors.row(i), model.centroids.row(1)).sqrt();
        counts[usize::from(b < a)] += 1;
        d0.push(a);
        d1.push(b);
    }
    let fg = usize::from(counts[1] < counts[0]);
    let (dist_fg, dist_bg) = if fg == 0 { (d0, d1) } else { (d1, d0) };
    let hard_label = dist_fg.iter().zip(&dist_bg).map(|(f, b)| u8::from(f <= b)).collect();
    let p_fg = dist_fg
        .iter()
        .zip(&dist_bg)
        .map(|(&f, &b)| softmax_slice(&[-f, -b], temperature)[0])
        .collect();
    Ok(ClusterAssignment { hard_label, dist_fg, dist_bg, p_fg, foreground_cluster: fg })
}

/// Gradient of a loss with respect to the clustered vectors, given its
/// gradient with respect to `p_fg`. Centroids are treated as constants.
pub fn soft_assignment_backward<T: Scalar>(
    model: &ClusterModel<T>,
    assignment: &ClusterAssignment<T>,
    vectors: &Tensor<T>,
    temperature: T,
    d_p_fg: &[T],
) -> Result<Tensor<T>> {
    let (n, d) = vectors.dims2()?;
    if d_p_fg.len() != n || assignment.len() != n {
        return Err(shape_err("soft assignment gradient misaligned with vectors"));
    }
    let fg = model.centroids.row(assignment.foreground_cluster);
    let bg = model.centroids.row(1 - assignment.foreground_cluster);
    let mut out = Tensor::zeros(&[n, d]);
    for i in 0..n {
        let g = d_p_fg[i];
        if g == T::zero() {
            continue;
        }
        let p = assignment.p_fg[i];
        // p = σ((d_bg − d_fg)/t)
        let dp = p * (T::one() - p) / temperature * g;
        let (dfg, dbg) = (assignment.dist_fg[i], assignment.dist_bg[i]);
        let v = vectors.row(i);
        let row = out.row_mut(i);
        for k in 0..d {
            let mut acc = T::zero();
            if dfg > T::zero() {
                acc -= (v[k] - fg[k]) / dfg;
            }
            if dbg > T::zero() {
                acc += (v[k] - bg[k]) / dbg;
            }
            row[k] = dp * acc;
        }
    }
    Ok(out)
}

/// Patch indices by descending foreground probability, ties by ascending index.
pub fn rank_by_foreground_prob<T: Scalar>(assignment: &ClusterAssignment<T>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..assignment.len()).collect();
    idx.sort_by(|&a, &b| {
        assignment.p_fg[b]
            .partial_cmp(&assignment.p_fg[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}
