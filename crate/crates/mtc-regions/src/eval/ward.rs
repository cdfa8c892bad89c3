//! Agglomerative clustering with Ward's minimum-variance criterion, plus
//! the k-selection diagnostics (inertia elbow, silhouette curve).
//!
//! Distances are squared Euclidean throughout — Ward's criterion is only
//! defined for them — and the silhouette uses the same squared distances
//! so both diagnostics rank cuts consistently. Merges are deterministic:
//! ties on the Lance–Williams distance are broken by the lowest original
//! row index of each cluster, so equal inputs always produce equal labels.

use ndarray::Array2;

use crate::error::{Error, Result};

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Cut the Ward hierarchy over the rows of `x` at `k` clusters.
///
/// Returns one label per row in `[0, k)`, numbered by the lowest row
/// index each cluster contains (cluster 0 always contains row 0).
pub fn ward_cluster(x: &Array2<f64>, k: usize) -> Result<Vec<usize>> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::Eval("cannot cluster zero rows".into()));
    }
    if k == 0 || k > n {
        return Err(Error::Eval(format!(
            "k must be in [1, {n}], got {k}"
        )));
    }
    for v in x.iter() {
        if !v.is_finite() {
            return Err(Error::Eval("non-finite embedding entry".into()));
        }
    }

    // active clusters: member lists + pairwise Lance–Williams distances;
    // O(n^3) overall, fine at region scale
    let mut members: Vec<Option<Vec<usize>>> = (0..n).map(|i| Some(vec![i])).collect();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| x.row(i).to_vec()).collect();
    let mut dist = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = sq_dist(&rows[i], &rows[j]);
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }

    let mut active = n;
    while active > k {
        // find the minimal-distance pair; ties by lowest member indices
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..n {
            if members[i].is_none() {
                continue;
            }
            for j in (i + 1)..n {
                if members[j].is_none() {
                    continue;
                }
                let d = dist[i][j];
                let better = match best {
                    None => true,
                    Some((_, _, bd)) => d < bd,
                };
                if better {
                    best = Some((i, j, d));
                }
            }
        }
        let (a, b, dab) = best.expect("at least two active clusters");
        // Lance–Williams update for Ward linkage: clusters keep the slot
        // of their lowest row index, so (a < b) absorbs b
        let na = members[a].as_ref().expect("active").len() as f64;
        let nb = members[b].as_ref().expect("active").len() as f64;
        for c in 0..n {
            if c == a || c == b || members[c].is_none() {
                continue;
            }
            let nc = members[c].as_ref().expect("active").len() as f64;
            let d = ((na + nc) * dist[a][c] + (nb + nc) * dist[b][c] - nc * dab)
                / (na + nb + nc);
            dist[a][c] = d;
            dist[c][a] = d;
        }
        let moved = members[b].take().expect("active");
        members[a].as_mut().expect("active").extend(moved);
        active -= 1;
    }

    // label clusters by ascending lowest member index
    let mut clusters: Vec<Vec<usize>> = members.into_iter().flatten().collect();
    clusters.sort_by_key(|m| *m.iter().min().expect("nonempty cluster"));
    let mut labels = vec![0usize; n];
    for (ci, cluster) in clusters.iter().enumerate() {
        for &r in cluster {
            labels[r] = ci;
        }
    }
    Ok(labels)
}

/// Total within-cluster sum of squared distances to the cluster mean.
pub fn inertia(x: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    let n = x.nrows();
    if labels.len() != n {
        return Err(Error::Eval(format!(
            "{} labels for {n} rows",
            labels.len()
        )));
    }
    let k = labels.iter().max().map(|m| m + 1).unwrap_or(0);
    let d = x.ncols();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(x.row(i)) {
            *s += v;
        }
    }
    let mut total = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        let c = counts[l] as f64;
        total += x
            .row(i)
            .iter()
            .zip(&sums[l])
            .map(|(v, s)| {
                let m = s / c;
                (v - m) * (v - m)
            })
            .sum::<f64>();
    }
    Ok(total)
}

/// Mean silhouette over all rows, with squared Euclidean distances.
/// Singleton clusters contribute 0 (the usual convention); one cluster
/// overall makes the silhouette undefined → error.
pub fn silhouette(x: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    let n = x.nrows();
    if labels.len() != n {
        return Err(Error::Eval(format!(
            "{} labels for {n} rows",
            labels.len()
        )));
    }
    let k = labels.iter().max().map(|m| m + 1).unwrap_or(0);
    if k < 2 {
        return Err(Error::Eval(
            "silhouette needs at least two clusters".into(),
        ));
    }
    let rows: Vec<Vec<f64>> = (0..n).map(|i| x.row(i).to_vec()).collect();
    let mut counts = vec![0usize; k];
    for &l in labels {
        counts[l] += 1;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let li = labels[i];
        if counts[li] <= 1 {
            continue; // silhouette of a singleton is 0
        }
        // mean distance to every cluster
        let mut sums = vec![0.0f64; k];
        for j in 0..n {
            if j != i {
                sums[labels[j]] += sq_dist(&rows[i], &rows[j]);
            }
        }
        let a = sums[li] / (counts[li] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != li && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            acc += (b - a) / denom;
        }
    }
    Ok(acc / n as f64)
}

/// Diagnostics for choosing the number of clusters.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ChooseKReport {
    pub ks: Vec<usize>,
    pub inertia: Vec<f64>,
    pub silhouette: Vec<f64>,
    /// Elbow of the inertia curve (max second difference); equals the
    /// silhouette argmax when the range is too short for curvature.
    pub suggested_k: usize,
    /// k with the highest mean silhouette, reported alongside.
    pub silhouette_best_k: usize,
}

/// Ward-cluster across `ks` and report the inertia and silhouette curves.
/// The suggestion is advisory; the decision stays with the caller.
pub fn choose_k(x: &Array2<f64>, ks: &[usize]) -> Result<ChooseKReport> {
    if ks.is_empty() {
        return Err(Error::Eval("choose_k needs a non-empty k range".into()));
    }
    let mut sorted = ks.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let n = x.nrows();
    for &k in &sorted {
        if k < 2 || k >= n {
            return Err(Error::Eval(format!(
                "k={k} outside the valid range [2, {}]",
                n.saturating_sub(1)
            )));
        }
    }
    let mut inertias = Vec::with_capacity(sorted.len());
    let mut sils = Vec::with_capacity(sorted.len());
    for &k in &sorted {
        let labels = ward_cluster(x, k)?;
        inertias.push(inertia(x, &labels)?);
        sils.push(silhouette(x, &labels)?);
    }
    let silhouette_best_k = sorted[sils
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite silhouettes"))
        .expect("nonempty")
        .0];
    // max curvature of the inertia curve via the second difference;
    // needs three consecutive points, otherwise fall back to silhouette
    let suggested_k = if sorted.len() >= 3 {
        let mut best = (1usize, f64::NEG_INFINITY);
        for m in 1..sorted.len() - 1 {
            let curv = inertias[m - 1] - 2.0 * inertias[m] + inertias[m + 1];
            if curv > best.1 {
                best = (m, curv);
            }
        }
        sorted[best.0]
    } else {
        silhouette_best_k
    };
    Ok(ChooseKReport {
        ks: sorted,
        inertia: inertias,
        silhouette: sils,
        suggested_k,
        silhouette_best_k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn blobs(centers: &[Vec<f64>], per: usize, sigma: f64, seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut rng = crate::rng::substream(seed, "t/ward-blobs");
        let d = centers[0].len();
        let n = centers.len() * per;
        let mut x = Array2::zeros((n, d));
        let mut truth = Vec::with_capacity(n);
        for (c, center) in centers.iter().enumerate() {
            for i in 0..per {
                let row = c * per + i;
                for j in 0..d {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    x[(row, j)] = center[j] + sigma * z;
                }
                truth.push(c);
            }
        }
        (x, truth)
    }

    #[test]
    fn degenerate_cuts() {
        let (x, _) = blobs(&[vec![0.0, 0.0], vec![10.0, 0.0]], 3, 0.1, 1);
        let singletons = ward_cluster(&x, 6).unwrap();
        assert_eq!(singletons, vec![0, 1, 2, 3, 4, 5]);
        let one = ward_cluster(&x, 1).unwrap();
        assert!(one.iter().all(|l| *l == 0));
        assert!(ward_cluster(&x, 7).is_err());
        assert!(ward_cluster(&x, 0).is_err());
    }

    #[test]
    fn two_blobs_recover_membership() {
        let (x, truth) = blobs(&[vec![0.0, 0.0, 0.0], vec![8.0, 8.0, 8.0]], 12, 0.3, 2);
        let labels = ward_cluster(&x, 2).unwrap();
        assert_eq!(labels, truth);

        // brute-force nearest-centroid check: every point is closer to its
        // own cluster's mean than to the other's
        for i in 0..x.nrows() {
            let mine: Vec<usize> = (0..x.nrows()).filter(|&j| labels[j] == labels[i]).collect();
            let other: Vec<usize> = (0..x.nrows()).filter(|&j| labels[j] != labels[i]).collect();
            let mean = |idx: &[usize]| -> Vec<f64> {
                let mut m = vec![0.0; x.ncols()];
                for &j in idx {
                    for (mm, v) in m.iter_mut().zip(x.row(j)) {
                        *mm += v;
                    }
                }
                m.iter().map(|v| v / idx.len() as f64).collect()
            };
            let dm = sq_dist(&x.row(i).to_vec(), &mean(&mine));
            let do_ = sq_dist(&x.row(i).to_vec(), &mean(&other));
            assert!(dm < do_);
        }
    }

    #[test]
    fn duplicate_rows_are_fine_and_deterministic() {
        let mut x = Array2::zeros((6, 2));
        for i in 0..3 {
            x[(i, 0)] = 1.0;
            x[(i + 3, 0)] = 5.0;
        }
        let a = ward_cluster(&x, 2).unwrap();
        let b = ward_cluster(&x, 2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, vec![0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn inertia_non_increasing_in_k() {
        let mut rng = crate::rng::substream(3, "t/ward-inertia");
        let x = Array2::from_shape_fn((20, 4), |_| rng.random_range(-1.0..1.0));
        let mut prev = f64::INFINITY;
        for k in 1..=10 {
            let labels = ward_cluster(&x, k).unwrap();
            let i = inertia(&x, &labels).unwrap();
            assert!(
                i <= prev + 1e-9,
                "inertia rose from {prev} to {i} at k={k}"
            );
            prev = i;
        }
    }

    #[test]
    fn three_blobs_suggest_three() {
        let (x, _) = blobs(
            &[vec![0.0, 0.0], vec![12.0, 0.0], vec![0.0, 12.0]],
            10,
            0.4,
            4,
        );
        let report = choose_k(&x, &[2, 3, 4, 5, 6, 7, 8]).unwrap();
        assert_eq!(report.suggested_k, 3, "{report:?}");
        assert_eq!(report.silhouette_best_k, 3, "{report:?}");
        assert!(choose_k(&x, &[]).is_err());
        assert!(choose_k(&x, &[1]).is_err());
    }

    #[test]
    fn silhouette_prefers_true_partition() {
        let (x, truth) = blobs(&[vec![0.0; 3], vec![9.0; 3]], 8, 0.3, 5);
        let good = silhouette(&x, &truth).unwrap();
        let mut bad_labels = truth.clone();
        bad_labels.swap(0, 8); // swap one point across blobs
        let bad = silhouette(&x, &bad_labels).unwrap();
        assert!(good > bad);
        assert!(good > 0.9, "tight blobs should be near 1, got {good}");
        assert!(silhouette(&x, &vec![0; 16]).is_err());
    }
}
