use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ClusterId;

/// Result of bottom-up Ward clustering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    /// 1-based cluster per input point, numbered by first appearance.
    pub assignments: Vec<ClusterId>,
    /// Increase of the total within-cluster sum of squares at each merge.
    pub merge_costs: Vec<f64>,
}

/// Ward-linkage agglomeration of `points` until `k` clusters remain, using
/// the Lance-Williams update on squared Euclidean distances. Equal costs merge
/// the pair with the smallest `(i, j)`.
pub fn agglomerative_cluster<P: AsRef<[f64]>>(points: &[P], k: usize) -> Result<Dendrogram> {
    let n = points.len();
    if k == 0 {
        return Err(Error::structural("cluster count must be at least 1"));
    }
    if k > n {
        return Err(Error::structural(format!("cannot form {k} clusters from {n} points")));
    }
    let dim = points[0].as_ref().len();
    if points.iter().any(|p| p.as_ref().len() != dim) {
        return Err(Error::structural("points differ in dimension"));
    }
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d: f64 = points[i]
                .as_ref()
                .iter()
                .zip(points[j].as_ref())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    let mut size = vec![1usize; n];
    let mut alive = vec![true; n];
    let mut parent: Vec<usize> = (0..n).collect();
    let mut merge_costs = Vec::with_capacity(n - k);

    for _ in 0..n - k {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in (0..n).filter(|&i| alive[i]) {
            for j in (i + 1..n).filter(|&j| alive[j]) {
                if best.is_none_or(|(_, _, d)| dist[i][j] < d) {
                    best = Some((i, j, dist[i][j]));
                }
            }
        }
        let (i, j, d) = best.expect("at least two live clusters");
        merge_costs.push(d / 2.0);
        for m in (0..n).filter(|&m| alive[m] && m != i && m != j) {
            let (ni, nj, nm) = (size[i] as f64, size[j] as f64, size[m] as f64);
            let updated = ((ni + nm) * dist[i][m] + (nj + nm) * dist[j][m] - nm * d) / (ni + nj + nm);
            dist[i][m] = updated;
            dist[m][i] = updated;
        }
        size[i] += size[j];
        alive[j] = false;
        for p in parent.iter_mut() {
            if *p == j {
                *p = i;
            }
        }
    }

    let mut labels: Vec<(usize, ClusterId)> = Vec::new();
    let assignments = parent
        .iter()
        .map(|&root| match labels.iter().find(|(r, _)| *r == root) {
            Some(&(_, id)) => id,
            None => {
                let id = labels.len() as ClusterId + 1;
                labels.push((root, id));
                id
            }
        })
        .collect();
    Ok(Dendrogram {
        assignments,
        merge_costs,
    })
}
