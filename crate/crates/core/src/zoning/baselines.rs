//! Euclidean clusterers used as comparison points for the zoning
//! algorithm: k-means, bisecting k-means and standard-linkage
//! agglomerative clustering.

use rand::Rng;

use crate::error::{Error, Result};
use crate::hexgrid::GeoPoint;
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Linkage {
    Average,
    Complete,
    Ward,
}

fn check(points: &[GeoPoint], k: usize) -> Result<()> {
    if k == 0 || k > points.len() {
        return Err(Error::invalid(format!("cannot form {k} clusters from {} points", points.len())));
    }
    Ok(())
}

fn assign(points: &[GeoPoint], centers: &[GeoPoint], labels: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (p, l) in points.iter().zip(labels.iter_mut()) {
        let (best, d) = centers
            .iter()
            .enumerate()
            .map(|(c, ctr)| (c, p.dist2(ctr)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        *l = best;
        inertia += d;
    }
    inertia
}

fn kmeans_once(points: &[GeoPoint], k: usize, rng: &mut impl Rng) -> (Vec<usize>, f64) {
    // k-means++ seeding.
    let mut centers = vec![points[rng.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| p.dist2(&centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        centers.push(points[next]);
        for (p, d) in points.iter().zip(d2.iter_mut()) {
            *d = d.min(p.dist2(&points[next]));
        }
    }
    let mut labels = vec![0; points.len()];
    let mut inertia = assign(points, &centers, &mut labels);
    for _ in 0..300 {
        let mut sums = vec![(0.0, 0.0, 0usize); k];
        for (p, &l) in points.iter().zip(&labels) {
            sums[l].0 += p.x;
            sums[l].1 += p.y;
            sums[l].2 += 1;
        }
        for (c, s) in centers.iter_mut().zip(&sums) {
            if s.2 > 0 {
                *c = GeoPoint::new(s.0 / s.2 as f64, s.1 / s.2 as f64);
            }
        }
        let before = labels.clone();
        inertia = assign(points, &centers, &mut labels);
        if before == labels {
            break;
        }
    }
    (labels, inertia)
}

/// Lloyd's algorithm with k-means++ seeding; the restart with the lowest
/// inertia wins.
pub fn kmeans(points: &[GeoPoint], k: usize, restarts: usize, seed: u64) -> Result<Vec<usize>> {
    check(points, k)?;
    let mut rng = rng::tagged(seed, Stream::Search);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..restarts.max(1) {
        let (labels, inertia) = kmeans_once(points, k, &mut rng);
        if best.as_ref().is_none_or(|b| inertia < b.1) {
            best = Some((labels, inertia));
        }
    }
    Ok(compact(&best.unwrap().0))
}

fn sse(points: &[GeoPoint], idx: &[usize]) -> f64 {
    let c = GeoPoint::mean(idx.iter().map(|&i| points[i])).unwrap();
    idx.iter().map(|&i| points[i].dist2(&c)).sum()
}

/// Repeatedly splits the cluster with the largest squared error in two.
pub fn bisecting_kmeans(points: &[GeoPoint], k: usize, restarts: usize, seed: u64) -> Result<Vec<usize>> {
    check(points, k)?;
    let mut rng = rng::tagged(seed, Stream::Search);
    let mut clusters: Vec<Vec<usize>> = vec![(0..points.len()).collect()];
    while clusters.len() < k {
        let target = (0..clusters.len())
            .filter(|&c| clusters[c].len() > 1)
            .max_by(|&a, &b| sse(points, &clusters[a]).total_cmp(&sse(points, &clusters[b])).then(b.cmp(&a)))
            .expect("k <= number of points");
        let idx = clusters.swap_remove(target);
        let sub: Vec<GeoPoint> = idx.iter().map(|&i| points[i]).collect();
        let mut best: Option<(Vec<usize>, f64)> = None;
        for _ in 0..restarts.max(1) {
            let (labels, inertia) = kmeans_once(&sub, 2, &mut rng);
            if best.as_ref().is_none_or(|b| inertia < b.1) {
                best = Some((labels, inertia));
            }
        }
        let labels = best.unwrap().0;
        let (mut left, mut right): (Vec<usize>, Vec<usize>) = (Vec::new(), Vec::new());
        for (pos, &i) in idx.iter().enumerate() {
            if labels[pos] == 0 {
                left.push(i);
            } else {
                right.push(i);
            }
        }
        if left.is_empty() || right.is_empty() {
            // Coincident points: split arbitrarily.
            let all: Vec<usize> = left.into_iter().chain(right).collect();
            let (a, b) = all.split_at(all.len() / 2);
            left = a.to_vec();
            right = b.to_vec();
        }
        clusters.push(left);
        clusters.push(right);
    }
    let mut labels = vec![0; points.len()];
    for (c, idx) in clusters.iter().enumerate() {
        for &i in idx {
            labels[i] = c;
        }
    }
    Ok(compact(&labels))
}

/// Agglomerative clustering cut at `k` clusters. Uses the nearest-neighbor
/// chain with Lance-Williams updates, valid for these reducible linkages.
pub fn agglomerative(points: &[GeoPoint], k: usize, linkage: Linkage) -> Result<Vec<usize>> {
    check(points, k)?;
    let n = points.len();
    let mut d = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            let sq = points[i].dist2(&points[j]);
            d[i * n + j] = if linkage == Linkage::Ward { sq } else { sq.sqrt() };
        }
    }
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut merges: Vec<(f64, usize, usize)> = Vec::with_capacity(n - 1);
    let mut chain: Vec<usize> = Vec::new();
    let mut remaining = n;
    while remaining > 1 {
        if chain.is_empty() {
            chain.push((0..n).find(|&i| active[i]).unwrap());
        }
        let a = *chain.last().unwrap();
        let prev = chain.len().checked_sub(2).map(|p| chain[p]);
        let mut best = prev.unwrap_or(usize::MAX);
        let mut best_d = prev.map_or(f64::INFINITY, |p| d[a * n + p]);
        for j in (0..n).filter(|&j| active[j] && j != a) {
            let dj = d[a * n + j];
            // Strict improvement only, so ties keep the chain predecessor.
            if dj < best_d {
                best = j;
                best_d = dj;
            }
        }
        if Some(best) == prev {
            chain.pop();
            chain.pop();
            let (i, j) = (a.min(best), a.max(best));
            merges.push((best_d, i, j));
            for m in (0..n).filter(|&m| active[m] && m != i && m != j) {
                let (ni, nj, nm) = (size[i] as f64, size[j] as f64, size[m] as f64);
                let (dim, djm, dij) = (d[i * n + m], d[j * n + m], d[i * n + j]);
                let v = match linkage {
                    Linkage::Average => (ni * dim + nj * djm) / (ni + nj),
                    Linkage::Complete => dim.max(djm),
                    Linkage::Ward => ((ni + nm) * dim + (nj + nm) * djm - nm * dij) / (ni + nj + nm),
                };
                d[i * n + m] = v;
                d[m * n + i] = v;
            }
            size[i] += size[j];
            active[j] = false;
            remaining -= 1;
        } else {
            chain.push(best);
        }
    }
    // The chain finds merges out of height order; apply the n-k lowest.
    // Slot `i` always holds point `i`, so merges can be replayed on points.
    let mut order: Vec<usize> = (0..merges.len()).collect();
    order.sort_by(|&a, &b| merges[a].0.total_cmp(&merges[b].0).then(a.cmp(&b)));
    let mut applied = vec![false; merges.len()];
    for &m in order.iter().take(n - k) {
        applied[m] = true;
    }
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while parent[r] != r {
            r = parent[r];
        }
        parent[x] = r;
        r
    }
    for (m, &(_, i, j)) in merges.iter().enumerate() {
        if applied[m] {
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
            if ri != rj {
                parent[rj] = ri;
            }
        }
    }
    let labels: Vec<usize> = (0..n).map(|x| find(&mut parent, x)).collect();
    Ok(compact(&labels))
}

/// Relabels to `0..k` in order of first appearance.
fn compact(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs() -> Vec<GeoPoint> {
        let mut pts = Vec::new();
        for (cx, cy) in [(0.0, 0.0), (1000.0, 0.0), (0.0, 1000.0)] {
            for k in 0..10 {
                let a = k as f64;
                pts.push(GeoPoint::new(cx + (a * 7.0) % 30.0, cy + (a * 13.0) % 30.0));
            }
        }
        pts
    }

    fn same_partition(labels: &[usize]) -> bool {
        (0..3).all(|b| labels[b * 10..(b + 1) * 10].iter().all(|&l| l == labels[b * 10]))
            && labels[0] != labels[10]
            && labels[10] != labels[20]
            && labels[0] != labels[20]
    }

    #[test]
    fn all_methods_recover_separated_blobs() {
        let pts = blobs();
        assert!(same_partition(&kmeans(&pts, 3, 5, 1).unwrap()));
        assert!(same_partition(&bisecting_kmeans(&pts, 3, 5, 1).unwrap()));
        for l in [Linkage::Average, Linkage::Complete, Linkage::Ward] {
            assert!(same_partition(&agglomerative(&pts, 3, l).unwrap()), "{l:?}");
        }
    }

    #[test]
    fn cluster_counts_are_exact() {
        let pts: Vec<GeoPoint> = (0..40).map(|k| GeoPoint::new((k * 37 % 101) as f64, (k * 53 % 97) as f64)).collect();
        for k in [1, 2, 7, 40] {
            let count = |l: Vec<usize>| l.iter().max().unwrap() + 1;
            assert_eq!(count(kmeans(&pts, k, 3, 9).unwrap()), k);
            assert_eq!(count(bisecting_kmeans(&pts, k, 3, 9).unwrap()), k);
            for l in [Linkage::Average, Linkage::Complete, Linkage::Ward] {
                assert_eq!(count(agglomerative(&pts, k, l).unwrap()), k);
            }
        }
        assert!(kmeans(&pts, 0, 1, 0).is_err());
    }

    #[test]
    fn single_linkage_style_chain_matches_naive_on_small_input() {
        // Naive O(n^3) complete linkage as reference.
        let pts: Vec<GeoPoint> = (0..12).map(|k| GeoPoint::new((k * k * 31 % 89) as f64, (k * 17 % 43) as f64)).collect();
        for k in 1..=12 {
            let mut clusters: Vec<Vec<usize>> = (0..12).map(|i| vec![i]).collect();
            while clusters.len() > k {
                let mut best = (f64::INFINITY, 0, 0);
                for a in 0..clusters.len() {
                    for b in a + 1..clusters.len() {
                        let d = clusters[a]
                            .iter()
                            .flat_map(|&i| clusters[b].iter().map(move |&j| (i, j)))
                            .map(|(i, j)| pts[i].dist(&pts[j]))
                            .fold(0.0, f64::max);
                        if d < best.0 {
                            best = (d, a, b);
                        }
                    }
                }
                let gone = clusters.remove(best.2);
                clusters[best.1].extend(gone);
            }
            let got = agglomerative(&pts, k, Linkage::Complete).unwrap();
            for c in &clusters {
                assert!(c.iter().all(|&i| got[i] == got[c[0]]), "k={k}");
            }
        }
    }
}
