//! Spherical k-means prototypes over unit-norm embeddings.
//!
//! Seeded k-means++ initialization, Lloyd iterations with Euclidean
//! assignment, and centroids renormalized to the unit sphere after every
//! update so that nearest-centroid, maximum dot product and maximum
//! exponential cosine similarity all agree. Ties always break to the lowest
//! index.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::encoder::{dot, Embedding};
use crate::error::{Error, Result};
use crate::rng::Rng64;

/// Fitted prototypes: K unit-norm centroids plus the final inertia.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub k: usize,
    pub dim: usize,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest_centroid(centroids: &[Vec<f64>], point: &[f64]) -> (usize, f64) {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = squared_distance(c, point);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    (best, best_d)
}

fn kmeans_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut Rng64) -> Vec<Vec<f64>> {
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points[rng.below(points.len() as u64) as usize].clone());
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.next_f64() * total;
            let mut chosen = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    chosen = i;
                    break;
                }
                r -= w;
            }
            chosen
        } else {
            // All points coincide with existing centroids.
            rng.below(points.len() as u64) as usize
        };
        centroids.push(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(squared_distance(p, centroids.last().unwrap()));
        }
    }
    centroids
}

/// Fit K prototypes; equivalent to [`fit_kmeans_traced`] without the
/// per-iteration inertia trace.
pub fn fit_kmeans(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<ClusterModel> {
    fit_kmeans_traced(points, k, seed, max_iters, tol).map(|(m, _)| m)
}

/// Fit K prototypes and report the inertia recorded after each assignment
/// step. The sequence is non-increasing: the assignment step is optimal for
/// fixed centroids, and the renormalized mean is the optimal unit-norm
/// centroid for fixed assignments.
pub fn fit_kmeans_traced(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<(ClusterModel, Vec<f64>)> {
    if k == 0 {
        return Err(Error::numeric("k must be at least 1"));
    }
    if points.len() < k {
        return Err(Error::numeric(format!(
            "cannot fit {k} clusters to {} points",
            points.len()
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::numeric("embedding dimensions are inconsistent"));
    }

    let mut rng = Rng64::derive(seed, 2);
    let mut centroids = kmeans_plus_plus(points, k, &mut rng);
    let mut assignment = vec![0usize; points.len()];
    let mut inertia_trace = Vec::new();
    let mut prev_inertia = f64::INFINITY;

    for _ in 0..max_iters {
        // Assignment step.
        let mut inertia = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest_centroid(&centroids, p);
            assignment[i] = c;
            inertia += d;
        }
        debug_assert!(
            inertia <= prev_inertia + 1e-9,
            "inertia increased: {prev_inertia} -> {inertia}"
        );
        inertia_trace.push(inertia);
        let converged = prev_inertia.is_finite()
            && (prev_inertia - inertia).abs() <= tol * prev_inertia.abs().max(1e-300);
        prev_inertia = inertia;
        if converged {
            break;
        }

        // Update step: renormalized means.
        let mut sums = vec![vec![0.0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignment) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut empties = Vec::new();
        for c in 0..k {
            let norm = sums[c].iter().map(|v| v * v).sum::<f64>().sqrt();
            if counts[c] == 0 || norm < 1e-12 {
                empties.push(c);
                continue;
            }
            for (dst, s) in centroids[c].iter_mut().zip(&sums[c]) {
                *dst = s / norm;
            }
        }
        // Re-seed empty clusters at the point currently farthest from its
        // own centroid; each re-seed grabs a distinct point.
        let mut taken = vec![false; points.len()];
        for &e in &empties {
            let mut far = None;
            let mut far_d = -1.0;
            for (i, p) in points.iter().enumerate() {
                if taken[i] {
                    continue;
                }
                let d = squared_distance(p, &centroids[assignment[i]]);
                if d > far_d {
                    far_d = d;
                    far = Some(i);
                }
            }
            if let Some(i) = far {
                centroids[e] = points[i].clone();
                taken[i] = true;
            }
        }
    }

    // Keep the reported inertia consistent with the returned centroids even
    // when the loop exits via max_iters right after an update step.
    let final_inertia: f64 = points
        .iter()
        .map(|p| nearest_centroid(&centroids, p).1)
        .sum();
    Ok((
        ClusterModel {
            k,
            dim,
            centroids,
            inertia: final_inertia,
        },
        inertia_trace,
    ))
}

/// Nearest prototype by maximum exponential cosine similarity; returns the
/// label and the winning similarity. Ties break to the lowest index.
pub fn assign(model: &ClusterModel, z: &[f64]) -> Result<(usize, f64)> {
    if model.centroids.is_empty() {
        return Err(Error::numeric("cluster model is empty"));
    }
    if z.len() != model.dim {
        return Err(Error::numeric("embedding dimension mismatch"));
    }
    let mut best = 0usize;
    let mut best_dot = f64::NEG_INFINITY;
    for (i, c) in model.centroids.iter().enumerate() {
        let d = dot(c, z);
        if d > best_dot {
            best_dot = d;
            best = i;
        }
    }
    Ok((best, best_dot.exp()))
}

/// Convenience for assigning an [`Embedding`].
pub fn assign_embedding(model: &ClusterModel, z: &Embedding) -> Result<(usize, f64)> {
    assign(model, &z.0)
}

const CLUSTER_MAGIC: &str = "terragrain-clusters v1";

pub fn save_clusters(model: &ClusterModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    writeln!(out, "{CLUSTER_MAGIC}").unwrap();
    writeln!(out, "{} {}", model.k, model.dim).unwrap();
    for c in &model.centroids {
        let mut first = true;
        for v in c {
            if !first {
                out.push(' ');
            }
            write!(out, "{v:.16e}").unwrap();
            first = false;
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_clusters(path: impl AsRef<Path>) -> Result<ClusterModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, line)) if line.trim() == CLUSTER_MAGIC => {}
        _ => return Err(Error::parse(path, 1, format!("expected {CLUSTER_MAGIC:?}"))),
    }
    let (k, dim) = match lines.next() {
        Some((_, line)) => {
            let mut toks = line.split_whitespace();
            let k = toks
                .next()
                .and_then(|t| t.parse::<usize>().ok())
                .ok_or_else(|| Error::parse(path, 2, "invalid K".to_string()))?;
            let dim = toks
                .next()
                .and_then(|t| t.parse::<usize>().ok())
                .ok_or_else(|| Error::parse(path, 2, "invalid dimension".to_string()))?;
            (k, dim)
        }
        None => return Err(Error::parse(path, 2, "missing K and dimension".to_string())),
    };
    let mut centroids = Vec::with_capacity(k);
    for (lineno, raw) in lines {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::parse(path, lineno + 1, format!("invalid value {t:?}")))
            })
            .collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(Error::parse(
                path,
                lineno + 1,
                format!("expected {dim} values, found {}", values.len()),
            ));
        }
        centroids.push(values);
    }
    if centroids.len() != k {
        return Err(Error::data(format!(
            "cluster file has {} centroids, header says {k}",
            centroids.len()
        )));
    }
    Ok(ClusterModel {
        k,
        dim,
        centroids,
        inertia: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn normalize(mut v: Vec<f64>) -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        v
    }

    fn random_unit(rng: &mut Rng64, dim: usize) -> Vec<f64> {
        normalize((0..dim).map(|_| rng.uniform(-1.0, 1.0)).collect())
    }

    #[test]
    fn two_orthogonal_points_fit_exactly() {
        let points = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let model = fit_kmeans(&points, 2, 1, 100, 1e-6).unwrap();
        assert!(model.inertia.abs() < 1e-12);
        let mut found: Vec<Vec<f64>> = model.centroids.clone();
        found.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        assert_eq!(found, vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn single_cluster_is_normalized_mean() {
        let points = vec![
            normalize(vec![1.0, 0.2, 0.0]),
            normalize(vec![1.0, -0.2, 0.0]),
            normalize(vec![1.0, 0.0, 0.3]),
        ];
        let model = fit_kmeans(&points, 1, 5, 100, 1e-6).unwrap();
        let mut mean = vec![0.0; 3];
        for p in &points {
            for (m, v) in mean.iter_mut().zip(p) {
                *m += v;
            }
        }
        let mean = normalize(mean);
        for (c, m) in model.centroids[0].iter().zip(&mean) {
            assert!((c - m).abs() < 1e-12);
        }
    }

    /// Brute force: best 2-partition with optimal unit centroids per side.
    fn brute_force_two_partition(points: &[Vec<f64>]) -> (Vec<usize>, f64) {
        let n = points.len();
        let dim = points[0].len();
        let mut best_assign = vec![0usize; n];
        let mut best_inertia = f64::INFINITY;
        for mask in 1..(1u32 << n) - 1 {
            let mut sums = [vec![0.0f64; dim], vec![0.0f64; dim]];
            for (i, p) in points.iter().enumerate() {
                let side = ((mask >> i) & 1) as usize;
                for (s, v) in sums[side].iter_mut().zip(p) {
                    *s += v;
                }
            }
            let mut centroids = Vec::new();
            let mut ok = true;
            for s in &sums {
                let norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm < 1e-12 {
                    ok = false;
                    break;
                }
                centroids.push(s.iter().map(|v| v / norm).collect::<Vec<f64>>());
            }
            if !ok {
                continue;
            }
            let inertia: f64 = points
                .iter()
                .enumerate()
                .map(|(i, p)| squared_distance(p, &centroids[((mask >> i) & 1) as usize]))
                .sum();
            if inertia < best_inertia {
                best_inertia = inertia;
                for i in 0..n {
                    best_assign[i] = ((mask >> i) & 1) as usize;
                }
            }
        }
        (best_assign, best_inertia)
    }

    #[test]
    fn antipodal_caps_match_brute_force_partition() {
        // Eight points in two tight caps around +e1 and -e1.
        let mut rng = Rng64::new(3);
        let mut points = Vec::new();
        for i in 0..8 {
            let sign = if i < 4 { 1.0 } else { -1.0 };
            let mut p = vec![sign, 0.0, 0.0];
            p[1] += rng.uniform(-0.05, 0.05);
            p[2] += rng.uniform(-0.05, 0.05);
            points.push(normalize(p));
        }
        let model = fit_kmeans(&points, 2, 7, 100, 1e-9).unwrap();
        let fitted: Vec<usize> = points
            .iter()
            .map(|p| assign(&model, p).unwrap().0)
            .collect();
        let (oracle, oracle_inertia) = brute_force_two_partition(&points);
        // Same partition up to label swap.
        let same = fitted == oracle
            || fitted.iter().zip(&oracle).all(|(a, b)| *a == 1 - *b);
        assert!(same, "fitted {fitted:?} oracle {oracle:?}");
        assert!((model.inertia - oracle_inertia).abs() < 1e-9);
    }

    #[test]
    fn fewer_points_than_k_is_rejected() {
        let points = vec![vec![1.0, 0.0]];
        assert!(fit_kmeans(&points, 2, 1, 10, 1e-6).is_err());
    }

    #[test]
    fn inertia_trace_is_non_increasing() {
        let mut rng = Rng64::new(11);
        for seed in 0..10 {
            let points: Vec<Vec<f64>> = (0..40).map(|_| random_unit(&mut rng, 8)).collect();
            let (model, trace) = fit_kmeans_traced(&points, 5, seed, 100, 1e-9).unwrap();
            for w in trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-9, "trace {trace:?}");
            }
            for c in &model.centroids {
                let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((norm - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn assignment_rules_agree_on_unit_vectors() {
        // argmin Euclidean == argmax dot == argmax exp(dot) for unit inputs.
        let mut rng = Rng64::new(23);
        let centroids: Vec<Vec<f64>> = (0..6).map(|_| random_unit(&mut rng, 16)).collect();
        let model = ClusterModel {
            k: 6,
            dim: 16,
            centroids: centroids.clone(),
            inertia: 0.0,
        };
        for _ in 0..200 {
            let z = random_unit(&mut rng, 16);
            let (by_sim, sim) = assign(&model, &z).unwrap();
            let by_euclid = nearest_centroid(&centroids, &z).0;
            let by_exp = centroids
                .iter()
                .enumerate()
                .max_by(|(_, a), (_, b)| {
                    dot(a, &z).exp().partial_cmp(&dot(b, &z).exp()).unwrap()
                })
                .unwrap()
                .0;
            assert_eq!(by_sim, by_euclid);
            assert_eq!(by_sim, by_exp);
            assert!((sim - dot(&centroids[by_sim], &z).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn assign_exact_centroid_and_tie_break() {
        let e = |i: usize| {
            let mut v = vec![0.0; 4];
            v[i] = 1.0;
            v
        };
        let model = ClusterModel {
            k: 4,
            dim: 4,
            centroids: vec![e(0), e(1), e(1), e(2)],
            inertia: 0.0,
        };
        let (label, sim) = assign(&model, &e(1)).unwrap();
        assert_eq!(label, 1); // ties to the lowest index among 1 and 2
        assert!((sim - std::f64::consts::E).abs() < 1e-12);
        let (label0, _) = assign(&model, &e(0)).unwrap();
        assert_eq!(label0, 0);
    }

    #[test]
    fn fit_is_deterministic_per_seed() {
        let mut rng = Rng64::new(31);
        let points: Vec<Vec<f64>> = (0..30).map(|_| random_unit(&mut rng, 8)).collect();
        let a = fit_kmeans(&points, 4, 9, 100, 1e-6).unwrap();
        let b = fit_kmeans(&points, 4, 9, 100, 1e-6).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cluster_file_round_trips() {
        let mut rng = Rng64::new(41);
        let points: Vec<Vec<f64>> = (0..20).map(|_| random_unit(&mut rng, 8)).collect();
        let model = fit_kmeans(&points, 3, 1, 100, 1e-6).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clusters.txt");
        save_clusters(&model, &path).unwrap();
        let back = load_clusters(&path).unwrap();
        assert_eq!(back.centroids, model.centroids);
        assert_eq!((back.k, back.dim), (model.k, model.dim));
    }
}
