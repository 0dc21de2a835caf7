use serde::{Deserialize, Serialize};

use crate::data::ToyDistribution;
use crate::error::{Error, Result};
use crate::numerics::{Rng, Stream, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Size of the held-out reference set and of the generated set.
    pub n_eval: usize,
    pub n_projections: usize,
    /// Independent projection sets used for the spread of the sliced distance.
    pub projection_replicates: usize,
    pub k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_eval: 10_000,
            n_projections: 256,
            projection_replicates: 5,
            k: 5,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_eval <= self.k || self.k == 0 {
            return Err(Error::Config(format!("eval needs 1 <= k < n_eval, got k={} n_eval={}", self.k, self.n_eval)));
        }
        if self.n_projections == 0 || self.projection_replicates == 0 {
            return Err(Error::Config("eval.n_projections and eval.projection_replicates must be positive".into()));
        }
        Ok(())
    }
}

fn dims(a: &Tensor, b: &Tensor, what: &'static str) -> Result<(usize, usize, usize)> {
    let (n, d) = a.dims2()?;
    let (m, db) = b.dims2()?;
    if d != db {
        return Err(Error::shape(what, a.shape(), b.shape()));
    }
    if n == 0 || m == 0 || d == 0 {
        return Err(Error::Empty(what));
    }
    Ok((n, m, d))
}

/// Exact 2-Wasserstein distance between two 1-D empirical measures with
/// uniform weights. Sorts both inputs in place.
///
/// For unequal sizes the two quantile functions are merged on the common
/// refinement of the grids `i/n` and `j/m`.
pub fn w2_1d(a: &mut [f64], b: &mut [f64]) -> Result<f64> {
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 {
        return Err(Error::Empty("w2_1d"));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            step: 0,
            detail: "w2_1d input".into(),
        });
    }
    a.sort_unstable_by(f64::total_cmp);
    b.sort_unstable_by(f64::total_cmp);
    // Breakpoints are tracked as integers in units of 1/(n·m).
    let (nm, n64, m64) = ((n * m) as f64, n as u128, m as u128);
    let (mut i, mut j, mut at) = (0usize, 0usize, 0u128);
    let mut acc = 0.0;
    while i < n && j < m {
        let next_a = (i as u128 + 1) * m64;
        let next_b = (j as u128 + 1) * n64;
        let next = next_a.min(next_b);
        let diff = a[i] - b[j];
        acc += (next - at) as f64 / nm * diff * diff;
        at = next;
        if next_a == next {
            i += 1;
        }
        if next_b == next {
            j += 1;
        }
    }
    Ok(acc.sqrt())
}

/// `count` random unit vectors in `R^d`.
pub fn random_directions(d: usize, count: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| loop {
            let mut u = vec![0.0; d];
            rng.fill_normal(&mut u);
            let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break u.into_iter().map(|v| v / norm).collect();
            }
        })
        .collect()
}

fn project(x: &Tensor, dir: &[f64]) -> Vec<f64> {
    x.data()
        .chunks_exact(dir.len())
        .map(|row| row.iter().zip(dir).map(|(a, b)| a * b).sum())
        .collect()
}

/// Per-direction 1-D distances between the projections of `a` and `b`.
pub fn sliced_w2_directions(a: &Tensor, b: &Tensor, dirs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let (_, _, d) = dims(a, b, "sliced_w2")?;
    dirs.iter()
        .map(|u| {
            if u.len() != d {
                return Err(Error::shape("sliced_w2 direction", &[d], &[u.len()]));
            }
            w2_1d(&mut project(a, u), &mut project(b, u))
        })
        .collect()
}

/// Mean over `n_projections` random unit directions of the 1-D 2-Wasserstein
/// distance between the projected point sets.
pub fn sliced_w2(a: &Tensor, b: &Tensor, n_projections: usize, rng: &mut Rng) -> Result<f64> {
    let (_, _, d) = dims(a, b, "sliced_w2")?;
    if n_projections == 0 {
        return Err(Error::Empty("sliced_w2 projections"));
    }
    let per = sliced_w2_directions(a, b, &random_directions(d, n_projections, rng))?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Squared distance from each point to its `k`-th nearest other point.
fn kth_radii_sq(x: &[f64], d: usize, k: usize) -> Vec<f64> {
    let n = x.len() / d;
    let mut best = vec![f64::INFINITY; k];
    (0..n)
        .map(|i| {
            best.fill(f64::INFINITY);
            let xi = &x[i * d..(i + 1) * d];
            for j in (0..n).filter(|&j| j != i) {
                let dist = sq_dist(xi, &x[j * d..(j + 1) * d]);
                if dist < best[k - 1] {
                    let pos = best.partition_point(|&b| b <= dist);
                    best.copy_within(pos..k - 1, pos + 1);
                    best[pos] = dist;
                }
            }
            best[k - 1]
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Fraction of `query` points inside the union of balls centered on the
/// `support` points, each with radius its `k`-th neighbor distance.
fn coverage(query: &[f64], support: &[f64], radii_sq: &[f64], d: usize) -> f64 {
    let hits = query
        .chunks_exact(d)
        .filter(|q| support.chunks_exact(d).zip(radii_sq).any(|(s, &r)| sq_dist(q, s) <= r))
        .count();
    hits as f64 / (query.len() / d) as f64
}

/// k-NN manifold precision and recall.
///
/// Precision is the fraction of generated points inside the reference
/// manifold; recall swaps the roles. A manifold is the union of balls around
/// its points, each reaching that point's `k`-th nearest neighbor.
pub fn knn_precision_recall(generated: &Tensor, reference: &Tensor, k: usize) -> Result<(f64, f64)> {
    let (n, m, d) = dims(generated, reference, "knn_precision_recall")?;
    if k == 0 || n <= k || m <= k {
        return Err(Error::Config(format!("knn_precision_recall needs more than k={k} points per set, got {n} and {m}")));
    }
    let (g, r) = (generated.data(), reference.data());
    let rad_r = kth_radii_sq(r, d, k);
    let rad_g = kth_radii_sq(g, d, k);
    Ok((coverage(g, r, &rad_r, d), coverage(r, g, &rad_g, d)))
}

/// Fraction of known modes with at least one generated point within three
/// per-mode standard deviations of the center.
pub fn mode_coverage(generated: &Tensor, dist: &ToyDistribution) -> Result<f64> {
    let (centers, std) = dist
        .modes()
        .ok_or_else(|| Error::Unsupported(format!("{} has no enumerable modes", dist.kind.name())))?;
    let (_, d) = generated.dims2()?;
    if d != 2 {
        return Err(Error::shape("mode_coverage", &[generated.shape()[0], 2], generated.shape()));
    }
    let r2 = (3.0 * std) * (3.0 * std);
    let hit = centers
        .iter()
        .filter(|c| generated.data().chunks_exact(2).any(|p| sq_dist(p, &c[..]) <= r2))
        .count();
    Ok(hit as f64 / centers.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub sliced_w2: f64,
    /// Standard deviation of the sliced distance across projection sets.
    pub sliced_w2_std: f64,
    pub precision: f64,
    pub recall: f64,
    /// Only for distributions with enumerable modes.
    pub mode_coverage: Option<f64>,
    pub n_generated: usize,
    pub n_reference: usize,
    pub k: usize,
    pub n_projections: usize,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "sliced_w2,sliced_w2_std,precision,recall,mode_coverage,n_generated,n_reference,k,n_projections";

    /// One CSV line matching [`MetricReport::CSV_HEADER`]; a missing mode
    /// coverage is an empty field.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.sliced_w2,
            self.sliced_w2_std,
            self.precision,
            self.recall,
            self.mode_coverage.map(|v| v.to_string()).unwrap_or_default(),
            self.n_generated,
            self.n_reference,
            self.k,
            self.n_projections
        )
    }
}

/// Full metric set for `generated` against `reference`. Projection
/// directions come from the projection stream of `seed`.
pub fn evaluate(generated: &Tensor, reference: &Tensor, dist: &ToyDistribution, cfg: &EvalConfig, seed: u64) -> Result<MetricReport> {
    cfg.validate()?;
    let (n, m, d) = dims(generated, reference, "evaluate")?;
    let mut rng = Rng::stream(seed, Stream::Projections);
    let mut reps = Vec::with_capacity(cfg.projection_replicates);
    for _ in 0..cfg.projection_replicates {
        let per = sliced_w2_directions(generated, reference, &random_directions(d, cfg.n_projections, &mut rng))?;
        reps.push(per.iter().sum::<f64>() / per.len() as f64);
    }
    let mean = reps.iter().sum::<f64>() / reps.len() as f64;
    let std = if reps.len() > 1 {
        (reps.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (reps.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    let (precision, recall) = knn_precision_recall(generated, reference, cfg.k)?;
    let mode_coverage = match dist.modes() {
        Some(_) => Some(mode_coverage(generated, dist)?),
        None => None,
    };
    let report = MetricReport {
        sliced_w2: reps[0],
        sliced_w2_std: std,
        precision,
        recall,
        mode_coverage,
        n_generated: n,
        n_reference: m,
        k: cfg.k,
        n_projections: cfg.n_projections,
    };
    if ![report.sliced_w2, report.sliced_w2_std, precision, recall].iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            step: 0,
            detail: format!("metric report {report:?}"),
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{sample_data, ToyKind};
    use proptest::prelude::{any, prop_assert, prop_assert_eq, prop_assume, proptest, Strategy};

    /// Brute-force W2 for equal sizes: best assignment over all permutations.
    fn w2_by_permutation(a: &[f64], b: &[f64]) -> f64 {
        fn perms(items: Vec<usize>) -> Vec<Vec<usize>> {
            if items.len() <= 1 {
                return vec![items];
            }
            let mut out = Vec::new();
            for i in 0..items.len() {
                let mut rest = items.clone();
                let head = rest.remove(i);
                for mut p in perms(rest) {
                    p.insert(0, head);
                    out.push(p);
                }
            }
            out
        }
        let n = a.len();
        perms((0..n).collect())
            .into_iter()
            .map(|p| p.iter().enumerate().map(|(i, &j)| (a[i] - b[j]).powi(2)).sum::<f64>() / n as f64)
            .fold(f64::INFINITY, f64::min)
            .sqrt()
    }

    #[test]
    fn one_dimensional_translation() {
        let a = Tensor::new(&[4, 1], vec![0.0, 1.0, 5.0, -2.0]).unwrap();
        let b = a.offset(0.75).unwrap();
        let v = sliced_w2(&a, &b, 16, &mut Rng::new(0)).unwrap();
        assert!((v - 0.75).abs() < 1e-12);
        assert_eq!(sliced_w2(&a, &a, 16, &mut Rng::new(0)).unwrap(), 0.0);
    }

    #[test]
    fn small_sets_match_assignment_brute_force() {
        let mut rng = Rng::new(3);
        let a = rng.standard_normal(&[4, 2]);
        let b = rng.standard_normal(&[4, 2]).offset(0.5).unwrap();
        let dirs = random_directions(2, 20, &mut rng);
        let got = sliced_w2_directions(&a, &b, &dirs).unwrap();
        for (u, g) in dirs.iter().zip(got) {
            let want = w2_by_permutation(&project(&a, u), &project(&b, u));
            assert!((g - want).abs() < 1e-12, "{g} vs {want}");
        }
    }

    #[test]
    fn unequal_sizes_merge_quantiles() {
        // {0, 1} vs {0, 0, 1, 1} is the same measure.
        assert_eq!(w2_1d(&mut [0.0, 1.0], &mut [1.0, 0.0, 0.0, 1.0]).unwrap(), 0.0);
        // {0} vs {0, 3}: half the mass moves 3, W2 = sqrt(9/2).
        let v = w2_1d(&mut [0.0], &mut [0.0, 3.0]).unwrap();
        assert!((v - 4.5f64.sqrt()).abs() < 1e-15);
        // {0, 1, 2} vs {0, 2}: quantile pieces of length 1/3, 1/6, 1/6, 1/3.
        let v = w2_1d(&mut [0.0, 1.0, 2.0], &mut [0.0, 2.0]).unwrap();
        assert!((v - (1.0f64 / 6.0 + 1.0 / 6.0).sqrt()).abs() < 1e-15);
        assert!(w2_1d(&mut [], &mut [1.0]).is_err());
    }

    /// Exhaustive oracle that scans every ball and keeps all distances.
    fn precision_oracle(g: &[[f64; 2]], r: &[[f64; 2]], k: usize) -> f64 {
        let d = |a: &[f64; 2], b: &[f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        let radius: Vec<f64> = (0..r.len())
            .map(|i| {
                let mut ds: Vec<f64> = (0..r.len()).filter(|&j| j != i).map(|j| d(&r[i], &r[j])).collect();
                ds.sort_by(f64::total_cmp);
                ds[k - 1]
            })
            .collect();
        let inside = g.iter().filter(|p| r.iter().zip(&radius).any(|(c, &rad)| d(p, c) <= rad)).count();
        inside as f64 / g.len() as f64
    }

    #[test]
    fn hand_configuration_matches_exhaustive_oracle() {
        let r = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [5.0, 5.0]];
        let g = [[0.5, 0.5], [3.0, 3.0], [1.2, 0.0], [9.0, 9.0], [5.0, 4.0]];
        let flat = |s: &[[f64; 2]]| Tensor::new(&[s.len(), 2], s.iter().flatten().copied().collect()).unwrap();
        for k in 1..=3 {
            let (p, rc) = knn_precision_recall(&flat(&g), &flat(&r), k).unwrap();
            assert_eq!(p, precision_oracle(&g, &r, k), "k={k}");
            assert_eq!(rc, precision_oracle(&r, &g, k), "k={k}");
        }
    }

    #[test]
    fn precision_recall_extremes() {
        let x = Rng::new(1).standard_normal(&[40, 2]);
        assert_eq!(knn_precision_recall(&x, &x, 5).unwrap(), (1.0, 1.0));
        let far = x.offset(1e6).unwrap();
        assert_eq!(knn_precision_recall(&x, &far, 5).unwrap(), (0.0, 0.0));
        assert!(knn_precision_recall(&x, &Tensor::zeros(&[5, 2]), 5).is_err());
    }

    #[test]
    fn mode_coverage_cases() {
        let d = ToyDistribution::new(ToyKind::EightGaussians);
        let (centers, _) = d.modes().unwrap();
        let exact = Tensor::new(&[8, 2], centers.iter().flatten().copied().collect()).unwrap();
        assert_eq!(mode_coverage(&exact, &d).unwrap(), 1.0);
        let one = Tensor::new(&[3, 2], [centers[2]; 3].iter().flatten().copied().collect()).unwrap();
        assert_eq!(mode_coverage(&one, &d).unwrap(), 0.125);
        for seed in 0..10 {
            let x = sample_data(&d, 10_000, &mut Rng::new(seed)).unwrap();
            assert_eq!(mode_coverage(&x, &d).unwrap(), 1.0);
        }
        assert!(mode_coverage(&exact, &ToyDistribution::new(ToyKind::TwoMoons)).is_err());
    }

    #[test]
    fn report_fields_and_csv_row() {
        let d = ToyDistribution::default();
        let g = sample_data(&d, 300, &mut Rng::new(1)).unwrap();
        let r = sample_data(&d, 300, &mut Rng::new(2)).unwrap();
        let cfg = EvalConfig { n_eval: 300, n_projections: 32, ..EvalConfig::default() };
        let rep = evaluate(&g, &r, &d, &cfg, 0).unwrap();
        assert!(rep.sliced_w2 > 0.0 && rep.sliced_w2 < 0.5, "{rep:?}");
        assert!(rep.sliced_w2_std > 0.0);
        assert!((0.0..=1.0).contains(&rep.precision) && (0.0..=1.0).contains(&rep.recall));
        assert_eq!(rep.mode_coverage, Some(1.0));
        assert_eq!(rep.csv_row().split(',').count(), MetricReport::CSV_HEADER.split(',').count());
        assert_eq!(rep, evaluate(&g, &r, &d, &cfg, 0).unwrap());
    }

    fn cloud(max: usize) -> impl Strategy<Value = Vec<f64>> {
        (2..max).prop_flat_map(|n| proptest::collection::vec(-5.0f64..5.0, 2 * n))
    }

    proptest! {
        #[test]
        fn sliced_w2_is_symmetric_nonnegative(a in cloud(12), b in cloud(12), seed in any::<u64>()) {
            let ta = Tensor::new(&[a.len() / 2, 2], a).unwrap();
            let tb = Tensor::new(&[b.len() / 2, 2], b).unwrap();
            let ab = sliced_w2(&ta, &tb, 8, &mut Rng::new(seed)).unwrap();
            let ba = sliced_w2(&tb, &ta, 8, &mut Rng::new(seed)).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
            prop_assert_eq!(sliced_w2(&ta, &ta, 8, &mut Rng::new(seed)).unwrap(), 0.0);
        }

        #[test]
        fn knn_is_permutation_invariant(a in cloud(14), b in cloud(14), shift in 0usize..20) {
            let (n, m) = (a.len() / 2, b.len() / 2);
            prop_assume!(n > 3 && m > 3);
            let rot = |v: &[f64], s: usize| {
                let rows = v.len() / 2;
                let mut out = Vec::with_capacity(v.len());
                for i in 0..rows {
                    let j = (i * 7 + s) % rows;
                    out.extend_from_slice(&v[2 * j..2 * j + 2]);
                }
                out
            };
            // i ↦ 7i + s is a bijection only when 7 does not divide the row count.
            prop_assume!(n % 7 != 0 && m % 7 != 0);
            let k = 3;
            let base = knn_precision_recall(&Tensor::new(&[n, 2], a.clone()).unwrap(), &Tensor::new(&[m, 2], b.clone()).unwrap(), k).unwrap();
            let perm = knn_precision_recall(&Tensor::new(&[n, 2], rot(&a, shift)).unwrap(), &Tensor::new(&[m, 2], rot(&b, shift)).unwrap(), k).unwrap();
            prop_assert_eq!(base, perm);
        }
    }
}
