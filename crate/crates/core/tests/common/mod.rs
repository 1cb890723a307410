//! Reference computations for tests, written without the library's kernels.
#![allow(dead_code)]

use lts_core::{generate, Contamination, Dataset, GenSpec};
use nalgebra::{DMatrix, DVector};

/// Least-squares RSS on `rows` via SVD of the row-selected design.
pub fn subset_rss(data: &Dataset, rows: &[usize]) -> Option<f64> {
    let d = data.d();
    let x = DMatrix::from_fn(rows.len(), d, |i, j| data.x()[(rows[i], j)]);
    let y = DVector::from_fn(rows.len(), |i, _| data.y()[rows[i]]);
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() <= 1e-10 * smax.max(1.0) {
        return None;
    }
    let beta = svd.solve(&y, 0.0).ok()?;
    Some((y - x * beta).norm_squared())
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Exhaustive LTS optimum: (objective, subset).
pub fn lts_oracle(data: &Dataset, h: usize) -> (f64, Vec<usize>) {
    combinations(data.n(), h)
        .into_iter()
        .filter_map(|s| subset_rss(data, &s).map(|r| (r, s)))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("some full-rank subset")
}

/// Largest RSS over all `q`-subsets.
pub fn max_subset_rss(data: &Dataset, q: usize) -> f64 {
    combinations(data.n(), q).iter().filter_map(|s| subset_rss(data, s)).fold(0.0, f64::max)
}

pub fn coverage(n: usize, d: usize) -> usize {
    n / 2 + d.div_ceil(2)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Uncontaminated instances with `n` in 10..=14 and `d` in 2..=4.
pub fn clean_instances(count: usize, seed: u64) -> Vec<Dataset> {
    (0..count)
        .map(|i| {
            let (n, d) = (10 + i % 5, 2 + (i / 5) % 3);
            let spec = GenSpec::new(n, d, Contamination::Vertical, seed + i as u64).with_outliers(0);
            generate(&spec).unwrap().0
        })
        .collect()
}

/// Instances with three outliers, alternating high-leverage and heavy-tail.
pub fn contaminated_instances(count: usize, seed: u64) -> Vec<(Contamination, Dataset)> {
    (0..count)
        .map(|i| {
            let ty = if i % 2 == 0 { Contamination::HighLeverage } else { Contamination::HeavyTail };
            let (n, d) = (10 + (i / 2) % 5, 2 + (i / 10) % 3);
            let spec = GenSpec::new(n, d, ty, seed + i as u64).with_outliers(3);
            (ty, generate(&spec).unwrap().0)
        })
        .collect()
}
