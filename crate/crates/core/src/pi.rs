//! Global cap `Π` on squared residuals: the maximum of the concave value
//! function `v` over `{ w ∈ [0,1]ⁿ : eᵀw = q }`.
//!
//! `v` is maximized with away-step Frank–Wolfe. Any vector of squared
//! residuals `g = r(β)²` satisfies `v(w') ≤ gᵀw'` for every `w'`, so the
//! linear maximization oracle yields an upper bound on the optimum at each
//! iterate and the returned gap is certified.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{LtsError, Result};
use crate::regress::{weighted_fit, Dataset, WeightVector};

pub const DEFAULT_TOL: f64 = 1e-6;
pub const MAX_ITER: usize = 5000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiBound {
    pub pi: f64,
    pub q: f64,
    pub iterations: usize,
    pub certified_gap: f64,
}

/// Squared residuals at the weighted least-squares fit for `w`.
pub fn v_supergradient(data: &Dataset, w: &WeightVector) -> Vec<f64> {
    weighted_fit(data, w.as_slice()).residuals.iter().map(|r| r * r).collect()
}

/// Default mass `q = d / 2`.
pub fn default_q(d: usize) -> f64 {
    d as f64 / 2.0
}

/// A vertex of the capped simplex: `⌊q⌋` ones and possibly one fraction.
#[derive(Debug, Clone, PartialEq)]
struct Vertex {
    ones: Vec<usize>,
    frac: Option<(usize, f64)>,
}

impl Vertex {
    fn dense(&self, n: usize) -> DVector<f64> {
        let mut v = DVector::zeros(n);
        for &k in &self.ones {
            v[k] = 1.0;
        }
        if let Some((k, f)) = self.frac {
            v[k] = f;
        }
        v
    }

    fn dot(&self, g: &[f64]) -> f64 {
        self.ones.iter().map(|&k| g[k]).sum::<f64>() + self.frac.map_or(0.0, |(k, f)| f * g[k])
    }
}

fn split_mass(q: f64) -> (usize, f64) {
    let whole = q.floor();
    (whole as usize, q - whole)
}

/// Maximizes `gᵀs` over the capped simplex; ties go to the lower index.
fn linear_oracle(g: &[f64], q: f64) -> Vertex {
    let (whole, frac) = split_mass(q);
    let mut idx: Vec<usize> = (0..g.len()).collect();
    idx.sort_by(|&a, &b| g[b].total_cmp(&g[a]).then(a.cmp(&b)));
    let mut ones = idx[..whole].to_vec();
    ones.sort_unstable();
    let frac = (frac > 0.0 && whole < g.len()).then(|| (idx[whole], frac));
    Vertex { ones, frac }
}

/// Cyclic windows whose uniform average is `(q/n) e`.
fn cyclic_vertices(n: usize, q: f64) -> Vec<Vertex> {
    let (whole, frac) = split_mass(q);
    (0..n)
        .map(|start| {
            let mut ones: Vec<usize> = (0..whole).map(|i| (start + i) % n).collect();
            ones.sort_unstable();
            let frac = (frac > 0.0).then(|| ((start + whole) % n, frac));
            Vertex { ones, frac }
        })
        .collect()
}

struct Eval {
    value: f64,
    grad: Vec<f64>,
}

fn evaluate(data: &Dataset, w: &DVector<f64>) -> Eval {
    let fit = weighted_fit(data, w.as_slice());
    Eval { value: fit.value, grad: fit.residuals.iter().map(|r| r * r).collect() }
}

fn directional(g: &[f64], dir: &DVector<f64>) -> f64 {
    g.iter().zip(dir.iter()).map(|(a, b)| a * b).sum()
}

/// Maximizes the concave `t ↦ v(w + t·dir)` on `[0, t_max]` by bisection on
/// the sign of the directional derivative.
fn line_search(data: &Dataset, w: &DVector<f64>, dir: &DVector<f64>, t_max: f64) -> (f64, Eval) {
    let at = |t: f64| evaluate(data, &(w + dir * t));
    let end = at(t_max);
    if directional(&end.grad, dir) >= 0.0 {
        return (t_max, end);
    }
    let (mut lo, mut hi) = (0.0, t_max);
    for _ in 0..48 {
        let mid = 0.5 * (lo + hi);
        if directional(&at(mid).grad, dir) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * t_max {
            break;
        }
    }
    let t = 0.5 * (lo + hi);
    (t, at(t))
}

/// Estimates `Π = max { v(w) : eᵀw = q, 0 ≤ w ≤ 1 }`.
///
/// On hitting the iteration cap the best value found is returned inside
/// `LtsError::NoConvergence` together with its certified gap.
pub fn estimate_pi(data: &Dataset, q: f64, tol: f64) -> Result<PiBound> {
    let n = data.n();
    if !(q > 0.0 && q <= n as f64) {
        return Err(LtsError::InfeasibleConfig(format!("q = {q} must lie in (0, {n}]")));
    }
    if !(tol > 0.0) {
        return Err(LtsError::InfeasibleConfig("tolerance must be positive".into()));
    }
    if q >= n as f64 {
        let value = weighted_fit(data, &vec![1.0; n]).value;
        return Ok(PiBound { pi: value, q, iterations: 0, certified_gap: 0.0 });
    }

    let mut active: Vec<(Vertex, f64)> = cyclic_vertices(n, q).into_iter().map(|v| (v, 1.0 / n as f64)).collect();
    let mut w = DVector::from_element(n, q / n as f64);
    let mut eval = evaluate(data, &w);
    let mut best = eval.value;
    let mut upper = f64::INFINITY;

    for iter in 0..MAX_ITER {
        let s = linear_oracle(&eval.grad, q);
        upper = upper.min(s.dot(&eval.grad));
        let gap = (upper - best).max(0.0);
        if gap <= tol * (1.0 + best) {
            return Ok(PiBound { pi: best, q, iterations: iter, certified_gap: gap });
        }

        let fw_gain = s.dot(&eval.grad) - directional(&eval.grad, &w);
        let (away_idx, away_score) = active
            .iter()
            .enumerate()
            .map(|(i, (v, _))| (i, v.dot(&eval.grad)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .expect("active set is never empty");
        let away_gain = directional(&eval.grad, &w) - away_score;

        if fw_gain >= away_gain || active[away_idx].1 >= 1.0 {
            let dir = s.dense(n) - &w;
            let (t, next) = line_search(data, &w, &dir, 1.0);
            w += dir * t;
            eval = next;
            if t >= 1.0 {
                active.clear();
                active.push((s, 1.0));
            } else {
                for entry in active.iter_mut() {
                    entry.1 *= 1.0 - t;
                }
                match active.iter_mut().find(|(v, _)| *v == s) {
                    Some(entry) => entry.1 += t,
                    None => active.push((s, t)),
                }
            }
        } else {
            let alpha = active[away_idx].1;
            let t_max = alpha / (1.0 - alpha);
            let dir = &w - active[away_idx].0.dense(n);
            let (t, next) = line_search(data, &w, &dir, t_max);
            w += dir * t;
            eval = next;
            for entry in active.iter_mut() {
                entry.1 *= 1.0 + t;
            }
            if t >= t_max {
                active.remove(away_idx);
            } else {
                active[away_idx].1 -= t;
            }
        }
        best = best.max(eval.value);
    }

    let gap = (upper - best).max(0.0);
    let bound = PiBound { pi: best, q, iterations: MAX_ITER, certified_gap: gap };
    if gap <= tol * (1.0 + best) {
        Ok(bound)
    } else {
        Err(LtsError::NoConvergence(Box::new(bound)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regress::ols_fit;

    fn line_data() -> Dataset {
        Dataset::from_rows(
            &[vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0], vec![1.0, 3.0], vec![1.0, 4.0], vec![1.0, 5.0]],
            vec![0.1, 1.2, 1.9, 3.5, 3.8, 5.3],
        )
        .unwrap()
    }

    #[test]
    fn oracle_fills_largest_then_fraction() {
        let v = linear_oracle(&[1.0, 5.0, 3.0, 5.0], 2.5);
        assert_eq!(v.ones, vec![1, 3]);
        assert_eq!(v.frac, Some((2, 0.5)));
    }

    #[test]
    fn cyclic_vertices_average_uniformly() {
        let verts = cyclic_vertices(5, 2.5);
        let mut sum = DVector::zeros(5);
        for v in &verts {
            sum += v.dense(5);
        }
        for k in 0..5 {
            assert!((sum[k] / 5.0 - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn full_mass_is_ols() {
        let data = line_data();
        let b = estimate_pi(&data, 6.0, 1e-6).unwrap();
        let ols = ols_fit(&data, &[0, 1, 2, 3, 4, 5]).unwrap();
        assert!((b.pi - ols.rss()).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_arguments() {
        let data = line_data();
        assert!(estimate_pi(&data, 0.0, 1e-6).is_err());
        assert!(estimate_pi(&data, 7.0, 1e-6).is_err());
        assert!(estimate_pi(&data, 1.0, 0.0).is_err());
    }

    #[test]
    fn gap_is_within_tolerance() {
        let data = line_data();
        for q in [1.0, 2.0, 3.5, 5.0] {
            let b = estimate_pi(&data, q, 1e-8).unwrap();
            assert!(b.certified_gap <= 1e-8 * (1.0 + b.pi), "q = {q}: {b:?}");
        }
    }

    #[test]
    fn exact_fit_has_zero_supergradient() {
        let data = Dataset::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0]], vec![1.0, 3.0, 5.0]).unwrap();
        let g = v_supergradient(&data, &WeightVector::new(vec![1.0; 3]).unwrap());
        assert!(g.iter().all(|&x| x < 1e-20));
    }

    #[test]
    fn deterministic() {
        let data = line_data();
        let a = estimate_pi(&data, 1.0, 1e-6).unwrap();
        let b = estimate_pi(&data, 1.0, 1e-6).unwrap();
        assert_eq!(a.pi.to_bits(), b.pi.to_bits());
        assert_eq!(a.iterations, b.iterations);
    }
}
