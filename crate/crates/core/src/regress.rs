//! Least-squares kernels: subset fits, the weighted value function `v(w)`,
//! incremental updates and the trimmed objective.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};

use crate::error::{LtsError, Result};
use crate::linalg;

/// Design matrix (observations as rows) and responses.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(LtsError::InvalidData("need n >= 1 and d >= 1".into()));
        }
        if x.nrows() != y.len() {
            return Err(LtsError::InvalidData(format!("X has {} rows but y has {} entries", x.nrows(), y.len())));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(LtsError::InvalidData("non-finite entry".into()));
        }
        Ok(Self { x, y })
    }

    /// Builds a dataset from row slices of explicative variables.
    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(LtsError::InvalidData("ragged rows".into()));
        }
        let x = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        Self::new(x, DVector::from_vec(y))
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.x.row(i).transpose()
    }

    /// `y − Xβ` for every observation.
    pub fn residuals(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.y - &self.x * beta
    }

    /// Accumulates `Σ w_k x_k x_kᵀ` and `Σ w_k x_k y_k`.
    fn weighted_normal<I>(&self, weights: I) -> (DMatrix<f64>, DVector<f64>)
    where
        I: IntoIterator<Item = (usize, f64)>,
    {
        let d = self.d();
        let mut m = DMatrix::<f64>::zeros(d, d);
        let mut b = DVector::<f64>::zeros(d);
        for (k, wk) in weights {
            if wk == 0.0 {
                continue;
            }
            let yk = self.y[k];
            for a in 0..d {
                let xa = wk * self.x[(k, a)];
                b[a] += xa * yk;
                for c in 0..=a {
                    m[(a, c)] += xa * self.x[(k, c)];
                }
            }
        }
        for a in 0..d {
            for c in 0..a {
                m[(c, a)] = m[(a, c)];
            }
        }
        (m, b)
    }
}

/// LTS coverage with maximal asymptotic breakdown point.
pub fn default_coverage(n: usize, d: usize) -> usize {
    n / 2 + d.div_ceil(2)
}

/// Observation weights in `[0, 1]ⁿ`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(LtsError::InvalidData("weights must lie in [0, 1]".into()));
        }
        Ok(Self(w))
    }

    /// Indicator vector of `subset`.
    pub fn indicator(n: usize, subset: &[usize]) -> Self {
        let mut w = vec![0.0; n];
        for &k in subset {
            w[k] = 1.0;
        }
        Self(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Least-squares fit on a subset, with a Cholesky factor of its normal matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FitState {
    chol: DMatrix<f64>,
    beta: DVector<f64>,
    residuals: DVector<f64>,
    rss: f64,
    active: Vec<usize>,
    in_active: Vec<bool>,
}

impl FitState {
    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn beta(&self) -> &DVector<f64> {
        &self.beta
    }

    /// Residuals for all `n` observations, not only the active ones.
    pub fn residuals(&self) -> &DVector<f64> {
        &self.residuals
    }

    pub fn rss(&self) -> f64 {
        self.rss
    }

    /// Active observations in insertion order.
    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn contains(&self, k: usize) -> bool {
        self.in_active[k]
    }

    fn finish(
        data: &Dataset,
        chol: DMatrix<f64>,
        beta: DVector<f64>,
        active: Vec<usize>,
        in_active: Vec<bool>,
    ) -> Self {
        let residuals = data.residuals(&beta);
        let rss = active.iter().map(|&k| residuals[k] * residuals[k]).sum();
        Self { chol, beta, residuals, rss, active, in_active }
    }
}

fn check_subset(n: usize, subset: &[usize]) -> Result<Vec<bool>> {
    let mut seen = vec![false; n];
    for &k in subset {
        if k >= n {
            return Err(LtsError::InvalidData(format!("index {k} out of range for n = {n}")));
        }
        if seen[k] {
            return Err(LtsError::InvalidData(format!("duplicate index {k}")));
        }
        seen[k] = true;
    }
    Ok(seen)
}

/// Ordinary least squares restricted to `subset` (0-based indices).
pub fn ols_fit(data: &Dataset, subset: &[usize]) -> Result<FitState> {
    let in_active = check_subset(data.n(), subset)?;
    let (m, b) = data.weighted_normal(subset.iter().map(|&k| (k, 1.0)));
    let chol = linalg::cholesky(&m)?;
    let beta = linalg::cholesky_solve(&chol, &b);
    Ok(FitState::finish(data, chol, beta, subset.to_vec(), in_active))
}

/// Solution of a weighted least-squares problem.
#[derive(Debug, Clone)]
pub struct WeightedFit {
    pub beta: DVector<f64>,
    pub residuals: DVector<f64>,
    pub value: f64,
    /// Whether the ridge fallback was needed.
    pub ridged: bool,
}

/// Weighted least squares at `w`, without any regularization.
///
/// Fails with `RankDeficient` when `M(w)` does not pass the pivot test.
pub fn weighted_fit_exact(data: &Dataset, w: &[f64]) -> Result<WeightedFit> {
    let (m, b) = data.weighted_normal(w.iter().copied().enumerate());
    let chol = linalg::cholesky(&m)?;
    let beta = linalg::cholesky_solve(&chol, &b);
    Ok(weighted_finish(data, w, beta, false))
}

/// Weighted least squares at `w`, total on `[0, 1]ⁿ`.
///
/// A singular `M(w)` is regularized with `ε I`, `ε = 1e-8 · trace(M) / d`.
pub fn weighted_fit(data: &Dataset, w: &[f64]) -> WeightedFit {
    let d = data.d();
    let (m, b) = data.weighted_normal(w.iter().copied().enumerate());
    let trace = m.trace();
    if !(trace > 0.0) {
        return weighted_finish(data, w, DVector::zeros(d), true);
    }
    if let Ok(chol) = linalg::cholesky(&m) {
        let beta = linalg::cholesky_solve(&chol, &b);
        return weighted_finish(data, w, beta, false);
    }
    let mut eps = 1e-8 * trace / d as f64;
    loop {
        let mut reg = m.clone();
        for a in 0..d {
            reg[(a, a)] += eps;
        }
        if let Ok(chol) = linalg::cholesky(&reg) {
            let beta = linalg::cholesky_solve(&chol, &b);
            return weighted_finish(data, w, beta, true);
        }
        // Only reachable when the pivot floor bites on a badly scaled M.
        eps *= 10.0;
    }
}

fn weighted_finish(data: &Dataset, w: &[f64], beta: DVector<f64>, ridged: bool) -> WeightedFit {
    let residuals = data.residuals(&beta);
    let value = w.iter().zip(residuals.iter()).map(|(wk, r)| wk * r * r).sum::<f64>().max(0.0);
    WeightedFit { beta, residuals, value, ridged }
}

/// The value function `v(w)`: least weighted sum of squared residuals.
pub fn wls_value(data: &Dataset, w: &WeightVector) -> f64 {
    weighted_fit(data, w.as_slice()).value
}

/// Increase of the subset RSS when observation `j` joins the fit:
/// `r_j² / (1 + x_jᵀ M⁻¹ x_j)`.
pub fn rss_increment(state: &FitState, data: &Dataset, j: usize) -> Result<f64> {
    if state.in_active[j] {
        return Err(LtsError::InvalidData(format!("observation {j} already active")));
    }
    let z = linalg::solve_lower(&state.chol, &data.row(j));
    let kappa = z.norm_squared();
    if !kappa.is_finite() {
        return Err(LtsError::RankDeficient);
    }
    let r = state.residuals[j];
    Ok(r * r / (1.0 + kappa))
}

/// Fit on `active ∪ {j}` from `state` with a rank-one factor update.
pub fn rank_one_add(state: &FitState, data: &Dataset, j: usize) -> Result<FitState> {
    if state.in_active[j] {
        return Err(LtsError::InvalidData(format!("observation {j} already active")));
    }
    let xj = data.row(j);
    // Sherman–Morrison on β: β' = β + M⁻¹x_j · r_j / (1 + x_jᵀM⁻¹x_j).
    let z = linalg::cholesky_solve(&state.chol, &xj);
    let kappa = xj.dot(&z);
    if !kappa.is_finite() {
        return Err(LtsError::RankDeficient);
    }
    let beta = &state.beta + z * (state.residuals[j] / (1.0 + kappa));
    let mut chol = state.chol.clone();
    linalg::rank_one_update(&mut chol, &xj)?;
    let mut active = Vec::with_capacity(state.active.len() + 1);
    active.extend_from_slice(&state.active);
    active.push(j);
    let mut in_active = state.in_active.clone();
    in_active[j] = true;
    Ok(FitState::finish(data, chol, beta, active, in_active))
}

/// Total order on observations by `(|r|, index)`.
fn by_abs_then_index(residuals: &DVector<f64>) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| residuals[a].abs().total_cmp(&residuals[b].abs()).then(a.cmp(&b))
}

/// Indices of the `h` smallest absolute residuals, ties broken by index,
/// returned in ascending index order.
pub fn smallest_residuals(residuals: &DVector<f64>, h: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..residuals.len()).collect();
    idx.sort_by(by_abs_then_index(residuals));
    idx.truncate(h);
    idx.sort_unstable();
    idx
}

/// Sum of the `h` smallest squared residuals of `beta`.
pub fn lts_objective(data: &Dataset, beta: &DVector<f64>, h: usize) -> f64 {
    let r = data.residuals(beta);
    let mut idx: Vec<usize> = (0..r.len()).collect();
    idx.sort_by(by_abs_then_index(&r));
    idx.iter().take(h).map(|&k| r[k] * r[k]).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Dataset {
        // d = 1, five points
        Dataset::from_rows(&[vec![1.0], vec![2.0], vec![-1.0], vec![3.0], vec![0.5]], vec![2.1, 3.9, -2.2, 6.5, 0.7])
            .unwrap()
    }

    #[test]
    fn closed_form_slope_through_origin() {
        let data = small();
        let fit = ols_fit(&data, &[0, 1, 2, 3, 4]).unwrap();
        // Σxy / Σx² by hand: (2.1 + 7.8 + 2.2 + 19.5 + 0.35) / (1 + 4 + 1 + 9 + 0.25)
        let expect = 31.95 / 15.25;
        assert!((fit.beta()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn d_points_fit_exactly() {
        let data = Dataset::from_rows(
            &[vec![1.0, 0.0], vec![0.3, 1.0], vec![2.0, 2.0], vec![1.0, -1.0]],
            vec![5.0, -1.0, 7.0, 0.0],
        )
        .unwrap();
        let fit = ols_fit(&data, &[1, 3]).unwrap();
        assert!(fit.rss() < 1e-20);
        assert_eq!(fit.residuals().len(), 4);
    }

    #[test]
    fn rank_deficient_subset() {
        let data = Dataset::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![0.0, 1.0]], vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(ols_fit(&data, &[0, 1]), Err(LtsError::RankDeficient)));
        assert!(ols_fit(&data, &[0, 2]).is_ok());
    }

    #[test]
    fn invalid_inputs() {
        assert!(Dataset::from_rows(&[vec![f64::NAN]], vec![1.0]).is_err());
        assert!(Dataset::from_rows(&[vec![1.0]], vec![1.0, 2.0]).is_err());
        assert!(WeightVector::new(vec![0.5, 1.5]).is_err());
        let data = small();
        assert!(ols_fit(&data, &[0, 0]).is_err());
        assert!(ols_fit(&data, &[9]).is_err());
    }

    #[test]
    fn value_at_extremes() {
        let data = small();
        let full = ols_fit(&data, &[0, 1, 2, 3, 4]).unwrap();
        let v = wls_value(&data, &WeightVector::new(vec![1.0; 5]).unwrap());
        assert!((v - full.rss()).abs() < 1e-12);
        assert_eq!(wls_value(&data, &WeightVector::new(vec![0.0; 5]).unwrap()), 0.0);
    }

    #[test]
    fn singular_weights_use_ridge() {
        let data = Dataset::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]], vec![1.0, 2.0, 0.0]).unwrap();
        let fit = weighted_fit(&data, &[0.5, 0.0, 0.0]);
        assert!(fit.ridged);
        assert!(fit.value >= 0.0 && fit.value < 1e-6);
    }

    #[test]
    fn trimmed_objective_hand_sorted() {
        // d = 1 with x = 0 makes residuals equal to y for any β.
        let y = vec![3.0, 1.0, -2.0, 0.0, 5.0, -1.0];
        let data = Dataset::from_rows(&vec![vec![0.0]; 6], y).unwrap();
        let beta = DVector::from_vec(vec![0.0]);
        assert_eq!(lts_objective(&data, &beta, 3), 2.0);
        assert_eq!(lts_objective(&data, &beta, 6), 40.0);
        assert_eq!(smallest_residuals(&data.residuals(&beta), 3), vec![1, 3, 5]);
    }

    #[test]
    fn ties_break_by_index() {
        let y = vec![1.0, -1.0, 1.0, 0.5];
        let data = Dataset::from_rows(&vec![vec![0.0]; 4], y).unwrap();
        let r = data.residuals(&DVector::from_vec(vec![0.0]));
        assert_eq!(smallest_residuals(&r, 2), vec![0, 3]);
    }

    #[test]
    fn increment_zero_for_exact_point() {
        let data = Dataset::from_rows(
            &[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0], vec![2.0, 1.0]],
            vec![1.0, 2.0, 3.0, 4.5],
        )
        .unwrap();
        let fit = ols_fit(&data, &[0, 1]).unwrap();
        assert!(rss_increment(&fit, &data, 2).unwrap().abs() < 1e-24);
        assert!(rss_increment(&fit, &data, 3).unwrap() > 0.0);
        assert!(rss_increment(&fit, &data, 0).is_err());
    }

    #[test]
    fn duplicate_row_adds_outer_product() {
        let data = Dataset::from_rows(
            &[vec![1.0, 0.2], vec![0.1, 1.0], vec![1.0, 1.0], vec![1.0, 0.2]],
            vec![1.0, 2.0, 3.0, 1.1],
        )
        .unwrap();
        let fit = ols_fit(&data, &[0, 1, 2]).unwrap();
        let next = rank_one_add(&fit, &data, 3).unwrap();
        let before = fit.chol() * fit.chol().transpose();
        let after = next.chol() * next.chol().transpose();
        let x = data.row(3);
        assert!((after - before - &x * x.transpose()).norm() < 1e-12);
    }
}
