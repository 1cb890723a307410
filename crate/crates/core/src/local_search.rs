//! Concentration steps: fit, keep the `h` smallest absolute residuals, refit.

use nalgebra::DVector;

use crate::error::{LtsError, Result};
use crate::regress::{ols_fit, smallest_residuals, Dataset, FitState};

pub const DEFAULT_MAX_ITER: usize = 50;

/// An `h`-subset with its least-squares fit.
#[derive(Debug, Clone, PartialEq)]
pub struct Incumbent {
    /// Ascending 0-based indices.
    pub subset: Vec<usize>,
    pub beta: DVector<f64>,
    /// RSS of the least-squares fit on `subset`.
    pub objective: f64,
}

impl Incumbent {
    pub fn from_fit(fit: &FitState) -> Self {
        let mut subset = fit.active().to_vec();
        subset.sort_unstable();
        Self { subset, beta: fit.beta().clone(), objective: fit.rss() }
    }
}

/// Fits the `h` observations with smallest `|r|`. When that subset is rank
/// deficient, its worst member is swapped for the next-smallest outsider
/// until a full-rank subset is found.
fn fit_smallest(data: &Dataset, residuals: &DVector<f64>, h: usize) -> Result<FitState> {
    match ols_fit(data, &smallest_residuals(residuals, h)) {
        Err(LtsError::RankDeficient) => {}
        other => return other,
    }
    let mut ranked: Vec<usize> = (0..data.n()).collect();
    ranked.sort_by(|&a, &b| residuals[a].abs().total_cmp(&residuals[b].abs()).then(a.cmp(&b)));
    for &swap_in in &ranked[h..] {
        for drop in (0..h).rev() {
            let mut trial = ranked[..h].to_vec();
            trial[drop] = swap_in;
            trial.sort_unstable();
            if let Ok(fit) = ols_fit(data, &trial) {
                return Ok(fit);
            }
        }
    }
    Err(LtsError::RankDeficient)
}

/// Outcome of a concentration-step run.
#[derive(Debug, Clone)]
pub struct CStepTrace {
    pub incumbent: Incumbent,
    /// Objective after each accepted refit; strictly decreasing.
    pub objectives: Vec<f64>,
    /// Whether the run stopped at a fixed point rather than at the cap.
    pub converged: bool,
}

/// Runs concentration steps from `start_beta` until the subset repeats, the
/// objective stops decreasing, or `max_iter` refits have been done.
pub fn c_steps(data: &Dataset, start_beta: &DVector<f64>, h: usize, max_iter: usize) -> Result<Incumbent> {
    c_steps_traced(data, start_beta, h, max_iter).map(|t| t.incumbent)
}

pub fn c_steps_traced(data: &Dataset, start_beta: &DVector<f64>, h: usize, max_iter: usize) -> Result<CStepTrace> {
    if h < data.d() || h > data.n() {
        return Err(LtsError::InfeasibleConfig(format!("coverage h = {h} outside [{}, {}]", data.d(), data.n())));
    }
    let mut residuals = data.residuals(start_beta);
    let mut current: Option<Incumbent> = None;
    let mut objectives = Vec::new();
    let mut converged = false;
    for _ in 0..max_iter.max(1) {
        let fit = fit_smallest(data, &residuals, h)?;
        let next = Incumbent::from_fit(&fit);
        if let Some(cur) = &current {
            if next.subset == cur.subset || next.objective >= cur.objective {
                converged = true;
                break;
            }
        }
        residuals = fit.residuals().clone();
        objectives.push(next.objective);
        current = Some(next);
    }
    Ok(CStepTrace { incumbent: current.expect("at least one refit"), objectives, converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regress::lts_objective;

    fn contaminated() -> Dataset {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![1.0, i as f64]).collect();
        let mut y: Vec<f64> = (0..10).map(|i| 2.0 + 0.5 * i as f64 + 0.01 * ((i * 7) % 3) as f64).collect();
        y[2] = 30.0;
        y[7] = -20.0;
        Dataset::from_rows(&rows, y).unwrap()
    }

    #[test]
    fn full_coverage_is_ols() {
        let data = contaminated();
        let inc = c_steps(&data, &DVector::zeros(2), 10, 50).unwrap();
        let ols = ols_fit(&data, &(0..10).collect::<Vec<_>>()).unwrap();
        assert_eq!(inc.subset, (0..10).collect::<Vec<_>>());
        assert!((inc.objective - ols.rss()).abs() < 1e-10);
    }

    #[test]
    fn recovers_clean_subset() {
        let data = contaminated();
        let inc = c_steps(&data, &DVector::zeros(2), 8, 50).unwrap();
        assert!(!inc.subset.contains(&2) && !inc.subset.contains(&7));
        assert!((lts_objective(&data, &inc.beta, 8) - inc.objective).abs() < 1e-10);
    }

    #[test]
    fn fixed_point_is_stable() {
        let data = contaminated();
        let first = c_steps(&data, &DVector::zeros(2), 6, 50).unwrap();
        let again = c_steps(&data, &first.beta, 6, 50).unwrap();
        assert_eq!(first.subset, again.subset);
        assert!((first.objective - again.objective).abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_selection_is_repaired() {
        // Three identical x rows fit best but are collinear in d = 2.
        let rows = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0]];
        let data = Dataset::from_rows(&rows, vec![0.0, 0.0, 0.0, 5.0, 9.0]).unwrap();
        let inc = c_steps(&data, &DVector::zeros(2), 3, 10).unwrap();
        assert_eq!(inc.subset.len(), 3);
    }

    #[test]
    fn coverage_checked() {
        let data = contaminated();
        assert!(c_steps(&data, &DVector::zeros(2), 1, 5).is_err());
    }
}
