//! Search drivers: relaxation-bounded branch and bound, the monotone-bound
//! baseline, and exhaustive enumeration.

use std::time::{Duration, Instant};

use log::{debug, warn};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{LtsError, Result};
use crate::local_search::{c_steps, Incumbent, DEFAULT_MAX_ITER};
use crate::pi::{self, estimate_pi};
use crate::regress::{default_coverage, ols_fit, rank_one_add, rss_increment, smallest_residuals, Dataset, FitState};
use crate::socp::{self, build_node_problem, solve_relaxation, RelaxationStatus};
use crate::tree::{binomial, dfs, leaves_below, ChildOrder, Decision, NodeState, Visitor};

/// Leaf count above which a node's relaxation is solved.
pub const DEFAULT_SOCP_LEAF_THRESHOLD: u64 = 1_000_000;
/// Threshold value that disables relaxation bounds entirely.
pub const NEVER: u64 = u64::MAX;
/// Floor on `Π` so that caps stay positive on exactly fitting data.
const MIN_PI: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Branch and bound with relaxation bounds at the top levels.
    Sbb,
    /// Branch and bound with the monotonicity bound only.
    Bba,
    /// Exhaustive enumeration of all `h`-subsets.
    Brute,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "sbb" | "s-bb" => Ok(Mode::Sbb),
            "bba" => Ok(Mode::Bba),
            "brute" => Ok(Mode::Brute),
            other => Err(format!("unknown mode '{other}' (expected sbb, bba or brute)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub mode: Mode,
    /// Coverage; `None` means `⌊n/2⌋ + ⌊(d+1)/2⌋`.
    pub h: Option<usize>,
    /// Mass for the `Π` estimate; `None` means `d/2`.
    pub q: Option<f64>,
    /// `NEVER` disables relaxations.
    pub socp_leaf_threshold: u64,
    /// Deepest level at which relaxations are solved; `None` means `d`.
    pub socp_max_depth: Option<usize>,
    pub tol_relax: f64,
    pub tol_pi: f64,
    /// Also prune on inconsistent relaxations. Not exact.
    pub unsafe_inconsistent_prune: bool,
    /// Concentration steps at the start and at every evaluated leaf.
    pub local_search: bool,
    pub max_cstep_iter: usize,
    /// Keep a log of every prune decision in the report.
    pub record_prunes: bool,
}

impl SolverConfig {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            h: None,
            q: None,
            socp_leaf_threshold: DEFAULT_SOCP_LEAF_THRESHOLD,
            socp_max_depth: None,
            tol_relax: socp::DEFAULT_TOL,
            tol_pi: pi::DEFAULT_TOL,
            unsafe_inconsistent_prune: false,
            local_search: mode == Mode::Sbb,
            max_cstep_iter: DEFAULT_MAX_ITER,
            record_prunes: false,
        }
    }

    pub fn coverage(&self, n: usize, d: usize) -> usize {
        self.h.unwrap_or_else(|| default_coverage(n, d))
    }

    pub fn mass(&self, d: usize) -> f64 {
        self.q.unwrap_or_else(|| pi::default_q(d))
    }

    fn validate(&self, n: usize, d: usize) -> Result<()> {
        let h = self.coverage(n, d);
        if h < d || h > n || h == 0 {
            return Err(LtsError::InfeasibleConfig(format!("need d <= h <= n, got d = {d}, h = {h}, n = {n}")));
        }
        let q = self.mass(d);
        if self.mode == Mode::Sbb && !(q > 0.0 && q <= n as f64) {
            return Err(LtsError::InfeasibleConfig(format!("q = {q} must lie in (0, n]")));
        }
        if !(self.tol_relax > 0.0 && self.tol_pi > 0.0) {
            return Err(LtsError::InfeasibleConfig("tolerances must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneKind {
    Monotone,
    Relaxation,
}

/// One prune decision, with the values that triggered it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneEvent {
    pub kind: PruneKind,
    pub s1: Vec<usize>,
    pub s0: Vec<usize>,
    pub bound: f64,
    pub incumbent: f64,
    pub consistent: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub mode: Mode,
    pub h: usize,
    pub beta: DVector<f64>,
    /// Ascending 0-based indices.
    pub subset: Vec<usize>,
    pub objective: f64,
    /// `Π` used for the caps, in relaxation-bounded mode.
    pub pi: Option<f64>,
    pub nodes_visited: u64,
    pub leaves_visited: u64,
    pub monotone_prunes: u64,
    pub socp_calls: u64,
    pub socp_prunes: u64,
    pub inconsistent_relaxations: u64,
    pub unconverged_relaxations: u64,
    pub incumbent_updates: u64,
    pub prunes: Vec<PruneEvent>,
    pub elapsed: Duration,
}

impl SolveReport {
    /// Equality of everything except wall-clock time.
    pub fn same_outcome(&self, other: &Self) -> bool {
        Self { elapsed: Duration::ZERO, ..self.clone() } == Self { elapsed: Duration::ZERO, ..other.clone() }
    }
}

/// Replaces `current` by `candidate` if it is better by more than `1e-12`.
pub fn update_incumbent(current: &mut Incumbent, candidate: Incumbent) -> bool {
    if candidate.objective < current.objective - 1e-12 {
        *current = candidate;
        true
    } else {
        false
    }
}

fn empty_incumbent(d: usize) -> Incumbent {
    Incumbent { subset: Vec::new(), beta: DVector::zeros(d), objective: f64::INFINITY }
}

pub fn solve(data: &Dataset, cfg: &SolverConfig) -> Result<SolveReport> {
    let (n, d) = (data.n(), data.d());
    cfg.validate(n, d)?;
    let started = Instant::now();
    let mut report = match cfg.mode {
        Mode::Brute => solve_brute(data, cfg.coverage(n, d))?,
        Mode::Bba | Mode::Sbb => solve_tree(data, cfg)?,
    };
    report.elapsed = started.elapsed();
    Ok(report)
}

/// Lexicographic successor of a `k`-combination of `0..n`.
fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    let Some(i) = (0..k).rev().find(|&i| c[i] < n - k + i) else {
        return false;
    };
    c[i] += 1;
    for j in (i + 1)..k {
        c[j] = c[j - 1] + 1;
    }
    true
}

fn solve_brute(data: &Dataset, h: usize) -> Result<SolveReport> {
    let (n, d) = (data.n(), data.d());
    let mut best = empty_incumbent(d);
    let mut subset: Vec<usize> = (0..h).collect();
    let mut count = 0u64;
    let mut updates = 0u64;
    loop {
        count += 1;
        match ols_fit(data, &subset) {
            Ok(fit) => {
                if fit.rss() < best.objective {
                    best = Incumbent::from_fit(&fit);
                    updates += 1;
                }
            }
            Err(LtsError::RankDeficient) => {}
            Err(e) => return Err(e),
        }
        if !next_combination(&mut subset, n) {
            break;
        }
    }
    if best.objective.is_infinite() {
        return Err(LtsError::RankDeficientData);
    }
    Ok(SolveReport {
        mode: Mode::Brute,
        h,
        beta: best.beta,
        subset: best.subset,
        objective: best.objective,
        pi: None,
        nodes_visited: count,
        leaves_visited: count,
        monotone_prunes: 0,
        socp_calls: 0,
        socp_prunes: 0,
        inconsistent_relaxations: 0,
        unconverged_relaxations: 0,
        incumbent_updates: updates,
        prunes: Vec::new(),
        elapsed: Duration::ZERO,
    })
}

struct Search<'a> {
    data: &'a Dataset,
    cfg: &'a SolverConfig,
    h: usize,
    socp_max_depth: usize,
    pi: Option<f64>,
    incumbent: Incumbent,
    leaves: u64,
    monotone_prunes: u64,
    socp_calls: u64,
    socp_prunes: u64,
    inconsistent: u64,
    unconverged: u64,
    updates: u64,
    prunes: Vec<PruneEvent>,
}

impl Search<'_> {
    fn offer(&mut self, candidate: Incumbent) {
        if update_incumbent(&mut self.incumbent, candidate) {
            self.updates += 1;
        }
    }

    fn log_prune(&mut self, kind: PruneKind, node: &NodeState, bound: f64, consistent: bool) {
        if self.cfg.record_prunes {
            self.prunes.push(PruneEvent {
                kind,
                s1: node.s1().to_vec(),
                s0: node.s0().to_vec(),
                bound,
                incumbent: self.incumbent.objective,
                consistent,
            });
        }
    }

    fn evaluate_leaf(&mut self, fit: &FitState) {
        self.leaves += 1;
        self.offer(Incumbent::from_fit(fit));
        if self.cfg.local_search {
            match c_steps(self.data, fit.beta(), self.h, self.cfg.max_cstep_iter) {
                Ok(improved) => self.offer(improved),
                Err(e) => debug!("local search failed at leaf: {e}"),
            }
        }
    }

    /// Relaxation at `node`: `Some(decision)` when it prunes or orders.
    fn relax(&mut self, node: &NodeState, pi: f64) -> Option<Decision> {
        let n = self.data.n();
        self.socp_calls += 1;
        let prob = build_node_problem(self.data, pi, node, self.h).expect("tree nodes are valid relaxation inputs");
        let res = solve_relaxation(&prob, self.cfg.tol_relax);
        match res.status {
            RelaxationStatus::Infeasible => return Some(Decision::Prune),
            RelaxationStatus::GapTooLarge => {
                self.unconverged += 1;
                debug!("relaxation not converged at depth {}", node.depth());
                return None;
            }
            RelaxationStatus::Optimal => {}
        }
        if !res.consistent {
            self.inconsistent += 1;
        }
        if (res.consistent || self.cfg.unsafe_inconsistent_prune) && res.lower_bound > self.incumbent.objective {
            self.socp_prunes += 1;
            self.log_prune(PruneKind::Relaxation, node, res.lower_bound, res.consistent);
            return Some(Decision::Prune);
        }
        let free = node.free(n);
        let scores: Vec<f64> = free.iter().map(|&k| res.residuals[k].powi(2)).collect();
        Some(Decision::Order(ChildOrder::descending(&free, &scores)))
    }
}

impl Visitor for Search<'_> {
    type Payload = Option<FitState>;

    fn visit(&mut self, node: &NodeState, fit: &Option<FitState>) -> Decision {
        let n = self.data.n();
        if let Some(fit) = fit {
            if fit.rss() >= self.incumbent.objective {
                self.monotone_prunes += 1;
                self.log_prune(PruneKind::Monotone, node, fit.rss(), true);
                return Decision::Prune;
            }
        }
        if node.is_leaf(self.h) {
            if let Some(fit) = fit {
                self.evaluate_leaf(fit);
            }
            return Decision::Prune;
        }
        if let Some(pi) = self.pi {
            let threshold = self.cfg.socp_leaf_threshold;
            if node.depth() <= self.socp_max_depth
                && threshold != NEVER
                && leaves_below(node, n, self.h) > threshold as u128
            {
                if let Some(decision) = self.relax(node, pi) {
                    return decision;
                }
            }
        }
        match fit {
            Some(fit) => {
                let free = node.free(n);
                let inc: Vec<f64> =
                    free.iter().map(|&k| rss_increment(fit, self.data, k).unwrap_or(f64::INFINITY)).collect();
                Decision::Order(ChildOrder::ascending(&free, &inc))
            }
            None => Decision::Descend,
        }
    }

    fn derive(&mut self, parent: &Option<FitState>, child: &NodeState, added: usize) -> Option<FitState> {
        if let Some(fit) = parent {
            if let Ok(next) = rank_one_add(fit, self.data, added) {
                return Some(next);
            }
        }
        if child.depth() >= self.data.d() {
            ols_fit(self.data, child.s1()).ok()
        } else {
            None
        }
    }
}

fn initial_incumbent(data: &Dataset, cfg: &SolverConfig, h: usize) -> Result<Incumbent> {
    let n = data.n();
    let all: Vec<usize> = (0..n).collect();
    let ls = match ols_fit(data, &all) {
        Ok(fit) => fit,
        Err(LtsError::RankDeficient) => return Err(LtsError::RankDeficientData),
        Err(e) => return Err(e),
    };
    if cfg.local_search {
        return match c_steps(data, ls.beta(), h, cfg.max_cstep_iter) {
            Ok(inc) => Ok(inc),
            Err(LtsError::RankDeficient) => Ok(empty_incumbent(data.d())),
            Err(e) => Err(e),
        };
    }
    Ok(match ols_fit(data, &smallest_residuals(ls.residuals(), h)) {
        Ok(fit) => Incumbent::from_fit(&fit),
        Err(_) => empty_incumbent(data.d()),
    })
}

fn solve_tree(data: &Dataset, cfg: &SolverConfig) -> Result<SolveReport> {
    let (n, d) = (data.n(), data.d());
    let h = cfg.coverage(n, d);
    let incumbent = initial_incumbent(data, cfg, h)?;

    let pi = if cfg.mode == Mode::Sbb && cfg.socp_leaf_threshold != NEVER {
        let bound = match estimate_pi(data, cfg.mass(d), cfg.tol_pi) {
            Ok(b) => b,
            Err(LtsError::NoConvergence(b)) => {
                warn!("Pi estimate stopped with gap {:.3e}; using best value", b.certified_gap);
                *b
            }
            Err(e) => return Err(e),
        };
        Some(bound.pi.max(MIN_PI))
    } else {
        None
    };

    let mut search = Search {
        data,
        cfg,
        h,
        socp_max_depth: cfg.socp_max_depth.unwrap_or(d),
        pi,
        incumbent,
        leaves: 0,
        monotone_prunes: 0,
        socp_calls: 0,
        socp_prunes: 0,
        inconsistent: 0,
        unconverged: 0,
        updates: 0,
        prunes: Vec::new(),
    };
    let stats = dfs(NodeState::root(), None, n, h, &mut search);

    if search.incumbent.objective.is_infinite() {
        return Err(LtsError::RankDeficientData);
    }
    let best = ols_fit(data, &search.incumbent.subset)?;
    Ok(SolveReport {
        mode: cfg.mode,
        h,
        beta: best.beta().clone(),
        subset: search.incumbent.subset.clone(),
        objective: best.rss(),
        pi,
        nodes_visited: stats.nodes_visited,
        leaves_visited: search.leaves,
        monotone_prunes: search.monotone_prunes,
        socp_calls: search.socp_calls,
        socp_prunes: search.socp_prunes,
        inconsistent_relaxations: search.inconsistent,
        unconverged_relaxations: search.unconverged,
        incumbent_updates: search.updates,
        prunes: search.prunes,
        elapsed: Duration::ZERO,
    })
}

/// Number of leaves a brute-force run enumerates.
pub fn brute_force_size(n: usize, h: usize) -> u128 {
    binomial(n, h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Dataset {
        let rows: Vec<Vec<f64>> = (0..11).map(|i| vec![1.0, (i as f64 * 0.37).sin() * 3.0]).collect();
        let mut y: Vec<f64> =
            rows.iter().enumerate().map(|(i, r)| 1.0 + 2.0 * r[1] + 0.1 * ((i * 5 % 7) as f64 - 3.0)).collect();
        y[3] += 15.0;
        y[8] -= 12.0;
        Dataset::from_rows(&rows, y).unwrap()
    }

    #[test]
    fn combinations_are_lexicographic() {
        let mut c = vec![0, 1];
        let mut all = vec![c.clone()];
        while next_combination(&mut c, 4) {
            all.push(c.clone());
        }
        assert_eq!(all, vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]);
    }

    #[test]
    fn default_coverage_formula() {
        let cfg = SolverConfig::new(Mode::Sbb);
        assert_eq!(cfg.coverage(30, 12), 21);
        assert_eq!(cfg.coverage(14, 3), 9);
    }

    #[test]
    fn incumbent_updates() {
        let mut cur = empty_incumbent(1);
        let cand = |v: f64| Incumbent { subset: vec![0], beta: DVector::zeros(1), objective: v };
        assert!(update_incumbent(&mut cur, cand(3.0)));
        assert!(!update_incumbent(&mut cur, cand(3.0)));
        assert!(update_incumbent(&mut cur, cand(1.0)));
        assert!(!update_incumbent(&mut cur, cand(2.0)));
        assert_eq!(cur.objective, 1.0);
    }

    #[test]
    fn replayed_updates_keep_minimum() {
        let values = [5.0, 7.0, 2.5, 2.5 + 1e-13, 3.0, 0.25, 9.0];
        let mut cur = empty_incumbent(1);
        for &v in &values {
            update_incumbent(&mut cur, Incumbent { subset: vec![0], beta: DVector::zeros(1), objective: v });
        }
        assert_eq!(cur.objective, 0.25);
    }

    #[test]
    fn modes_agree_on_small_instance() {
        let data = sample();
        let brute = solve(&data, &SolverConfig::new(Mode::Brute)).unwrap();
        let bba = solve(&data, &SolverConfig::new(Mode::Bba)).unwrap();
        let mut sbb_cfg = SolverConfig::new(Mode::Sbb);
        sbb_cfg.socp_leaf_threshold = 0;
        let sbb = solve(&data, &sbb_cfg).unwrap();
        assert!((bba.objective - brute.objective).abs() <= 1e-9 * brute.objective.max(1e-300));
        assert!(sbb.socp_calls > 0);
        assert!(sbb.objective >= brute.objective - 1e-9);
        assert!(!brute.subset.contains(&3) && !brute.subset.contains(&8));
    }

    #[test]
    fn full_coverage_is_ols() {
        let data = sample();
        let mut cfg = SolverConfig::new(Mode::Bba);
        cfg.h = Some(11);
        let rep = solve(&data, &cfg).unwrap();
        let ols = ols_fit(&data, &(0..11).collect::<Vec<_>>()).unwrap();
        assert!((rep.objective - ols.rss()).abs() < 1e-10 * ols.rss());
    }

    #[test]
    fn infeasible_coverage() {
        let data = sample();
        let mut cfg = SolverConfig::new(Mode::Bba);
        cfg.h = Some(1);
        assert!(matches!(solve(&data, &cfg), Err(LtsError::InfeasibleConfig(_))));
        cfg.h = Some(12);
        assert!(matches!(solve(&data, &cfg), Err(LtsError::InfeasibleConfig(_))));
    }

    #[test]
    fn rank_deficient_data() {
        let rows = vec![vec![1.0, 2.0]; 6];
        let data = Dataset::from_rows(&rows, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert!(matches!(solve(&data, &SolverConfig::new(Mode::Bba)), Err(LtsError::RankDeficientData)));
        assert!(matches!(solve(&data, &SolverConfig::new(Mode::Brute)), Err(LtsError::RankDeficientData)));
    }

    #[test]
    fn prune_log_matches_counters() {
        let data = sample();
        let mut cfg = SolverConfig::new(Mode::Sbb);
        cfg.socp_leaf_threshold = 0;
        cfg.record_prunes = true;
        let rep = solve(&data, &cfg).unwrap();
        let mono = rep.prunes.iter().filter(|p| p.kind == PruneKind::Monotone).count() as u64;
        let relax = rep.prunes.iter().filter(|p| p.kind == PruneKind::Relaxation).count() as u64;
        assert_eq!(mono, rep.monotone_prunes);
        assert_eq!(relax, rep.socp_prunes);
        assert!(rep.prunes.iter().all(|p| p.bound >= p.incumbent && p.consistent));
    }
}
