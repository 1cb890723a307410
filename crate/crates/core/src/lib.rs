//! Least Trimmed Squares regression solved exactly by branch and bound over
//! the `h`-subset enumeration tree, with second-order-cone relaxation bounds
//! near the root, monotonicity bounds below, and concentration-step local
//! search at the leaves.
//!
//! ```
//! use lts_core::{solve, Dataset, Mode, SolverConfig};
//!
//! let rows: Vec<Vec<f64>> = (0..8).map(|i| vec![1.0, i as f64]).collect();
//! let mut y: Vec<f64> = (0..8).map(|i| 1.0 + 0.5 * i as f64).collect();
//! y[5] = 40.0;
//! let data = Dataset::from_rows(&rows, y).unwrap();
//! let report = solve(&data, &SolverConfig::new(Mode::Sbb)).unwrap();
//! assert!(!report.subset.contains(&5));
//! assert!(report.objective < 1e-12);
//! ```

// `!(x > 0.0)` is deliberate throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datagen;
pub mod error;
pub mod io;
pub mod linalg;
pub mod local_search;
pub mod pi;
pub mod regress;
pub mod socp;
pub mod solver;
pub mod tree;

pub use datagen::{benchmark_suite, generate, Contamination, GenSpec, GroundTruth};
pub use error::{LtsError, Result};
pub use local_search::{c_steps, Incumbent};
pub use pi::{estimate_pi, PiBound};
pub use regress::{default_coverage, lts_objective, ols_fit, Dataset, FitState, WeightVector};
pub use socp::{solve_relaxation, RelaxationProblem, RelaxationResult, RelaxationStatus};
pub use solver::{solve, update_incumbent, Mode, SolveReport, SolverConfig};
