//! Distribution regression estimators of counterfactual distributions in
//! difference-in-differences designs with one or two outcomes.
//!
//! ```
//! use drdid_core::model::build_grid;
//! use drdid_core::simlab::{generate, DgpSpec};
//! use drdid_core::uni::{counterfactual_cdf, fit_dr, observed_cdf, qte, rearrange};
//! use drdid_core::{DesignSpec, GridPolicy, Link};
//!
//! let table = generate(&DgpSpec::default_logit(1000, 7))?;
//! let grid = build_grid(&table.y_values(), &GridPolicy::Quantile(20))?;
//! let fit = fit_dr(&table, &DesignSpec::intercepts(Link::Logit), &grid, None)?;
//! let f0 = rearrange(&counterfactual_cdf(&fit, &table, None)?);
//! let f1 = observed_cdf(&table, &grid, None)?;
//! let effects = qte(&f1, &f0, &[0.25, 0.5, 0.75])?;
//! assert_eq!(effects.len(), 3);
//! # Ok::<(), drdid_core::Error>(())
//! ```

pub mod biv;
pub mod error;
pub mod infer;
pub mod links;
pub mod mle;
pub mod model;
pub mod simlab;
pub mod uni;

pub use biv::{BivFit, BivSpec, CellPmf, JointEstimate, RankCorr, RankMethod};
pub use error::{Error, Result};
pub use infer::{Band, BootstrapOptions, BootstrapRun, Functional, IntervalMethod, WeightScheme};
pub use links::Link;
pub use model::{
    DesignSpec, GridPolicy, Observation, ObservationTable, PanelMode, TermList, ThresholdGrid,
};
pub use uni::{DistEstimate, DrFit, EffectCurve, QteResult};
