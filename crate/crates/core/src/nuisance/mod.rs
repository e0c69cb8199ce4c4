//! Nuisance function estimation: basis expansions, penalized and logistic
//! regression, and the composed treatment and enrollment mechanisms.

use nalgebra::DMatrix;

pub mod basis;
pub mod bundle;
pub mod lasso;
pub mod logistic;
pub mod scores;

pub use basis::{expand_basis, Basis, BasisScheme, BasisSpec, TreatmentTerms};
pub use bundle::{
    build_nuisance_bundle, fit_theta, NuisanceBundle, NuisanceOptions, OutcomeModel, ScoreModel,
};
pub use lasso::{fit_weighted_lasso, normal_equation_residual, LambdaGrid, LassoConfig};
pub use logistic::{fit_logistic, logistic_loglik, logistic_score, predict_logistic};
pub use scores::{compose_scores, enrollment_prob, pooled_treatment_prob};

/// Coefficients of a fitted working model.
#[derive(Debug, Clone)]
pub struct CoefficientFit {
    /// Full-length coefficient vector (zeros for unselected columns).
    pub beta: Vec<f64>,
    /// Columns with nonzero coefficients, ascending.
    pub selected: Vec<usize>,
    /// Weighted information matrix on the selected columns.
    pub information: DMatrix<f64>,
    /// Objective value after each iteration (or along the λ path).
    pub objective_trace: Vec<f64>,
    /// Penalty level chosen by cross-validation, if penalized.
    pub lambda: Option<f64>,
}
