//! Working-model basis expansions `φ(W)` and `φ(W, A)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::numeric::quantile_sorted;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BasisScheme {
    /// Linear terms `W_1, ..., W_d`.
    MainTerms,
    /// Zero-order spline indicators `1{W_j >= knot}` at empirical quantiles,
    /// and their products over distinct covariates up to the given depth.
    IndicatorHal0 {
        knots_per_dim: usize,
        max_interaction_depth: usize,
    },
}

/// How the treatment indicator enters a `φ(W, A)` basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TreatmentTerms {
    /// `φ(W)` only.
    #[default]
    Absent,
    /// Adds the single column `A`.
    MainEffect,
    /// Adds `A` and `A·φ_j(W)` for every non-intercept term.
    Interacted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSpec {
    pub scheme: BasisScheme,
    #[serde(default = "default_true")]
    pub include_intercept: bool,
    #[serde(default)]
    pub treatment: TreatmentTerms,
    /// Zero-based covariates the basis may use; all when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariates: Option<Vec<usize>>,
}

fn default_true() -> bool {
    true
}

impl BasisSpec {
    pub fn main_terms() -> Self {
        Self {
            scheme: BasisScheme::MainTerms,
            include_intercept: true,
            treatment: TreatmentTerms::Absent,
            covariates: None,
        }
    }

    pub fn indicator_hal0(knots_per_dim: usize, max_interaction_depth: usize) -> Self {
        Self {
            scheme: BasisScheme::IndicatorHal0 {
                knots_per_dim: knots_per_dim.max(1),
                max_interaction_depth: max_interaction_depth.max(1),
            },
            include_intercept: true,
            treatment: TreatmentTerms::Absent,
            covariates: None,
        }
    }

    /// Restrict the basis to the given zero-based covariates.
    pub fn with_covariates(mut self, covariates: Vec<usize>) -> Self {
        self.covariates = Some(covariates);
        self
    }

    pub fn with_treatment(mut self, treatment: TreatmentTerms) -> Self {
        self.treatment = treatment;
        self
    }

    pub fn with_treatment_interaction(self) -> Self {
        self.with_treatment(TreatmentTerms::Interacted)
    }

    /// Learn knots (if any) from the training covariates.
    pub fn fit(&self, w: &[&[f64]]) -> Basis {
        let d = w.first().map_or(0, |r| r.len());
        let used: Vec<usize> = match &self.covariates {
            Some(c) => (0..d).filter(|j| c.contains(j)).collect(),
            None => (0..d).collect(),
        };
        let terms = match &self.scheme {
            BasisScheme::MainTerms => used.iter().map(|&j| Term::Linear(j)).collect(),
            BasisScheme::IndicatorHal0 {
                knots_per_dim,
                max_interaction_depth,
            } => indicator_terms(w, &used, *knots_per_dim, *max_interaction_depth),
        };
        Basis {
            spec: self.clone(),
            d,
            terms,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Term {
    Linear(usize),
    /// Product of indicators `1{W_j >= knot}` over distinct covariates.
    Indicator(Vec<(usize, f64)>),
}

impl Term {
    fn eval(&self, w: &[f64]) -> f64 {
        match self {
            Term::Linear(j) => w[*j],
            Term::Indicator(fs) => {
                if fs.iter().all(|&(j, k)| w[j] >= k) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn name(&self) -> String {
        match self {
            Term::Linear(j) => format!("W{}", j + 1),
            Term::Indicator(fs) => fs
                .iter()
                .map(|(j, k)| format!("1{{W{}>={}}}", j + 1, k))
                .collect::<Vec<_>>()
                .join("*"),
        }
    }
}

fn indicator_terms(w: &[&[f64]], used: &[usize], knots_per_dim: usize, depth: usize) -> Vec<Term> {
    let d = used.len();
    let mut knots: Vec<Vec<f64>> = Vec::with_capacity(d);
    for &j in used {
        let mut col: Vec<f64> = w.iter().map(|r| r[j]).collect();
        col.sort_by(f64::total_cmp);
        let (lo, hi) = (col[0], col[col.len() - 1]);
        if lo == hi {
            log::warn!("covariate W{} is constant; no knots placed", j + 1);
            knots.push(Vec::new());
            continue;
        }
        let mut ks: Vec<f64> = (1..=knots_per_dim)
            .map(|i| quantile_sorted(&col, i as f64 / (knots_per_dim + 1) as f64))
            .filter(|&k| k > lo)
            .collect();
        ks.dedup();
        knots.push(ks);
    }
    let mut terms = Vec::new();
    for size in 1..=depth.min(d) {
        for subset in combinations(d, size) {
            let mut products: Vec<Vec<(usize, f64)>> = vec![Vec::new()];
            for &u in &subset {
                let mut next = Vec::new();
                for p in &products {
                    for &k in &knots[u] {
                        let mut q = p.clone();
                        q.push((used[u], k));
                        next.push(q);
                    }
                }
                products = next;
            }
            terms.extend(products.into_iter().map(Term::Indicator));
        }
    }
    terms
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// A basis with its knots fixed, ready to evaluate at arbitrary points.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    spec: BasisSpec,
    d: usize,
    terms: Vec<Term>,
}

impl Basis {
    pub fn spec(&self) -> &BasisSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn uses_treatment(&self) -> bool {
        self.spec.treatment != TreatmentTerms::Absent
    }

    pub fn n_columns(&self) -> usize {
        let t = self.terms.len();
        let base = t + usize::from(self.spec.include_intercept);
        match self.spec.treatment {
            TreatmentTerms::Absent => base,
            TreatmentTerms::MainEffect => base + 1,
            TreatmentTerms::Interacted => base + 1 + t,
        }
    }

    /// Position of the all-ones column, if present.
    pub fn intercept_index(&self) -> Option<usize> {
        self.spec.include_intercept.then_some(0)
    }

    /// Position of the `A` column, if present.
    pub fn treatment_index(&self) -> Option<usize> {
        match self.spec.treatment {
            TreatmentTerms::Absent => None,
            _ => Some(self.terms.len() + usize::from(self.spec.include_intercept)),
        }
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.n_columns());
        if self.spec.include_intercept {
            names.push("1".to_string());
        }
        names.extend(self.terms.iter().map(Term::name));
        if self.spec.treatment != TreatmentTerms::Absent {
            names.push("A".to_string());
        }
        if self.spec.treatment == TreatmentTerms::Interacted {
            names.extend(self.terms.iter().map(|t| format!("A*{}", t.name())));
        }
        names
    }

    /// Evaluate `φ(w, a)` into `out` (cleared first). `a` is ignored for
    /// bases without treatment terms.
    pub fn eval_into(&self, w: &[f64], a: f64, out: &mut Vec<f64>) {
        out.clear();
        if self.spec.include_intercept {
            out.push(1.0);
        }
        let start = out.len();
        out.extend(self.terms.iter().map(|t| t.eval(w)));
        match self.spec.treatment {
            TreatmentTerms::Absent => {}
            TreatmentTerms::MainEffect => out.push(a),
            TreatmentTerms::Interacted => {
                out.push(a);
                for k in start..start + self.terms.len() {
                    let v = out[k];
                    out.push(a * v);
                }
            }
        }
    }

    pub fn eval(&self, w: &[f64], a: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_columns());
        self.eval_into(w, a, &mut out);
        out
    }

    /// Design matrix with rows `φ(w_i, a_i)`; `a` may be empty for
    /// treatment-free bases.
    pub fn design(&self, w: &[&[f64]], a: &[f64]) -> DMatrix<f64> {
        let n = w.len();
        let p = self.n_columns();
        let mut m = DMatrix::zeros(n, p);
        let mut buf = Vec::with_capacity(p);
        for i in 0..n {
            let ai = a.get(i).copied().unwrap_or(0.0);
            self.eval_into(w[i], ai, &mut buf);
            for (j, v) in buf.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        m
    }

    /// Design matrix with every row evaluated at the fixed arm `a`.
    pub fn design_at_arm(&self, w: &[&[f64]], a: f64) -> DMatrix<f64> {
        let arms = vec![a; w.len()];
        self.design(w, &arms)
    }

    /// Linear predictor `φ(w, a)ᵀ beta`.
    pub fn predict(&self, beta: &[f64], w: &[f64], a: f64) -> f64 {
        let mut buf = Vec::with_capacity(beta.len());
        self.eval_into(w, a, &mut buf);
        buf.iter().zip(beta).map(|(x, b)| x * b).sum()
    }
}

/// Expand covariates (and optionally treatments) into a design matrix.
/// Knots are learned from `w`.
pub fn expand_basis(w: &[&[f64]], a: &[f64], spec: &BasisSpec) -> (DMatrix<f64>, Basis) {
    let basis = spec.fit(w);
    (basis.design(w, a), basis)
}
