//! Self-contained statistics kernel: Pearson correlation, Cohen's kappa,
//! OLS with treatment-coded categoricals and t tests, logistic regression
//! by IRLS with Wald tests.

mod linalg;
pub mod special;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use special::{normal_cdf, t_cdf};

pub const INTERCEPT: &str = "(Intercept)";

#[derive(Debug, Clone)]
pub struct Column {
    pub name: String,
    pub values: Vec<f64>,
}

/// Design matrix with an implicit leading intercept column of ones.
/// Categorical predictors expand to treatment-coded indicators against a
/// declared reference level.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    n: usize,
    columns: Vec<Column>,
}

impl DesignMatrix {
    pub fn new(n: usize) -> Self {
        DesignMatrix {
            n,
            columns: vec![Column {
                name: INTERCEPT.to_string(),
                values: vec![1.0; n],
            }],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn term_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn push_column(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        if values.len() != self.n {
            return Err(Error::LengthMismatch {
                left: self.n,
                right: values.len(),
            });
        }
        self.columns.push(Column {
            name: name.into(),
            values,
        });
        Ok(())
    }

    /// Treatment-codes `labels` against `reference` and appends one
    /// indicator column per non-reference level present.
    pub fn push_categorical(
        &mut self,
        labels: &[&str],
        levels: &[&str],
        reference: &str,
    ) -> Result<()> {
        if labels.len() != self.n {
            return Err(Error::LengthMismatch {
                left: self.n,
                right: labels.len(),
            });
        }
        for column in encode_categorical(labels, levels, reference)? {
            self.columns.push(column);
        }
        Ok(())
    }

    fn column_values(&self) -> Vec<Vec<f64>> {
        self.columns.iter().map(|c| c.values.clone()).collect()
    }
}

/// Indicator columns for every non-reference level, in declared level
/// order. Levels absent from `labels` produce no column.
pub fn encode_categorical(
    labels: &[&str],
    levels: &[&str],
    reference: &str,
) -> Result<Vec<Column>> {
    if !levels.contains(&reference) {
        return Err(Error::UnknownReference(reference.to_string()));
    }
    for label in labels {
        if !levels.contains(label) {
            return Err(Error::UnknownLevel((*label).to_string()));
        }
    }
    let mut columns = Vec::new();
    for level in levels {
        if *level == reference || !labels.contains(level) {
            continue;
        }
        columns.push(Column {
            name: (*level).to_string(),
            values: labels
                .iter()
                .map(|l| if l == level { 1.0 } else { 0.0 })
                .collect(),
        });
    }
    Ok(columns)
}

/// Fitted-model outputs, aligned by term.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegressionResult {
    pub terms: Vec<String>,
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub statistics: Vec<f64>,
    pub p_values: Vec<f64>,
    pub n: usize,
    pub dof: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_squared: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deviance: Option<f64>,
    pub converged: bool,
    pub separation: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct Coefficient {
    pub estimate: f64,
    pub std_error: f64,
    pub statistic: f64,
    pub p_value: f64,
}

impl RegressionResult {
    pub fn coefficient(&self, term: &str) -> Option<Coefficient> {
        let i = self.terms.iter().position(|t| t == term)?;
        Some(Coefficient {
            estimate: self.coefficients[i],
            std_error: self.standard_errors[i],
            statistic: self.statistics[i],
            p_value: self.p_values[i],
        })
    }

    /// Rows for the coefficient-table CSV schema
    /// (term, estimate, std_error, statistic, p_value).
    pub fn csv_rows(&self) -> Vec<String> {
        self.terms
            .iter()
            .enumerate()
            .map(|(i, term)| {
                format!(
                    "{term},{},{},{},{}",
                    fmt_float(self.coefficients[i]),
                    fmt_float(self.standard_errors[i]),
                    fmt_float(self.statistics[i]),
                    fmt_float(self.p_values[i]),
                )
            })
            .collect()
    }
}

pub(crate) fn fmt_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.10}")
    } else if v.is_nan() {
        "nan".to_string()
    } else if v > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

/// Wald statistic and its edge cases: a zero standard error means the fit
/// is exact, so a zero estimate is a perfect null (p = 1) and a nonzero
/// one is unambiguously nonzero (p = 0).
fn wald(estimate: f64, std_error: f64) -> (f64, bool) {
    if std_error > 0.0 {
        (estimate / std_error, false)
    } else if estimate == 0.0 {
        (0.0, true)
    } else {
        (f64::INFINITY.copysign(estimate), true)
    }
}

/// Ordinary least squares via Householder QR; standard errors from the
/// (X^T X)^{-1} diagonal computed from R; two-sided t p-values.
pub fn ols_fit(x: &DesignMatrix, y: &[f64]) -> Result<RegressionResult> {
    if y.len() != x.n() {
        return Err(Error::LengthMismatch {
            left: x.n(),
            right: y.len(),
        });
    }
    let p = x.width();
    if x.n() <= p {
        return Err(Error::InsufficientData {
            needed: p + 1,
            got: x.n(),
        });
    }
    let columns = x.column_values();
    let qr = linalg::qr_least_squares(&columns, y)
        .map_err(|j| Error::RankDeficient(x.columns[j].name.clone()))?;
    let n = x.n();
    let dof = n - p;
    let sigma2 = qr.sse / dof as f64;
    let diag = linalg::xtx_inverse_diagonal(&qr.r);

    let mut standard_errors = Vec::with_capacity(p);
    let mut statistics = Vec::with_capacity(p);
    let mut p_values = Vec::with_capacity(p);
    for (beta, d) in qr.coefficients.iter().zip(&diag) {
        let se = (sigma2 * d).max(0.0).sqrt();
        let (stat, exact) = wald(*beta, se);
        standard_errors.push(se);
        statistics.push(stat);
        p_values.push(if exact {
            if *beta == 0.0 {
                1.0
            } else {
                0.0
            }
        } else {
            special::two_sided_t_p(stat, dof as f64)
        });
    }

    let mean_y = y.iter().sum::<f64>() / n as f64;
    let sst: f64 = y.iter().map(|v| (v - mean_y).powi(2)).sum();
    let r_squared = if sst > 0.0 { Some(1.0 - qr.sse / sst) } else { None };

    Ok(RegressionResult {
        terms: x.term_names(),
        coefficients: qr.coefficients,
        standard_errors,
        statistics,
        p_values,
        n,
        dof,
        r_squared,
        deviance: None,
        converged: true,
        separation: false,
    })
}

const IRLS_TOL: f64 = 1e-8;
const IRLS_MAX_ITER: usize = 100;
const SEPARATION_BOUND: f64 = 50.0;

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Logistic regression by iteratively reweighted least squares.
/// Convergence when max |Δβ| < 1e-8; complete separation (any |β| > 50)
/// is flagged and reported with converged = false.
pub fn logistic_fit(x: &DesignMatrix, y: &[f64]) -> Result<RegressionResult> {
    if y.len() != x.n() {
        return Err(Error::LengthMismatch {
            left: x.n(),
            right: y.len(),
        });
    }
    if y.iter().any(|v| *v != 0.0 && *v != 1.0) {
        return Err(Error::Analysis(
            "logistic response must be coded 0/1".into(),
        ));
    }
    if y.iter().all(|v| *v == 0.0) || y.iter().all(|v| *v == 1.0) {
        return Err(Error::AllSameClass);
    }
    let p = x.width();
    let n = x.n();
    if n <= p {
        return Err(Error::InsufficientData {
            needed: p + 1,
            got: n,
        });
    }
    let columns = x.column_values();

    let weighted_qr = |beta: &[f64]| -> Result<(Vec<f64>, linalg::QrLeastSquares)> {
        let eta: Vec<f64> = (0..n)
            .map(|i| {
                columns
                    .iter()
                    .zip(beta)
                    .map(|(col, b)| col[i] * b)
                    .sum::<f64>()
            })
            .collect();
        let mu: Vec<f64> = eta.iter().map(|e| sigmoid(*e)).collect();
        // sigmoid(e) * sigmoid(-e) stays positive far into the tails where
        // mu * (1 - mu) would round to zero.
        let w: Vec<f64> = eta
            .iter()
            .map(|e| (sigmoid(*e) * sigmoid(-*e)).max(1e-280))
            .collect();
        let z: Vec<f64> = (0..n)
            .map(|i| eta[i] + (y[i] - mu[i]) / w[i])
            .collect();
        let sqrt_w: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
        let weighted_cols: Vec<Vec<f64>> = columns
            .iter()
            .map(|col| col.iter().zip(&sqrt_w).map(|(v, s)| v * s).collect())
            .collect();
        let weighted_y: Vec<f64> = z.iter().zip(&sqrt_w).map(|(v, s)| v * s).collect();
        let qr = linalg::qr_least_squares(&weighted_cols, &weighted_y)
            .map_err(|j| Error::RankDeficient(x.columns[j].name.clone()))?;
        Ok((mu, qr))
    };

    let mut beta = vec![0.0; p];
    let mut converged = false;
    let mut separation = false;
    let mut final_mu = vec![0.5; n];
    let mut final_r: Option<Vec<Vec<f64>>> = None;
    for _ in 0..IRLS_MAX_ITER {
        let (mu, qr) = weighted_qr(&beta)?;
        let next = qr.coefficients.clone();
        let step = next
            .iter()
            .zip(&beta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        beta = next;
        final_mu = mu;
        final_r = Some(qr.r);
        if beta.iter().any(|b| b.abs() > SEPARATION_BOUND) {
            separation = true;
            break;
        }
        if step < IRLS_TOL {
            converged = true;
            break;
        }
    }

    // Covariance (X^T W X)^{-1} from the final weighted factorization.
    let r = final_r.expect("at least one IRLS iteration");
    let diag = linalg::xtx_inverse_diagonal(&r);
    let mut standard_errors = Vec::with_capacity(p);
    let mut statistics = Vec::with_capacity(p);
    let mut p_values = Vec::with_capacity(p);
    for (b, d) in beta.iter().zip(&diag) {
        let se = d.max(0.0).sqrt();
        let (stat, exact) = wald(*b, se);
        standard_errors.push(se);
        statistics.push(stat);
        p_values.push(if exact {
            if *b == 0.0 {
                1.0
            } else {
                0.0
            }
        } else {
            special::two_sided_z_p(stat)
        });
    }

    let deviance = -2.0
        * final_mu
            .iter()
            .zip(y)
            .map(|(m, yi)| {
                let m = m.clamp(1e-12, 1.0 - 1e-12);
                yi * m.ln() + (1.0 - yi) * (1.0 - m).ln()
            })
            .sum::<f64>();

    Ok(RegressionResult {
        terms: x.term_names(),
        coefficients: beta,
        standard_errors,
        statistics,
        p_values,
        n,
        dof: n - p,
        r_squared: None,
        deviance: Some(deviance),
        converged,
        separation,
    })
}

/// Product-moment correlation. Requires length >= 3 and nonzero variance
/// in both arguments.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: x.len(),
        });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (xi, yi) in x.iter().zip(y) {
        let dx = xi - mx;
        let dy = yi - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::DegenerateVariance("x".into()));
    }
    if syy == 0.0 {
        return Err(Error::DegenerateVariance("y".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaOutcome {
    pub value: f64,
    /// Chance agreement was 1, so the usual denominator vanished; the
    /// declared convention applies (1 if observed agreement is perfect,
    /// else 0).
    pub degenerate: bool,
}

/// Cohen's kappa with marginal-product expected agreement.
pub fn cohens_kappa<T: Eq + Ord + Copy>(a: &[T], b: &[T]) -> Result<KappaOutcome> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let n = a.len() as f64;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64;
    let p_o = agree / n;

    let mut marg_a: BTreeMap<T, f64> = BTreeMap::new();
    let mut marg_b: BTreeMap<T, f64> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        *marg_a.entry(*x).or_insert(0.0) += 1.0;
        *marg_b.entry(*y).or_insert(0.0) += 1.0;
    }
    let p_e: f64 = marg_a
        .iter()
        .map(|(label, ca)| {
            let cb = marg_b.get(label).copied().unwrap_or(0.0);
            (ca / n) * (cb / n)
        })
        .sum();

    if (1.0 - p_e).abs() < 1e-15 {
        return Ok(KappaOutcome {
            value: if (1.0 - p_o).abs() < 1e-15 { 1.0 } else { 0.0 },
            degenerate: true,
        });
    }
    Ok(KappaOutcome {
        value: (p_o - p_e) / (1.0 - p_e),
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_worked_examples() {
        assert!((pearson_r(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson_r(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!((pearson_r(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn pearson_rejects_degenerate_inputs() {
        assert!(matches!(
            pearson_r(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::DegenerateVariance(_))
        ));
        assert!(matches!(
            pearson_r(&[1.0, 2.0], &[1.0, 2.0]),
            Err(Error::InsufficientData { .. })
        ));
        assert!(matches!(
            pearson_r(&[1.0, 2.0, 3.0], &[1.0, 2.0]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn pearson_affine_invariance() {
        let x = [0.3, -1.2, 2.5, 0.9, -0.4];
        let y = [1.1, 0.2, -0.7, 2.2, 0.5];
        let base = pearson_r(&x, &y).unwrap();
        let x2: Vec<f64> = x.iter().map(|v| 3.5 * v + 11.0).collect();
        let y2: Vec<f64> = y.iter().map(|v| 0.25 * v - 2.0).collect();
        assert!((pearson_r(&x2, &y2).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn kappa_worked_examples() {
        let same = cohens_kappa(&[1, 1, 2, 2], &[1, 1, 2, 2]).unwrap();
        assert_eq!(same.value, 1.0);
        let opposite = cohens_kappa(&[1, 1, 2, 2], &[2, 2, 1, 1]).unwrap();
        assert!((opposite.value + 1.0).abs() < 1e-12);
        let independent = cohens_kappa(&[1, 2, 1, 2], &[1, 1, 2, 2]).unwrap();
        assert!(independent.value.abs() < 1e-12);
    }

    #[test]
    fn kappa_degenerate_convention() {
        // p_e = 1 only when both raters collapse to one shared label.
        let all_same = cohens_kappa(&[1, 1, 1], &[1, 1, 1]).unwrap();
        assert_eq!(all_same.value, 1.0);
        assert!(all_same.degenerate);
        // Disjoint constant raters have p_e = 0, not 1: kappa is 0.
        let mismatched = cohens_kappa(&[1, 1, 1], &[2, 2, 2]).unwrap();
        assert_eq!(mismatched.value, 0.0);
        assert!(!mismatched.degenerate);
    }

    #[test]
    fn ols_hand_computed_line() {
        let mut x = DesignMatrix::new(4);
        x.push_column("x", vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let fit = ols_fit(&x, &[0.0, 1.0, 1.0, 2.0]).unwrap();
        let slope = fit.coefficient("x").unwrap();
        let intercept = fit.coefficient(INTERCEPT).unwrap();
        assert!((slope.estimate - 0.6).abs() < 1e-12);
        assert!((intercept.estimate - 0.1).abs() < 1e-12);
        assert!((slope.std_error - 0.02f64.sqrt()).abs() < 1e-12);
        assert_eq!(fit.dof, 2);
    }

    #[test]
    fn ols_exact_fit() {
        let mut x = DesignMatrix::new(3);
        x.push_column("x", vec![0.0, 1.0, 2.0]).unwrap();
        let fit = ols_fit(&x, &[1.0, 2.0, 3.0]).unwrap();
        assert!((fit.coefficient(INTERCEPT).unwrap().estimate - 1.0).abs() < 1e-12);
        assert!((fit.coefficient("x").unwrap().estimate - 1.0).abs() < 1e-12);
        assert!(fit.r_squared.unwrap() > 1.0 - 1e-12);
    }

    #[test]
    fn ols_residuals_orthogonal_to_design() {
        let xs = vec![0.3, 1.7, 2.2, 3.9, 4.1, 5.5, 6.0, 7.3];
        let zs = vec![1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        let y = vec![2.1, 2.9, 4.4, 5.2, 6.6, 7.9, 8.1, 10.2];
        let mut x = DesignMatrix::new(8);
        x.push_column("x", xs.clone()).unwrap();
        x.push_column("z", zs.clone()).unwrap();
        let fit = ols_fit(&x, &y).unwrap();
        let predict = |i: usize| {
            fit.coefficients[0] + fit.coefficients[1] * xs[i] + fit.coefficients[2] * zs[i]
        };
        let residuals: Vec<f64> = (0..8).map(|i| y[i] - predict(i)).collect();
        for col in [&vec![1.0; 8], &xs, &zs] {
            let dot: f64 = col.iter().zip(&residuals).map(|(a, b)| a * b).sum();
            assert!(dot.abs() < 1e-9, "residual dot {dot}");
        }
    }

    #[test]
    fn ols_duplicate_column_errors() {
        let mut x = DesignMatrix::new(4);
        x.push_column("a", vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        x.push_column("b", vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(
            ols_fit(&x, &[0.0, 1.0, 1.0, 2.0]),
            Err(Error::RankDeficient(_))
        ));
    }

    #[test]
    fn logistic_intercept_only_closed_forms() {
        let x = DesignMatrix::new(2);
        let fit = logistic_fit(&x, &[0.0, 1.0]).unwrap();
        assert!(fit.coefficients[0].abs() < 1e-9);

        let x = DesignMatrix::new(4);
        let fit = logistic_fit(&x, &[0.0, 1.0, 1.0, 1.0]).unwrap();
        assert!((fit.coefficients[0] - 3.0f64.ln()).abs() < 1e-9);
        assert!(fit.converged);
    }

    #[test]
    fn logistic_detects_separation() {
        let mut x = DesignMatrix::new(6);
        x.push_column("x", vec![-3.0, -2.0, -1.0, 1.0, 2.0, 3.0])
            .unwrap();
        let fit = logistic_fit(&x, &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(!fit.converged);
        assert!(fit.separation);
    }

    #[test]
    fn logistic_rejects_single_class() {
        let x = DesignMatrix::new(3);
        assert!(matches!(
            logistic_fit(&x, &[1.0, 1.0, 1.0]),
            Err(Error::AllSameClass)
        ));
    }

    #[test]
    fn categorical_encoding_cases() {
        let cols = encode_categorical(
            &["self", "other", "self", "other"],
            &["self", "other"],
            "self",
        )
        .unwrap();
        assert_eq!(cols.len(), 1);
        assert_eq!(cols[0].name, "other");
        assert_eq!(cols[0].values, vec![0.0, 1.0, 0.0, 1.0]);

        let all = ["self", "seed_variant", "base_instruct", "same_family", "other"];
        let labels: Vec<&str> = all.into_iter().cycle().take(10).collect();
        let cols = encode_categorical(&labels, &all, "self").unwrap();
        let names: Vec<&str> = cols.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(
            names,
            vec!["seed_variant", "base_instruct", "same_family", "other"]
        );

        assert!(encode_categorical(&["self"], &all, "self").unwrap().is_empty());
        assert!(matches!(
            encode_categorical(&["self"], &all, "missing"),
            Err(Error::UnknownReference(_))
        ));
    }

    #[test]
    fn p_values_are_probabilities() {
        let mut x = DesignMatrix::new(12);
        x.push_column(
            "x",
            vec![0.1, 0.9, 1.7, 2.2, 3.3, 4.1, 5.2, 5.9, 6.6, 7.2, 8.8, 9.1],
        )
        .unwrap();
        let y = vec![0.2, 1.1, 1.5, 2.6, 3.1, 4.5, 4.9, 6.2, 6.4, 7.7, 8.3, 9.5];
        let fit = ols_fit(&x, &y).unwrap();
        for p in &fit.p_values {
            assert!((0.0..=1.0).contains(p));
        }
        assert_eq!(fit.dof, fit.n - fit.terms.len());
    }
}
