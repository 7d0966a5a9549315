//! Class-weighted linear classifiers with logistic or hinge loss, trained
//! by deterministic full-batch gradient descent with backtracking line
//! search, scored as rankers, and tuned by grid search over inner
//! cross-validation splits.
//!
//! The objective is `0.5 ||w||^2 + C * sum_i c_i * loss(y_i, w.x_i + b)`
//! with an unpenalized bias. Training starts from the zero vector and stops
//! when the gradient infinity-norm falls below the tolerance or the
//! iteration cap is reached, so identical inputs give bit-identical models.

use std::collections::HashMap;

use thiserror::Error;

use crate::metrics::neg_log_loss;
use crate::panel::RecordKey;
use crate::sparse::FeatureMatrix;
use crate::temporal::{inner_cv_splits, EffectiveLabelSet, TemporalError};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training requires at least one sample of each class")]
    SingleClassInput,
    #[error("objective became non-finite at iteration {0}")]
    NonFinite(usize),
    #[error("sample weights must be positive and finite, got {0}")]
    InvalidSampleWeight(f64),
    #[error("labels must be +1 or -1, got {0}")]
    InvalidLabel(i8),
    #[error("hyper-parameter grid is empty")]
    EmptyGrid,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Split(#[from] TemporalError),
    #[error("malformed model file: {0}")]
    MalformedModel(String),
}

/// Loss function for the margin m = y * (w.x + b).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Loss {
    Logistic,
    Hinge,
}

impl Loss {
    pub fn as_str(&self) -> &'static str {
        match self {
            Loss::Logistic => "logistic",
            Loss::Hinge => "hinge",
        }
    }
}

impl std::str::FromStr for Loss {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "logistic" => Ok(Loss::Logistic),
            "hinge" => Ok(Loss::Hinge),
            other => Err(format!("unknown loss {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassWeighting {
    /// Per-class weight n / (2 * n_class), computed from training labels.
    Balanced,
    /// Unit weight for every sample.
    None,
}

impl ClassWeighting {
    pub fn as_str(&self) -> &'static str {
        match self {
            ClassWeighting::Balanced => "balanced",
            ClassWeighting::None => "none",
        }
    }
}

impl std::str::FromStr for ClassWeighting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "balanced" => Ok(ClassWeighting::Balanced),
            "none" => Ok(ClassWeighting::None),
            other => Err(format!("unknown class weighting {other:?}")),
        }
    }
}

/// Loss, regularization trade-off, and optimizer settings for one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub loss: Loss,
    pub c: f64,
    pub class_weighting: ClassWeighting,
    pub max_iters: usize,
    pub tol: f64,
}

impl ModelConfig {
    pub fn new(loss: Loss, c: f64) -> Self {
        ModelConfig {
            loss,
            c,
            class_weighting: ClassWeighting::Balanced,
            max_iters: 1000,
            tol: 1e-6,
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(ModelError::InvalidConfig(format!("C must be positive, got {}", self.c)));
        }
        if !(self.tol > 0.0) || !self.tol.is_finite() {
            return Err(ModelError::InvalidConfig(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

/// The default regularization grid shared by both losses.
pub const DEFAULT_C_GRID: [f64; 8] = [0.01, 0.1, 0.5, 1.0, 2.5, 5.0, 10.0, 20.0];

/// Trained linear ranker: dense weights, unpenalized bias, and a
/// fingerprint of the training inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedLinearModel {
    weights: Vec<f64>,
    bias: f64,
    config: ModelConfig,
    train_fingerprint: u64,
    iterations: usize,
}

impl TrainedLinearModel {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn train_fingerprint(&self) -> u64 {
        self.train_fingerprint
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }
}

fn logistic_loss(margin: f64) -> f64 {
    if margin >= 0.0 {
        (-margin).exp().ln_1p()
    } else {
        -margin + margin.exp().ln_1p()
    }
}

/// d(loss)/d(margin); for the hinge this is the subgradient that is zero at
/// margin = 1.
fn loss_slope(loss: Loss, margin: f64) -> f64 {
    match loss {
        Loss::Logistic => {
            if margin >= 0.0 {
                let e = (-margin).exp();
                -e / (1.0 + e)
            } else {
                -1.0 / (1.0 + margin.exp())
            }
        }
        Loss::Hinge => {
            if margin < 1.0 {
                -1.0
            } else {
                0.0
            }
        }
    }
}

fn loss_value(loss: Loss, margin: f64) -> f64 {
    match loss {
        Loss::Logistic => logistic_loss(margin),
        Loss::Hinge => (1.0 - margin).max(0.0),
    }
}

fn validate_inputs(
    x: &FeatureMatrix,
    y: &[i8],
    sample_weights: &[f64],
) -> Result<(), ModelError> {
    if y.len() != x.n_rows() {
        return Err(ModelError::DimensionMismatch {
            expected: x.n_rows(),
            got: y.len(),
        });
    }
    if sample_weights.len() != x.n_rows() {
        return Err(ModelError::DimensionMismatch {
            expected: x.n_rows(),
            got: sample_weights.len(),
        });
    }
    for &label in y {
        if label != 1 && label != -1 {
            return Err(ModelError::InvalidLabel(label));
        }
    }
    for &w in sample_weights {
        if !(w > 0.0) || !w.is_finite() {
            return Err(ModelError::InvalidSampleWeight(w));
        }
    }
    Ok(())
}

fn margins(x: &FeatureMatrix, weights: &[f64], bias: f64, out: &mut Vec<f64>) {
    out.clear();
    out.extend(x.rows().iter().map(|row| row.dot_dense(weights) + bias));
}

/// Objective value and full gradient (weights then bias) at the given
/// parameters.
pub fn objective_and_gradient(
    weights: &[f64],
    bias: f64,
    x: &FeatureMatrix,
    y: &[i8],
    sample_weights: &[f64],
    config: &ModelConfig,
) -> Result<(f64, Vec<f64>), ModelError> {
    config.validate()?;
    if weights.len() != x.dim() {
        return Err(ModelError::DimensionMismatch {
            expected: x.dim(),
            got: weights.len(),
        });
    }
    validate_inputs(x, y, sample_weights)?;
    let mut decisions = Vec::new();
    margins(x, weights, bias, &mut decisions);
    Ok(objective_and_gradient_inner(
        weights,
        x,
        y,
        sample_weights,
        config,
        &decisions,
    ))
}

fn objective_and_gradient_inner(
    weights: &[f64],
    x: &FeatureMatrix,
    y: &[i8],
    sample_weights: &[f64],
    config: &ModelConfig,
    decisions: &[f64],
) -> (f64, Vec<f64>) {
    let dim = x.dim();
    let mut gradient = vec![0.0; dim + 1];
    gradient[..dim].copy_from_slice(weights);
    let mut loss_sum = 0.0;
    for i in 0..y.len() {
        let label = y[i] as f64;
        let margin = label * decisions[i];
        loss_sum += sample_weights[i] * loss_value(config.loss, margin);
        let slope = loss_slope(config.loss, margin);
        if slope != 0.0 {
            let factor = config.c * sample_weights[i] * slope * label;
            x.row(i).add_scaled_into(factor, &mut gradient[..dim]);
            gradient[dim] += factor;
        }
    }
    let weight_norm_sq: f64 = weights.iter().map(|w| w * w).sum();
    let objective = 0.5 * weight_norm_sq + config.c * loss_sum;
    (objective, gradient)
}

/// Balanced per-class sample weights n / (2 * n_class).
pub fn class_balance_weights(y: &[i8]) -> Result<Vec<f64>, ModelError> {
    let n_pos = y.iter().filter(|&&l| l == 1).count();
    let n_neg = y.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(ModelError::SingleClassInput);
    }
    let n = y.len() as f64;
    let w_pos = n / (2.0 * n_pos as f64);
    let w_neg = n / (2.0 * n_neg as f64);
    Ok(y.iter()
        .map(|&l| if l == 1 { w_pos } else { w_neg })
        .collect())
}

/// Sample weights implied by the config's class weighting.
pub fn sample_weights_for(config: &ModelConfig, y: &[i8]) -> Result<Vec<f64>, ModelError> {
    match config.class_weighting {
        ClassWeighting::Balanced => class_balance_weights(y),
        ClassWeighting::None => Ok(vec![1.0; y.len()]),
    }
}

const ARMIJO_SIGMA: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 100;

/// Trains a linear model by full-batch gradient descent from the zero
/// vector, with a Barzilai-Borwein initial step and Armijo backtracking.
/// At hinge kinks, where no step along the subgradient satisfies the
/// descent condition, the optimizer falls back to a deterministic
/// diminishing subgradient step and keeps the best iterate seen.
/// Deterministic: the seed only enters the training fingerprint.
pub fn train(
    x: &FeatureMatrix,
    y: &[i8],
    sample_weights: &[f64],
    config: &ModelConfig,
    seed: u64,
) -> Result<TrainedLinearModel, ModelError> {
    config.validate()?;
    validate_inputs(x, y, sample_weights)?;
    if !y.contains(&1) || !y.contains(&-1) {
        return Err(ModelError::SingleClassInput);
    }
    let dim = x.dim();
    let n = x.n_rows();
    let mut weights = vec![0.0; dim];
    let mut bias = 0.0;
    let mut decisions = vec![0.0; n];
    let mut direction_margins = vec![0.0; n];

    // Barzilai-Borwein state from the previous accepted step.
    let mut prev_gradient: Option<Vec<f64>> = None;
    let mut prev_step = 1.0;

    // Best iterate, tracked explicitly once a non-descent fallback step
    // makes the trajectory non-monotone.
    let mut best: Option<(f64, Vec<f64>, f64)> = None;
    let mut stall_count = 0usize;

    let mut iterations = 0;
    for iter in 0..config.max_iters {
        iterations = iter;
        let (objective, gradient) =
            objective_and_gradient_inner(&weights, x, y, sample_weights, config, &decisions);
        if !objective.is_finite() || gradient.iter().any(|g| !g.is_finite()) {
            return Err(ModelError::NonFinite(iter));
        }
        if let Some((best_objective, _, _)) = &best {
            if objective < *best_objective {
                best = Some((objective, weights.clone(), bias));
            }
        }
        let grad_inf = gradient.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if grad_inf <= config.tol {
            break;
        }

        // BB1 step from the previous (step, gradient) pair:
        // t = t_prev * |g_prev|^2 / (g_prev . (g_prev - g)).
        let grad_norm_sq: f64 = gradient.iter().map(|g| g * g).sum();
        let mut step = match &prev_gradient {
            Some(prev) => {
                let prev_norm_sq: f64 = prev.iter().map(|g| g * g).sum();
                let cross: f64 = prev.iter().zip(&gradient).map(|(p, g)| p * g).sum();
                let denom = prev_norm_sq - cross;
                if denom > 0.0 {
                    (prev_step * prev_norm_sq / denom).clamp(1e-12, 1e12)
                } else {
                    (prev_step * 2.0).clamp(1e-12, 1e12)
                }
            }
            None => 1.0 / (1.0 + grad_norm_sq.sqrt()),
        };

        // The descent direction is -gradient. Precompute per-sample
        // direction margins so each trial step costs O(n).
        let dir_bias = -gradient[dim];
        for (i, row) in x.rows().iter().enumerate() {
            direction_margins[i] = -row.dot_dense(&gradient[..dim]) + dir_bias;
        }
        let weight_norm_sq: f64 = weights.iter().map(|w| w * w).sum();
        let weight_dot_dir: f64 = weights
            .iter()
            .zip(&gradient[..dim])
            .map(|(w, g)| -w * g)
            .sum();
        let dir_norm_sq: f64 = gradient[..dim].iter().map(|g| g * g).sum();

        let mut accepted = false;
        for _ in 0..MAX_BACKTRACKS {
            let trial_norm_sq =
                weight_norm_sq + 2.0 * step * weight_dot_dir + step * step * dir_norm_sq;
            let mut loss_sum = 0.0;
            for i in 0..n {
                let margin = y[i] as f64 * (decisions[i] + step * direction_margins[i]);
                loss_sum += sample_weights[i] * loss_value(config.loss, margin);
            }
            let trial = 0.5 * trial_norm_sq + config.c * loss_sum;
            if trial.is_finite() && trial <= objective - ARMIJO_SIGMA * step * grad_norm_sq {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // Non-descent subgradient step with a diminishing size. From
            // here on the trajectory may go uphill, so remember the best.
            if best.is_none() {
                best = Some((objective, weights.clone(), bias));
            }
            stall_count += 1;
            step = 1e-2 / (grad_norm_sq.sqrt() * stall_count as f64);
            prev_gradient = None;
        } else {
            prev_gradient = Some(gradient.clone());
            prev_step = step;
        }
        for (w, g) in weights.iter_mut().zip(&gradient[..dim]) {
            *w -= step * g;
        }
        bias -= step * gradient[dim];
        for i in 0..n {
            decisions[i] += step * direction_margins[i];
        }
        iterations = iter + 1;
    }
    if let Some((best_objective, best_weights, best_bias)) = best {
        let (final_objective, _) =
            objective_and_gradient_inner(&weights, x, y, sample_weights, config, &decisions);
        if best_objective < final_objective {
            weights = best_weights;
            bias = best_bias;
        }
    }
    if config.loss == Loss::Hinge {
        polish_hinge(x, y, sample_weights, config, &mut weights, &mut bias);
    }

    let train_fingerprint = fingerprint(x, y, sample_weights, config, seed);
    Ok(TrainedLinearModel {
        weights,
        bias,
        config: config.clone(),
        train_fingerprint,
        iterations,
    })
}

/// Kink sets larger than this stop the refinement (desk-scale guard).
const POLISH_MAX_KINK: usize = 400;
/// Total active-set iterations allowed.
const POLISH_MAX_STEPS: usize = 300;

/// Gaussian elimination with partial pivoting; None when singular.
fn solve_dense(mut a: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Option<Vec<f64>> {
    let n = rhs.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            a[i][col]
                .abs()
                .partial_cmp(&a[j][col].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut value = rhs[row];
        for k in row + 1..n {
            value -= a[row][k] * x[k];
        }
        x[row] = value / a[row][row];
        if !x[row].is_finite() {
            return None;
        }
    }
    Some(x)
}

fn sparse_dot(a: &crate::sparse::SparseVector, b: &crate::sparse::SparseVector) -> f64 {
    let (ea, eb) = (a.entries(), b.entries());
    let (mut i, mut j, mut total) = (0, 0, 0.0);
    while i < ea.len() && j < eb.len() {
        match ea[i].0.cmp(&eb[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                total += ea[i].1 * eb[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    total
}

fn hinge_objective(
    x: &FeatureMatrix,
    y: &[i8],
    sample_weights: &[f64],
    c: f64,
    weights: &[f64],
    bias: f64,
) -> f64 {
    let mut loss_sum = 0.0;
    for (i, row) in x.rows().iter().enumerate() {
        let margin = y[i] as f64 * (row.dot_dense(weights) + bias);
        loss_sum += sample_weights[i] * (1.0 - margin).max(0.0);
    }
    0.5 * weights.iter().map(|w| w * w).sum::<f64>() + c * loss_sum
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MarginSide {
    /// Margin below one: loss slope active.
    Active,
    /// Margin pinned at one.
    Kink,
    /// Margin above one: no loss.
    Inactive,
}

/// Exact refinement for the hinge. Gradient descent on the nonsmooth hinge
/// can stall at non-optimal kinks, so finish with a primal active-set walk
/// on the piecewise-quadratic objective: solve the stationarity system of
/// the current kink face, move toward its optimum only as far as the first
/// margin crossing, and at face optima drop constraints whose multipliers
/// leave [0, C*c_i]. Exact duplicate rows are merged so their shared
/// constraint stays nonsingular. Deterministic throughout; never returns a
/// point worse than its input.
fn polish_hinge(
    x: &FeatureMatrix,
    y: &[i8],
    sample_weights: &[f64],
    config: &ModelConfig,
    weights: &mut [f64],
    bias: &mut f64,
) {
    let dim = x.dim();
    let c = config.c;

    // Merge exact duplicates (same label, same row bits).
    let mut groups: HashMap<(i8, Vec<(u32, u64)>), usize> = HashMap::new();
    let mut rows: Vec<usize> = Vec::new();
    let mut labels: Vec<f64> = Vec::new();
    let mut combined: Vec<f64> = Vec::new();
    for i in 0..x.n_rows() {
        let key = (
            y[i],
            x.row(i)
                .entries()
                .iter()
                .map(|&(j, v)| (j, v.to_bits()))
                .collect::<Vec<_>>(),
        );
        match groups.get(&key) {
            Some(&g) => combined[g] += sample_weights[i],
            None => {
                groups.insert(key, rows.len());
                rows.push(i);
                labels.push(y[i] as f64);
                combined.push(sample_weights[i]);
            }
        }
    }
    let m = rows.len();
    let row = |k: usize| x.row(rows[k]);

    let objective_of = |w: &[f64], b: f64| -> f64 {
        let mut loss_sum = 0.0;
        for k in 0..m {
            let margin = labels[k] * (row(k).dot_dense(w) + b);
            loss_sum += combined[k] * (1.0 - margin).max(0.0);
        }
        0.5 * w.iter().map(|v| v * v).sum::<f64>() + c * loss_sum
    };

    let mut w = weights.to_vec();
    let mut b = *bias;
    let mut margins: Vec<f64> = (0..m)
        .map(|k| labels[k] * (row(k).dot_dense(&w) + b))
        .collect();
    let mut best = (objective_of(&w, b), w.clone(), b);

    let classify = |margin: f64| -> MarginSide {
        if (margin - 1.0).abs() <= 1e-7 {
            MarginSide::Kink
        } else if margin < 1.0 {
            MarginSide::Active
        } else {
            MarginSide::Inactive
        }
    };
    let mut side: Vec<MarginSide> = margins.iter().map(|&mg| classify(mg)).collect();

    for _ in 0..POLISH_MAX_STEPS {
        let kink: Vec<usize> = (0..m).filter(|&k| side[k] == MarginSide::Kink).collect();
        if kink.len() > POLISH_MAX_KINK {
            break;
        }

        // u = C * sum_{active} c_k y_k x_k; stationarity of the face pins
        // w = u + sum_{kink} gamma_l x_l with gamma_l = beta_l y_l and the
        // bias condition sum gamma_l = -sum_{active} C c_k y_k.
        let mut u = vec![0.0; dim];
        let mut active_label_weight = 0.0;
        for k in 0..m {
            if side[k] == MarginSide::Active {
                let factor = c * combined[k] * labels[k];
                row(k).add_scaled_into(factor, &mut u);
                active_label_weight += factor;
            }
        }

        let (face_w, face_b, gammas) = if kink.is_empty() {
            // No equality constraints: w = u is stationary in w, and the
            // bias direction is handled by the crossing-limited walk below.
            (u, b + active_label_weight.signum() * 0.0, Vec::new())
        } else {
            let k_len = kink.len();
            let mut matrix = vec![vec![0.0; k_len + 1]; k_len + 1];
            let mut rhs = vec![0.0; k_len + 1];
            for (a_pos, &ak) in kink.iter().enumerate() {
                for (b_pos, &bk) in kink.iter().enumerate().skip(a_pos) {
                    let dot = sparse_dot(row(ak), row(bk));
                    matrix[a_pos][b_pos] = dot;
                    matrix[b_pos][a_pos] = dot;
                }
                matrix[a_pos][k_len] = 1.0;
                matrix[k_len][a_pos] = 1.0;
                rhs[a_pos] = labels[ak] - row(ak).dot_dense(&u);
            }
            rhs[k_len] = -active_label_weight;
            let solution = match solve_dense(matrix, rhs) {
                Some(solution) => solution,
                None => break,
            };
            let mut face_w = u;
            for (pos, &ak) in kink.iter().enumerate() {
                row(ak).add_scaled_into(solution[pos], &mut face_w);
            }
            let face_b = solution[k_len];
            (face_w, face_b, solution[..k_len].to_vec())
        };

        let direction: Vec<f64> = face_w.iter().zip(&w).map(|(f, cur)| f - cur).collect();
        let direction_bias = if kink.is_empty() {
            // Descend in b when the active set is unbalanced.
            active_label_weight
        } else {
            face_b - b
        };
        let step_norm = direction
            .iter()
            .fold(direction_bias.abs(), |acc, d| acc.max(d.abs()));
        let scale = 1.0 + w.iter().fold(b.abs(), |acc, v| acc.max(v.abs()));

        if step_norm <= 1e-12 * scale {
            // At the face optimum: check multiplier feasibility.
            let mut worst: Option<(usize, f64, MarginSide)> = None;
            for (pos, &ak) in kink.iter().enumerate() {
                let beta = gammas[pos] * labels[ak];
                let upper = c * combined[ak];
                let tolerance = 1e-10 * (1.0 + upper);
                if beta < -tolerance {
                    let violation = -beta;
                    if worst.map_or(true, |(_, v, _)| violation > v) {
                        worst = Some((ak, violation, MarginSide::Inactive));
                    }
                } else if beta > upper + tolerance {
                    let violation = beta - upper;
                    if worst.map_or(true, |(_, v, _)| violation > v) {
                        worst = Some((ak, violation, MarginSide::Active));
                    }
                }
            }
            match worst {
                Some((ak, _, new_side)) => {
                    side[ak] = new_side;
                    continue;
                }
                None => break, // optimal
            }
        }

        // Walk toward the face optimum, stopping at the first margin that
        // crosses the kink.
        let mut limit = 1.0f64;
        let mut blocker: Option<usize> = None;
        let mut margin_delta = vec![0.0; m];
        for k in 0..m {
            margin_delta[k] = labels[k] * (row(k).dot_dense(&direction) + direction_bias);
            if side[k] == MarginSide::Kink {
                continue;
            }
            let gap = 1.0 - margins[k];
            let crossing = gap / margin_delta[k];
            let approaching = match side[k] {
                MarginSide::Active => margin_delta[k] > 0.0,
                MarginSide::Inactive => margin_delta[k] < 0.0,
                MarginSide::Kink => false,
            };
            // Ignore sub-epsilon crossings: a freshly dropped constraint
            // sits at margin one and must not re-block at step zero.
            if approaching && crossing > 1e-12 && crossing < limit {
                limit = crossing;
                blocker = Some(k);
            }
        }
        if kink.is_empty() && blocker.is_none() {
            // Unconstrained in b with nothing to hit: already optimal in w.
            break;
        }

        for (wv, d) in w.iter_mut().zip(&direction) {
            *wv += limit * d;
        }
        b += limit * direction_bias;
        for k in 0..m {
            margins[k] += limit * margin_delta[k];
        }
        if let Some(k) = blocker {
            if limit < 1.0 {
                side[k] = MarginSide::Kink;
                margins[k] = 1.0;
            }
        }
        let objective = objective_of(&w, b);
        if objective.is_finite() && objective < best.0 {
            best = (objective, w.clone(), b);
        }
    }

    if best.0 < hinge_objective(x, y, sample_weights, c, weights, *bias) {
        weights.copy_from_slice(&best.1);
        *bias = best.2;
    }
}

/// Raw decision scores w.x + b; higher means higher misstatement risk.
pub fn decision_scores(
    model: &TrainedLinearModel,
    x: &FeatureMatrix,
) -> Result<Vec<f64>, ModelError> {
    if x.dim() != model.weights.len() {
        return Err(ModelError::DimensionMismatch {
            expected: model.weights.len(),
            got: x.dim(),
        });
    }
    Ok(x.rows()
        .iter()
        .map(|row| row.dot_dense(&model.weights) + model.bias)
        .collect())
}

/// Sigmoid link mapping a decision score into (0, 1), clamped away from the
/// endpoints so downstream log losses stay finite. Exact for logistic
/// models; an uncalibrated link for hinge models.
pub fn score_to_probability(score: f64) -> f64 {
    let p = if score >= 0.0 {
        1.0 / (1.0 + (-score).exp())
    } else {
        let e = score.exp();
        e / (1.0 + e)
    };
    p.clamp(1e-12, 1.0 - 1e-12)
}

/// FNV-1a over the training inputs, recorded on the trained model.
fn fingerprint(
    x: &FeatureMatrix,
    y: &[i8],
    sample_weights: &[f64],
    config: &ModelConfig,
    seed: u64,
) -> u64 {
    const OFFSET: u64 = 0xcbf29ce484222325;
    const PRIME: u64 = 0x100000001b3;
    let mut hash = OFFSET;
    let mut feed = |bytes: &[u8]| {
        for &b in bytes {
            hash ^= b as u64;
            hash = hash.wrapping_mul(PRIME);
        }
    };
    feed(&(x.dim() as u64).to_le_bytes());
    feed(&(x.n_rows() as u64).to_le_bytes());
    for row in x.rows() {
        for &(i, v) in row.entries() {
            feed(&i.to_le_bytes());
            feed(&v.to_bits().to_le_bytes());
        }
    }
    for &label in y {
        feed(&[label as u8]);
    }
    for &w in sample_weights {
        feed(&w.to_bits().to_le_bytes());
    }
    feed(config.loss.as_str().as_bytes());
    feed(&config.c.to_bits().to_le_bytes());
    feed(config.class_weighting.as_str().as_bytes());
    feed(&(config.max_iters as u64).to_le_bytes());
    feed(&config.tol.to_bits().to_le_bytes());
    feed(&seed.to_le_bytes());
    hash
}

/// Mean validation losses per grid config and the winning config.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchOutcome {
    pub best: ModelConfig,
    pub mean_validation_losses: Vec<f64>,
}

/// Evaluates every config by mean negative log loss over stratified inner
/// splits of the training keys, labeled with effective labels. Ties go to
/// the smaller C, then to earlier grid order.
pub fn grid_search(
    train_keys: &[RecordKey],
    features: &FeatureMatrix,
    effective_labels: &EffectiveLabelSet,
    grid: &[ModelConfig],
    k: usize,
    seed: u64,
) -> Result<GridSearchOutcome, ModelError> {
    if grid.is_empty() {
        return Err(ModelError::EmptyGrid);
    }
    for config in grid {
        config.validate()?;
    }
    let splits = inner_cv_splits(train_keys, effective_labels, k, seed)?;
    let row_of: HashMap<&RecordKey, usize> = features
        .keys()
        .iter()
        .enumerate()
        .map(|(i, key)| (key, i))
        .collect();
    let lookup = |keys: &[RecordKey]| -> Result<Vec<usize>, ModelError> {
        keys.iter()
            .map(|key| {
                row_of
                    .get(key)
                    .copied()
                    .ok_or_else(|| ModelError::Split(TemporalError::UnknownKey(key.to_string())))
            })
            .collect()
    };

    struct SplitData {
        train: FeatureMatrix,
        train_labels: Vec<i8>,
        validation: FeatureMatrix,
        validation_truth: Vec<bool>,
    }
    let mut prepared = Vec::with_capacity(splits.len());
    for (train_keys, validation_keys) in &splits {
        let train_rows = lookup(train_keys)?;
        let validation_rows = lookup(validation_keys)?;
        let train_labels = train_keys
            .iter()
            .map(|key| if effective_labels.get(key).unwrap() { 1 } else { -1 })
            .collect();
        let validation_truth = validation_keys
            .iter()
            .map(|key| effective_labels.get(key).unwrap())
            .collect();
        prepared.push(SplitData {
            train: features.subset(&train_rows),
            train_labels,
            validation: features.subset(&validation_rows),
            validation_truth,
        });
    }

    let mut mean_losses = Vec::with_capacity(grid.len());
    for config in grid {
        let mut total = 0.0;
        for split in &prepared {
            let sw = sample_weights_for(config, &split.train_labels)?;
            let model = train(&split.train, &split.train_labels, &sw, config, seed)?;
            let scores = decision_scores(&model, &split.validation)?;
            let probabilities: Vec<f64> =
                scores.into_iter().map(score_to_probability).collect();
            total += neg_log_loss(&probabilities, &split.validation_truth)
                .expect("validation parts are non-empty");
        }
        mean_losses.push(total / prepared.len() as f64);
    }

    let mut best_index = 0;
    for i in 1..grid.len() {
        let better = mean_losses[i] < mean_losses[best_index]
            || (mean_losses[i] == mean_losses[best_index] && grid[i].c < grid[best_index].c);
        if better {
            best_index = i;
        }
    }
    Ok(GridSearchOutcome {
        best: grid[best_index].clone(),
        mean_validation_losses: mean_losses,
    })
}

/// Serializes a model as a plain-text, round-trippable document.
pub fn export_model(model: &TrainedLinearModel) -> String {
    let mut out = String::new();
    out.push_str("misrank-model v1\n");
    out.push_str(&format!("loss {}\n", model.config.loss.as_str()));
    out.push_str(&format!("c {}\n", model.config.c));
    out.push_str(&format!(
        "class_weighting {}\n",
        model.config.class_weighting.as_str()
    ));
    out.push_str(&format!("max_iters {}\n", model.config.max_iters));
    out.push_str(&format!("tol {}\n", model.config.tol));
    out.push_str(&format!("dim {}\n", model.weights.len()));
    out.push_str(&format!("fingerprint {:016x}\n", model.train_fingerprint));
    out.push_str(&format!("bias {}\n", model.bias));
    for w in &model.weights {
        out.push_str(&format!("{w}\n"));
    }
    out
}

/// Parses the [`export_model`] format.
pub fn import_model(text: &str) -> Result<TrainedLinearModel, ModelError> {
    let mut lines = text.lines();
    let bad = |msg: &str| ModelError::MalformedModel(msg.to_string());
    let header = lines.next().ok_or_else(|| bad("missing header"))?;
    if header != "misrank-model v1" {
        return Err(bad("unknown header"));
    }
    let mut field = |name: &str| -> Result<String, ModelError> {
        let line = lines
            .next()
            .ok_or_else(|| bad(&format!("missing field {name}")))?;
        line.strip_prefix(&format!("{name} "))
            .map(str::to_string)
            .ok_or_else(|| bad(&format!("expected field {name}, got {line:?}")))
    };
    let loss: Loss = field("loss")?.parse().map_err(|e: String| bad(&e))?;
    let c: f64 = field("c")?.parse().map_err(|_| bad("bad c"))?;
    let class_weighting: ClassWeighting =
        field("class_weighting")?.parse().map_err(|e: String| bad(&e))?;
    let max_iters: usize = field("max_iters")?.parse().map_err(|_| bad("bad max_iters"))?;
    let tol: f64 = field("tol")?.parse().map_err(|_| bad("bad tol"))?;
    let dim: usize = field("dim")?.parse().map_err(|_| bad("bad dim"))?;
    let train_fingerprint = u64::from_str_radix(&field("fingerprint")?, 16)
        .map_err(|_| bad("bad fingerprint"))?;
    let bias: f64 = field("bias")?.parse().map_err(|_| bad("bad bias"))?;
    let mut weights = Vec::with_capacity(dim);
    for line in lines {
        if line.is_empty() {
            continue;
        }
        weights.push(line.parse::<f64>().map_err(|_| bad("bad weight"))?);
    }
    if weights.len() != dim {
        return Err(bad(&format!(
            "expected {dim} weights, found {}",
            weights.len()
        )));
    }
    Ok(TrainedLinearModel {
        weights,
        bias,
        config: ModelConfig {
            loss,
            c,
            class_weighting,
            max_iters,
            tol,
        },
        train_fingerprint,
        iterations: 0,
    })
}
