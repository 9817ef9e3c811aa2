//! Identity classification loss on batch-normalized visible and infrared
//! features: a shared classifier, one classifier per modality, and a
//! consistency term against EMA shadows of the modality classifiers.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::tensor::{log_softmax_row, softmax_row, Matrix};

/// Per-feature batch normalization with a learnable affine.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    /// Blends the batch statistics of a training-mode pass into the running
    /// estimates (unbiased variance). No-op for eval-mode caches.
    pub fn update_running(&mut self, cache: &NormCache) {
        if !cache.training {
            return;
        }
        let n = cache.normalized.rows() as f64;
        let m = self.momentum;
        for c in 0..self.dim() {
            self.running_mean[c] = (1.0 - m) * self.running_mean[c] + m * cache.mean[c];
            let unbiased = cache.var[c] * n / (n - 1.0);
            self.running_var[c] = (1.0 - m) * self.running_var[c] + m * unbiased;
        }
    }

    /// Eval-mode normalization of `x` with the running statistics.
    pub fn apply_running(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "BatchNorm::apply_running",
                expected: self.dim(),
                actual: x.cols(),
            });
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                let inv_std = 1.0 / (self.running_var[c] + self.eps).sqrt();
                *v = self.gamma[c] * (*v - self.running_mean[c]) * inv_std + self.beta[c];
            }
        }
        Ok(out)
    }

    /// Gradients of a scalar with respect to the normalizer inputs and affine
    /// parameters, given its gradients with respect to the outputs.
    pub fn backward(&self, cache: &NormCache, grad_v: &Matrix, grad_i: &Matrix) -> Result<NormGrads> {
        let grad = Matrix::vstack(&[grad_v, grad_i])?;
        let rows = grad.rows();
        let dim = self.dim();
        let mut gamma = vec![0.0; dim];
        let mut beta = vec![0.0; dim];
        let mut input = Matrix::zeros(rows, dim);
        for c in 0..dim {
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for r in 0..rows {
                sum_g += grad[(r, c)];
                sum_gx += grad[(r, c)] * cache.normalized[(r, c)];
            }
            gamma[c] = sum_gx;
            beta[c] = sum_g;
            let scale = self.gamma[c] * cache.inv_std[c];
            if cache.training {
                let n = rows as f64;
                for r in 0..rows {
                    let xhat = cache.normalized[(r, c)];
                    input[(r, c)] = scale / n * (n * grad[(r, c)] - sum_g - xhat * sum_gx);
                }
            } else {
                for r in 0..rows {
                    input[(r, c)] = scale * grad[(r, c)];
                }
            }
        }
        let mut parts = input
            .split_rows(&[cache.rows_visible, rows - cache.rows_visible])
            .into_iter();
        Ok(NormGrads {
            visible: parts.next().expect("two parts"),
            infrared: parts.next().expect("two parts"),
            gamma,
            beta,
        })
    }
}

/// Forward quantities needed by [`BatchNorm::backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct NormCache {
    /// Pre-affine normalized values of the concatenated batch.
    pub normalized: Matrix,
    pub mean: Vec<f64>,
    /// Biased batch variance (training) or running variance (eval).
    pub var: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub rows_visible: usize,
    pub training: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormOutput {
    pub x_v: Matrix,
    pub x_i: Matrix,
    pub cache: NormCache,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormGrads {
    pub visible: Matrix,
    pub infrared: Matrix,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Batch-normalizes the concatenation of `f_v` and `f_i`. In training mode
/// the batch statistics are used; otherwise the running statistics.
pub fn normalize_features(f_v: &Matrix, f_i: &Matrix, bn: &BatchNorm, training: bool) -> Result<NormOutput> {
    let all = Matrix::vstack(&[f_v, f_i])?;
    if all.cols() != bn.dim() {
        return Err(Error::DimensionMismatch {
            context: "normalize_features",
            expected: bn.dim(),
            actual: all.cols(),
        });
    }
    let rows = all.rows();
    if rows == 0 || (training && rows < 2) {
        return Err(Error::DegenerateBatch(rows));
    }
    let dim = bn.dim();
    let (mean, var) = if training {
        let n = rows as f64;
        let mut mean = vec![0.0; dim];
        for r in all.row_iter() {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in all.row_iter() {
            for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        var.iter_mut().for_each(|v| *v /= n);
        (mean, var)
    } else {
        (bn.running_mean.clone(), bn.running_var.clone())
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + bn.eps).sqrt()).collect();
    let mut normalized = Matrix::zeros(rows, dim);
    let mut out = Matrix::zeros(rows, dim);
    for r in 0..rows {
        for c in 0..dim {
            let xhat = (all[(r, c)] - mean[c]) * inv_std[c];
            normalized[(r, c)] = xhat;
            out[(r, c)] = bn.gamma[c] * xhat + bn.beta[c];
        }
    }
    let mut parts = out.split_rows(&[f_v.rows(), f_i.rows()]).into_iter();
    Ok(NormOutput {
        x_v: parts.next().expect("two parts"),
        x_i: parts.next().expect("two parts"),
        cache: NormCache {
            normalized,
            mean,
            var,
            inv_std,
            rows_visible: f_v.rows(),
            training,
        },
    })
}

/// Bias-free linear classifiers (`classes × dim` weight matrices), their EMA
/// shadows and the feature normalizer that precedes them.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierSet {
    pub shared: Matrix,
    pub visible: Matrix,
    pub infrared: Matrix,
    pub shadow_visible: Matrix,
    pub shadow_infrared: Matrix,
    pub normalizer: BatchNorm,
    /// EMA update rate.
    pub rate: f64,
    /// Soft targets use the opposite modality's shadow (`θ̃^i` for the visible
    /// branch and vice versa). When false, each branch uses its own shadow.
    pub cross_assign: bool,
}

impl ClassifierSet {
    /// Weights drawn from N(0, 0.001²); shadows start as copies of the live weights.
    pub fn random(classes: usize, dim: usize, rate: f64, rng: &mut Stream) -> Self {
        let mut draw = || {
            let data = (0..classes * dim)
                .map(|_| 0.001 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            Matrix::from_vec(classes, dim, data).expect("sized")
        };
        let shared = draw();
        let visible = draw();
        let infrared = draw();
        Self {
            shadow_visible: visible.clone(),
            shadow_infrared: infrared.clone(),
            shared,
            visible,
            infrared,
            normalizer: BatchNorm::new(dim),
            rate,
            cross_assign: true,
        }
    }

    pub fn classes(&self) -> usize {
        self.shared.rows()
    }

    pub fn dim(&self) -> usize {
        self.shared.cols()
    }

    /// `θ̃ ← (1 − r)·θ̃ + r·θ` for both modality classifiers.
    pub fn ema_update(&mut self) {
        let r = self.rate;
        for (shadow, live) in [
            (&mut self.shadow_visible, &self.visible),
            (&mut self.shadow_infrared, &self.infrared),
        ] {
            for (s, l) in shadow.as_mut_slice().iter_mut().zip(live.as_slice()) {
                *s = (1.0 - r) * *s + r * l;
            }
        }
    }

    /// Shadows that produce the soft targets of the (visible, infrared) branch.
    fn target_shadows(&self) -> (&Matrix, &Matrix) {
        if self.cross_assign {
            (&self.shadow_infrared, &self.shadow_visible)
        } else {
            (&self.shadow_visible, &self.shadow_infrared)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierGrads {
    pub shared: Matrix,
    pub visible: Matrix,
    pub infrared: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdLossOutput {
    pub value: f64,
    pub ce_shared: f64,
    pub ce_visible: f64,
    pub ce_infrared: f64,
    pub consistency: f64,
    pub grad_x_v: Matrix,
    pub grad_x_i: Matrix,
    pub grads: ClassifierGrads,
}

/// Mean cross-entropy against hard labels, with `dL/dlogits`.
pub fn cross_entropy_hard(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let classes = logits.cols();
    let rows = logits.rows();
    let mut grad = Matrix::zeros(rows, classes);
    let mut sum = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
        let log_p = log_softmax_row(logits.row(r));
        sum -= log_p[y];
        for (c, g) in grad.row_mut(r).iter_mut().enumerate() {
            *g = (log_p[c].exp() - if c == y { 1.0 } else { 0.0 }) / rows as f64;
        }
    }
    Ok((sum / rows as f64, grad))
}

/// Mean of `−Σ q·log softmax(logits)` over rows; `targets` is held constant.
pub fn cross_entropy_soft(logits: &Matrix, targets: &Matrix) -> (f64, Matrix) {
    let rows = logits.rows();
    let mut grad = Matrix::zeros(rows, logits.cols());
    let mut sum = 0.0;
    for r in 0..rows {
        let log_p = log_softmax_row(logits.row(r));
        let q = targets.row(r);
        let q_mass: f64 = q.iter().sum();
        for (c, g) in grad.row_mut(r).iter_mut().enumerate() {
            sum -= q[c] * log_p[c];
            *g = (q_mass * log_p[c].exp() - q[c]) / rows as f64;
        }
    }
    (sum / rows as f64, grad)
}

struct CeTerms {
    shared: f64,
    visible: f64,
    infrared: f64,
    grad_x_v: Matrix,
    grad_x_i: Matrix,
    grads: ClassifierGrads,
    /// Logits of the live modality classifiers, reused by the consistency term.
    z_v: Matrix,
    z_i: Matrix,
}

fn validate(x_v: &Matrix, x_i: &Matrix, labels: &[usize], cls: &ClassifierSet) -> Result<()> {
    for x in [x_v, x_i] {
        if x.rows() != labels.len() {
            return Err(Error::DimensionMismatch {
                context: "loss_id labels",
                expected: x.rows(),
                actual: labels.len(),
            });
        }
        if x.cols() != cls.dim() {
            return Err(Error::DimensionMismatch {
                context: "loss_id features",
                expected: cls.dim(),
                actual: x.cols(),
            });
        }
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= cls.classes()) {
        return Err(Error::LabelOutOfRange {
            label,
            classes: cls.classes(),
        });
    }
    if labels.is_empty() {
        return Err(Error::Empty("identity loss batch"));
    }
    Ok(())
}

fn ce_terms(x_v: &Matrix, x_i: &Matrix, labels: &[usize], cls: &ClassifierSet) -> Result<CeTerms> {
    let n = labels.len();
    let x_vi = Matrix::vstack(&[x_v, x_i])?;
    let labels_vi: Vec<usize> = labels.iter().chain(labels).copied().collect();

    let z_shared = x_vi.matmul_t(&cls.shared)?;
    let (shared, g_shared) = cross_entropy_hard(&z_shared, &labels_vi)?;
    let z_v = x_v.matmul_t(&cls.visible)?;
    let (visible, g_v) = cross_entropy_hard(&z_v, labels)?;
    let z_i = x_i.matmul_t(&cls.infrared)?;
    let (infrared, g_i) = cross_entropy_hard(&z_i, labels)?;

    let gx_shared = g_shared.matmul(&cls.shared)?;
    let mut split = gx_shared.split_rows(&[n, n]).into_iter();
    let mut grad_x_v = split.next().expect("two parts");
    let mut grad_x_i = split.next().expect("two parts");
    grad_x_v.axpy(1.0, &g_v.matmul(&cls.visible)?);
    grad_x_i.axpy(1.0, &g_i.matmul(&cls.infrared)?);

    Ok(CeTerms {
        shared,
        visible,
        infrared,
        grad_x_v,
        grad_x_i,
        grads: ClassifierGrads {
            shared: g_shared.t_matmul(&x_vi)?,
            visible: g_v.t_matmul(x_v)?,
            infrared: g_i.t_matmul(x_i)?,
        },
        z_v,
        z_i,
    })
}

/// Soft targets `softmax(z̃^m)` of the consistency term, rows ordered as
/// the visible then the infrared batch.
pub fn consistency_targets(x_v: &Matrix, x_i: &Matrix, cls: &ClassifierSet) -> Result<Matrix> {
    let (target_v, target_i) = cls.target_shadows();
    let z_tilde = Matrix::vstack(&[&x_v.matmul_t(target_v)?, &x_i.matmul_t(target_i)?])?;
    let mut q = Matrix::zeros(z_tilde.rows(), z_tilde.cols());
    for r in 0..z_tilde.rows() {
        q.row_mut(r).copy_from_slice(&softmax_row(z_tilde.row(r)));
    }
    Ok(q)
}

/// Adds the consistency term `CE(z^m, q)` for constant targets `q`.
fn finish(x_v: &Matrix, x_i: &Matrix, cls: &ClassifierSet, mut ce: CeTerms, q: &Matrix) -> Result<IdLossOutput> {
    let n = x_v.rows();
    if q.shape() != (2 * n, cls.classes()) {
        return Err(Error::DimensionMismatch {
            context: "consistency targets",
            expected: 2 * n,
            actual: q.rows(),
        });
    }
    let z_m = Matrix::vstack(&[&ce.z_v, &ce.z_i])?;
    let (consistency, g_zm) = cross_entropy_soft(&z_m, q);
    let mut split = g_zm.split_rows(&[n, n]).into_iter();
    let g_zv = split.next().expect("two parts");
    let g_zi = split.next().expect("two parts");

    ce.grad_x_v.axpy(1.0, &g_zv.matmul(&cls.visible)?);
    ce.grad_x_i.axpy(1.0, &g_zi.matmul(&cls.infrared)?);
    ce.grads.visible.axpy(1.0, &g_zv.t_matmul(x_v)?);
    ce.grads.infrared.axpy(1.0, &g_zi.t_matmul(x_i)?);

    Ok(IdLossOutput {
        value: ce.shared + ce.visible + ce.infrared + consistency,
        ce_shared: ce.shared,
        ce_visible: ce.visible,
        ce_infrared: ce.infrared,
        consistency,
        grad_x_v: ce.grad_x_v,
        grad_x_i: ce.grad_x_i,
        grads: ce.grads,
    })
}

/// One training evaluation of the identity loss: the three hard-label
/// cross-entropies, then the EMA update of the shadows, then the consistency
/// term against the updated shadows. Mutates the shadows in `cls`.
pub fn loss_id(x_v: &Matrix, x_i: &Matrix, labels: &[usize], cls: &mut ClassifierSet) -> Result<IdLossOutput> {
    validate(x_v, x_i, labels, cls)?;
    let ce = ce_terms(x_v, x_i, labels, cls)?;
    cls.ema_update();
    let q = consistency_targets(x_v, x_i, cls)?;
    finish(x_v, x_i, cls, ce, &q)
}

/// The identity loss with the shadows of `cls` taken as already updated.
/// Pure.
pub fn loss_id_fixed_targets(
    x_v: &Matrix,
    x_i: &Matrix,
    labels: &[usize],
    cls: &ClassifierSet,
) -> Result<IdLossOutput> {
    let q = consistency_targets(x_v, x_i, cls)?;
    loss_id_given_targets(x_v, x_i, labels, cls, &q)
}

/// The identity loss with consistency targets `q` supplied. This is the
/// function whose derivative the other identity-loss entry points report.
pub fn loss_id_given_targets(
    x_v: &Matrix,
    x_i: &Matrix,
    labels: &[usize],
    cls: &ClassifierSet,
    q: &Matrix,
) -> Result<IdLossOutput> {
    validate(x_v, x_i, labels, cls)?;
    let ce = ce_terms(x_v, x_i, labels, cls)?;
    finish(x_v, x_i, cls, ce, q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn single_class_has_zero_loss() {
        let mut cls = ClassifierSet::random(1, 3, 0.2, &mut rng::stream(0));
        let x = Matrix::from_rows(&[[0.1, 0.2, 0.3], [1.0, -1.0, 0.5]]).unwrap();
        let out = loss_id(&x, &x, &[0, 0], &mut cls).unwrap();
        assert_eq!(out.value, 0.0);
        assert_eq!(out.grad_x_v.max_abs(), 0.0);
    }

    #[test]
    fn ema_arithmetic() {
        let mut cls = ClassifierSet::random(2, 2, 0.2, &mut rng::stream(0));
        cls.visible = Matrix::filled(2, 2, 1.0);
        cls.shadow_visible = Matrix::zeros(2, 2);
        cls.ema_update();
        assert!(cls.shadow_visible.as_slice().iter().all(|&x| x == 0.2));
    }

    #[test]
    fn labels_out_of_range() {
        let mut cls = ClassifierSet::random(2, 2, 0.2, &mut rng::stream(0));
        let x = Matrix::zeros(1, 2);
        assert!(matches!(
            loss_id(&x, &x, &[2], &mut cls),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn constant_column_maps_to_bias() {
        let mut bn = BatchNorm::new(2);
        bn.beta = vec![0.7, -0.3];
        bn.gamma = vec![2.0, 3.0];
        let f_v = Matrix::from_rows(&[[5.0, 1.0], [5.0, 2.0]]).unwrap();
        let f_i = Matrix::from_rows(&[[5.0, 3.0], [5.0, 4.0]]).unwrap();
        let out = normalize_features(&f_v, &f_i, &bn, true).unwrap();
        for r in 0..2 {
            assert_eq!(out.x_v[(r, 0)], 0.7);
            assert_eq!(out.x_i[(r, 0)], 0.7);
        }
    }

    #[test]
    fn normalized_columns_are_standardized() {
        let bn = BatchNorm::new(3);
        let f_v = Matrix::from_rows(&[[1.0, 10.0, -3.0], [2.0, 11.0, 0.0], [0.5, 7.0, 1.0]]).unwrap();
        let f_i = Matrix::from_rows(&[[3.0, 9.0, 2.0], [-1.0, 12.0, 5.0]]).unwrap();
        let out = normalize_features(&f_v, &f_i, &bn, true).unwrap();
        let x = &out.cache.normalized;
        for c in 0..3 {
            let mean = (0..5).map(|r| x[(r, c)]).sum::<f64>() / 5.0;
            let var = (0..5).map(|r| (x[(r, c)] - mean).powi(2)).sum::<f64>() / 5.0;
            assert!(mean.abs() < 1e-6);
            // eps inflates the denominator slightly
            assert!((var - 1.0).abs() < 1e-4, "{var}");
        }
    }

    #[test]
    fn eval_mode_is_affine_in_running_stats() {
        let mut bn = BatchNorm::new(2);
        bn.running_mean = vec![1.0, -2.0];
        bn.running_var = vec![4.0, 0.25];
        bn.gamma = vec![0.5, 2.0];
        bn.beta = vec![0.1, 0.2];
        let f = Matrix::from_rows(&[[3.0, 1.0]]).unwrap();
        let out = normalize_features(&f, &f, &bn, false).unwrap();
        for c in 0..2 {
            let want =
                bn.gamma[c] * (f[(0, c)] - bn.running_mean[c]) / (bn.running_var[c] + bn.eps).sqrt() + bn.beta[c];
            assert!((out.x_v[(0, c)] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn single_row_training_batch_is_rejected() {
        let bn = BatchNorm::new(2);
        let f = Matrix::zeros(1, 2);
        let empty = Matrix::zeros(0, 2);
        assert!(matches!(
            normalize_features(&f, &empty, &bn, true),
            Err(Error::DegenerateBatch(1))
        ));
        assert!(normalize_features(&f, &empty, &bn, false).is_ok());
    }

    #[test]
    fn running_stats_only_move_in_training() {
        let mut bn = BatchNorm::new(1);
        let f_v = Matrix::from_rows(&[[1.0], [3.0]]).unwrap();
        let eval = normalize_features(&f_v, &f_v, &bn, false).unwrap();
        bn.update_running(&eval.cache);
        assert_eq!(bn.running_mean, vec![0.0]);
        let train = normalize_features(&f_v, &f_v, &bn, true).unwrap();
        bn.update_running(&train.cache);
        assert!((bn.running_mean[0] - 0.2).abs() < 1e-15);
    }
}
