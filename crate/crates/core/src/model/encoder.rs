//! Two-layer perceptron `obs → hidden → features` with a rectifier between.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    /// `hidden × obs_dim`
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// `feat_dim × hidden`
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl EncoderParams {
    /// He-normal weights, zero biases.
    pub fn random(obs_dim: usize, hidden: usize, feat_dim: usize, rng: &mut Stream) -> Self {
        let mut layer = |rows: usize, cols: usize| {
            let std = (2.0 / cols as f64).sqrt();
            let data = (0..rows * cols)
                .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                .collect();
            Matrix::from_vec(rows, cols, data).expect("sized")
        };
        let w1 = layer(hidden, obs_dim);
        let w2 = layer(feat_dim, hidden);
        Self {
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: vec![0.0; feat_dim],
        }
    }

    /// Square identity layers with zero bias.
    pub fn identity(dim: usize) -> Self {
        Self {
            w1: Matrix::identity(dim),
            b1: vec![0.0; dim],
            w2: Matrix::identity(dim),
            b2: vec![0.0; dim],
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.rows()
    }

    pub fn feat_dim(&self) -> usize {
        self.w2.rows()
    }

    pub fn is_finite(&self) -> bool {
        self.w1.is_finite() && self.w2.is_finite() && self.b1.iter().chain(&self.b2).all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl EncoderGrads {
    pub fn zeros(params: &EncoderParams) -> Self {
        Self {
            w1: Matrix::zeros(params.w1.rows(), params.w1.cols()),
            b1: vec![0.0; params.b1.len()],
            w2: Matrix::zeros(params.w2.rows(), params.w2.cols()),
            b2: vec![0.0; params.b2.len()],
        }
    }

    pub fn add(&mut self, other: &EncoderGrads) {
        self.w1.axpy(1.0, &other.w1);
        self.w2.axpy(1.0, &other.w2);
        for (a, b) in self.b1.iter_mut().zip(&other.b1) {
            *a += b;
        }
        for (a, b) in self.b2.iter_mut().zip(&other.b2) {
            *a += b;
        }
    }
}

/// Activations kept from a forward pass. The observations themselves are
/// not kept; [`EncoderTrace::backward`] takes them again.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderTrace {
    pre_activation: Matrix,
    hidden: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub features: Matrix,
    pub trace: Option<EncoderTrace>,
}

fn affine(x: &Matrix, w: &Matrix, b: &[f64]) -> Result<Matrix> {
    let mut out = x.matmul_t(w)?;
    for r in 0..out.rows() {
        for (o, bias) in out.row_mut(r).iter_mut().zip(b) {
            *o += bias;
        }
    }
    Ok(out)
}

pub fn encode(params: &EncoderParams, observations: &Matrix, compute_grad: bool) -> Result<Encoded> {
    if observations.cols() != params.obs_dim() {
        return Err(Error::DimensionMismatch {
            context: "encode",
            expected: params.obs_dim(),
            actual: observations.cols(),
        });
    }
    let pre_activation = affine(observations, &params.w1, &params.b1)?;
    let mut hidden = pre_activation.clone();
    hidden.as_mut_slice().iter_mut().for_each(|h| *h = h.max(0.0));
    let features = affine(&hidden, &params.w2, &params.b2)?;
    Ok(Encoded {
        features,
        trace: compute_grad.then_some(EncoderTrace { pre_activation, hidden }),
    })
}

impl EncoderTrace {
    /// Parameter gradients given `dL/dfeatures` for the same observations
    /// that produced this trace.
    pub fn backward(
        &self,
        params: &EncoderParams,
        observations: &Matrix,
        grad_features: &Matrix,
    ) -> Result<EncoderGrads> {
        if grad_features.shape() != (self.hidden.rows(), params.feat_dim()) {
            return Err(Error::DimensionMismatch {
                context: "EncoderTrace::backward",
                expected: params.feat_dim(),
                actual: grad_features.cols(),
            });
        }
        let w2 = grad_features.t_matmul(&self.hidden)?;
        let b2 = column_sums(grad_features);
        let mut grad_hidden = grad_features.matmul(&params.w2)?;
        for (g, pre) in grad_hidden
            .as_mut_slice()
            .iter_mut()
            .zip(self.pre_activation.as_slice())
        {
            if *pre <= 0.0 {
                *g = 0.0;
            }
        }
        let w1 = grad_hidden.t_matmul(observations)?;
        let b1 = column_sums(&grad_hidden);
        Ok(EncoderGrads { w1, b1, w2, b2 })
    }
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for r in m.row_iter() {
        for (o, x) in out.iter_mut().zip(r) {
            *o += x;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn identity_layers_pass_nonnegative_input() {
        let p = EncoderParams::identity(3);
        let x = Matrix::from_rows(&[[0.0, 1.5, 2.0], [3.0, 0.25, 0.0]]).unwrap();
        assert_eq!(encode(&p, &x, false).unwrap().features, x);
    }

    #[test]
    fn zero_input_zero_bias() {
        let p = EncoderParams::random(4, 6, 2, &mut rng::stream(1));
        let out = encode(&p, &Matrix::zeros(3, 4), false).unwrap();
        assert_eq!(out.features.max_abs(), 0.0);
        assert!(out.trace.is_none());
    }

    #[test]
    fn dimension_mismatch() {
        let p = EncoderParams::random(4, 6, 2, &mut rng::stream(1));
        assert!(encode(&p, &Matrix::zeros(3, 5), true).is_err());
    }
}
