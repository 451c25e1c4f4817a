use crate::backbone::features::FeatureVector;
use crate::backbone::focal::{sigmoid, softmax};
use crate::error::{Error, Result};

/// Linear model over sparse features. One output is a binary classifier
/// scored with the logistic function; several outputs form a softmax
/// classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearClassifier {
    dim: usize,
    outputs: usize,
    /// Row-major `[outputs][dim]`.
    weights: Vec<f32>,
    bias: Vec<f32>,
}

impl LinearClassifier {
    pub fn zeros(dim: usize, outputs: usize) -> Self {
        LinearClassifier {
            dim,
            outputs,
            weights: vec![0.0; dim * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn is_binary(&self) -> bool {
        self.outputs == 1
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f32] {
        &mut self.weights
    }

    pub(crate) fn bias_mut(&mut self) -> &mut [f32] {
        &mut self.bias
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|w| w.is_finite())
    }

    fn check(&self, x: &FeatureVector) -> Result<()> {
        if x.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: x.dim,
            });
        }
        Ok(())
    }

    /// Raw logit of output `o`. The caller guarantees matching dimensions.
    pub(crate) fn logit_unchecked(&self, o: usize, x: &FeatureVector) -> f64 {
        let row = &self.weights[o * self.dim..(o + 1) * self.dim];
        let mut z = self.bias[o] as f64;
        for (j, v) in x.iter() {
            z += row[j] as f64 * v as f64;
        }
        z
    }

    pub fn logits(&self, x: &FeatureVector) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok((0..self.outputs).map(|o| self.logit_unchecked(o, x)).collect())
    }

    /// Anomaly probability of a binary model.
    pub fn probability(&self, x: &FeatureVector) -> Result<f64> {
        if !self.is_binary() {
            return Err(Error::InvalidArgument(format!(
                "probability() needs a binary model, this one has {} outputs",
                self.outputs
            )));
        }
        self.check(x)?;
        Ok(sigmoid(self.logit_unchecked(0, x)))
    }

    /// Class distribution of a multiclass model.
    pub fn distribution(&self, x: &FeatureVector) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x)?))
    }

    /// Model with every weight and bias negated.
    pub fn negated(&self) -> Self {
        LinearClassifier {
            dim: self.dim,
            outputs: self.outputs,
            weights: self.weights.iter().map(|w| -w).collect(),
            bias: self.bias.iter().map(|b| -b).collect(),
        }
    }

    /// Flat `[outputs][dim + 1]` layout, bias last in each row.
    pub fn to_flat(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.outputs * (self.dim + 1));
        for o in 0..self.outputs {
            out.extend_from_slice(&self.weights[o * self.dim..(o + 1) * self.dim]);
            out.push(self.bias[o]);
        }
        out
    }

    pub fn from_flat(outputs: usize, dim: usize, flat: &[f32]) -> Result<Self> {
        if flat.len() != outputs * (dim + 1) {
            return Err(Error::Bundle(format!(
                "weight array has {} floats, shape [{outputs}, {}] needs {}",
                flat.len(),
                dim + 1,
                outputs * (dim + 1)
            )));
        }
        let mut model = LinearClassifier::zeros(dim, outputs);
        for (o, row) in flat.chunks_exact(dim + 1).enumerate() {
            model.weights[o * dim..(o + 1) * dim].copy_from_slice(&row[..dim]);
            model.bias[o] = row[dim];
        }
        if !model.is_finite() {
            return Err(Error::Bundle("weight array contains non-finite values".into()));
        }
        Ok(model)
    }
}
