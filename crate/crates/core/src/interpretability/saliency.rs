//! Gradient saliency: |∂ logit / ∂ pixel|, max over channels, scaled to [0, 1].

use std::path::Path;

use candle_core::{DType, Var};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Classifier;
use crate::preprocess::ImageTensor;

/// Models that expose the gradient of their pre-sigmoid logit.
pub trait LogitGradient {
    /// Returns the logit and its gradient in the image's `H×W×3` layout.
    fn logit_gradient(&self, image: &ImageTensor) -> Result<(f64, Vec<f64>)>;
}

impl LogitGradient for Classifier {
    fn logit_gradient(&self, image: &ImageTensor) -> Result<(f64, Vec<f64>)> {
        if !self.backbone_differentiable() {
            return Err(Error::Unsupported(format!(
                "backbone {} does not provide input gradients",
                self.config().backbone.name
            )));
        }
        let x = Var::from_tensor(&self.input_tensor(std::slice::from_ref(image))?)?;
        let logit = self.logits(x.as_tensor())?;
        let grads = logit.sum_all()?.backward()?;
        let value = logit.to_dtype(DType::F64)?.to_vec1::<f64>()?[0];
        let g = match grads.get(x.as_tensor()) {
            Some(g) => g.to_dtype(DType::F64)?.squeeze(0)?.permute((1, 2, 0))?.flatten_all()?.to_vec1::<f64>()?,
            None => vec![0.0; image.data().len()],
        };
        Ok((value, g))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaliencyMap {
    #[serde(skip)]
    pub values: Vec<f64>,
    pub height: usize,
    pub width: usize,
    /// Largest raw gradient magnitude before normalisation.
    pub raw_max: f64,
    pub logit: f64,
}

impl SaliencyMap {
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Stats<'a> {
            #[serde(flatten)]
            map: &'a SaliencyMap,
            max: f64,
            mean: f64,
        }
        let stats = Stats { map: self, max: self.max(), mean: self.mean() };
        std::fs::write(path, serde_json::to_string_pretty(&stats)? + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Reduces an `H×W×3` gradient to a normalised per-pixel map.
pub fn saliency_from_gradient(grad: &[f64], height: usize, width: usize, logit: f64) -> Result<SaliencyMap> {
    if grad.len() != height * width * 3 {
        return Err(Error::Shape(format!("gradient of length {} for {height}x{width}x3", grad.len())));
    }
    let raw: Vec<f64> = grad
        .chunks_exact(3)
        .map(|p| p.iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .collect();
    let raw_max = raw.iter().copied().fold(0.0, f64::max);
    let values = if raw_max > 0.0 {
        raw.iter().map(|v| v / raw_max).collect()
    } else {
        vec![0.0; raw.len()]
    };
    Ok(SaliencyMap { values, height, width, raw_max, logit })
}

pub fn saliency_map(model: &dyn LogitGradient, image: &ImageTensor) -> Result<SaliencyMap> {
    let (logit, grad) = model.logit_gradient(image)?;
    saliency_from_gradient(&grad, image.height(), image.width(), logit)
}
