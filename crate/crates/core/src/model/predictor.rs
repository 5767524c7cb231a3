use log::warn;

use crate::autodiff::{Tape, Tensor};
use crate::blocks::{Ctx, Mode};
use crate::dataset::{FatigueRecord, Vocabulary};
use crate::features::{
    apply_standardizer, encode_records, make_branch_features, trunk_features_at, LogBase, StandardizedInput, Standardizer,
};

use super::{DeepOFormer, Injection, ModelBatch, ModelError};

/// Eval-mode outputs of one forward pass.
#[derive(Debug, Clone)]
pub struct Embeddings {
    pub prediction: Vec<f64>,
    pub branch: Option<Tensor>,
    pub trunk: Option<Tensor>,
}

impl DeepOFormer {
    /// Eval-mode forward returning the prediction and both embeddings.
    pub fn evaluate(&self, batch: &ModelBatch, injection: &Injection, debug_checks: bool) -> Result<Embeddings, ModelError> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false);
        let mut ctx = Ctx::new(&mut tape, &vars, Mode::Eval).with_debug_checks(debug_checks);
        let out = self.forward(&mut ctx, batch, injection)?;
        Ok(Embeddings {
            prediction: tape.value(out.prediction).data().to_vec(),
            branch: out.branch.map(|v| tape.value(v).clone()),
            trunk: out.trunk.map(|v| tape.value(v).clone()),
        })
    }

    /// Eval-mode predictions of log₁₀(N).
    pub fn predict(&self, batch: &ModelBatch) -> Result<Vec<f64>, ModelError> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        Ok(self.evaluate(batch, &Injection::default(), false)?.prediction)
    }
}

/// A model together with everything needed to turn raw records into its
/// inputs.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: DeepOFormer,
    pub vocabulary: Vocabulary,
    pub standardizer: Standardizer,
    pub log_base: LogBase,
}

impl TrainedModel {
    pub fn predict_inputs(&self, inputs: &[StandardizedInput]) -> Result<Vec<f64>, ModelError> {
        self.model.predict(&ModelBatch::from_inputs(inputs))
    }

    pub fn predict_records<'a, I>(&self, records: I) -> Result<Vec<f64>, ModelError>
    where
        I: IntoIterator<Item = &'a FatigueRecord>,
    {
        let enc = encode_records(records, &self.vocabulary, &self.standardizer, self.log_base)?;
        self.predict_inputs(&enc.inputs)
    }

    /// Predictions along a stress-amplitude grid for the material constants
    /// of `material`. Grid points outside the feature domain are skipped
    /// with a warning.
    pub fn predict_curve(&self, material: &FatigueRecord, sigma_grid: &[f64]) -> Result<Vec<(f64, f64)>, ModelError> {
        let branch = make_branch_features(material, &self.vocabulary);
        let mut kept = Vec::with_capacity(sigma_grid.len());
        let mut inputs = Vec::with_capacity(sigma_grid.len());
        let mut skipped = Vec::new();
        for &sigma in sigma_grid {
            let valid = sigma > 0.0 && sigma < material.uts;
            match trunk_features_at(self.log_base, material.uts, material.fatigue_strength, sigma) {
                Ok(trunk) if valid => {
                    kept.push(sigma);
                    inputs.push(apply_standardizer(&self.standardizer, &branch, &trunk));
                }
                _ => skipped.push(sigma),
            }
        }
        if !skipped.is_empty() {
            warn!(
                "curve {}: skipped grid points outside the feature domain: {:?}",
                material.curve_id, skipped
            );
        }
        let preds = self.predict_inputs(&inputs)?;
        Ok(kept.into_iter().zip(preds).collect())
    }
}
