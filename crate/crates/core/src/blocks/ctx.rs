use rand::RngCore;

use crate::autodiff::{AutodiffError, Tape, Var};

use super::ParamId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active.
    Train,
    /// Dropout is the identity.
    Eval,
}

/// State threaded through one forward pass: the tape, the bound
/// parameters, the mode, and the random source for dropout masks.
pub struct Ctx<'a> {
    pub tape: &'a mut Tape,
    params: &'a [Var],
    mode: Mode,
    rng: Option<&'a mut dyn RngCore>,
    debug_checks: bool,
    max_attention_row_error: f64,
}

impl<'a> Ctx<'a> {
    pub fn new(tape: &'a mut Tape, params: &'a [Var], mode: Mode) -> Self {
        Self {
            tape,
            params,
            mode,
            rng: None,
            debug_checks: false,
            max_attention_row_error: 0.0,
        }
    }

    pub fn with_rng(mut self, rng: &'a mut dyn RngCore) -> Self {
        self.rng = Some(rng);
        self
    }

    /// Enables runtime invariant checks (attention row sums).
    pub fn with_debug_checks(mut self, on: bool) -> Self {
        self.debug_checks = on;
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn debug_checks(&self) -> bool {
        self.debug_checks
    }

    pub fn param(&self, id: ParamId) -> Var {
        self.params[id.0]
    }

    pub(crate) fn rng(&mut self) -> Result<&mut dyn RngCore, AutodiffError> {
        match self.rng.as_mut() {
            Some(r) => Ok(&mut **r),
            None => Err(AutodiffError::Invariant("train-mode dropout needs a random source".into())),
        }
    }

    pub(crate) fn note_attention_row_error(&mut self, err: f64) {
        self.max_attention_row_error = self.max_attention_row_error.max(err);
    }

    /// Largest `|row_sum - 1|` seen over attention matrices (debug mode only).
    pub fn max_attention_row_error(&self) -> f64 {
        self.max_attention_row_error
    }
}
