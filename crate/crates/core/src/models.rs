//! Contracts between the decode engine and the models and world it drives.

use alloc::vec::Vec;

use crate::actions::{ActionSlice, Token};
use crate::Result;

/// The target model. Greedy (argmax) decoding; one `greedy` call is one
/// parallel verification pass.
pub trait VerifierModel {
    type Obs;

    /// Greedy tokens for every position of `chain` plus the position right
    /// after it, teacher-forced on `pending` (tokens already emitted for the
    /// current, not yet applied slice) followed by `chain`. Returns
    /// `chain.len() + 1` tokens.
    fn greedy(&self, obs: &Self::Obs, pending: &[Token], chain: &[Token]) -> Result<Vec<Token>>;

    /// Final-layer input features for the current step, used for verify-skip.
    fn features(&self, obs: &Self::Obs) -> Vec<f64>;

    /// Unit-norm observation embedding used as the retrieval query.
    fn embed(&self, obs: &Self::Obs) -> Vec<f64> {
        self.features(obs)
    }
}

/// A cheap draft model. Deterministic given its seed and inputs.
pub trait DrafterModel {
    type Obs;

    /// Exactly `len` draft tokens continuing `pending`.
    fn draft(&mut self, obs: &Self::Obs, pending: &[Token], len: usize) -> Result<Vec<Token>>;
}

/// The world the emitted actions act on.
pub trait Environment {
    type Obs;

    fn observe(&self) -> Self::Obs;

    /// Execute one dequantized action slice.
    fn apply(&mut self, action: &ActionSlice);

    /// End-effector position, fed to the kinematic metric.
    fn position(&self) -> [f64; 3];

    fn done(&self) -> bool;

    fn success(&self) -> bool;
}
