//! Continuous <-> discrete conversion of 7-DoF action slices.
//!
//! Every action dimension is uniformly discretized into `K` bins over its
//! configured bounds. Quantization floors, dequantization interpolates
//! linearly between the bounds.

use crate::{Error, Result};

/// Degrees of freedom per action slice: X, Y, Z, rX, rY, rZ, G.
pub const DOF: usize = 7;

/// Index of the gripper dimension inside a slice.
pub const GRIPPER_DIM: usize = 6;

/// Default number of bins per dimension.
pub const DEFAULT_BINS: u32 = 256;

/// One action token (a bin index).
pub type Token = u16;

/// Slack (in bin units) absorbed before flooring. Keeps
/// `quantize(dequantize(b)) == b` despite rounding in the interpolation.
const BIN_EPS: f64 = 1e-9;

/// One 7-DoF action in continuous form.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ActionSlice(pub [f64; DOF]);

impl ActionSlice {
    pub fn position(&self) -> [f64; 3] {
        [self.0[0], self.0[1], self.0[2]]
    }

    pub fn rotation(&self) -> [f64; 3] {
        [self.0[3], self.0[4], self.0[5]]
    }

    pub fn gripper(&self) -> f64 {
        self.0[GRIPPER_DIM]
    }
}

/// One action slice in token form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionBins {
    pub bins: [Token; DOF],
    pub k: u32,
}

/// Per-dimension `(min, max)` bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "[[f64; 2]; DOF]", into = "[[f64; 2]; DOF]"))]
pub struct ActionSpaceBounds {
    dims: [(f64, f64); DOF],
}

impl ActionSpaceBounds {
    pub fn new(dims: [(f64, f64); DOF]) -> Result<Self> {
        for (i, &(lo, hi)) in dims.iter().enumerate() {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::invalid(alloc::format!("bounds of dimension {i} are not finite")));
            }
            if lo >= hi {
                return Err(Error::Config(alloc::format!(
                    "degenerate bounds for dimension {i}: min {lo} must be below max {hi}"
                )));
            }
        }
        Ok(Self { dims })
    }

    /// The same `[lo, hi]` on every dimension.
    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        Self::new([(lo, hi); DOF])
    }

    pub fn dim(&self, i: usize) -> (f64, f64) {
        self.dims[i]
    }

    pub fn dims(&self) -> &[(f64, f64); DOF] {
        &self.dims
    }

    /// Width of one bin on dimension `i`.
    pub fn bin_width(&self, i: usize, k: u32) -> f64 {
        let (lo, hi) = self.dims[i];
        (hi - lo) / f64::from(k - 1)
    }
}

impl Default for ActionSpaceBounds {
    /// Position deltas in ±0.02 length units per step, rotation deltas in
    /// ±0.1 rad, gripper command in [0, 1].
    fn default() -> Self {
        Self {
            dims: [
                (-0.02, 0.02),
                (-0.02, 0.02),
                (-0.02, 0.02),
                (-0.1, 0.1),
                (-0.1, 0.1),
                (-0.1, 0.1),
                (0.0, 1.0),
            ],
        }
    }
}

impl TryFrom<[[f64; 2]; DOF]> for ActionSpaceBounds {
    type Error = Error;

    fn try_from(raw: [[f64; 2]; DOF]) -> Result<Self> {
        Self::new(raw.map(|[lo, hi]| (lo, hi)))
    }
}

impl From<ActionSpaceBounds> for [[f64; 2]; DOF] {
    fn from(b: ActionSpaceBounds) -> Self {
        b.dims.map(|(lo, hi)| [lo, hi])
    }
}

/// Binary gripper state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gripper {
    Open,
    Closed,
}

fn check_bins(k: u32) -> Result<()> {
    if k < 2 || k > u32::from(Token::MAX) + 1 {
        return Err(Error::Config(alloc::format!("bin count {k} outside [2, 65536]")));
    }
    Ok(())
}

/// Quantize one value into `[0, k-1]`, clamping to `[lo, hi]` first.
pub fn quantize_value(a: f64, lo: f64, hi: f64, k: u32) -> Result<Token> {
    if !a.is_finite() {
        return Err(Error::invalid("non-finite action component"));
    }
    if lo >= hi {
        return Err(Error::Config("degenerate bounds: min equals max".into()));
    }
    check_bins(k)?;
    let clamped = a.clamp(lo, hi);
    let t = (clamped - lo) / (hi - lo) * f64::from(k - 1);
    let b = libm::floor(t + BIN_EPS).clamp(0.0, f64::from(k - 1));
    Ok(b as Token)
}

/// Inverse of [`quantize_value`]: linear interpolation of the bin index.
pub fn dequantize_value(b: Token, lo: f64, hi: f64, k: u32) -> Result<f64> {
    check_bins(k)?;
    if u32::from(b) >= k {
        return Err(Error::invalid(alloc::format!("bin {b} outside [0, {}]", k - 1)));
    }
    Ok(lo + f64::from(b) / f64::from(k - 1) * (hi - lo))
}

pub fn quantize(a: &ActionSlice, bounds: &ActionSpaceBounds, k: u32) -> Result<ActionBins> {
    let mut bins = [0; DOF];
    for (i, bin) in bins.iter_mut().enumerate() {
        let (lo, hi) = bounds.dims[i];
        *bin = quantize_value(a.0[i], lo, hi, k)?;
    }
    Ok(ActionBins { bins, k })
}

pub fn dequantize(b: &ActionBins, bounds: &ActionSpaceBounds, k: u32) -> Result<ActionSlice> {
    let mut values = [0.0; DOF];
    for (i, v) in values.iter_mut().enumerate() {
        let (lo, hi) = bounds.dims[i];
        *v = dequantize_value(b.bins[i], lo, hi, k)?;
    }
    Ok(ActionSlice(values))
}

/// Closed iff `g` is at or above the midpoint of the gripper bounds.
pub fn gripper_binary(g: f64, bounds: &ActionSpaceBounds) -> Gripper {
    let (lo, hi) = bounds.dims[GRIPPER_DIM];
    if g >= 0.5 * (lo + hi) {
        Gripper::Closed
    } else {
        Gripper::Open
    }
}

/// Bounds and bin count bundled together; what the engine passes around.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantizer {
    pub bounds: ActionSpaceBounds,
    pub bins: u32,
}

impl Quantizer {
    pub fn new(bounds: ActionSpaceBounds, bins: u32) -> Result<Self> {
        check_bins(bins)?;
        Ok(Self { bounds, bins })
    }

    pub fn quantize(&self, a: &ActionSlice) -> Result<ActionBins> {
        quantize(a, &self.bounds, self.bins)
    }

    /// Tokens of a slice as a plain array.
    pub fn tokens(&self, a: &ActionSlice) -> Result<[Token; DOF]> {
        Ok(self.quantize(a)?.bins)
    }

    pub fn dequantize_tokens(&self, tokens: &[Token; DOF]) -> Result<ActionSlice> {
        dequantize(&ActionBins { bins: *tokens, k: self.bins }, &self.bounds, self.bins)
    }

    /// Token of the bin whose center value lies nearest to `a` on dimension `i`.
    pub fn nearest_token(&self, i: usize, a: f64) -> Result<Token> {
        let (lo, hi) = self.bounds.dims[i];
        let half = 0.5 * self.bounds.bin_width(i, self.bins);
        quantize_value(a + half, lo, hi, self.bins)
    }

    pub fn max_token(&self) -> Token {
        (self.bins - 1) as Token
    }
}

impl Default for Quantizer {
    fn default() -> Self {
        Self { bounds: ActionSpaceBounds::default(), bins: DEFAULT_BINS }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> ActionSpaceBounds {
        ActionSpaceBounds::uniform(-1.0, 1.0).unwrap()
    }

    #[test]
    fn bounds_map_to_extreme_bins() {
        let b = unit();
        assert_eq!(quantize(&ActionSlice([-1.0; DOF]), &b, 256).unwrap().bins, [0; DOF]);
        assert_eq!(quantize(&ActionSlice([1.0; DOF]), &b, 256).unwrap().bins, [255; DOF]);
    }

    #[test]
    fn zero_lands_in_bin_127() {
        assert_eq!(quantize_value(0.0, -1.0, 1.0, 256).unwrap(), 127);
    }

    #[test]
    fn dequantize_examples() {
        assert_eq!(dequantize_value(0, -1.0, 1.0, 256).unwrap(), -1.0);
        assert_eq!(dequantize_value(255, -1.0, 1.0, 256).unwrap(), 1.0);
        let mid = dequantize_value(127, -1.0, 1.0, 256).unwrap();
        assert!((mid - (-1.0 + 127.0 / 255.0 * 2.0)).abs() < 1e-15);
        assert!((mid + 0.0039216).abs() < 1e-7);
    }

    #[test]
    fn out_of_range_clamps() {
        assert_eq!(quantize_value(7.0, -1.0, 1.0, 256).unwrap(), 255);
        assert_eq!(quantize_value(-7.0, -1.0, 1.0, 256).unwrap(), 0);
    }

    #[test]
    fn errors() {
        assert!(matches!(quantize_value(f64::NAN, -1.0, 1.0, 256), Err(Error::InvalidInput(_))));
        assert!(matches!(quantize_value(0.0, 1.0, 1.0, 256), Err(Error::Config(_))));
        assert!(matches!(dequantize_value(256, -1.0, 1.0, 256), Err(Error::InvalidInput(_))));
        assert!(ActionSpaceBounds::new([(0.0, 0.0); DOF]).is_err());
        assert!(Quantizer::new(unit(), 1).is_err());
    }

    #[test]
    fn gripper_midpoint_is_closed() {
        let b = ActionSpaceBounds::uniform(0.0, 1.0).unwrap();
        assert_eq!(gripper_binary(1.0, &b), Gripper::Closed);
        assert_eq!(gripper_binary(0.0, &b), Gripper::Open);
        assert_eq!(gripper_binary(0.5, &b), Gripper::Closed);
    }

    #[test]
    fn nearest_token_rounds() {
        let q = Quantizer::new(unit(), 256).unwrap();
        let w = 2.0 / 255.0;
        // 0.6 bin widths above bin 0 rounds up, 0.4 rounds down.
        assert_eq!(q.nearest_token(0, -1.0 + 0.6 * w).unwrap(), 1);
        assert_eq!(q.nearest_token(0, -1.0 + 0.4 * w).unwrap(), 0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn idempotent_on_bins(b in 0u16..256) {
                let x = dequantize_value(b, -0.3, 0.7, 256).unwrap();
                prop_assert_eq!(quantize_value(x, -0.3, 0.7, 256).unwrap(), b);
            }

            #[test]
            fn round_trip_within_one_bin(a in -2.0f64..2.0) {
                let b = quantize_value(a, -1.0, 1.0, 256).unwrap();
                let back = dequantize_value(b, -1.0, 1.0, 256).unwrap();
                prop_assert!((back - a.clamp(-1.0, 1.0)).abs() <= 2.0 / 255.0 + 1e-12);
            }

            #[test]
            fn monotone(a in -2.0f64..2.0, da in 0.0f64..1.0) {
                let lo = quantize_value(a, -1.0, 1.0, 256).unwrap();
                let hi = quantize_value(a + da, -1.0, 1.0, 256).unwrap();
                prop_assert!(lo <= hi);
            }
        }
    }
}
