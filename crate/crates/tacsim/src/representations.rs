//! Tactile-signal representations.
//!
//! A recorded pin frame is first normalised — positions become relative to
//! the central pin and are divided by the mean absolute coordinate
//! `(x̄+ȳ)/2` — which cancels uniform scale and translation between
//! domains. The normalised frame is then encoded three ways:
//!
//! - `PinPositions`: the normalised positions themselves, interleaved
//!   (x,y) per pin — length 2·|pins|.
//! - `Threshold`: per-pin binary codes, 1 where the displacement magnitude
//!   reaches an adaptive cutoff `max(1.2·mean |disp|, 0.05)`.
//! - `WeightedAverage`: contact centroid weighted by squared displacement
//!   magnitudes plus the mean displacement — `(x, y, d̄)`.
//!
//! Training noise is injected on normalised pin positions before any
//! derived encoding is computed.

use nalgebra::Vector2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::TactileFrame;
use crate::error::{Error, Result};

/// Observed pins on the standard six-ring sensor.
pub const STANDARD_PIN_COUNT: usize = 91;

/// Multiplier on the mean displacement in the threshold cutoff.
pub const THRESHOLD_COEF: f64 = 1.2;

/// Lower bound of the threshold cutoff (normalised units).
pub const THRESHOLD_FLOOR: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepKind {
    PinPositions,
    Threshold,
    WeightedAverage,
}

impl RepKind {
    pub const ALL: [RepKind; 3] = [
        RepKind::PinPositions,
        RepKind::Threshold,
        RepKind::WeightedAverage,
    ];

    /// Encoded vector length for a sensor with `pins` observed pins.
    pub fn len_for(&self, pins: usize) -> usize {
        match self {
            RepKind::PinPositions => 2 * pins,
            RepKind::Threshold => pins,
            RepKind::WeightedAverage => 3,
        }
    }

    /// Vector length on the standard 91-pin sensor: 182, 91 or 3.
    pub fn standard_len(&self) -> usize {
        self.len_for(STANDARD_PIN_COUNT)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            RepKind::PinPositions => "pin_positions",
            RepKind::Threshold => "threshold",
            RepKind::WeightedAverage => "weighted_average",
        }
    }
}

impl std::fmt::Display for RepKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for RepKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pin_positions" => Ok(RepKind::PinPositions),
            "threshold" => Ok(RepKind::Threshold),
            "weighted_average" => Ok(RepKind::WeightedAverage),
            other => Err(Error::SchemaMismatch(format!(
                "unknown representation kind {other:?} (expected pin_positions, threshold or weighted_average)"
            ))),
        }
    }
}

/// A fixed-length numeric encoding of one tactile frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Representation {
    kind: RepKind,
    values: Vec<f64>,
}

impl Representation {
    pub fn new(kind: RepKind, values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::SchemaMismatch(format!(
                "{kind} representation contains non-finite values"
            )));
        }
        match kind {
            RepKind::PinPositions if values.len() % 2 != 0 => {
                return Err(Error::LengthMismatch {
                    context: "pin_positions representation",
                    expected: values.len() + 1,
                    actual: values.len(),
                });
            }
            RepKind::WeightedAverage if values.len() != 3 => {
                return Err(Error::LengthMismatch {
                    context: "weighted_average representation",
                    expected: 3,
                    actual: values.len(),
                });
            }
            RepKind::Threshold if values.iter().any(|v| *v != 0.0 && *v != 1.0) => {
                return Err(Error::SchemaMismatch(
                    "threshold representation must be binary".into(),
                ));
            }
            _ => {}
        }
        Ok(Representation { kind, values })
    }

    pub fn kind(&self) -> RepKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Check the length contract for a sensor with `pins` observed pins.
    pub fn validate_pin_count(&self, pins: usize) -> Result<()> {
        let expected = self.kind.len_for(pins);
        if self.values.len() == expected {
            Ok(())
        } else {
            Err(Error::LengthMismatch {
                context: "representation length",
                expected,
                actual: self.values.len(),
            })
        }
    }
}

/// Shift every pin so the central pin (index 0) sits at the origin.
pub fn centre_pins(pins: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let centre = pins[0];
    pins.iter().map(|p| p - centre).collect()
}

/// Divide an already-centred layout by `(x̄+ȳ)/2`, the mean absolute
/// coordinate over all pins.
pub fn normalize_centred(pins: &[Vector2<f64>]) -> Result<Vec<Vector2<f64>>> {
    let n = pins.len() as f64;
    let mean_x: f64 = pins.iter().map(|p| p.x.abs()).sum::<f64>() / n;
    let mean_y: f64 = pins.iter().map(|p| p.y.abs()).sum::<f64>() / n;
    let divisor = 0.5 * (mean_x + mean_y);
    if divisor < 1e-12 {
        return Err(Error::DegenerateFrame { divisor });
    }
    Ok(pins.iter().map(|p| p / divisor).collect())
}

fn normalized_pins(frame: &TactileFrame) -> Result<Vec<Vector2<f64>>> {
    normalize_centred(&centre_pins(frame.pins()))
}

/// Full normalisation: central-pin subtraction followed by mean-absolute
/// scaling. Cancels any uniform scale and translation of the raw frame.
pub fn normalize_pins(frame: &TactileFrame) -> Result<TactileFrame> {
    Ok(TactileFrame::new(normalized_pins(frame)?, frame.step()))
}

fn normalized_pair(
    frame: &TactileFrame,
    rest: &TactileFrame,
) -> Result<(Vec<Vector2<f64>>, Vec<Vector2<f64>>)> {
    if frame.pin_count() != rest.pin_count() {
        return Err(Error::LengthMismatch {
            context: "frame vs rest pin count",
            expected: rest.pin_count(),
            actual: frame.pin_count(),
        });
    }
    Ok((normalized_pins(frame)?, normalized_pins(rest)?))
}

/// Per-pin displacement magnitudes between two equally long layouts.
pub fn displacement_magnitudes(cur: &[Vector2<f64>], rest: &[Vector2<f64>]) -> Vec<f64> {
    assert_eq!(cur.len(), rest.len());
    cur.iter().zip(rest).map(|(c, r)| (c - r).norm()).collect()
}

/// Adaptive threshold cutoff: `max(1.2·mean, 0.05)`.
pub fn threshold_cutoff(disp: &[f64]) -> f64 {
    let mean = disp.iter().sum::<f64>() / disp.len() as f64;
    (THRESHOLD_COEF * mean).max(THRESHOLD_FLOOR)
}

/// Binary codes: 1 where the displacement reaches the cutoff (ties count
/// as 1 — the step function is 1 at zero).
pub fn heaviside_codes(disp: &[f64], cutoff: f64) -> Vec<f64> {
    disp.iter()
        .map(|d| if d - cutoff >= 0.0 { 1.0 } else { 0.0 })
        .collect()
}

/// Displacement-weighted centroid of the current pin positions plus mean
/// displacement: `(x, y, d̄)` with weights `|disp|²`. All-zero weights
/// collapse to `(0, 0, 0)`.
pub fn weighted_average(cur: &[Vector2<f64>], disp: &[f64]) -> [f64; 3] {
    assert_eq!(cur.len(), disp.len());
    let mean_disp = disp.iter().sum::<f64>() / disp.len() as f64;
    let total: f64 = disp.iter().map(|d| d * d).sum();
    if total == 0.0 {
        return [0.0, 0.0, 0.0];
    }
    let mut x = 0.0;
    let mut y = 0.0;
    for (p, d) in cur.iter().zip(disp) {
        let w = d * d;
        x += w * p.x;
        y += w * p.y;
    }
    [x / total, y / total, mean_disp]
}

fn encode_normalized(kind: RepKind, cur: &[Vector2<f64>], rest: &[Vector2<f64>]) -> Result<Representation> {
    match kind {
        RepKind::PinPositions => {
            let values = cur.iter().flat_map(|p| [p.x, p.y]).collect();
            Representation::new(kind, values)
        }
        RepKind::Threshold => {
            let disp = displacement_magnitudes(cur, rest);
            let cutoff = threshold_cutoff(&disp);
            Representation::new(kind, heaviside_codes(&disp, cutoff))
        }
        RepKind::WeightedAverage => {
            let disp = displacement_magnitudes(cur, rest);
            Representation::new(kind, weighted_average(cur, &disp).to_vec())
        }
    }
}

/// Encode one frame against its rest layout. Both frames are normalised
/// independently before any comparison.
pub fn encode(kind: RepKind, frame: &TactileFrame, rest: &TactileFrame) -> Result<Representation> {
    let (cur, rest) = normalized_pair(frame, rest)?;
    encode_normalized(kind, &cur, &rest)
}

/// Like [`encode`], but perturbs every normalised current pin position with
/// i.i.d. Gaussian noise (std `sigma`) before encoding, so derived
/// representations see the noise too.
pub fn encode_noisy<R: Rng + ?Sized>(
    kind: RepKind,
    frame: &TactileFrame,
    rest: &TactileFrame,
    sigma: f64,
    rng: &mut R,
) -> Result<Representation> {
    if sigma < 0.0 {
        return Err(Error::Config(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return encode(kind, frame, rest);
    }
    let (mut cur, rest) = normalized_pair(frame, rest)?;
    let normal = Normal::new(0.0, sigma).expect("validated sigma");
    for p in &mut cur {
        p.x += normal.sample(rng);
        p.y += normal.sample(rng);
    }
    encode_normalized(kind, &cur, &rest)
}

/// The normalised pin-position encoding, length `2·|pins|`.
pub fn rep_pin_positions(frame: &TactileFrame, rest: &TactileFrame) -> Result<Representation> {
    encode(RepKind::PinPositions, frame, rest)
}

/// The adaptive cutoff used by [`rep_threshold`], computed on normalised
/// positions.
pub fn threshold_value(frame: &TactileFrame, rest: &TactileFrame) -> Result<f64> {
    let (cur, rest) = normalized_pair(frame, rest)?;
    Ok(threshold_cutoff(&displacement_magnitudes(&cur, &rest)))
}

/// The binary threshold encoding, length `|pins|`.
pub fn rep_threshold(frame: &TactileFrame, rest: &TactileFrame) -> Result<Representation> {
    encode(RepKind::Threshold, frame, rest)
}

/// The weighted-average encoding `(x, y, d̄)`, length 3.
pub fn rep_weighted_average(frame: &TactileFrame, rest: &TactileFrame) -> Result<Representation> {
    encode(RepKind::WeightedAverage, frame, rest)
}

/// Add i.i.d. Gaussian noise to every coordinate of a pin-position
/// representation. Other kinds are rejected: noise enters derived
/// encodings through [`encode_noisy`], on positions.
pub fn add_pin_noise<R: Rng + ?Sized>(
    rep: &Representation,
    sigma: f64,
    rng: &mut R,
) -> Result<Representation> {
    if rep.kind() != RepKind::PinPositions {
        return Err(Error::SchemaMismatch(format!(
            "pin noise applies to pin_positions, not {}",
            rep.kind()
        )));
    }
    if sigma < 0.0 {
        return Err(Error::Config(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(rep.clone());
    }
    let normal = Normal::new(0.0, sigma).expect("validated sigma");
    let values = rep.values().iter().map(|v| v + normal.sample(rng)).collect();
    Representation::new(rep.kind(), values)
}
