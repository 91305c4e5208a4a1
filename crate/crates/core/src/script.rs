//! JSON constraint scripts: the wire and file format for brush edits.
//!
//! ```json
//! {
//!   "constraints": [
//!     {"kind": "color", "points": [[8, 8], [20, 12]], "radius": 3, "rgb": [0.9, 0.1, 0.1]},
//!     {"kind": "sketch", "points": [[4, 16], [28, 16]], "width": 2},
//!     {"kind": "warp", "rect": {"x": 4, "y": 4, "w": 8, "h": 8}, "dx": 3, "dy": 0}
//!   ],
//!   "lambda_s": 5.0
//! }
//! ```
//!
//! Points are `[x, y]` in model pixels and colors are in `[0, 1]`. A color constraint may give a
//! rasterized `mask` (row-major, one weight per model pixel) instead of `points`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::edit::{make_color_constraint, make_sketch_constraint, make_warp_constraint, stroke_mask, EditConstraint, EditState, Rect};
use crate::error::{Error, Result};
use crate::hog::HogConfig;
use crate::image::ImageRGB;

fn one() -> f32 {
    1.0
}

fn default_radius() -> f32 {
    2.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ConstraintSpec {
    Color {
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        points: Vec<[f32; 2]>,
        #[serde(default = "default_radius")]
        radius: f32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mask: Option<Vec<f32>>,
        rgb: [f32; 3],
        #[serde(default = "one")]
        weight: f32,
    },
    Sketch {
        points: Vec<[f32; 2]>,
        #[serde(default = "default_radius")]
        width: f32,
        #[serde(default = "one")]
        weight: f32,
    },
    Warp {
        rect: Rect,
        dx: i32,
        dy: i32,
        #[serde(default = "one")]
        weight: f32,
    },
}

impl ConstraintSpec {
    /// Rasterize against a frame of the model resolution. Warps copy their source pixels from
    /// `frame`.
    pub fn build(&self, frame: &ImageRGB, hog: &HogConfig) -> Result<EditConstraint> {
        let (h, w) = (frame.height(), frame.width());
        match self {
            ConstraintSpec::Color {
                points,
                radius,
                mask,
                rgb,
                weight,
            } => {
                if rgb.iter().any(|c| !(0.0..=1.0).contains(c)) {
                    return Err(Error::InvalidConstraint(format!("color {rgb:?} is outside [0, 1]")));
                }
                let mask = match (mask, points.is_empty()) {
                    (Some(m), true) => m.clone(),
                    (None, false) => stroke_mask(points, *radius, h, w),
                    _ => {
                        return Err(Error::InvalidConstraint(
                            "a color constraint needs exactly one of points or mask".into(),
                        ))
                    }
                };
                make_color_constraint(mask, h, w, rgb.map(|c| c * 2.0 - 1.0), *weight)
            }
            ConstraintSpec::Sketch { points, width, weight } => {
                make_sketch_constraint(points, *width, h, w, hog, *weight)
            }
            ConstraintSpec::Warp { rect, dx, dy, weight } => make_warp_constraint(frame, *rect, *dx, *dy, hog, *weight),
        }
    }
}

/// A set of constraints plus optional energy weights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditScript {
    pub constraints: Vec<ConstraintSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_s: Option<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_d: Option<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub use_discriminator: Option<bool>,
}

impl EditScript {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scripts always serialize")
    }

    pub fn build(&self, frame: &ImageRGB, hog: &HogConfig) -> Result<Vec<EditConstraint>> {
        if self.constraints.is_empty() {
            return Err(Error::InvalidConstraint("script has no constraints".into()));
        }
        self.constraints.iter().map(|c| c.build(frame, hog)).collect()
    }

    /// Install the script on `state`, rendering warps against `frame`.
    pub fn apply(&self, state: &mut EditState, frame: &ImageRGB, hog: &HogConfig) -> Result<()> {
        for (name, v) in [("lambda_s", self.lambda_s), ("lambda_d", self.lambda_d)] {
            if let Some(v) = v {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::InvalidConstraint(format!("{name} must be a nonnegative number, got {v}")));
                }
            }
        }
        let built = self.build(frame, hog)?;
        state.set_constraints(built)?;
        if let Some(v) = self.lambda_s {
            state.lambda_s = v;
        }
        if let Some(v) = self.lambda_d {
            state.lambda_d = v;
        }
        if let Some(v) = self.use_discriminator {
            state.use_discriminator = v;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_parses() {
        let text = r#"{"constraints": [
            {"kind": "color", "points": [[8, 8], [20, 12]], "radius": 3, "rgb": [0.9, 0.1, 0.1]},
            {"kind": "sketch", "points": [[4, 16], [28, 16]], "width": 2},
            {"kind": "warp", "rect": {"x": 4, "y": 4, "w": 8, "h": 8}, "dx": 3, "dy": 0}
        ], "lambda_s": 5.0}"#;
        let s = EditScript::from_json(text).unwrap();
        assert_eq!(s.constraints.len(), 3);
        assert_eq!(EditScript::from_json(&s.to_json()).unwrap(), s);
        let frame = ImageRGB::filled(32, 32, [0.0; 3]);
        assert_eq!(s.build(&frame, &HogConfig::default()).unwrap().len(), 3);
    }

    #[test]
    fn unknown_kinds_and_fields_are_rejected() {
        assert!(EditScript::from_json(r#"{"constraints": [{"kind": "blur"}]}"#).is_err());
        assert!(EditScript::from_json(r#"{"constraints": [], "extra": 1}"#).is_err());
    }

    #[test]
    fn color_needs_points_or_mask() {
        let frame = ImageRGB::filled(32, 32, [0.0; 3]);
        let c = ConstraintSpec::Color {
            points: vec![],
            radius: 2.0,
            mask: None,
            rgb: [0.5; 3],
            weight: 1.0,
        };
        assert!(c.build(&frame, &HogConfig::default()).is_err());
    }
}
