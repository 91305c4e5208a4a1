//! Carrying a latent-space edit over to the original photo.
//!
//! The generator renders frames along the straight line from `z0` to `z1`. Motion+color fields
//! between consecutive frames are chained into fields from the first frame to every later one,
//! upsampled to the photo with a guided filter and applied to it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{apply_field, compose_fields, estimate_flow_color, resize_plane, FlowColorField, FlowConfig};
use crate::guided::{guided_upsample, GuidedConfig};
use crate::image::ImageRGB;
use crate::latent::{interpolate_latents, LatentVector};
use crate::models::Network;
use crate::nn::Mode;
use crate::project::{Optimizer, Projector};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferConfig {
    /// Number of interpolation steps; the sequence has `frames + 1` images.
    pub frames: usize,
    pub flow: FlowConfig,
    pub guided: GuidedConfig,
    /// Add the raw generated pixel change to the photo instead of warping it.
    pub pixel_fallback: bool,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            frames: 7,
            flow: FlowConfig::default(),
            guided: GuidedConfig::default(),
            pixel_fallback: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TransferResult {
    /// The edited photo at every interpolation step, at the photo's resolution.
    pub frames: Vec<ImageRGB>,
    /// The generated frames the edit was read from.
    pub generated: Vec<ImageRGB>,
    /// Fields from the first generated frame to each frame, at model resolution. Empty with
    /// the pixel fallback.
    pub fields: Vec<FlowColorField>,
}

/// Render `G(z)` for every latent in one batch.
pub fn render_sequence(generator: &mut Network, zs: &[LatentVector]) -> Result<Vec<ImageRGB>> {
    let x = generator.forward(&LatentVector::batch(zs)?, Mode::Inference)?;
    (0..zs.len()).map(|i| ImageRGB::from_tensor(&x, i)).collect()
}

/// Chain consecutive fields into fields from frame 0 to every frame (frame 0 gets the identity).
pub fn prefix_fields(pairwise: &[FlowColorField], height: usize, width: usize) -> Result<Vec<FlowColorField>> {
    let mut out = vec![FlowColorField::identity(height, width)];
    for f in pairwise {
        let next = compose_fields(out.last().expect("starts non-empty"), f)?;
        out.push(next);
    }
    Ok(out)
}

fn resize_image(img: &ImageRGB, h: usize, w: usize) -> Result<ImageRGB> {
    let (sh, sw) = (img.height(), img.width());
    let mut data = Vec::with_capacity(3 * h * w);
    for c in 0..3 {
        data.extend(resize_plane(img.plane(c), sh, sw, h, w));
    }
    ImageRGB::new(h, w, data)
}

/// `photo + (G(z_t) - G(z_0))`, the generated change upsampled bilinearly.
fn pixel_transfer(photo: &ImageRGB, generated: &[ImageRGB]) -> Result<Vec<ImageRGB>> {
    let (h, w) = (photo.height(), photo.width());
    let base = resize_image(&generated[0], h, w)?;
    generated
        .iter()
        .map(|g| {
            let up = resize_image(g, h, w)?;
            let data = photo
                .data()
                .iter()
                .zip(up.data().iter().zip(base.data()))
                .map(|(p, (a, b))| p + a - b)
                .collect();
            ImageRGB::new(h, w, data)
        })
        .collect()
}

/// Transfer the edit `z0 -> z1` to `photo`, which is taken to cover the model frame (callers
/// crop it to a square first if needed).
pub fn transfer_edit(
    photo: &ImageRGB,
    z0: &LatentVector,
    z1: &LatentVector,
    generator: &mut Network,
    cfg: &TransferConfig,
) -> Result<TransferResult> {
    if cfg.frames == 0 {
        return Err(Error::InvalidArgument("transfer needs at least one interpolation step".into()));
    }
    cfg.flow.validate()?;
    cfg.guided.validate()?;
    let zs = interpolate_latents(z0, z1, cfg.frames)?;
    let generated = render_sequence(generator, &zs)?;
    if cfg.pixel_fallback {
        return Ok(TransferResult {
            frames: pixel_transfer(photo, &generated)?,
            generated,
            fields: Vec::new(),
        });
    }
    let (h, w) = (generated[0].height(), generated[0].width());
    let pairwise = generated
        .par_windows(2)
        .map(|pair| estimate_flow_color(&pair[0], &pair[1], &cfg.flow))
        .collect::<Result<Vec<_>>>()?;
    let fields = prefix_fields(&pairwise, h, w)?;
    let frames = fields
        .par_iter()
        .map(|f| apply_field(photo, &guided_upsample(f, photo, &cfg.guided)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(TransferResult {
        frames,
        generated,
        fields,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransformMode {
    ShapeAndColor,
    ShapeOnly,
}

impl std::str::FromStr for TransformMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shape-and-color" | "shape+color" => Ok(Self::ShapeAndColor),
            "shape-only" | "shape" => Ok(Self::ShapeOnly),
            other => Err(Error::InvalidArgument(format!("unknown transform mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TransformResult {
    pub z_a: LatentVector,
    pub z_b: LatentVector,
    pub transfer: TransferResult,
}

/// Morph photo `a` toward photo `b` without user edits: project both (hybrid) and transfer the
/// edit between their latents onto `a`. Shape-only mode keeps every color map at the identity.
pub fn generative_transform(
    a: &ImageRGB,
    b: &ImageRGB,
    projector: &mut Projector,
    optimizer: Optimizer,
    steps: usize,
    mode: TransformMode,
    cfg: &TransferConfig,
) -> Result<TransformResult> {
    let res = projector.resolution();
    let za = projector.project_hybrid(&a.center_square(res), optimizer, steps)?.z;
    let zb = projector.project_hybrid(&b.center_square(res), optimizer, steps)?.z;
    let mut cfg = *cfg;
    if mode == TransformMode::ShapeOnly {
        cfg.flow.estimate_color = false;
    }
    let transfer = transfer_edit(a, &za, &zb, &mut projector.generator, &cfg)?;
    Ok(TransformResult { z_a: za, z_b: zb, transfer })
}
