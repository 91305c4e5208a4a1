//! Editing sessions: state, append-only history and deterministic replay.

use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use latentbrush::bundle::ModelBundle;
use latentbrush::edit::{Candidate, EditState, Editor};
use latentbrush::hog::HogConfig;
use latentbrush::image::ImageRGB;
use latentbrush::latent::LatentVector;
use latentbrush::nn::Moments;
use latentbrush::project::{OptConfig, Optimizer};
use latentbrush::script::EditScript;
use latentbrush::transfer::{generative_transform, transfer_edit, TransferConfig, TransferResult, TransformMode, TransformResult};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::Settings;
use crate::error::{ApiError, Result};

/// Largest per-coordinate difference tolerated between a replayed and a recorded latent.
pub const REPLAY_TOLERANCE: f32 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Photo,
    Blank,
}

/// One accepted mutation. Replaying the log from the initial latent rebuilds the session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum HistoryEntry {
    Constraints {
        script: EditScript,
    },
    /// `zs[i]` and `energies[i]` belong to the frame streamed with sequence `first_seq + i`.
    Step {
        k: usize,
        lr: f32,
        first_seq: u64,
        zs: Vec<Vec<f32>>,
        energies: Vec<f64>,
    },
    Select {
        z: Vec<f32>,
    },
    Accept,
}

/// Serializable image of an [`EditState`] without its constraints, which are rebuilt from the
/// history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub z0: Vec<f32>,
    pub z: Vec<f32>,
    pub lambda_s: f32,
    pub lambda_d: f32,
    pub use_discriminator: bool,
    pub steps: usize,
    pub moments: Moments,
    /// Blank sessions ignore the smoothness term until their first accept.
    pub anchor_active: bool,
    /// Smoothness weight to restore on that first accept.
    pub deferred_lambda_s: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub id: String,
    pub model: String,
    pub origin: Origin,
    pub created_ms: u64,
    pub updated_ms: u64,
    /// Latent the session started from: the projection of the photo, or the blank sample.
    pub z_init: Vec<f32>,
    pub projection_loss: Option<f32>,
    pub next_seq: u64,
    pub state: StateSnapshot,
}

/// A streamed frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMessage {
    pub seq: u64,
    /// Base64 PNG at model resolution.
    pub png: String,
    pub energy: f64,
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

pub fn png_base64(img: &ImageRGB) -> Result<String> {
    Ok(STANDARD.encode(img.encode_png()?))
}

pub fn decode_base64_image(data: &str) -> Result<ImageRGB> {
    let bytes = STANDARD
        .decode(data.trim())
        .map_err(|e| ApiError::BadRequest(format!("image is not valid base64: {e}")))?;
    Ok(ImageRGB::decode(&bytes)?)
}

fn latent(values: &[f32], dim: usize) -> Result<LatentVector> {
    if values.len() != dim {
        return Err(ApiError::BadRequest(format!("latent has {} values, the model expects {dim}", values.len())));
    }
    if values.iter().any(|v| !v.is_finite() || v.abs() > 1.0) {
        return Err(ApiError::BadRequest("latent values must lie in [-1, 1]".into()));
    }
    Ok(LatentVector::new(values.to_vec())?)
}

#[derive(Clone, Debug)]
pub struct Session {
    pub record: SessionRecord,
    pub history: Vec<HistoryEntry>,
    /// The original photo at full resolution.
    pub photo: Option<ImageRGB>,
    pub state: EditState,
    pub frame: ImageRGB,
    pub energy: f64,
    model: Arc<ModelBundle>,
    editor: Editor,
    settings: Settings,
    anchor_active: bool,
    deferred_lambda_s: f32,
}

impl Session {
    fn start(
        id: String,
        model_id: String,
        model: Arc<ModelBundle>,
        settings: &Settings,
        origin: Origin,
        z_init: LatentVector,
        projection_loss: Option<f32>,
        photo: Option<ImageRGB>,
    ) -> Result<Self> {
        let mut state = EditState::new(z_init.clone());
        let deferred_lambda_s = state.lambda_s;
        let anchor_active = origin == Origin::Photo;
        if !anchor_active {
            state.lambda_s = 0.0;
        }
        let mut editor = Editor::new(model.generator.clone(), model.discriminator.clone(), HogConfig::default());
        let e = editor.evaluate(&state, state.z.values(), false)?;
        let now = now_ms();
        let mut s = Self {
            record: SessionRecord {
                id,
                model: model_id,
                origin,
                created_ms: now,
                updated_ms: now,
                z_init: z_init.into_values(),
                projection_loss,
                next_seq: 0,
                state: placeholder_snapshot(),
            },
            history: Vec::new(),
            photo,
            state,
            frame: e.frame,
            energy: e.energy,
            model,
            editor,
            settings: settings.clone(),
            anchor_active,
            deferred_lambda_s,
        };
        s.record.state = s.snapshot();
        Ok(s)
    }

    /// Project `photo` (hybrid when the model has an encoder, otherwise optimization) and start
    /// editing from the result.
    pub fn from_photo(id: String, model_id: String, model: Arc<ModelBundle>, photo: ImageRGB, settings: &Settings) -> Result<Self> {
        let mut projector = model.projector()?;
        let square = photo.center_square(projector.resolution());
        let optimizer = Optimizer::Adam { lr: settings.projection_lr };
        let r = if projector.encoder.is_some() {
            projector.project_hybrid(&square, optimizer, settings.projection_steps)?
        } else {
            let cfg = OptConfig {
                optimizer,
                steps: settings.projection_steps,
                restarts: 4,
            };
            projector.project_opt(&square, &cfg, 0)?
        };
        Self::start(id, model_id, model, settings, Origin::Photo, r.z, Some(r.loss), Some(photo))
    }

    /// Start from a latent sampled with `seed`; only the data term is active until the first accept.
    pub fn blank(id: String, model_id: String, model: Arc<ModelBundle>, seed: u64, settings: &Settings) -> Result<Self> {
        let z = LatentVector::sample(model.arch.latent_dim, &mut ChaCha8Rng::seed_from_u64(seed));
        Self::start(id, model_id, model, settings, Origin::Blank, z, None, None)
    }

    pub fn id(&self) -> &str {
        &self.record.id
    }

    pub fn model(&self) -> &Arc<ModelBundle> {
        &self.model
    }

    pub fn snapshot(&self) -> StateSnapshot {
        let s = &self.state;
        StateSnapshot {
            z0: s.z0.values().to_vec(),
            z: s.z.values().to_vec(),
            lambda_s: s.lambda_s,
            lambda_d: s.lambda_d,
            use_discriminator: s.use_discriminator,
            steps: s.steps,
            moments: s.moments.clone(),
            anchor_active: self.anchor_active,
            deferred_lambda_s: self.deferred_lambda_s,
        }
    }

    fn touch(&mut self) {
        self.record.state = self.snapshot();
        self.record.updated_ms = now_ms();
    }

    fn refresh(&mut self) -> Result<()> {
        let e = self.editor.evaluate(&self.state, self.state.z.values(), false)?;
        self.frame = e.frame;
        self.energy = e.energy;
        Ok(())
    }

    fn apply_script(&mut self, script: &EditScript) -> Result<()> {
        let mut next = self.state.clone();
        if !self.anchor_active {
            next.lambda_s = self.deferred_lambda_s;
        }
        script.apply(&mut next, &self.frame, &self.editor.hog)?;
        if !self.anchor_active {
            self.deferred_lambda_s = next.lambda_s;
            next.lambda_s = 0.0;
        }
        self.state = next;
        self.refresh()
    }

    pub fn set_constraints(&mut self, script: EditScript) -> Result<()> {
        self.apply_script(&script)?;
        self.history.push(HistoryEntry::Constraints { script });
        self.touch();
        Ok(())
    }

    fn run_steps(&mut self, k: usize, lr: f32, first_seq: u64, emit: &mut dyn FnMut(FrameMessage)) -> Result<HistoryEntry> {
        let mut zs = Vec::with_capacity(k);
        let mut energies = Vec::with_capacity(k);
        for i in 0..k {
            let r = self.editor.step(&mut self.state, 1, lr)?;
            if !r.energy.is_finite() {
                return Err(latentbrush::Error::EnergyDiverged.into());
            }
            emit(FrameMessage {
                seq: first_seq + i as u64,
                png: png_base64(&r.frame)?,
                energy: r.energy,
            });
            zs.push(self.state.z.values().to_vec());
            energies.push(r.energy);
            self.frame = r.frame;
            self.energy = r.energy;
        }
        Ok(HistoryEntry::Step {
            k,
            lr,
            first_seq,
            zs,
            energies,
        })
    }

    /// `k` optimizer steps, emitting the frame after each. With `k = 0` the current frame is
    /// emitted again and nothing else changes.
    pub fn step(&mut self, k: usize, lr: Option<f32>, emit: &mut dyn FnMut(FrameMessage)) -> Result<()> {
        if k > self.settings.step_budget {
            return Err(ApiError::BadRequest(format!("k = {k} exceeds the step budget {}", self.settings.step_budget)));
        }
        let lr = lr.unwrap_or(self.settings.step_lr);
        if !(lr.is_finite() && lr > 0.0) {
            return Err(ApiError::BadRequest(format!("learning rate {lr} must be positive")));
        }
        let first_seq = self.record.next_seq;
        if k == 0 {
            emit(FrameMessage {
                seq: first_seq,
                png: png_base64(&self.frame)?,
                energy: self.energy,
            });
            self.record.next_seq += 1;
            return Ok(());
        }
        // Work on a copy so a failing step leaves the session untouched.
        let mut work = self.clone();
        let entry = work.run_steps(k, lr, first_seq, emit)?;
        *self = work;
        self.history.push(entry);
        self.record.next_seq += k as u64;
        self.touch();
        Ok(())
    }

    fn jump(&mut self, z: &[f32]) -> Result<()> {
        self.state.jump_to(latent(z, self.model.arch.latent_dim)?);
        self.refresh()
    }

    fn do_accept(&mut self) -> Result<()> {
        self.state.accept();
        if !self.anchor_active {
            self.anchor_active = true;
            self.state.lambda_s = self.deferred_lambda_s;
        }
        self.refresh()
    }

    /// Continue from `z` (typically a candidate), optionally making it the new anchor.
    pub fn select(&mut self, z: Vec<f32>, accept: bool) -> Result<()> {
        self.jump(&z)?;
        self.history.push(HistoryEntry::Select { z });
        if accept {
            self.do_accept()?;
            self.history.push(HistoryEntry::Accept);
        }
        self.touch();
        Ok(())
    }

    pub fn accept(&mut self) -> Result<()> {
        self.do_accept()?;
        self.history.push(HistoryEntry::Accept);
        self.touch();
        Ok(())
    }

    pub fn candidates(&self, seed: Option<u64>) -> Result<Vec<Candidate>> {
        let s = &self.settings;
        Ok(self.editor.candidates(
            &self.state,
            s.candidate_pool,
            s.candidate_keep,
            s.candidate_perturb,
            s.candidate_steps,
            s.step_lr,
            seed.unwrap_or(s.candidate_seed),
        )?)
    }

    /// `m + 1` frames from the anchor to the current edit.
    pub fn interpolation(&self, m: usize) -> Result<Vec<ImageRGB>> {
        if m == 0 || m > 64 {
            return Err(ApiError::BadRequest(format!("frames = {m} must be between 1 and 64")));
        }
        Ok(self.editor.clone().relative_sequence(&self.state, m)?)
    }

    fn require_photo(&self) -> Result<&ImageRGB> {
        self.photo
            .as_ref()
            .ok_or_else(|| ApiError::BadRequest(format!("session {} has no photo", self.id())))
    }

    /// Carry the change from the projection to the current edit over to the original photo.
    pub fn transfer(&self, cfg: &TransferConfig) -> Result<TransferResult> {
        let photo = self.require_photo()?;
        let z0 = LatentVector::new(self.record.z_init.clone())?;
        let mut g = self.model.generator.clone();
        Ok(transfer_edit(photo, &z0, &self.state.z, &mut g, cfg)?)
    }

    /// Morph this session's photo toward `other`.
    pub fn transform(&self, other: &ImageRGB, mode: TransformMode, cfg: &TransferConfig) -> Result<TransformResult> {
        let photo = self.require_photo()?;
        let mut projector = self.model.projector()?;
        let optimizer = Optimizer::Adam {
            lr: self.settings.projection_lr,
        };
        Ok(generative_transform(photo, other, &mut projector, optimizer, self.settings.projection_steps, mode, cfg)?)
    }

    /// Rebuild a session by replaying `history` from the record's initial latent. Every
    /// recorded step latent and the final state are checked against the replay.
    pub fn replay(
        record: SessionRecord,
        history: Vec<HistoryEntry>,
        photo: Option<ImageRGB>,
        model: Arc<ModelBundle>,
        settings: &Settings,
    ) -> Result<Self> {
        let z_init = latent(&record.z_init, model.arch.latent_dim)?;
        let mut s = Self::start(
            record.id.clone(),
            record.model.clone(),
            model,
            settings,
            record.origin,
            z_init,
            record.projection_loss,
            photo,
        )?;
        let mismatch = |id: &str, distance: f32| ApiError::ReplayMismatch {
            id: id.to_string(),
            distance,
        };
        for entry in &history {
            match entry {
                HistoryEntry::Constraints { script } => s.apply_script(script)?,
                HistoryEntry::Step {
                    k,
                    lr,
                    first_seq,
                    zs,
                    ..
                } => {
                    let replayed = s.run_steps(*k, *lr, *first_seq, &mut |_| {})?;
                    let HistoryEntry::Step { zs: got, .. } = replayed else {
                        unreachable!()
                    };
                    let d = max_diff_all(zs, &got);
                    if d > REPLAY_TOLERANCE {
                        return Err(mismatch(&record.id, d));
                    }
                }
                HistoryEntry::Select { z } => s.jump(z)?,
                HistoryEntry::Accept => s.do_accept()?,
            }
        }
        let d = max_diff(&record.state.z, s.state.z.values()).max(max_diff(&record.state.z0, s.state.z0.values()));
        if d > REPLAY_TOLERANCE {
            return Err(mismatch(&record.id, d));
        }
        // Adopt the recorded numbers exactly so that saving again reproduces the same bytes.
        let snap = &record.state;
        s.state.z0 = LatentVector::new(snap.z0.clone())?;
        s.state.z = LatentVector::new(snap.z.clone())?;
        s.state.lambda_s = snap.lambda_s;
        s.state.lambda_d = snap.lambda_d;
        s.state.use_discriminator = snap.use_discriminator;
        s.state.steps = snap.steps;
        s.state.moments = snap.moments.clone();
        s.anchor_active = snap.anchor_active;
        s.deferred_lambda_s = snap.deferred_lambda_s;
        s.refresh()?;
        s.record = record;
        s.history = history;
        Ok(s)
    }
}

fn max_diff(a: &[f32], b: &[f32]) -> f32 {
    if a.len() != b.len() {
        return f32::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

fn max_diff_all(a: &[Vec<f32>], b: &[Vec<f32>]) -> f32 {
    if a.len() != b.len() {
        return f32::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| max_diff(x, y)).fold(0.0, f32::max)
}

fn placeholder_snapshot() -> StateSnapshot {
    StateSnapshot {
        z0: Vec::new(),
        z: Vec::new(),
        lambda_s: 0.0,
        lambda_d: 0.0,
        use_discriminator: false,
        steps: 0,
        moments: Moments::zeros(0),
        anchor_active: false,
        deferred_lambda_s: 0.0,
    }
}
