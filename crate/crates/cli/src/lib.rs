//! The `latentbrush` command line: train models, project photos, run scripted edits, morph
//! between photos and score the projection methods.

pub mod error;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use latentbrush::bundle::ModelBundle;
use latentbrush::data::{ingest_folder, synth_shapes, Dataset};
use latentbrush::edit::{EditState, Editor};
use latentbrush::hog::HogConfig;
use latentbrush::image::ImageRGB;
use latentbrush::latent::LatentVector;
use latentbrush::nn::ArchDescriptor;
use latentbrush::project::{Method, OptConfig, Optimizer, Projector};
use latentbrush::script::EditScript;
use latentbrush::train::{train_encoder, train_gan, write_encoder_trace, write_gan_trace, TrainConfig};
use latentbrush::transfer::{generative_transform, transfer_edit, TransferConfig, TransformMode};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "latentbrush", version, about = "Photo editing on a learned generative image manifold")]
pub struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a generator/discriminator pair or an encoder for an existing model.
    Train {
        #[command(subcommand)]
        what: TrainCommand,
    },
    /// Project an image, or every image in a folder, onto the model.
    Project(ProjectArgs),
    /// Apply a constraint script to a photo (or a random sample) and write the edit sequence.
    Edit(EditArgs),
    /// Morph photo A toward photo B.
    Transform(TransformArgs),
    /// Mean reconstruction loss and PSNR of every projection method over a folder.
    Eval(EvalArgs),
}

#[derive(Debug, Subcommand)]
pub enum TrainCommand {
    Gan(GanArgs),
    Encoder(EncoderArgs),
}

#[derive(Debug, Args)]
#[group(id = "dataset", required = true, multiple = false)]
pub struct DataArgs {
    /// Folder of training images.
    #[arg(long, group = "dataset")]
    pub data: Option<PathBuf>,
    /// Train on this many generated shapes instead of a folder.
    #[arg(long, group = "dataset")]
    pub synth: Option<usize>,
}

#[derive(Debug, Args)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 1000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long)]
    pub lr: Option<f32>,
    /// Write a checkpoint every this many iterations (0 disables).
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
}

#[derive(Debug, Args)]
pub struct GanArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long, default_value_t = ArchDescriptor::DESK.resolution)]
    pub resolution: usize,
    #[arg(long, default_value_t = ArchDescriptor::DESK.latent_dim)]
    pub latent_dim: usize,
    #[arg(long, default_value_t = ArchDescriptor::DESK.base_channels)]
    pub base_channels: usize,
    /// Model directory to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EncoderArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Model directory holding the generator.
    #[arg(long)]
    pub model: PathBuf,
    /// Where to write the model with its encoder; defaults to `--model`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Opt,
    Net,
    Hybrid,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Opt => Method::Opt,
            MethodArg::Net => Method::Net,
            MethodArg::Hybrid => Method::Hybrid,
        }
    }
}

#[derive(Debug, Args)]
pub struct ProjectionArgs {
    /// Optimizer steps per run.
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    /// Random restarts of the optimization-only method.
    #[arg(long, default_value_t = 10)]
    pub restarts: usize,
    /// Adam learning rate in latent space.
    #[arg(long = "projection-lr", default_value_t = 0.1)]
    pub lr: f32,
}

impl ProjectionArgs {
    fn config(&self) -> OptConfig {
        OptConfig {
            optimizer: Optimizer::Adam { lr: self.lr },
            steps: self.steps,
            restarts: self.restarts,
        }
    }
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    /// Image file or folder of images.
    pub input: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodArg::Hybrid)]
    pub method: MethodArg,
    #[command(flatten)]
    pub projection: ProjectionArgs,
    /// Output folder for reconstructions and `projection.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EditArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Constraint script in the service's JSON schema.
    #[arg(long)]
    pub constraints: PathBuf,
    /// Photo to edit; without it the edit starts from a latent drawn with `--seed`.
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Editing steps.
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f32,
    /// Interpolation steps; `frames + 1` images are written.
    #[arg(long, default_value_t = 7)]
    pub frames: usize,
    /// Optimizer steps when projecting `--image`.
    #[arg(long, default_value_t = 100)]
    pub projection_steps: usize,
    #[arg(long, default_value_t = 10)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0.1)]
    pub projection_lr: f32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    ShapeAndColor,
    ShapeOnly,
}

#[derive(Debug, Args)]
pub struct TransformArgs {
    pub a: PathBuf,
    pub b: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::ShapeAndColor)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 7)]
    pub frames: usize,
    #[command(flatten)]
    pub projection: ProjectionArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Folder of test images.
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub projection: ProjectionArgs,
    /// Also write per-image results to `<out>/eval.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Run the parsed command, returning what it prints on stdout.
pub fn run(cli: Cli) -> Result<String> {
    let seed = cli.seed;
    match cli.command {
        Command::Train { what: TrainCommand::Gan(a) } => cmd_train_gan(a, seed),
        Command::Train { what: TrainCommand::Encoder(a) } => cmd_train_encoder(a, seed),
        Command::Project(a) => cmd_project(a, seed),
        Command::Edit(a) => cmd_edit(a, seed),
        Command::Transform(a) => cmd_transform(a),
        Command::Eval(a) => cmd_eval(a, seed),
    }
}

fn existing(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} {} does not exist", path.display())))
    }
}

fn load_model(path: &Path) -> Result<ModelBundle> {
    existing(path, "model directory")?;
    Ok(ModelBundle::load(path)?)
}

fn load_data(a: &DataArgs, resolution: usize, seed: u64) -> Result<Dataset> {
    match (&a.data, a.synth) {
        (Some(dir), _) => {
            existing(dir, "dataset folder")?;
            Ok(ingest_folder(dir, resolution)?)
        }
        (None, Some(n)) => Ok(synth_shapes(n, resolution, seed)?),
        (None, None) => Err(CliError::Usage("pass --data or --synth".into())),
    }
}

fn train_config(o: &OptimArgs, base: TrainConfig, seed: u64, out: &Path) -> TrainConfig {
    TrainConfig {
        batch_size: o.batch,
        iterations: o.iterations,
        lr: o.lr.unwrap_or(base.lr),
        seed,
        checkpoint_every: o.checkpoint_every,
        checkpoint_dir: (o.checkpoint_every > 0).then(|| out.join("checkpoints")),
        ..base
    }
}

fn cmd_train_gan(a: GanArgs, seed: u64) -> Result<String> {
    let arch = ArchDescriptor {
        resolution: a.resolution,
        latent_dim: a.latent_dim,
        base_channels: a.base_channels,
    };
    arch.validate()?;
    let data = load_data(&a.data, arch.resolution, seed)?;
    let cfg = train_config(&a.optim, TrainConfig::gan(), seed, &a.out);
    fs::create_dir_all(&a.out)?;
    let outcome = train_gan(&data, &arch, &cfg)?;
    ModelBundle::new(outcome.generator, Some(outcome.discriminator), None)?.save(&a.out)?;
    write_gan_trace(a.out.join("trace.csv"), &outcome.trace)?;
    let last = outcome.trace.last().expect("at least one iteration");
    Ok(format!(
        "trained {} iterations on {} images: d_loss {:.4} g_loss {:.4}\n",
        cfg.iterations,
        data.len(),
        last.d_loss,
        last.g_loss
    ))
}

fn cmd_train_encoder(a: EncoderArgs, seed: u64) -> Result<String> {
    let mut bundle = load_model(&a.model)?;
    let out = a.out.clone().unwrap_or_else(|| a.model.clone());
    let data = load_data(&a.data, bundle.arch.resolution, seed)?;
    let cfg = train_config(&a.optim, TrainConfig::encoder(), seed, &out);
    fs::create_dir_all(&out)?;
    let extractor = bundle.feature_extractor()?;
    let outcome = train_encoder(&bundle.generator, extractor.as_ref(), &bundle.loss, &data, &cfg)?;
    bundle.encoder = Some(outcome.encoder);
    bundle.save(&out)?;
    write_encoder_trace(out.join("trace_encoder.csv"), &outcome.trace)?;
    let last = outcome.trace.last().expect("at least one iteration").1;
    Ok(format!("trained encoder for {} iterations: loss {last:.4}\n", cfg.iterations))
}

/// Image files directly inside `dir`, sorted, or `path` itself when it is a file.
fn image_paths(path: &Path) -> Result<Vec<PathBuf>> {
    existing(path, "input")?;
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out: Vec<PathBuf> = fs::read_dir(path)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    out.retain(|p| p.is_file() && ImageRGB::load(p).is_ok());
    out.sort();
    if out.is_empty() {
        return Err(latentbrush::Error::EmptyDataset.into());
    }
    Ok(out)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into())
}

/// One projection of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionRow {
    pub image: String,
    pub method: Method,
    pub loss: f32,
    pub psnr: f32,
    pub seconds: f64,
}

const CSV_HEADER: &str = "image,method,loss,psnr,seconds";

fn csv(rows: &[ProjectionRow]) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.image, r.method, r.loss, r.psnr, r.seconds);
    }
    s
}

/// Project `target` (already at model resolution) with `method`; `seed` drives the restarts.
pub fn project_one(
    projector: &mut Projector,
    name: &str,
    target: &ImageRGB,
    method: Method,
    cfg: &OptConfig,
    seed: u64,
) -> Result<(ProjectionRow, ImageRGB)> {
    let (r, seconds) = projector.project(target, method, cfg, seed)?;
    let row = ProjectionRow {
        image: name.to_string(),
        method,
        loss: r.loss,
        psnr: r.reconstruction.psnr(target),
        seconds,
    };
    Ok((row, r.reconstruction))
}

fn cmd_project(a: ProjectArgs, seed: u64) -> Result<String> {
    let bundle = load_model(&a.model)?;
    let mut projector = bundle.projector()?;
    let res = projector.resolution();
    let paths = image_paths(&a.input)?;
    fs::create_dir_all(&a.out)?;
    let cfg = a.projection.config();
    let mut rows = Vec::new();
    let mut report = String::new();
    for (i, path) in paths.iter().enumerate() {
        let target = ImageRGB::load(path)?.center_square(res);
        let name = stem(path);
        let (row, recon) = project_one(&mut projector, &name, &target, a.method.into(), &cfg, seed.wrapping_add(i as u64))?;
        recon.save_png(a.out.join(format!("{name}_recon.png")))?;
        let _ = writeln!(report, "{name}: {} loss {:.5} psnr {:.2} dB in {:.3}s", row.method, row.loss, row.psnr, row.seconds);
        rows.push(row);
    }
    fs::write(a.out.join("projection.csv"), csv(&rows))?;
    Ok(report)
}

fn write_frames(dir: &Path, prefix: &str, frames: &[ImageRGB]) -> Result<()> {
    for (i, f) in frames.iter().enumerate() {
        f.save_png(dir.join(format!("{prefix}_{i:03}.png")))?;
    }
    Ok(())
}

/// Starting latent for `photo`: hybrid projection when the model has an encoder, otherwise
/// the optimization-based one.
fn project_photo(bundle: &ModelBundle, photo: &ImageRGB, p: &ProjectionArgs, seed: u64) -> Result<LatentVector> {
    let mut projector = bundle.projector()?;
    let square = photo.center_square(projector.resolution());
    let method = if projector.encoder.is_some() { Method::Hybrid } else { Method::Opt };
    Ok(projector.project(&square, method, &p.config(), seed)?.0.z)
}

fn cmd_edit(a: EditArgs, seed: u64) -> Result<String> {
    existing(&a.constraints, "constraints file")?;
    let script = EditScript::load(&a.constraints)?;
    if script.constraints.is_empty() {
        return Err(latentbrush::Error::InvalidConstraint("script has no constraints".into()).into());
    }
    if a.frames == 0 {
        return Err(CliError::Usage("--frames must be at least 1".into()));
    }
    let bundle = load_model(&a.model)?;
    let photo = a.image.as_deref().map(|p| existing(p, "image").and_then(|_| Ok(ImageRGB::load(p)?))).transpose()?;
    let z0 = match &photo {
        Some(photo) => {
            let p = ProjectionArgs {
                steps: a.projection_steps,
                restarts: a.restarts,
                lr: a.projection_lr,
            };
            project_photo(&bundle, photo, &p, seed)?
        }
        None => LatentVector::sample(bundle.arch.latent_dim, &mut ChaCha8Rng::seed_from_u64(seed)),
    };
    let hog = HogConfig::default();
    let mut editor = Editor::new(bundle.generator.clone(), bundle.discriminator.clone(), hog);
    let mut state = EditState::new(z0.clone());
    let start = editor.render(&z0)?;
    script.apply(&mut state, &start, &hog)?;
    let initial = editor.evaluate(&state, state.z.values(), false)?.energy;
    let report = editor.step(&mut state, a.steps, a.lr)?;
    fs::create_dir_all(&a.out)?;
    let frames = match &photo {
        Some(photo) => {
            let cfg = TransferConfig {
                frames: a.frames,
                ..TransferConfig::default()
            };
            let mut generator = bundle.generator.clone();
            let r = transfer_edit(photo, &z0, &state.z, &mut generator, &cfg)?;
            write_frames(&a.out, "generated", &r.generated)?;
            r.frames
        }
        None => editor.relative_sequence(&state, a.frames)?,
    };
    write_frames(&a.out, "frame", &frames)?;
    let summary = serde_json::json!({
        "z0": z0.values(),
        "z": state.z.values(),
        "initial_energy": initial,
        "energy": report.energy,
        "steps": state.steps,
    });
    fs::write(a.out.join("edit.json"), serde_json::to_string_pretty(&summary).map_err(latentbrush::Error::from)?)?;
    Ok(format!(
        "energy {initial:.5} -> {:.5} after {} steps; wrote {} frames\n",
        report.energy,
        a.steps,
        frames.len()
    ))
}

// Both photos go through the encoder-seeded projection, so no seed is involved.
fn cmd_transform(a: TransformArgs) -> Result<String> {
    if a.frames == 0 {
        return Err(CliError::Usage("--frames must be at least 1".into()));
    }
    let bundle = load_model(&a.model)?;
    existing(&a.a, "image")?;
    existing(&a.b, "image")?;
    let (img_a, img_b) = (ImageRGB::load(&a.a)?, ImageRGB::load(&a.b)?);
    let mut projector = bundle.projector()?;
    let mode = match a.mode {
        ModeArg::ShapeAndColor => TransformMode::ShapeAndColor,
        ModeArg::ShapeOnly => TransformMode::ShapeOnly,
    };
    let cfg = TransferConfig {
        frames: a.frames,
        ..TransferConfig::default()
    };
    let r = generative_transform(
        &img_a,
        &img_b,
        &mut projector,
        Optimizer::Adam { lr: a.projection.lr },
        a.projection.steps,
        mode,
        &cfg,
    )?;
    fs::create_dir_all(&a.out)?;
    write_frames(&a.out, "frame", &r.transfer.frames)?;
    write_frames(&a.out, "generated", &r.transfer.generated)?;
    for (i, f) in r.transfer.fields.iter().enumerate() {
        f.save(a.out.join(format!("field_{i:03}.flow")))?;
    }
    Ok(format!(
        "latent distance {:.4}; wrote {} frames\n",
        r.z_a.distance(&r.z_b),
        r.transfer.frames.len()
    ))
}

/// Mean loss, PSNR and time of one method.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    pub mean_loss: f64,
    pub mean_psnr: f64,
    pub mean_seconds: f64,
    pub images: usize,
}

/// Project every image with every method. Image `i` uses restart seed `seed + i`.
pub fn evaluate(
    projector: &mut Projector,
    images: &[(String, ImageRGB)],
    cfg: &OptConfig,
    seed: u64,
) -> Result<(Vec<ProjectionRow>, Vec<MethodSummary>)> {
    if images.is_empty() {
        return Err(latentbrush::Error::EmptyDataset.into());
    }
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for method in [Method::Opt, Method::Net, Method::Hybrid] {
        let start = rows.len();
        for (i, (name, target)) in images.iter().enumerate() {
            rows.push(project_one(projector, name, target, method, cfg, seed.wrapping_add(i as u64))?.0);
        }
        let mine = &rows[start..];
        let n = mine.len() as f64;
        summary.push(MethodSummary {
            method,
            mean_loss: mine.iter().map(|r| r.loss as f64).sum::<f64>() / n,
            mean_psnr: mine.iter().map(|r| r.psnr as f64).sum::<f64>() / n,
            mean_seconds: mine.iter().map(|r| r.seconds).sum::<f64>() / n,
            images: mine.len(),
        });
    }
    Ok((rows, summary))
}

pub fn format_table(summary: &[MethodSummary]) -> String {
    let mut s = format!("{:<8} {:>10} {:>10} {:>12} {:>7}\n", "method", "mean_loss", "psnr_db", "seconds", "images");
    for m in summary {
        let _ = writeln!(
            s,
            "{:<8} {:>10.5} {:>10.2} {:>12.4} {:>7}",
            m.method.to_string(),
            m.mean_loss,
            m.mean_psnr,
            m.mean_seconds,
            m.images
        );
    }
    s
}

fn cmd_eval(a: EvalArgs, seed: u64) -> Result<String> {
    let bundle = load_model(&a.model)?;
    if bundle.encoder.is_none() {
        return Err(CliError::Usage(format!("{} has no encoder; run `train encoder` first", a.model.display())));
    }
    existing(&a.data, "test folder")?;
    let mut projector = bundle.projector()?;
    let res = projector.resolution();
    let images = image_paths(&a.data)?
        .iter()
        .map(|p| Ok((stem(p), ImageRGB::load(p)?.center_square(res))))
        .collect::<Result<Vec<_>>>()?;
    let (rows, summary) = evaluate(&mut projector, &images, &a.projection.config(), seed)?;
    if let Some(out) = &a.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("eval.csv"), csv(&rows))?;
    }
    Ok(format_table(&summary))
}
