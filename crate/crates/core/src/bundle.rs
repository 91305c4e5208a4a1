//! A trained model on disk: `model.json` with the architecture plus one GVMW file per network.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gvmw;
use crate::models::{graph_for, Network};
use crate::nn::{ArchDescriptor, NetworkParams, Role};
use crate::project::{FeatureExtractor, Projector, ReconLoss};

const MANIFEST: &str = "model.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    arch: ArchDescriptor,
    #[serde(default)]
    loss: ReconLoss,
}

fn file_name(role: Role) -> &'static str {
    match role {
        Role::Generator => "generator.gvmw",
        Role::Discriminator => "discriminator.gvmw",
        Role::Encoder => "encoder.gvmw",
    }
}

/// Generator plus the optional discriminator and encoder trained with it.
#[derive(Clone, Debug)]
pub struct ModelBundle {
    pub arch: ArchDescriptor,
    pub loss: ReconLoss,
    pub generator: Network,
    pub discriminator: Option<Network>,
    pub encoder: Option<Network>,
}

impl ModelBundle {
    pub fn new(generator: Network, discriminator: Option<Network>, encoder: Option<Network>) -> Result<Self> {
        let arch = generator.params.arch;
        for net in discriminator.iter().chain(encoder.iter()) {
            if net.params.arch != arch {
                return Err(Error::InvalidArgument(format!(
                    "{:?} architecture {:?} differs from the generator's {arch:?}",
                    net.params.role, net.params.arch
                )));
            }
        }
        Ok(Self {
            arch,
            loss: ReconLoss::default(),
            generator,
            discriminator,
            encoder,
        })
    }

    /// Write the manifest and every present network into `dir`, creating it if needed.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let manifest = Manifest {
            arch: self.arch,
            loss: self.loss,
        };
        fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
        for net in std::iter::once(&self.generator).chain(&self.discriminator).chain(&self.encoder) {
            gvmw::save_params(&net.params, dir.join(file_name(net.params.role)))?;
        }
        Ok(())
    }

    /// Load a bundle; the generator is required, the other networks are picked up if present.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST))?)?;
        manifest.arch.validate()?;
        let load = |role: Role| -> Result<Option<Network>> {
            let path = dir.join(file_name(role));
            if !path.is_file() {
                return Ok(None);
            }
            let params = gvmw::load_params(&path, role, &manifest.arch)?;
            Ok(Some(network(role, params)?))
        };
        let generator = load(Role::Generator)?
            .ok_or_else(|| Error::InvalidArgument(format!("{} has no {}", dir.display(), file_name(Role::Generator))))?;
        let mut bundle = Self::new(generator, load(Role::Discriminator)?, load(Role::Encoder)?)?;
        bundle.loss = manifest.loss;
        Ok(bundle)
    }

    pub fn feature_extractor(&self) -> Result<Option<FeatureExtractor>> {
        self.discriminator.as_ref().map(FeatureExtractor::discriminator).transpose()
    }

    pub fn projector(&self) -> Result<Projector> {
        Ok(Projector::new(
            self.generator.clone(),
            self.encoder.clone(),
            self.feature_extractor()?,
            self.loss,
        ))
    }
}

fn network(role: Role, params: NetworkParams) -> Result<Network> {
    Ok(Network {
        graph: graph_for(role, &params.arch)?,
        params,
    })
}
