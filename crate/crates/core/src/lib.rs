//! Photo editing on a learned generative image manifold.

pub mod bundle;
pub mod data;
pub mod edit;
pub mod error;
pub mod flow;
pub mod guided;
pub mod gvmw;
pub mod hog;
pub mod image;
pub mod latent;
pub mod models;
pub mod nn;
pub mod project;
pub mod script;
pub mod tensor;
pub mod train;
pub mod transfer;

pub use error::{Error, Result};
pub use image::ImageRGB;
pub use indexmap::IndexMap;
pub use latent::LatentVector;
pub use tensor::Tensor;
