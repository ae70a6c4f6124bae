//! Network building blocks: Chebyshev-KAN layers, MLPs, forward-mode jets,
//! Adam and checkpoint storage.

mod adam;
mod cheb;
mod checkpoint;
mod jet;
mod mlp;

pub use adam::{AdamConfig, AdamState};
pub use cheb::{chebyshev_t, chebyshev_u, ChebKanLayer, KanCache, KanNet, KanSpec};
pub use checkpoint::{read_blobs, write_blobs, BlobFile, CHECKPOINT_FORMAT};
pub use jet::{activation_backward, activation_forward, Activation, Jets};
pub use mlp::{FourierMap, FourierSpec, LinearLayer, Mlp, MlpCache, MlpSpec};
