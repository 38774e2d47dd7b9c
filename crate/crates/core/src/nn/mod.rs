//! Differentiable compute and the equivariant layers built on it.

mod encoder;
mod graph;
mod params;
mod spectral_layers;
mod unet;

pub use encoder::EncoderSpec;
pub use graph::{Graph, NodeId};
pub use params::{init_kaiming, init_uniform, AdamW, ParamStore};
pub use spectral_layers::{
    embed_actions, embed_irreps, mix_channels, rotate_rows_per_item, sample_rows, sampled_silu,
    spectral_to_xyz, xyz_to_spectral, GroupLattice, ProprioMix, RowDecoder, S2ToSo3, So3ToSo3,
};
pub use unet::{timestep_embedding, UNetSpec, TIME_EMB_DIM};
