//! Generators, discriminators and their building blocks.

mod attention;
mod input;
mod layers;
mod model;
mod patchgan;
mod resnet;
mod spec;
pub mod spectral;
mod unet;

pub use attention::{AttentionKind, AttentionRegistry, Cbam, SelfAttention, CBAM_KERNEL, CBAM_REDUCTION};
pub use input::{flow_target, model_input, prediction_to_speed};
pub use layers::{Builder, Forward, Module, SnVectors, INIT_STD, LEAKY_SLOPE};
pub use model::{
    build_discriminator, build_generator, init_rng, param_count, GeneratorKind, GeneratorRegistry, Model,
};
pub use resnet::RESIDUAL_BLOCKS;
pub use spec::{Attention, DiscriminatorSpec, GeneratorFamily, GeneratorSpec, ModelSpec};
pub use spectral::{spectral_normalize, SpectralStep};
