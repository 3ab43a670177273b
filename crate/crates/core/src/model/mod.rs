//! 3D U-Net generator and patch discriminator.

mod arch;
mod forward;
mod io;
mod params;

pub use arch::{
    compact_arch, default_arch, default_arch_ceil_mode, discriminator_rows, generator_encoder_rows,
    literal_decoder_rows, mirrored_decoder_rows, ArchConfig, ArchShapes, Extents, LayerKind,
    LayerSpec, SkipAlign,
};
pub use forward::{
    apply_bn_updates, discriminator_forward, generate, generator_forward, BnPhase, BnUpdate,
    ForwardMode,
};
pub use io::{
    decode_tensors, encode_tensors, load_params, load_tensors, save_params, save_tensors,
};
pub use params::{
    check_params, expected_shapes, init_params, is_buffer, running_mean_name, running_var_name,
    trainable_count, ModelParams, INIT_STDDEV,
};
