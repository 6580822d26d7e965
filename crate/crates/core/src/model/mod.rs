//! Architectures, CVW weight containers and the capturing forward pass.

mod arch;
mod container;
mod network;

pub use arch::{
    build_vgg, build_vgg16, select_fraction_layers, ArchSpec, LayerKind, LayerSpec, ShapeChain,
    TensorRequirement, VggConfig,
};
pub use container::{parse_container, write_container, WeightContainer, MAGIC, VERSION};
pub use network::{load_network, ActivationTrace, ForwardOptions, ForwardOutput, Layer, Network};
