//! Generator / discriminator networks and the embedding function.

pub mod checkpoint;
mod discriminator;
mod generator;
mod head;
pub mod layers;
mod optim;
mod tensor;

pub use checkpoint::{decode_into, digest_params, encode, load_params, save_params, Topology};
pub use discriminator::{Discriminator, DiscriminatorTape, FEATURE_DIM};
pub use generator::{Generator, GeneratorTape, NOISE_DIM};
pub use head::{embed, embed_chunked, EmbeddingHead, HeadMode};
pub use layers::{Mode, Param, ParamKind, Parameterized};
pub use optim::{Adam, AdamConfig};
pub use tensor::FeatureMap;
