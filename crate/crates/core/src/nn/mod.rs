//! Minimal 1D convolutional network engine: parameter stores, layer
//! primitives with analytic gradients, the discriminator/classifier backbone
//! and the fractionally-strided generator.

mod backbone;
mod generator;
mod layout;
mod ops;
mod store;
mod tensor;

pub use backbone::{Backbone, BackbonePass, BackboneSpec, Head};
pub use generator::{sample_latent, Generator, GeneratorPass, GeneratorSpec, GENERATOR_LAYERS};
pub use ops::Mode;
pub use store::{Gradients, ParameterStore, StoreEntry, Tensor, TensorKind};
pub use tensor::{Act, Mat};

/// Freezes a store. Idempotent.
pub fn freeze(store: ParameterStore) -> ParameterStore {
    store.freeze()
}
