//! Byte-level vocabulary, span-corruption pre-training examples,
//! classification-as-generation casting, the token-level loss and corpus readers.

pub mod classify;
pub mod corrupt;
pub mod io;
pub mod loss;
pub mod vocab;

pub use classify::{cast_classification, Task, SENTIMENT, TASKS};
pub use corrupt::{reconstruct, span_corrupt, CorruptionConfig, SpanCorruptionExample};
pub use loss::seq_cross_entropy;
pub use vocab::{detokenize, tokenize};
