//! Tokenization, input assembly and the bidirectional transformer encoder.

mod input;
mod transformer;
mod vocab;

pub use input::{build_pair_input, build_single_input, SequenceInput};
pub use transformer::{encode, EncoderCache, EncoderConfig, EncoderWeights, LayerWeights, PassCounter};
pub use vocab::{tokenize, TokenId, Vocabulary, CLS, PAD, RESERVED_TOKENS, SEP, UNK};
