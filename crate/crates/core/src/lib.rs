//! Byte-level language modeling with a bolt-on target-language output head.
//!
//! The crate is organized around four pieces:
//!
//! * [`tokenizer`]: byte-level BPE, a mono-word vocabulary, and forward
//!   maximum matching over base-token sequences.
//! * [`model`]: a small decoder-only transformer trained from scratch,
//!   with incremental decoding state and analytic gradients.
//! * [`head`]: the mono output head (gated FFN + projection) that extends
//!   the base logits to a joint vocabulary, plus its fine-tuning loop.
//! * [`decoder`]: the verify-then-commit decoding loop and its baselines.
//!
//! The base model stays frozen once the head exists; every artifact that
//! depends on it carries the base parameter digest and refuses to load
//! against a different one.

pub mod decoder;
pub mod head;
pub mod io;
pub mod math;
pub mod model;
pub mod tokenizer;

pub use tokenizer::TokenId;
