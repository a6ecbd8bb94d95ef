//! Cross-lingual speech synthesis and translation with codec language models,
//! trained end to end on a generated synthetic bilingual corpus.
//!
//! The pieces, bottom to top:
//! - [`corpus`]: deterministic synthetic "speech" with known speakers,
//!   content, and language, plus an oracle decoder for evaluation.
//! - [`phonemizer`]: lexicon-lookup G2P over one shared phoneme inventory.
//! - [`codec`]: frame analysis/synthesis and a residual vector quantizer
//!   mapping waveforms to layered acoustic tokens and back.
//! - [`mar`]: autoregressive codec LM over first-layer tokens with
//!   language-ID conditioning.
//! - [`mnar`]: non-autoregressive codec LM filling layers 2..L.
//! - [`recotrans`]: speech recognition & translation model (CTC + seq2seq).
//! - [`pipeline`]: end-to-end tasks (cross-lingual TTS, speech-to-speech
//!   translation), metrics, config, and evaluation reports.

pub mod corpus;
pub mod dsp;
pub mod nn;
