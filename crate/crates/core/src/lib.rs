//! Dynamic speech emotion recognition with Dirichlet emotion mixtures.

pub mod audio;
pub mod dirichlet;
pub mod emotion;
pub mod error;
pub mod evalkit;
pub mod gradcheck;
pub mod jsonl;
pub mod model;
pub mod special;
pub mod stages;
pub mod synth;

pub use emotion::{
    make_emotion_vector, validate_sequence, AlphaVector, EmotionSequence, EmotionVector, Frame, LabeledClip,
    PreferencePair, EMOTION_NAMES, NUM_EMOTIONS, SIMPLEX_FLOOR,
};
pub use error::{Error, Result};
