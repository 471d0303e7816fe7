//! Audio ingestion, resampling, log-mel features and training augmentations.

mod augment;
mod features;
mod resample;
mod wav;

pub use augment::{add_noise_at_snr, augment, crop, shift_by, AugmentMode};
pub use features::{
    extract_features, load_feature_cache, save_feature_cache, FeatureConfig, FeatureExtractor, FeatureFrames,
    FeatureStats, MelFilterbank, FEATURE_SAMPLE_RATE, FRAME_RATE, NUM_MEL_BANDS,
};
pub use resample::{resample, KAISER_BETA, TAPS_PER_SIDE};
pub use wav::{load_wav, write_wav_f32, write_wav_pcm16, Waveform, MIN_DURATION_S};
