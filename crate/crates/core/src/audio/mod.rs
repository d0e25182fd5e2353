//! Audio plumbing: WAV files, mu-law degradation, decimate-and-repeat and
//! noise mixing at a target SNR and level.

pub mod degrade;
pub mod mix;
pub mod mulaw;
pub mod wav;

pub use degrade::{degrade, downsample_and_repeat, DegradeSpec, WORKING_RATE};
pub use mix::{mix_at_snr, power, rms, snr_db, Mixture};
pub use mulaw::{mulaw_degrade, mulaw_degrade_sample, DEFAULT_MU};
pub use wav::{read_wav, read_wav_file, write_wav, write_wav_file};

/// Mono samples nominally in `[-1, 1]` with their rate in Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub sample_rate: u32,
    pub samples: Vec<f64>,
}

impl AudioBuffer {
    pub fn new(sample_rate: u32, samples: Vec<f64>) -> Self {
        Self { sample_rate, samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}
