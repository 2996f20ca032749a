//! Log-mel front end for 16 kHz speech.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use unissl_core::datasets::DatasetSpec;
use unissl_core::rng::SeededRng;
use unissl_core::{Error, Result};

pub const SAMPLE_RATE: f64 = 16_000.0;
/// Samples per training clip.
pub const CLIP_SAMPLES: usize = 150_526;
pub const HOP: usize = 672;
pub const MEL_BINS: usize = 224;
pub const N_FFT: usize = 4096;
pub const F_MAX: f64 = 8_000.0;
/// Power floor before the decibel conversion.
pub const POWER_FLOOR: f64 = 1e-10;

/// What happens to the decibel spectrogram before normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DecibelHandling {
    /// Convert the decibel values back to power scale.
    #[default]
    ToPower,
    /// Keep decibels.
    Keep,
}

/// Frames produced by a centered STFT.
pub fn frame_count(samples: usize) -> usize {
    samples / HOP + 1
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters on the HTK mel scale over `0..=F_MAX`, `MEL_BINS x (N_FFT/2 + 1)`.
pub fn mel_filterbank() -> Vec<Vec<f64>> {
    let bins = N_FFT / 2 + 1;
    let top = hz_to_mel(F_MAX);
    let edges: Vec<f64> = (0..MEL_BINS + 2).map(|i| mel_to_hz(top * i as f64 / (MEL_BINS + 1) as f64)).collect();
    (0..MEL_BINS)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * SAMPLE_RATE / N_FFT as f64;
                    let up = (f - lo) / (mid - lo);
                    let down = (hi - f) / (hi - mid);
                    up.min(down).max(0.0)
                })
                .collect()
        })
        .collect()
}

/// Power spectrogram `frames x (N_FFT/2 + 1)` with a Hann window and zero
/// padding of `N_FFT/2` on both sides.
pub fn power_spectrogram(samples: &[f32]) -> Vec<Vec<f64>> {
    let fft = FftPlanner::<f64>::new().plan_fft_forward(N_FFT);
    let window: Vec<f64> = (0..N_FFT).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / N_FFT as f64).cos()).collect();
    let half = N_FFT / 2;
    let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
    (0..frame_count(samples.len()))
        .map(|t| {
            let start = (t * HOP) as isize - half as isize;
            for (i, b) in buf.iter_mut().enumerate() {
                let idx = start + i as isize;
                let x = if idx >= 0 && (idx as usize) < samples.len() { samples[idx as usize] as f64 } else { 0.0 };
                *b = Complex::new(x * window[i], 0.0);
            }
            fft.process(&mut buf);
            buf[..=half].iter().map(|c| c.norm_sqr()).collect()
        })
        .collect()
}

/// A `MEL_BINS x frames` log-mel image (row = mel bin), decibels.
pub fn log_mel(samples: &[f32]) -> Vec<f64> {
    let spec = power_spectrogram(samples);
    let bank = mel_filterbank();
    let frames = spec.len();
    let mut out = vec![0.0; MEL_BINS * frames];
    for (m, filt) in bank.iter().enumerate() {
        for (t, row) in spec.iter().enumerate() {
            let p: f64 = filt.iter().zip(row).map(|(w, v)| w * v).sum();
            out[m * frames + t] = 10.0 * p.max(POWER_FLOOR).log10();
        }
    }
    out
}

/// Waveform to a normalized `1 x 224 x 224` spectrogram.
///
/// Short clips are zero-padded to `CLIP_SAMPLES`; longer ones contribute a
/// random contiguous subsegment of that length.
pub fn preprocess_audio(
    waveform: &[f32],
    spec: &DatasetSpec,
    handling: DecibelHandling,
    rng: &mut SeededRng,
) -> Result<(Vec<usize>, Vec<f32>)> {
    if waveform.is_empty() {
        return Err(Error::InvalidArgument("empty waveform".into()));
    }
    if waveform.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("waveform samples".into()));
    }
    let mut clip = waveform.to_vec();
    if clip.len() < CLIP_SAMPLES {
        clip.resize(CLIP_SAMPLES, 0.0);
    }
    let start = rng.below(clip.len() - CLIP_SAMPLES + 1);
    let clip = &clip[start..start + CLIP_SAMPLES];
    let db = log_mel(clip);
    let inv = 1.0 / spec.std;
    let values = db
        .into_iter()
        .map(|d| {
            let v = match handling {
                DecibelHandling::ToPower => 10f64.powf(d / 10.0),
                DecibelHandling::Keep => d,
            };
            ((v - spec.mean) * inv) as f32
        })
        .collect();
    Ok((vec![1, MEL_BINS, frame_count(CLIP_SAMPLES)], values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use unissl_core::datasets::load_spec;

    #[test]
    fn frame_count_matches_spec_width() {
        assert_eq!(frame_count(CLIP_SAMPLES), 224);
        let wave: Vec<f32> = (0..CLIP_SAMPLES).map(|i| ((i as f64) * 0.01).sin() as f32).collect();
        assert_eq!(power_spectrogram(&wave).len(), 224);
    }

    #[test]
    fn every_mel_filter_sees_some_bin() {
        for (m, f) in mel_filterbank().iter().enumerate() {
            assert!(f.iter().any(|&w| w > 0.0), "filter {m} is empty");
        }
    }

    #[test]
    fn silence_maps_to_the_floor() {
        let spec = load_spec("librispeech").unwrap();
        let (dims, v) = preprocess_audio(&[0.0; 1000], &spec, DecibelHandling::ToPower, &mut SeededRng::new(0)).unwrap();
        assert_eq!(dims, vec![1, 224, 224]);
        let floor = ((POWER_FLOOR - spec.mean) / spec.std) as f32;
        assert!(v.iter().all(|&x| x == floor));
    }

    #[test]
    fn tone_peaks_in_the_right_band_and_is_deterministic() {
        let spec = load_spec("librispeech").unwrap();
        let wave: Vec<f32> = (0..200_000).map(|i| (2.0 * PI * 1000.0 * i as f64 / SAMPLE_RATE).sin() as f32).collect();
        let a = preprocess_audio(&wave, &spec, DecibelHandling::Keep, &mut SeededRng::new(5)).unwrap();
        let b = preprocess_audio(&wave, &spec, DecibelHandling::Keep, &mut SeededRng::new(5)).unwrap();
        assert_eq!(a, b);
        let column: Vec<f32> = (0..MEL_BINS).map(|m| a.1[m * 224 + 100]).collect();
        let peak = column.iter().enumerate().max_by(|x, y| x.1.total_cmp(y.1)).unwrap().0;
        let centre = mel_to_hz(hz_to_mel(F_MAX) * (peak + 1) as f64 / (MEL_BINS + 1) as f64);
        assert!((centre - 1000.0).abs() < 40.0, "peak at {centre} Hz");
    }

    #[test]
    fn non_finite_samples_are_rejected() {
        let spec = load_spec("librispeech").unwrap();
        assert!(preprocess_audio(&[f32::NAN], &spec, DecibelHandling::ToPower, &mut SeededRng::new(0)).is_err());
        assert!(preprocess_audio(&[], &spec, DecibelHandling::ToPower, &mut SeededRng::new(0)).is_err());
    }
}
