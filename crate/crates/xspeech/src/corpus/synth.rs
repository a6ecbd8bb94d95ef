//! Oracle source-of-truth signal generator: harmonic tones with per-speaker
//! fundamental and tilt, per-phoneme timbre boosts, crossfaded segments.

use super::params::{
    CorpusParams, FORMANT_BOOST_DB, FORMANT_HALF_WIDTH_HZ, TILT_DB_PER_OCTAVE,
};
use super::{CorpusError, SpeakerProfile};
use crate::dsp::SAMPLE_RATE;

pub const CROSSFADE_MS: f64 = 5.0;
const BASE_AMP: f64 = 0.08;

/// Harmonic amplitudes for one phoneme at one fundamental.
fn harmonic_amplitudes(params: &CorpusParams, phoneme: usize, f0: f64, tilt: f64) -> Vec<f64> {
    let nyquist = SAMPLE_RATE as f64 / 2.0;
    let max_h = ((nyquist * 0.95) / f0).floor() as usize;
    let (f1, f2) = params.phonemes[phoneme].formants;
    (1..=max_h)
        .map(|h| {
            let freq = f0 * h as f64;
            let mut db = tilt * TILT_DB_PER_OCTAVE * (h as f64).log2();
            for formant in [f1, f2] {
                let dist = (freq - formant).abs();
                if dist < FORMANT_HALF_WIDTH_HZ {
                    db += FORMANT_BOOST_DB * (1.0 - dist / FORMANT_HALF_WIDTH_HZ);
                }
            }
            BASE_AMP * 10f64.powf(db / 20.0)
        })
        .collect()
}

/// Render a phoneme sequence for one speaker in one language.
///
/// Each phoneme lasts `base_duration * duration_scale[language]` exactly (in
/// samples); harmonic phases run continuously and amplitudes crossfade
/// linearly across segment boundaries, so the output length is exactly the
/// sum of the per-phoneme durations.
pub fn synth_waveform(
    params: &CorpusParams,
    phoneme_labels: &[String],
    speaker: &SpeakerProfile,
    language: &str,
) -> Result<Vec<f64>, CorpusError> {
    if phoneme_labels.is_empty() {
        return Err(CorpusError::EmptyPhonemes);
    }
    let scale = *speaker
        .duration_scale
        .get(language)
        .ok_or_else(|| CorpusError::MissingLanguage(language.to_string()))?;
    let phonemes: Vec<usize> = phoneme_labels
        .iter()
        .map(|l| {
            params
                .phoneme_index(l)
                .ok_or_else(|| CorpusError::UnknownPhoneme(l.clone()))
        })
        .collect::<Result<_, _>>()?;

    let sr = SAMPLE_RATE as f64;
    let f0 = speaker.f0_hz;
    let seg_samples: Vec<usize> = phonemes
        .iter()
        .map(|&p| {
            let ms = params.phonemes[p].base_duration_ms * scale;
            (ms / 1000.0 * sr).round() as usize
        })
        .collect();
    let total: usize = seg_samples.iter().sum();
    let boundaries: Vec<usize> = seg_samples
        .iter()
        .scan(0usize, |acc, &s| {
            *acc += s;
            Some(*acc)
        })
        .collect();

    let amps: Vec<Vec<f64>> = phonemes
        .iter()
        .map(|&p| harmonic_amplitudes(params, p, f0, speaker.tilt))
        .collect();
    let num_h = amps[0].len();

    let fade = (CROSSFADE_MS / 1000.0 * sr) as usize;
    let mut out = vec![0.0; total];
    // phase rotation per harmonic, advanced every sample
    let mut cos_ph = vec![1.0f64; num_h];
    let mut sin_ph = vec![0.0f64; num_h];
    let (rot_c, rot_s): (Vec<f64>, Vec<f64>) = (1..=num_h)
        .map(|h| {
            let w = 2.0 * std::f64::consts::PI * f0 * h as f64 / sr;
            (w.cos(), w.sin())
        })
        .unzip();

    let mut seg = 0usize;
    for (n, sample) in out.iter_mut().enumerate() {
        while n >= boundaries[seg] {
            seg += 1;
        }
        // linear crossfade of amplitudes around segment boundaries
        let seg_start = if seg == 0 { 0 } else { boundaries[seg - 1] };
        let into = n - seg_start;
        let (a_from, a_to, mix) = if into < fade / 2 && seg > 0 {
            let m = 0.5 + into as f64 / fade as f64;
            (&amps[seg - 1], &amps[seg], m)
        } else if boundaries[seg] - n <= fade / 2 && seg + 1 < amps.len() {
            let m = 0.5 - (boundaries[seg] - n) as f64 / fade as f64;
            (&amps[seg], &amps[seg + 1], m)
        } else {
            (&amps[seg], &amps[seg], 1.0)
        };
        let mut acc = 0.0;
        for h in 0..num_h {
            let amp = a_from[h] + (a_to[h] - a_from[h]) * mix;
            acc += amp * sin_ph[h];
            // advance phase by complex rotation
            let c = cos_ph[h] * rot_c[h] - sin_ph[h] * rot_s[h];
            let s = sin_ph[h] * rot_c[h] + cos_ph[h] * rot_s[h];
            cos_ph[h] = c;
            sin_ph[h] = s;
        }
        *sample = acc;
    }
    // onset/offset ramps keep analysis windows clean at the edges
    let edge = fade.min(total / 2);
    for n in 0..edge {
        let g = n as f64 / edge as f64;
        out[n] *= g;
        out[total - 1 - n] *= g;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CorpusSpec;
    use crate::dsp;

    fn setup() -> (CorpusParams, SpeakerProfile) {
        let spec = CorpusSpec {
            num_languages: 2,
            num_speakers: 4,
            utts_per_speaker_per_lang: 2,
            ..Default::default()
        };
        let params = CorpusParams::derive(&spec, 7).unwrap();
        let spk = params.train_speakers[0].clone();
        (params, spk)
    }

    #[test]
    fn single_phoneme_f0_is_recovered() {
        let (params, mut spk) = setup();
        spk.f0_hz = 100.0;
        let wave =
            synth_waveform(&params, &["aa".to_string()], &spk, "alpha").unwrap();
        let f0 = dsp::estimate_f0(&wave, 8000.0, 80.0, 400.0).unwrap();
        assert!((f0 - 100.0).abs() < 2.0, "f0={f0}");
    }

    #[test]
    fn empty_phonemes_is_an_error() {
        let (params, spk) = setup();
        let err = synth_waveform(&params, &[], &spk, "alpha");
        assert!(matches!(err, Err(CorpusError::EmptyPhonemes)));
    }

    #[test]
    fn unknown_phoneme_is_an_error() {
        let (params, spk) = setup();
        let err = synth_waveform(&params, &["qq".to_string()], &spk, "alpha");
        assert!(matches!(err, Err(CorpusError::UnknownPhoneme(_))));
    }

    #[test]
    fn unknown_language_is_an_error() {
        let (params, spk) = setup();
        let err = synth_waveform(&params, &["aa".to_string()], &spk, "klingon");
        assert!(matches!(err, Err(CorpusError::MissingLanguage(_))));
    }

    #[test]
    fn length_matches_duration_law_exactly() {
        let (params, spk) = setup();
        let labels: Vec<String> = ["aa", "kk", "eh"].iter().map(|s| s.to_string()).collect();
        let wave = synth_waveform(&params, &labels, &spk, "beta").unwrap();
        let scale = params.language("beta").unwrap().duration_scale;
        let expect: usize = labels
            .iter()
            .map(|l| {
                let p = params.phoneme_index(l).unwrap();
                (params.phonemes[p].base_duration_ms * scale / 1000.0 * 8000.0).round()
                    as usize
            })
            .sum();
        assert_eq!(wave.len(), expect);
    }

    #[test]
    fn no_clipping() {
        let (params, spk) = setup();
        let labels: Vec<String> = ["ss", "tt", "zz", "ff"].iter().map(|s| s.to_string()).collect();
        let wave = synth_waveform(&params, &labels, &spk, "alpha").unwrap();
        assert!(wave.iter().all(|s| s.abs() <= 1.0));
        assert!(dsp::rms(&wave) > 1e-3);
    }
}
