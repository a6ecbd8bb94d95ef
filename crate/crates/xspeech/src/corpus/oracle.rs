//! Matched-filter oracle decoder: recovers the phoneme sequence, fundamental,
//! and spectral tilt from synthetic waveforms. Stands in for the external
//! recognizer/verifier models during evaluation.

use super::params::{
    CorpusParams, FORMANT_HALF_WIDTH_HZ, TILT_DB_PER_OCTAVE,
};
use super::synth::synth_waveform;
use crate::dsp::{self, Band, Filterbank, DB_FLOOR, LOW_BANDS, SAMPLE_RATE, TIMBRE_BANDS};

/// Analysis hop for decoding (finer than the codec hop for better segment
/// boundaries).
pub const ORACLE_HOP: usize = 40;
const MIN_RUN_FRAMES: usize = 3;
const SCORE_MIN: f64 = 0.5;
const LOW_CONFIDENCE: f64 = 0.55;

#[derive(Debug, Clone)]
pub struct OracleReading {
    pub phonemes: Vec<String>,
    pub durations_ms: Vec<f64>,
    pub f0_hz: Option<f64>,
    pub tilt: Option<f64>,
    /// Mean matched-filter score over voiced frames.
    pub confidence: f64,
    pub low_confidence: bool,
}

pub struct OracleDecoder {
    fb: Filterbank,
    templates: Vec<Vec<f64>>,
    params: CorpusParams,
}

/// Remove the best-fit line of dB vs log2(center frequency), then normalize.
fn detrend_normalize(values: &[f64], centers: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let xs: Vec<f64> = centers.iter().map(|c| c.log2()).collect();
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = values.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(values) {
        num += (x - mean_x) * (y - mean_y);
        den += (x - mean_x) * (x - mean_x);
    }
    let slope = if den > 1e-12 { num / den } else { 0.0 };
    let mut out: Vec<f64> = xs
        .iter()
        .zip(values)
        .map(|(x, y)| y - mean_y - slope * (x - mean_x))
        .collect();
    let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 1e-9 {
        for v in &mut out {
            *v /= norm;
        }
    }
    out
}

impl OracleDecoder {
    pub fn new(params: &CorpusParams) -> Self {
        let fb = Filterbank::new(SAMPLE_RATE as f64);
        let centers: Vec<f64> = fb.bands[LOW_BANDS..]
            .iter()
            .map(|b| b.center_hz)
            .collect();
        // reference rendering per phoneme defines the matched filter
        let mut reference = params.train_speakers.first().cloned().unwrap_or_else(|| {
            super::SpeakerProfile {
                speaker_id: "ref".into(),
                f0_hz: 150.0,
                tilt: -0.5,
                duration_scale: params
                    .languages
                    .iter()
                    .map(|l| (l.id.clone(), l.duration_scale))
                    .collect(),
            }
        });
        reference.f0_hz = 150.0;
        reference.tilt = -0.5;
        let lang = params.languages[0].id.clone();
        let templates = params
            .phonemes
            .iter()
            .map(|p| {
                let wave = synth_waveform(params, &[p.label.clone()], &reference, &lang)
                    .expect("template rendering");
                let mid = (wave.len() / 2) as i64;
                let feats = fb.analyze_at(&wave, mid);
                detrend_normalize(&feats[LOW_BANDS..], &centers)
            })
            .collect();
        Self {
            fb,
            templates,
            params: params.clone(),
        }
    }

    /// Classify one analysis frame: None for silence or no template match.
    fn classify(&self, feats: &[f64]) -> Option<(usize, f64)> {
        let peak = feats.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if peak <= DB_FLOOR + 6.0 {
            return None;
        }
        let centers: Vec<f64> = self.fb.bands[LOW_BANDS..]
            .iter()
            .map(|b| b.center_hz)
            .collect();
        let v = detrend_normalize(&feats[LOW_BANDS..], &centers);
        let mut best = (0usize, f64::NEG_INFINITY);
        for (p, t) in self.templates.iter().enumerate() {
            let score: f64 = v.iter().zip(t).map(|(a, b)| a * b).sum();
            if score > best.1 {
                best = (p, score);
            }
        }
        if best.1 < SCORE_MIN {
            None
        } else {
            Some(best)
        }
    }

    pub fn decode(&self, waveform: &[f64]) -> OracleReading {
        let sr = SAMPLE_RATE as f64;
        if waveform.len() < ORACLE_HOP || dsp::rms(waveform) < 1e-3 {
            return OracleReading {
                phonemes: vec![],
                durations_ms: vec![],
                f0_hz: None,
                tilt: None,
                confidence: 0.0,
                low_confidence: true,
            };
        }
        let n_frames = waveform.len() / ORACLE_HOP;
        let mut labels: Vec<Option<usize>> = Vec::with_capacity(n_frames);
        let mut scores: Vec<f64> = Vec::new();
        for i in 0..n_frames {
            let center = (i * ORACLE_HOP + ORACLE_HOP / 2) as i64;
            let feats = self.fb.analyze_at(waveform, center);
            match self.classify(&feats) {
                Some((p, s)) => {
                    labels.push(Some(p));
                    scores.push(s);
                }
                None => labels.push(None),
            }
        }
        // runs, with short runs merged into their left neighbor
        let mut runs: Vec<(Option<usize>, usize)> = Vec::new();
        for l in labels {
            match runs.last_mut() {
                Some((prev, count)) if *prev == l => *count += 1,
                _ => runs.push((l, 1)),
            }
        }
        let mut filtered: Vec<(Option<usize>, usize)> = Vec::new();
        for (label, count) in runs {
            if count < MIN_RUN_FRAMES {
                if let Some((_, prev_count)) = filtered.last_mut() {
                    *prev_count += count;
                    continue;
                }
            }
            match filtered.last_mut() {
                Some((prev, prev_count)) if *prev == label => *prev_count += count,
                _ => filtered.push((label, count)),
            }
        }
        // re-merge equal neighbors created by the filtering
        let mut merged: Vec<(Option<usize>, usize)> = Vec::new();
        for (label, count) in filtered {
            match merged.last_mut() {
                Some((prev, prev_count)) if *prev == label => *prev_count += count,
                _ => merged.push((label, count)),
            }
        }
        let hop_ms = ORACLE_HOP as f64 / sr * 1000.0;
        let mut phonemes = Vec::new();
        let mut durations = Vec::new();
        let mut seg_ranges = Vec::new();
        let mut frame_pos = 0usize;
        for (label, count) in &merged {
            if let Some(p) = label {
                phonemes.push(self.params.phonemes[*p].label.clone());
                durations.push(*count as f64 * hop_ms);
                seg_ranges.push((*p, frame_pos * ORACLE_HOP, (frame_pos + count) * ORACLE_HOP));
            }
            frame_pos += count;
        }

        let f0 = dsp::estimate_f0(waveform, sr, 75.0, 420.0);
        let tilt = f0.and_then(|f0| self.estimate_tilt(waveform, f0, &seg_ranges));
        let confidence = if scores.is_empty() {
            0.0
        } else {
            scores.iter().sum::<f64>() / scores.len() as f64
        };
        let low_confidence = phonemes.is_empty() || confidence < LOW_CONFIDENCE;
        OracleReading {
            phonemes,
            durations_ms: durations,
            f0_hz: f0,
            tilt,
            confidence,
            low_confidence,
        }
    }

    /// Log-spectrum regression over harmonics, skipping boosted regions.
    fn estimate_tilt(
        &self,
        waveform: &[f64],
        f0: f64,
        segments: &[(usize, usize, usize)],
    ) -> Option<f64> {
        let sr = SAMPLE_RATE as f64;
        let nyquist = sr / 2.0;
        let mut points: Vec<(f64, f64)> = Vec::new();
        for &(phoneme, start, end) in segments {
            if end - start < 400 {
                continue;
            }
            let center = ((start + end) / 2) as i64;
            let (fa, fb) = self.params.phonemes[phoneme].formants;
            let max_h = ((nyquist * 0.9) / f0).floor() as usize;
            for h in 1..=max_h {
                let freq = f0 * h as f64;
                let margin = FORMANT_HALF_WIDTH_HZ + 60.0;
                if (freq - fa).abs() < margin || (freq - fb).abs() < margin {
                    continue;
                }
                let probe = Band::probe(freq, 20.0, sr);
                let amp = probe.amplitude(waveform, center, sr);
                if amp > dsp::FLOOR_AMP * 4.0 {
                    points.push(((h as f64).log2(), 20.0 * amp.log10()));
                }
            }
        }
        if points.len() < 3 {
            return None;
        }
        let n = points.len() as f64;
        let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
        let my = points.iter().map(|p| p.1).sum::<f64>() / n;
        let mut num = 0.0;
        let mut den = 0.0;
        for (x, y) in &points {
            num += (x - mx) * (y - my);
            den += (x - mx) * (x - mx);
        }
        if den < 1e-9 {
            return None;
        }
        Some((num / den / TILT_DB_PER_OCTAVE).clamp(-1.0, 0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CorpusSpec;

    fn setup() -> (CorpusParams, OracleDecoder) {
        let spec = CorpusSpec {
            num_languages: 2,
            num_speakers: 4,
            utts_per_speaker_per_lang: 2,
            ..Default::default()
        };
        let params = CorpusParams::derive(&spec, 7).unwrap();
        let dec = OracleDecoder::new(&params);
        (params, dec)
    }

    #[test]
    fn decode_inverts_synthesis() {
        let (params, dec) = setup();
        for spk in params.train_speakers.iter().take(3) {
            let labels: Vec<String> =
                ["aa", "ss", "oo", "kk", "eh"].iter().map(|s| s.to_string()).collect();
            let wave = synth_waveform(&params, &labels, spk, "alpha").unwrap();
            let read = dec.decode(&wave);
            assert_eq!(read.phonemes, labels, "speaker {}", spk.speaker_id);
            let f0 = read.f0_hz.unwrap();
            assert!(
                (f0 - spk.f0_hz).abs() < 2.0,
                "speaker {} f0 {} est {}",
                spk.speaker_id,
                spk.f0_hz,
                f0
            );
            assert!(!read.low_confidence);
        }
    }

    #[test]
    fn tilt_estimate_tracks_speaker_tilt() {
        let (params, dec) = setup();
        let mut spk = params.train_speakers[0].clone();
        let labels: Vec<String> = ["aa", "uu", "nn"].iter().map(|s| s.to_string()).collect();
        spk.tilt = -0.7;
        let w1 = synth_waveform(&params, &labels, &spk, "alpha").unwrap();
        let t1 = dec.decode(&w1).tilt.unwrap();
        spk.tilt = -0.35;
        let w2 = synth_waveform(&params, &labels, &spk, "alpha").unwrap();
        let t2 = dec.decode(&w2).tilt.unwrap();
        assert!((t1 - -0.7).abs() < 0.12, "t1={t1}");
        assert!((t2 - -0.35).abs() < 0.12, "t2={t2}");
        assert!(t2 > t1);
    }

    #[test]
    fn silence_is_low_confidence_empty() {
        let (_, dec) = setup();
        let read = dec.decode(&vec![0.0; 8000]);
        assert!(read.phonemes.is_empty());
        assert!(read.low_confidence);
        assert!(read.f0_hz.is_none());
    }

    #[test]
    fn two_speakers_same_pattern_decode_identically() {
        let (params, dec) = setup();
        let labels: Vec<String> = ["ff", "ii", "tt"].iter().map(|s| s.to_string()).collect();
        let w1 = synth_waveform(&params, &labels, &params.train_speakers[0], "beta").unwrap();
        let w2 = synth_waveform(&params, &labels, &params.train_speakers[3], "beta").unwrap();
        assert_ne!(
            w1.iter().map(|x| (x * 1e6) as i64).collect::<Vec<_>>(),
            w2.iter().map(|x| (x * 1e6) as i64).collect::<Vec<_>>()
        );
        assert_eq!(dec.decode(&w1).phonemes, labels);
        assert_eq!(dec.decode(&w2).phonemes, labels);
    }

    #[test]
    fn durations_follow_the_language_law() {
        let (params, dec) = setup();
        let labels: Vec<String> = ["aa", "kk", "rr", "eh"].iter().map(|s| s.to_string()).collect();
        for lang in ["alpha", "beta"] {
            let wave =
                synth_waveform(&params, &labels, &params.train_speakers[1], lang).unwrap();
            let read = dec.decode(&wave);
            assert_eq!(read.phonemes, labels);
            for (label, dur) in read.phonemes.iter().zip(&read.durations_ms) {
                let p = params.phoneme_index(label).unwrap();
                let expect = params.expected_duration_ms(p, lang);
                assert!(
                    (dur - expect).abs() <= 11.0,
                    "{lang}/{label}: measured {dur} expected {expect}"
                );
            }
        }
    }
}
