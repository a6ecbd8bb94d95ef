//! Deterministic derivation of all generative corpus parameters from
//! (spec, seed): phoneme identities, lexicons, languages, and speakers.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CorpusError, CorpusSpec, SpeakerProfile};
use crate::dsp;

pub const NUM_PHONEMES: usize = 14;
const PHONEME_LABELS: [&str; NUM_PHONEMES] = [
    "aa", "eh", "ii", "oo", "uu", "kk", "mm", "nn", "rr", "ss", "tt", "zz", "ff", "ll",
];
const LANGUAGE_NAMES: [&str; 6] = ["alpha", "beta", "gamma", "delta", "epsilon", "zeta"];

pub const BASE_DURATION_MIN_MS: f64 = 60.0;
pub const BASE_DURATION_MAX_MS: f64 = 140.0;
pub const DURATION_SCALE_MIN: f64 = 0.70;
pub const DURATION_SCALE_MAX: f64 = 1.45;
pub const F0_TRAIN_MIN: f64 = 95.0;
pub const F0_TRAIN_MAX: f64 = 285.0;
pub const TILT_MIN: f64 = -0.85;
pub const TILT_MAX: f64 = -0.30;
/// Tilt rolloff in dB per octave at tilt = -1.
pub const TILT_DB_PER_OCTAVE: f64 = 12.0;
/// Formant boost applied to harmonics near a phoneme's pattern frequencies.
pub const FORMANT_BOOST_DB: f64 = 18.0;
pub const FORMANT_HALF_WIDTH_HZ: f64 = 260.0;

#[derive(Debug, Clone)]
pub struct PhonemeDef {
    pub label: String,
    /// Fixed per-phoneme boost frequencies (the timbre pattern).
    pub formants: (f64, f64),
    /// Frozen base duration before language scaling.
    pub base_duration_ms: f64,
}

#[derive(Debug, Clone)]
pub struct LanguageDef {
    pub id: String,
    pub duration_scale: f64,
}

#[derive(Debug, Clone)]
pub struct WordDef {
    pub token: String,
    /// Indices into `CorpusParams::phonemes`.
    pub phonemes: Vec<usize>,
}

/// Everything the generator, oracle, and evaluators need, derived purely
/// from (spec, seed).
#[derive(Debug, Clone)]
pub struct CorpusParams {
    pub phonemes: Vec<PhonemeDef>,
    pub languages: Vec<LanguageDef>,
    /// words[lang][word_index]; word indices align across languages and act
    /// as the translation table.
    pub words: Vec<Vec<WordDef>>,
    pub train_speakers: Vec<SpeakerProfile>,
    pub eval_speakers: Vec<SpeakerProfile>,
}

impl CorpusParams {
    pub fn derive(spec: &CorpusSpec, seed: u64) -> Result<Self, CorpusError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);

        // phoneme identities: distinct timbre-band pairs, frozen durations
        let centers: Vec<f64> = (0..dsp::TIMBRE_BANDS)
            .map(|k| {
                dsp::TIMBRE_F_MIN
                    * (dsp::TIMBRE_F_MAX / dsp::TIMBRE_F_MIN)
                        .powf(k as f64 / (dsp::TIMBRE_BANDS - 1) as f64)
            })
            .collect();
        let mut pairs = Vec::new();
        for i in 0..centers.len() {
            for j in i + 1..centers.len() {
                pairs.push((centers[i], centers[j]));
            }
        }
        assert!(pairs.len() >= NUM_PHONEMES);
        let mut phonemes = Vec::with_capacity(NUM_PHONEMES);
        for (i, label) in PHONEME_LABELS.iter().enumerate() {
            let dur = rng.gen_range(BASE_DURATION_MIN_MS..=BASE_DURATION_MAX_MS);
            phonemes.push(PhonemeDef {
                label: label.to_string(),
                formants: pairs[i],
                base_duration_ms: dur,
            });
        }

        // languages: distinct duration scales, geometric spread
        let mut languages = Vec::with_capacity(spec.num_languages);
        for l in 0..spec.num_languages {
            let frac = if spec.num_languages == 1 {
                0.0
            } else {
                l as f64 / (spec.num_languages - 1) as f64
            };
            let scale = DURATION_SCALE_MIN
                * (DURATION_SCALE_MAX / DURATION_SCALE_MIN).powf(frac);
            let id = LANGUAGE_NAMES
                .get(l)
                .map(|s| s.to_string())
                .unwrap_or_else(|| format!("lang{l}"));
            languages.push(LanguageDef {
                id,
                duration_scale: scale,
            });
        }

        // per-language lexicons: distinct ordered phoneme pairs per word,
        // aligned word indices form the translation table
        let mut words = Vec::with_capacity(spec.num_languages);
        for _ in 0..spec.num_languages {
            let mut all_pairs = Vec::new();
            for p in 0..NUM_PHONEMES {
                for q in 0..NUM_PHONEMES {
                    if p != q {
                        all_pairs.push(vec![p, q]);
                    }
                }
            }
            all_pairs.shuffle(&mut rng);
            all_pairs.truncate(spec.words_per_language);
            words.push(all_pairs);
        }
        let words: Vec<Vec<WordDef>> = words
            .into_iter()
            .enumerate()
            .map(|(l, pairs)| {
                pairs
                    .into_iter()
                    .enumerate()
                    .map(|(w, phonemes)| WordDef {
                        token: format!("{}{:02}", lang_prefix(l), w),
                        phonemes,
                    })
                    .collect()
            })
            .collect();

        // training speakers: geometric f0 grid, shuffled tilt grid
        let n = spec.num_speakers;
        let mut tilts: Vec<f64> = (0..n)
            .map(|i| {
                TILT_MIN + (TILT_MAX - TILT_MIN) * i as f64 / (n.max(2) - 1) as f64
            })
            .collect();
        tilts.shuffle(&mut rng);
        let mut train_speakers = Vec::with_capacity(n);
        for i in 0..n {
            let f0 = F0_TRAIN_MIN
                * (F0_TRAIN_MAX / F0_TRAIN_MIN).powf(i as f64 / (n.max(2) - 1) as f64);
            train_speakers.push(SpeakerProfile {
                speaker_id: format!("spk{i:02}"),
                f0_hz: f0,
                tilt: tilts[i],
                duration_scale: languages
                    .iter()
                    .map(|l| (l.id.clone(), l.duration_scale))
                    .collect(),
            });
        }

        // unseen eval speakers: ~half the training count, f0 offset 6..10 Hz
        // from a training speaker so the trained codec can still express them
        let n_eval = (n / 2).max(2);
        let mut eval_speakers = Vec::with_capacity(n_eval);
        for e in 0..n_eval {
            let anchor = &train_speakers[(1 + 2 * e) % n];
            let offset = rng.gen_range(6.0..10.0) * if e % 2 == 0 { 1.0 } else { -1.0 };
            let f0 = (anchor.f0_hz + offset).clamp(82.0, 395.0);
            let tilt = rng.gen_range(TILT_MIN..TILT_MAX);
            eval_speakers.push(SpeakerProfile {
                speaker_id: format!("evl{e:02}"),
                f0_hz: f0,
                tilt,
                duration_scale: languages
                    .iter()
                    .map(|l| (l.id.clone(), l.duration_scale))
                    .collect(),
            });
        }
        enforce_f0_separation(&mut train_speakers, &mut eval_speakers);

        Ok(Self {
            phonemes,
            languages,
            words,
            train_speakers,
            eval_speakers,
        })
    }

    pub fn phoneme_index(&self, label: &str) -> Option<usize> {
        self.phonemes.iter().position(|p| p.label == label)
    }

    pub fn language(&self, id: &str) -> Option<&LanguageDef> {
        self.languages.iter().find(|l| l.id == id)
    }

    pub fn speaker(&self, id: &str) -> Option<&SpeakerProfile> {
        self.train_speakers
            .iter()
            .chain(self.eval_speakers.iter())
            .find(|s| s.speaker_id == id)
    }

    /// Expected rendered duration of phoneme `p` in language `lang` (ms).
    pub fn expected_duration_ms(&self, phoneme: usize, lang: &str) -> f64 {
        let scale = self.language(lang).map(|l| l.duration_scale).unwrap_or(1.0);
        self.phonemes[phoneme].base_duration_ms * scale
    }
}

fn lang_prefix(l: usize) -> String {
    let c = (b'a' + (l as u8 % 26)) as char;
    c.to_string()
}

/// Nudge f0 values until every pair differs by at least 5 Hz.
fn enforce_f0_separation(train: &mut [SpeakerProfile], eval: &mut [SpeakerProfile]) {
    for _ in 0..64 {
        let mut all: Vec<(usize, bool, f64)> = train
            .iter()
            .enumerate()
            .map(|(i, s)| (i, true, s.f0_hz))
            .chain(eval.iter().enumerate().map(|(i, s)| (i, false, s.f0_hz)))
            .collect();
        all.sort_by(|a, b| a.2.partial_cmp(&b.2).unwrap());
        let mut changed = false;
        for w in 1..all.len() {
            if all[w].2 - all[w - 1].2 < 5.0 {
                let (idx, is_train, f0) = all[w];
                let bumped = f0 + 5.0;
                if is_train {
                    train[idx].f0_hz = bumped;
                } else {
                    eval[idx].f0_hz = bumped;
                }
                changed = true;
            }
        }
        if !changed {
            return;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> CorpusSpec {
        CorpusSpec {
            num_languages: 2,
            num_speakers: 4,
            utts_per_speaker_per_lang: 8,
            ..Default::default()
        }
    }

    #[test]
    fn derivation_is_deterministic() {
        let a = CorpusParams::derive(&spec(), 7).unwrap();
        let b = CorpusParams::derive(&spec(), 7).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }

    #[test]
    fn speakers_respect_f0_separation() {
        let p = CorpusParams::derive(&spec(), 3).unwrap();
        let mut f0s: Vec<f64> = p
            .train_speakers
            .iter()
            .chain(p.eval_speakers.iter())
            .map(|s| s.f0_hz)
            .collect();
        f0s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for w in f0s.windows(2) {
            assert!(w[1] - w[0] >= 5.0 - 1e-9, "{f0s:?}");
        }
    }

    #[test]
    fn words_are_unique_pairs() {
        let p = CorpusParams::derive(&spec(), 7).unwrap();
        for lang_words in &p.words {
            let mut seen = std::collections::HashSet::new();
            for w in lang_words {
                assert_eq!(w.phonemes.len(), 2);
                assert_ne!(w.phonemes[0], w.phonemes[1]);
                assert!(seen.insert(w.phonemes.clone()), "duplicate expansion");
            }
        }
    }

    #[test]
    fn duration_scales_distinct_across_languages() {
        let p = CorpusParams::derive(&spec(), 7).unwrap();
        assert!(
            (p.languages[0].duration_scale - p.languages[1].duration_scale).abs() > 0.3
        );
        for l in &p.languages {
            assert!(l.duration_scale >= 0.5 && l.duration_scale <= 2.0);
        }
    }
}
