//! Deterministic synthetic bilingual "speech" corpus. Every utterance's
//! speaker, content, and language are known generative parameters, so the
//! whole pipeline can be scored against an oracle instead of external models.

pub mod oracle;
pub mod params;
pub mod synth;
pub mod wav;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use oracle::{OracleDecoder, OracleReading};
pub use params::{CorpusParams, LanguageDef, PhonemeDef, WordDef};
pub use synth::synth_waveform;

use crate::dsp::SAMPLE_RATE;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cross-lingual corpus needs at least 2 languages, got {0}")]
    TooFewLanguages(usize),
    #[error("corpus needs at least 4 speakers, got {0}")]
    TooFewSpeakers(usize),
    #[error("corpus needs at least 2 utterances per speaker per language, got {0}")]
    TooFewUtterances(usize),
    #[error("unknown phoneme {0}")]
    UnknownPhoneme(String),
    #[error("empty phoneme sequence")]
    EmptyPhonemes,
    #[error("speaker has no duration scale for language {0}")]
    MissingLanguage(String),
    #[error("utterance {0} has no previous utterance; skip this sample")]
    NoPrevUtterance(String),
    #[error("prev_utt {0} does not resolve within the manifest")]
    DanglingPrev(String),
    #[error("duplicate utt_id {0}")]
    DuplicateUttId(String),
    #[error("unknown speaker {0}")]
    UnknownSpeaker(String),
    #[error("manifest parse error: {0}")]
    ManifestParse(String),
    #[error("bad wav file: {0}")]
    BadWav(String),
    #[error("sentence sampling failed adjacency constraints")]
    SentenceSampling,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Corpus-size parameters. Counts are per training speaker; an additional
/// unseen-speaker split of `num_speakers/2` (min 2) speakers is generated
/// for zero-shot evaluation with `eval_utts_per_speaker_per_lang` sentences
/// each, content-paired across languages.
#[derive(Debug, Clone)]
pub struct CorpusSpec {
    pub num_languages: usize,
    pub num_speakers: usize,
    pub utts_per_speaker_per_lang: usize,
    pub eval_utts_per_speaker_per_lang: usize,
    pub words_per_language: usize,
    pub sentence_min_words: usize,
    pub sentence_max_words: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            num_languages: 2,
            num_speakers: 8,
            utts_per_speaker_per_lang: 16,
            eval_utts_per_speaker_per_lang: 1,
            words_per_language: 20,
            sentence_min_words: 2,
            sentence_max_words: 3,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.num_languages < 2 {
            return Err(CorpusError::TooFewLanguages(self.num_languages));
        }
        if self.num_speakers < 4 {
            return Err(CorpusError::TooFewSpeakers(self.num_speakers));
        }
        if self.utts_per_speaker_per_lang < 2 {
            return Err(CorpusError::TooFewUtterances(self.utts_per_speaker_per_lang));
        }
        Ok(())
    }

    pub fn num_eval_speakers(&self) -> usize {
        (self.num_speakers / 2).max(2)
    }
}

/// Generative parameters of one synthetic voice.
#[derive(Debug, Clone)]
pub struct SpeakerProfile {
    pub speaker_id: String,
    pub f0_hz: f64,
    /// Spectral tilt coefficient in [-1, 0]; -1 is the steepest rolloff.
    pub tilt: f64,
    /// language id -> duration multiplier (the synthetic "accent").
    pub duration_scale: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub utt_id: String,
    pub speaker: String,
    pub language: String,
    pub text: String,
    pub phonemes: Vec<String>,
    pub prev_utt: Option<String>,
    pub wav_path: String,
}

impl Utterance {
    /// Unseen-speaker eval entries carry the `evl` speaker prefix.
    pub fn is_eval(&self) -> bool {
        self.speaker.starts_with("evl")
    }
}

#[derive(Debug, Clone)]
pub struct CorpusManifest {
    pub entries: Vec<Utterance>,
    pub sample_rate: u32,
    pub generation_seed: u64,
}

impl CorpusManifest {
    pub fn get(&self, utt_id: &str) -> Option<&Utterance> {
        self.entries.iter().find(|u| u.utt_id == utt_id)
    }

    pub fn train_entries(&self) -> impl Iterator<Item = &Utterance> {
        self.entries.iter().filter(|u| !u.is_eval())
    }

    pub fn eval_entries(&self) -> impl Iterator<Item = &Utterance> {
        self.entries.iter().filter(|u| u.is_eval())
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut ids = HashSet::new();
        for u in &self.entries {
            if !ids.insert(u.utt_id.as_str()) {
                return Err(CorpusError::DuplicateUttId(u.utt_id.clone()));
            }
        }
        for u in &self.entries {
            if let Some(prev) = &u.prev_utt {
                let p = self
                    .get(prev)
                    .ok_or_else(|| CorpusError::DanglingPrev(prev.clone()))?;
                if p.speaker != u.speaker || p.language != u.language {
                    return Err(CorpusError::ManifestParse(format!(
                        "prev_utt {} mismatches speaker/language of {}",
                        prev, u.utt_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Serialize in the line-oriented manifest format.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "sample_rate={}\tgeneration_seed={}",
            self.sample_rate, self.generation_seed
        );
        for u in &self.entries {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                u.utt_id,
                u.language,
                u.speaker,
                u.prev_utt.as_deref().unwrap_or("-"),
                u.text,
                u.phonemes.join(" "),
                u.wav_path
            );
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self, CorpusError> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| CorpusError::ManifestParse("empty manifest".into()))?;
        let mut sample_rate = None;
        let mut seed = None;
        for field in header.split('\t') {
            if let Some(v) = field.strip_prefix("sample_rate=") {
                sample_rate = v.parse::<u32>().ok();
            }
            if let Some(v) = field.strip_prefix("generation_seed=") {
                seed = v.parse::<u64>().ok();
            }
        }
        let (sample_rate, generation_seed) = match (sample_rate, seed) {
            (Some(s), Some(g)) => (s, g),
            _ => {
                return Err(CorpusError::ManifestParse(
                    "header must carry sample_rate and generation_seed".into(),
                ))
            }
        };
        let mut entries = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 7 {
                return Err(CorpusError::ManifestParse(format!(
                    "line {}: expected 7 fields, got {}",
                    i + 2,
                    fields.len()
                )));
            }
            entries.push(Utterance {
                utt_id: fields[0].to_string(),
                language: fields[1].to_string(),
                speaker: fields[2].to_string(),
                prev_utt: match fields[3] {
                    "-" => None,
                    p => Some(p.to_string()),
                },
                text: fields[4].to_string(),
                phonemes: fields[5].split(' ').map(str::to_string).collect(),
                wav_path: fields[6].to_string(),
            });
        }
        let m = Self {
            entries,
            sample_rate,
            generation_seed,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn write(&self, dir: &Path) -> Result<(), CorpusError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("manifest.tsv"), self.to_tsv())?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(dir.join("manifest.tsv"))?;
        Self::from_tsv(&text)
    }
}

/// The previous same-speaker utterance, used as the voice reference during
/// non-autoregressive training.
pub fn adjacent_pair<'m>(
    utt: &Utterance,
    manifest: &'m CorpusManifest,
) -> Result<&'m Utterance, CorpusError> {
    let prev = utt
        .prev_utt
        .as_ref()
        .ok_or_else(|| CorpusError::NoPrevUtterance(utt.utt_id.clone()))?;
    manifest
        .get(prev)
        .ok_or_else(|| CorpusError::DanglingPrev(prev.clone()))
}

/// Manifest plus the derived generative parameters.
pub struct Corpus {
    pub manifest: CorpusManifest,
    pub params: CorpusParams,
}

impl Corpus {
    pub fn generate(spec: &CorpusSpec, seed: u64) -> Result<Self, CorpusError> {
        let params = CorpusParams::derive(spec, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x51ed_270e_99d5_c3a7);
        let mut entries = Vec::new();
        let mut counter = 0usize;

        let mut push_utt = |speaker: &SpeakerProfile,
                            lang: usize,
                            sentence: &[usize],
                            prev: Option<String>,
                            counter: &mut usize|
         -> Utterance {
            let lexicon = &params.words[lang];
            let text: Vec<&str> = sentence.iter().map(|&w| lexicon[w].token.as_str()).collect();
            let phonemes: Vec<String> = sentence
                .iter()
                .flat_map(|&w| lexicon[w].phonemes.iter())
                .map(|&p| params.phonemes[p].label.clone())
                .collect();
            let utt_id = format!("u{:05}", *counter);
            *counter += 1;
            Utterance {
                utt_id: utt_id.clone(),
                speaker: speaker.speaker_id.clone(),
                language: params.languages[lang].id.clone(),
                text: text.join(" "),
                phonemes,
                prev_utt: prev,
                wav_path: format!("wav/{utt_id}.wav"),
            }
        };

        for spk in &params.train_speakers {
            for lang in 0..spec.num_languages {
                let mut prev: Option<String> = None;
                for _ in 0..spec.utts_per_speaker_per_lang {
                    let sentence = sample_sentence(&mut rng, &params, spec)?;
                    let u = push_utt(spk, lang, &sentence, prev.clone(), &mut counter);
                    prev = Some(u.utt_id.clone());
                    entries.push(u);
                }
            }
        }
        // eval sentences are shared across languages per (speaker, k) so the
        // split carries bilingual pairs for translation scoring
        for spk in &params.eval_speakers {
            let sentences: Vec<Vec<usize>> = (0..spec.eval_utts_per_speaker_per_lang)
                .map(|_| sample_sentence(&mut rng, &params, spec))
                .collect::<Result<_, _>>()?;
            for lang in 0..spec.num_languages {
                let mut prev: Option<String> = None;
                for sentence in &sentences {
                    let u = push_utt(spk, lang, sentence, prev.clone(), &mut counter);
                    prev = Some(u.utt_id.clone());
                    entries.push(u);
                }
            }
        }

        let manifest = CorpusManifest {
            entries,
            sample_rate: SAMPLE_RATE,
            generation_seed: seed,
        };
        manifest.validate()?;
        Ok(Self { manifest, params })
    }

    pub fn speaker(&self, id: &str) -> Result<&SpeakerProfile, CorpusError> {
        self.params
            .speaker(id)
            .ok_or_else(|| CorpusError::UnknownSpeaker(id.to_string()))
    }

    /// Render an utterance's waveform from its generative parameters.
    pub fn render(&self, utt: &Utterance) -> Result<Vec<f64>, CorpusError> {
        let spk = self.speaker(&utt.speaker)?;
        synth_waveform(&self.params, &utt.phonemes, spk, &utt.language)
    }

    /// The content-paired utterance of the same speaker in another language.
    pub fn translation_of<'a>(&'a self, utt: &Utterance, language: &str) -> Option<&'a Utterance> {
        let word_ids = self.word_indices(utt)?;
        self.manifest.entries.iter().find(|u| {
            u.speaker == utt.speaker
                && u.language == language
                && self.word_indices(u).as_deref() == Some(&word_ids[..])
        })
    }

    /// Word indices of an utterance's text under its language's lexicon.
    pub fn word_indices(&self, utt: &Utterance) -> Option<Vec<usize>> {
        let lang = self
            .params
            .languages
            .iter()
            .position(|l| l.id == utt.language)?;
        let lex: HashMap<&str, usize> = self.params.words[lang]
            .iter()
            .enumerate()
            .map(|(i, w)| (w.token.as_str(), i))
            .collect();
        utt.text
            .split(' ')
            .map(|t| lex.get(t).copied())
            .collect()
    }

    /// Write manifest, waveforms, and per-language lexicon files.
    pub fn write(&self, dir: &Path) -> Result<(), CorpusError> {
        self.manifest.write(dir)?;
        for (l, lang) in self.params.languages.iter().enumerate() {
            let mut text = String::new();
            for w in &self.params.words[l] {
                let labels: Vec<&str> = w
                    .phonemes
                    .iter()
                    .map(|&p| self.params.phonemes[p].label.as_str())
                    .collect();
                let _ = writeln!(text, "{}\t{}", w.token, labels.join(" "));
            }
            std::fs::write(dir.join(format!("lexicon.{}", lang.id)), text)?;
        }
        for u in &self.manifest.entries {
            let wave = self.render(u)?;
            wav::write_wav(&dir.join(&u.wav_path), &wave, self.manifest.sample_rate)?;
        }
        Ok(())
    }
}

/// Random sentence with no repeated phoneme across word boundaries in any
/// language (run-length segmentation cannot see doubled phonemes).
fn sample_sentence(
    rng: &mut ChaCha8Rng,
    params: &CorpusParams,
    spec: &CorpusSpec,
) -> Result<Vec<usize>, CorpusError> {
    'outer: for _ in 0..10_000 {
        let len = rng.gen_range(spec.sentence_min_words..=spec.sentence_max_words);
        let sentence: Vec<usize> = (0..len)
            .map(|_| rng.gen_range(0..spec.words_per_language))
            .collect();
        for lang_words in &params.words {
            for w in sentence.windows(2) {
                let prev = &lang_words[w[0]].phonemes;
                let next = &lang_words[w[1]].phonemes;
                if prev.last() == next.first() {
                    continue 'outer;
                }
            }
        }
        return Ok(sentence);
    }
    Err(CorpusError::SentenceSampling)
}
