// scratch diagnostic
use xspeech::corpus::{Corpus, CorpusSpec, synth_waveform};
use xspeech::dsp::{Filterbank, LOW_BANDS};

fn main() {
    let spec = CorpusSpec { num_languages: 2, num_speakers: 4, utts_per_speaker_per_lang: 2, ..Default::default() };
    let c = Corpus::generate(&spec, 7).unwrap();
    let params = &c.params;
    let fb = Filterbank::new(8000.0);
    for (i, b) in fb.bands.iter().enumerate() {
        eprintln!("band {i}: center {:.0} sigma {:.0} half_len {}", b.center_hz, b.sigma_hz, b.half_len);
    }
    for spk_i in [0usize, 3] {
        let spk = &params.train_speakers[spk_i];
        eprintln!("== speaker {} f0={:.0} tilt={:.2}", spk.speaker_id, spk.f0_hz, spk.tilt);
        for lbl in ["ff", "ii", "tt", "zz", "kk"] {
            let w = synth_waveform(params, &[lbl.to_string()], spk, "alpha").unwrap();
            let p = params.phoneme_index(lbl).unwrap();
            let (f1, f2) = params.phonemes[p].formants;
            // analyze at several centers
            let mid = (w.len() / 2) as i64;
            for off in [-20i64, 0, 20] {
                let f = fb.analyze_at(&w, mid + off);
                let tim: Vec<String> = f[LOW_BANDS..].iter().map(|v| format!("{:6.1}", v)).collect();
                eprintln!("{lbl} (F={f1:.0},{f2:.0}) off={off:3}: {}", tim.join(" "));
            }
        }
    }
}
