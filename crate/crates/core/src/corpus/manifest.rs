//! Line-oriented manifest and vocabulary files.
//!
//! ```text
//! #adadurian-manifest v1
//! utt_id <TAB> speaker <TAB> emotion <TAB> tokens <TAB> durations <TAB> mel [<TAB> wav]
//! ```
//!
//! Tokens are space separated, each `phone/tone/lang` or `B` for a prosodic
//! boundary; durations are space separated integers, one per token. Vocab
//! files (`phones.tsv`, `tones.tsv`, `languages.tsv`, `speakers.tsv`,
//! `emotions.tsv`) hold one `id<TAB>name` per line and live next to the
//! manifest together with `signal.json`.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::Array2;

use super::{CorpusError, LinguisticToken, TokenKind, Utterance};
use crate::dsp::{self, MelSpectrogram, SignalConfig};

pub const MANIFEST_HEADER: &str = "#adadurian-manifest v1";
pub const BOUNDARY: &str = "B";
pub const NONE_TONE: &str = "none";

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Self {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self { names, index }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    fn to_file(&self) -> String {
        self.names.iter().enumerate().fold(String::new(), |mut s, (i, n)| {
            let _ = writeln!(s, "{i}\t{n}");
            s
        })
    }

    fn parse(text: &str, what: &str) -> Result<Self, CorpusError> {
        let mut names = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let (id, name) = line.split_once('\t').ok_or_else(|| CorpusError::Parse {
                line: i + 1,
                msg: format!("{what} vocab line must be `id<TAB>name`"),
            })?;
            let id: usize = id.trim().parse().map_err(|_| CorpusError::Parse {
                line: i + 1,
                msg: format!("bad {what} id `{id}`"),
            })?;
            if id != names.len() {
                return Err(CorpusError::Parse {
                    line: i + 1,
                    msg: format!("{what} ids must be dense and ordered; expected {}", names.len()),
                });
            }
            names.push(name.trim().to_string());
        }
        let vocab = Vocab::new(names);
        if vocab.index.len() != vocab.len() {
            return Err(CorpusError::Invalid(format!("duplicate names in {what} vocab")));
        }
        Ok(vocab)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocabs {
    pub phones: Vocab,
    pub tones: Vocab,
    pub languages: Vocab,
    pub speakers: Vocab,
    pub emotions: Vocab,
}

impl Vocabs {
    const FILES: [&'static str; 5] = ["phones.tsv", "tones.tsv", "languages.tsv", "speakers.tsv", "emotions.tsv"];

    pub fn boundary_phone(&self) -> usize {
        self.phones.id(BOUNDARY).expect("phone vocab has the reserved boundary symbol")
    }

    pub fn none_tone(&self) -> usize {
        self.tones.id(NONE_TONE).expect("tone vocab has the reserved `none` symbol")
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.phones.id(BOUNDARY).is_none() {
            return Err(CorpusError::Invalid(format!("phone vocab lacks the reserved `{BOUNDARY}` symbol")));
        }
        if self.tones.id(NONE_TONE).is_none() {
            return Err(CorpusError::Invalid(format!("tone vocab lacks the reserved `{NONE_TONE}` symbol")));
        }
        for (v, what) in [(&self.languages, "language"), (&self.speakers, "speaker"), (&self.emotions, "emotion")] {
            if v.is_empty() {
                return Err(CorpusError::Invalid(format!("{what} vocab is empty")));
            }
        }
        Ok(())
    }

    fn write(&self, dir: &Path) -> Result<(), CorpusError> {
        let all = [&self.phones, &self.tones, &self.languages, &self.speakers, &self.emotions];
        for (v, f) in all.into_iter().zip(Self::FILES) {
            fs::write(dir.join(f), v.to_file())?;
        }
        Ok(())
    }

    fn read(dir: &Path) -> Result<Self, CorpusError> {
        let load = |f: &str| -> Result<Vocab, CorpusError> {
            let text = fs::read_to_string(dir.join(f))?;
            Vocab::parse(&text, f.trim_end_matches(".tsv"))
        };
        let v = Vocabs {
            phones: load(Self::FILES[0])?,
            tones: load(Self::FILES[1])?,
            languages: load(Self::FILES[2])?,
            speakers: load(Self::FILES[3])?,
            emotions: load(Self::FILES[4])?,
        };
        v.validate()?;
        Ok(v)
    }
}

/// A validated set of utterances plus the vocabularies and signal settings
/// they refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    /// Directory that relative paths resolve against.
    pub root: PathBuf,
    pub records: Vec<Utterance>,
    pub vocabs: Arc<Vocabs>,
    pub signal: SignalConfig,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn load_mel(&self, utt: &Utterance) -> Result<MelSpectrogram, CorpusError> {
        Ok(dsp::io::read_mel(&self.resolve(&utt.mel_path), &self.signal)?)
    }

    /// Loads every record's mel as `f32` frames, in record order.
    pub fn load_mels(&self) -> Result<Vec<Array2<f32>>, CorpusError> {
        self.records.iter().map(|u| Ok(self.load_mel(u)?.frames.mapv(|v| v as f32))).collect()
    }

    /// Same vocabularies and root, subset of records.
    pub fn filtered(&self, keep: impl Fn(&Utterance) -> bool) -> Manifest {
        Manifest {
            root: self.root.clone(),
            records: self.records.iter().filter(|u| keep(u)).cloned().collect(),
            vocabs: self.vocabs.clone(),
            signal: self.signal,
        }
    }

    pub fn speaker_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.records.iter().map(|u| u.speaker_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn emotion_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.records.iter().map(|u| u.emotion_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn format_tokens(&self, tokens: &[LinguisticToken]) -> String {
        format_tokens(&self.vocabs, tokens)
    }
}

fn format_tokens(v: &Vocabs, tokens: &[LinguisticToken]) -> String {
    tokens
        .iter()
        .map(|t| match t.kind {
            TokenKind::ProsodicBoundary => BOUNDARY.to_string(),
            TokenKind::Phoneme => format!(
                "{}/{}/{}",
                v.phones.name(t.phone_id).unwrap_or("?"),
                v.tones.name(t.tone_stress_id).unwrap_or("?"),
                v.languages.name(t.language_id).unwrap_or("?")
            ),
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Parses one token in `phone/tone/lang` or `B` syntax.
pub fn parse_token(text: &str, vocabs: &Vocabs, line: usize) -> Result<LinguisticToken, CorpusError> {
    if text == BOUNDARY {
        return Ok(LinguisticToken::boundary(vocabs));
    }
    let parts: Vec<&str> = text.split('/').collect();
    if parts.len() != 3 {
        return Err(CorpusError::Parse { line, msg: format!("token `{text}` is not `phone/tone/lang` or `B`") });
    }
    let lookup = |v: &Vocab, what: &'static str, name: &str| {
        v.id(name).ok_or_else(|| CorpusError::Vocab { line, vocab: what, name: name.to_string() })
    };
    let phone = lookup(&vocabs.phones, "phone", parts[0])?;
    if phone == vocabs.boundary_phone() {
        return Err(CorpusError::Parse { line, msg: format!("`{BOUNDARY}` is reserved for boundaries") });
    }
    Ok(LinguisticToken::phoneme(
        phone,
        lookup(&vocabs.tones, "tone/stress", parts[1])?,
        lookup(&vocabs.languages, "language", parts[2])?,
    ))
}

pub fn parse_tokens(text: &str, vocabs: &Vocabs, line: usize) -> Result<Vec<LinguisticToken>, CorpusError> {
    text.split_whitespace().map(|t| parse_token(t, vocabs, line)).collect()
}

/// One synthesis input line: tokens in manifest syntax, optionally followed
/// by a tab and frame durations, given either per token (boundaries 0) or
/// per phoneme. Returns per-phoneme durations.
pub fn parse_request_line(
    text: &str,
    vocabs: &Vocabs,
    line: usize,
) -> Result<(Vec<LinguisticToken>, Option<Vec<u32>>), CorpusError> {
    let (tok_text, dur_text) = match text.split_once('\t') {
        Some((t, d)) => (t, Some(d)),
        None => (text, None),
    };
    let tokens = parse_tokens(tok_text, vocabs, line)?;
    if !tokens.iter().any(|t| !t.is_boundary()) {
        return Err(CorpusError::Parse { line, msg: "no phoneme tokens".into() });
    }
    let Some(dur_text) = dur_text.filter(|d| !d.trim().is_empty()) else {
        return Ok((tokens, None));
    };
    let durations = dur_text
        .split_whitespace()
        .map(|d| d.parse::<u32>().map_err(|_| CorpusError::Parse { line, msg: format!("bad duration `{d}`") }))
        .collect::<Result<Vec<_>, _>>()?;
    let n_phonemes = tokens.iter().filter(|t| !t.is_boundary()).count();
    let per_phoneme: Vec<u32> = if durations.len() == tokens.len() {
        if tokens.iter().zip(&durations).any(|(t, &d)| t.is_boundary() != (d == 0)) {
            return Err(CorpusError::Parse { line, msg: "boundaries take 0 frames and phonemes at least 1".into() });
        }
        durations.into_iter().filter(|&d| d > 0).collect()
    } else if durations.len() == n_phonemes {
        if durations.contains(&0) {
            return Err(CorpusError::Parse { line, msg: "phoneme durations must be at least 1".into() });
        }
        durations
    } else {
        return Err(CorpusError::Parse {
            line,
            msg: format!("{} durations for {} tokens ({n_phonemes} phonemes)", durations.len(), tokens.len()),
        });
    };
    Ok((tokens, Some(per_phoneme)))
}

fn parse_record(text: &str, line: usize, vocabs: &Vocabs) -> Result<Utterance, CorpusError> {
    let fields: Vec<&str> = text.split('\t').collect();
    if !(6..=7).contains(&fields.len()) {
        return Err(CorpusError::Parse { line, msg: format!("expected 6 or 7 tab-separated fields, found {}", fields.len()) });
    }
    let utt_id = fields[0].trim();
    if utt_id.is_empty() {
        return Err(CorpusError::Parse { line, msg: "empty utt_id".into() });
    }
    let speaker_id = vocabs
        .speakers
        .id(fields[1])
        .ok_or_else(|| CorpusError::Vocab { line, vocab: "speaker", name: fields[1].to_string() })?;
    let emotion_id = vocabs
        .emotions
        .id(fields[2])
        .ok_or_else(|| CorpusError::Vocab { line, vocab: "emotion", name: fields[2].to_string() })?;
    let tokens = parse_tokens(fields[3], vocabs, line)?;
    let durations = fields[4]
        .split_whitespace()
        .map(|d| d.parse::<u32>().map_err(|_| CorpusError::Parse { line, msg: format!("bad duration `{d}`") }))
        .collect::<Result<Vec<_>, _>>()?;
    let wave_path = fields.get(6).map(|w| w.trim()).filter(|w| !w.is_empty()).map(PathBuf::from);
    let utt = Utterance {
        utt_id: utt_id.to_string(),
        speaker_id,
        emotion_id,
        tokens,
        durations,
        mel_path: PathBuf::from(fields[5].trim()),
        wave_path,
    };
    utt.check_durations().map_err(|msg| CorpusError::Parse { line, msg: format!("{utt_id}: {msg}") })?;
    Ok(utt)
}

/// Reads and validates a manifest: syntax, vocabulary membership, unique ids,
/// boundary/duration pairing, and that each record's durations sum to its mel
/// frame count.
pub fn load_manifest(path: &Path) -> Result<Manifest, CorpusError> {
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let text = fs::read_to_string(path)?;
    let vocabs = Vocabs::read(&root)?;
    let signal: SignalConfig = serde_json::from_str(&fs::read_to_string(root.join("signal.json"))?)
        .map_err(|e| CorpusError::Invalid(format!("signal.json: {e}")))?;
    signal.validate()?;

    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == MANIFEST_HEADER => {}
        _ => return Err(CorpusError::Parse { line: 1, msg: format!("missing `{MANIFEST_HEADER}` header") }),
    }
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let utt = parse_record(line, i + 1, &vocabs)?;
        if !seen.insert(utt.utt_id.clone()) {
            return Err(CorpusError::Parse { line: i + 1, msg: format!("duplicate utt_id {}", utt.utt_id) });
        }
        records.push(utt);
    }
    let manifest = Manifest { root, records, vocabs: Arc::new(vocabs), signal };
    for utt in &manifest.records {
        let (frames, n_mels) = dsp::io::read_mel_dims(&manifest.resolve(&utt.mel_path))?;
        if n_mels != signal.n_mels {
            return Err(CorpusError::Invalid(format!("{}: mel has {n_mels} bins, expected {}", utt.utt_id, signal.n_mels)));
        }
        if frames as u64 != utt.num_frames() {
            return Err(CorpusError::DurationMismatch { utt_id: utt.utt_id.clone(), durations: utt.num_frames(), frames });
        }
    }
    Ok(manifest)
}

/// Writes the manifest file plus vocab files and `signal.json` next to it.
/// Mel and wave files are not touched.
pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<(), CorpusError> {
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    fs::create_dir_all(&dir)?;
    manifest.vocabs.write(&dir)?;
    let signal = serde_json::to_string_pretty(&manifest.signal).expect("plain struct");
    fs::write(dir.join("signal.json"), signal + "\n")?;
    let v = &manifest.vocabs;
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for u in &manifest.records {
        let durations = u.durations.iter().map(u32::to_string).collect::<Vec<_>>().join(" ");
        let _ = write!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            u.utt_id,
            v.speakers.name(u.speaker_id).unwrap_or("?"),
            v.emotions.name(u.emotion_id).unwrap_or("?"),
            format_tokens(v, &u.tokens),
            durations,
            u.mel_path.display()
        );
        if let Some(w) = &u.wave_path {
            let _ = write!(out, "\t{}", w.display());
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::io::write_mel;

    fn vocabs() -> Vocabs {
        Vocabs {
            phones: Vocab::new(["B", "a", "b", "c"]),
            tones: Vocab::new(["none", "t1", "s1"]),
            languages: Vocab::new(["zh", "en"]),
            speakers: Vocab::new(["spk0", "spk1"]),
            emotions: Vocab::new(["neutral"]),
        }
    }

    fn fixture(dir: &Path, frames: &[usize]) -> PathBuf {
        let signal = SignalConfig::default();
        let v = vocabs();
        let mut records = Vec::new();
        for (i, &f) in frames.iter().enumerate() {
            let mel = format!("u{i}.mel");
            write_mel(&dir.join(&mel), &MelSpectrogram::silence(f, signal)).unwrap();
            records.push(Utterance {
                utt_id: format!("u{i}"),
                speaker_id: i % 2,
                emotion_id: 0,
                tokens: vec![
                    LinguisticToken::phoneme(1, 1, 0),
                    LinguisticToken::boundary(&v),
                    LinguisticToken::phoneme(2, 2, 1),
                ],
                durations: vec![40, 0, 60],
                mel_path: PathBuf::from(mel),
                wave_path: (i == 0).then(|| PathBuf::from("u0.wav")),
            });
        }
        let m = Manifest { root: dir.to_path_buf(), records, vocabs: Arc::new(v), signal };
        let path = dir.join("manifest.tsv");
        write_manifest(&m, &path).unwrap();
        path
    }

    #[test]
    fn round_trip_three_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = fixture(dir.path(), &[100, 100, 100]);
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.len(), 3);
        let again = dir.path().join("copy").join("manifest.tsv");
        write_manifest(&m, &again).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), fs::read_to_string(&again).unwrap());
        assert_eq!(m.records[0].phoneme_durations(), vec![40, 60]);
        assert_eq!(m.records[0].wave_path.as_deref(), Some(Path::new("u0.wav")));
    }

    #[test]
    fn duration_mismatch_names_the_utterance() {
        let dir = tempfile::tempdir().unwrap();
        let path = fixture(dir.path(), &[100, 99]);
        // Record u1 has durations summing to 100 but its mel has 99 frames.
        match load_manifest(&path) {
            Err(CorpusError::DurationMismatch { utt_id, durations, frames }) => {
                assert_eq!((utt_id.as_str(), durations, frames), ("u1", 100, 99));
            }
            other => panic!("expected mismatch, got {other:?}"),
        }
    }

    #[test]
    fn unknown_speaker_is_a_vocab_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = fixture(dir.path(), &[100]);
        let text = fs::read_to_string(&path).unwrap().replace("\tspk0\t", "\tspk9\t");
        fs::write(&path, text).unwrap();
        match load_manifest(&path) {
            Err(CorpusError::Vocab { line: 2, vocab: "speaker", name }) => assert_eq!(name, "spk9"),
            other => panic!("expected vocab error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = fixture(dir.path(), &[100, 100]);
        let mut text = fs::read_to_string(&path).unwrap();
        text.push_str("broken\tline\n");
        fs::write(&path, text).unwrap();
        assert!(matches!(load_manifest(&path), Err(CorpusError::Parse { line: 4, .. })));
    }

    #[test]
    fn boundary_pairing_rules() {
        let v = vocabs();
        let dir = tempfile::tempdir().unwrap();
        let path = fixture(dir.path(), &[100]);
        let text = fs::read_to_string(&path).unwrap().replace("40 0 60", "40 1 59");
        fs::write(&path, &text).unwrap();
        assert!(matches!(load_manifest(&path), Err(CorpusError::Parse { line: 2, .. })));
        assert!(parse_token("B", &v, 1).unwrap().is_boundary());
        assert!(matches!(parse_token("a/t9/zh", &v, 3), Err(CorpusError::Vocab { vocab: "tone/stress", .. })));
        assert!(parse_token("B/none/zh", &v, 1).is_err());
        assert!(parse_token("a-t1-zh", &v, 1).is_err());
    }

    #[test]
    fn request_lines_accept_both_duration_layouts() {
        let v = vocabs();
        let (t, d) = parse_request_line("a/t1/zh B b/s1/en", &v, 1).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(d, None);
        let (_, d) = parse_request_line("a/t1/zh B b/s1/en\t3 0 2", &v, 1).unwrap();
        assert_eq!(d, Some(vec![3, 2]));
        let (_, d) = parse_request_line("a/t1/zh B b/s1/en\t3 2", &v, 1).unwrap();
        assert_eq!(d, Some(vec![3, 2]));
    }

    #[test]
    fn request_lines_reject_bad_durations() {
        let v = vocabs();
        for text in ["a/t1/zh B b/s1/en\t3 1 2", "a/t1/zh b/s1/en\t3 0", "a/t1/zh\t1 2", "a/t1/zh\tx", "B B"] {
            assert!(matches!(parse_request_line(text, &v, 4), Err(CorpusError::Parse { line: 4, .. })), "{text}");
        }
        assert!(matches!(parse_request_line("q/t1/zh", &v, 2), Err(CorpusError::Vocab { line: 2, .. })));
    }
}
