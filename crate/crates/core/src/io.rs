//! On-disk artifact formats.
//!
//! Parameters use one little-endian binary container for both the base
//! model and the head:
//!
//! ```text
//! magic "MUMO" | format version u32 | file kind u32
//! kind-specific header (u32 fields; strings are u32-length-prefixed UTF-8)
//! tensor count u32
//! per tensor: name length u32 | name bytes | rank u32 | dims u32... | f32 data
//! ```
//!
//! The base model header is its config (d_model, n_layers, n_heads,
//! context_len, vocab_size, seed). The head header carries the digest of
//! the base model it was fine-tuned against plus its own dimensions;
//! loading a head next to a base with a different digest is a hard error,
//! because head weights are meaningless on any other base.
//!
//! Vocabularies are JSON. Tensors are not: keeping floats binary makes the
//! files byte-stable, which the pipeline manifest digests rely on.

use std::collections::HashSet;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::head::MonoHead;
use crate::model::{hex, zeroed_model, BaseModel, ModelConfig, ModelError, TrainStep};
use crate::tokenizer::{MonoVocabulary, MonoWord, TokenId, TokenizerError, Vocabulary};

pub const MAGIC: [u8; 4] = *b"MUMO";
pub const FORMAT_VERSION: u32 = 1;

const KIND_MODEL: u32 = 1;
const KIND_HEAD: u32 = 2;

/// Refuse to allocate for obviously corrupt length fields instead of
/// letting a flipped bit request gigabytes.
const MAX_TENSOR_ELEMS: u64 = 1 << 31;
const MAX_NAME_LEN: u32 = 1 << 10;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: String, reason: String },
    #[error(
        "{path}: head was fine-tuned against base digest {stored} \
         but the loaded base model has digest {actual}"
    )]
    DigestMismatch {
        path: String,
        stored: String,
        actual: String,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
}

fn file_err(path: &Path) -> impl Fn(std::io::Error) -> IoError + '_ {
    move |source| IoError::File { path: path.display().to_string(), source }
}

fn format_err(path: &Path, reason: impl Into<String>) -> IoError {
    IoError::Format { path: path.display().to_string(), reason: reason.into() }
}

// ---------------------------------------------------------------------------
// Binary container plumbing

struct BinWriter<W: Write> {
    w: W,
}

impl<W: Write> BinWriter<W> {
    fn u32(&mut self, v: u32) -> std::io::Result<()> {
        self.w.write_all(&v.to_le_bytes())
    }

    fn string(&mut self, s: &str) -> std::io::Result<()> {
        self.u32(s.len() as u32)?;
        self.w.write_all(s.as_bytes())
    }

    fn tensor(&mut self, name: &str, shape: &[usize], data: &[f32]) -> std::io::Result<()> {
        self.string(name)?;
        self.u32(shape.len() as u32)?;
        for &dim in shape {
            self.u32(dim as u32)?;
        }
        for &x in data {
            self.w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }
}

struct BinReader<'p, R: Read> {
    r: R,
    path: &'p Path,
}

impl<'p, R: Read> BinReader<'p, R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>, IoError> {
        let mut buf = vec![0u8; n];
        self.r.read_exact(&mut buf).map_err(file_err(self.path))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32, IoError> {
        let b = self.bytes(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self) -> Result<String, IoError> {
        let len = self.u32()?;
        if len > MAX_NAME_LEN {
            return Err(self.bad(format!("string length {len} is not plausible")));
        }
        String::from_utf8(self.bytes(len as usize)?)
            .map_err(|_| self.bad("string field is not UTF-8"))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, IoError> {
        let raw = self.bytes(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    /// Reads one tensor record: (name, dims, data).
    fn tensor(&mut self) -> Result<(String, Vec<usize>, Vec<f32>), IoError> {
        let name = self.string()?;
        let rank = self.u32()?;
        if rank > 8 {
            return Err(self.bad(format!("tensor {name:?} claims rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank as usize);
        let mut elems: u64 = 1;
        for _ in 0..rank {
            let d = self.u32()? as usize;
            elems = elems.saturating_mul(d as u64);
            dims.push(d);
        }
        if elems > MAX_TENSOR_ELEMS {
            return Err(self.bad(format!("tensor {name:?} claims {elems} elements")));
        }
        let data = self.f32s(elems as usize)?;
        Ok((name, dims, data))
    }

    fn bad(&self, reason: impl Into<String>) -> IoError {
        format_err(self.path, reason)
    }
}

fn open_container<'p>(
    path: &'p Path,
    expect_kind: u32,
) -> Result<BinReader<'p, BufReader<fs::File>>, IoError> {
    let f = fs::File::open(path).map_err(file_err(path))?;
    let mut r = BinReader { r: BufReader::new(f), path };
    let magic = r.bytes(4)?;
    if magic != MAGIC {
        return Err(r.bad("bad magic; not a parameter file"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(r.bad(format!(
            "format version {version} (this build reads {FORMAT_VERSION})"
        )));
    }
    let kind = r.u32()?;
    if kind != expect_kind {
        let what = |k| match k {
            KIND_MODEL => "a base model",
            KIND_HEAD => "a head",
            _ => "an unknown kind",
        };
        return Err(r.bad(format!(
            "file holds {}, expected {}",
            what(kind),
            what(expect_kind)
        )));
    }
    Ok(r)
}

/// Fills `slices` (canonical parameter order) from the reader's tensor
/// records, insisting that names and shapes match exactly. Strict order
/// keeps the loader honest: a reordered or renamed tensor is corruption,
/// not something to paper over.
fn read_tensors_into(
    r: &mut BinReader<'_, BufReader<fs::File>>,
    expected: &[(String, Vec<usize>, usize)],
    slices: Vec<(&mut [f32], bool)>,
) -> Result<(), IoError> {
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(r.bad(format!(
            "file holds {count} tensors, expected {}",
            expected.len()
        )));
    }
    debug_assert_eq!(expected.len(), slices.len());
    for ((name, dims, len), (slice, _decay)) in expected.iter().zip(slices) {
        let (got_name, got_dims, data) = r.tensor()?;
        if got_name != *name {
            return Err(r.bad(format!("tensor {got_name:?} where {name:?} belongs")));
        }
        if got_dims != *dims {
            return Err(r.bad(format!(
                "tensor {name:?} has shape {got_dims:?}, expected {dims:?}"
            )));
        }
        debug_assert_eq!(data.len(), *len);
        slice.copy_from_slice(&data);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Base model files

pub fn save_model(model: &BaseModel, path: &Path) -> Result<(), IoError> {
    let f = fs::File::create(path).map_err(file_err(path))?;
    let mut w = BinWriter { w: BufWriter::new(f) };
    let mut run = || -> std::io::Result<()> {
        w.w.write_all(&MAGIC)?;
        w.u32(FORMAT_VERSION)?;
        w.u32(KIND_MODEL)?;
        let c = &model.config;
        for v in [
            c.d_model,
            c.n_layers,
            c.n_heads,
            c.context_len,
            c.vocab_size,
            c.seed as usize,
        ] {
            w.u32(v as u32)?;
        }
        let mut count = 0u32;
        model.visit_named(&mut |_, _, _| count += 1);
        w.u32(count)?;
        let mut err = None;
        model.visit_named(&mut |name, shape, data| {
            if err.is_none() {
                err = w.tensor(name, shape, data).err();
            }
        });
        match err {
            Some(e) => Err(e),
            None => w.w.flush(),
        }
    };
    run().map_err(file_err(path))
}

pub fn load_model(path: &Path) -> Result<BaseModel, IoError> {
    let mut r = open_container(path, KIND_MODEL)?;
    let fields: Vec<u32> = (0..6).map(|_| r.u32()).collect::<Result<_, _>>()?;
    let config = ModelConfig {
        d_model: fields[0] as usize,
        n_layers: fields[1] as usize,
        n_heads: fields[2] as usize,
        context_len: fields[3] as usize,
        vocab_size: fields[4] as usize,
        seed: fields[5],
    };
    let mut model = zeroed_model(config)?;
    let mut expected = Vec::new();
    model.visit_named(&mut |name, shape, data| {
        expected.push((name.to_string(), shape.to_vec(), data.len()));
    });
    read_tensors_into(&mut r, &expected, model.param_slices_mut())?;
    Ok(model)
}

// ---------------------------------------------------------------------------
// Head files

/// Saves the head together with the digest of the base model it was
/// fine-tuned against.
pub fn save_head(head: &MonoHead, base_digest: &str, path: &Path) -> Result<(), IoError> {
    let f = fs::File::create(path).map_err(file_err(path))?;
    let mut w = BinWriter { w: BufWriter::new(f) };
    let mut run = || -> std::io::Result<()> {
        w.w.write_all(&MAGIC)?;
        w.u32(FORMAT_VERSION)?;
        w.u32(KIND_HEAD)?;
        w.string(base_digest)?;
        for v in [head.d_model(), head.d_ffn(), head.n_words()] {
            w.u32(v as u32)?;
        }
        w.u32(4)?; // w1, w_gate, w2, g_mono
        let mut err = None;
        head.visit_named(|name, shape, data| {
            if err.is_none() {
                err = w.tensor(name, shape, data).err();
            }
        });
        match err {
            Some(e) => Err(e),
            None => w.w.flush(),
        }
    };
    run().map_err(file_err(path))
}

/// Loads a head and checks it against the base model it will extend. A
/// digest mismatch is a hard error, never a warning.
pub fn load_head(path: &Path, base: &BaseModel) -> Result<MonoHead, IoError> {
    let mut r = open_container(path, KIND_HEAD)?;
    let stored = r.string()?;
    let d_model = r.u32()? as usize;
    let d_ffn = r.u32()? as usize;
    let n_words = r.u32()? as usize;
    let actual = base.digest();
    if stored != actual {
        return Err(IoError::DigestMismatch {
            path: path.display().to_string(),
            stored,
            actual,
        });
    }
    let mut head = MonoHead {
        w1: ndarray::Array2::zeros((d_model, d_ffn)),
        w_gate: ndarray::Array2::zeros((d_model, d_ffn)),
        w2: ndarray::Array2::zeros((d_ffn, d_model)),
        g_mono: ndarray::Array2::zeros((d_model, n_words)),
    };
    let mut expected = Vec::new();
    head.visit_named(|name, shape, data| {
        expected.push((name.to_string(), shape.to_vec(), data.len()));
    });
    read_tensors_into(&mut r, &expected, head.param_slices_mut())?;
    Ok(head)
}

// ---------------------------------------------------------------------------
// Vocabulary files (JSON)

#[derive(serde::Serialize, serde::Deserialize)]
struct VocabularyFile {
    version: u32,
    /// Every entry's byte string, single bytes first. Redundant with the
    /// merges but kept so the file is inspectable without replaying them.
    entries: Vec<Vec<u8>>,
    merges: Vec<(TokenId, TokenId)>,
}

pub fn save_vocabulary(vocab: &Vocabulary, path: &Path) -> Result<(), IoError> {
    let entries = (0..vocab.size())
        .map(|i| vocab.entry(i as TokenId).expect("id below size").to_vec())
        .collect();
    let file = VocabularyFile {
        version: FORMAT_VERSION,
        entries,
        merges: vocab.merges().to_vec(),
    };
    let text = serde_json::to_string(&file).expect("vocabulary serializes");
    fs::write(path, text).map_err(file_err(path))
}

pub fn load_vocabulary(path: &Path) -> Result<Vocabulary, IoError> {
    let text = fs::read_to_string(path).map_err(file_err(path))?;
    let file: VocabularyFile =
        serde_json::from_str(&text).map_err(|e| format_err(path, e.to_string()))?;
    if file.version != FORMAT_VERSION {
        return Err(format_err(path, format!("vocabulary version {}", file.version)));
    }
    let vocab = Vocabulary::from_merges(file.merges)?;
    if vocab.size() != file.entries.len() {
        return Err(format_err(
            path,
            format!(
                "merges produce {} entries but the file lists {}",
                vocab.size(),
                file.entries.len()
            ),
        ));
    }
    for (i, entry) in file.entries.iter().enumerate() {
        if vocab.entry(i as TokenId).expect("id below size") != &entry[..] {
            return Err(format_err(
                path,
                format!("entry {i} disagrees with what its merges produce"),
            ));
        }
    }
    Ok(vocab)
}

#[derive(serde::Serialize, serde::Deserialize)]
struct MonoWordFile {
    surface: String,
    expansion: Vec<TokenId>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct MonoVocabularyFile {
    words: Vec<MonoWordFile>,
    unicode_ranges: Vec<(u32, u32)>,
}

pub fn save_mono_vocabulary(mono: &MonoVocabulary, path: &Path) -> Result<(), IoError> {
    let file = MonoVocabularyFile {
        words: mono
            .words()
            .iter()
            .map(|w| MonoWordFile {
                surface: w.surface.clone(),
                expansion: w.expansion.clone(),
            })
            .collect(),
        unicode_ranges: mono.ranges().to_vec(),
    };
    let text = serde_json::to_string_pretty(&file).expect("mono vocabulary serializes");
    fs::write(path, text).map_err(file_err(path))
}

/// Loads a mono vocabulary and re-checks every expansion against the
/// vocabulary it will be used with; stale expansions are corruption.
pub fn load_mono_vocabulary(path: &Path, vocab: &Vocabulary) -> Result<MonoVocabulary, IoError> {
    let text = fs::read_to_string(path).map_err(file_err(path))?;
    let file: MonoVocabularyFile =
        serde_json::from_str(&text).map_err(|e| format_err(path, e.to_string()))?;
    let words = file
        .words
        .into_iter()
        .map(|w| MonoWord { surface: w.surface, expansion: w.expansion })
        .collect();
    let mono = MonoVocabulary::new(words, file.unicode_ranges)?;
    mono.validate_against(vocab)?;
    Ok(mono)
}

// ---------------------------------------------------------------------------
// Small text formats

/// Shortlist files restrict sampling to an allow-list: one token per line,
/// either a numeric id or a surface string that must encode to exactly one
/// token. Blank lines and `#` comments are skipped.
pub fn load_shortlist(path: &Path, vocab: &Vocabulary) -> Result<HashSet<TokenId>, IoError> {
    let text = fs::read_to_string(path).map_err(file_err(path))?;
    parse_shortlist(&text, vocab).map_err(|reason| format_err(path, reason))
}

fn parse_shortlist(text: &str, vocab: &Vocabulary) -> Result<HashSet<TokenId>, String> {
    let mut ids = HashSet::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line.bytes().all(|b| b.is_ascii_digit()) {
            let id: TokenId = line
                .parse()
                .map_err(|_| format!("line {}: id {line:?} overflows", lineno + 1))?;
            if id as usize >= vocab.size() {
                return Err(format!(
                    "line {}: id {id} out of range (vocab size {})",
                    lineno + 1,
                    vocab.size()
                ));
            }
            ids.insert(id);
        } else {
            let encoded = vocab.encode(line.as_bytes());
            if encoded.len() != 1 {
                return Err(format!(
                    "line {}: surface {line:?} encodes to {} tokens, not one",
                    lineno + 1,
                    encoded.len()
                ));
            }
            ids.insert(encoded[0]);
        }
    }
    Ok(ids)
}

pub fn write_train_log_csv(steps: &[TrainStep], path: &Path) -> Result<(), IoError> {
    let mut out = String::from("step,loss,lr\n");
    for s in steps {
        out.push_str(&format!("{},{},{}\n", s.step, s.loss, s.lr));
    }
    fs::write(path, out).map_err(file_err(path))
}

/// Hex SHA-256 of a file's bytes; the identity the pipeline manifest
/// records for every artifact.
pub fn file_digest(path: &Path) -> Result<String, IoError> {
    let mut f = fs::File::open(path).map_err(file_err(path))?;
    let mut hasher = Sha256::new();
    std::io::copy(&mut f, &mut hasher).map_err(file_err(path))?;
    Ok(hex(&hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::{init_mono_head, HeadInit};
    use crate::model::init_model;
    use crate::tokenizer::{build_mono_vocab, learn_bpe};

    fn tiny_model(vocab_size: usize) -> BaseModel {
        init_model(ModelConfig {
            d_model: 16,
            n_layers: 2,
            n_heads: 2,
            context_len: 32,
            vocab_size,
            seed: 7,
        })
        .unwrap()
    }

    fn sample_vocab() -> Vocabulary {
        let corpus = b"abc abc abc de de de abc de ".repeat(4);
        learn_bpe(&corpus, 3).unwrap()
    }

    /// One merge only, so "abc"/"de" keep multi-token expansions but the
    /// expansion of "abc" still contains a merge id.
    fn merged_vocab() -> Vocabulary {
        let corpus = b"abc abc abc de de de abc de ".repeat(4);
        learn_bpe(&corpus, 1).unwrap()
    }

    #[test]
    fn model_round_trip_preserves_the_digest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("base.mumo");
        let model = tiny_model(260);
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.config, model.config);
        assert_eq!(loaded.digest(), model.digest());
    }

    #[test]
    fn head_round_trip_preserves_the_digest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("head.mumo");
        let vocab = merged_vocab();
        let model = tiny_model(vocab.size());
        let mono = build_mono_vocab(
            &["abc".to_string(), "de".to_string()],
            &vocab,
            &[(0x20, 0x7e)],
        )
        .unwrap();
        let head = init_mono_head(HeadInit::Multi, &model, &mono, 11).unwrap();
        save_head(&head, &model.digest(), &path).unwrap();
        let loaded = load_head(&path, &model).unwrap();
        assert_eq!(loaded.digest(), head.digest());
    }

    #[test]
    fn head_refuses_a_base_model_with_a_different_digest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("head.mumo");
        let vocab = merged_vocab();
        let model = tiny_model(vocab.size());
        let mono = build_mono_vocab(&["abc".to_string()], &vocab, &[(0x20, 0x7e)]).unwrap();
        let head = init_mono_head(HeadInit::Multi, &model, &mono, 11).unwrap();
        save_head(&head, &model.digest(), &path).unwrap();
        let mut other = tiny_model(vocab.size());
        other.tok_emb[[0, 0]] += 1.0;
        let err = load_head(&path, &other).unwrap_err();
        assert!(matches!(err, IoError::DigestMismatch { .. }), "{err}");
    }

    #[test]
    fn model_and_head_files_are_distinguished_by_kind() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("base.mumo");
        let model = tiny_model(260);
        save_model(&model, &path).unwrap();
        let err = load_head(&path, &model).unwrap_err();
        assert!(
            err.to_string().contains("holds a base model"),
            "unexpected error: {err}"
        );
    }

    #[test]
    fn truncated_and_garbage_files_fail_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("base.mumo");
        let model = tiny_model(260);
        save_model(&model, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load_model(&path).is_err());
        fs::write(&path, b"not a parameter file at all").unwrap();
        let err = load_model(&path).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
    }

    #[test]
    fn a_flipped_parameter_byte_changes_the_loaded_digest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("base.mumo");
        let model = tiny_model(260);
        save_model(&model, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let n = bytes.len();
        bytes[n - 3] ^= 0x40; // inside the last tensor's f32 data
        fs::write(&path, &bytes).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_ne!(loaded.digest(), model.digest());
    }

    #[test]
    fn vocabulary_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.json");
        let vocab = sample_vocab();
        save_vocabulary(&vocab, &path).unwrap();
        let loaded = load_vocabulary(&path).unwrap();
        assert_eq!(loaded.size(), vocab.size());
        assert_eq!(loaded.merges(), vocab.merges());
        let text = b"abc de abc";
        assert_eq!(loaded.encode(text), vocab.encode(text));
    }

    #[test]
    fn vocabulary_with_inconsistent_entries_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.json");
        save_vocabulary(&sample_vocab(), &path).unwrap();
        let mut file: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        file["entries"][257] = serde_json::json!([1, 2, 3]);
        fs::write(&path, file.to_string()).unwrap();
        let err = load_vocabulary(&path).unwrap_err();
        assert!(err.to_string().contains("disagrees"), "{err}");
    }

    #[test]
    fn mono_vocabulary_round_trips_and_revalidates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mono.json");
        let vocab = merged_vocab();
        let mono = build_mono_vocab(
            &["abc".to_string(), "de".to_string()],
            &vocab,
            &[(0x20, 0x7e)],
        )
        .unwrap();
        save_mono_vocabulary(&mono, &path).unwrap();
        let loaded = load_mono_vocabulary(&path, &vocab).unwrap();
        assert_eq!(loaded.words(), mono.words());
        assert_eq!(loaded.ranges(), mono.ranges());

        // The same file against a vocabulary without the merge must fail:
        // the stored expansions refer to an id that no longer exists.
        let other = Vocabulary::byte_base();
        assert!(load_mono_vocabulary(&path, &other).is_err());
    }

    #[test]
    fn shortlist_accepts_ids_and_single_token_surfaces() {
        let vocab = sample_vocab();
        let abc = vocab.encode(b"abc");
        assert_eq!(abc.len(), 1, "test premise: \"abc\" is one token");
        let text = "# allow list\n65\n\nabc\n";
        let ids = parse_shortlist(text, &vocab).unwrap();
        assert_eq!(ids, HashSet::from([65, abc[0]]));

        assert!(parse_shortlist("99999", &vocab).unwrap_err().contains("out of range"));
        let err = parse_shortlist("abcde", &vocab).unwrap_err();
        assert!(err.contains("not one"), "{err}");
    }

    #[test]
    fn train_log_is_plain_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let steps = vec![
            TrainStep { step: 0, loss: 5.5, lr: 0.001 },
            TrainStep { step: 1, loss: 5.25, lr: 0.0005 },
        ];
        write_train_log_csv(&steps, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, "step,loss,lr\n0,5.5,0.001\n1,5.25,0.0005\n");
    }

    #[test]
    fn file_digest_tracks_content_not_name() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.bin");
        let b = dir.path().join("b.bin");
        fs::write(&a, b"same bytes").unwrap();
        fs::write(&b, b"same bytes").unwrap();
        assert_eq!(file_digest(&a).unwrap(), file_digest(&b).unwrap());
        fs::write(&b, b"other bytes").unwrap();
        assert_ne!(file_digest(&a).unwrap(), file_digest(&b).unwrap());
    }
}
