//! Stage runner with a content-addressed manifest. Every stage records a
//! digest of what it read (config section plus input files) and of what it
//! wrote; a stage is skipped when both still match. A stage also reruns
//! when anything before it ran in this invocation: rebuilt inputs count as
//! new even if their bytes happen to come out identical.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use mumo_core::decoder::expand_vocab_baseline;
use mumo_core::head::{build_training_units, finetune_head, init_mono_head, MonoHead};
use mumo_core::io as artifacts;
use mumo_core::io::IoError;
use mumo_core::model::{init_model, train_base, BaseModel};
use mumo_core::tokenizer::{
    build_mono_vocab, learn_bpe, parse_word_list, MonoVocabulary, Vocabulary,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bench::{run_bench, BenchArtifacts, ExpandedArtifacts};
use crate::config::Config;
use crate::report::{emit, ReportFormat};
use crate::synth::synth_corpus;
use crate::CliError;

/// Where every artifact lives under the output directory.
#[derive(Debug, Clone)]
pub struct Paths {
    pub out_dir: PathBuf,
}

impl Paths {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self { out_dir: out_dir.into() }
    }

    fn file(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn train_text(&self) -> PathBuf {
        self.file("train.txt")
    }
    pub fn heldout_text(&self) -> PathBuf {
        self.file("heldout.txt")
    }
    pub fn words(&self) -> PathBuf {
        self.file("words.txt")
    }
    pub fn vocab(&self) -> PathBuf {
        self.file("vocab.json")
    }
    pub fn base_model(&self) -> PathBuf {
        self.file("base.mumo")
    }
    pub fn train_log(&self) -> PathBuf {
        self.file("train_log.csv")
    }
    pub fn mono(&self) -> PathBuf {
        self.file("mono.json")
    }
    pub fn head_init(&self) -> PathBuf {
        self.file("head_init.mumo")
    }
    pub fn head(&self) -> PathBuf {
        self.file("head.mumo")
    }
    pub fn finetune_log(&self) -> PathBuf {
        self.file("finetune_log.csv")
    }
    pub fn expanded_model(&self) -> PathBuf {
        self.file("expand.mumo")
    }
    pub fn expand_log(&self) -> PathBuf {
        self.file("expand_log.csv")
    }
    pub fn report(&self, format: ReportFormat) -> PathBuf {
        self.file(&format!("report.{}", format.extension()))
    }
    pub fn manifest(&self) -> PathBuf {
        self.file("manifest.json")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub input_digest: String,
    pub output_digest: String,
    /// unix seconds when the stage finished
    pub timestamp: u64,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: BTreeMap<String, StageRecord>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("manifest {}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self)
            .expect("digest strings and integers serialize");
        text.push('\n');
        fs::write(path, text)
            .map_err(|e| CliError::Config(format!("manifest {}: {e}", path.display())))
    }
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Routes digest mismatches to their own exit code; everything else is a
/// failure of the named stage.
fn stage_io(stage: &'static str) -> impl Fn(IoError) -> CliError {
    move |e| match e {
        IoError::DigestMismatch { .. } => CliError::Artifact(e.to_string()),
        other => CliError::Stage { stage, message: other.to_string() },
    }
}

fn read_text(stage: &'static str, path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Stage {
        stage,
        message: format!("{}: {e}", path.display()),
    })
}

fn write_text(stage: &'static str, path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Stage {
        stage,
        message: format!("{}: {e}", path.display()),
    })
}

fn section_toml<T: Serialize>(section: &T) -> String {
    toml::to_string(section).expect("config sections serialize")
}

struct StageDef {
    name: &'static str,
    /// the config this stage's behavior depends on
    fingerprint: fn(&Config) -> String,
    inputs: fn(&Paths, &Config) -> Vec<PathBuf>,
    outputs: fn(&Paths) -> Vec<PathBuf>,
    run: fn(&Config, &Paths, usize) -> Result<(), CliError>,
}

fn wants_expand(config: &Config) -> bool {
    config.bench.modes.iter().any(|m| m == "expand_vocab")
}

fn stage_defs(config: &Config) -> Vec<StageDef> {
    let mut defs = vec![
        StageDef {
            name: "synth",
            fingerprint: |c| section_toml(&c.synth),
            inputs: |_, _| vec![],
            outputs: |p| vec![p.train_text(), p.heldout_text(), p.words()],
            run: stage_synth,
        },
        StageDef {
            name: "learn_bpe",
            fingerprint: |c| section_toml(&c.tokenizer),
            inputs: |p, _| vec![p.train_text()],
            outputs: |p| vec![p.vocab()],
            run: stage_learn_bpe,
        },
        StageDef {
            name: "train_base",
            fingerprint: |c| section_toml(&c.model) + &section_toml(&c.train),
            inputs: |p, _| vec![p.train_text(), p.vocab()],
            outputs: |p| vec![p.base_model(), p.train_log()],
            run: stage_train_base,
        },
        StageDef {
            name: "build_mono_vocab",
            fingerprint: |c| section_toml(&c.mono),
            inputs: |p, _| vec![p.words(), p.vocab()],
            outputs: |p| vec![p.mono()],
            run: stage_build_mono_vocab,
        },
        StageDef {
            name: "init_head",
            fingerprint: |c| section_toml(&c.head),
            inputs: |p, _| vec![p.base_model(), p.mono(), p.vocab()],
            outputs: |p| vec![p.head_init()],
            run: stage_init_head,
        },
        StageDef {
            name: "finetune_head",
            fingerprint: |c| section_toml(&c.finetune),
            inputs: |p, _| vec![p.train_text(), p.vocab(), p.mono(), p.base_model(), p.head_init()],
            outputs: |p| vec![p.head(), p.finetune_log()],
            run: stage_finetune_head,
        },
    ];
    if wants_expand(config) {
        defs.push(StageDef {
            name: "expand",
            fingerprint: |c| section_toml(&c.expand),
            inputs: |p, _| vec![p.train_text(), p.vocab(), p.mono(), p.base_model()],
            outputs: |p| vec![p.expanded_model(), p.expand_log()],
            run: stage_expand,
        });
    }
    defs.push(StageDef {
        name: "bench",
        fingerprint: |c| section_toml(&c.bench) + &section_toml(&c.decode),
        inputs: |p, c| {
            let mut v = vec![p.heldout_text(), p.vocab(), p.mono(), p.base_model(), p.head()];
            if wants_expand(c) {
                v.push(p.expanded_model());
            }
            if let Some(f) = &c.bench.shortlist_file {
                v.push(PathBuf::from(f));
            }
            v
        },
        outputs: |p| {
            vec![
                p.report(ReportFormat::Csv),
                p.report(ReportFormat::Json),
                p.report(ReportFormat::Markdown),
            ]
        },
        run: stage_bench,
    });
    defs
}

fn input_digest(def: &StageDef, config: &Config, paths: &Paths) -> Result<String, CliError> {
    let mut h = Sha256::new();
    h.update((def.fingerprint)(config).as_bytes());
    for path in (def.inputs)(paths, config) {
        let d = artifacts::file_digest(&path).map_err(|_| CliError::Stage {
            stage: def.name,
            message: format!("missing input file {}", path.display()),
        })?;
        h.update(path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
        h.update([0]);
        h.update(d.as_bytes());
    }
    Ok(mumo_core::model::hex(&h.finalize()))
}

/// None when any output file is missing.
fn output_digest(outputs: &[PathBuf]) -> Option<String> {
    let mut h = Sha256::new();
    for path in outputs {
        let d = artifacts::file_digest(path).ok()?;
        h.update(path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
        h.update([0]);
        h.update(d.as_bytes());
    }
    Some(mumo_core::model::hex(&h.finalize()))
}

/// Runs every stage in order, skipping the up-to-date prefix. Returns each
/// stage's name with whether it ran.
pub fn run_pipeline(
    config: &Config,
    paths: &Paths,
    threads: usize,
) -> Result<Vec<(String, bool)>, CliError> {
    fs::create_dir_all(&paths.out_dir).map_err(|e| {
        CliError::Config(format!("output directory {}: {e}", paths.out_dir.display()))
    })?;
    let mut manifest = Manifest::load(&paths.manifest())?;
    let mut upstream_ran = false;
    let mut statuses = Vec::new();
    for def in stage_defs(config) {
        let input = input_digest(&def, config, paths)?;
        let outputs = (def.outputs)(paths);
        let fresh = !upstream_ran
            && manifest.stages.get(def.name).is_some_and(|rec| {
                rec.input_digest == input
                    && output_digest(&outputs).as_deref() == Some(rec.output_digest.as_str())
            });
        if fresh {
            log::info!("{}: up to date, skipped", def.name);
            statuses.push((def.name.to_string(), false));
            continue;
        }
        log::info!("{}: running", def.name);
        (def.run)(config, paths, threads)?;
        let output = output_digest(&outputs).ok_or_else(|| CliError::Stage {
            stage: def.name,
            message: "stage finished without writing all of its outputs".into(),
        })?;
        manifest.stages.insert(
            def.name.to_string(),
            StageRecord { input_digest: input, output_digest: output, timestamp: now_unix() },
        );
        manifest.save(&paths.manifest())?;
        upstream_ran = true;
        statuses.push((def.name.to_string(), true));
    }
    Ok(statuses)
}

pub fn stage_synth(config: &Config, paths: &Paths, _threads: usize) -> Result<(), CliError> {
    let out = synth_corpus(&config.synth);
    write_text("synth", &paths.train_text(), &out.train)?;
    write_text("synth", &paths.heldout_text(), &out.heldout)?;
    let mut words = out.words.join("\n");
    words.push('\n');
    write_text("synth", &paths.words(), &words)?;
    log::info!(
        "synth: {} train bytes, {} heldout bytes, {} words",
        out.train.len(),
        out.heldout.len(),
        out.words.len()
    );
    Ok(())
}

pub fn stage_learn_bpe(config: &Config, paths: &Paths, _threads: usize) -> Result<(), CliError> {
    let train = read_text("learn_bpe", &paths.train_text())?;
    let vocab = learn_bpe(train.as_bytes(), config.tokenizer.merges)
        .map_err(CliError::stage("learn_bpe"))?;
    artifacts::save_vocabulary(&vocab, &paths.vocab()).map_err(stage_io("learn_bpe"))?;
    log::info!("learn_bpe: {} entries", vocab.size());
    Ok(())
}

fn load_vocab_checked(stage: &'static str, config: &Config, paths: &Paths) -> Result<Vocabulary, CliError> {
    let vocab = artifacts::load_vocabulary(&paths.vocab()).map_err(stage_io(stage))?;
    let expect = config.model_config().vocab_size;
    if vocab.size() != expect {
        return Err(CliError::Stage {
            stage,
            message: format!(
                "vocabulary has {} entries but the config implies {}; \
                 was tokenizer.merges changed after learn_bpe?",
                vocab.size(),
                expect
            ),
        });
    }
    Ok(vocab)
}

pub fn stage_train_base(config: &Config, paths: &Paths, _threads: usize) -> Result<(), CliError> {
    let vocab = load_vocab_checked("train_base", config, paths)?;
    let train = read_text("train_base", &paths.train_text())?;
    let tokens = vocab.encode(train.as_bytes());
    let mut model =
        init_model(config.model_config()).map_err(CliError::stage("train_base"))?;
    let log = train_base(&mut model, &tokens, &config.train_hyper())
        .map_err(CliError::stage("train_base"))?;
    artifacts::save_model(&model, &paths.base_model()).map_err(stage_io("train_base"))?;
    artifacts::write_train_log_csv(&log.steps, &paths.train_log())
        .map_err(stage_io("train_base"))?;
    log::info!(
        "train_base: probe loss {:.4} -> {:.4} over {} steps",
        log.probe_loss_start,
        log.probe_loss_end,
        log.steps.len()
    );
    Ok(())
}

pub fn stage_build_mono_vocab(
    config: &Config,
    paths: &Paths,
    _threads: usize,
) -> Result<(), CliError> {
    let vocab = load_vocab_checked("build_mono_vocab", config, paths)?;
    let words = parse_word_list(&read_text("build_mono_vocab", &paths.words())?);
    let mono = build_mono_vocab(&words, &vocab, &config.mono.unicode_ranges)
        .map_err(CliError::stage("build_mono_vocab"))?;
    artifacts::save_mono_vocabulary(&mono, &paths.mono()).map_err(stage_io("build_mono_vocab"))?;
    let mean: f64 = mono.words().iter().map(|w| w.expansion.len() as f64).sum::<f64>()
        / mono.len().max(1) as f64;
    log::info!("build_mono_vocab: {} words, mean expansion {:.2} tokens", mono.len(), mean);
    Ok(())
}

fn load_model_mono(
    stage: &'static str,
    config: &Config,
    paths: &Paths,
) -> Result<(BaseModel, Vocabulary, MonoVocabulary), CliError> {
    let vocab = load_vocab_checked(stage, config, paths)?;
    let model = artifacts::load_model(&paths.base_model()).map_err(stage_io(stage))?;
    let mono = artifacts::load_mono_vocabulary(&paths.mono(), &vocab).map_err(stage_io(stage))?;
    Ok((model, vocab, mono))
}

pub fn stage_init_head(config: &Config, paths: &Paths, _threads: usize) -> Result<(), CliError> {
    let (model, _vocab, mono) = load_model_mono("init_head", config, paths)?;
    let head = init_mono_head(config.head.init, &model, &mono, config.head.seed)
        .map_err(CliError::stage("init_head"))?;
    artifacts::save_head(&head, &model.digest(), &paths.head_init())
        .map_err(stage_io("init_head"))?;
    Ok(())
}

pub fn stage_finetune_head(config: &Config, paths: &Paths, _threads: usize) -> Result<(), CliError> {
    let (model, vocab, mono) = load_model_mono("finetune_head", config, paths)?;
    let mut head =
        artifacts::load_head(&paths.head_init(), &model).map_err(stage_io("finetune_head"))?;
    let train = read_text("finetune_head", &paths.train_text())?;
    let texts: Vec<&str> = train.lines().collect();
    let units = build_training_units(&texts, &mono, &vocab, model.config.context_len);
    let log = finetune_head(&model, &mut head, &units, &config.finetune_hyper())
        .map_err(CliError::stage("finetune_head"))?;
    assert_eq!(
        log.base_digest_before, log.base_digest_after,
        "head fine-tuning must leave the base model untouched"
    );
    artifacts::save_head(&head, &model.digest(), &paths.head()).map_err(stage_io("finetune_head"))?;
    artifacts::write_train_log_csv(&log.steps, &paths.finetune_log())
        .map_err(stage_io("finetune_head"))?;
    log::info!(
        "finetune_head: joint CE {:.4} -> {:.4} over {} units",
        log.probe_ce_start,
        log.probe_ce_end,
        units.len()
    );
    Ok(())
}

pub fn stage_expand(config: &Config, paths: &Paths, _threads: usize) -> Result<(), CliError> {
    let (model, vocab, mono) = load_model_mono("expand", config, paths)?;
    let train = read_text("expand", &paths.train_text())?;
    let (ext, log) =
        expand_vocab_baseline(&model, &mono, &vocab, train.as_bytes(), &config.expand_hyper())
            .map_err(CliError::stage("expand"))?;
    artifacts::save_model(&ext, &paths.expanded_model()).map_err(stage_io("expand"))?;
    artifacts::write_train_log_csv(&log.steps, &paths.expand_log()).map_err(stage_io("expand"))?;
    log::info!(
        "expand: probe loss {:.4} -> {:.4}, vocabulary {} -> {}",
        log.probe_loss_start,
        log.probe_loss_end,
        vocab.size(),
        ext.config.vocab_size
    );
    Ok(())
}

pub fn stage_bench(config: &Config, paths: &Paths, threads: usize) -> Result<(), CliError> {
    let (model, vocab, mono) = load_model_mono("bench", config, paths)?;
    let needs_head = config
        .bench
        .modes
        .iter()
        .any(|m| m == "mumo" || m == "mumo_no_verify");
    let head: Option<MonoHead> = if needs_head {
        Some(artifacts::load_head(&paths.head(), &model).map_err(stage_io("bench"))?)
    } else {
        None
    };
    let shortlist = match &config.bench.shortlist_file {
        Some(f) => Some(
            artifacts::load_shortlist(Path::new(f), &vocab).map_err(stage_io("bench"))?,
        ),
        None => None,
    };
    let expanded_pair: Option<(BaseModel, Vocabulary)> = if wants_expand(config) {
        let ext =
            artifacts::load_model(&paths.expanded_model()).map_err(stage_io("bench"))?;
        let surfaces: Vec<Vec<u8>> =
            mono.words().iter().map(|w| w.surface.as_bytes().to_vec()).collect();
        Some((ext, vocab.with_decode_entries(&surfaces)))
    } else {
        None
    };
    let heldout = read_text("bench", &paths.heldout_text())?;
    let arts = BenchArtifacts {
        model: &model,
        head: head.as_ref(),
        mono: &mono,
        vocab: &vocab,
        shortlist,
        expanded: expanded_pair
            .as_ref()
            .map(|(m, v)| ExpandedArtifacts { model: m, vocab: v }),
    };
    let (report, _) = run_bench(&arts, config, &heldout, threads)?;
    for format in [ReportFormat::Csv, ReportFormat::Json, ReportFormat::Markdown] {
        write_text("bench", &paths.report(format), &emit(&report, format)?)?;
    }
    for row in &report.rows {
        log::info!(
            "bench: {} steps/byte {:.4}, speed up {:.3}",
            row.mode,
            row.steps_per_byte,
            row.speed_up
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let mut m = Manifest::default();
        m.stages.insert(
            "synth".into(),
            StageRecord {
                input_digest: "aa".into(),
                output_digest: "bb".into(),
                timestamp: 1700000000,
            },
        );
        m.save(&path).unwrap();
        let back = Manifest::load(&path).unwrap();
        assert_eq!(back.stages, m.stages);
    }

    #[test]
    fn missing_manifest_is_an_empty_one() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest::load(&dir.path().join("manifest.json")).unwrap();
        assert!(m.stages.is_empty());
    }

    #[test]
    fn output_digest_is_none_while_any_file_is_missing() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.txt");
        let b = dir.path().join("b.txt");
        fs::write(&a, "alpha").unwrap();
        assert!(output_digest(&[a.clone(), b.clone()]).is_none());
        fs::write(&b, "beta").unwrap();
        let both = output_digest(&[a.clone(), b.clone()]).unwrap();
        assert!(output_digest(&[a, b]).unwrap() == both);
    }

    #[test]
    fn input_digest_tracks_config_and_file_content() {
        let dir = tempfile::tempdir().unwrap();
        let paths = Paths::new(dir.path());
        fs::create_dir_all(&paths.out_dir).unwrap();
        fs::write(paths.train_text(), "corpus one").unwrap();
        let defs = stage_defs(&Config::default());
        let learn = defs.iter().find(|d| d.name == "learn_bpe").unwrap();

        let config = Config::default();
        let d1 = input_digest(learn, &config, &paths).unwrap();
        let d2 = input_digest(learn, &config, &paths).unwrap();
        assert_eq!(d1, d2);

        fs::write(paths.train_text(), "corpus two").unwrap();
        let d3 = input_digest(learn, &config, &paths).unwrap();
        assert_ne!(d1, d3);

        let mut other = Config::default();
        other.tokenizer.merges += 1;
        let d4 = input_digest(learn, &other, &paths).unwrap();
        assert_ne!(d3, d4);
    }

    #[test]
    fn expand_stage_appears_only_when_the_mode_asks_for_it() {
        let with = Config::default();
        assert!(stage_defs(&with).iter().any(|d| d.name == "expand"));
        let mut without = Config::default();
        without.bench.modes.retain(|m| m != "expand_vocab");
        assert!(!stage_defs(&without).iter().any(|d| d.name == "expand"));
    }
}
