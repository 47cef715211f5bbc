//! Benchmark driver: run every requested decoding mode over one shared
//! prompt set with the same per-prompt seeds, score each generation under
//! the frozen base model, and aggregate the traces into a report. Prompts
//! run in parallel when more than one thread is allowed; counters are
//! per-prompt, so the thread count never changes the numbers.

use std::collections::HashSet;

use mumo_core::decoder::{generate, DecodeMode, DecodeTrace};
use mumo_core::head::MonoHead;
use mumo_core::model::{score_continuation, BaseModel};
use mumo_core::tokenizer::{MonoVocabulary, Vocabulary};
use mumo_core::TokenId;
use rayon::prelude::*;

use crate::config::Config;
use crate::report::{BenchReport, BenchRow};
use crate::CliError;

/// Prompt prefixes paired with the held-out continuation each one had in
/// the source text; the continuation is the reference for LCS F1.
#[derive(Debug, Clone)]
pub struct PromptSet {
    pub prompts: Vec<String>,
    pub references: Vec<String>,
}

/// Slice prompts out of held-out paragraphs at character boundaries: the
/// first `prompt_chars` characters prompt the model, the next
/// `reference_chars` are what the source text actually said.
pub fn build_prompt_set(heldout: &str, config: &Config) -> Result<PromptSet, CliError> {
    let b = &config.bench;
    let mut prompts = Vec::with_capacity(b.prompts);
    let mut references = Vec::with_capacity(b.prompts);
    for line in heldout.lines() {
        if prompts.len() == b.prompts {
            break;
        }
        let chars: Vec<char> = line.chars().collect();
        if chars.len() < b.prompt_chars + b.reference_chars {
            continue;
        }
        prompts.push(chars[..b.prompt_chars].iter().collect());
        references.push(chars[b.prompt_chars..b.prompt_chars + b.reference_chars].iter().collect());
    }
    if prompts.len() < b.prompts {
        return Err(CliError::Stage {
            stage: "bench",
            message: format!(
                "held-out text only yields {} of the {} requested prompts; \
                 grow synth.heldout_bytes or shrink bench.prompts",
                prompts.len(),
                b.prompts
            ),
        });
    }
    Ok(PromptSet { prompts, references })
}

pub fn parse_mode(name: &str) -> Result<DecodeMode, CliError> {
    match name {
        "vanilla" => Ok(DecodeMode::Vanilla),
        "mumo" => Ok(DecodeMode::Mumo),
        "mumo_no_verify" => Ok(DecodeMode::MumoNoVerify),
        "shortlist" => Ok(DecodeMode::Shortlist),
        other => Err(CliError::Config(format!(
            "unknown decode mode {other:?}, expected vanilla, mumo, mumo_no_verify or \
             shortlist (the benchmark also accepts expand_vocab)"
        ))),
    }
}

/// Everything one generation run produced, plus its scores.
#[derive(Debug, Clone)]
pub struct PromptOutcome {
    pub text: String,
    pub steps: usize,
    pub tokens: usize,
    pub invocations: usize,
    pub positions: usize,
    pub bytes: usize,
    pub wall_secs: f64,
    /// mean negative log-probability per committed base token
    pub nll: f64,
    pub lcs_f1: f64,
}

#[derive(Debug, Clone)]
pub struct ModeOutcome {
    pub mode: String,
    pub per_prompt: Vec<PromptOutcome>,
}

pub struct BenchArtifacts<'a> {
    pub model: &'a BaseModel,
    pub head: Option<&'a MonoHead>,
    pub mono: &'a MonoVocabulary,
    pub vocab: &'a Vocabulary,
    pub shortlist: Option<HashSet<TokenId>>,
    /// the vocabulary-expansion baseline: a fully re-trained model whose
    /// vocabulary carries one decode-only id per word
    pub expanded: Option<ExpandedArtifacts<'a>>,
}

pub struct ExpandedArtifacts<'a> {
    pub model: &'a BaseModel,
    pub vocab: &'a Vocabulary,
}

fn stage_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Stage { stage: "bench", message: e.to_string() }
}

/// Mean NLL of the committed base tokens given the prompt, straight from
/// the base model. Committed ids after an end-of-text token are not text.
fn generation_nll(
    model: &BaseModel,
    prompt_ids: &[TokenId],
    trace: &DecodeTrace,
    eot: Option<TokenId>,
) -> Result<f64, CliError> {
    let mut ids: Vec<TokenId> = trace.steps.iter().flat_map(|s| s.committed.clone()).collect();
    if let Some(e) = eot {
        if let Some(pos) = ids.iter().position(|&id| id == e) {
            ids.truncate(pos);
        }
    }
    let room = model.config.context_len.saturating_sub(prompt_ids.len());
    ids.truncate(room);
    if ids.is_empty() {
        return Ok(0.0);
    }
    let lps = score_continuation(model, prompt_ids, &ids).map_err(stage_err)?;
    Ok(-(lps.iter().map(|&v| v as f64).sum::<f64>()) / lps.len() as f64)
}

/// Character-level longest common subsequence F1: recall against the
/// reference, precision against the generation.
pub fn lcs_f1(generated: &str, reference: &str) -> f64 {
    let a: Vec<char> = generated.chars().collect();
    let b: Vec<char> = reference.chars().collect();
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    // classic two-row DP over (a, b)
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for &ca in &a {
        for (j, &cb) in b.iter().enumerate() {
            cur[j + 1] = if ca == cb { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let lcs = prev[b.len()] as f64;
    let p = lcs / a.len() as f64;
    let r = lcs / b.len() as f64;
    if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) }
}

fn run_prompt(
    arts: &BenchArtifacts,
    config: &Config,
    mode: DecodeMode,
    index: usize,
    prompt: &str,
    reference: &str,
) -> Result<PromptOutcome, CliError> {
    let mut dc = config.decode_config(mode);
    dc.max_new_tokens = config.bench.new_tokens;
    dc.seed = config.decode.seed.wrapping_add(index as u64);
    if mode == DecodeMode::Shortlist {
        dc.shortlist = Some(match &arts.shortlist {
            Some(set) => set.clone(),
            // no allow-list on disk: the full vocabulary, which must
            // reproduce vanilla
            None => (0..arts.vocab.size() as TokenId).collect(),
        });
    }
    let head = match mode {
        DecodeMode::Mumo | DecodeMode::MumoNoVerify => match arts.head {
            Some(h) => Some(h),
            None => {
                return Err(CliError::Stage {
                    stage: "bench",
                    message: format!("mode {mode:?} needs a fine-tuned head artifact"),
                })
            }
        },
        _ => None,
    };
    let (bytes, trace) =
        generate(arts.model, head, arts.mono, arts.vocab, prompt, &dc).map_err(stage_err)?;
    let prompt_ids = arts.vocab.encode(prompt.as_bytes());
    let nll = generation_nll(arts.model, &prompt_ids, &trace, dc.eot)?;
    let text = String::from_utf8_lossy(&bytes).into_owned();
    Ok(PromptOutcome {
        lcs_f1: lcs_f1(&text, reference),
        text,
        steps: trace.step_count(),
        tokens: trace.tokens_emitted,
        invocations: trace.invocations,
        positions: trace.positions,
        bytes: bytes.len(),
        wall_secs: trace.wall_secs,
        nll,
    })
}

/// The expansion baseline decodes vanilla-style over the extended model;
/// its generations are still scored under the frozen base model, via the
/// base vocabulary, so the perplexity column stays comparable.
fn run_expand_prompt(
    arts: &BenchArtifacts,
    config: &Config,
    index: usize,
    prompt: &str,
    reference: &str,
) -> Result<PromptOutcome, CliError> {
    let ex = arts.expanded.as_ref().ok_or(CliError::Stage {
        stage: "bench",
        message: "mode expand_vocab needs the expanded model artifact".into(),
    })?;
    let mut dc = config.decode_config(DecodeMode::Vanilla);
    dc.max_new_tokens = config.bench.new_tokens;
    dc.seed = config.decode.seed.wrapping_add(index as u64);
    let empty = MonoVocabulary::empty();
    let (bytes, trace) = generate(ex.model, None, &empty, ex.vocab, prompt, &dc).map_err(stage_err)?;

    let prompt_ids = arts.vocab.encode(prompt.as_bytes());
    let mut gen_ids = arts.vocab.encode(&bytes);
    gen_ids.truncate(arts.model.config.context_len.saturating_sub(prompt_ids.len()));
    let nll = if gen_ids.is_empty() {
        0.0
    } else {
        let lps = score_continuation(arts.model, &prompt_ids, &gen_ids).map_err(stage_err)?;
        -(lps.iter().map(|&v| v as f64).sum::<f64>()) / lps.len() as f64
    };
    let text = String::from_utf8_lossy(&bytes).into_owned();
    Ok(PromptOutcome {
        lcs_f1: lcs_f1(&text, reference),
        text,
        steps: trace.step_count(),
        tokens: trace.tokens_emitted,
        invocations: trace.invocations,
        positions: trace.positions,
        bytes: bytes.len(),
        wall_secs: trace.wall_secs,
        nll,
    })
}

pub fn run_mode(
    arts: &BenchArtifacts,
    config: &Config,
    mode_name: &str,
    prompts: &PromptSet,
    threads: usize,
) -> Result<ModeOutcome, CliError> {
    let mode = if mode_name == "expand_vocab" { None } else { Some(parse_mode(mode_name)?) };
    let run = |i: usize| match mode {
        Some(m) => run_prompt(arts, config, m, i, &prompts.prompts[i], &prompts.references[i]),
        None => run_expand_prompt(arts, config, i, &prompts.prompts[i], &prompts.references[i]),
    };
    let per_prompt: Vec<PromptOutcome> = if threads == 1 {
        (0..prompts.prompts.len()).map(run).collect::<Result<_, _>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(stage_err)?;
        pool.install(|| {
            (0..prompts.prompts.len())
                .into_par_iter()
                .map(run)
                .collect::<Result<Vec<_>, CliError>>()
        })?
    };
    Ok(ModeOutcome { mode: mode_name.to_string(), per_prompt })
}

struct Totals {
    steps: u64,
    tokens: u64,
    invocations: u64,
    positions: u64,
    bytes: u64,
    wall_secs: f64,
    perplexity: f64,
    lcs_f1: f64,
}

fn totals(outcome: &ModeOutcome) -> Totals {
    let n = outcome.per_prompt.len().max(1) as f64;
    let sum = |f: fn(&PromptOutcome) -> usize| outcome.per_prompt.iter().map(f).sum::<usize>() as u64;
    Totals {
        steps: sum(|p| p.steps),
        tokens: sum(|p| p.tokens),
        invocations: sum(|p| p.invocations),
        positions: sum(|p| p.positions),
        bytes: sum(|p| p.bytes),
        wall_secs: outcome.per_prompt.iter().map(|p| p.wall_secs).sum(),
        perplexity: (outcome.per_prompt.iter().map(|p| p.nll).sum::<f64>() / n).exp(),
        lcs_f1: outcome.per_prompt.iter().map(|p| p.lcs_f1).sum::<f64>() / n,
    }
}

fn ratio(vanilla: f64, mode: f64) -> f64 {
    if mode > 0.0 { vanilla / mode } else { 0.0 }
}

/// Aggregate per-mode outcomes into report rows. The first outcome must be
/// the vanilla run; every speedup is measured against it.
pub fn assemble_report(outcomes: &[ModeOutcome], config: &Config) -> Result<BenchReport, CliError> {
    let vanilla = outcomes
        .iter()
        .find(|o| o.mode == "vanilla")
        .ok_or_else(|| CliError::Config("benchmark needs a vanilla row to compare against".into()))?;
    let base = totals(vanilla);
    let rows = outcomes
        .iter()
        .map(|o| {
            let t = totals(o);
            BenchRow {
                mode: o.mode.clone(),
                steps: t.steps,
                tokens: t.tokens,
                invocations: t.invocations,
                positions: t.positions,
                bytes: t.bytes,
                steps_per_byte: if t.bytes > 0 { t.steps as f64 / t.bytes as f64 } else { 0.0 },
                speed_up: ratio(base.invocations as f64, t.invocations as f64),
                speed_up_positions: ratio(base.positions as f64, t.positions as f64),
                speed_up_wall: ratio(base.wall_secs, t.wall_secs),
                perplexity: t.perplexity,
                lcs_f1: t.lcs_f1,
                wall_secs: t.wall_secs,
            }
        })
        .collect();
    Ok(BenchReport {
        prompts: config.bench.prompts,
        new_tokens: config.bench.new_tokens,
        rows,
    })
}

/// The full benchmark: every configured mode over the shared prompt set,
/// vanilla first. Returns the raw outcomes next to the report so callers
/// can inspect per-prompt numbers.
pub fn run_bench(
    arts: &BenchArtifacts,
    config: &Config,
    heldout: &str,
    threads: usize,
) -> Result<(BenchReport, Vec<ModeOutcome>), CliError> {
    if config.bench.prompts < 10 {
        return Err(CliError::Config(format!(
            "bench.prompts = {} but the benchmark needs at least 10",
            config.bench.prompts
        )));
    }
    let prompts = build_prompt_set(heldout, config)?;
    let mut modes = config.bench.modes.clone();
    if !modes.iter().any(|m| m == "vanilla") {
        modes.insert(0, "vanilla".to_string());
    }
    let mut outcomes = Vec::with_capacity(modes.len());
    for name in &modes {
        log::info!("bench: running mode {name} over {} prompts", prompts.prompts.len());
        outcomes.push(run_mode(arts, config, name, &prompts, threads)?);
    }
    log_verification_quality(&outcomes);
    let report = assemble_report(&outcomes, config)?;
    Ok((report, outcomes))
}

/// When both the full decoder and its no-verify ablation ran, log how often
/// verification kept the generated text at least as plausible under the
/// base model, the quality side of the ablation.
fn log_verification_quality(outcomes: &[ModeOutcome]) {
    let find = |m: &str| outcomes.iter().find(|o| o.mode == m);
    if let (Some(full), Some(ablated)) = (find("mumo"), find("mumo_no_verify")) {
        let wins = full
            .per_prompt
            .iter()
            .zip(&ablated.per_prompt)
            .filter(|(f, a)| f.nll <= a.nll)
            .count();
        log::info!(
            "bench: mumo text base-nll <= mumo_no_verify on {wins}/{} prompts",
            full.per_prompt.len()
        );
    }
}

/// One JSON line per decode step (candidates with prior and feasibility,
/// the chosen unit, the committed ids), then a totals line.
pub fn trace_to_jsonl(trace: &DecodeTrace) -> String {
    let mut out = String::new();
    for s in &trace.steps {
        let candidates: Vec<serde_json::Value> = s
            .candidates
            .iter()
            .map(|c| {
                serde_json::json!({
                    "id": c.joint_id,
                    "surface": c.surface,
                    "prior": c.prior,
                    "sigma": c.feasibility,
                    "dropped": c.dropped,
                })
            })
            .collect();
        let line = serde_json::json!({
            "step": s.step,
            "candidates": candidates,
            "chosen": s.chosen,
            "committed": s.committed,
        });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    let totals = serde_json::json!({
        "totals": {
            "steps": trace.step_count(),
            "tokens_emitted": trace.tokens_emitted,
            "invocations": trace.invocations,
            "positions": trace.positions,
            "prompt_tokens": trace.prompt_tokens,
            "wall_secs": trace.wall_secs,
            "truncated": trace.truncated,
        }
    });
    out.push_str(&totals.to_string());
    out.push('\n');
    out
}
