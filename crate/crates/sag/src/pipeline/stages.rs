//! Resumable stage runner. Stages communicate only through files under the
//! work directory; every output is written atomically (temp file + rename)
//! and recorded in a manifest, so re-running an unchanged stage is a no-op
//! and any stage can be re-run in isolation.

use std::collections::BTreeMap;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use crate::bench::{self, NoteBenchCase};
use crate::corpus::{self, Corpus};
use crate::gateway::{
    CachingClient, ChatClient, Gateway, HttpChatClient, HttpConfig, MockClient, RequestSettings,
};
use crate::slm::{self, tokenizer, Decoding, SftExample, SlmParams, TrainStep};
use crate::style_embed::{self, EncoderParams};
use crate::style_filter;

use super::config::{GatewayMode, PipelineConfig};
use super::manifest::{file_hash, StageManifest};
use super::report::{build_comparison, format_table, StageComparison};

pub const CORPUS: &str = "corpus.jsonl";
pub const ENCODER_CKPT: &str = "encoder.ckpt";
pub const ENCODER_LOG: &str = "encoder_log.csv";
pub const FILTERED: &str = "filtered.jsonl";
pub const SFT_TRAIN: &str = "sft_train.jsonl";
pub const SFT_HELDOUT: &str = "sft_heldout.jsonl";
pub const SLM_SFT_CKPT: &str = "slm_sft.ckpt";
pub const SFT_LOG: &str = "sft_log.csv";
pub const PREFS: &str = "prefs.jsonl";
pub const SLM_DPO_CKPT: &str = "slm_dpo.ckpt";
pub const DPO_LOG: &str = "dpo_log.csv";
pub const REPORT_TXT: &str = "report.txt";
pub const REPORT_JSON: &str = "report.json";

/// Eval artifact names: `eval_sft.json`, `eval_dpo_shuf_cases.csv`, ...
pub fn eval_artifact(which: &str, shuffled: bool, cases: bool) -> String {
    let shuf = if shuffled { "_shuf" } else { "" };
    if cases {
        format!("eval_{which}{shuf}_cases.csv")
    } else {
        format!("eval_{which}{shuf}.json")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("missing dependency: {}", artifact.display())]
    MissingDependency { artifact: PathBuf },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    /// CLI contract: 2 for dependency errors, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::MissingDependency { .. } => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    TrainFilter,
    Filter,
    Invgen,
    Sft,
    BuildPrefs,
    Dpo,
    Eval,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Ingest,
        Stage::TrainFilter,
        Stage::Filter,
        Stage::Invgen,
        Stage::Sft,
        Stage::BuildPrefs,
        Stage::Dpo,
        Stage::Eval,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::TrainFilter => "train-filter",
            Stage::Filter => "filter",
            Stage::Invgen => "invgen",
            Stage::Sft => "sft",
            Stage::BuildPrefs => "build-prefs",
            Stage::Dpo => "dpo",
            Stage::Eval => "eval",
            Stage::Report => "report",
        }
    }

    pub fn parse(name: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|s| s.name() == name)
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug)]
pub struct StageOutcome {
    pub stage: Stage,
    /// True when the manifest hash check made the run a no-op.
    pub skipped: bool,
    pub manifest: StageManifest,
}

type StageResult<T> = Result<T, Box<dyn std::error::Error + Send + Sync>>;

/// Run one stage: check dependencies, skip when the manifest still matches,
/// otherwise execute and persist a fresh manifest.
pub fn run_stage(
    stage: Stage,
    config: &PipelineConfig,
    force: bool,
) -> Result<StageOutcome, PipelineError> {
    let work = &config.paths.work_dir;
    std::fs::create_dir_all(work.join("manifests"))?;

    let inputs = required_inputs(stage, config);
    for path in &inputs {
        if !path.exists() {
            return Err(PipelineError::MissingDependency { artifact: path.clone() });
        }
    }
    let mut input_hashes = BTreeMap::new();
    for path in &inputs {
        let name = path.file_name().expect("artifact has a name").to_string_lossy().into_owned();
        input_hashes.insert(name, file_hash(path)?);
    }
    let echo = config_echo(stage, config);

    let manifest_path = work.join("manifests").join(format!("{}.json", stage.name()));
    if !force {
        if let Ok(existing) = StageManifest::load(&manifest_path) {
            if existing.still_valid(&input_hashes, &echo, work) {
                return Ok(StageOutcome { stage, skipped: true, manifest: existing });
            }
        }
    }

    let started = std::time::Instant::now();
    let outputs = execute(stage, config)
        .map_err(|source| PipelineError::Stage { stage: stage.name(), source })?;
    let wall_time_secs = started.elapsed().as_secs_f64();

    let mut output_hashes = BTreeMap::new();
    for name in outputs {
        output_hashes.insert(name.clone(), file_hash(work.join(&name))?);
    }
    let manifest = StageManifest {
        stage: stage.name().to_string(),
        inputs: input_hashes,
        outputs: output_hashes,
        wall_time_secs,
        config_echo: echo,
    };
    write_atomic(work, &format!("manifests/{}.json", stage.name()), &manifest.to_json())?;
    Ok(StageOutcome { stage, skipped: false, manifest })
}

fn required_inputs(stage: Stage, config: &PipelineConfig) -> Vec<PathBuf> {
    let work = &config.paths.work_dir;
    match stage {
        Stage::Ingest => vec![config.paths.corpus.clone()],
        Stage::TrainFilter => vec![work.join(CORPUS)],
        Stage::Filter => vec![work.join(CORPUS), work.join(ENCODER_CKPT)],
        Stage::Invgen => vec![work.join(CORPUS), work.join(FILTERED)],
        Stage::Sft => vec![work.join(SFT_TRAIN)],
        Stage::BuildPrefs => vec![work.join(SFT_HELDOUT), work.join(SLM_SFT_CKPT)],
        Stage::Dpo => vec![work.join(PREFS), work.join(SLM_SFT_CKPT)],
        Stage::Eval => vec![config.paths.benchmark.clone(), work.join(SLM_SFT_CKPT)],
        Stage::Report => {
            vec![work.join(eval_artifact("sft", config.eval.shuffle_references, false))]
        }
    }
}

/// The config slice a stage depends on; changing anything else leaves its
/// manifest valid.
fn config_echo(stage: Stage, config: &PipelineConfig) -> serde_json::Value {
    let seed = config.seed;
    match stage {
        Stage::Ingest => serde_json::json!({"seed": seed}),
        Stage::TrainFilter => {
            serde_json::json!({"encoder": config.encoder, "seed": seed})
        }
        Stage::Filter => serde_json::json!({"filter": config.filter}),
        Stage::Invgen => serde_json::json!({
            "invgen": config.invgen,
            "gateway": config.gateway,
            "slm": config.slm,
            "sft_max_seq": config.sft.max_seq_len,
        }),
        Stage::Sft => serde_json::json!({"slm": config.slm, "sft": config.sft, "seed": seed}),
        Stage::BuildPrefs => serde_json::json!({
            "invgen": config.invgen,
            "gateway": config.gateway,
        }),
        Stage::Dpo => serde_json::json!({"dpo": config.dpo, "seed": seed}),
        Stage::Eval => serde_json::json!({
            "eval": config.eval,
            "gateway": config.gateway,
            "seed": seed,
        }),
        Stage::Report => serde_json::json!({"eval": config.eval}),
    }
}

fn execute(stage: Stage, config: &PipelineConfig) -> StageResult<Vec<String>> {
    match stage {
        Stage::Ingest => run_ingest(config),
        Stage::TrainFilter => run_train_filter(config),
        Stage::Filter => run_filter(config),
        Stage::Invgen => run_invgen(config),
        Stage::Sft => run_sft(config),
        Stage::BuildPrefs => run_build_prefs(config),
        Stage::Dpo => run_dpo(config),
        Stage::Eval => run_eval(config),
        Stage::Report => run_report(config),
    }
}

/// Write bytes to `<work>/<name>` via a temp file in the same directory and
/// an atomic rename.
fn write_atomic(work: &Path, name: &str, bytes: &[u8]) -> std::io::Result<()> {
    let target = work.join(name);
    let file_name =
        target.file_name().expect("artifact has a name").to_string_lossy().into_owned();
    let tmp = target.with_file_name(format!(".{file_name}.tmp"));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, &target)?;
    Ok(())
}

fn load_work_corpus(config: &PipelineConfig) -> StageResult<Corpus> {
    Ok(corpus::ingest_corpus(config.paths.work_dir.join(CORPUS))?)
}

fn training_log_csv(steps: &[TrainStep]) -> StageResult<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(["step", "loss", "lr", "margin"])?;
    for s in steps {
        writer.write_record([
            s.step.to_string(),
            format!("{:.9}", s.loss),
            format!("{:.3e}", s.lr),
            s.margin.map(|m| format!("{m:.9}")).unwrap_or_default(),
        ])?;
    }
    Ok(writer.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?)
}

/// Greedy below the temperature floor, otherwise seeded sampling.
fn decoding_for(temperature: f64, top_k: usize, seed: u64) -> Decoding {
    if temperature > 0.0 {
        Decoding::Sample {
            temperature,
            top_k: if top_k == 0 { usize::MAX } else { top_k },
            seed,
        }
    } else {
        Decoding::Greedy
    }
}

fn build_gateway(config: &PipelineConfig) -> StageResult<Gateway<Box<dyn ChatClient>>> {
    let gw = &config.gateway;
    let base: Box<dyn ChatClient> = match gw.mode {
        GatewayMode::Mock => Box::new(
            MockClient::new().with_markers(&gw.mock_factual_marker, &gw.mock_faithful_marker),
        ),
        GatewayMode::Http => Box::new(HttpChatClient::from_env(HttpConfig {
            url_env: gw.url_env.clone(),
            key_env: gw.key_env.clone(),
            ..HttpConfig::default()
        })?),
    };
    let client: Box<dyn ChatClient> = if gw.cache {
        let dir = gw
            .cache_dir
            .clone()
            .unwrap_or_else(|| config.paths.work_dir.join("gateway_cache"));
        Box::new(CachingClient::new(base, dir)?)
    } else {
        base
    };
    Ok(Gateway::new(
        client,
        RequestSettings {
            model: gw.model.clone(),
            temperature: gw.temperature,
            max_tokens: gw.max_tokens,
            concurrency: gw.concurrency,
        },
    ))
}

// ---- stage bodies ----------------------------------------------------------

fn run_ingest(config: &PipelineConfig) -> StageResult<Vec<String>> {
    let corpus = corpus::ingest_corpus(&config.paths.corpus)?;
    let mut buf = Vec::new();
    corpus::write_corpus(&corpus, &mut buf)?;
    write_atomic(&config.paths.work_dir, CORPUS, &buf)?;
    Ok(vec![CORPUS.to_string()])
}

fn run_train_filter(config: &PipelineConfig) -> StageResult<Vec<String>> {
    let corpus = load_work_corpus(config)?;
    let mut encoder_config = config.encoder.clone();
    encoder_config.seed = config.encoder_seed();
    let (params, summary) = style_embed::train_filter_model(&corpus, &encoder_config)?;

    let mut ckpt = Vec::new();
    params.write(&mut ckpt)?;
    write_atomic(&config.paths.work_dir, ENCODER_CKPT, &ckpt)?;

    let steps: Vec<TrainStep> = summary
        .steps
        .iter()
        .map(|s| TrainStep { step: s.step, loss: s.loss, lr: s.lr, margin: None })
        .collect();
    write_atomic(&config.paths.work_dir, ENCODER_LOG, &training_log_csv(&steps)?)?;
    Ok(vec![ENCODER_CKPT.to_string(), ENCODER_LOG.to_string()])
}

fn run_filter(config: &PipelineConfig) -> StageResult<Vec<String>> {
    let corpus = load_work_corpus(config)?;
    let params = EncoderParams::load(config.paths.work_dir.join(ENCODER_CKPT))?;
    let dataset = style_filter::build_filtered_dataset(&corpus, &params, &config.filter)?;
    let mut buf = Vec::new();
    style_filter::write_filtered_dataset(&dataset, &mut buf)?;
    write_atomic(&config.paths.work_dir, FILTERED, &buf)?;
    Ok(vec![FILTERED.to_string()])
}

fn run_invgen(config: &PipelineConfig) -> StageResult<Vec<String>> {
    let corpus = load_work_corpus(config)?;
    let dataset = style_filter::read_filtered_dataset(BufReader::new(std::fs::File::open(
        config.paths.work_dir.join(FILTERED),
    )?))?;
    let mut pairs = dataset.pairs;
    if config.invgen.max_pairs > 0 {
        pairs.truncate(config.invgen.max_pairs);
    }

    let bodies: Vec<(String, String)> = pairs
        .iter()
        .map(|p| {
            let reference = corpus
                .find_article(&p.user_id, &p.reference_id)
                .ok_or_else(|| format!("article {} not in corpus", p.reference_id))?;
            let target = corpus
                .find_article(&p.user_id, &p.target_id)
                .ok_or_else(|| format!("article {} not in corpus", p.target_id))?;
            Ok::<_, String>((reference.body.clone(), target.body.clone()))
        })
        .collect::<Result<_, _>>()?;

    let gateway = build_gateway(config)?;
    let results = gateway.map_concurrent(&bodies, |(reference, target)| {
        let halves = gateway.neutralization(target)?;
        Ok(slm::data::SftRecord {
            summary: halves.summary,
            neutral: halves.neutral_text,
            reference: reference.clone(),
            target: target.clone(),
        })
    });
    let mut records = Vec::with_capacity(results.len());
    for result in results {
        records.push(result?);
    }

    // keep only rows that fit the model window, then carve out the holdout
    let max_seq = config.slm.max_seq_len.min(config.sft.max_seq_len);
    let fitting: Vec<slm::data::SftRecord> = records
        .into_iter()
        .filter(|r| {
            SftExample::from_text(&r.summary, &r.neutral, &r.reference, &r.target, max_seq).is_ok()
        })
        .collect();

    let stride = if config.invgen.holdout_fraction > 0.0 {
        ((1.0 / config.invgen.holdout_fraction).round() as usize).max(2)
    } else {
        usize::MAX
    };
    let mut train = Vec::new();
    let mut heldout = Vec::new();
    for (i, record) in fitting.into_iter().enumerate() {
        if stride != usize::MAX && i % stride == 0 {
            heldout.push(record);
        } else {
            train.push(record);
        }
    }

    let mut buf = Vec::new();
    slm::data::write_sft_dataset(&train, &mut buf)?;
    write_atomic(&config.paths.work_dir, SFT_TRAIN, &buf)?;
    let mut buf = Vec::new();
    slm::data::write_sft_dataset(&heldout, &mut buf)?;
    write_atomic(&config.paths.work_dir, SFT_HELDOUT, &buf)?;
    Ok(vec![SFT_TRAIN.to_string(), SFT_HELDOUT.to_string()])
}

fn run_sft(config: &PipelineConfig) -> StageResult<Vec<String>> {
    let records = slm::data::read_sft_dataset(BufReader::new(std::fs::File::open(
        config.paths.work_dir.join(SFT_TRAIN),
    )?))?;
    let max_seq = config.slm.max_seq_len.min(config.sft.max_seq_len);
    let examples = slm::data::examples_from_records(&records, max_seq)?;

    let params = SlmParams::init(config.slm, config.sft_seed());
    let mut train_config = config.sft.clone();
    train_config.seed = config.sft_seed();
    train_config.max_seq_len = max_seq;
    let (trained, log) = slm::sft_train(&params, &examples, &train_config)?;

    let mut ckpt = Vec::new();
    trained.write(&mut ckpt)?;
    write_atomic(&config.paths.work_dir, SLM_SFT_CKPT, &ckpt)?;
    write_atomic(&config.paths.work_dir, SFT_LOG, &training_log_csv(&log)?)?;
    Ok(vec![SLM_SFT_CKPT.to_string(), SFT_LOG.to_string()])
}

fn run_build_prefs(config: &PipelineConfig) -> StageResult<Vec<String>> {
    let records = slm::data::read_sft_dataset(BufReader::new(std::fs::File::open(
        config.paths.work_dir.join(SFT_HELDOUT),
    )?))?;
    let params = SlmParams::load(config.paths.work_dir.join(SLM_SFT_CKPT))?;
    let max_seq = config.slm.max_seq_len.min(config.sft.max_seq_len);
    let examples = slm::data::examples_from_records(&records, max_seq)?;
    let gateway = build_gateway(config)?;

    // partial results stay visible in the .partial file; the real artifact
    // only appears on success
    let partial_name = format!("{PREFS}.partial");
    let partial_path = config.paths.work_dir.join(&partial_name);
    let mut partial = std::fs::File::create(&partial_path)?;
    let mut pairs = Vec::new();
    for (index, example) in examples.iter().enumerate() {
        let mut correct = |generated: &str, summary: &str, reference: &str| {
            gateway
                .correct_hallucinations(generated, summary, reference)
                .map(|c| c.verified_text)
        };
        if let Some(pair) = slm::data::preference_pair_for_example(
            &params,
            example,
            config.invgen.max_new_tokens,
            &decoding_for(config.invgen.temperature, config.invgen.top_k, config.seed),
            index,
            &mut correct,
        )? {
            slm::data::write_preference_pairs(std::slice::from_ref(&pair), &mut partial)?;
            pairs.push(pair);
        }
    }
    drop(partial);
    std::fs::rename(&partial_path, config.paths.work_dir.join(PREFS))?;
    Ok(vec![PREFS.to_string()])
}

fn run_dpo(config: &PipelineConfig) -> StageResult<Vec<String>> {
    let pairs = slm::data::read_preference_pairs(BufReader::new(std::fs::File::open(
        config.paths.work_dir.join(PREFS),
    )?))?;
    let reference = SlmParams::load(config.paths.work_dir.join(SLM_SFT_CKPT))?;
    let mut train_config = config.dpo.clone();
    train_config.seed = config.dpo_seed();
    train_config.max_seq_len = config.slm.max_seq_len.min(train_config.max_seq_len);
    let (trained, summary) = slm::dpo_train(&reference, &reference, &pairs, &train_config)?;

    let mut ckpt = Vec::new();
    trained.write(&mut ckpt)?;
    write_atomic(&config.paths.work_dir, SLM_DPO_CKPT, &ckpt)?;
    write_atomic(&config.paths.work_dir, DPO_LOG, &training_log_csv(&summary.steps)?)?;
    Ok(vec![SLM_DPO_CKPT.to_string(), DPO_LOG.to_string()])
}

fn run_eval(config: &PipelineConfig) -> StageResult<Vec<String>> {
    let mut cases =
        bench::read_benchmark(BufReader::new(std::fs::File::open(&config.paths.benchmark)?))?;
    if config.eval.max_cases > 0 {
        cases.truncate(config.eval.max_cases);
    }
    if config.eval.shuffle_references {
        cases = bench::shuffle_references(&cases, config.shuffle_seed())?;
    }
    let gateway = build_gateway(config)?;

    let mut outputs = Vec::new();
    let mut checkpoints = vec![("sft", config.paths.work_dir.join(SLM_SFT_CKPT))];
    let dpo_path = config.paths.work_dir.join(SLM_DPO_CKPT);
    if dpo_path.exists() {
        checkpoints.push(("dpo", dpo_path));
    }

    for (which, ckpt) in checkpoints {
        let params = SlmParams::load(&ckpt)?;
        let case_index = std::sync::atomic::AtomicU64::new(0);
        let generator = |case: &NoteBenchCase| -> Result<String, String> {
            let index = case_index.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            let neutral = gateway.neutralize(&case.summary).map_err(|e| e.to_string())?;
            let prompt = slm::format_prompt(
                &tokenizer::encode_text(&case.summary),
                &tokenizer::encode_text(&neutral),
                &tokenizer::encode_text(&case.style_reference),
                params.config.max_seq_len.saturating_sub(config.eval.max_new_tokens),
            )
            .map_err(|e| e.to_string())?;
            let decoding = match decoding_for(config.eval.temperature, config.eval.top_k, config.seed)
            {
                Decoding::Sample { temperature, top_k, seed } => Decoding::Sample {
                    temperature,
                    top_k,
                    seed: seed.wrapping_add(index),
                },
                Decoding::Greedy => Decoding::Greedy,
            };
            let out = slm::generate(&params, &prompt, &decoding, config.eval.max_new_tokens)
                .map_err(|e| e.to_string())?;
            Ok(tokenizer::decode_text(&out))
        };
        let judge = |case: &NoteBenchCase, generated: &str| {
            gateway
                .judge_hallucination(generated, &case.summary, &case.style_reference)
                .map_err(|e| e.to_string())
        };
        let judge_ref: Option<&bench::Judge> =
            if config.eval.judge { Some(&judge) } else { None };
        let (report, rows) = bench::run_benchmark(&cases, &generator, judge_ref)?;

        let json_name = eval_artifact(which, config.eval.shuffle_references, false);
        write_atomic(
            &config.paths.work_dir,
            &json_name,
            &serde_json::to_vec_pretty(&report).map_err(std::io::Error::other)?,
        )?;
        let csv_name = eval_artifact(which, config.eval.shuffle_references, true);
        let mut buf = Vec::new();
        bench::write_case_csv(&rows, &mut buf)?;
        write_atomic(&config.paths.work_dir, &csv_name, &buf)?;
        outputs.push(json_name);
        outputs.push(csv_name);
    }
    Ok(outputs)
}

fn run_report(config: &PipelineConfig) -> StageResult<Vec<String>> {
    let comparison = report_from_workdir(
        &config.paths.work_dir,
        config.eval.shuffle_references,
    )?;
    write_atomic(
        &config.paths.work_dir,
        REPORT_JSON,
        &serde_json::to_vec_pretty(&comparison).map_err(std::io::Error::other)?,
    )?;
    write_atomic(&config.paths.work_dir, REPORT_TXT, format_table(&comparison).as_bytes())?;
    Ok(vec![REPORT_JSON.to_string(), REPORT_TXT.to_string()])
}

/// Assemble the stage comparison from eval artifacts in a work directory.
pub fn report_from_workdir(work: &Path, shuffled: bool) -> StageResult<StageComparison> {
    let sft_path = work.join(eval_artifact("sft", shuffled, false));
    let sft: bench::MetricReport = serde_json::from_slice(&std::fs::read(sft_path)?)
        .map_err(std::io::Error::other)?;
    let dpo_path = work.join(eval_artifact("dpo", shuffled, false));
    let dpo: Option<bench::MetricReport> = if dpo_path.exists() {
        Some(serde_json::from_slice(&std::fs::read(dpo_path)?).map_err(std::io::Error::other)?)
    } else {
        None
    };
    Ok(build_comparison(&sft, dpo.as_ref()))
}
