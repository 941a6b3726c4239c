//! Annotation generation through a completion client, and the k / mix sweep
//! built on top of it.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::annotation::{
    validate_outputs, AnnotationRecord, AnnotationSet, AnnotatorKind, ParseOptions, ValidationReport,
};
use crate::corpus::Utterance;
use crate::error::{Error, Result};
use crate::llm::{clean_output, BackendKind, Client, CompletionRequest, ReplayRecord};
use crate::metrics::{compare_with, AlphaUnit};
use crate::prompting::{
    build_prompt, per_target_seed, select_examples, FewShotExample, Mix, PromptConfig, PromptTemplate,
};

/// Appended to the task prompt when an invalid output is retried once.
pub const REPAIR_NOTE: &str = "\n\nYour previous reply was not a valid annotation. Copy the text exactly, adding only # and / after words, and reply with the annotated text only.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateOptions {
    pub parallelism: usize,
    /// Re-ask once for every output that fails validation.
    pub retry_invalid: bool,
    pub parse: ParseOptions,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        GenerateOptions {
            parallelism: 4,
            retry_invalid: false,
            parse: ParseOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CallStats {
    pub requests: usize,
    pub cache_hits: usize,
    pub backend_calls: usize,
    pub max_attempts: u32,
}

#[derive(Debug, Clone)]
pub struct Generation {
    pub setting: String,
    pub config_digest: String,
    pub annotator: AnnotatorKind,
    /// Raw backend text per utterance, keyed by request digest.
    pub raw_outputs: Vec<ReplayRecord>,
    pub report: ValidationReport,
    /// Pass rate after the single repair round, when enabled.
    pub retry_report: Option<ValidationReport>,
    pub annotations: AnnotationSet,
    pub records: Vec<AnnotationRecord>,
    pub calls: CallStats,
}

impl Generation {
    /// Pass rate after retries when they ran, the first-pass rate otherwise.
    pub fn final_pass_rate(&self) -> f64 {
        self.retry_report.as_ref().unwrap_or(&self.report).pass_rate
    }
}

fn run_batch(
    client: &Client,
    requests: &[CompletionRequest],
    parallelism: usize,
    stats: &mut CallStats,
) -> Result<Vec<String>> {
    let calls_before = client.backend_calls();
    let results = client.complete_batch(requests, parallelism.min(client.config().max_concurrent_requests))?;
    stats.requests += requests.len();
    stats.backend_calls += client.backend_calls() - calls_before;
    results
        .into_iter()
        .map(|r| {
            let r = r?;
            if r.backend == BackendKind::Cache {
                stats.cache_hits += 1;
            }
            stats.max_attempts = stats.max_attempts.max(r.attempt_count);
            Ok(r.text)
        })
        .collect()
}

/// Prompts the client once per utterance and validates every reply. Pool
/// examples whose id is also a target are never used as demonstrations.
pub fn generate(
    client: &Client,
    template: &PromptTemplate,
    config: &PromptConfig,
    corpus: &[Utterance],
    pool: &[FewShotExample],
    options: &GenerateOptions,
) -> Result<Generation> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::validation("corpus is empty"));
    }
    let targets: HashSet<&str> = corpus.iter().map(Utterance::id).collect();
    let pool: Vec<FewShotExample> = pool.iter().filter(|e| !targets.contains(e.id.as_str())).cloned().collect();

    let fixed = if config.resample_per_target {
        None
    } else {
        Some(select_examples(&pool, &config.mix, &config.source_language, config.seed)?)
    };
    let config_digest = match &fixed {
        Some(ex) => {
            let ids: Vec<&str> = ex.iter().map(|e| e.id.as_str()).collect();
            config.digest(template, &ids)
        }
        None => config.digest(template, &[]),
    };
    let annotator = AnnotatorKind::llm(config_digest.clone())?;

    let mut requests = Vec::with_capacity(corpus.len());
    for u in corpus {
        let examples = match &fixed {
            Some(ex) => ex.clone(),
            None => select_examples(
                &pool,
                &config.mix,
                &config.source_language,
                per_target_seed(config.seed, u.id()),
            )?,
        };
        let bundle = build_prompt(template, config, u, &examples)?;
        requests.push(CompletionRequest::from_prompt(
            &bundle,
            &config.model_id,
            config.temperature,
            config.top_p,
        ));
    }

    let mut calls = CallStats::default();
    let texts = run_batch(client, &requests, options.parallelism, &mut calls)?;
    let mut raw_outputs: Vec<ReplayRecord> = requests
        .iter()
        .zip(&texts)
        .zip(corpus)
        .map(|((r, t), u)| ReplayRecord {
            request_digest: r.digest(),
            text: t.clone(),
            utterance_id: Some(u.id().to_owned()),
        })
        .collect();
    let mut cleaned: Vec<String> = texts.iter().map(|t| clean_output(t)).collect();
    let first = validate_outputs(corpus, &cleaned, &options.parse)?;
    let report = first.report.clone();
    let mut validated = first;

    let mut retry_report = None;
    if options.retry_invalid {
        let failed: Vec<usize> = (0..corpus.len()).filter(|&i| validated.parsed[i].is_none()).collect();
        let repairs: Vec<CompletionRequest> = failed
            .iter()
            .map(|&i| {
                let mut r = requests[i].clone();
                r.user_message.push_str(REPAIR_NOTE);
                r
            })
            .collect();
        if !repairs.is_empty() {
            let retried = run_batch(client, &repairs, options.parallelism, &mut calls)?;
            for ((&i, r), t) in failed.iter().zip(&repairs).zip(retried) {
                raw_outputs.push(ReplayRecord {
                    request_digest: r.digest(),
                    text: t.clone(),
                    utterance_id: Some(corpus[i].id().to_owned()),
                });
                cleaned[i] = clean_output(&t);
            }
            validated = validate_outputs(corpus, &cleaned, &options.parse)?;
        }
        retry_report = Some(validated.report.clone());
    }

    let mut annotations = AnnotationSet::new(annotator.clone());
    let mut records = Vec::new();
    for (u, labels) in corpus.iter().zip(validated.parsed) {
        if let Some(labels) = labels {
            records.push(AnnotationRecord::new(u, labels.clone(), annotator.clone())?);
            annotations.insert(u.id(), labels)?;
        }
    }
    Ok(Generation {
        setting: config.setting_label(),
        config_digest,
        annotator,
        raw_outputs,
        report,
        retry_report,
        annotations,
        records,
        calls,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub setting: String,
    pub k: usize,
    pub mix: Mix,
    pub config_digest: Option<String>,
    pub reference: String,
    pub pass_rate: Option<f64>,
    pub retry_pass_rate: Option<f64>,
    pub agreement: Option<f64>,
    pub alpha: Option<f64>,
    pub macro_f1: Option<f64>,
    pub compared_utterances: Option<usize>,
    pub human_score: Option<f64>,
    pub error: Option<String>,
}

pub const SWEEP_COLUMNS: [&str; 12] = [
    "setting",
    "k",
    "reference",
    "config_digest",
    "pass_rate",
    "retry_pass_rate",
    "agreement",
    "alpha",
    "macro_f1",
    "compared_utterances",
    "human_score",
    "error",
];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

fn cell<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(T::to_string).unwrap_or_default()
}

impl SweepReport {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for r in &self.rows {
            s.push_str(&serde_json::to_string(r)?);
            s.push('\n');
        }
        Ok(s)
    }

    /// Tab-separated table with [`SWEEP_COLUMNS`], full precision.
    pub fn to_tsv(&self) -> String {
        let mut s = SWEEP_COLUMNS.join("\t");
        s.push('\n');
        for r in &self.rows {
            let fields = [
                r.setting.clone(),
                r.k.to_string(),
                r.reference.clone(),
                cell(&r.config_digest),
                cell(&r.pass_rate),
                cell(&r.retry_pass_rate),
                cell(&r.agreement),
                cell(&r.alpha),
                cell(&r.macro_f1),
                cell(&r.compared_utterances),
                cell(&r.human_score),
                r.error.clone().unwrap_or_default().replace(['\t', '\n'], " "),
            ];
            s.push_str(&fields.join("\t"));
            s.push('\n');
        }
        s
    }

    /// `reference, setting, k, agreement, alpha` for rows with metrics.
    pub fn plot_tsv(&self) -> String {
        let mut s = String::from("reference\tsetting\tk\tagreement\talpha\n");
        for r in &self.rows {
            if let (Some(a), Some(al)) = (r.agreement, r.alpha) {
                let _ = writeln!(s, "{}\t{}\t{}\t{a}\t{al}", r.reference, r.setting, r.k);
            }
        }
        s
    }

    /// Aligned table with two-decimal percentages.
    pub fn to_table(&self) -> String {
        let opt = |v: Option<f64>, p: usize| v.map(|x| format!("{x:.p$}")).unwrap_or_else(|| "-".into());
        let mut s = format!(
            "{:<18} {:>4} {:<16} {:>8} {:>9} {:>7} {:>8} {:>7}\n",
            "setting", "k", "reference", "pass", "agree", "alpha", "macroF1", "human"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<18} {:>4} {:<16} {:>8} {:>9} {:>7} {:>8} {:>7}{}",
                r.setting,
                r.k,
                r.reference,
                opt(r.pass_rate, 2),
                opt(r.agreement, 2),
                opt(r.alpha, 4),
                opt(r.macro_f1, 4),
                opt(r.human_score, 2),
                r.error.as_ref().map(|e| format!("  error: {e}")).unwrap_or_default()
            );
        }
        s
    }
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub report: SweepReport,
    /// One entry per setting; failed settings carry the error text.
    pub generations: Vec<std::result::Result<Generation, String>>,
}

/// Generates with every setting in turn and compares the output against
/// each reference set. A failing setting yields rows carrying the error and
/// the sweep moves on.
#[allow(clippy::too_many_arguments)]
pub fn run_sweep(
    client: &Client,
    template: &PromptTemplate,
    settings: &[PromptConfig],
    corpus: &[Utterance],
    pool: &[FewShotExample],
    references: &[AnnotationSet],
    human_scores: &BTreeMap<String, f64>,
    options: &GenerateOptions,
) -> Result<SweepOutcome> {
    if settings.is_empty() {
        return Err(Error::validation("no sweep settings"));
    }
    if references.is_empty() {
        return Err(Error::validation("no reference annotation sets"));
    }
    let mut labels = HashSet::new();
    for s in settings {
        if !labels.insert(s.setting_label()) {
            return Err(Error::validation(format!("duplicate sweep setting {}", s.setting_label())));
        }
    }

    let mut report = SweepReport::default();
    let mut generations = Vec::with_capacity(settings.len());
    for config in settings {
        let outcome = generate(client, template, config, corpus, pool, options);
        for reference in references {
            let mut row = SweepRow {
                setting: config.setting_label(),
                k: config.k(),
                mix: config.mix.clone(),
                config_digest: None,
                reference: reference.annotator.tag(),
                pass_rate: None,
                retry_pass_rate: None,
                agreement: None,
                alpha: None,
                macro_f1: None,
                compared_utterances: None,
                human_score: None,
                error: None,
            };
            match &outcome {
                Err(e) => row.error = Some(e.to_string()),
                Ok(g) => {
                    row.config_digest = Some(g.config_digest.clone());
                    row.pass_rate = Some(g.report.pass_rate);
                    row.retry_pass_rate = g.retry_report.as_ref().map(|r| r.pass_rate);
                    row.human_score = human_scores.get(&g.annotator.tag()).copied();
                    match compare_with::<f64>(reference, &g.annotations, AlphaUnit::Junction) {
                        Ok(c) => {
                            row.agreement = Some(c.agreement);
                            row.alpha = Some(c.alpha);
                            row.macro_f1 = Some(c.macro_f1);
                            row.compared_utterances = Some(c.compared_utterances);
                        }
                        Err(e) => row.error = Some(e.to_string()),
                    }
                }
            }
            report.rows.push(row);
        }
        generations.push(outcome.map_err(|e| e.to_string()));
    }
    Ok(SweepOutcome { report, generations })
}
