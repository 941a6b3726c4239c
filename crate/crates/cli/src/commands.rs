use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

use phrasebreak_core::annotation::{
    load_annotation_set, load_annotation_sets, phrasing_stats, validate_outputs, write_annotation_records,
    AnnotationRecord, AnnotationSet, AnnotatorKind, BreakLabel, ParseOptions, ValidationReport,
};
use phrasebreak_core::corpus::{load_corpus, split_dataset, write_corpus, DatasetSplit, Utterance};
use phrasebreak_core::llm::{
    read_replay_file, write_replay_file, Backend, BackendConfig, Client, HttpBackend, MockBackend, ReplayBackend,
};
use phrasebreak_core::metrics::{compare_with, AlphaUnit, ComparisonResult};
use phrasebreak_core::pipeline::{generate, run_sweep, GenerateOptions, Generation};
use phrasebreak_core::predictor::{evaluate, labeled, train, Model, SelectionSplit, TrainReport};
use phrasebreak_core::prompting::{
    load_example_pool, preset_mixes, FewShotExample, Mix, Persona, PromptConfig, PromptTemplate,
};
use phrasebreak_core::review::{PairPool, ReviewStore};
use phrasebreak_core::scalar::Real;
use phrasebreak_core::synth::{rule_corpus, rule_labels};
use phrasebreak_core::{Error, Result};

use crate::config::FileConfig;
use crate::manifest::RunManifest;
use crate::{
    AlphaUnitArg, BackendArgs, BackendChoice, Cli, Command, CompareArgs, EvalArgs, GenerateArgs, Precision,
    PromptArgs, ServeArgs, SplitArgs, StatsArgs, SweepArgs, SynthArgs, TrainArgs, ValidateArgs,
};

pub const DEFAULT_HTTP_CACHE: &str = ".phrasebreak-cache";

pub fn run(cli: &Cli) -> Result<()> {
    let file = FileConfig::load_or_default(cli.config.as_deref())?;
    let seed = file.resolve_seed(cli.seed);
    let ctx = Ctx { cli, file, seed };
    match &cli.command {
        Command::Generate(a) => ctx.generate(a),
        Command::Validate(a) => ctx.validate(a),
        Command::Stats(a) => ctx.stats(a),
        Command::Compare(a) => ctx.compare(a),
        Command::Sweep(a) => ctx.sweep(a),
        Command::Split(a) => ctx.split(a),
        Command::Train(a) => ctx.train(a),
        Command::Eval(a) => ctx.eval(a),
        Command::Synth(a) => ctx.synth(a),
        Command::ServeReview(a) => ctx.serve_review(a),
    }
}

struct Ctx<'a> {
    cli: &'a Cli,
    file: FileConfig,
    seed: u64,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    fs::write(path, body).map_err(io_err(path))
}

fn parse_mix(spec: &str) -> Result<Mix> {
    let mut mix = Mix::new();
    for part in spec.split(',').filter(|p| !p.trim().is_empty()) {
        let (lang, n) = part
            .split_once(':')
            .ok_or_else(|| Error::Validation(format!("mix entry {part:?} is not lang:count")))?;
        let n: usize = n
            .trim()
            .parse()
            .map_err(|_| Error::Validation(format!("mix count {n:?} is not a number")))?;
        mix.insert(lang.trim().to_owned(), n);
    }
    if mix.is_empty() {
        return Err(Error::Validation("empty mix".into()));
    }
    Ok(mix)
}

fn dominant_language(corpus: &[Utterance]) -> String {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for u in corpus {
        *counts.entry(u.language()).or_default() += 1;
    }
    counts
        .into_iter()
        .max_by_key(|(l, n)| (*n, std::cmp::Reverse(*l)))
        .map(|(l, _)| l.to_owned())
        .unwrap_or_else(|| "en".into())
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect::<String>()
        .trim_matches('_')
        .to_owned()
}

#[derive(Serialize)]
struct ResolvedGeneration<'a> {
    prompt: &'a PromptConfig,
    backend: BackendChoice,
    backend_config: &'a BackendConfig,
    generate: &'a GenerateOptions,
    template: &'a PromptTemplate,
}

impl Ctx<'_> {
    fn out_dir(&self) -> Result<PathBuf> {
        let out = self.cli.out.clone();
        fs::create_dir_all(&out).map_err(io_err(&out))?;
        Ok(out)
    }

    fn print(&self, json: &impl Serialize, human: impl FnOnce() -> String) -> Result<()> {
        if self.cli.json {
            println!("{}", serde_json::to_string_pretty(json)?);
        } else {
            print!("{}", human());
        }
        Ok(())
    }

    fn corpus(&self, path: &Path, m: &mut RunManifest) -> Result<Vec<Utterance>> {
        m.input(path)?;
        load_corpus(path)
    }

    fn base_prompt(&self, args: &PromptArgs, corpus: &[Utterance]) -> PromptConfig {
        let mut p = self.file.prompt.clone().unwrap_or_else(|| {
            let lang = dominant_language(corpus);
            PromptConfig::few_shot(&lang, 0)
        });
        if let Some(lang) = &args.lang {
            p.persona = Persona::Monolingual(lang.clone());
            p.source_language = lang.clone();
        }
        if let Some(m) = &args.model {
            p.model_id = m.clone();
        }
        if let Some(t) = args.temperature {
            p.temperature = t;
        }
        if let Some(t) = args.top_p {
            p.top_p = t;
        }
        p.resample_per_target |= args.resample_per_target;
        p.seed = self.seed;
        p
    }

    fn template(&self, args: &PromptArgs, m: &mut RunManifest) -> Result<PromptTemplate> {
        match &args.template {
            Some(path) => {
                m.input(path)?;
                PromptTemplate::load(path)
            }
            None => Ok(PromptTemplate::default()),
        }
    }

    fn pool(&self, args: &PromptArgs, corpus: &[Utterance], m: &mut RunManifest) -> Result<Vec<FewShotExample>> {
        match &args.pool {
            Some(path) => {
                m.input(path)?;
                load_example_pool(path, corpus)
            }
            None => Ok(Vec::new()),
        }
    }

    fn backend_config(&self, args: &BackendArgs) -> BackendConfig {
        let mut c = self.file.backend.clone();
        if let Some(u) = &args.base_url {
            c.base_url = u.clone();
        }
        if let Some(d) = &args.cache_dir {
            c.cache_dir = Some(d.clone());
        }
        if c.cache_dir.is_none() && args.backend == BackendChoice::Http {
            c.cache_dir = Some(PathBuf::from(DEFAULT_HTTP_CACHE));
        }
        if let Some(n) = args.max_concurrent {
            c.max_concurrent_requests = n;
        }
        if let Some(p) = &args.log_requests {
            c.log_requests = Some(p.clone());
        }
        c
    }

    fn generate_options(&self, args: &BackendArgs, config: &BackendConfig) -> GenerateOptions {
        let mut g = self.file.generate.clone();
        if let Some(p) = args.parallelism {
            g.parallelism = p;
        }
        g.parallelism = g.parallelism.clamp(1, config.max_concurrent_requests.max(1));
        g.retry_invalid |= args.retry_invalid;
        g
    }

    fn client(&self, args: &BackendArgs, config: &BackendConfig, m: &mut RunManifest) -> Result<Client> {
        let backend: Arc<dyn Backend> = match args.backend {
            BackendChoice::Mock => Arc::new(MockBackend),
            BackendChoice::Http => Arc::new(HttpBackend::new(config)?),
            BackendChoice::Replay => {
                let path = args
                    .replay
                    .as_ref()
                    .ok_or_else(|| Error::Validation("--backend replay needs --replay <file>".into()))?;
                m.input(path)?;
                Arc::new(ReplayBackend::from_file(path)?)
            }
        };
        Client::new(backend, config.clone())
    }

    fn filter(&self, corpus: Vec<Utterance>, args: &PromptArgs) -> Result<Vec<Utterance>> {
        let out: Vec<Utterance> = match &args.filter_language {
            Some(l) => corpus.into_iter().filter(|u| u.language() == l).collect(),
            None => corpus,
        };
        if out.is_empty() {
            return Err(Error::Validation("no utterances to annotate".into()));
        }
        Ok(out)
    }

    fn generate(&self, a: &GenerateArgs) -> Result<()> {
        let out = self.out_dir()?;
        let mut m = RunManifest::new("generate", self.seed);
        let corpus = self.filter(self.corpus(&a.corpus, &mut m)?, &a.prompt)?;
        let template = self.template(&a.prompt, &mut m)?;
        let pool = self.pool(&a.prompt, &corpus, &mut m)?;
        let mut prompt = self.base_prompt(&a.prompt, &corpus);
        if let Some(spec) = &a.mix {
            prompt.mix = parse_mix(spec)?;
            prompt.persona = Persona::Multilingual;
            prompt.source_language = a.source.clone().unwrap_or_else(|| "en".into());
        } else if let Some(k) = a.k {
            let lang = prompt.source_language.clone();
            prompt.mix = Mix::new();
            if k > 0 {
                prompt.mix.insert(lang, k);
            }
        }
        let backend_config = self.backend_config(&a.backend);
        let options = self.generate_options(&a.backend, &backend_config);
        m.config(&ResolvedGeneration {
            prompt: &prompt,
            backend: a.backend.backend,
            backend_config: &backend_config,
            generate: &options,
            template: &template,
        })?;
        let client = self.client(&a.backend, &backend_config, &mut m)?;
        let g = generate(&client, &template, &prompt, &corpus, &pool, &options)?;
        write_generation(&out, "", &g, &mut m)?;
        m.stats = serde_json::to_value(&g.calls)?;
        m.write(&out)?;

        let summary = GenerationSummary::from(&g);
        self.print(&summary, || {
            let mut s = format!("setting {}  annotator {}\n", g.setting, g.annotator);
            s.push_str(&g.report.to_table());
            if let Some(r) = &g.retry_report {
                s.push_str("after retry:\n");
                s.push_str(&r.to_table());
            }
            s.push_str(&format!("wrote {}\n", out.display()));
            s
        })
    }

    fn validate(&self, a: &ValidateArgs) -> Result<()> {
        let out = self.out_dir()?;
        let mut m = RunManifest::new("validate", self.seed);
        let corpus = self.corpus(&a.corpus, &mut m)?;
        m.input(&a.outputs)?;
        let mut latest: HashMap<String, String> = HashMap::new();
        for r in read_replay_file(&a.outputs)? {
            let id = r.utterance_id.ok_or_else(|| {
                Error::Validation(format!("{}: record without utterance_id", a.outputs.display()))
            })?;
            latest.insert(id, r.text);
        }
        let targets: Vec<Utterance> = corpus.into_iter().filter(|u| latest.contains_key(u.id())).collect();
        if targets.len() != latest.len() {
            return Err(Error::Validation("outputs reference utterances missing from the corpus".into()));
        }
        let texts: Vec<String> = targets
            .iter()
            .map(|u| phrasebreak_core::llm::clean_output(&latest[u.id()]))
            .collect();
        let report = validate_outputs(&targets, &texts, &ParseOptions::default())?.report;
        let path = out.join("validation.json");
        write_json(&path, &report)?;
        m.output(&path);
        m.write(&out)?;
        self.print(&report, || report.to_table())?;
        if a.strict && report.passed < report.total_outputs {
            return Err(Error::Validation(format!(
                "{} of {} outputs failed validation",
                report.total_outputs - report.passed,
                report.total_outputs
            )));
        }
        Ok(())
    }

    fn load_sets(&self, path: &Path, corpus: Option<&PathBuf>, m: &mut RunManifest) -> Result<Vec<AnnotationSet>> {
        let corpus = match corpus {
            Some(c) => self.corpus(c, m)?,
            None => Vec::new(),
        };
        m.input(path)?;
        load_annotation_sets(path, &corpus)
    }

    fn stats(&self, a: &StatsArgs) -> Result<()> {
        let out = self.out_dir()?;
        let mut m = RunManifest::new("stats", self.seed);
        let sets = self.load_sets(&a.annotations, a.corpus.as_ref(), &mut m)?;
        let mut rows = Vec::new();
        for s in &sets {
            let st = phrasing_stats::<f64>(s)?;
            rows.push(StatsRow {
                annotator: s.annotator.tag(),
                utterances: st.utterance_count,
                mean: BreakLabel::ALL.iter().map(|l| (*l, st.mean_of(*l))).collect(),
                std_dev: BreakLabel::ALL.iter().map(|l| (*l, st.std_of(*l))).collect(),
            });
        }
        let path = out.join("stats.json");
        write_json(&path, &rows)?;
        m.output(&path);
        m.write(&out)?;
        self.print(&rows, || {
            let mut s = format!("{:<24} {:>6} {:>16} {:>16} {:>16}\n", "annotator", "utts", "AP", "IP", "SB");
            for r in &rows {
                let cell = |l| format!("{:.2} ± {:.2}", r.mean[&l], r.std_dev[&l]);
                s.push_str(&format!(
                    "{:<24} {:>6} {:>16} {:>16} {:>16}\n",
                    r.annotator,
                    r.utterances,
                    cell(BreakLabel::AP),
                    cell(BreakLabel::IP),
                    cell(BreakLabel::SB)
                ));
            }
            s
        })
    }

    fn compare(&self, a: &CompareArgs) -> Result<()> {
        let out = self.out_dir()?;
        let mut m = RunManifest::new("compare", self.seed);
        let corpus = match &a.corpus {
            Some(c) => self.corpus(c, &mut m)?,
            None => Vec::new(),
        };
        m.input(&a.a)?;
        m.input(&a.b)?;
        let sa = load_annotation_set(&a.a, &corpus)?;
        let sb = load_annotation_set(&a.b, &corpus)?;
        let unit = match a.alpha_unit {
            AlphaUnitArg::Junction => AlphaUnit::Junction,
            AlphaUnitArg::Utterance => AlphaUnit::Utterance,
        };
        let c: ComparisonResult<f64> = compare_with(&sa, &sb, unit)?;
        let report = ComparisonReport {
            reference: sa.annotator.tag(),
            other: sb.annotator.tag(),
            alpha_unit: unit,
            result: &c,
        };
        let path = out.join("comparison.json");
        write_json(&path, &report)?;
        m.output(&path);
        m.write(&out)?;
        self.print(&report, || {
            let mut s = format!("{} vs {}\n", report.reference, report.other);
            s.push_str(&format!("{:<20} {:>10}\n", "utterances", c.compared_utterances));
            s.push_str(&format!("{:<20} {:>10}\n", "junctions", c.compared_junctions));
            s.push_str(&format!("{:<20} {:>10.2}\n", "agreement", c.agreement));
            s.push_str(&format!(
                "{:<20} {:>10.4}{}\n",
                "alpha",
                c.alpha,
                if c.alpha_degenerate { " (degenerate)" } else { "" }
            ));
            s.push_str(&format!("{:<20} {:>10.4}\n", "macro_f1", c.macro_f1));
            for (l, f) in &c.per_label_f1 {
                s.push_str(&format!("{:<20} {:>10.4}\n", format!("f1 {l}"), f));
            }
            s
        })
    }

    fn sweep(&self, a: &SweepArgs) -> Result<()> {
        let out = self.out_dir()?;
        let mut m = RunManifest::new("sweep", self.seed);
        let corpus = self.filter(self.corpus(&a.corpus, &mut m)?, &a.prompt)?;
        let template = self.template(&a.prompt, &mut m)?;
        let pool = self.pool(&a.prompt, &corpus, &mut m)?;
        let base = self.base_prompt(&a.prompt, &corpus);
        let settings: Vec<PromptConfig> = match &a.presets {
            Some(spec) => {
                let (source, target) = spec
                    .split_once(':')
                    .ok_or_else(|| Error::Validation(format!("--presets {spec:?} is not source:target")))?;
                preset_mixes(source, target)?
                    .into_iter()
                    .map(|mix| PromptConfig {
                        persona: Persona::Multilingual,
                        source_language: source.to_owned(),
                        mix,
                        ..base.clone()
                    })
                    .collect()
            }
            None if a.k.is_empty() => {
                return Err(Error::Validation("sweep needs --k or --presets".into()));
            }
            None => a
                .k
                .iter()
                .map(|&k| {
                    let mut p = base.clone();
                    p.mix = Mix::new();
                    if k > 0 {
                        p.mix.insert(p.source_language.clone(), k);
                    }
                    p
                })
                .collect(),
        };
        let mut references = Vec::new();
        for r in &a.references {
            m.input(r)?;
            references.extend(load_annotation_sets(r, &corpus)?);
        }
        let human: BTreeMap<String, f64> = match &a.human_scores {
            Some(p) => {
                m.input(p)?;
                serde_json::from_str(&fs::read_to_string(p).map_err(io_err(p))?)?
            }
            None => BTreeMap::new(),
        };
        let backend_config = self.backend_config(&a.backend);
        let options = self.generate_options(&a.backend, &backend_config);
        m.config(&serde_json::json!({
            "settings": settings,
            "backend": a.backend.backend,
            "backend_config": backend_config,
            "generate": options,
            "template": template,
            "references": references.iter().map(|r| r.annotator.tag()).collect::<Vec<_>>(),
        }))?;
        let client = self.client(&a.backend, &backend_config, &mut m)?;
        let outcome = run_sweep(&client, &template, &settings, &corpus, &pool, &references, &human, &options)?;

        let settings_dir = out.join("settings");
        fs::create_dir_all(&settings_dir).map_err(io_err(&settings_dir))?;
        let mut calls = Vec::new();
        for (i, g) in outcome.generations.iter().enumerate() {
            if let Ok(g) = g {
                write_generation(&settings_dir, &format!("{:02}-{}.", i, slug(&g.setting)), g, &mut m)?;
                calls.push(serde_json::json!({"setting": g.setting, "calls": g.calls}));
            }
        }
        for (name, body) in [
            ("sweep.jsonl", outcome.report.to_jsonl()?),
            ("sweep.tsv", outcome.report.to_tsv()),
            ("plot.tsv", outcome.report.plot_tsv()),
        ] {
            let p = out.join(name);
            fs::write(&p, body).map_err(io_err(&p))?;
            m.output(&p);
        }
        m.stats = serde_json::Value::Array(calls);
        m.write(&out)?;
        self.print(&outcome.report, || outcome.report.to_table())
    }

    fn split(&self, a: &SplitArgs) -> Result<()> {
        let out = self.out_dir()?;
        let mut m = RunManifest::new("split", self.seed);
        let corpus = self.corpus(&a.corpus, &mut m)?;
        let ratios = ratios(&a.ratios)?;
        m.config(&serde_json::json!({ "ratios": ratios, "seed": self.seed }))?;
        let split = split_dataset(&corpus, ratios, self.seed)?;
        let path = out.join("split.json");
        split.save(&path)?;
        m.output(&path);
        m.write(&out)?;
        let (tr, va, te) = split.sizes();
        let summary = serde_json::json!({ "train": tr, "valid": va, "test": te, "digest": split.digest() });
        self.print(&summary, || format!("train {tr}  valid {va}  test {te}\nwrote {}\n", path.display()))
    }

    fn train(&self, a: &TrainArgs) -> Result<()> {
        match a.precision {
            Precision::F32 => self.train_as::<f32>(a),
            Precision::F64 => self.train_as::<f64>(a),
        }
    }

    fn train_as<T: Real>(&self, a: &TrainArgs) -> Result<()> {
        let out = self.out_dir()?;
        let mut m = RunManifest::new("train", self.seed);
        let corpus = self.corpus(&a.corpus, &mut m)?;
        m.input(&a.annotations)?;
        let set = load_annotation_set(&a.annotations, &corpus)?;
        let split = match &a.split {
            Some(p) => {
                m.input(p)?;
                DatasetSplit::load(p)?
            }
            None => {
                let annotated: Vec<Utterance> = corpus.iter().filter(|u| set.get(u.id()).is_some()).cloned().collect();
                split_dataset(&annotated, ratios(&a.ratios)?, self.seed)?
            }
        };
        let mut hyper = self.file.train.clone();
        hyper.seed = self.seed;
        if let Some(e) = a.epochs {
            hyper.epochs = e;
        }
        if let Some(lr) = a.learning_rate {
            hyper.learning_rate = lr;
        }
        if let Some(l2) = a.l2 {
            hyper.l2 = l2;
        }
        if a.select_on_test {
            hyper.selection = SelectionSplit::Test;
        }
        m.config(&serde_json::json!({ "hyper": hyper, "precision": format!("{:?}", a.precision), "split_digest": split.digest() }))?;

        let train_set = labeled(&corpus, &set, Some(&split.train_ids))?;
        let valid_set = labeled(&corpus, &set, Some(&split.valid_ids))?;
        let test_set = labeled(&corpus, &set, Some(&split.test_ids))?;
        let selection = match hyper.selection {
            SelectionSplit::Validation => &valid_set,
            SelectionSplit::Test => &test_set,
        };
        let (mut model, mut report) = train::<T>(&train_set, selection, &hyper)?;
        model.metadata.annotation_source = Some(set.annotator.tag());
        model.metadata.split_digest = Some(split.digest());
        if !test_set.is_empty() {
            report.record_test(&evaluate(&model, &test_set)?);
        }
        let model_path = out.join("model.json");
        model.save(&model_path)?;
        let report_path = out.join("train_report.json");
        write_json(&report_path, &report)?;
        m.output(&model_path);
        m.output(&report_path);
        m.write(&out)?;
        self.print(&report, || train_table(&report))
    }

    fn eval(&self, a: &EvalArgs) -> Result<()> {
        match a.precision {
            Precision::F32 => self.eval_as::<f32>(a),
            Precision::F64 => self.eval_as::<f64>(a),
        }
    }

    fn eval_as<T: Real>(&self, a: &EvalArgs) -> Result<()> {
        let out = self.out_dir()?;
        let mut m = RunManifest::new("eval", self.seed);
        m.input(&a.model)?;
        let model = Model::<T>::load(&a.model)?;
        let corpus = self.corpus(&a.corpus, &mut m)?;
        m.input(&a.annotations)?;
        let set = load_annotation_set(&a.annotations, &corpus)?;
        let ids = match &a.split {
            Some(p) => {
                m.input(p)?;
                Some(DatasetSplit::load(p)?.test_ids)
            }
            None => None,
        };
        let data = labeled(&corpus, &set, ids.as_deref())?;
        let f1 = evaluate(&model, &data)?;
        let result = serde_json::json!({
            "reference": set.annotator.tag(),
            "utterances": data.len(),
            "junctions": f1.compared_junctions,
            "macro_f1": f1.macro_f1.as_f64(),
            "per_label_f1": f1.per_label.iter().map(|(l, v)| (l.to_string(), v.as_f64())).collect::<BTreeMap<_, _>>(),
            "model": model.metadata,
        });
        let path = out.join("eval.json");
        write_json(&path, &result)?;
        m.output(&path);
        m.write(&out)?;
        self.print(&result, || {
            let mut s = format!("{:<12} {:>8.4}\n", "macro_f1", f1.macro_f1.as_f64());
            for (l, v) in &f1.per_label {
                s.push_str(&format!("{:<12} {:>8.4}\n", format!("f1 {l}"), v.as_f64()));
            }
            s
        })
    }

    fn synth(&self, a: &SynthArgs) -> Result<()> {
        let out = self.out_dir()?;
        let mut m = RunManifest::new("synth", self.seed);
        m.config(&serde_json::json!({ "n": a.n, "seed": self.seed }))?;
        let corpus = rule_corpus(a.n, self.seed)?;
        let set = rule_labels(&corpus, AnnotatorKind::HumanText)?;
        let records: Vec<AnnotationRecord> = corpus
            .iter()
            .map(|u| AnnotationRecord::new(u, set.get(u.id()).expect("labelled").clone(), set.annotator.clone()))
            .collect::<Result<_>>()?;
        let corpus_path = out.join("corpus.jsonl");
        let ann_path = out.join("annotations.jsonl");
        write_corpus(&corpus_path, &corpus)?;
        write_annotation_records(&ann_path, &records)?;
        m.output(&corpus_path);
        m.output(&ann_path);
        m.write(&out)?;
        let summary = serde_json::json!({ "utterances": corpus.len(), "corpus": corpus_path, "annotations": ann_path });
        self.print(&summary, || format!("wrote {} utterances to {}\n", corpus.len(), out.display()))
    }

    fn serve_review(&self, a: &ServeArgs) -> Result<()> {
        let out = self.out_dir()?;
        let mut m = RunManifest::new("serve-review", self.seed);
        let corpus = self.corpus(&a.corpus, &mut m)?;
        let mut sets = Vec::new();
        for p in &a.annotations {
            m.input(p)?;
            sets.extend(load_annotation_sets(p, &corpus)?);
        }
        let pool = PairPool::from_sets(&corpus, &sets)?;
        let journal = a.journal.clone().unwrap_or_else(|| out.join("review"));
        let store = Arc::new(ReviewStore::open(pool, &journal)?);
        let addr = SocketAddr::new(a.bind, a.port);
        m.config(&serde_json::json!({ "bind": addr.to_string(), "journal": journal, "static_dir": a.static_dir, "pairs": store.pool().len() }))?;
        m.write(&out)?;
        eprintln!("serving {} pairs on http://{addr} (journal {})", store.pool().len(), journal.display());
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .enable_all()
            .build()
            .map_err(io_err(&journal))?;
        runtime
            .block_on(phrasebreak_review::serve(addr, store, a.static_dir.clone()))
            .map_err(|e| Error::Io {
                path: PathBuf::from(addr.to_string()),
                source: e,
            })
    }
}

fn ratios(v: &[f64]) -> Result<[f64; 3]> {
    <[f64; 3]>::try_from(v).map_err(|_| Error::Validation(format!("expected three ratios, got {}", v.len())))
}

/// Writes annotations, raw outputs and the validation report with `prefix`.
fn write_generation(dir: &Path, prefix: &str, g: &Generation, m: &mut RunManifest) -> Result<()> {
    let ann = dir.join(format!("{prefix}annotations.jsonl"));
    write_annotation_records(&ann, &g.records)?;
    let raw = dir.join(format!("{prefix}raw_outputs.jsonl"));
    write_replay_file(&raw, &g.raw_outputs)?;
    let val = dir.join(format!("{prefix}validation.json"));
    write_json(&val, &ValidationFile::from(g))?;
    for p in [ann, raw, val] {
        m.output(&p);
    }
    Ok(())
}

#[derive(Serialize)]
struct ValidationFile<'a> {
    setting: &'a str,
    config_digest: &'a str,
    annotator: String,
    first_pass: &'a ValidationReport,
    after_retry: Option<&'a ValidationReport>,
}

impl<'a> From<&'a Generation> for ValidationFile<'a> {
    fn from(g: &'a Generation) -> Self {
        ValidationFile {
            setting: &g.setting,
            config_digest: &g.config_digest,
            annotator: g.annotator.tag(),
            first_pass: &g.report,
            after_retry: g.retry_report.as_ref(),
        }
    }
}

#[derive(Serialize)]
struct GenerationSummary {
    setting: String,
    annotator: String,
    outputs: usize,
    pass_rate: f64,
    retry_pass_rate: Option<f64>,
    failure_counts: BTreeMap<String, usize>,
    cache_hits: usize,
    backend_calls: usize,
}

impl From<&Generation> for GenerationSummary {
    fn from(g: &Generation) -> Self {
        GenerationSummary {
            setting: g.setting.clone(),
            annotator: g.annotator.tag(),
            outputs: g.report.total_outputs,
            pass_rate: g.report.pass_rate,
            retry_pass_rate: g.retry_report.as_ref().map(|r| r.pass_rate),
            failure_counts: g.report.failure_counts.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            cache_hits: g.calls.cache_hits,
            backend_calls: g.calls.backend_calls,
        }
    }
}

#[derive(Serialize)]
struct StatsRow {
    annotator: String,
    utterances: usize,
    mean: BTreeMap<BreakLabel, f64>,
    std_dev: BTreeMap<BreakLabel, f64>,
}

#[derive(Serialize)]
struct ComparisonReport<'a> {
    reference: String,
    other: String,
    alpha_unit: AlphaUnit,
    #[serde(flatten)]
    result: &'a ComparisonResult<f64>,
}

fn train_table(r: &TrainReport) -> String {
    let mut s = format!("{:>5} {:>12} {:>12}\n", "epoch", "train_loss", "select_f1");
    for e in &r.epochs {
        let mark = if e.epoch == r.selected_epoch { " *" } else { "" };
        s.push_str(&format!("{:>5} {:>12.6} {:>12.4}{mark}\n", e.epoch, e.train_loss, e.selection_macro_f1));
    }
    let on = match r.hyper.selection {
        SelectionSplit::Validation => "validation",
        SelectionSplit::Test => "test",
    };
    s.push_str(&format!("selected epoch {} on {on}\n", r.selected_epoch));
    if let Some(t) = &r.test {
        s.push_str(&format!("test macro_f1 {:.4}\n", t.macro_f1));
    }
    for w in &r.warnings {
        s.push_str(&format!("warning: {w}\n"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mix_parsing() {
        let m = parse_mix("en:4, fr:12").unwrap();
        assert_eq!(m["en"], 4);
        assert_eq!(m["fr"], 12);
        assert!(parse_mix("en4").is_err());
        assert!(parse_mix("").is_err());
    }

    #[test]
    fn slugs() {
        assert_eq!(slug("FS,k=8"), "FS_k_8");
        assert_eq!(slug("en 4 + fr 12"), "en_4___fr_12");
    }
}
