use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};

use super::{Adapter, Cli, Command, EmbedderKind, EvalTask, Failure};
use crate::assembly::{
    assemble_dataset, compute_stats, import_external, read_shards, AssemblyConfig, AssemblyError, Split,
    MANIFEST_FILE,
};
use crate::config::{ImportSpec, PipelineConfig};
use crate::corpus::{adapters, apply_aliases, count_leaves, filter_by_leaves, load_manifest, write_manifest, ClipRecord};
use crate::eval::{
    aggregate_report, score_binary, score_captions, score_label_classification, score_mcq, EvalError, EvalReport,
    HttpEmbedder, LabelMatcher, ModelOutput, TrigramEmbedder,
};
use crate::fsutil::write_atomic;
use crate::llmgen::{
    default_request, load_examples, run_llm_generation, violations, ChatClient, LlmError, PromptConfig,
    ValidationRules,
};
use crate::ontology::{LabelId, Ontology};
use crate::qa::{Method, QaFormat, QaItem};
use crate::rulegen::{load_templates, RuleConfig, RuleGenerator};

const DEFAULT_TEMPLATES: &[u8] = include_bytes!("../../data/templates-v1.json");
const DEFAULT_FEWSHOT: &[u8] = include_bytes!("../../data/fewshot-v1.json");

pub(super) fn dispatch(cli: &Cli) -> Result<Value, Failure> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::GenerateRule => generate_rule(cli, &cfg),
        Command::GenerateLlm => generate_llm(cli, &cfg),
        Command::Assemble {
            inputs,
            imports,
            shard_size,
        } => assemble(cli, &cfg, inputs, imports, *shard_size),
        Command::Stats { inputs } => stats(cli, &cfg, inputs),
        Command::Eval {
            items,
            outputs,
            task,
            category_map,
            labels,
            embedder,
            baseline,
        } => eval(
            cli,
            &cfg,
            EvalArgs {
                items,
                outputs,
                task: *task,
                category_map: category_map.as_deref(),
                labels: labels.as_deref(),
                embedder: *embedder,
                baseline: baseline.as_deref(),
            },
        ),
        Command::Validate { inputs } => validate(cli, &cfg, inputs),
        Command::Convert { adapter, input, aliases } => convert(cli, &cfg, *adapter, input, aliases.as_deref()),
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p).map_err(|e| Failure::usage(e.to_string()))?,
        None => PipelineConfig::default(),
    };
    if cli.workers == Some(0) {
        return Err(Failure::usage("--workers must be at least 1"));
    }
    if let Some(w) = cli.workers {
        cfg.workers = Some(w);
    }
    if let Some(s) = cli.seed {
        cfg.global_seed = Some(s);
    }
    if !cli.format_filter.is_empty() {
        cfg.format_filter = cli.format_filter.clone();
    }
    if !cli.source_filter.is_empty() {
        cfg.source_filter = cli.source_filter.clone();
    }
    Ok(cfg)
}

fn require_seed(cfg: &PipelineConfig) -> Result<u64, Failure> {
    cfg.global_seed
        .ok_or_else(|| Failure::usage("no seed given: pass --seed or set global_seed in the config"))
}

fn workers(cfg: &PipelineConfig) -> usize {
    cfg.workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn require_path<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, Failure> {
    let p = p
        .as_deref()
        .ok_or_else(|| Failure::usage(format!("config does not name a {what} path")))?;
    must_exist(p)?;
    Ok(p)
}

fn must_exist(p: &Path) -> Result<(), Failure> {
    if p.exists() {
        Ok(())
    } else {
        Err(Failure::usage(format!("{} does not exist", p.display())))
    }
}

fn read_file(p: &Path) -> Result<Vec<u8>, Failure> {
    must_exist(p)?;
    std::fs::read(p).map_err(|e| Failure::usage(format!("reading {}: {e}", p.display())))
}

fn out_path(cli: &Cli, cfg: &PipelineConfig, default_name: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| {
        cfg.paths
            .out_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("."))
            .join(default_name)
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Failure::usage(format!("creating {}: {e}", parent.display())))?;
    }
    write_atomic(path, bytes).map_err(|e| Failure::usage(format!("writing {}: {e}", path.display())))
}

fn items_jsonl(items: &[QaItem]) -> Vec<u8> {
    let mut buf = Vec::new();
    for item in items {
        buf.extend_from_slice(item.to_json_line().as_bytes());
        buf.push(b'\n');
    }
    buf
}

fn report_path(items_path: &Path) -> PathBuf {
    items_path.with_extension("report.json")
}

fn load_clips(cfg: &PipelineConfig) -> Result<Vec<ClipRecord>, Failure> {
    if cfg.paths.manifests.is_empty() {
        return Err(Failure::usage("config lists no manifests"));
    }
    let mut clips = Vec::new();
    for m in &cfg.paths.manifests {
        must_exist(m)?;
        let f = std::fs::File::open(m).map_err(|e| Failure::usage(format!("{}: {e}", m.display())))?;
        let loaded = load_manifest(BufReader::new(f)).map_err(|e| Failure::data(format!("{}: {e}", m.display())))?;
        clips.extend(loaded);
    }
    if let Some(keep) = cfg.source_keep() {
        clips.retain(|c| keep.contains(&c.source));
    }
    Ok(clips)
}

fn load_ontology(cfg: &PipelineConfig) -> Result<Ontology, Failure> {
    let p = require_path(&cfg.paths.ontology, "ontology")?;
    Ontology::parse(&read_file(p)?).map_err(|e| Failure::data(format!("{}: {e}", p.display())))
}

fn generate_rule(cli: &Cli, cfg: &PipelineConfig) -> Result<Value, Failure> {
    let seed = require_seed(cfg)?;
    let ontology = load_ontology(cfg)?;
    let templates_raw = match &cfg.paths.templates {
        Some(p) => read_file(p)?,
        None => DEFAULT_TEMPLATES.to_vec(),
    };
    let templates = load_templates(&templates_raw).map_err(|e| Failure::data(e.to_string()))?;
    let clips = load_clips(cfg)?;
    let root = LabelId::from(cfg.music_root.as_str());
    let leaves = ontology.leaf_labels(&root).map_err(|e| Failure::usage(format!("music_root: {e}")))?;
    let music_clips = filter_by_leaves(&clips, &leaves, &ontology);
    let freqs = count_leaves(&music_clips, &leaves);
    eprintln!(
        "generate-rule: {} of {} clips carry a music leaf label",
        music_clips.len(),
        clips.len()
    );

    let mut rule_cfg = RuleConfig::new(seed);
    rule_cfg.plan = cfg.plan;
    rule_cfg.source_plans = cfg.source_plans.clone();
    rule_cfg.mcq_options = cfg.mcq_options;
    rule_cfg.keep_formats = cfg.format_keep();
    let generator =
        RuleGenerator::new(&ontology, &root, &freqs, templates, rule_cfg).map_err(|e| Failure::data(e.to_string()))?;
    let n_workers = workers(cfg);
    let started = Instant::now();
    let (items, report) = generator
        .generate_corpus(&music_clips, n_workers)
        .map_err(|e| Failure::usage(e.to_string()))?;
    let secs = started.elapsed().as_secs_f64();
    let rate = items.len() as f64 / secs.max(1e-9);
    eprintln!(
        "generate-rule: {} items in {secs:.2}s on {n_workers} workers ({rate:.0} items/s)",
        items.len()
    );
    for e in report.errors.iter().take(5) {
        log::warn!("{} / {}: {}", e.audio_id, e.leaf, e.message);
    }

    let out = out_path(cli, cfg, "rule_items.jsonl");
    write_file(&out, &items_jsonl(&items))?;
    let report_json = serde_json::to_vec_pretty(&report).expect("report serialize");
    write_file(&report_path(&out), &report_json)?;
    Ok(json!({
        "output": out,
        "clips": clips.len(),
        "music_clips": music_clips.len(),
        "items": items.len(),
        "by_format": report.items,
        "widened_pools": report.widened_pools,
        "binary_fallbacks": report.binary_fallbacks,
        "errors": report.errors.len(),
        "items_per_sec": rate.round(),
    }))
}

fn llm_failure(e: LlmError) -> Failure {
    if e.is_service_error() {
        Failure::service(e.to_string())
    } else if matches!(e, LlmError::Config(_)) {
        Failure::usage(e.to_string())
    } else {
        Failure::data(e.to_string())
    }
}

fn generate_llm(cli: &Cli, cfg: &PipelineConfig) -> Result<Value, Failure> {
    let rules = ValidationRules {
        mcq_options: Some(cfg.mcq_options),
    };
    let fewshot_raw = match &cfg.paths.fewshot {
        Some(p) => read_file(p)?,
        None => DEFAULT_FEWSHOT.to_vec(),
    };
    let examples = load_examples(&fewshot_raw, &rules).map_err(llm_failure)?;
    let mut requested = if cfg.llm_request.is_empty() {
        default_request()
    } else {
        cfg.llm_request.clone()
    };
    if let Some(keep) = cfg.format_keep() {
        requested.retain(|r| keep.contains(&r.format));
        if requested.is_empty() {
            return Err(Failure::usage("format filter leaves nothing to request"));
        }
    }
    let clips = load_clips(cfg)?;
    let mut endpoint = cfg.llm.clone();
    if let Some(dir) = &cfg.paths.cache_dir {
        endpoint.cache_dir = Some(dir.clone());
    }
    if let Some(w) = cfg.workers {
        endpoint.concurrency = w;
    }
    let client = ChatClient::new(endpoint);
    if std::env::var(&cfg.llm.api_key_env).map_or(true, |k| k.is_empty()) {
        log::warn!("{} is not set; requests carry no credentials", cfg.llm.api_key_env);
    }
    let prompt = PromptConfig {
        mcq_options: cfg.mcq_options,
        ..PromptConfig::default()
    };
    let (items, report) =
        run_llm_generation(&client, &clips, &examples, &requested, &prompt, &rules).map_err(llm_failure)?;
    eprintln!(
        "generate-llm: {} items kept, {} rejected ({:.1}%), {} network requests",
        report.parsed,
        report.rejected,
        100.0 * report.rejection_rate(),
        client.network_requests()
    );
    let calls = clips.len() as u64 - report.skipped_no_context;
    if calls > 0 && report.failed_calls.len() as u64 == calls {
        return Err(Failure::service(format!(
            "every request failed; first: {}",
            report.failed_calls[0].1
        )));
    }
    let out = out_path(cli, cfg, "llm_items.jsonl");
    write_file(&out, &items_jsonl(&items))?;
    let report_json = json!({
        "clips": report.clips,
        "skipped_no_context": report.skipped_no_context,
        "requested": report.requested,
        "parsed": report.parsed,
        "rejected": report.rejected,
        "rejection_rate": report.rejection_rate(),
        "rejection_reasons": report.rejection_reasons,
        "failed_calls": report.failed_calls,
    });
    write_file(&report_path(&out), serde_json::to_string_pretty(&report_json).unwrap().as_bytes())?;
    Ok(json!({
        "output": out,
        "items": items.len(),
        "rejected": report.rejected,
        "failed_calls": report.failed_calls.len(),
        "network_requests": client.network_requests(),
    }))
}

/// Items from a JSONL file, a shard directory, or a directory of split
/// shard directories.
pub(super) fn read_items(path: &Path) -> Result<Vec<QaItem>, Failure> {
    must_exist(path)?;
    if path.is_dir() {
        if path.join(MANIFEST_FILE).exists() {
            return read_shards(path).map_err(shard_failure);
        }
        let mut items = Vec::new();
        let mut found = false;
        for split in Split::ALL {
            let dir = path.join(split.as_str());
            if dir.join(MANIFEST_FILE).exists() {
                found = true;
                items.extend(read_shards(&dir).map_err(shard_failure)?);
            }
        }
        if !found {
            return Err(Failure::usage(format!("{} holds no shard manifest", path.display())));
        }
        return Ok(items);
    }
    let raw = std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Failure::data(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn shard_failure(e: AssemblyError) -> Failure {
    match e {
        AssemblyError::Io(io) => Failure::usage(io.to_string()),
        other => Failure::data(other.to_string()),
    }
}

fn apply_filters(items: &mut Vec<QaItem>, cfg: &PipelineConfig) {
    if let Some(keep) = cfg.source_keep() {
        items.retain(|i| keep.contains(&i.source));
    }
    if let Some(keep) = cfg.format_keep() {
        items.retain(|i| keep.contains(&i.format));
    }
}

fn assemble(
    cli: &Cli,
    cfg: &PipelineConfig,
    inputs: &[PathBuf],
    imports: &[ImportSpec],
    shard_size: Option<usize>,
) -> Result<Value, Failure> {
    let seed = require_seed(cfg)?;
    let mut items = Vec::new();
    for p in inputs {
        items.extend(read_items(p)?);
    }
    for spec in cfg.paths.imports.iter().chain(imports) {
        let raw = read_file(&spec.path)?;
        let text = String::from_utf8(raw).map_err(|e| Failure::data(format!("{}: {e}", spec.path.display())))?;
        let imported =
            import_external(&text, spec.source).map_err(|e| Failure::data(format!("{}: {e}", spec.path.display())))?;
        eprintln!("assemble: imported {} items from {}", imported.len(), spec.path.display());
        items.extend(imported);
    }
    if items.is_empty() && inputs.is_empty() && cfg.paths.imports.is_empty() && imports.is_empty() {
        return Err(Failure::usage("nothing to assemble: pass --input or --import"));
    }
    if let Some(keep) = cfg.source_keep() {
        items.retain(|i| keep.contains(&i.source));
    }
    let config = AssemblyConfig {
        global_seed: seed,
        ratios: cfg.split,
        shard_size: shard_size.unwrap_or(cfg.shard_size),
        keep_formats: cfg.format_keep(),
    };
    if config.shard_size == 0 {
        return Err(Failure::usage("shard size must be at least 1"));
    }
    let out = out_path(cli, cfg, "dataset");
    let report = assemble_dataset(items, &config, &out).map_err(|e| match e {
        AssemblyError::BadRatio(_) | AssemblyError::Config(_) | AssemblyError::Io(_) => Failure::usage(e.to_string()),
        other => Failure::data(other.to_string()),
    })?;
    eprint!("{}", report.stats.render_text());
    let splits: BTreeMap<&str, u64> = report.splits.iter().map(|(s, m)| (s.as_str(), m.total_items)).collect();
    Ok(json!({
        "output": out,
        "input_items": report.input_items,
        "dropped_by_format": report.dropped_by_format,
        "duplicates_removed": report.duplicates_removed,
        "splits": splits,
        "total_items": report.stats.grand_total(),
    }))
}

fn stats(cli: &Cli, cfg: &PipelineConfig, inputs: &[PathBuf]) -> Result<Value, Failure> {
    let mut items = Vec::new();
    for p in inputs {
        items.extend(read_items(p)?);
    }
    apply_filters(&mut items, cfg);
    let stats = compute_stats(&items);
    eprint!("{}", stats.render_text());
    if let Some(out) = &cli.out {
        write_file(out, stats.to_json().as_bytes())?;
    }
    Ok(json!({
        "items": items.len(),
        "table": stats.table(),
    }))
}

struct EvalArgs<'a> {
    items: &'a Path,
    outputs: &'a Path,
    task: EvalTask,
    category_map: Option<&'a Path>,
    labels: Option<&'a Path>,
    embedder: EmbedderKind,
    baseline: Option<&'a Path>,
}

fn eval_failure(e: EvalError) -> Failure {
    match e {
        EvalError::Embedder(_) | EvalError::DimMismatch { .. } => Failure::service(e.to_string()),
        EvalError::TooFewCandidates(_) => Failure::usage(e.to_string()),
        other => Failure::data(other.to_string()),
    }
}

fn read_labels(p: &Path) -> Result<Vec<String>, Failure> {
    let raw = String::from_utf8(read_file(p)?).map_err(|e| Failure::usage(e.to_string()))?;
    if raw.trim_start().starts_with('[') {
        serde_json::from_str(&raw).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))
    } else {
        Ok(raw.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
    }
}

fn eval(cli: &Cli, cfg: &PipelineConfig, args: EvalArgs<'_>) -> Result<Value, Failure> {
    let mut items = read_items(args.items)?;
    apply_filters(&mut items, cfg);
    let raw_outputs = String::from_utf8(read_file(args.outputs)?).map_err(|e| Failure::data(e.to_string()))?;
    let outputs = crate::eval::load_outputs(&raw_outputs).map_err(eval_failure)?;
    let format_of: HashMap<&str, QaFormat> = items.iter().map(|i| (i.qa_id.as_str(), i.format)).collect();
    if let Some(bad) = outputs.iter().find(|o| !format_of.contains_key(o.qa_id.as_str())) {
        return Err(Failure::data(format!("output references unknown qa_id {}", bad.qa_id)));
    }
    let subset = |formats: &[QaFormat]| -> (Vec<QaItem>, Vec<ModelOutput>) {
        let its: Vec<QaItem> = items.iter().filter(|i| formats.contains(&i.format)).cloned().collect();
        let outs = outputs
            .iter()
            .filter(|o| formats.contains(&format_of[o.qa_id.as_str()]))
            .cloned()
            .collect();
        (its, outs)
    };
    let category_map: Option<BTreeMap<String, String>> = match args.category_map {
        Some(p) => Some(serde_json::from_slice(&read_file(p)?).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?),
        None => None,
    };
    let mut fragments = Vec::new();
    let wants = |t: EvalTask| args.task == t || args.task == EvalTask::All;
    if wants(EvalTask::Mcq) {
        let (its, outs) = subset(&[QaFormat::MultipleChoice]);
        if !its.is_empty() || args.task == EvalTask::Mcq {
            fragments.push(score_mcq(&its, &outs, category_map.as_ref()).map_err(eval_failure)?);
        }
    }
    if wants(EvalTask::Binary) {
        let (its, outs) = subset(&[QaFormat::Binary]);
        if !its.is_empty() || args.task == EvalTask::Binary {
            fragments.push(score_binary(&its, &outs).map_err(eval_failure)?);
        }
    }
    if wants(EvalTask::Caption) {
        let (its, outs) = subset(&[QaFormat::Caption]);
        if !its.is_empty() || args.task == EvalTask::Caption {
            fragments.push(score_captions(&its, &outs).map_err(eval_failure)?);
        }
    }
    if args.task == EvalTask::Label || (args.task == EvalTask::All && args.labels.is_some()) {
        let labels_path = args
            .labels
            .ok_or_else(|| Failure::usage("the label task needs --labels"))?;
        let candidates = read_labels(labels_path)?;
        let (its, outs) = subset(&[QaFormat::OpenEnded]);
        let trigram = TrigramEmbedder::default();
        let http;
        let embedder: &dyn crate::eval::Embedder = match args.embedder {
            EmbedderKind::Trigram => &trigram,
            EmbedderKind::Http => {
                http = HttpEmbedder::new(cfg.embedder.clone());
                &http
            }
        };
        let matcher = LabelMatcher::new(embedder);
        fragments.push(score_label_classification(&its, &outs, &candidates, &matcher).map_err(eval_failure)?);
    }
    let mut report = aggregate_report(fragments).map_err(eval_failure)?;
    if let Some(p) = args.baseline {
        let baseline: EvalReport =
            serde_json::from_slice(&read_file(p)?).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?;
        report = report.with_baseline(&baseline);
    }
    let out = out_path(cli, cfg, "eval_report.json");
    write_file(&out, report.to_json().as_bytes())?;
    let tasks: BTreeMap<&str, f64> = report.tasks.iter().map(|(k, t)| (k.as_str(), t.value)).collect();
    Ok(json!({
        "output": out,
        "items": items.len(),
        "outputs": outputs.len(),
        "tasks": tasks,
        "overall_accuracy": report.overall.accuracy,
    }))
}

fn validate(cli: &Cli, cfg: &PipelineConfig, inputs: &[PathBuf]) -> Result<Value, Failure> {
    let strict = ValidationRules {
        mcq_options: Some(cfg.mcq_options),
    };
    let lenient = ValidationRules { mcq_options: None };
    let mut problems: Vec<Value> = Vec::new();
    let mut checked = 0usize;
    let mut seen: HashMap<String, usize> = HashMap::new();
    for p in inputs {
        let items = match read_items(p) {
            Ok(items) => items,
            Err(f) if f.code == 2 => {
                problems.push(json!({"file": p, "problems": [f.message]}));
                continue;
            }
            Err(f) => return Err(f),
        };
        for item in &items {
            checked += 1;
            let mut v = match item.method {
                Method::Imported => violations(item, &lenient)
                    .into_iter()
                    .filter(|m| !m.starts_with("question must end"))
                    .collect(),
                _ => violations(item, &strict),
            };
            *seen.entry(item.qa_id.clone()).or_default() += 1;
            if seen[&item.qa_id] == 2 {
                v.push("duplicate qa_id".into());
            }
            if !v.is_empty() {
                problems.push(json!({"qa_id": item.qa_id, "file": p, "problems": v}));
            }
        }
    }
    let report = json!({"checked": checked, "violations": problems.len(), "details": problems});
    if let Some(out) = &cli.out {
        write_file(out, serde_json::to_string_pretty(&report).unwrap().as_bytes())?;
    }
    if problems.is_empty() {
        Ok(json!({"checked": checked, "violations": 0}))
    } else {
        for p in problems.iter().take(20) {
            eprintln!("{p}");
        }
        let mut f = Failure::data(format!("{} invalid entries", problems.len()));
        let offending: Vec<&Value> = problems.iter().filter_map(|p| p.get("qa_id")).take(100).collect();
        f.details = json!({"checked": checked, "violations": problems.len(), "offending": offending, "details": problems.iter().take(100).collect::<Vec<_>>()});
        Err(f)
    }
}

fn convert(cli: &Cli, cfg: &PipelineConfig, adapter: Adapter, input: &Path, aliases: Option<&Path>) -> Result<Value, Failure> {
    let out = cli
        .out
        .clone()
        .ok_or_else(|| Failure::usage("convert needs --out"))?;
    let raw = read_file(input)?;
    let mut clips = match adapter {
        Adapter::Musiccaps => adapters::musiccaps_csv(raw.as_slice()),
        Adapter::Mtt => adapters::mtt_annotations(raw.as_slice()),
        Adapter::Fma => adapters::fma_tracks(raw.as_slice()),
    }
    .map_err(|e| Failure::data(format!("{}: {e}", input.display())))?;
    if let Some(alias_path) = aliases {
        let table: BTreeMap<String, LabelId> = serde_json::from_slice(&read_file(alias_path)?)
            .map_err(|e| Failure::usage(format!("{}: {e}", alias_path.display())))?;
        let table = table.into_iter().map(|(k, v)| (k.to_lowercase(), v)).collect();
        let ontology = load_ontology(cfg)?;
        for clip in &mut clips {
            apply_aliases(clip, &table, &ontology);
        }
    }
    let mut buf = Vec::new();
    write_manifest(&clips, &mut buf).map_err(|e| Failure::usage(e.to_string()))?;
    write_file(&out, &buf)?;
    let labelled = clips.iter().filter(|c| !c.labels.is_empty()).count();
    let sources: BTreeSet<&str> = clips.iter().map(|c| c.source.as_str()).collect();
    Ok(json!({"output": out, "clips": clips.len(), "labelled": labelled, "sources": sources}))
}
