use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde_json::json;

use vaxkit_core::corpus::{load_csv, summarize, TweetRecord};
use vaxkit_core::finetune::{load_state, save_state, train, validate_threshold, Backend};
use vaxkit_core::metrics::{evaluate_with, PredictionPair};
use vaxkit_core::runfile::{read_run, write_run, RunFile};
use vaxkit_core::zeroshot::{
    HttpChatEndpoint, PromptTemplate, ReplayLog, ResponseCache, ResponseSource, TranscriptWriter,
    ZeroShotClassifier, API_KEY_ENV,
};

use crate::config::Settings;
use crate::{Command, CliError, EvaluateArgs, Outcome, PartialOutputs, PredictArgs, SummarizeArgs, TrainArgs, ZeroShotArgs};

pub fn dispatch(
    command: &Command,
    settings: &Settings,
    env: &dyn Fn(&str) -> Option<String>,
    partial: &mut PartialOutputs,
) -> Result<Outcome, CliError> {
    match command {
        Command::Train(a) => cmd_train(a, settings, partial),
        Command::Predict(a) => cmd_predict(a, settings, partial),
        Command::Zeroshot(a) => cmd_zeroshot(a, settings, env, partial),
        Command::Evaluate(a) => cmd_evaluate(a, settings, &command.primary_output(), partial),
        Command::Summarize(a) => cmd_summarize(a, settings, &command.primary_output(), partial),
    }
}

fn paths<const N: usize>(entries: [(&str, &Path); N]) -> BTreeMap<String, PathBuf> {
    entries.into_iter().map(|(k, p)| (k.to_string(), p.to_path_buf())).collect()
}

/// Run files are tagged with their file stem.
fn method_tag(out: &Path) -> String {
    out.file_stem().map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned())
}

pub fn cmd_train(args: &TrainArgs, settings: &Settings, partial: &mut PartialOutputs) -> Result<Outcome, CliError> {
    let records = load_csv(&args.train, true, &settings.data)?;
    let backend = Backend::resolve(&settings.train.backend, settings.train.embedding_server.as_deref())?;
    let config = settings.training_config();
    println!(
        "training on {} records: backend {}, {} epochs, batch {}, lr {}, {} encoder",
        records.len(),
        settings.train.backend,
        config.epochs,
        config.batch_size,
        config.learning_rate,
        if config.freeze_encoder { "frozen" } else { "fine-tuned" }
    );
    let state = train(&records, backend, &config)?;

    let log = &state.training_log;
    for entry in log {
        if entry.epoch == 1 || entry.epoch % 10 == 0 || entry.epoch == log.len() {
            println!("epoch {:>4}  mean loss {:.6}", entry.epoch, entry.mean_loss);
        }
    }
    partial.track(&args.out);
    save_state(&state, &args.out)?;
    println!("checkpoint written to {}", args.out.display());

    Ok(Outcome {
        inputs: paths([("train", &args.train)]),
        outputs: paths([("checkpoint", &args.out)]),
        seed: Some(config.seed),
        details: json!({
            "records": records.len(),
            "backend": state.spec().model_name,
            "freeze_encoder": state.encoder_frozen,
            "training_log": log,
        }),
    })
}

pub fn cmd_predict(args: &PredictArgs, settings: &Settings, partial: &mut PartialOutputs) -> Result<Outcome, CliError> {
    let threshold = settings.predict.threshold;
    validate_threshold(threshold)?;
    let mut state = load_state(&args.checkpoint)?;
    if let (Backend::Remote(remote), Some(url)) = (&mut state.backend, &settings.train.embedding_server) {
        remote.connect(url.clone());
    }
    let records = load_csv(&args.test, false, &settings.data)?;
    let mut run = RunFile::new(method_tag(&args.out));
    for r in &records {
        run.push(r.id.clone(), state.predict(&r.text, threshold)?);
    }
    partial.track(&args.out);
    write_run(&run, &args.out, &settings.data.delimiter)?;
    println!("{} predictions written to {}", run.rows.len(), args.out.display());

    Ok(Outcome {
        inputs: paths([("test", &args.test), ("checkpoint", &args.checkpoint)]),
        outputs: paths([("run", &args.out)]),
        seed: None,
        details: json!({ "rows": run.rows.len(), "threshold": threshold, "backend": state.spec().model_name }),
    })
}

pub fn cmd_zeroshot(
    args: &ZeroShotArgs,
    settings: &Settings,
    env: &dyn Fn(&str) -> Option<String>,
    partial: &mut PartialOutputs,
) -> Result<Outcome, CliError> {
    let z = &settings.zeroshot;
    let records = load_csv(&args.test, false, &settings.data)?;
    let transcript_path = args
        .transcript
        .clone()
        .unwrap_or_else(|| crate::with_suffix(&args.out, ".transcript.jsonl"));

    // Load the replay file before the transcript is opened, in case they are
    // the same file.
    let mut replayed = match &args.replay {
        Some(path) => vaxkit_core::zeroshot::read_transcript(path)?,
        None => Vec::new(),
    };
    let (writer, resumed) = TranscriptWriter::resume(&transcript_path)?;
    if !resumed.is_empty() {
        println!("resuming: {} exchanges already in {}", resumed.len(), transcript_path.display());
    }
    replayed.extend(resumed);

    let endpoint = z.endpoint.as_ref().map(|url| {
        let key = env(API_KEY_ENV).filter(|k| !k.is_empty());
        HttpChatEndpoint::new(url.clone(), key, Duration::from_secs(z.timeout_secs))
    });
    let zs_settings = settings.zero_shot_settings();
    let mut classifier = match &endpoint {
        Some(e) => ZeroShotClassifier::new(e, zs_settings)?,
        None if args.replay.is_some() => ZeroShotClassifier::offline(zs_settings)?,
        None => {
            return Err(CliError::Config(
                "no chat endpoint configured; pass --endpoint or replay a transcript with --replay".into(),
            ))
        }
    };
    if !replayed.is_empty() {
        classifier = classifier.with_replay(ReplayLog::from_records(&replayed));
    }
    if let Some(dir) = &z.cache_dir {
        classifier = classifier.with_cache(ResponseCache::dir(dir)?);
    }
    let template = match &z.template {
        Some(path) => PromptTemplate::load(path)?,
        None => PromptTemplate::builtin(),
    };
    let template_name = template.name.clone();
    classifier = classifier.with_template(template);

    let items: Vec<(String, String)> = records.iter().map(|r| (r.id.clone(), r.text.clone())).collect();
    let exchanges = classifier.classify_batch(&items, Some(&writer))?;

    let mut run = RunFile::new(method_tag(&args.out));
    let mut by_source: HashMap<ResponseSource, usize> = HashMap::new();
    let mut attempts = 0u64;
    for ((id, _), ex) in items.iter().zip(&exchanges) {
        run.push(id.clone(), ex.parsed);
        *by_source.entry(ex.source).or_default() += 1;
        attempts += u64::from(ex.attempt_count);
    }
    partial.track(&args.out);
    write_run(&run, &args.out, &settings.data.delimiter)?;
    let count = |s| by_source.get(&s).copied().unwrap_or(0);
    println!(
        "{} tweets classified ({} from endpoint, {} from cache, {} replayed); run file {}",
        run.rows.len(),
        count(ResponseSource::Endpoint),
        count(ResponseSource::Cache),
        count(ResponseSource::Replay),
        args.out.display()
    );

    let mut inputs = paths([("test", &args.test)]);
    if let Some(replay) = &args.replay {
        inputs.insert("replay".into(), replay.clone());
    }
    Ok(Outcome {
        inputs,
        outputs: paths([("run", &args.out), ("transcript", &transcript_path)]),
        seed: None,
        details: json!({
            "rows": run.rows.len(),
            "endpoint_calls": attempts,
            "from_endpoint": count(ResponseSource::Endpoint),
            "from_cache": count(ResponseSource::Cache),
            "from_replay": count(ResponseSource::Replay),
            "template": template_name,
        }),
    })
}

/// Pairs run rows with gold records, in gold order. Ids must match exactly.
pub fn align(run: &RunFile, gold: &[TweetRecord]) -> Result<Vec<PredictionPair>, CliError> {
    let predicted: HashMap<&str, _> = run.rows.iter().map(|r| (r.id.as_str(), r.labels)).collect();
    let gold_ids: HashSet<&str> = gold.iter().map(|r| r.id.as_str()).collect();
    let missing: Vec<String> = gold
        .iter()
        .filter(|r| !predicted.contains_key(r.id.as_str()))
        .map(|r| r.id.clone())
        .collect();
    let extra: Vec<String> = run
        .rows
        .iter()
        .filter(|r| !gold_ids.contains(r.id.as_str()))
        .map(|r| r.id.clone())
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(CliError::IdMismatch { missing, extra });
    }
    gold.iter()
        .map(|r| {
            Ok(PredictionPair {
                id: r.id.clone(),
                predicted: predicted[r.id.as_str()],
                gold: r.gold_or_err()?,
            })
        })
        .collect()
}

pub fn cmd_evaluate(
    args: &EvaluateArgs,
    settings: &Settings,
    out: &Path,
    partial: &mut PartialOutputs,
) -> Result<Outcome, CliError> {
    let gold = load_csv(&args.test, true, &settings.data)?;
    let run = read_run(&args.run, &settings.data.delimiter)?;
    let pairs = align(&run, &gold)?;
    let report = evaluate_with(&pairs, settings.metric_options())?;

    print!("{}", report.render_summary(&run.method_tag));
    println!();
    print!("{}", report.render_per_label());

    partial.track(out);
    std::fs::write(out, report.to_jsonl()).map_err(|source| CliError::Io { path: out.to_path_buf(), source })?;

    Ok(Outcome {
        inputs: paths([("run", &args.run), ("test", &args.test)]),
        outputs: paths([("report", out)]),
        seed: None,
        details: json!({
            "method": run.method_tag,
            "macro_f1": report.macro_f1,
            "jaccard": report.jaccard,
            "pairs": report.pair_count,
        }),
    })
}

pub fn cmd_summarize(
    args: &SummarizeArgs,
    settings: &Settings,
    out: &Path,
    partial: &mut PartialOutputs,
) -> Result<Outcome, CliError> {
    let (role, input) = match (&args.train, &args.test) {
        (Some(p), _) => ("train", p),
        (None, Some(p)) => ("test", p),
        (None, None) => unreachable!("clap requires one input"),
    };
    let records = load_csv(input, true, &settings.data)?;
    let summary = summarize(&records)?;
    print!("{}", summary.render_table());

    partial.track(out);
    let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    text.push('\n');
    std::fs::write(out, text).map_err(|source| CliError::Io { path: out.to_path_buf(), source })?;

    Ok(Outcome {
        inputs: paths([(role, input.as_path())]),
        outputs: paths([("summary", out)]),
        seed: None,
        details: json!({ "records": summary.record_count }),
    })
}
