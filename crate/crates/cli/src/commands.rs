use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use breps::config::{EmbedderName, EngineConfig};
use breps::corpus::{
    build_index, load_corpus, load_queries, load_triplets, CorpusRecord, IndexOptions,
};
use breps::cost::compare_costs;
use breps::embed::{Embedder, EmbedderKind, HashEmbedder, QuadraticCostEmbedder, ServiceEmbedder};
use breps::eval::{
    evaluate_with, paired_t_test, read_qrels, read_run, Metric, Run, RunEntry, RUN_TAG,
};
use breps::scoring::{Reranker, ScoreStatus};
use breps::store::{read_store, StoreWriter};
use breps::train::{mean_loss, resolve_triplet, train as train_head, write_head, ProjectionHead};
use breps::{Error, Pool};
use serde_json::json;

use crate::{BenchArgs, EvalArgs, ExportArgs, IndexArgs, RerankArgs, TrainArgs};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_ENVIRONMENT: u8 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }
}

fn kind_name(e: &Error) -> &'static str {
    match e {
        Error::Io { .. } => "IoError",
        Error::DimensionMismatch { .. } => "DimensionMismatch",
        Error::ZeroVector => "ZeroVector",
        Error::EmptyScores => "EmptyScores",
        Error::NoBlocks(_) => "NoBlocks",
        Error::DuplicateDocId(_) => "DuplicateDocId",
        Error::InvalidDocId(_) => "InvalidDocId",
        Error::BadMagic(_) => "BadMagic",
        Error::TruncatedFile(_) => "TruncatedFile",
        Error::Corrupt(_) => "CorruptFile",
        Error::ServiceUnavailable(_) => "ServiceUnavailable",
        Error::InvalidResponse(_) => "InvalidResponse",
        Error::MalformedLine { .. } => "MalformedLine",
        Error::MissingDocument(_) => "MissingDocument",
        Error::InvalidTriplet(_) => "InvalidTriplet",
        Error::NonFiniteLoss { .. } => "NonFiniteLoss",
        Error::InvalidConfig { .. } => "InvalidConfig",
        Error::InvalidArgument(_) => "InvalidArgument",
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::ServiceUnavailable(_) => EXIT_ENVIRONMENT,
            Error::InvalidConfig { .. } | Error::InvalidArgument(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        Self {
            code,
            message: format!("{}: {e}", kind_name(&e)),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::from(Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn require(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::data(format!(
            "{what} not found: {}",
            path.display()
        )))
    }
}

pub struct Context {
    pub config: EngineConfig,
    pub parallelism: usize,
}

impl Context {
    pub fn load(config: Option<&Path>, parallelism: Option<usize>) -> Result<Self, CliError> {
        let config = match config {
            Some(p) => {
                if !p.is_file() {
                    return Err(CliError::usage(format!(
                        "config not found: {}",
                        p.display()
                    )));
                }
                EngineConfig::load(p)?
            }
            None => EngineConfig::default(),
        };
        let parallelism = parallelism.unwrap_or(config.parallelism);
        Ok(Self {
            config,
            parallelism,
        })
    }

    fn pool(&self) -> Pool {
        Pool::new(self.parallelism)
    }

    /// Embedder from config; service embedders are health-checked first.
    fn embedder(&self) -> Result<Box<dyn Embedder>, CliError> {
        let e = self.config.build_embedder()?;
        if self.config.embedder.kind == EmbedderName::Service {
            if let Some(url) = self.config.service_url() {
                ServiceEmbedder::new(url, self.config.dim).health()?;
            }
        }
        Ok(e)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| io_err(path, e))
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn index(ctx: &Context, a: &IndexArgs) -> Result<(), CliError> {
    require(&a.corpus, "corpus")?;
    let embedder = ctx.embedder()?;
    let opts = IndexOptions {
        segmentation: ctx.config.segmentation_config()?,
        format: ctx.config.input_format(),
        ..Default::default()
    };
    let writer = StoreWriter::create(&a.out_store, ctx.config.dim)?;
    let report = build_index(
        load_corpus(&a.corpus)?,
        &opts,
        embedder.as_ref(),
        writer,
        &ctx.pool(),
    )?;
    log::info!(
        "indexed {} documents ({} blocks) into {}",
        report.summary.doc_count,
        report.summary.block_count,
        a.out_store.display()
    );
    println!(
        "{}",
        serde_json::to_string(&report.summary).expect("summary serializes")
    );
    Ok(())
}

pub fn rerank(ctx: &Context, a: &RerankArgs) -> Result<(), CliError> {
    require(&a.queries, "queries")?;
    require(&a.candidates, "candidate run")?;
    require(&a.store, "store")?;
    let store = read_store(&a.store)?;
    let queries = load_queries(&a.queries)?;
    let candidates = read_run(&a.candidates)?;
    let (mut scoring, head) = ctx.config.load_scoring()?;
    if let Some(n) = a.blocks {
        if n == 0 {
            return Err(CliError::usage("--blocks must be >= 1"));
        }
        scoring.max_blocks = Some(n);
    }
    if let Some(n) = scoring.max_blocks {
        let stored_max = store
            .doc_ids()
            .filter_map(|id| store.block_count(id))
            .max()
            .unwrap_or(0);
        if n > stored_max {
            log::warn!("--blocks {n} exceeds the {stored_max} blocks stored per document; using stored blocks");
        }
    }
    let embedder = ctx.embedder()?;
    let reranker = Reranker::new(&store, embedder.as_ref(), scoring)
        .with_head(head.as_ref())
        .with_format(ctx.config.input_format())
        .with_pool(ctx.pool());

    let mut out = Run::new();
    let mut flagged = BTreeMap::new();
    for (qid, ranking) in candidates.iter() {
        let text = queries.get(qid).ok_or_else(|| {
            CliError::data(format!(
                "query {qid:?} not found in {}",
                a.queries.display()
            ))
        })?;
        let ids: Vec<String> = ranking.iter().map(|e| e.doc_id.clone()).collect();
        let scored = reranker.rerank(text, &ids)?;
        let problems: Vec<_> = scored
            .iter()
            .filter(|d| d.status != ScoreStatus::Scored)
            .map(|d| json!({"doc_id": d.doc_id, "status": d.status}))
            .collect();
        if !problems.is_empty() {
            log::warn!(
                "query {qid}: {} candidates could not be scored",
                problems.len()
            );
            flagged.insert(qid.to_string(), problems);
        }
        out.insert(
            qid,
            scored
                .into_iter()
                .map(|d| RunEntry {
                    doc_id: d.doc_id,
                    score: d.score,
                })
                .collect(),
        )?;
    }
    let mut w = create(&a.out_run)?;
    out.write_to(&mut w, RUN_TAG)
        .and_then(|_| w.flush())
        .map_err(|e| io_err(&a.out_run, e))?;
    if !flagged.is_empty() {
        let path = sidecar(&a.out_run, ".report.json");
        let mut w = create(&path)?;
        serde_json::to_writer_pretty(&mut w, &json!({ "unscored": flagged }))
            .map_err(|e| CliError::data(e.to_string()))?;
        w.flush().map_err(|e| io_err(&path, e))?;
    }
    log::info!("wrote {} queries to {}", out.len(), a.out_run.display());
    Ok(())
}

pub fn train(ctx: &Context, a: &TrainArgs) -> Result<(), CliError> {
    require(&a.triplets, "triplets")?;
    require(&a.queries, "queries")?;
    require(&a.store, "store")?;
    let store = read_store(&a.store)?;
    if store.dim() != ctx.config.dim {
        return Err(Error::DimensionMismatch {
            expected: ctx.config.dim,
            actual: store.dim(),
        }
        .into());
    }
    let queries = load_queries(&a.queries)?;
    let triplets = load_triplets(&a.triplets, &queries)?;
    if triplets.is_empty() {
        return Err(CliError::data("no training triplets"));
    }
    let embedder = ctx.embedder()?;
    let format = ctx.config.input_format();
    let examples = triplets
        .iter()
        .map(|t| resolve_triplet(t, &store, embedder.as_ref(), &format))
        .collect::<breps::Result<Vec<_>>>()?;

    let setup = ctx.config.scoring_setup()?;
    let cfg = ctx.config.train_config()?;
    let t = &ctx.config.training;
    let head = ProjectionHead::near_identity(ctx.config.dim, t.init_noise, t.seed);
    let initial = mean_loss(&examples, &head, &setup, &cfg.loss)?;
    let outcome = train_head(&examples, head, &setup, &cfg, &ctx.pool())?;
    let final_setup = breps::train::ScoringSetup {
        weights: outcome
            .weights
            .clone()
            .unwrap_or_else(|| setup.weights.clone()),
        ..setup.clone()
    };
    let fin = mean_loss(&examples, &outcome.head, &final_setup, &cfg.loss)?;

    write_head(&a.out_head, &outcome.head, outcome.weights.as_deref())?;
    let curve_path = a
        .loss_curve
        .clone()
        .unwrap_or_else(|| sidecar(&a.out_head, ".loss.tsv"));
    let mut w = create(&curve_path)?;
    let mut text = String::from("step\tmean_loss\n");
    for s in &outcome.curve {
        text.push_str(&format!("{}\t{:.9}\n", s.step, s.mean_loss));
    }
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| io_err(&curve_path, e))?;
    log::info!(
        "trained {} steps on {} triplets: mean loss {initial:.4} -> {fin:.4}",
        cfg.steps,
        examples.len()
    );
    println!(
        "{}",
        json!({
            "triplets": examples.len(),
            "steps": cfg.steps,
            "loss": cfg.loss,
            "initial_mean_loss": initial,
            "final_mean_loss": fin,
            "weights": outcome.weights,
        })
    );
    Ok(())
}

pub fn eval(ctx: &Context, a: &EvalArgs) -> Result<(), CliError> {
    require(&a.run, "run")?;
    require(&a.qrels, "qrels")?;
    let metrics = a
        .metrics
        .iter()
        .map(|m| m.parse::<Metric>())
        .collect::<breps::Result<Vec<_>>>()?;
    let run = read_run(&a.run)?;
    let qrels = read_qrels(&a.qrels)?;
    let baseline = match &a.baseline_run {
        Some(p) => {
            require(p, "baseline run")?;
            Some(read_run(p)?)
        }
        None => None,
    };
    let pool = ctx.pool();
    let mut rows = Vec::new();
    let mut table = String::new();
    table.push_str(&format!("{:<10} {:>10}", "metric", "value"));
    if baseline.is_some() {
        table.push_str(&format!(" {:>10} {:>9} {:>9}", "baseline", "t", "p"));
    }
    table.push('\n');
    for m in metrics {
        let r = evaluate_with(&run, &qrels, m, &pool);
        let mut row = json!({"metric": r.metric, "mean": r.mean, "per_query": r.per_query});
        table.push_str(&format!("{:<10} {:>10.4}", r.metric, r.mean));
        if let Some(b) = &baseline {
            let rb = evaluate_with(b, &qrels, m, &pool);
            let xs: Vec<f64> = r.per_query.values().copied().collect();
            let ys: Vec<f64> = rb.per_query.values().copied().collect();
            row["baseline_mean"] = json!(rb.mean);
            match paired_t_test(&xs, &ys) {
                Ok(t) => {
                    table.push_str(&format!(
                        " {:>10.4} {:>9.4} {:>9.4}",
                        rb.mean, t.t_statistic, t.p_value
                    ));
                    if t.zero_variance {
                        table.push_str(" (zero variance)");
                    }
                    row["significance"] = json!(t);
                }
                Err(e) => {
                    log::warn!("{}: no significance test: {e}", r.metric);
                    table.push_str(&format!(" {:>10.4} {:>9} {:>9}", rb.mean, "-", "-"));
                }
            }
        }
        table.push('\n');
        if !r.skipped_queries.is_empty() {
            row["skipped_queries"] = json!(r.skipped_queries);
        }
        rows.push(row);
    }
    eprint!("{table}");
    println!("{}", json!({"metrics": rows}));
    Ok(())
}

pub fn bench(ctx: &Context, a: &BenchArgs) -> Result<(), CliError> {
    require(&a.corpus, "corpus")?;
    let records: Vec<CorpusRecord> = load_corpus(&a.corpus)?.collect::<breps::Result<_>>()?;
    let embedder = QuadraticCostEmbedder::new(HashEmbedder::with_format(
        ctx.config.dim,
        ctx.config.embedder.seed,
        ctx.config.input_format(),
    ));
    let seg = ctx.config.segmentation_config()?;
    let format = ctx.config.input_format();
    let costs = compare_costs(&records, &seg, &format, &embedder)?;

    let dir = tempfile::tempdir().map_err(|e| io_err(Path::new("."), e))?;
    let writer = StoreWriter::create(dir.path().join("bench.store"), ctx.config.dim)?;
    let opts = IndexOptions {
        segmentation: seg,
        format,
        ..Default::default()
    };
    let report = build_index(
        records.into_iter().map(Ok),
        &opts,
        &embedder,
        writer,
        &ctx.pool(),
    )?;
    let out = json!({
        "documents": costs.documents,
        "blockwise": costs.blockwise,
        "whole_document": costs.whole_document,
        "modeled_ratio": costs.modeled_ratio,
        "stages": report.timings,
    });
    eprintln!(
        "{} documents: modeled cost ratio {:.4}, wall {:.3}s blockwise vs {:.3}s whole",
        costs.documents,
        costs.modeled_ratio,
        costs.blockwise.wall_seconds,
        costs.whole_document.wall_seconds
    );
    println!("{out}");
    Ok(())
}

fn vector_row(kind: &str, id: &str, block: &str, v: &[f32]) -> String {
    let mut row = format!("{kind}\t{id}\t{block}");
    for x in v {
        row.push_str(&format!("\t{x:.8e}"));
    }
    row.push('\n');
    row
}

pub fn export_vectors(ctx: &Context, a: &ExportArgs) -> Result<(), CliError> {
    require(&a.store, "store")?;
    let store = read_store(&a.store)?;
    let mut w = create(&a.out)?;
    let mut header = String::from("kind\tid\tblock");
    for i in 0..store.dim() {
        header.push_str(&format!("\tv{i}"));
    }
    header.push('\n');
    let mut text = header;
    for doc in store.iter() {
        for (i, v) in doc.block_vectors.iter().enumerate() {
            text.push_str(&vector_row("block", &doc.doc_id, &i.to_string(), v));
        }
    }
    if let Some(qpath) = &a.queries {
        require(qpath, "queries")?;
        let queries = load_queries(qpath)?;
        let embedder = ctx.embedder()?;
        let format = ctx.config.input_format();
        let inputs: Vec<String> = queries
            .values()
            .map(|q| format.format(q, EmbedderKind::Query))
            .collect();
        let vectors = embedder.embed(&inputs, EmbedderKind::Query)?;
        for (id, v) in queries.keys().zip(&vectors) {
            text.push_str(&vector_row("query", id, "-", v));
        }
    }
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| io_err(&a.out, e))?;
    Ok(())
}
