//! Corpus, query and triplet ingestion plus offline index building.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Lines};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::embed::{Embedder, EmbedderKind, InputFormat};
use crate::error::{Error, Result};
use crate::par::Pool;
use crate::segment::{segment, truncate_blocks, SegmentationConfig};
use crate::store::{StoreSummary, StoreWriter, StoredDocument};
use crate::train::TrainingTriplet;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub doc_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
}

impl CorpusRecord {
    /// Title and body joined by a space when a title is present.
    pub fn full_text(&self) -> String {
        match &self.title {
            Some(t) if !t.is_empty() => format!("{t} {}", self.text),
            _ => self.text.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    pub text: String,
}

/// Streaming JSON-lines reader; blank lines are skipped.
pub struct JsonLines<T> {
    path: PathBuf,
    lines: Lines<BufReader<File>>,
    line_no: usize,
    failed: bool,
    _marker: std::marker::PhantomData<T>,
}

impl<T: for<'de> Deserialize<'de>> Iterator for JsonLines<T> {
    type Item = Result<T>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            let line = self.lines.next()?;
            self.line_no += 1;
            let line = match line {
                Ok(l) => l,
                Err(e) => {
                    self.failed = true;
                    return Some(Err(Error::io(&self.path, e)));
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            return Some(serde_json::from_str(&line).map_err(|e| {
                self.failed = true;
                Error::MalformedLine {
                    path: self.path.clone(),
                    line: self.line_no,
                    message: e.to_string(),
                }
            }));
        }
    }
}

fn open_jsonl<T>(path: &Path) -> Result<JsonLines<T>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(JsonLines {
        path: path.to_path_buf(),
        lines: BufReader::new(f).lines(),
        line_no: 0,
        failed: false,
        _marker: std::marker::PhantomData,
    })
}

/// Stream `{"doc_id", "text", "title"?}` records in file order.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<JsonLines<CorpusRecord>> {
    open_jsonl(path.as_ref())
}

/// Queries keyed by id. Duplicate ids are rejected.
pub fn load_queries(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for rec in open_jsonl::<QueryRecord>(path.as_ref())? {
        let rec = rec?;
        if out.insert(rec.query_id.clone(), rec.text).is_some() {
            return Err(Error::InvalidArgument(format!(
                "duplicate query id {:?}",
                rec.query_id
            )));
        }
    }
    Ok(out)
}

/// `(query_id, positive_doc_id, negative_doc_id)` rows of a TSV file.
pub fn load_triplet_ids(path: impl AsRef<Path>) -> Result<Vec<(String, String, String)>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::MalformedLine {
                path: path.to_path_buf(),
                line: n + 1,
                message: "expected query_id<TAB>positive_doc_id<TAB>negative_doc_id".into(),
            });
        }
        out.push((
            fields[0].to_string(),
            fields[1].to_string(),
            fields[2].to_string(),
        ));
    }
    Ok(out)
}

/// Join triplet ids with query texts.
pub fn load_triplets(
    triplets: impl AsRef<Path>,
    queries: &BTreeMap<String, String>,
) -> Result<Vec<TrainingTriplet>> {
    load_triplet_ids(triplets)?
        .into_iter()
        .map(|(q, pos, neg)| {
            let query = queries
                .get(&q)
                .ok_or_else(|| Error::InvalidTriplet(format!("unknown query id {q:?}")))?;
            Ok(TrainingTriplet {
                query: query.clone(),
                positive_doc_id: pos,
                negative_doc_id: neg,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct IndexOptions {
    pub segmentation: SegmentationConfig,
    pub format: InputFormat,
    /// Documents handed to the worker pool per batch.
    pub batch_docs: usize,
}

impl Default for IndexOptions {
    fn default() -> Self {
        Self {
            segmentation: SegmentationConfig::default(),
            format: InputFormat::default(),
            batch_docs: 256,
        }
    }
}

/// Time spent per stage, summed over workers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub segment_seconds: f64,
    pub embed_seconds: f64,
    pub write_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IndexReport {
    pub summary: StoreSummary,
    pub timings: StageTimings,
}

struct Prepared {
    doc: StoredDocument,
    segment: Duration,
    embed: Duration,
}

fn prepare(rec: &CorpusRecord, opts: &IndexOptions, embedder: &dyn Embedder) -> Result<Prepared> {
    let t0 = Instant::now();
    let blocks = truncate_blocks(
        segment(&rec.full_text(), &opts.segmentation)?,
        opts.segmentation.max_blocks,
    );
    let inputs: Vec<String> = blocks
        .iter()
        .map(|b| opts.format.format(&b.text, EmbedderKind::Passage))
        .collect();
    let t1 = Instant::now();
    let block_vectors = if inputs.is_empty() {
        Vec::new()
    } else {
        embedder.embed(&inputs, EmbedderKind::Passage)?
    };
    let t2 = Instant::now();
    if block_vectors.len() != inputs.len() {
        return Err(Error::InvalidResponse(format!(
            "embedder returned {} vectors for {} blocks of {:?}",
            block_vectors.len(),
            inputs.len(),
            rec.doc_id
        )));
    }
    Ok(Prepared {
        doc: StoredDocument {
            doc_id: rec.doc_id.clone(),
            block_vectors,
        },
        segment: t1 - t0,
        embed: t2 - t1,
    })
}

/// Segment, embed and store every record. Output order equals input order
/// regardless of `pool` size; any failure aborts without leaving a store.
pub fn build_index<I>(
    corpus: I,
    opts: &IndexOptions,
    embedder: &dyn Embedder,
    writer: StoreWriter,
    pool: &Pool,
) -> Result<IndexReport>
where
    I: IntoIterator<Item = Result<CorpusRecord>>,
{
    opts.segmentation.validate()?;
    if writer.dim() != embedder.dim() {
        return Err(Error::DimensionMismatch {
            expected: writer.dim(),
            actual: embedder.dim(),
        });
    }
    let mut writer = writer;
    let mut timings = StageTimings::default();
    let mut seen = HashSet::new();
    let mut batch = Vec::with_capacity(opts.batch_docs.max(1));
    let mut iter = corpus.into_iter().peekable();

    while iter.peek().is_some() {
        batch.clear();
        while batch.len() < opts.batch_docs.max(1) {
            let Some(rec) = iter.next() else { break };
            let rec = rec?;
            if !seen.insert(rec.doc_id.clone()) {
                return Err(Error::DuplicateDocId(rec.doc_id));
            }
            batch.push(rec);
        }
        let prepared = pool.map(&batch, |rec| prepare(rec, opts, embedder));
        for p in prepared {
            let p = p?;
            timings.segment_seconds += p.segment.as_secs_f64();
            timings.embed_seconds += p.embed.as_secs_f64();
            let t = Instant::now();
            writer.add(&p.doc)?;
            timings.write_seconds += t.elapsed().as_secs_f64();
        }
    }
    let t = Instant::now();
    let summary = writer.finish()?;
    timings.write_seconds += t.elapsed().as_secs_f64();
    Ok(IndexReport { summary, timings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashEmbedder;
    use crate::store::read_store;
    use std::io::Write;

    fn write(path: &Path, text: &str) {
        std::fs::File::create(path)
            .unwrap()
            .write_all(text.as_bytes())
            .unwrap();
    }

    #[test]
    fn corpus_reading() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        write(&p, "");
        assert_eq!(load_corpus(&p).unwrap().count(), 0);
        write(
            &p,
            "{\"doc_id\":\"a\",\"text\":\"x\"}\n\n{\"doc_id\":\"b\",\"text\":\"y\",\"title\":\"T\"}\n{\"doc_id\":\"c\",\"text\":\"z\"}\n",
        );
        let recs: Vec<_> = load_corpus(&p).unwrap().collect::<Result<_>>().unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[1].full_text(), "T y");
        write(&p, "{\"doc_id\":\"a\",\"text\":\"x\"}\nnot json\n");
        let err = load_corpus(&p)
            .unwrap()
            .collect::<Result<Vec<_>>>()
            .unwrap_err();
        assert!(matches!(err, Error::MalformedLine { line: 2, .. }));
        assert!(load_corpus(dir.path().join("nope")).is_err());
    }

    #[test]
    fn triplets_join_queries() {
        let dir = tempfile::tempdir().unwrap();
        let q = dir.path().join("q.jsonl");
        let t = dir.path().join("t.tsv");
        write(&q, "{\"query_id\":\"1\",\"text\":\"cats\"}\n");
        write(&t, "1\tdp\tdn\n");
        let queries = load_queries(&q).unwrap();
        let trip = load_triplets(&t, &queries).unwrap();
        assert_eq!(trip[0].query, "cats");
        assert_eq!(trip[0].negative_doc_id, "dn");
        write(&t, "2\tdp\tdn\n");
        assert!(load_triplets(&t, &queries).is_err());
        write(&t, "1 dp dn\n");
        assert!(matches!(
            load_triplet_ids(&t),
            Err(Error::MalformedLine { .. })
        ));
    }

    fn records(texts: &[(&str, String)]) -> Vec<Result<CorpusRecord>> {
        texts
            .iter()
            .map(|(id, t)| {
                Ok(CorpusRecord {
                    doc_id: id.to_string(),
                    text: t.clone(),
                    title: None,
                })
            })
            .collect()
    }

    #[test]
    fn index_caps_blocks() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.bin");
        let e = HashEmbedder::new(8, 1);
        let mut opts = IndexOptions::default();
        opts.segmentation.max_block_tokens = 4;
        let long = "one two three. ".repeat(25);
        let docs = records(&[
            ("short", "a b c d e".into()),
            ("long", long),
            ("blank", "  ".into()),
        ]);
        let w = StoreWriter::create(&p, 8).unwrap();
        let rep = build_index(docs, &opts, &e, w, &Pool::new(2)).unwrap();
        assert_eq!(rep.summary.doc_count, 3);
        let store = read_store(&p).unwrap();
        assert_eq!(store.block_count("short"), Some(2));
        assert_eq!(store.block_count("long"), Some(20));
        assert_eq!(store.block_count("blank"), Some(0));
    }

    #[test]
    fn index_rejects_duplicates_and_leaves_no_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.bin");
        let e = HashEmbedder::new(8, 1);
        let docs = records(&[("a", "x".into()), ("a", "y".into())]);
        let w = StoreWriter::create(&p, 8).unwrap();
        let err =
            build_index(docs, &IndexOptions::default(), &e, w, &Pool::sequential()).unwrap_err();
        assert!(matches!(err, Error::DuplicateDocId(_)));
        assert!(!p.exists());
    }

    #[test]
    fn index_checks_dimension() {
        let dir = tempfile::tempdir().unwrap();
        let w = StoreWriter::create(dir.path().join("s"), 4).unwrap();
        let e = HashEmbedder::new(8, 1);
        assert!(build_index(
            Vec::new(),
            &IndexOptions::default(),
            &e,
            w,
            &Pool::sequential()
        )
        .is_err());
    }
}
