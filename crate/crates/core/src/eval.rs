//! TREC-style effectiveness metrics and paired significance testing.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};
use crate::par::Pool;

pub const RUN_TAG: &str = "breps";

/// Relevance judgments; absent pairs have grade 0.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Qrels {
    judgments: BTreeMap<String, HashMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: &str, doc_id: &str, grade: u32) {
        self.judgments
            .entry(query_id.to_string())
            .or_default()
            .insert(doc_id.to_string(), grade);
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> u32 {
        self.judgments
            .get(query_id)
            .and_then(|m| m.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn contains_query(&self, query_id: &str) -> bool {
        self.judgments.contains_key(query_id)
    }

    pub fn relevant_count(&self, query_id: &str) -> usize {
        self.judgments
            .get(query_id)
            .map_or(0, |m| m.values().filter(|&&g| g > 0).count())
    }

    /// All positive grades of a query, sorted descending.
    pub fn ideal_grades(&self, query_id: &str) -> Vec<u32> {
        let mut g: Vec<u32> = self
            .judgments
            .get(query_id)
            .map(|m| m.values().copied().filter(|&g| g > 0).collect())
            .unwrap_or_default();
        g.sort_unstable_by(|a, b| b.cmp(a));
        g
    }
}

/// Parse `query_id iteration doc_id grade` lines. Negative grades count as 0.
pub fn parse_qrels(reader: impl BufRead, source: &Path) -> Result<Qrels> {
    let mut qrels = Qrels::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let bad = |message: String| Error::MalformedLine {
            path: source.to_path_buf(),
            line: n + 1,
            message,
        };
        if fields.len() != 4 {
            return Err(bad(format!("expected 4 fields, found {}", fields.len())));
        }
        let grade: i64 = fields[3]
            .parse()
            .map_err(|_| bad(format!("bad grade {:?}", fields[3])))?;
        qrels.insert(
            fields[0],
            fields[2],
            grade.clamp(0, i64::from(u32::MAX)) as u32,
        );
    }
    Ok(qrels)
}

pub fn read_qrels(path: impl AsRef<Path>) -> Result<Qrels> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_qrels(BufReader::new(f), path)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunEntry {
    pub doc_id: String,
    pub score: f64,
}

/// Ranked lists per query, best first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Run {
    rankings: BTreeMap<String, Vec<RunEntry>>,
}

impl Run {
    pub fn new() -> Self {
        Self::default()
    }

    /// Set a query's ranking. Fails on duplicate doc ids.
    pub fn insert(&mut self, query_id: &str, ranking: Vec<RunEntry>) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &ranking {
            if !seen.insert(e.doc_id.as_str()) {
                return Err(Error::DuplicateDocId(format!(
                    "{} (query {query_id})",
                    e.doc_id
                )));
            }
        }
        self.rankings.insert(query_id.to_string(), ranking);
        Ok(())
    }

    pub fn get(&self, query_id: &str) -> Option<&[RunEntry]> {
        self.rankings.get(query_id).map(Vec::as_slice)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.rankings.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[RunEntry])> {
        self.rankings
            .iter()
            .map(|(q, r)| (q.as_str(), r.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.rankings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rankings.is_empty()
    }

    /// TREC run lines: `qid Q0 doc rank score tag`, score with 6 decimals.
    pub fn write_to(&self, mut w: impl Write, tag: &str) -> std::io::Result<()> {
        for (q, ranking) in &self.rankings {
            for (i, e) in ranking.iter().enumerate() {
                writeln!(w, "{q} Q0 {} {} {:.6} {tag}", e.doc_id, i + 1, e.score)?;
            }
        }
        Ok(())
    }

    pub fn to_trec_string(&self, tag: &str) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf, tag)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("run text is UTF-8")
    }
}

/// Parse a TREC run. Entries are ordered by their rank column.
pub fn parse_run(reader: impl BufRead, source: &Path) -> Result<Run> {
    let mut raw: BTreeMap<String, Vec<(u64, usize, RunEntry)>> = BTreeMap::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let bad = |message: String| Error::MalformedLine {
            path: source.to_path_buf(),
            line: n + 1,
            message,
        };
        if fields.len() != 6 {
            return Err(bad(format!("expected 6 fields, found {}", fields.len())));
        }
        let rank: u64 = fields[3]
            .parse()
            .map_err(|_| bad(format!("bad rank {:?}", fields[3])))?;
        let score: f64 = fields[4]
            .parse()
            .map_err(|_| bad(format!("bad score {:?}", fields[4])))?;
        raw.entry(fields[0].to_string()).or_default().push((
            rank,
            n,
            RunEntry {
                doc_id: fields[2].to_string(),
                score,
            },
        ));
    }
    let mut run = Run::new();
    for (q, mut entries) in raw {
        entries.sort_by_key(|&(rank, line, _)| (rank, line));
        run.insert(&q, entries.into_iter().map(|(_, _, e)| e).collect())?;
    }
    Ok(run)
}

pub fn read_run(path: impl AsRef<Path>) -> Result<Run> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_run(BufReader::new(f), path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    Precision(usize),
    AveragePrecision,
    /// `None` evaluates the full ranked list.
    Ndcg(Option<usize>),
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Precision(k) => write!(f, "P@{k}"),
            Metric::AveragePrecision => write!(f, "MAP"),
            Metric::Ndcg(Some(k)) => write!(f, "NDCG@{k}"),
            Metric::Ndcg(None) => write!(f, "NDCG"),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let cutoff = |rest: &str| -> Result<usize> {
            rest.parse::<usize>()
                .ok()
                .filter(|&k| k >= 1)
                .ok_or_else(|| Error::InvalidArgument(format!("bad metric cutoff in {s:?}")))
        };
        match lower.as_str() {
            "map" | "ap" => Ok(Metric::AveragePrecision),
            "ndcg" => Ok(Metric::Ndcg(None)),
            _ => {
                if let Some(rest) = lower.strip_prefix("ndcg@") {
                    Ok(Metric::Ndcg(Some(cutoff(rest)?)))
                } else if let Some(rest) = lower.strip_prefix("p@") {
                    Ok(Metric::Precision(cutoff(rest)?))
                } else {
                    Err(Error::InvalidArgument(format!("unknown metric {s:?}")))
                }
            }
        }
    }
}

fn grades_of(ranking: &[RunEntry], qrels: &Qrels, query_id: &str) -> Vec<u32> {
    ranking
        .iter()
        .map(|e| qrels.grade(query_id, &e.doc_id))
        .collect()
}

/// Fraction of the top `k` with grade > 0; the denominator is always `k`.
pub fn precision_from_grades(grades: &[u32], k: usize) -> f64 {
    let hits = grades.iter().take(k).filter(|&&g| g > 0).count();
    hits as f64 / k as f64
}

pub fn average_precision_from_grades(grades: &[u32], relevant: usize) -> f64 {
    if relevant == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &g) in grades.iter().enumerate() {
        if g > 0 {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / relevant as f64
}

pub fn dcg(grades: &[u32], k: Option<usize>) -> f64 {
    grades
        .iter()
        .take(k.unwrap_or(usize::MAX))
        .enumerate()
        .map(|(i, &g)| (2f64.powi(g as i32) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

pub fn ndcg_from_grades(grades: &[u32], ideal: &[u32], k: Option<usize>) -> f64 {
    let idcg = dcg(ideal, k);
    if idcg == 0.0 {
        return 0.0;
    }
    dcg(grades, k) / idcg
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub metric: String,
    pub per_query: BTreeMap<String, f64>,
    pub mean: f64,
    /// Run queries absent from the qrels.
    pub skipped_queries: Vec<String>,
}

fn query_value(metric: Metric, run: &Run, qrels: &Qrels, q: &str) -> f64 {
    let Some(ranking) = run.get(q) else {
        return 0.0;
    };
    let grades = grades_of(ranking, qrels, q);
    match metric {
        Metric::Precision(k) => precision_from_grades(&grades, k),
        Metric::AveragePrecision => average_precision_from_grades(&grades, qrels.relevant_count(q)),
        Metric::Ndcg(k) => ndcg_from_grades(&grades, &qrels.ideal_grades(q), k),
    }
}

/// Evaluate one metric over every judged query. Judged queries missing from
/// the run score 0; run queries without judgments are skipped and listed.
pub fn evaluate(run: &Run, qrels: &Qrels, metric: Metric) -> MetricReport {
    evaluate_with(run, qrels, metric, &Pool::sequential())
}

pub fn evaluate_with(run: &Run, qrels: &Qrels, metric: Metric, pool: &Pool) -> MetricReport {
    let queries: Vec<&str> = qrels.query_ids().collect();
    let values = pool.map(&queries, |q| query_value(metric, run, qrels, q));
    let per_query: BTreeMap<String, f64> = queries
        .iter()
        .zip(&values)
        .map(|(q, v)| (q.to_string(), *v))
        .collect();
    let mean = if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    };
    let skipped_queries: Vec<String> = run
        .query_ids()
        .filter(|q| !qrels.contains_query(q))
        .map(str::to_string)
        .collect();
    for q in &skipped_queries {
        log::warn!("query {q:?} has no judgments; skipped");
    }
    MetricReport {
        metric: metric.to_string(),
        per_query,
        mean,
        skipped_queries,
    }
}

pub fn precision_at_k(run: &Run, qrels: &Qrels, k: usize) -> MetricReport {
    evaluate(run, qrels, Metric::Precision(k.max(1)))
}

pub fn average_precision(run: &Run, qrels: &Qrels) -> MetricReport {
    evaluate(run, qrels, Metric::AveragePrecision)
}

pub fn ndcg_at_k(run: &Run, qrels: &Qrels, k: Option<usize>) -> MetricReport {
    evaluate(run, qrels, Metric::Ndcg(k))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TTestResult {
    pub n: usize,
    pub mean_difference: f64,
    pub t_statistic: f64,
    /// Two-sided.
    pub p_value: f64,
    /// All differences were equal; t and p follow the zero-variance convention.
    pub zero_variance: bool,
}

/// Two-sided paired Student's t-test on `a - b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "paired t-test needs at least 2 pairs".into(),
        ));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        let (t, p) = if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(mean), 0.0)
        };
        return Ok(TTestResult {
            n,
            mean_difference: mean,
            t_statistic: t,
            p_value: p,
            zero_variance: true,
        });
    }
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    let df = (n - 1) as f64;
    let p = beta_reg(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0);
    Ok(TTestResult {
        n,
        mean_difference: mean,
        t_statistic: t,
        p_value: p,
        zero_variance: false,
    })
}
