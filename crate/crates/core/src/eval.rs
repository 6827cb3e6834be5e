//! Relevance judgments, result files and Precision@k.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Graded judgments per query; a document is relevant when its grade is > 0.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judged: BTreeMap<u64, HashMap<u64, i32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: u64, doc_id: u64, relevance: i32) {
        self.judged.entry(query_id).or_default().insert(doc_id, relevance);
    }

    pub fn contains_query(&self, query_id: u64) -> bool {
        self.judged.contains_key(&query_id)
    }

    pub fn is_relevant(&self, query_id: u64, doc_id: u64) -> bool {
        self.judged
            .get(&query_id)
            .and_then(|d| d.get(&doc_id))
            .is_some_and(|&r| r > 0)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.judged.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.judged.len()
    }

    pub fn is_empty(&self) -> bool {
        self.judged.is_empty()
    }

    /// Whitespace-separated `query_id doc_id relevance` lines. A leading
    /// header line whose first field is not an integer is skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut q = Self::new();
        for (n, raw) in text.lines().enumerate() {
            let fields: Vec<&str> = raw.split_whitespace().collect();
            if fields.is_empty() || fields[0].starts_with('#') {
                continue;
            }
            if n == 0 && fields[0].parse::<u64>().is_err() {
                continue;
            }
            let perr = |m: &str| Error::Parse {
                line: n + 1,
                message: m.to_string(),
            };
            if fields.len() != 3 {
                return Err(perr("expected `query_id doc_id relevance`"));
            }
            let qid = fields[0].parse().map_err(|_| perr("bad query id"))?;
            let did = fields[1].parse().map_err(|_| perr("bad doc id"))?;
            let rel = fields[2].parse().map_err(|_| perr("bad relevance"))?;
            q.insert(qid, did, rel);
        }
        Ok(q)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("query_id\tdoc_id\trelevance\n");
        for (qid, docs) in &self.judged {
            let mut docs: Vec<_> = docs.iter().collect();
            docs.sort();
            for (did, rel) in docs {
                let _ = writeln!(s, "{qid}\t{did}\t{rel}");
            }
        }
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResultRow {
    pub query_id: u64,
    /// 1-based.
    pub rank: usize,
    pub doc_id: u64,
    pub score: f64,
}

pub const RESULTS_HEADER: &str = "query_id\trank\tdoc_id\tscore";

/// Tab-separated rows, sorted by query id then rank, with a header.
pub fn format_results(rows: &[ResultRow]) -> String {
    let mut rows = rows.to_vec();
    rows.sort_by_key(|r| (r.query_id, r.rank));
    let mut s = format!("{RESULTS_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{}\t{}\t{}\t{}", r.query_id, r.rank, r.doc_id, r.score);
    }
    s
}

pub fn parse_results(text: &str) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || (n == 0 && line.starts_with("query_id")) {
            continue;
        }
        let perr = |m: &str| Error::Parse {
            line: n + 1,
            message: m.to_string(),
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(perr("expected `query_id\\trank\\tdoc_id\\tscore`"));
        }
        let rank: usize = f[1].parse().map_err(|_| perr("bad rank"))?;
        if rank == 0 {
            return Err(perr("ranks start at 1"));
        }
        rows.push(ResultRow {
            query_id: f[0].parse().map_err(|_| perr("bad query id"))?,
            rank,
            doc_id: f[2].parse().map_err(|_| perr("bad doc id"))?,
            score: f[3].parse().map_err(|_| perr("bad score"))?,
        });
    }
    Ok(rows)
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    parse_results(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

/// Ranked doc ids per query.
pub fn rankings(rows: &[ResultRow]) -> BTreeMap<u64, Vec<u64>> {
    let mut by_query: BTreeMap<u64, Vec<(usize, u64)>> = BTreeMap::new();
    for r in rows {
        by_query.entry(r.query_id).or_default().push((r.rank, r.doc_id));
    }
    by_query
        .into_iter()
        .map(|(q, mut v)| {
            v.sort();
            (q, v.into_iter().map(|(_, d)| d).collect())
        })
        .collect()
}

/// Mean over queries of (relevant docs among the first k) / k.
pub fn precision_at_k(rankings: &BTreeMap<u64, Vec<u64>>, qrels: &Qrels, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let unknown: Vec<u64> = rankings.keys().copied().filter(|q| !qrels.contains_query(*q)).collect();
    if !unknown.is_empty() {
        return Err(Error::UnknownQueries(unknown));
    }
    if rankings.is_empty() {
        return Ok(0.0);
    }
    let hits: usize = rankings
        .iter()
        .map(|(&q, docs)| docs.iter().take(k).filter(|&&d| qrels.is_relevant(q, d)).count())
        .sum();
    Ok(hits as f64 / (k * rankings.len()) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub name: String,
    pub queries: usize,
    /// (k, P@k)
    pub precision: Vec<(usize, f64)>,
}

pub fn evaluate(name: &str, rows: &[ResultRow], qrels: &Qrels, ks: &[usize]) -> Result<EvalReport> {
    let r = rankings(rows);
    let precision = ks
        .iter()
        .map(|&k| Ok((k, precision_at_k(&r, qrels, k)?)))
        .collect::<Result<_>>()?;
    Ok(EvalReport {
        name: name.to_string(),
        queries: r.len(),
        precision,
    })
}

/// One row per report, one column per k.
pub fn comparison_table(reports: &[EvalReport]) -> String {
    let mut s = String::from("run\tqueries");
    if let Some(first) = reports.first() {
        for (k, _) in &first.precision {
            let _ = write!(s, "\tP@{k}");
        }
    }
    s.push('\n');
    for r in reports {
        let _ = write!(s, "{}\t{}", r.name, r.queries);
        for (_, p) in &r.precision {
            let _ = write!(s, "\t{p:.4}");
        }
        s.push('\n');
    }
    s
}
