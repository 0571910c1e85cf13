//! JSON-lines corpus files. One record per line, field names as in the
//! record types, UTF-8, integer timestamps.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{compute_stats, Corpus};
use crate::error::{Error, Result};

pub const ITEMS_FILE: &str = "items.jsonl";
pub const QUERIES_FILE: &str = "queries.jsonl";
pub const INTERACTIONS_FILE: &str = "interactions.jsonl";
pub const STATS_FILE: &str = "stats.json";

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_jsonl(&dir.join(ITEMS_FILE), corpus.items())?;
    write_jsonl(&dir.join(QUERIES_FILE), corpus.queries())?;
    write_jsonl(&dir.join(INTERACTIONS_FILE), corpus.interactions())?;
    Ok(())
}

pub fn write_stats(dir: &Path, corpus: &Corpus) -> Result<()> {
    let mut s = serde_json::to_string_pretty(&compute_stats(corpus))?;
    s.push('\n');
    std::fs::write(dir.join(STATS_FILE), s)?;
    Ok(())
}

/// Reads and validates the three corpus files; also the ingestion path for
/// externally prepared datasets in the same schema.
pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    Corpus::new(
        read_jsonl(&dir.join(ITEMS_FILE))?,
        read_jsonl(&dir.join(QUERIES_FILE))?,
        read_jsonl(&dir.join(INTERACTIONS_FILE))?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic_corpus, GeneratorConfig};
    use crate::par::Exec;

    #[test]
    fn corpus_round_trips_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let c = generate_synthetic_corpus(&GeneratorConfig { users: 5, ..Default::default() }, Exec::Sequential).unwrap();
        write_corpus(dir.path(), &c).unwrap();
        assert_eq!(read_corpus(dir.path()).unwrap(), c);
        let line = std::fs::read_to_string(dir.path().join(INTERACTIONS_FILE)).unwrap();
        let first = line.lines().next().unwrap();
        for key in ["\"user_id\"", "\"item_id\"", "\"behavior\"", "\"query_id\"", "\"timestamp\"", "\"label\""] {
            assert!(first.contains(key), "{first}");
        }
    }

    #[test]
    fn malformed_line_reports_location() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(ITEMS_FILE), "{\"item_id\": 1}\n").unwrap();
        std::fs::write(dir.path().join(QUERIES_FILE), "").unwrap();
        std::fs::write(dir.path().join(INTERACTIONS_FILE), "").unwrap();
        let err = read_corpus(dir.path()).unwrap_err().to_string();
        assert!(err.contains("items.jsonl:1"), "{err}");
    }
}
