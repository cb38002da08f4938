//! Shared plumbing for files the toolkit writes: schema tags, embedded config
//! hashes, and deterministic float formatting.
//!
//! Every artifact records which configuration produced it (a hash of the
//! canonical TOML serialization) and the run seed, so results can be traced
//! back and reruns byte-compared. CSV files carry a schema tag in a leading
//! comment; readers refuse schemas they do not understand instead of
//! misparsing columns.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Provenance block embedded in JSON artifacts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub config_hash: String,
    pub seed: u64,
}

/// 64-bit FNV-1a. Stable across platforms and releases, which is what an
/// artifact fingerprint needs; this is an integrity tag, not a security
/// boundary.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

pub fn hash_hex(bytes: &[u8]) -> String {
    format!("{:016x}", fnv1a64(bytes))
}

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("missing schema header; expected a '# schema <name>' first line")]
    MissingSchema,
    #[error("unsupported schema {found:?}, this reader understands {expected:?}")]
    WrongSchema { found: String, expected: &'static str },
    #[error("line {line}: expected {expected} columns, found {found}")]
    ColumnCount { line: usize, expected: usize, found: usize },
    #[error("line {line}: {source}")]
    BadNumber { line: usize, source: std::num::ParseFloatError },
    #[error("line {line}: unknown mode label {label:?}")]
    BadMode { line: usize, label: String },
}

/// Render the comment preamble common to all CSV artifacts.
pub fn csv_preamble(schema: &str, config_hash: &str, seed: u64) -> String {
    format!("# schema {schema}\n# config_hash {config_hash}\n# seed {seed}\n")
}

/// Split a CSV artifact into (schema, data lines), verifying the schema tag.
/// Comment lines and the column-name header are skipped; data lines are
/// returned with their 1-based line numbers for error reporting.
pub fn csv_body<'a>(
    text: &'a str,
    expected_schema: &'static str,
) -> Result<Vec<(usize, &'a str)>, CsvError> {
    let mut schema: Option<&str> = None;
    let mut body = Vec::new();
    let mut saw_header = false;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim();
            if let Some(tag) = rest.strip_prefix("schema ") {
                schema = Some(tag.trim());
            }
            continue;
        }
        match schema {
            None => return Err(CsvError::MissingSchema),
            Some(s) if s != expected_schema => {
                return Err(CsvError::WrongSchema { found: s.to_string(), expected: expected_schema })
            }
            Some(_) => {}
        }
        if !saw_header {
            // First non-comment line is the column-name header.
            saw_header = true;
            continue;
        }
        body.push((idx + 1, raw));
    }
    if schema.is_none() {
        return Err(CsvError::MissingSchema);
    }
    Ok(body)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_vectors() {
        // Standard FNV-1a test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn body_skips_comments_and_header() {
        let text = "# schema test.v1\n# config_hash abc\n# seed 7\nt,x\n0.0,1.0\n0.1,2.0\n";
        let body = csv_body(text, "test.v1").unwrap();
        assert_eq!(body.len(), 2);
        assert_eq!(body[0].1, "0.0,1.0");
    }

    #[test]
    fn unknown_schema_is_rejected() {
        let text = "# schema other.v9\nt,x\n0.0,1.0\n";
        match csv_body(text, "test.v1") {
            Err(CsvError::WrongSchema { found, .. }) => assert_eq!(found, "other.v9"),
            other => panic!("expected schema rejection, got {other:?}"),
        }
    }

    #[test]
    fn missing_schema_is_rejected() {
        assert!(matches!(csv_body("t,x\n0.0,1.0\n", "test.v1"), Err(CsvError::MissingSchema)));
    }
}
