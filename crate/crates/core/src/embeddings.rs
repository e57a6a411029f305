//! Class-name embeddings and the lexical dissimilarity between classes.
//!
//! Vectors are either read from a text file (one class per line,
//! `name<TAB>v1 v2 ...`) or produced by [`hash_embed`], a signed feature
//! hashing of character trigrams that needs no external model.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::subsetting::DissimilarityMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    class_names: Vec<String>,
    vectors: Vec<Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(class_names: Vec<String>, vectors: Vec<Vec<f64>>) -> Result<Self> {
        if class_names.len() != vectors.len() {
            return Err(Error::Validation(format!(
                "{} class names but {} vectors",
                class_names.len(),
                vectors.len()
            )));
        }
        if class_names.is_empty() {
            return Err(Error::Validation("embedding table is empty".into()));
        }
        let dim = vectors[0].len();
        let mut seen = HashSet::new();
        for (name, v) in class_names.iter().zip(&vectors) {
            if name.is_empty() {
                return Err(Error::Validation("empty class name".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::DuplicateName(name.clone()));
            }
            if v.len() != dim || dim == 0 {
                return Err(Error::Validation(format!(
                    "vector for {name:?} has dimension {} (expected {dim})",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Validation(format!("vector for {name:?} is not finite")));
            }
            if v.iter().all(|&x| x == 0.0) {
                return Err(Error::ZeroVector(name.clone()));
            }
        }
        Ok(EmbeddingTable {
            class_names,
            vectors,
        })
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.class_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_names.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }

    /// Rows reordered to follow `names`; every name must be present.
    pub fn reordered(&self, names: &[String]) -> Result<Self> {
        let vectors = names
            .iter()
            .map(|n| {
                self.class_names
                    .iter()
                    .position(|c| c == n)
                    .map(|i| self.vectors[i].clone())
                    .ok_or_else(|| Error::Validation(format!("no embedding for class {n:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        EmbeddingTable::new(names.to_vec(), vectors)
    }
}

pub fn parse_embeddings(text: &str) -> Result<EmbeddingTable> {
    let mut names = Vec::new();
    let mut vectors: Vec<Vec<f64>> = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |msg: String| Error::Parse { line: line_no, msg };
        let (name, rest) = line
            .split_once('\t')
            .ok_or_else(|| parse_err("expected <name><TAB><values>".into()))?;
        if name.is_empty() {
            return Err(parse_err("empty class name".into()));
        }
        let v = rest
            .split_whitespace()
            .map(|tok| match tok.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(x),
                Ok(_) => Err(parse_err(format!("non-finite value {tok:?}"))),
                Err(_) => Err(parse_err(format!("invalid number {tok:?}"))),
            })
            .collect::<Result<Vec<f64>>>()?;
        if v.is_empty() {
            return Err(parse_err("no vector values".into()));
        }
        if let Some(first) = vectors.first() {
            if first.len() != v.len() {
                return Err(parse_err(format!(
                    "row has {} values, expected {}",
                    v.len(),
                    first.len()
                )));
            }
        }
        if !seen.insert(name.to_string()) {
            return Err(Error::DuplicateName(name.to_string()));
        }
        if v.iter().all(|&x| x == 0.0) {
            return Err(Error::ZeroVector(name.to_string()));
        }
        names.push(name.to_string());
        vectors.push(v);
    }
    EmbeddingTable::new(names, vectors)
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text)
}

pub fn format_embeddings(table: &EmbeddingTable) -> String {
    let mut out = String::new();
    for (name, v) in table.class_names.iter().zip(&table.vectors) {
        let vals: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        out.push_str(name);
        out.push('\t');
        out.push_str(&vals.join(" "));
        out.push('\n');
    }
    out
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Seeded FNV-1a followed by a splitmix64 finalizer.
fn seeded_hash(bytes: &[u8], seed: u64) -> u64 {
    let mut h = FNV_OFFSET ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Character trigrams of the lowercased name wrapped in `^` ... `$`.
pub fn char_trigrams(name: &str) -> Vec<String> {
    let chars: Vec<char> = std::iter::once('^')
        .chain(name.to_lowercase().chars())
        .chain(std::iter::once('$'))
        .collect();
    chars.windows(3).map(|w| w.iter().collect()).collect()
}

pub fn hash_embed(names: &[String], dim: usize, seed: u64) -> Result<EmbeddingTable> {
    if dim < 8 {
        return Err(Error::usage(format!("hash embedding dimension {dim} is below 8")));
    }
    let mut vectors = Vec::with_capacity(names.len());
    for name in names {
        if name.is_empty() {
            return Err(Error::usage("cannot embed an empty class name"));
        }
        let mut v = vec![0.0; dim];
        for gram in char_trigrams(name) {
            let h = seeded_hash(gram.as_bytes(), seed);
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            v[(h % dim as u64) as usize] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            // every trigram cancelled against another; fall back to the first bucket
            v[(seeded_hash(name.as_bytes(), seed) % dim as u64) as usize] = 1.0;
        } else {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        vectors.push(v);
    }
    EmbeddingTable::new(names.to_vec(), vectors)
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// `1 - cos(E_i, E_j)` for every pair, with an exact zero diagonal.
pub fn lexical_dissimilarity(table: &EmbeddingTable) -> DissimilarityMatrix {
    let n = table.len();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = 1.0 - cosine_similarity(&table.vectors[i], &table.vectors[j]);
            values[i * n + j] = d;
            values[j * n + i] = d;
        }
    }
    DissimilarityMatrix::from_values(n, values).expect("square by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn names(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parses_three_classes() {
        let text = "# comment\nsparrow\t1 0 0 0\nfinch\t0 1 0 0.5\n\nwren\t0 0 1 -2e-1\n";
        let t = parse_embeddings(text).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.dim(), 4);
        assert_eq!(t.class_names()[2], "wren");
        assert_eq!(t.vectors()[2][3], -0.2);
    }

    #[test]
    fn rejects_duplicates_ragged_and_zero_rows() {
        let dup = "sparrow\t1 0\nsparrow\t0 1\n";
        assert!(matches!(parse_embeddings(dup), Err(Error::DuplicateName(n)) if n == "sparrow"));

        let ragged = "a\t1 0 0\nb\t1 0\n";
        assert!(matches!(parse_embeddings(ragged), Err(Error::Parse { line: 2, .. })));

        let zero = "a\t1 0\nb\t0 0\n";
        assert!(matches!(parse_embeddings(zero), Err(Error::ZeroVector(n)) if n == "b"));

        let bad = "a\t1 x\n";
        assert!(matches!(parse_embeddings(bad), Err(Error::Parse { line: 1, .. })));

        let nan = "a\t1 NaN\n";
        assert!(matches!(parse_embeddings(nan), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn format_round_trips() {
        let t = hash_embed(&names(&["alpha", "beta"]), 16, 3).unwrap();
        assert_eq!(parse_embeddings(&format_embeddings(&t)).unwrap(), t);
    }

    #[test]
    fn hash_embed_is_deterministic_and_normalized() {
        let n = names(&["Black_footed_Albatross", "group3_class1"]);
        let a = hash_embed(&n, 64, 11).unwrap();
        let b = hash_embed(&n, 64, 11).unwrap();
        assert_eq!(a, b);
        for v in a.vectors() {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert_abs_diff_eq!(norm, 1.0, epsilon = 1e-12);
        }
        assert!(hash_embed(&names(&[""]), 64, 0).is_err());
        assert!(hash_embed(&n, 4, 0).is_err());
    }

    #[test]
    fn trigrams_are_lowercased_with_markers() {
        assert_eq!(char_trigrams("Ab"), vec!["^ab", "ab$"]);
    }

    #[test]
    fn lexical_cases() {
        let t = EmbeddingTable::new(
            names(&["a", "b", "c", "d"]),
            vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]],
        )
        .unwrap();
        let d = lexical_dissimilarity(&t);
        assert_eq!(d.get(0, 1), 0.0);
        assert_abs_diff_eq!(d.get(0, 2), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.get(0, 3), 2.0, epsilon = 1e-15);
        assert_eq!(d.get(2, 2), 0.0);
    }
}
