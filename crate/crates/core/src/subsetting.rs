//! Class-subset construction.
//!
//! A baseline's confusion matrix gives a visual dissimilarity
//! `D_CM = 1 - (M + M^T) / 2` over row-normalized counts `M`. It is fused
//! with a lexical dissimilarity (see [`crate::embeddings`]) and the classes
//! are grouped by single-linkage agglomerative clustering cut at `K`
//! clusters.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `counts[i][j]`: examples of true class `i` predicted as class `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(n: usize) -> Self {
        ConfusionMatrix {
            n,
            counts: vec![0; n * n],
        }
    }

    pub fn from_rows(rows: Vec<Vec<u64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Validation("confusion matrix is empty".into()));
        }
        let mut counts = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Validation(format!(
                    "confusion row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            counts.extend_from_slice(row);
        }
        Ok(ConfusionMatrix { n, counts })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.n + predicted]
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.n + predicted] += 1;
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.n..(truth + 1) * self.n]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    /// CSV with an optional header row of class names.
    pub fn to_csv(&self, class_names: Option<&[String]>) -> String {
        let mut out = String::new();
        if let Some(names) = class_names {
            out.push_str(&names.join(","));
            out.push('\n');
        }
        for i in 0..self.n {
            let row: Vec<String> = self.row(i).iter().map(u64::to_string).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Parses the CSV form; returns header names when the first row is not numeric.
    pub fn parse_csv(text: &str) -> Result<(Self, Option<Vec<String>>)> {
        let mut header = None;
        let mut rows = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let parsed: std::result::Result<Vec<u64>, _> =
                fields.iter().map(|f| f.parse::<u64>()).collect();
            match parsed {
                Ok(row) => rows.push(row),
                Err(_) if header.is_none() && rows.is_empty() => {
                    header = Some(fields.iter().map(|s| s.to_string()).collect::<Vec<_>>());
                }
                Err(_) => {
                    return Err(Error::Parse {
                        line: idx + 1,
                        msg: "expected nonnegative integer counts".into(),
                    })
                }
            }
        }
        let cm = ConfusionMatrix::from_rows(rows)?;
        if let Some(h) = &header {
            if h.len() != cm.n {
                return Err(Error::Validation(format!(
                    "confusion header names {} classes but matrix is {}x{}",
                    h.len(),
                    cm.n,
                    cm.n
                )));
            }
        }
        Ok((cm, header))
    }
}

/// Each row with positive support divided by its sum; empty rows stay zero.
pub fn row_normalize(cm: &ConfusionMatrix) -> Vec<Vec<f64>> {
    (0..cm.n)
        .map(|i| {
            let row = cm.row(i);
            let total: u64 = row.iter().sum();
            if total == 0 {
                vec![0.0; cm.n]
            } else {
                row.iter().map(|&c| c as f64 / total as f64).collect()
            }
        })
        .collect()
}

/// Square matrix of pairwise class distances, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DissimilarityMatrix {
    n: usize,
    values: Vec<f64>,
}

impl DissimilarityMatrix {
    pub fn from_values(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n || n == 0 {
            return Err(Error::Dimension {
                op: "dissimilarity",
                lhs: vec![n, n],
                rhs: vec![values.len()],
            });
        }
        Ok(DissimilarityMatrix { n, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let values: Vec<f64> = rows.iter().flatten().copied().collect();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension {
                op: "dissimilarity",
                lhs: vec![n, n],
                rhs: vec![values.len()],
            });
        }
        DissimilarityMatrix::from_values(n, values)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| (i + 1..self.n).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tol))
    }

    pub fn transposed(&self) -> Self {
        let n = self.n;
        let values = (0..n * n).map(|ij| self.get(ij % n, ij / n)).collect();
        DissimilarityMatrix { n, values }
    }

    /// Strict upper triangle, row by row.
    pub fn upper_triangle(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n * (self.n - 1) / 2);
        for i in 0..self.n {
            for j in i + 1..self.n {
                out.push(self.get(i, j));
            }
        }
        out
    }

    /// Elementwise map over off-diagonal entries; the diagonal is set to 0.
    pub fn map_offdiag(&self, f: impl Fn(f64) -> f64) -> Self {
        let n = self.n;
        let values = (0..n * n)
            .map(|ij| if ij / n == ij % n { 0.0 } else { f(self.values[ij]) })
            .collect();
        DissimilarityMatrix { n, values }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n {
            let row: Vec<String> = (0..self.n).map(|j| self.get(i, j).to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// `D_CM = 1 - (M + M^T)/2` off the diagonal, zero on it.
pub fn visual_dissimilarity(m: &[Vec<f64>]) -> Result<DissimilarityMatrix> {
    let n = m.len();
    if m.iter().any(|r| r.len() != n) {
        return Err(Error::Validation("confusion rates must form a square matrix".into()));
    }
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = 1.0 - 0.5 * (m[i][j] + m[j][i]);
            values[i * n + j] = d;
            values[j * n + i] = d;
        }
    }
    DissimilarityMatrix::from_values(n, values)
}

/// Z-scores the off-diagonal entries using the mean and population standard
/// deviation of the strict upper triangle. `name` labels degeneracy errors.
pub fn standardize_offdiag(d: &DissimilarityMatrix, name: &str) -> Result<DissimilarityMatrix> {
    if d.n < 3 {
        return Err(Error::usage(format!(
            "standardizing {name} needs at least 3 classes, got {}",
            d.n
        )));
    }
    let upper = d.upper_triangle();
    let count = upper.len() as f64;
    let mean = upper.iter().sum::<f64>() / count;
    let var = upper.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / count;
    let std = var.sqrt();
    if !(std > 0.0) || std < 1e-15 * mean.abs().max(1.0) {
        return Err(Error::Degenerate { name: name.into() });
    }
    Ok(d.map_offdiag(|x| (x - mean) / std))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineMode {
    CmOnly,
    LexOnly,
    Average,
    StdAverage,
}

impl FromStr for CombineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cm_only" => Ok(CombineMode::CmOnly),
            "lex_only" => Ok(CombineMode::LexOnly),
            "average" => Ok(CombineMode::Average),
            "std_average" => Ok(CombineMode::StdAverage),
            other => Err(Error::usage(format!("unknown combine mode {other:?}"))),
        }
    }
}

impl fmt::Display for CombineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CombineMode::CmOnly => "cm_only",
            CombineMode::LexOnly => "lex_only",
            CombineMode::Average => "average",
            CombineMode::StdAverage => "std_average",
        })
    }
}

fn midpoint(a: &DissimilarityMatrix, b: &DissimilarityMatrix) -> DissimilarityMatrix {
    let values = a.values.iter().zip(&b.values).map(|(x, y)| 0.5 * (x + y)).collect();
    DissimilarityMatrix { n: a.n, values }
}

pub fn combine(
    d_cm: &DissimilarityMatrix,
    d_lex: &DissimilarityMatrix,
    mode: CombineMode,
) -> Result<DissimilarityMatrix> {
    if d_cm.n != d_lex.n {
        return Err(Error::Dimension {
            op: "combine",
            lhs: vec![d_cm.n, d_cm.n],
            rhs: vec![d_lex.n, d_lex.n],
        });
    }
    match mode {
        CombineMode::CmOnly => Ok(d_cm.clone()),
        CombineMode::LexOnly => Ok(d_lex.clone()),
        CombineMode::Average => Ok(midpoint(d_cm, d_lex)),
        CombineMode::StdAverage => Ok(midpoint(
            &standardize_offdiag(d_cm, "D_CM")?,
            &standardize_offdiag(d_lex, "D_LEX")?,
        )),
    }
}

/// Partition of `n` classes into `K` non-empty clusters.
///
/// `members[k]` lists the classes of cluster `k` in ascending order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<usize>>", into = "Vec<Vec<usize>>")]
pub struct ClusterAssignment {
    cluster_of: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl ClusterAssignment {
    /// Validates that `members` partitions `0..n` for some `n`.
    pub fn from_members(mut members: Vec<Vec<usize>>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Validation("assignment has no clusters".into()));
        }
        let n: usize = members.iter().map(Vec::len).sum();
        let mut cluster_of = vec![usize::MAX; n];
        for (k, m) in members.iter_mut().enumerate() {
            if m.is_empty() {
                return Err(Error::Validation(format!("cluster {k} is empty")));
            }
            m.sort_unstable();
            for &c in m.iter() {
                if c >= n || cluster_of[c] != usize::MAX {
                    return Err(Error::Validation(format!(
                        "class {c} is out of range or assigned twice"
                    )));
                }
                cluster_of[c] = k;
            }
        }
        Ok(ClusterAssignment {
            cluster_of,
            members,
        })
    }

    pub fn from_cluster_of(cluster_of: Vec<usize>) -> Result<Self> {
        let k = cluster_of.iter().max().map_or(0, |m| m + 1);
        let mut members = vec![Vec::new(); k];
        for (c, &id) in cluster_of.iter().enumerate() {
            members[id].push(c);
        }
        ClusterAssignment::from_members(members)
    }

    /// Every class in one cluster.
    pub fn single(n: usize) -> Self {
        ClusterAssignment::from_members(vec![(0..n).collect()]).expect("valid")
    }

    pub fn n(&self) -> usize {
        self.cluster_of.len()
    }

    pub fn k(&self) -> usize {
        self.members.len()
    }

    pub fn cluster_of(&self, class: usize) -> usize {
        self.cluster_of[class]
    }

    pub fn labels(&self) -> &[usize] {
        &self.cluster_of
    }

    pub fn members(&self, k: usize) -> &[usize] {
        &self.members[k]
    }

    pub fn all_members(&self) -> &[Vec<usize>] {
        &self.members
    }

    /// `cluster_id: name1, name2, ...` lines.
    pub fn format(&self, class_names: &[String]) -> String {
        let mut out = String::new();
        for (k, m) in self.members.iter().enumerate() {
            let names: Vec<&str> = m.iter().map(|&c| class_names[c].as_str()).collect();
            out.push_str(&format!("{k}: {}\n", names.join(", ")));
        }
        out
    }

    pub fn parse(text: &str, class_names: &[String]) -> Result<Self> {
        let mut members = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse { line: idx + 1, msg };
            let (id, rest) = line
                .split_once(':')
                .ok_or_else(|| err("expected `cluster_id: names`".into()))?;
            let id: usize = id
                .trim()
                .parse()
                .map_err(|_| err(format!("invalid cluster id {:?}", id.trim())))?;
            if id != members.len() {
                return Err(err(format!("cluster id {id} out of sequence")));
            }
            let m = rest
                .split(',')
                .map(str::trim)
                .map(|name| {
                    class_names
                        .iter()
                        .position(|c| c == name)
                        .ok_or_else(|| err(format!("unknown class name {name:?}")))
                })
                .collect::<Result<Vec<usize>>>()?;
            members.push(m);
        }
        let a = ClusterAssignment::from_members(members)?;
        if a.n() != class_names.len() {
            return Err(Error::Validation(format!(
                "cluster file covers {} classes, expected {}",
                a.n(),
                class_names.len()
            )));
        }
        Ok(a)
    }
}

impl TryFrom<Vec<Vec<usize>>> for ClusterAssignment {
    type Error = Error;

    fn try_from(members: Vec<Vec<usize>>) -> Result<Self> {
        ClusterAssignment::from_members(members)
    }
}

impl From<ClusterAssignment> for Vec<Vec<usize>> {
    fn from(a: ClusterAssignment) -> Self {
        a.members
    }
}

/// One agglomeration step: clusters identified by their smallest member.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub distance: f64,
}

/// Greedy single linkage from singletons down to `k` clusters.
///
/// Each step merges the pair with the smallest minimum cross-pair distance;
/// exact ties go to the lexicographically smallest (min index, min index)
/// pair. Returns the assignment (ids ordered by smallest member) and the
/// merges performed.
pub fn single_linkage(d: &DissimilarityMatrix, k: usize) -> Result<(ClusterAssignment, Vec<Merge>)> {
    let n = d.n;
    if k == 0 || k > n {
        return Err(Error::usage(format!("cluster count {k} outside [1, {n}]")));
    }
    // Cluster distances indexed by representative (smallest member).
    let mut dist = d.values.clone();
    let mut active: Vec<usize> = (0..n).collect();
    let mut root: Vec<usize> = (0..n).collect();
    let mut merges = Vec::with_capacity(n - k);
    while active.len() > k {
        let mut best: Option<(usize, usize, f64)> = None;
        for (ai, &a) in active.iter().enumerate() {
            for &b in &active[ai + 1..] {
                let v = dist[a * n + b];
                if best.is_none_or(|(_, _, bv)| v < bv) {
                    best = Some((a, b, v));
                }
            }
        }
        let (a, b, v) = best.expect("at least two active clusters");
        for &c in &active {
            if c != a && c != b {
                let m = dist[a * n + c].min(dist[b * n + c]);
                dist[a * n + c] = m;
                dist[c * n + a] = m;
            }
        }
        active.retain(|&c| c != b);
        for r in root.iter_mut() {
            if *r == b {
                *r = a;
            }
        }
        merges.push(Merge {
            left: a,
            right: b,
            distance: v,
        });
    }
    // `active` is ascending, so ids follow smallest members.
    let cluster_of = root
        .iter()
        .map(|r| active.binary_search(r).expect("root is active"))
        .collect();
    Ok((ClusterAssignment::from_cluster_of(cluster_of)?, merges))
}

pub fn single_linkage_cluster(d: &DissimilarityMatrix, k: usize) -> Result<ClusterAssignment> {
    single_linkage(d, k).map(|(a, _)| a)
}

/// `floor(n * ratio)`, at least 2.
pub fn num_clusters_for(n: usize, ratio: f64) -> usize {
    // the small offset keeps products such as 20 * 0.15 from flooring to 2
    ((n as f64 * ratio + 1e-9).floor() as usize).max(2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn dm(rows: &[&[f64]]) -> DissimilarityMatrix {
        DissimilarityMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn row_normalize_cases() {
        let cm = ConfusionMatrix::from_rows(vec![vec![8, 2], vec![1, 9]]).unwrap();
        assert_eq!(row_normalize(&cm), vec![vec![0.8, 0.2], vec![0.1, 0.9]]);

        let eye = ConfusionMatrix::from_rows(vec![vec![3, 0], vec![0, 5]]).unwrap();
        assert_eq!(row_normalize(&eye), vec![vec![1.0, 0.0], vec![0.0, 1.0]]);

        let absent = ConfusionMatrix::from_rows(vec![vec![0, 0], vec![1, 1]]).unwrap();
        assert_eq!(row_normalize(&absent)[0], vec![0.0, 0.0]);
    }

    #[test]
    fn visual_dissimilarity_cases() {
        let eye = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let d = visual_dissimilarity(&eye).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(d.get(i, j), if i == j { 0.0 } else { 1.0 });
            }
        }

        let m = vec![vec![0.8, 0.2, 0.0], vec![0.1, 0.9, 0.0], vec![0.0, 0.0, 1.0]];
        let d = visual_dissimilarity(&m).unwrap();
        assert_abs_diff_eq!(d.get(0, 1), 0.85, epsilon = 1e-15);
        assert_eq!(d.get(0, 2), 1.0);
        assert_eq!(d, d.transposed());

        let uniform = vec![vec![0.25; 4]; 4];
        let d = visual_dissimilarity(&uniform).unwrap();
        assert!(d.upper_triangle().iter().all(|&v| v == 0.75));
    }

    #[test]
    fn standardize_three_by_three() {
        let d = dm(&[&[0.0, 0.2, 0.4], &[0.2, 0.0, 0.6], &[0.4, 0.6, 0.0]]);
        let z = standardize_offdiag(&d, "D").unwrap();
        let expected = [-1.224745, 0.0, 1.224745];
        for (got, want) in z.upper_triangle().iter().zip(expected) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-6);
        }
        assert_eq!(z.get(1, 1), 0.0);
        assert!(z.is_symmetric(0.0));
    }

    #[test]
    fn standardize_rejects_constant_matrix() {
        let d = visual_dissimilarity(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]])
            .unwrap();
        let err = standardize_offdiag(&d, "D_CM").unwrap_err();
        assert!(err.to_string().contains("D_CM"), "{err}");
        assert!(matches!(
            combine(&d, &d, CombineMode::StdAverage),
            Err(Error::Degenerate { .. })
        ));
    }

    #[test]
    fn combine_modes() {
        let ones = dm(&[&[0.0, 1.0, 1.0], &[1.0, 0.0, 1.0], &[1.0, 1.0, 0.0]]);
        let zeros = dm(&[&[0.0; 3], &[0.0; 3], &[0.0; 3]]);
        let avg = combine(&ones, &zeros, CombineMode::Average).unwrap();
        assert!(avg.upper_triangle().iter().all(|&v| v == 0.5));
        assert_eq!(combine(&ones, &zeros, CombineMode::CmOnly).unwrap(), ones);
        assert_eq!(combine(&ones, &zeros, CombineMode::LexOnly).unwrap(), zeros);

        let d = dm(&[&[0.0, 0.2, 0.4], &[0.2, 0.0, 0.6], &[0.4, 0.6, 0.0]]);
        let both = combine(&d, &d, CombineMode::StdAverage).unwrap();
        assert_eq!(both, standardize_offdiag(&d, "D").unwrap());

        let small = dm(&[&[0.0, 1.0], &[1.0, 0.0]]);
        assert!(matches!(
            combine(&d, &small, CombineMode::Average),
            Err(Error::Dimension { .. })
        ));
        assert_eq!("std_average".parse::<CombineMode>().unwrap(), CombineMode::StdAverage);
        assert!("clustgeo".parse::<CombineMode>().is_err());
    }

    #[test]
    fn single_linkage_small_cases() {
        let d = dm(&[&[0.0, 1.0, 5.0], &[1.0, 0.0, 4.0], &[5.0, 4.0, 0.0]]);
        let a = single_linkage_cluster(&d, 2).unwrap();
        assert_eq!(a.all_members(), &[vec![0, 1], vec![2]]);

        let a = single_linkage_cluster(&d, 3).unwrap();
        assert_eq!(a.k(), 3);
        let a = single_linkage_cluster(&d, 1).unwrap();
        assert_eq!(a.all_members(), &[vec![0, 1, 2]]);

        assert!(single_linkage_cluster(&d, 0).is_err());
        assert!(single_linkage_cluster(&d, 4).is_err());
    }

    #[test]
    fn single_linkage_breaks_ties_by_smallest_indices() {
        // all off-diagonal distances equal: merges chain from class 0
        let n = 4;
        let values = (0..n * n).map(|ij| if ij / n == ij % n { 0.0 } else { 1.0 }).collect();
        let d = DissimilarityMatrix::from_values(n, values).unwrap();
        let (a, merges) = single_linkage(&d, 2).unwrap();
        assert_eq!(a.all_members(), &[vec![0, 1, 2], vec![3]]);
        assert_eq!((merges[0].left, merges[0].right), (0, 1));
    }

    #[test]
    fn single_linkage_ids_follow_smallest_member() {
        // 3 and 0 are close, 1 and 2 are close
        let d = dm(&[
            &[0.0, 9.0, 9.0, 0.5],
            &[9.0, 0.0, 0.7, 9.0],
            &[9.0, 0.7, 0.0, 9.0],
            &[0.5, 9.0, 9.0, 0.0],
        ]);
        let a = single_linkage_cluster(&d, 2).unwrap();
        assert_eq!(a.labels(), &[0, 1, 1, 0]);
    }

    #[test]
    fn num_clusters_fixed_points() {
        assert_eq!(num_clusters_for(200, 0.10), 20);
        assert_eq!(num_clusters_for(555, 0.10), 55);
        assert_eq!(num_clusters_for(10, 0.10), 2);
        assert_eq!(num_clusters_for(20, 0.10), 2);
        assert_eq!(num_clusters_for(20, 0.15), 3);
        assert_eq!(num_clusters_for(196, 0.10), 19);
    }

    #[test]
    fn confusion_csv_round_trip_with_header() {
        let cm = ConfusionMatrix::from_rows(vec![vec![3, 1], vec![0, 4]]).unwrap();
        let names = vec!["a".to_string(), "b".to_string()];
        let (back, header) = ConfusionMatrix::parse_csv(&cm.to_csv(Some(&names))).unwrap();
        assert_eq!(back, cm);
        assert_eq!(header.unwrap(), names);
        let (back, header) = ConfusionMatrix::parse_csv(&cm.to_csv(None)).unwrap();
        assert_eq!(back, cm);
        assert!(header.is_none());
        assert!(ConfusionMatrix::parse_csv("1,2\n3\n").is_err());
        assert!(matches!(
            ConfusionMatrix::parse_csv("1,2\n3,x\n"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn cluster_file_round_trip() {
        let names: Vec<String> = ["w", "x", "y", "z"].iter().map(|s| s.to_string()).collect();
        let a = ClusterAssignment::from_members(vec![vec![0, 2], vec![1], vec![3]]).unwrap();
        let text = a.format(&names);
        assert_eq!(text, "0: w, y\n1: x\n2: z\n");
        assert_eq!(ClusterAssignment::parse(&text, &names).unwrap(), a);
        assert!(ClusterAssignment::parse("0: w, q\n", &names).is_err());
        assert!(ClusterAssignment::parse("0: w, x\n", &names).is_err());
    }

    #[test]
    fn assignment_rejects_invalid_partitions() {
        assert!(ClusterAssignment::from_members(vec![vec![0, 1], vec![]]).is_err());
        assert!(ClusterAssignment::from_members(vec![vec![0, 1], vec![1]]).is_err());
        assert!(ClusterAssignment::from_members(vec![vec![0, 3]]).is_err());
    }
}
