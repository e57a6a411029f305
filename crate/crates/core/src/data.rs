//! Synthetic fine-grained datasets with planted meta-groups, file I/O,
//! stratified splitting and seeded batching.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_groups: usize,
    pub classes_per_group: usize,
    pub input_dim: usize,
    /// Scale of the group prototypes.
    pub group_sep: f64,
    /// Norm of each class offset from its group prototype.
    pub class_sep: f64,
    pub noise_sigma: f64,
    pub samples_per_class: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_groups: 4,
            classes_per_group: 5,
            input_dim: 16,
            group_sep: 10.0,
            class_sep: 1.0,
            noise_sigma: 0.5,
            samples_per_class: 40,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn n_classes(&self) -> usize {
        self.n_groups * self.classes_per_group
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_groups", self.n_groups),
            ("classes_per_group", self.classes_per_group),
            ("input_dim", self.input_dim),
            ("samples_per_class", self.samples_per_class),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Validation(format!("{name} must be positive")));
            }
        }
        if !(self.class_sep > 0.0 && self.group_sep > self.class_sep) {
            return Err(Error::Validation(format!(
                "need 0 < class_sep ({}) < group_sep ({})",
                self.class_sep, self.group_sep
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Validation("noise_sigma must be a nonnegative number".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    input_dim: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
    class_names: Vec<String>,
    planted_groups: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(
        input_dim: usize,
        features: Vec<f64>,
        labels: Vec<usize>,
        class_names: Vec<String>,
        planted_groups: Option<Vec<usize>>,
    ) -> Result<Self> {
        if input_dim == 0 || features.len() != labels.len() * input_dim {
            return Err(Error::Validation(format!(
                "{} feature values for {} samples of dimension {input_dim}",
                features.len(),
                labels.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &class_names {
            if name.is_empty() || name.contains(',') {
                return Err(Error::Validation(format!("invalid class name {name:?}")));
            }
            if !seen.insert(name) {
                return Err(Error::DuplicateName(name.clone()));
            }
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::Validation(format!(
                "label {bad} out of range for {} classes",
                class_names.len()
            )));
        }
        if let Some(g) = &planted_groups {
            if g.len() != class_names.len() {
                return Err(Error::Validation(format!(
                    "{} group ids for {} classes",
                    g.len(),
                    class_names.len()
                )));
            }
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite feature value".into()));
        }
        Ok(Dataset {
            input_dim,
            features,
            labels,
            class_names,
            planted_groups,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn planted_groups(&self) -> Option<&[usize]> {
        self.planted_groups.as_deref()
    }

    pub fn feature_row(&self, i: usize) -> &[f64] {
        &self.features[i * self.input_dim..(i + 1) * self.input_dim]
    }

    /// Features of the selected samples as a `[rows, input_dim]` tensor.
    pub fn batch_features(&self, rows: &[usize]) -> Result<Tensor> {
        let mut values = Vec::with_capacity(rows.len() * self.input_dim);
        for &r in rows {
            values.extend_from_slice(self.feature_row(r));
        }
        Tensor::new(vec![rows.len(), self.input_dim], values)
    }

    pub fn batch_labels(&self, rows: &[usize]) -> Vec<usize> {
        rows.iter().map(|&r| self.labels[r]).collect()
    }

    /// Samples at `rows`, keeping class metadata.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(rows.len() * self.input_dim);
        for &r in rows {
            features.extend_from_slice(self.feature_row(r));
        }
        Dataset {
            input_dim: self.input_dim,
            features,
            labels: self.batch_labels(rows),
            class_names: self.class_names.clone(),
            planted_groups: self.planted_groups.clone(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

fn unit_direction(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Class prototypes, in class order, as generated for `cfg`.
pub fn class_prototypes(cfg: &SyntheticConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok(prototypes_with(cfg, &mut rng))
}

fn prototypes_with(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let groups: Vec<Vec<f64>> = (0..cfg.n_groups)
        .map(|_| {
            (0..cfg.input_dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut *rng);
                    cfg.group_sep * z
                })
                .collect()
        })
        .collect();
    let mut protos = Vec::with_capacity(cfg.n_classes());
    for group in &groups {
        for _ in 0..cfg.classes_per_group {
            let dir = unit_direction(rng, cfg.input_dim);
            protos.push(group.iter().zip(dir).map(|(g, d)| g + cfg.class_sep * d).collect());
        }
    }
    protos
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let protos = prototypes_with(cfg, &mut rng);
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Validation(e.to_string()))?;
    let n = cfg.n_classes();
    let mut features = Vec::with_capacity(n * cfg.samples_per_class * cfg.input_dim);
    let mut labels = Vec::with_capacity(n * cfg.samples_per_class);
    for (class, proto) in protos.iter().enumerate() {
        for _ in 0..cfg.samples_per_class {
            features.extend(proto.iter().map(|p| p + noise.sample(&mut rng)));
            labels.push(class);
        }
    }
    let class_names = (0..cfg.n_groups)
        .flat_map(|g| (0..cfg.classes_per_group).map(move |c| format!("group{g}_class{c}")))
        .collect();
    let groups = (0..n).map(|c| c / cfg.classes_per_group).collect();
    Dataset::new(cfg.input_dim, features, labels, class_names, Some(groups))
}

/// Per-class stratified, seeded partition of sample indices into
/// `(train, val, test)`.
pub fn split_indices(
    ds: &Dataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<[Vec<usize>; 3]> {
    let (ft, fv, fs) = fractions;
    if !(ft > 0.0 && fv > 0.0 && fs > 0.0) || (ft + fv + fs - 1.0).abs() > 1e-9 {
        return Err(Error::usage(format!(
            "split fractions {fractions:?} must be positive and sum to 1"
        )));
    }
    let mut by_class = vec![Vec::new(); ds.n_classes()];
    for (i, &l) in ds.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = [Vec::new(), Vec::new(), Vec::new()];
    for (class, members) in by_class.iter_mut().enumerate() {
        let count = members.len();
        if count == 0 {
            continue;
        }
        if count < 3 {
            return Err(Error::Validation(format!(
                "class {} has {count} samples; stratified split needs at least 3",
                ds.class_names[class]
            )));
        }
        members.shuffle(&mut rng);
        let n_train = ((ft * count as f64).round() as usize).clamp(1, count - 2);
        let n_val = ((fv * count as f64).round() as usize).clamp(1, count - n_train - 1);
        out[0].extend_from_slice(&members[..n_train]);
        out[1].extend_from_slice(&members[n_train..n_train + n_val]);
        out[2].extend_from_slice(&members[n_train + n_val..]);
    }
    Ok(out)
}

pub fn split(ds: &Dataset, fractions: (f64, f64, f64), seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let [train, val, test] = split_indices(ds, fractions, seed)?;
    Ok((ds.subset(&train), ds.subset(&val), ds.subset(&test)))
}

/// Shuffled index batches for one epoch; the last batch may be short.
pub fn batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch size must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

pub fn format_dataset(ds: &Dataset) -> String {
    let mut out = format!("#classes: {}\n", ds.class_names.join(","));
    if let Some(groups) = &ds.planted_groups {
        let g: Vec<String> = groups.iter().map(usize::to_string).collect();
        out.push_str(&format!("#groups: {}\n", g.join(",")));
    }
    for i in 0..ds.len() {
        let vals: Vec<String> = ds.feature_row(i).iter().map(f64::to_string).collect();
        out.push_str(&format!("{}\t{}\n", ds.labels[i], vals.join(" ")));
    }
    out
}

pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut class_names: Option<Vec<String>> = None;
    let mut groups = None;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut input_dim = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let err = |msg: String| Error::Parse { line: line_no, msg };
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("#classes:") {
            class_names = Some(rest.trim().split(',').map(|s| s.trim().to_string()).collect());
            continue;
        }
        if let Some(rest) = line.strip_prefix("#groups:") {
            let g = rest
                .trim()
                .split(',')
                .map(|s| s.trim().parse::<usize>().map_err(|_| err(format!("invalid group id {s:?}"))))
                .collect::<Result<Vec<_>>>()?;
            groups = Some(g);
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let (label, rest) = line
            .split_once('\t')
            .ok_or_else(|| err("expected <label><TAB><values>".into()))?;
        let label: usize = label
            .trim()
            .parse()
            .map_err(|_| err(format!("invalid label {label:?}")))?;
        let row = rest
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| err(format!("invalid number {t:?}"))))
            .collect::<Result<Vec<f64>>>()?;
        match input_dim {
            None => input_dim = Some(row.len()),
            Some(d) if d != row.len() => {
                return Err(err(format!("row has {} values, expected {d}", row.len())));
            }
            _ => {}
        }
        labels.push(label);
        features.extend(row);
    }
    let class_names = class_names.ok_or_else(|| Error::Parse {
        line: 1,
        msg: "missing #classes header".into(),
    })?;
    let input_dim = input_dim.ok_or_else(|| Error::Validation("dataset has no samples".into()))?;
    Dataset::new(input_dim, features, labels, class_names, groups)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text)
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    crate::io::write_atomic(path, format_dataset(ds).as_bytes())
}
