//! Pipeline stages. Each `cmd_*` reads its inputs from the output directory,
//! writes its artifacts atomically and returns their paths; the in-memory
//! functions underneath are shared with the experiment harness.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use elfis_core::data::{self, Dataset};
use elfis_core::embeddings::{hash_embed, lexical_dissimilarity, load_embeddings, EmbeddingTable};
use elfis_core::evaluation::{compare_reports, evaluate, EvalReport};
use elfis_core::io::{read_text, write_atomic};
use elfis_core::model::{init_model, load_checkpoint, save_checkpoint, ElfisModel};
use elfis_core::subsetting::{
    combine, num_clusters_for, row_normalize, single_linkage_cluster, visual_dissimilarity, ClusterAssignment,
    CombineMode, ConfusionMatrix,
};
use elfis_core::training::{export_confusion, fit, TrainingHistory};

use crate::config::{EmbeddingSource, PipelineConfig};

pub const DATASET: &str = "dataset.tsv";
pub const BASELINE_CKPT: &str = "baseline.ckpt.json";
pub const BASELINE_HISTORY: &str = "baseline_history.csv";
pub const CONFUSION: &str = "confusion.csv";
pub const CLUSTERS: &str = "clusters.txt";
pub const ELFIS_CKPT: &str = "elfis.ckpt.json";
pub const ELFIS_HISTORY: &str = "elfis_history.csv";
pub const COMPARISON: &str = "comparison.csv";
pub const EFFECTIVE_CONFIG: &str = "config.toml";

pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

pub fn build_dataset(cfg: &PipelineConfig) -> Result<Dataset> {
    match &cfg.data.path {
        Some(p) => Ok(data::load_dataset(p)?),
        None => Ok(data::generate_synthetic(&cfg.synthetic())?),
    }
}

pub fn split_dataset(cfg: &PipelineConfig, ds: &Dataset) -> Result<Splits> {
    let (train, val, test) = data::split(ds, cfg.split_fractions(), cfg.seed)?;
    Ok(Splits { train, val, test })
}

pub fn train_model(
    cfg: &PipelineConfig,
    splits: &Splits,
    assignment: Option<&ClusterAssignment>,
) -> Result<(ElfisModel, TrainingHistory)> {
    let ds = &splits.train;
    let model = init_model(&cfg.model_config(ds.input_dim(), ds.n_classes()), assignment)?;
    Ok(fit(model, &splits.train, &splits.val, &cfg.train_config())?)
}

pub fn embeddings_for(cfg: &PipelineConfig, class_names: &[String]) -> Result<EmbeddingTable> {
    let e = &cfg.embeddings;
    Ok(match e.source {
        EmbeddingSource::Hash => hash_embed(class_names, e.hash_dim, e.hash_seed)?,
        EmbeddingSource::File => {
            let path = e.path.as_deref().context("embeddings.path is not set")?;
            load_embeddings(path)?.reordered(class_names)?
        }
    })
}

pub fn cluster_count(cfg: &PipelineConfig, n_classes: usize) -> usize {
    cfg.cluster.k.unwrap_or_else(|| num_clusters_for(n_classes, cfg.cluster.ratio))
}

/// Clusters classes from a validation confusion matrix and name embeddings.
pub fn cluster_classes(
    cfg: &PipelineConfig,
    cm: &ConfusionMatrix,
    class_names: &[String],
    mode: CombineMode,
) -> Result<ClusterAssignment> {
    let d_cm = visual_dissimilarity(&row_normalize(cm))?;
    let d_lex = match mode {
        CombineMode::CmOnly => d_cm.clone(),
        _ => lexical_dissimilarity(&embeddings_for(cfg, class_names)?),
    };
    let d = combine(&d_cm, &d_lex, mode)?;
    let k = cluster_count(cfg, class_names.len());
    if k > class_names.len() {
        bail!("cannot form {k} clusters from {} classes", class_names.len());
    }
    Ok(single_linkage_cluster(&d, k)?)
}

fn out(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn write(path: PathBuf, text: &str) -> Result<PathBuf> {
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

fn load_splits(cfg: &PipelineConfig, dir: &Path) -> Result<Splits> {
    let ds = data::load_dataset(&out(dir, DATASET))?;
    split_dataset(cfg, &ds)
}

pub fn cmd_gen_data(cfg: &PipelineConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let ds = build_dataset(cfg)?;
    let path = out(dir, DATASET);
    data::save_dataset(&ds, &path)?;
    Ok(vec![path])
}

pub fn cmd_train_baseline(cfg: &PipelineConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let splits = load_splits(cfg, dir)?;
    let (model, history) = train_model(cfg, &splits, None)?;
    let ckpt = out(dir, BASELINE_CKPT);
    save_checkpoint(&model, &ckpt)?;
    Ok(vec![ckpt, write(out(dir, BASELINE_HISTORY), &history.to_csv())?])
}

pub fn cmd_export_confusion(cfg: &PipelineConfig, dir: &Path, checkpoint: Option<&Path>) -> Result<Vec<PathBuf>> {
    let splits = load_splits(cfg, dir)?;
    let ckpt = checkpoint.map_or_else(|| out(dir, BASELINE_CKPT), Path::to_path_buf);
    let model = load_checkpoint(&ckpt)?;
    let cm = export_confusion(&model, &splits.val)?;
    Ok(vec![write(out(dir, CONFUSION), &cm.to_csv(Some(splits.val.class_names())))?])
}

pub fn cmd_cluster(cfg: &PipelineConfig, dir: &Path, confusion: Option<&Path>) -> Result<Vec<PathBuf>> {
    let path = confusion.map_or_else(|| out(dir, CONFUSION), Path::to_path_buf);
    let (cm, header) = ConfusionMatrix::parse_csv(&read_text(&path)?)?;
    let names = match header {
        Some(h) => h,
        None => data::load_dataset(&out(dir, DATASET))?.class_names().to_vec(),
    };
    let assignment = cluster_classes(cfg, &cm, &names, cfg.cluster.mode)?;
    Ok(vec![write(out(dir, CLUSTERS), &assignment.format(&names))?])
}

pub fn cmd_train_elfis(cfg: &PipelineConfig, dir: &Path, clusters: Option<&Path>) -> Result<Vec<PathBuf>> {
    let splits = load_splits(cfg, dir)?;
    let path = clusters.map_or_else(|| out(dir, CLUSTERS), Path::to_path_buf);
    let assignment = ClusterAssignment::parse(&read_text(&path)?, splits.train.class_names())?;
    let (model, history) = train_model(cfg, &splits, Some(&assignment))?;
    let ckpt = out(dir, ELFIS_CKPT);
    save_checkpoint(&model, &ckpt)?;
    Ok(vec![ckpt, write(out(dir, ELFIS_HISTORY), &history.to_csv())?])
}

/// `baseline.ckpt.json` reports to `baseline_report.csv`.
fn report_name(checkpoint: &Path) -> String {
    let file = checkpoint.file_name().and_then(|f| f.to_str()).unwrap_or("model");
    let stem = file.split('.').next().filter(|s| !s.is_empty()).unwrap_or("model");
    format!("{stem}_report.csv")
}

/// Test-split reports for each checkpoint; with exactly two, the second is
/// compared against the first.
pub fn cmd_evaluate(cfg: &PipelineConfig, dir: &Path, checkpoints: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let splits = load_splits(cfg, dir)?;
    let defaults = [out(dir, BASELINE_CKPT), out(dir, ELFIS_CKPT)];
    let checkpoints = if checkpoints.is_empty() { &defaults[..] } else { checkpoints };
    let mut written = Vec::new();
    let mut reports: Vec<EvalReport> = Vec::new();
    for ckpt in checkpoints {
        let report = evaluate(&load_checkpoint(ckpt)?, &splits.test)?;
        written.push(write(out(dir, &report_name(ckpt)), &report.to_csv())?);
        reports.push(report);
    }
    if let [baseline, elfis] = &reports[..] {
        written.push(write(out(dir, COMPARISON), &compare_reports(baseline, elfis)?.to_csv())?);
    }
    Ok(written)
}

/// All stages in order, plus the effective configuration.
pub fn cmd_pipeline(cfg: &PipelineConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = cmd_gen_data(cfg, dir)?;
    written.push(write(out(dir, EFFECTIVE_CONFIG), &cfg.to_toml())?);
    written.extend(cmd_train_baseline(cfg, dir)?);
    written.extend(cmd_export_confusion(cfg, dir, None)?);
    written.extend(cmd_cluster(cfg, dir, None)?);
    written.extend(cmd_train_elfis(cfg, dir, None)?);
    written.extend(cmd_evaluate(cfg, dir, &[])?);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_names_follow_the_checkpoint_stem() {
        assert_eq!(report_name(Path::new("out/baseline.ckpt.json")), "baseline_report.csv");
        assert_eq!(report_name(Path::new("run2.json")), "run2_report.csv");
    }

    #[test]
    fn ratio_gives_floor_with_minimum_two() {
        let cfg = PipelineConfig::default();
        assert_eq!(cluster_count(&cfg, 20), 2);
        assert_eq!(cluster_count(&cfg, 200), 20);
        let mut fixed = cfg.clone();
        fixed.cluster.k = Some(4);
        assert_eq!(cluster_count(&fixed, 20), 4);
    }
}
