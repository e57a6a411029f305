//! Accuracy reports, baseline comparisons and partition agreement.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::ElfisModel;
use crate::subsetting::{ClusterAssignment, ConfusionMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    pub accuracy: f64,
    /// `None` for classes with no examples.
    pub per_class_accuracy: Vec<Option<f64>>,
    pub confusion: ConfusionMatrix,
    pub n_examples: usize,
}

impl EvalReport {
    pub fn from_predictions(class_names: &[String], truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.is_empty() {
            return Err(Error::usage("cannot evaluate an empty dataset"));
        }
        if truth.len() != predicted.len() {
            return Err(Error::Dimension {
                op: "evaluate",
                lhs: vec![truth.len()],
                rhs: vec![predicted.len()],
            });
        }
        let n = class_names.len();
        if let Some(&c) = truth.iter().chain(predicted).find(|&&c| c >= n) {
            return Err(Error::Validation(format!("class index {c} out of range for {n} classes")));
        }
        let mut confusion = ConfusionMatrix::zeros(n);
        for (&t, &p) in truth.iter().zip(predicted) {
            confusion.record(t, p);
        }
        let per_class_accuracy = (0..n)
            .map(|c| {
                let support: u64 = confusion.row(c).iter().sum();
                (support > 0).then(|| confusion.get(c, c) as f64 / support as f64)
            })
            .collect();
        Ok(EvalReport {
            class_names: class_names.to_vec(),
            accuracy: confusion.trace() as f64 / truth.len() as f64,
            per_class_accuracy,
            confusion,
            n_examples: truth.len(),
        })
    }

    pub fn support(&self, class: usize) -> u64 {
        self.confusion.row(class).iter().sum()
    }

    /// Summary row, per-class rows, then the confusion counts.
    pub fn to_csv(&self) -> String {
        let mut out = format!("accuracy,n_examples\n{},{}\n\nclass_name,support,accuracy\n", self.accuracy, self.n_examples);
        for (c, name) in self.class_names.iter().enumerate() {
            let acc = self.per_class_accuracy[c].map(|a| a.to_string()).unwrap_or_default();
            out.push_str(&format!("{name},{},{acc}\n", self.support(c)));
        }
        out.push('\n');
        out.push_str(&self.confusion.to_csv(Some(&self.class_names)));
        out
    }
}

pub fn evaluate(model: &ElfisModel, ds: &Dataset) -> Result<EvalReport> {
    if ds.is_empty() {
        return Err(Error::usage("cannot evaluate an empty dataset"));
    }
    if ds.n_classes() != model.config().n_classes {
        return Err(Error::Validation(format!(
            "dataset has {} classes, model has {}",
            ds.n_classes(),
            model.config().n_classes
        )));
    }
    let x = ds.batch_features(&(0..ds.len()).collect::<Vec<_>>())?;
    EvalReport::from_predictions(ds.class_names(), ds.labels(), &model.predict(&x)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportDelta {
    pub baseline_accuracy: f64,
    pub elfis_accuracy: f64,
    pub overall_delta: f64,
    pub improved: usize,
    pub equal: usize,
    pub worsened: usize,
    /// Largest per-class drop, zero when no class got worse.
    pub max_regression: f64,
    pub per_class_delta: Vec<Option<f64>>,
    class_names: Vec<String>,
}

impl ReportDelta {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("baseline_accuracy,elfis_accuracy,delta,improved,equal,worsened,max_regression\n");
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n\nclass_name,delta\n",
            self.baseline_accuracy,
            self.elfis_accuracy,
            self.overall_delta,
            self.improved,
            self.equal,
            self.worsened,
            self.max_regression
        ));
        for (name, d) in self.class_names.iter().zip(&self.per_class_delta) {
            out.push_str(&format!("{name},{}\n", d.map(|x| x.to_string()).unwrap_or_default()));
        }
        out
    }
}

/// Per-class comparison; classes absent from either report count as equal.
pub fn compare_reports(baseline: &EvalReport, elfis: &EvalReport) -> Result<ReportDelta> {
    if baseline.class_names != elfis.class_names {
        return Err(Error::Validation("reports cover different class sets".into()));
    }
    let per_class_delta: Vec<Option<f64>> = baseline
        .per_class_accuracy
        .iter()
        .zip(&elfis.per_class_accuracy)
        .map(|(b, e)| Some((*e)? - (*b)?))
        .collect();
    let (mut improved, mut equal, mut worsened, mut max_regression) = (0, 0, 0, 0.0f64);
    for d in &per_class_delta {
        match d {
            Some(d) if *d > 0.0 => improved += 1,
            Some(d) if *d < 0.0 => {
                worsened += 1;
                max_regression = max_regression.max(-d);
            }
            _ => equal += 1,
        }
    }
    Ok(ReportDelta {
        baseline_accuracy: baseline.accuracy,
        elfis_accuracy: elfis.accuracy,
        overall_delta: elfis.accuracy - baseline.accuracy,
        improved,
        equal,
        worsened,
        max_regression,
        per_class_delta,
        class_names: baseline.class_names.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionMatch {
    pub exact: bool,
    /// Unadjusted Rand index.
    pub agreement: f64,
}

/// Compares a clustering with a planted class-to-group labelling.
pub fn partition_match(assignment: &ClusterAssignment, planted: &[usize]) -> Result<PartitionMatch> {
    labels_match(assignment.labels(), planted)
}

pub fn labels_match(a: &[usize], b: &[usize]) -> Result<PartitionMatch> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            op: "partition_match",
            lhs: vec![a.len()],
            rhs: vec![b.len()],
        });
    }
    let n = a.len();
    let (mut agree, mut pairs) = (0usize, 0usize);
    for i in 0..n {
        for j in i + 1..n {
            pairs += 1;
            if (a[i] == a[j]) == (b[i] == b[j]) {
                agree += 1;
            }
        }
    }
    Ok(PartitionMatch {
        exact: agree == pairs,
        agreement: if pairs == 0 { 1.0 } else { agree as f64 / pairs as f64 },
    })
}
