//! Synthetic domain-shift datasets and CSV interchange.
//!
//! A [`DomainDataset`] is either the labeled source domain or the unlabeled
//! target domain. Target ground truth is *held back*: it never sits on the
//! instances themselves and is only reachable through [`DomainDataset::eval_label`],
//! so no training path can touch it. Batch construction hands target
//! instances their current pseudo-labels instead.
//!
//! Generated data is two-dimensional: two moons, Gaussian blobs on a circle,
//! or concentric rings, with the target domain produced by a configurable
//! affine transform (rotate / scale / translate) of the same base
//! distribution. Externally computed feature files of any dimension can be
//! ingested through the CSV loader instead.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CvpError, Result};
use crate::rng::{stream_rng, Stream};

/// Which distribution an instance belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Domain::Source => f.write_str("source"),
            Domain::Target => f.write_str("target"),
        }
    }
}

/// One data point. Target instances carry `label: None`; their ground truth
/// lives in the dataset's held-back table.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: usize,
    pub features: Vec<f64>,
    pub label: Option<usize>,
    pub domain: Domain,
}

/// A labeled source set or an unlabeled target set.
#[derive(Debug, Clone)]
pub struct DomainDataset {
    instances: Vec<Instance>,
    n_classes: usize,
    domain: Domain,
    /// Ground truth for target instances, aligned with `instances`.
    /// Evaluation only; reachable solely through [`Self::eval_label`].
    held_back: Vec<Option<usize>>,
    provenance: Option<String>,
}

impl DomainDataset {
    /// Build a dataset, stripping target labels into the held-back table.
    pub fn new(
        mut instances: Vec<Instance>,
        n_classes: usize,
        domain: Domain,
        provenance: Option<String>,
    ) -> Result<Self> {
        if n_classes < 1 {
            return Err(CvpError::data("dataset needs at least one class"));
        }
        let mut seen = std::collections::HashSet::new();
        let dim = instances.first().map(|i| i.features.len());
        let mut held_back = Vec::with_capacity(instances.len());
        for inst in instances.iter_mut() {
            if !seen.insert(inst.id) {
                return Err(CvpError::data(format!("duplicate instance id {}", inst.id)));
            }
            if Some(inst.features.len()) != dim {
                return Err(CvpError::data(format!(
                    "instance {} has {} features, expected {}",
                    inst.id,
                    inst.features.len(),
                    dim.unwrap_or(0)
                )));
            }
            if let Some(l) = inst.label {
                if l >= n_classes {
                    return Err(CvpError::data(format!(
                        "instance {} has label {l} >= n_classes {n_classes}",
                        inst.id
                    )));
                }
            }
            match domain {
                Domain::Source => {
                    if inst.label.is_none() {
                        return Err(CvpError::data(format!(
                            "source instance {} is unlabeled",
                            inst.id
                        )));
                    }
                    held_back.push(None);
                }
                Domain::Target => {
                    held_back.push(inst.label.take());
                }
            }
            inst.domain = domain;
        }
        Ok(DomainDataset { instances, n_classes, domain, held_back, provenance })
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn feature_dim(&self) -> usize {
        self.instances.first().map_or(0, |i| i.features.len())
    }

    pub fn provenance(&self) -> Option<&str> {
        self.provenance.as_deref()
    }

    /// Ground-truth label for evaluation. For target data this reads the
    /// held-back table; never use it to build training batches.
    pub fn eval_label(&self, index: usize) -> Option<usize> {
        self.instances[index].label.or(self.held_back[index])
    }

    /// True when every instance has an evaluation label.
    pub fn fully_evaluable(&self) -> bool {
        (0..self.len()).all(|i| self.eval_label(i).is_some())
    }

    /// Deterministically shuffle the held-back labels. Training must be
    /// bit-for-bit unaffected by this; only reported accuracies may move.
    pub fn permute_held_back(&mut self, seed: u64) {
        use rand::seq::SliceRandom;
        let mut rng = stream_rng(seed, Stream::Select, &[0xbeef]);
        self.held_back.shuffle(&mut rng);
    }
}

// ── generation ───────────────────────────────────────────────────────────

/// Base shapes for the synthetic benchmark. All are two-dimensional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "base")]
pub enum BaseDistribution {
    TwoMoons,
    Blobs { classes: usize },
    Rings { rings: usize },
}

impl BaseDistribution {
    pub fn n_classes(&self) -> usize {
        match *self {
            BaseDistribution::TwoMoons => 2,
            BaseDistribution::Blobs { classes } => classes,
            BaseDistribution::Rings { rings } => rings,
        }
    }
}

/// Affine map applied to target-domain points: scale per axis, then rotate,
/// then translate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainTransform {
    pub rotation_deg: f64,
    pub translation: [f64; 2],
    pub scale: [f64; 2],
}

impl DomainTransform {
    pub fn identity() -> Self {
        DomainTransform { rotation_deg: 0.0, translation: [0.0, 0.0], scale: [1.0, 1.0] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale.iter().any(|&s| s == 0.0 || !s.is_finite()) {
            return Err(CvpError::config("transform scale must be non-zero and finite"));
        }
        if !self.rotation_deg.is_finite() || self.translation.iter().any(|t| !t.is_finite()) {
            return Err(CvpError::config("transform parameters must be finite"));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self == &DomainTransform::identity()
    }

    fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let (sx, sy) = (self.scale[0] * p[0], self.scale[1] * p[1]);
        let theta = self.rotation_deg.to_radians();
        let (cos, sin) = (theta.cos(), theta.sin());
        [
            cos * sx - sin * sy + self.translation[0],
            sin * sx + cos * sy + self.translation[1],
        ]
    }
}

/// Recipe for one source/target pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    #[serde(flatten)]
    pub base: BaseDistribution,
    pub samples_per_class: usize,
    pub noise_std: f64,
    pub transform: DomainTransform,
}

impl ShiftSpec {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_class == 0 {
            return Err(CvpError::config("samples_per_class must be >= 1"));
        }
        if self.base.n_classes() == 0 {
            return Err(CvpError::config("base distribution needs at least one class"));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(CvpError::config("noise_std must be finite and >= 0"));
        }
        self.transform.validate()
    }
}

fn gauss2(rng: &mut ChaCha12Rng, std: f64) -> [f64; 2] {
    use rand_distr::{Distribution, StandardNormal};
    let a: f64 = StandardNormal.sample(rng);
    let b: f64 = StandardNormal.sample(rng);
    [a * std, b * std]
}

fn base_point(base: BaseDistribution, class: usize, rng: &mut ChaCha12Rng, noise: f64) -> [f64; 2] {
    let clean = match base {
        BaseDistribution::TwoMoons => {
            let t = rng.random_range(0.0..std::f64::consts::PI);
            if class == 0 {
                [t.cos(), t.sin()]
            } else {
                [1.0 - t.cos(), 0.5 - t.sin()]
            }
        }
        BaseDistribution::Blobs { classes } => {
            let theta = 2.0 * std::f64::consts::PI * class as f64 / classes as f64;
            [4.0 * theta.cos(), 4.0 * theta.sin()]
        }
        BaseDistribution::Rings { .. } => {
            let r = 1.0 + class as f64;
            let theta = rng.random_range(0.0..2.0 * std::f64::consts::PI);
            [r * theta.cos(), r * theta.sin()]
        }
    };
    let n = gauss2(rng, noise);
    [clean[0] + n[0], clean[1] + n[1]]
}

/// Draw a balanced source set from the base distribution and a balanced
/// target set from its transformed counterpart. Deterministic per seed.
pub fn generate(spec: &ShiftSpec, seed: u64) -> Result<(DomainDataset, DomainDataset)> {
    spec.validate()?;
    let n_classes = spec.base.n_classes();
    let provenance = Some(format!(
        "generated seed={seed} spec={}",
        serde_json::to_string(spec)?
    ));

    let build = |domain: Domain, stream: Stream| -> Result<DomainDataset> {
        let mut rng = stream_rng(seed, stream, &[]);
        let mut instances = Vec::with_capacity(n_classes * spec.samples_per_class);
        let mut id = 0;
        for class in 0..n_classes {
            for _ in 0..spec.samples_per_class {
                let mut p = base_point(spec.base, class, &mut rng, spec.noise_std);
                if domain == Domain::Target {
                    p = spec.transform.apply(p);
                }
                instances.push(Instance {
                    id,
                    features: p.to_vec(),
                    label: Some(class),
                    domain,
                });
                id += 1;
            }
        }
        DomainDataset::new(instances, n_classes, domain, provenance.clone())
    };

    let source = build(Domain::Source, Stream::GenSource)?;
    let target = build(Domain::Target, Stream::GenTarget)?;
    Ok((source, target))
}

// ── CSV interchange ──────────────────────────────────────────────────────

/// Declared layout of an external feature file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvSchema {
    pub feature_dim: usize,
    pub n_classes: usize,
    /// Domain assumed when the file has no `domain` column.
    pub domain: Domain,
}

/// Write `f0..f{d-1},label,domain` rows. Floats use the shortest
/// representation that parses back to the same bits, so a round-trip is
/// exact. Held-back target labels are written out too (the file is the
/// provenance record); the loader returns them to the held-back table.
pub fn save_csv(dataset: &DomainDataset, path: &Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let d = dataset.feature_dim();
    let header: Vec<String> = (0..d)
        .map(|i| format!("f{i}"))
        .chain(["label".to_string(), "domain".to_string()])
        .collect();
    writeln!(file, "{}", header.join(","))?;
    for (i, inst) in dataset.instances().iter().enumerate() {
        let mut row: Vec<String> = inst.features.iter().map(|v| format!("{v}")).collect();
        row.push(dataset.eval_label(i).map_or(String::new(), |l| l.to_string()));
        row.push(inst.domain.to_string());
        writeln!(file, "{}", row.join(","))?;
    }
    Ok(())
}

/// Parse a feature CSV against a declared schema. Malformed rows are
/// rejected with their line number.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<DomainDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| CvpError::data(format!("{}: {e}", path.display())))?;

    let headers = reader.headers()?.clone();
    let mut label_col = None;
    let mut domain_col = None;
    for (i, h) in headers.iter().enumerate() {
        match h {
            "label" => label_col = Some(i),
            "domain" => domain_col = Some(i),
            _ => {}
        }
    }
    let d = schema.feature_dim;
    let expected_cols = d + label_col.map_or(0, |_| 1) + domain_col.map_or(0, |_| 1);

    let mut instances = Vec::new();
    let mut file_domain: Option<Domain> = None;
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2; // header is line 1
        let record = record?;
        if record.len() != expected_cols {
            return Err(CvpError::data(format!(
                "line {line}: expected {expected_cols} columns, found {}",
                record.len()
            )));
        }
        let mut features = Vec::with_capacity(d);
        for (col, raw) in record.iter().take(d).enumerate() {
            let v: f64 = raw.trim().parse().map_err(|_| {
                CvpError::data(format!("line {line}: column f{col} is not numeric: '{raw}'"))
            })?;
            if !v.is_finite() {
                return Err(CvpError::data(format!("line {line}: non-finite feature")));
            }
            features.push(v);
        }
        let label = match label_col {
            Some(c) => {
                let raw = record.get(c).unwrap_or("").trim();
                if raw.is_empty() {
                    None
                } else {
                    let l: usize = raw.parse().map_err(|_| {
                        CvpError::data(format!("line {line}: label is not an integer: '{raw}'"))
                    })?;
                    if l >= schema.n_classes {
                        return Err(CvpError::data(format!(
                            "line {line}: label {l} >= n_classes {}",
                            schema.n_classes
                        )));
                    }
                    Some(l)
                }
            }
            None => None,
        };
        let domain = match domain_col {
            Some(c) => match record.get(c).unwrap_or("").trim() {
                "source" => Domain::Source,
                "target" => Domain::Target,
                other => {
                    return Err(CvpError::data(format!(
                        "line {line}: domain must be 'source' or 'target', got '{other}'"
                    )))
                }
            },
            None => schema.domain,
        };
        match file_domain {
            None => file_domain = Some(domain),
            Some(fd) if fd != domain => {
                return Err(CvpError::data(format!(
                    "line {line}: mixed domains in one file ({fd} vs {domain})"
                )))
            }
            _ => {}
        }
        instances.push(Instance { id: instances.len(), features, label, domain });
    }

    let domain = file_domain.unwrap_or(schema.domain);
    DomainDataset::new(
        instances,
        schema.n_classes,
        domain,
        Some(format!("csv {}", path.display())),
    )
}

// ── batches ──────────────────────────────────────────────────────────────

/// One training example: features plus the label the losses will see
/// (ground truth for source, the current pseudo-label for target).
#[derive(Debug, Clone)]
pub struct BatchItem {
    pub id: usize,
    pub features: Vec<f64>,
    pub label: usize,
    pub domain: Domain,
}

/// `b` source instances, sampled without replacement.
pub fn source_batch(
    source: &DomainDataset,
    b: usize,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<BatchItem>> {
    if b == 0 || b > source.len() {
        return Err(CvpError::config(format!(
            "batch size {b} not drawable from {} source instances",
            source.len()
        )));
    }
    let picks = rand::seq::index::sample(rng, source.len(), b);
    picks
        .iter()
        .map(|i| {
            let inst = &source.instances()[i];
            Ok(BatchItem {
                id: inst.id,
                features: inst.features.clone(),
                label: inst.label.ok_or_else(|| {
                    CvpError::data(format!("source instance {} has no label", inst.id))
                })?,
                domain: Domain::Source,
            })
        })
        .collect()
}

/// Mixed batch: B/2 labeled source instances plus B/2 target instances
/// carrying their current pseudo-labels. Sampling is without replacement
/// within each half.
pub fn mixed_batch(
    source: &DomainDataset,
    target: &DomainDataset,
    pseudo_labels: &BTreeMap<usize, usize>,
    b: usize,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<BatchItem>> {
    if b == 0 || b % 2 != 0 {
        return Err(CvpError::config(format!("mixed batch size must be even, got {b}")));
    }
    let half = b / 2;
    if half > target.len() {
        return Err(CvpError::config(format!(
            "batch half {half} not drawable from {} target instances",
            target.len()
        )));
    }
    let mut batch = source_batch(source, half, rng)?;
    let picks = rand::seq::index::sample(rng, target.len(), half);
    for i in picks.iter() {
        let inst = &target.instances()[i];
        let label = *pseudo_labels.get(&inst.id).ok_or_else(|| {
            CvpError::data(format!("no pseudo-label for target instance {}", inst.id))
        })?;
        batch.push(BatchItem {
            id: inst.id,
            features: inst.features.clone(),
            label,
            domain: Domain::Target,
        });
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moons_spec() -> ShiftSpec {
        ShiftSpec {
            base: BaseDistribution::TwoMoons,
            samples_per_class: 50,
            noise_std: 0.1,
            transform: DomainTransform { rotation_deg: 30.0, ..DomainTransform::identity() },
        }
    }

    #[test]
    fn generate_is_deterministic_and_balanced() {
        let spec = moons_spec();
        let (s1, t1) = generate(&spec, 9).unwrap();
        let (s2, t2) = generate(&spec, 9).unwrap();
        assert_eq!(s1.instances(), s2.instances());
        assert_eq!(t1.instances(), t2.instances());

        let counts = s1.instances().iter().filter(|i| i.label == Some(0)).count();
        assert_eq!(counts, 50);
        assert_eq!(s1.len(), 100);
        assert_eq!(s1.n_classes(), 2);

        let (s3, _) = generate(&spec, 10).unwrap();
        assert_ne!(s1.instances(), s3.instances());
    }

    #[test]
    fn target_labels_are_held_back() {
        let (source, target) = generate(&moons_spec(), 1).unwrap();
        assert!(source.instances().iter().all(|i| i.label.is_some()));
        assert!(target.instances().iter().all(|i| i.label.is_none()));
        assert!(target.fully_evaluable());
        assert!(target.eval_label(0).is_some());
    }

    #[test]
    fn identity_transform_means_same_distribution() {
        // Identity transform → the target set is a fresh sample of the same
        // law; per-class coordinate means agree within sampling error.
        let spec = ShiftSpec { transform: DomainTransform::identity(), ..moons_spec() };
        assert!(spec.transform.is_identity());
        let (source, target) = generate(&spec, 3).unwrap();
        for class in 0..2 {
            for axis in 0..2 {
                let m = |ds: &DomainDataset| {
                    let pts: Vec<f64> = ds
                        .instances()
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| ds.eval_label(*i) == Some(class))
                        .map(|(_, inst)| inst.features[axis])
                        .collect();
                    pts.iter().sum::<f64>() / pts.len() as f64
                };
                assert!((m(&source) - m(&target)).abs() < 0.25);
            }
        }
    }

    #[test]
    fn blob_count_propagates_class_count() {
        let spec = ShiftSpec {
            base: BaseDistribution::Blobs { classes: 12 },
            samples_per_class: 5,
            noise_std: 0.3,
            transform: DomainTransform::identity(),
        };
        let (source, _) = generate(&spec, 0).unwrap();
        assert_eq!(source.n_classes(), 12);
        assert_eq!(source.len(), 60);
        assert_eq!(crate::losses::kappa(source.n_classes()).unwrap(), (12.0f64).ln());
    }

    #[test]
    fn zero_scale_transform_is_rejected() {
        let spec = ShiftSpec {
            transform: DomainTransform { scale: [0.0, 1.0], ..DomainTransform::identity() },
            ..moons_spec()
        };
        assert!(matches!(generate(&spec, 0), Err(CvpError::Config(_))));
    }

    #[test]
    fn csv_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let (source, target) = generate(&moons_spec(), 5).unwrap();
        for ds in [&source, &target] {
            let path = dir.path().join(format!("{}.csv", ds.domain()));
            save_csv(ds, &path).unwrap();
            let loaded = load_csv(
                &path,
                &CsvSchema { feature_dim: 2, n_classes: 2, domain: ds.domain() },
            )
            .unwrap();
            assert_eq!(loaded.len(), ds.len());
            assert_eq!(loaded.domain(), ds.domain());
            for (a, b) in ds.instances().iter().zip(loaded.instances()) {
                assert_eq!(a.features, b.features, "feature bits changed in round-trip");
                assert_eq!(a.label, b.label);
            }
            for i in 0..ds.len() {
                assert_eq!(ds.eval_label(i), loaded.eval_label(i));
            }
        }
    }

    #[test]
    fn csv_without_label_column_loads_unlabeled_target() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(&path, "f0,f1\n0.5,1.5\n-1.0,2.0\n").unwrap();
        let ds = load_csv(
            &path,
            &CsvSchema { feature_dim: 2, n_classes: 3, domain: Domain::Target },
        )
        .unwrap();
        assert_eq!(ds.len(), 2);
        assert!(ds.instances().iter().all(|i| i.label.is_none()));
        assert!(ds.eval_label(0).is_none());
        assert!(!ds.fully_evaluable());
    }

    #[test]
    fn csv_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();

        let ragged = dir.path().join("ragged.csv");
        std::fs::write(&ragged, "f0,f1\n1.0,2.0\n1.0,2.0,3.0\n").unwrap();
        let err = load_csv(
            &ragged,
            &CsvSchema { feature_dim: 2, n_classes: 2, domain: Domain::Target },
        )
        .unwrap_err();
        assert!(err.to_string().contains("line 3"), "got: {err}");

        let nonnum = dir.path().join("nonnum.csv");
        std::fs::write(&nonnum, "f0,f1\nx,2.0\n").unwrap();
        let err = load_csv(
            &nonnum,
            &CsvSchema { feature_dim: 2, n_classes: 2, domain: Domain::Target },
        )
        .unwrap_err();
        assert!(err.to_string().contains("line 2"), "got: {err}");

        let badlabel = dir.path().join("badlabel.csv");
        std::fs::write(&badlabel, "f0,f1,label\n1.0,2.0,7\n").unwrap();
        let err = load_csv(
            &badlabel,
            &CsvSchema { feature_dim: 2, n_classes: 2, domain: Domain::Source },
        )
        .unwrap_err();
        assert!(err.to_string().contains("label 7"), "got: {err}");

        assert!(load_csv(
            &dir.path().join("missing.csv"),
            &CsvSchema { feature_dim: 2, n_classes: 2, domain: Domain::Source },
        )
        .is_err());
    }

    #[test]
    fn mixed_batch_is_half_and_half() {
        let (source, target) = generate(&moons_spec(), 2).unwrap();
        let pseudo: BTreeMap<usize, usize> =
            target.instances().iter().map(|i| (i.id, 1)).collect();
        let mut rng = stream_rng(0, Stream::Batch, &[]);
        let batch = mixed_batch(&source, &target, &pseudo, 8, &mut rng).unwrap();
        assert_eq!(batch.len(), 8);
        assert_eq!(batch.iter().filter(|b| b.domain == Domain::Source).count(), 4);
        assert_eq!(batch.iter().filter(|b| b.domain == Domain::Target).count(), 4);
        // target items carry their pseudo-label
        assert!(batch
            .iter()
            .filter(|b| b.domain == Domain::Target)
            .all(|b| b.label == 1));

        assert!(mixed_batch(&source, &target, &pseudo, 7, &mut rng).is_err());
        let empty = BTreeMap::new();
        assert!(mixed_batch(&source, &target, &empty, 8, &mut rng).is_err());
    }

    #[test]
    fn batch_sampling_is_uniform_over_an_epoch() {
        // χ² goodness-of-fit on source pick counts across many batches.
        let (source, _) = generate(&moons_spec(), 4).unwrap();
        let n = source.len();
        let b = 20;
        let rounds = 500;
        let mut counts = vec![0usize; n];
        let mut rng = stream_rng(11, Stream::Batch, &[]);
        for _ in 0..rounds {
            for item in source_batch(&source, b, &mut rng).unwrap() {
                counts[item.id] += 1;
            }
        }
        let expected = (b * rounds) as f64 / n as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // dof = 99; with a fixed seed this sits near its mean. Flag only
        // gross non-uniformity.
        assert!(chi2 < 150.0, "chi2 = {chi2}");
    }

    #[test]
    fn permuting_held_back_labels_changes_only_evaluation() {
        let (_, mut target) = generate(&moons_spec(), 8).unwrap();
        let before: Vec<_> = target.instances().to_vec();
        let eval_before: Vec<_> = (0..target.len()).map(|i| target.eval_label(i)).collect();
        target.permute_held_back(99);
        assert_eq!(target.instances(), before.as_slice());
        let eval_after: Vec<_> = (0..target.len()).map(|i| target.eval_label(i)).collect();
        assert_ne!(eval_before, eval_after);
    }
}
