use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::sampling::IndexSet;

/// Where a dataset came from. Students may only ever see `Public` data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Private,
    Public,
}

impl Provenance {
    pub fn name(&self) -> &'static str {
        match self {
            Provenance::Private => "private",
            Provenance::Public => "public",
        }
    }
}

/// Row-major feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    num_features: usize,
    num_classes: usize,
    provenance: Provenance,
}

impl LabeledDataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        num_features: usize,
        num_classes: usize,
        provenance: Provenance,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Domain("dataset has no rows".into()));
        }
        if num_features == 0 {
            return Err(Error::Domain("dataset has no features".into()));
        }
        if features.len() != labels.len() * num_features {
            return Err(Error::Dimension {
                expected: labels.len() * num_features,
                got: features.len(),
            });
        }
        if let Some((row, y)) = labels.iter().enumerate().find(|(_, y)| **y >= num_classes) {
            return Err(Error::Domain(format!(
                "row {row}: label {y} outside [0, {num_classes})"
            )));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("non-finite feature value".into()));
        }
        Ok(Self { features, labels, num_features, num_classes, provenance })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.num_features..(i + 1) * self.num_features]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.num_features)
    }

    /// The rows named by `idx`, in index order.
    pub fn subset(&self, idx: &IndexSet) -> Result<Self> {
        self.select(idx.as_slice())
    }

    pub(crate) fn select(&self, idx: &[usize]) -> Result<Self> {
        let mut features = Vec::with_capacity(idx.len() * self.num_features);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            if i >= self.len() {
                return Err(Error::Domain(format!("row {i} out of bounds")));
            }
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self::new(features, labels, self.num_features, self.num_classes, self.provenance)
    }

    /// Same features, new labels. Provenance is kept.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::Dimension { expected: self.len(), got: labels.len() });
        }
        Self::new(
            self.features.clone(),
            labels,
            self.num_features,
            self.num_classes,
            self.provenance,
        )
    }
}

/// Class means for the synthetic blobs. The minimum pairwise distance is
/// `separation`: scaled basis vectors when `d >= k`, a regular polygon in
/// the first two coordinates when `2 <= d < k`, a line when `d == 1`.
pub fn blob_means(d: usize, k: usize, separation: f64) -> Vec<Vec<f64>> {
    (0..k)
        .map(|c| {
            let mut mu = vec![0.0; d];
            if d >= k {
                mu[c] = separation / std::f64::consts::SQRT_2;
            } else if d >= 2 {
                let radius = separation / (2.0 * (std::f64::consts::PI / k as f64).sin());
                let angle = 2.0 * std::f64::consts::PI * c as f64 / k as f64;
                mu[0] = radius * angle.cos();
                mu[1] = radius * angle.sin();
            } else {
                mu[0] = separation * c as f64;
            }
            mu
        })
        .collect()
}

/// `n` points from `k` unit-covariance Gaussian blobs in `d` dimensions.
/// Labels cycle through the classes so every class has ⌊n/k⌋ or ⌈n/k⌉ rows.
pub fn generate_synthetic(
    n: usize,
    d: usize,
    k: usize,
    separation: f64,
    provenance: Provenance,
    rng: &RngStream,
) -> Result<LabeledDataset> {
    if k < 2 {
        return Err(Error::Domain(format!("need at least 2 classes, got {k}")));
    }
    if d == 0 {
        return Err(Error::Domain("need at least one feature".into()));
    }
    if n < k {
        return Err(Error::Domain(format!("n={n} is smaller than the class count {k}")));
    }
    if !(separation >= 0.0) || !separation.is_finite() {
        return Err(Error::Domain(format!("invalid class separation {separation}")));
    }
    let means = blob_means(d, k, separation);
    let mut r = rng.rng();
    let mut features = Vec::with_capacity(n * d);
    let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    for &y in &labels {
        for mu in &means[y] {
            let z: f64 = StandardNormal.sample(&mut r);
            features.push(mu + z);
        }
    }
    LabeledDataset::new(features, labels, d, k, provenance)
}

fn parse_err(line: u64, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

/// Reads a `f1,…,fd,label` CSV. Errors carry the 1-based file line.
pub fn load_csv(
    path: impl AsRef<Path>,
    num_classes: usize,
    provenance: Provenance,
) -> Result<LabeledDataset> {
    let file = std::fs::File::open(path.as_ref())?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let header = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let d = header.len().saturating_sub(1);
    if d == 0 || header.get(d) != Some("label") {
        return Err(parse_err(1, "header must be f1,...,fd,label"));
    }
    for (j, name) in header.iter().take(d).enumerate() {
        if name != format!("f{}", j + 1) {
            return Err(parse_err(1, format!("unknown column `{name}`, expected `f{}`", j + 1)));
        }
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(i as u64 + 2);
        if record.len() != d + 1 {
            return Err(parse_err(line, format!("expected {} fields, found {}", d + 1, record.len())));
        }
        for cell in record.iter().take(d) {
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(line, format!("non-numeric feature `{cell}`")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite feature `{cell}`")));
            }
            features.push(v);
        }
        let cell = &record[d];
        let y: usize = cell
            .parse()
            .map_err(|_| parse_err(line, format!("row {row}: label `{cell}` is not a class index")))?;
        if y >= num_classes {
            return Err(parse_err(
                line,
                format!("row {row}: label {y} outside [0, {num_classes})"),
            ));
        }
        labels.push(y);
    }
    if labels.is_empty() {
        return Err(parse_err(1, "no data rows"));
    }
    LabeledDataset::new(features, labels, d, num_classes, provenance)
}

/// Writes the dataset in the format [`load_csv`] reads. Values are written
/// in shortest round-trip form.
pub fn write_csv(data: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(csv_io)?;
    let mut header: Vec<String> = (1..=data.num_features()).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    w.write_record(&header).map_err(csv_io)?;
    for (x, y) in data.rows().zip(data.labels()) {
        let mut rec: Vec<String> = x.iter().map(|v| format!("{v:?}")).collect();
        rec.push(y.to_string());
        w.write_record(&rec).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_exact_matrix() {
        let f = write("f1,f2,label\n0.5,-1.25,1\n3,4e-2,0\n");
        let d = load_csv(f.path(), 2, Provenance::Private).unwrap();
        assert_eq!(d.features(), &[0.5, -1.25, 3.0, 0.04]);
        assert_eq!(d.labels(), &[1, 0]);
        assert_eq!(d.provenance(), Provenance::Private);
    }

    #[test]
    fn csv_round_trip() {
        let data =
            generate_synthetic(50, 3, 4, 2.5, Provenance::Public, &RngStream::new(8, 1)).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_csv(&data, f.path()).unwrap();
        let back = load_csv(f.path(), 4, Provenance::Public).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn csv_errors_name_the_line() {
        let f = write("f1,f2,label\n0,0,0\n1,2,3\n");
        match load_csv(f.path(), 3, Provenance::Private) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("row 2"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
        let ragged = write("f1,f2,label\n0,0,0\n1,1\n");
        assert!(matches!(load_csv(ragged.path(), 2, Provenance::Private), Err(Error::Parse { line: 3, .. })));
        let text = write("f1,label\nabc,0\n");
        assert!(matches!(load_csv(text.path(), 2, Provenance::Private), Err(Error::Parse { line: 2, .. })));
        let header = write("x,y,label\n0,0,0\n");
        assert!(matches!(load_csv(header.path(), 2, Provenance::Private), Err(Error::Parse { line: 1, .. })));
        let neg = write("f1,label\n0,-1\n");
        assert!(matches!(load_csv(neg.path(), 2, Provenance::Private), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(
            load_csv("/nonexistent/definitely.csv", 2, Provenance::Private),
            Err(Error::Io(_))
        ));
    }

    #[test]
    fn synthetic_shape_and_determinism() {
        let r = RngStream::new(3, 0);
        let a = generate_synthetic(30, 2, 3, 8.0, Provenance::Private, &r).unwrap();
        let b = generate_synthetic(30, 2, 3, 8.0, Provenance::Private, &r).unwrap();
        assert_eq!(a.len(), 30);
        assert_eq!(a.num_features(), 2);
        assert_eq!(
            a.features().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.features().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(a.labels(), b.labels());
        assert!(generate_synthetic(2, 2, 3, 1.0, Provenance::Private, &r).is_err());
        assert!(generate_synthetic(10, 0, 3, 1.0, Provenance::Private, &r).is_err());
        assert!(generate_synthetic(10, 2, 1, 1.0, Provenance::Private, &r).is_err());
        assert!(generate_synthetic(10, 2, 3, -1.0, Provenance::Private, &r).is_err());
    }

    #[test]
    fn blob_means_are_separated() {
        for (d, k) in [(1, 3), (2, 3), (2, 5), (3, 3), (8, 4)] {
            let m = blob_means(d, k, 4.0);
            let mut min = f64::INFINITY;
            for i in 0..k {
                for j in i + 1..k {
                    let dist: f64 =
                        m[i].iter().zip(&m[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                    min = min.min(dist);
                }
            }
            assert!((min - 4.0).abs() < 1e-9, "d={d} k={k} min={min}");
        }
    }

    #[test]
    fn dataset_validation() {
        assert!(LabeledDataset::new(vec![], vec![], 1, 2, Provenance::Public).is_err());
        assert!(LabeledDataset::new(vec![0.0; 3], vec![0, 1], 2, 2, Provenance::Public).is_err());
        assert!(LabeledDataset::new(vec![0.0; 4], vec![0, 2], 2, 2, Provenance::Public).is_err());
        let d = LabeledDataset::new(vec![1.0, 2.0, 3.0, 4.0], vec![0, 1], 2, 2, Provenance::Public)
            .unwrap();
        assert_eq!(d.row(1), &[3.0, 4.0]);
        let s = d.select(&[1]).unwrap();
        assert_eq!(s.labels(), &[1]);
        assert!(d.with_labels(vec![1]).is_err());
    }
}
