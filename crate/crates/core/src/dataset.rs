//! Group-structured binary classification data.
//!
//! Labels are encoded as `0` (negative) and `1` (positive). Every point
//! carries a small integer group identifier; the `(group, label)` pair names
//! its subgroup.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kv::{invalid, KvError, KvReader};
use crate::seed;

pub type GroupId = u32;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset is empty")]
    Empty,
    #[error("point {index}: {message}")]
    InvalidPoint { index: usize, message: String },
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("row {row}, column `{column}`: {message}")]
    Csv {
        row: usize,
        column: String,
        message: String,
    },
    #[error("csv: {0}")]
    CsvFormat(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("train size {train_size} out of range for {n} points")]
    TrainSize { train_size: usize, n: usize },
    #[error(transparent)]
    Config(#[from] KvError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub x: Vec<f64>,
    pub g: GroupId,
    pub y: u8,
}

impl DataPoint {
    pub fn new(x: Vec<f64>, g: GroupId, y: u8) -> Self {
        Self { x, g, y }
    }

    pub fn key(&self) -> SubgroupKey {
        SubgroupKey { g: self.g, y: self.y }
    }
}

/// A `(group, label)` cell. Serialized as its display form, e.g. `"G0-"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct SubgroupKey {
    pub g: GroupId,
    pub y: u8,
}

impl SubgroupKey {
    pub fn new(g: GroupId, y: u8) -> Self {
        Self { g, y }
    }
}

impl fmt::Display for SubgroupKey {
    /// `G0-`, `G1+`, ...
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "G{}{}", self.g, if self.y == 1 { '+' } else { '-' })
    }
}

impl FromStr for SubgroupKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("not a subgroup key: {s:?}");
        let body = s.strip_prefix('G').ok_or_else(bad)?;
        let (g, y) = match body.strip_suffix('+') {
            Some(g) => (g, 1),
            None => (body.strip_suffix('-').ok_or_else(bad)?, 0),
        };
        Ok(Self::new(g.parse().map_err(|_| bad())?, y))
    }
}

impl From<SubgroupKey> for String {
    fn from(k: SubgroupKey) -> String {
        k.to_string()
    }
}

impl TryFrom<String> for SubgroupKey {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// Immutable, nonempty collection of points with stable indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    points: Vec<DataPoint>,
    dim: usize,
    groups: BTreeSet<GroupId>,
}

impl Dataset {
    pub fn new(points: Vec<DataPoint>) -> Result<Self, DatasetError> {
        let first = points.first().ok_or(DatasetError::Empty)?;
        let dim = first.x.len();
        for (index, p) in points.iter().enumerate() {
            if p.x.len() != dim {
                return Err(DatasetError::InvalidPoint {
                    index,
                    message: format!("feature length {} != {dim}", p.x.len()),
                });
            }
            if p.y > 1 {
                return Err(DatasetError::InvalidPoint {
                    index,
                    message: format!("label {} is not binary", p.y),
                });
            }
            if p.x.iter().any(|v| !v.is_finite()) {
                return Err(DatasetError::InvalidPoint {
                    index,
                    message: "non-finite feature".into(),
                });
            }
        }
        let groups = points.iter().map(|p| p.g).collect();
        Ok(Self { points, dim, groups })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn groups(&self) -> &BTreeSet<GroupId> {
        &self.groups
    }

    pub fn points(&self) -> &[DataPoint] {
        &self.points
    }

    pub fn point(&self, index: usize) -> &DataPoint {
        &self.points[index]
    }

    pub fn keys(&self) -> Vec<SubgroupKey> {
        self.points.iter().map(DataPoint::key).collect()
    }

    pub fn view(&self, indices: Vec<usize>) -> DatasetView<'_> {
        debug_assert!(indices.iter().all(|&i| i < self.len()));
        DatasetView { data: self, indices }
    }

    pub fn full_view(&self) -> DatasetView<'_> {
        self.view((0..self.len()).collect())
    }
}

/// An ordered selection of dataset indices, e.g. one training split.
#[derive(Debug, Clone)]
pub struct DatasetView<'a> {
    data: &'a Dataset,
    indices: Vec<usize>,
}

impl<'a> DatasetView<'a> {
    pub fn dataset(&self) -> &'a Dataset {
        self.data
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.data.dim
    }

    /// The `i`-th point of the view (not the `i`-th point of the dataset).
    pub fn point(&self, i: usize) -> &'a DataPoint {
        &self.data.points[self.indices[i]]
    }

    pub fn iter(&self) -> impl Iterator<Item = &'a DataPoint> + '_ {
        self.indices.iter().map(move |&i| &self.data.points[i])
    }

    /// Subgroup partition of the view, as positions within the view.
    pub fn partition(&self) -> BTreeMap<SubgroupKey, Vec<usize>> {
        let mut cells: BTreeMap<SubgroupKey, Vec<usize>> = BTreeMap::new();
        for (pos, p) in self.iter().enumerate() {
            cells.entry(p.key()).or_default().push(pos);
        }
        cells
    }
}

/// Indices of each nonempty `(group, label)` cell.
pub fn subgroup_partition(data: &Dataset) -> BTreeMap<SubgroupKey, Vec<usize>> {
    data.full_view().partition()
}

/// Multivariate normal with a validated Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
    factor: DMatrix<f64>,
}

impl Gaussian {
    /// Rejects non-square, asymmetric, or non positive-definite covariances.
    pub fn new(mean: Vec<f64>, cov: Vec<Vec<f64>>) -> Result<Self, DatasetError> {
        let d = mean.len();
        if d == 0 {
            return Err(DatasetError::InvalidConfig("empty mean vector".into()));
        }
        if cov.len() != d || cov.iter().any(|row| row.len() != d) {
            return Err(DatasetError::InvalidConfig(format!(
                "covariance must be {d}x{d} to match the mean"
            )));
        }
        let scale = cov.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        for i in 0..d {
            for j in 0..i {
                if (cov[i][j] - cov[j][i]).abs() > 1e-12 * scale {
                    return Err(DatasetError::InvalidConfig(format!(
                        "covariance is not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        if mean.iter().chain(cov.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(DatasetError::InvalidConfig("non-finite Gaussian parameter".into()));
        }
        let matrix = DMatrix::from_fn(d, d, |i, j| cov[i][j]);
        let factor = matrix
            .cholesky()
            .ok_or_else(|| DatasetError::InvalidConfig("covariance is not positive-definite".into()))?
            .l();
        Ok(Self { mean, cov, factor })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &[Vec<f64>] {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = &self.factor * z;
        self.mean.iter().zip(x.iter()).map(|(m, v)| m + v).collect()
    }
}

/// Two groups, binary labels, one Gaussian per subgroup.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub n: usize,
    /// `Pr[G = 0]`.
    pub p_group0: f64,
    /// `Pr[Y = 0 | G = g]` for `g = 0, 1`.
    pub p_neg_given_g: [f64; 2],
    pub gaussians: BTreeMap<SubgroupKey, Gaussian>,
}

impl SyntheticConfig {
    /// The four-Gaussian benchmark with a small, label-imbalanced group 0:
    /// `n = 2500`, `Pr[G=0] = 0.2`, `Pr[Y=0|G=0] = 0.1`, `Pr[Y=0|G=1] = 0.5`.
    pub fn standard() -> Self {
        let g = |mean: [f64; 2], cov: [[f64; 2]; 2]| {
            Gaussian::new(mean.to_vec(), cov.iter().map(|r| r.to_vec()).collect())
                .expect("benchmark covariances are positive-definite")
        };
        let gaussians = BTreeMap::from([
            (SubgroupKey::new(0, 0), g([0.0, -1.0], [[7.0, 1.0], [1.0, 7.0]])),
            (SubgroupKey::new(1, 0), g([-5.0, 0.0], [[5.0, 1.0], [1.0, 5.0]])),
            (SubgroupKey::new(0, 1), g([1.0, 2.0], [[5.0, 2.0], [2.0, 5.0]])),
            (SubgroupKey::new(1, 1), g([2.0, 3.0], [[10.0, 1.0], [1.0, 4.0]])),
        ]);
        Self {
            n: 2500,
            p_group0: 0.2,
            p_neg_given_g: [0.1, 0.5],
            gaussians,
        }
    }

    pub fn dim(&self) -> usize {
        self.gaussians.values().next().map_or(0, Gaussian::dim)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |what: &str, p: f64| {
            Err(DatasetError::InvalidConfig(format!("{what} = {p} is not a probability")))
        };
        if self.n == 0 {
            return Err(DatasetError::InvalidConfig("n must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.p_group0) {
            return bad("p_group0", self.p_group0);
        }
        for (g, &p) in self.p_neg_given_g.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return bad(&format!("p_neg_g{g}"), p);
            }
        }
        let dim = self.dim();
        for g in 0..2 {
            for y in 0..2 {
                let key = SubgroupKey::new(g, y);
                let gauss = self
                    .gaussians
                    .get(&key)
                    .ok_or_else(|| DatasetError::InvalidConfig(format!("no Gaussian for {key}")))?;
                if gauss.dim() != dim {
                    return Err(DatasetError::InvalidConfig(format!(
                        "{key} has dimension {} but others have {dim}",
                        gauss.dim()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Read `n`, `p_group0`, `p_neg_g0`, `p_neg_g1`, `mean_g{G}_s{Y}` and
    /// `cov_g{G}_s{Y}` (Y = 0 for the negative label, 1 for the positive).
    /// Missing keys fall back to [`SyntheticConfig::standard`].
    pub fn read_keys(kv: &mut KvReader) -> Result<Self, DatasetError> {
        let base = Self::standard();
        let n: i64 = kv.take_or("n", base.n as i64)?;
        if n <= 0 {
            return Err(invalid("n", "must be positive").into());
        }
        let p_group0 = kv.take_or("p_group0", base.p_group0)?;
        let p_neg_g0 = kv.take_or("p_neg_g0", base.p_neg_given_g[0])?;
        let p_neg_g1 = kv.take_or("p_neg_g1", base.p_neg_given_g[1])?;
        let mut gaussians = BTreeMap::new();
        for (key, default) in &base.gaussians {
            let mean_key = format!("mean_g{}_s{}", key.g, key.y);
            let cov_key = format!("cov_g{}_s{}", key.g, key.y);
            let mean: Vec<f64> = kv.take_or(&mean_key, default.mean.clone())?;
            let cov: Vec<Vec<f64>> = kv.take_or(&cov_key, default.cov.clone())?;
            let gauss = Gaussian::new(mean, cov)
                .map_err(|e| DatasetError::InvalidConfig(format!("{mean_key}/{cov_key}: {e}")))?;
            gaussians.insert(*key, gauss);
        }
        let cfg = Self {
            n: n as usize,
            p_group0,
            p_neg_given_g: [p_neg_g0, p_neg_g1],
            gaussians,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, DatasetError> {
        let mut kv = KvReader::from_file(path)?;
        let cfg = Self::read_keys(&mut kv)?;
        kv.finish()?;
        Ok(cfg)
    }

    /// Draw one point: group, then label, then features.
    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> DataPoint {
        let g: GroupId = if rng.gen::<f64>() < self.p_group0 { 0 } else { 1 };
        let y: u8 = if rng.gen::<f64>() < self.p_neg_given_g[g as usize] { 0 } else { 1 };
        let x = self.gaussians[&SubgroupKey::new(g, y)].sample(rng);
        DataPoint { x, g, y }
    }

    /// Draw a point from one fixed subgroup.
    pub fn sample_in<R: Rng + ?Sized>(&self, key: SubgroupKey, rng: &mut R) -> DataPoint {
        let x = self.gaussians[&key].sample(rng);
        DataPoint { x, g: key.g, y: key.y }
    }
}

pub fn generate_synthetic(cfg: &SyntheticConfig, seed: u64) -> Result<Dataset, DatasetError> {
    cfg.validate()?;
    let mut rng = seed::rng(seed);
    let points = (0..cfg.n).map(|_| cfg.sample_point(&mut rng)).collect();
    Dataset::new(points)
}

/// Column mapping for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub features: Vec<String>,
    pub group: String,
    pub label: String,
    /// Label value encoded as 1.
    pub positive: String,
    /// Label value encoded as 0.
    pub negative: String,
}

impl CsvSchema {
    /// Schema of files produced by [`write_csv`].
    pub fn for_written(dim: usize) -> Self {
        Self {
            features: (0..dim).map(|j| format!("x{j}")).collect(),
            group: "g".into(),
            label: "y".into(),
            positive: "1".into(),
            negative: "0".into(),
        }
    }
}

/// Load one point per data row. Row numbers in errors count data rows from 1.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| DatasetError::CsvFormat(e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| DatasetError::CsvFormat(e.to_string()))?
        .clone();
    let column = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| DatasetError::Csv {
            row: 0,
            column: name.to_string(),
            message: "missing column".into(),
        })
    };
    let feature_cols = schema
        .features
        .iter()
        .map(|f| column(f))
        .collect::<Result<Vec<_>, _>>()?;
    let group_col = column(&schema.group)?;
    let label_col = column(&schema.label)?;

    let mut points = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| DatasetError::CsvFormat(format!("row {row}: {e}")))?;
        let field = |col: usize, name: &str| {
            record.get(col).ok_or_else(|| DatasetError::Csv {
                row,
                column: name.to_string(),
                message: "missing field".into(),
            })
        };
        let mut x = Vec::with_capacity(feature_cols.len());
        for (&col, name) in feature_cols.iter().zip(&schema.features) {
            let raw = field(col, name)?;
            let v: f64 = raw.parse().map_err(|_| DatasetError::Csv {
                row,
                column: name.clone(),
                message: format!("non-numeric feature `{raw}`"),
            })?;
            if !v.is_finite() {
                return Err(DatasetError::Csv {
                    row,
                    column: name.clone(),
                    message: format!("non-finite feature `{raw}`"),
                });
            }
            x.push(v);
        }
        let raw_g = field(group_col, &schema.group)?;
        let g: GroupId = raw_g.parse().map_err(|_| DatasetError::Csv {
            row,
            column: schema.group.clone(),
            message: format!("group `{raw_g}` is not a small non-negative integer"),
        })?;
        let raw_y = field(label_col, &schema.label)?;
        let y = if raw_y == schema.positive {
            1
        } else if raw_y == schema.negative {
            0
        } else {
            return Err(DatasetError::Csv {
                row,
                column: schema.label.clone(),
                message: format!(
                    "label `{raw_y}` is neither `{}` nor `{}`",
                    schema.positive, schema.negative
                ),
            });
        };
        points.push(DataPoint { x, g, y });
    }
    Dataset::new(points)
}

/// Write with header `x0,..,x{d-1},g,y`; values round-trip exactly.
pub fn write_csv(data: &Dataset, path: &Path) -> Result<(), DatasetError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| DatasetError::CsvFormat(e.to_string()))?;
    let schema = CsvSchema::for_written(data.dim());
    let mut header = schema.features.clone();
    header.push(schema.group);
    header.push(schema.label);
    writer
        .write_record(&header)
        .map_err(|e| DatasetError::CsvFormat(e.to_string()))?;
    for p in data.points() {
        let mut row: Vec<String> = p.x.iter().map(|v| v.to_string()).collect();
        row.push(p.g.to_string());
        row.push(p.y.to_string());
        writer
            .write_record(&row)
            .map_err(|e| DatasetError::CsvFormat(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

/// Training-split membership of every dataset index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MembershipMask {
    members: Vec<bool>,
    seed: u64,
}

impl MembershipMask {
    pub fn from_indices(n: usize, indices: &[usize], seed: u64) -> Self {
        let mut members = vec![false; n];
        for &i in indices {
            members[i] = true;
        }
        Self { members, seed }
    }

    pub fn from_bits(members: Vec<bool>, seed: u64) -> Self {
        Self { members, seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.members[index]
    }

    pub fn bits(&self) -> &[bool] {
        &self.members
    }

    pub fn count(&self) -> usize {
        self.members.iter().filter(|&&b| b).count()
    }

    pub fn members(&self) -> Vec<usize> {
        (0..self.members.len()).filter(|&i| self.members[i]).collect()
    }

    pub fn non_members(&self) -> Vec<usize> {
        (0..self.members.len()).filter(|&i| !self.members[i]).collect()
    }

    /// SHA-256 of the bit pattern, as lowercase hex.
    pub fn digest(&self) -> String {
        let bytes: Vec<u8> = self.members.iter().map(|&b| b as u8).collect();
        seed::digest_hex(&bytes)
    }
}

/// `count` independent uniform subsets of size `train_size`.
pub fn draw_masks(
    data: &Dataset,
    count: usize,
    train_size: usize,
    seed: u64,
) -> Result<Vec<MembershipMask>, DatasetError> {
    let n = data.len();
    if train_size == 0 || train_size >= n {
        return Err(DatasetError::TrainSize { train_size, n });
    }
    Ok((0..count)
        .map(|i| {
            let mask_seed = seed::derive(seed, "mask", i as u64);
            let mut rng = seed::rng(mask_seed);
            let picked = index::sample(&mut rng, n, train_size).into_vec();
            MembershipMask::from_indices(n, &picked, mask_seed)
        })
        .collect())
}
