//! Labeled datasets, shared-feature binning and the simulated split of a
//! total sample among peers.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A class label, always `-1` or `+1`.
pub type Label = i8;

/// Row access shared by the total sample and by peer views.
pub trait LabeledRows {
    /// `m x d` feature matrix, one example per row.
    fn rows(&self) -> &DMatrix<f64>;
    fn labels(&self) -> &[Label];

    fn len(&self) -> usize {
        self.labels().len()
    }

    fn is_empty(&self) -> bool {
        self.labels().is_empty()
    }

    /// Edge vector `y_i * x_i`.
    fn edge(&self, i: usize) -> DVector<f64> {
        self.rows().row(i).transpose() * f64::from(self.labels()[i])
    }
}

/// A total sample: real features, `±1` labels and the designated shared
/// feature set `J`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    rows: DMatrix<f64>,
    labels: Vec<Label>,
    feature_names: Vec<String>,
    shared_idx: Vec<usize>,
    binned_by: Option<BinningRule>,
}

impl Dataset {
    pub fn new(
        rows: DMatrix<f64>,
        labels: Vec<Label>,
        feature_names: Vec<String>,
        shared_idx: Vec<usize>,
    ) -> Result<Self> {
        if rows.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.nrows(),
                got: labels.len(),
            });
        }
        if feature_names.len() != rows.ncols() {
            return Err(Error::DimensionMismatch {
                expected: rows.ncols(),
                got: feature_names.len(),
            });
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 1 && y != -1) {
            return Err(Error::InvalidDataset(format!("label {bad} is not ±1")));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset("non-finite feature value".into()));
        }
        check_shared(&shared_idx, rows.ncols())?;
        Ok(Self {
            rows,
            labels,
            feature_names,
            shared_idx,
            binned_by: None,
        })
    }

    /// Convenience constructor from row vectors, with generated feature names.
    pub fn from_rows(
        rows: &[Vec<f64>],
        labels: Vec<Label>,
        shared_idx: Vec<usize>,
    ) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: r.len(),
            });
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let matrix = DMatrix::from_row_slice(rows.len(), d, &flat);
        let names = (0..d).map(|k| format!("x{}", k + 1)).collect();
        Self::new(matrix, labels, names, shared_idx)
    }

    /// Same data with a different shared feature set.
    pub fn with_shared(mut self, shared_idx: Vec<usize>) -> Result<Self> {
        if self.binned_by.is_some() {
            return Err(Error::AlreadyBinned);
        }
        check_shared(&shared_idx, self.d())?;
        self.shared_idx = shared_idx;
        Ok(self)
    }

    pub fn m(&self) -> usize {
        self.labels.len()
    }

    pub fn d(&self) -> usize {
        self.rows.ncols()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn shared_idx(&self) -> &[usize] {
        &self.shared_idx
    }

    /// Indices of the features outside `J`, ascending.
    pub fn non_shared_idx(&self) -> Vec<usize> {
        let shared: HashSet<usize> = self.shared_idx.iter().copied().collect();
        (0..self.d()).filter(|k| !shared.contains(k)).collect()
    }

    /// The rule this dataset was binned with, if any.
    pub fn binning(&self) -> Option<&BinningRule> {
        self.binned_by.as_ref()
    }

    /// Rows at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let rows = DMatrix::from_fn(idx.len(), self.d(), |i, k| self.rows[(idx[i], k)]);
        Self {
            rows,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            feature_names: self.feature_names.clone(),
            shared_idx: self.shared_idx.clone(),
            binned_by: self.binned_by.clone(),
        }
    }

    /// The feature matrix restricted to `cols`, in that order.
    pub fn select_columns(&self, cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(self.m(), cols.len(), |i, k| self.rows[(i, cols[k])])
    }
}

impl LabeledRows for Dataset {
    fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    fn labels(&self) -> &[Label] {
        &self.labels
    }
}

fn check_shared(shared_idx: &[usize], d: usize) -> Result<()> {
    let mut seen = HashSet::new();
    for &k in shared_idx {
        if k >= d {
            return Err(Error::IndexOutOfRange { index: k, dim: d });
        }
        if !seen.insert(k) {
            return Err(Error::InvalidDataset(format!(
                "shared feature {k} listed twice"
            )));
        }
    }
    if shared_idx.len() >= d {
        return Err(Error::InvalidDataset(
            "at least one feature must be non-shared".into(),
        ));
    }
    Ok(())
}

/// Reads a headed CSV file. The label column must hold exactly two distinct
/// values, one of which is `positive_label` (mapped to `+1`).
pub fn load_csv(
    path: impl AsRef<Path>,
    label_column: &str,
    positive_label: &str,
) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, label_column, positive_label)
}

/// [`load_csv`] over any reader.
pub fn read_csv<R: std::io::Read>(
    reader: R,
    label_column: &str,
    positive_label: &str,
) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let label_pos = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::UnknownLabelColumn(label_column.to_string()))?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != label_pos)
        .map(|(_, h)| h.to_string())
        .collect();

    let mut values = Vec::new();
    let mut raw_labels = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        for (k, cell) in record.iter().enumerate() {
            if k == label_pos {
                raw_labels.push(cell.to_string());
                continue;
            }
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                _ => {
                    return Err(Error::NonNumeric {
                        row,
                        column: headers.get(k).unwrap_or_default().to_string(),
                        value: cell.to_string(),
                    })
                }
            }
        }
    }

    let distinct: BTreeSet<&str> = raw_labels.iter().map(String::as_str).collect();
    if distinct.len() > 2 {
        return Err(Error::NonBinaryLabel(format!(
            "{} distinct values",
            distinct.len()
        )));
    }
    if !distinct.contains(positive_label) {
        return Err(Error::NonBinaryLabel(format!(
            "positive label `{positive_label}` never occurs"
        )));
    }
    let labels = raw_labels
        .iter()
        .map(|l| if l == positive_label { 1 } else { -1 })
        .collect::<Vec<Label>>();
    let rows = DMatrix::from_row_slice(labels.len(), feature_names.len(), &values);
    Dataset::new(rows, labels, feature_names, Vec::new())
}

/// Cut points and representatives for one shared feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBins {
    pub feature: usize,
    /// Interior cut points, strictly increasing. A value equal to a cut
    /// belongs to the lower bin.
    pub cuts: Vec<f64>,
    /// One value per bin, in `[-1, 1]`.
    pub representatives: Vec<f64>,
}

impl FeatureBins {
    pub fn bin_count(&self) -> usize {
        self.representatives.len()
    }

    pub fn bin_of(&self, value: f64) -> usize {
        self.cuts.partition_point(|&c| c < value)
    }

    pub fn representative(&self, value: f64) -> f64 {
        self.representatives[self.bin_of(value)]
    }

    pub fn is_representative(&self, value: f64) -> bool {
        self.representatives.contains(&value)
    }
}

/// Train-fold min/max used to map a non-shared feature onto `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub feature: usize,
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    pub fn apply(&self, v: f64) -> f64 {
        if self.max > self.min {
            2.0 * (v - self.min) / (self.max - self.min) - 1.0
        } else {
            0.0
        }
    }
}

/// Preprocessing fitted on a training fold: quantile bins for each shared
/// feature (in `J` order) and min-max scaling for the others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinningRule {
    pub dim: usize,
    pub shared: Vec<FeatureBins>,
    pub scaling: Vec<MinMax>,
}

impl BinningRule {
    pub fn shared_idx(&self) -> Vec<usize> {
        self.shared.iter().map(|f| f.feature).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Fits equal-frequency bins with at most `b` bins on every shared feature.
///
/// Features with at most `b` distinct values get one bin per value, so a
/// boolean feature always ends up with two bins. A constant feature gets a
/// single bin with representative 0.
pub fn fit_bins(data: &Dataset, b: usize) -> Result<BinningRule> {
    if b < 2 {
        return Err(Error::InvalidArgument(format!(
            "bin count must be >= 2, got {b}"
        )));
    }
    if data.m() == 0 {
        return Err(Error::Empty("training rows"));
    }
    let shared = data
        .shared_idx()
        .iter()
        .map(|&k| {
            let column: Vec<f64> = data.rows.column(k).iter().copied().collect();
            let bins = fit_feature_bins(k, column, b);
            if bins.bin_count() < 2 {
                warn!(
                    "shared feature `{}` is constant on the training rows; using a single bin",
                    data.feature_names[k]
                );
            }
            bins
        })
        .collect();
    let scaling = data
        .non_shared_idx()
        .into_iter()
        .map(|k| {
            let col = data.rows.column(k);
            MinMax {
                feature: k,
                min: col.min(),
                max: col.max(),
            }
        })
        .collect();
    Ok(BinningRule {
        dim: data.d(),
        shared,
        scaling,
    })
}

fn fit_feature_bins(feature: usize, mut values: Vec<f64>, b: usize) -> FeatureBins {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let max = values[n - 1];
    let mut distinct = values.clone();
    distinct.dedup();

    let mut cuts: Vec<f64> = if distinct.len() <= b {
        distinct[..distinct.len() - 1].to_vec()
    } else {
        let mut cuts: Vec<f64> = (1..b).map(|k| values[(k * n).div_ceil(b) - 1]).collect();
        cuts.dedup();
        cuts.retain(|&c| c < max);
        cuts
    };
    if cuts.is_empty() && distinct.len() > 1 {
        cuts.push(distinct[distinct.len() - 2]);
    }

    let bins = FeatureBins {
        feature,
        cuts,
        representatives: Vec::new(),
    };
    let mut lo = vec![f64::INFINITY; bins.cuts.len() + 1];
    let mut hi = vec![f64::NEG_INFINITY; bins.cuts.len() + 1];
    for &v in &values {
        let k = bins.bin_of(v);
        lo[k] = lo[k].min(v);
        hi[k] = hi[k].max(v);
    }
    let mids: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
    let (first, last) = (mids[0], mids[mids.len() - 1]);
    let representatives = mids
        .iter()
        .map(|&r| {
            if last > first {
                2.0 * (r - first) / (last - first) - 1.0
            } else {
                0.0
            }
        })
        .collect();
    FeatureBins {
        representatives,
        ..bins
    }
}

/// Replaces shared columns by their bin representatives and min-max scales
/// the remaining columns. Applying the same rule again is a no-op.
pub fn apply_bins(data: &Dataset, rule: &BinningRule) -> Result<Dataset> {
    match &data.binned_by {
        Some(applied) if applied == rule => return Ok(data.clone()),
        Some(_) => return Err(Error::AlreadyBinned),
        None => {}
    }
    if rule.dim != data.d() {
        return Err(Error::SchemaMismatch(format!(
            "rule fitted on {} features, data has {}",
            rule.dim,
            data.d()
        )));
    }
    if rule.shared_idx() != data.shared_idx {
        return Err(Error::SchemaMismatch("shared feature sets differ".into()));
    }
    let mut rows = data.rows.clone();
    for bins in &rule.shared {
        for v in rows.column_mut(bins.feature).iter_mut() {
            *v = bins.representative(*v);
        }
    }
    for s in &rule.scaling {
        for v in rows.column_mut(s.feature).iter_mut() {
            *v = s.apply(*v);
        }
    }
    Ok(Dataset {
        rows,
        labels: data.labels.clone(),
        feature_names: data.feature_names.clone(),
        shared_idx: data.shared_idx.clone(),
        binned_by: Some(rule.clone()),
    })
}

/// One peer's local sample: its own non-shared features plus `J`, rows in
/// an order unrelated to any other peer's.
#[derive(Debug, Clone)]
pub struct PeerView {
    peer_id: usize,
    dim: usize,
    /// Global feature indices of the local columns, ascending.
    feature_idx: Vec<usize>,
    shared_idx: Vec<usize>,
    /// Local column of each shared feature, in `J` order.
    shared_cols: Vec<usize>,
    /// Local columns of the non-shared features.
    own_cols: Vec<usize>,
    rows: DMatrix<f64>,
    labels: Vec<Label>,
    provenance: Vec<usize>,
}

impl PeerView {
    /// Builds the view of `peer_id` holding `own_features` (non-shared)
    /// plus `J`, over the total-sample rows listed in `provenance`.
    pub fn from_rows(
        data: &Dataset,
        peer_id: usize,
        own_features: &[usize],
        provenance: Vec<usize>,
    ) -> Result<Self> {
        let shared = data.shared_idx().to_vec();
        let mut feature_idx: Vec<usize> = own_features.iter().chain(&shared).copied().collect();
        feature_idx.sort_unstable();
        let before = feature_idx.len();
        feature_idx.dedup();
        if feature_idx.len() != before {
            return Err(Error::InvalidArgument(
                "own features overlap the shared set".into(),
            ));
        }
        if let Some(&k) = feature_idx.iter().find(|&&k| k >= data.d()) {
            return Err(Error::IndexOutOfRange {
                index: k,
                dim: data.d(),
            });
        }
        let col_of = |k: usize| feature_idx.binary_search(&k).expect("feature present");
        let shared_cols = shared.iter().map(|&k| col_of(k)).collect();
        let mut own_sorted = own_features.to_vec();
        own_sorted.sort_unstable();
        let own_cols = own_sorted.iter().map(|&k| col_of(k)).collect();
        let rows = DMatrix::from_fn(provenance.len(), feature_idx.len(), |i, c| {
            data.rows[(provenance[i], feature_idx[c])]
        });
        let labels = provenance.iter().map(|&i| data.labels[i]).collect();
        Ok(Self {
            peer_id,
            dim: data.d(),
            feature_idx,
            shared_idx: shared,
            shared_cols,
            own_cols,
            rows,
            labels,
            provenance,
        })
    }

    pub fn peer_id(&self) -> usize {
        self.peer_id
    }

    /// Dimension `d` of the total feature space.
    pub fn total_dim(&self) -> usize {
        self.dim
    }

    pub fn feature_idx(&self) -> &[usize] {
        &self.feature_idx
    }

    pub fn shared_idx(&self) -> &[usize] {
        &self.shared_idx
    }

    /// Global indices of the peer's non-shared features, ascending.
    pub fn own_features(&self) -> Vec<usize> {
        self.own_cols.iter().map(|&c| self.feature_idx[c]).collect()
    }

    pub(crate) fn own_cols(&self) -> &[usize] {
        &self.own_cols
    }

    /// Binned shared values of local row `i`, in `J` order.
    pub fn shared_values(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        self.shared_cols.iter().map(move |&c| self.rows[(i, c)])
    }

    /// True total-sample row index of each local row. Simulation ground
    /// truth for tests and oracles; the crafting protocol never reads it.
    pub fn provenance(&self) -> &[usize] {
        &self.provenance
    }
}

impl LabeledRows for PeerView {
    fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    fn labels(&self) -> &[Label] {
        &self.labels
    }
}

/// Non-shared features dealt round-robin to `p` peers.
pub fn partition_features(data: &Dataset, p: usize) -> Result<Vec<Vec<usize>>> {
    let non_shared = data.non_shared_idx();
    if p < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 peers, got {p}"
        )));
    }
    if p > non_shared.len() {
        return Err(Error::InvalidArgument(format!(
            "{p} peers but only {} non-shared features",
            non_shared.len()
        )));
    }
    let mut owned = vec![Vec::new(); p];
    for (n, k) in non_shared.into_iter().enumerate() {
        owned[n % p].push(k);
    }
    Ok(owned)
}

/// Splits `data` among `p` peers.
///
/// Every peer receives all rows on its own features, shuffled
/// independently. With `p_s > 0`, each peer then picks `ceil(p_s * m)` of
/// its example indices and, for each, a uniformly random other peer also
/// receives that example on its own features. `p_s = 0` is the vertical
/// partition.
pub fn split_peers(data: &Dataset, p: usize, p_s: f64, seed: u64) -> Result<Vec<PeerView>> {
    if !(0.0..=1.0).contains(&p_s) {
        return Err(Error::InvalidArgument(format!(
            "p_s must lie in [0, 1], got {p_s}"
        )));
    }
    let owned = partition_features(data, p)?;
    let m = data.m();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assigned: Vec<Vec<usize>> = vec![(0..m).collect(); p];

    let shared_count = (p_s * m as f64).ceil() as usize;
    if shared_count > 0 {
        for j in 0..p {
            for i in index::sample(&mut rng, m, shared_count.min(m)) {
                let mut other = rng.gen_range(0..p - 1);
                if other >= j {
                    other += 1;
                }
                assigned[other].push(i);
            }
        }
    }
    assigned
        .into_iter()
        .zip(owned)
        .enumerate()
        .map(|(j, (mut rows, features))| {
            rows.shuffle(&mut rng);
            PeerView::from_rows(data, j, &features, rows)
        })
        .collect()
}

/// Randomized visibility: peer `j` independently sees example `i` with
/// probability `eta[i]`.
pub fn split_peers_randomized(
    data: &Dataset,
    p: usize,
    eta: &[f64],
    seed: u64,
) -> Result<Vec<PeerView>> {
    if eta.len() != data.m() {
        return Err(Error::DimensionMismatch {
            expected: data.m(),
            got: eta.len(),
        });
    }
    if eta.iter().any(|e| !(0.0..=1.0).contains(e)) {
        return Err(Error::InvalidArgument(
            "visibility probabilities must lie in [0, 1]".into(),
        ));
    }
    let owned = partition_features(data, p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    owned
        .iter()
        .enumerate()
        .map(|(j, features)| {
            let mut rows: Vec<usize> = (0..data.m()).filter(|&i| rng.gen_bool(eta[i])).collect();
            rows.shuffle(&mut rng);
            PeerView::from_rows(data, j, features, rows)
        })
        .collect()
}
