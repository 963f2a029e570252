//! Rademacher observations: projections and lifts between feature spaces,
//! per-peer rados, basic-block assembly, and the exhaustive constructions
//! used as oracles.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::hash::{Hash, Hasher};
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Label, LabeledRows, PeerView};
use crate::error::{Error, Result};

/// Largest sample for which [`enumerate_all_rados`] runs.
pub const MAX_ENUMERATION_SIZE: usize = 20;

/// Restriction of `v` to the coordinates in `idx`, in `idx` order.
pub fn proj(v: &DVector<f64>, idx: &[usize]) -> Result<DVector<f64>> {
    if let Some(&k) = idx.iter().find(|&&k| k >= v.len()) {
        return Err(Error::IndexOutOfRange {
            index: k,
            dim: v.len(),
        });
    }
    Ok(DVector::from_iterator(idx.len(), idx.iter().map(|&k| v[k])))
}

/// `dim`-vector holding `v` at `from_idx` and zeros elsewhere.
pub fn lift(v: &DVector<f64>, from_idx: &[usize], dim: usize) -> Result<DVector<f64>> {
    if v.len() != from_idx.len() {
        return Err(Error::DimensionMismatch {
            expected: from_idx.len(),
            got: v.len(),
        });
    }
    let mut out = DVector::zeros(dim);
    for (&k, &x) in from_idx.iter().zip(v.iter()) {
        if k >= dim {
            return Err(Error::IndexOutOfRange { index: k, dim });
        }
        out[k] = x;
    }
    Ok(out)
}

/// Binned shared-feature values (in `J` order) together with a class.
///
/// Equality is exact on the float bit patterns, which is sound because the
/// values are bin representatives drawn from a finite set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Signature {
    pub values: Vec<f64>,
    pub klass: Label,
}

impl Signature {
    pub fn new(values: Vec<f64>, klass: Label) -> Self {
        // fold -0.0 into 0.0 so that equal values hash equally
        let values = values.into_iter().map(|v| v + 0.0).collect();
        Self { values, klass }
    }

    pub fn matches(&self, shared: impl Iterator<Item = f64>, label: Label) -> bool {
        label == self.klass && shared.eq(self.values.iter().copied())
    }
}

impl PartialEq for Signature {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Signature {}

impl Hash for Signature {
    fn hash<H: Hasher>(&self, state: &mut H) {
        for v in &self.values {
            v.to_bits().hash(state);
        }
        self.klass.hash(state);
    }
}

impl PartialOrd for Signature {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Signature {
    fn cmp(&self, other: &Self) -> Ordering {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or_else(|| self.values.len().cmp(&other.values.len()))
            .then(self.klass.cmp(&other.klass))
    }
}

/// Sum of one peer's matching edge vectors, restricted to its non-shared
/// features, with the number of matching local rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PeerRado {
    pub rado: DVector<f64>,
    pub count: usize,
}

/// A peer's reply paired with the global indices it is expressed over.
#[derive(Debug, Clone, PartialEq)]
pub struct PeerContribution {
    pub features: Vec<usize>,
    pub rado: DVector<f64>,
    pub count: usize,
}

/// Sums `y_i * x_i` over the peer's rows whose binned shared values equal
/// `sig.values` and whose label is `sig.klass`, keeping the peer's
/// non-shared coordinates only.
pub fn peer_rado(view: &PeerView, sig: &Signature) -> PeerRado {
    let own = view.own_cols();
    let mut rado = DVector::zeros(own.len());
    let mut count = 0;
    for i in 0..view.len() {
        let y = view.labels()[i];
        if sig.matches(view.shared_values(i), y) {
            count += 1;
            let y = f64::from(y);
            for (t, &c) in own.iter().enumerate() {
                rado[t] += y * view.rows()[(i, c)];
            }
        }
    }
    PeerRado { rado, count }
}

/// A basic-block rado `u * lift(y * s) + sum_j lift(peer rado j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRado {
    pub signature: Signature,
    pub vector: DVector<f64>,
    pub u: f64,
    /// Matching row count `C_j` reported by each peer.
    pub counts: Vec<usize>,
}

impl BlockRado {
    /// `C_j > 0` for some peer.
    pub fn is_populated(&self) -> bool {
        self.counts.iter().any(|&c| c > 0)
    }
}

/// Assembles the block for `sig` from per-peer contributions.
///
/// The counter adds `C_j` once for every non-shared feature peer `j` owns,
/// and the block weight is `u = (1ᵀc) / (d - dim(J))`, which equals the
/// number of matching examples under a vertical partition.
pub fn assemble_block(
    sig: &Signature,
    contributions: &[PeerContribution],
    dim: usize,
    shared_idx: &[usize],
) -> Result<BlockRado> {
    if sig.values.len() != shared_idx.len() {
        return Err(Error::DimensionMismatch {
            expected: shared_idx.len(),
            got: sig.values.len(),
        });
    }
    let non_shared = dim - shared_idx.len();
    let mut owned: HashSet<usize> = shared_idx.iter().copied().collect();
    let mut counter = vec![0u64; dim];
    for c in contributions {
        for &k in &c.features {
            if k >= dim {
                return Err(Error::IndexOutOfRange { index: k, dim });
            }
            if !owned.insert(k) {
                return Err(Error::OverlappingFeatures(k));
            }
            counter[k] += c.count as u64;
        }
    }
    let total: u64 = counter.iter().sum();
    let u = total as f64 / non_shared as f64;

    let y = f64::from(sig.klass);
    let shared_part = DVector::from_iterator(sig.values.len(), sig.values.iter().map(|s| y * s));
    let mut vector = lift(&shared_part, shared_idx, dim)? * u;
    for c in contributions {
        vector += lift(&c.rado, &c.features, dim)?;
    }
    Ok(BlockRado {
        signature: sig.clone(),
        vector,
        u,
        counts: contributions.iter().map(|c| c.count).collect(),
    })
}

/// Crafts the block for every signature directly from the peer views,
/// without the message-passing layer. Blocks no peer matched are dropped.
pub fn craft_blocks_direct(peers: &[PeerView], signatures: &[Signature]) -> Result<RadoSet> {
    let first = peers.first().ok_or(Error::Empty("peers"))?;
    let dim = first.total_dim();
    let shared_idx = first.shared_idx().to_vec();
    let mut blocks = Vec::new();
    for sig in signatures {
        let contributions: Vec<PeerContribution> = peers
            .iter()
            .map(|view| {
                let PeerRado { rado, count } = peer_rado(view, sig);
                PeerContribution {
                    features: view.own_features(),
                    rado,
                    count,
                }
            })
            .collect();
        let block = assemble_block(sig, &contributions, dim, &shared_idx)?;
        if block.is_populated() {
            blocks.push(block);
        }
    }
    Ok(RadoSet {
        blocks,
        feature_dim: dim,
        shared_idx,
    })
}

/// The crafted basic blocks for one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadoSet {
    pub blocks: Vec<BlockRado>,
    pub feature_dim: usize,
    pub shared_idx: Vec<usize>,
}

impl RadoSet {
    /// Wraps plain vectors as unit-weight blocks with a zero signature, e.g.
    /// to train on rados obtained elsewhere.
    pub fn from_vectors(vectors: Vec<DVector<f64>>, shared_idx: Vec<usize>) -> Result<Self> {
        let dim = vectors.first().ok_or(Error::Empty("rado vectors"))?.len();
        if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: v.len(),
            });
        }
        if let Some(&k) = shared_idx.iter().find(|&&k| k >= dim) {
            return Err(Error::IndexOutOfRange { index: k, dim });
        }
        let blocks = vectors
            .into_iter()
            .map(|vector| BlockRado {
                signature: Signature::new(vec![0.0; shared_idx.len()], 1),
                vector,
                u: 1.0,
                counts: vec![1],
            })
            .collect();
        Ok(Self {
            blocks,
            feature_dim: dim,
            shared_idx,
        })
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// `d x m*` matrix with one block per column.
    pub fn matrix(&self) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.feature_dim, self.blocks.len());
        for (i, block) in self.blocks.iter().enumerate() {
            b.set_column(i, &block.vector);
        }
        b
    }

    pub fn vectors(&self) -> Vec<DVector<f64>> {
        self.blocks.iter().map(|b| b.vector.clone()).collect()
    }

    /// Blocks at `idx`, same schema.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            blocks: idx.iter().map(|&i| self.blocks[i].clone()).collect(),
            feature_dim: self.feature_dim,
            shared_idx: self.shared_idx.clone(),
        }
    }

    /// Writes one CSV row per block: signature values `s1..sk`, `class`,
    /// `u`, then coordinates `x1..xd`. Floats use Rust's shortest
    /// round-trip formatting.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=self.shared_idx.len())
            .map(|k| format!("s{k}"))
            .collect();
        header.push("class".into());
        header.push("u".into());
        header.extend((1..=self.feature_dim).map(|k| format!("x{k}")));
        w.write_record(&header)?;
        for block in &self.blocks {
            let mut row: Vec<String> = block.signature.values.iter().map(f64::to_string).collect();
            row.push(block.signature.klass.to_string());
            row.push(block.u.to_string());
            row.extend(block.vector.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }

    /// Reads the artifact written by [`RadoSet::write_csv`]. Per-peer counts
    /// are not part of the artifact and come back empty.
    pub fn read_csv<R: Read>(reader: R, shared_idx: Vec<usize>) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let k = shared_idx.len();
        let width = r.headers()?.len();
        if width < k + 2 {
            return Err(Error::SchemaMismatch("rado artifact too narrow".into()));
        }
        let feature_dim = width - k - 2;
        let mut blocks = Vec::new();
        for (row, record) in r.records().enumerate() {
            let record = record?;
            let parse = |c: usize| -> Result<f64> {
                let cell = &record[c];
                cell.parse::<f64>().map_err(|_| Error::NonNumeric {
                    row,
                    column: c.to_string(),
                    value: cell.to_string(),
                })
            };
            let values = (0..k).map(parse).collect::<Result<Vec<_>>>()?;
            let klass = if parse(k)? > 0.0 { 1 } else { -1 };
            let u = parse(k + 1)?;
            let coords = (k + 2..width).map(parse).collect::<Result<Vec<_>>>()?;
            blocks.push(BlockRado {
                signature: Signature::new(values, klass),
                vector: DVector::from_vec(coords),
                u,
                counts: Vec::new(),
            });
        }
        Ok(Self {
            blocks,
            feature_dim,
            shared_idx,
        })
    }
}

/// Rado for sign vector `sigma` (bit `i` set means `sigma_i = +1`): the sum
/// of the edge vectors of the rows with `y_i = sigma_i`.
pub fn rado_for_sigma(data: &impl LabeledRows, sigma: u64) -> DVector<f64> {
    let mut out = DVector::zeros(data.rows().ncols());
    for i in 0..data.len() {
        let bit: Label = if sigma >> i & 1 == 1 { 1 } else { -1 };
        if data.labels()[i] == bit {
            out += data.edge(i);
        }
    }
    out
}

/// All `2^m` rados of the sample, indexed by sign vector as in
/// [`rado_for_sigma`].
pub fn enumerate_all_rados(data: &impl LabeledRows) -> Result<Vec<DVector<f64>>> {
    let m = data.len();
    if m > MAX_ENUMERATION_SIZE {
        return Err(Error::TooManyExamples(m));
    }
    Ok((0..1u64 << m)
        .map(|sigma| rado_for_sigma(data, sigma))
        .collect())
}

/// Sum of the edge vectors of every total-sample row matching `sig`.
/// Requires ground-truth rows, so it only serves as a test oracle.
pub fn oracle_block_sum(data: &Dataset, sig: &Signature) -> DVector<f64> {
    let shared = data.shared_idx();
    let mut out = DVector::zeros(data.d());
    for i in 0..data.m() {
        let values = shared.iter().map(|&k| data.rows()[(i, k)]);
        if sig.matches(values, data.labels()[i]) {
            out += data.edge(i);
        }
    }
    out
}
