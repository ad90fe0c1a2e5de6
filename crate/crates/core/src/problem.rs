//! Data model for weakly supervised tasks: instances grouped in bags, bag
//! labels, the latent labels each bag label allows, instance weights, and the
//! reduction map that collapses instances with a known shared latent label
//! onto a single row/column of the relaxed equivalence matrix.

use std::collections::BTreeSet;
use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Token used for the unlabeled bag in semi-supervised and clustering data.
pub const UNLABELED_TOKEN: &str = "?";

/// Latent label space `{0..P-1}` together with the observed bag labels and the
/// latent labels each of them allows.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelSpace {
    latent_count: usize,
    bag_labels: Vec<String>,
    feasible: Vec<Vec<usize>>,
}

impl LabelSpace {
    /// Build a label space; feasible sets are sorted and deduplicated.
    pub fn new(latent_count: usize, bag_labels: Vec<String>, feasible: Vec<Vec<usize>>) -> Result<Self> {
        if latent_count == 0 {
            return Err(Error::arg("latent class count must be positive"));
        }
        if bag_labels.is_empty() {
            return Err(Error::arg("label space needs at least one bag label"));
        }
        if bag_labels.len() != feasible.len() {
            return Err(Error::dim(format!(
                "{} bag labels but {} feasible sets",
                bag_labels.len(),
                feasible.len()
            )));
        }
        let distinct: BTreeSet<&String> = bag_labels.iter().collect();
        if distinct.len() != bag_labels.len() {
            return Err(Error::arg("bag labels must be distinct"));
        }
        let mut clean = Vec::with_capacity(feasible.len());
        for (l, set) in feasible.into_iter().enumerate() {
            let set: BTreeSet<usize> = set.into_iter().collect();
            if set.is_empty() {
                return Err(Error::arg(format!("feasible set of bag label {} is empty", bag_labels[l])));
            }
            if let Some(&p) = set.iter().find(|&&p| p >= latent_count) {
                return Err(Error::arg(format!(
                    "feasible set of bag label {} contains {p} >= {latent_count}",
                    bag_labels[l]
                )));
            }
            clean.push(set.into_iter().collect());
        }
        Ok(Self {
            latent_count,
            bag_labels,
            feasible: clean,
        })
    }

    /// Unsupervised: a single unlabeled bag label allowing every latent class.
    pub fn clustering(latent_count: usize) -> Result<Self> {
        Self::new(
            latent_count,
            vec![UNLABELED_TOKEN.to_string()],
            vec![(0..latent_count).collect()],
        )
    }

    /// Semi-supervised: one bag label per class (fixing the latent label) plus
    /// the unlabeled token. Class `l` has bag label `l.to_string()` at index `l`;
    /// the unlabeled token sits at index `P`.
    pub fn ssl(latent_count: usize) -> Result<Self> {
        let tokens: Vec<String> = (0..latent_count).map(|l| l.to_string()).collect();
        Self::ssl_with_tokens(&tokens)
    }

    /// Semi-supervised label space with named classes; class `l` is
    /// `class_tokens[l]`.
    pub fn ssl_with_tokens(class_tokens: &[String]) -> Result<Self> {
        let p = class_tokens.len();
        let mut labels = class_tokens.to_vec();
        labels.push(UNLABELED_TOKEN.to_string());
        let mut feasible: Vec<Vec<usize>> = (0..p).map(|l| vec![l]).collect();
        feasible.push((0..p).collect());
        Self::new(p, labels, feasible)
    }

    /// Multiple-instance learning: bag label `0` (index 0) only allows latent
    /// label 0, bag label `1` (index 1) allows both.
    pub fn mil() -> Self {
        Self::new(2, vec!["0".into(), "1".into()], vec![vec![0], vec![0, 1]])
            .expect("static MIL label space is valid")
    }

    pub fn latent_count(&self) -> usize {
        self.latent_count
    }

    pub fn bag_labels(&self) -> &[String] {
        &self.bag_labels
    }

    pub fn feasible(&self, bag_label: usize) -> &[usize] {
        &self.feasible[bag_label]
    }

    pub fn label_index(&self, token: &str) -> Option<usize> {
        self.bag_labels.iter().position(|l| l == token)
    }

    /// True for the two-label MIL structure: one label allowing only `{0}` and
    /// one allowing `{0, 1}`, with `P = 2`.
    pub fn is_mil(&self) -> bool {
        self.latent_count == 2
            && self.feasible.len() == 2
            && self.feasible.iter().any(|f| f == &[0])
            && self.feasible.iter().any(|f| f == &[0, 1])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bag {
    pub id: String,
    /// Index into [`LabelSpace::bag_labels`].
    pub label: usize,
    pub members: Vec<usize>,
}

/// Instance representation: explicit features (`N × d`) or a precomputed
/// `N × N` kernel.
#[derive(Clone, Debug, PartialEq)]
pub enum Features {
    Dense(DMatrix<f64>),
    Precomputed(DMatrix<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeakDataset {
    pub features: Features,
    pub bags: Vec<Bag>,
    pub labels: LabelSpace,
    pub weights: DVector<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightMode {
    Uniform,
    PerBag,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    Clustering,
    Ssl,
    Mil,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Clustering => "cluster",
            Task::Ssl => "ssl",
            Task::Mil => "mil",
        })
    }
}

impl WeakDataset {
    /// Build a dataset with per-bag weights already chosen. Nothing is
    /// validated here; see [`validate_dataset`].
    pub fn new(features: Features, bags: Vec<Bag>, labels: LabelSpace, mode: WeightMode) -> Result<Self> {
        let n = features_len(&features);
        let mut ds = Self {
            features,
            bags,
            labels,
            weights: DVector::zeros(n),
        };
        ds.weights = make_weights(&ds, mode)?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        features_len(&self.features)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn latent_count(&self) -> usize {
        self.labels.latent_count()
    }

    pub fn dense_features(&self) -> Option<&DMatrix<f64>> {
        match &self.features {
            Features::Dense(x) => Some(x),
            Features::Precomputed(_) => None,
        }
    }

    /// Bag index of every instance. Assumes the bags partition the instances.
    pub fn instance_bags(&self) -> Vec<usize> {
        let mut out = vec![usize::MAX; self.len()];
        for (i, bag) in self.bags.iter().enumerate() {
            for &n in &bag.members {
                if n < out.len() {
                    out[n] = i;
                }
            }
        }
        out
    }

    /// Feasible latent labels of every instance.
    pub fn instance_feasible(&self) -> Vec<&[usize]> {
        let mut out: Vec<&[usize]> = vec![&[]; self.len()];
        for bag in &self.bags {
            let f = self.labels.feasible(bag.label);
            for &n in &bag.members {
                if n < out.len() {
                    out[n] = f;
                }
            }
        }
        out
    }

    /// Sub-dataset restricted to the given bags, instances renumbered in bag
    /// order. Weights are recomputed with `mode`. Returns the dataset and the
    /// original index of every new instance.
    pub fn subset_bags(&self, bag_indices: &[usize], mode: WeightMode) -> Result<(WeakDataset, Vec<usize>)> {
        let mut origin = Vec::new();
        let mut bags = Vec::with_capacity(bag_indices.len());
        for &b in bag_indices {
            let bag = self
                .bags
                .get(b)
                .ok_or_else(|| Error::arg(format!("bag index {b} out of range")))?;
            let start = origin.len();
            origin.extend_from_slice(&bag.members);
            bags.push(Bag {
                id: bag.id.clone(),
                label: bag.label,
                members: (start..origin.len()).collect(),
            });
        }
        let features = match &self.features {
            Features::Dense(x) => Features::Dense(x.select_rows(origin.iter())),
            Features::Precomputed(k) => Features::Precomputed(k.select_rows(origin.iter()).select_columns(origin.iter())),
        };
        let ds = WeakDataset::new(features, bags, self.labels.clone(), mode)?;
        Ok((ds, origin))
    }
}

fn features_len(features: &Features) -> usize {
    match features {
        Features::Dense(x) => x.nrows(),
        Features::Precomputed(k) => k.nrows(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    EmptyBag,
    IndexOutOfRange,
    BagsNotDisjoint,
    BagsNotCovering,
    UnknownBagLabel,
    NegativeWeight,
    WeightsSum,
    WeightLength,
    KernelNotSquare,
    NonFinite,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub index: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Check every dataset invariant and report each violation. An empty report
/// means the dataset is well formed.
pub fn validate_dataset(ds: &WeakDataset) -> Vec<Violation> {
    let mut report = Vec::new();
    let mut push = |kind, index, message: String| report.push(Violation { kind, index, message });
    let n = ds.len();

    if let Features::Precomputed(k) = &ds.features {
        if k.nrows() != k.ncols() {
            push(
                ViolationKind::KernelNotSquare,
                None,
                format!("precomputed kernel is {}x{}", k.nrows(), k.ncols()),
            );
        }
    }
    let values = match &ds.features {
        Features::Dense(x) => x,
        Features::Precomputed(k) => k,
    };
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        push(ViolationKind::NonFinite, Some(pos % n.max(1)), "non-finite feature value".into());
    }

    let mut owner: Vec<Option<usize>> = vec![None; n];
    for (i, bag) in ds.bags.iter().enumerate() {
        if bag.members.is_empty() {
            push(ViolationKind::EmptyBag, Some(i), format!("bag {} is empty", bag.id));
        }
        if bag.label >= ds.labels.bag_labels().len() {
            push(
                ViolationKind::UnknownBagLabel,
                Some(i),
                format!("bag {} has unknown label index {}", bag.id, bag.label),
            );
        }
        for &m in &bag.members {
            if m >= n {
                push(
                    ViolationKind::IndexOutOfRange,
                    Some(m),
                    format!("bag {} lists instance {m} but N = {n}", bag.id),
                );
                continue;
            }
            if let Some(prev) = owner[m] {
                push(
                    ViolationKind::BagsNotDisjoint,
                    Some(m),
                    format!("bags not disjoint: instance {m} in bags {} and {}", ds.bags[prev].id, bag.id),
                );
            } else {
                owner[m] = Some(i);
            }
        }
    }
    for (m, o) in owner.iter().enumerate() {
        if o.is_none() {
            push(
                ViolationKind::BagsNotCovering,
                Some(m),
                format!("bags not covering: instance {m} belongs to no bag"),
            );
        }
    }

    if ds.weights.len() != n {
        push(
            ViolationKind::WeightLength,
            None,
            format!("weight vector has length {} but N = {n}", ds.weights.len()),
        );
    } else {
        for (m, &w) in ds.weights.iter().enumerate() {
            if !(w >= 0.0) {
                push(ViolationKind::NegativeWeight, Some(m), format!("weight {m} is {w} < 0"));
            }
        }
        let total: f64 = ds.weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            push(ViolationKind::WeightsSum, None, format!("weights sum ≠ 1 (sum = {total})"));
        }
    }
    report
}

/// Instance weights: `1/N` everywhere, or `1/(I·N_i)` for instances of bag `i`.
pub fn make_weights(ds: &WeakDataset, mode: WeightMode) -> Result<DVector<f64>> {
    let n = ds.len();
    if n == 0 {
        return Err(Error::NoInstances);
    }
    match mode {
        WeightMode::Uniform => Ok(DVector::from_element(n, 1.0 / n as f64)),
        WeightMode::PerBag => {
            let nonempty = ds.bags.iter().filter(|b| !b.members.is_empty()).count();
            if nonempty == 0 {
                return Err(Error::NoInstances);
            }
            let mut w = DVector::zeros(n);
            for bag in ds.bags.iter().filter(|b| !b.members.is_empty()) {
                let v = 1.0 / (nonempty as f64 * bag.members.len() as f64);
                for &m in &bag.members {
                    if m >= n {
                        return Err(Error::arg(format!("bag {} lists instance {m} but N = {n}", bag.id)));
                    }
                    w[m] = v;
                }
            }
            // Compensated renormalisation keeps the sum within 1e-12 for large N.
            let total: f64 = w.iter().sum();
            Ok(w / total)
        }
    }
}

/// What a column of the reduced matrix stands for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Anchor {
    /// All labeled instances of latent class `l` (semi-supervised).
    Class(usize),
    /// All negative-bag instances (multiple-instance learning).
    Negative,
}

/// The `N × N_R` 0/1 matrix `R`, stored as the column index of the single
/// one in each row.
#[derive(Clone, Debug, PartialEq)]
pub struct ReductionMap {
    column: Vec<usize>,
    reduced_size: usize,
    anchors: Vec<(Anchor, usize)>,
}

impl ReductionMap {
    pub fn identity(n: usize) -> Self {
        Self {
            column: (0..n).collect(),
            reduced_size: n,
            anchors: Vec::new(),
        }
    }

    pub fn from_columns(column: Vec<usize>, reduced_size: usize, anchors: Vec<(Anchor, usize)>) -> Result<Self> {
        if let Some(&c) = column.iter().find(|&&c| c >= reduced_size) {
            return Err(Error::dim(format!("column {c} >= reduced size {reduced_size}")));
        }
        Ok(Self {
            column,
            reduced_size,
            anchors,
        })
    }

    pub fn len(&self) -> usize {
        self.column.len()
    }

    pub fn is_empty(&self) -> bool {
        self.column.is_empty()
    }

    pub fn reduced_size(&self) -> usize {
        self.reduced_size
    }

    /// Column of the one in row `n`.
    pub fn column_of(&self, n: usize) -> usize {
        self.column[n]
    }

    pub fn columns(&self) -> &[usize] {
        &self.column
    }

    pub fn anchors(&self) -> &[(Anchor, usize)] {
        &self.anchors
    }

    pub fn anchor_column(&self, anchor: Anchor) -> Option<usize> {
        self.anchors.iter().find(|(a, _)| *a == anchor).map(|&(_, c)| c)
    }

    pub fn is_identity(&self) -> bool {
        self.reduced_size == self.column.len() && self.column.iter().enumerate().all(|(i, &c)| i == c)
    }

    /// Dense `N × N_R` matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        let mut r = DMatrix::zeros(self.len(), self.reduced_size);
        for (n, &c) in self.column.iter().enumerate() {
            r[(n, c)] = 1.0;
        }
        r
    }

    /// `M · R` for an `k × N` matrix: sums the columns that share a reduced index.
    pub fn right_reduce(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        if self.is_identity() {
            return m.clone();
        }
        let mut out = DMatrix::zeros(m.nrows(), self.reduced_size);
        for (n, &c) in self.column.iter().enumerate() {
            let src = m.column(n).clone_owned();
            let mut dst = out.column_mut(c);
            dst += src;
        }
        out
    }

    /// `M · Rᵀ` for a `k × N_R` matrix: copies reduced columns back to instances.
    pub fn right_expand(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        if self.is_identity() {
            return m.clone();
        }
        DMatrix::from_fn(m.nrows(), self.len(), |i, n| m[(i, self.column[n])])
    }
}

/// Fixed entries `(row, col, value)` of the reduced matrix.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ZConstraintSet {
    pub fixed_entries: Vec<(usize, usize, f64)>,
}

impl ZConstraintSet {
    pub fn is_empty(&self) -> bool {
        self.fixed_entries.is_empty()
    }

    /// Largest deviation `|Z_ij − v|` over the fixed entries.
    pub fn max_violation(&self, z: &DMatrix<f64>) -> f64 {
        self.fixed_entries
            .iter()
            .map(|&(i, j, v)| (z[(i, j)] - v).abs())
            .fold(0.0, f64::max)
    }
}

/// Build the reduction map and fixed-entry constraints for a task.
///
/// * clustering: identity, no constraints;
/// * SSL: unlabeled instances (feasible set larger than one class) keep their
///   own column, labeled instances of class `l` share column `N_u + l`, and
///   distinct class anchors are pinned to 0 (must-not-link);
/// * MIL: positive-bag instances keep their own column, every negative-bag
///   instance shares column `N_u`, which makes the negative block all ones.
pub fn build_reduction(ds: &WeakDataset, task: Task) -> Result<(ReductionMap, ZConstraintSet)> {
    let n = ds.len();
    if n == 0 {
        return Err(Error::NoInstances);
    }
    let feasible = ds.instance_feasible();
    match task {
        Task::Clustering => Ok((ReductionMap::identity(n), ZConstraintSet::default())),
        Task::Ssl => {
            let p = ds.latent_count();
            let unlabeled: Vec<usize> = (0..n).filter(|&m| feasible[m].len() > 1).collect();
            let nu = unlabeled.len();
            let mut column = vec![usize::MAX; n];
            for (c, &m) in unlabeled.iter().enumerate() {
                column[m] = c;
            }
            let mut seen = vec![false; p];
            for m in 0..n {
                if let [l] = feasible[m] {
                    column[m] = nu + l;
                    seen[*l] = true;
                }
            }
            if let Some(l) = seen.iter().position(|s| !s) {
                return Err(Error::EmptyClassAnchor(l));
            }
            let anchors = (0..p).map(|l| (Anchor::Class(l), nu + l)).collect();
            let mut fixed = Vec::new();
            for a in 0..p {
                for b in 0..p {
                    if a != b {
                        fixed.push((nu + a, nu + b, 0.0));
                    }
                }
            }
            Ok((
                ReductionMap::from_columns(column, nu + p, anchors)?,
                ZConstraintSet { fixed_entries: fixed },
            ))
        }
        Task::Mil => {
            if !ds.labels.is_mil() {
                return Err(Error::arg("MIL reduction requires the MIL label space"));
            }
            let positive: Vec<usize> = (0..n).filter(|&m| feasible[m].len() > 1).collect();
            let nu = positive.len();
            let mut column = vec![nu; n];
            for (c, &m) in positive.iter().enumerate() {
                column[m] = c;
            }
            Ok((
                ReductionMap::from_columns(column, nu + 1, vec![(Anchor::Negative, nu)])?,
                ZConstraintSet::default(),
            ))
        }
    }
}

/// `B = R · Z · Rᵀ`, i.e. `B_nm = Z_{r(n), r(m)}`.
pub fn expand_reduced(r: &ReductionMap, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if z.nrows() != r.reduced_size() || z.ncols() != r.reduced_size() {
        return Err(Error::dim(format!(
            "Z is {}x{} but the reduction has N_R = {}",
            z.nrows(),
            z.ncols(),
            r.reduced_size()
        )));
    }
    let n = r.len();
    Ok(DMatrix::from_fn(n, n, |a, b| z[(r.column_of(a), r.column_of(b))]))
}
