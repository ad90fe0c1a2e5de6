//! Seeded synthetic generators: Gaussian blobs (centred or off-centre),
//! concentric rings, multiple-instance bags and semi-supervised splits.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use weaksup::problem::{Bag, Features, LabelSpace, WeakDataset, WeightMode};

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    /// Isotropic Gaussians on a regular polygon centred at the origin, with
    /// adjacent centers `separation` apart.
    GaussianBlobs,
    /// The same polygon moved away from the origin so that its first two
    /// centers lie on one ray from the origin: no linear classifier without
    /// intercept separates them.
    OffCenter,
    /// Concentric annuli of radii `separation, 2·separation, …`.
    Rings,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n_points: usize,
    pub n_clusters: usize,
    pub separation: f64,
    /// Standard deviation of the signal coordinates.
    pub sigma: f64,
    pub noise_dims: usize,
    pub noise_sigma: f64,
    pub shape: Shape,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_points: 150,
            n_clusters: 3,
            separation: 4.0,
            sigma: 1.0,
            noise_dims: 0,
            noise_sigma: 1.0,
            shape: Shape::GaussianBlobs,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_clusters < 2 || self.n_points < self.n_clusters {
            return Err(HarnessError::Spec(format!(
                "need n_points ≥ n_clusters ≥ 2, got n_points = {}, n_clusters = {}",
                self.n_points, self.n_clusters
            )));
        }
        for (name, v) in [("separation", self.separation), ("sigma", self.sigma), ("noise_sigma", self.noise_sigma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(HarnessError::Spec(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        Ok(())
    }
}

/// A dataset with its ground-truth latent labels.
#[derive(Clone, Debug)]
pub struct LabeledData {
    pub dataset: WeakDataset,
    pub truth: Vec<usize>,
}

/// Cluster sizes as even as possible, larger clusters first.
fn sizes(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|c| n / k + usize::from(c < n % k)).collect()
}

/// Regular `k`-gon with side `s` centred at the origin.
fn polygon(k: usize, s: f64) -> Vec<[f64; 2]> {
    let r = s / (2.0 * (PI / k as f64).sin());
    (0..k)
        .map(|c| {
            let a = 2.0 * PI * c as f64 / k as f64 + PI / 2.0;
            [r * a.cos(), r * a.sin()]
        })
        .collect()
}

/// Regular `k`-gon with side `s` whose first edge runs from `(D, 0)` to
/// `(D + s, 0)`, `D = 2s`.
fn off_center_polygon(k: usize, s: f64) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(k);
    let mut p = [2.0 * s, 0.0];
    let mut heading = 0.0f64;
    for _ in 0..k {
        out.push(p);
        p = [p[0] + s * heading.cos(), p[1] + s * heading.sin()];
        heading += 2.0 * PI / k as f64;
    }
    out
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Clustering data: one unlabeled bag, uniform weights, `2 + noise_dims`
/// features, points ordered by cluster.
pub fn gen_clusters(spec: &SyntheticSpec) -> Result<LabeledData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.n_clusters;
    let d = 2 + spec.noise_dims;
    let mut x = DMatrix::zeros(spec.n_points, d);
    let mut truth = Vec::with_capacity(spec.n_points);
    let centers = match spec.shape {
        Shape::GaussianBlobs => polygon(k, spec.separation),
        Shape::OffCenter => off_center_polygon(k, spec.separation),
        Shape::Rings => vec![[0.0, 0.0]; k],
    };
    let mut i = 0;
    for (c, &m) in sizes(spec.n_points, k).iter().enumerate() {
        for _ in 0..m {
            match spec.shape {
                Shape::Rings => {
                    let radius = (c + 1) as f64 * spec.separation + spec.sigma * normal(&mut rng);
                    let angle = rng.random_range(0.0..2.0 * PI);
                    x[(i, 0)] = radius * angle.cos();
                    x[(i, 1)] = radius * angle.sin();
                }
                _ => {
                    for j in 0..2 {
                        x[(i, j)] = centers[c][j] + spec.sigma * normal(&mut rng);
                    }
                }
            }
            for j in 2..d {
                x[(i, j)] = spec.noise_sigma * normal(&mut rng);
            }
            truth.push(c);
            i += 1;
        }
    }
    let bags = vec![Bag {
        id: "all".into(),
        label: 0,
        members: (0..spec.n_points).collect(),
    }];
    let dataset = WeakDataset::new(Features::Dense(x), bags, LabelSpace::clustering(k)?, WeightMode::Uniform)?;
    Ok(LabeledData { dataset, truth })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MilSyntheticSpec {
    pub n_pos_bags: usize,
    pub n_neg_bags: usize,
    pub bag_size: usize,
    /// Fraction of true positives in every positive bag, in `(0, 1]`.
    pub witness_rate: f64,
    /// Distance between the two class means, in units of `sigma`.
    pub separation: f64,
    pub sigma: f64,
    pub dim: usize,
    pub weights: WeightMode,
    pub seed: u64,
}

impl Default for MilSyntheticSpec {
    fn default() -> Self {
        Self {
            n_pos_bags: 8,
            n_neg_bags: 8,
            bag_size: 10,
            witness_rate: 0.5,
            separation: 4.0,
            sigma: 1.0,
            dim: 2,
            weights: WeightMode::PerBag,
            seed: 0,
        }
    }
}

impl MilSyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_pos_bags == 0 || self.n_neg_bags == 0 || self.bag_size == 0 || self.dim == 0 {
            return Err(HarnessError::Spec("bag counts, bag size and dimension must be positive".into()));
        }
        if !(self.witness_rate > 0.0 && self.witness_rate <= 1.0) {
            return Err(HarnessError::Spec(format!("witness_rate must lie in (0, 1], got {}", self.witness_rate)));
        }
        if !(self.separation >= 0.0 && self.sigma > 0.0) {
            return Err(HarnessError::Spec("separation must be nonnegative and sigma positive".into()));
        }
        Ok(())
    }

    /// True positives per positive bag: `⌈witness_rate · bag_size⌉`.
    pub fn witnesses(&self) -> usize {
        // The small offset keeps 0.3 · 10 = 3.0000000000000004 at 3.
        let w = (self.witness_rate * self.bag_size as f64 - 1e-9).ceil() as usize;
        w.clamp(1, self.bag_size)
    }
}

/// Positive bags first (label `1`), then negative bags (label `0`); negatives
/// are drawn around the origin, positives around `separation · e₁`.
pub fn gen_mil(spec: &MilSyntheticSpec) -> Result<LabeledData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = (spec.n_pos_bags + spec.n_neg_bags) * spec.bag_size;
    let mut x = DMatrix::zeros(n, spec.dim);
    let mut truth = Vec::with_capacity(n);
    let mut bags = Vec::new();
    let w = spec.witnesses();
    let mut i = 0;
    for b in 0..spec.n_pos_bags + spec.n_neg_bags {
        let positive = b < spec.n_pos_bags;
        let start = i;
        for k in 0..spec.bag_size {
            let label = usize::from(positive && k < w);
            for j in 0..spec.dim {
                x[(i, j)] = spec.sigma * normal(&mut rng);
            }
            if label == 1 {
                x[(i, 0)] += spec.separation * spec.sigma;
            }
            truth.push(label);
            i += 1;
        }
        bags.push(Bag {
            id: if positive { format!("pos{b}") } else { format!("neg{}", b - spec.n_pos_bags) },
            label: usize::from(positive),
            members: (start..i).collect(),
        });
    }
    let dataset = WeakDataset::new(Features::Dense(x), bags, LabelSpace::mil(), spec.weights)?;
    Ok(LabeledData { dataset, truth })
}

/// Semi-supervised split of labeled data: `labeled` instances keep their
/// class (at least one per class when `labeled ≥ P`), the rest form the
/// unlabeled bag. Returns the dataset and the indices of labeled instances.
pub fn make_ssl(data: &LabeledData, labeled: usize, seed: u64) -> Result<(LabeledData, Vec<usize>)> {
    let ds = &data.dataset;
    let p = ds.latent_count();
    let n = ds.len();
    if labeled == 0 || labeled >= n {
        return Err(HarnessError::Spec(format!("need 0 < labeled < {n}, got {labeled}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut chosen = Vec::with_capacity(labeled);
    if labeled >= p {
        for c in 0..p {
            if let Some(&i) = order.iter().find(|&&i| data.truth[i] == c) {
                chosen.push(i);
            }
        }
    }
    for &i in &order {
        if chosen.len() >= labeled {
            break;
        }
        if !chosen.contains(&i) {
            chosen.push(i);
        }
    }
    chosen.sort_unstable();
    let ssl = ssl_from_indices(data, &chosen)?;
    Ok((ssl, chosen))
}

/// Semi-supervised dataset in which exactly the instances `labeled` keep
/// their class. Instance order is unchanged.
pub fn ssl_from_indices(data: &LabeledData, labeled: &[usize]) -> Result<LabeledData> {
    let ds = &data.dataset;
    let p = ds.latent_count();
    let n = ds.len();
    let x = ds
        .dense_features()
        .ok_or_else(|| HarnessError::Spec("semi-supervised splits need explicit features".into()))?
        .clone();
    let mut is_labeled = vec![false; n];
    for &i in labeled {
        *is_labeled.get_mut(i).ok_or_else(|| HarnessError::Spec(format!("instance {i} out of range")))? = true;
    }
    let mut bags = Vec::new();
    for c in 0..p {
        let members: Vec<usize> = (0..n).filter(|&i| is_labeled[i] && data.truth[i] == c).collect();
        if !members.is_empty() {
            bags.push(Bag { id: format!("class{c}"), label: c, members });
        }
    }
    let unlabeled: Vec<usize> = (0..n).filter(|&i| !is_labeled[i]).collect();
    if !unlabeled.is_empty() {
        bags.push(Bag { id: "unlabeled".into(), label: p, members: unlabeled });
    }
    let dataset = WeakDataset::new(Features::Dense(x), bags, LabelSpace::ssl(p)?, WeightMode::Uniform)?;
    Ok(LabeledData { dataset, truth: data.truth.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cluster_sizes_and_determinism() {
        let spec = SyntheticSpec { n_points: 300, n_clusters: 3, seed: 5, ..SyntheticSpec::default() };
        let a = gen_clusters(&spec).unwrap();
        let b = gen_clusters(&spec).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.truth, b.truth);
        for c in 0..3 {
            assert_eq!(a.truth.iter().filter(|&&t| t == c).count(), 100);
        }
        assert_eq!(a.dataset.bags.len(), 1);
        let noisy = gen_clusters(&SyntheticSpec { noise_dims: 10, ..spec }).unwrap();
        assert_eq!(noisy.dataset.dense_features().unwrap().ncols(), 12);
    }

    #[test]
    fn polygon_spacing() {
        for k in 2..7 {
            for pts in [polygon(k, 4.0), off_center_polygon(k, 4.0)] {
                for c in 0..k {
                    let (a, b) = (pts[c], pts[(c + 1) % k]);
                    let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
                    assert!((d - 4.0).abs() < 1e-12);
                }
            }
        }
        let off = off_center_polygon(3, 4.0);
        // The first two centers share a ray from the origin.
        assert!(off[0][1] == 0.0 && off[1][1].abs() < 1e-12 && off[0][0] > 0.0 && off[1][0] > off[0][0]);
    }

    #[test]
    fn mil_witness_counts() {
        let spec = MilSyntheticSpec { witness_rate: 0.3, bag_size: 10, ..MilSyntheticSpec::default() };
        assert_eq!(spec.witnesses(), 3);
        let data = gen_mil(&spec).unwrap();
        for bag in &data.dataset.bags {
            let pos = bag.members.iter().filter(|&&n| data.truth[n] == 1).count();
            assert_eq!(pos, if bag.label == 1 { 3 } else { 0 });
        }
        let full = gen_mil(&MilSyntheticSpec { witness_rate: 1.0, ..MilSyntheticSpec::default() }).unwrap();
        for bag in full.dataset.bags.iter().filter(|b| b.label == 1) {
            assert!(bag.members.iter().all(|&n| full.truth[n] == 1));
        }
    }

    #[test]
    fn ssl_split_has_every_class() {
        let data = gen_clusters(&SyntheticSpec::default()).unwrap();
        let (ssl, chosen) = make_ssl(&data, 6, 1).unwrap();
        assert_eq!(chosen.len(), 6);
        for c in 0..3 {
            assert!(chosen.iter().any(|&i| data.truth[i] == c));
        }
        assert_eq!(ssl.dataset.bags.len(), 4);
    }
}
