//! In-memory datasets, synthetic generators, splitting and label poisoning.
//!
//! File loaders live in the `gradcert` crate; everything here is pure.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// Labelled examples stored row-wise: `inputs` is `[N, n]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
    /// Shape of one example, e.g. `[1, 28, 28]` for images.
    pub input_shape: Vec<usize>,
    pub feature_lower: Vec<f64>,
    pub feature_upper: Vec<f64>,
    pub sensitive_indices: Vec<usize>,
    pub feature_names: Vec<String>,
}

impl Dataset {
    /// Validates shapes, labels and feature bounds; features are named `x{i}`.
    pub fn new(
        name: impl Into<String>,
        inputs: Tensor,
        labels: Vec<usize>,
        classes: usize,
        input_shape: Vec<usize>,
        feature_lower: Vec<f64>,
        feature_upper: Vec<f64>,
    ) -> Result<Self> {
        let n: usize = input_shape.iter().product();
        if inputs.shape().len() != 2 || inputs.cols() != n || inputs.rows() != labels.len() {
            return Err(Error::dim("dataset inputs", inputs.shape(), &[labels.len(), n]));
        }
        if feature_lower.len() != n || feature_upper.len() != n {
            return Err(Error::dim("dataset feature bounds", &[feature_lower.len(), feature_upper.len()], &[n, n]));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= classes) {
            return Err(Error::contract(format!("label {y} of row {i} is not below the class count {classes}")));
        }
        for (r, row) in inputs.data().chunks(n.max(1)).enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if !(v >= feature_lower[j] && v <= feature_upper[j]) {
                    return Err(Error::contract(format!(
                        "row {r} feature {j} = {v} is outside [{}, {}]",
                        feature_lower[j], feature_upper[j]
                    )));
                }
            }
        }
        let feature_names = (0..n).map(|i| format!("x{i}")).collect();
        Ok(Dataset {
            name: name.into(),
            inputs,
            labels,
            classes,
            input_shape,
            feature_lower,
            feature_upper,
            sensitive_indices: Vec::new(),
            feature_names,
        })
    }

    pub fn with_sensitive(mut self, indices: Vec<usize>) -> Result<Self> {
        if let Some(&i) = indices.iter().find(|&&i| i >= self.features()) {
            return Err(Error::contract(format!("sensitive index {i} out of range for {} features", self.features())));
        }
        self.sensitive_indices = indices;
        Ok(self)
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.features() {
            return Err(Error::dim("feature names", &[names.len()], &[self.features()]));
        }
        self.feature_names = names;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> usize {
        self.feature_lower.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.features();
        &self.inputs.data()[i * n..(i + 1) * n]
    }

    /// Example `i` shaped as `input_shape`.
    pub fn example(&self, i: usize) -> Tensor {
        Tensor::new(self.input_shape.clone(), self.row(i).to_vec()).expect("validated shape")
    }

    /// Selected examples as an `[n, batch]` column matrix.
    pub fn columns(&self, indices: &[usize]) -> Tensor {
        let n = self.features();
        let b = indices.len();
        let mut data = vec![0.0; n * b];
        for (j, &i) in indices.iter().enumerate() {
            for (f, &v) in self.row(i).iter().enumerate() {
                data[f * b + j] = v;
            }
        }
        Tensor::matrix(n, b, data)
    }

    pub fn labels_of(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let n = self.features();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Dataset {
            name: self.name.clone(),
            inputs: Tensor::matrix(indices.len(), n, data),
            labels: self.labels_of(indices),
            classes: self.classes,
            input_shape: self.input_shape.clone(),
            feature_lower: self.feature_lower.clone(),
            feature_upper: self.feature_upper.clone(),
            sensitive_indices: self.sensitive_indices.clone(),
            feature_names: self.feature_names.clone(),
        }
    }

    /// First `count` examples (or all).
    pub fn head(&self, count: usize) -> Dataset {
        let idx: Vec<usize> = (0..count.min(self.len())).collect();
        self.subset(&idx)
    }

    /// Seeded shuffle, then the first `fraction` of rows for training.
    pub fn split(&self, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::contract(format!("split fraction must lie in (0, 1), got {fraction}")));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let cut = libm::round(fraction * self.len() as f64) as usize;
        Ok((self.subset(&idx[..cut]), self.subset(&idx[cut..])))
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes];
        for &y in &self.labels {
            c[y] += 1;
        }
        c
    }

    /// Group (0 or 1) of every row under the binary sensitive attribute: a single
    /// 0/1 column, or a two-column one-hot encoding.
    pub fn sensitive_groups(&self) -> Result<Vec<usize>> {
        match self.sensitive_indices.as_slice() {
            [j] => Ok((0..self.len()).map(|r| usize::from(self.row(r)[*j] > 0.5)).collect()),
            [a, b] => Ok((0..self.len()).map(|r| usize::from(self.row(r)[*b] > self.row(r)[*a])).collect()),
            [] => Err(Error::contract("dataset has no sensitive attribute")),
            _ => Err(Error::contract("sensitive attribute must be binary (one column or a two-level one-hot)")),
        }
    }
}

/// Shuffled minibatch index lists covering every example once.
pub fn minibatches<R: Rng + ?Sized>(len: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
}

/// Unscaled half-moon points: outer arc `(cos t, sin t)`, inner arc
/// `(1 - cos t, 0.5 - sin t)`, `t` evenly spaced on `[0, π]`, with Gaussian
/// jitter of the radius about each arc's center.
pub fn half_moons_raw(n: usize, noise: f64, seed: u64) -> Result<(Vec<[f64; 2]>, Vec<usize>)> {
    if n == 0 || n % 2 != 0 {
        return Err(Error::contract(format!("half-moons needs a positive even count, got {n}")));
    }
    if !(noise >= 0.0) {
        return Err(Error::contract(format!("noise must be non-negative, got {noise}")));
    }
    let half = n / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, noise).map_err(|e| Error::contract(format!("{e}")))?;
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for class in 0..2 {
        for i in 0..half {
            let t = if half == 1 { 0.0 } else { core::f64::consts::PI * i as f64 / (half - 1) as f64 };
            let r = 1.0 + if noise > 0.0 { jitter.sample(&mut rng) } else { 0.0 };
            let (c, s) = (libm::cos(t), libm::sin(t));
            points.push(if class == 0 { [r * c, r * s] } else { [1.0 - r * c, 0.5 - r * s] });
            labels.push(class);
        }
    }
    Ok((points, labels))
}

/// Half-moons min-max scaled to `[0, 1]^2`.
pub fn half_moons(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    let (points, labels) = half_moons_raw(n, noise, seed)?;
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in &points {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let data = points
        .iter()
        .flat_map(|p| (0..2).map(move |k| if hi[k] > lo[k] { ((p[k] - lo[k]) / (hi[k] - lo[k])).clamp(0.0, 1.0) } else { 0.0 }))
        .collect();
    Dataset::new("half-moons", Tensor::matrix(n, 2, data), labels, 2, vec![2], vec![0.0; 2], vec![1.0; 2])
}

/// Seven-segment layout: top, upper-right, lower-right, bottom, lower-left,
/// upper-left, middle.
const SEGMENTS: [[u8; 7]; 10] = [
    [1, 1, 1, 1, 1, 1, 0],
    [0, 1, 1, 0, 0, 0, 0],
    [1, 1, 0, 1, 1, 0, 1],
    [1, 1, 1, 1, 0, 0, 1],
    [0, 1, 1, 0, 0, 1, 1],
    [1, 0, 1, 1, 0, 1, 1],
    [1, 0, 1, 1, 1, 1, 1],
    [1, 1, 1, 0, 0, 0, 0],
    [1, 1, 1, 1, 1, 1, 1],
    [1, 1, 1, 1, 0, 1, 1],
];

fn segment_endpoints(k: usize) -> ([f64; 2], [f64; 2]) {
    // unit glyph: x in [-0.5, 0.5], y in [-1, 1] (y down)
    let (l, r, t, m, b) = (-0.5, 0.5, -1.0, 0.0, 1.0);
    match k {
        0 => ([l, t], [r, t]),
        1 => ([r, t], [r, m]),
        2 => ([r, m], [r, b]),
        3 => ([l, b], [r, b]),
        4 => ([l, m], [l, b]),
        5 => ([l, t], [l, m]),
        _ => ([l, m], [r, m]),
    }
}

fn distance_to_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0) };
    let (ex, ey) = (p[0] - a[0] - t * dx, p[1] - a[1] - t * dy);
    math::sqrt(ex * ex + ey * ey)
}

/// Renders one 28x28 stroke digit with random placement, size, slant and
/// stroke width, plus faint pixel noise. Pixels lie in `[0, 1]`.
pub fn render_digit<R: Rng + ?Sized>(digit: usize, rng: &mut R) -> Vec<f64> {
    let size = 28usize;
    let height = rng.random_range(7.0..9.5); // half-height in pixels
    let width = height * rng.random_range(0.9..1.3);
    let slant = rng.random_range(-0.25..0.25);
    let cx = 13.5 + rng.random_range(-2.0..2.0);
    let cy = 13.5 + rng.random_range(-1.5..1.5);
    let thickness = rng.random_range(0.9..1.8);
    let noise = Normal::new(0.0, 0.03).expect("valid");
    let active: Vec<([f64; 2], [f64; 2])> = (0..7)
        .filter(|&k| SEGMENTS[digit % 10][k] == 1)
        .map(|k| {
            let (a, b) = segment_endpoints(k);
            let jitter = |rng: &mut R| rng.random_range(-0.06..0.06);
            let map = |p: [f64; 2], rng: &mut R| {
                let y = p[1] + jitter(rng);
                let x = p[0] + jitter(rng) - slant * y;
                [cx + x * width, cy + y * height]
            };
            (map(a, rng), map(b, rng))
        })
        .collect();
    let mut img = vec![0.0; size * size];
    for r in 0..size {
        for c in 0..size {
            let p = [c as f64, r as f64];
            let d = active.iter().map(|&(a, b)| distance_to_segment(p, a, b)).fold(f64::INFINITY, f64::min);
            let ink = (1.0 - (d - thickness).max(0.0)).max(0.0);
            let v = if ink > 0.0 { ink + noise.sample(rng) } else { 0.0 };
            img[r * size + c] = v.clamp(0.0, 1.0);
        }
    }
    img
}

/// Balanced synthetic digit images shaped `[1, 28, 28]`, labels `0..10` cycling.
pub fn synthetic_digits(count: usize, seed: u64) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::contract("synthetic digit count must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(count * 784);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let y = i % 10;
        data.extend(render_digit(y, &mut rng));
        labels.push(y);
    }
    Dataset::new("synthetic-digits", Tensor::matrix(count, 784, data), labels, 10, vec![1, 28, 28], vec![0.0; 784], vec![1.0; 784])
}

/// Relabels a random fraction `p` of the majority sensitive group positive (1)
/// and the same fraction of the minority group negative (0). The majority is
/// the more frequent group; ties go to group 0.
pub fn label_poison(ds: &Dataset, p: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::contract(format!("poisoning fraction must lie in [0, 1], got {p}")));
    }
    if ds.classes < 2 {
        return Err(Error::contract("label poisoning needs at least two classes"));
    }
    let groups = ds.sensitive_groups()?;
    let members = |g: usize| -> Vec<usize> { (0..ds.len()).filter(|&r| groups[r] == g).collect() };
    let (g0, g1) = (members(0), members(1));
    let (mut majority, mut minority) = if g1.len() > g0.len() { (g1, g0) } else { (g0, g1) };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = ds.clone();
    majority.shuffle(&mut rng);
    minority.shuffle(&mut rng);
    let take = |len: usize| libm::floor(p * len as f64) as usize;
    for &r in &majority[..take(majority.len())] {
        out.labels[r] = 1;
    }
    for &r in &minority[..take(minority.len())] {
        out.labels[r] = 0;
    }
    out.name = format!("{}-poisoned-{p}", ds.name);
    Ok(out)
}

/// Synthetic tabular data with a binary sensitive feature that is correlated
/// with, but not needed for, the label.
pub fn synthetic_tabular(count: usize, features: usize, seed: u64) -> Result<Dataset> {
    if features < 3 || count == 0 {
        return Err(Error::contract("synthetic tabular data needs at least 3 features and one row"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (0..features - 1).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut data = Vec::with_capacity(count * features);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let group = usize::from(rng.random::<f64>() < 0.35);
        let x: Vec<f64> = (0..features - 1).map(|_| rng.random::<f64>()).collect();
        let score: f64 = x.iter().zip(&weights).map(|(a, w)| (a - 0.5) * w).sum();
        labels.push(usize::from(score + 0.1 * (rng.random::<f64>() - 0.5) > 0.0));
        data.push(group as f64);
        data.extend(x);
    }
    let names = core::iter::once("group".to_string()).chain((1..features).map(|i| format!("f{i}"))).collect();
    Dataset::new("synthetic-tabular", Tensor::matrix(count, features, data), labels, 2, vec![features], vec![0.0; features], vec![1.0; features])?
        .with_sensitive(vec![0])?
        .with_feature_names(names)
}
