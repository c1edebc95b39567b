use std::io::{Read, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::GameError;
use crate::autodiff::Tensor;
use crate::rng::{self, Stream};
use crate::Scalar;

/// Labelled samples from a Gaussian mixture, one mixture component per class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset<T> {
    /// `[n, d]`
    pub samples: Tensor<T>,
    pub labels: Vec<usize>,
    pub class_count: usize,
    /// `[C, d]`
    pub mode_centers: Tensor<T>,
    pub mode_std: T,
}

/// `C` modes on a circle of `radius` in 2-D, `n` samples stratified by class
/// (the first `n mod C` classes get one extra sample).
pub fn sample_gaussian_mixture<T: Scalar>(
    modes: usize,
    radius: f64,
    std: f64,
    n: usize,
    seed: u64,
) -> Result<LabeledDataset<T>, GameError> {
    if modes < 2 || n < modes || std.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(GameError::Invalid(format!(
            "mixture needs C >= 2, n >= C, std > 0 (got C={modes}, n={n}, std={std})"
        )));
    }
    let centers: Vec<f64> = (0..modes)
        .flat_map(|k| {
            let angle = 2.0 * std::f64::consts::PI * k as f64 / modes as f64;
            [radius * angle.cos(), radius * angle.sin()]
        })
        .collect();
    let mut rng = rng::stream(seed, Stream::Dataset);
    let mut samples = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    for k in 0..modes {
        let count = n / modes + usize::from(k < n % modes);
        for _ in 0..count {
            let z = rng::standard_normal::<f64>(&mut rng, 2);
            samples.push(T::lit(centers[2 * k] + std * z[0]));
            samples.push(T::lit(centers[2 * k + 1] + std * z[1]));
            labels.push(k);
        }
    }
    Ok(LabeledDataset {
        samples: Tensor::new(vec![n, 2], samples)?,
        labels,
        class_count: modes,
        mode_centers: Tensor::from_f64(vec![modes, 2], &centers)?,
        mode_std: T::lit(std),
    })
}

impl<T: Scalar> LabeledDataset<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn row(&self, i: usize) -> &[T] {
        let d = self.dim();
        &self.samples.data()[i * d..(i + 1) * d]
    }

    /// Largest absolute coordinate of any mode center.
    pub fn data_scale(&self) -> T {
        self.mode_centers.max_abs()
    }

    /// Uniform draw with replacement.
    pub fn sample_batch(&self, rng: &mut ChaCha8Rng, batch: usize) -> (Tensor<T>, Vec<usize>) {
        let d = self.dim();
        let mut data = Vec::with_capacity(batch * d);
        let mut labels = Vec::with_capacity(batch);
        for _ in 0..batch {
            let i = rng.random_range(0..self.len());
            data.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        (Tensor::new(vec![batch, d], data).expect("batch layout"), labels)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Writes `x0..x{d-1},label` rows with a header.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), GameError> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..self.dim()).map(|j| format!("x{j}")).collect();
        header.push("label".into());
        wr.write_record(&header).map_err(|e| GameError::Csv(e.to_string()))?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| format!("{v}")).collect();
            rec.push(self.labels[i].to_string());
            wr.write_record(&rec).map_err(|e| GameError::Csv(e.to_string()))?;
        }
        wr.flush().map_err(|e| GameError::Csv(e.to_string()))
    }

    /// Reads the format written by [`LabeledDataset::write_csv`]. Mode centers and
    /// spread are re-estimated as per-class means and the pooled per-coordinate std.
    pub fn read_csv<R: Read>(r: R) -> Result<Self, GameError> {
        let (rows, labels, d) = read_rows(r)?;
        let labels = labels.ok_or_else(|| GameError::Csv("dataset csv needs a label column".into()))?;
        let n = labels.len();
        if n == 0 {
            return Err(GameError::Csv("dataset csv has no rows".into()));
        }
        let class_count = labels.iter().max().unwrap() + 1;
        let mut sums = vec![0.0; class_count * d];
        let mut counts = vec![0usize; class_count];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for j in 0..d {
                sums[l * d + j] += rows[i * d + j];
            }
        }
        let centers: Vec<f64> =
            sums.iter().enumerate().map(|(i, s)| s / counts[i / d].max(1) as f64).collect();
        let ss: f64 = labels
            .iter()
            .enumerate()
            .flat_map(|(i, &l)| (0..d).map(move |j| (i, l, j)))
            .map(|(i, l, j)| (rows[i * d + j] - centers[l * d + j]).powi(2))
            .sum();
        let dof = (n * d).saturating_sub(class_count * d).max(1);
        Ok(Self {
            samples: Tensor::from_f64(vec![n, d], &rows)?,
            labels,
            class_count,
            mode_centers: Tensor::from_f64(vec![class_count, d], &centers)?,
            mode_std: T::lit((ss / dof as f64).sqrt()),
        })
    }
}

/// Parses `x0..x{d-1}[,label]` CSV into a flat row-major buffer.
pub(crate) fn read_rows<R: Read>(r: R) -> Result<(Vec<f64>, Option<Vec<usize>>, usize), GameError> {
    let mut rd = csv::Reader::from_reader(r);
    let headers = rd.headers().map_err(|e| GameError::Csv(e.to_string()))?.clone();
    let has_label = headers.iter().next_back() == Some("label");
    let d = headers.len() - usize::from(has_label);
    for (j, h) in headers.iter().take(d).enumerate() {
        if h != format!("x{j}") {
            return Err(GameError::Csv(format!("unexpected column {h:?}, expected x{j}")));
        }
    }
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| GameError::Csv(e.to_string()))?;
        for j in 0..d {
            let v: f64 = rec[j]
                .trim()
                .parse()
                .map_err(|e| GameError::Csv(format!("row {}: column x{j}: {e}", line + 2)))?;
            rows.push(v);
        }
        if has_label {
            labels.push(
                rec[d].trim().parse().map_err(|e| GameError::Csv(format!("row {}: label: {e}", line + 2)))?,
            );
        }
    }
    Ok((rows, has_label.then_some(labels), d))
}
