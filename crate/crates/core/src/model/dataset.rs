use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

/// An immutable table of observations, optionally paired with a label column.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: Vec<f64>,
    n_obs: usize,
    obs_dim: usize,
    labels: Option<Vec<f64>>,
    /// Row positions in the dataset this one was cut from.
    origin: Vec<usize>,
    /// Subset id assigned by [`partition`]; `None` for a full dataset.
    shard: Option<usize>,
}

impl Dataset {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::build(rows, None)
    }

    pub fn with_labels(rows: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self> {
        if labels.len() != rows.len() {
            return Err(Error::input(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        Self::build(rows, Some(labels))
    }

    /// One-dimensional observations.
    pub fn scalar(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|v| vec![*v]).collect())
    }

    fn build(rows: Vec<Vec<f64>>, labels: Option<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::input("dataset must contain at least one observation"));
        }
        let obs_dim = rows[0].len();
        let mut values = Vec::with_capacity(rows.len() * obs_dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != obs_dim {
                return Err(Error::input(format!(
                    "row {i} has {} columns, expected {obs_dim}",
                    r.len()
                )));
            }
            if !r.iter().all(|v| v.is_finite()) {
                return Err(Error::input(format!("row {i} contains a non-finite value")));
            }
            values.extend_from_slice(r);
        }
        if let Some(l) = &labels {
            if !l.iter().all(|v| v.is_finite()) {
                return Err(Error::input("labels contain a non-finite value"));
            }
        }
        let n_obs = rows.len();
        Ok(Dataset {
            values,
            n_obs,
            obs_dim,
            labels,
            origin: (0..n_obs).collect(),
            shard: None,
        })
    }

    /// Reads a CSV file with a header row. A column whose header matches
    /// `label_column` becomes the label vector; every other column is a feature.
    pub fn from_csv(path: impl AsRef<Path>, label_column: Option<&str>) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        let label_idx = match label_column {
            Some(name) => Some(
                headers
                    .iter()
                    .position(|h| h.trim() == name)
                    .ok_or_else(|| Error::input(format!("no column named {name:?}")))?,
            ),
            None => None,
        };
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            let mut row = Vec::with_capacity(record.len());
            for (j, field) in record.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::input(format!("line {}: cannot parse {field:?}", line + 2))
                })?;
                if Some(j) == label_idx {
                    labels.push(v);
                } else {
                    row.push(v);
                }
            }
            rows.push(row);
        }
        if label_idx.is_some() {
            Self::with_labels(rows, labels)
        } else {
            Self::new(rows)
        }
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.obs_dim..(i + 1) * self.obs_dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.obs_dim)
    }

    pub fn labels(&self) -> Option<&[f64]> {
        self.labels.as_deref()
    }

    pub fn label(&self, i: usize) -> Option<f64> {
        self.labels.as_ref().map(|l| l[i])
    }

    pub fn origin(&self) -> &[usize] {
        &self.origin
    }

    pub fn shard(&self) -> Option<usize> {
        self.shard
    }

    /// A new dataset holding the given rows, in order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::input("selection is empty"));
        }
        let mut values = Vec::with_capacity(indices.len() * self.obs_dim);
        let mut origin = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.n_obs {
                return Err(Error::input(format!("row index {i} out of range")));
            }
            values.extend_from_slice(self.row(i));
            origin.push(self.origin[i]);
        }
        Ok(Dataset {
            values,
            n_obs: indices.len(),
            obs_dim: self.obs_dim,
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            origin,
            shard: self.shard,
        })
    }

    /// Per-column means of the feature rows.
    pub fn column_means(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.obs_dim];
        for r in self.rows() {
            for (a, b) in m.iter_mut().zip(r) {
                *a += b;
            }
        }
        m.iter_mut().for_each(|v| *v /= self.n_obs as f64);
        m
    }
}

/// Randomly splits `data` into `k` disjoint shards of equal size.
///
/// `k` must divide the number of observations; ragged shards are rejected.
pub fn partition(data: &Dataset, k: usize, seed: u64) -> Result<Vec<Dataset>> {
    let n = data.n_obs();
    if k == 0 || n % k != 0 {
        return Err(Error::input(format!(
            "shard count {k} does not divide {n} observations"
        )));
    }
    let m = n / k;
    let mut order: Vec<usize> = (0..n).collect();
    if k > 1 {
        order.shuffle(&mut rng::seeded(seed));
    }
    order
        .chunks_exact(m)
        .enumerate()
        .map(|(j, idx)| {
            let mut shard = data.select(idx)?;
            shard.shard = Some(j);
            Ok(shard)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(n: usize) -> Dataset {
        Dataset::new((0..n).map(|i| vec![i as f64, (i * i) as f64]).collect()).unwrap()
    }

    #[test]
    fn rejects_ragged_and_nonfinite_rows() {
        assert!(Dataset::new(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(Dataset::new(vec![vec![f64::NAN]]).is_err());
        assert!(Dataset::new(vec![]).is_err());
    }

    #[test]
    fn partition_is_exhaustive_and_disjoint() {
        let d = ds(4);
        let parts = partition(&d, 2, 7).unwrap();
        assert_eq!(parts.len(), 2);
        let mut seen: Vec<usize> = parts.iter().flat_map(|p| p.origin().to_vec()).collect();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3]);
        assert!(parts.iter().all(|p| p.n_obs() == 2));
        assert_eq!(parts[1].shard(), Some(1));
    }

    #[test]
    fn single_shard_is_identity() {
        let d = ds(5);
        let parts = partition(&d, 1, 3).unwrap();
        assert_eq!(parts[0].rows().collect::<Vec<_>>(), d.rows().collect::<Vec<_>>());
    }

    #[test]
    fn partition_requires_divisibility() {
        assert!(matches!(partition(&ds(5), 2, 0), Err(Error::Input(_))));
        assert!(partition(&ds(5), 0, 0).is_err());
    }

    #[test]
    fn partition_determinism_over_seeds() {
        let d = ds(20);
        let a = partition(&d, 4, 11).unwrap();
        let b = partition(&d, 4, 11).unwrap();
        assert_eq!(a, b);
        let base = partition(&d, 4, 0).unwrap();
        let differing = (1..=100u64)
            .filter(|s| partition(&d, 4, *s).unwrap() != base)
            .count();
        assert!(differing >= 99, "only {differing} of 100 seeds differed");
    }

    #[test]
    fn csv_reader_splits_label_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "x1,y,x2\n1.0,0,2.0\n3.0,1,4.0\n").unwrap();
        let d = Dataset::from_csv(&p, Some("y")).unwrap();
        assert_eq!(d.obs_dim(), 2);
        assert_eq!(d.row(1), &[3.0, 4.0]);
        assert_eq!(d.labels().unwrap(), &[0.0, 1.0]);
        let plain = Dataset::from_csv(&p, None).unwrap();
        assert_eq!(plain.obs_dim(), 3);
        assert!(Dataset::from_csv(&p, Some("label")).is_err());
    }
}
