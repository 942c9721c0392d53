//! Frame-level datasets: file formats, chronological splits, standardization
//! and a synthetic cosine-tuning generator.

mod io;
mod standardize;
mod synth;

pub use io::{load_frames, save_frames, FileFormat, BINARY_MAGIC, BINARY_VERSION};
pub use standardize::Standardizer;
pub use synth::{synth_generate, SynthConfig};

use ndarray::{s, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One time frame of neural features and finger velocities.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    pub features: Vec<f32>,
    pub velocities: Vec<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Synthetic,
    External,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub frame_ms: f32,
    pub channel_count: usize,
    pub output_count: usize,
    pub sample_count: usize,
    pub provenance: Provenance,
}

/// A chronological frame sequence stored as two row-aligned matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `frames x channels`
    pub features: Array2<f32>,
    /// `frames x outputs`
    pub velocities: Array2<f32>,
    pub frame_ms: f32,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(features: Array2<f32>, velocities: Array2<f32>, frame_ms: f32, provenance: Provenance) -> Result<Self> {
        if features.nrows() != velocities.nrows() {
            return Err(Error::shape("dataset rows", features.nrows(), velocities.nrows()));
        }
        if !(frame_ms > 0.0 && frame_ms.is_finite()) {
            return Err(Error::Config(format!(
                "frame duration must be positive, got {frame_ms}"
            )));
        }
        if let Some(i) = features
            .rows()
            .into_iter()
            .zip(velocities.rows())
            .position(|(f, v)| !all_finite(f) || !all_finite(v))
        {
            return Err(Error::NonFinite {
                context: format!("dataset frame {i}"),
            });
        }
        Ok(Self {
            features,
            velocities,
            frame_ms,
            provenance,
        })
    }

    pub fn from_records(records: &[FrameRecord], frame_ms: f32, provenance: Provenance) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| Error::InsufficientData("no frames".into()))?;
        let (c, o) = (first.features.len(), first.velocities.len());
        let mut features = Array2::zeros((records.len(), c));
        let mut velocities = Array2::zeros((records.len(), o));
        for (i, r) in records.iter().enumerate() {
            if r.features.len() != c || r.velocities.len() != o {
                return Err(Error::shape(
                    "frame record width",
                    format!("{c}+{o}"),
                    format!("{}+{}", r.features.len(), r.velocities.len()),
                ));
            }
            features.row_mut(i).assign(&ArrayView1::from(&r.features));
            velocities.row_mut(i).assign(&ArrayView1::from(&r.velocities));
        }
        Self::new(features, velocities, frame_ms, provenance)
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel_count(&self) -> usize {
        self.features.ncols()
    }

    pub fn output_count(&self) -> usize {
        self.velocities.ncols()
    }

    pub fn record(&self, i: usize) -> FrameRecord {
        FrameRecord {
            features: self.features.row(i).to_vec(),
            velocities: self.velocities.row(i).to_vec(),
        }
    }

    pub fn records(&self) -> impl Iterator<Item = FrameRecord> + '_ {
        (0..self.len()).map(|i| self.record(i))
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            frame_ms: self.frame_ms,
            channel_count: self.channel_count(),
            output_count: self.output_count(),
            sample_count: self.len(),
            provenance: self.provenance,
        }
    }

    /// Frames `start..end` as a new dataset.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            features: self.features.slice(s![start..end, ..]).to_owned(),
            velocities: self.velocities.slice(s![start..end, ..]).to_owned(),
            frame_ms: self.frame_ms,
            provenance: self.provenance,
        }
    }
}

fn all_finite(v: ArrayView1<'_, f32>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Chronological split: the first `floor(ratio * n)` frames train, the rest validate.
pub fn split_train_val(data: &Dataset, ratio: f64) -> Result<(Dataset, Dataset)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    let n = data.len();
    let cut = (ratio * n as f64).floor() as usize;
    if cut == 0 || cut == n {
        return Err(Error::InsufficientData(format!(
            "{n} frames split at {ratio} leaves an empty part"
        )));
    }
    Ok((data.slice(0, cut), data.slice(cut, n)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> Dataset {
        let f = Array2::from_shape_fn((n, 3), |(i, j)| (i * 3 + j) as f32);
        let v = Array2::from_shape_fn((n, 2), |(i, j)| i as f32 - j as f32);
        Dataset::new(f, v, 50.0, Provenance::External).unwrap()
    }

    #[test]
    fn split_sizes() {
        let (a, b) = split_train_val(&ramp(10), 0.8).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        let (a, b) = split_train_val(&ramp(16340), 0.8).unwrap();
        assert_eq!((a.len(), b.len()), (13072, 3268));
    }

    #[test]
    fn split_preserves_order_and_covers_everything() {
        let d = ramp(37);
        let (a, b) = split_train_val(&d, 0.8).unwrap();
        let joined: Vec<FrameRecord> = a.records().chain(b.records()).collect();
        assert_eq!(joined, d.records().collect::<Vec<_>>());
    }

    #[test]
    fn split_rejects_empty_parts() {
        assert!(split_train_val(&ramp(1), 0.8).is_err());
        assert!(split_train_val(&ramp(10), 1.0).is_err());
    }

    #[test]
    fn records_round_trip() {
        let d = ramp(5);
        let recs: Vec<_> = d.records().collect();
        assert_eq!(Dataset::from_records(&recs, 50.0, Provenance::External).unwrap(), d);
    }

    #[test]
    fn non_finite_frames_are_rejected() {
        let mut f = Array2::zeros((3, 2));
        f[[1, 1]] = f32::NAN;
        let err = Dataset::new(f, Array2::zeros((3, 2)), 50.0, Provenance::External).unwrap_err();
        assert!(err.to_string().contains("frame 1"));
    }
}
