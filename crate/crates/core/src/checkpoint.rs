//! Versioned JSON model container.
//!
//! ```text
//! { "format": "snn-decoder-checkpoint", "version": 1, "kind": "snn" | "kf", ... }
//! ```
//!
//! Matrices are stored as `{rows, cols, data}` with `data` row-major. Floats
//! are written in shortest round-trip form, so save then load is lossless.

use std::path::Path;

use nalgebra::{DMatrix, Matrix3};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::data::Standardizer;
use crate::error::{Error, Result};
use crate::kf::KfModel;
use crate::network::{Layer, NetworkParams, NetworkSpec, ThresholdNorm};

pub const CHECKPOINT_FORMAT: &str = "snn-decoder-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixRecord<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Copy> MatrixRecord<T> {
    fn check(&self, context: &str) -> Result<()> {
        if self.rows * self.cols != self.data.len() {
            return Err(Error::Config(format!(
                "{context}: declared {}x{} but holds {} values",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(())
    }
}

impl MatrixRecord<f32> {
    fn from_array(a: &Array2<f32>) -> Self {
        Self {
            rows: a.nrows(),
            cols: a.ncols(),
            data: a.iter().copied().collect(),
        }
    }

    fn to_array(&self, context: &str) -> Result<Array2<f32>> {
        self.check(context)?;
        Ok(Array2::from_shape_vec((self.rows, self.cols), self.data.clone()).expect("checked"))
    }
}

impl MatrixRecord<f64> {
    fn from_dmatrix(m: &DMatrix<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().as_slice().to_vec(),
        }
    }

    fn to_dmatrix(&self, context: &str) -> Result<DMatrix<f64>> {
        self.check(context)?;
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormRecord {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub eps: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub weight: MatrixRecord<f32>,
    pub tau: Vec<f32>,
    pub norm: Option<NormRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnnRecord {
    pub spec: NetworkSpec,
    pub layers: Vec<LayerRecord>,
    pub standardizer: Standardizer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KfRecord {
    pub a: MatrixRecord<f64>,
    pub w: MatrixRecord<f64>,
    pub c: MatrixRecord<f64>,
    pub q: MatrixRecord<f64>,
    pub regularizer: f64,
    pub standardizer: Standardizer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Body {
    Snn(SnnRecord),
    Kf(KfRecord),
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    format: String,
    version: u32,
    #[serde(flatten)]
    body: Body,
}

/// A loaded model of either kind.
#[derive(Clone, Debug, PartialEq)]
pub enum Checkpoint {
    Snn {
        spec: NetworkSpec,
        params: NetworkParams<f32>,
        standardizer: Standardizer,
    },
    Kf {
        model: KfModel,
        standardizer: Standardizer,
    },
}

fn snn_record(spec: &NetworkSpec, params: &NetworkParams<f32>, standardizer: &Standardizer) -> SnnRecord {
    SnnRecord {
        spec: spec.clone(),
        layers: params
            .layers
            .iter()
            .map(|l| LayerRecord {
                weight: MatrixRecord::from_array(&l.weight),
                tau: l.tau.to_vec(),
                norm: l.norm.as_ref().map(|n| NormRecord {
                    gamma: n.gamma.to_vec(),
                    beta: n.beta.to_vec(),
                    running_mean: n.running_mean.to_vec(),
                    running_var: n.running_var.to_vec(),
                    eps: n.eps,
                }),
            })
            .collect(),
        standardizer: standardizer.clone(),
    }
}

fn snn_from_record(r: SnnRecord) -> Result<Checkpoint> {
    let layers = r
        .layers
        .iter()
        .enumerate()
        .map(|(l, rec)| {
            Ok(Layer {
                weight: rec.weight.to_array(&format!("layer {l} weight"))?,
                tau: Array1::from(rec.tau.clone()),
                norm: rec.norm.as_ref().map(|n| ThresholdNorm {
                    gamma: Array1::from(n.gamma.clone()),
                    beta: Array1::from(n.beta.clone()),
                    running_mean: Array1::from(n.running_mean.clone()),
                    running_var: Array1::from(n.running_var.clone()),
                    eps: n.eps,
                }),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let params = NetworkParams { layers };
    params.check(&r.spec)?;
    r.standardizer.check(r.spec.input_width(), r.spec.output_width())?;
    Ok(Checkpoint::Snn {
        spec: r.spec,
        params,
        standardizer: r.standardizer,
    })
}

fn kf_record(model: &KfModel, standardizer: &Standardizer) -> KfRecord {
    let m3 = |m: &Matrix3<f64>| MatrixRecord::from_dmatrix(&DMatrix::from_column_slice(3, 3, m.as_slice()));
    KfRecord {
        a: m3(&model.a),
        w: m3(&model.w),
        c: MatrixRecord::from_dmatrix(&model.c),
        q: MatrixRecord::from_dmatrix(&model.q),
        regularizer: model.regularizer,
        standardizer: standardizer.clone(),
    }
}

fn kf_from_record(r: KfRecord) -> Result<Checkpoint> {
    let m3 = |rec: &MatrixRecord<f64>, name: &str| -> Result<Matrix3<f64>> {
        if (rec.rows, rec.cols) != (3, 3) {
            return Err(Error::Config(format!("{name} must be 3x3")));
        }
        let d = rec.to_dmatrix(name)?;
        Ok(Matrix3::from_fn(|i, j| d[(i, j)]))
    };
    let model = KfModel {
        a: m3(&r.a, "A")?,
        w: m3(&r.w, "W")?,
        c: r.c.to_dmatrix("C")?,
        q: r.q.to_dmatrix("Q")?,
        regularizer: r.regularizer,
    };
    model.check()?;
    r.standardizer.check(model.channels(), 2)?;
    Ok(Checkpoint::Kf {
        model,
        standardizer: r.standardizer,
    })
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let body = match self {
            Checkpoint::Snn {
                spec,
                params,
                standardizer,
            } => Body::Snn(snn_record(spec, params, standardizer)),
            Checkpoint::Kf { model, standardizer } => Body::Kf(kf_record(model, standardizer)),
        };
        let env = Envelope {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            body,
        };
        serde_json::to_string(&env).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let env: Envelope = serde_json::from_str(text).map_err(|e| Error::Config(format!("checkpoint: {e}")))?;
        if env.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!("not a checkpoint (format {:?})", env.format)));
        }
        if env.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!("unsupported checkpoint version {}", env.version)));
        }
        match env.body {
            Body::Snn(r) => snn_from_record(r),
            Body::Kf(r) => kf_from_record(r),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(message) => Error::Format {
                path: path.into(),
                message,
            },
            other => other,
        })
    }

    pub fn standardizer(&self) -> &Standardizer {
        match self {
            Checkpoint::Snn { standardizer, .. } | Checkpoint::Kf { standardizer, .. } => standardizer,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kf::kf_fit;
    use crate::network::TauInit;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn standardizer(c: usize, o: usize) -> Standardizer {
        Standardizer {
            feature_mean: (0..c).map(|i| i as f64 * 0.1).collect(),
            feature_std: vec![1.5; c],
            velocity_mean: vec![0.25; o],
            velocity_std: vec![2.0 / 3.0; o],
            degenerate_features: vec![],
            degenerate_velocities: vec![],
        }
    }

    fn snn(seed: u64) -> Checkpoint {
        let spec = NetworkSpec::with_widths(&[5, 7, 6, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = NetworkParams::<f32>::init(&spec, TauInit::Uniform, &mut rng).unwrap();
        for l in &mut params.layers {
            let n = l.norm.as_mut().unwrap();
            n.running_mean.mapv_inplace(|_| rng.random_range(-3.0..3.0));
            n.running_var.mapv_inplace(|_| rng.random_range(0.0..3.0));
            n.gamma.mapv_inplace(|_| rng.random_range(-1e-20..1e20));
        }
        Checkpoint::Snn {
            spec,
            params,
            standardizer: standardizer(5, 2),
        }
    }

    #[test]
    fn snn_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let c = snn(3);
        c.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), c);
    }

    #[test]
    fn kf_round_trip_is_lossless() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = Array2::from_shape_simple_fn((40, 4), || rng.random_range(-1.0..1.0f32));
        let v = Array2::from_shape_simple_fn((40, 2), || rng.random_range(-1.0..1.0f32));
        let c = Checkpoint::Kf {
            model: kf_fit(f.view(), v.view()).unwrap(),
            standardizer: standardizer(4, 2),
        };
        assert_eq!(Checkpoint::from_json(&c.to_json()).unwrap(), c);
        assert!(c.to_json().contains("\"kind\":\"kf\""));
    }

    #[test]
    fn rejects_foreign_and_inconsistent_files() {
        assert!(Checkpoint::from_json("{\"format\":\"other\",\"version\":1,\"kind\":\"kf\"}").is_err());
        let text = snn(1).to_json().replace("\"version\":1", "\"version\":99");
        assert!(Checkpoint::from_json(&text).is_err());
        let text = snn(1).to_json().replacen("\"rows\":5", "\"rows\":4", 1);
        assert!(Checkpoint::from_json(&text).is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_weights_round_trip(seed in 0u64..1000, bits in proptest::collection::vec(any::<u32>(), 35)) {
            let mut c = snn(seed);
            if let Checkpoint::Snn { params, .. } = &mut c {
                for (w, b) in params.layers[0].weight.iter_mut().zip(&bits) {
                    let x = f32::from_bits(*b);
                    *w = if x.is_finite() { x } else { 0.5 };
                }
            }
            prop_assert_eq!(Checkpoint::from_json(&c.to_json()).unwrap(), c);
        }
    }
}
