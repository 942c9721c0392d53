//! Per-inference operation and memory-access accounting.
//!
//! The first layer multiplies real-valued features by weights (MACs). Every
//! later layer only adds the weight rows selected by incoming spikes, so its
//! cost scales with the spike rate. Each neuron's membrane update costs one
//! more MAC. Normalization is assumed folded into the weights, and resets and
//! threshold comparisons are not counted.

use std::fmt::Write as _;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{reset_state, NetworkParams, NetworkSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostModel {
    /// Additions that count as one MAC-equivalent operation.
    pub adds_per_mac: u64,
    pub mac_loads: u64,
    pub mac_stores: u64,
    pub add_loads: u64,
    pub add_stores: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            adds_per_mac: 3,
            mac_loads: 3,
            mac_stores: 1,
            add_loads: 2,
            add_stores: 1,
        }
    }
}

impl CostModel {
    pub fn mac_mem(&self) -> u64 {
        self.mac_loads + self.mac_stores
    }

    pub fn add_mem(&self) -> u64 {
        self.add_loads + self.add_stores
    }

    fn validate(&self) -> Result<()> {
        if self.adds_per_mac == 0 || self.mac_mem() == 0 || self.add_mem() == 0 {
            return Err(Error::Config("cost model entries must be positive".into()));
        }
        Ok(())
    }
}

/// Cost of a single inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpReport {
    pub mac_count: u64,
    pub add_count: u64,
    /// MACs plus additions converted to MAC equivalents (rounded up).
    pub total_ops: u64,
    pub mem_access_count: u64,
}

impl OpReport {
    pub fn from_counts(mac_count: u64, add_count: u64, cost: &CostModel) -> Self {
        Self {
            mac_count,
            add_count,
            total_ops: mac_count + add_count.div_ceil(cost.adds_per_mac),
            mem_access_count: cost.mac_mem() * mac_count + cost.add_mem() * add_count,
        }
    }
}

/// Cost of one SNN inference given the mean spike rate of every spiking layer.
pub fn snn_cost(spec: &NetworkSpec, spike_rates: &[f64], cost: &CostModel) -> Result<OpReport> {
    spec.validate()?;
    cost.validate()?;
    let hidden = spec.spiking_layer_count();
    if spike_rates.len() != hidden {
        return Err(Error::shape("spike rates", hidden, spike_rates.len()));
    }
    if let Some(r) = spike_rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::Config(format!("spike rate {r} outside [0, 1]")));
    }
    let w = &spec.layer_widths;
    let mac = (w[0] * w[1] + spec.neuron_count()) as u64;
    let adds: f64 = spike_rates
        .iter()
        .enumerate()
        .map(|(l, &r)| r * (w[l + 1] * w[l + 2]) as f64)
        .sum();
    Ok(OpReport::from_counts(mac, adds.round() as u64, cost))
}

/// Multiply-accumulates of a dense network with the given layer widths.
pub fn mlp_mac_count(dims: &[usize]) -> Result<u64> {
    if dims.is_empty() {
        return Err(Error::Config("layer dimensions must not be empty".into()));
    }
    Ok(dims.windows(2).map(|d| (d[0] * d[1]) as u64).sum())
}

/// Cost of a dense network executing `mac_count` MACs and no additions.
pub fn ann_report(mac_count: u64, cost: &CostModel) -> OpReport {
    OpReport::from_counts(mac_count, 0, cost)
}

/// Measured firing statistics of the spiking layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpikeStats {
    pub frames: usize,
    /// Mean firing probability per spiking layer.
    pub layer_rates: Vec<f64>,
    /// Firing probability of every neuron, per layer.
    pub neuron_rates: Vec<Vec<f64>>,
    /// Per layer, counts of neurons whose rate falls in each of
    /// [`HISTOGRAM_BINS`] equal bins over [0, 1].
    pub histograms: Vec<Vec<usize>>,
    pub mean_spikes_per_inference: f64,
}

pub const HISTOGRAM_BINS: usize = 20;

/// Streams `features` from the reset state and records every hidden spike.
pub fn count_spikes(
    params: &NetworkParams<f32>,
    spec: &NetworkSpec,
    features: ArrayView2<'_, f32>,
) -> Result<SpikeStats> {
    params.check(spec)?;
    let frames = features.nrows();
    if frames == 0 {
        return Err(Error::InsufficientData("no frames to profile".into()));
    }
    let mut counts: Vec<Vec<u64>> = (0..spec.spiking_layer_count())
        .map(|l| vec![0; spec.width(l)])
        .collect();
    let mut state = reset_state::<f32>(spec);
    for frame in features.rows() {
        state.step(params, spec, &frame.to_vec())?;
        for (c, layer) in counts.iter_mut().zip(&state.hidden) {
            c.iter_mut()
                .zip(&layer.spikes)
                .for_each(|(c, &s)| *c += (s > 0.0) as u64);
        }
    }
    let neuron_rates: Vec<Vec<f64>> = counts
        .iter()
        .map(|c| c.iter().map(|&n| n as f64 / frames as f64).collect())
        .collect();
    let layer_rates = neuron_rates
        .iter()
        .map(|r| r.iter().sum::<f64>() / r.len() as f64)
        .collect();
    let histograms = neuron_rates
        .iter()
        .map(|rates| {
            let mut h = vec![0; HISTOGRAM_BINS];
            for &r in rates {
                h[((r * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1)] += 1;
            }
            h
        })
        .collect();
    let total: u64 = counts.iter().flatten().sum();
    Ok(SpikeStats {
        frames,
        layer_rates,
        neuron_rates,
        histograms,
        mean_spikes_per_inference: total as f64 / frames as f64,
    })
}

type Metric = (&'static str, fn(&OpReport) -> u64);

/// `n` in thousands, rounded to nearest.
pub fn k_round(n: u64) -> u64 {
    (n + 500) / 1000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedReport {
    pub name: String,
    pub report: OpReport,
}

/// Comparison of several models, in the order given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub models: Vec<NamedReport>,
    /// For every model after the first: total ops and memory accesses as a
    /// percentage of the first model's.
    pub ratios: Vec<Ratio>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub name: String,
    pub ops_percent: f64,
    pub mem_percent: f64,
}

pub fn compare_report(reports: &[NamedReport]) -> Result<Comparison> {
    let base = reports
        .first()
        .ok_or_else(|| Error::Config("comparison needs at least one report".into()))?;
    let pct = |a: u64, b: u64| if b == 0 { f64::NAN } else { 100.0 * a as f64 / b as f64 };
    let ratios = reports[1..]
        .iter()
        .map(|r| Ratio {
            name: r.name.clone(),
            ops_percent: pct(r.report.total_ops, base.report.total_ops),
            mem_percent: pct(r.report.mem_access_count, base.report.mem_access_count),
        })
        .collect();
    Ok(Comparison {
        models: reports.to_vec(),
        ratios,
    })
}

impl Comparison {
    /// Aligned plain-text table: one K-rounded and one exact column per model.
    pub fn render(&self) -> String {
        let mut header = vec!["".to_string()];
        for m in &self.models {
            header.push(m.name.clone());
            header.push(format!("{} (exact)", m.name));
        }
        let mut rows = vec![header];
        let metrics: [Metric; 4] = [
            ("MAC", |r| r.mac_count),
            ("ADD", |r| r.add_count),
            ("Total ops", |r| r.total_ops),
            ("Mem access", |r| r.mem_access_count),
        ];
        for (label, get) in metrics {
            let mut row = vec![label.to_string()];
            for m in &self.models {
                let v = get(&m.report);
                row.push(format!("{}K", k_round(v)));
                row.push(v.to_string());
            }
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &rows {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (cell, &w))| {
                    if c == 0 {
                        format!("{cell:<w$}")
                    } else {
                        format!("{cell:>w$}")
                    }
                })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        for r in &self.ratios {
            let _ = writeln!(
                out,
                "{} vs {}: {:.2}% of total ops, {:.2}% of memory accesses",
                r.name, self.models[0].name, r.ops_percent, r.mem_percent
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }
}
