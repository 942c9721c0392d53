//! Scalar reverse-mode differentiation, one node per arithmetic operation.
//!
//! Deliberately naive: every multiply, add and normalization step of the
//! network becomes its own node, and the backward sweep just walks the tape in
//! reverse. It shares no code with the library's batched backward pass.

use std::collections::HashMap;

use ndarray::ArrayView2;
use snn_decoder::lif::ResetMode;
use snn_decoder::network::{Mode, NetworkParams, NetworkSpec, ParamCoord, ParamKind, TrainingCache};

#[derive(Clone, Copy, Debug)]
pub struct Var(usize);

struct Node {
    value: f64,
    parents: Vec<(usize, f64)>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    fn push(&mut self, value: f64, parents: Vec<(usize, f64)>) -> Var {
        self.nodes.push(Node { value, parents });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: f64) -> Var {
        self.push(value, vec![])
    }

    pub fn value(&self, v: Var) -> f64 {
        self.nodes[v.0].value
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, vec![(a.0, 1.0), (b.0, 1.0)])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, vec![(a.0, 1.0), (b.0, -1.0)])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        self.push(x * y, vec![(a.0, y), (b.0, x)])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, vec![(a.0, c)])
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) + c;
        self.push(v, vec![(a.0, 1.0)])
    }

    /// `1 / sqrt(a)`
    pub fn rsqrt(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let r = 1.0 / x.sqrt();
        self.push(r, vec![(a.0, -0.5 * r / x)])
    }

    /// Value `value`, derivative `slope` with respect to `a`.
    pub fn custom(&mut self, a: Var, value: f64, slope: f64) -> Var {
        self.push(value, vec![(a.0, slope)])
    }

    pub fn sum(&mut self, xs: &[Var]) -> Var {
        let v = xs.iter().map(|x| self.value(*x)).sum();
        self.push(v, xs.iter().map(|x| (x.0, 1.0)).collect())
    }

    pub fn gradient(&self, output: Var) -> Vec<f64> {
        let mut g = vec![0.0; self.nodes.len()];
        g[output.0] = 1.0;
        for i in (0..=output.0).rev() {
            if g[i] == 0.0 {
                continue;
            }
            for &(p, d) in &self.nodes[i].parents {
                g[p] += g[i] * d;
            }
        }
        g
    }
}

pub struct OracleResult {
    pub loss: f64,
    pub grads: HashMap<ParamCoord, f64>,
}

/// Loss and every parameter gradient of a training-mode pass, using the
/// dropout masks recorded in `cache` and checking that the recomputed spikes
/// agree with it.
pub fn oracle_gradients(
    params: &NetworkParams<f64>,
    spec: &NetworkSpec,
    inputs: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
    warmup_discard: usize,
    cache: &TrainingCache<f64>,
) -> OracleResult {
    assert_eq!(cache.mode, Mode::Train);
    let batch = cache.batch;
    let rows = inputs.nrows();
    let steps = rows / batch;
    let v_th = spec.v_th as f64;
    let mut tape = Tape::default();
    let mut leaves: Vec<(ParamCoord, Var)> = Vec::new();

    let mut x: Vec<Vec<Var>> = inputs
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|&v| tape.leaf(v)).collect())
        .collect();
    let mut outputs: Vec<Vec<Var>> = Vec::new();

    for (l, layer) in params.layers.iter().enumerate() {
        let (fan_in, fan_out) = layer.weight.dim();
        let mut leaf = |tape: &mut Tape, kind, index, value| {
            let v = tape.leaf(value);
            leaves.push((ParamCoord { layer: l, kind, index }, v));
            v
        };
        let w: Vec<Var> = (0..fan_in * fan_out)
            .map(|k| {
                leaf(
                    &mut tape,
                    ParamKind::Weight,
                    k,
                    layer.weight[[k / fan_out, k % fan_out]],
                )
            })
            .collect();
        let tau_raw: Vec<Var> = (0..fan_out)
            .map(|j| leaf(&mut tape, ParamKind::Tau, j, layer.tau[j]))
            .collect();
        let norm = layer.norm.as_ref().map(|n| {
            let g: Vec<Var> = (0..fan_out)
                .map(|j| leaf(&mut tape, ParamKind::Gamma, j, n.gamma[j]))
                .collect();
            let b: Vec<Var> = (0..fan_out)
                .map(|j| leaf(&mut tape, ParamKind::Beta, j, n.beta[j]))
                .collect();
            (g, b, n.eps)
        });
        // the clamp passes gradients straight through
        let tau: Vec<Var> = tau_raw
            .iter()
            .map(|&t| {
                let v = tape.value(t).clamp(0.0, 1.0);
                tape.custom(t, v, 1.0)
            })
            .collect();

        // z = x W, one product node per edge
        let z: Vec<Vec<Var>> = (0..rows)
            .map(|r| {
                (0..fan_out)
                    .map(|j| {
                        let terms: Vec<Var> = (0..fan_in).map(|i| tape.mul(x[r][i], w[i * fan_out + j])).collect();
                        tape.sum(&terms)
                    })
                    .collect()
            })
            .collect();

        let current: Vec<Vec<Var>> = match &norm {
            None => z,
            Some((gamma, beta, eps)) => {
                let n = rows as f64;
                let mut out = vec![Vec::with_capacity(fan_out); rows];
                for j in 0..fan_out {
                    let col: Vec<Var> = (0..rows).map(|r| z[r][j]).collect();
                    let total = tape.sum(&col);
                    let mean = tape.scale(total, 1.0 / n);
                    let centred: Vec<Var> = col.iter().map(|&c| tape.sub(c, mean)).collect();
                    let squares: Vec<Var> = centred.iter().map(|&c| tape.mul(c, c)).collect();
                    let ss = tape.sum(&squares);
                    let var = tape.scale(ss, 1.0 / n);
                    let var_eps = tape.offset(var, *eps);
                    let inv = tape.rsqrt(var_eps);
                    let g_scaled = tape.scale(gamma[j], v_th);
                    for (r, &c) in centred.iter().enumerate() {
                        let xh = tape.mul(c, inv);
                        let y = tape.mul(g_scaled, xh);
                        out[r].push(tape.add(y, beta[j]));
                    }
                }
                out
            }
        };

        let spiking = l + 1 < params.layers.len();
        let mut u: Vec<Vec<Var>> = Vec::with_capacity(rows);
        let mut s: Vec<Vec<Var>> = Vec::with_capacity(rows);
        for r in 0..rows {
            let t = r / batch;
            let mut ur = Vec::with_capacity(fan_out);
            let mut sr = Vec::with_capacity(fan_out);
            for j in 0..fan_out {
                let i_in = current[r][j];
                let un = if t == 0 {
                    // zero initial state: every leak term vanishes
                    i_in
                } else {
                    let up = u[r - batch][j];
                    let leaked = if spiking {
                        let sp = s[r - batch][j];
                        match spec.reset_mode {
                            ResetMode::SubtractThreshold => {
                                let reset = tape.scale(sp, v_th);
                                let d = tape.sub(up, reset);
                                tape.mul(tau[j], d)
                            }
                            ResetMode::ResetToZero => {
                                let one_minus = {
                                    let neg = tape.scale(sp, -1.0);
                                    tape.offset(neg, 1.0)
                                };
                                let kept = tape.mul(up, one_minus);
                                tape.mul(tau[j], kept)
                            }
                        }
                    } else {
                        tape.mul(tau[j], up)
                    };
                    tape.add(leaked, i_in)
                };
                ur.push(un);
                if spiking {
                    let uv = tape.value(un);
                    let fired = if uv >= v_th { 1.0 } else { 0.0 };
                    let slope = if (uv - v_th).abs() < 0.5 { 1.0 } else { 0.0 };
                    let recorded = cache.layers[l].spikes.as_ref().unwrap()[[r, j]];
                    assert_eq!(fired, recorded, "spike mismatch at layer {l}, row {r}, neuron {j}");
                    sr.push(tape.custom(un, fired, slope));
                }
            }
            u.push(ur);
            s.push(sr);
        }

        if spiking {
            x = match &cache.layers[l].dropout {
                Some(mask) => (0..rows)
                    .map(|r| (0..fan_out).map(|j| tape.scale(s[r][j], mask[[r, j]])).collect())
                    .collect(),
                None => s,
            };
        } else {
            outputs = u;
        }
    }

    let mut sq = Vec::new();
    for t in warmup_discard..steps {
        for b in 0..batch {
            let r = t * batch + b;
            for (k, &p) in outputs[r].iter().enumerate() {
                let e = tape.offset(p, -targets[[r, k]]);
                sq.push(tape.mul(e, e));
            }
        }
    }
    let total = tape.sum(&sq);
    let loss = tape.scale(total, 1.0 / sq.len() as f64);
    let g = tape.gradient(loss);
    OracleResult {
        loss: tape.value(loss),
        grads: leaves.into_iter().map(|(c, v)| (c, g[v.0])).collect(),
    }
}
