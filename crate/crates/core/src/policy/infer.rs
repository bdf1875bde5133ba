//! Single-observation inference in `f32`.
//!
//! Each trunk weight matrix is stored with one contiguous output row per
//! input unit, so a layer is a sum of scaled rows and inputs zeroed by the
//! previous ReLU are skipped without touching their weights.

use std::time::Instant;

use super::features::{encode, Encoded, Observation};
use super::net::PolicyNet;
use super::{PolicyConfig, PolicyOutput};

#[derive(Debug, Clone)]
struct Layer {
    n_out: usize,
    rows: Vec<f32>,
    b: Vec<f32>,
}

impl Layer {
    fn new(w: &nalgebra::DMatrix<f64>, b: &nalgebra::DVector<f64>) -> Self {
        let (n_in, n_out) = w.shape();
        let mut rows = Vec::with_capacity(n_in * n_out);
        for i in 0..n_in {
            rows.extend(w.row(i).iter().map(|v| *v as f32));
        }
        Layer { n_out, rows, b: b.iter().map(|v| *v as f32).collect() }
    }

    fn forward(&self, x: &[f32], y: &mut Vec<f32>) {
        y.clear();
        y.extend_from_slice(&self.b);
        for (xi, row) in x.iter().zip(self.rows.chunks_exact(self.n_out)) {
            if *xi != 0.0 {
                for (yj, wj) in y.iter_mut().zip(row) {
                    *yj += xi * wj;
                }
            }
        }
    }
}

/// Read-only copy of a [`PolicyNet`] for fast batch-1 forward passes.
/// The LSTM stays in `f64`; it is small next to the trunk.
#[derive(Debug, Clone)]
pub struct CompiledPolicy {
    pub cfg: PolicyConfig,
    lstm: super::net::Lstm,
    layers: Vec<Layer>,
}

impl CompiledPolicy {
    pub fn new(net: &PolicyNet) -> Self {
        let layers = net.layers.iter().map(|d| Layer::new(&d.w, &d.b)).collect();
        CompiledPolicy { cfg: net.cfg.clone(), lstm: net.lstm.clone(), layers }
    }

    /// Raw network output for one encoded observation.
    pub fn forward(&self, enc: &Encoded) -> Vec<f64> {
        let latent = self.lstm.encode(&enc.entities);
        let mut x: Vec<f32> = enc.own.iter().chain(latent.iter()).map(|v| *v as f32).collect();
        let mut y = Vec::with_capacity(self.cfg.width.max(self.cfg.out_dim()));
        let n = self.layers.len();
        for (l, layer) in self.layers.iter().enumerate() {
            layer.forward(&x, &mut y);
            if l + 1 < n {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            std::mem::swap(&mut x, &mut y);
        }
        x.into_iter().map(f64::from).collect()
    }

    /// Same contract as [`super::policy_forward`], on the compiled weights.
    pub fn policy_forward(&self, obs: &Observation) -> PolicyOutput {
        let clock = Instant::now();
        let enc = encode(obs, self.cfg.plan_radius, self.cfg.agent_half_extent);
        let out = self.forward(&enc);
        let dec = self.cfg.decoder();
        let candidates = out.chunks(dec.head_len()).map(|head| dec.decode(head, &obs.start, obs.t_start)).collect();
        let wall_time_ms = clock.elapsed().as_secs_f64() * 1e3;
        log::debug!("policy_forward (compiled): {} entities, {:.3} ms", enc.entities.len(), wall_time_ms);
        PolicyOutput { candidates, wall_time_ms }
    }
}
