//! LSTM encoder plus fully connected trunk, with hand-written backprop.
//!
//! Batches are row-major in the sense that row `i` of every activation
//! matrix belongs to sample `i`. Dense weights are stored `in × out` so the
//! forward pass is a single `X · W`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::features::{Encoded, ENTITY_DIM, OWN_DIM};
use super::PolicyConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Dense {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Dense { w: DMatrix::zeros(n_in, n_out), b: DVector::zeros(n_out) }
    }

    fn random<R: Rng + ?Sized>(n_in: usize, n_out: usize, bound: f64, rng: &mut R) -> Self {
        Dense { w: DMatrix::from_fn(n_in, n_out, |_, _| rng.gen_range(-bound..bound)), b: DVector::zeros(n_out) }
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        // a general product packs the whole weight matrix, which dominates
        // for a handful of rows
        let mut y = if x.nrows() <= 4 {
            let mut y = DMatrix::zeros(x.nrows(), self.w.ncols());
            for r in 0..x.nrows() {
                y.set_row(r, &self.w.tr_mul(&x.row(r).transpose()).transpose());
            }
            y
        } else {
            x * &self.w
        };
        for (j, mut col) in y.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.b[j]);
        }
        y
    }

    /// Accumulate parameter gradients into `grad` and return `dL/dx`.
    fn backward(&self, x: &DMatrix<f64>, dy: &DMatrix<f64>, grad: &mut Dense) -> DMatrix<f64> {
        grad.w += x.transpose() * dy;
        for (j, col) in dy.column_iter().enumerate() {
            grad.b[j] += col.sum();
        }
        (&self.w * dy.transpose()).transpose()
    }
}

/// Single-layer LSTM. Gate rows are stacked `[input, forget, cell, output]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub w: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// Everything one cell step needs for its backward pass.
#[derive(Debug, Clone)]
pub struct LstmStep {
    x: DVector<f64>,
    h_prev: DVector<f64>,
    c_prev: DVector<f64>,
    i: DVector<f64>,
    f: DVector<f64>,
    g: DVector<f64>,
    o: DVector<f64>,
    tanh_c: DVector<f64>,
    pub c: DVector<f64>,
    pub h: DVector<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Lstm {
    pub fn zeros(n_in: usize, hidden: usize) -> Self {
        Lstm { w: DMatrix::zeros(4 * hidden, n_in), u: DMatrix::zeros(4 * hidden, hidden), b: DVector::zeros(4 * hidden) }
    }

    fn random<R: Rng + ?Sized>(n_in: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut l = Lstm {
            w: DMatrix::from_fn(4 * hidden, n_in, |_, _| rng.gen_range(-bound..bound)),
            u: DMatrix::from_fn(4 * hidden, hidden, |_, _| rng.gen_range(-bound..bound)),
            b: DVector::zeros(4 * hidden),
        };
        l.b.rows_mut(hidden, hidden).fill(1.0);
        l
    }

    pub fn hidden(&self) -> usize {
        self.u.ncols()
    }

    pub fn step(&self, x: &[f64], h_prev: &DVector<f64>, c_prev: &DVector<f64>) -> LstmStep {
        let hn = self.hidden();
        let x = DVector::from_column_slice(x);
        let z = &self.w * &x + &self.u * h_prev + &self.b;
        let i = z.rows(0, hn).map(sigmoid);
        let f = z.rows(hn, hn).map(sigmoid);
        let g = z.rows(2 * hn, hn).map(f64::tanh);
        let o = z.rows(3 * hn, hn).map(sigmoid);
        let c = f.component_mul(c_prev) + i.component_mul(&g);
        let tanh_c = c.map(f64::tanh);
        let h = o.component_mul(&tanh_c);
        LstmStep { x, h_prev: h_prev.clone(), c_prev: c_prev.clone(), i, f, g, o, tanh_c, c, h }
    }

    /// Run the cell over `seq` from zero state; returns every step.
    pub fn run<S: AsRef<[f64]>>(&self, seq: &[S]) -> Vec<LstmStep> {
        let hn = self.hidden();
        let mut h = DVector::zeros(hn);
        let mut c = DVector::zeros(hn);
        let mut steps = Vec::with_capacity(seq.len());
        for x in seq {
            let s = self.step(x.as_ref(), &h, &c);
            h = s.h.clone();
            c = s.c.clone();
            steps.push(s);
        }
        steps
    }

    /// Final hidden state after consuming `seq`; zeros for an empty sequence.
    pub fn encode<S: AsRef<[f64]>>(&self, seq: &[S]) -> DVector<f64> {
        self.run(seq).last().map_or_else(|| DVector::zeros(self.hidden()), |s| s.h.clone())
    }

    /// Backpropagate `dh_final` through the steps, accumulating into `grad`.
    fn backward(&self, steps: &[LstmStep], dh_final: &DVector<f64>, grad: &mut Lstm) {
        let hn = self.hidden();
        let mut dh = dh_final.clone();
        let mut dc = DVector::zeros(hn);
        let mut dz = DVector::zeros(4 * hn);
        for s in steps.iter().rev() {
            dc += dh.component_mul(&s.o).component_mul(&s.tanh_c.map(|t| 1.0 - t * t));
            for k in 0..hn {
                let (i, f, g, o) = (s.i[k], s.f[k], s.g[k], s.o[k]);
                dz[k] = dc[k] * g * i * (1.0 - i);
                dz[hn + k] = dc[k] * s.c_prev[k] * f * (1.0 - f);
                dz[2 * hn + k] = dc[k] * i * (1.0 - g * g);
                dz[3 * hn + k] = dh[k] * s.tanh_c[k] * o * (1.0 - o);
            }
            grad.w.ger(1.0, &dz, &s.x, 1.0);
            grad.u.ger(1.0, &dz, &s.h_prev, 1.0);
            grad.b += &dz;
            dc.component_mul_assign(&s.f);
            dh = self.u.tr_mul(&dz);
        }
    }
}

/// Intermediate values of a batched forward pass.
pub struct ForwardCache {
    lstm: Vec<Vec<LstmStep>>,
    /// `acts[0]` is the trunk input; `acts[l]` the output of layer `l`.
    acts: Vec<DMatrix<f64>>,
}

impl ForwardCache {
    /// Raw network outputs, one row per sample.
    pub fn output(&self) -> &DMatrix<f64> {
        self.acts.last().expect("at least one layer")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub cfg: PolicyConfig,
    pub lstm: Lstm,
    /// `depth` hidden ReLU layers followed by the linear output layer.
    pub layers: Vec<Dense>,
}

impl PolicyNet {
    pub fn zeros(cfg: &PolicyConfig) -> Self {
        let mut layers = Vec::with_capacity(cfg.depth + 1);
        let mut n_in = OWN_DIM + cfg.hidden;
        for _ in 0..cfg.depth {
            layers.push(Dense::zeros(n_in, cfg.width));
            n_in = cfg.width;
        }
        layers.push(Dense::zeros(n_in, cfg.out_dim()));
        PolicyNet { cfg: cfg.clone(), lstm: Lstm::zeros(ENTITY_DIM, cfg.hidden), layers }
    }

    /// He-uniform hidden layers and a small output layer, so an untrained
    /// net starts close to the hover decode.
    pub fn random<R: Rng + ?Sized>(cfg: &PolicyConfig, rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(cfg.depth + 1);
        let mut n_in = OWN_DIM + cfg.hidden;
        for _ in 0..cfg.depth {
            layers.push(Dense::random(n_in, cfg.width, (6.0 / n_in as f64).sqrt(), rng));
            n_in = cfg.width;
        }
        layers.push(Dense::random(n_in, cfg.out_dim(), 0.1 * (3.0 / n_in as f64).sqrt(), rng));
        PolicyNet { cfg: cfg.clone(), lstm: Lstm::random(ENTITY_DIM, cfg.hidden, rng), layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.cfg)
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut out = vec![self.lstm.w.as_slice(), self.lstm.u.as_slice(), self.lstm.b.as_slice()];
        for l in &self.layers {
            out.push(l.w.as_slice());
            out.push(l.b.as_slice());
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![self.lstm.w.as_mut_slice(), self.lstm.u.as_mut_slice(), self.lstm.b.as_mut_slice()];
        for l in &mut self.layers {
            out.push(l.w.as_mut_slice());
            out.push(l.b.as_mut_slice());
        }
        out
    }

    /// `(rows, cols)` of every array returned by [`params`](Self::params).
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        let mut out = vec![self.lstm.w.shape(), self.lstm.u.shape(), (self.lstm.b.len(), 1)];
        for l in &self.layers {
            out.push(l.w.shape());
            out.push((l.b.len(), 1));
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    pub fn forward(&self, batch: &[Encoded]) -> ForwardCache {
        let hn = self.cfg.hidden;
        let mut input = DMatrix::zeros(batch.len(), OWN_DIM + hn);
        let mut lstm = Vec::with_capacity(batch.len());
        for (r, enc) in batch.iter().enumerate() {
            let steps = self.lstm.run(&enc.entities);
            for (k, v) in enc.own.iter().enumerate() {
                input[(r, k)] = *v;
            }
            if let Some(last) = steps.last() {
                for k in 0..hn {
                    input[(r, OWN_DIM + k)] = last.h[k];
                }
            }
            lstm.push(steps);
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input);
        let n = self.layers.len();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut y = layer.forward(acts.last().unwrap());
            if l + 1 < n {
                y.apply(|v| *v = v.max(0.0));
            }
            acts.push(y);
        }
        ForwardCache { lstm, acts }
    }

    /// Gradients of a loss given `d_out = dL/d(output)` for the batch in
    /// `cache`.
    pub fn backward(&self, cache: &ForwardCache, d_out: &DMatrix<f64>) -> PolicyNet {
        let mut grad = self.zeros_like();
        let n = self.layers.len();
        let mut dy = d_out.clone();
        for l in (0..n).rev() {
            let dx = self.layers[l].backward(&cache.acts[l], &dy, &mut grad.layers[l]);
            dy = if l > 0 {
                let mut dx = dx;
                dx.zip_apply(&cache.acts[l], |d, a| {
                    if a <= 0.0 {
                        *d = 0.0
                    }
                });
                dx
            } else {
                dx
            };
        }
        let hn = self.cfg.hidden;
        for (r, steps) in cache.lstm.iter().enumerate() {
            if steps.is_empty() {
                continue;
            }
            let dh = DVector::from_fn(hn, |k, _| dy[(r, OWN_DIM + k)]);
            self.lstm.backward(steps, &dh, &mut grad.lstm);
        }
        grad
    }
}

/// Two-moment adaptive gradient step.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(net: &PolicyNet, lr: f64, beta1: f64, beta2: f64) -> Self {
        let zeros: Vec<Vec<f64>> = net.params().iter().map(|p| vec![0.0; p.len()]).collect();
        Adam { lr, beta1, beta2, eps: 1e-8, t: 0, m: zeros.clone(), v: zeros }
    }

    pub fn step(&mut self, net: &mut PolicyNet, grad: &PolicyNet) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((p, g), m), v) in net.params_mut().into_iter().zip(grad.params()).zip(&mut self.m).zip(&mut self.v) {
            for k in 0..p.len() {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_sequence_gives_zero_latent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = Lstm::random(3, 5, &mut rng);
        let empty: [[f64; 3]; 0] = [];
        assert_eq!(l.encode(&empty), DVector::zeros(5));
    }

    #[test]
    fn latent_size_is_fixed() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let l = Lstm::random(2, 4, &mut rng);
        assert_eq!(l.encode(&[[1.0, 2.0]]).len(), 4);
        assert_eq!(l.encode(&[[1.0, 2.0]; 5]).len(), 4);
    }

    #[test]
    fn adam_moves_against_gradient() {
        let cfg = PolicyConfig { hidden: 2, width: 4, depth: 1, n_heads: 1, ..PolicyConfig::default() };
        let mut net = PolicyNet::zeros(&cfg);
        let mut g = net.zeros_like();
        g.layers[0].b[0] = 3.0;
        g.layers[0].b[1] = -0.5;
        let mut opt = Adam::new(&net, 0.01, 0.9, 0.999);
        opt.step(&mut net, &g);
        assert!((net.layers[0].b[0] + 0.01).abs() < 1e-6);
        assert!((net.layers[0].b[1] - 0.01).abs() < 1e-6);
        assert_eq!(net.layers[0].b[2], 0.0);
    }
}
