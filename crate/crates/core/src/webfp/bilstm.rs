use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::scalar::Scalar;
use crate::seed;

/// Gate pre-activation weights for one LSTM direction. Rows are grouped
/// input, forget, cell, output gate, `hidden` rows each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LstmCell<S: Scalar> {
    /// `4H × I`, row-major.
    pub w: Vec<S>,
    /// `4H × H`, row-major.
    pub u: Vec<S>,
    pub b: Vec<S>,
}

impl<S: Scalar> LstmCell<S> {
    fn zeros(input: usize, hidden: usize) -> Self {
        LstmCell {
            w: vec![S::zero(); 4 * hidden * input],
            u: vec![S::zero(); 4 * hidden * hidden],
            b: vec![S::zero(); 4 * hidden],
        }
    }
}

/// Bidirectional LSTM whose final forward and backward states feed a
/// softmax layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct BiLstmModel<S: Scalar> {
    pub input_dim: usize,
    pub hidden: usize,
    pub classes: usize,
    /// Expected number of time steps.
    pub seq_len: usize,
    pub fwd: LstmCell<S>,
    pub bwd: LstmCell<S>,
    /// `C × 2H`, row-major; columns are forward state then backward state.
    pub out_w: Vec<S>,
    pub out_b: Vec<S>,
}

fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

/// Activations of one direction over a sequence.
struct DirTrace<S> {
    /// `(T + 1) × H`; row 0 is the zero initial state.
    h: Vec<S>,
    c: Vec<S>,
    /// `T × 4H` activated gates.
    gates: Vec<S>,
}

impl<S: Scalar> BiLstmModel<S> {
    pub fn zeros(input_dim: usize, hidden: usize, classes: usize, seq_len: usize) -> Self {
        BiLstmModel {
            input_dim,
            hidden,
            classes,
            seq_len,
            fwd: LstmCell::zeros(input_dim, hidden),
            bwd: LstmCell::zeros(input_dim, hidden),
            out_w: vec![S::zero(); classes * 2 * hidden],
            out_b: vec![S::zero(); classes],
        }
    }

    /// Uniform weights in `±1/√H`, forget-gate biases at 1.
    pub fn init(input_dim: usize, hidden: usize, classes: usize, seq_len: usize, seed: u64) -> Self {
        let mut m = Self::zeros(input_dim, hidden, classes, seq_len);
        let mut rng = seed::rng(seed);
        let a = 1.0 / (hidden as f64).sqrt();
        for cell in [&mut m.fwd, &mut m.bwd] {
            for v in cell.w.iter_mut().chain(cell.u.iter_mut()) {
                *v = S::of(rng.random_range(-a..a));
            }
            for v in &mut cell.b[hidden..2 * hidden] {
                *v = S::one();
            }
        }
        let a = 1.0 / (2.0 * hidden as f64).sqrt();
        for v in m.out_w.iter_mut() {
            *v = S::of(rng.random_range(-a..a));
        }
        m
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim, self.hidden, self.classes, self.seq_len)
    }

    /// Parameter groups in a fixed order.
    pub fn groups(&self) -> [&[S]; 8] {
        [
            &self.fwd.w,
            &self.fwd.u,
            &self.fwd.b,
            &self.bwd.w,
            &self.bwd.u,
            &self.bwd.b,
            &self.out_w,
            &self.out_b,
        ]
    }

    pub fn groups_mut(&mut self) -> [&mut Vec<S>; 8] {
        [
            &mut self.fwd.w,
            &mut self.fwd.u,
            &mut self.fwd.b,
            &mut self.bwd.w,
            &mut self.bwd.u,
            &mut self.bwd.b,
            &mut self.out_w,
            &mut self.out_b,
        ]
    }

    pub fn n_params(&self) -> usize {
        self.groups().iter().map(|g| g.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let (i, h, c) = (self.input_dim, self.hidden, self.classes);
        for cell in [&self.fwd, &self.bwd] {
            if cell.w.len() != 4 * h * i || cell.u.len() != 4 * h * h || cell.b.len() != 4 * h {
                return domain("LSTM cell shapes do not match dimensions");
            }
        }
        if self.out_w.len() != c * 2 * h || self.out_b.len() != c {
            return domain("output layer shape does not match dimensions");
        }
        if self.groups().iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return domain("model has non-finite parameters");
        }
        Ok(())
    }

    fn check_input(&self, x: &[S]) -> Result<usize> {
        if self.input_dim == 0 || x.is_empty() || x.len() % self.input_dim != 0 {
            return domain(format!("input of {} values is not a whole number of steps", x.len()));
        }
        let t = x.len() / self.input_dim;
        if self.seq_len != 0 && t != self.seq_len {
            return domain(format!("model expects {} steps, got {t}", self.seq_len));
        }
        Ok(t)
    }

    fn run_dir(&self, cell: &LstmCell<S>, x: &[S], t_len: usize, reverse: bool) -> DirTrace<S> {
        let (n_in, h) = (self.input_dim, self.hidden);
        let mut tr = DirTrace {
            h: vec![S::zero(); (t_len + 1) * h],
            c: vec![S::zero(); (t_len + 1) * h],
            gates: vec![S::zero(); t_len * 4 * h],
        };
        let mut z = vec![S::zero(); 4 * h];
        for k in 0..t_len {
            let step = if reverse { t_len - 1 - k } else { k };
            let xt = &x[step * n_in..(step + 1) * n_in];
            let hp = &tr.h[k * h..(k + 1) * h];
            for r in 0..4 * h {
                let mut acc = cell.b[r];
                let wr = &cell.w[r * n_in..(r + 1) * n_in];
                for j in 0..n_in {
                    acc = acc + wr[j] * xt[j];
                }
                let ur = &cell.u[r * h..(r + 1) * h];
                for j in 0..h {
                    acc = acc + ur[j] * hp[j];
                }
                z[r] = acc;
            }
            let g = &mut tr.gates[k * 4 * h..(k + 1) * 4 * h];
            for j in 0..h {
                g[j] = sigmoid(z[j]);
                g[h + j] = sigmoid(z[h + j]);
                g[2 * h + j] = z[2 * h + j].tanh();
                g[3 * h + j] = sigmoid(z[3 * h + j]);
            }
            for j in 0..h {
                let c = g[h + j] * tr.c[k * h + j] + g[j] * g[2 * h + j];
                tr.c[(k + 1) * h + j] = c;
                tr.h[(k + 1) * h + j] = g[3 * h + j] * c.tanh();
            }
        }
        tr
    }

    fn back_dir(&self, cell: &LstmCell<S>, grad: &mut LstmCell<S>, x: &[S], tr: &DirTrace<S>, dh_last: &[S], reverse: bool) {
        let (n_in, h) = (self.input_dim, self.hidden);
        let t_len = tr.gates.len() / (4 * h);
        let mut dh = dh_last.to_vec();
        let mut dc = vec![S::zero(); h];
        let mut dz = vec![S::zero(); 4 * h];
        let one = S::one();
        for k in (0..t_len).rev() {
            let step = if reverse { t_len - 1 - k } else { k };
            let xt = &x[step * n_in..(step + 1) * n_in];
            let g = &tr.gates[k * 4 * h..(k + 1) * 4 * h];
            let hp = &tr.h[k * h..(k + 1) * h];
            for j in 0..h {
                let (i, f, gg, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                let tc = tr.c[(k + 1) * h + j].tanh();
                let dcj = dc[j] + dh[j] * o * (one - tc * tc);
                dz[j] = dcj * gg * i * (one - i);
                dz[h + j] = dcj * tr.c[k * h + j] * f * (one - f);
                dz[2 * h + j] = dcj * i * (one - gg * gg);
                dz[3 * h + j] = dh[j] * tc * o * (one - o);
                dc[j] = dcj * f;
            }
            for r in 0..4 * h {
                let d = dz[r];
                grad.b[r] = grad.b[r] + d;
                let gw = &mut grad.w[r * n_in..(r + 1) * n_in];
                for j in 0..n_in {
                    gw[j] = gw[j] + d * xt[j];
                }
                let gu = &mut grad.u[r * h..(r + 1) * h];
                for j in 0..h {
                    gu[j] = gu[j] + d * hp[j];
                }
            }
            for j in 0..h {
                let mut acc = S::zero();
                for r in 0..4 * h {
                    acc = acc + cell.u[r * h + j] * dz[r];
                }
                dh[j] = acc;
            }
        }
    }

    fn logits(&self, hf: &[S], hb: &[S]) -> Vec<S> {
        let h = self.hidden;
        (0..self.classes)
            .map(|c| {
                let row = &self.out_w[c * 2 * h..(c + 1) * 2 * h];
                let mut acc = self.out_b[c];
                for j in 0..h {
                    acc = acc + row[j] * hf[j] + row[h + j] * hb[j];
                }
                acc
            })
            .collect()
    }

    /// Class probabilities for one sequence of `seq_len × input_dim` values.
    pub fn predict(&self, x: &[S]) -> Result<Vec<S>> {
        let t = self.check_input(x)?;
        let h = self.hidden;
        let f = self.run_dir(&self.fwd, x, t, false);
        let b = self.run_dir(&self.bwd, x, t, true);
        Ok(softmax(&self.logits(&f.h[t * h..], &b.h[t * h..])))
    }

    /// Cross-entropy loss of one sample and, when `grad` is given, its
    /// gradient added into `grad`.
    pub fn loss_and_grad(&self, x: &[S], y: usize, grad: Option<&mut BiLstmModel<S>>) -> Result<S> {
        let t = self.check_input(x)?;
        if y >= self.classes {
            return domain(format!("label {y} outside {} classes", self.classes));
        }
        let h = self.hidden;
        let f = self.run_dir(&self.fwd, x, t, false);
        let b = self.run_dir(&self.bwd, x, t, true);
        let (hf, hb) = (&f.h[t * h..], &b.h[t * h..]);
        let p = softmax(&self.logits(hf, hb));
        let loss = -p[y].max(S::min_positive_value()).ln();
        let Some(g) = grad else {
            return Ok(loss);
        };
        let mut dhf = vec![S::zero(); h];
        let mut dhb = vec![S::zero(); h];
        for c in 0..self.classes {
            let d = if c == y { p[c] - S::one() } else { p[c] };
            g.out_b[c] = g.out_b[c] + d;
            let row = &self.out_w[c * 2 * h..(c + 1) * 2 * h];
            let grow = &mut g.out_w[c * 2 * h..(c + 1) * 2 * h];
            for j in 0..h {
                grow[j] = grow[j] + d * hf[j];
                grow[h + j] = grow[h + j] + d * hb[j];
                dhf[j] = dhf[j] + d * row[j];
                dhb[j] = dhb[j] + d * row[h + j];
            }
        }
        self.back_dir(&self.fwd, &mut g.fwd, x, &f, &dhf, false);
        self.back_dir(&self.bwd, &mut g.bwd, x, &b, &dhb, true);
        Ok(loss)
    }
}

fn softmax<S: Scalar>(z: &[S]) -> Vec<S> {
    let m = z.iter().copied().fold(S::neg_infinity(), S::max);
    let e: Vec<S> = z.iter().map(|&v| (v - m).exp()).collect();
    let s: S = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Indices of the `k` largest probabilities, best first; ties go to the
/// lower class index.
pub fn top_k<S: Scalar>(p: &[S], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..p.len()).collect();
    idx.sort_by(|&a, &b| p[b].partial_cmp(&p[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    /// Largest `|analytic − numeric| / max(|analytic| + |numeric|, 1e-6)`.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
}

/// Compares backpropagated gradients with central differences over every
/// parameter.
pub fn grad_check(model: &BiLstmModel<f64>, x: &[f64], y: usize, epsilon: f64) -> Result<GradCheck> {
    if !(epsilon > 0.0) {
        return domain("epsilon must be positive");
    }
    let mut grad = model.zeros_like();
    model.loss_and_grad(x, y, Some(&mut grad))?;
    let analytic: Vec<f64> = grad.groups().iter().flat_map(|g| g.iter().copied()).collect();
    let mut probe = model.clone();
    let mut out = GradCheck {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        checked: 0,
    };
    let mut flat = 0;
    for gi in 0..8 {
        let len = probe.groups()[gi].len();
        for pi in 0..len {
            let orig = probe.groups()[gi][pi];
            probe.groups_mut()[gi][pi] = orig + epsilon;
            let up = probe.loss_and_grad(x, y, None)?;
            probe.groups_mut()[gi][pi] = orig - epsilon;
            let down = probe.loss_and_grad(x, y, None)?;
            probe.groups_mut()[gi][pi] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            let a = analytic[flat];
            let abs = (a - numeric).abs();
            out.max_abs_error = out.max_abs_error.max(abs);
            out.max_rel_error = out.max_rel_error.max(abs / (a.abs() + numeric.abs()).max(1e-6));
            out.checked += 1;
            flat += 1;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Gradient-norm clip applied to each batch's mean gradient.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: 64,
            epochs: 60,
            learning_rate: 0.1,
            batch_size: 16,
            clip_norm: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TrainOutcome<S: Scalar> {
    pub model: BiLstmModel<S>,
    /// Mean training loss before training, then after each epoch.
    pub loss_curve: Vec<f64>,
}

fn mean_loss<S: Scalar>(model: &BiLstmModel<S>, xs: &[Vec<S>], ys: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        total += model.loss_and_grad(x, y, None)?.to_f64_lossy();
    }
    Ok(total / xs.len() as f64)
}

/// Minibatch gradient descent on cross-entropy. Sample order is reshuffled
/// every epoch from `seed`.
pub fn train_bilstm<S: Scalar>(
    xs: &[Vec<S>],
    ys: &[usize],
    classes: usize,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome<S>> {
    if xs.is_empty() || xs.len() != ys.len() {
        return domain("training needs one label per non-empty sequence");
    }
    if classes < 2 {
        return domain("training needs at least two classes");
    }
    if cfg.hidden == 0 || cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return domain("hidden size, batch size and learning rate must be positive");
    }
    let steps = xs[0].len();
    if xs.iter().any(|x| x.len() != steps) {
        return domain("all training sequences must have the same length");
    }
    let mut model = BiLstmModel::init(1, cfg.hidden, classes, steps, seed::derive(seed, seed::stream::TRAINING, 0));
    let mut rng = seed::rng(seed::derive(seed, seed::stream::TRAINING, 1));
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut grad = model.zeros_like();
    let mut curve = vec![mean_loss(&model, xs, ys)?];
    let lr = S::of(cfg.learning_rate);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            for g in grad.groups_mut() {
                g.iter_mut().for_each(|v| *v = S::zero());
            }
            for &i in batch {
                epoch_loss += model.loss_and_grad(&xs[i], ys[i], Some(&mut grad))?.to_f64_lossy();
            }
            let inv = S::of(1.0 / batch.len() as f64);
            let norm = grad
                .groups()
                .iter()
                .flat_map(|g| g.iter())
                .map(|&v| (v * inv).to_f64_lossy().powi(2))
                .sum::<f64>()
                .sqrt();
            if !norm.is_finite() {
                return Err(Error::Divergence { epoch, loss: norm });
            }
            let scale = inv * S::of(if norm > cfg.clip_norm { cfg.clip_norm / norm } else { 1.0 });
            for (p, g) in model.groups_mut().into_iter().zip(grad.groups()) {
                for (pv, &gv) in p.iter_mut().zip(g.iter()) {
                    *pv = *pv - lr * scale * gv;
                }
            }
        }
        let mean = epoch_loss / xs.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Divergence { epoch, loss: mean });
        }
        curve.push(mean);
    }
    Ok(TrainOutcome {
        model,
        loss_curve: curve,
    })
}
