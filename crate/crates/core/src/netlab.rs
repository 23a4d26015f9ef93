//! Finite-width cyclic ReLU CNN with hand-written reverse mode, trained by
//! full-batch gradient descent on circular-harmonic targets.
//!
//! Layer 1 maps each pixel (or each width-`q` window for `conv_q`) to `m`
//! channels; layers `2..=L` are width-`q` cyclic convolutions scaled by
//! `sqrt(2 / (m q))`. Convolutions run as im2col followed by one GEMM over the
//! whole batch.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::kernel::{Arch, FirstLayer, Head};
use crate::multisphere::{sample_uniform, MultiSphereSignal};
use crate::spectrum::{circular_harmonic, FrequencyPattern, Phase};

/// Loss above which training is declared divergent.
pub const DIVERGENCE_LOSS: f64 = 1e6;

/// Output scaling of the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadScale {
    /// Heads exactly as in the architecture table, unit multipliers.
    Paper,
    /// Head times `1/sqrt(m)` and per-layer gradient multipliers, so the
    /// tangent kernel of the trace and GAP heads is the kernel recursion.
    Ntk,
}

impl std::str::FromStr for HeadScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "paper" => Ok(HeadScale::Paper),
            "ntk" => Ok(HeadScale::Ntk),
            other => Err(Error::Argument(format!(
                "head_scale must be paper or ntk, got `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for HeadScale {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            HeadScale::Paper => "paper",
            HeadScale::Ntk => "ntk",
        })
    }
}

/// Weights of the network. `first` is `(taps * zeta) x m` and each entry of
/// `conv` is `(q * m) x m`, both row-major; row `r * width + c` holds tap `r`,
/// input channel `c`. `head` has `m` entries, or `d x m` for the trace head.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub arch: Arch,
    pub m: usize,
    pub first: Vec<f64>,
    pub conv: Vec<Vec<f64>>,
    pub head: Vec<f64>,
}

fn first_taps(arch: &Arch) -> usize {
    match arch.first_layer {
        FirstLayer::OneByOne => 1,
        FirstLayer::ConvQ => arch.filter,
    }
}

fn head_len(arch: &Arch, m: usize) -> usize {
    match arch.head {
        Head::Trace => arch.d * m,
        Head::EqNet | Head::Gap => m,
    }
}

impl NetParams {
    /// I.i.d. standard normal weights.
    pub fn init(arch: &Arch, m: usize, seed: u64) -> Result<Self> {
        arch.validate()?;
        if m == 0 {
            return Err(Error::Config {
                key: "m".into(),
                message: "width must be >= 1".into(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };
        let first = draw(first_taps(arch) * arch.zeta * m);
        let conv = (1..arch.depth).map(|_| draw(arch.filter * m * m)).collect();
        let head = draw(head_len(arch, m));
        Ok(Self {
            arch: *arch,
            m,
            first,
            conv,
            head,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            arch: self.arch,
            m: self.m,
            first: vec![0.0; self.first.len()],
            conv: self.conv.iter().map(|w| vec![0.0; w.len()]).collect(),
            head: vec![0.0; self.head.len()],
        }
    }

    /// Parameter blocks in the order first layer, conv layers 2..=L, head.
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![&self.first];
        out.extend(self.conv.iter().map(|w| w.as_slice()));
        out.push(&self.head);
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = vec![&mut self.first];
        out.extend(self.conv.iter_mut());
        out.push(&mut self.head);
        out
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }
}

/// Gradient multipliers per block, aligned with `NetParams::blocks`.
pub fn layer_multipliers(depth: usize, scale: HeadScale) -> Vec<f64> {
    match scale {
        HeadScale::Paper => vec![1.0; depth + 1],
        HeadScale::Ntk => {
            let mut out = Vec::with_capacity(depth + 1);
            out.push(0.5f64.powi(depth as i32 - 1));
            for l in 2..=depth {
                out.push(0.5f64.powi((depth - l + 1) as i32));
            }
            out.push(1.0);
            out
        }
    }
}

fn head_factor(params: &NetParams, scale: HeadScale) -> f64 {
    let base = match scale {
        HeadScale::Paper => 1.0,
        HeadScale::Ntk => 1.0 / (params.m as f64).sqrt(),
    };
    let d = params.arch.d as f64;
    match params.arch.head {
        Head::EqNet => base,
        Head::Trace => base / d.sqrt(),
        Head::Gap => base / d,
    }
}

// C = alpha * op(A) * op(B) + beta * C with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
) {
    assert!(m == 0 || k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || n == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!(m == 0 || n == 0 || (m - 1) * rsc + n - 1 < c.len());
    // SAFETY: the asserts bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

// Rows `s*d + i` of the result hold the `taps` cyclic neighbours `i..i+taps`
// of row `s*d + i` in `h`, each `width` wide.
fn im2col(h: &[f64], batch: usize, d: usize, width: usize, taps: usize) -> Vec<f64> {
    let mut out = vec![0.0; batch * d * taps * width];
    for s in 0..batch {
        for i in 0..d {
            let row = (s * d + i) * taps * width;
            for r in 0..taps {
                let src = (s * d + (i + r) % d) * width;
                out[row + r * width..row + (r + 1) * width].copy_from_slice(&h[src..src + width]);
            }
        }
    }
    out
}

fn col2im_add(dp: &[f64], batch: usize, d: usize, width: usize, taps: usize, dh: &mut [f64]) {
    for s in 0..batch {
        for i in 0..d {
            let row = (s * d + i) * taps * width;
            for r in 0..taps {
                let dst = (s * d + (i + r) % d) * width;
                for (o, &v) in dh[dst..dst + width]
                    .iter_mut()
                    .zip(&dp[row + r * width..row + (r + 1) * width])
                {
                    *o += v;
                }
            }
        }
    }
}

// Cached activations of one batch.
struct Tape {
    batch: usize,
    // im2col inputs of every layer
    cols: Vec<Vec<f64>>,
    // pre-activations of every layer, (batch*d) x m
    pre: Vec<Vec<f64>>,
    last: Vec<f64>,
    outputs: Vec<f64>,
}

fn check_inputs(params: &NetParams, xs: &[&MultiSphereSignal]) -> Result<()> {
    let a = &params.arch;
    if let Some(x) = xs.iter().find(|x| x.zeta() != a.zeta || x.d() != a.d) {
        return Err(Error::Dimension(format!(
            "signal shape ({}, {}) does not match arch (zeta={}, d={})",
            x.zeta(),
            x.d(),
            a.zeta,
            a.d
        )));
    }
    let expected_first = first_taps(a) * a.zeta * params.m;
    if params.first.len() != expected_first
        || params.conv.len() + 1 != a.depth
        || params.conv.iter().any(|w| w.len() != a.filter * params.m * params.m)
        || params.head.len() != head_len(a, params.m)
    {
        return Err(Error::Dimension("parameter shapes do not match the arch".into()));
    }
    Ok(())
}

fn run_forward(params: &NetParams, xs: &[&MultiSphereSignal], scale: HeadScale) -> Result<Tape> {
    check_inputs(params, xs)?;
    let a = &params.arch;
    let (d, m, q, zeta) = (a.d, params.m, a.filter, a.zeta);
    let batch = xs.len();
    let rows = batch * d;
    let mut input = Vec::with_capacity(rows * zeta);
    for x in xs {
        input.extend_from_slice(x.as_slice());
    }
    let taps = first_taps(a);
    let mut cols = Vec::with_capacity(a.depth);
    let mut pre = Vec::with_capacity(a.depth);

    let col = im2col(&input, batch, d, zeta, taps);
    let mut g = vec![0.0; rows * m];
    let s1 = 1.0 / (taps as f64).sqrt();
    gemm(
        rows,
        taps * zeta,
        m,
        s1,
        &col,
        taps * zeta,
        1,
        &params.first,
        m,
        1,
        0.0,
        &mut g,
        m,
    );
    cols.push(col);
    let mut h: Vec<f64> = g.iter().map(|&v| v.max(0.0)).collect();
    pre.push(g);

    let s = (2.0 / (m * q) as f64).sqrt();
    for w in &params.conv {
        let col = im2col(&h, batch, d, m, q);
        let mut g = vec![0.0; rows * m];
        gemm(rows, q * m, m, s, &col, q * m, 1, w, m, 1, 0.0, &mut g, m);
        cols.push(col);
        h = g.iter().map(|&v| v.max(0.0)).collect();
        pre.push(g);
    }

    let hf = head_factor(params, scale);
    let outputs = (0..batch)
        .map(|b| {
            let block = &h[b * d * m..(b + 1) * d * m];
            let acc: f64 = match a.head {
                Head::EqNet => block[..m].iter().zip(&params.head).map(|(x, w)| x * w).sum(),
                Head::Trace => block.iter().zip(&params.head).map(|(x, w)| x * w).sum(),
                Head::Gap => (0..d)
                    .map(|i| {
                        block[i * m..(i + 1) * m]
                            .iter()
                            .zip(&params.head)
                            .map(|(x, w)| x * w)
                            .sum::<f64>()
                    })
                    .sum(),
            };
            hf * acc
        })
        .collect();
    Ok(Tape {
        batch,
        cols,
        pre,
        last: h,
        outputs,
    })
}

// Gradient of sum_b e_b f(x_b).
fn run_backward(params: &NetParams, tape: &Tape, e: &[f64], scale: HeadScale) -> NetParams {
    let a = &params.arch;
    let (d, m, q, zeta) = (a.d, params.m, a.filter, a.zeta);
    let batch = tape.batch;
    let rows = batch * d;
    let hf = head_factor(params, scale);
    let mut grad = params.zeros_like();

    let mut dh = vec![0.0; rows * m];
    for b in 0..batch {
        let coef = hf * e[b];
        if coef == 0.0 {
            continue;
        }
        let h = &tape.last[b * d * m..(b + 1) * d * m];
        let dhb = &mut dh[b * d * m..(b + 1) * d * m];
        match a.head {
            Head::EqNet => {
                for c in 0..m {
                    grad.head[c] += coef * h[c];
                    dhb[c] = coef * params.head[c];
                }
            }
            Head::Trace => {
                for k in 0..d * m {
                    grad.head[k] += coef * h[k];
                    dhb[k] = coef * params.head[k];
                }
            }
            Head::Gap => {
                for i in 0..d {
                    for c in 0..m {
                        grad.head[c] += coef * h[i * m + c];
                        dhb[i * m + c] = coef * params.head[c];
                    }
                }
            }
        }
    }

    let s = (2.0 / (m * q) as f64).sqrt();
    for l in (1..a.depth).rev() {
        let mut dg = dh;
        for (v, &p) in dg.iter_mut().zip(&tape.pre[l]) {
            if p <= 0.0 {
                *v = 0.0;
            }
        }
        let col = &tape.cols[l];
        // dW = s * col^T dg
        gemm(
            q * m,
            rows,
            m,
            s,
            col,
            1,
            q * m,
            &dg,
            m,
            1,
            0.0,
            &mut grad.conv[l - 1],
            m,
        );
        // dcol = s * dg W^T
        let mut dcol = vec![0.0; rows * q * m];
        gemm(
            rows,
            m,
            q * m,
            s,
            &dg,
            m,
            1,
            &params.conv[l - 1],
            1,
            m,
            0.0,
            &mut dcol,
            q * m,
        );
        dh = vec![0.0; rows * m];
        col2im_add(&dcol, batch, d, m, q, &mut dh);
    }
    let mut dg = dh;
    for (v, &p) in dg.iter_mut().zip(&tape.pre[0]) {
        if p <= 0.0 {
            *v = 0.0;
        }
    }
    let taps = first_taps(a);
    let s1 = 1.0 / (taps as f64).sqrt();
    gemm(
        taps * zeta,
        rows,
        m,
        s1,
        &tape.cols[0],
        1,
        taps * zeta,
        &dg,
        m,
        1,
        0.0,
        &mut grad.first,
        m,
    );
    grad
}

/// Network output for one input.
pub fn forward(params: &NetParams, x: &MultiSphereSignal, scale: HeadScale) -> Result<f64> {
    Ok(run_forward(params, &[x], scale)?.outputs[0])
}

pub fn forward_batch(params: &NetParams, xs: &[MultiSphereSignal], scale: HeadScale) -> Result<Vec<f64>> {
    let refs: Vec<&MultiSphereSignal> = xs.iter().collect();
    Ok(run_forward(params, &refs, scale)?.outputs)
}

/// The equivariant map: the EqNet head applied at every output position.
/// Needs a head with `m` weights.
pub fn equivariant_outputs(params: &NetParams, x: &MultiSphereSignal, scale: HeadScale) -> Result<Vec<f64>> {
    if params.arch.head == Head::Trace {
        return Err(Error::Argument("the trace head has position-specific weights".into()));
    }
    let eq = NetParams {
        arch: params.arch.with_head(Head::EqNet),
        ..params.clone()
    };
    let tape = run_forward(&eq, &[x], scale)?;
    let m = params.m;
    let hf = head_factor(&eq, scale);
    Ok((0..params.arch.d)
        .map(|i| {
            hf * tape.last[i * m..(i + 1) * m]
                .iter()
                .zip(&params.head)
                .map(|(h, w)| h * w)
                .sum::<f64>()
        })
        .collect())
}

/// Gradient of the mean squared error `(1/n) sum (f(x) - y)^2`, and the loss.
pub fn grad(params: &NetParams, batch: &[(MultiSphereSignal, f64)], scale: HeadScale) -> Result<(NetParams, f64)> {
    if batch.is_empty() {
        return Err(Error::Argument("gradient of an empty batch".into()));
    }
    let xs: Vec<&MultiSphereSignal> = batch.iter().map(|(x, _)| x).collect();
    let tape = run_forward(params, &xs, scale)?;
    let n = batch.len() as f64;
    let residual: Vec<f64> = tape.outputs.iter().zip(batch).map(|(f, (_, y))| f - y).collect();
    let loss = residual.iter().map(|r| r * r).sum::<f64>() / n;
    let e: Vec<f64> = residual.iter().map(|r| 2.0 * r / n).collect();
    Ok((run_backward(params, &tape, &e, scale), loss))
}

/// `df/dtheta` at one input.
pub fn output_gradient(params: &NetParams, x: &MultiSphereSignal, scale: HeadScale) -> Result<NetParams> {
    let tape = run_forward(params, &[x], scale)?;
    Ok(run_backward(params, &tape, &[1.0], scale))
}

/// Empirical tangent kernel `sum_b mult_b <df/dtheta_b(x), df/dtheta_b(z)>`.
pub fn empirical_ntk(
    params: &NetParams,
    x: &MultiSphereSignal,
    z: &MultiSphereSignal,
    scale: HeadScale,
) -> Result<f64> {
    let gx = output_gradient(params, x, scale)?;
    let gz = output_gradient(params, z, scale)?;
    let mult = layer_multipliers(params.arch.depth, scale);
    Ok(gx
        .blocks()
        .iter()
        .zip(gz.blocks())
        .zip(&mult)
        .map(|((a, b), w)| w * a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>())
        .sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub arch: Arch,
    pub m: usize,
    pub n_samples: usize,
    pub lr: f64,
    pub threshold: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub target: FrequencyPattern,
    pub phases: Vec<Phase>,
    pub head_scale: HeadScale,
    /// Fit `y` with `f - f_0`, the change from the initial network.
    pub center: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let bad = |key: &str, message: String| {
            Err(Error::Config {
                key: key.into(),
                message,
            })
        };
        if self.arch.zeta != 2 {
            return bad(
                "zeta",
                format!("training targets need zeta = 2, got {}", self.arch.zeta),
            );
        }
        if self.m == 0 {
            return bad("m", "width must be >= 1".into());
        }
        if self.n_samples == 0 {
            return bad("samples", "need at least one sample".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", format!("must be > 0, got {}", self.lr));
        }
        if !(self.threshold > 0.0) {
            return bad("threshold", format!("must be > 0, got {}", self.threshold));
        }
        if self.target.d() != self.arch.d {
            return bad(
                "target",
                format!("pattern has {} entries, d={}", self.target.d(), self.arch.d),
            );
        }
        if self.phases.len() != self.arch.d {
            return bad("phases", format!("{} phases for d={}", self.phases.len(), self.arch.d));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    /// First iteration whose loss is at most the threshold, or `max_iters`.
    pub iterations: usize,
    pub converged: bool,
    pub final_loss: f64,
    pub loss_curve: Vec<f64>,
}

/// Training inputs and the target normalized to unit second moment.
pub fn training_set(cfg: &TrainConfig) -> Result<Vec<(MultiSphereSignal, f64)>> {
    let xs = sample_uniform(cfg.arch.zeta, cfg.arch.d, cfg.n_samples, cfg.seed)?;
    let ys: Vec<f64> = xs
        .iter()
        .map(|x| circular_harmonic(&cfg.target, &cfg.phases, x))
        .collect();
    let rms = (ys.iter().map(|y| y * y).sum::<f64>() / ys.len() as f64).sqrt();
    if rms < 1e-12 {
        return Err(Error::Data(format!(
            "target ({}) vanishes on the training set",
            cfg.target
        )));
    }
    Ok(xs.into_iter().zip(ys).map(|(x, y)| (x, y / rms)).collect())
}

/// Full-batch gradient descent until the training MSE reaches the threshold.
pub fn train_to_threshold(cfg: &TrainConfig) -> Result<TrainResult> {
    train_with(cfg, cfg.max_iters, true)
}

fn train_with(cfg: &TrainConfig, iters: usize, stop_at_threshold: bool) -> Result<TrainResult> {
    cfg.validate()?;
    let mut params = NetParams::init(&cfg.arch, cfg.m, cfg.seed)?;
    let mut data = training_set(cfg)?;
    if cfg.center {
        let xs: Vec<MultiSphereSignal> = data.iter().map(|(x, _)| x.clone()).collect();
        let f0 = forward_batch(&params, &xs, cfg.head_scale)?;
        for ((_, y), f) in data.iter_mut().zip(f0) {
            *y += f;
        }
    }
    let mult = layer_multipliers(cfg.arch.depth, cfg.head_scale);
    let mut curve = Vec::new();
    for it in 0..=iters {
        let (g, loss) = grad(&params, &data, cfg.head_scale)?;
        curve.push(loss);
        if !loss.is_finite() || loss > DIVERGENCE_LOSS {
            return Err(Error::Divergence { iteration: it, loss });
        }
        if stop_at_threshold && loss <= cfg.threshold {
            return Ok(TrainResult {
                iterations: it,
                converged: true,
                final_loss: loss,
                loss_curve: curve,
            });
        }
        if it == iters {
            break;
        }
        for ((p, gb), w) in params.blocks_mut().into_iter().zip(g.blocks()).zip(&mult) {
            let step = cfg.lr * w;
            for (v, dv) in p.iter_mut().zip(gb) {
                *v -= step * dv;
            }
        }
    }
    let final_loss = *curve.last().unwrap();
    Ok(TrainResult {
        iterations: iters,
        converged: final_loss <= cfg.threshold,
        final_loss,
        loss_curve: curve,
    })
}

/// Doubles the learning rate from `cfg.lr` while a `probe_iters` run stays
/// stable and ends below its starting loss, then halves the largest stable
/// rate once.
pub fn lr_search(cfg: &TrainConfig, probe_iters: usize, max_doublings: usize) -> Result<f64> {
    let stable = |lr: f64| -> Result<bool> {
        let probe = TrainConfig { lr, ..cfg.clone() };
        match train_with(&probe, probe_iters, false) {
            Ok(r) => Ok(r.final_loss < r.loss_curve[0]),
            Err(Error::Divergence { .. }) => Ok(false),
            Err(e) => Err(e),
        }
    };
    if !stable(cfg.lr)? {
        return Err(Error::Divergence {
            iteration: probe_iters,
            loss: f64::NAN,
        });
    }
    let mut lr = cfg.lr;
    for _ in 0..max_doublings {
        if !stable(2.0 * lr)? {
            break;
        }
        lr *= 2.0;
    }
    Ok(lr / 2.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub target: FrequencyPattern,
    pub m: usize,
    pub lr: f64,
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
    pub final_loss: f64,
}

impl RunRecord {
    pub fn from_result(cfg: &TrainConfig, r: &TrainResult) -> Self {
        Self {
            target: cfg.target.clone(),
            m: cfg.m,
            lr: cfg.lr,
            seed: cfg.seed,
            iterations: r.iterations,
            converged: r.converged,
            final_loss: r.final_loss,
        }
    }
}

pub const RUN_RECORD_HEADER: &str = "k_pattern,m,lr,seed,iterations,converged,final_loss";

/// Run records as CSV; pattern entries are joined with `:`.
pub fn run_records_to_csv(records: &[RunRecord]) -> String {
    let mut out = format!("{RUN_RECORD_HEADER}\n");
    for r in records {
        let k: Vec<String> = r.target.0.iter().map(usize::to_string).collect();
        let _ = writeln!(
            out,
            "{},{},{:e},{},{},{},{:e}",
            k.join(":"),
            r.m,
            r.lr,
            r.seed,
            r.iterations,
            r.converged,
            r.final_loss
        );
    }
    out
}

/// Trains one network per target with otherwise identical settings.
pub fn run_matrix(base: &TrainConfig, targets: &[FrequencyPattern]) -> Result<Vec<RunRecord>> {
    use rayon::prelude::*;
    targets
        .par_iter()
        .map(|t| {
            let cfg = TrainConfig {
                target: t.clone(),
                ..base.clone()
            };
            let r = train_to_threshold(&cfg)?;
            Ok(RunRecord::from_result(&cfg, &r))
        })
        .collect()
}
