//! Truncated multivariate power series of EqNet kernels in the correlations `t`.
//!
//! Every scalar of the kernel recursion is replaced by a dense series with a
//! per-variable degree cap, and every dual activation by a Taylor expansion
//! about the constant term of its argument. Truncating each variable at `cap`
//! commutes with products, so every stored coefficient is exact up to rounding.

use std::fmt::Write as _;

use crate::dual::{taylor_at, DualKind, DualSeries, KernelFamily};
use crate::error::{Error, Result};
use crate::kernel::{Arch, FirstLayer, Head};

/// Largest number of variables handled by the dense engine.
pub const MAX_SERIES_DIMS: usize = 3;
/// Memory budget for the series live during one `eqnet_series` call.
pub const SERIES_MEMORY_LIMIT: u128 = 2 << 30;
// series alive at once inside eqnet_series
const LIVE_SERIES: u128 = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedSeries {
    dims: usize,
    cap: usize,
    // lexicographic: the first variable is the most significant digit
    coeffs: Vec<f64>,
}

fn storage_len(dims: usize, cap: usize) -> Option<usize> {
    (cap + 1).checked_pow(dims as u32)
}

impl TruncatedSeries {
    pub fn zero(dims: usize, cap: usize) -> Result<Self> {
        let len = storage_len(dims, cap)
            .ok_or_else(|| Error::Argument(format!("series size overflows for dims={dims} cap={cap}")))?;
        Ok(Self {
            dims,
            cap,
            coeffs: vec![0.0; len],
        })
    }

    pub fn constant(dims: usize, cap: usize, value: f64) -> Result<Self> {
        let mut s = Self::zero(dims, cap)?;
        s.coeffs[0] = value;
        Ok(s)
    }

    /// The series `t_var`.
    pub fn variable(dims: usize, cap: usize, var: usize) -> Result<Self> {
        if var >= dims {
            return Err(Error::Dimension(format!("variable {var} of a {dims}-variable series")));
        }
        let mut s = Self::zero(dims, cap)?;
        if cap >= 1 {
            let idx = s.stride(var);
            s.coeffs[idx] = 1.0;
        }
        Ok(s)
    }

    /// Builds a series from a closure of the multi-index.
    pub fn from_fn<F: FnMut(&[usize]) -> f64>(dims: usize, cap: usize, mut f: F) -> Result<Self> {
        let mut s = Self::zero(dims, cap)?;
        let mut idx = vec![0; dims];
        for k in 0..s.coeffs.len() {
            s.multi_index_into(k, &mut idx);
            s.coeffs[k] = f(&idx);
        }
        Ok(s)
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    fn stride(&self, var: usize) -> usize {
        (self.cap + 1).pow((self.dims - 1 - var) as u32)
    }

    fn flat(&self, n: &[usize]) -> usize {
        n.iter().fold(0, |acc, &v| acc * (self.cap + 1) + v)
    }

    fn multi_index_into(&self, mut k: usize, out: &mut [usize]) {
        for v in (0..self.dims).rev() {
            out[v] = k % (self.cap + 1);
            k /= self.cap + 1;
        }
    }

    /// Coefficient `b_n`; zero beyond the cap.
    pub fn get(&self, n: &[usize]) -> f64 {
        if n.len() != self.dims || n.iter().any(|&v| v > self.cap) {
            return 0.0;
        }
        self.coeffs[self.flat(n)]
    }

    pub fn set(&mut self, n: &[usize], value: f64) -> Result<()> {
        if n.len() != self.dims || n.iter().any(|&v| v > self.cap) {
            return Err(Error::Dimension(format!("index {n:?} outside series")));
        }
        let k = self.flat(n);
        self.coeffs[k] = value;
        Ok(())
    }

    pub fn constant_term(&self) -> f64 {
        self.coeffs[0]
    }

    /// Sum of all stored coefficients, i.e. the partial sum at the all-ones vector.
    pub fn sum(&self) -> f64 {
        self.coeffs.iter().sum()
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.dims != other.dims || self.cap != other.cap {
            return Err(Error::Dimension(format!(
                "series shapes (dims={}, cap={}) and (dims={}, cap={})",
                self.dims, self.cap, other.dims, other.cap
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        let mut out = self.clone();
        out.add_assign(other);
        Ok(out)
    }

    fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += b;
        }
    }

    pub fn scale(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.coeffs.iter_mut().for_each(|c| *c *= factor);
        out
    }

    /// Product truncated at the per-variable cap.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        let mut out = Self::zero(self.dims, self.cap)?;
        mul_into(self, other, &mut out.coeffs);
        Ok(out)
    }

    /// Relabels variable `v` as `v + shift`. With `wrap` the index is taken
    /// modulo `dims`; otherwise mass landing past the last variable is an error.
    pub fn shift_variables(&self, shift: usize, wrap: bool) -> Result<Self> {
        if shift == 0 {
            return Ok(self.clone());
        }
        let mut out = Self::zero(self.dims, self.cap)?;
        let mut idx = vec![0; self.dims];
        let mut dst = vec![0; self.dims];
        for k in 0..self.coeffs.len() {
            let c = self.coeffs[k];
            if c == 0.0 {
                continue;
            }
            self.multi_index_into(k, &mut idx);
            dst.iter_mut().for_each(|v| *v = 0);
            for (v, &n) in idx.iter().enumerate() {
                if n == 0 {
                    continue;
                }
                let target = v + shift;
                let target = if wrap {
                    target % self.dims
                } else if target < self.dims {
                    target
                } else {
                    return Err(Error::Contract(format!(
                        "shift by {shift} moves variable {v} outside {} variables",
                        self.dims
                    )));
                };
                dst[target] = n;
            }
            let j = out.flat(&dst);
            out.coeffs[j] += c;
        }
        Ok(out)
    }

    /// Direct polynomial evaluation.
    pub fn eval(&self, t: &[f64]) -> Result<f64> {
        if t.len() != self.dims {
            return Err(Error::Dimension(format!(
                "{} values for {} variables",
                t.len(),
                self.dims
            )));
        }
        // nested Horner, last variable innermost
        fn rec(s: &TruncatedSeries, t: &[f64], var: usize, offset: usize) -> f64 {
            let stride = s.stride(var);
            let mut acc = 0.0;
            for n in (0..=s.cap).rev() {
                let inner = if var + 1 == s.dims {
                    s.coeffs[offset + n]
                } else {
                    rec(s, t, var + 1, offset + n * stride)
                };
                acc = acc * t[var] + inner;
            }
            acc
        }
        if self.dims == 0 {
            return Ok(self.coeffs[0]);
        }
        Ok(rec(self, t, 0, 0))
    }

    /// Bound on the neglected terms at any `t` with `max |t_i| <= rho`, valid
    /// when the untruncated series has nonnegative coefficients summing to 1.
    pub fn tail_bound(&self, rho: f64) -> f64 {
        (1.0 - self.sum()).max(0.0) * rho.abs().powi(self.cap as i32 + 1)
    }

    /// `b` at the multi-indices `n * pattern` for `n = 1..=n_max`.
    pub fn coefficient_ray(&self, pattern: &[usize], n_max: usize) -> Result<Vec<(usize, f64)>> {
        if pattern.len() != self.dims {
            return Err(Error::Dimension(format!(
                "pattern of length {} for {} variables",
                pattern.len(),
                self.dims
            )));
        }
        if pattern.iter().any(|&p| p > 1) {
            return Err(Error::Argument("ray patterns use entries 0 or 1".into()));
        }
        if n_max > self.cap {
            return Err(Error::Argument(format!("n_max {n_max} exceeds cap {}", self.cap)));
        }
        Ok((1..=n_max)
            .map(|n| {
                let idx: Vec<usize> = pattern.iter().map(|&p| p * n).collect();
                (n, self.get(&idx))
            })
            .collect())
    }

    /// CSV rows `n1,...,nd,b` in lexicographic order after a `#` header line.
    pub fn to_csv(&self, header: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {header} cap={}", self.cap);
        let names: Vec<String> = (1..=self.dims).map(|i| format!("n{i}")).collect();
        let _ = writeln!(out, "{},b", names.join(","));
        let mut idx = vec![0; self.dims];
        for (k, &c) in self.coeffs.iter().enumerate() {
            self.multi_index_into(k, &mut idx);
            let cols: Vec<String> = idx.iter().map(usize::to_string).collect();
            let _ = writeln!(out, "{},{:e}", cols.join(","), c);
        }
        out
    }
}

fn mul_into(a: &TruncatedSeries, b: &TruncatedSeries, out: &mut [f64]) {
    let dims = a.dims;
    let cap = a.cap;
    if dims == 0 {
        out[0] = a.coeffs[0] * b.coeffs[0];
        return;
    }
    let strides: Vec<usize> = (0..dims).map(|v| a.stride(v)).collect();
    let mut na = vec![0; dims];
    let mut nb = vec![0; dims];
    for (ia, &ca) in a.coeffs.iter().enumerate() {
        if ca == 0.0 {
            continue;
        }
        a.multi_index_into(ia, &mut na);
        let last = cap - na[dims - 1];
        // odometer over the leading variables of b, bounded by cap - na
        nb.iter_mut().for_each(|v| *v = 0);
        loop {
            let ib: usize = (0..dims - 1).map(|v| nb[v] * strides[v]).sum();
            let src = &b.coeffs[ib..=ib + last];
            let dst = &mut out[ia + ib..=ia + ib + last];
            for (o, &cb) in dst.iter_mut().zip(src) {
                *o += ca * cb;
            }
            let mut v = dims - 1;
            loop {
                if v == 0 {
                    break;
                }
                v -= 1;
                if nb[v] < cap - na[v] {
                    nb[v] += 1;
                    break;
                }
                nb[v] = 0;
                if v == 0 {
                    v = usize::MAX;
                    break;
                }
            }
            if v == usize::MAX || dims == 1 {
                break;
            }
        }
    }
}

/// `sum_j outer.d_j h^j` with `h = inner - c`, where `c` must equal the
/// expansion center of `outer`.
pub fn series_compose(outer: &DualSeries, inner: &TruncatedSeries) -> Result<TruncatedSeries> {
    let c = inner.constant_term();
    if (c - outer.center).abs() > 1e-12 {
        return Err(Error::Contract(format!(
            "expansion center {} does not match constant term {c}",
            outer.center
        )));
    }
    let mut h = inner.clone();
    h.coeffs[0] = 0.0;
    // h^j vanishes in the truncated ring once j exceeds dims * cap
    let top = (inner.dims * inner.cap).min(outer.coeffs.len() - 1);
    let mut acc = TruncatedSeries::constant(inner.dims, inner.cap, outer.coeffs[top])?;
    for j in (0..top).rev() {
        acc = acc.mul(&h)?;
        acc.coeffs[0] += outer.coeffs[j];
    }
    Ok(acc)
}

fn compose_dual(kind: DualKind, inner: &TruncatedSeries) -> Result<TruncatedSeries> {
    let order = inner.dims * inner.cap;
    let outer = taylor_at(kind, inner.constant_term(), order)?;
    series_compose(&outer, inner)
}

fn window_average(s: &TruncatedSeries, q: usize, wrap: bool, factor: f64) -> Result<TruncatedSeries> {
    let mut acc = s.clone();
    for r in 1..q {
        acc.add_assign(&s.shift_variables(r, wrap)?);
    }
    Ok(acc.scale(factor))
}

/// Series dimensions used for an arch: the receptive field, capped at `d`.
pub fn series_dims(arch: &Arch) -> usize {
    arch.receptive_field().min(arch.d)
}

/// Bytes needed by `eqnet_series` for this arch and cap.
pub fn required_bytes(arch: &Arch, cap: usize) -> u128 {
    (cap as u128 + 1).pow(series_dims(arch) as u32) * 8 * LIVE_SERIES
}

/// Power series of the EqNet kernel in the correlations of its receptive field.
pub fn eqnet_series(arch: &Arch, cap: usize) -> Result<TruncatedSeries> {
    if arch.head != Head::EqNet {
        return Err(Error::Argument(format!(
            "eqnet_series needs head=eqnet, got {}",
            arch.head
        )));
    }
    arch.validate()?;
    let dims = series_dims(arch);
    if dims > MAX_SERIES_DIMS {
        return Err(Error::Unsupported(format!(
            "series mode handles at most {MAX_SERIES_DIMS} variables, this arch needs {dims}"
        )));
    }
    let needed = required_bytes(arch, cap);
    if needed > SERIES_MEMORY_LIMIT {
        return Err(Error::Resource {
            what: format!("series with {dims} variables and cap {cap}"),
            required_bytes: needed,
            limit_bytes: SERIES_MEMORY_LIMIT,
        });
    }
    let wrap = arch.receptive_field() > arch.d;
    let q = arch.filter;
    let ntk = arch.family == KernelFamily::Ntk;

    let mut base = TruncatedSeries::variable(dims, cap, 0)?;
    if arch.first_layer == FirstLayer::ConvQ {
        base = window_average(&base, q, wrap, 1.0 / q as f64)?;
    }
    let mut sigma = compose_dual(DualKind::Kappa1, &base)?;
    let mut sdot = if ntk {
        Some(compose_dual(DualKind::Kappa0, &base)?)
    } else {
        None
    };
    let mut theta = base;

    for layer in 1..=arch.depth {
        if layer > 1 {
            let u = window_average(&sigma, q, wrap, 1.0 / q as f64)?;
            sigma = compose_dual(DualKind::Kappa1, &u)?;
            if ntk {
                sdot = Some(compose_dual(DualKind::Kappa0, &u)?);
            }
        }
        if let Some(sd) = &sdot {
            let mut inner = sd.mul(&theta)?;
            inner.add_assign(&sigma);
            theta = window_average(&inner, q, wrap, 0.5 / q as f64)?;
        }
    }
    Ok(if ntk { theta } else { sigma })
}
