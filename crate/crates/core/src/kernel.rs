//! Pointwise evaluation of convolutional GPK and NTK kernels.
//!
//! The EqNet kernel of a one-dimensional cyclic ReLU CNN depends on a pair of
//! inputs only through the per-pixel correlations `t_i = <x^(i), z^(i)>`, so
//! the core recursion runs on a length-`d` vector. The trace and GAP heads
//! average EqNet evaluations over shifted diagonals of the pixel Gram matrix.

use std::fmt;
use std::str::FromStr;

use crate::dual::{fc_kernel_unchecked, kappa0_unchecked, kappa1_unchecked, KernelFamily};
use crate::error::{Error, Result};
use crate::multisphere::{pixel_gram, tvec, MultiSphereSignal, TVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Head {
    EqNet,
    Trace,
    Gap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FirstLayer {
    /// Pointwise first layer; only the deeper layers mix pixels.
    OneByOne,
    /// First layer is itself a width-`q` convolution, averaged over its window.
    ConvQ,
}

macro_rules! keyword_enum {
    ($ty:ty, $($variant:expr => $name:literal),+ $(,)?) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let s = match self { $( v if *v == $variant => $name, )+ _ => unreachable!() };
                f.write_str(s)
            }
        }
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s.trim() {
                    $( $name => Ok($variant), )+
                    other => Err(format!(
                        "`{other}` is not one of {}",
                        [$($name),+].join(", ")
                    )),
                }
            }
        }
    };
}

keyword_enum!(KernelFamily, KernelFamily::Gpk => "gpk", KernelFamily::Ntk => "ntk");
keyword_enum!(Head, Head::EqNet => "eqnet", Head::Trace => "trace", Head::Gap => "gap");
keyword_enum!(FirstLayer, FirstLayer::OneByOne => "one_by_one", FirstLayer::ConvQ => "conv_q");

/// Network architecture that fixes a kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Arch {
    pub family: KernelFamily,
    pub head: Head,
    /// Number of layers `L`.
    pub depth: usize,
    /// Convolution filter width `q`.
    pub filter: usize,
    pub d: usize,
    pub zeta: usize,
    pub first_layer: FirstLayer,
}

pub const ARCH_KEYS: [&str; 7] = ["family", "head", "L", "q", "d", "zeta", "first_layer"];

impl Arch {
    pub fn new(family: KernelFamily, head: Head, depth: usize, filter: usize, d: usize, zeta: usize) -> Result<Self> {
        let arch = Self {
            family,
            head,
            depth,
            filter,
            d,
            zeta,
            first_layer: FirstLayer::OneByOne,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn with_first_layer(mut self, first_layer: FirstLayer) -> Self {
        self.first_layer = first_layer;
        self
    }

    pub fn with_head(mut self, head: Head) -> Self {
        self.head = head;
        self
    }

    pub fn with_family(mut self, family: KernelFamily) -> Self {
        self.family = family;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let range = |key: &str, message: String| {
            Err(Error::Config {
                key: key.to_string(),
                message,
            })
        };
        if self.depth < 1 {
            return range("L", format!("must be >= 1, got {}", self.depth));
        }
        if self.filter < 1 {
            return range("q", format!("must be >= 1, got {}", self.filter));
        }
        if self.filter > 1 && self.depth < 2 && self.first_layer == FirstLayer::OneByOne {
            return range("L", format!("must be >= 2 when q > 1, got {}", self.depth));
        }
        if self.d < 1 {
            return range("d", format!("must be >= 1, got {}", self.d));
        }
        if self.zeta < 2 {
            return range("zeta", format!("must be >= 2, got {}", self.zeta));
        }
        Ok(())
    }

    /// Number of leading pixels the EqNet kernel depends on, before cyclic wrap.
    pub fn receptive_field(&self) -> usize {
        let q1 = self.filter - 1;
        let mut layers = self.depth - 1;
        if self.family == KernelFamily::Ntk {
            // the tangent recursion aggregates over the filter at every layer
            layers += 1;
        }
        if self.first_layer == FirstLayer::ConvQ {
            layers += 1;
        }
        layers * q1 + 1
    }

    /// Flat `key=value` lines in the canonical key order.
    pub fn to_kv(&self) -> String {
        format!(
            "family={}\nhead={}\nL={}\nq={}\nd={}\nzeta={}\nfirst_layer={}\n",
            self.family, self.head, self.depth, self.filter, self.d, self.zeta, self.first_layer
        )
    }

    /// Space-separated `key=value` pairs on one line.
    pub fn to_inline(&self) -> String {
        self.to_kv().trim_end().replace('\n', " ")
    }

    /// Builds an arch from `(key, value)` pairs. Missing `first_layer`
    /// defaults to `one_by_one`; every other key is required.
    pub fn from_pairs<'a, I: IntoIterator<Item = (&'a str, &'a str)>>(pairs: I) -> Result<Self> {
        let mut family = None;
        let mut head = None;
        let mut depth = None;
        let mut filter = None;
        let mut d = None;
        let mut zeta = None;
        let mut first_layer = FirstLayer::OneByOne;
        fn cfg<T: FromStr>(key: &str, v: &str) -> Result<T>
        where
            T::Err: fmt::Display,
        {
            v.trim().parse::<T>().map_err(|e| Error::Config {
                key: key.to_string(),
                message: e.to_string(),
            })
        }
        for (k, v) in pairs {
            match k.trim() {
                "family" => family = Some(cfg::<KernelFamily>(k, v)?),
                "head" => head = Some(cfg::<Head>(k, v)?),
                "L" => depth = Some(cfg::<usize>(k, v)?),
                "q" => filter = Some(cfg::<usize>(k, v)?),
                "d" => d = Some(cfg::<usize>(k, v)?),
                "zeta" => zeta = Some(cfg::<usize>(k, v)?),
                "first_layer" => first_layer = cfg::<FirstLayer>(k, v)?,
                other => {
                    return Err(Error::Config {
                        key: other.to_string(),
                        message: format!("unknown key; expected one of {}", ARCH_KEYS.join(", ")),
                    })
                }
            }
        }
        let missing = |key: &str| Error::Config {
            key: key.to_string(),
            message: "missing".into(),
        };
        let arch = Self {
            family: family.ok_or_else(|| missing("family"))?,
            head: head.ok_or_else(|| missing("head"))?,
            depth: depth.ok_or_else(|| missing("L"))?,
            filter: filter.ok_or_else(|| missing("q"))?,
            d: d.ok_or_else(|| missing("d"))?,
            zeta: zeta.ok_or_else(|| missing("zeta"))?,
            first_layer,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// Parses `key=value` tokens separated by whitespace or newlines; `#` starts a comment.
    pub fn from_kv(text: &str) -> Result<Self> {
        let pairs = split_pairs(text)?;
        Self::from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))
    }
}

/// Splits flat config text into `(key, value)` pairs. Accepts one pair per
/// line (`key = value`) or several space-separated `key=value` tokens.
pub fn split_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() || (line.starts_with('[') && line.ends_with(']')) {
            continue;
        }
        let normalized = line.replace(" = ", "=").replace("= ", "=").replace(" =", "=");
        for token in quoted_tokens(&normalized) {
            let (k, v) = token.split_once('=').ok_or_else(|| Error::Parse {
                line: n + 1,
                message: format!("expected key=value, got `{token}`"),
            })?;
            out.push((k.to_string(), v.replace('"', "")));
        }
    }
    Ok(out)
}

/// Whitespace-separated tokens; whitespace inside double quotes does not split.
fn quoted_tokens(line: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut quoted = false;
    for c in line.chars() {
        match c {
            '"' => {
                quoted = !quoted;
                current.push(c);
            }
            c if c.is_whitespace() && !quoted => {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
            }
            c => current.push(c),
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_inline())
    }
}

/// A kernel on `MS(zeta, d)` that depends on its inputs only through the
/// correlation vector `t`.
pub trait MultiDotKernel: Sync {
    fn dims(&self) -> usize;

    /// Evaluates at `t`. `scratch` is reusable working memory owned by the caller.
    fn eval_t(&self, t: &[f64], scratch: &mut Vec<f64>) -> f64;
}

/// EqNet kernel of an architecture.
#[derive(Debug, Clone, Copy)]
pub struct EqNetKernel(pub Arch);

impl MultiDotKernel for EqNetKernel {
    fn dims(&self) -> usize {
        self.0.d
    }

    fn eval_t(&self, t: &[f64], scratch: &mut Vec<f64>) -> f64 {
        eqnet_raw(&self.0, t, scratch)
    }
}

/// Fully connected kernel applied to the mean correlation, which is the
/// normalized inner product of the flattened signals.
#[derive(Debug, Clone, Copy)]
pub struct FcKernel {
    pub depth: usize,
    pub family: KernelFamily,
    pub d: usize,
}

impl MultiDotKernel for FcKernel {
    fn dims(&self) -> usize {
        self.d
    }

    fn eval_t(&self, t: &[f64], _scratch: &mut Vec<f64>) -> f64 {
        let u = t.iter().sum::<f64>() / t.len() as f64;
        fc_kernel_unchecked(u.clamp(-1.0, 1.0), self.depth, self.family)
    }
}

/// Any closure of the correlation vector.
pub struct FnKernel<F> {
    pub d: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> MultiDotKernel for FnKernel<F> {
    fn dims(&self) -> usize {
        self.d
    }

    fn eval_t(&self, t: &[f64], _scratch: &mut Vec<f64>) -> f64 {
        (self.f)(t)
    }
}

#[inline]
fn window_mean(src: &[f64], i: usize, q: usize) -> f64 {
    let d = src.len();
    let mut acc = 0.0;
    for r in 0..q {
        acc += src[(i + r) % d];
    }
    acc / q as f64
}

/// The diagonal recursion on a correlation vector. No validation.
pub(crate) fn eqnet_raw(arch: &Arch, t: &[f64], scratch: &mut Vec<f64>) -> f64 {
    let d = t.len();
    let q = arch.filter;
    let ntk = arch.family == KernelFamily::Ntk;
    scratch.clear();
    scratch.resize(4 * d, 0.0);
    let (sigma, rest) = scratch.split_at_mut(d);
    let (sdot, rest) = rest.split_at_mut(d);
    let (theta, tmp) = rest.split_at_mut(d);

    match arch.first_layer {
        FirstLayer::OneByOne => theta.copy_from_slice(t),
        FirstLayer::ConvQ => {
            for i in 0..d {
                theta[i] = window_mean(t, i, q);
            }
        }
    }
    for i in 0..d {
        sigma[i] = kappa1_unchecked(theta[i]);
        if ntk {
            sdot[i] = kappa0_unchecked(theta[i]);
        }
    }

    let half = 0.5 / q as f64;
    for layer in 1..=arch.depth {
        if layer > 1 {
            for i in 0..d {
                tmp[i] = window_mean(sigma, i, q);
            }
            for i in 0..d {
                sigma[i] = kappa1_unchecked(tmp[i]);
                if ntk {
                    sdot[i] = kappa0_unchecked(tmp[i]);
                }
            }
        }
        if ntk {
            for i in 0..d {
                let mut acc = 0.0;
                for r in 0..q {
                    let j = (i + r) % d;
                    acc += sdot[j] * theta[j] + sigma[j];
                }
                tmp[i] = half * acc;
            }
            theta.copy_from_slice(tmp);
        }
    }
    if ntk {
        theta[0]
    } else {
        sigma[0]
    }
}

fn check_t(arch: &Arch, t: &[f64]) -> Result<()> {
    if t.len() != arch.d {
        return Err(Error::Dimension(format!(
            "correlation vector has {} entries, arch has d={}",
            t.len(),
            arch.d
        )));
    }
    Ok(())
}

/// EqNet kernel at a correlation vector.
pub fn eqnet_eval(arch: &Arch, t: &TVector) -> Result<f64> {
    if arch.head != Head::EqNet {
        return Err(Error::Argument(format!(
            "eqnet_eval needs head=eqnet, got {}",
            arch.head
        )));
    }
    check_t(arch, t.as_slice())?;
    Ok(eqnet_raw(arch, t.as_slice(), &mut Vec::new()))
}

/// Kernel value for a pair of signals under the arch's head.
pub fn kernel_eval(arch: &Arch, x: &MultiSphereSignal, z: &MultiSphereSignal) -> Result<f64> {
    if x.zeta() != arch.zeta || x.d() != arch.d {
        return Err(Error::Dimension(format!(
            "signal shape ({}, {}) does not match arch (zeta={}, d={})",
            x.zeta(),
            x.d(),
            arch.zeta,
            arch.d
        )));
    }
    let mut scratch = Vec::new();
    match arch.head {
        Head::EqNet => Ok(eqnet_raw(arch, tvec(x, z)?.as_slice(), &mut scratch)),
        Head::Trace => {
            let t = tvec(x, z)?;
            Ok(trace_from_t(arch, t.as_slice(), &mut scratch))
        }
        Head::Gap => {
            let g = pixel_gram(x, z)?;
            let d = arch.d;
            let mut acc = 0.0;
            for i in 0..d {
                for j in 0..d {
                    acc += eqnet_raw(arch, &g.shifted_diagonal(i, j), &mut scratch);
                }
            }
            Ok(acc / (d * d) as f64)
        }
    }
}

/// Trace-head kernel from the correlation vector alone.
pub(crate) fn trace_from_t(arch: &Arch, t: &[f64], scratch: &mut Vec<f64>) -> f64 {
    let d = t.len();
    let mut shifted = vec![0.0; d];
    let mut acc = 0.0;
    for i in 0..d {
        for a in 0..d {
            shifted[a] = t[(a + i) % d];
        }
        acc += eqnet_raw(arch, &shifted, scratch);
    }
    acc / d as f64
}

/// Full `d x d` matrices `(Sigma^(L), Theta^(L))` from the pixel Gram matrix.
/// Reference implementation for the diagonal recursion.
pub fn full_matrix_kernels(arch: &Arch, x: &MultiSphereSignal, z: &MultiSphereSignal) -> Result<(Vec<f64>, Vec<f64>)> {
    let g = pixel_gram(x, z)?;
    let d = arch.d;
    if g.d() != d {
        return Err(Error::Dimension("signal size does not match arch".into()));
    }
    let q = arch.filter;
    let at = |i: usize, j: usize| i * d + j;
    let window = |m: &[f64], i: usize, j: usize| -> f64 {
        (0..q).map(|r| m[at((i + r) % d, (j + r) % d)]).sum::<f64>() / q as f64
    };
    let mut base: Vec<f64> = (0..d * d).map(|k| g.get(k / d, k % d)).collect();
    if arch.first_layer == FirstLayer::ConvQ {
        base = (0..d * d).map(|k| window(&base, k / d, k % d)).collect();
    }
    let mut theta = base.clone();
    let mut sigma: Vec<f64> = base.iter().map(|&u| kappa1_unchecked(u)).collect();
    let mut sdot: Vec<f64> = base.iter().map(|&u| kappa0_unchecked(u)).collect();
    for layer in 1..=arch.depth {
        if layer > 1 {
            let u: Vec<f64> = (0..d * d).map(|k| window(&sigma, k / d, k % d)).collect();
            sigma = u.iter().map(|&v| kappa1_unchecked(v)).collect();
            sdot = u.iter().map(|&v| kappa0_unchecked(v)).collect();
        }
        let inner: Vec<f64> = (0..d * d).map(|k| sdot[k] * theta[k] + sigma[k]).collect();
        theta = (0..d * d).map(|k| 0.5 * window(&inner, k / d, k % d)).collect();
    }
    Ok((sigma, theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multisphere::sample_uniform;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn arch(family: KernelFamily, head: Head, depth: usize, q: usize, d: usize) -> Arch {
        Arch::new(family, head, depth, q, d, 3).unwrap()
    }

    fn all_archs(d: usize) -> Vec<Arch> {
        let mut v = Vec::new();
        for family in [KernelFamily::Gpk, KernelFamily::Ntk] {
            for head in [Head::EqNet, Head::Trace, Head::Gap] {
                for first in [FirstLayer::OneByOne, FirstLayer::ConvQ] {
                    v.push(arch(family, head, 3, 2, d).with_first_layer(first));
                }
            }
        }
        v
    }

    #[test]
    fn ones_map_to_one() {
        for a in all_archs(5) {
            let a = a.with_head(Head::EqNet);
            let v = eqnet_eval(&a, &TVector::new(vec![1.0; 5]).unwrap()).unwrap();
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn hand_unrolled_values() {
        let t = TVector::new(vec![0.3, -0.2, 0.7, 0.1]).unwrap();
        let a1 = Arch::new(KernelFamily::Gpk, Head::EqNet, 1, 1, 4, 2).unwrap();
        assert_abs_diff_eq!(eqnet_eval(&a1, &t).unwrap(), kappa1_unchecked(0.3), epsilon = 1e-15);
        let a2 = Arch::new(KernelFamily::Gpk, Head::EqNet, 2, 2, 4, 2).unwrap();
        let expected = kappa1_unchecked((kappa1_unchecked(0.3) + kappa1_unchecked(-0.2)) / 2.0);
        assert_abs_diff_eq!(eqnet_eval(&a2, &t).unwrap(), expected, epsilon = 1e-15);

        // NTK, L=2, q=2 unrolled by hand.
        let an = a2.with_family(KernelFamily::Ntk);
        let tv = t.as_slice();
        let s1: Vec<f64> = tv.iter().map(|&u| kappa1_unchecked(u)).collect();
        let d1: Vec<f64> = tv.iter().map(|&u| kappa0_unchecked(u)).collect();
        let th1: Vec<f64> = (0..4)
            .map(|i| {
                let j = (i + 1) % 4;
                0.25 * (d1[i] * tv[i] + s1[i] + d1[j] * tv[j] + s1[j])
            })
            .collect();
        let u: Vec<f64> = (0..4).map(|i| 0.5 * (s1[i] + s1[(i + 1) % 4])).collect();
        let s2 = |i: usize| kappa1_unchecked(u[i]);
        let d2 = |i: usize| kappa0_unchecked(u[i]);
        let th2 = 0.25 * (d2(0) * th1[0] + s2(0) + d2(1) * th1[1] + s2(1));
        assert_abs_diff_eq!(eqnet_eval(&an, &t).unwrap(), th2, epsilon = 1e-15);
    }

    #[test]
    fn head_and_size_mismatch() {
        let a = arch(KernelFamily::Gpk, Head::Trace, 2, 2, 4);
        let t = TVector::new(vec![0.0; 4]).unwrap();
        assert!(matches!(eqnet_eval(&a, &t), Err(Error::Argument(_))));
        let a = a.with_head(Head::EqNet);
        let t3 = TVector::new(vec![0.0; 3]).unwrap();
        assert!(matches!(eqnet_eval(&a, &t3), Err(Error::Dimension(_))));
        let x = sample_uniform(2, 4, 1, 0).unwrap().remove(0);
        assert!(matches!(kernel_eval(&a, &x, &x), Err(Error::Dimension(_))));
    }

    #[test]
    fn arch_validation() {
        assert!(Arch::new(KernelFamily::Gpk, Head::EqNet, 1, 2, 4, 3).is_err());
        assert!(Arch::new(KernelFamily::Gpk, Head::EqNet, 0, 1, 4, 3).is_err());
        let err = Arch::new(KernelFamily::Gpk, Head::EqNet, 2, 2, 4, 1).unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "zeta"));
    }

    #[test]
    fn receptive_fields() {
        let a = arch(KernelFamily::Gpk, Head::EqNet, 3, 2, 8);
        assert_eq!(a.receptive_field(), 3);
        assert_eq!(a.with_family(KernelFamily::Ntk).receptive_field(), 4);
        assert_eq!(a.with_first_layer(FirstLayer::ConvQ).receptive_field(), 4);
        let b = arch(KernelFamily::Gpk, Head::EqNet, 31, 3, 80);
        assert_eq!(b.receptive_field(), 61);
    }

    #[test]
    fn kv_round_trip_and_errors() {
        let a = Arch::from_kv("family=gpk head=trace L=3 q=2 d=4 zeta=3").unwrap();
        assert_eq!(a, arch(KernelFamily::Gpk, Head::Trace, 3, 2, 4));
        assert_eq!(Arch::from_kv(&a.to_kv()).unwrap(), a);
        let err = Arch::from_kv("family=gpk head=trace L=3 q=2 d=4 zeta=1").unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "zeta"));
        let err = Arch::from_kv("family=gpk head=trace L=3 q=2 d=4 zeta=3 colour=red").unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "colour"));
        let err = Arch::from_kv("family=gpk head=sum L=3 q=2 d=4 zeta=3").unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "head"));
        let toml =
            "[arch]\nfamily = \"ntk\"\nhead = \"gap\"\nL = 2\nq = 3\nd = 5\nzeta = 2\nfirst_layer = \"conv_q\"\n";
        let b = Arch::from_kv(toml).unwrap();
        assert_eq!(b.first_layer, FirstLayer::ConvQ);
        assert_eq!(b.head, Head::Gap);
    }

    #[test]
    fn trace_at_diagonal_is_one() {
        let x = sample_uniform(3, 5, 1, 1).unwrap().remove(0);
        for family in [KernelFamily::Gpk, KernelFamily::Ntk] {
            let a = arch(family, Head::Trace, 3, 3, 5);
            assert_abs_diff_eq!(kernel_eval(&a, &x, &x).unwrap(), 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn diagonal_recursion_matches_full_matrices() {
        let samples = sample_uniform(3, 5, 12, 21).unwrap();
        for a in all_archs(5) {
            let a = a.with_head(Head::EqNet);
            for pair in samples.chunks(2) {
                let (x, z) = (&pair[0], &pair[1]);
                let (sigma, theta) = full_matrix_kernels(&a, x, z).unwrap();
                let full = match a.family {
                    KernelFamily::Gpk => sigma[0],
                    KernelFamily::Ntk => theta[0],
                };
                assert_abs_diff_eq!(kernel_eval(&a, x, z).unwrap(), full, epsilon = 1e-12);
                // entry (i, j) equals entry (0, 0) of the shifted pair
                for i in 0..5 {
                    for j in 0..5 {
                        let (s2, t2) =
                            full_matrix_kernels(&a, &x.cyclic_shift(i as isize), &z.cyclic_shift(j as isize)).unwrap();
                        assert_abs_diff_eq!(sigma[i * 5 + j], s2[0], epsilon = 1e-12);
                        assert_abs_diff_eq!(theta[i * 5 + j], t2[0], epsilon = 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn gram_matrices_are_psd() {
        let n = 64;
        let xs = sample_uniform(3, 4, n, 5).unwrap();
        for a in all_archs(4) {
            let k = DMatrix::from_fn(n, n, |i, j| kernel_eval(&a, &xs[i], &xs[j]).unwrap());
            let min = k.symmetric_eigenvalues().min();
            assert!(min >= -1e-8, "{a}: min eigenvalue {min}");
        }
    }

    #[test]
    fn values_in_unit_interval() {
        let xs = sample_uniform(3, 4, 20_000, 8).unwrap();
        for a in all_archs(4) {
            for pair in xs.chunks(2) {
                let v = kernel_eval(&a, &pair[0], &pair[1]).unwrap();
                assert!((-1e-12..=1.0 + 1e-12).contains(&v), "{a}: {v}");
            }
        }
    }

    #[test]
    fn fc_kernel_on_mean_correlation() {
        let k = FcKernel {
            depth: 2,
            family: KernelFamily::Gpk,
            d: 3,
        };
        let v = k.eval_t(&[0.2, 0.5, -0.1], &mut Vec::new());
        assert_abs_diff_eq!(v, kappa1_unchecked(kappa1_unchecked(0.2)), epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn symmetric_in_inputs(seed in 0u64..200, which in 0usize..12) {
            let a = all_archs(4)[which];
            let xs = sample_uniform(3, 4, 2, seed).unwrap();
            let kxz = kernel_eval(&a, &xs[0], &xs[1]).unwrap();
            let kzx = kernel_eval(&a, &xs[1], &xs[0]).unwrap();
            prop_assert!((kxz - kzx).abs() <= 1e-12);
        }

        #[test]
        fn gap_ignores_shifts(seed in 0u64..200, s in 0isize..4, ntk in any::<bool>()) {
            let family = if ntk { KernelFamily::Ntk } else { KernelFamily::Gpk };
            let a = arch(family, Head::Gap, 3, 2, 4);
            let xs = sample_uniform(3, 4, 2, seed).unwrap();
            let base = kernel_eval(&a, &xs[0], &xs[1]).unwrap();
            let shifted = kernel_eval(&a, &xs[0].cyclic_shift(s), &xs[1]).unwrap();
            prop_assert!((base - shifted).abs() <= 1e-12);
        }

        #[test]
        fn trace_ignores_joint_shifts(seed in 0u64..200, s in 0isize..4) {
            let a = arch(KernelFamily::Ntk, Head::Trace, 3, 2, 4);
            let xs = sample_uniform(3, 4, 2, seed).unwrap();
            let base = kernel_eval(&a, &xs[0], &xs[1]).unwrap();
            let shifted = kernel_eval(&a, &xs[0].cyclic_shift(s), &xs[1].cyclic_shift(s)).unwrap();
            prop_assert!((base - shifted).abs() <= 1e-12);
        }
    }
}
