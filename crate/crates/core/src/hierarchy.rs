//! Index paths through the convolutional hierarchy and the shapes built on them.

use std::fmt::Write as _;

use crate::dual::KernelFamily;
use crate::error::{Error, Result};
use crate::kernel::{Arch, FirstLayer, Head};
use crate::spectrum::FrequencyPattern;

/// Default display value of the positional bias base.
pub const DEFAULT_A_TILDE: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathProfile {
    pub depth: usize,
    pub filter: usize,
    pub first_layer: FirstLayer,
    /// `p[i]`: number of index paths from pixel offset `i` to the output.
    pub p: Vec<u64>,
    pub receptive_field: usize,
}

impl PathProfile {
    pub fn total(&self) -> u128 {
        self.p.iter().map(|&v| v as u128).sum()
    }

    /// Path counts scaled so the largest is 1.
    pub fn normalized(&self) -> Vec<f64> {
        let max = self.p.iter().copied().max().unwrap_or(1) as f64;
        self.p.iter().map(|&v| v as f64 / max).collect()
    }

    /// Counts folded onto `d` cyclic pixel positions.
    pub fn folded(&self, d: usize) -> Vec<u64> {
        let mut out = vec![0u64; d];
        for (i, &v) in self.p.iter().enumerate() {
            out[i % d] = out[i % d].saturating_add(v);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# L={} q={} first_layer={} R={}\noffset,paths\n",
            self.depth, self.filter, self.first_layer, self.receptive_field
        );
        for (i, v) in self.p.iter().enumerate() {
            let _ = writeln!(out, "{i},{v}");
        }
        out
    }
}

fn convolve_ones(p: &[u64], q: usize) -> Result<Vec<u64>> {
    let mut out = vec![0u64; p.len() + q - 1];
    for (i, &v) in p.iter().enumerate() {
        for o in &mut out[i..i + q] {
            *o = o
                .checked_add(v)
                .ok_or_else(|| Error::Overflow("path count exceeds 64 bits".into()))?;
        }
    }
    Ok(out)
}

fn counts_with(convolutions: usize, depth: usize, q: usize, first_layer: FirstLayer) -> Result<PathProfile> {
    if depth < 1 || q < 1 {
        return Err(Error::Argument(format!(
            "path counts need L >= 1 and q >= 1, got L={depth} q={q}"
        )));
    }
    let mut p = vec![1u64];
    for _ in 0..convolutions {
        p = convolve_ones(&p, q)?;
    }
    Ok(PathProfile {
        depth,
        filter: q,
        first_layer,
        receptive_field: p.len(),
        p,
    })
}

/// Paths of the Gaussian-process hierarchy: `e_1` convolved `L - 1` times
/// with a length-`q` box, once more for a `conv_q` first layer.
pub fn path_counts(depth: usize, q: usize, first_layer: FirstLayer) -> Result<PathProfile> {
    let extra = usize::from(first_layer == FirstLayer::ConvQ);
    counts_with(depth.saturating_sub(1) + extra, depth, q, first_layer)
}

/// Paths matching an arch's receptive field. The tangent kernel aggregates
/// over the filter once more than the Gaussian-process kernel.
pub fn arch_path_counts(arch: &Arch) -> Result<PathProfile> {
    let mut convs = arch.depth - 1;
    if arch.family == KernelFamily::Ntk {
        convs += 1;
    }
    if arch.first_layer == FirstLayer::ConvQ {
        convs += 1;
    }
    counts_with(convs, arch.depth, arch.filter, arch.first_layer)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianApprox {
    pub center: f64,
    /// Variance of the normalized exact profile.
    pub variance: f64,
    /// Sum of `L - 1` discrete uniforms on `q` points: `(L-1)(q^2-1)/12`.
    pub variance_discrete: f64,
    /// Continuous-rectangle approximation `L q^2 / 12`.
    pub variance_continuous: f64,
    /// Set when too few convolutions have been applied for the bell shape.
    pub poor: bool,
}

pub fn gaussian_path_approx(depth: usize, q: usize) -> Result<GaussianApprox> {
    if depth < 2 {
        return Err(Error::Argument(format!(
            "gaussian approximation needs L >= 2, got {depth}"
        )));
    }
    let prof = path_counts(depth, q, FirstLayer::OneByOne)?;
    let total = prof.total() as f64;
    let mean = prof
        .p
        .iter()
        .enumerate()
        .map(|(i, &v)| i as f64 * v as f64)
        .sum::<f64>()
        / total;
    let variance = prof
        .p
        .iter()
        .enumerate()
        .map(|(i, &v)| (i as f64 - mean).powi(2) * v as f64)
        .sum::<f64>()
        / total;
    let n = (depth - 1) as f64;
    Ok(GaussianApprox {
        center: mean,
        variance,
        variance_discrete: n * ((q * q) as f64 - 1.0) / 12.0,
        variance_continuous: depth as f64 * (q * q) as f64 / 12.0,
        poor: depth < 4 || q < 2,
    })
}

/// Decay exponents and shape values of the lower and upper eigenvalue bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Envelopes {
    pub lower_exponent: f64,
    pub upper_exponent: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Exponent pair `(-(zeta + 2), -(zeta + c/d - 1))` with `c = 3` for the
/// Gaussian-process kernel and `c = 1` for the tangent kernel.
pub fn bound_exponents(family: KernelFamily, zeta: usize, d: usize) -> (f64, f64) {
    let z = zeta as f64;
    let c = match family {
        KernelFamily::Gpk => 3.0,
        KernelFamily::Ntk => 1.0,
    };
    (-(z + 2.0), -(z + c / d as f64 - 1.0))
}

/// Bound shapes up to constants. EqNet sums the single alignment of the
/// pattern against the path profile; trace and GAP sum all cyclic shifts.
pub fn bound_envelopes(arch: &Arch, pattern: &FrequencyPattern, a_tilde: f64) -> Result<Envelopes> {
    arch.validate()?;
    if pattern.d() != arch.d {
        return Err(Error::Dimension(format!(
            "pattern has {} entries, d={}",
            pattern.d(),
            arch.d
        )));
    }
    let p = arch_path_counts(arch)?.folded(arch.d);
    let (lo_exp, up_exp) = bound_exponents(arch.family, arch.zeta, arch.d);
    let shifts = if arch.head == Head::EqNet { 1 } else { arch.d };
    let mut lower = 0.0;
    let mut upper = 0.0;
    for j in 0..shifts {
        let k = pattern.cyclic_shift(j);
        if k.0.iter().zip(&p).any(|(&ki, &pi)| ki > 0 && pi == 0) {
            continue;
        }
        let mut lo = 1.0;
        let mut up = 1.0;
        for (&ki, &pi) in k.0.iter().zip(&p) {
            if ki == 0 {
                continue;
            }
            let kf = ki as f64;
            lo *= a_tilde.powf(pi.min(ki as u64) as f64) * kf.powf(lo_exp);
            up *= kf.powf(up_exp);
        }
        lower += lo;
        upper += up;
    }
    Ok(Envelopes {
        lower_exponent: lo_exp,
        upper_exponent: up_exp,
        lower,
        upper,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfilePoint {
    pub separation: usize,
    /// Natural log of the magnitude relative to separation 1.
    pub log_relative: f64,
    pub relative: f64,
}

/// Relative lower-bound magnitude for harmonics on two pixels at distance
/// `delta`: `sum_j A^(min(p_j, k) + min(p_(j+delta), k))` over all placements,
/// normalized to `delta = 1`. `freq = None` leaves the exponents uncapped.
/// Evaluated in log space since path counts reach `q^(L-1)`.
pub fn two_pixel_profile(
    depth: usize,
    q: usize,
    max_sep: usize,
    a_tilde: f64,
    freq: Option<u64>,
) -> Result<Vec<ProfilePoint>> {
    if a_tilde <= 1.0 {
        return Err(Error::Argument(format!("A must exceed 1, got {a_tilde}")));
    }
    let prof = path_counts(depth, q, FirstLayer::OneByOne)?;
    let r = prof.receptive_field;
    if max_sep == 0 || max_sep >= r {
        return Err(Error::Argument(format!(
            "separations must lie in 1..{r}, got max {max_sep}"
        )));
    }
    let ln_a = a_tilde.ln();
    let e: Vec<f64> = prof
        .p
        .iter()
        .map(|&v| freq.map_or(v, |k| v.min(k)) as f64 * ln_a)
        .collect();
    let log_sum = |delta: usize| -> f64 {
        let terms: Vec<f64> = (0..r - delta).map(|j| e[j] + e[j + delta]).collect();
        let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln()
    };
    let base = log_sum(1);
    Ok((1..=max_sep)
        .map(|delta| {
            let log_relative = log_sum(delta) - base;
            ProfilePoint {
                separation: delta,
                log_relative,
                relative: log_relative.exp(),
            }
        })
        .collect())
}

pub fn profile_to_csv(points: &[ProfilePoint]) -> String {
    let mut out = String::from("separation,log_relative,relative\n");
    for pt in points {
        let _ = writeln!(out, "{},{:e},{:e}", pt.separation, pt.log_relative, pt.relative);
    }
    out
}
