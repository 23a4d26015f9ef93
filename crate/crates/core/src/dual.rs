//! Arc-cosine dual activations of the ReLU and their Taylor expansions.
//!
//! `kappa0` is the dual of the step function and `kappa1` the dual of the
//! ReLU, both normalized so that `kappa(1) = 1`.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Expansion centers must stay this far from the branch point at `u = 1`.
pub const CENTER_MARGIN: f64 = 1e-9;

#[inline]
fn clamp_unit(u: f64) -> f64 {
    u.clamp(-1.0, 1.0)
}

/// `(pi - arccos u) / pi`, without argument validation.
#[inline]
pub fn kappa0_unchecked(u: f64) -> f64 {
    (PI - clamp_unit(u).acos()) / PI
}

/// `((pi - arccos u) u + sqrt(1 - u^2)) / pi`, without argument validation.
#[inline]
pub fn kappa1_unchecked(u: f64) -> f64 {
    let u = clamp_unit(u);
    ((PI - u.acos()) * u + (1.0 - u * u).max(0.0).sqrt()) / PI
}

fn check_finite(u: f64) -> Result<()> {
    if u.is_nan() {
        Err(Error::Argument("dual activation evaluated at NaN".into()))
    } else {
        Ok(())
    }
}

/// Step-function dual. Inputs are clamped into `[-1, 1]`.
pub fn kappa0(u: f64) -> Result<f64> {
    check_finite(u)?;
    Ok(kappa0_unchecked(u))
}

/// ReLU dual. Inputs are clamped into `[-1, 1]`.
pub fn kappa1(u: f64) -> Result<f64> {
    check_finite(u)?;
    Ok(kappa1_unchecked(u))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DualKind {
    Kappa0,
    Kappa1,
}

impl DualKind {
    pub fn eval(self, u: f64) -> Result<f64> {
        match self {
            DualKind::Kappa0 => kappa0(u),
            DualKind::Kappa1 => kappa1(u),
        }
    }
}

/// Taylor coefficients `d_j` of a dual activation about `center`, so that
/// `kappa(u) = sum_j d_j (u - center)^j` for `|u - center| < 1 - center`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSeries {
    pub kind: DualKind,
    pub center: f64,
    pub coeffs: Vec<f64>,
}

impl DualSeries {
    /// Partial sum at `u`.
    pub fn eval(&self, u: f64) -> f64 {
        let h = u - self.center;
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * h + c)
    }

    /// Upper bound on the neglected tail at `u = 1`. Valid for `center >= 0`,
    /// where every coefficient is nonnegative and the full series sums to 1.
    pub fn tail_at_one(&self) -> f64 {
        let h = 1.0 - self.center;
        (1.0 - self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * h + c)).max(0.0)
    }
}

/// Recentred Taylor expansion of `kind` about `center` up to degree `order`.
///
/// Uses the derivative recurrence of `(1 - u^2)^(-1/2)`: with
/// `g_j = f^(j)(c) / j!`,
/// `(j + 1)(1 - c^2) g_{j+1} = (2j + 1) c g_j + j g_{j-1}`.
/// Then `kappa0' = f / pi` and `kappa1' = kappa0`.
pub fn taylor_at(kind: DualKind, center: f64, order: usize) -> Result<DualSeries> {
    if !center.is_finite() {
        return Err(Error::Argument(format!("expansion center {center}")));
    }
    if center.abs() >= 1.0 - CENTER_MARGIN {
        return Err(Error::Singularity { center });
    }
    let c = center;
    let one_minus = 1.0 - c * c;
    // g_0 .. g_order
    let mut g = Vec::with_capacity(order + 1);
    g.push(one_minus.powf(-0.5));
    if order >= 1 {
        g.push(c * one_minus.powf(-1.5));
    }
    for j in 1..order {
        let next = ((2 * j + 1) as f64 * c * g[j] + j as f64 * g[j - 1]) / ((j + 1) as f64 * one_minus);
        g.push(next);
    }

    let mut k0 = Vec::with_capacity(order + 1);
    k0.push(kappa0_unchecked(c));
    for j in 1..=order {
        k0.push(g[j - 1] / (PI * j as f64));
    }

    let coeffs = match kind {
        DualKind::Kappa0 => k0,
        DualKind::Kappa1 => {
            let mut k1 = Vec::with_capacity(order + 1);
            k1.push(kappa1_unchecked(c));
            for j in 1..=order {
                k1.push(k0[j - 1] / j as f64);
            }
            k1
        }
    };
    Ok(DualSeries { kind, center, coeffs })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelFamily {
    /// Gaussian-process (random feature) kernel.
    Gpk,
    /// Neural tangent kernel.
    Ntk,
}

/// Depth-`depth` fully connected kernel of a unit-norm inner product `u`.
pub fn fc_kernel(u: f64, depth: usize, family: KernelFamily) -> Result<f64> {
    check_finite(u)?;
    if depth == 0 {
        return Err(Error::Argument("depth must be at least 1".into()));
    }
    Ok(fc_kernel_unchecked(clamp_unit(u), depth, family))
}

pub(crate) fn fc_kernel_unchecked(u: f64, depth: usize, family: KernelFamily) -> f64 {
    let mut prev = u;
    let mut theta = u;
    for _ in 0..depth {
        let sigma = kappa1_unchecked(prev);
        theta = 0.5 * (kappa0_unchecked(prev) * theta + sigma);
        prev = sigma;
    }
    match family {
        KernelFamily::Gpk => prev,
        KernelFamily::Ntk => theta,
    }
}
