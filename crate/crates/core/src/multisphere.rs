//! Points on the multi-sphere `MS(zeta, d)`: `d` pixels, each a unit vector in `R^zeta`.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub const NORM_TOLERANCE: f64 = 1e-12;

fn check_shape(zeta: usize, d: usize) -> Result<()> {
    if zeta < 2 {
        return Err(Error::Dimension(format!("zeta must be at least 2, got {zeta}")));
    }
    if d == 0 {
        return Err(Error::Dimension("a signal needs at least one pixel".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiSphereSignal {
    zeta: usize,
    d: usize,
    // pixel j occupies data[j * zeta..(j + 1) * zeta]
    data: Vec<f64>,
}

impl MultiSphereSignal {
    /// Builds a signal from pixel-major data, checking every pixel norm.
    pub fn from_pixels(zeta: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        check_shape(zeta, d)?;
        if data.len() != zeta * d {
            return Err(Error::Dimension(format!(
                "expected {} values for zeta={zeta} d={d}, got {}",
                zeta * d,
                data.len()
            )));
        }
        for (j, px) in data.chunks_exact(zeta).enumerate() {
            let norm = px.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !((norm - 1.0).abs() <= NORM_TOLERANCE) {
                return Err(Error::Dimension(format!("pixel {j} has norm {norm}")));
            }
        }
        Ok(Self { zeta, d, data })
    }

    /// Signal with `zeta = 2` whose pixel `j` is `(cos a_j, sin a_j)`.
    pub fn from_angles(angles: &[f64]) -> Result<Self> {
        let data = angles.iter().flat_map(|a| [a.cos(), a.sin()]).collect();
        Self::from_pixels(2, angles.len(), data)
    }

    pub fn zeta(&self) -> usize {
        self.zeta
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn pixel(&self, j: usize) -> &[f64] {
        &self.data[j * self.zeta..(j + 1) * self.zeta]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Polar angle of each pixel. Only meaningful for `zeta = 2`.
    pub fn angles(&self) -> Vec<f64> {
        (0..self.d)
            .map(|j| {
                let p = self.pixel(j);
                p[1].atan2(p[0])
            })
            .collect()
    }

    /// Output pixel `j` is input pixel `(j + shift) mod d`.
    pub fn cyclic_shift(&self, shift: isize) -> Self {
        let d = self.d as isize;
        let mut data = Vec::with_capacity(self.data.len());
        for j in 0..d {
            let src = (j + shift).rem_euclid(d) as usize;
            data.extend_from_slice(self.pixel(src));
        }
        Self {
            zeta: self.zeta,
            d: self.d,
            data,
        }
    }

    /// CSV with `zeta` rows and `d` columns under a `# multisphere` header.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# multisphere zeta={} d={}\n", self.zeta, self.d);
        for c in 0..self.zeta {
            let row: Vec<String> = (0..self.d)
                .map(|j| format!("{:e}", self.data[j * self.zeta + c]))
                .collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "empty signal file".into(),
        })?;
        let (zeta, d) = parse_header(header)?;
        check_shape(zeta, d)?;
        let mut data = vec![0.0; zeta * d];
        let mut rows = 0;
        for (idx, line) in lines {
            if rows == zeta {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("more than {zeta} rows"),
                });
            }
            let values: Vec<&str> = line.split(',').map(str::trim).collect();
            if values.len() != d {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("expected {d} columns, got {}", values.len()),
                });
            }
            for (j, v) in values.iter().enumerate() {
                data[j * zeta + rows] = v.parse().map_err(|_| Error::Parse {
                    line: idx + 1,
                    message: format!("not a number: `{v}`"),
                })?;
            }
            rows += 1;
        }
        if rows != zeta {
            return Err(Error::Parse {
                line: 0,
                message: format!("expected {zeta} rows, got {rows}"),
            });
        }
        Self::from_pixels(zeta, d, data)
    }
}

fn parse_header(line: &str) -> Result<(usize, usize)> {
    let bad = |m: &str| Error::Parse {
        line: 1,
        message: m.to_string(),
    };
    let rest = line
        .trim()
        .strip_prefix('#')
        .map(str::trim)
        .and_then(|s| s.strip_prefix("multisphere"))
        .ok_or_else(|| bad("missing `# multisphere` header"))?;
    let (mut zeta, mut d) = (None, None);
    for field in rest.split_whitespace() {
        match field.split_once('=') {
            Some(("zeta", v)) => zeta = v.parse().ok(),
            Some(("d", v)) => d = v.parse().ok(),
            _ => return Err(bad(&format!("unexpected header field `{field}`"))),
        }
    }
    match (zeta, d) {
        (Some(z), Some(d)) => Ok((z, d)),
        _ => Err(bad("header needs zeta=<int> d=<int>")),
    }
}

/// Independent uniform draws on `MS(zeta, d)`. Sample `s` uses ChaCha stream
/// `s`, so any sample can be regenerated without drawing the ones before it.
pub fn sample_uniform(zeta: usize, d: usize, count: usize, seed: u64) -> Result<Vec<MultiSphereSignal>> {
    check_shape(zeta, d)?;
    if count == 0 {
        return Err(Error::Dimension("count must be at least 1".into()));
    }
    Ok((0..count as u64).map(|s| sample_one(zeta, d, seed, s)).collect())
}

pub fn sample_one(zeta: usize, d: usize, seed: u64, index: u64) -> MultiSphereSignal {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let mut data = Vec::with_capacity(zeta * d);
    for _ in 0..d {
        loop {
            let v: Vec<f64> = (0..zeta).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-150 {
                data.extend(v.iter().map(|x| x / norm));
                break;
            }
        }
    }
    MultiSphereSignal { zeta, d, data }
}

fn check_pair(x: &MultiSphereSignal, z: &MultiSphereSignal) -> Result<()> {
    if x.zeta != z.zeta || x.d != z.d {
        return Err(Error::Dimension(format!(
            "signals have shapes ({}, {}) and ({}, {})",
            x.zeta, x.d, z.zeta, z.d
        )));
    }
    Ok(())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    if a == b {
        return 1.0;
    }
    a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>().clamp(-1.0, 1.0)
}

/// Per-pixel correlations `t_i = <x^(i), z^(i)>`, each in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TVector(Vec<f64>);

impl TVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let mut values = values;
        for v in &mut values {
            if v.is_nan() || v.abs() > 1.0 + NORM_TOLERANCE {
                return Err(Error::Argument(format!("correlation {v} outside [-1, 1]")));
            }
            *v = v.clamp(-1.0, 1.0);
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Entry `j` of the result is entry `(j + shift) mod d`.
    pub fn cyclic_shift(&self, shift: isize) -> Self {
        let d = self.0.len() as isize;
        Self((0..d).map(|j| self.0[(j + shift).rem_euclid(d) as usize]).collect())
    }
}

/// `G_ij = <x^(i), z^(j)>`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    d: usize,
    data: Vec<f64>,
}

impl GramMatrix {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.d + j]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.d).map(|i| self.get(i, i)).collect()
    }

    /// `t_a = G_{(a + i) mod d, (a + j) mod d}`.
    pub fn shifted_diagonal(&self, i: usize, j: usize) -> Vec<f64> {
        let d = self.d;
        (0..d).map(|a| self.get((a + i) % d, (a + j) % d)).collect()
    }
}

pub fn pixel_gram(x: &MultiSphereSignal, z: &MultiSphereSignal) -> Result<GramMatrix> {
    check_pair(x, z)?;
    let d = x.d;
    let mut data = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            data.push(dot(x.pixel(i), z.pixel(j)));
        }
    }
    Ok(GramMatrix { d, data })
}

pub fn tvec(x: &MultiSphereSignal, z: &MultiSphereSignal) -> Result<TVector> {
    check_pair(x, z)?;
    Ok(TVector((0..x.d).map(|i| dot(x.pixel(i), z.pixel(i))).collect()))
}
