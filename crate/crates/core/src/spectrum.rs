//! Eigenvalues of multi-dot product kernels under the uniform probability
//! measure on the multisphere.
//!
//! Products of spherical harmonics diagonalize every kernel that depends on
//! the per-pixel correlations only, so `lambda_k` is a weighted Gegenbauer
//! projection of the kernel profile. Three routes are provided: a tensor Gauss
//! grid, the power-series sum over exact monomial projections, and the
//! spectrum of a sampled Gram matrix.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::{kernel_eval, Arch, EqNetKernel, Head, MultiDotKernel};
use crate::multisphere::{sample_uniform, MultiSphereSignal};
use crate::orthopoly::{gauss_jacobi, gegenbauer_all, harmonic_count, projection_constant, projection_integral};
use crate::series::TruncatedSeries;

/// Eigenvalues smaller than this in magnitude are reported as exact zeros.
pub const ZERO_FLOOR: f64 = 1e-14;
pub const DEFAULT_NODES: usize = 64;
pub const MAX_GRID_DIMS: usize = 4;
pub const GRID_MEMORY_LIMIT: u128 = 1 << 30;
pub const MAX_MC_SAMPLES: usize = 4096;
const ADAPTIVE_TOLERANCE: f64 = 1e-6;

/// Per-pixel harmonic degrees.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FrequencyPattern(pub Vec<usize>);

impl FrequencyPattern {
    pub fn new(k: Vec<usize>) -> Self {
        Self(k)
    }

    pub fn d(&self) -> usize {
        self.0.len()
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn max(&self) -> usize {
        self.0.iter().copied().max().unwrap_or(0)
    }

    pub fn active_pixels(&self) -> usize {
        self.0.iter().filter(|&&k| k > 0).count()
    }

    pub fn scaled(&self, n: usize) -> Self {
        Self(self.0.iter().map(|&k| k * n).collect())
    }

    /// Entry `j` of the result is entry `j + shift` of `self`, cyclically.
    pub fn cyclic_shift(&self, shift: usize) -> Self {
        let d = self.0.len();
        Self((0..d).map(|j| self.0[(j + shift) % d]).collect())
    }

    /// `prod_i N(zeta, k_i)`, saturating.
    pub fn multiplicity(&self, zeta: usize) -> u128 {
        self.0
            .iter()
            .fold(1u128, |acc, &k| acc.saturating_mul(harmonic_count(zeta, k)))
    }
}

impl fmt::Display for FrequencyPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(usize::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for FrequencyPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let text = s.trim().trim_start_matches('(').trim_end_matches(')');
        let k = text
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Argument(format!("`{p}` in pattern `{s}` is not a nonnegative integer")))
            })
            .collect::<Result<Vec<_>>>()?;
        if k.is_empty() {
            return Err(Error::Argument("empty frequency pattern".into()));
        }
        Ok(Self(k))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Quadrature,
    Series,
    Mc,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Quadrature => "quadrature",
            Method::Series => "series",
            Method::Mc => "mc",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "quadrature" => Ok(Method::Quadrature),
            "series" => Ok(Method::Series),
            "mc" => Ok(Method::Mc),
            other => Err(Error::Argument(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumEntry {
    pub pattern: FrequencyPattern,
    pub lambda: f64,
    pub method: Method,
    pub multiplicity: u128,
    /// Method-specific error indicator: last-shell mass for series, change under
    /// grid refinement for adaptive quadrature, zero otherwise.
    pub tail: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumTable {
    pub arch: Option<Arch>,
    pub zeta: usize,
    pub d: usize,
    pub entries: Vec<SpectrumEntry>,
}

fn floor_zero(lambda: f64) -> f64 {
    if lambda.abs() < ZERO_FLOOR {
        0.0
    } else {
        lambda
    }
}

impl SpectrumTable {
    pub fn get(&self, pattern: &FrequencyPattern) -> Option<f64> {
        self.entries.iter().find(|e| &e.pattern == pattern).map(|e| e.lambda)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        match &self.arch {
            Some(a) => {
                let _ = writeln!(out, "# {}", a.to_inline());
            }
            None => {
                let _ = writeln!(out, "# zeta={} d={}", self.zeta, self.d);
            }
        }
        let cols: Vec<String> = (1..=self.d).map(|i| format!("k{i}")).collect();
        let _ = writeln!(out, "{},lambda,method,multiplicity", cols.join(","));
        for e in &self.entries {
            let _ = writeln!(out, "{},{:e},{},{}", e.pattern, e.lambda, e.method, e.multiplicity);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut arch = None;
        let mut zeta = None;
        let mut d = None;
        let mut entries = Vec::new();
        let mut header_seen = false;
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let parse_err = |message: String| Error::Parse { line: no + 1, message };
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                let comment = comment.trim();
                if comment.contains("family=") {
                    arch = Some(Arch::from_kv(comment)?);
                } else {
                    for (k, v) in crate::kernel::split_pairs(comment)? {
                        match k.as_str() {
                            "zeta" => zeta = v.parse().ok(),
                            "d" => d = v.parse().ok(),
                            _ => {}
                        }
                    }
                }
                continue;
            }
            if !header_seen {
                let cols: Vec<&str> = line.split(',').collect();
                let n = cols.len();
                if n < 4 || cols[n - 3] != "lambda" || cols[n - 2] != "method" || cols[n - 1] != "multiplicity" {
                    return Err(parse_err(format!(
                        "expected k1..kd,lambda,method,multiplicity, got `{line}`"
                    )));
                }
                let width = n - 3;
                if let Some(a) = &arch {
                    if a.d != width {
                        return Err(parse_err(format!("{width} pattern columns for d={}", a.d)));
                    }
                }
                d = Some(width);
                header_seen = true;
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            let width = d.unwrap_or(0);
            if cols.len() != width + 3 {
                return Err(parse_err(format!("expected {} fields, got {}", width + 3, cols.len())));
            }
            let pattern = FrequencyPattern(
                cols[..width]
                    .iter()
                    .map(|c| {
                        c.trim()
                            .parse::<usize>()
                            .map_err(|e| parse_err(format!("bad k `{c}`: {e}")))
                    })
                    .collect::<Result<Vec<_>>>()?,
            );
            let lambda = cols[width]
                .trim()
                .parse::<f64>()
                .map_err(|e| parse_err(format!("bad lambda `{}`: {e}", cols[width])))?;
            let method = cols[width + 1]
                .parse::<Method>()
                .map_err(|e| parse_err(e.to_string()))?;
            let multiplicity = cols[width + 2]
                .trim()
                .parse::<u128>()
                .map_err(|e| parse_err(format!("bad multiplicity: {e}")))?;
            entries.push(SpectrumEntry {
                pattern,
                lambda,
                method,
                multiplicity,
                tail: 0.0,
            });
        }
        let d = d.ok_or_else(|| Error::Parse {
            line: 0,
            message: "missing column header".into(),
        })?;
        let zeta = arch.map(|a| a.zeta).or(zeta).ok_or_else(|| Error::Parse {
            line: 1,
            message: "missing zeta in header comment".into(),
        })?;
        Ok(Self { arch, zeta, d, entries })
    }
}

/// Every pattern in `{0..=kmax}^d`, lexicographic.
pub fn all_patterns(d: usize, kmax: usize) -> Vec<FrequencyPattern> {
    let mut out = Vec::new();
    let mut k = vec![0; d];
    loop {
        out.push(FrequencyPattern(k.clone()));
        let mut v = d;
        loop {
            if v == 0 {
                return out;
            }
            v -= 1;
            if k[v] < kmax {
                k[v] += 1;
                break;
            }
            k[v] = 0;
        }
    }
}

/// `n * ray` for each `n` in `range`.
pub fn ray_patterns(ray: &FrequencyPattern, range: std::ops::RangeInclusive<usize>) -> Vec<FrequencyPattern> {
    range.map(|n| ray.scaled(n)).collect()
}

/// The input patterns together with all their cyclic shifts, deduplicated.
pub fn shift_closure(patterns: &[FrequencyPattern]) -> Vec<FrequencyPattern> {
    let mut seen = std::collections::BTreeSet::new();
    for p in patterns {
        for s in 0..p.d().max(1) {
            seen.insert(p.cyclic_shift(s));
        }
    }
    seen.into_iter().collect()
}

fn check_patterns(patterns: &[FrequencyPattern], d: usize) -> Result<()> {
    if let Some(p) = patterns.iter().find(|p| p.d() != d) {
        return Err(Error::Dimension(format!(
            "pattern ({p}) has {} entries, expected {d}",
            p.d()
        )));
    }
    Ok(())
}

/// Kernel values on the tensor Gauss grid, last variable fastest.
struct Grid {
    d: usize,
    m: usize,
    // per node: c_zeta * w_m * Q_k(x_m) for k = 0..=kmax, indexed [k][m]
    projections: Vec<Vec<f64>>,
    values: Vec<f64>,
}

fn grid_bytes(d: usize, m: usize) -> u128 {
    (m as u128).pow(d as u32) * 8
}

fn build_grid<K: MultiDotKernel + ?Sized>(kernel: &K, zeta: usize, m: usize, kmax: usize) -> Result<Grid> {
    let d = kernel.dims();
    if d == 0 || d > MAX_GRID_DIMS {
        return Err(Error::Unsupported(format!(
            "quadrature grid supports 1..={MAX_GRID_DIMS} pixels, got d={d}"
        )));
    }
    let required = grid_bytes(d, m);
    if required > GRID_MEMORY_LIMIT {
        return Err(Error::Resource {
            what: format!("{m}^{d} quadrature grid"),
            required_bytes: required,
            limit_bytes: GRID_MEMORY_LIMIT,
        });
    }
    let rule = gauss_jacobi(m, zeta)?;
    let c = projection_constant(zeta);
    let mut projections = vec![vec![0.0; m]; kmax + 1];
    for (j, (&x, &w)) in rule.nodes.iter().zip(&rule.weights).enumerate() {
        for (k, q) in gegenbauer_all(zeta, kmax, x).into_iter().enumerate() {
            projections[k][j] = c * w * q;
        }
    }
    let total = m.pow(d as u32);
    let mut values = vec![0.0; total];
    let nodes = &rule.nodes;
    values.par_chunks_mut(m).enumerate().for_each_init(
        || (vec![0.0; d], Vec::new()),
        |(t, scratch), (row, chunk)| {
            let mut rest = row;
            for v in (0..d - 1).rev() {
                t[v] = nodes[rest % m];
                rest /= m;
            }
            for (j, out) in chunk.iter_mut().enumerate() {
                t[d - 1] = nodes[j];
                *out = kernel.eval_t(t, scratch);
            }
        },
    );
    Ok(Grid {
        d,
        m,
        projections,
        values,
    })
}

// Contracts the leading axis of a tensor of `m` slabs with `a`.
fn contract_leading(values: &[f64], m: usize, a: &[f64]) -> Vec<f64> {
    let slab = values.len() / m;
    let mut out = vec![0.0; slab];
    const CHUNK: usize = 4096;
    out.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
        let off = c * CHUNK;
        for (i, &ai) in a.iter().enumerate() {
            let src = &values[i * slab + off..i * slab + off + chunk.len()];
            for (o, &s) in chunk.iter_mut().zip(src) {
                *o += ai * s;
            }
        }
    });
    out
}

impl Grid {
    fn eigenvalues(&self, patterns: &[FrequencyPattern]) -> Vec<f64> {
        let mut out = vec![0.0; patterns.len()];
        // patterns sharing k_1 share the largest contraction
        let mut by_first: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, p) in patterns.iter().enumerate() {
            by_first.entry(p.0[0]).or_default().push(i);
        }
        for (k1, idxs) in by_first {
            let slab = contract_leading(&self.values, self.m, &self.projections[k1]);
            for i in idxs {
                let mut cur = slab.clone();
                for v in 1..self.d {
                    cur = contract_leading(&cur, self.m, &self.projections[patterns[i].0[v]]);
                }
                out[i] = cur[0];
            }
        }
        out
    }
}

fn grid_table(
    arch: Option<Arch>,
    zeta: usize,
    d: usize,
    patterns: &[FrequencyPattern],
    lambdas: &[f64],
    tails: &[f64],
) -> SpectrumTable {
    let entries = patterns
        .iter()
        .zip(lambdas.iter().zip(tails))
        .map(|(p, (&l, &tail))| SpectrumEntry {
            pattern: p.clone(),
            lambda: floor_zero(l),
            method: Method::Quadrature,
            multiplicity: p.multiplicity(zeta),
            tail,
        })
        .collect();
    SpectrumTable { arch, zeta, d, entries }
}

fn check_nodes(m: usize, patterns: &[FrequencyPattern]) -> Result<usize> {
    let kmax = patterns.iter().map(FrequencyPattern::max).max().unwrap_or(0);
    if m < kmax + 16 {
        return Err(Error::Argument(format!(
            "{m} nodes is too few for degree {kmax}; need at least {}",
            kmax + 16
        )));
    }
    Ok(kmax)
}

/// Eigenvalues of any multi-dot kernel from an `m`-point tensor Gauss grid.
pub fn eig_quadrature_kernel<K: MultiDotKernel + ?Sized>(
    kernel: &K,
    zeta: usize,
    patterns: &[FrequencyPattern],
    m: usize,
) -> Result<SpectrumTable> {
    let d = kernel.dims();
    check_patterns(patterns, d)?;
    let kmax = check_nodes(m, patterns)?;
    let grid = build_grid(kernel, zeta, m, kmax)?;
    let lambdas = grid.eigenvalues(patterns);
    Ok(grid_table(
        None,
        zeta,
        d,
        patterns,
        &lambdas,
        &vec![0.0; patterns.len()],
    ))
}

/// Quadrature eigenvalues of an arch. Trace and GAP heads are reduced to the
/// EqNet table over all cyclic shifts.
pub fn eig_quadrature(arch: &Arch, patterns: &[FrequencyPattern], m: usize) -> Result<SpectrumTable> {
    arch.validate()?;
    check_patterns(patterns, arch.d)?;
    let eq = arch.with_head(Head::EqNet);
    let requested: Vec<FrequencyPattern> = match arch.head {
        Head::EqNet => patterns.to_vec(),
        Head::Trace | Head::Gap => shift_closure(patterns),
    };
    let mut table = eig_quadrature_kernel(&EqNetKernel(eq), arch.zeta, &requested, m)?;
    table.arch = Some(eq);
    match arch.head {
        Head::EqNet => Ok(table),
        Head::Trace | Head::Gap => {
            let mut out = trace_gap_eigs(&table, arch.d)?;
            out.arch = Some(*arch);
            out.entries.retain(|e| patterns.contains(&e.pattern));
            out.entries
                .sort_by_key(|e| patterns.iter().position(|p| p == &e.pattern));
            Ok(out)
        }
    }
}

/// Quadrature with the grid doubled from `m` until no eigenvalue moves by more
/// than `1e-6` relative or the grid would exceed the memory limit. Each
/// entry's `tail` holds the last relative change; the flag reports convergence.
pub fn eig_quadrature_adaptive<K: MultiDotKernel + ?Sized>(
    kernel: &K,
    zeta: usize,
    patterns: &[FrequencyPattern],
    m: usize,
) -> Result<(SpectrumTable, bool)> {
    let d = kernel.dims();
    check_patterns(patterns, d)?;
    let kmax = check_nodes(m, patterns)?;
    let mut prev = build_grid(kernel, zeta, m, kmax)?.eigenvalues(patterns);
    let mut m = m;
    loop {
        let next_m = 2 * m;
        if grid_bytes(d, next_m) > GRID_MEMORY_LIMIT {
            let tails = vec![f64::NAN; patterns.len()];
            return Ok((grid_table(None, zeta, d, patterns, &prev, &tails), false));
        }
        let next = build_grid(kernel, zeta, next_m, kmax)?.eigenvalues(patterns);
        let changes: Vec<f64> = prev
            .iter()
            .zip(&next)
            .map(|(&a, &b)| (a - b).abs() / b.abs().max(ZERO_FLOOR))
            .collect();
        let converged = changes.iter().all(|&c| c <= ADAPTIVE_TOLERANCE);
        if converged {
            return Ok((grid_table(None, zeta, d, patterns, &next, &changes), true));
        }
        prev = next;
        m = next_m;
    }
}

/// Eigenvalues from power-series coefficients via exact monomial projections.
/// Pattern entries past the series variables must be zero for a nonzero value.
pub fn eig_from_series(s: &TruncatedSeries, zeta: usize, patterns: &[FrequencyPattern]) -> Result<SpectrumTable> {
    let dims = s.dims();
    let cap = s.cap();
    let d = patterns.first().map_or(dims, FrequencyPattern::d);
    check_patterns(patterns, d)?;
    if d < dims {
        return Err(Error::Dimension(format!(
            "patterns of length {d} for a {dims}-variable series"
        )));
    }
    if let Some(p) = patterns.iter().find(|p| p.0[..dims].iter().any(|&k| k > cap)) {
        return Err(Error::Argument(format!("pattern ({p}) exceeds series cap {cap}")));
    }
    let c = projection_constant(zeta);
    // proj[k][n] = c * int t^n Q_k w
    let mut proj = vec![vec![0.0; cap + 1]; cap + 1];
    for (k, row) in proj.iter_mut().enumerate() {
        for n in (k..=cap).step_by(2) {
            row[n] = c * projection_integral(zeta, n, k)?;
        }
    }
    let entries = patterns
        .iter()
        .map(|p| {
            let (lambda, tail) = if p.0[dims..].iter().any(|&k| k > 0) {
                (0.0, 0.0)
            } else {
                series_projection(s, &p.0[..dims], &proj)
            };
            SpectrumEntry {
                pattern: p.clone(),
                lambda: floor_zero(lambda),
                method: Method::Series,
                multiplicity: p.multiplicity(zeta),
                tail,
            }
        })
        .collect();
    Ok(SpectrumTable {
        arch: None,
        zeta,
        d,
        entries,
    })
}

fn series_projection(s: &TruncatedSeries, k: &[usize], proj: &[Vec<f64>]) -> (f64, f64) {
    let dims = k.len();
    let cap = s.cap();
    if dims == 0 {
        return (s.constant_term(), 0.0);
    }
    let mut n: Vec<usize> = k.to_vec();
    let mut total = 0.0;
    let mut tail = 0.0;
    loop {
        let mut term = s.get(&n);
        if term != 0.0 {
            for v in 0..dims {
                term *= proj[k[v]][n[v]];
            }
            total += term;
            if n.iter().any(|&x| x + 2 > cap) {
                tail += term.abs();
            }
        }
        let mut v = dims;
        loop {
            if v == 0 {
                return (total, tail);
            }
            v -= 1;
            if n[v] + 2 <= cap {
                n[v] += 2;
                break;
            }
            n[v] = k[v];
        }
    }
}

/// Trace-kernel eigenvalues `(1/d) sum_i lambda_(s_i k)` from an EqNet table.
/// The GAP kernel has the same table. A missing shift counts as zero only
/// when it has support outside the receptive field of the table's arch.
pub fn trace_gap_eigs(eqnet: &SpectrumTable, d: usize) -> Result<SpectrumTable> {
    if eqnet.d != d {
        return Err(Error::Dimension(format!("table has d={}, expected {d}", eqnet.d)));
    }
    let lookup: HashMap<&FrequencyPattern, f64> = eqnet.entries.iter().map(|e| (&e.pattern, e.lambda)).collect();
    let rf = eqnet.arch.map(|a| a.receptive_field());
    let mut entries = Vec::with_capacity(eqnet.entries.len());
    for e in &eqnet.entries {
        // summing over the orbit in sorted order makes shifted patterns agree bitwise
        let mut orbit: Vec<FrequencyPattern> = (0..d).map(|s| e.pattern.cyclic_shift(s)).collect();
        orbit.sort();
        let mut acc = 0.0;
        for shifted in orbit {
            match lookup.get(&shifted) {
                Some(&l) => acc += l,
                None => {
                    let outside = rf.is_some_and(|r| r < d && shifted.0[r..].iter().any(|&k| k > 0));
                    if !outside {
                        return Err(Error::Contract(format!(
                            "shift ({shifted}) of ({}) is missing from the table",
                            e.pattern
                        )));
                    }
                }
            }
        }
        entries.push(SpectrumEntry {
            lambda: floor_zero(acc / d as f64),
            ..e.clone()
        });
    }
    Ok(SpectrumTable {
        arch: eqnet.arch.map(|a| a.with_head(Head::Trace)),
        zeta: eqnet.zeta,
        d,
        entries,
    })
}

/// Spectrum of `K / n` for `n` samples of the kernel `f`, sorted descending.
pub fn mc_spectrum_with<F>(zeta: usize, d: usize, n: usize, seed: u64, f: F) -> Result<Vec<f64>>
where
    F: Fn(&MultiSphereSignal, &MultiSphereSignal) -> Result<f64> + Sync,
{
    if n == 0 || n > MAX_MC_SAMPLES {
        return Err(Error::Argument(format!(
            "sample count {n} outside 1..={MAX_MC_SAMPLES}"
        )));
    }
    let xs = sample_uniform(zeta, d, n, seed)?;
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..=i).map(|j| f(&xs[i], &xs[j])).collect::<Result<Vec<f64>>>())
        .collect::<Result<_>>()?;
    let scale = 1.0 / n as f64;
    let k = DMatrix::from_fn(n, n, |i, j| {
        let v = if j <= i { rows[i][j] } else { rows[j][i] };
        v * scale
    });
    let mut eig: Vec<f64> = k.symmetric_eigenvalues().iter().copied().collect();
    if eig.iter().any(|v| !v.is_finite()) {
        return Err(Error::Overflow(
            "symmetric eigensolver returned non-finite values".into(),
        ));
    }
    eig.sort_by(|a, b| b.total_cmp(a));
    Ok(eig)
}

/// Gram-matrix spectrum of an arch's kernel on `n` uniform samples.
pub fn mc_operator_spectrum(arch: &Arch, n: usize, seed: u64) -> Result<Vec<f64>> {
    arch.validate()?;
    mc_spectrum_with(arch.zeta, arch.d, n, seed, |x, z| kernel_eval(arch, x, z))
}

/// Distinct eigenvalues with their total multiplicity, descending. Table
/// entries closer than `rel_tol` are merged.
pub fn distinct_eigenvalues(table: &SpectrumTable, rel_tol: f64) -> Vec<(f64, u128)> {
    let mut pairs: Vec<(f64, u128)> = table
        .entries
        .iter()
        .filter(|e| e.lambda > 0.0)
        .map(|e| (e.lambda, e.multiplicity))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut out: Vec<(f64, u128)> = Vec::new();
    for (l, m) in pairs {
        match out.last_mut() {
            Some((prev, count)) if (*prev - l).abs() <= rel_tol * prev.abs() => *count += m,
            _ => out.push((l, m)),
        }
    }
    out
}

/// Averages consecutive blocks of the sorted MC spectrum whose sizes are the
/// predicted multiplicities. Returns `(predicted, mc mean, multiplicity)`.
pub fn match_mc_blocks(predicted: &[(f64, u128)], mc: &[f64]) -> Result<Vec<(f64, f64, u128)>> {
    let mut pos = 0usize;
    let mut out = Vec::with_capacity(predicted.len());
    for &(lambda, mult) in predicted {
        let m = mult as usize;
        if pos + m > mc.len() {
            return Err(Error::Argument(format!(
                "MC spectrum has {} values, blocks need {}",
                mc.len(),
                pos + m
            )));
        }
        let mean = mc[pos..pos + m].iter().sum::<f64>() / m as f64;
        out.push((lambda, mean, mult));
        pos += m;
    }
    Ok(out)
}

/// Phase of a per-pixel circular harmonic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Cos,
    Sin,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Cos => "cos",
            Phase::Sin => "sin",
        })
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "cos" => Ok(Phase::Cos),
            "sin" => Ok(Phase::Sin),
            other => Err(Error::Argument(format!("phase must be cos or sin, got `{other}`"))),
        }
    }
}

/// Product of unit-norm circular harmonics `sqrt(2) cos/sin(k_i theta_i)`,
/// with factor 1 where `k_i = 0`.
pub fn circular_harmonic(pattern: &FrequencyPattern, phases: &[Phase], x: &MultiSphereSignal) -> f64 {
    pattern
        .0
        .iter()
        .zip(phases)
        .zip(x.angles())
        .map(|((&k, &ph), theta)| {
            if k == 0 {
                1.0
            } else {
                let a = k as f64 * theta;
                std::f64::consts::SQRT_2 * if ph == Phase::Cos { a.cos() } else { a.sin() }
            }
        })
        .product()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MercerResidual {
    /// `lambda / lambda_hat - 1`.
    pub residual: f64,
    pub std_error: f64,
    pub lambda_hat: f64,
}

impl MercerResidual {
    pub fn within(&self, sigmas: f64) -> bool {
        self.residual.abs() <= sigmas * self.std_error
    }
}

/// Monte-Carlo test that a circular-harmonic product is an eigenfunction with
/// eigenvalue `lambda`. With anchors `x_a` and probes `z_b`,
/// `lambda_hat = mean_b Y(z_b) mean_a k(x_a, z_b) Y(x_a) / mean_a Y(x_a)^2`,
/// which is unbiased given the anchors. GAP archs use the shift-averaged `Y`.
pub fn mercer_residual(
    arch: &Arch,
    pattern: &FrequencyPattern,
    phases: &[Phase],
    lambda: f64,
    samples: usize,
    seed: u64,
) -> Result<MercerResidual> {
    arch.validate()?;
    if arch.zeta != 2 {
        return Err(Error::Unsupported(format!(
            "explicit eigenfunctions are built for zeta=2 only, got zeta={}",
            arch.zeta
        )));
    }
    check_patterns(std::slice::from_ref(pattern), arch.d)?;
    if phases.len() != arch.d {
        return Err(Error::Dimension(format!("{} phases for d={}", phases.len(), arch.d)));
    }
    if samples < 2 {
        return Err(Error::Argument("mercer_residual needs at least 2 samples".into()));
    }
    let d = arch.d;
    let y = |x: &MultiSphereSignal| -> f64 {
        if arch.head == Head::Gap {
            (0..d)
                .map(|s| circular_harmonic(pattern, phases, &x.cyclic_shift(s as isize)))
                .sum::<f64>()
        } else {
            circular_harmonic(pattern, phases, x)
        }
    };
    let anchors = sample_uniform(2, d, samples.min(256), seed)?;
    let probes = sample_uniform(2, d, samples, seed.wrapping_add(1))?;
    let y_anchor: Vec<f64> = anchors.iter().map(&y).collect();
    let norm = y_anchor.iter().map(|v| v * v).sum::<f64>() / anchors.len() as f64;
    if norm <= 0.0 {
        return Err(Error::Data("eigenfunction vanishes on every anchor".into()));
    }
    let g: Vec<f64> = probes
        .par_iter()
        .map(|z| -> Result<f64> {
            let mut acc = 0.0;
            for (x, &yx) in anchors.iter().zip(&y_anchor) {
                acc += kernel_eval(arch, x, z)? * yx;
            }
            Ok(y(z) * acc / anchors.len() as f64 / norm)
        })
        .collect::<Result<_>>()?;
    let n = g.len() as f64;
    let mean = g.iter().sum::<f64>() / n;
    let var = g.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se_hat = (var / n).sqrt();
    if mean <= 0.0 {
        return Err(Error::Data(format!("estimated eigenvalue {mean:e} is not positive")));
    }
    Ok(MercerResidual {
        residual: lambda / mean - 1.0,
        std_error: lambda / (mean * mean) * se_hat,
        lambda_hat: mean,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: usize,
}

/// Least squares line through `(ln x, ln y)`.
pub fn fit_loglog(points: &[(f64, f64)]) -> Result<SlopeFit> {
    if points.len() < 4 {
        return Err(Error::Data(format!(
            "slope fit needs at least 4 points, got {}",
            points.len()
        )));
    }
    if let Some(&(x, y)) = points.iter().find(|&&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(Error::Data(format!("nonpositive value at ({x}, {y:e}) in log-log fit")));
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Data("log-log fit needs distinct abscissae".into()));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(SlopeFit {
        slope,
        intercept: my - slope * mx,
        r2,
        points: points.len(),
    })
}

/// Log-log slope of `lambda` along `n * ray` for `n` in `range`.
pub fn slope_fit(
    table: &SpectrumTable,
    ray: &FrequencyPattern,
    range: std::ops::RangeInclusive<usize>,
) -> Result<SlopeFit> {
    let mut points = Vec::new();
    for n in range {
        let p = ray.scaled(n);
        let lambda = table
            .get(&p)
            .ok_or_else(|| Error::Data(format!("pattern ({p}) missing from the table")))?;
        points.push((n as f64, lambda));
    }
    fit_loglog(&points)
}
