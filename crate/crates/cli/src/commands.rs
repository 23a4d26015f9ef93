//! Command implementations. Each writes CSV to `out`, or to stdout when unset.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use convspectra::hierarchy::{path_counts, profile_to_csv, two_pixel_profile, DEFAULT_A_TILDE};
use convspectra::kernel::{kernel_eval, Arch, FcKernel, FirstLayer, Head};
use convspectra::multisphere::{sample_uniform, tvec};
use convspectra::netlab::{lr_search, run_matrix, run_records_to_csv, HeadScale, TrainConfig};
use convspectra::series::{eqnet_series, series_dims};
use convspectra::spectrum::{
    all_patterns, distinct_eigenvalues, eig_from_series, eig_quadrature, eig_quadrature_kernel, match_mc_blocks,
    mc_operator_spectrum, ray_patterns, shift_closure, slope_fit, trace_gap_eigs, FrequencyPattern, Method, Phase,
    SpectrumTable, DEFAULT_NODES, MAX_MC_SAMPLES,
};
use convspectra::{Error, Result};

use crate::config::{Command, KernelKind, LearningRate, RunConfig};
use crate::CliError;

const DEFAULT_KMAX: usize = 4;
const DEFAULT_RAY_KMAX: usize = 20;
const DEFAULT_MC_SAMPLES: usize = 1000;
const MC_BOX: usize = 8;
const LR_PROBE_ITERS: usize = 30;
const LR_MAX_DOUBLINGS: usize = 8;

fn emit(out: Option<&Path>, stdout: &mut dyn Write, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => stdout.write_all(text.as_bytes())?,
    }
    Ok(())
}

pub fn run(cfg: &RunConfig, stdout: &mut dyn Write) -> std::result::Result<(), CliError> {
    let out = cfg.out.as_deref();
    let text = match cfg.command() {
        Command::KernelEval => kernel_eval_csv(cfg)?,
        Command::Series => {
            let arch = cfg.arch();
            let s = eqnet_series(&arch, cfg.cap.unwrap_or(default_cap(&arch)))?;
            s.to_csv(&arch.to_inline())
        }
        Command::Spectrum => spectrum_csv(cfg)?,
        Command::Slope => slope_csv(cfg)?,
        Command::Paths => path_counts(
            cfg.depth.unwrap(),
            cfg.filter.unwrap(),
            cfg.first_layer.unwrap_or(FirstLayer::OneByOne),
        )?
        .to_csv(),
        Command::Profile => {
            let (depth, q) = (cfg.depth.unwrap(), cfg.filter.unwrap());
            let rf = (depth - 1) * (q - 1) + 1;
            let max_sep = cfg.max_sep.unwrap_or(rf.saturating_sub(1).max(1));
            let points = two_pixel_profile(depth, q, max_sep, cfg.a_tilde.unwrap_or(DEFAULT_A_TILDE), cfg.freq)?;
            profile_to_csv(&points)
        }
        Command::Train => train_csv(cfg)?,
        Command::Validate => return validate(cfg, stdout),
    };
    emit(out, stdout, &text)?;
    Ok(())
}

fn default_cap(arch: &Arch) -> usize {
    match series_dims(arch) {
        0..=2 => 100,
        _ => 30,
    }
}

fn kernel_eval_csv(cfg: &RunConfig) -> Result<String> {
    let arch = cfg.arch();
    let n = cfg.samples.unwrap_or(10);
    let seed = cfg.seed.unwrap_or(0);
    let xs = sample_uniform(arch.zeta, arch.d, n, seed)?;
    let zs = sample_uniform(arch.zeta, arch.d, n, seed.wrapping_add(1))?;
    let mut s = format!("# {}\npair", arch.to_inline());
    for i in 1..=arch.d {
        write!(s, ",t{i}").unwrap();
    }
    s.push_str(",kernel\n");
    for (i, (x, z)) in xs.iter().zip(&zs).enumerate() {
        write!(s, "{i}").unwrap();
        for t in tvec(x, z)?.as_slice() {
            write!(s, ",{t:e}").unwrap();
        }
        writeln!(s, ",{:e}", kernel_eval(&arch, x, z)?).unwrap();
    }
    Ok(s)
}

fn read_input(key: &str, path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Config {
        key: key.into(),
        message: format!("cannot read `{}`: {e}", path.display()),
    })
}

/// One pattern per line as `k1,...,kd`; extra columns, comments and a `k1,...` header are ignored.
fn read_patterns(path: &Path, d: usize) -> Result<Vec<FrequencyPattern>> {
    let text = read_input("patterns", path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with('k') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < d {
            return Err(Error::Parse {
                line: n + 1,
                message: format!("expected {d} pattern entries, got `{line}`"),
            });
        }
        let p = fields[..d]
            .join(",")
            .parse::<FrequencyPattern>()
            .map_err(|e| Error::Parse {
                line: n + 1,
                message: e.to_string(),
            })?;
        out.push(p);
    }
    Ok(out)
}

fn requested_patterns(cfg: &RunConfig, arch: &Arch) -> Result<Vec<FrequencyPattern>> {
    if let Some(path) = &cfg.patterns {
        return read_patterns(path, arch.d);
    }
    if let Some(ray) = &cfg.ray {
        let lo = cfg.kmin.unwrap_or(1);
        return Ok(ray_patterns(ray, lo..=cfg.kmax.unwrap_or(DEFAULT_RAY_KMAX)));
    }
    let kmax = cfg.kmax.unwrap_or(DEFAULT_KMAX);
    Ok(all_patterns(arch.d, kmax)
        .into_iter()
        .filter(|p| p.max() >= cfg.kmin.unwrap_or(0))
        .collect())
}

/// Series eigenvalues for any head; trace and GAP tables sum the EqNet table over shifts.
fn series_table(arch: &Arch, patterns: &[FrequencyPattern], cap: usize) -> Result<SpectrumTable> {
    let eq = arch.with_head(Head::EqNet);
    let s = eqnet_series(&eq, cap)?;
    if arch.head == Head::EqNet {
        let mut t = eig_from_series(&s, arch.zeta, patterns)?;
        t.arch = Some(*arch);
        return Ok(t);
    }
    let mut full = eig_from_series(&s, arch.zeta, &shift_closure(patterns))?;
    full.arch = Some(eq);
    let summed = trace_gap_eigs(&full, arch.d)?;
    let mut entries = Vec::with_capacity(patterns.len());
    for p in patterns {
        entries.push(summed.entries.iter().find(|e| &e.pattern == p).cloned().unwrap());
    }
    Ok(SpectrumTable {
        arch: Some(*arch),
        zeta: arch.zeta,
        d: arch.d,
        entries,
    })
}

fn default_nodes(patterns: &[FrequencyPattern]) -> usize {
    let kmax = patterns.iter().map(FrequencyPattern::max).max().unwrap_or(0);
    DEFAULT_NODES.max(kmax + 16)
}

fn spectrum_csv(cfg: &RunConfig) -> Result<String> {
    let arch = cfg.arch();
    if cfg.kernel == Some(KernelKind::Fc) {
        if cfg.method.unwrap_or(Method::Quadrature) != Method::Quadrature {
            return Err(Error::Config {
                key: "method".into(),
                message: "kernel=fc supports method=quadrature only".into(),
            });
        }
        let fc = FcKernel {
            depth: arch.depth,
            family: arch.family,
            d: arch.d,
        };
        let patterns = requested_patterns(cfg, &arch)?;
        let m = cfg.nodes.unwrap_or(default_nodes(&patterns));
        return Ok(eig_quadrature_kernel(&fc, arch.zeta, &patterns, m)?.to_csv());
    }
    match cfg.method.unwrap_or(Method::Quadrature) {
        Method::Mc => {
            let n = cfg.samples.unwrap_or(DEFAULT_MC_SAMPLES);
            if n > MAX_MC_SAMPLES {
                return Err(Error::Config {
                    key: "samples".into(),
                    message: format!("must be <= {MAX_MC_SAMPLES} for method=mc, got {n}"),
                });
            }
            let eig = mc_operator_spectrum(&arch, n, cfg.seed.unwrap_or(0))?;
            let mut s = format!("# {} n={n}\nrank,lambda\n", arch.to_inline());
            for (i, l) in eig.iter().enumerate() {
                writeln!(s, "{i},{l:e}").unwrap();
            }
            Ok(s)
        }
        Method::Quadrature => {
            let patterns = requested_patterns(cfg, &arch)?;
            let m = cfg.nodes.unwrap_or(default_nodes(&patterns));
            Ok(eig_quadrature(&arch, &patterns, m)?.to_csv())
        }
        Method::Series => {
            let patterns = requested_patterns(cfg, &arch)?;
            Ok(series_table(&arch, &patterns, cfg.cap.unwrap_or(default_cap(&arch)))?.to_csv())
        }
    }
}

fn slope_csv(cfg: &RunConfig) -> Result<String> {
    let path = cfg.input.as_ref().ok_or_else(|| Error::Config {
        key: "in".into(),
        message: "missing; expected a spectrum CSV".into(),
    })?;
    let ray = cfg.ray.as_ref().ok_or_else(|| Error::Config {
        key: "ray".into(),
        message: "missing; expected a pattern such as k,0,0,0".into(),
    })?;
    let table = SpectrumTable::from_csv(&read_input("in", path)?)?;
    if ray.d() != table.d {
        return Err(Error::Config {
            key: "ray".into(),
            message: format!("has {} entries but the table has d={}", ray.d(), table.d),
        });
    }
    let lo = cfg.kmin.unwrap_or(1);
    let hi = match cfg.kmax {
        Some(k) => k,
        None => (lo..)
            .take_while(|&n| table.get(&ray.scaled(n)).is_some())
            .last()
            .ok_or_else(|| Error::Data(format!("table has no pattern ({}) on the ray", ray.scaled(lo))))?,
    };
    let fit = slope_fit(&table, ray, lo..=hi)?;
    let r: Vec<String> = ray.0.iter().map(usize::to_string).collect();
    Ok(format!(
        "ray,kmin,kmax,slope,intercept,r2,points\n{},{lo},{hi},{},{},{},{}\n",
        r.join(":"),
        fit.slope,
        fit.intercept,
        fit.r2,
        fit.points
    ))
}

fn train_csv(cfg: &RunConfig) -> Result<String> {
    let arch = cfg.arch();
    let targets = cfg.targets.clone().ok_or_else(|| Error::Config {
        key: "targets".into(),
        message: "missing; expected `;`-separated patterns".into(),
    })?;
    let mut base = TrainConfig {
        arch,
        m: cfg.m.unwrap_or(512),
        n_samples: cfg.samples.unwrap_or(64),
        lr: 1.0,
        threshold: cfg.threshold.unwrap_or(1e-4),
        max_iters: cfg.max_iters.unwrap_or(200_000),
        seed: cfg.seed.unwrap_or(0),
        target: targets[0].clone(),
        phases: cfg.phases.clone().unwrap_or_else(|| vec![Phase::Cos; arch.d]),
        head_scale: cfg.head_scale.unwrap_or(HeadScale::Ntk),
        center: cfg.center.unwrap_or(true),
    };
    base.lr = match cfg.lr.unwrap_or(LearningRate::Auto) {
        LearningRate::Fixed(v) => v,
        LearningRate::Auto => {
            // the search runs on the lowest nonconstant frequency, the easiest stable target
            let mut probe = base.clone();
            let mut first = vec![0; arch.d];
            first[0] = 1;
            probe.target = FrequencyPattern(first);
            lr_search(&probe, LR_PROBE_ITERS, LR_MAX_DOUBLINGS)?
        }
    };
    base.validate()?;
    let records = run_matrix(&base, &targets)?;
    Ok(run_records_to_csv(&records))
}

struct Check {
    name: String,
    measured: f64,
    tolerance: f64,
}

impl Check {
    fn pass(&self) -> bool {
        self.measured <= self.tolerance
    }
}

/// Cross-checks quadrature against the series route and the sampled operator spectrum.
fn validate(cfg: &RunConfig, stdout: &mut dyn Write) -> std::result::Result<(), CliError> {
    let arch = cfg.arch();
    let eq = arch.with_head(Head::EqNet);
    let kmax = cfg.kmax.unwrap_or(6);
    let patterns: Vec<FrequencyPattern> = all_patterns(arch.d, kmax)
        .into_iter()
        .filter(|p| p.total() <= kmax)
        .collect();
    let nodes = cfg.nodes.unwrap_or(default_nodes(&patterns));
    let quad = eig_quadrature(&eq, &patterns, nodes)?;
    let mut checks = Vec::new();

    let series = series_table(&eq, &patterns, cfg.cap.unwrap_or(default_cap(&eq)))?;
    let worst_series = quad
        .entries
        .iter()
        .zip(&series.entries)
        .filter(|(q, _)| q.lambda != 0.0)
        .map(|(q, s)| (q.lambda - s.lambda).abs() / q.lambda.abs())
        .fold(0.0, f64::max);
    checks.push(Check {
        name: format!("series_vs_quadrature_k<={kmax}"),
        measured: worst_series,
        tolerance: cfg.series_tol.unwrap_or(1e-4),
    });

    // values above every pattern on the box boundary cannot be outranked by patterns outside the box
    let kbox = kmax.max(MC_BOX);
    let full = eig_quadrature(&eq, &all_patterns(arch.d, kbox), nodes.max(kbox + 16))?;
    let boundary = full
        .entries
        .iter()
        .filter(|e| FrequencyPattern::max(&e.pattern) == kbox)
        .map(|e| e.lambda)
        .fold(0.0, f64::max);
    let predicted: Vec<(f64, u128)> = distinct_eigenvalues(&full, 1e-9)
        .into_iter()
        .filter(|&(l, _)| l > boundary)
        .take(10)
        .collect();
    let n = cfg.samples.unwrap_or(DEFAULT_MC_SAMPLES).min(MAX_MC_SAMPLES);
    let mc = mc_operator_spectrum(&eq, n, cfg.seed.unwrap_or(0))?;
    let worst_mc = match_mc_blocks(&predicted, &mc)?
        .iter()
        .map(|(l, m, _)| (l - m).abs() / l)
        .fold(0.0, f64::max);
    checks.push(Check {
        name: format!("mc_vs_quadrature_top{}", predicted.len()),
        measured: worst_mc,
        tolerance: cfg.mc_tol.unwrap_or(0.1),
    });

    let rf = eq.receptive_field();
    if rf < arch.d {
        let worst_null = full
            .entries
            .iter()
            .filter(|e| e.pattern.0[rf..].iter().any(|&k| k > 0))
            .map(|e| e.lambda.abs())
            .fold(0.0, f64::max);
        checks.push(Check {
            name: "receptive_field_nulls".into(),
            measured: worst_null,
            tolerance: 1e-10,
        });
    }

    if arch.head != Head::EqNet {
        let sym = eig_quadrature(&arch, &patterns, nodes)?;
        let worst_shift = sym
            .entries
            .iter()
            .flat_map(|e| (1..arch.d).map(move |s| (e, e.pattern.cyclic_shift(s))))
            .filter_map(|(e, p)| sym.get(&p).map(|l| (l - e.lambda).abs()))
            .fold(0.0, f64::max);
        checks.push(Check {
            name: "shift_invariance".into(),
            measured: worst_shift,
            tolerance: 0.0,
        });
    }

    let mut table = String::from("check,measured,tolerance,status\n");
    for c in &checks {
        writeln!(
            table,
            "{},{:e},{:e},{}",
            c.name,
            c.measured,
            c.tolerance,
            if c.pass() { "pass" } else { "fail" }
        )
        .unwrap();
    }
    stdout.write_all(table.as_bytes()).map_err(Error::from)?;
    if let Some(path) = &cfg.out {
        fs::write(path, &table).map_err(Error::from)?;
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass()).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(format!("failed checks: {}", failed.join(", "))))
    }
}
