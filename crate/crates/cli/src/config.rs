//! Flat `key=value` run configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use convspectra::kernel::{split_pairs, Arch, FirstLayer, ARCH_KEYS};
use convspectra::netlab::HeadScale;
use convspectra::spectrum::{FrequencyPattern, Method, Phase};
use convspectra::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    KernelEval,
    Series,
    Spectrum,
    Slope,
    Paths,
    Profile,
    Train,
    Validate,
}

pub const COMMANDS: [&str; 8] = [
    "kernel-eval",
    "series",
    "spectrum",
    "slope",
    "paths",
    "profile",
    "train",
    "validate",
];

impl Command {
    const ALL: [Command; 8] = [
        Command::KernelEval,
        Command::Series,
        Command::Spectrum,
        Command::Slope,
        Command::Paths,
        Command::Profile,
        Command::Train,
        Command::Validate,
    ];

    pub fn name(self) -> &'static str {
        COMMANDS[Self::ALL.iter().position(|&c| c == self).unwrap()]
    }

    fn needs_arch(self) -> bool {
        !matches!(self, Command::Slope | Command::Paths | Command::Profile)
    }

    /// Keys accepted besides `command` and, where needed, the arch keys.
    pub fn keys(self) -> &'static [&'static str] {
        match self {
            Command::KernelEval => &["samples", "seed", "out"],
            Command::Series => &["cap", "out"],
            Command::Spectrum => &[
                "kernel", "nodes", "patterns", "ray", "kmin", "kmax", "method", "cap", "samples", "seed", "out",
            ],
            Command::Slope => &["in", "ray", "kmin", "kmax"],
            Command::Paths => &["L", "q", "first_layer", "out"],
            Command::Profile => &["L", "q", "max_sep", "a_tilde", "freq", "out"],
            Command::Train => &[
                "m",
                "samples",
                "lr",
                "threshold",
                "max_iters",
                "seed",
                "targets",
                "phases",
                "head_scale",
                "center",
                "out",
            ],
            Command::Validate => &["nodes", "cap", "kmax", "samples", "seed", "series_tol", "mc_tol", "out"],
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        COMMANDS
            .iter()
            .position(|&c| c == s.trim())
            .map(|i| Self::ALL[i])
            .ok_or_else(|| Error::Config {
                key: "command".into(),
                message: format!("`{s}` is not one of {}", COMMANDS.join(", ")),
            })
    }
}

/// Kernel analysed by `spectrum`: the convolutional kernel of the arch, or
/// the fully connected kernel of the same depth and family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Conv,
    Fc,
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelKind::Conv => "conv",
            KernelKind::Fc => "fc",
        })
    }
}

impl FromStr for KernelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "conv" => Ok(KernelKind::Conv),
            "fc" => Ok(KernelKind::Fc),
            other => Err(format!("`{other}` is not one of conv, fc")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LearningRate {
    Auto,
    Fixed(f64),
}

impl fmt::Display for LearningRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LearningRate::Auto => f.write_str("auto"),
            LearningRate::Fixed(v) => write!(f, "{v}"),
        }
    }
}

/// A validated command with its options. Unset options take per-command defaults.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub command: Option<Command>,
    pub arch: Option<Arch>,
    pub depth: Option<usize>,
    pub filter: Option<usize>,
    pub first_layer: Option<FirstLayer>,
    pub kernel: Option<KernelKind>,
    pub nodes: Option<usize>,
    pub cap: Option<usize>,
    pub patterns: Option<PathBuf>,
    pub ray: Option<FrequencyPattern>,
    pub kmin: Option<usize>,
    pub kmax: Option<usize>,
    pub method: Option<Method>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub max_sep: Option<usize>,
    pub a_tilde: Option<f64>,
    pub freq: Option<u64>,
    pub m: Option<usize>,
    pub lr: Option<LearningRate>,
    pub threshold: Option<f64>,
    pub max_iters: Option<usize>,
    pub targets: Option<Vec<FrequencyPattern>>,
    pub phases: Option<Vec<Phase>>,
    pub head_scale: Option<HeadScale>,
    pub center: Option<bool>,
    pub series_tol: Option<f64>,
    pub mc_tol: Option<f64>,
}

fn config_err(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        message: message.into(),
    }
}

fn int_in<T>(key: &str, value: &str, lo: T, hi: T) -> Result<T>
where
    T: FromStr + PartialOrd + fmt::Display + Copy,
{
    value
        .trim()
        .parse::<T>()
        .ok()
        .filter(|v| *v >= lo && *v <= hi)
        .ok_or_else(|| config_err(key, format!("must be an integer in [{lo}, {hi}], got `{value}`")))
}

fn positive(key: &str, value: &str, hi: f64) -> Result<f64> {
    value
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| *v > 0.0 && *v <= hi)
        .ok_or_else(|| config_err(key, format!("must be a number in (0, {hi}], got `{value}`")))
}

fn keyword<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value.trim().parse::<T>().map_err(|e| config_err(key, e.to_string()))
}

fn pattern(key: &str, value: &str) -> Result<FrequencyPattern> {
    value
        .parse::<FrequencyPattern>()
        .map_err(|e| config_err(key, e.to_string()))
}

/// A ray direction; `k` stands for an active pixel, as in `k,k,0,0`.
fn ray(key: &str, value: &str) -> Result<FrequencyPattern> {
    let p = pattern(key, &value.replace('k', "1"))?;
    if p.total() == 0 {
        return Err(config_err(key, "ray must have at least one active pixel"));
    }
    Ok(p)
}

fn pattern_list(key: &str, value: &str) -> Result<Vec<FrequencyPattern>> {
    let list: Vec<FrequencyPattern> = value
        .split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|s| pattern(key, s))
        .collect::<Result<_>>()?;
    if list.is_empty() {
        return Err(config_err(key, "expected `;`-separated patterns such as `1,0,0;2,0,0`"));
    }
    Ok(list)
}

fn join<T: fmt::Display>(items: &[T], sep: &str) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(sep)
}

impl RunConfig {
    /// Builds a config from ordered pairs; a later pair overrides an earlier one with the same key.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut map: BTreeMap<&str, &str> = BTreeMap::new();
        for (k, v) in pairs {
            map.insert(k.as_str(), v.as_str());
        }
        let command: Command = map
            .remove("command")
            .ok_or_else(|| config_err("command", format!("missing; expected one of {}", COMMANDS.join(", "))))?
            .parse()?;
        let own = command.keys();
        for &key in map.keys() {
            let arch_key = command.needs_arch() && ARCH_KEYS.contains(&key);
            if !arch_key && !own.contains(&key) {
                let mut legal: Vec<&str> = Vec::new();
                if command.needs_arch() {
                    legal.extend(ARCH_KEYS);
                }
                legal.extend(own);
                return Err(config_err(
                    key,
                    format!("unknown key for `{command}`; expected one of {}", legal.join(", ")),
                ));
            }
        }
        let mut cfg = RunConfig {
            command: Some(command),
            ..Default::default()
        };
        if command.needs_arch() {
            let arch_pairs = map.iter().filter(|(k, _)| ARCH_KEYS.contains(k)).map(|(k, v)| (*k, *v));
            cfg.arch = Some(Arch::from_pairs(arch_pairs)?);
        }
        for (&key, &value) in &map {
            if command.needs_arch() && ARCH_KEYS.contains(&key) {
                continue;
            }
            match key {
                "L" => cfg.depth = Some(int_in(key, value, 1, 4096)?),
                "q" => cfg.filter = Some(int_in(key, value, 1, 4096)?),
                "first_layer" => cfg.first_layer = Some(keyword(key, value)?),
                "kernel" => cfg.kernel = Some(keyword(key, value)?),
                "nodes" => cfg.nodes = Some(int_in(key, value, 1, 512)?),
                "cap" => cfg.cap = Some(int_in(key, value, 1, 100_000)?),
                "patterns" => cfg.patterns = Some(PathBuf::from(value)),
                "ray" => cfg.ray = Some(ray(key, value)?),
                "kmin" => cfg.kmin = Some(int_in(key, value, 0, 10_000)?),
                "kmax" => cfg.kmax = Some(int_in(key, value, 0, 10_000)?),
                "method" => cfg.method = Some(keyword(key, value)?),
                "samples" => cfg.samples = Some(int_in(key, value, 1, 1_000_000)?),
                "seed" => cfg.seed = Some(int_in(key, value, 0, u64::MAX)?),
                "out" => cfg.out = Some(PathBuf::from(value)),
                "in" => cfg.input = Some(PathBuf::from(value)),
                "max_sep" => cfg.max_sep = Some(int_in(key, value, 1, 1_000_000)?),
                "a_tilde" => {
                    let v = positive(key, value, 1e6)?;
                    if v <= 1.0 {
                        return Err(config_err(key, format!("must be a number in (1, 1e6], got `{value}`")));
                    }
                    cfg.a_tilde = Some(v);
                }
                "freq" => cfg.freq = Some(int_in(key, value, 0, u64::MAX)?),
                "m" => cfg.m = Some(int_in(key, value, 1, 65_536)?),
                "lr" => {
                    cfg.lr = Some(if value.trim() == "auto" {
                        LearningRate::Auto
                    } else {
                        LearningRate::Fixed(positive(key, value, 1e6).map_err(|_| {
                            config_err(key, format!("must be `auto` or a number in (0, 1e6], got `{value}`"))
                        })?)
                    })
                }
                "threshold" => cfg.threshold = Some(positive(key, value, 1e6)?),
                "max_iters" => cfg.max_iters = Some(int_in(key, value, 1, 1_000_000_000)?),
                "targets" => cfg.targets = Some(pattern_list(key, value)?),
                "phases" => {
                    cfg.phases = Some(value.split(',').map(|p| keyword(key, p)).collect::<Result<_>>()?);
                }
                "head_scale" => cfg.head_scale = Some(keyword(key, value)?),
                "center" => cfg.center = Some(keyword(key, value)?),
                "series_tol" => cfg.series_tol = Some(positive(key, value, 1.0)?),
                "mc_tol" => cfg.mc_tol = Some(positive(key, value, 1.0)?),
                _ => unreachable!("key `{key}` passed the allow-list"),
            }
        }
        if let (Some(lo), Some(hi)) = (cfg.kmin, cfg.kmax) {
            if lo > hi {
                return Err(config_err("kmin", format!("must be <= kmax ({hi}), got {lo}")));
            }
        }
        if matches!(command, Command::Paths | Command::Profile) {
            cfg.depth.ok_or_else(|| config_err("L", "missing"))?;
            cfg.filter.ok_or_else(|| config_err("q", "missing"))?;
        }
        if let Some(arch) = &cfg.arch {
            for (key, p) in cfg
                .ray
                .iter()
                .map(|r| ("ray", r))
                .chain(cfg.targets.iter().flatten().map(|t| ("targets", t)))
            {
                if p.d() != arch.d {
                    return Err(config_err(
                        key,
                        format!("pattern ({p}) has {} entries, expected d={}", p.d(), arch.d),
                    ));
                }
            }
            if let Some(phases) = &cfg.phases {
                if phases.len() != arch.d {
                    return Err(config_err(
                        "phases",
                        format!("expected {} entries, got {}", arch.d, phases.len()),
                    ));
                }
            }
        }
        Ok(cfg)
    }

    pub fn command(&self) -> Command {
        self.command.expect("RunConfig built without a command")
    }

    pub fn arch(&self) -> Arch {
        self.arch.expect("command takes an arch")
    }

    /// Canonical `key=value` lines: `command`, the arch keys, then options in a fixed order.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        if let Some(c) = self.command {
            writeln!(s, "command={c}").unwrap();
        }
        if let Some(a) = &self.arch {
            s.push_str(&a.to_kv());
        }
        let mut put = |key: &str, value: Option<String>| {
            if let Some(v) = value {
                writeln!(s, "{key}={v}").unwrap();
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        put("L", self.depth.map(|v| v.to_string()));
        put("q", self.filter.map(|v| v.to_string()));
        put("first_layer", self.first_layer.map(|v| v.to_string()));
        put("kernel", self.kernel.map(|v| v.to_string()));
        put("nodes", self.nodes.map(|v| v.to_string()));
        put("cap", self.cap.map(|v| v.to_string()));
        put("patterns", path(&self.patterns));
        put("ray", self.ray.as_ref().map(|v| v.to_string()));
        put("kmin", self.kmin.map(|v| v.to_string()));
        put("kmax", self.kmax.map(|v| v.to_string()));
        put("method", self.method.map(|v| v.to_string()));
        put("samples", self.samples.map(|v| v.to_string()));
        put("seed", self.seed.map(|v| v.to_string()));
        put("in", path(&self.input));
        put("max_sep", self.max_sep.map(|v| v.to_string()));
        put("a_tilde", self.a_tilde.map(|v| v.to_string()));
        put("freq", self.freq.map(|v| v.to_string()));
        put("m", self.m.map(|v| v.to_string()));
        put("lr", self.lr.map(|v| v.to_string()));
        put("threshold", self.threshold.map(|v| v.to_string()));
        put("max_iters", self.max_iters.map(|v| v.to_string()));
        put("targets", self.targets.as_ref().map(|v| join(v, ";")));
        put("phases", self.phases.as_ref().map(|v| join(v, ",")));
        put("head_scale", self.head_scale.map(|v| v.to_string()));
        put("center", self.center.map(|v| v.to_string()));
        put("series_tol", self.series_tol.map(|v| v.to_string()));
        put("mc_tol", self.mc_tol.map(|v| v.to_string()));
        put("out", path(&self.out));
        s
    }
}

/// Parses `key=value` lines or a flat TOML-style table.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    RunConfig::from_pairs(&split_pairs(text)?)
}
