//! Line-oriented `key=value` configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use decoupling_lab::decoupling::{SearchMode, TrialKind};
use decoupling_lab::fields::{cap_indicator, make_test_function, GridFunction, SamplingModel, TestFunction};
use decoupling_lab::geometry::{power_of_two_exponent, FrequencyCube};
use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Extend,
    Ratio,
    Sweep,
    Kakeya,
    Multiscale,
    Compare,
    Verify,
    Fit,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::Extend,
        Command::Ratio,
        Command::Sweep,
        Command::Kakeya,
        Command::Multiscale,
        Command::Compare,
        Command::Verify,
        Command::Fit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Extend => "extend",
            Command::Ratio => "ratio",
            Command::Sweep => "sweep",
            Command::Kakeya => "kakeya",
            Command::Multiscale => "multiscale",
            Command::Compare => "compare",
            Command::Verify => "verify",
            Command::Fit => "fit",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Test function families selectable with `g=`.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GKind {
    Constant,
    RandomGaussian,
    PointMassLattice,
    /// Indicator of the given cap.
    Cap(FrequencyCube),
}

impl GKind {
    pub fn uses_seed(&self) -> bool {
        matches!(self, GKind::RandomGaussian | GKind::PointMassLattice)
    }

    /// `g` on `q` with `m` samples per axis.
    pub fn build(&self, q: &FrequencyCube, m: usize, seed: u64) -> decoupling_lab::Result<GridFunction> {
        match self {
            GKind::Constant => make_test_function(&TestFunction::Constant, q, m),
            GKind::RandomGaussian => make_test_function(&TestFunction::RandomGaussian { seed }, q, m),
            GKind::PointMassLattice => make_test_function(&TestFunction::PointMassLattice { seed }, q, m),
            GKind::Cap(c) => cap_indicator(q, c, m),
        }
    }
}

/// One tile given on the command line: `center/direction[/amplitude]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TileSpec {
    pub center: Vec<f64>,
    pub direction: Vec<f64>,
    pub amplitude: f64,
}

/// A fully validated experiment description.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub command: Command,
    pub n: usize,
    pub p: f64,
    #[serde(rename = "E")]
    pub exponent: f64,
    /// `delta = 4^-k` for each entry.
    pub delta_exponents: Vec<u32>,
    pub trials: usize,
    pub seed: Option<u64>,
    #[serde(rename = "M")]
    pub samples_per_cap: usize,
    pub padding: f64,
    pub spacing: f64,
    pub model: SamplingModel,
    pub g: GKind,
    pub mode: SearchMode,
    pub record_time: bool,
    /// Transverse cubes; defaults depend on `n`.
    pub cubes: Option<Vec<FrequencyCube>>,
    pub m: u32,
    /// `delta = 2^-delta_level` for the multiscale ledger.
    pub delta_level: u32,
    pub draws: usize,
    #[serde(rename = "R")]
    pub r: f64,
    pub nu: f64,
    pub tiles_per_family: usize,
    pub tilt: f64,
    pub spread: Option<f64>,
    pub tiles: Option<Vec<Vec<TileSpec>>>,
    pub points: Option<Vec<Vec<f64>>>,
    pub point_count: usize,
    pub radius: f64,
    pub input: Option<PathBuf>,
    pub output_path: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            command: Command::Verify,
            n: 2,
            p: 4.0,
            exponent: 8.0,
            delta_exponents: vec![1, 2, 3],
            trials: 20,
            seed: None,
            samples_per_cap: 8,
            padding: 4.0,
            spacing: 0.5,
            model: SamplingModel::Continuum,
            g: GKind::RandomGaussian,
            mode: SearchMode::Full,
            record_time: false,
            cubes: None,
            m: 1,
            delta_level: 3,
            draws: 1,
            r: 256.0,
            nu: 0.5,
            tiles_per_family: 16,
            tilt: 0.1,
            spread: None,
            tiles: None,
            points: None,
            point_count: 10,
            radius: 100.0,
            input: None,
            output_path: PathBuf::from("out"),
        }
    }
}

/// Default cap on `m`: the finest scale `delta^{2^m}` must stay resolvable.
pub const M_CAP: u32 = 2;

pub const KEYS: &[&str] = &[
    "command",
    "n",
    "p",
    "E",
    "delta_exponents",
    "trials",
    "seed",
    "M",
    "padding",
    "spacing",
    "model",
    "g",
    "mode",
    "record_time",
    "cubes",
    "m",
    "delta_level",
    "draws",
    "R",
    "nu",
    "tiles_per_family",
    "tilt",
    "spread",
    "tiles",
    "points",
    "point_count",
    "radius",
    "input",
    "output_path",
];

/// Ordered `key -> value` pairs before validation.
pub type RawConfig = BTreeMap<String, String>;

/// Splits `key=value` lines; `#` starts a comment. Malformed lines are
/// reported together with every other violation.
pub fn parse_lines(source: &str) -> (RawConfig, Vec<String>) {
    let mut raw = RawConfig::new();
    let mut errors = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) => {
                raw.insert(k.trim().to_string(), v.trim().to_string());
            }
            None => errors.push(format!("line {}: expected key=value, got {line:?}", i + 1)),
        }
    }
    (raw, errors)
}

/// Parses and validates a whole config file.
pub fn parse_config(source: &str) -> Result<ExperimentConfig, Vec<String>> {
    let (raw, errors) = parse_lines(source);
    build(&raw, errors)
}

fn list<T: std::str::FromStr>(s: &str, sep: char) -> Option<Vec<T>> {
    s.split(sep).map(|x| x.trim().parse().ok()).collect()
}

fn parse_cube(s: &str) -> Result<FrequencyCube, String> {
    let (corner, level) = s
        .split_once('@')
        .ok_or_else(|| format!("cube {s:?} must look like i,j@level"))?;
    let corner: Vec<u64> = list(corner, ',').ok_or_else(|| format!("cube {s:?} has a bad corner"))?;
    let level: u32 = level.trim().parse().map_err(|_| format!("cube {s:?} has a bad level"))?;
    FrequencyCube::new(corner, level).map_err(|e| e.to_string())
}

fn parse_tile(s: &str) -> Result<TileSpec, String> {
    let parts: Vec<&str> = s.split('/').collect();
    if parts.len() < 2 || parts.len() > 3 {
        return Err(format!("tile {s:?} must look like center/direction[/amplitude]"));
    }
    let center = list(parts[0], ',').ok_or_else(|| format!("tile {s:?} has a bad center"))?;
    let direction = list(parts[1], ',').ok_or_else(|| format!("tile {s:?} has a bad direction"))?;
    let amplitude = match parts.get(2) {
        Some(a) => a.trim().parse().map_err(|_| format!("tile {s:?} has a bad amplitude"))?,
        None => 1.0,
    };
    Ok(TileSpec {
        center,
        direction,
        amplitude,
    })
}

/// Validates `raw` on top of the defaults; every violation is collected.
pub fn build(raw: &RawConfig, mut errors: Vec<String>) -> Result<ExperimentConfig, Vec<String>> {
    let mut c = ExperimentConfig::default();
    let mut command_given = false;
    for (key, value) in raw {
        let v = value.as_str();
        let mut bad = |what: &str| errors.push(format!("{key}: {what}, got {v:?}"));
        match key.as_str() {
            "command" => match Command::parse(v) {
                Some(cmd) => {
                    c.command = cmd;
                    command_given = true;
                }
                None => bad("unknown command"),
            },
            "n" => match v.parse() {
                Ok(n) => c.n = n,
                Err(_) => bad("expected an integer"),
            },
            "p" => match v.parse::<f64>() {
                Ok(p) => c.p = p,
                Err(_) => bad("expected a number"),
            },
            "E" => match v.parse() {
                Ok(e) => c.exponent = e,
                Err(_) => bad("expected a number"),
            },
            "delta_exponents" => match list(v, ',') {
                Some(l) => c.delta_exponents = l,
                None => bad("expected a comma-separated list of integers"),
            },
            "trials" => match v.parse() {
                Ok(t) => c.trials = t,
                Err(_) => bad("expected an integer"),
            },
            "seed" => match v.parse() {
                Ok(s) => c.seed = Some(s),
                Err(_) => bad("expected an unsigned integer"),
            },
            "M" => match v.parse() {
                Ok(m) => c.samples_per_cap = m,
                Err(_) => bad("expected an integer"),
            },
            "padding" => match v.parse() {
                Ok(x) => c.padding = x,
                Err(_) => bad("expected a number"),
            },
            "spacing" => match v.parse() {
                Ok(x) => c.spacing = x,
                Err(_) => bad("expected a number"),
            },
            "model" => match v {
                "continuum" => c.model = SamplingModel::Continuum,
                "lattice" => c.model = SamplingModel::Lattice,
                _ => bad("expected continuum or lattice"),
            },
            "g" => match v {
                "constant" => c.g = GKind::Constant,
                "random-gaussian" => c.g = GKind::RandomGaussian,
                "point-mass-lattice" => c.g = GKind::PointMassLattice,
                _ if v.starts_with("cap:") => match parse_cube(&v[4..]) {
                    Ok(q) => c.g = GKind::Cap(q),
                    Err(e) => errors.push(format!("g: {e}")),
                },
                _ => bad("expected constant, random-gaussian, point-mass-lattice or cap:i,j@level"),
            },
            "mode" => match v {
                "full" => c.mode = SearchMode::Full,
                _ => match TrialKind::parse(v) {
                    Some(k) => c.mode = SearchMode::Forced(k),
                    None => bad("expected full, single-cap, constant, cap-phases or random-gaussian"),
                },
            },
            "record_time" => match v.parse() {
                Ok(b) => c.record_time = b,
                Err(_) => bad("expected true or false"),
            },
            "cubes" => match v.split(';').map(parse_cube).collect::<Result<Vec<_>, _>>() {
                Ok(cubes) => c.cubes = Some(cubes),
                Err(e) => errors.push(format!("cubes: {e}")),
            },
            "m" => match v.parse() {
                Ok(m) => c.m = m,
                Err(_) => bad("expected an integer"),
            },
            "delta_level" => match v.parse() {
                Ok(k) => c.delta_level = k,
                Err(_) => bad("expected an integer"),
            },
            "draws" => match v.parse() {
                Ok(d) => c.draws = d,
                Err(_) => bad("expected an integer"),
            },
            "R" => match v.parse() {
                Ok(r) => c.r = r,
                Err(_) => bad("expected a number"),
            },
            "nu" => match v.parse() {
                Ok(x) => c.nu = x,
                Err(_) => bad("expected a number"),
            },
            "tiles_per_family" => match v.parse() {
                Ok(t) => c.tiles_per_family = t,
                Err(_) => bad("expected an integer"),
            },
            "tilt" => match v.parse() {
                Ok(x) => c.tilt = x,
                Err(_) => bad("expected a number"),
            },
            "spread" => match v.parse() {
                Ok(x) => c.spread = Some(x),
                Err(_) => bad("expected a number"),
            },
            "tiles" => {
                let fams: Result<Vec<Vec<TileSpec>>, String> = v
                    .split('|')
                    .map(|fam| fam.split(';').filter(|t| !t.trim().is_empty()).map(parse_tile).collect())
                    .collect();
                match fams {
                    Ok(f) => c.tiles = Some(f),
                    Err(e) => errors.push(format!("tiles: {e}")),
                }
            }
            "points" => match v.split(';').map(|p| list(p, ',')).collect::<Option<Vec<Vec<f64>>>>() {
                Some(p) => c.points = Some(p),
                None => bad("expected points x,y;x,y"),
            },
            "point_count" => match v.parse() {
                Ok(x) => c.point_count = x,
                Err(_) => bad("expected an integer"),
            },
            "radius" => match v.parse() {
                Ok(x) => c.radius = x,
                Err(_) => bad("expected a number"),
            },
            "input" => c.input = Some(PathBuf::from(v)),
            "output_path" => c.output_path = PathBuf::from(v),
            _ => errors.push(format!("unknown key {key:?}")),
        }
    }
    if !command_given {
        errors.push("command: missing".into());
    }
    validate(&c, &mut errors);
    if errors.is_empty() {
        Ok(c)
    } else {
        Err(errors)
    }
}

fn uses_randomness(c: &ExperimentConfig) -> bool {
    match c.command {
        Command::Sweep | Command::Compare => true,
        Command::Extend => c.g.uses_seed() || c.points.is_none(),
        Command::Ratio | Command::Multiscale => c.g.uses_seed(),
        Command::Kakeya => c.tiles.is_none(),
        Command::Verify | Command::Fit => false,
    }
}

fn validate(c: &ExperimentConfig, errors: &mut Vec<String>) {
    if !(c.p >= 2.0) {
        errors.push(format!("p must be ≥ 2, got {}", c.p));
    }
    if c.n < 2 {
        errors.push(format!("n must be ≥ 2, got {}", c.n));
    }
    if !(c.exponent >= 1.0) {
        errors.push(format!("E must be ≥ 1, got {}", c.exponent));
    }
    if c.samples_per_cap == 0 {
        errors.push("M must be ≥ 1".into());
    }
    if !(c.padding >= 1.0) {
        errors.push(format!("padding must be ≥ 1, got {}", c.padding));
    }
    if !(c.spacing > 0.0 && c.spacing <= 0.5 && power_of_two_exponent(1.0 / c.spacing).is_some()) {
        errors.push(format!("spacing must be a dyadic number ≤ 1/2, got {}", c.spacing));
    }
    if c.delta_exponents.is_empty() && matches!(c.command, Command::Sweep | Command::Ratio | Command::Compare) {
        errors.push("delta_exponents must not be empty".into());
    }
    if c.delta_exponents.iter().any(|&k| k == 0 || k > 12) {
        errors.push(format!("delta_exponents must lie in 1..=12, got {:?}", c.delta_exponents));
    }
    if c.m == 0 {
        errors.push("m must be ≥ 1".into());
    }
    if c.delta_level == 0 {
        errors.push("delta_level must be ≥ 1".into());
    }
    if c.command == Command::Kakeya {
        let j = power_of_two_exponent(c.r);
        if !matches!(j, Some(j) if j % 2 == 0 && j >= 2) {
            errors.push(format!("R must be a power of 4 (≥ 4) so that the raster is dyadic, got {}", c.r));
        }
        if !(c.nu > 0.0) {
            errors.push(format!("nu must be positive, got {}", c.nu));
        }
    }
    if let Some(cubes) = &c.cubes {
        if cubes.len() != c.n || cubes.iter().any(|q| q.dim() != c.n - 1) {
            errors.push(format!("cubes: need n = {} cubes in [0,1]^{}", c.n, c.n - 1));
        }
    }
    if let Some(points) = &c.points {
        if points.iter().any(|x| x.len() != c.n) {
            errors.push(format!("points must have {} coordinates", c.n));
        }
    }
    if c.command == Command::Fit && c.input.is_none() {
        errors.push("input: required for command=fit (a sweep CSV)".into());
    }
    if c.seed.is_none() && uses_randomness(c) {
        errors.push(format!("seed: required for command={} (it draws random data)", c.command));
    }
}

/// The resolved config as `key=value` lines, for the manifest.
pub fn echo(c: &ExperimentConfig) -> BTreeMap<String, serde_json::Value> {
    match serde_json::to_value(c) {
        Ok(serde_json::Value::Object(map)) => map.into_iter().collect(),
        _ => BTreeMap::new(),
    }
}
