//! Command dispatch.

use std::fs;

use decoupling_lab::decoupling::{fit_eta, scale_sweep, DecouplingInstance, GridParams, RatioEvaluator, SweepSpec};
use decoupling_lab::fields::{evaluate_extension, SpatialPointSet};
use decoupling_lab::geometry::{DyadicLength, FrequencyCube};
use decoupling_lab::multilinear::compare::{linear_vs_multilinear_report, CompareSpec};
use decoupling_lab::multilinear::iteration::{multiscale_inequality_check, IterationLedger};
use decoupling_lab::multilinear::kakeya::{axis_dominant_families, kakeya_check, Tile};
use decoupling_lab::multilinear::{MultiParams, TransverseConfig};
use decoupling_lab::parallel::with_workers;
use decoupling_lab::report::{self, SCHEMA_VERSION};
use decoupling_lab::LabError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{echo, Command, ExperimentConfig, M_CAP};
use crate::error::{CliError, CliResult};
use crate::manifest::{Recorder, RunManifest};
use crate::verify::{render_table, run_checks, verify_csv};

/// Options that are not part of the experiment itself.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub workers: Option<usize>,
    pub verbose: bool,
}

fn grid(c: &ExperimentConfig) -> GridParams {
    GridParams {
        padding: c.padding,
        spacing: c.spacing,
    }
}

fn json<T: Serialize>(value: &T) -> String {
    report::to_json(value).expect("report serializes")
}

/// Cubes of side 1/4 at the origin and at `3/4 e_j`.
pub fn default_cubes(n: usize) -> Vec<FrequencyCube> {
    (0..n)
        .map(|j| {
            let mut corner = vec![0u64; n - 1];
            if j > 0 {
                corner[j - 1] = 3;
            }
            FrequencyCube::new(corner, 2).expect("valid default cube")
        })
        .collect()
}

fn seed(c: &ExperimentConfig) -> u64 {
    c.seed.unwrap_or(0)
}

/// Runs the configured command, writing outputs and `manifest.json` into
/// `config.output_path`.
pub fn run(config: &ExperimentConfig, opts: &RunOptions) -> CliResult<RunManifest> {
    let mut rec = Recorder::new(
        &config.output_path,
        config.command.name(),
        opts.workers,
        echo(config),
        opts.verbose,
    )?;
    if matches!(config.command, Command::Multiscale | Command::Compare) && config.m > M_CAP {
        rec.warn(format!(
            "m = {} exceeds the default cap {M_CAP}: the finest scale delta^(2^m) needs 2^(delta_level 2^m) samples per axis",
            config.m
        ));
    }
    let outcome = with_workers(opts.workers, || dispatch(config, &mut rec))?;
    outcome?;
    rec.finish()
}

fn dispatch(c: &ExperimentConfig, rec: &mut Recorder) -> CliResult<()> {
    match c.command {
        Command::Extend => extend(c, rec),
        Command::Ratio => ratio(c, rec),
        Command::Sweep => sweep(c, rec),
        Command::Kakeya => kakeya(c, rec),
        Command::Multiscale => multiscale(c, rec),
        Command::Compare => compare(c, rec),
        Command::Verify => verify(rec),
        Command::Fit => fit(c, rec),
    }
}

fn extend(c: &ExperimentConfig, rec: &mut Recorder) -> CliResult<()> {
    let q = FrequencyCube::unit(c.n - 1);
    let g = c.g.build(&q, c.samples_per_cap, seed(c))?.with_model(c.model);
    let points = match &c.points {
        Some(p) => p.clone(),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed(c));
            (0..c.point_count)
                .map(|_| (0..c.n).map(|_| rng.gen_range(-c.radius..=c.radius)).collect())
                .collect()
        }
    };
    let pts = SpatialPointSet::explicit(points)?;
    let values = rec.stage("extend", || Ok(evaluate_extension(&g, &pts)?))?;
    let mut out: Vec<String> = (0..c.n).map(|i| format!("x{i}")).collect();
    out.extend(["re", "im", "abs", "schema_version"].map(String::from));
    let mut csv = out.join(",") + "\n";
    for (x, v) in pts.points.iter().zip(&values) {
        let coords: Vec<String> = x.iter().map(ToString::to_string).collect();
        csv.push_str(&format!("{},{},{},{},{SCHEMA_VERSION}\n", coords.join(","), v.re, v.im, v.norm()));
    }
    rec.write("extend.csv", &csv)
}

fn ratio(c: &ExperimentConfig, rec: &mut Recorder) -> CliResult<()> {
    let mut csv = String::from("n,p,E,delta_exponent,g,ratio,schema_version\n");
    let label = match &c.g {
        crate::config::GKind::Cap(q) => {
            let idx: Vec<String> = q.corner_index().iter().map(ToString::to_string).collect();
            format!("cap:{}@{}", idx.join(";"), q.level())
        }
        other => serde_json::to_value(other).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
    };
    for &k in &c.delta_exponents {
        let r = rec.stage(&format!("ratio k={k}"), || {
            let inst = DecouplingInstance::new(c.n, c.p, c.exponent, k)?
                .with_samples_per_cap(c.samples_per_cap)
                .with_grid(grid(c));
            let template = inst.template();
            let g = c.g.build(template.cube(), template.samples_per_axis(), seed(c))?;
            Ok(RatioEvaluator::new(&inst, &template)?.ratio(&g)?)
        })?;
        csv.push_str(&format!(
            "{},{},{},{k},{label},{r},{SCHEMA_VERSION}\n",
            c.n, c.p, c.exponent
        ));
    }
    rec.write("ratio.csv", &csv)
}

fn sweep(c: &ExperimentConfig, rec: &mut Recorder) -> CliResult<()> {
    let mut spec = SweepSpec::new(c.n, c.p, c.exponent, c.delta_exponents.clone(), c.trials, seed(c));
    spec.mode = c.mode;
    spec.samples_per_cap = c.samples_per_cap;
    spec.grid = grid(c);
    spec.record_time = c.record_time;
    let report = rec.stage("sweep", || Ok(scale_sweep(&spec)?))?;
    if let Some(err) = &report.fit_error {
        rec.warn(format!("no growth fit: {err}"));
    }
    rec.write("sweep.csv", &report::sweep_csv(&report))?;
    rec.write("sweep.json", &json(&report))
}

fn families(c: &ExperimentConfig) -> CliResult<Vec<Vec<Tile>>> {
    match &c.tiles {
        Some(fams) => Ok(fams
            .iter()
            .map(|f| {
                f.iter()
                    .map(|t| Tile::new(t.center.clone(), t.direction.clone(), c.r, t.amplitude))
                    .collect::<decoupling_lab::Result<Vec<_>>>()
            })
            .collect::<decoupling_lab::Result<Vec<_>>>()?),
        None => Ok(axis_dominant_families(
            c.n,
            c.r,
            c.tiles_per_family,
            c.tilt,
            c.spread.unwrap_or(c.r / 2.0),
            seed(c),
        )?),
    }
}

fn kakeya(c: &ExperimentConfig, rec: &mut Recorder) -> CliResult<()> {
    let fams = families(c)?;
    let report = rec.stage("kakeya", || Ok(kakeya_check(&fams, c.r, c.nu)?))?;
    rec.write("kakeya.csv", &report::kakeya_csv(std::slice::from_ref(&report)))?;
    rec.write("kakeya.json", &json(&report))
}

/// Largest frequency grid (total samples) the multiscale command will build.
pub const MAX_SAMPLES: u64 = 1 << 20;

/// `M` rounded up to a multiple of the finest cap count per axis.
fn multiscale_samples(c: &ExperimentConfig) -> CliResult<usize> {
    let bits = c.delta_level as u64 * (1u64 << c.m.min(32));
    let total_bits = bits * (c.n as u64 - 1);
    if total_bits > MAX_SAMPLES.trailing_zeros() as u64 {
        return Err(LabError::Resolution(format!(
            "delta^(2^m) = 2^-{bits} needs 2^{total_bits} frequency samples, more than the limit {MAX_SAMPLES}; lower m or delta_level"
        ))
        .into());
    }
    let step = 1usize << bits;
    Ok(c.samples_per_cap.div_ceil(step) * step)
}

fn multiscale(c: &ExperimentConfig, rec: &mut Recorder) -> CliResult<()> {
    let cubes = c.cubes.clone().unwrap_or_else(|| default_cubes(c.n));
    let cfg = TransverseConfig::new(cubes, c.m, DyadicLength::new(c.delta_level)?)?;
    let params = MultiParams {
        exponent: c.exponent,
        grid: grid(c),
    };
    let per_axis = multiscale_samples(c)?;
    let q = FrequencyCube::unit(c.n - 1);
    let mut ledgers: Vec<IterationLedger> = Vec::with_capacity(c.draws);
    for d in 0..c.draws.max(1) {
        let g = c.g.build(&q, per_axis, seed(c).wrapping_add(d as u64))?;
        let ledger = rec.stage(&format!("multiscale draw {d}"), || {
            Ok(multiscale_inequality_check(&g, c.p, &cfg, &params)?)
        })?;
        ledgers.push(ledger);
    }
    let worst = ledgers
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.implied_constant.total_cmp(&b.1.implied_constant))
        .map(|(i, _)| i)
        .unwrap_or(0);
    rec.write("ledger.json", &json(&ledgers[worst]))?;
    if ledgers.len() > 1 {
        let mut csv = String::from("draw,lhs,rhs,implied_constant,schema_version\n");
        for (i, l) in ledgers.iter().enumerate() {
            csv.push_str(&format!(
                "{i},{},{},{},{SCHEMA_VERSION}\n",
                l.lhs, l.rhs, l.implied_constant
            ));
        }
        rec.write("ledger_draws.csv", &csv)?;
    }
    Ok(())
}

fn compare(c: &ExperimentConfig, rec: &mut Recorder) -> CliResult<()> {
    let spec = CompareSpec {
        n: c.n,
        p: c.p,
        exponent: c.exponent,
        delta_exponents: c.delta_exponents.clone(),
        trials: c.trials,
        seed: seed(c),
        cubes: c.cubes.clone().unwrap_or_else(|| default_cubes(c.n)),
        m: c.m,
        samples_per_cap: c.samples_per_cap,
        grid: grid(c),
    };
    let report = rec.stage("compare", || Ok(linear_vs_multilinear_report(&spec)?))?;
    if let Some(err) = &report.fit_error {
        rec.warn(format!("no growth fit: {err}"));
    }
    rec.write("compare.csv", &report::compare_csv(&report))?;
    rec.write("compare.json", &json(&report))
}

fn verify(rec: &mut Recorder) -> CliResult<()> {
    let checks = rec.stage("verify", || Ok(run_checks()))?;
    print!("{}", render_table(&checks));
    rec.write("verify.csv", &verify_csv(&checks))?;
    let failed = checks.iter().filter(|c| !c.pass).count();
    if failed > 0 {
        return Err(CliError::VerifyFailed(failed));
    }
    Ok(())
}

#[derive(Serialize)]
struct FitOutput {
    source: String,
    rows: Vec<(u32, f64)>,
    eta_hat: f64,
    intercept: f64,
    residual: f64,
}

/// Reads `delta_exponent` and a ratio column (`best_ratio`, `ratio` or
/// `multilinear_ratio`) from a CSV written by this tool.
pub fn read_fit_rows(text: &str) -> CliResult<Vec<(u32, f64)>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name);
    let k_col = col("delta_exponent");
    let r_col = col("best_ratio").or_else(|| col("ratio")).or_else(|| col("multilinear_ratio"));
    let (Some(kc), Some(rc)) = (k_col, r_col) else {
        return Err(CliError::Config(vec![
            "input: CSV needs a delta_exponent column and a best_ratio, ratio or multilinear_ratio column".into(),
        ]));
    };
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let k = f.get(kc).and_then(|s| s.parse().ok());
            let r = f.get(rc).and_then(|s| s.parse().ok());
            match (k, r) {
                (Some(k), Some(r)) => Ok((k, r)),
                _ => Err(CliError::Config(vec![format!("input: malformed row {}", i + 2)])),
            }
        })
        .collect()
}

fn fit(c: &ExperimentConfig, rec: &mut Recorder) -> CliResult<()> {
    let path = c.input.clone().expect("validated");
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let rows = read_fit_rows(&text)?;
    let points: Vec<(f64, f64)> = rows.iter().map(|&(k, r)| (0.25f64.powi(k as i32), r)).collect();
    let f = rec.stage("fit", || Ok(fit_eta(&points)?))?;
    println!("eta_hat = {} (intercept {}, residual {})", f.eta_hat, f.intercept, f.residual);
    rec.write(
        "fit.json",
        &json(&FitOutput {
            source: path.display().to_string(),
            rows,
            eta_hat: f.eta_hat,
            intercept: f.intercept,
            residual: f.residual,
        }),
    )
}
