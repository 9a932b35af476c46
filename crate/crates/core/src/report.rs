//! Versioned CSV and JSON emission.

use serde::{Deserialize, Serialize};

use crate::decoupling::DecouplingReport;
use crate::multilinear::compare::CompareReport;
use crate::multilinear::kakeya::KakeyaReport;

pub const SCHEMA_VERSION: u32 = 1;

/// Any record with a `schema_version` field added at the top level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Versioned<T> {
    pub schema_version: u32,
    #[serde(flatten)]
    pub body: T,
}

impl<T> Versioned<T> {
    pub fn new(body: T) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            body,
        }
    }
}

/// Pretty JSON of `value` with `schema_version`, newline terminated.
pub fn to_json<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let mut s = serde_json::to_string_pretty(&Versioned::new(value))?;
    s.push('\n');
    Ok(s)
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub const SWEEP_HEADER: &str = "n,p,E,delta_exponent,trials,seed,best_ratio,argmax_kind,wall_ms,schema_version";

pub fn sweep_csv(report: &DecouplingReport) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.n,
            r.p,
            r.exponent,
            r.delta_exponent,
            r.trials,
            r.seed,
            r.best_ratio,
            r.argmax_kind,
            opt(r.wall_ms),
            SCHEMA_VERSION
        ));
    }
    out
}

pub const KAKEYA_HEADER: &str = "R,nu,tiles_per_family,lhs,rhs,ratio,grid_spacing,schema_version";

/// One row per report; tile counts are joined with `;`.
pub fn kakeya_csv(reports: &[KakeyaReport]) -> String {
    let mut out = String::from(KAKEYA_HEADER);
    out.push('\n');
    for r in reports {
        let tiles: Vec<String> = r.tiles_per_family.iter().map(ToString::to_string).collect();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.r,
            r.nu,
            tiles.join(";"),
            r.lhs,
            r.rhs,
            r.ratio,
            r.grid_spacing,
            SCHEMA_VERSION
        ));
    }
    out
}

pub const COMPARE_HEADER: &str = "n,p,E,delta_exponent,linear_estimate,multilinear_ratio,multilinear_kind,caps_per_cube,weight_constant,cs_ceiling,holder_bound_ok,constraint_ok,nu,schema_version";

pub fn compare_csv(report: &CompareReport) -> String {
    let mut out = String::from(COMPARE_HEADER);
    out.push('\n');
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            report.n,
            report.p,
            report.exponent,
            r.delta_exponent,
            r.linear_estimate,
            r.multilinear_ratio,
            r.multilinear_kind,
            r.caps_per_cube,
            r.weight_constant,
            r.cs_ceiling,
            r.holder_bound_ok,
            r.constraint_ok,
            r.nu,
            SCHEMA_VERSION
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoupling::{scale_sweep, SweepSpec};

    #[test]
    fn sweep_csv_layout() {
        let report = scale_sweep(&SweepSpec::new(2, 4.0, 8.0, vec![1, 2], 3, 9)).unwrap();
        let csv = sweep_csv(&report);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], SWEEP_HEADER);
        assert_eq!(lines.len(), 3);
        let fields: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(fields.len(), 10);
        assert_eq!(fields[8], "");
        assert_eq!(fields[9], "1");
        assert_eq!(fields[6].parse::<f64>().unwrap(), report.rows[0].best_ratio);
    }

    #[test]
    fn json_carries_version() {
        #[derive(Serialize)]
        struct Body {
            kappa: f64,
        }
        let s = to_json(&Body { kappa: 0.5 }).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["schema_version"], 1);
        assert_eq!(v["kappa"], 0.5);
    }
}
