//! Certification battery runner: structural symmetry and numerics checks
//! with measured errors, emitted as JSON and a human-readable table.

use isp_core::verify::{battery_with_wigner_fault, standard_battery, PropertyReport, WignerFault};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyOutcome {
    pub seed: u64,
    pub all_pass: bool,
    pub reports: Vec<PropertyReport>,
}

pub fn run_verify(cfg: &RunConfig, fault: Option<&WignerFault>) -> Result<VerifyOutcome, CliError> {
    let reports = match fault {
        None => standard_battery(cfg.seed)?,
        Some(f) => battery_with_wigner_fault(cfg.seed, f)?,
    };
    Ok(VerifyOutcome {
        seed: cfg.seed,
        all_pass: reports.iter().all(|r| r.pass),
        reports,
    })
}

pub fn human_table(outcome: &VerifyOutcome) -> String {
    let width = outcome
        .reports
        .iter()
        .map(|r| r.property.len())
        .max()
        .unwrap_or(8)
        .max(8);
    let mut out = format!("{:width$}  {:>12}  {:>10}  result\n", "property", "max error", "tolerance");
    for r in &outcome.reports {
        out.push_str(&format!(
            "{:width$}  {:>12.4e}  {:>10.1e}  {}\n",
            r.property,
            r.max_error,
            r.tolerance,
            if r.pass { "pass" } else { "FAIL" },
        ));
    }
    out.push_str(if outcome.all_pass { "all checks passed\n" } else { "FAILURES PRESENT\n" });
    out
}

/// Parses the fault-injection flag: "l,row,col,delta".
pub fn parse_fault(raw: &str) -> Result<WignerFault, CliError> {
    let parts: Vec<&str> = raw.split(',').collect();
    if parts.len() != 4 {
        return Err(CliError::Config(format!(
            "fault spec {raw:?} is not l,row,col,delta"
        )));
    }
    let bad = |what: &str| CliError::Config(format!("bad {what} in fault spec {raw:?}"));
    Ok(WignerFault {
        l: parts[0].trim().parse().map_err(|_| bad("degree"))?,
        row: parts[1].trim().parse().map_err(|_| bad("row"))?,
        col: parts[2].trim().parse().map_err(|_| bad("column"))?,
        delta: parts[3].trim().parse().map_err(|_| bad("delta"))?,
    })
}
