use crate::error::{input, CliError};
use crate::log::Log;
use crate::Common;
use bubble_core::bench::{parse_csv, verify_report, Aggregate, BenchConfig};
use bubble_core::io::read_text;
use clap::Args;
use serde_json::{json, Value};
use std::path::PathBuf;

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Report directory holding `basin.csv` and `basin.json`; defaults to `--out`.
    pub dir: Option<PathBuf>,
    /// Also fail when the success rate is below this.
    #[arg(long = "min-success")]
    pub min_success: Option<f64>,
}

pub fn run(common: &Common, args: &VerifyArgs) -> Result<(), CliError> {
    let dir = args.dir.clone().or_else(|| common.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let records = parse_csv(&read_text(&dir.join("basin.csv"))?).map_err(input)?;
    let summary: Value = serde_json::from_str(&read_text(&dir.join("basin.json"))?)
        .map_err(|e| input(format!("basin.json: {e}")))?;
    let config: BenchConfig =
        serde_json::from_value(summary["config"].clone()).map_err(|e| input(format!("basin.json config: {e}")))?;
    let reported: Aggregate =
        serde_json::from_value(summary["aggregate"].clone()).map_err(|e| input(format!("basin.json aggregate: {e}")))?;
    let fresh = verify_report(&records, &reported, &config).map_err(input)?;
    let mut log = Log::stdout_only(common.quiet);
    if let Some(min) = args.min_success {
        if fresh.success_rate < min {
            return Err(CliError::Input(format!("success rate {} below {min}", fresh.success_rate)));
        }
    }
    log.event("verified", json!({ "dir": dir.display().to_string(), "aggregate": fresh }));
    Ok(())
}
