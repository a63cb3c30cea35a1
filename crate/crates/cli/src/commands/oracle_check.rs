//! `tweedie oracle-check`: run the analytic-oracle suites and print one
//! line per check with the measured error; nonzero exit on any failure.

use std::io::Write;
use std::path::Path;

use crate::error::{CliError, Result};
use crate::oracle_suite::run_suite;

pub struct OracleCheckArgs<'a> {
    pub suite: &'a str,
    pub out: Option<&'a Path>,
}

pub fn run(args: &OracleCheckArgs) -> Result<()> {
    let results = run_suite(args.suite)?;
    for r in &results {
        println!(
            "{} {:<32} measured {:.3e}  tolerance {:.0e}",
            if r.pass { "PASS" } else { "FAIL" },
            r.name,
            r.measured,
            r.tolerance
        );
    }
    if let Some(path) = args.out {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "check,measured,tolerance,pass")?;
        for r in &results {
            writeln!(f, "{},{:.9e},{:.0e},{}", r.name, r.measured, r.tolerance, r.pass)?;
        }
    }
    let failures = results.iter().filter(|r| !r.pass).count();
    if failures > 0 {
        return Err(CliError::numerical(format!("{failures} oracle check(s) failed")));
    }
    Ok(())
}
