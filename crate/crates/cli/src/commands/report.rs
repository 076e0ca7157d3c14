//! `odl report`: quick per-method summary of a results.csv.

use std::collections::BTreeMap;
use std::path::Path;

use odl_core::bench::SWEEP_CSV_HEADER;
use odl_core::{Error, Result};

pub fn run(input: &Path) -> Result<()> {
    let text = std::fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == SWEEP_CSV_HEADER => {}
        _ => {
            return Err(Error::format(
                input,
                format!("line 1: expected header {SWEEP_CSV_HEADER:?}"),
            ))
        }
    }
    let mut per_method: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut failed = 0usize;
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::format(
                input,
                format!("line {}: expected 7 fields, got {}", i + 2, fields.len()),
            ));
        }
        let eps: f64 = fields[5].parse().map_err(|_| {
            Error::format(input, format!("line {}: bad epsilon {:?}", i + 2, fields[5]))
        })?;
        if eps.is_nan() {
            failed += 1;
        } else {
            per_method.entry(fields[0].to_string()).or_default().push(eps);
        }
    }
    println!("{:<12} {:>6} {:>12} {:>12} {:>12}", "method", "cells", "min", "median", "max");
    for (method, mut eps) in per_method {
        eps.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = eps[eps.len() / 2];
        println!(
            "{:<12} {:>6} {:>12.4e} {:>12.4e} {:>12.4e}",
            method,
            eps.len(),
            eps[0],
            median,
            eps[eps.len() - 1]
        );
    }
    if failed > 0 {
        println!("{failed} cells were NaN");
    }
    Ok(())
}
