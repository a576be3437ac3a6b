use std::fmt::Write as _;

use basisn::cost::CostReport;
use serde::Serialize;

use super::cost::{CostPayload, CrossingRow};
use super::sweep::{AccuracyPayload, GridRow};
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::output::{read_payload, Output};

pub const COST_FILE: &str = "cost.json";
pub const ACCURACY_FILE: &str = "accuracy.json";

#[derive(Debug, Serialize)]
struct Payload {
    dim: usize,
    coeff_bits: u32,
    num_crossbars: usize,
    cost: Vec<CostReport>,
    crossings: Vec<CrossingRow>,
    accuracy: Vec<GridRow>,
}

fn load<T: serde::de::DeserializeOwned>(cfg: &ExperimentConfig, name: &str) -> CliResult<Option<T>> {
    let path = cfg.out_dir.join(name);
    if !path.exists() {
        return Ok(None);
    }
    let value = read_payload(&path)?;
    serde_json::from_value(value)
        .map(Some)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn run(cfg: &ExperimentConfig) -> CliResult<()> {
    let cost: Option<CostPayload> = load(cfg, COST_FILE)?;
    let accuracy: Option<AccuracyPayload> = load(cfg, ACCURACY_FILE)?;
    if cost.is_none() && accuracy.is_none() {
        return Err(CliError::Data(format!(
            "nothing to report: neither {} nor {} exists (run `cost` or `sweep-accuracy` first)",
            cfg.out_dir.join(COST_FILE).display(),
            cfg.out_dir.join(ACCURACY_FILE).display()
        )));
    }
    let c = &cfg.crossbar;
    let (reports, crossings) = match cost {
        Some(p) => (
            p.reports
                .into_iter()
                .filter(|r| r.dim == c.dim && r.coeff_bits == c.coeff_bits && r.crossbars_available == c.num_crossbars as u64)
                .collect(),
            p.crossings,
        ),
        None => (Vec::new(), Vec::new()),
    };
    let payload = Payload {
        dim: c.dim,
        coeff_bits: c.coeff_bits,
        num_crossbars: c.num_crossbars,
        cost: reports,
        crossings,
        accuracy: accuracy.map(|a| a.grid).unwrap_or_default(),
    };

    let out = Output::new("report", cfg)?;
    out.json("report.json", &payload)?;
    let md = markdown(&payload, &out.header.config_sha256);
    let path = out.bytes("report.md", md.as_bytes())?;
    print!("{md}");
    eprintln!("report: {}", path.display());
    Ok(())
}

fn pct(v: f64) -> String {
    format!("{:.3}%", 100.0 * v)
}

fn markdown(p: &Payload, hash: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "<!-- {} {} config_sha256 {hash} -->", crate::output::TOOL, crate::output::VERSION);
    let _ = writeln!(s, "# BasisN report\n");
    if !p.cost.is_empty() {
        let _ = writeln!(
            s,
            "## Cost at {} crossbars of {d}x{d}, N = {}\n",
            p.num_crossbars,
            p.coeff_bits,
            d = p.dim
        );
        let _ = writeln!(
            s,
            "| network | crossbars needed | cycles / row | cycles / block | EDP / row | EDP / block | slowdown (row) |"
        );
        let _ = writeln!(s, "|---|---:|---:|---:|---:|---:|---:|");
        for r in &p.cost {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} | {} | {:.0}x |",
                r.network,
                r.crossbars_needed,
                pct(r.cycle_ratio_row),
                pct(r.cycle_ratio_block),
                pct(r.edp_ratio_row),
                pct(r.edp_ratio_block),
                r.slowdown_row
            );
        }
        let _ = writeln!(s);
    }
    if !p.crossings.is_empty() {
        let _ = writeln!(s, "## Crossing points\n");
        let _ = writeln!(s, "| network | d | N | crossbars needed | row-based | block-based |");
        let _ = writeln!(s, "|---|---:|---:|---:|---:|---:|");
        let show = |v: Option<u64>| v.map_or("none".to_string(), |a| a.to_string());
        for c in &p.crossings {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} | {} |",
                c.network,
                c.dim,
                c.coeff_bits,
                c.crossbars_needed,
                show(c.crossing_row),
                show(c.crossing_block)
            );
        }
        let _ = writeln!(s);
    }
    if !p.accuracy.is_empty() {
        let _ = writeln!(s, "## Toy accuracy (mean over seeds)\n");
        let _ = writeln!(s, "| N | d | cell bits | seeds | test % | float test % | mean popcount |");
        let _ = writeln!(s, "|---:|---:|---:|---:|---:|---:|---:|");
        for g in &p.accuracy {
            let cell = if g.cell_bits == 0 { "full".to_string() } else { g.cell_bits.to_string() };
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {:.2} | {:.2} | {:.3} |",
                g.coeff_bits, g.dim, cell, g.seeds, g.mean_test_accuracy, g.mean_float_test_accuracy, g.mean_popcount
            );
        }
    }
    s
}
