//! Per-run metrics as CSV rows.

use std::io::Write;

use serde::Serialize;

use crate::runner::RunReport;

#[derive(Debug, Serialize)]
struct Row<'a> {
    scenario: &'a str,
    seed: u64,
    design: String,
    ticks: u64,
    quiescent: bool,
    blocks_mined: u64,
    stale_blocks: u64,
    reorgs: u64,
    undone_txs: u64,
    messages_delivered: u64,
    messages_dropped: u64,
    replay_checks: u64,
    replay_mismatches: usize,
    pow_violations: u64,
    confirmed_txs: usize,
    unconfirmed_txs: u64,
    resubmissions: u64,
    mean_latency: Option<f64>,
    passed: bool,
}

pub fn write_csv<W: Write>(out: W, reports: &[&RunReport]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        let m = &r.metrics;
        w.serialize(Row {
            scenario: &r.scenario,
            seed: r.seed,
            design: r.design.to_string(),
            ticks: r.ticks,
            quiescent: r.quiescent,
            blocks_mined: m.blocks_mined,
            stale_blocks: m.stale_blocks,
            reorgs: m.reorgs,
            undone_txs: m.undone_txs,
            messages_delivered: m.messages_delivered,
            messages_dropped: m.messages_dropped,
            replay_checks: m.replay_checks,
            replay_mismatches: m.replay_mismatches.len(),
            pow_violations: m.pow_violations,
            confirmed_txs: m.latencies.len(),
            unconfirmed_txs: m.unconfirmed_txs,
            resubmissions: m.resubmissions,
            mean_latency: m.mean_latency(None).map(|x| (x * 100.0).round() / 100.0),
            passed: r.passed(),
        })?;
    }
    w.flush()?;
    Ok(())
}
