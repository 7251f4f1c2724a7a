//! Metric CSV output.

use dpbalance_core::schedulers::Scheduler;
use dpbalance_core::{FairnessParams, MetricSeries};
use std::io::Write;

pub const CSV_HEADER: [&str; 11] = [
    "round",
    "scheduler",
    "beta",
    "lambda",
    "round_eff",
    "round_fair",
    "cum_eff",
    "cum_fair",
    "pipelines_allocated",
    "pipeline_units",
    "blocks_retired",
];

/// Shortest decimal form of `v` rounded to 12 significant digits.
pub fn format_number(v: f64) -> String {
    let rounded: f64 = format!("{v:.11e}").parse().expect("formatted float parses");
    if rounded == 0.0 {
        "0".into()
    } else {
        format!("{rounded}")
    }
}

/// One labelled series to write.
pub struct SeriesRows<'a> {
    pub scheduler: Scheduler,
    pub params: FairnessParams,
    pub series: &'a MetricSeries,
}

/// Writes the header followed by every row of every series.
pub fn write_csv<W: Write>(out: W, all: &[SeriesRows<'_>]) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(CSV_HEADER)?;
    for s in all {
        for r in &s.series.rounds {
            w.write_record([
                r.round.to_string(),
                s.scheduler.name().to_string(),
                format_number(s.params.beta),
                format_number(s.params.lambda),
                format_number(r.round_efficiency),
                format_number(r.round_fairness),
                format_number(r.cumulative_efficiency),
                format_number(r.cumulative_fairness),
                r.pipelines_allocated.to_string(),
                format_number(r.pipeline_units),
                r.blocks_retired.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn csv_string(all: &[SeriesRows<'_>]) -> String {
    let mut buf = Vec::new();
    write_csv(&mut buf, all).expect("writing to memory");
    String::from_utf8(buf).expect("csv is utf-8")
}
