//! Versioned CSV output with a reproducibility stanza.
//!
//! Every file starts with `# <schema>` and one `# key=value` line per
//! resolved setting, then a header row. Floats are written with 9
//! significant digits.

use std::collections::BTreeMap;
use std::io::Write;

use sdp4bit_core::train::TrainTrace;

use crate::error::Result;

pub const TRACE_SCHEMA: &str = "sdp4bit-trace v1";

pub const TRACE_COLUMNS: [&str; 9] = [
    "iter",
    "train_loss",
    "val_loss",
    "grad_norm_sq",
    "relq_diff",
    "relq_weight",
    "e_norm",
    "intra_bytes",
    "inter_bytes",
];

pub fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.8e}")
    }
}

/// Writes the stanza and a table. Rows are already formatted.
pub fn write_table<W: Write>(
    mut out: W,
    schema: &str,
    stanza: &BTreeMap<String, String>,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    writeln!(out, "# {schema}").map_err(csv::Error::from)?;
    for (k, v) in stanza {
        writeln!(out, "# {k}={v}").map_err(csv::Error::from)?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_trace<W: Write>(
    out: W,
    stanza: &BTreeMap<String, String>,
    trace: &TrainTrace,
) -> Result<()> {
    let rows = trace.rows.iter().map(|r| {
        vec![
            r.iter.to_string(),
            fmt_num(r.train_loss),
            r.val_loss.map(fmt_num).unwrap_or_default(),
            fmt_num(r.grad_norm_sq),
            fmt_num(r.relq_diff),
            fmt_num(r.relq_weight),
            fmt_num(r.e_norm),
            r.intra_bytes.to_string(),
            r.inter_bytes.to_string(),
        ]
    });
    write_table(out, TRACE_SCHEMA, stanza, &TRACE_COLUMNS, rows)
}
