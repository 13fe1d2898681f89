//! Config parsing, subcommands and CSV output for the `proxyhedge` binary.

pub mod commands;
pub mod config;

use commands::Table;
use std::io::Write;

/// Header, records, then any trailer lines; LF line endings.
pub fn write_csv<W: Write>(out: W, table: &Table) -> std::io::Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(&table.header)?;
    for r in &table.rows {
        w.write_record(r)?;
    }
    w.flush()?;
    let mut out = w.into_inner().map_err(|e| e.into_error())?;
    for line in &table.trailer {
        writeln!(out, "{line}")?;
    }
    out.flush()
}
