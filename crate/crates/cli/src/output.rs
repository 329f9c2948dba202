//! Record output: CSV with a header row, or one JSON object per line.
//! Records are written in index order, so files depend only on the inputs.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::config::Format;
use crate::CliError;

fn open(out: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match out {
        Some(path) => Box::new(BufWriter::new(
            File::create(path).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", path.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn io_error(e: impl std::fmt::Display) -> CliError {
    CliError::Failed(format!("writing output: {e}"))
}

/// Writes `csv_rows` (flat records) or `json_rows` depending on `format`.
pub fn emit<C: Serialize, J: Serialize>(
    format: Format,
    out: Option<&Path>,
    csv_rows: &[C],
    json_rows: &[J],
) -> Result<(), CliError> {
    let mut writer = open(out)?;
    match format {
        Format::Csv => {
            let mut csv = csv::Writer::from_writer(&mut writer);
            for row in csv_rows {
                csv.serialize(row).map_err(io_error)?;
            }
            csv.flush().map_err(io_error)?;
        }
        Format::Jsonl => {
            for row in json_rows {
                serde_json::to_writer(&mut writer, row).map_err(io_error)?;
                writer.write_all(b"\n").map_err(io_error)?;
            }
        }
    }
    writer.flush().map_err(io_error)
}
