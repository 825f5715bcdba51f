//! CSV emission with a provenance preamble.
//!
//! Every file starts with `#` comment lines naming the library version, the
//! subcommand and every resolved parameter, followed by a header row.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use crate::params::Params;

pub struct CsvOut {
    inner: csv::Writer<Box<dyn Write>>,
}

impl CsvOut {
    /// Opens `path`, or stdout for `-`.
    pub fn create(path: &str, command: &str, params: &Params, header: &[&str]) -> io::Result<Self> {
        let mut sink: Box<dyn Write> = if path == "-" {
            Box::new(BufWriter::new(io::stdout()))
        } else {
            Box::new(BufWriter::new(File::create(Path::new(path))?))
        };
        write_preamble(&mut sink, command, params)?;
        let mut inner = csv::Writer::from_writer(sink);
        inner.write_record(header)?;
        Ok(Self { inner })
    }

    pub fn row<I, T>(&mut self, fields: I) -> io::Result<()>
    where
        I: IntoIterator<Item = T>,
        T: AsRef<[u8]>,
    {
        self.inner.write_record(fields)?;
        Ok(())
    }

    pub fn finish(mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

pub fn write_preamble(w: &mut dyn Write, command: &str, params: &Params) -> io::Result<()> {
    writeln!(w, "# noised-topk {}", env!("CARGO_PKG_VERSION"))?;
    writeln!(w, "# command: {command}")?;
    for (k, v) in params.iter() {
        writeln!(w, "# {k} = {v}")?;
    }
    Ok(())
}

/// Formats an optional metric; empty when absent.
pub fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
