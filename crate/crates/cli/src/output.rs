//! Tab-separated output with `#` metadata headers.

use std::fmt::Display;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};

pub struct Table {
    out: Box<dyn Write>,
}

impl Table {
    /// Writes to `path`, or to standard output when `path` is `None`.
    pub fn create(path: Option<&Path>) -> Result<Self> {
        let out: Box<dyn Write> = match path {
            Some(p) => Box::new(BufWriter::new(
                File::create(p).with_context(|| format!("cannot create output file {}", p.display()))?,
            )),
            None => Box::new(BufWriter::new(io::stdout().lock())),
        };
        Ok(Table { out })
    }

    pub fn comment(&mut self, text: impl Display) -> Result<()> {
        for line in text.to_string().lines() {
            writeln!(self.out, "# {line}")?;
        }
        Ok(())
    }

    pub fn row<I, T>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = T>,
        T: Display,
    {
        let line: Vec<String> = fields.into_iter().map(|f| f.to_string()).collect();
        writeln!(self.out, "{}", line.join("\t"))?;
        Ok(())
    }

    pub fn raw(&mut self, text: &str) -> Result<()> {
        self.out.write_all(text.as_bytes())?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// Shortest round-trip representation of a float.
pub fn num(x: f64) -> String {
    format!("{x}")
}
