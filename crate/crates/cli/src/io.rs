//! File helpers that attach the path to every I/O error.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, Context};

pub fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_reader(open(path)?).invalid(&path.display().to_string())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).invalid(&path.display().to_string())?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

/// A CSV table built in memory and written in one go.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        // writing to a Vec cannot fail
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        w.into_inner().expect("in-memory write")
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        write_bytes(path, &self.to_bytes())
    }
}

/// Read a CSV file into records keyed by header name.
pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    rdr.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .invalid(&path.display().to_string())
}

pub fn exists(path: &Path) -> bool {
    fs::metadata(path).is_ok()
}
