//! Field dumps and tabular output.
//!
//! Binary field layout: magic `EWF1`, `u32` tag (`d | p << 16`, with `p` the
//! number of copies of the base grid, 1 for plain fields), `u32` points per
//! axis, `f64` box length, then `N^(d p)` values, all little-endian and
//! row-major with the last axis fastest.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{ScalarField, TorusGrid};

const MAGIC: &[u8; 4] = b"EWF1";

/// Decoded dump: base grid, copy count and flat values.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldDump {
    pub grid: TorusGrid,
    pub copies: u32,
    pub values: Vec<f64>,
}

impl FieldDump {
    pub fn into_field(self) -> Result<ScalarField> {
        if self.copies != 1 {
            return Err(Error::BadDump(format!("pair-grid dump with {} copies is not a plain field", self.copies)));
        }
        ScalarField::new(&self.grid, self.values)
    }
}

pub fn write_dump(w: &mut impl Write, grid: &TorusGrid, copies: u32, values: &[f64]) -> Result<()> {
    let expected = grid.len().pow(copies);
    if values.len() != expected {
        return Err(Error::SizeMismatch { expected, got: values.len() });
    }
    w.write_all(MAGIC)?;
    w.write_all(&((grid.dim() as u32) | (copies << 16)).to_le_bytes())?;
    w.write_all(&(grid.points() as u32).to_le_bytes())?;
    w.write_all(&grid.length().to_le_bytes())?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_dump(r: &mut impl Read) -> Result<FieldDump> {
    let mut head = [0u8; 16];
    r.read_exact(&mut head).map_err(|_| Error::BadDump("truncated header".into()))?;
    if &head[..4] != MAGIC {
        return Err(Error::BadDump("bad magic".into()));
    }
    let tag = u32::from_le_bytes(head[4..8].try_into().unwrap());
    let points = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    let mut lbuf = [0u8; 8];
    lbuf[..4].copy_from_slice(&head[12..16]);
    r.read_exact(&mut lbuf[4..]).map_err(|_| Error::BadDump("truncated header".into()))?;
    let length = f64::from_le_bytes(lbuf);
    let dim = (tag & 0xffff) as usize;
    let copies = (tag >> 16).max(1);
    let grid = TorusGrid::new(dim, points, length).map_err(|e| Error::BadDump(e.to_string()))?;
    let count = grid.len().pow(copies);
    let mut bytes = Vec::with_capacity(count * 8);
    r.read_to_end(&mut bytes)?;
    if bytes.len() != count * 8 {
        return Err(Error::BadDump(format!("expected {} values, found {} bytes", count, bytes.len())));
    }
    let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(FieldDump { grid, copies, values })
}

pub fn save_field(path: impl AsRef<Path>, field: &ScalarField) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dump(&mut w, field.grid(), 1, field.values())?;
    w.flush()?;
    Ok(())
}

/// Saves a function on `grid x grid`, e.g. a two-point correlation.
pub fn save_pair_field(path: impl AsRef<Path>, base: &TorusGrid, values: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dump(&mut w, base, 2, values)?;
    w.flush()?;
    Ok(())
}

pub fn load_dump(path: impl AsRef<Path>) -> Result<FieldDump> {
    read_dump(&mut BufReader::new(File::open(path)?))
}

/// A CSV table with a header row.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn push_numbers(&mut self, row: &[f64]) {
        self.push(row.iter().map(|v| num(*v)).collect());
    }

    pub fn write(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.header).map_err(csv_err)?;
        for r in &self.rows {
            out.write_record(r).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(File::create(path)?)
    }
}

/// Shortest round-trip decimal form.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_dump_roundtrip() {
        let g = TorusGrid::new(2, 8, 3.5).unwrap();
        let f = ScalarField::from_fn(&g, |x| x[0] * 0.3 - x[1].sin());
        let mut buf = Vec::new();
        write_dump(&mut buf, &g, 1, f.values()).unwrap();
        assert_eq!(&buf[..4], b"EWF1");
        assert_eq!(buf.len(), 4 + 4 + 4 + 8 + 64 * 8);
        let back = read_dump(&mut buf.as_slice()).unwrap().into_field().unwrap();
        assert_eq!(back.values(), f.values());
        assert_eq!(back.grid(), &g);
    }

    #[test]
    fn pair_dump_and_errors() {
        let g = TorusGrid::new(1, 4, 1.0).unwrap();
        let vals: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let mut buf = Vec::new();
        write_dump(&mut buf, &g, 2, &vals).unwrap();
        let d = read_dump(&mut buf.as_slice()).unwrap();
        assert_eq!(d.copies, 2);
        assert_eq!(d.values, vals);
        assert!(matches!(d.into_field(), Err(Error::BadDump(_))));
        assert!(matches!(read_dump(&mut &buf[..buf.len() - 3]), Err(Error::BadDump(_))));
        assert!(matches!(read_dump(&mut &b"XXXX0000000000000000"[..]), Err(Error::BadDump(_))));
        assert!(write_dump(&mut Vec::new(), &g, 2, &vals[..3]).is_err());
    }

    #[test]
    fn table_csv() {
        let mut t = Table::new(&["n", "value"]);
        t.push_numbers(&[2.0, 0.1]);
        t.push(vec!["4".into(), "x,y".into()]);
        let mut out = Vec::new();
        t.write(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "n,value\n2.0,0.1\n4,\"x,y\"\n");
    }
}
