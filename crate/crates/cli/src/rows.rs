//! Row sources: CSV text or the `ROWS` binary container.
//!
//! Binary layout: `"ROWS"`, `d: u32` little-endian, then `f64` entries,
//! row-major, until end of input.

use std::io::{BufRead, ErrorKind};

use byteorder::{LittleEndian, ReadBytesExt};

use crate::CliError;

pub const ROWS_MAGIC: &[u8; 4] = b"ROWS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Bin,
}

pub enum RowReader<R> {
    Csv { input: R, line: usize, buf: String },
    Bin { input: R, d: usize, row: usize },
}

impl<R: BufRead> RowReader<R> {
    pub fn new(mut input: R, format: Format) -> Result<Self, CliError> {
        match format {
            Format::Csv => Ok(RowReader::Csv {
                input,
                line: 0,
                buf: String::new(),
            }),
            Format::Bin => {
                let mut magic = [0u8; 4];
                input
                    .read_exact(&mut magic)
                    .map_err(|_| CliError::Malformed("binary input is missing its header".into()))?;
                if &magic != ROWS_MAGIC {
                    return Err(CliError::Malformed("binary input does not start with \"ROWS\"".into()));
                }
                let d = input
                    .read_u32::<LittleEndian>()
                    .map_err(|_| CliError::Malformed("binary input is missing its dimension".into()))?;
                if d == 0 {
                    return Err(CliError::Malformed("binary input declares d = 0".into()));
                }
                Ok(RowReader::Bin {
                    input,
                    d: d as usize,
                    row: 0,
                })
            }
        }
    }

    /// Dimension declared by the container, if it has one.
    pub fn declared_dim(&self) -> Option<usize> {
        match self {
            RowReader::Csv { .. } => None,
            RowReader::Bin { d, .. } => Some(*d),
        }
    }

    pub fn next_row(&mut self) -> Result<Option<Vec<f64>>, CliError> {
        match self {
            RowReader::Csv { input, line, buf } => loop {
                buf.clear();
                if input.read_line(buf).map_err(CliError::io)? == 0 {
                    return Ok(None);
                }
                *line += 1;
                let text = buf.trim();
                if text.is_empty() {
                    continue;
                }
                let row = text
                    .split(',')
                    .map(|f| f.trim().parse::<f64>())
                    .collect::<Result<Vec<f64>, _>>()
                    .map_err(|e| CliError::Malformed(format!("line {line}: {e}")))?;
                return Ok(Some(row));
            },
            RowReader::Bin { input, d, row } => {
                let mut bytes = vec![0u8; *d * 8];
                let mut filled = 0;
                while filled < bytes.len() {
                    match input.read(&mut bytes[filled..]) {
                        Ok(0) => break,
                        Ok(n) => filled += n,
                        Err(e) if e.kind() == ErrorKind::Interrupted => {}
                        Err(e) => return Err(CliError::io(e)),
                    }
                }
                if filled == 0 {
                    return Ok(None);
                }
                *row += 1;
                if filled < bytes.len() {
                    return Err(CliError::Malformed(format!("row {row} is truncated")));
                }
                let mut out = vec![0.0; *d];
                (&bytes[..])
                    .read_f64_into::<LittleEndian>(&mut out)
                    .map_err(CliError::io)?;
                Ok(Some(out))
            }
        }
    }
}

/// Comma-separated list; the empty string is the empty list.
pub fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|e| CliError::Usage(format!("bad {what} entry {s:?}: {e}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bin(d: u32, vals: &[f64]) -> Vec<u8> {
        let mut b = ROWS_MAGIC.to_vec();
        b.extend_from_slice(&d.to_le_bytes());
        for v in vals {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    #[test]
    fn csv_rows() {
        let mut r = RowReader::new("0.5, 0.5\n\n1,0\n".as_bytes(), Format::Csv).unwrap();
        assert_eq!(r.next_row().unwrap(), Some(vec![0.5, 0.5]));
        assert_eq!(r.next_row().unwrap(), Some(vec![1.0, 0.0]));
        assert_eq!(r.next_row().unwrap(), None);
        let mut bad = RowReader::new("0.5,x\n".as_bytes(), Format::Csv).unwrap();
        assert!(matches!(bad.next_row(), Err(CliError::Malformed(_))));
    }

    #[test]
    fn binary_rows() {
        let bytes = bin(2, &[0.1, 0.2, 0.3, 0.4]);
        let mut r = RowReader::new(&bytes[..], Format::Bin).unwrap();
        assert_eq!(r.declared_dim(), Some(2));
        assert_eq!(r.next_row().unwrap(), Some(vec![0.1, 0.2]));
        assert_eq!(r.next_row().unwrap(), Some(vec![0.3, 0.4]));
        assert_eq!(r.next_row().unwrap(), None);
        let short = bin(2, &[0.1, 0.2, 0.3]);
        let mut r = RowReader::new(&short[..], Format::Bin).unwrap();
        r.next_row().unwrap();
        assert!(matches!(r.next_row(), Err(CliError::Malformed(_))));
        assert!(RowReader::new(&b"ROW"[..], Format::Bin).is_err());
    }

    #[test]
    fn lists() {
        assert_eq!(parse_list::<u64>("", "w").unwrap(), Vec::<u64>::new());
        assert_eq!(parse_list::<u64>("8, 16", "w").unwrap(), vec![8, 16]);
        assert!(parse_list::<u64>("8,x", "w").is_err());
    }
}
