//! Plain-text beam-matrix files.
//!
//! ```text
//! # beamgen matrix
//! kind=robust
//! n=16
//! k=8
//! alpha=2.3456789012345678e-2
//! epsilon_h=...
//! alpha_clamped=true
//! re,im,re,im,...     (one line per row of B, N pairs)
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::design::{BeamMatrix, DesignKind};
use crate::error::{BeamError, Result};
use crate::linalg::{CMat, C64};

const MAGIC: &str = "# beamgen matrix";

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixHeader {
    pub kind: DesignKind,
    pub num_feeds: usize,
    pub num_beams: usize,
    pub alpha: f64,
    pub epsilon_h: f64,
    pub alpha_clamped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixFile {
    pub header: MatrixHeader,
    pub values: CMat,
}

/// 17 significant digits, always with a dot decimal.
fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

impl MatrixFile {
    pub fn new(b: &BeamMatrix, alpha: f64, epsilon_h: f64, alpha_clamped: bool) -> Self {
        Self {
            header: MatrixHeader {
                kind: b.kind,
                num_feeds: b.num_feeds(),
                num_beams: b.num_beams(),
                alpha,
                epsilon_h,
                alpha_clamped,
            },
            values: b.values.clone(),
        }
    }

    pub fn to_text(&self) -> String {
        let h = &self.header;
        let mut out = String::new();
        writeln!(out, "{MAGIC}").unwrap();
        writeln!(out, "kind={}", h.kind.as_str()).unwrap();
        writeln!(out, "n={}", h.num_feeds).unwrap();
        writeln!(out, "k={}", h.num_beams).unwrap();
        writeln!(out, "alpha={}", fmt_f64(h.alpha)).unwrap();
        writeln!(out, "epsilon_h={}", fmt_f64(h.epsilon_h)).unwrap();
        writeln!(out, "alpha_clamped={}", h.alpha_clamped).unwrap();
        for row in self.values.row_iter() {
            let fields: Vec<String> = row.iter().flat_map(|z| [fmt_f64(z.re), fmt_f64(z.im)]).collect();
            writeln!(out, "{}", fields.join(",")).unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let err = |line: usize, msg: String| BeamError::MatrixFile { line, msg };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        match lines.next() {
            Some((_, MAGIC)) => {}
            _ => return Err(err(1, format!("expected '{MAGIC}'"))),
        }
        let mut field = |name: &str| -> Result<(usize, String)> {
            let (no, line) = lines.next().ok_or_else(|| err(0, format!("missing header field '{name}'")))?;
            let (key, value) = line.split_once('=').ok_or_else(|| err(no, format!("expected '{name}=...'")))?;
            if key.trim() != name {
                return Err(err(no, format!("expected '{name}', found '{}'", key.trim())));
            }
            Ok((no, value.trim().to_string()))
        };
        let (no, kind) = field("kind")?;
        let kind: DesignKind = kind.parse().map_err(|e: BeamError| err(no, e.to_string()))?;
        let (no, n) = field("n")?;
        let num_feeds: usize = n.parse().map_err(|_| err(no, format!("bad n '{n}'")))?;
        let (no, k) = field("k")?;
        let num_beams: usize = k.parse().map_err(|_| err(no, format!("bad k '{k}'")))?;
        let (no, a) = field("alpha")?;
        let alpha: f64 = a.parse().map_err(|_| err(no, format!("bad alpha '{a}'")))?;
        let (no, e) = field("epsilon_h")?;
        let epsilon_h: f64 = e.parse().map_err(|_| err(no, format!("bad epsilon_h '{e}'")))?;
        let (no, c) = field("alpha_clamped")?;
        let alpha_clamped: bool = c.parse().map_err(|_| err(no, format!("bad alpha_clamped '{c}'")))?;

        let mut values = CMat::zeros(num_beams, num_feeds);
        let mut row = 0;
        for (no, line) in lines {
            if line.is_empty() {
                continue;
            }
            if row >= num_beams {
                return Err(err(no, format!("more than {num_beams} rows")));
            }
            let nums: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>().map_err(|_| err(no, format!("bad number '{}'", f.trim()))))
                .collect::<Result<_>>()?;
            if nums.len() != 2 * num_feeds {
                return Err(err(no, format!("expected {} numbers, found {}", 2 * num_feeds, nums.len())));
            }
            for (j, pair) in nums.chunks_exact(2).enumerate() {
                values[(row, j)] = C64::new(pair[0], pair[1]);
            }
            row += 1;
        }
        if row != num_beams {
            return Err(err(0, format!("expected {num_beams} rows, found {row}")));
        }
        Ok(Self { header: MatrixHeader { kind, num_feeds, num_beams, alpha, epsilon_h, alpha_clamped }, values })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}
