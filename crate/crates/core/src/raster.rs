//! Uniform grids and the ESRI ASCII grid format.
//!
//! Row 0 is the northernmost row. Cell `(row, col)` has its center at
//! `x = xll + (col + 0.5)·cs`, `y = yll + (nrows − row − 0.5)·cs`.

use std::fmt::Write as _;
use std::fs;
use std::ops::RangeInclusive;
use std::path::Path;

use thiserror::Error;

use crate::geo::PlanarPoint;

pub const DEFAULT_NODATA: f64 = -9999.0;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("header line {line}: {message}")]
    Header { line: usize, message: String },
    #[error("row {row}: expected {expected} values, found {found}")]
    ValueCount { row: usize, expected: usize, found: usize },
    #[error("expected {expected} rows, found {found}")]
    RowCount { expected: usize, found: usize },
    #[error("row {row}, column {col}: cannot parse value {text:?}")]
    BadValue { row: usize, col: usize, text: String },
    #[error("row {row}, column {col}: value {value} outside {allowed}")]
    OutOfRange {
        row: usize,
        col: usize,
        value: f64,
        allowed: &'static str,
    },
    #[error("grid header mismatch: {0}")]
    Misaligned(String),
}

/// Grid geometry shared by every raster in a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridHeader {
    pub ncols: usize,
    pub nrows: usize,
    pub xllcorner: f64,
    pub yllcorner: f64,
    pub cellsize: f64,
}

impl GridHeader {
    pub fn len(&self) -> usize {
        self.ncols * self.nrows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.ncols + col
    }

    pub fn cell_center(&self, row: usize, col: usize) -> PlanarPoint {
        PlanarPoint::new(
            self.xllcorner + (col as f64 + 0.5) * self.cellsize,
            self.yllcorner + ((self.nrows - row) as f64 - 0.5) * self.cellsize,
        )
    }

    /// Conservative row/column ranges whose cell centers may lie within
    /// `radius` of `p`. `None` when the window misses the grid entirely.
    /// Callers still apply the exact distance test.
    pub fn window(&self, p: PlanarPoint, radius: f64) -> Option<(RangeInclusive<usize>, RangeInclusive<usize>)> {
        let cs = self.cellsize;
        let col_lo = ((p.x - radius - self.xllcorner) / cs - 0.5).floor() - 1.0;
        let col_hi = ((p.x + radius - self.xllcorner) / cs - 0.5).ceil() + 1.0;
        let row_lo = (self.nrows as f64 - 0.5 - (p.y + radius - self.yllcorner) / cs).floor() - 1.0;
        let row_hi = (self.nrows as f64 - 0.5 - (p.y - radius - self.yllcorner) / cs).ceil() + 1.0;
        let clamp = |lo: f64, hi: f64, n: usize| -> Option<RangeInclusive<usize>> {
            if n == 0 || hi < 0.0 || lo > (n - 1) as f64 || !lo.is_finite() || !hi.is_finite() {
                return None;
            }
            Some((lo.max(0.0) as usize)..=(hi.min((n - 1) as f64) as usize))
        };
        Some((clamp(row_lo, row_hi, self.nrows)?, clamp(col_lo, col_hi, self.ncols)?))
    }

    /// Exact equality of dimensions, origin and cell size.
    pub fn check_aligned(&self, other: &GridHeader) -> Result<(), RasterError> {
        if self == other {
            Ok(())
        } else {
            Err(RasterError::Misaligned(format!(
                "{}x{} @ ({}, {}) cs {} vs {}x{} @ ({}, {}) cs {}",
                self.ncols,
                self.nrows,
                self.xllcorner,
                self.yllcorner,
                self.cellsize,
                other.ncols,
                other.nrows,
                other.xllcorner,
                other.yllcorner,
                other.cellsize
            )))
        }
    }
}

/// A raster of reals aligned to a [`GridHeader`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub header: GridHeader,
    pub values: Vec<f64>,
}

impl Grid {
    pub fn zeros(header: GridHeader) -> Self {
        Grid {
            header,
            values: vec![0.0; header.len()],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[self.header.index(row, col)]
    }

    pub fn rows(&self) -> std::slice::Chunks<'_, f64> {
        self.values.chunks(self.header.ncols)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// An ESRI ASCII grid as read from or written to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct AsciiGrid {
    pub header: GridHeader,
    pub nodata: f64,
    pub values: Vec<f64>,
}

impl AsciiGrid {
    pub fn is_nodata(&self, idx: usize) -> bool {
        self.values[idx] == self.nodata
    }

    pub fn read(path: &Path) -> Result<Self, RasterError> {
        let text = fs::read_to_string(path).map_err(|source| RasterError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, RasterError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).peekable();

        let (mut ncols, mut nrows, mut cellsize) = (None, None, None);
        let (mut xll, mut yll) = (None, None);
        let (mut xcenter, mut ycenter) = (None, None);
        let mut nodata = None;
        while let Some(&(lineno, line)) = lines.peek() {
            let mut parts = line.split_whitespace();
            let key = match parts.next() {
                Some(k) if k.chars().next().is_some_and(|c| c.is_ascii_alphabetic()) => k.to_ascii_lowercase(),
                _ => break,
            };
            lines.next();
            let header_err = |message: String| RasterError::Header {
                line: lineno + 1,
                message,
            };
            let raw = parts.next().ok_or_else(|| header_err(format!("missing value for {key}")))?;
            let num: f64 = raw
                .parse()
                .map_err(|_| header_err(format!("cannot parse {key} value {raw:?}")))?;
            let as_count = |v: f64| -> Result<usize, RasterError> {
                if v >= 1.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(header_err(format!("{key} must be a positive integer")))
                }
            };
            match key.as_str() {
                "ncols" => ncols = Some(as_count(num)?),
                "nrows" => nrows = Some(as_count(num)?),
                "xllcorner" => xll = Some(num),
                "yllcorner" => yll = Some(num),
                "xllcenter" => xcenter = Some(num),
                "yllcenter" => ycenter = Some(num),
                "cellsize" => {
                    if !(num > 0.0 && num.is_finite()) {
                        return Err(header_err("cellsize must be positive".into()));
                    }
                    cellsize = Some(num)
                }
                "nodata_value" => nodata = Some(num),
                other => return Err(header_err(format!("unknown header key {other:?}"))),
            }
        }

        let missing = |k: &str| RasterError::Header {
            line: 0,
            message: format!("missing {k}"),
        };
        let ncols = ncols.ok_or_else(|| missing("ncols"))?;
        let nrows = nrows.ok_or_else(|| missing("nrows"))?;
        let cellsize = cellsize.ok_or_else(|| missing("cellsize"))?;
        let xllcorner = xll
            .or(xcenter.map(|c| c - cellsize / 2.0))
            .ok_or_else(|| missing("xllcorner"))?;
        let yllcorner = yll
            .or(ycenter.map(|c| c - cellsize / 2.0))
            .ok_or_else(|| missing("yllcorner"))?;
        let header = GridHeader {
            ncols,
            nrows,
            xllcorner,
            yllcorner,
            cellsize,
        };

        let mut values = Vec::with_capacity(header.len());
        let mut row = 0;
        for (_, line) in lines {
            if row >= nrows {
                return Err(RasterError::RowCount {
                    expected: nrows,
                    found: row + 1,
                });
            }
            let before = values.len();
            for (col, tok) in line.split_whitespace().enumerate() {
                let v: f64 = tok.parse().map_err(|_| RasterError::BadValue {
                    row,
                    col,
                    text: tok.to_string(),
                })?;
                values.push(v);
            }
            let found = values.len() - before;
            if found != ncols {
                return Err(RasterError::ValueCount {
                    row,
                    expected: ncols,
                    found,
                });
            }
            row += 1;
        }
        if row != nrows {
            return Err(RasterError::RowCount {
                expected: nrows,
                found: row,
            });
        }
        Ok(AsciiGrid {
            header,
            nodata: nodata.unwrap_or(DEFAULT_NODATA),
            values,
        })
    }

    /// Serialize with lowercase header keys and shortest round-trip floats.
    pub fn to_ascii(&self) -> String {
        let h = &self.header;
        let mut out = String::with_capacity(h.len() * 8 + 128);
        let _ = writeln!(out, "ncols {}", h.ncols);
        let _ = writeln!(out, "nrows {}", h.nrows);
        let _ = writeln!(out, "xllcorner {}", h.xllcorner);
        let _ = writeln!(out, "yllcorner {}", h.yllcorner);
        let _ = writeln!(out, "cellsize {}", h.cellsize);
        let _ = writeln!(out, "nodata_value {}", self.nodata);
        for row in self.values.chunks(h.ncols) {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(' ');
                }
                first = false;
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), RasterError> {
        fs::write(path, self.to_ascii()).map_err(|source| RasterError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Wrap a computed grid, replacing masked cells with `nodata`.
    pub fn from_grid(grid: &Grid, mask: Option<&[bool]>, nodata: f64) -> Self {
        let values = match mask {
            Some(m) => grid
                .values
                .iter()
                .zip(m)
                .map(|(&v, &nd)| if nd { nodata } else { v })
                .collect(),
            None => grid.values.clone(),
        };
        AsciiGrid {
            header: grid.header,
            nodata,
            values,
        }
    }

    /// Split into a grid (nodata cells set to 0) and a nodata mask.
    pub fn into_grid(self) -> (Grid, Vec<bool>) {
        let mask: Vec<bool> = self.values.iter().map(|&v| v == self.nodata).collect();
        let values = self
            .values
            .iter()
            .zip(&mask)
            .map(|(&v, &nd)| if nd { 0.0 } else { v })
            .collect();
        (
            Grid {
                header: self.header,
                values,
            },
            mask,
        )
    }

    fn check_range(&self, lo: f64, hi: f64, allowed: &'static str) -> Result<(), RasterError> {
        for (idx, &v) in self.values.iter().enumerate() {
            if v != self.nodata && !(v >= lo && v <= hi) {
                return Err(RasterError::OutOfRange {
                    row: idx / self.header.ncols,
                    col: idx % self.header.ncols,
                    value: v,
                    allowed,
                });
            }
        }
        Ok(())
    }
}

/// Persons per cell. Nodata cells are kept and count as zero population.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationRaster {
    grid: AsciiGrid,
}

impl PopulationRaster {
    pub fn new(grid: AsciiGrid) -> Result<Self, RasterError> {
        grid.check_range(0.0, f64::MAX, "[0, inf) or nodata")?;
        Ok(PopulationRaster { grid })
    }

    pub fn header(&self) -> &GridHeader {
        &self.grid.header
    }

    pub fn nodata(&self) -> f64 {
        self.grid.nodata
    }

    pub fn is_nodata(&self, idx: usize) -> bool {
        self.grid.is_nodata(idx)
    }

    /// Population of a cell, with nodata read as zero.
    pub fn population(&self, idx: usize) -> f64 {
        if self.grid.is_nodata(idx) {
            0.0
        } else {
            self.grid.values[idx]
        }
    }

    pub fn raw_values(&self) -> &[f64] {
        &self.grid.values
    }

    pub fn nodata_mask(&self) -> Vec<bool> {
        (0..self.grid.values.len()).map(|i| self.grid.is_nodata(i)).collect()
    }

    pub fn as_ascii(&self) -> &AsciiGrid {
        &self.grid
    }
}

/// Per-cell fraction of the population belonging to one named group.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationGroupRaster {
    pub group: String,
    grid: AsciiGrid,
}

impl PopulationGroupRaster {
    pub fn new(group: impl Into<String>, grid: AsciiGrid, population: &GridHeader) -> Result<Self, RasterError> {
        population.check_aligned(&grid.header)?;
        grid.check_range(0.0, 1.0, "[0, 1] or nodata")?;
        Ok(PopulationGroupRaster {
            group: group.into(),
            grid,
        })
    }

    pub fn header(&self) -> &GridHeader {
        &self.grid.header
    }

    /// Group fraction of a cell; nodata reads as zero.
    pub fn fraction(&self, idx: usize) -> f64 {
        if self.grid.is_nodata(idx) {
            0.0
        } else {
            self.grid.values[idx]
        }
    }
}

/// Color scale used for a heatmap image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatmapScale {
    pub data_min: f64,
    pub data_max: f64,
    pub bound: f64,
}

impl HeatmapScale {
    pub fn sidecar(&self) -> String {
        format!(
            "scale diverging\ncenter 0\nmin {}\nmax {}\ndata_min {}\ndata_max {}\nnodata_pixel 0\n",
            -self.bound, self.bound, self.data_min, self.data_max
        )
    }
}

/// Render a binary 8-bit PGM (P5) on a diverging scale centered at zero.
///
/// Pixel 128 is zero, 1 is `-bound`, 255 is `+bound`. Masked cells are 0.
pub fn render_pgm(grid: &Grid, mask: Option<&[bool]>) -> (Vec<u8>, HeatmapScale) {
    let masked = |i: usize| mask.is_some_and(|m| m[i]);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (i, &v) in grid.values.iter().enumerate() {
        if !masked(i) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if lo > hi {
        lo = 0.0;
        hi = 0.0;
    }
    let bound = lo.abs().max(hi.abs());
    let h = &grid.header;
    let mut out = format!("P5\n{} {}\n255\n", h.ncols, h.nrows).into_bytes();
    out.reserve(h.len());
    for (i, &v) in grid.values.iter().enumerate() {
        let px = if masked(i) {
            0
        } else if bound == 0.0 {
            128
        } else {
            (128.0 + 127.0 * (v / bound)).round().clamp(1.0, 255.0) as u8
        };
        out.push(px);
    }
    (
        out,
        HeatmapScale {
            data_min: lo,
            data_max: hi,
            bound,
        },
    )
}
