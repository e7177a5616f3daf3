//! Data model for grids, fields, ensembles, and time-indexed paired
//! datasets.
//!
//! Everything here is immutable after construction and safe to share
//! across threads. The canonical vector layout for a field is row-major
//! and latitude-major: index `ilat * nlon + ilon`.

use crate::error::{CoreError, Result};

/// A regular latitude/longitude grid. Coordinate vectors are optional;
/// only the point count matters to most of the library.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    nlat: usize,
    nlon: usize,
    lat_deg: Option<Vec<f64>>,
    lon_deg: Option<Vec<f64>>,
}

impl Grid {
    pub fn new(nlat: usize, nlon: usize) -> Result<Self> {
        if nlat == 0 || nlon == 0 {
            return Err(CoreError::BadGridDims { nlat, nlon });
        }
        Ok(Self {
            nlat,
            nlon,
            lat_deg: None,
            lon_deg: None,
        })
    }

    pub fn with_coords(nlat: usize, nlon: usize, lat_deg: Vec<f64>, lon_deg: Vec<f64>) -> Result<Self> {
        if nlat == 0 || nlon == 0 {
            return Err(CoreError::BadGridDims { nlat, nlon });
        }
        if lat_deg.len() != nlat {
            return Err(CoreError::Argument(format!(
                "latitude vector has {} entries, expected {nlat}",
                lat_deg.len()
            )));
        }
        if lon_deg.len() != nlon {
            return Err(CoreError::Argument(format!(
                "longitude vector has {} entries, expected {nlon}",
                lon_deg.len()
            )));
        }
        if let Some(bad) = lat_deg.iter().find(|v| !(-90.0..=90.0).contains(*v)) {
            return Err(CoreError::Argument(format!(
                "latitude {bad} outside [-90, 90]"
            )));
        }
        Ok(Self {
            nlat,
            nlon,
            lat_deg: Some(lat_deg),
            lon_deg: Some(lon_deg),
        })
    }

    pub fn nlat(&self) -> usize {
        self.nlat
    }

    pub fn nlon(&self) -> usize {
        self.nlon
    }

    /// Total point count p = nlat * nlon.
    pub fn len(&self) -> usize {
        self.nlat * self.nlon
    }

    pub fn is_empty(&self) -> bool {
        false // nlat, nlon >= 1 by construction
    }

    pub fn lat_deg(&self) -> Option<&[f64]> {
        self.lat_deg.as_deref()
    }

    pub fn lon_deg(&self) -> Option<&[f64]> {
        self.lon_deg.as_deref()
    }

    /// Two grids are compatible when they have the same shape.
    pub fn compatible(&self, other: &Grid) -> bool {
        self.nlat == other.nlat && self.nlon == other.nlon
    }

    pub(crate) fn check_compatible(&self, other: &Grid) -> Result<()> {
        if self.compatible(other) {
            Ok(())
        } else {
            Err(CoreError::GridMismatch {
                expected_nlat: self.nlat,
                expected_nlon: self.nlon,
                got_nlat: other.nlat,
                got_nlon: other.nlon,
            })
        }
    }
}

/// Builds a bare grid from its dimensions.
pub fn build_grid(nlat: usize, nlon: usize) -> Result<Grid> {
    Grid::new(nlat, nlon)
}

/// One gridded scalar snapshot: an observation, prediction, residual,
/// or derived map. Values are stored row-major (latitude-major) and are
/// always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(CoreError::BadFieldLength {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite { index });
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Grid, value: f64) -> Result<Self> {
        let n = grid.len();
        Self::new(grid, vec![value; n])
    }

    pub fn zeros(grid: Grid) -> Self {
        let n = grid.len();
        Self {
            grid,
            values: vec![0.0; n],
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Elementwise sum; errors on grid mismatch.
    pub fn add(&self, other: &Field) -> Result<Field> {
        self.grid.check_compatible(&other.grid)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Field {
            grid: self.grid.clone(),
            values,
        })
    }

    /// Elementwise difference; errors on grid mismatch.
    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.grid.check_compatible(&other.grid)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Field {
            grid: self.grid.clone(),
            values,
        })
    }

    pub fn scale(&self, factor: f64) -> Field {
        Field {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    /// Unweighted mean over all grid cells.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Pointwise mean of a nonempty set of fields on a common grid.
pub fn pointwise_mean(fields: &[Field]) -> Result<Field> {
    let first = fields
        .first()
        .ok_or_else(|| CoreError::Argument("pointwise mean of an empty field list".into()))?;
    let mut acc = vec![0.0; first.len()];
    for f in fields {
        first.grid.check_compatible(&f.grid)?;
        for (a, v) in acc.iter_mut().zip(f.values()) {
            *a += v;
        }
    }
    let inv = 1.0 / fields.len() as f64;
    for a in &mut acc {
        *a *= inv;
    }
    Field::new(first.grid.clone(), acc)
}

/// Calendar time stamp with total ordering by (year, month).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeIndex {
    year: i32,
    month: u8,
}

impl TimeIndex {
    pub fn new(year: i32, month: u8) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(CoreError::Argument(format!(
                "month {month} outside 1..=12"
            )));
        }
        Ok(Self { year, month })
    }

    pub fn year(&self) -> i32 {
        self.year
    }

    pub fn month(&self) -> u8 {
        self.month
    }

    /// The following calendar month.
    pub fn next(&self) -> TimeIndex {
        if self.month == 12 {
            TimeIndex {
                year: self.year + 1,
                month: 1,
            }
        } else {
            TimeIndex {
                year: self.year,
                month: self.month + 1,
            }
        }
    }

    /// The stamp `n` calendar months after `self`.
    pub fn plus_months(&self, n: usize) -> TimeIndex {
        let total = (self.month as usize - 1) + n;
        TimeIndex {
            year: self.year + (total / 12) as i32,
            month: (total % 12) as u8 + 1,
        }
    }

    /// Monthly sequence of `len` stamps starting at `self`.
    pub fn sequence(&self, len: usize) -> Vec<TimeIndex> {
        let mut out = Vec::with_capacity(len);
        let mut t = *self;
        for _ in 0..len {
            out.push(t);
            t = t.next();
        }
        out
    }
}

impl std::fmt::Display for TimeIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{}", self.year, self.month)
    }
}

/// The m member fields of a multi-model ensemble at one time index.
#[derive(Debug, Clone)]
pub struct EnsembleSnapshot {
    time: TimeIndex,
    members: Vec<Field>,
}

impl EnsembleSnapshot {
    pub fn new(time: TimeIndex, members: Vec<Field>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| CoreError::Argument("ensemble snapshot with no members".into()))?;
        let grid = first.grid().clone();
        for m in &members {
            grid.check_compatible(m.grid())?;
        }
        Ok(Self { time, members })
    }

    pub fn time(&self) -> TimeIndex {
        self.time
    }

    pub fn members(&self) -> &[Field] {
        &self.members
    }

    pub fn member_count(&self) -> usize {
        self.members.len()
    }

    pub fn grid(&self) -> &Grid {
        self.members[0].grid()
    }

    /// Pointwise ensemble mean.
    pub fn mean_field(&self) -> Field {
        pointwise_mean(&self.members).expect("members share a grid by construction")
    }
}

/// Time-ordered (ensemble, target) pairs on a common grid with a common
/// member count. The test remainder of a split may be empty.
#[derive(Debug, Clone, Default)]
pub struct PairedDataset {
    pairs: Vec<(EnsembleSnapshot, Field)>,
}

impl PairedDataset {
    pub fn new(pairs: Vec<(EnsembleSnapshot, Field)>) -> Result<Self> {
        if let Some((first, _)) = pairs.first() {
            let grid = first.grid().clone();
            let m = first.member_count();
            let mut prev = None;
            for (snap, target) in &pairs {
                grid.check_compatible(snap.grid())?;
                grid.check_compatible(target.grid())?;
                if snap.member_count() != m {
                    return Err(CoreError::MemberMismatch {
                        expected: m,
                        got: snap.member_count(),
                    });
                }
                if let Some(p) = prev {
                    if snap.time() <= p {
                        return Err(CoreError::Argument(format!(
                            "time indices not strictly increasing at {}",
                            snap.time()
                        )));
                    }
                }
                prev = Some(snap.time());
            }
        }
        Ok(Self { pairs })
    }

    pub fn empty() -> Self {
        Self { pairs: Vec::new() }
    }

    pub fn pairs(&self) -> &[(EnsembleSnapshot, Field)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn member_count(&self) -> Option<usize> {
        self.pairs.first().map(|(s, _)| s.member_count())
    }

    pub fn grid(&self) -> Option<&Grid> {
        self.pairs.first().map(|(s, _)| s.grid())
    }

    pub fn times(&self) -> Vec<TimeIndex> {
        self.pairs.iter().map(|(s, _)| s.time()).collect()
    }

    pub fn targets(&self) -> Vec<Field> {
        self.pairs.iter().map(|(_, y)| y.clone()).collect()
    }
}

/// Chronological train/calibration split sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub n1: usize,
    pub n2: usize,
}

impl SplitSpec {
    pub fn new(n1: usize, n2: usize) -> Result<Self> {
        if n1 == 0 || n2 == 0 {
            return Err(CoreError::Argument(format!(
                "split sizes must be >= 1, got n1={n1}, n2={n2}"
            )));
        }
        Ok(Self { n1, n2 })
    }
}

/// Splits a dataset into the first n1 pairs (train), the next n2
/// (calibration), and the remainder (test, possibly empty).
pub fn split_paired_dataset(
    ds: &PairedDataset,
    spec: SplitSpec,
) -> Result<(PairedDataset, PairedDataset, PairedDataset)> {
    let SplitSpec { n1, n2 } = spec;
    if n1 + n2 > ds.len() {
        return Err(CoreError::BadSplit {
            n1,
            n2,
            len: ds.len(),
        });
    }
    let pairs = ds.pairs();
    let train = PairedDataset {
        pairs: pairs[..n1].to_vec(),
    };
    let cal = PairedDataset {
        pairs: pairs[n1..n1 + n2].to_vec(),
    };
    let test = PairedDataset {
        pairs: pairs[n1 + n2..].to_vec(),
    };
    Ok((train, cal, test))
}

/// Per-calendar-month pointwise means. Months with no data come back as
/// `None` rather than a zero field.
pub fn monthly_climatology(
    fields: &[Field],
    times: &[TimeIndex],
) -> Result<[Option<Field>; 12]> {
    if fields.len() != times.len() {
        return Err(CoreError::Argument(format!(
            "{} fields but {} time indices",
            fields.len(),
            times.len()
        )));
    }
    if fields.is_empty() {
        return Err(CoreError::Argument("climatology of an empty series".into()));
    }
    let grid = fields[0].grid().clone();
    let p = grid.len();
    let mut sums: Vec<Vec<f64>> = vec![vec![0.0; p]; 12];
    let mut counts = [0usize; 12];
    for (f, t) in fields.iter().zip(times) {
        grid.check_compatible(f.grid())?;
        let j = (t.month() - 1) as usize;
        counts[j] += 1;
        for (s, v) in sums[j].iter_mut().zip(f.values()) {
            *s += v;
        }
    }
    let mut out: [Option<Field>; 12] = Default::default();
    for j in 0..12 {
        if counts[j] > 0 {
            let inv = 1.0 / counts[j] as f64;
            let values = sums[j].iter().map(|s| s * inv).collect();
            out[j] = Some(Field::new(grid.clone(), values)?);
        }
    }
    Ok(out)
}
