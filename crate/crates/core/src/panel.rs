//! Daily station-by-day concentration panel with a missing-value mask.

use chrono::{Days, NaiveDate};

use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// Largest tolerated fraction of missing days per station.
pub const MAX_MISSING_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct PanelSeries {
    start: NaiveDate,
    station_ids: Vec<String>,
    /// `T×N`; entries under the mask are placeholders (zero).
    values: Matrix,
    missing: Vec<bool>,
}

impl PanelSeries {
    pub fn new(start: NaiveDate, station_ids: Vec<String>, values: Matrix, missing: Vec<bool>) -> Result<Self> {
        if values.cols() != station_ids.len() {
            return Err(Error::invalid(format!(
                "panel has {} columns but {} station ids",
                values.cols(),
                station_ids.len()
            )));
        }
        if missing.len() != values.rows() * values.cols() {
            return Err(Error::invalid("missing mask does not match panel shape"));
        }
        Ok(Self {
            start,
            station_ids,
            values,
            missing,
        })
    }

    /// Fully observed panel.
    pub fn complete(start: NaiveDate, station_ids: Vec<String>, values: Matrix) -> Result<Self> {
        let missing = vec![false; values.rows() * values.cols()];
        Self::new(start, station_ids, values, missing)
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_stations(&self) -> usize {
        self.station_ids.len()
    }

    pub fn station_ids(&self) -> &[String] {
        &self.station_ids
    }

    pub fn start(&self) -> NaiveDate {
        self.start
    }

    pub fn date(&self, t: usize) -> NaiveDate {
        self.start + Days::new(t as u64)
    }

    pub fn end(&self) -> Option<NaiveDate> {
        (!self.is_empty()).then(|| self.date(self.len() - 1))
    }

    /// Day offset of `date`, if inside the panel.
    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let off = (date - self.start).num_days();
        (off >= 0 && (off as usize) < self.len()).then_some(off as usize)
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn value(&self, t: usize, i: usize) -> f64 {
        self.values[(t, i)]
    }

    pub fn is_missing(&self, t: usize, i: usize) -> bool {
        self.missing[t * self.n_stations() + i]
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        self.values.column(i)
    }

    /// Days `from..to` as a new panel.
    pub fn slice_days(&self, from: usize, to: usize) -> Result<PanelSeries> {
        if from > to || to > self.len() {
            return Err(Error::invalid(format!(
                "day range {from}..{to} outside panel of {} days",
                self.len()
            )));
        }
        let n = self.n_stations();
        Ok(PanelSeries {
            start: self.date(from),
            station_ids: self.station_ids.clone(),
            values: self.values.slice_rows(from, to),
            missing: self.missing[from * n..to * n].to_vec(),
        })
    }

    /// Reorders columns to match `ids`.
    pub fn reorder_stations(&self, ids: &[String]) -> Result<PanelSeries> {
        if ids.len() != self.n_stations() {
            return Err(Error::invalid("station lists differ in length"));
        }
        let perm: Vec<usize> = ids
            .iter()
            .map(|id| {
                self.station_ids
                    .iter()
                    .position(|s| s == id)
                    .ok_or_else(|| Error::invalid(format!("station {id} not in panel")))
            })
            .collect::<Result<_>>()?;
        let (t_len, n) = (self.len(), self.n_stations());
        let mut values = Matrix::zeros(t_len, n);
        let mut missing = vec![false; t_len * n];
        for t in 0..t_len {
            for (k, &p) in perm.iter().enumerate() {
                values[(t, k)] = self.values[(t, p)];
                missing[t * n + k] = self.missing[t * n + p];
            }
        }
        Self::new(self.start, ids.to_vec(), values, missing)
    }

    /// Forward fill per station, then back fill any leading gap. The mask is kept.
    pub fn impute(&self) -> Result<PanelSeries> {
        let (t_len, n) = (self.len(), self.n_stations());
        let mut values = self.values.clone();
        for i in 0..n {
            let missing = (0..t_len).filter(|&t| self.is_missing(t, i)).count();
            if t_len > 0 && missing as f64 > MAX_MISSING_FRACTION * t_len as f64 {
                return Err(Error::invalid(format!(
                    "station {} has {missing} of {t_len} days missing",
                    self.station_ids[i]
                )));
            }
            let mut last: Option<f64> = None;
            let mut first_seen: Option<usize> = None;
            for t in 0..t_len {
                if self.is_missing(t, i) {
                    if let Some(v) = last {
                        values[(t, i)] = v;
                    }
                } else {
                    last = Some(values[(t, i)]);
                    first_seen.get_or_insert(t);
                }
            }
            match first_seen {
                Some(f) => {
                    let v = values[(f, i)];
                    for t in 0..f {
                        values[(t, i)] = v;
                    }
                }
                None if t_len > 0 => {
                    return Err(Error::invalid(format!(
                        "station {} has no observations",
                        self.station_ids[i]
                    )))
                }
                None => {}
            }
        }
        Self::new(self.start, self.station_ids.clone(), values, self.missing.clone())
    }
}
