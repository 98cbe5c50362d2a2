use ndarray::Array2;

use crate::error::{Error, Result};

/// Marker for an unobserved response.
pub const MISSING: u8 = u8::MAX;

/// Binary responses with missing cells.
///
/// Alongside the raw cells the dataset keeps two `N x J` indicator matrices,
/// one for observed correct and one for observed incorrect answers, so that
/// likelihood terms over observed cells become matrix products.
#[derive(Clone, Debug)]
pub struct Dataset {
    cells: Array2<u8>,
    ones: Array2<f64>,
    zeros: Array2<f64>,
}

impl Dataset {
    /// Build from an `N x J` matrix of 0, 1 or [`MISSING`].
    pub fn new(cells: Array2<u8>) -> Result<Self> {
        if cells.ncols() == 0 {
            return Err(Error::InvalidArgument("dataset has no items".into()));
        }
        for ((i, j), &v) in cells.indexed_iter() {
            if v > 1 && v != MISSING {
                return Err(Error::Parse(format!("response ({i}, {j}) is {v}, expected 0, 1 or missing")));
            }
        }
        if let Some(row) = cells
            .rows()
            .into_iter()
            .position(|r| r.iter().all(|&v| v == MISSING))
        {
            return Err(Error::EmptyRow { row });
        }
        let ones = cells.mapv(|v| (v == 1) as u8 as f64);
        let zeros = cells.mapv(|v| (v == 0) as u8 as f64);
        Ok(Self { cells, ones, zeros })
    }

    pub fn from_rows(rows: &[Vec<Option<u8>>]) -> Result<Self> {
        let j = rows.first().map(Vec::len).unwrap_or(0);
        let mut cells = Array2::from_elem((rows.len(), j), MISSING);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != j {
                return Err(Error::Dimension(format!("row {i} has {} cells, expected {j}", row.len())));
            }
            for (jj, v) in row.iter().enumerate() {
                cells[[i, jj]] = v.unwrap_or(MISSING);
            }
        }
        Self::new(cells)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.cells.nrows()
    }

    #[inline]
    pub fn items(&self) -> usize {
        self.cells.ncols()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<u8> {
        match self.cells[[i, j]] {
            MISSING => None,
            v => Some(v),
        }
    }

    pub fn cells(&self) -> &Array2<u8> {
        &self.cells
    }

    pub(crate) fn ones(&self) -> &Array2<f64> {
        &self.ones
    }

    pub(crate) fn zeros(&self) -> &Array2<f64> {
        &self.zeros
    }

    /// Fraction of missing cells.
    pub fn missing_rate(&self) -> f64 {
        let missing = self.cells.iter().filter(|&&v| v == MISSING).count();
        missing as f64 / self.cells.len() as f64
    }

    /// Mean of observed responses per item; `NaN` for unobserved items.
    pub fn item_means(&self) -> Vec<f64> {
        (0..self.items())
            .map(|j| {
                let col = self.cells.column(j);
                let (sum, count) = col
                    .iter()
                    .filter(|&&v| v != MISSING)
                    .fold((0.0, 0usize), |(s, c), &v| (s + v as f64, c + 1));
                sum / count as f64
            })
            .collect()
    }

    /// Copy with the given columns kept.
    pub fn select_items(&self, keep: &[usize]) -> Result<Self> {
        let cells = Array2::from_shape_fn((self.n(), keep.len()), |(i, k)| self.cells[[i, keep[k]]]);
        Self::new(cells)
    }
}
