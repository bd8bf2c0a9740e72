use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};

/// Design matrix and response of a linear model `y = X beta + eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    /// Whether the columns of `x` were scaled to unit sample standard deviation.
    pub standardized: bool,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Array1<f64>) -> Result<Self> {
        let ds = Dataset {
            x,
            y,
            standardized: false,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, p) = self.x.dim();
        if n < 2 || p < 1 {
            return Err(Error::InvalidInput(format!(
                "need n >= 2 and p >= 1, got n = {n}, p = {p}"
            )));
        }
        if self.y.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "X has {n} rows but y has length {}",
                self.y.len()
            )));
        }
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("X"));
        }
        if self.y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("y"));
        }
        if self.standardized {
            for (j, sd) in column_sd(&self.x).iter().enumerate() {
                if (sd - 1.0).abs() > 1e-8 {
                    return Err(Error::InvalidInput(format!(
                        "column {j} flagged standardized but has sd {sd}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Centers every column of `x` and scales it to unit sample standard
    /// deviation (denominator `n - 1`). The response is left untouched.
    pub fn standardize(&self) -> Result<Dataset> {
        let mut x = self.x.clone();
        let means = x.mean_axis(Axis(0)).expect("n >= 2");
        let sds = column_sd(&x);
        for (j, mut col) in x.axis_iter_mut(Axis(1)).enumerate() {
            if !(sds[j] > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "column {j} is constant and cannot be standardized"
                )));
            }
            col.mapv_inplace(|v| (v - means[j]) / sds[j]);
        }
        Ok(Dataset {
            x,
            y: self.y.clone(),
            standardized: true,
        })
    }

    /// Drops the last observation when `n` is odd; the group-action
    /// families need an even number of rows.
    pub fn truncate_to_even(&self) -> Dataset {
        let n = self.n();
        if n.is_multiple_of(2) {
            return self.clone();
        }
        Dataset {
            x: self.x.slice(ndarray::s![..n - 1, ..]).to_owned(),
            y: self.y.slice(ndarray::s![..n - 1]).to_owned(),
            standardized: false,
        }
    }
}

pub(crate) fn column_sd(x: &Array2<f64>) -> Vec<f64> {
    let n = x.nrows() as f64;
    x.axis_iter(Axis(1))
        .map(|c| {
            let m = c.sum() / n;
            (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)).sqrt()
        })
        .collect()
}

pub(crate) fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub(crate) fn linf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
