use std::collections::HashSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::ModeQuad;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordFlag {
    Valid,
    /// No side-peak coincidences; excluded from every fit.
    Undefined,
    /// Noise drove the value negative and it was floored at zero. Still used.
    Floored,
}

impl RecordFlag {
    pub fn is_usable(self) -> bool {
        !matches!(self, RecordFlag::Undefined)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RecordFlag::Valid => "valid",
            RecordFlag::Undefined => "undefined",
            RecordFlag::Floored => "floored",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "valid" => Ok(RecordFlag::Valid),
            "undefined" => Ok(RecordFlag::Undefined),
            "floored" => Ok(RecordFlag::Floored),
            other => Err(Error::InvalidData(format!("unknown record flag '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisibilityRecord {
    pub quad: ModeQuad,
    pub value: f64,
    pub sigma: f64,
    pub flag: RecordFlag,
}

/// Measured visibilities plus the single-photon power matrix R (rows = outputs).
#[derive(Clone, Debug, PartialEq)]
pub struct VisibilityDataset {
    pub dim: usize,
    pub records: Vec<VisibilityRecord>,
    pub power: DMatrix<f64>,
    pub power_sigma: DMatrix<f64>,
}

impl VisibilityDataset {
    pub fn new(
        dim: usize,
        records: Vec<VisibilityRecord>,
        power: DMatrix<f64>,
        power_sigma: DMatrix<f64>,
    ) -> Result<Self> {
        let ds = Self {
            dim,
            records,
            power,
            power_sigma,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim;
        if n < 2 {
            return Err(Error::InvalidDimension(format!("dataset dim {n} < 2")));
        }
        for m in [&self.power, &self.power_sigma] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: m.nrows(),
                });
            }
        }
        if self.power.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidData("power matrix entries must be finite and >= 0".into()));
        }
        let mut seen = HashSet::new();
        for r in &self.records {
            r.quad.check_dim(n)?;
            if r.quad.i == r.quad.j || r.quad.k == r.quad.l {
                return Err(Error::InvalidData(format!("degenerate quad {:?}", r.quad)));
            }
            if !seen.insert(r.quad.canonical()) {
                return Err(Error::InvalidData(format!("duplicate quad {:?}", r.quad)));
            }
            if r.flag.is_usable() && (!(r.value >= 0.0) || !r.value.is_finite()) {
                return Err(Error::InvalidData(format!("visibility {} must be >= 0", r.value)));
            }
            if !(r.sigma >= 0.0) {
                return Err(Error::InvalidData(format!("sigma {} must be >= 0", r.sigma)));
            }
        }
        Ok(())
    }

    pub fn usable(&self) -> impl Iterator<Item = &VisibilityRecord> {
        self.records.iter().filter(|r| r.flag.is_usable())
    }

    pub fn n_undefined(&self) -> usize {
        self.records.len() - self.usable().count()
    }
}
