use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MeasurementMode {
    /// Every input pair.
    #[default]
    Full,
    /// 2·dim input pairs built around reference mode 0.
    Linear,
}

impl std::str::FromStr for MeasurementMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "linear" => Ok(Self::Linear),
            other => Err(Error::InvalidData(format!("unknown measurement mode '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MeasurementPlan {
    /// Two-photon input pairs, in acquisition order. May repeat a pair when
    /// the dimension has fewer distinct pairs than the plan asks for.
    pub pairs: Vec<(usize, usize)>,
    /// Single-photon runs used to measure the power matrix.
    pub single_inputs: Vec<usize>,
}

impl MeasurementPlan {
    /// Pairs with repeats removed, first occurrence kept.
    pub fn distinct_pairs(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = Vec::new();
        for &p in &self.pairs {
            if !out.contains(&p) {
                out.push(p);
            }
        }
        out
    }
}

pub fn measurement_plan(dim: usize, mode: MeasurementMode) -> Result<MeasurementPlan> {
    if dim < 2 {
        return Err(Error::InvalidDimension(format!("plan needs dim >= 2, got {dim}")));
    }
    let all: Vec<(usize, usize)> = (0..dim)
        .flat_map(|i| (i + 1..dim).map(move |j| (i, j)))
        .collect();
    let pairs = match mode {
        MeasurementMode::Full => all,
        MeasurementMode::Linear => {
            // reference pairs (0, j), then by increasing separation: (i, i+1), (i, i+2), ...
            let mut order: Vec<(usize, usize)> = (1..dim).map(|j| (0, j)).collect();
            for sep in 1..dim {
                for i in 1..dim - sep {
                    order.push((i, i + sep));
                }
            }
            let target = 2 * dim;
            order.iter().copied().cycle().take(target).collect()
        }
    };
    Ok(MeasurementPlan {
        pairs,
        single_inputs: (0..dim).collect(),
    })
}
