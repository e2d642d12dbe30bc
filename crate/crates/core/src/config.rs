use serde::{Deserialize, Serialize};

use crate::critical_sets::CriticalSetId;
use crate::error::{Error, Result};

/// Star graph with `n` edges; the first `m` carry a Neumann control at the outer end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub n: usize,
    pub m: usize,
    pub alpha: f64,
    pub lengths: Vec<f64>,
}

impl GraphConfig {
    pub fn new(n: usize, m: usize, alpha: f64, lengths: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return Err(Error::Precondition(format!("need at least 2 edges, got {n}")));
        }
        if m > n {
            return Err(Error::Precondition(format!("m = {m} exceeds n = {n}")));
        }
        if !(alpha > n as f64 / 2.0) || !alpha.is_finite() {
            return Err(Error::Precondition(format!("alpha = {alpha} must exceed n/2 = {}", n as f64 / 2.0)));
        }
        if lengths.len() != n {
            return Err(Error::Precondition(format!("{} lengths for {n} edges", lengths.len())));
        }
        if lengths.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::Precondition("edge lengths must be positive".into()));
        }
        Ok(GraphConfig { n, m, alpha, lengths })
    }

    /// Equal edges of length `length`, coupling `alpha = n`.
    pub fn uniform(n: usize, m: usize, length: f64) -> Result<Self> {
        Self::new(n, m, n as f64, vec![length; n])
    }

    pub fn with_length(&self, length: f64) -> Result<Self> {
        Self::new(self.n, self.m, self.alpha, vec![length; self.n])
    }

    /// The common length, if the spectral preconditions hold.
    pub fn spectral_length(&self) -> Result<f64> {
        let l0 = self.lengths[0];
        if self.lengths.iter().any(|&l| (l - l0).abs() > 1e-14 * l0) {
            return Err(Error::Precondition("spectral analysis needs equal edge lengths".into()));
        }
        if self.alpha != self.n as f64 {
            return Err(Error::Precondition(format!(
                "spectral analysis needs alpha = n (got alpha = {}, n = {})",
                self.alpha, self.n
            )));
        }
        Ok(l0)
    }

    pub fn is_neumann(&self, edge: usize) -> bool {
        edge < self.m
    }

    /// Sets whose members are the critical lengths of this placement of controls.
    pub fn expected_sets(&self) -> Vec<CriticalSetId> {
        use CriticalSetId::*;
        let (n, m) = (self.n, self.m);
        if m == 0 {
            vec![NStar, NDagger]
        } else if m == n {
            vec![NRosier, NStar]
        } else if n == 2 {
            vec![]
        } else if m == 1 {
            vec![NStar]
        } else if m == n - 1 {
            vec![NRosier]
        } else {
            vec![NRosier, NStar]
        }
    }
}
