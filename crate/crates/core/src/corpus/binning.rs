use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Partition of the porosity axis into `K` contiguous classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PorosityBinning {
    edges: Vec<f64>,
    clamp_outside: bool,
}

impl Default for PorosityBinning {
    /// Ten equal-width classes over `[0, 0.75]`, clamping outliers.
    fn default() -> Self {
        Self::uniform(10, 0.0, 0.75, true).expect("valid default binning")
    }
}

impl PorosityBinning {
    pub fn new(edges: Vec<f64>, clamp_outside: bool) -> Result<Self> {
        if edges.len() < 3 {
            return Err(Error::Config(format!(
                "binning needs at least 2 classes ({} edges given)",
                edges.len()
            )));
        }
        if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "bin edges must be strictly increasing: {edges:?}"
            )));
        }
        Ok(Self { edges, clamp_outside })
    }

    pub fn uniform(classes: usize, lo: f64, hi: f64, clamp_outside: bool) -> Result<Self> {
        if classes < 2 || lo >= hi {
            return Err(Error::Config(format!(
                "cannot split [{lo}, {hi}] into {classes} classes"
            )));
        }
        let edges = (0..=classes)
            .map(|i| lo + (hi - lo) * i as f64 / classes as f64)
            .collect();
        Self::new(edges, clamp_outside)
    }

    /// Validate after deserialization.
    pub fn validated(self) -> Result<Self> {
        Self::new(self.edges, self.clamp_outside)
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn clamp_outside(&self) -> bool {
        self.clamp_outside
    }

    pub fn with_clamp(mut self, clamp_outside: bool) -> Self {
        self.clamp_outside = clamp_outside;
        self
    }

    pub fn num_classes(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn lower(&self) -> f64 {
        self.edges[0]
    }

    pub fn upper(&self) -> f64 {
        self.edges[self.edges.len() - 1]
    }

    /// Class `k` with `edges[k] <= phi < edges[k+1]`; the top edge belongs
    /// to the last class.
    pub fn bin_for(&self, phi: f64) -> Result<usize> {
        self.bin_with(phi, self.clamp_outside)
    }

    /// [`PorosityBinning::bin_for`] that always clamps out-of-range values.
    pub fn bin_clamped(&self, phi: f64) -> usize {
        self.bin_with(phi, true).expect("clamped binning is total")
    }

    fn bin_with(&self, phi: f64, clamp: bool) -> Result<usize> {
        let k = self.num_classes();
        if phi.is_nan() {
            return Err(Error::Domain("porosity is NaN".into()));
        }
        if phi < self.lower() || phi > self.upper() {
            if !clamp {
                return Err(Error::Range {
                    value: phi,
                    lo: self.lower(),
                    hi: self.upper(),
                });
            }
            return Ok(if phi < self.lower() { 0 } else { k - 1 });
        }
        let above = self.edges.partition_point(|&e| e <= phi);
        Ok((above.max(1) - 1).min(k - 1))
    }

    /// Closed interval `[lo, hi]` of class `k`.
    pub fn range(&self, k: usize) -> (f64, f64) {
        (self.edges[k], self.edges[k + 1])
    }

    /// Representative porosity of class `k`.
    pub fn midpoint(&self, k: usize) -> f64 {
        0.5 * (self.edges[k] + self.edges[k + 1])
    }

    pub fn check_class(&self, k: usize) -> Result<()> {
        if k >= self.num_classes() {
            return Err(Error::Domain(format!(
                "class index {k} out of range for {} classes",
                self.num_classes()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_binning_examples() {
        let b = PorosityBinning::default();
        assert_eq!(b.num_classes(), 10);
        assert_eq!(b.bin_for(0.0).unwrap(), 0);
        assert_eq!(b.bin_for(0.37).unwrap(), 4);
        assert_eq!(b.bin_for(0.745).unwrap(), 9);
        assert_eq!(b.bin_for(0.75).unwrap(), 9);
        assert_eq!(b.bin_for(0.9).unwrap(), 9);
        assert_eq!(b.bin_for(-0.1).unwrap(), 0);
        assert!((b.midpoint(0) - 0.0375).abs() < 1e-15);
    }

    #[test]
    fn unclamped_out_of_range_is_range_error() {
        let b = PorosityBinning::default().with_clamp(false);
        assert!(matches!(b.bin_for(0.8), Err(Error::Range { .. })));
        assert!(matches!(b.bin_for(-1e-9), Err(Error::Range { .. })));
        assert_eq!(b.bin_for(0.75).unwrap(), 9);
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(PorosityBinning::new(vec![0.0, 0.5], true).is_err());
        assert!(PorosityBinning::new(vec![0.0, 0.5, 0.5], true).is_err());
        assert!(PorosityBinning::new(vec![0.0, 0.6, 0.5], true).is_err());
        assert!(PorosityBinning::uniform(1, 0.0, 1.0, true).is_err());
    }

    #[test]
    fn edge_values_open_their_class() {
        let b = PorosityBinning::new(vec![0.0, 0.1, 0.4, 1.0], false).unwrap();
        assert_eq!(b.bin_for(0.1).unwrap(), 1);
        assert_eq!(b.bin_for(0.4).unwrap(), 2);
        assert_eq!(b.bin_for(0.0999).unwrap(), 0);
    }

    proptest! {
        #[test]
        fn exactly_one_class_contains_phi(phi in 0.0f64..=0.75) {
            let b = PorosityBinning::default();
            let k = b.bin_for(phi).unwrap();
            let hits = (0..10)
                .filter(|&j| {
                    let (lo, hi) = b.range(j);
                    lo <= phi && (phi < hi || (j == 9 && phi == hi))
                })
                .count();
            prop_assert_eq!(hits, 1);
            let (lo, hi) = b.range(k);
            prop_assert!(lo <= phi && phi <= hi);
        }

        #[test]
        fn binning_is_monotone(a in -0.2f64..1.0, b in -0.2f64..1.0) {
            let bin = PorosityBinning::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(bin.bin_for(lo).unwrap() <= bin.bin_for(hi).unwrap());
        }
    }
}
