use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the three products a weighted layer performs per training step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pass {
    Forward,
    BackwardData,
    BackwardWeight,
}

impl fmt::Display for Pass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pass::Forward => "fwd",
            Pass::BackwardData => "bwd-data",
            Pass::BackwardWeight => "bwd-weight",
        })
    }
}

/// Multiply-accumulate counts of exact training and of what was actually
/// executed, per `(layer, pass)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ComputeLedger {
    entries: BTreeMap<(usize, Pass), MacPair>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacPair {
    pub exact: u64,
    pub actual: u64,
}

impl ComputeLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, layer: usize, pass: Pass, exact: u64, actual: u64) {
        debug_assert!(actual <= exact, "layer {layer} {pass}: {actual} > {exact}");
        let e = self.entries.entry((layer, pass)).or_default();
        e.exact += exact;
        e.actual += actual;
    }

    pub fn merge(&mut self, other: &ComputeLedger) {
        for (&(layer, pass), v) in &other.entries {
            self.record(layer, pass, v.exact, v.actual);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, layer: usize, pass: Pass) -> Option<MacPair> {
        self.entries.get(&(layer, pass)).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, Pass, MacPair)> + '_ {
        self.entries.iter().map(|(&(l, p), &v)| (l, p, v))
    }

    pub fn total_exact(&self) -> u64 {
        self.entries.values().map(|v| v.exact).sum()
    }

    pub fn total_actual(&self) -> u64 {
        self.entries.values().map(|v| v.actual).sum()
    }

    /// Fraction of exact-training MACs saved, `1 − Σactual / Σexact`.
    pub fn compute_reduction(&self) -> Result<f64> {
        let exact = self.total_exact();
        if exact == 0 {
            return Err(Error::domain("compute reduction of an empty ledger"));
        }
        Ok(1.0 - self.total_actual() as f64 / exact as f64)
    }
}

pub fn compute_reduction(ledger: &ComputeLedger) -> Result<f64> {
    ledger.compute_reduction()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_error() {
        assert!(ComputeLedger::new().compute_reduction().is_err());
    }

    #[test]
    fn no_sampling_no_reduction() {
        let mut l = ComputeLedger::new();
        l.record(0, Pass::Forward, 100, 100);
        l.record(0, Pass::BackwardWeight, 100, 100);
        assert_eq!(l.compute_reduction().unwrap(), 0.0);
    }

    #[test]
    fn single_layer_forty_percent() {
        // batch 50, 100 -> 20, all three passes at k = 40.
        let exact = 50 * 100 * 20;
        let actual = 50 * 40 * 20;
        let mut l = ComputeLedger::new();
        for pass in [Pass::Forward, Pass::BackwardData, Pass::BackwardWeight] {
            l.record(0, pass, exact, actual);
        }
        assert!((l.compute_reduction().unwrap() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn merge_accumulates() {
        let mut a = ComputeLedger::new();
        a.record(1, Pass::Forward, 10, 4);
        let mut b = ComputeLedger::new();
        b.record(1, Pass::Forward, 10, 6);
        b.record(2, Pass::BackwardData, 5, 5);
        a.merge(&b);
        assert_eq!(a.get(1, Pass::Forward), Some(MacPair { exact: 20, actual: 10 }));
        assert_eq!(a.total_exact(), 25);
    }
}
