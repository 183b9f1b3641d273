use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{GatewayError, Purpose};

/// Per-purpose call counters with a hard total cap.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetLedger {
    pub calls_used: BTreeMap<Purpose, u64>,
    pub calls_max: u64,
}

impl BudgetLedger {
    pub fn new(calls_max: u64) -> Self {
        Self {
            calls_used: BTreeMap::new(),
            calls_max,
        }
    }

    pub fn total(&self) -> u64 {
        self.calls_used.values().sum()
    }

    pub fn used(&self, purpose: Purpose) -> u64 {
        self.calls_used.get(&purpose).copied().unwrap_or(0)
    }

    pub fn remaining(&self) -> u64 {
        self.calls_max.saturating_sub(self.total())
    }

    /// Takes one unit for `purpose`, or fails without changing anything.
    pub fn charge(&mut self, purpose: Purpose) -> Result<(), GatewayError> {
        let used = self.total();
        if used >= self.calls_max {
            return Err(GatewayError::BudgetExhausted {
                used,
                max: self.calls_max,
            });
        }
        *self.calls_used.entry(purpose).or_insert(0) += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charge_until_cap() {
        let mut l = BudgetLedger::new(2);
        l.charge(Purpose::Crossover).unwrap();
        l.charge(Purpose::Mutate).unwrap();
        assert!(l.charge(Purpose::Mutate).unwrap_err().is_budget());
        assert_eq!(l.total(), 2);
        assert_eq!(l.used(Purpose::Mutate), 1);
        assert_eq!(l.remaining(), 0);
    }

    #[test]
    fn zero_budget() {
        let mut l = BudgetLedger::new(0);
        assert!(l.charge(Purpose::Paraphrase).is_err());
        assert_eq!(l.total(), 0);
    }
}
