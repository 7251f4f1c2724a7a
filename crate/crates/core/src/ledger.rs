//! Per-device, per-block RDP budget accounting.
//!
//! Budgets are abstract RDP epsilons at a single fixed order. Charges on a
//! block accumulate additively; the loss of a device's whole dataset is the
//! maximum over its blocks.

use crate::error::{Error, Result};
use crate::ids::{BlockId, DeviceId};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Absolute tolerance on every budget comparison.
pub const EPS_TOL: f64 = 1e-9;

fn check_eps(eps: f64) -> Result<()> {
    if eps.is_finite() && eps >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidEpsilon(eps))
    }
}

/// Total loss of a block that served several pipelines.
pub fn compose_sequential(losses: &[f64]) -> Result<f64> {
    losses.iter().try_fold(0.0, |acc, &eps| {
        check_eps(eps)?;
        Ok(acc + eps)
    })
}

/// Loss of a dataset partitioned into disjoint blocks.
pub fn compose_parallel(per_block_losses: &[f64]) -> Result<f64> {
    per_block_losses.iter().try_fold(0.0_f64, |acc, &eps| {
        check_eps(eps)?;
        Ok(acc.max(eps))
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBlock {
    pub device_id: DeviceId,
    pub block_id: BlockId,
    pub created_round: u64,
    pub budget_eps: f64,
    pub consumed_eps: f64,
}

impl PrivacyBlock {
    pub fn fresh(device_id: DeviceId, block_id: BlockId, created_round: u64, budget: f64) -> Self {
        Self {
            device_id,
            block_id,
            created_round,
            budget_eps: budget,
            consumed_eps: 0.0,
        }
    }

    /// Returns the block after consuming `eps` more privacy.
    pub fn charge(&self, eps: f64) -> Result<PrivacyBlock> {
        check_eps(eps)?;
        let consumed = self.consumed_eps + eps;
        if consumed > self.budget_eps + EPS_TOL {
            return Err(Error::BudgetExceeded {
                block: self.block_id.clone(),
                budget: self.budget_eps,
                consumed: self.consumed_eps,
                requested: eps,
            });
        }
        Ok(PrivacyBlock {
            consumed_eps: consumed,
            ..self.clone()
        })
    }

    pub fn remaining_fraction(&self) -> f64 {
        if self.budget_eps <= 0.0 {
            return 0.0;
        }
        ((self.budget_eps - self.consumed_eps) / self.budget_eps).clamp(0.0, 1.0)
    }

    pub fn is_retired(&self) -> bool {
        self.remaining_fraction() <= EPS_TOL
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub device_id: DeviceId,
    pub global_budget: f64,
    pub blocks_per_round: u32,
}

/// All blocks and devices of one simulation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    /// RDP order shared by every budget. Metadata only.
    pub rdp_order: Option<f64>,
    pub devices: BTreeMap<DeviceId, DeviceProfile>,
    pub blocks: BTreeMap<BlockId, PrivacyBlock>,
}

impl Ledger {
    pub fn new(rdp_order: Option<f64>) -> Self {
        Self {
            rdp_order,
            ..Default::default()
        }
    }

    pub fn add_device(&mut self, device: DeviceProfile) {
        self.devices.entry(device.device_id.clone()).or_insert(device);
    }

    /// Adds a fresh block carrying its device's global budget.
    pub fn add_block(&mut self, device_id: &DeviceId, block_id: BlockId, round: u64) -> Result<()> {
        let budget = self
            .devices
            .get(device_id)
            .map(|d| d.global_budget)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown device {device_id}")))?;
        self.blocks.insert(
            block_id.clone(),
            PrivacyBlock::fresh(device_id.clone(), block_id, round, budget),
        );
        Ok(())
    }

    pub fn block(&self, id: &BlockId) -> Option<&PrivacyBlock> {
        self.blocks.get(id)
    }

    /// Budget of a live block, `None` when missing or retired.
    pub fn live_budget(&self, id: &BlockId) -> Option<f64> {
        self.blocks
            .get(id)
            .filter(|b| !b.is_retired())
            .map(|b| b.budget_eps)
    }

    pub fn remaining_fraction(&self, id: &BlockId) -> f64 {
        self.blocks.get(id).map_or(0.0, PrivacyBlock::remaining_fraction)
    }

    pub fn is_live(&self, id: &BlockId) -> bool {
        self.live_budget(id).is_some()
    }

    pub fn charge(&mut self, id: &BlockId, eps: f64) -> Result<()> {
        let block = self
            .blocks
            .get(id)
            .ok_or_else(|| Error::UnknownBlock(id.clone()))?;
        let charged = block.charge(eps)?;
        self.blocks.insert(id.clone(), charged);
        Ok(())
    }

    /// Live blocks of one device, oldest first.
    pub fn live_blocks_of<'a>(
        &'a self,
        device: &'a DeviceId,
    ) -> impl Iterator<Item = &'a PrivacyBlock> + 'a {
        self.blocks
            .values()
            .filter(move |b| &b.device_id == device && !b.is_retired())
    }

    /// Parallel composition of a device's consumed losses.
    pub fn device_loss(&self, device: &DeviceId) -> Result<f64> {
        let losses: Vec<f64> = self
            .blocks
            .values()
            .filter(|b| &b.device_id == device)
            .map(|b| b.consumed_eps)
            .collect();
        compose_parallel(&losses)
    }

    pub fn retired_count(&self) -> usize {
        self.blocks.values().filter(|b| b.is_retired()).count()
    }
}
