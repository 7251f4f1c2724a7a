//! The two-analyst, two-block worked example run through every scheduler.

use dpbalance_core::metrics::dominant_efficiency;
use dpbalance_core::schedulers::{pending_from, AllocationPlan, Scheduler};
use dpbalance_core::workload::fig2_fixture;
use dpbalance_core::{BlockId, FairnessParams, PipelineId, Result};
use std::collections::BTreeMap;
use std::fmt::Write;

/// Share tolerance of the worked-example goldens.
pub const SHARE_TOL: f64 = 0.01;
/// Tolerance on returned shares.
pub const RETURN_TOL: f64 = 0.005;

pub struct DemoOutcome {
    pub report: String,
    pub mismatches: Vec<String>,
}

impl DemoOutcome {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

pub fn fig2_plan(scheduler: Scheduler, params: &FairnessParams) -> Result<AllocationPlan> {
    let fixture = fig2_fixture();
    scheduler.schedule(&fixture.ledger(), &pending_from(&fixture), 0, params)
}

fn grants(plan: &AllocationPlan) -> BTreeMap<PipelineId, f64> {
    plan.per_pipeline.iter().map(|(id, g)| (id.clone(), g.scale)).collect()
}

/// Share an analyst leaves unused out of its own grant.
fn own_return(plan: &AllocationPlan, analyst: &str, block: &BlockId) -> f64 {
    let g = &plan.per_analyst[&analyst.into()];
    let granted = g.granted.get(block).copied().unwrap_or(0.0);
    let used = g.packing.consumed.get(block).copied().unwrap_or(0.0);
    (granted - used).max(0.0)
}

fn check(mismatches: &mut Vec<String>, what: String, got: f64, want: f64, tol: f64) {
    if (got - want).abs() > tol {
        mismatches.push(format!("{what}: expected {want} +/- {tol}, got {got}"));
    }
}

fn fmt_map<K: std::fmt::Display>(m: &BTreeMap<K, f64>) -> String {
    let parts: Vec<String> = m
        .iter()
        .map(|(k, v)| format!("{k}: {:.4}", if v.abs() < 1e-12 { 0.0 } else { *v }))
        .collect();
    format!("{{{}}}", parts.join(", "))
}

/// Runs every scheduler on the fixture and compares against the goldens.
pub fn demo_fig2(params: &FairnessParams) -> Result<DemoOutcome> {
    let mut report = String::new();
    let mut mismatches = Vec::new();
    let b1 = BlockId::from("B1");
    let b2 = BlockId::from("B2");

    for scheduler in Scheduler::ALL {
        let plan = fig2_plan(scheduler, params)?;
        let eff = dominant_efficiency(&plan.utilities());
        let g = grants(&plan);
        let consumed = plan.consumed();
        let leftover: BTreeMap<BlockId, f64> = [&b1, &b2]
            .into_iter()
            .map(|k| (k.clone(), 1.0 - consumed.get(k).copied().unwrap_or(0.0)))
            .collect();
        writeln!(
            report,
            "{:<9} grants {} efficiency {:.4} units {:.4} leftover {}",
            scheduler.name(),
            fmt_map(&g),
            eff,
            plan.pipeline_units(),
            fmt_map(&leftover)
        )
        .expect("writing to a string");

        let ids: Vec<&str> = g.keys().map(|p| p.as_str()).collect();
        match scheduler {
            Scheduler::DpBalance => {
                let alice = &plan.per_analyst[&"Alice".into()].granted;
                let bob = &plan.per_analyst[&"Bob".into()].granted;
                let ra = own_return(&plan, "Alice", &b2);
                let rb = own_return(&plan, "Bob", &b2);
                writeln!(
                    report,
                    "          shares Alice {} Bob {} returns B2 Alice {ra:.4} Bob {rb:.4}",
                    fmt_map(alice),
                    fmt_map(bob)
                )
                .expect("writing to a string");
                if ids != ["P1", "P3"] {
                    mismatches.push(format!("dpbalance grants: expected [P1, P3], got {ids:?}"));
                } else {
                    check(&mut mismatches, "dpbalance scale P1".into(), g[&"P1".into()], 1.0, SHARE_TOL);
                    check(&mut mismatches, "dpbalance scale P3".into(), g[&"P3".into()], 1.25, SHARE_TOL);
                }
                check(&mut mismatches, "Alice B1".into(), alice[&b1], 0.5, SHARE_TOL);
                check(&mut mismatches, "Alice B2".into(), alice[&b2], 0.5, SHARE_TOL);
                check(&mut mismatches, "Bob B1".into(), bob[&b1], 0.5, SHARE_TOL);
                check(&mut mismatches, "Bob B2".into(), bob[&b2], 3.0 / 7.0, SHARE_TOL);
                check(&mut mismatches, "Alice return B2".into(), ra, 0.2, RETURN_TOL);
                // consistent with Bob's exact share of 3/7 on B2
                check(&mut mismatches, "Bob return B2".into(), rb, 3.0 / 7.0 - 0.375, RETURN_TOL);
                check(&mut mismatches, "dpbalance efficiency".into(), eff, 1.0, SHARE_TOL);
                check(&mut mismatches, "dpbalance units".into(), plan.pipeline_units(), 2.25, SHARE_TOL);
            }
            Scheduler::Dpf | Scheduler::Dpk => {
                if ids != ["P3", "P4"] {
                    mismatches.push(format!("{scheduler} grants: expected [P3, P4], got {ids:?}"));
                }
                check(&mut mismatches, format!("{scheduler} efficiency"), eff, 0.7, 1e-9);
                check(&mut mismatches, format!("{scheduler} leftover B1"), leftover[&b1], 0.3, 1e-9);
                check(&mut mismatches, format!("{scheduler} leftover B2"), leftover[&b2], 0.4, 1e-9);
            }
            Scheduler::Fcfs => {
                if ids != ["P1", "P2"] {
                    mismatches.push(format!("fcfs grants: expected [P1, P2], got {ids:?}"));
                }
            }
        }
    }
    Ok(DemoOutcome { report, mismatches })
}
