//! Operator, critic, gradient and reward oracles, runnable from the CLI.

use dreal_core::oracle::{check_actors, check_critic, critic_fit, gradient_check};
use dreal_core::reward::{compute_reward, RewardConfig};
use dreal_core::AttentionKind;

use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

fn check(name: impl Into<String>, passed: bool, detail: String) -> Check {
    Check { name: name.into(), passed, detail }
}

pub fn run_selftest(seed: u64) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for r in check_actors(40, seed)? {
        out.push(check(format!("actor {}", r.name), r.max_abs_error <= 1e-10, format!("max error {:.3e}", r.max_abs_error)));
    }
    let r = check_critic(100, seed)?;
    out.push(check("critic", r.max_abs_error <= 1e-10, format!("max error {:.3e} over {} cases", r.max_abs_error, r.cases)));
    for kind in [AttentionKind::Channel, AttentionKind::SpatialChannel, AttentionKind::Style] {
        let g = gradient_check(kind, seed)?;
        out.push(check(
            format!("gradients {kind:?}"),
            g.worst() <= 1e-4,
            format!("worst relative error {:.3e}", g.worst()),
        ));
    }
    let fit = critic_fit(200, seed)?;
    out.push(check(
        "critic fit",
        fit.final_loss <= 0.5 * fit.initial_loss,
        format!("loss {:.4e} -> {:.4e}", fit.initial_loss, fit.final_loss),
    ));
    let cfg = RewardConfig::default();
    let wrong = compute_reward(0.9, 0.1, false, &cfg);
    let ratio = compute_reward(0.8, 0.4, true, &cfg);
    out.push(check(
        "reward",
        wrong == -cfg.gamma && (ratio - 0.5).abs() <= 1e-9,
        format!("incorrect {wrong}, ratio case {ratio}"),
    ));
    Ok(out)
}
