//! Deterministic failure injection.
//!
//! A policy is an ordered list of injection rules, each scoped to one tool
//! or to all tools. Whether an invocation fails is decided the moment it
//! starts, from a pure function of (rule seed, tool id, invocation sequence
//! number) plus a per-tool call counter for the first-k modes. Two runs with
//! the same policy and the same invocation order make identical decisions.

use crate::ids::ToolId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// How one rule decides to break an invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InjectionMode {
    /// Each call fails independently with probability `p`.
    FailProb { p: f64 },
    /// The first `k` calls of the scoped tool fail, later ones run clean.
    FailFirstK { k: u32 },
    /// The first `k` calls report an unmet precondition even though the
    /// world would have allowed them.
    PreconditionSpoof { k: u32 },
}

/// One injection rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureInjection {
    /// Tool this rule applies to; None applies to every tool.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool: Option<ToolId>,
    pub mode: InjectionMode,
    #[serde(default)]
    pub seed: u64,
}

/// What the policy injected into an invocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InjectedFailure {
    /// Execution broke mid-flight; retrying the same call can succeed.
    Transient,
    /// A precondition check lies; the caller sees a blocked-style refusal.
    Spoof,
}

/// Ordered rule set plus runtime call counters. Tool-scoped rules take
/// precedence over wildcard rules; within one scope, declaration order wins.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FailurePolicy {
    #[serde(default)]
    pub injections: Vec<FailureInjection>,
    /// Runtime counters of invocations seen per tool.
    #[serde(default)]
    calls_seen: BTreeMap<ToolId, u32>,
}

impl FailurePolicy {
    /// Policy that never injects anything.
    pub fn none() -> Self {
        Self::default()
    }

    /// Wildcard transient-failure probability for every tool.
    pub fn with_rate(seed: u64, rate: f64) -> Self {
        Self::default().rate(seed, rate)
    }

    pub fn rate(mut self, seed: u64, rate: f64) -> Self {
        self.injections.push(FailureInjection {
            tool: None,
            mode: InjectionMode::FailProb { p: rate },
            seed,
        });
        self
    }

    pub fn fail_first(mut self, tool: impl Into<ToolId>, k: u32) -> Self {
        self.injections.push(FailureInjection {
            tool: Some(tool.into()),
            mode: InjectionMode::FailFirstK { k },
            seed: 0,
        });
        self
    }

    pub fn spoof_first(mut self, tool: impl Into<ToolId>, k: u32) -> Self {
        self.injections.push(FailureInjection {
            tool: Some(tool.into()),
            mode: InjectionMode::PreconditionSpoof { k },
            seed: 0,
        });
        self
    }

    pub fn tool_rate(mut self, tool: impl Into<ToolId>, seed: u64, rate: f64) -> Self {
        self.injections.push(FailureInjection {
            tool: Some(tool.into()),
            mode: InjectionMode::FailProb { p: rate },
            seed,
        });
        self
    }

    /// Reject rules with probabilities outside [0, 1].
    pub fn validate(&self) -> Result<(), String> {
        for rule in &self.injections {
            if let InjectionMode::FailProb { p } = rule.mode {
                if !(0.0..=1.0).contains(&p) || p.is_nan() {
                    return Err(format!(
                        "injection probability {p} for {:?} outside [0, 1]",
                        rule.tool
                    ));
                }
            }
        }
        Ok(())
    }

    /// Decide whether the invocation with this sequence number fails.
    /// Advances the per-tool call counter.
    pub fn decide(&mut self, tool: &ToolId, seq: u64) -> Option<InjectedFailure> {
        let seen = self.calls_seen.entry(tool.clone()).or_insert(0);
        *seen += 1;
        let nth = *seen;
        let scoped = self
            .injections
            .iter()
            .filter(|r| r.tool.as_ref() == Some(tool));
        let wildcard = self.injections.iter().filter(|r| r.tool.is_none());
        for rule in scoped.chain(wildcard) {
            match rule.mode {
                InjectionMode::FailFirstK { k } => {
                    if nth <= k {
                        return Some(InjectedFailure::Transient);
                    }
                }
                InjectionMode::PreconditionSpoof { k } => {
                    if nth <= k {
                        return Some(InjectedFailure::Spoof);
                    }
                }
                InjectionMode::FailProb { p } => {
                    if p <= 0.0 {
                        return None;
                    }
                    if p >= 1.0 || draw(rule.seed, tool, seq) < p {
                        return Some(InjectedFailure::Transient);
                    }
                    return None;
                }
            }
        }
        None
    }

    /// Calls observed so far for a tool.
    pub fn calls_seen(&self, tool: &ToolId) -> u32 {
        self.calls_seen.get(tool).copied().unwrap_or(0)
    }

    /// Forget runtime counters; the policy becomes as fresh as configured.
    pub fn reset(&mut self) {
        self.calls_seen.clear();
    }
}

/// One uniform draw in [0, 1), keyed so that neither reordering other tools'
/// calls nor re-seeding another rule disturbs it.
fn draw(seed: u64, tool: &ToolId, seq: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(
        seed ^ fnv1a(tool.as_str().as_bytes()) ^ seq.wrapping_mul(0x9E37_79B9_7F4A_7C15),
    );
    rng.gen::<f64>()
}

/// Stable 64-bit FNV-1a; the std hasher is not guaranteed stable across
/// toolchains and this value keys reproducible runs.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grasp() -> ToolId {
        ToolId::from("grasp")
    }

    #[test]
    fn empty_policy_never_fails() {
        let mut policy = FailurePolicy::none();
        for seq in 0..1000 {
            assert_eq!(policy.decide(&grasp(), seq), None);
        }
    }

    #[test]
    fn unit_rate_always_fails() {
        let mut policy = FailurePolicy::with_rate(1, 1.0);
        for seq in 0..100 {
            assert_eq!(policy.decide(&grasp(), seq), Some(InjectedFailure::Transient));
        }
    }

    #[test]
    fn fail_first_k_fails_exactly_k_then_recovers() {
        let mut policy = FailurePolicy::none().fail_first("grasp", 3);
        let decisions: Vec<bool> = (0..6)
            .map(|seq| policy.decide(&grasp(), seq).is_some())
            .collect();
        assert_eq!(decisions, vec![true, true, true, false, false, false]);
        // other tools are untouched
        assert_eq!(policy.decide(&ToolId::from("place"), 6), None);
    }

    #[test]
    fn spoof_first_k_reports_spoofs_then_recovers() {
        let mut policy = FailurePolicy::none().spoof_first("grasp", 2);
        assert_eq!(policy.decide(&grasp(), 0), Some(InjectedFailure::Spoof));
        assert_eq!(policy.decide(&grasp(), 1), Some(InjectedFailure::Spoof));
        assert_eq!(policy.decide(&grasp(), 2), None);
    }

    #[test]
    fn decisions_are_a_pure_function_of_seed_tool_and_seq() {
        let mut a = FailurePolicy::with_rate(42, 0.3);
        let mut b = FailurePolicy::with_rate(42, 0.3);
        let da: Vec<bool> = (0..500).map(|seq| a.decide(&grasp(), seq).is_some()).collect();
        let db: Vec<bool> = (0..500).map(|seq| b.decide(&grasp(), seq).is_some()).collect();
        assert_eq!(da, db);

        // frozen prefix for seed 42, rate 0.3: guards against accidental
        // changes to the draw scheme
        assert_eq!(
            &da[..10],
            &[true, false, true, false, false, false, true, false, true, true]
        );
    }

    #[test]
    fn different_seeds_give_different_streams() {
        let mut a = FailurePolicy::with_rate(1, 0.5);
        let mut b = FailurePolicy::with_rate(2, 0.5);
        let da: Vec<bool> = (0..64).map(|seq| a.decide(&grasp(), seq).is_some()).collect();
        let db: Vec<bool> = (0..64).map(|seq| b.decide(&grasp(), seq).is_some()).collect();
        assert_ne!(da, db);
    }

    #[test]
    fn injection_frequency_tracks_the_rate() {
        let mut policy = FailurePolicy::with_rate(7, 0.3);
        let failures = (0..10_000)
            .filter(|seq| policy.decide(&grasp(), *seq).is_some())
            .count();
        assert!(
            (2700..=3300).contains(&failures),
            "got {failures} failures for rate 0.3"
        );
    }

    #[test]
    fn tool_scoped_rule_beats_wildcard() {
        let mut policy = FailurePolicy::with_rate(3, 1.0).tool_rate("place", 3, 0.0);
        assert!(policy.decide(&grasp(), 0).is_some());
        assert_eq!(policy.decide(&ToolId::from("place"), 1), None);
    }

    #[test]
    fn out_of_range_probability_is_rejected() {
        assert!(FailurePolicy::with_rate(0, 1.5).validate().is_err());
        assert!(FailurePolicy::with_rate(0, -0.1).validate().is_err());
        assert!(FailurePolicy::with_rate(0, 0.5).validate().is_ok());
    }

    #[test]
    fn reset_restores_fail_first_counters() {
        let mut policy = FailurePolicy::none().fail_first("grasp", 1);
        assert!(policy.decide(&grasp(), 0).is_some());
        assert_eq!(policy.decide(&grasp(), 1), None);
        policy.reset();
        assert!(policy.decide(&grasp(), 2).is_some());
    }

    #[test]
    fn policy_serde_round_trip() {
        let policy = FailurePolicy::with_rate(9, 0.25)
            .fail_first("grasp", 4)
            .spoof_first("detect", 1);
        let json = serde_json::to_string(&policy).unwrap();
        let back: FailurePolicy = serde_json::from_str(&json).unwrap();
        assert_eq!(policy, back);
    }
}
