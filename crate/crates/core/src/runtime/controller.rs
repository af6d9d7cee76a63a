//! Offload/revert decisions from per-slot backend statistics.
//!
//! [`controller_tick`] is pure: the caller supplies a window snapshot and a
//! view of every slot and applies the returned decisions.

use std::collections::VecDeque;
use std::fmt;

use serde::Serialize;

use super::{Backend, ExecutionRecord, Policy, RuntimeConfig};
use crate::energy::{energy_of, PowerModel};
use crate::profiler::ProfileSnapshot;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize)]
pub enum SlotState {
    #[default]
    CpuOnly,
    Candidate,
    Offloading,
    Offloaded,
    Reverted,
}

impl SlotState {
    pub fn as_str(self) -> &'static str {
        match self {
            SlotState::CpuOnly => "cpu-only",
            SlotState::Candidate => "candidate",
            SlotState::Offloading => "offloading",
            SlotState::Offloaded => "offloaded",
            SlotState::Reverted => "reverted",
        }
    }

    /// Backend that serves invocations started in this state.
    pub fn backend(self) -> Backend {
        match self {
            SlotState::Offloading | SlotState::Offloaded => Backend::Accel,
            _ => Backend::Cpu,
        }
    }
}

/// The last `capacity` records of one backend plus lifetime totals.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BackendStats {
    capacity: usize,
    recent: VecDeque<ExecutionRecord>,
    pub count: u64,
    pub total_wall_ns: f64,
    pub total_vcycles: u64,
}

impl BackendStats {
    pub fn new(capacity: usize) -> Self {
        BackendStats { capacity: capacity.max(1), ..Default::default() }
    }

    pub fn push(&mut self, r: ExecutionRecord) {
        self.count += 1;
        self.total_wall_ns += r.wall_ns;
        self.total_vcycles += r.vcycles;
        if self.recent.len() == self.capacity {
            self.recent.pop_front();
        }
        self.recent.push_back(r);
    }

    pub fn is_empty(&self) -> bool {
        self.recent.is_empty()
    }

    pub fn recent(&self) -> impl Iterator<Item = &ExecutionRecord> {
        self.recent.iter()
    }

    pub fn last(&self) -> Option<&ExecutionRecord> {
        self.recent.back()
    }

    pub fn mean_wall_ns(&self) -> Option<f64> {
        self.mean(|r| r.wall_ns)
    }

    pub fn mean_vcycles(&self) -> Option<f64> {
        self.mean(|r| r.vcycles as f64)
    }

    fn mean(&self, f: impl Fn(&ExecutionRecord) -> f64) -> Option<f64> {
        (!self.recent.is_empty()).then(|| self.recent.iter().map(f).sum::<f64>() / self.recent.len() as f64)
    }
}

/// What the controller sees of one slot.
#[derive(Clone, Copy, Debug)]
pub struct SlotView<'a> {
    pub function: &'a str,
    pub state: SlotState,
    /// Never considered again.
    pub pinned: bool,
    pub eligible: bool,
    pub cpu: &'a BackendStats,
    pub accel: &'a BackendStats,
    /// Accelerator invocations completed since entering `Offloading`.
    pub probes: usize,
    /// A full window has ended since the slot was reverted.
    pub window_since_revert: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum DecisionKind {
    Offload,
    Revert,
    Hold,
}

impl DecisionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DecisionKind::Offload => "offload",
            DecisionKind::Revert => "revert",
            DecisionKind::Hold => "hold",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Decision {
    pub function: String,
    pub kind: DecisionKind,
    /// State the slot moves to.
    pub next: SlotState,
    pub reason: String,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "event={} function={} reason={}", self.kind.as_str(), self.function, self.reason)
    }
}

struct Costs<'a> {
    policy: Policy,
    power: &'a PowerModel,
}

impl Costs<'_> {
    fn unit(&self) -> &'static str {
        match self.policy {
            Policy::Speed => "ns",
            Policy::Energy => "J",
        }
    }

    fn of(&self, r: &ExecutionRecord) -> f64 {
        match self.policy {
            Policy::Speed => r.wall_ns,
            // Records built by the runtime are always valid.
            Policy::Energy => energy_of(r, self.power).unwrap_or(f64::INFINITY),
        }
    }

    fn transfer_of(&self, r: &ExecutionRecord) -> f64 {
        match self.policy {
            Policy::Speed => r.transfer_ns,
            Policy::Energy => r.transfer_ns * self.power.p_transfer * 1e-9,
        }
    }

    fn mean(&self, s: &BackendStats) -> Option<f64> {
        (!s.is_empty()).then(|| s.recent().map(|r| self.of(r)).sum::<f64>() / s.recent().count() as f64)
    }
}

fn num(v: f64) -> String {
    format!("{v:.6e}")
}

/// Decides, for every slot, whether to offload, revert, or confirm it.
/// Hot slots are visited in hot-list order, the rest in the given order.
/// Slots without a decision keep their state.
pub fn controller_tick(snapshot: &ProfileSnapshot, slots: &[SlotView], cfg: &RuntimeConfig) -> Vec<Decision> {
    let hot = snapshot.hot_candidates(cfg.threshold).unwrap_or_default();
    let mut order: Vec<&SlotView> = hot.names().filter_map(|n| slots.iter().find(|s| s.function == n)).collect();
    order.extend(slots.iter().filter(|s| !hot.contains(s.function)));
    let mut out = Vec::new();
    for s in order {
        if s.pinned || snapshot.io_functions.contains(s.function) {
            continue;
        }
        let costs = Costs { policy: cfg.policy, power: cfg.power.model_for(s.function) };
        let is_hot = hot.contains(s.function);
        let decision = |kind, next, reason: String| Decision { function: s.function.to_string(), kind, next, reason };
        let cpu = costs.mean(s.cpu);
        let accel = costs.mean(s.accel);
        let loses = |a: f64, c: f64| a > cfg.beta * c;
        let share = snapshot.share(s.function);
        match s.state {
            SlotState::CpuOnly if is_hot && s.eligible => {
                out.push(decision(DecisionKind::Offload, SlotState::Offloading, format!("hot share {share:.4} and eligible")));
            }
            SlotState::Candidate | SlotState::Reverted if is_hot && s.eligible => {
                if s.state == SlotState::Reverted && !s.window_since_revert {
                    continue;
                }
                match (accel, cpu) {
                    (Some(a), Some(c)) if loses(a, c) => {
                        if s.state == SlotState::Reverted {
                            out.push(decision(
                                DecisionKind::Hold,
                                SlotState::Candidate,
                                format!("candidate again; accel history {} {u} > beta x cpu {} {u}", num(a), num(c), u = costs.unit()),
                            ));
                        }
                    }
                    _ => out.push(decision(DecisionKind::Offload, SlotState::Offloading, format!("hot share {share:.4} and eligible"))),
                }
            }
            SlotState::Offloading | SlotState::Offloaded => {
                let (Some(c), Some(last)) = (cpu, s.accel.last()) else { continue };
                let u = costs.unit();
                let t = costs.transfer_of(last);
                if s.state == SlotState::Offloading && s.probes >= 1 && s.probes < cfg.probes && loses(t, c) {
                    out.push(decision(
                        DecisionKind::Revert,
                        SlotState::Reverted,
                        format!("probe transfer {} {u} > beta x cpu {} {u}", num(t), num(c)),
                    ));
                    continue;
                }
                let ready = s.state == SlotState::Offloaded || s.probes >= cfg.probes;
                let Some(a) = accel.filter(|_| ready) else { continue };
                if loses(a, c) {
                    out.push(decision(DecisionKind::Revert, SlotState::Reverted, format!("accel {} {u} > beta x cpu {} {u}", num(a), num(c))));
                } else if s.state == SlotState::Offloading {
                    out.push(decision(DecisionKind::Hold, SlotState::Offloaded, format!("accel {} {u} <= beta x cpu {} {u}", num(a), num(c))));
                }
            }
            _ => {}
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiler::ProfileTable;

    fn rec(backend: Backend, wall_ns: f64, transfer_ns: f64) -> ExecutionRecord {
        ExecutionRecord { function: "f".into(), backend, wall_ns, vcycles: 1, transfer_ns, bytes_moved: 0, timestamp_ns: 0.0 }
    }

    fn snapshot() -> ProfileSnapshot {
        let mut t = ProfileTable::new(["f"], []);
        t.record_raw("f", 100, 100).unwrap();
        t.window().clone()
    }

    fn stats(backend: Backend, walls: &[f64]) -> BackendStats {
        let mut s = BackendStats::new(5);
        for &w in walls {
            s.push(rec(backend, w, 0.0));
        }
        s
    }

    fn view<'a>(state: SlotState, cpu: &'a BackendStats, accel: &'a BackendStats, probes: usize) -> SlotView<'a> {
        SlotView { function: "f", state, pinned: false, eligible: true, cpu, accel, probes, window_since_revert: true }
    }

    #[test]
    fn hot_eligible_without_history_offloads() {
        let cpu = stats(Backend::Cpu, &[1.0e6]);
        let accel = BackendStats::new(5);
        let d = controller_tick(&snapshot(), &[view(SlotState::CpuOnly, &cpu, &accel, 0)], &RuntimeConfig::default());
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].kind, DecisionKind::Offload);
        let mut v = view(SlotState::CpuOnly, &cpu, &accel, 0);
        v.eligible = false;
        assert!(controller_tick(&snapshot(), &[v], &RuntimeConfig::default()).is_empty());
    }

    #[test]
    fn slower_accel_reverts_after_probes() {
        let cpu = stats(Backend::Cpu, &[1.0e6; 5]);
        let accel = stats(Backend::Accel, &[2.0e6; 5]);
        let d = controller_tick(&snapshot(), &[view(SlotState::Offloading, &cpu, &accel, 5)], &RuntimeConfig::default());
        assert_eq!(d[0].kind, DecisionKind::Revert);
        assert_eq!(d[0].next, SlotState::Reverted);
        // Fewer than K probes and cheap transfers: wait.
        assert!(controller_tick(&snapshot(), &[view(SlotState::Offloading, &cpu, &accel, 3)], &RuntimeConfig::default()).is_empty());
    }

    #[test]
    fn expensive_transfer_reverts_after_one_probe() {
        let cpu = stats(Backend::Cpu, &[1.0e6]);
        let mut accel = BackendStats::new(5);
        accel.push(rec(Backend::Accel, 1.0e9 + 1.0e5, 1.0e9));
        let d = controller_tick(&snapshot(), &[view(SlotState::Offloading, &cpu, &accel, 1)], &RuntimeConfig::default());
        assert_eq!(d[0].kind, DecisionKind::Revert);
    }

    #[test]
    fn reverted_waits_a_window_and_compares_history() {
        let cpu = stats(Backend::Cpu, &[1.0e6]);
        let accel = stats(Backend::Accel, &[2.0e6]);
        let mut v = view(SlotState::Reverted, &cpu, &accel, 0);
        v.window_since_revert = false;
        assert!(controller_tick(&snapshot(), &[v], &RuntimeConfig::default()).is_empty());
        v.window_since_revert = true;
        let d = controller_tick(&snapshot(), &[v], &RuntimeConfig::default());
        assert_eq!((d[0].kind, d[0].next), (DecisionKind::Hold, SlotState::Candidate));
        let v = view(SlotState::Candidate, &cpu, &accel, 0);
        assert!(controller_tick(&snapshot(), &[v], &RuntimeConfig::default()).is_empty());
        let v = SlotView { pinned: true, ..view(SlotState::CpuOnly, &cpu, &accel, 0) };
        assert!(controller_tick(&snapshot(), &[v], &RuntimeConfig::default()).is_empty());
    }
}
