//! Dispatch slots, the accelerator backend, and the adaptive controller.
//!
//! Every registered function is called through a [`DispatchSlot`]. An
//! invocation reads the slot state once and runs to completion on the
//! backend that state selects. Completed invocations feed the profiler; when
//! a window closes, the controller runs under a single lock and swaps slot
//! states.

pub mod accel;
pub mod config;
pub mod controller;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::sync::{Arc, Mutex, RwLock};

use serde::Serialize;
use thiserror::Error;

pub use accel::{compile_plan, default_grain, makespan, run_on_accelerator, split_tasks, AccelError, AccelRun, AcceleratorPlan};
pub use config::{ConfigError, Mode, Policy, RuntimeConfig, TransferModel};
pub use controller::{controller_tick, BackendStats, Decision, DecisionKind, SlotState, SlotView};

use crate::cpu::{CompiledKernel, ExecError, MemoryImage};
use crate::ir::{validate, KernelFunction, Program};
use crate::parallelism::{analyze, eligibility};
use crate::profiler::{ProfileSnapshot, ProfileTable};
use crate::specializer::{binding_from, SpecializationCache, SpecializedKernel, StabilityTracker};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Backend {
    Cpu,
    Accel,
}

impl Backend {
    pub fn as_str(self) -> &'static str {
        match self {
            Backend::Cpu => "cpu",
            Backend::Accel => "accel",
        }
    }
}

/// One completed invocation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExecutionRecord {
    pub function: String,
    pub backend: Backend,
    /// Includes `transfer_ns` for accelerator records.
    pub wall_ns: f64,
    pub vcycles: u64,
    pub transfer_ns: f64,
    pub bytes_moved: u64,
    /// Accounted runtime clock when the invocation started.
    pub timestamp_ns: f64,
}

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("no slot for function `{0}`")]
    UnknownFunction(String),
    #[error("function `{0}` is already registered")]
    DuplicateSlot(String),
    #[error("invalid program:\n{0}")]
    InvalidProgram(String),
    #[error("{function} on {}: {source}", backend.as_str())]
    Exec { function: String, backend: Backend, source: ExecError },
    #[error("{function} on accel: {source}; slot reverted")]
    Accel { function: String, source: AccelError },
}

/// Public view of one slot.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SlotInfo {
    pub function: String,
    pub io: bool,
    pub state: SlotState,
    pub pinned: bool,
    pub revert_count: u32,
    /// Specialization used by the latest accelerator invocation.
    pub specialization: Option<u64>,
    pub cpu_count: u64,
    pub accel_count: u64,
    pub cpu_mean_wall_ns: Option<f64>,
    pub accel_mean_wall_ns: Option<f64>,
    pub cpu_mean_vcycles: Option<f64>,
    pub accel_mean_vcycles: Option<f64>,
}

type Sizes = BTreeMap<String, i64>;

#[derive(Clone)]
struct Control {
    state: SlotState,
    pinned: bool,
    revert_count: u32,
    cpu: BackendStats,
    accel: BackendStats,
    probes: usize,
    reverted_at_tick: Option<u64>,
    last_sizes: Option<Sizes>,
    specialization: Option<u64>,
}

struct CachedPlan {
    kernel: Option<Arc<SpecializedKernel>>,
    plan: Option<Arc<AcceleratorPlan>>,
}

const MAX_PLANS_PER_SLOT: usize = 64;

/// The indirection every call goes through.
pub struct DispatchSlot {
    name: String,
    io: bool,
    function: KernelFunction,
    cpu: CompiledKernel,
    /// Snapshot read by invocations; written only by the controller.
    route: RwLock<Arc<SlotState>>,
    control: Mutex<Control>,
    tracker: Mutex<StabilityTracker>,
    plans: Mutex<HashMap<(Option<u64>, Sizes), CachedPlan>>,
    eligible: Mutex<HashMap<Sizes, bool>>,
}

impl DispatchSlot {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state(&self) -> SlotState {
        **self.route.read().unwrap()
    }

    fn set_state(&self, c: &mut Control, s: SlotState) {
        c.state = s;
        *self.route.write().unwrap() = Arc::new(s);
    }

    fn eligible_at(&self, sizes: &Sizes) -> bool {
        let mut memo = self.eligible.lock().unwrap();
        *memo
            .entry(sizes.clone())
            .or_insert_with(|| analyze(&self.function, sizes).map(|r| eligibility(&r).eligible).unwrap_or(false))
    }
}

#[derive(Default)]
struct Clock {
    now_ns: f64,
    window_ns: f64,
    window_vcycles: u64,
    ticks: u64,
}

pub struct Runtime {
    cfg: RuntimeConfig,
    slots: RwLock<BTreeMap<String, Arc<DispatchSlot>>>,
    profile: Mutex<ProfileTable>,
    clock: Mutex<Clock>,
    records: Mutex<Vec<ExecutionRecord>>,
    log: Mutex<Vec<String>>,
    decisions: Mutex<Vec<Decision>>,
    cache: SpecializationCache,
    controller: Mutex<()>,
}

impl Runtime {
    pub fn new(cfg: RuntimeConfig) -> Self {
        Runtime {
            cache: SpecializationCache::new(cfg.cache_capacity),
            cfg,
            slots: RwLock::new(BTreeMap::new()),
            profile: Mutex::new(ProfileTable::default()),
            clock: Mutex::new(Clock::default()),
            records: Mutex::new(Vec::new()),
            log: Mutex::new(Vec::new()),
            decisions: Mutex::new(Vec::new()),
            controller: Mutex::new(()),
        }
    }

    pub fn config(&self) -> &RuntimeConfig {
        &self.cfg
    }

    /// Adds one slot per function of `p`, all `CpuOnly`. Io functions get
    /// pass-through slots that always run on the cpu.
    pub fn register_program(&self, p: &Program) -> Result<Vec<SlotInfo>, RuntimeError> {
        let report = validate(p);
        if !report.is_valid() {
            return Err(RuntimeError::InvalidProgram(report.to_string()));
        }
        let mut slots = self.slots.write().unwrap();
        if let Some(f) = p.functions.iter().find(|f| slots.contains_key(&f.name)) {
            return Err(RuntimeError::DuplicateSlot(f.name.clone()));
        }
        let mut added = Vec::new();
        for f in &p.functions {
            let cpu = CompiledKernel::compile(f)
                .map_err(|source| RuntimeError::Exec { function: f.name.clone(), backend: Backend::Cpu, source })?;
            let slot = DispatchSlot {
                name: f.name.clone(),
                io: p.is_io(&f.name),
                function: f.clone(),
                cpu,
                route: RwLock::new(Arc::new(SlotState::CpuOnly)),
                control: Mutex::new(Control {
                    state: SlotState::CpuOnly,
                    pinned: false,
                    revert_count: 0,
                    cpu: BackendStats::new(self.cfg.probes),
                    accel: BackendStats::new(self.cfg.probes),
                    probes: 0,
                    reverted_at_tick: None,
                    last_sizes: None,
                    specialization: None,
                }),
                tracker: Mutex::new(StabilityTracker::new(self.cfg.stability_window)),
                plans: Mutex::new(HashMap::new()),
                eligible: Mutex::new(HashMap::new()),
            };
            added.push(Arc::new(slot));
        }
        let mut profile = self.profile.lock().unwrap();
        for s in &added {
            profile.register(&s.name, s.io);
            slots.insert(s.name.clone(), s.clone());
        }
        Ok(added.iter().map(|s| Self::info_of(s)).collect())
    }

    fn slot(&self, name: &str) -> Result<Arc<DispatchSlot>, RuntimeError> {
        self.slots.read().unwrap().get(name).cloned().ok_or_else(|| RuntimeError::UnknownFunction(name.to_string()))
    }

    fn info_of(s: &DispatchSlot) -> SlotInfo {
        let c = s.control.lock().unwrap();
        SlotInfo {
            function: s.name.clone(),
            io: s.io,
            state: c.state,
            pinned: c.pinned,
            revert_count: c.revert_count,
            specialization: c.specialization,
            cpu_count: c.cpu.count,
            accel_count: c.accel.count,
            cpu_mean_wall_ns: c.cpu.mean_wall_ns(),
            accel_mean_wall_ns: c.accel.mean_wall_ns(),
            cpu_mean_vcycles: c.cpu.mean_vcycles(),
            accel_mean_vcycles: c.accel.mean_vcycles(),
        }
    }

    pub fn slot_info(&self, name: &str) -> Result<SlotInfo, RuntimeError> {
        let slot = self.slot(name)?;
        Ok(Self::info_of(&slot))
    }

    pub fn slots(&self) -> Vec<SlotInfo> {
        self.slots.read().unwrap().values().map(|s| Self::info_of(s)).collect()
    }

    pub fn records(&self) -> Vec<ExecutionRecord> {
        self.records.lock().unwrap().clone()
    }

    /// Lines `t=<ns> event=... function=... reason=...` in decision order.
    pub fn decision_log(&self) -> Vec<String> {
        self.log.lock().unwrap().clone()
    }

    pub fn decisions(&self) -> Vec<Decision> {
        self.decisions.lock().unwrap().clone()
    }

    pub fn profile(&self) -> ProfileSnapshot {
        self.profile.lock().unwrap().cumulative().clone()
    }

    pub fn windows(&self) -> Vec<ProfileSnapshot> {
        self.profile.lock().unwrap().archive().to_vec()
    }

    /// Runs `name` on `args` through its slot.
    pub fn invoke(&self, name: &str, args: &MemoryImage) -> Result<(MemoryImage, ExecutionRecord), RuntimeError> {
        let slot = self.slot(name)?;
        let state = slot.state();
        let stable = if self.cfg.specialize && !slot.io {
            slot.tracker.lock().unwrap().observe(&slot.function, args)
        } else {
            BTreeSet::new()
        };
        let to_accel = !slot.io
            && match self.cfg.mode {
                Mode::CpuOnly => false,
                Mode::AccelOnly => true,
                Mode::Adaptive => state.backend() == Backend::Accel,
            };
        let timestamp_ns = self.clock.lock().unwrap().now_ns;
        let sizes = accel::size_args(&slot.function, args);
        let plan = if to_accel { self.plan_for(&slot, args, &sizes, &stable) } else { None };
        let (outputs, record) = match plan {
            Some(plan) => match run_on_accelerator(&plan, args) {
                Ok(run) => {
                    let transfer_ns = self.cfg.transfer.transfer_ns(run.bytes_in, run.bytes_out);
                    let compute_ns =
                        if self.cfg.deterministic { run.span_vcycles as f64 * self.cfg.cycle_ns } else { run.measured_ns as f64 };
                    slot.control.lock().unwrap().specialization = plan.specialization;
                    let r = ExecutionRecord {
                        function: slot.name.clone(),
                        backend: Backend::Accel,
                        wall_ns: transfer_ns + compute_ns,
                        vcycles: run.vcycles,
                        transfer_ns,
                        bytes_moved: run.bytes_in + run.bytes_out,
                        timestamp_ns,
                    };
                    (run.outputs, r)
                }
                Err(source) => {
                    self.fault(&slot, &source);
                    return Err(RuntimeError::Accel { function: slot.name.clone(), source });
                }
            },
            None => self.run_cpu(&slot, args, timestamp_ns)?,
        };
        self.account(&slot, &record, sizes);
        Ok((outputs, record))
    }

    fn run_cpu(&self, slot: &DispatchSlot, args: &MemoryImage, timestamp_ns: f64) -> Result<(MemoryImage, ExecutionRecord), RuntimeError> {
        let err = |source| RuntimeError::Exec { function: slot.name.clone(), backend: Backend::Cpu, source };
        let start = std::time::Instant::now();
        let inst = slot.cpu.bind(args).map_err(err)?;
        let vcycles = slot.cpu.run(&inst).map_err(err)?;
        let outputs = slot.cpu.outputs(&inst);
        let wall_ns = if self.cfg.deterministic {
            vcycles as f64 * self.cfg.cycle_ns / self.cfg.cpu_workers as f64
        } else {
            start.elapsed().as_nanos() as f64
        };
        let r = ExecutionRecord {
            function: slot.name.clone(),
            backend: Backend::Cpu,
            wall_ns,
            vcycles,
            transfer_ns: 0.0,
            bytes_moved: 0,
            timestamp_ns,
        };
        Ok((outputs, r))
    }

    /// The accelerator plan for these arguments, preferring a specialization
    /// on the stable parameters. `None` if the kernel is not eligible at
    /// these sizes.
    fn plan_for(&self, slot: &DispatchSlot, args: &MemoryImage, sizes: &Sizes, stable: &BTreeSet<String>) -> Option<Arc<AcceleratorPlan>> {
        let mut plans = slot.plans.lock().unwrap();
        if plans.len() > MAX_PLANS_PER_SLOT {
            plans.clear();
        }
        let build = |f: &KernelFunction, id: Option<u64>| {
            let rep = analyze(f, sizes).ok()?;
            let mut p = compile_plan(f, &rep, self.cfg.workers).ok()?;
            p.grain = self.cfg.grain;
            p.specialization = id;
            Some(Arc::new(p))
        };
        if !stable.is_empty() {
            let binding = binding_from(args, stable);
            if let Ok(sk) = self.cache.get_or_specialize(&slot.function, &binding) {
                let key = (Some(sk.id), sizes.clone());
                let hit = plans.get(&key).filter(|c| c.kernel.as_ref().is_some_and(|k| k.binding == sk.binding));
                let plan = match hit {
                    Some(c) => c.plan.clone(),
                    None => {
                        let plan = build(&sk.function, Some(sk.id));
                        plans.insert(key, CachedPlan { kernel: Some(sk.clone()), plan: plan.clone() });
                        plan
                    }
                };
                if plan.is_some() {
                    return plan;
                }
            }
        }
        plans
            .entry((None, sizes.clone()))
            .or_insert_with(|| CachedPlan { kernel: None, plan: build(&slot.function, None) })
            .plan
            .clone()
    }

    fn fault(&self, slot: &DispatchSlot, e: &AccelError) {
        let _serial = self.controller.lock().unwrap();
        let mut c = slot.control.lock().unwrap();
        let d = Decision {
            function: slot.name.clone(),
            kind: DecisionKind::Revert,
            next: SlotState::Reverted,
            reason: format!("fault: {e}"),
        };
        let tick = self.clock.lock().unwrap().ticks;
        self.apply(slot, &mut c, d, tick);
    }

    fn account(&self, slot: &DispatchSlot, r: &ExecutionRecord, sizes: Sizes) {
        self.records.lock().unwrap().push(r.clone());
        {
            let mut c = slot.control.lock().unwrap();
            match r.backend {
                Backend::Cpu => c.cpu.push(r.clone()),
                Backend::Accel => {
                    c.accel.push(r.clone());
                    if c.state == SlotState::Offloading {
                        c.probes += 1;
                    }
                }
            }
            c.last_sizes = Some(sizes);
        }
        let closed = {
            let mut profile = self.profile.lock().unwrap();
            let _ = profile.record_raw(&slot.name, r.vcycles, r.wall_ns.round() as u64);
            let mut clock = self.clock.lock().unwrap();
            clock.now_ns += r.wall_ns;
            clock.window_ns += r.wall_ns;
            clock.window_vcycles += r.vcycles;
            if clock.window_ns >= self.cfg.window_ns || clock.window_vcycles >= self.cfg.window_vcycles {
                clock.window_ns = 0.0;
                clock.window_vcycles = 0;
                clock.ticks += 1;
                Some((profile.reset_window().clone(), clock.ticks))
            } else {
                None
            }
        };
        if let Some((snapshot, tick)) = closed {
            if self.cfg.mode == Mode::Adaptive {
                self.tick(&snapshot, tick);
            }
        }
    }

    fn tick(&self, snapshot: &ProfileSnapshot, tick: u64) {
        let _serial = self.controller.lock().unwrap();
        let slots: Vec<Arc<DispatchSlot>> = self.slots.read().unwrap().values().cloned().collect();
        let controls: Vec<Control> = slots.iter().map(|s| s.control.lock().unwrap().clone()).collect();
        let eligible: Vec<bool> = slots
            .iter()
            .zip(&controls)
            .map(|(s, c)| !s.io && c.last_sizes.as_ref().is_some_and(|z| s.eligible_at(z)))
            .collect();
        let views: Vec<SlotView> = slots
            .iter()
            .zip(&controls)
            .zip(&eligible)
            .map(|((s, c), &eligible)| SlotView {
                function: &s.name,
                state: c.state,
                pinned: c.pinned || s.io,
                eligible,
                cpu: &c.cpu,
                accel: &c.accel,
                probes: c.probes,
                window_since_revert: c.reverted_at_tick.is_some_and(|t| t < tick),
            })
            .collect();
        let decisions = controller_tick(snapshot, &views, &self.cfg);
        for d in decisions {
            let slot = slots.iter().find(|s| s.name == d.function).unwrap();
            let mut c = slot.control.lock().unwrap();
            self.apply(slot, &mut c, d, tick);
        }
    }

    fn apply(&self, slot: &DispatchSlot, c: &mut Control, mut d: Decision, tick: u64) {
        match d.kind {
            DecisionKind::Offload => c.probes = 0,
            DecisionKind::Revert => {
                c.revert_count += 1;
                c.reverted_at_tick = Some(tick);
                if c.revert_count >= self.cfg.max_reverts {
                    c.pinned = true;
                    d.next = SlotState::CpuOnly;
                    let _ = write!(d.reason, "; pinned after {} reverts", c.revert_count);
                }
            }
            DecisionKind::Hold => {}
        }
        self.set_state_logged(slot, c, d);
    }

    fn set_state_logged(&self, slot: &DispatchSlot, c: &mut Control, d: Decision) {
        slot.set_state(c, d.next);
        let t = self.clock.lock().unwrap().now_ns.round() as u64;
        self.log.lock().unwrap().push(format!("t={t} {d}"));
        self.decisions.lock().unwrap().push(d);
    }
}
