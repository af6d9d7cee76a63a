use proptest::prelude::*;

use offload_core::energy::{aggregate, energy_of, fraction_vs_cpu, PowerConfig, PowerModel};
use offload_core::runtime::{Backend, ExecutionRecord};

fn record() -> impl Strategy<Value = ExecutionRecord> {
    (any::<bool>(), 1.0f64..1e9, 0.0f64..1.0).prop_map(|(accel, wall_ns, t)| ExecutionRecord {
        function: "f".into(),
        backend: if accel { Backend::Accel } else { Backend::Cpu },
        wall_ns,
        vcycles: 0,
        transfer_ns: if accel { wall_ns * t } else { 0.0 },
        bytes_moved: 0,
        timestamp_ns: 0.0,
    })
}

fn model() -> impl Strategy<Value = PowerModel> {
    (0.1f64..50.0, 0.1f64..50.0, 0.1f64..50.0).prop_map(|(p_cpu, p_accel, p_transfer)| PowerModel {
        p_cpu,
        p_accel,
        p_transfer,
        p_idle: 0.0,
    })
}

fn total(records: &[ExecutionRecord], m: &PowerModel) -> f64 {
    records.iter().map(|r| energy_of(r, m).unwrap()).sum()
}

proptest! {
    #[test]
    fn energy_is_additive(a in prop::collection::vec(record(), 0..20), b in prop::collection::vec(record(), 0..20), m in model()) {
        let joined: Vec<ExecutionRecord> = a.iter().chain(&b).cloned().collect();
        let (ea, eb, ej) = (total(&a, &m), total(&b, &m), total(&joined, &m));
        prop_assert!((ej - (ea + eb)).abs() <= 1e-12 * ej.abs().max(1.0));
    }

    #[test]
    fn time_scaling_scales_energy_and_keeps_fractions(
        cpu in prop::collection::vec(1.0f64..1e9, 1..10),
        accel in prop::collection::vec((1.0f64..1e9, 0.0f64..1.0), 1..10),
        c in 0.01f64..100.0,
        m in model(),
    ) {
        let make = |scale: f64| -> Vec<ExecutionRecord> {
            let cpu = cpu.iter().map(|&w| ExecutionRecord {
                function: "f".into(), backend: Backend::Cpu, wall_ns: w * scale, vcycles: 0,
                transfer_ns: 0.0, bytes_moved: 0, timestamp_ns: 0.0,
            });
            let accel = accel.iter().map(|&(w, t)| ExecutionRecord {
                function: "f".into(), backend: Backend::Accel, wall_ns: w * scale, vcycles: 0,
                transfer_ns: w * t * scale, bytes_moved: 0, timestamp_ns: 0.0,
            });
            cpu.chain(accel).collect()
        };
        let power = PowerConfig { default: m, ..PowerConfig::default() };
        let (base, scaled) = (make(1.0), make(c));
        for (r, s) in base.iter().zip(&scaled) {
            let (e, es) = (energy_of(r, &m).unwrap(), energy_of(s, &m).unwrap());
            prop_assert!((es - c * e).abs() <= 1e-9 * es.abs().max(1e-12));
        }
        let frac = |recs: &[ExecutionRecord]| {
            let aggs = aggregate(recs, &power).unwrap();
            let of = |b| aggs.iter().find(|a| a.backend == b).unwrap();
            fraction_vs_cpu(of(Backend::Cpu), of(Backend::Accel)).unwrap()
        };
        let (f0, f1) = (frac(&base), frac(&scaled));
        prop_assert!((f0 - f1).abs() <= 1e-9 * f0.abs());
    }
}

#[test]
fn transfer_longer_than_wall_is_rejected() {
    let r = ExecutionRecord {
        function: "f".into(),
        backend: Backend::Accel,
        wall_ns: 10.0,
        vcycles: 0,
        transfer_ns: 11.0,
        bytes_moved: 0,
        timestamp_ns: 0.0,
    };
    assert!(energy_of(&r, &PowerModel::default()).is_err());
}
