//! The three completed handover flows are frozen step-for-step in
//! fixture files. Any drift in step order, attribution or labels is a
//! breaking change to the trace format and must show up here.

use femtosim::signaling::*;
use femtosim::topology::FapId;

fn fixture(name: &str) -> String {
    let path = format!("{}/tests/data/{}", env!("CARGO_MANIFEST_DIR"), name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("reading {path}: {e}"))
}

fn assert_matches_fixture(trace: &SignalingTrace, name: &str) {
    assert!(trace.is_completed());
    let expected = fixture(name);
    let rendered = trace.render_csv();
    if rendered != expected {
        for (i, (got, want)) in rendered.lines().zip(expected.lines()).enumerate() {
            assert_eq!(got, want, "first divergence at line {}", i + 1);
        }
        panic!("trace length differs from fixture {name}");
    }
}

#[test]
fn f2m_matches_fixture() {
    let trace = run_f2m(
        7,
        FapId(3),
        &F2mContext {
            preauth_ok: true,
            cac_ok: true,
            signal_report: SignalReport {
                serving_rssi_dbm: -82.0,
                target_rssi_dbm: -68.0,
            },
        },
    );
    assert_eq!(trace.steps.len(), 33);
    assert_matches_fixture(&trace, "trace_f2m.txt");
    assert_eq!(trace.steps.last().unwrap().label, "link_delete_complete");
}

#[test]
fn m2f_matches_fixture() {
    let trace = run_m2f(
        7,
        FapId(3),
        &M2fContext {
            authorization_ok: true,
            cac_ok: true,
            interference_ok: true,
        },
    );
    assert_eq!(trace.steps.len(), 34);
    assert_matches_fixture(&trace, "trace_m2f.txt");
}

#[test]
fn f2f_matches_fixture() {
    let trace = run_f2f(
        7,
        FapId(3),
        FapId(4),
        &F2fContext {
            authorization_ok: true,
            cac_ok: true,
        },
    );
    assert_eq!(trace.steps.len(), 29);
    assert_matches_fixture(&trace, "trace_f2f.txt");
}

#[test]
fn abort_gates_hold_at_documented_steps() {
    let cases: Vec<(SignalingTrace, AbortReason, u32)> = vec![
        (
            run_f2m(
                1,
                FapId(2),
                &F2mContext {
                    preauth_ok: false,
                    cac_ok: true,
                    signal_report: SignalReport {
                        serving_rssi_dbm: -80.0,
                        target_rssi_dbm: -70.0,
                    },
                },
            ),
            AbortReason::Preauth,
            6,
        ),
        (
            run_f2m(
                1,
                FapId(2),
                &F2mContext {
                    preauth_ok: true,
                    cac_ok: false,
                    signal_report: SignalReport {
                        serving_rssi_dbm: -80.0,
                        target_rssi_dbm: -70.0,
                    },
                },
            ),
            AbortReason::Cac,
            12,
        ),
        (
            run_m2f(
                1,
                FapId(2),
                &M2fContext {
                    authorization_ok: false,
                    cac_ok: true,
                    interference_ok: true,
                },
            ),
            AbortReason::Auth,
            12,
        ),
        (
            run_m2f(
                1,
                FapId(2),
                &M2fContext {
                    authorization_ok: true,
                    cac_ok: false,
                    interference_ok: true,
                },
            ),
            AbortReason::Cac,
            13,
        ),
        (
            run_m2f(
                1,
                FapId(2),
                &M2fContext {
                    authorization_ok: true,
                    cac_ok: true,
                    interference_ok: false,
                },
            ),
            AbortReason::Cac,
            13,
        ),
        (
            run_f2f(
                1,
                FapId(2),
                FapId(3),
                &F2fContext {
                    authorization_ok: false,
                    cac_ok: true,
                },
            ),
            AbortReason::Auth,
            11,
        ),
        (
            run_f2f(
                1,
                FapId(2),
                FapId(3),
                &F2fContext {
                    authorization_ok: true,
                    cac_ok: false,
                },
            ),
            AbortReason::Cac,
            12,
        ),
    ];

    for (trace, reason, at_step) in cases {
        assert_eq!(
            trace.outcome,
            TraceOutcome::Aborted { reason, at_step },
            "{} flow",
            trace.flow.name()
        );
        assert_eq!(trace.steps.len() as u32, at_step);
        assert!(trace.steps.iter().all(|s| s.index <= at_step));
    }
}
