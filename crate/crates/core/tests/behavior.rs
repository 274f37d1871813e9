//! Timing behaviour across schemes and presets, and the shipped config files.

use std::path::PathBuf;

use specsim::isa::{assemble, ArchInstr, ArchReg};
use specsim::{
    collect_stats, gen_workload, simulate, CoreConfig, Program, SchemeKind, WorkloadKind,
};

fn cycles(cfg: &CoreConfig, s: SchemeKind, p: &Program) -> u64 {
    simulate(cfg, s, p).unwrap().cycles
}

fn total_cycles(cfg: &CoreConfig, s: SchemeKind, kind: WorkloadKind) -> u64 {
    (0..5)
        .map(|seed| cycles(cfg, s, &gen_workload(kind, 3000, seed).unwrap()))
        .sum()
}

#[test]
fn baseline_is_never_slower_than_stt() {
    for cfg in CoreConfig::presets() {
        for kind in WorkloadKind::ALL {
            let base = total_cycles(&cfg, SchemeKind::Baseline, kind);
            for s in [SchemeKind::SttRename, SchemeKind::SttIssue] {
                let c = total_cycles(&cfg, s, kind);
                assert!(base <= c, "{} {kind} {s}: baseline {base} > {c}", cfg.name);
            }
        }
    }
}

// NDA never wakes load dependents early, so it is compared against a
// baseline that does not either; with early wakeup the baseline can lose
// slots to replays that NDA never pays for.
#[test]
fn baseline_is_never_slower_than_nda_at_equal_wakeup() {
    for mut cfg in CoreConfig::presets() {
        cfg.speculative_wakeup = false;
        for kind in WorkloadKind::ALL {
            let base = total_cycles(&cfg, SchemeKind::Baseline, kind);
            let nda = total_cycles(&cfg, SchemeKind::Nda, kind);
            assert!(
                base <= nda,
                "{} {kind}: baseline {base} > nda {nda}",
                cfg.name
            );
        }
    }
}

#[test]
fn wider_core_runs_compute_faster() {
    let p = gen_workload(WorkloadKind::ComputeBound, 4000, 3).unwrap();
    let mut narrow = CoreConfig::mega();
    narrow.width = 1;
    narrow.fetch_buffer = 2;
    let wide = CoreConfig::mega();
    let ipc = |c: &CoreConfig| collect_stats(&simulate(c, SchemeKind::Baseline, &p).unwrap()).ipc;
    let (n, w) = (ipc(&narrow), ipc(&wide));
    assert!(n <= 1.0);
    assert!(w > 1.5 * n, "width 4 ipc {w} vs width 1 ipc {n}");
}

#[test]
fn schemes_agree_when_nothing_is_speculative() {
    // No branches and no stores: nothing is ever speculative.
    let p = assemble(
        "addi r1, r0, 4096\nload r2, 0(r1)\nload r3, 0(r2)\nadd r4, r3, r2\nload r5, 8(r4)\nmul r6, r5, r5\nhalt\n",
    )
    .unwrap();
    for cfg in CoreConfig::presets() {
        for s in SchemeKind::SECURE {
            let mut cfg = cfg.clone();
            // NDA has no early wakeup of its own; match the baseline to it.
            cfg.speculative_wakeup = s != SchemeKind::Nda;
            let base = simulate(&cfg, SchemeKind::Baseline, &p).unwrap();
            let run = simulate(&cfg, s, &p).unwrap();
            assert_eq!(run.cycles, base.cycles, "{} {s}", cfg.name);
            let st = collect_stats(&run);
            assert_eq!(
                (st.taint_delays, st.nop_issues, st.pending_broadcast_peak),
                (0, 0, 0)
            );
        }
    }
}

#[test]
fn pointer_chase_is_insensitive_to_scheme() {
    // Every load's address comes from a committed-path load that is already
    // bound to commit by the time it matters, so there is nothing to delay.
    for cfg in CoreConfig::presets() {
        let p = gen_workload(WorkloadKind::PointerChase, 2000, 1).unwrap();
        let base = cycles(&cfg, SchemeKind::Baseline, &p);
        for s in SchemeKind::SECURE {
            let c = cycles(&cfg, s, &p);
            assert!(c >= base, "{} {s}: {c} < baseline {base}", cfg.name);
            assert!(
                (c - base) as f64 <= 0.05 * base as f64,
                "{} {s}: {c} vs {base}",
                cfg.name
            );
        }
    }
}

#[test]
fn empty_program_halts_immediately() {
    let p = Program::new(vec![ArchInstr::halt()]);
    for s in SchemeKind::ALL {
        let run = simulate(&CoreConfig::small(), s, &p).unwrap();
        assert_eq!(run.committed, 1);
        assert!(run.observations.is_empty());
        let st = collect_stats(&run);
        assert_eq!(
            (
                st.loads_forwarded,
                st.forwarding_errors,
                st.squashes,
                st.replays
            ),
            (0, 0, 0, 0)
        );
    }
}

#[test]
fn mispredicted_branch_squashes_and_recovers() {
    let r = ArchReg::r;
    let p = Program::new(vec![
        ArchInstr::addi(r(1), ArchReg::ZERO, 1),
        // Not taken; the always-taken predictor gets it wrong.
        ArchInstr::beq(r(1), ArchReg::ZERO, 3),
        ArchInstr::addi(r(2), ArchReg::ZERO, 7),
        ArchInstr::halt(),
        ArchInstr::addi(r(2), ArchReg::ZERO, 9),
        ArchInstr::halt(),
    ]);
    for s in SchemeKind::ALL {
        let run = simulate(&CoreConfig::medium(), s, &p).unwrap();
        assert_eq!(run.final_state.regs[2], 7, "{s}");
        assert_eq!(collect_stats(&run).squashes, 1, "{s}");
    }
}

#[test]
fn shipped_configs_match_presets() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for want in CoreConfig::presets() {
        let got = CoreConfig::from_file(&dir.join(format!("{}.toml", want.name))).unwrap();
        assert_eq!(got, want);
    }
}

#[test]
fn config_toml_round_trips() {
    for c in CoreConfig::presets() {
        assert_eq!(CoreConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
    }
    let c = CoreConfig::from_toml_str("preset = \"large\"\nmem_ports = 2\nname = \"large2\"\n")
        .unwrap();
    assert_eq!((c.width, c.mem_ports, c.name.as_str()), (3, 2, "large2"));
    assert!(CoreConfig::from_toml_str("preset = \"large\"\nwidht = 2\n").is_err());
}
