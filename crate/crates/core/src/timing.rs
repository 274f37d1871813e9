//! Structural cost model for the scheme logic.
//!
//! Each scheme's taint logic is built as an explicit network of comparators
//! and muxes. Depth is the number of units on the longest input-to-output
//! path; counts are read off the network. Units are abstract levels, not
//! picoseconds.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::schemes::SchemeKind;

/// Bits in a taint tag (a load's ROB index).
pub const TAG_BITS: u64 = 7;
/// Bits naming a physical register.
pub const PREG_BITS: u64 = 8;
/// Branch checkpoints that snapshot the rename-stage taint file.
pub const RENAME_CHECKPOINTS: u64 = 16;
pub const ARCH_REGS: u64 = 32;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogicCost {
    pub depth: u64,
    pub comparators: u64,
    pub muxes: u64,
    pub storage_bits: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnitKind {
    Input,
    Comparator,
    Mux,
}

#[derive(Clone, Debug)]
pub struct Unit {
    pub kind: UnitKind,
    pub inputs: Vec<usize>,
    /// Which uop block (or issue port) the unit belongs to.
    pub block: usize,
}

/// A combinational DAG. Units are appended in topological order.
#[derive(Clone, Debug, Default)]
pub struct Network {
    units: Vec<Unit>,
}

impl Network {
    pub fn input(&mut self, block: usize) -> usize {
        self.push(UnitKind::Input, vec![], block)
    }

    pub fn comparator(&mut self, inputs: Vec<usize>, block: usize) -> usize {
        self.push(UnitKind::Comparator, inputs, block)
    }

    pub fn mux(&mut self, inputs: Vec<usize>, block: usize) -> usize {
        self.push(UnitKind::Mux, inputs, block)
    }

    fn push(&mut self, kind: UnitKind, inputs: Vec<usize>, block: usize) -> usize {
        assert!(
            inputs.iter().all(|&i| i < self.units.len()),
            "network must be built in topological order"
        );
        self.units.push(Unit {
            kind,
            inputs,
            block,
        });
        self.units.len() - 1
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    pub fn count(&self, kind: UnitKind) -> u64 {
        self.units.iter().filter(|u| u.kind == kind).count() as u64
    }

    fn levels(&self) -> Vec<u64> {
        let mut level = vec![0u64; self.units.len()];
        for (i, u) in self.units.iter().enumerate() {
            let below = u.inputs.iter().map(|&j| level[j]).max().unwrap_or(0);
            level[i] = below + u64::from(u.kind != UnitKind::Input);
        }
        level
    }

    pub fn depth(&self) -> u64 {
        self.levels().into_iter().max().unwrap_or(0)
    }

    /// Units on one longest path, from input side to output.
    pub fn critical_path(&self) -> Vec<usize> {
        let level = self.levels();
        let Some(mut at) = (0..self.units.len()).max_by_key(|&i| (level[i], std::cmp::Reverse(i)))
        else {
            return Vec::new();
        };
        let mut path = vec![at];
        while let Some(&next) = self.units[at].inputs.iter().max_by_key(|&&j| level[j]) {
            if level[next] == 0 && self.units[next].kind == UnitKind::Input {
                break;
            }
            at = next;
            path.push(at);
        }
        path.reverse();
        path
    }

    fn cost(&self, storage_bits: u64) -> LogicCost {
        LogicCost {
            depth: self.depth(),
            comparators: self.count(UnitKind::Comparator),
            muxes: self.count(UnitKind::Mux),
            storage_bits,
        }
    }
}

/// Rename-stage taint computation for a group of `width` uops.
///
/// Every source reads its root from the taint file. For uop `i > 0`, each
/// source also compares its register against the destinations of the older
/// uops in the group and a forwarding mux picks the youngest matching one's
/// result. The uop's own root is then the youngest of its sources: age
/// comparators followed by a select mux. A chain of dependent uops therefore
/// passes through every block in turn.
pub fn stt_rename_network(width: usize, srcs_per_uop: usize) -> Network {
    assert!(width >= 1 && srcs_per_uop >= 1);
    let mut n = Network::default();
    let mut dst_roots: Vec<usize> = Vec::with_capacity(width);
    let mut dst_names: Vec<usize> = Vec::with_capacity(width);
    for i in 0..width {
        let mut roots = Vec::with_capacity(srcs_per_uop);
        for _ in 0..srcs_per_uop {
            let name = n.input(i);
            let file = n.input(i);
            if i == 0 {
                roots.push(file);
                continue;
            }
            let mut candidates = vec![file];
            for j in 0..i {
                let hit = n.comparator(vec![name, dst_names[j]], i);
                candidates.push(hit);
                candidates.push(dst_roots[j]);
            }
            roots.push(n.mux(candidates, i));
        }
        let root = if srcs_per_uop == 1 {
            n.mux(roots, i)
        } else {
            let mut ages = Vec::with_capacity(srcs_per_uop - 1);
            for w in roots.windows(2) {
                ages.push(n.comparator(w.to_vec(), i));
            }
            n.mux(roots.into_iter().chain(ages).collect(), i)
        };
        dst_roots.push(root);
        dst_names.push(n.input(i));
    }
    n
}

/// Issue-stage taint computation, one independent unit per issue port.
///
/// Each port reads its sources' roots from the taint unit, picks the
/// youngest, compares it against the visibility point and either passes the
/// uop through or turns it into a nop.
pub fn stt_issue_network(width: usize, srcs_per_uop: usize) -> Network {
    assert!(width >= 1 && srcs_per_uop >= 1);
    let mut n = Network::default();
    for port in 0..width {
        let roots: Vec<usize> = (0..srcs_per_uop).map(|_| n.input(port)).collect();
        let mut sel = roots.clone();
        for w in roots.windows(2) {
            sel.push(n.comparator(w.to_vec(), port));
        }
        let youngest = n.mux(sel, port);
        let vis = n.input(port);
        let live = n.comparator(vec![youngest, vis], port);
        let uop = n.input(port);
        n.mux(vec![uop, live], port);
    }
    n
}

/// NDA's broadcast side: per memory port, a comparator checks the oldest
/// pending load against the visibility point and a selector drives the
/// broadcast port. It runs beside writeback, so no level lands on an
/// existing path; the network is kept for unit counts only.
pub fn nda_network(mem_ports: usize) -> Network {
    let mut n = Network::default();
    for port in 0..mem_ports {
        let head = n.input(port);
        let vis = n.input(port);
        let _ = n.comparator(vec![head, vis], port);
        let _ = n.mux(vec![head], port);
    }
    n
}

pub fn cost_stt_rename(width: usize, srcs_per_uop: usize) -> LogicCost {
    let storage = ARCH_REGS * TAG_BITS * (1 + RENAME_CHECKPOINTS);
    stt_rename_network(width, srcs_per_uop).cost(storage)
}

pub fn cost_stt_issue(width: usize, phys_regs: usize) -> LogicCost {
    stt_issue_network(width, 2).cost(phys_regs as u64 * TAG_BITS)
}

/// `lq_entries` sizes the pending-broadcast queue: each entry holds a
/// destination register, a tag and a valid bit.
pub fn cost_nda(width: usize, mem_ports: usize, lq_entries: usize) -> LogicCost {
    let _ = width;
    let c = nda_network(mem_ports).cost(lq_entries as u64 * (PREG_BITS + TAG_BITS + 1));
    LogicCost { depth: 0, ..c }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepRow {
    pub width: usize,
    pub scheme: SchemeKind,
    pub depth: u64,
    pub comparators: u64,
    pub muxes: u64,
    pub storage_bits: u64,
}

/// Core sizing used by the sweep for a given width.
fn sweep_core(width: usize) -> (usize, usize, usize) {
    let rob = 32 * width;
    let phys = ARCH_REGS as usize + rob + 8;
    let mem_ports = if width >= 4 { 2 } else { 1 };
    (phys, mem_ports, rob / 2)
}

/// Costs of the three secure schemes over widths `1..=max_width`.
pub fn timing_sweep(max_width: usize) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    for width in 1..=max_width {
        let (phys, ports, lq) = sweep_core(width);
        for (scheme, c) in [
            (SchemeKind::SttRename, cost_stt_rename(width, 2)),
            (SchemeKind::SttIssue, cost_stt_issue(width, phys)),
            (SchemeKind::Nda, cost_nda(width, ports, lq)),
        ] {
            rows.push(SweepRow {
                width,
                scheme,
                depth: c.depth,
                comparators: c.comparators,
                muxes: c.muxes,
                storage_bits: c.storage_bits,
            });
        }
    }
    rows
}

pub fn write_sweep_csv(rows: &[SweepRow], out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rename_single_uop_has_no_forwarding() {
        let n = stt_rename_network(1, 2);
        assert_eq!(n.count(UnitKind::Mux), 1);
        assert_eq!(n.count(UnitKind::Comparator), 1);
    }

    #[test]
    fn three_wide_path_crosses_every_block() {
        let n = stt_rename_network(3, 2);
        let blocks: Vec<usize> = n
            .critical_path()
            .iter()
            .map(|&u| n.units()[u].block)
            .collect();
        for b in 0..3 {
            assert!(blocks.contains(&b), "{blocks:?}");
        }
        assert!(blocks.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn rename_depth_has_constant_increment() {
        let d: Vec<i64> = (1..=8)
            .map(|w| cost_stt_rename(w, 2).depth as i64)
            .collect();
        let step = d[1] - d[0];
        assert!(step > 0);
        assert!(d.windows(2).all(|w| w[1] - w[0] == step), "{d:?}");
    }

    #[test]
    fn rename_counts_follow_structure() {
        // Independent count: per source of uop i, one dependency comparator
        // per older uop; one forwarding mux per source of every uop past the
        // first; age comparators and a select per uop.
        for w in 1..=8u64 {
            for s in 1..=3u64 {
                let c = cost_stt_rename(w as usize, s as usize);
                assert_eq!(c.comparators, s * w * (w - 1) / 2 + (s - 1) * w);
                let fwd = if w > 1 { s * (w - 1) } else { 0 };
                assert_eq!(c.muxes, fwd + w);
            }
        }
    }

    #[test]
    fn issue_is_width_independent() {
        assert_eq!(cost_stt_issue(1, 64).depth, cost_stt_issue(8, 64).depth);
        assert_eq!(
            cost_stt_issue(4, 64).comparators,
            4 * cost_stt_issue(1, 64).comparators
        );
        assert_eq!(
            cost_stt_issue(2, 128).storage_bits,
            4 * cost_stt_issue(2, 32).storage_bits
        );
    }

    #[test]
    fn nda_adds_no_depth() {
        for w in 1..=8 {
            assert_eq!(cost_nda(w, 1, 16).depth, 0);
        }
        assert_eq!(cost_nda(4, 2, 16).muxes, 2);
        let s: Vec<u64> = (1..=4)
            .map(|k| cost_nda(2, 1, 8 * k).storage_bits)
            .collect();
        assert!(s.windows(2).all(|w| w[1] - w[0] == s[0]));
    }

    #[test]
    fn depth_never_exceeds_units() {
        for w in 1..=8 {
            for c in [
                cost_stt_rename(w, 2),
                cost_stt_issue(w, 64),
                cost_nda(w, 2, 32),
            ] {
                assert!(c.depth <= c.comparators + c.muxes);
            }
        }
    }

    #[test]
    fn sweep_csv_header() {
        let mut buf = Vec::new();
        write_sweep_csv(&timing_sweep(2), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("width,scheme,depth,comparators,muxes,storage_bits\n"));
        assert_eq!(text.lines().count(), 1 + 2 * 3);
        assert!(text.contains("\n1,stt-rename,"));
    }
}
