//! Solver-free symbolic execution from the enclave entry point.
//!
//! Attacker-controllable registers start as fresh symbols; everything else is
//! concrete. Branches on symbolic flags fork both ways without feasibility
//! checks, and rsp stays concrete so returns can be followed exactly.

mod config;
mod engine;
mod exec;
mod state;
mod value;

pub use config::{ConfigError, EntryModel, ExplorationConfig, SymexConfigFile};
pub use engine::{explore, ExploreSummary, OnBranch, Visitor};
pub use exec::{cond_value, sym_alu, DeadEnd, Executor, PathEnd, Step, SymexError};
pub use state::{MachineState, MemByte, MemoryImage, Mode, TrailEvent};
pub use value::{add, and, c, mk, or, trunc, Expr, ExprOp, Origin, SymValue};

/// Shorthand for [`SymValue::depends_on`].
pub fn depends_on(v: &SymValue, origin: crate::asmparse::Reg64) -> bool {
    v.depends_on(origin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asmparse::{parse_listing, Reg64};

    fn first_state(text: &str) -> (crate::asmparse::Listing, EntryModel, ExplorationConfig) {
        (parse_listing(text).unwrap(), EntryModel::default(), ExplorationConfig::default())
    }

    fn run_one(text: &str) -> MachineState {
        let (l, em, cfg) = first_state(text);
        let ex = Executor::new(&l, &em, &cfg).unwrap();
        let mut s = ex.init_state(Mode::ECall, None).unwrap();
        let n = l.instructions.len() - 1;
        for _ in 0..n {
            match ex.step(s) {
                Step::Next(mut v, _) => s = v.remove(0),
                Step::End(..) => panic!("path ended early"),
            }
        }
        s
    }

    #[test]
    fn self_xor_clears() {
        let s = run_one("0000000000000010 <enclave_entry>:\n10: xor %rax,%rax\n13: xor %rbx,%rbx\n16: retq\n");
        assert_eq!(s.reg(Reg64::Rax), &c(0));
        assert_eq!(s.reg(Reg64::Rbx), &c(0));
    }

    #[test]
    fn load_through_concrete_pointer_zero_extends() {
        let s = run_one(
            ".data 0x5000 \"44332211ffffffff\"\n0000000000000010 <enclave_entry>:\n10: mov $0x5000,%rcx\n17: mov (%rcx),%eax\n19: retq\n",
        );
        assert_eq!(s.reg(Reg64::Rax), &c(0x11223344));
    }

    #[test]
    fn lea_scaled_depends_on_index() {
        let s = run_one("0000000000000010 <enclave_entry>:\n10: lea (%rbx,%rdi,8),%rdi\n14: retq\n");
        let rdi = s.reg(Reg64::Rdi);
        assert!(rdi.depends_on(Reg64::Rdi));
        assert!(rdi.depends_on(Reg64::Rbx));
        assert!(!rdi.depends_on(Reg64::Rsi));
    }

    #[test]
    fn selector_low_half_is_pinned() {
        let (l, em, cfg) = first_state("0000000000000010 <enclave_entry>:\n10: retq\n");
        let ex = Executor::new(&l, &em, &cfg).unwrap();
        let s = ex.init_state(Mode::ECall, None).unwrap();
        let edi = s.read_reg(crate::asmparse::Register::from_token("edi").unwrap());
        assert_eq!(edi, c(em.ecall_selector));
        assert!(s.reg(Reg64::Rdi).depends_on(Reg64::Rdi));
        assert!(s.reg(Reg64::R8).depends_on(Reg64::R8));
        assert_eq!(s.reg(Reg64::Rax), &c(0));
    }

    #[test]
    fn nop_sled_visits_once_without_symbols() {
        let mut em = EntryModel::default();
        em.attacker_registers.clear();
        let l = parse_listing("0000000000000010 <enclave_entry>:\n10: nop\n11: nop\n12: nop\n13: retq\n").unwrap();
        let mut hits = Vec::new();
        let sum = explore(&l, &em, Mode::ECall, None, &ExplorationConfig::default(), &mut OnBranch(|s: &MachineState, i: &crate::asmparse::Instruction| {
            hits.push((i.address, s.live_registers(u32::MAX)));
        }))
        .unwrap();
        assert_eq!(hits, vec![(0x13, vec![])]);
        assert_eq!(sum.returned, 1);
    }

    #[test]
    fn concrete_loop_runs_trip_count() {
        let text = "0000000000000010 <enclave_entry>:\n10: mov $0x3,%ecx\n15: dec %ecx\n17: jne 15\n19: retq\n";
        let l = parse_listing(text).unwrap();
        let mut steps = Vec::new();
        let sum = explore(&l, &EntryModel::default(), Mode::ECall, None, &ExplorationConfig::default(), &mut OnBranch(|s: &MachineState, _: &crate::asmparse::Instruction| steps.push(s.steps)))
            .unwrap();
        assert_eq!(sum.states, 1);
        assert_eq!(steps, vec![1 + 3 * 2]);
    }

    #[test]
    fn symbolic_branch_forks_and_loop_bound_prunes() {
        let text = "0000000000000010 <enclave_entry>:\n10: dec %r8\n13: jne 10\n15: retq\n";
        let l = parse_listing(text).unwrap();
        let cfg = ExplorationConfig { loop_bound: 3, ..Default::default() };
        let sum = explore(&l, &EntryModel::default(), Mode::ECall, None, &cfg, &mut ()).unwrap();
        assert_eq!(sum.returned, 4);
        assert_eq!(sum.pruned, 1);
    }

    #[test]
    fn symbolic_rsp_dead_ends() {
        let l = parse_listing("0000000000000010 <enclave_entry>:\n10: mov %rbx,%rsp\n13: retq\n").unwrap();
        let sum = explore(&l, &EntryModel::default(), Mode::ECall, None, &ExplorationConfig::default(), &mut ()).unwrap();
        assert!(sum.dead_end_sites.contains(&DeadEnd::SymbolicRsp));
    }

    #[test]
    fn config_from_toml() {
        let f = SymexConfigFile::from_toml("[entry]\necall-selector = 1\n[explore]\nloop-bound = 4\n").unwrap();
        assert_eq!(f.entry.ecall_selector, 1);
        assert_eq!(f.explore.loop_bound, 4);
        assert_eq!(f.explore.max_steps, 50_000);
        assert!(SymexConfigFile::from_toml("[explore]\nloop-bound = 0\n").is_err());
    }
}
