//! Type-I (attacker registers live at an indirect branch) and Type-II
//! (load followed by a dependent memory access) gadget detection.

mod report;
mod type1;
mod type2;

pub use report::{type1_row, type1_table, type2_row, type2_table, GadgetReport, ReportFormat};
pub use type1::{scan_type1, score_type1, Category, Type1Hit, Type1Scan, TypeIGadget};
pub use type2::{rank_type2, scan_type2, score_type2, ScanConfig, TypeIIGadget};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asmparse::{parse_listing, Reg64};
    use crate::symex::{EntryModel, ExplorationConfig, Mode};

    const DLFREE_EXCERPT: &str = "0000000000005c10 <dlfree>:\n5c10: push %r15\n607f: mov 0x38(%rsi),%edi\n6082: mov %rdi,%rcx\n6085: lea (%rbx,%rdi,8),%rdi\n6089: cmp 0x258(%rdi),%rsi\n6090: retq\n";

    #[test]
    fn dlfree_excerpt_triple() {
        let l = parse_listing(DLFREE_EXCERPT).unwrap();
        let g = scan_type2(&l, &ScanConfig::default()).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].start, "dlfree:0x46f");
        assert_eq!((g[0].reg_a, g[0].reg_b, g[0].reg_c), (Reg64::Rsi, Reg64::Rdi, Some(Reg64::Rbx)));
        assert_eq!(g[0].length, 4);
        assert_eq!(
            g[0].instructions,
            vec!["mov 0x38(%rsi),%edi", "mov %rdi,%rcx", "lea (%rbx,%rdi,8),%rdi", "cmp 0x258(%rdi),%rsi"]
        );
    }

    #[test]
    fn window_bound() {
        let l = parse_listing(DLFREE_EXCERPT).unwrap();
        let cfg = ScanConfig { window: 1, ..Default::default() };
        assert!(scan_type2(&l, &cfg).unwrap().is_empty());
        let cfg = ScanConfig { window: 3, ..Default::default() };
        assert_eq!(scan_type2(&l, &cfg).unwrap().len(), 1);
    }

    #[test]
    fn no_second_reference() {
        let l = parse_listing("10: mov 0x8(%rsi),%rax\n14: add $0x1,%rax\n18: shl $0x3,%rax\n1c: xor %rbx,%rax\n").unwrap();
        assert!(scan_type2(&l, &ScanConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn overwritten_regc_drops_to_pair() {
        let l = parse_listing("10: mov 0x38(%rsi),%edi\n13: mov $0x5000,%ebx\n18: lea (%rbx,%rdi,8),%rdi\n1c: cmp 0x258(%rdi),%rsi\n").unwrap();
        let g = scan_type2(&l, &ScanConfig::default()).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].reg_c, None);
        let strict = ScanConfig { require_regc: true, ..Default::default() };
        assert!(scan_type2(&l, &strict).unwrap().is_empty());
    }

    #[test]
    fn type2_ranking() {
        let mk = |len, c: Option<Reg64>, a| TypeIIGadget {
            start: String::new(),
            address: a,
            instructions: vec![],
            reg_a: Reg64::Rsi,
            reg_b: Reg64::Rdi,
            reg_c: c,
            length: len,
        };
        let mut v = vec![mk(9, Some(Reg64::Rbx), 1), mk(2, None, 2), mk(4, Some(Reg64::Rbx), 3)];
        rank_type2(&mut v);
        let order: Vec<u64> = v.iter().map(|g| g.address).collect();
        assert_eq!(order, vec![3, 1, 2]);
    }

    #[test]
    fn sanitized_prologue_is_clean() {
        let text = "0000000000000010 <enclave_entry>:\n10: xor %rbx,%rbx\n13: xor %rcx,%rcx\n16: xor %rdx,%rdx\n19: xor %rdi,%rdi\n1c: xor %rsi,%rsi\n1f: xor %rbp,%rbp\n22: xor %r8,%r8\n25: xor %r9,%r9\n28: xor %r10,%r10\n2b: xor %r11,%r11\n2e: xor %r12,%r12\n31: xor %r13,%r13\n34: xor %r14,%r14\n37: xor %r15,%r15\n3a: retq\n";
        let l = parse_listing(text).unwrap();
        let r = scan_type1(&l, &EntryModel::default(), Mode::ECall, None, &ExplorationConfig::default()).unwrap();
        assert!(r.gadgets.is_empty());
    }

    #[test]
    fn report_rows_and_round_trip() {
        let g = TypeIGadget {
            category: Category::Return,
            end: "get_enclave_state:0xc".into(),
            address: 0x3627,
            controlled_registers: vec![Reg64::Rbx, Reg64::Rdi],
            mode: Mode::ECall,
            path_length: 40,
        };
        assert_eq!(type1_row(&g), "return | get_enclave_state:0xc | rbx, rdi");
        assert_eq!(score_type1(&g), 2);
        let empty = GadgetReport::new("x", vec![], vec![]);
        let t = empty.emit(ReportFormat::Text);
        assert!(t.contains("category | end address | controlled registers\n"));
        let rep = GadgetReport::new("x", vec![g], vec![]);
        let j = rep.emit(ReportFormat::Structured);
        let back = GadgetReport::from_json(&j).unwrap();
        assert_eq!(back.emit(ReportFormat::Structured), j);
    }
}
