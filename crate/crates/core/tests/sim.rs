//! Enclave entry, exit and AEX behaviour of the simulator.

use btilab::asmparse::Reg64;
use btilab::corpus;
use btilab::uarch::{gprsgx, Sim, SimError, Stop, UarchConfig};

fn victim() -> Sim {
    Sim::new(&corpus::listing(corpus::SDK_VICTIM), UarchConfig::default()).unwrap()
}

#[test]
fn reserved_bit_faults_at_the_state_load() {
    let mut s = victim();
    s.set_reg(Reg64::Rdi, 0);
    s.set_reserved(0x216ea8, true);
    s.eenter().unwrap();
    assert_eq!(s.run(100_000), Stop::Fault { addr: 0x216ea8, rip: 0x3625 });
    assert_eq!(s.cssa(), 1);
    // The faulting rip lands in the first GPRSGX frame.
    let g = s.layout().gprsgx(0);
    assert_eq!(s.mem.read(g + gprsgx::RIP, 8), 0x3625);
    assert_eq!(s.mem.read(g + gprsgx::EXITINFO, 4), 0x8000_030e);
}

#[test]
fn aex_spills_registers_and_eresume_restores_them() {
    let mut s = victim();
    let busy = s.program().resolve_symbol("busy_loop").unwrap();
    s.set_reg(Reg64::Rdi, 0);
    s.set_reg(Reg64::Rsi, 0xdead_beef);
    s.interrupt_at(busy);
    s.eenter().unwrap();
    assert_eq!(s.run(100_000), Stop::Interrupted { rip: busy });
    let g = s.layout().gprsgx(0);
    assert_eq!(s.mem.read(g + 8 * gprsgx_index(Reg64::Rbx), 8), 0xdead_beef);
    assert_eq!(s.mem.read(g + gprsgx::RIP, 8), busy);
    // The untrusted side sees the AEX exit state, not the enclave's.
    assert_eq!(s.reg(Reg64::Rax), 3);
    assert_ne!(s.reg(Reg64::Rbx), 0xdead_beef);

    s.eresume().unwrap();
    assert_eq!(s.cssa(), 0);
    assert_eq!(s.reg(Reg64::Rbx), 0xdead_beef);
    assert_eq!(s.regs().rip, busy);
}

#[test]
fn nested_entry_uses_the_next_frame_until_none_are_left() {
    let mut s = victim();
    let busy = s.program().resolve_symbol("busy_loop").unwrap();
    s.set_reg(Reg64::Rdi, 0);
    s.set_reg(Reg64::Rsi, 0x1000_0000);
    s.interrupt_at(busy);
    s.eenter().unwrap();
    assert!(matches!(s.run(100_000), Stop::Interrupted { .. }));
    // Second entry: rax carries CSSA = 1, the runtime picks it up.
    s.set_reg(Reg64::Rdi, 0);
    s.set_reg(Reg64::Rsi, 0x1000_0000);
    s.interrupt_at(busy);
    s.eenter().unwrap();
    assert_eq!(s.reg(Reg64::Rax), 1);
    assert!(matches!(s.run(100_000), Stop::Interrupted { .. }));
    assert_eq!(s.cssa(), 2);
    assert!(matches!(s.eenter(), Err(SimError::NoFreeSsa(2))));
}

#[test]
fn eresume_without_a_saved_frame_fails() {
    let mut s = victim();
    assert!(matches!(s.eresume(), Err(SimError::NoSavedFrame)));
}

fn gprsgx_index(r: Reg64) -> u64 {
    btilab::uarch::GPRSGX_REGS.iter().position(|x| *x == r).unwrap() as u64
}
