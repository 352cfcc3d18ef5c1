//! Concrete x86-64 integer semantics shared by the symbolic engine (for
//! constant folding) and the simulator.

use crate::asmparse::{Cond, Op};

pub const CF: u64 = 1 << 0;
pub const PF: u64 = 1 << 2;
pub const ZF: u64 = 1 << 6;
pub const SF: u64 = 1 << 7;
pub const OF: u64 = 1 << 11;
pub const STATUS_MASK: u64 = CF | PF | ZF | SF | OF;

pub fn mask(width: u8) -> u64 {
    if width >= 8 {
        u64::MAX
    } else {
        (1u64 << (width as u32 * 8)) - 1
    }
}

pub fn sign_bit(width: u8) -> u64 {
    1u64 << (width as u32 * 8 - 1)
}

pub fn sign_extend(v: u64, from: u8) -> u64 {
    if from >= 8 {
        return v;
    }
    let bits = from as u32 * 8;
    (((v << (64 - bits)) as i64) >> (64 - bits)) as u64
}

fn szp(r: u64, width: u8) -> u64 {
    let r = r & mask(width);
    let mut f = 0;
    if r == 0 {
        f |= ZF;
    }
    if r & sign_bit(width) != 0 {
        f |= SF;
    }
    if (r as u8).count_ones() % 2 == 0 {
        f |= PF;
    }
    f
}

fn add_flags(a: u64, b: u64, carry: u64, width: u8) -> (u64, u64) {
    let m = mask(width);
    let (a, b) = (a & m, b & m);
    let wide = a as u128 + b as u128 + carry as u128;
    let r = (wide as u64) & m;
    let mut f = szp(r, width);
    if wide > m as u128 {
        f |= CF;
    }
    let sb = sign_bit(width);
    if (a & sb) == (b & sb) && (r & sb) != (a & sb) {
        f |= OF;
    }
    (r, f)
}

fn sub_flags(a: u64, b: u64, borrow: u64, width: u8) -> (u64, u64) {
    let m = mask(width);
    let (a, b) = (a & m, b & m);
    let r = a.wrapping_sub(b).wrapping_sub(borrow) & m;
    let mut f = szp(r, width);
    if (b as u128 + borrow as u128) > a as u128 {
        f |= CF;
    }
    let sb = sign_bit(width);
    if (a & sb) != (b & sb) && (r & sb) != (a & sb) {
        f |= OF;
    }
    (r, f)
}

/// Evaluate a two-input (or one-input) integer operation.
///
/// Returns the result (None for compare/test, which only set flags) and the
/// new status flags. `dst` is the destination's current value and `src` the
/// source (shift count for shifts, ignored for unary operations).
pub fn alu(op: Op, width: u8, dst: u64, src: u64, flags: u64) -> (Option<u64>, u64) {
    let m = mask(width);
    let keep = flags & !STATUS_MASK;
    match op {
        Op::Add => {
            let (r, f) = add_flags(dst, src, 0, width);
            (Some(r), keep | f)
        }
        Op::Adc => {
            let (r, f) = add_flags(dst, src, flags & CF, width);
            (Some(r), keep | f)
        }
        Op::Sub => {
            let (r, f) = sub_flags(dst, src, 0, width);
            (Some(r), keep | f)
        }
        Op::Sbb => {
            let (r, f) = sub_flags(dst, src, flags & CF, width);
            (Some(r), keep | f)
        }
        Op::Cmp => {
            let (_, f) = sub_flags(dst, src, 0, width);
            (None, keep | f)
        }
        Op::And | Op::Or | Op::Xor | Op::Test => {
            let r = match op {
                Op::And | Op::Test => dst & src,
                Op::Or => dst | src,
                _ => dst ^ src,
            } & m;
            let f = keep | szp(r, width);
            if op == Op::Test {
                (None, f)
            } else {
                (Some(r), f)
            }
        }
        Op::Imul => {
            let a = sign_extend(dst & m, width) as i64 as i128;
            let b = sign_extend(src & m, width) as i64 as i128;
            let wide = a * b;
            let r = (wide as u64) & m;
            let mut f = keep | szp(r, width);
            if sign_extend(r, width) as i64 as i128 != wide {
                f |= CF | OF;
            }
            (Some(r), f)
        }
        Op::Neg => {
            let (r, mut f) = sub_flags(0, dst, 0, width);
            f &= !CF;
            if dst & m != 0 {
                f |= CF;
            }
            (Some(r), keep | f)
        }
        Op::Not => (Some(!dst & m), flags),
        Op::Inc => {
            let (r, f) = add_flags(dst, 1, 0, width);
            (Some(r), keep | (flags & CF) | (f & !CF))
        }
        Op::Dec => {
            let (r, f) = sub_flags(dst, 1, 0, width);
            (Some(r), keep | (flags & CF) | (f & !CF))
        }
        Op::Shl | Op::Shr | Op::Sar | Op::Rol | Op::Ror => {
            let bits = width as u32 * 8;
            let count = (src & if width == 8 { 63 } else { 31 }) as u32;
            let v = dst & m;
            if count == 0 {
                return (Some(v), flags);
            }
            let r = match op {
                Op::Shl => {
                    if count >= bits {
                        0
                    } else {
                        (v << count) & m
                    }
                }
                Op::Shr => {
                    if count >= bits {
                        0
                    } else {
                        v >> count
                    }
                }
                Op::Sar => {
                    let s = sign_extend(v, width) as i64;
                    ((s >> count.min(63)) as u64) & m
                }
                Op::Rol => {
                    let c = count % bits;
                    if c == 0 {
                        v
                    } else {
                        ((v << c) | (v >> (bits - c))) & m
                    }
                }
                _ => {
                    let c = count % bits;
                    if c == 0 {
                        v
                    } else {
                        ((v >> c) | (v << (bits - c))) & m
                    }
                }
            };
            let mut f = match op {
                Op::Rol | Op::Ror => flags & !(CF | OF),
                _ => keep | szp(r, width),
            };
            let cf = match op {
                Op::Shl => count <= bits && (v >> (bits - count)) & 1 == 1,
                Op::Shr => count <= bits && (v >> (count - 1)) & 1 == 1,
                Op::Sar => (sign_extend(v, width) as i64 >> (count - 1).min(63)) & 1 == 1,
                Op::Rol => r & 1 == 1,
                _ => r & sign_bit(width) != 0,
            };
            if cf {
                f |= CF;
            }
            (Some(r), f)
        }
        _ => (Some(src & m), flags),
    }
}

pub fn cond_holds(cond: Cond, flags: u64) -> bool {
    let cf = flags & CF != 0;
    let zf = flags & ZF != 0;
    let sf = flags & SF != 0;
    let of = flags & OF != 0;
    let pf = flags & PF != 0;
    match cond {
        Cond::O => of,
        Cond::No => !of,
        Cond::B => cf,
        Cond::Ae => !cf,
        Cond::E => zf,
        Cond::Ne => !zf,
        Cond::Be => cf || zf,
        Cond::A => !cf && !zf,
        Cond::S => sf,
        Cond::Ns => !sf,
        Cond::P => pf,
        Cond::Np => !pf,
        Cond::L => sf != of,
        Cond::Ge => sf == of,
        Cond::Le => zf || sf != of,
        Cond::G => !zf && sf == of,
    }
}
