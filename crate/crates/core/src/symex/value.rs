use std::fmt;
use std::rc::Rc;

use crate::asmparse::{Cond, Op, Reg64};
use crate::semantics;

/// Where a symbol came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Origin {
    Attacker(Reg64),
    Havoc,
}

const HAVOC_BIT: u32 = 1 << 31;

fn origin_bit(o: Origin) -> u32 {
    match o {
        Origin::Attacker(r) => 1 << r.index(),
        Origin::Havoc => HAVOC_BIT,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExprOp {
    Add,
    Sub,
    Mul,
    And,
    Or,
    Xor,
    Shl,
    Shr,
    Sar,
    Rol { width: u8 },
    Ror { width: u8 },
    /// Value read from a symbolic address.
    LoadOf { width: u8 },
    /// Keep the low `bits` bits (zero-extend the rest).
    Trunc { bits: u8 },
    SignExtend { from: u8 },
    /// Status flags produced by `op` at `width` over `[dst, src, prior_flags]`.
    Flags { op: Op, width: u8 },
    /// 1 when the condition holds on the flags argument, else 0.
    CondBit(Cond),
    /// `[flags, if_true, if_false]`
    Select(Cond),
}

#[derive(Debug, PartialEq, Eq)]
pub struct Expr {
    pub op: ExprOp,
    pub args: Vec<SymValue>,
    deps: u32,
    known_mask: u64,
    known_val: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SymValue {
    Concrete(u64),
    Symbol { id: u32, origin: Origin },
    Expr(Rc<Expr>),
}

impl Default for SymValue {
    fn default() -> Self {
        SymValue::Concrete(0)
    }
}

fn low_mask(bits: u32) -> u64 {
    if bits >= 64 {
        u64::MAX
    } else {
        (1u64 << bits) - 1
    }
}

impl SymValue {
    pub fn concrete(&self) -> Option<u64> {
        match self {
            SymValue::Concrete(v) => Some(*v),
            _ => None,
        }
    }

    pub fn is_concrete(&self) -> bool {
        matches!(self, SymValue::Concrete(_))
    }

    /// Bitmask of origins this value depends on (bit i = attacker register
    /// with index i, bit 31 = havoc).
    pub fn dep_mask(&self) -> u32 {
        match self {
            SymValue::Concrete(_) => 0,
            SymValue::Symbol { origin, .. } => origin_bit(*origin),
            SymValue::Expr(e) => e.deps,
        }
    }

    pub fn depends_on(&self, origin: Reg64) -> bool {
        self.dep_mask() & (1 << origin.index()) != 0
    }

    pub fn depends_on_havoc(&self) -> bool {
        self.dep_mask() & HAVOC_BIT != 0
    }

    /// Attacker registers whose initial value flows into this one.
    pub fn attacker_origins(&self) -> Vec<Reg64> {
        let m = self.dep_mask();
        Reg64::GPRS
            .iter()
            .copied()
            .filter(|r| m & (1 << r.index()) != 0)
            .collect()
    }

    /// True when symbol `id` occurs anywhere in the tree.
    pub fn contains_symbol(&self, id: u32) -> bool {
        match self {
            SymValue::Concrete(_) => false,
            SymValue::Symbol { id: s, .. } => *s == id,
            SymValue::Expr(e) => e.args.iter().any(|a| a.contains_symbol(id)),
        }
    }

    pub fn symbol_id(&self) -> Option<u32> {
        match self {
            SymValue::Symbol { id, .. } => Some(*id),
            _ => None,
        }
    }

    fn known(&self) -> (u64, u64) {
        match self {
            SymValue::Concrete(v) => (u64::MAX, *v),
            SymValue::Symbol { .. } => (0, 0),
            SymValue::Expr(e) => (e.known_mask, e.known_val),
        }
    }

    /// Terms of a flattened sum. `a + (b + 8)` gives `[a, b, 8]`.
    pub fn additive_terms(&self) -> Vec<SymValue> {
        let mut out = Vec::new();
        fn walk(v: &SymValue, out: &mut Vec<SymValue>) {
            match v {
                SymValue::Expr(e) if e.op == ExprOp::Add => {
                    for a in &e.args {
                        walk(a, out);
                    }
                }
                _ => out.push(v.clone()),
            }
        }
        walk(self, &mut out);
        out
    }

    /// Evaluate with every symbol replaced through `env`; `load` supplies
    /// values for symbolic-address reads.
    pub fn eval(&self, env: &dyn Fn(u32) -> u64, load: &dyn Fn(u64, u8) -> u64) -> u64 {
        match self {
            SymValue::Concrete(v) => *v,
            SymValue::Symbol { id, .. } => env(*id),
            SymValue::Expr(e) => {
                let a: Vec<u64> = e.args.iter().map(|x| x.eval(env, load)).collect();
                match e.op {
                    ExprOp::LoadOf { width } => load(a[0], width) & semantics::mask(width),
                    op => fold(op, &a),
                }
            }
        }
    }
}

fn shl(a: u64, c: u64) -> u64 {
    if c >= 64 {
        0
    } else {
        a << c
    }
}

fn shr(a: u64, c: u64) -> u64 {
    if c >= 64 {
        0
    } else {
        a >> c
    }
}

/// Concrete meaning of every operator except `LoadOf`.
fn fold(op: ExprOp, a: &[u64]) -> u64 {
    match op {
        ExprOp::Add => a[0].wrapping_add(a[1]),
        ExprOp::Sub => a[0].wrapping_sub(a[1]),
        ExprOp::Mul => a[0].wrapping_mul(a[1]),
        ExprOp::And => a[0] & a[1],
        ExprOp::Or => a[0] | a[1],
        ExprOp::Xor => a[0] ^ a[1],
        ExprOp::Shl => shl(a[0], a[1]),
        ExprOp::Shr => shr(a[0], a[1]),
        ExprOp::Sar => ((a[0] as i64) >> a[1].min(63)) as u64,
        ExprOp::Rol { width } => semantics::alu(Op::Rol, width, a[0], a[1], 0).0.unwrap(),
        ExprOp::Ror { width } => semantics::alu(Op::Ror, width, a[0], a[1], 0).0.unwrap(),
        ExprOp::Trunc { bits } => a[0] & low_mask(bits as u32),
        ExprOp::SignExtend { from } => semantics::sign_extend(a[0], from),
        ExprOp::Flags { op, width } => semantics::alu(op, width, a[0], a[1], a[2]).1,
        ExprOp::CondBit(c) => semantics::cond_holds(c, a[0]) as u64,
        ExprOp::Select(c) => {
            if semantics::cond_holds(c, a[0]) {
                a[1]
            } else {
                a[2]
            }
        }
        ExprOp::LoadOf { .. } => unreachable!("loads are resolved by the caller"),
    }
}

/// Known-bit propagation used to fold partially concrete values, e.g. the
/// low half of `(S & 0xffffffff00000000) | 1`.
fn known_bits(op: ExprOp, args: &[SymValue]) -> (u64, u64) {
    let k: Vec<(u64, u64)> = args.iter().map(|a| a.known()).collect();
    let c = |i: usize| args.get(i).and_then(|a| a.concrete());
    match op {
        ExprOp::And => {
            let zero = (k[0].0 & !k[0].1) | (k[1].0 & !k[1].1);
            let one = (k[0].0 & k[0].1) & (k[1].0 & k[1].1);
            (zero | one, one)
        }
        ExprOp::Or => {
            let one = (k[0].0 & k[0].1) | (k[1].0 & k[1].1);
            let zero = (k[0].0 & !k[0].1) & (k[1].0 & !k[1].1);
            (zero | one, one)
        }
        ExprOp::Xor => {
            let m = k[0].0 & k[1].0;
            (m, (k[0].1 ^ k[1].1) & m)
        }
        ExprOp::Add | ExprOp::Sub | ExprOp::Mul => {
            let low = (k[0].0.trailing_ones()).min(k[1].0.trailing_ones());
            let m = low_mask(low);
            let v = fold(op, &[k[0].1, k[1].1]) & m;
            (m, v)
        }
        ExprOp::Shl => match c(1) {
            Some(n) if n < 64 => ((k[0].0 << n) | low_mask(n as u32), (k[0].1 << n)),
            Some(_) => (u64::MAX, 0),
            None => (0, 0),
        },
        ExprOp::Shr => match c(1) {
            Some(n) if n < 64 => {
                let hi = !(u64::MAX >> n);
                ((k[0].0 >> n) | hi, k[0].1 >> n)
            }
            Some(_) => (u64::MAX, 0),
            None => (0, 0),
        },
        ExprOp::Trunc { bits } => {
            let m = low_mask(bits as u32);
            ((k[0].0 & m) | !m, k[0].1 & m)
        }
        ExprOp::LoadOf { width } => {
            let m = semantics::mask(width);
            (!m, 0)
        }
        ExprOp::CondBit(cc) => {
            let need = cond_reads(cc);
            if k[0].0 & need == need {
                (u64::MAX, semantics::cond_holds(cc, k[0].1) as u64)
            } else {
                (!1, 0)
            }
        }
        ExprOp::Flags { op, width } => flags_known(op, width, &k, args),
        ExprOp::SignExtend { from } => {
            let sb = semantics::sign_bit(from);
            let m = semantics::mask(from);
            if k[0].0 & sb != 0 {
                let hi = if k[0].1 & sb != 0 { !m } else { 0 };
                ((k[0].0 & m) | !m, (k[0].1 & m) | hi)
            } else {
                (k[0].0 & m, k[0].1 & m)
            }
        }
        _ => (0, 0),
    }
}

fn cond_reads(cc: Cond) -> u64 {
    use semantics::{CF, OF, PF, SF, ZF};
    match cc {
        Cond::O | Cond::No => OF,
        Cond::B | Cond::Ae => CF,
        Cond::E | Cond::Ne => ZF,
        Cond::Be | Cond::A => CF | ZF,
        Cond::S | Cond::Ns => SF,
        Cond::P | Cond::Np => PF,
        Cond::L | Cond::Ge => SF | OF,
        Cond::Le | Cond::G => ZF | SF | OF,
    }
}

/// ZF and SF follow from known bits of the result; logic ops also clear CF
/// and OF. Bits outside the status mask pass through from the prior flags.
fn flags_known(op: Op, width: u8, k: &[(u64, u64)], args: &[SymValue]) -> (u64, u64) {
    use semantics::{CF, OF, SF, STATUS_MASK, ZF};
    let (mut mask, mut val) = (k[2].0 & !STATUS_MASK, k[2].1 & !STATUS_MASK);
    let res = match op {
        Op::Add => ExprOp::Add,
        Op::Sub | Op::Cmp => ExprOp::Sub,
        Op::And | Op::Test => ExprOp::And,
        Op::Or => ExprOp::Or,
        Op::Xor => ExprOp::Xor,
        Op::Shl => ExprOp::Shl,
        Op::Shr => ExprOp::Shr,
        _ => return (mask, val),
    };
    let m = semantics::mask(width);
    let (rm, rv) = if matches!(res, ExprOp::Shl | ExprOp::Shr) {
        // A zero or unknown count leaves the flags unknowable here.
        let n = match args[1].concrete().map(|n| n & if width == 8 { 63 } else { 31 }) {
            Some(n) if n != 0 => n,
            _ => return (mask, val),
        };
        let dst = ((k[0].0 & m) | !m, k[0].1 & m);
        if res == ExprOp::Shl {
            ((dst.0 << n) | low_mask(n as u32), dst.1 << n)
        } else {
            ((dst.0 >> n) | !(u64::MAX >> n), dst.1 >> n)
        }
    } else {
        known_bits(res, &args[..2])
    };
    if rm & rv & m != 0 {
        mask |= ZF;
    } else if rm & m == m {
        mask |= ZF;
        val |= if rv & m == 0 { ZF } else { 0 };
    }
    let sb = semantics::sign_bit(width);
    if rm & sb != 0 {
        mask |= SF;
        val |= if rv & sb != 0 { SF } else { 0 };
    }
    if matches!(op, Op::And | Op::Test | Op::Or | Op::Xor) {
        mask |= CF | OF;
    }
    (mask, val)
}

fn commutative(op: ExprOp) -> bool {
    matches!(
        op,
        ExprOp::Add | ExprOp::Mul | ExprOp::And | ExprOp::Or | ExprOp::Xor
    )
}

fn same(a: &SymValue, b: &SymValue) -> bool {
    match (a, b) {
        (SymValue::Expr(x), SymValue::Expr(y)) => Rc::ptr_eq(x, y) || x == y,
        _ => a == b,
    }
}

/// Build `op(args)`, folding and simplifying where possible.
pub fn mk(op: ExprOp, mut args: Vec<SymValue>) -> SymValue {
    if !matches!(op, ExprOp::LoadOf { .. }) {
        if let Some(vals) = args.iter().map(|a| a.concrete()).collect::<Option<Vec<u64>>>() {
            return SymValue::Concrete(fold(op, &vals));
        }
    }
    if commutative(op) && args[0].is_concrete() && !args[1].is_concrete() {
        args.swap(0, 1);
    }
    // After the swap a concrete operand of a commutative op is always args[1].
    match op {
        ExprOp::Sub => {
            if same(&args[0], &args[1]) {
                return SymValue::Concrete(0);
            }
            if let Some(c) = args[1].concrete() {
                return mk(ExprOp::Add, vec![args[0].clone(), SymValue::Concrete(c.wrapping_neg())]);
            }
        }
        ExprOp::Xor if same(&args[0], &args[1]) => return SymValue::Concrete(0),
        ExprOp::And | ExprOp::Or if same(&args[0], &args[1]) => return args[0].clone(),
        _ => {}
    }
    if let Some(c) = args.get(1).and_then(|a| a.concrete()) {
        match (op, c) {
            (ExprOp::Add | ExprOp::Or | ExprOp::Xor | ExprOp::Shl | ExprOp::Shr | ExprOp::Sar, 0) => {
                return args[0].clone()
            }
            (ExprOp::Mul | ExprOp::And, 0) => return SymValue::Concrete(0),
            (ExprOp::Mul, 1) => return args[0].clone(),
            (ExprOp::And, u64::MAX) => return args[0].clone(),
            _ => {}
        }
        if op == ExprOp::Add {
            // (e + c1) + c2 -> e + (c1 + c2)
            if let SymValue::Expr(e) = &args[0] {
                if e.op == ExprOp::Add {
                    if let Some(c1) = e.args[1].concrete() {
                        return mk(
                            ExprOp::Add,
                            vec![e.args[0].clone(), SymValue::Concrete(c1.wrapping_add(c))],
                        );
                    }
                }
            }
        }
    }
    match op {
        ExprOp::Trunc { bits } if bits >= 64 => return args[0].clone(),
        ExprOp::Trunc { bits } => {
            if let SymValue::Expr(e) = &args[0] {
                if let ExprOp::Trunc { bits: inner } = e.op {
                    return mk(ExprOp::Trunc { bits: bits.min(inner) }, vec![e.args[0].clone()]);
                }
                if let ExprOp::LoadOf { width } = e.op {
                    if width as u32 * 8 <= bits as u32 {
                        return args[0].clone();
                    }
                }
            }
        }
        ExprOp::SignExtend { from } if from >= 8 => return args[0].clone(),
        _ => {}
    }
    let deps = args.iter().fold(0, |m, a| m | a.dep_mask());
    let (known_mask, known_val) = known_bits(op, &args);
    if known_mask == u64::MAX && !matches!(op, ExprOp::LoadOf { .. }) {
        return SymValue::Concrete(known_val);
    }
    SymValue::Expr(Rc::new(Expr {
        op,
        args,
        deps,
        known_mask,
        known_val: known_val & known_mask,
    }))
}

pub fn add(a: SymValue, b: SymValue) -> SymValue {
    mk(ExprOp::Add, vec![a, b])
}

pub fn and(a: SymValue, b: SymValue) -> SymValue {
    mk(ExprOp::And, vec![a, b])
}

pub fn or(a: SymValue, b: SymValue) -> SymValue {
    mk(ExprOp::Or, vec![a, b])
}

pub fn trunc(a: SymValue, bits: u32) -> SymValue {
    mk(ExprOp::Trunc { bits: bits as u8 }, vec![a])
}

pub fn c(v: u64) -> SymValue {
    SymValue::Concrete(v)
}

impl fmt::Display for SymValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SymValue::Concrete(v) => write!(f, "{v:#x}"),
            SymValue::Symbol { id, origin: Origin::Attacker(r) } => write!(f, "S{id}<{r}>"),
            SymValue::Symbol { id, origin: Origin::Havoc } => write!(f, "H{id}"),
            SymValue::Expr(e) => {
                let name = match e.op {
                    ExprOp::Add => "add".to_string(),
                    ExprOp::Sub => "sub".into(),
                    ExprOp::Mul => "mul".into(),
                    ExprOp::And => "and".into(),
                    ExprOp::Or => "or".into(),
                    ExprOp::Xor => "xor".into(),
                    ExprOp::Shl => "shl".into(),
                    ExprOp::Shr => "shr".into(),
                    ExprOp::Sar => "sar".into(),
                    ExprOp::Rol { width } => format!("rol{}", width * 8),
                    ExprOp::Ror { width } => format!("ror{}", width * 8),
                    ExprOp::LoadOf { width } => format!("load{}", width * 8),
                    ExprOp::Trunc { bits } => format!("zext{bits}"),
                    ExprOp::SignExtend { from } => format!("sext{}", from * 8),
                    ExprOp::Flags { .. } => "flags".into(),
                    ExprOp::CondBit(c) => format!("set{c:?}").to_lowercase(),
                    ExprOp::Select(c) => format!("cmov{c:?}").to_lowercase(),
                };
                write!(f, "{name}(")?;
                for (i, a) in e.args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym(id: u32, r: Reg64) -> SymValue {
        SymValue::Symbol { id, origin: Origin::Attacker(r) }
    }

    #[test]
    fn folding_and_identities() {
        assert_eq!(add(c(2), c(3)), c(5));
        let s = sym(1, Reg64::Rsi);
        assert_eq!(mk(ExprOp::Xor, vec![s.clone(), s.clone()]), c(0));
        assert_eq!(mk(ExprOp::Sub, vec![s.clone(), s.clone()]), c(0));
        assert_eq!(and(s.clone(), c(0)), c(0));
        assert_eq!(add(add(s.clone(), c(8)), c(0x30)), add(s.clone(), c(0x38)));
    }

    #[test]
    fn known_low_half_folds() {
        let s = sym(1, Reg64::Rdi);
        let rdi = or(and(s, c(0xffff_ffff_0000_0000)), c(7));
        assert!(!rdi.is_concrete());
        assert_eq!(trunc(rdi, 32), c(7));
    }

    #[test]
    fn dependency_queries() {
        let s = sym(1, Reg64::Rsi);
        let v = add(s.clone(), c(8));
        assert!(v.depends_on(Reg64::Rsi));
        assert!(!c(0x38).depends_on(Reg64::Rsi));
        let l = mk(ExprOp::LoadOf { width: 8 }, vec![add(s, c(0x38))]);
        assert!(l.depends_on(Reg64::Rsi));
        assert!(!l.depends_on(Reg64::Rdi));
        assert_eq!(l.attacker_origins(), vec![Reg64::Rsi]);
    }

    #[test]
    fn eval_matches_fold() {
        let s = sym(4, Reg64::Rbx);
        let v = add(mk(ExprOp::Mul, vec![s, c(8)]), c(0x258));
        assert_eq!(v.eval(&|_| 3, &|_, _| 0), 0x258 + 24);
        assert_eq!(v.additive_terms().len(), 2);
    }
}
