use std::collections::{BTreeMap, HashSet};

use thiserror::Error;

use super::instr::{Cond, InstrClass, Instruction, Op};
use super::listing::{Directives, Listing};
use super::operand::{MemOperand, Operand, Segment};
use super::register::{Register, Width};

/// Largest representable virtual address (48-bit canonical space).
pub const MAX_ADDRESS: u64 = (1 << 48) - 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: duplicate instruction address {addr:#x}")]
    DuplicateAddress { line: usize, addr: u64 },
    #[error("line {line}: address {value:#x} exceeds the 48-bit virtual address space")]
    AddressTooLarge { line: usize, value: u64 },
    #[error("line {line}: unknown register `%{token}`")]
    UnknownRegister { line: usize, token: String },
    #[error("symbol `{name}` at {addr:#x} has no instruction")]
    SymbolWithoutInstruction { name: String, addr: u64 },
}

impl ParseError {
    pub fn line(&self) -> Option<usize> {
        match self {
            ParseError::Malformed { line, .. }
            | ParseError::DuplicateAddress { line, .. }
            | ParseError::AddressTooLarge { line, .. }
            | ParseError::UnknownRegister { line, .. } => Some(*line),
            ParseError::SymbolWithoutInstruction { .. } => None,
        }
    }
}

const PREFIXES: &[&str] = &[
    "rep", "repz", "repe", "repnz", "repne", "lock", "bnd", "notrack", "data16", "cs", "ds",
];

fn malformed(line: usize, msg: impl Into<String>) -> ParseError {
    ParseError::Malformed {
        line,
        msg: msg.into(),
    }
}

fn is_hex_byte(tok: &str) -> bool {
    tok.len() == 2 && tok.chars().all(|c| c.is_ascii_hexdigit())
}

fn check_addr(line: usize, v: u64) -> Result<u64, ParseError> {
    if v > MAX_ADDRESS {
        Err(ParseError::AddressTooLarge { line, value: v })
    } else {
        Ok(v)
    }
}

fn parse_hex_u64(s: &str) -> Option<u64> {
    let s = s.trim();
    let digits = s
        .strip_prefix("0x")
        .or_else(|| s.strip_prefix("0X"))
        .unwrap_or(s);
    if digits.is_empty() {
        return None;
    }
    u64::from_str_radix(digits, 16).ok()
}

/// AT&T numeric literal: `0x` prefix means hex, otherwise decimal.
fn parse_att_number(s: &str) -> Option<i128> {
    let s = s.trim();
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s),
    };
    let v: i128 = if let Some(h) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        if h.is_empty() {
            return None;
        }
        u64::from_str_radix(h, 16).ok()? as i128
    } else {
        if body.is_empty() {
            return None;
        }
        body.parse::<u64>().ok()? as i128
    };
    Some(if neg { -v } else { v })
}

fn parse_register(line: usize, tok: &str) -> Result<Register, ParseError> {
    let name = tok
        .trim()
        .strip_prefix('%')
        .ok_or_else(|| malformed(line, format!("expected register, found `{tok}`")))?;
    Register::from_token(name).ok_or_else(|| ParseError::UnknownRegister {
        line,
        token: name.to_string(),
    })
}

/// Split operands on commas that are not inside parentheses.
fn split_operands(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for c in text.chars() {
        match c {
            '(' => {
                depth += 1;
                cur.push(c);
            }
            ')' => {
                depth -= 1;
                cur.push(c);
            }
            ',' if depth == 0 => {
                out.push(cur.trim().to_string());
                cur.clear();
            }
            _ => cur.push(c),
        }
    }
    if !cur.trim().is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

fn parse_mem(line: usize, text: &str) -> Result<MemOperand, ParseError> {
    let mut rest = text.trim();
    let mut segment = None;
    if let Some(r) = rest.strip_prefix("%gs:") {
        segment = Some(Segment::Gs);
        rest = r;
    } else if let Some(r) = rest.strip_prefix("%fs:") {
        segment = Some(Segment::Fs);
        rest = r;
    }
    let (disp_text, inner) = match rest.find('(') {
        Some(p) => {
            let close = rest
                .rfind(')')
                .ok_or_else(|| malformed(line, format!("unbalanced memory operand `{text}`")))?;
            if close != rest.len() - 1 || close < p {
                return Err(malformed(line, format!("bad memory operand `{text}`")));
            }
            (&rest[..p], Some(&rest[p + 1..close]))
        }
        None => (rest, None),
    };
    let disp = if disp_text.trim().is_empty() {
        0
    } else {
        let v = parse_att_number(disp_text)
            .ok_or_else(|| malformed(line, format!("bad displacement `{disp_text}`")))?;
        if v > u64::MAX as i128 || v < i64::MIN as i128 {
            return Err(malformed(line, format!("displacement out of range `{disp_text}`")));
        }
        v as u64 as i64
    };
    let mut mem = MemOperand {
        segment,
        base: None,
        index: None,
        scale: 1,
        disp,
        width: 8,
    };
    if let Some(inner) = inner {
        let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
        if parts.is_empty() || parts.len() > 3 {
            return Err(malformed(line, format!("bad memory operand `{text}`")));
        }
        if !parts[0].is_empty() {
            mem.base = Some(parse_register(line, parts[0])?);
        }
        if parts.len() >= 2 && !parts[1].is_empty() {
            mem.index = Some(parse_register(line, parts[1])?);
            mem.scale = 1;
        }
        if parts.len() == 3 {
            if mem.index.is_none() {
                return Err(malformed(line, "scale without index"));
            }
            let s = parse_att_number(parts[2])
                .ok_or_else(|| malformed(line, format!("bad scale `{}`", parts[2])))?;
            if ![1, 2, 4, 8].contains(&s) {
                return Err(malformed(line, format!("scale must be 1, 2, 4 or 8, found {s}")));
            }
            mem.scale = s as u8;
        }
        if mem.base.is_none() && mem.index.is_none() {
            return Err(malformed(line, format!("empty memory operand `{text}`")));
        }
    }
    Ok(mem)
}

fn parse_operand(line: usize, text: &str, branch: bool) -> Result<(Operand, bool), ParseError> {
    let text = text.trim();
    let (indirect, body) = match text.strip_prefix('*') {
        Some(b) => (true, b.trim()),
        None => (false, text),
    };
    if let Some(imm) = body.strip_prefix('$') {
        let v = parse_att_number(imm)
            .ok_or_else(|| malformed(line, format!("bad immediate `{body}`")))?;
        if v > u64::MAX as i128 || v < i64::MIN as i128 {
            return Err(malformed(line, format!("immediate out of range `{body}`")));
        }
        return Ok((Operand::Imm(v as u64), indirect));
    }
    if body.starts_with('%') && !body.contains(':') && !body.contains('(') {
        return Ok((Operand::Reg(parse_register(line, body)?), indirect));
    }
    if branch && !indirect && !body.contains('(') && !body.starts_with('%') {
        let v = parse_hex_u64(body)
            .ok_or_else(|| malformed(line, format!("bad branch target `{body}`")))?;
        return Ok((Operand::Target(check_addr(line, v)?), false));
    }
    Ok((Operand::Mem(parse_mem(line, body)?), indirect))
}

struct Decoded {
    op: Op,
    suffix: Option<u8>,
}

fn suffix_width(c: char) -> Option<u8> {
    match c {
        'b' => Some(1),
        'w' => Some(2),
        'l' => Some(4),
        'q' => Some(8),
        _ => None,
    }
}

fn base_op(m: &str) -> Option<Op> {
    Some(match m {
        "mov" | "movabs" => Op::Mov,
        "lea" => Op::Lea,
        "add" => Op::Add,
        "sub" => Op::Sub,
        "adc" => Op::Adc,
        "sbb" => Op::Sbb,
        "and" => Op::And,
        "or" => Op::Or,
        "xor" => Op::Xor,
        "cmp" => Op::Cmp,
        "test" => Op::Test,
        "imul" => Op::Imul,
        "neg" => Op::Neg,
        "not" => Op::Not,
        "inc" => Op::Inc,
        "dec" => Op::Dec,
        "shl" | "sal" => Op::Shl,
        "shr" => Op::Shr,
        "sar" => Op::Sar,
        "rol" => Op::Rol,
        "ror" => Op::Ror,
        "jmp" => Op::Jmp,
        "call" => Op::Call,
        "ret" | "retn" => Op::Ret,
        "push" => Op::Push,
        "pop" => Op::Pop,
        "xchg" => Op::Xchg,
        "nop" => Op::Nop,
        "clflush" | "clflushopt" => Op::Clflush,
        _ => return None,
    })
}

fn decode_mnemonic(m: &str) -> Option<Decoded> {
    match m {
        "lfence" | "mfence" | "sfence" => return Some(Decoded { op: Op::Fence, suffix: None }),
        "enclu" => return Some(Decoded { op: Op::Enclu, suffix: None }),
        "pause" | "endbr64" => return Some(Decoded { op: Op::Nop, suffix: None }),
        "cltq" | "cdqe" => return Some(Decoded { op: Op::Cltq, suffix: None }),
        "cqto" | "cqo" => return Some(Decoded { op: Op::Cqto, suffix: None }),
        "movsxd" | "movslq" => {
            return Some(Decoded { op: Op::MovSx(Width::W32), suffix: Some(8) });
        }
        "movzx" => return Some(Decoded { op: Op::MovZx(Width::W8), suffix: None }),
        "movsx" => return Some(Decoded { op: Op::MovSx(Width::W8), suffix: None }),
        _ => {}
    }
    if m.len() == 6 && (m.starts_with("movz") || m.starts_with("movs")) {
        let mut cs = m[4..].chars();
        let src = cs.next().and_then(suffix_width)?;
        let dst = cs.next().and_then(suffix_width)?;
        if src >= dst || src == 8 {
            return None;
        }
        let w = Width::from_bytes(src)?;
        let op = if m.starts_with("movz") {
            Op::MovZx(w)
        } else {
            Op::MovSx(w)
        };
        return Some(Decoded { op, suffix: Some(dst) });
    }
    if let Some(cc) = m.strip_prefix("set") {
        return Cond::parse(cc).map(|c| Decoded { op: Op::Setcc(c), suffix: Some(1) });
    }
    if let Some(cc) = m.strip_prefix("cmov") {
        if let Some(c) = Cond::parse(cc) {
            return Some(Decoded { op: Op::Cmovcc(c), suffix: None });
        }
        let mut chars = cc.chars();
        let last = chars.next_back()?;
        let c = Cond::parse(chars.as_str())?;
        return Some(Decoded { op: Op::Cmovcc(c), suffix: suffix_width(last) });
    }
    if m.starts_with('j') && m != "jmp" && m != "jmpq" {
        return Cond::parse(&m[1..]).map(|c| Decoded { op: Op::Jcc(c), suffix: None });
    }
    if let Some(op) = base_op(m) {
        return Some(Decoded { op, suffix: None });
    }
    let mut chars = m.chars();
    let last = chars.next_back()?;
    let w = suffix_width(last)?;
    if matches!(m, "nopl" | "nopw" | "nopq") {
        return Some(Decoded { op: Op::Nop, suffix: Some(w) });
    }
    base_op(chars.as_str()).map(|op| Decoded { op, suffix: Some(w) })
}

fn expected_operands(op: Op, n: usize) -> bool {
    match op {
        Op::Mov | Op::MovZx(_) | Op::MovSx(_) | Op::Lea | Op::Cmovcc(_) | Op::Xchg => n == 2,
        Op::Add | Op::Sub | Op::Adc | Op::Sbb | Op::And | Op::Or | Op::Xor | Op::Cmp | Op::Test => {
            n == 2
        }
        Op::Imul => n == 2 || n == 3,
        Op::Shl | Op::Shr | Op::Sar | Op::Rol | Op::Ror => n == 1 || n == 2,
        Op::Neg | Op::Not | Op::Inc | Op::Dec | Op::Setcc(_) | Op::Push | Op::Pop => n == 1,
        Op::Jcc(_) | Op::Jmp | Op::Call | Op::Clflush => n == 1,
        Op::Ret => n <= 1,
        Op::Nop => n <= 1,
        Op::Fence | Op::Enclu | Op::Cltq | Op::Cqto => n == 0,
        Op::Unsupported => true,
    }
}

fn classify(op: Op, operands: &[Operand], indirect: bool) -> InstrClass {
    let mem_pos = operands.iter().position(|o| o.is_mem());
    let mem_dest = mem_pos.is_some() && mem_pos == Some(operands.len() - 1);
    match op {
        Op::Mov | Op::MovZx(_) | Op::MovSx(_) => match mem_pos {
            Some(_) if mem_dest => InstrClass::Store,
            Some(_) => InstrClass::Load,
            None => InstrClass::RegArith,
        },
        Op::Lea => InstrClass::Lea,
        Op::Cmp | Op::Test => InstrClass::Compare,
        Op::Add
        | Op::Sub
        | Op::Adc
        | Op::Sbb
        | Op::And
        | Op::Or
        | Op::Xor
        | Op::Imul
        | Op::Neg
        | Op::Not
        | Op::Inc
        | Op::Dec
        | Op::Shl
        | Op::Shr
        | Op::Sar
        | Op::Rol
        | Op::Ror
        | Op::Setcc(_)
        | Op::Cmovcc(_)
        | Op::Cltq
        | Op::Cqto => {
            if mem_dest {
                InstrClass::Store
            } else {
                InstrClass::RegArith
            }
        }
        Op::Jcc(_) => InstrClass::CondBranch,
        Op::Jmp => {
            if indirect || !matches!(operands.first(), Some(Operand::Target(_))) {
                InstrClass::IndirectJump
            } else {
                InstrClass::DirectJump
            }
        }
        Op::Call => {
            if indirect || !matches!(operands.first(), Some(Operand::Target(_))) {
                InstrClass::IndirectCall
            } else {
                InstrClass::DirectCall
            }
        }
        Op::Ret => InstrClass::NearReturn,
        Op::Push => InstrClass::Push,
        Op::Pop => InstrClass::Pop,
        Op::Xchg => InstrClass::Xchg,
        Op::Fence => InstrClass::Serialize,
        Op::Clflush => InstrClass::CacheFlush,
        Op::Enclu => InstrClass::Enclu,
        Op::Nop => InstrClass::Nop,
        Op::Unsupported => InstrClass::Unsupported,
    }
}

/// Operation width and memory access width for a decoded instruction.
fn widths(op: Op, suffix: Option<u8>, operands: &[Operand]) -> (u8, u8) {
    let reg_width = operands
        .iter()
        .rev()
        .find_map(|o| o.as_reg())
        .map(|r| r.width.bytes());
    let dest_reg_width = operands.last().and_then(|o| o.as_reg()).map(|r| r.width.bytes());
    match op {
        Op::MovZx(src) | Op::MovSx(src) => {
            let dst = dest_reg_width.or(suffix).unwrap_or(8);
            let src_bytes = match (operands.first(), suffix) {
                (Some(Operand::Reg(r)), None) => r.width.bytes(),
                _ => src.bytes(),
            };
            (dst, src_bytes)
        }
        Op::Push | Op::Pop | Op::Call | Op::Jmp | Op::Ret => (8, 8),
        Op::Lea => (dest_reg_width.unwrap_or(8), 8),
        Op::Setcc(_) => (1, 1),
        Op::Clflush | Op::Nop => (8, 1),
        Op::Shl | Op::Shr | Op::Sar | Op::Rol | Op::Ror => {
            let w = dest_reg_width.or(suffix).unwrap_or(8);
            (w, w)
        }
        _ => {
            let w = dest_reg_width.or(reg_width).or(suffix).unwrap_or(8);
            (w, w)
        }
    }
}

/// Decode a single instruction body (`mnemonic operands`) at `address`.
pub fn parse_instruction(
    line_no: usize,
    address: u64,
    body: &str,
    source: &str,
) -> Result<Instruction, ParseError> {
    let mut rest = body.trim();
    let mut prefixes = Vec::new();
    loop {
        let (tok, tail) = match rest.find(char::is_whitespace) {
            Some(p) => (&rest[..p], rest[p..].trim_start()),
            None => (rest, ""),
        };
        if PREFIXES.contains(&tok) && !tail.is_empty() {
            prefixes.push(tok.to_string());
            rest = tail;
        } else {
            break;
        }
    }
    let (mnemonic, operand_text) = match rest.find(char::is_whitespace) {
        Some(p) => (&rest[..p], rest[p..].trim()),
        None => (rest, ""),
    };
    if mnemonic.is_empty() {
        return Err(malformed(line_no, "missing mnemonic"));
    }
    let operand_text = match operand_text.find('<') {
        Some(p) => operand_text[..p].trim(),
        None => operand_text,
    };
    let mnemonic_lc = mnemonic.to_ascii_lowercase();
    let unsupported = |raw: &str| Instruction {
        address,
        prefixes: prefixes.clone(),
        mnemonic: mnemonic_lc.clone(),
        op: Op::Unsupported,
        class: InstrClass::Unsupported,
        operands: Vec::new(),
        raw_operands: raw.to_string(),
        width: 8,
        source: source.to_string(),
    };
    let Some(decoded) = decode_mnemonic(&mnemonic_lc) else {
        return Ok(unsupported(operand_text));
    };
    let branch = matches!(decoded.op, Op::Jcc(_) | Op::Jmp | Op::Call);
    let mut operands = Vec::new();
    let mut indirect = false;
    for t in split_operands(operand_text) {
        let (o, ind) = parse_operand(line_no, &t, branch)?;
        indirect |= ind;
        operands.push(o);
    }
    if decoded.op == Op::Nop {
        operands.clear();
    }
    if decoded.op == Op::Imul && operands.len() == 1 {
        return Ok(unsupported(operand_text));
    }
    if !expected_operands(decoded.op, operands.len()) {
        return Err(malformed(
            line_no,
            format!("`{mnemonic}` does not take {} operand(s)", operands.len()),
        ));
    }
    if let Op::Jcc(_) = decoded.op {
        if !matches!(operands[0], Operand::Target(_)) {
            return Err(malformed(line_no, "conditional branch needs a direct target"));
        }
    }
    if decoded.op == Op::Lea
        && !(operands[0].is_mem() && matches!(operands[1], Operand::Reg(_)))
    {
        return Err(malformed(line_no, "lea needs a memory source and register destination"));
    }
    if decoded.op == Op::Clflush && !operands[0].is_mem() {
        return Err(malformed(line_no, "clflush needs a memory operand"));
    }
    if operands.iter().filter(|o| o.is_mem()).count() > 1 {
        return Err(malformed(line_no, "at most one memory operand"));
    }
    if let Some(Operand::Imm(_)) = operands.last() {
        if !matches!(decoded.op, Op::Push | Op::Ret) {
            return Err(malformed(line_no, "immediate destination"));
        }
    }
    let class = classify(decoded.op, &operands, indirect);
    let (width, mem_width) = widths(decoded.op, decoded.suffix, &operands);
    for o in operands.iter_mut() {
        if let Operand::Mem(m) = o {
            m.width = mem_width;
        }
    }
    Ok(Instruction {
        address,
        prefixes,
        mnemonic: mnemonic_lc,
        op: decoded.op,
        class,
        operands,
        raw_operands: String::new(),
        width,
        source: source.to_string(),
    })
}

fn parse_quoted_hex(line: usize, text: &str) -> Result<Vec<u8>, ParseError> {
    let t = text.trim();
    let inner = t
        .strip_prefix('"')
        .and_then(|s| s.strip_suffix('"'))
        .ok_or_else(|| malformed(line, format!("expected quoted hex bytes, found `{t}`")))?;
    let compact: String = inner.chars().filter(|c| !c.is_whitespace()).collect();
    if compact.len() % 2 != 0 {
        return Err(malformed(line, "odd number of hex digits"));
    }
    (0..compact.len())
        .step_by(2)
        .map(|i| {
            u8::from_str_radix(&compact[i..i + 2], 16)
                .map_err(|_| malformed(line, format!("bad hex byte `{}`", &compact[i..i + 2])))
        })
        .collect()
}

fn directive_addr(line: usize, tok: Option<&str>) -> Result<u64, ParseError> {
    let tok = tok.ok_or_else(|| malformed(line, "missing address"))?;
    let v = parse_hex_u64(tok).ok_or_else(|| malformed(line, format!("bad address `{tok}`")))?;
    check_addr(line, v)
}

fn parse_directive(
    line: usize,
    text: &str,
    enclave: &mut Option<(u64, u64)>,
    d: &mut Directives,
) -> Result<(), ParseError> {
    let (name, rest) = match text.find(char::is_whitespace) {
        Some(p) => (&text[..p], text[p..].trim()),
        None => (text, ""),
    };
    let mut toks = rest.split_whitespace();
    match name {
        ".enclave" => {
            let lo = directive_addr(line, toks.next())?;
            let hi = directive_addr(line, toks.next())?;
            if hi <= lo {
                return Err(malformed(line, "empty enclave range"));
            }
            *enclave = Some((lo, hi));
        }
        ".entry" => {
            let sym = toks.next().ok_or_else(|| malformed(line, "missing entry symbol"))?;
            d.entry = Some(sym.to_string());
        }
        ".secret" | ".data" => {
            let addr = directive_addr(line, toks.next())?;
            let quoted = rest[rest.find('"').unwrap_or(rest.len())..].to_string();
            let bytes = parse_quoted_hex(line, &quoted)?;
            check_addr(line, addr + bytes.len() as u64)?;
            if name == ".secret" {
                d.secrets.push((addr, bytes));
            } else {
                d.data.push((addr, bytes));
            }
        }
        ".quad" => {
            let addr = directive_addr(line, toks.next())?;
            let mut bytes = Vec::new();
            for t in toks {
                let v = parse_hex_u64(t).ok_or_else(|| malformed(line, format!("bad value `{t}`")))?;
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            if bytes.is_empty() {
                return Err(malformed(line, ".quad needs at least one value"));
            }
            d.data.push((addr, bytes));
        }
        ".fill" => {
            let lo = directive_addr(line, toks.next())?;
            let hi = directive_addr(line, toks.next())?;
            let b = toks
                .next()
                .and_then(parse_hex_u64)
                .filter(|v| *v <= 0xff)
                .ok_or_else(|| malformed(line, "bad fill byte"))?;
            d.fills.push((lo, hi, b as u8));
        }
        ".ssa" => d.ssa = Some(directive_addr(line, toks.next())?),
        ".tcs" => d.tcs = Some(directive_addr(line, toks.next())?),
        ".gsbase" => d.gsbase = Some(directive_addr(line, toks.next())?),
        _ => return Err(malformed(line, format!("unknown directive `{name}`"))),
    }
    Ok(())
}

/// Parse a disassembly listing or simulator program.
pub fn parse_listing(text: &str) -> Result<Listing, ParseError> {
    let mut symbols = BTreeMap::new();
    let mut instructions = Vec::new();
    let mut seen = HashSet::new();
    let mut enclave = None;
    let mut directives = Directives::default();

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        };
        let line = line.trim();
        if line.is_empty() || line == "..." {
            continue;
        }
        if line.starts_with("Disassembly of section") || line.contains("file format") {
            continue;
        }
        if line.starts_with('.') {
            parse_directive(line_no, line, &mut enclave, &mut directives)?;
            continue;
        }
        if line.ends_with(">:") {
            let lt = line
                .find('<')
                .ok_or_else(|| malformed(line_no, "bad symbol header"))?;
            let addr_text = line[..lt].trim();
            let name = &line[lt + 1..line.len() - 2];
            let addr = parse_hex_u64(addr_text)
                .filter(|_| addr_text.chars().all(|c| c.is_ascii_hexdigit()))
                .ok_or_else(|| malformed(line_no, "bad symbol address"))?;
            if name.is_empty() {
                return Err(malformed(line_no, "empty symbol name"));
            }
            symbols.insert(name.to_string(), check_addr(line_no, addr)?);
            continue;
        }
        let colon = line
            .find(':')
            .ok_or_else(|| malformed(line_no, "missing address prefix"))?;
        let addr_text = line[..colon].trim();
        if addr_text.is_empty() || !addr_text.chars().all(|c| c.is_ascii_hexdigit()) {
            return Err(malformed(line_no, "missing address prefix"));
        }
        let addr = check_addr(
            line_no,
            u64::from_str_radix(addr_text, 16).map_err(|_| malformed(line_no, "bad address"))?,
        )?;
        let mut body = line[colon + 1..].trim_start();
        loop {
            let (tok, tail) = match body.find(char::is_whitespace) {
                Some(p) => (&body[..p], body[p..].trim_start()),
                None => (body, ""),
            };
            if is_hex_byte(tok) {
                body = tail;
            } else {
                break;
            }
            if body.is_empty() {
                break;
            }
        }
        if body.is_empty() {
            continue;
        }
        if !seen.insert(addr) {
            return Err(ParseError::DuplicateAddress {
                line: line_no,
                addr,
            });
        }
        instructions.push(parse_instruction(line_no, addr, body, raw.trim())?);
    }
    let listing = Listing::from_parts(symbols, instructions, enclave, directives);
    for (name, &addr) in &listing.symbols {
        if listing.at(addr).is_none() {
            return Err(ParseError::SymbolWithoutInstruction {
                name: name.clone(),
                addr,
            });
        }
    }
    Ok(listing)
}
