use std::fmt::Write;

use super::listing::Listing;

fn hex_bytes(b: &[u8]) -> String {
    b.iter().map(|x| format!("{x:02x}")).collect()
}

/// Render a listing back into the textual grammar accepted by `parse_listing`.
pub fn emit_listing(listing: &Listing) -> String {
    let mut out = String::new();
    let d = &listing.directives;
    if let Some((lo, hi)) = listing.enclave_range {
        writeln!(out, ".enclave {lo:#x} {hi:#x}").unwrap();
    }
    if let Some(e) = &d.entry {
        writeln!(out, ".entry {e}").unwrap();
    }
    if let Some(a) = d.tcs {
        writeln!(out, ".tcs {a:#x}").unwrap();
    }
    if let Some(a) = d.ssa {
        writeln!(out, ".ssa {a:#x}").unwrap();
    }
    if let Some(a) = d.gsbase {
        writeln!(out, ".gsbase {a:#x}").unwrap();
    }
    for (lo, hi, b) in &d.fills {
        writeln!(out, ".fill {lo:#x} {hi:#x} {b:#04x}").unwrap();
    }
    for (a, bytes) in &d.data {
        writeln!(out, ".data {a:#x} \"{}\"", hex_bytes(bytes)).unwrap();
    }
    for (a, bytes) in &d.secrets {
        writeln!(out, ".secret {a:#x} \"{}\"", hex_bytes(bytes)).unwrap();
    }
    let mut by_addr: Vec<(&String, &u64)> = listing.symbols.iter().collect();
    by_addr.sort_by_key(|(n, a)| (**a, (*n).clone()));
    let mut sym_iter = by_addr.into_iter().peekable();
    for ins in &listing.instructions {
        while let Some((name, &addr)) = sym_iter.peek().copied() {
            if addr > ins.address {
                break;
            }
            writeln!(out, "\n{addr:016x} <{name}>:").unwrap();
            sym_iter.next();
        }
        writeln!(out, "{ins}").unwrap();
    }
    out
}
