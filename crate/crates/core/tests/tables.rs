//! The scanners reproduce, exactly, the gadgets annotated in each bundled
//! listing with `#!` lines.

mod support;

use btilab::corpus;
use support::tables::{type1_rows, type2_rows};

#[test]
fn type1_matches_annotations() {
    let (got, want) = type1_rows(corpus::INTEL_SDK_MIN);
    assert_eq!(want.len(), 11);
    assert_eq!(got, want);
}

#[test]
fn type2_matches_annotations() {
    for text in [corpus::DLMALLOC_EXCERPTS, corpus::DLFREE_EXCERPT] {
        let (got, want) = type2_rows(text);
        assert!(!want.is_empty());
        assert_eq!(got, want);
    }
}

#[test]
fn sanitized_listing_is_clean() {
    let (t1, _) = type1_rows(corpus::SANITIZED);
    let (t2, _) = type2_rows(corpus::SANITIZED);
    assert!(t1.is_empty() && t2.is_empty(), "{t1:?} {t2:?}");
}
