use std::fs;
use std::path::{Path, PathBuf};

use evfuse::data::{
    citation_paths, load_citation_raw, load_generic_dir, save_generic, Split, GENERIC_EDGES, GENERIC_FEATURES,
    GENERIC_LABELS, GENERIC_SPLITS,
};
use evfuse::Error;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn citation_toy_fixture() {
    let l = load_citation_raw(&fixture("toy.content"), &fixture("toy.cites"), None).unwrap();
    let b = &l.bundle;
    assert_eq!((b.n(), b.features().d(), b.classes()), (3, 2, 2));
    assert_eq!(b.edges(), &[(0, 1)]);
    assert_eq!(l.dangling, 0);
    assert_eq!(l.label_names, vec!["AI", "ML"]);
    assert_eq!(b.labels(), &[0, 1, 0]);
    assert_eq!(l.node_ids, vec!["p1", "p2", "p3"]);
    assert_eq!(b.masks().indices(Split::Train), vec![0, 1, 2]);
}

#[test]
fn citation_dangling_cite_is_counted() {
    let clean = load_citation_raw(&fixture("toy.content"), &fixture("toy.cites"), None).unwrap();
    let l = load_citation_raw(&fixture("toy.content"), &fixture("toy_dangling.cites"), None).unwrap();
    assert_eq!(l.dangling, 1);
    assert_eq!(l.bundle, clean.bundle);
}

#[test]
fn citation_parse_errors_carry_line_numbers() {
    match load_citation_raw(&fixture("bad.content"), &fixture("toy.cites"), None) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected a parse error, got {other:?}"),
    }
    assert!(matches!(
        load_citation_raw(&fixture("empty.content"), &fixture("toy.cites"), None),
        Err(Error::Parse { .. })
    ));
    assert!(matches!(
        load_citation_raw(&fixture("missing.content"), &fixture("toy.cites"), None),
        Err(Error::Io { .. })
    ));
}

#[test]
fn citation_paths_from_prefix() {
    let (c, k) = citation_paths(&fixture("toy")).unwrap();
    assert_eq!(c, fixture("toy.content"));
    assert_eq!(k, fixture("toy.cites"));
}

#[test]
fn generic_round_trip_is_byte_identical() {
    let src = fixture("generic");
    let b = load_generic_dir(&src).unwrap();
    assert_eq!((b.n(), b.features().d(), b.classes()), (4, 3, 2));
    let dir = tempfile::tempdir().unwrap();
    save_generic(&b, dir.path()).unwrap();
    for f in [GENERIC_FEATURES, GENERIC_EDGES, GENERIC_LABELS, GENERIC_SPLITS] {
        assert_eq!(fs::read(src.join(f)).unwrap(), fs::read(dir.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn generic_label_count_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    for f in [GENERIC_FEATURES, GENERIC_EDGES, GENERIC_SPLITS] {
        fs::copy(fixture("generic").join(f), dir.path().join(f)).unwrap();
    }
    fs::write(dir.path().join(GENERIC_LABELS), "0\n1\n1\n").unwrap();
    assert!(matches!(load_generic_dir(dir.path()), Err(Error::Input(_))));
}

#[test]
fn citation_export_matches_generic_import() {
    let l = load_citation_raw(&fixture("toy.content"), &fixture("toy_dangling.cites"), None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_generic(&l.bundle, dir.path()).unwrap();
    assert_eq!(load_generic_dir(dir.path()).unwrap(), l.bundle);
}

#[test]
fn loaders_are_deterministic() {
    let a = load_generic_dir(&fixture("generic")).unwrap();
    let b = load_generic_dir(&fixture("generic")).unwrap();
    assert_eq!(a, b);
}
