use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;

use super::*;
use crate::policy::tests::arb_node;
use crate::policy::{check_access, Operator, PolicyNode};
use crate::token::TreeNode;
use crate::value::Value;

fn p(s: &str) -> VaultPath {
    VaultPath::parse(s).unwrap()
}

fn bag(claims: &[(&str, Value)]) -> AttributeBag {
    AttributeBag {
        credential_id: "c".into(),
        claims: claims.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        issuer: "did:dv:x".into(),
        issuance_date: None,
        trusted: true,
    }
}

#[test]
fn structure_and_removal() {
    let mut ix = VaultIndex::new();
    ix.insert_file(&p("a/b/c.txt"), 3).unwrap();
    ix.insert_file(&p("a-c"), 1).unwrap();
    assert_eq!(ix.get(&p("a/b")).unwrap().kind, EntryKind::Folder);
    assert_eq!(ix.insert_file(&p("a/b"), 1), Err(IndexError::KindConflict(p("a/b"))));
    assert_eq!(ix.insert_file(&p("a-c/x"), 1), Err(IndexError::NotAFolder(p("a-c"))));
    assert_eq!(ix.remove(&p("a")).unwrap(), vec![p("a"), p("a/b"), p("a/b/c.txt")]);
    assert!(ix.get(&p("a-c")).is_some());
    assert_eq!(ix.remove(&VaultPath::root()), Err(IndexError::Root));
    let kids: Vec<_> = ix.children(&VaultPath::root()).map(|(p, _)| p.clone()).collect();
    assert_eq!(kids, vec![p("a-c")]);
}

#[test]
fn subtree_prunes_denied_folders() {
    let mut ix = VaultIndex::new();
    ix.insert_file(&p("public/readme"), 5).unwrap();
    ix.insert_file(&p("photos/holiday/img.jpg"), 10).unwrap();
    ix.insert_file(&p("photos/cat.jpg"), 7).unwrap();
    ix.set_policy(&p("photos"), Policy::combined(PolicyNode::leaf("age", Operator::Gte, 18))).unwrap();
    ix.set_policy(&p("photos/holiday"), Policy::combined(PolicyNode::leaf("trip", Operator::Eq, "Italy 2022"))).unwrap();
    let ctx = EvalContext::default();

    let none = ix.accessible_subtree(&[], AccessMode::Read, &ctx);
    assert_eq!(serde_json::to_string(&none).unwrap(), r#"{"public":{"readme":5}}"#);

    let adult = ix.accessible_subtree(&[bag(&[("age", Value::Int(30))])], AccessMode::Read, &ctx);
    assert!(adult.contains(&p("photos/cat.jpg")));
    assert!(!adult.contains(&p("photos/holiday/img.jpg")));
    assert!(adult.get(&p("photos/holiday")).is_none());

    ix.set_policy(&VaultPath::root(), Policy::combined(PolicyNode::leaf("x", Operator::Eq, 1))).unwrap();
    assert!(ix.accessible_subtree(&[], AccessMode::Read, &ctx).is_empty());
}

fn arb_index() -> impl Strategy<Value = VaultIndex> {
    let entry = (0usize..4, 0usize..3, prop::bool::ANY, prop::option::weighted(0.5, arb_node(6)));
    prop::collection::vec(entry, 1..20).prop_map(|specs| {
        let mut ix = VaultIndex::new();
        let mut folders = vec![VaultPath::root()];
        for (i, (parent, _, is_file, policy)) in specs.into_iter().enumerate() {
            let base = folders[parent % folders.len()].clone();
            let path = base.join(&format!("e{i}")).unwrap();
            if is_file {
                ix.insert_file(&path, i as u64).unwrap();
            } else {
                ix.insert_folder(&path).unwrap();
                folders.push(path.clone());
            }
            if let Some(node) = policy {
                ix.set_policy(&path, Policy::combined(node)).unwrap();
            }
        }
        ix
    })
}

fn arb_bags() -> impl Strategy<Value = Vec<AttributeBag>> {
    let value = prop_oneof![
        (0i64..40).prop_map(Value::Int),
        prop::sample::select(vec!["x", "y", "TU Delft"]).prop_map(Value::from),
    ];
    prop::collection::vec(
        prop::collection::btree_map(prop::sample::select(vec!["age", "uni", "level"]), value, 0..3),
        0..=4,
    )
    .prop_map(|maps| {
        maps.into_iter()
            .enumerate()
            .map(|(i, m)| AttributeBag {
                credential_id: format!("c{i}"),
                claims: m.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
                issuer: "did:dv:x".into(),
                issuance_date: None,
                trusted: true,
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn subtree_equals_per_path_check(ix in arb_index(), bags in arb_bags()) {
        let ctx = EvalContext::default();
        let tree = ix.accessible_subtree(&bags, AccessMode::Read, &ctx);
        for (path, entry) in ix.entries() {
            let granted = check_access(path, AccessMode::Read, &bags, &ctx, &ix).unwrap().granted;
            if path.is_root() {
                if !granted {
                    prop_assert!(tree.is_empty());
                }
                continue;
            }
            let listed = match (tree.get(path), entry.kind) {
                (Some(TreeNode::File(size)), EntryKind::File) => *size == entry.size,
                (Some(TreeNode::Folder(_)), EntryKind::Folder) => true,
                _ => false,
            };
            prop_assert_eq!(listed, granted, "{}", path);
        }
        // nothing outside the vault appears
        for (path, _) in tree.files() {
            prop_assert!(ix.get(&path).is_some());
        }
    }
}
