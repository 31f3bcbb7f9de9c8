//! Randomized encode/decode identity checks over generated documents.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uam_bus::{Doc, Node};

const NAMES: &[&str] = &[
    "cpacs",
    "flights",
    "vertiports",
    "vertiport",
    "vertiportID",
    "name",
    "positionNorth",
    "positionEast",
    "departureTimes",
    "arrivalTimes",
    "requests",
    "request",
    "trajectory",
    "slot",
    "fato",
];

const TEXTS: &[&str] = &[
    "Harzburg",
    "alpha beta",
    "x<y&z",
    "quoted \"text\"",
    "inf",
    "NaN",
    "",
];

fn random_number(rng: &mut ChaCha8Rng) -> f64 {
    match rng.gen_range(0..5) {
        0 => rng.gen_range(-1000..1000) as f64,
        1 => 9.7313671,
        2 => rng.gen_range(-1.0..1.0),
        3 => rng.gen::<f64>() * 1e6,
        _ => 2006.130101,
    }
}

fn random_node(rng: &mut ChaCha8Rng, depth: usize) -> Node {
    let mut node = Node::new(NAMES[rng.gen_range(0..NAMES.len())]);
    if rng.gen_bool(0.5) {
        node = node.uid(rng.gen_range(0u32..50));
    }
    let n_children = if depth >= 3 { 0 } else { rng.gen_range(0..4) };
    if n_children > 0 {
        // Distinct names per sibling group to keep uIDs trivially unique.
        let mut used_uids: Vec<String> = Vec::new();
        for _ in 0..n_children {
            let mut child = random_node(rng, depth + 1);
            if let Some(uid) = child.get_uid() {
                let mut uid = uid.to_string();
                while used_uids.contains(&uid) {
                    uid = format!("{}", rng.gen_range(0u32..10_000));
                }
                used_uids.push(uid.clone());
                child = child.attr("uID", uid);
            }
            node = node.child(child);
        }
    } else {
        match rng.gen_range(0..4) {
            0 => {
                node = node.number(random_number(rng));
                if rng.gen_bool(0.5) {
                    node = node.unit("deg");
                }
            }
            1 => {
                let count = rng.gen_range(0..5);
                let values: Vec<f64> = (0..count).map(|_| random_number(rng)).collect();
                node = node.numbers(values);
                if rng.gen_bool(0.3) {
                    node = node.unit("s");
                }
            }
            2 => {
                node = node.text(TEXTS[rng.gen_range(0..TEXTS.len())]);
            }
            _ => {}
        }
    }
    node
}

#[test]
fn thousand_random_documents_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0a11_d0c5);
    for case in 0..1000 {
        let doc = match Doc::new(random_node(&mut rng, 0)) {
            Ok(doc) => doc,
            Err(e) => panic!("case {case}: generator produced invalid doc: {e}"),
        };
        let bytes = doc.encode();
        let back = Doc::decode(&bytes).unwrap_or_else(|e| {
            panic!(
                "case {case}: decode failed: {e}\n{}",
                String::from_utf8_lossy(&bytes)
            )
        });
        assert_eq!(back, doc, "case {case} failed round-trip");
        // Canonical: re-encoding is byte-identical.
        assert_eq!(back.encode(), bytes, "case {case} not canonical");
    }
}
