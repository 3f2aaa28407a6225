//! The examples in docs/wire.md are real encoder output.

use swarmgen_core::world::Observation;
use swarmgen_deploy::wire::{self, ActPayload, AssignReply, CheckRequest, DiagPayload, Empty, InitReply, Kind, Message};

fn doc() -> String {
    std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/wire.md")).unwrap()
}

fn example_frames(doc: &str) -> Vec<&str> {
    let start = doc.find("```frames\n").expect("frames block") + "```frames\n".len();
    let end = start + doc[start..].find("```").expect("closed block");
    doc[start..end].lines().filter(|l| !l.is_empty()).collect()
}

#[test]
fn examples_are_canonical_and_typed() {
    let doc = doc();
    let frames = example_frames(&doc);
    assert!(frames.len() >= 8);
    for line in frames {
        let msg = Message::decode(line.as_bytes()).unwrap();
        assert_eq!(String::from_utf8(msg.encode()).unwrap(), line, "not canonical");
        // Each payload parses as its typed form and re-encodes unchanged.
        let typed = match msg.kind {
            Kind::Check => Message::new(msg.kind, msg.seq, &msg.parse::<CheckRequest>().unwrap()),
            Kind::Diag => Message::new(msg.kind, msg.seq, &msg.parse::<DiagPayload>().unwrap()),
            Kind::Init => Message::new(msg.kind, msg.seq, &msg.parse::<InitReply>().unwrap()),
            Kind::Observe => Message::new(msg.kind, msg.seq, &msg.parse::<Observation>().unwrap()),
            Kind::Act => Message::new(msg.kind, msg.seq, &msg.parse::<ActPayload>().unwrap()),
            Kind::AssignReply => Message::new(msg.kind, msg.seq, &msg.parse::<AssignReply>().unwrap()),
            Kind::Shutdown => Message::new(msg.kind, msg.seq, &msg.parse::<Empty>().unwrap()),
            Kind::AssignRequest => continue,
        };
        assert_eq!(typed.encode(), line.as_bytes(), "{line}");
    }
}

#[test]
fn hex_example_matches_framing() {
    let doc = doc();
    let start = doc.find("```text\n00 00 00").expect("hex block") + "```text\n".len();
    let end = start + doc[start..].find("```").unwrap();
    let bytes: Vec<u8> = doc[start..end]
        .split_whitespace()
        .map(|h| u8::from_str_radix(h, 16).unwrap())
        .collect();
    let mut framed = Vec::new();
    wire::send(&mut framed, &Message::new(Kind::Shutdown, 9, &Empty {})).unwrap();
    assert_eq!(bytes, framed);
}
