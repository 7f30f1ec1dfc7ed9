use std::io::Cursor;

use elevate3d::pipeline::bridge::{serve_echo, Handshake};
use proptest::prelude::*;
use serde_json::Value;

fn replies(input: &str) -> Vec<Value> {
    let mut out = Vec::new();
    serve_echo(Cursor::new(input.as_bytes()), &mut out).unwrap();
    String::from_utf8(out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn golden_transcript() {
    let input = concat!(
        r#"{"id":0,"op":"handshake","protocol_version":1}"#,
        "\n",
        "{not json\n",
        r#"{"id":1,"op":"warp_drive"}"#,
        "\n",
        r#"{"id":2,"op":"refine_texture","images":{}}"#,
        "\n",
        r#"{"op":"shutdown"}"#,
        "\n",
        r#"{"id":3,"op":"shutdown"}"#,
        "\n",
        r#"{"id":4,"op":"handshake"}"#,
        "\n",
    );
    let r = replies(input);
    assert_eq!(r.len(), 6, "nothing is read after shutdown");
    let hs: Handshake = serde_json::from_value(r[0].clone()).unwrap();
    hs.validate().unwrap();
    assert_eq!((hs.latent.width, hs.latent.height, hs.latent.channels), (64, 64, 3));
    let codes: Vec<_> = r[1..5].iter().map(|v| v["code"].as_str().unwrap_or("")).collect();
    assert_eq!(codes, ["parse_error", "unknown_op", "bad_request", "bad_request"]);
    assert_eq!(r[1]["id"], Value::Null);
    assert_eq!(r[2]["id"], 1);
    assert_eq!(r[5]["id"], 3);
    assert_eq!(r[5]["status"], "ok");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn malformed_lines_never_desync(lines in prop::collection::vec("[^\n\r]{1,60}", 1..6)) {
        // a well-formed request after the noise must get its own answer
        let mut input = String::new();
        let mut expected = 0;
        for l in &lines {
            if l.trim().is_empty() {
                continue;
            }
            input.push_str(l);
            input.push('\n');
            expected += 1;
        }
        input.push_str("{\"id\":77,\"op\":\"handshake\"}\n");
        let r = replies(&input);
        let stopped_early = r.iter().any(|v| v["status"] == "ok" && v.get("latent").is_none());
        prop_assume!(!stopped_early);
        prop_assert_eq!(r.len(), expected + 1);
        for v in &r[..expected] {
            prop_assert_eq!(&v["status"], "error");
        }
        prop_assert_eq!(&r[expected]["id"], 77);
        prop_assert_eq!(&r[expected]["status"], "ok");
    }
}
