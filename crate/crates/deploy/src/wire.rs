//! Tick protocol framing and payloads. The byte-level grammar is documented
//! in `docs/wire.md`.

use std::fmt;
use std::io::{self, Read, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use swarmgen_core::bundle::{Diagnostic, Manifest, PolicyBundle};
use swarmgen_core::trial::Assignments;
use swarmgen_core::world::{Goal, WorldState};
use swarmgen_core::{TaskSpec, Vec2};

/// Frames larger than this are rejected before allocation.
pub const MAX_FRAME: u32 = 16 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Kind {
    Init,
    Observe,
    Act,
    AssignRequest,
    AssignReply,
    Check,
    Diag,
    Shutdown,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).expect("kind serializes");
        f.write_str(v.as_str().unwrap_or("?"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("frame of {0} bytes exceeds the limit")]
    Oversized(u32),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("expected {expected} but received {got}")]
    Unexpected { expected: Kind, got: Kind },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    // Declared in key order so the encoding stays canonical.
    pub kind: Kind,
    pub payload: Value,
    pub seq: u64,
}

impl Message {
    pub fn new<P: Serialize>(kind: Kind, seq: u64, payload: &P) -> Self {
        Message {
            kind,
            payload: serde_json::to_value(payload).expect("payload serializes"),
            seq,
        }
    }

    /// Canonical encoding: keys sorted, no insignificant whitespace.
    pub fn encode(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("message serializes")
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        serde_json::from_slice(bytes).map_err(|e| WireError::Malformed(e.to_string()))
    }

    pub fn parse<P: DeserializeOwned>(&self) -> Result<P, WireError> {
        serde_json::from_value(self.payload.clone())
            .map_err(|e| WireError::Malformed(format!("{} payload: {e}", self.kind)))
    }

    pub fn expect(self, kind: Kind) -> Result<Self, WireError> {
        if self.kind == kind {
            Ok(self)
        } else {
            Err(WireError::Unexpected { expected: kind, got: self.kind })
        }
    }
}

/// Writes one frame: 4-byte big-endian length, then the body.
pub fn write_frame(w: &mut impl Write, body: &[u8]) -> io::Result<()> {
    let len = u32::try_from(body.len()).ok().filter(|&n| n <= MAX_FRAME).ok_or_else(|| {
        io::Error::new(io::ErrorKind::InvalidInput, "frame too large")
    })?;
    let mut buf = Vec::with_capacity(4 + body.len());
    buf.extend_from_slice(&len.to_be_bytes());
    buf.extend_from_slice(body);
    w.write_all(&buf)?;
    w.flush()
}

/// Reads one frame body. `Ok(None)` means the peer closed cleanly between frames.
pub fn read_frame(r: &mut impl Read) -> Result<Option<Vec<u8>>, WireError> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_be_bytes(len);
    if len > MAX_FRAME {
        return Err(WireError::Oversized(len));
    }
    let mut body = vec![0u8; len as usize];
    r.read_exact(&mut body)?;
    Ok(Some(body))
}

pub fn send(w: &mut impl Write, msg: &Message) -> io::Result<()> {
    write_frame(w, &msg.encode())
}

pub fn recv(r: &mut impl Read) -> Result<Option<Message>, WireError> {
    read_frame(r)?.map(|b| Message::decode(&b)).transpose()
}

/// A bundle carried inline in CHECK and ASSIGN_REQUEST.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundlePayload {
    pub manifest: Manifest,
    pub files: std::collections::BTreeMap<String, String>,
}

impl From<&PolicyBundle> for BundlePayload {
    fn from(b: &PolicyBundle) -> Self {
        BundlePayload {
            manifest: b.manifest.clone(),
            files: b.files.clone(),
        }
    }
}

impl From<BundlePayload> for PolicyBundle {
    fn from(p: BundlePayload) -> Self {
        PolicyBundle {
            manifest: p.manifest,
            files: p.files,
        }
    }
}

/// Host to node, once per trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitRequest {
    pub robot_id: u32,
    pub bundle_hash: String,
    pub spec: TaskSpec,
    pub world: WorldState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitStatus {
    Ready,
    HashMismatch,
    Rejected,
}

/// Node to host, answering INIT.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitReply {
    pub robot_id: u32,
    pub bundle_hash: String,
    pub status: InitStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActPayload {
    pub velocity: Vec2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignRequest {
    /// Absent when the runtime was started with a bundle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bundle: Option<BundlePayload>,
    pub spec: TaskSpec,
    pub world: WorldState,
}

/// `[robot id, goal]` pairs in ascending id order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignReply {
    pub assignments: Vec<(u32, Goal)>,
}

impl AssignReply {
    pub fn from_map(map: &Assignments) -> Self {
        AssignReply {
            assignments: map.iter().map(|(id, g)| (*id, g.clone())).collect(),
        }
    }
}

/// CHECK without a bundle checks the bundle the node was started with.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bundle: Option<BundlePayload>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagPayload {
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Empty {}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn framing_round_trip() {
        let msg = Message::new(Kind::Act, 7, &ActPayload { velocity: Vec2::new(0.1, -0.25) });
        let mut buf = Vec::new();
        send(&mut buf, &msg).unwrap();
        assert_eq!(&buf[..4], &(buf.len() as u32 - 4).to_be_bytes());
        let mut r = Cursor::new(buf);
        assert_eq!(recv(&mut r).unwrap(), Some(msg));
        assert_eq!(recv(&mut r).unwrap(), None);
    }

    #[test]
    fn canonical_bytes() {
        let msg = Message::new(Kind::Act, 3, &ActPayload { velocity: Vec2::new(0.1, 0.0) });
        assert_eq!(
            String::from_utf8(msg.encode()).unwrap(),
            r#"{"kind":"ACT","payload":{"velocity":[0.1,0.0]},"seq":3}"#
        );
        let msg = Message::new(Kind::AssignRequest, 0, &Empty {});
        assert_eq!(msg.encode(), br#"{"kind":"ASSIGN_REQUEST","payload":{},"seq":0}"#);
    }

    #[test]
    fn truncated_and_oversized_frames() {
        let mut r = Cursor::new(vec![0, 0, 0, 5, b'{']);
        assert!(matches!(recv(&mut r), Err(WireError::Io(_))));
        let mut r = Cursor::new(vec![0, 0]);
        assert!(matches!(recv(&mut r), Err(WireError::Io(_))));
        let mut r = Cursor::new((MAX_FRAME + 1).to_be_bytes().to_vec());
        assert!(matches!(recv(&mut r), Err(WireError::Oversized(_))));
        let mut r = Cursor::new(vec![0, 0, 0, 2, b'{', b'x']);
        assert!(matches!(recv(&mut r), Err(WireError::Malformed(_))));
    }

    #[test]
    fn assign_reply_shape() {
        let map = Assignments::from([(1, Goal::Angle(0.5)), (0, Goal::Point(Vec2::new(1.0, 2.0)))]);
        let msg = Message::new(Kind::AssignReply, 1, &AssignReply::from_map(&map));
        assert_eq!(
            String::from_utf8(msg.encode()).unwrap(),
            r#"{"kind":"ASSIGN_REPLY","payload":{"assignments":[[0,{"type":"point","value":[1.0,2.0]}],[1,{"type":"angle","value":0.5}]]},"seq":1}"#
        );
        assert_eq!(msg.parse::<AssignReply>().unwrap(), AssignReply::from_map(&map));
    }
}
