//! Client side of the stdio model bridge (newline-delimited JSON), plus a
//! reference echo server used for conformance tests. The wire format is
//! specified in `PROTOCOL.md` at the repository root.

use std::cell::RefCell;
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use log::{debug, warn};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::stubs::{check_refined, NormalPredictor, RefineRequest, Refiner};
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::field::io::{decode_pfm, decode_png, encode_pfm, encode_png};
use crate::field::Field2D;
use crate::raster::OrthoCamera;

pub const PROTOCOL_VERSION: u32 = 1;
/// Largest encoded message either side may send in one line.
pub const MAX_MESSAGE_BYTES: usize = 64 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentShape {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Capabilities {
    #[serde(default)]
    pub refine_texture: bool,
    #[serde(default)]
    pub predict_normals: bool,
    #[serde(default)]
    pub depth_conditioning: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Handshake {
    pub protocol_version: u32,
    pub latent: LatentShape,
    #[serde(default)]
    pub schedule: Option<Vec<(f64, f64)>>,
    pub capabilities: Capabilities,
}

impl Handshake {
    pub fn validate(&self) -> Result<()> {
        if self.protocol_version != PROTOCOL_VERSION {
            return Err(Error::Backend(format!(
                "bridge speaks protocol {}, expected {PROTOCOL_VERSION}",
                self.protocol_version
            )));
        }
        let l = &self.latent;
        if l.width == 0 || l.height == 0 || l.channels == 0 {
            return Err(Error::Backend("bridge declared an empty latent".into()));
        }
        if let Some(t) = &self.schedule {
            NoiseSchedule::from_table(t).map_err(|e| Error::Backend(format!("bridge schedule: {e}")))?;
        }
        Ok(())
    }
}

/// Image payload: inline base64 or a file path for oversized data.
pub fn encode_image(f: &Field2D, format: &str) -> Result<Value> {
    let bytes = match format {
        "png" => encode_png(f)?,
        "pfm" => encode_pfm(f)?,
        _ => return Err(Error::invalid(format!("unknown image format {format:?}"))),
    };
    if bytes.len() * 4 / 3 + 1024 > MAX_MESSAGE_BYTES {
        let path = std::env::temp_dir().join(format!("elevate3d-{}-{}.{format}", std::process::id(), bytes.len()));
        std::fs::write(&path, &bytes)?;
        return Ok(json!({"format": format, "path": path}));
    }
    Ok(json!({"format": format, "data": B64.encode(bytes)}))
}

pub fn decode_image(v: &Value) -> Result<Field2D> {
    let bad = |m: &str| Error::Backend(format!("bad image payload: {m}"));
    let format = v.get("format").and_then(Value::as_str).ok_or_else(|| bad("missing format"))?;
    let bytes = if let Some(d) = v.get("data").and_then(Value::as_str) {
        B64.decode(d).map_err(|e| bad(&e.to_string()))?
    } else if let Some(p) = v.get("path").and_then(Value::as_str) {
        std::fs::read(PathBuf::from(p))?
    } else {
        return Err(bad("neither data nor path"));
    };
    match format {
        "png" => decode_png(&bytes),
        "pfm" => decode_pfm(&bytes),
        f => Err(bad(&format!("unknown format {f:?}"))),
    }
}

/// Synchronous request/response client over any line-oriented stream pair.
pub struct BridgeClient<R: BufRead, W: Write> {
    reader: R,
    writer: W,
    next_id: u64,
    handshake: Option<Handshake>,
}

impl<R: BufRead, W: Write> BridgeClient<R, W> {
    pub fn new(reader: R, writer: W) -> Self {
        Self {
            reader,
            writer,
            next_id: 0,
            handshake: None,
        }
    }

    pub fn handshake_info(&self) -> Option<&Handshake> {
        self.handshake.as_ref()
    }

    /// Sends one request and returns the `ok` response body.
    pub fn call(&mut self, op: &str, mut body: Value) -> Result<Value> {
        let id = self.next_id;
        self.next_id += 1;
        let obj = body.as_object_mut().ok_or_else(|| Error::invalid("request body must be an object"))?;
        obj.insert("id".into(), json!(id));
        obj.insert("op".into(), json!(op));
        let line = serde_json::to_string(&body)?;
        if line.len() > MAX_MESSAGE_BYTES {
            return Err(Error::Backend(format!("request of {} bytes exceeds the message cap", line.len())));
        }
        debug!("bridge <- {op} #{id} ({} bytes)", line.len());
        writeln!(self.writer, "{line}").map_err(|e| Error::Backend(format!("bridge write failed: {e}")))?;
        self.writer.flush().map_err(|e| Error::Backend(format!("bridge write failed: {e}")))?;

        let mut buf = String::new();
        let n = self
            .reader
            .read_line(&mut buf)
            .map_err(|e| Error::Backend(format!("bridge read failed: {e}")))?;
        if n == 0 {
            return Err(Error::Backend(format!("bridge closed the stream during {op}")));
        }
        let resp: Value = serde_json::from_str(buf.trim_end())
            .map_err(|e| Error::Backend(format!("bridge sent malformed JSON: {e}")))?;
        let rid = resp.get("id").and_then(Value::as_u64);
        if rid != Some(id) {
            return Err(Error::Backend(format!("bridge answered id {rid:?} to request {id}")));
        }
        match resp.get("status").and_then(Value::as_str) {
            Some("ok") => Ok(resp),
            Some("error") => Err(Error::Backend(format!(
                "{op} failed: {} ({})",
                resp.get("message").and_then(Value::as_str).unwrap_or("no message"),
                resp.get("code").and_then(Value::as_str).unwrap_or("no code"),
            ))),
            other => Err(Error::Backend(format!("bridge sent status {other:?}"))),
        }
    }

    pub fn handshake(&mut self) -> Result<&Handshake> {
        let resp = self.call("handshake", json!({"protocol_version": PROTOCOL_VERSION}))?;
        let hs: Handshake = serde_json::from_value(resp)
            .map_err(|e| Error::Backend(format!("bad handshake: {e}")))?;
        hs.validate()?;
        Ok(self.handshake.insert(hs))
    }

    pub fn refine_texture(&mut self, req: &RefineRequest) -> Result<Field2D> {
        let mut images = serde_json::Map::new();
        images.insert("color".into(), encode_image(req.color, "png")?);
        images.insert("base_color".into(), encode_image(req.base_color, "png")?);
        images.insert("mask".into(), encode_image(req.mask, "png")?);
        let depth = req.depth.map(|d| if d.is_finite() { d } else { 0.0 });
        images.insert("depth".into(), encode_image(&depth, "pfm")?);
        let resp = self.call(
            "refine_texture",
            json!({"prompt": req.prompt, "sampler": req.sampler, "images": images}),
        )?;
        let img = resp
            .pointer("/images/color")
            .ok_or_else(|| Error::Backend("refine_texture response lacks images.color".into()))?;
        decode_image(img)
    }

    pub fn predict_normals(&mut self, color: &Field2D) -> Result<Field2D> {
        let resp = self.call("predict_normals", json!({"images": {"color": encode_image(color, "png")?}}))?;
        let img = resp
            .pointer("/images/normals")
            .ok_or_else(|| Error::Backend("predict_normals response lacks images.normals".into()))?;
        let n = decode_image(img)?;
        if n.channels() != 3 || n.width() != color.width() || n.height() != color.height() {
            return Err(Error::Backend(format!("normal map has shape {:?}", n.shape())));
        }
        Ok(n)
    }

    pub fn shutdown(&mut self) -> Result<()> {
        self.call("shutdown", json!({})).map(|_| ())
    }
}

/// A bridge child process started through `sh -c`.
pub struct BridgeProcess {
    child: Child,
    pub client: RefCell<BridgeClient<BufReader<ChildStdout>, ChildStdin>>,
}

impl BridgeProcess {
    pub fn spawn(cmd: &str) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(cmd)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Backend(format!("cannot start bridge {cmd:?}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut client = BridgeClient::new(BufReader::new(stdout), stdin);
        if let Err(e) = client.handshake() {
            let _ = child.kill();
            let _ = child.wait();
            return Err(e);
        }
        Ok(Self {
            child,
            client: RefCell::new(client),
        })
    }
}

impl BridgeProcess {
    pub fn backend(&self) -> BridgeBackend<'_, BufReader<ChildStdout>, ChildStdin> {
        BridgeBackend { client: &self.client }
    }
}

impl Drop for BridgeProcess {
    fn drop(&mut self) {
        if let Err(e) = self.client.get_mut().shutdown() {
            warn!("bridge shutdown: {e}");
            let _ = self.child.kill();
        }
        let _ = self.child.wait();
    }
}

/// Adapts a bridge client to the refiner and predictor contracts. Copies
/// share the client, so one bridge can serve both roles in a run.
pub struct BridgeBackend<'a, R: BufRead, W: Write> {
    pub client: &'a RefCell<BridgeClient<R, W>>,
}

impl<R: BufRead, W: Write> Clone for BridgeBackend<'_, R, W> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<R: BufRead, W: Write> Copy for BridgeBackend<'_, R, W> {}

impl<R: BufRead, W: Write> Refiner for BridgeBackend<'_, R, W> {
    fn refine(&mut self, req: &RefineRequest) -> Result<Field2D> {
        let mut client = self.client.borrow_mut();
        if client.handshake_info().map(|h| h.capabilities.refine_texture) == Some(false) {
            return Err(Error::Backend("bridge cannot refine textures".into()));
        }
        let out = client.refine_texture(req)?;
        let out = match out.channels() {
            3 => out,
            4 => Field2D::from_channels(&[out.channel(0), out.channel(1), out.channel(2)])?,
            c => return Err(Error::Backend(format!("refined image has {c} channels"))),
        };
        check_refined(&out, req)?;
        Ok(out)
    }
}

impl<R: BufRead, W: Write> NormalPredictor for BridgeBackend<'_, R, W> {
    fn predict(&mut self, color: &Field2D, _cam: &OrthoCamera) -> Result<Field2D> {
        let mut client = self.client.borrow_mut();
        if client.handshake_info().map(|h| h.capabilities.predict_normals) == Some(false) {
            return Err(Error::Backend("bridge cannot predict normals".into()));
        }
        client.predict_normals(color)
    }
}

fn error_line(id: Value, code: &str, message: &str) -> String {
    json!({"id": id, "status": "error", "code": code, "message": message}).to_string()
}

/// Reference bridge: identity refinement and flat `(0, 0, 1)` normals.
/// Answers every line with exactly one response line and returns after
/// `shutdown` or end of input.
pub fn serve_echo<R: BufRead, W: Write>(reader: R, mut writer: W) -> std::io::Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (reply, stop) = echo_reply(&line);
        writeln!(writer, "{reply}")?;
        writer.flush()?;
        if stop {
            break;
        }
    }
    Ok(())
}

fn echo_reply(line: &str) -> (String, bool) {
    let req: Value = match serde_json::from_str(line) {
        Ok(v) => v,
        Err(e) => return (error_line(Value::Null, "parse_error", &e.to_string()), false),
    };
    let id = req.get("id").cloned().unwrap_or(Value::Null);
    if !(id.is_u64()) {
        return (error_line(id, "bad_request", "missing or non-integer id"), false);
    }
    let op = req.get("op").and_then(Value::as_str).unwrap_or("");
    let result = match op {
        "handshake" => Ok(json!({
            "protocol_version": PROTOCOL_VERSION,
            "latent": {"width": 64, "height": 64, "channels": 3},
            "schedule": null,
            "capabilities": {"refine_texture": true, "predict_normals": true, "depth_conditioning": false},
        })),
        "refine_texture" => req
            .pointer("/images/color")
            .ok_or_else(|| "images.color is required".to_string())
            .and_then(|c| decode_image(c).map_err(|e| e.to_string()))
            .and_then(|img| encode_image(&img, "png").map_err(|e| e.to_string()))
            .map(|img| json!({"images": {"color": img}})),
        "predict_normals" => req
            .pointer("/images/color")
            .ok_or_else(|| "images.color is required".to_string())
            .and_then(|c| decode_image(c).map_err(|e| e.to_string()))
            .and_then(|img| {
                let n = Field2D::from_fn(img.width(), img.height(), 3, |_, _, c| if c == 2 { 1.0 } else { 0.0 });
                encode_image(&n, "pfm").map_err(|e| e.to_string())
            })
            .map(|n| json!({"images": {"normals": n}})),
        "shutdown" => Ok(json!({})),
        other => return (error_line(id, "unknown_op", &format!("unknown op {other:?}")), false),
    };
    match result {
        Ok(mut body) => {
            let obj = body.as_object_mut().expect("object");
            obj.insert("id".into(), id);
            obj.insert("status".into(), json!("ok"));
            (body.to_string(), op == "shutdown")
        }
        Err(msg) => (error_line(id, "bad_request", &msg), false),
    }
}
