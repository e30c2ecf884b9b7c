//! Line-oriented manifest documents.
//!
//! One JSON object per line. A first line starting with `#` names the model;
//! later `#` lines and blank lines are ignored.
//!
//! ```text
//! # tiny
//! {"index":0,"kind":"conv2d","kernel_h":3,"kernel_w":3,"c_in":3,"c_out":32,"param_count":864}
//! {"index":1,"kind":"linear","n_in":32,"n_out":10,"param_count":330}
//! {"index":2,"kind":"other","param_count":0}
//! ```

use std::fmt::Write as _;
use std::path::Path;

use edgepart_core::manifest::{LayerKind, LayerSpec, ModelManifest};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, read, write};

/// The bundled MobileNetV2 manifest (141 layers).
pub const MOBILENET_V2: &str = include_str!("../fixtures/mobilenet_v2.jsonl");

pub fn mobilenet_v2() -> ModelManifest {
    parse_manifest(MOBILENET_V2, "mobilenet_v2").expect("bundled manifest is valid")
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerLine {
    index: usize,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kernel_h: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kernel_w: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    c_in: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    c_out: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_in: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_out: Option<u64>,
    param_count: u64,
}

type Field<'a> = (&'a str, Option<u64>);

impl LayerLine {
    fn from_spec(l: &LayerSpec) -> Self {
        let mut line = LayerLine {
            index: l.index,
            kind: l.kind.name().to_string(),
            kernel_h: None,
            kernel_w: None,
            c_in: None,
            c_out: None,
            n_in: None,
            n_out: None,
            param_count: l.param_count,
        };
        match l.kind {
            LayerKind::Conv2d {
                kernel_h,
                kernel_w,
                c_in,
                c_out,
            } => {
                line.kernel_h = Some(kernel_h);
                line.kernel_w = Some(kernel_w);
                line.c_in = Some(c_in);
                line.c_out = Some(c_out);
            }
            LayerKind::Linear { n_in, n_out } => {
                line.n_in = Some(n_in);
                line.n_out = Some(n_out);
            }
            LayerKind::Other => {}
        }
        line
    }

    fn into_spec(self) -> std::result::Result<LayerSpec, String> {
        let conv = [
            ("kernel_h", self.kernel_h),
            ("kernel_w", self.kernel_w),
            ("c_in", self.c_in),
            ("c_out", self.c_out),
        ];
        let lin = [("n_in", self.n_in), ("n_out", self.n_out)];
        let (required, forbidden): (&[Field], Vec<Field>) = match self.kind.as_str() {
            "conv2d" => (&conv, lin.to_vec()),
            "linear" => (&lin, conv.to_vec()),
            "other" => (&[], conv.iter().chain(&lin).copied().collect()),
            k => return Err(format!("unknown kind `{k}`")),
        };
        if let Some((name, _)) = required.iter().find(|(_, v)| v.is_none()) {
            return Err(format!("{} layer is missing `{name}`", self.kind));
        }
        if let Some((name, _)) = forbidden.iter().find(|(_, v)| v.is_some()) {
            return Err(format!("{} layer must not carry `{name}`", self.kind));
        }
        let get = |v: Option<u64>| v.unwrap_or_default();
        Ok(match self.kind.as_str() {
            "conv2d" => LayerSpec::conv2d(
                self.index,
                (get(self.kernel_h), get(self.kernel_w)),
                get(self.c_in),
                get(self.c_out),
                self.param_count,
            ),
            "linear" => LayerSpec::linear(self.index, get(self.n_in), get(self.n_out), self.param_count),
            _ => LayerSpec::other(self.index, self.param_count),
        })
    }
}

/// Parses a manifest document. `origin` names the source in error messages
/// and is the model name when the document has no header.
pub fn parse_manifest(text: &str, origin: &str) -> Result<ModelManifest> {
    let mut name = None;
    let mut layers = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(comment) = line.strip_prefix('#') {
            if i == 0 {
                name = Some(comment.trim().to_string());
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let syntax = |message: String| Error::Syntax {
            origin: origin.to_string(),
            line: i + 1,
            message,
        };
        let parsed: LayerLine = serde_json::from_str(line).map_err(|e| syntax(e.to_string()))?;
        let index = parsed.index;
        let spec = parsed.into_spec().map_err(|reason| {
            Error::invalid(
                format!("{origin}:{}", i + 1),
                edgepart_core::Error::InvalidLayer { index, reason },
            )
        })?;
        layers.push(spec);
    }
    let name = name.filter(|n| !n.is_empty()).unwrap_or_else(|| origin.to_string());
    ModelManifest::new(name, layers).map_err(|e| Error::invalid(origin, e))
}

/// Canonical document: header line, then one compact object per layer with
/// keys in a fixed order.
pub fn to_jsonl(manifest: &ModelManifest) -> String {
    let mut out = format!("# {}\n", manifest.name());
    for l in manifest.layers() {
        let line = serde_json::to_string(&LayerLine::from_spec(l)).expect("plain data serializes");
        let _ = writeln!(out, "{line}");
    }
    out
}

pub fn read_manifest(path: &Path) -> Result<ModelManifest> {
    let origin = path.display().to_string();
    let text = read(path)?;
    let mut m = parse_manifest(&text, &origin)?;
    if m.name() == origin {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
        m = m.with_name(stem);
    }
    Ok(m)
}

pub fn write_manifest(path: &Path, manifest: &ModelManifest) -> Result<()> {
    write(path, &to_jsonl(manifest))
}
