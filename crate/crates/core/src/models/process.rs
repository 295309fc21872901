//! External model adapters running as child processes.
//!
//! The adapter reads one JSON request per line on stdin and answers with one
//! JSON object per line on stdout:
//!
//! | request                                   | response                                   |
//! |-------------------------------------------|--------------------------------------------|
//! | `{"op":"describe"}`                       | `{"kind":"embedder","id":..,"shape":[c,h,w],"embed_dim":d}` |
//! | `{"op":"generate","latent":[..]}`         | `{"image":[..]}` (CHW, values in [-1, 1])   |
//! | `{"op":"embed","image":[..]}`             | `{"embedding":[..]}`                       |
//! | `{"op":"detect","image":[..]}`            | `{"confidence":p}`                         |
//!
//! Any response may instead be `{"error":"message"}`. Generators describe
//! themselves with `latent_dim` instead of `embed_dim`; detectors with
//! neither. Process adapters are black-box: they expose no gradients.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::Deserialize;
use serde_json::{json, Value};

use super::{Detector, Embedder, Generator};
use crate::domain::{EmbeddingVector, ImageSample, ImageShape};
use crate::error::{Error, Result};

#[derive(Debug, Deserialize)]
struct Description {
    kind: String,
    id: String,
    shape: [usize; 3],
    #[serde(default)]
    latent_dim: Option<usize>,
    #[serde(default)]
    embed_dim: Option<usize>,
}

struct Pipe {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

pub struct ProcessAdapter {
    id: String,
    kind: String,
    shape: ImageShape,
    latent_dim: Option<usize>,
    embed_dim: Option<usize>,
    pipe: Mutex<Pipe>,
}

impl ProcessAdapter {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        let pipe = Mutex::new(Pipe { child, stdin, stdout });
        let mut adapter = Self {
            id: program.to_string(),
            kind: String::new(),
            shape: ImageShape::new(0, 0, 0),
            latent_dim: None,
            embed_dim: None,
            pipe,
        };
        let desc: Description = serde_json::from_value(adapter.call(json!({"op": "describe"}))?)?;
        let [c, h, w] = desc.shape;
        adapter.id = desc.id;
        adapter.kind = desc.kind;
        adapter.shape = ImageShape::new(c, h, w);
        adapter.latent_dim = desc.latent_dim;
        adapter.embed_dim = desc.embed_dim;
        Ok(adapter)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn kind(&self) -> &str {
        &self.kind
    }

    fn fail(&self, message: impl Into<String>) -> Error {
        Error::Adapter {
            id: self.id.clone(),
            message: message.into(),
        }
    }

    fn call(&self, request: Value) -> Result<Value> {
        let mut pipe = self.pipe.lock().map_err(|_| self.fail("adapter lock poisoned"))?;
        let mut line = serde_json::to_string(&request)?;
        line.push('\n');
        pipe.stdin.write_all(line.as_bytes())?;
        pipe.stdin.flush()?;
        let mut reply = String::new();
        if pipe.stdout.read_line(&mut reply)? == 0 {
            return Err(self.fail("adapter closed its output"));
        }
        let value: Value = serde_json::from_str(&reply)?;
        if let Some(msg) = value.get("error") {
            return Err(self.fail(msg.as_str().unwrap_or("unspecified error")));
        }
        Ok(value)
    }

    fn field_vec(&self, value: &Value, key: &str) -> Result<Vec<f64>> {
        serde_json::from_value(value.get(key).cloned().ok_or_else(|| self.fail(format!("missing `{key}`")))?)
            .map_err(Error::from)
    }

    fn expect_kind(self, kind: &str) -> Result<Self> {
        if self.kind != kind {
            return Err(self.fail(format!("expected a {kind} adapter, got `{}`", self.kind)));
        }
        Ok(self)
    }
}

impl Drop for ProcessAdapter {
    fn drop(&mut self) {
        if let Ok(pipe) = self.pipe.get_mut() {
            let _ = pipe.child.kill();
            let _ = pipe.child.wait();
        }
    }
}

pub struct ProcessGenerator(ProcessAdapter);

impl ProcessGenerator {
    pub fn new(adapter: ProcessAdapter) -> Result<Self> {
        let a = adapter.expect_kind("generator")?;
        if a.latent_dim.is_none() {
            return Err(a.fail("generator did not report latent_dim"));
        }
        Ok(Self(a))
    }
}

impl Generator for ProcessGenerator {
    fn id(&self) -> &str {
        self.0.id()
    }

    fn latent_dim(&self) -> usize {
        self.0.latent_dim.unwrap_or_default()
    }

    fn output_shape(&self) -> ImageShape {
        self.0.shape
    }

    fn generate(&self, latent: &[f64]) -> Result<ImageSample> {
        if latent.len() != self.latent_dim() {
            return Err(Error::dim(self.latent_dim(), latent.len()));
        }
        let reply = self.0.call(json!({"op": "generate", "latent": latent}))?;
        ImageSample::new(self.0.shape, self.0.field_vec(&reply, "image")?)
    }
}

pub struct ProcessEmbedder(ProcessAdapter);

impl ProcessEmbedder {
    pub fn new(adapter: ProcessAdapter) -> Result<Self> {
        let a = adapter.expect_kind("embedder")?;
        if a.embed_dim.is_none() {
            return Err(a.fail("embedder did not report embed_dim"));
        }
        Ok(Self(a))
    }
}

impl Embedder for ProcessEmbedder {
    fn model_id(&self) -> &str {
        self.0.id()
    }

    fn embed_dim(&self) -> usize {
        self.0.embed_dim.unwrap_or_default()
    }

    fn input_shape(&self) -> ImageShape {
        self.0.shape
    }

    fn embed(&self, image: &ImageSample) -> Result<EmbeddingVector> {
        image.expect_shape(self.0.shape)?;
        let reply = self.0.call(json!({"op": "embed", "image": image.values()}))?;
        let values = self.0.field_vec(&reply, "embedding")?;
        if values.len() != self.embed_dim() {
            return Err(Error::dim(self.embed_dim(), values.len()));
        }
        EmbeddingVector::new(values)
    }
}

pub struct ProcessDetector(ProcessAdapter);

impl ProcessDetector {
    pub fn new(adapter: ProcessAdapter) -> Result<Self> {
        Ok(Self(adapter.expect_kind("detector")?))
    }
}

impl Detector for ProcessDetector {
    fn id(&self) -> &str {
        self.0.id()
    }

    fn input_shape(&self) -> ImageShape {
        self.0.shape
    }

    fn detect(&self, image: &ImageSample) -> Result<f64> {
        image.expect_shape(self.0.shape)?;
        let reply = self.0.call(json!({"op": "detect", "image": image.values()}))?;
        let p = reply
            .get("confidence")
            .and_then(Value::as_f64)
            .ok_or_else(|| self.0.fail("missing `confidence`"))?;
        if !(0.0..=1.0).contains(&p) {
            return Err(self.0.fail(format!("confidence {p} outside [0, 1]")));
        }
        Ok(p)
    }
}
