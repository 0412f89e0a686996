//! On-disk container shared by datasets and checkpoints.
//!
//! A file is a UTF-8 header of `key = value` lines closed by an `end` line,
//! followed by the raw little-endian arrays in declared order:
//!
//! ```text
//! #oplab-container
//! version = 1
//! dtype = f64
//! array = inputs 100,32
//! array = targets 100,101,3
//! meta.equation = lorenz
//! payload_bytes = 268800
//! payload_sha256 = 9f2c...
//! end
//! <payload>
//! ```
//!
//! Meta keys are sorted, so equal contents always serialize to equal bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MAGIC: &str = "#oplab-container";
pub const VERSION: u32 = 1;

/// Meta key set on load when the file was stored at a different precision.
pub const CONVERTED_FROM: &str = "converted_from";

/// Named arrays plus string metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Container<T> {
    pub meta: BTreeMap<String, String>,
    pub arrays: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Default for Container<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Container<T> {
    pub fn new() -> Self {
        Self {
            meta: BTreeMap::new(),
            arrays: Vec::new(),
        }
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.meta.insert(key.into(), value.to_string());
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.arrays.push((name.into(), t));
    }

    pub fn array(&self, name: &str) -> Result<&Tensor<T>> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Format(format!("missing array `{name}`")))
    }

    pub fn take(&mut self, name: &str) -> Result<Tensor<T>> {
        let pos = self
            .arrays
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Format(format!("missing array `{name}`")))?;
        Ok(self.arrays.remove(pos).1)
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Format(format!("missing meta key `{key}`")))
    }

    /// Parses a meta value with `FromStr`.
    pub fn parse<V: std::str::FromStr>(&self, key: &str) -> Result<V> {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|_| Error::Format(format!("meta key `{key}` has unparsable value `{raw}`")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::new();
        for (_, t) in &self.arrays {
            payload.reserve(t.len() * (T::BITS as usize / 8));
            for &v in t.data() {
                v.write_le(&mut payload);
            }
        }
        let mut head = format!("{MAGIC}\nversion = {VERSION}\ndtype = {}\n", T::DTYPE);
        for (name, t) in &self.arrays {
            check_token(name, "array name")?;
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            head.push_str(&format!("array = {name} {}\n", dims.join(",")));
        }
        for (k, v) in &self.meta {
            check_token(k, "meta key")?;
            if v.contains('\n') {
                return Err(Error::InvalidArgument(format!("meta value for `{k}` contains a newline")));
            }
            head.push_str(&format!("meta.{k} = {v}\n"));
        }
        head.push_str(&format!("payload_bytes = {}\n", payload.len()));
        head.push_str(&format!("payload_sha256 = {}\nend\n", sha256_hex(&payload)));
        let mut out = head.into_bytes();
        out.extend_from_slice(&payload);
        Ok(out)
    }

    /// Decodes a container, converting from the stored precision if needed.
    /// A conversion is recorded under [`CONVERTED_FROM`] in `meta`.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = parse_header(bytes)?;
        let payload = &bytes[header.payload_start..];
        if payload.len() < header.payload_bytes {
            return Err(Error::Format(format!(
                "truncated payload: {} of {} bytes",
                payload.len(),
                header.payload_bytes
            )));
        }
        if payload.len() > header.payload_bytes {
            return Err(Error::Format("trailing bytes after payload".into()));
        }
        let found = sha256_hex(payload);
        if found != header.checksum {
            return Err(Error::Checksum {
                expected: header.checksum,
                found,
            });
        }
        let mut c = match header.dtype.as_str() {
            "f64" => decode::<f64, T>(&header, payload)?,
            "f32" => decode::<f32, T>(&header, payload)?,
            other => return Err(Error::Format(format!("unknown dtype `{other}`"))),
        };
        c.meta = header.meta;
        if header.dtype != T::DTYPE {
            c.meta.insert(CONVERTED_FROM.into(), header.dtype);
        }
        Ok(c)
    }

    /// Writes via a temporary file and a rename, creating parent directories.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Header {
    dtype: String,
    arrays: Vec<(String, Vec<usize>)>,
    meta: BTreeMap<String, String>,
    payload_bytes: usize,
    checksum: String,
    payload_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let first = bytes.iter().position(|&b| b == b'\n').unwrap_or(bytes.len());
    if &bytes[..first] != MAGIC.as_bytes() {
        return Err(Error::Version("not an oplab container (bad magic)".into()));
    }
    let mut pos = first + 1;
    let mut fields: Vec<(String, String)> = Vec::new();
    loop {
        let Some(len) = bytes.get(pos..).and_then(|rest| rest.iter().position(|&b| b == b'\n')) else {
            return Err(Error::Format("truncated header".into()));
        };
        let line = std::str::from_utf8(&bytes[pos..pos + len])
            .map_err(|_| Error::Format("header is not UTF-8".into()))?;
        pos += len + 1;
        if line == "end" {
            break;
        }
        let (k, v) = line
            .split_once(" = ")
            .ok_or_else(|| Error::Format(format!("malformed header line `{line}`")))?;
        fields.push((k.to_string(), v.to_string()));
    }

    let mut version = None;
    let mut dtype = None;
    let mut arrays = Vec::new();
    let mut meta = BTreeMap::new();
    let mut payload_bytes = None;
    let mut checksum = None;
    for (k, v) in fields {
        match k.as_str() {
            "version" => version = Some(v),
            "dtype" => dtype = Some(v),
            "payload_bytes" => {
                payload_bytes = Some(v.parse().map_err(|_| Error::Format(format!("bad payload_bytes `{v}`")))?)
            }
            "payload_sha256" => checksum = Some(v),
            "array" => {
                let (name, dims) = v
                    .split_once(' ')
                    .ok_or_else(|| Error::Format(format!("malformed array entry `{v}`")))?;
                let shape = dims
                    .split(',')
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| Error::Format(format!("bad shape `{dims}`")))?;
                arrays.push((name.to_string(), shape));
            }
            _ => match k.strip_prefix("meta.") {
                Some(key) => {
                    meta.insert(key.to_string(), v);
                }
                None => return Err(Error::Format(format!("unknown header key `{k}`"))),
            },
        }
    }
    let version = version.ok_or_else(|| Error::Format("missing version".into()))?;
    if version != VERSION.to_string() {
        return Err(Error::Version(format!("container version {version}, expected {VERSION}")));
    }
    Ok(Header {
        dtype: dtype.ok_or_else(|| Error::Format("missing dtype".into()))?,
        arrays,
        meta,
        payload_bytes: payload_bytes.ok_or_else(|| Error::Format("missing payload_bytes".into()))?,
        checksum: checksum.ok_or_else(|| Error::Format("missing payload_sha256".into()))?,
        payload_start: pos,
    })
}

fn decode<S: Scalar, T: Scalar>(header: &Header, payload: &[u8]) -> Result<Container<T>> {
    let width = S::BITS as usize / 8;
    let expected: usize = header.arrays.iter().map(|(_, s)| s.iter().product::<usize>() * width).sum();
    if expected != payload.len() {
        return Err(Error::Format(format!(
            "declared arrays need {expected} bytes, payload has {}",
            payload.len()
        )));
    }
    let mut c = Container::new();
    let mut chunks = payload.chunks_exact(width);
    for (name, shape) in &header.arrays {
        let n: usize = shape.iter().product();
        let data: Vec<T> = chunks
            .by_ref()
            .take(n)
            .map(|b| T::lit(S::read_le(b).as_f64()))
            .collect();
        c.push(name.clone(), Tensor::new(shape.clone(), data)?);
    }
    Ok(c)
}

fn check_token(s: &str, what: &str) -> Result<()> {
    let ok = !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || "_.-".contains(c));
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{what} `{s}` must be non-empty [A-Za-z0-9_.-]")))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Replaces `path` with `bytes` so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("`{}` has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    drop(f);
    fs::rename(&tmp, path)?;
    Ok(())
}
