//! Weight files: a text header followed by little-endian f64 arrays.
//!
//! ```text
//! WEAVECOUNT-WEIGHTS v1
//! variant=inc-dice
//! config_hash=0123456789abcdef
//! config=variant:inc-dice;filters:...
//! tensors=N
//! tensor enc0.k3.weight 16x3x3x1
//! ...
//! end
//! <raw arrays in the order listed>
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::model::{NetConfig, Weights};
use crate::error::{Error, Result};

pub const MAGIC: &str = "WEAVECOUNT-WEIGHTS v1";

/// Parsed header of a weight file.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightsHeader {
    pub config: NetConfig,
    pub config_hash: u64,
    pub tensors: Vec<(String, Vec<usize>)>,
}

impl WeightsHeader {
    pub fn render(&self) -> String {
        let mut s = String::new();
        s.push_str(MAGIC);
        s.push('\n');
        s.push_str(&format!("variant={}\n", self.config.variant));
        s.push_str(&format!("config_hash={:016x}\n", self.config_hash));
        s.push_str(&format!("config={}\n", self.config.encode()));
        s.push_str(&format!("tensors={}\n", self.tensors.len()));
        for (name, shape) in &self.tensors {
            let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
            s.push_str(&format!("tensor {name} {}\n", dims.join("x")));
        }
        s.push_str("end\n");
        s
    }
}

pub fn write_weights<W: Write>(w: &Weights, mut out: W) -> Result<()> {
    w.validate()?;
    let header = WeightsHeader {
        config: w.config.clone(),
        config_hash: w.config.hash(),
        tensors: w.params.iter().map(|(n, s, _)| (n.clone(), s.clone())).collect(),
    };
    let io = |e: std::io::Error| Error::Format(e.to_string());
    out.write_all(header.render().as_bytes()).map_err(io)?;
    for (_, _, values) in &w.params {
        for v in values {
            out.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

fn header_line<R: BufRead>(r: &mut R) -> Result<String> {
    let mut line = String::new();
    let n = r.read_line(&mut line).map_err(|e| Error::Format(e.to_string()))?;
    if n == 0 {
        return Err(Error::Format("truncated weights header".into()));
    }
    Ok(line.trim_end_matches('\n').to_string())
}

fn field<'a>(line: &'a str, key: &str) -> Result<&'a str> {
    line.strip_prefix(key)
        .and_then(|r| r.strip_prefix('='))
        .ok_or_else(|| Error::Format(format!("expected {key}=..., got {line:?}")))
}

pub fn read_header<R: BufRead>(r: &mut R) -> Result<WeightsHeader> {
    if header_line(r)? != MAGIC {
        return Err(Error::Format("not a weights file (bad magic line)".into()));
    }
    let variant = header_line(r)?;
    let variant = field(&variant, "variant")?.to_string();
    let hash_line = header_line(r)?;
    let config_hash = u64::from_str_radix(field(&hash_line, "config_hash")?, 16)
        .map_err(|_| Error::Format(format!("bad hash line {hash_line:?}")))?;
    let config_line = header_line(r)?;
    let config = NetConfig::decode(field(&config_line, "config")?)?;
    if config.variant.to_string() != variant {
        return Err(Error::Format("variant line disagrees with config".into()));
    }
    if config.hash() != config_hash {
        return Err(Error::Format("config hash mismatch".into()));
    }
    let count_line = header_line(r)?;
    let count: usize = field(&count_line, "tensors")?
        .parse()
        .map_err(|_| Error::Format(format!("bad tensor count {count_line:?}")))?;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let line = header_line(r)?;
        let mut parts = line.split(' ');
        let (tag, name, dims) = (parts.next(), parts.next(), parts.next());
        let (Some("tensor"), Some(name), Some(dims), None) = (tag, name, dims, parts.next()) else {
            return Err(Error::Format(format!("bad tensor line {line:?}")));
        };
        let shape = dims
            .split('x')
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Format(format!("bad dims in {line:?}")))?;
        tensors.push((name.to_string(), shape));
    }
    if header_line(r)? != "end" {
        return Err(Error::Format("missing end of header".into()));
    }
    Ok(WeightsHeader {
        config,
        config_hash,
        tensors,
    })
}

pub fn read_weights<R: Read>(input: R) -> Result<Weights> {
    let mut r = BufReader::new(input);
    let header = read_header(&mut r)?;
    let mut params = Vec::with_capacity(header.tensors.len());
    let mut buf = [0u8; 8];
    for (name, shape) in header.tensors {
        let len: usize = shape.iter().product();
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            r.read_exact(&mut buf)
                .map_err(|_| Error::Format(format!("truncated data for {name}")))?;
            values.push(f64::from_le_bytes(buf));
        }
        params.push((name, shape, values));
    }
    if r.read(&mut buf).map_err(|e| Error::Format(e.to_string()))? != 0 {
        return Err(Error::Format("trailing bytes after weight data".into()));
    }
    let w = Weights {
        config: header.config,
        params,
    };
    w.validate()?;
    Ok(w)
}

pub fn save_weights(w: &Weights, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_weights(w, BufWriter::new(f))
}

pub fn load_weights(path: &Path) -> Result<Weights> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_weights(f)
}

pub fn inspect_weights(path: &Path) -> Result<WeightsHeader> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_header(&mut BufReader::new(f))
}
