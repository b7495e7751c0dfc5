//! Network checkpoints: one JSON header line, then every parameter as a
//! little-endian f64, network after network.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::nn::{Activation, Mlp};
use super::LearnerError;

pub const FORMAT: &str = "dtvec-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Snapshot {
    pub nets: Vec<(String, Mlp)>,
}

impl Snapshot {
    pub fn get(&self, name: &str) -> Option<&Mlp> {
        self.nets.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct NetHeader {
    name: String,
    sizes: Vec<usize>,
    activations: Vec<Activation>,
    /// Offset and length in f64 values within the payload.
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    networks: Vec<NetHeader>,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> LearnerError + '_ {
    move |source| LearnerError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write<W: Write>(snap: &Snapshot, mut out: W) -> std::io::Result<()> {
    let mut networks = Vec::new();
    let mut offset = 0;
    for (name, net) in &snap.nets {
        let len = net.n_params();
        networks.push(NetHeader {
            name: name.clone(),
            sizes: net.sizes(),
            activations: net.layers.iter().map(|l| l.activation).collect(),
            offset,
            len,
        });
        offset += len;
    }
    let header = Header {
        format: FORMAT.into(),
        version: VERSION,
        networks,
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for (_, net) in &snap.nets {
        for p in net.params() {
            out.write_all(&p.to_le_bytes())?;
        }
    }
    out.flush()
}

pub fn read<R: Read>(input: R) -> Result<Snapshot, LearnerError> {
    let mut input = BufReader::new(input);
    let mut line = String::new();
    let bad = |m: String| LearnerError::Checkpoint(m);
    input.read_line(&mut line).map_err(|e| bad(e.to_string()))?;
    let header: Header = serde_json::from_str(line.trim_end()).map_err(|e| bad(format!("header: {e}")))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(bad(format!("unsupported format {} v{}", header.format, header.version)));
    }
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(|e| bad(e.to_string()))?;
    if bytes.len() % 8 != 0 {
        return Err(bad(format!("payload of {} bytes is not a whole number of f64", bytes.len())));
    }
    let payload: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let mut nets = Vec::new();
    for h in header.networks {
        let Some(values) = payload.get(h.offset..h.offset + h.len) else {
            return Err(bad(format!("{} extends past the payload", h.name)));
        };
        if h.activations.len() + 1 != h.sizes.len() || h.sizes.len() < 2 {
            return Err(bad(format!("{}: {} sizes for {} layers", h.name, h.sizes.len(), h.activations.len())));
        }
        let hidden = &h.activations[..h.activations.len() - 1];
        let mut net = Mlp::zeros(&h.sizes, hidden);
        if net.layers.last().map(|l| l.activation) != h.activations.last().copied() {
            return Err(bad(format!("{}: unsupported output activation", h.name)));
        }
        net.set_params(values).map_err(|e| bad(format!("{}: {e}", h.name)))?;
        nets.push((h.name, net));
    }
    Ok(Snapshot { nets })
}

pub fn save(snap: &Snapshot, path: &Path) -> Result<(), LearnerError> {
    let f = fs::File::create(path).map_err(io_err(path))?;
    write(snap, std::io::BufWriter::new(f)).map_err(io_err(path))
}

pub fn load(path: &Path) -> Result<Snapshot, LearnerError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    read(f)
}
