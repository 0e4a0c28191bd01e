use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::backbone::{BackboneConfig, Depth};
use super::model::{ModelParams, ScoreNorm, ScoreSource};
use super::train::Strategy;
use crate::error::{Error, Result};
use crate::imaging::ChannelStats;

const MAGIC: &[u8; 4] = b"HYRK";
const VERSION: u32 = 1;
const KIND_PARAM: u8 = 0;
const KIND_BUFFER: u8 = 1;

/// A trained model together with how it was produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub strategy: Strategy,
    pub stage: u8,
}

impl Checkpoint {
    /// Path of the text summary written next to `path`.
    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".txt");
        PathBuf::from(s)
    }

    /// `key=value` lines describing the checkpoint.
    pub fn summary(&self) -> String {
        let p = &self.params;
        let mut lines = vec![
            format!("format=HYRK/{VERSION}"),
            format!("depth={}", p.backbone.depth),
            format!("feature_dim={}", p.backbone.feature_dim),
            format!("input_side={}", p.backbone.input_side),
            format!("strategy={}", self.strategy),
            format!("stage={}", self.stage),
            format!("hybrid={}", p.hybrid),
            format!("parameters={}", p.set.param_count()),
            format!("fingerprint={}", p.fingerprint()),
            format!("channel_mean={}", join(&p.stats.mean)),
            format!("channel_std={}", join(&p.stats.std)),
        ];
        if let Some(n) = &p.score_norm {
            lines.push(format!("score_source={}", n.source));
            lines.push(format!("score_min={}", n.min));
            lines.push(format!("score_max={}", n.max));
        }
        lines.join("\n") + "\n"
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",")
}

/// Writes the binary checkpoint and its text sidecar.
pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    encode(&mut w, ckpt).map_err(io)?;
    w.flush().map_err(io)?;
    let side = Checkpoint::sidecar_path(path);
    std::fs::write(&side, ckpt.summary()).map_err(|e| Error::io(&side, e))
}

fn write_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_u32::<LE>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn encode(w: &mut impl Write, ckpt: &Checkpoint) -> std::io::Result<()> {
    let p = &ckpt.params;
    w.write_all(MAGIC)?;
    w.write_u32::<LE>(VERSION)?;
    w.write_u32::<LE>(p.backbone.depth.code())?;
    w.write_u32::<LE>(p.backbone.feature_dim as u32)?;
    w.write_u32::<LE>(p.backbone.input_side as u32)?;
    w.write_u32::<LE>(ckpt.strategy.code())?;
    w.write_u8(ckpt.stage)?;
    w.write_u8(u8::from(p.hybrid))?;
    w.write_u32::<LE>(p.stats.mean.len() as u32)?;
    for v in p.stats.mean.iter().chain(&p.stats.std) {
        w.write_f64::<LE>(*v)?;
    }
    match &p.score_norm {
        None => w.write_u8(0)?,
        Some(n) => {
            w.write_u8(1)?;
            write_str(w, &n.source.name())?;
            w.write_f64::<LE>(n.min)?;
            w.write_f64::<LE>(n.max)?;
        }
    }
    w.write_all(p.fingerprint().as_bytes())?;
    let tensors: Vec<_> = p
        .set
        .params
        .iter()
        .map(|t| (KIND_PARAM, t))
        .chain(p.set.buffers.iter().map(|t| (KIND_BUFFER, t)))
        .collect();
    w.write_u32::<LE>(tensors.len() as u32)?;
    let mut offset = 0u64;
    for (kind, t) in &tensors {
        w.write_u8(*kind)?;
        write_str(w, &t.name)?;
        w.write_u32::<LE>(t.shape.len() as u32)?;
        for d in &t.shape {
            w.write_u32::<LE>(*d as u32)?;
        }
        w.write_u64::<LE>(offset)?;
        offset += t.data.len() as u64;
    }
    w.write_u64::<LE>(offset)?;
    for (_, t) in &tensors {
        for v in &t.data {
            w.write_f64::<LE>(*v)?;
        }
    }
    Ok(())
}

/// Reads a checkpoint, checking its layout against the architecture it
/// declares and its stored fingerprint.
pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let ckpt = decode(&mut r, path)?;
    let mut rest = [0u8; 1];
    match r.read(&mut rest) {
        Ok(0) => Ok(ckpt),
        Ok(_) => Err(Error::format(path, "trailing bytes after weight blob")),
        Err(e) => Err(Error::io(path, e)),
    }
}

fn decode(r: &mut impl Read, path: &Path) -> Result<Checkpoint> {
    let bad = |detail: String| Error::format(path, detail);
    let eof = |e: std::io::Error| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::format(path, "file is truncated")
        } else {
            Error::io(path, e)
        }
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(eof)?;
    if &magic != MAGIC {
        return Err(bad("not a HYRK checkpoint".into()));
    }
    let version = r.read_u32::<LE>().map_err(eof)?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let depth_code = r.read_u32::<LE>().map_err(eof)?;
    let depth = Depth::from_code(depth_code).ok_or_else(|| bad(format!("unknown depth code {depth_code}")))?;
    let feature_dim = r.read_u32::<LE>().map_err(eof)? as usize;
    let input_side = r.read_u32::<LE>().map_err(eof)? as usize;
    let strategy_code = r.read_u32::<LE>().map_err(eof)?;
    let strategy =
        Strategy::from_code(strategy_code).ok_or_else(|| bad(format!("unknown strategy code {strategy_code}")))?;
    let stage = r.read_u8().map_err(eof)?;
    let hybrid = match r.read_u8().map_err(eof)? {
        0 => false,
        1 => true,
        v => return Err(bad(format!("invalid hybrid flag {v}"))),
    };
    let channels = r.read_u32::<LE>().map_err(eof)? as usize;
    if channels != 3 {
        return Err(bad(format!("expected 3 normalization channels, found {channels}")));
    }
    let mut stats_raw = vec![0.0; 2 * channels];
    r.read_f64_into::<LE>(&mut stats_raw).map_err(eof)?;
    let stats = ChannelStats { mean: stats_raw[..channels].to_vec(), std: stats_raw[channels..].to_vec() };
    let score_norm = match r.read_u8().map_err(eof)? {
        0 => None,
        1 => {
            let source: ScoreSource = read_str(r, path)?.parse().map_err(|_| bad("invalid score source".into()))?;
            let min = r.read_f64::<LE>().map_err(eof)?;
            let max = r.read_f64::<LE>().map_err(eof)?;
            Some(ScoreNorm { source, min, max })
        }
        v => return Err(bad(format!("invalid score-range flag {v}"))),
    };
    let mut fp = [0u8; 16];
    r.read_exact(&mut fp).map_err(eof)?;

    let backbone = BackboneConfig { depth, feature_dim, input_side };
    let mut params = ModelParams::empty(backbone, hybrid).map_err(|e| bad(format!("invalid architecture: {e}")))?;
    params.stats = stats;
    params.score_norm = score_norm;

    let count = r.read_u32::<LE>().map_err(eof)? as usize;
    let expected = params.set.params.len() + params.set.buffers.len();
    if count != expected {
        return Err(bad(format!("{count} tensors in index, architecture has {expected}")));
    }
    let mut offset = 0u64;
    for i in 0..count {
        let kind = r.read_u8().map_err(eof)?;
        let name = read_str(r, path)?;
        let ndim = r.read_u32::<LE>().map_err(eof)? as usize;
        if ndim > 8 {
            return Err(bad(format!("tensor {name:?} has {ndim} dimensions")));
        }
        let mut shape = vec![0usize; ndim];
        for d in shape.iter_mut() {
            *d = r.read_u32::<LE>().map_err(eof)? as usize;
        }
        let at = r.read_u64::<LE>().map_err(eof)?;
        let (want_kind, t) = if i < params.set.params.len() {
            (KIND_PARAM, &params.set.params[i])
        } else {
            (KIND_BUFFER, &params.set.buffers[i - params.set.params.len()])
        };
        if kind != want_kind || name != t.name || shape != t.shape || at != offset {
            return Err(bad(format!("tensor index entry {i} ({name:?}) does not match the architecture")));
        }
        offset += t.data.len() as u64;
    }
    let blob_len = r.read_u64::<LE>().map_err(eof)?;
    if blob_len != offset {
        return Err(bad(format!("weight blob holds {blob_len} values, index needs {offset}")));
    }
    for t in params.set.params.iter_mut().chain(params.set.buffers.iter_mut()) {
        r.read_f64_into::<LE>(&mut t.data).map_err(eof)?;
    }
    let stored = String::from_utf8_lossy(&fp).into_owned();
    if stored != params.fingerprint() {
        return Err(bad(format!("fingerprint {stored} does not match contents ({})", params.fingerprint())));
    }
    Ok(Checkpoint { params, strategy, stage })
}

fn read_str(r: &mut impl Read, path: &Path) -> Result<String> {
    let len = r.read_u32::<LE>().map_err(|e| Error::io(path, e))? as usize;
    if len > 4096 {
        return Err(Error::format(path, format!("string length {len} is implausible")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(|_| Error::format(path, "file is truncated"))?;
    String::from_utf8(buf).map_err(|_| Error::format(path, "string is not UTF-8"))
}
