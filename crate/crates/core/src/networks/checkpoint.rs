//! Binary checkpoints: a key-value text header followed by little-endian
//! weight blobs in declaration order, plus an optional memory block.
//!
//! ```text
//! "PXADCKPT" | u32 version | u32 header_len | header (key = value lines)
//! for each parameter slot: u64 len | len × f32
//! [memory] "PXADMEM\0" | u32 version | u32 reserved | u64 k | u64 d | f64 gamma
//!          | k·d × f64 items | k × f64 counts | k·d × f64 sums
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use super::{
    Decoder, DecoderSpec, Discriminator, DiscriminatorSpec, Encoder, EncoderSpec,
    ImageReconstructionModule, ProxyExtractionModule,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::memory::MemoryBank;
use crate::nn::{Layer, Stack};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"PXADCKPT";
const MEMORY_MAGIC: &[u8; 8] = b"PXADMEM\0";
const VERSION: u32 = 1;

/// Free-form string metadata stored in the header.
pub type Metadata = BTreeMap<String, String>;

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn put_encoder(h: &mut Metadata, prefix: &str, s: &EncoderSpec) {
    h.insert(format!("{prefix}.in_channels"), s.in_channels.to_string());
    h.insert(format!("{prefix}.base_channels"), s.base_channels.to_string());
    h.insert(format!("{prefix}.n_downsamples"), s.n_downsamples.to_string());
    h.insert(format!("{prefix}.latent_dim"), s.latent_dim.to_string());
}

fn put_decoder(h: &mut Metadata, prefix: &str, s: &DecoderSpec) {
    h.insert(format!("{prefix}.out_channels"), s.out_channels.to_string());
    h.insert(format!("{prefix}.base_channels"), s.base_channels.to_string());
    h.insert(format!("{prefix}.n_upsamples"), s.n_upsamples.to_string());
    h.insert(format!("{prefix}.latent_dim"), s.latent_dim.to_string());
}

fn get_usize(h: &Metadata, key: &str) -> Result<usize> {
    h.get(key)
        .ok_or_else(|| bad(format!("header is missing {key}")))?
        .parse()
        .map_err(|_| bad(format!("header value for {key} is not an integer")))
}

fn get_encoder(h: &Metadata, prefix: &str) -> Result<EncoderSpec> {
    Ok(EncoderSpec {
        in_channels: get_usize(h, &format!("{prefix}.in_channels"))?,
        base_channels: get_usize(h, &format!("{prefix}.base_channels"))?,
        n_downsamples: get_usize(h, &format!("{prefix}.n_downsamples"))?,
        latent_dim: get_usize(h, &format!("{prefix}.latent_dim"))?,
    })
}

fn get_decoder(h: &Metadata, prefix: &str) -> Result<DecoderSpec> {
    Ok(DecoderSpec {
        out_channels: get_usize(h, &format!("{prefix}.out_channels"))?,
        base_channels: get_usize(h, &format!("{prefix}.base_channels"))?,
        n_upsamples: get_usize(h, &format!("{prefix}.n_upsamples"))?,
        latent_dim: get_usize(h, &format!("{prefix}.latent_dim"))?,
    })
}

fn encode_header(h: &Metadata) -> Result<String> {
    let mut out = String::new();
    for (k, v) in h {
        if k.contains('=') || k.contains('\n') || v.contains('\n') {
            return Err(bad(format!("header entry {k:?} cannot be encoded")));
        }
        out.push_str(&format!("{k} = {v}\n"));
    }
    Ok(out)
}

fn decode_header(text: &str) -> Result<Metadata> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (k, v) = l
                .split_once(" = ")
                .ok_or_else(|| bad(format!("malformed header line {l:?}")))?;
            Ok((k.to_string(), v.to_string()))
        })
        .collect()
}

fn write_stack(buf: &mut Vec<u8>, s: &Stack<f32>) {
    for p in s.params() {
        buf.extend_from_slice(&(p.len() as u64).to_le_bytes());
        for v in p {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn read_u32(r: &mut Cursor<&[u8]>) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| bad("truncated checkpoint"))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut Cursor<&[u8]>) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| bad("truncated checkpoint"))?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s(r: &mut Cursor<&[u8]>, n: usize) -> Result<Vec<f64>> {
    (0..n).map(|_| read_u64(r).map(f64::from_bits)).collect()
}

fn read_stack(r: &mut Cursor<&[u8]>, s: &mut Stack<f32>) -> Result<()> {
    for p in s.params_mut() {
        let n = read_u64(r)? as usize;
        if n != p.len() {
            return Err(bad(format!("weight blob has {n} values, expected {}", p.len())));
        }
        for v in p.iter_mut() {
            *v = f32::from_bits(read_u32(r)?);
        }
    }
    Ok(())
}

fn write_memory(buf: &mut Vec<u8>, m: &MemoryBank) {
    buf.extend_from_slice(MEMORY_MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    buf.extend_from_slice(&(m.k() as u64).to_le_bytes());
    buf.extend_from_slice(&(m.d() as u64).to_le_bytes());
    buf.extend_from_slice(&m.gamma().to_bits().to_le_bytes());
    for v in m.items().iter().chain(m.counts()).chain(m.sums()) {
        buf.extend_from_slice(&v.to_bits().to_le_bytes());
    }
}

fn read_memory(r: &mut Cursor<&[u8]>) -> Result<MemoryBank> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated memory block"))?;
    if &magic != MEMORY_MAGIC {
        return Err(bad("bad memory block magic"));
    }
    if read_u32(r)? != VERSION {
        return Err(bad("unsupported memory block version"));
    }
    read_u32(r)?;
    let k = read_u64(r)? as usize;
    let d = read_u64(r)? as usize;
    let gamma = f64::from_bits(read_u64(r)?);
    let items = read_f64s(r, k * d)?;
    let counts = read_f64s(r, k)?;
    let sums = read_f64s(r, k * d)?;
    let bank = MemoryBank::from_state(k, d, gamma, counts, sums)?;
    // Items are derived state; keep the stored bits authoritative.
    if bank.items().iter().zip(&items).any(|(a, b)| a.to_bits() != b.to_bits()) {
        return Err(bad("stored memory items disagree with counts and sums"));
    }
    Ok(bank)
}

fn write_file(path: &Path, header: &Metadata, body: Vec<u8>) -> Result<()> {
    let text = encode_header(header)?;
    let mut buf = Vec::with_capacity(body.len() + text.len() + 16);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(text.len() as u32).to_le_bytes());
    buf.extend_from_slice(text.as_bytes());
    buf.extend(body);
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, buf)?;
    Ok(())
}

fn read_file(bytes: &[u8]) -> Result<(Metadata, Cursor<&[u8]>)> {
    let mut r = Cursor::new(bytes);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("file too short"))?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let len = read_u32(&mut r)? as usize;
    let mut text = vec![0u8; len];
    r.read_exact(&mut text).map_err(|_| bad("truncated header"))?;
    let header = decode_header(std::str::from_utf8(&text).map_err(|_| bad("header is not UTF-8"))?)?;
    Ok((header, r))
}

fn finish(r: &Cursor<&[u8]>) -> Result<()> {
    if (r.position() as usize) != r.get_ref().len() {
        return Err(bad("trailing bytes after checkpoint payload"));
    }
    Ok(())
}

fn blank_rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0)
}

fn zero_like_encoder(spec: EncoderSpec) -> Encoder {
    Encoder {
        spec,
        net: zeroed(Encoder::new(spec, &mut blank_rng()).net),
    }
}

fn zeroed(mut s: Stack<f32>) -> Stack<f32> {
    for l in &mut s.layers {
        if let Layer::Conv(c) = l {
            c.weight.fill(0.0);
            c.bias.fill(0.0);
        }
    }
    s
}

pub fn save_proxy_module(path: &Path, pem: &ProxyExtractionModule, meta: &Metadata) -> Result<()> {
    let mut header = meta.clone();
    header.insert("kind".into(), "proxy".into());
    put_encoder(&mut header, "encoder", &pem.encoder.spec);
    put_decoder(&mut header, "decoder", &pem.decoder.spec);
    header.insert("has_memory".into(), pem.use_memory().to_string());
    let mut body = Vec::new();
    write_stack(&mut body, &pem.encoder.net);
    write_stack(&mut body, &pem.decoder.net);
    if let Some(m) = &pem.memory {
        write_memory(&mut body, m);
    }
    write_file(path, &header, body)
}

pub fn load_proxy_module(path: &Path) -> Result<(ProxyExtractionModule, Metadata)> {
    let bytes = fs::read(path)?;
    let (header, mut r) = read_file(&bytes)?;
    if header.get("kind").map(String::as_str) != Some("proxy") {
        return Err(bad(format!("{} is not a proxy-module checkpoint", path.display())));
    }
    let mut encoder = zero_like_encoder(get_encoder(&header, "encoder")?);
    let dspec = get_decoder(&header, "decoder")?;
    let mut decoder = Decoder {
        spec: dspec,
        net: zeroed(Decoder::new(dspec, &mut blank_rng()).net),
    };
    read_stack(&mut r, &mut encoder.net)?;
    read_stack(&mut r, &mut decoder.net)?;
    let memory = match header.get("has_memory").map(String::as_str) {
        Some("true") => Some(read_memory(&mut r)?),
        Some("false") => None,
        _ => return Err(bad("header is missing has_memory")),
    };
    finish(&r)?;
    let pem = ProxyExtractionModule::new(encoder, decoder, memory)?;
    Ok((pem, strip_reserved(header)))
}

pub fn save_recon_module(
    path: &Path,
    irm: &ImageReconstructionModule,
    disc: &Discriminator,
    meta: &Metadata,
) -> Result<()> {
    let mut header = meta.clone();
    header.insert("kind".into(), "recon".into());
    put_encoder(&mut header, "encoder", &irm.encoder.spec);
    put_decoder(&mut header, "decoder", &irm.decoder.spec);
    header.insert("disc.in_channels".into(), disc.spec.in_channels.to_string());
    header.insert("disc.base_channels".into(), disc.spec.base_channels.to_string());
    header.insert("disc.n_layers".into(), disc.spec.n_layers.to_string());
    let mut body = Vec::new();
    write_stack(&mut body, &irm.encoder.net);
    write_stack(&mut body, &irm.decoder.net);
    write_stack(&mut body, &disc.net);
    write_file(path, &header, body)
}

pub fn load_recon_module(path: &Path) -> Result<(ImageReconstructionModule, Discriminator, Metadata)> {
    let bytes = fs::read(path)?;
    let (header, mut r) = read_file(&bytes)?;
    if header.get("kind").map(String::as_str) != Some("recon") {
        return Err(bad(format!("{} is not a reconstruction checkpoint", path.display())));
    }
    let mut rng = blank_rng();
    let mut encoder = zero_like_encoder(get_encoder(&header, "encoder")?);
    let dspec = get_decoder(&header, "decoder")?;
    let mut decoder = Decoder {
        spec: dspec,
        net: zeroed(Decoder::new(dspec, &mut rng).net),
    };
    let disc_spec = DiscriminatorSpec {
        in_channels: get_usize(&header, "disc.in_channels")?,
        base_channels: get_usize(&header, "disc.base_channels")?,
        n_layers: get_usize(&header, "disc.n_layers")?,
    };
    let mut disc = Discriminator {
        spec: disc_spec,
        net: zeroed(Discriminator::new(disc_spec, &mut rng).net),
    };
    read_stack(&mut r, &mut encoder.net)?;
    read_stack(&mut r, &mut decoder.net)?;
    read_stack(&mut r, &mut disc.net)?;
    finish(&r)?;
    Ok((ImageReconstructionModule::new(encoder, decoder)?, disc, strip_reserved(header)))
}

fn strip_reserved(mut h: Metadata) -> Metadata {
    h.retain(|k, _| {
        k != "kind"
            && k != "has_memory"
            && !k.starts_with("encoder.")
            && !k.starts_with("decoder.")
            && !k.starts_with("disc.")
    });
    h
}
