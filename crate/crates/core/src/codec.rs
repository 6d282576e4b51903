//! Binary formats.
//!
//! `.sqz` (compressed model), all integers little-endian:
//!
//! ```text
//! "SQSM"  u16 version
//! u16 K   f64 nonzero   u64 seed
//! u32 D   D x u32 layer widths (input first)
//! per layer:
//!   u8 window strategy (0 equal, 1 outlier-aware)
//!   u8 cut count n, n x f64 cuts
//!   u8 window count w, w x u16 live components per window
//!   u16 C-1, C x f32 codebook means
//!   u32 L, L bytes index stream: ceil(log2 C) bits per live weight, flat order, LSB first
//!   ceil(params/8) bytes bitmap: bit i set when weight i survives, LSB first
//! u32 CRC-32 (IEEE) of every preceding byte
//! ```
//!
//! `.ckpt` (full-precision network): `"SQSN"`, u16 version, the same
//! architecture table, u64 count and that many f64 parameters in flat order,
//! CRC-32 footer.

use crate::bytes::{ByteReader, ByteWriter};
use crate::compressor::{index_bits, read_arch, write_arch, CompressedLayer, CompressedMeta, CompressedModel};
use crate::network::Network;
use crate::window::WindowStrategy;
use crate::{Error, Result};

pub const SQZ_MAGIC: &[u8; 4] = b"SQSM";
pub const SQZ_VERSION: u16 = 1;
pub const NET_MAGIC: &[u8; 4] = b"SQSN";
pub const NET_VERSION: u16 = 1;

/// Appends `width`-bit values LSB first.
#[derive(Debug, Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    bit: u64,
}

impl BitWriter {
    pub fn push(&mut self, value: u64, width: u32) {
        for b in 0..width {
            if self.bit.is_multiple_of(8) {
                self.bytes.push(0);
            }
            if (value >> b) & 1 == 1 {
                *self.bytes.last_mut().expect("byte allocated") |= 1 << (self.bit % 8);
            }
            self.bit += 1;
        }
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}

#[derive(Debug)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    bit: u64,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, bit: 0 }
    }

    pub fn read(&mut self, width: u32) -> Result<u64> {
        let mut v = 0u64;
        for b in 0..width {
            let byte = (self.bit / 8) as usize;
            let Some(&x) = self.bytes.get(byte) else {
                return Err(Error::Malformed("bit stream ended early".into()));
            };
            v |= (((x >> (self.bit % 8)) & 1) as u64) << b;
            self.bit += 1;
        }
        Ok(v)
    }
}

fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut w = BitWriter::default();
    for &b in bits {
        w.push(b as u64, 1);
    }
    w.into_bytes()
}

fn check_width(what: &str, n: usize, max: usize) -> Result<()> {
    if n > max {
        return Err(Error::Unsupported(format!("{what} = {n} exceeds the format limit {max}")));
    }
    Ok(())
}

fn finish(mut w: ByteWriter) -> Vec<u8> {
    let crc = crc32fast::hash(w.as_slice());
    w.u32(crc);
    w.into_inner()
}

/// Splits off and verifies the CRC footer after checking magic and version.
fn open<'a>(bytes: &'a [u8], magic: &[u8; 4], version: u16) -> Result<ByteReader<'a>> {
    if bytes.len() < 4 || &bytes[..4] != magic {
        return Err(if bytes.len() < 4 && magic.starts_with(bytes) {
            Error::Truncated { offset: bytes.len(), needed: 4 - bytes.len() }
        } else {
            Error::BadMagic
        });
    }
    if bytes.len() < 10 {
        return Err(Error::Truncated { offset: bytes.len(), needed: 10 - bytes.len() });
    }
    let v = u16::from_le_bytes([bytes[4], bytes[5]]);
    if v != version {
        return Err(Error::BadVersion(v));
    }
    let (body, footer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(footer.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let mut r = ByteReader::new(body);
    r.take(6)?;
    Ok(r)
}

pub fn encode(m: &CompressedModel) -> Result<Vec<u8>> {
    m.validate()?;
    let mut w = ByteWriter::new();
    w.bytes(SQZ_MAGIC);
    w.u16(SQZ_VERSION);
    w.u16(m.meta.k);
    w.f64(m.meta.nonzero);
    w.u64(m.meta.seed);
    write_arch(&mut w, &m.arch);
    for l in &m.layers {
        check_width("cut count", l.cuts.len(), u8::MAX as usize)?;
        check_width("window count", l.window_sizes.len(), u8::MAX as usize)?;
        w.u8(l.strategy.tag());
        w.u8(l.cuts.len() as u8);
        for &c in &l.cuts {
            w.f64(c);
        }
        w.u8(l.window_sizes.len() as u8);
        for &s in &l.window_sizes {
            check_width("window size", s as usize, u16::MAX as usize)?;
            w.u16(s as u16);
        }
        w.u16((l.codebook.len() - 1) as u16);
        for &c in &l.codebook {
            w.f32(c);
        }
        let width = l.index_bits();
        let mut bits = BitWriter::default();
        for &i in &l.indices {
            bits.push(i as u64, width);
        }
        let stream = bits.into_bytes();
        w.u32(stream.len() as u32);
        w.bytes(&stream);
        w.bytes(&pack_bits(&l.bitmap));
    }
    Ok(finish(w))
}

pub fn decode(bytes: &[u8]) -> Result<CompressedModel> {
    let mut r = open(bytes, SQZ_MAGIC, SQZ_VERSION)?;
    let meta = CompressedMeta { k: r.u16()?, nonzero: r.f64()?, seed: r.u64()? };
    let arch = read_arch(&mut r)?;
    let mut layers = Vec::with_capacity(arch.num_layers());
    for l in 0..arch.num_layers() {
        let strategy = WindowStrategy::from_tag(r.u8()?)
            .ok_or_else(|| Error::Malformed(format!("layer {l}: unknown window strategy")))?;
        let nc = r.u8()? as usize;
        let cuts = (0..nc).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let nw = r.u8()? as usize;
        let window_sizes = (0..nw).map(|_| r.u16().map(u32::from)).collect::<Result<Vec<_>>>()?;
        let c = r.u16()? as usize + 1;
        let codebook = (0..c).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        let len = r.u32()? as usize;
        let stream = r.take(len)?;
        let n = arch.layer_param_count(l);
        let bitmap_bytes = r.take(n.div_ceil(8))?;
        let mut br = BitReader::new(bitmap_bytes);
        let bitmap = (0..n).map(|_| br.read(1).map(|b| b == 1)).collect::<Result<Vec<_>>>()?;
        let live = bitmap.iter().filter(|&&b| b).count();
        let width = index_bits(c);
        if len != (live * width as usize).div_ceil(8) {
            return Err(Error::Malformed(format!("layer {l}: index stream length {len} for {live} weights")));
        }
        let mut ir = BitReader::new(stream);
        let indices = (0..live).map(|_| ir.read(width).map(|v| v as u32)).collect::<Result<Vec<_>>>()?;
        layers.push(CompressedLayer { strategy, cuts, window_sizes, codebook, bitmap, indices });
    }
    if r.remaining() != 0 {
        return Err(Error::Malformed("trailing bytes before checksum".into()));
    }
    let m = CompressedModel { arch, meta, layers };
    m.validate()?;
    Ok(m)
}

pub fn encode_network(net: &Network) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(NET_MAGIC);
    w.u16(NET_VERSION);
    write_arch(&mut w, net.architecture());
    w.f64s(&net.to_flat());
    finish(w)
}

pub fn decode_network(bytes: &[u8]) -> Result<Network> {
    let mut r = open(bytes, NET_MAGIC, NET_VERSION)?;
    let arch = read_arch(&mut r)?;
    let params = r.f64s()?;
    if r.remaining() != 0 {
        return Err(Error::Malformed("trailing bytes before checksum".into()));
    }
    if params.len() != arch.param_count() {
        return Err(Error::Malformed(format!(
            "{} parameters for an architecture with {}",
            params.len(),
            arch.param_count()
        )));
    }
    Network::from_flat(arch, &params)
}

/// Single-precision dense footprint: 4 bytes per parameter.
pub fn dense_size_bytes(net: &Network) -> u64 {
    4 * net.param_count() as u64
}

/// Encoded size of `m`. With `payload_only` only the per-layer codebooks,
/// index streams and bitmaps are counted.
pub fn compressed_size_bytes(m: &CompressedModel, payload_only: bool) -> Result<u64> {
    if payload_only {
        Ok(m.layers
            .iter()
            .map(|l| {
                let idx = (l.live() as u64 * l.index_bits() as u64).div_ceil(8);
                4 * l.codebook.len() as u64 + idx + (l.bitmap.len() as u64).div_ceil(8)
            })
            .sum())
    } else {
        Ok(encode(m)?.len() as u64)
    }
}
