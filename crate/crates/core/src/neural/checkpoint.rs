//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "EXITNN1"                       7 magic bytes
//! u32 board size
//! u8  heads (0 = policy, 1 = policy+value)
//! u64 init seed
//! u8  variance rescale flag
//! u32 layer count, then per layer: u8 kind (0 padded hex, 1 valid hex, 2 pointwise), u32 filters
//! u32 tensor count, then per tensor:
//!     u32 name length, name bytes (UTF-8)
//!     u32 rank, u32 per dimension
//!     f32 values, row-major
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{ConvKind, Heads, LayerSpec, Network, NetworkConfig, Params, Tensor};
use crate::error::{ExitError, Result};

pub const MAGIC: &[u8; 7] = b"EXITNN1";

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn to_bytes(net: &Network) -> Vec<u8> {
    let cfg = net.config();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, cfg.board_size);
    out.push(match cfg.heads {
        Heads::Policy => 0,
        Heads::PolicyValue => 1,
    });
    out.extend_from_slice(&cfg.init_seed.to_le_bytes());
    out.push(u8::from(cfg.variance_rescale));
    put_u32(&mut out, cfg.layers.len());
    for layer in &cfg.layers {
        out.push(layer.kind.code());
        put_u32(&mut out, layer.filters);
    }
    let params = net.params();
    put_u32(&mut out, params.tensors.len());
    for t in &params.tensors {
        put_u32(&mut out, t.name.len());
        out.extend_from_slice(t.name.as_bytes());
        put_u32(&mut out, t.shape.len());
        for &d in &t.shape {
            put_u32(&mut out, d);
        }
        for &x in &t.data {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(ExitError::Format(format!("checkpoint truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }

    fn f32(&mut self) -> Result<f32> {
        let b = self.take(4)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(ExitError::Format("not an EXITNN1 checkpoint".into()));
    }
    let board_size = r.u32()?;
    let heads = match r.u8()? {
        0 => Heads::Policy,
        1 => Heads::PolicyValue,
        other => return Err(ExitError::Format(format!("unknown heads code {other}"))),
    };
    let init_seed = r.u64()?;
    let variance_rescale = r.u8()? != 0;
    let layer_count = r.u32()?;
    let mut layers = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let code = r.u8()?;
        let kind = ConvKind::from_code(code).ok_or_else(|| ExitError::Format(format!("unknown layer kind {code}")))?;
        layers.push(LayerSpec { kind, filters: r.u32()? });
    }
    let tensor_count = r.u32()?;
    let mut tensors = Vec::with_capacity(tensor_count);
    for _ in 0..tensor_count {
        let name_len = r.u32()?;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| ExitError::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| r.f32().map(f64::from)).collect::<Result<Vec<_>>>()?;
        tensors.push(Tensor { name, shape, data });
    }
    if r.pos != bytes.len() {
        return Err(ExitError::Format(format!("{} trailing bytes after checkpoint", bytes.len() - r.pos)));
    }
    let config = NetworkConfig { board_size, layers, heads, init_seed, variance_rescale };
    Network::from_params(config, Params { tensors })
}

pub fn save(net: &Network, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&to_bytes(net))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Network> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_byte_identical() {
        let net = Network::new(NetworkConfig::desk(4).with_heads(Heads::PolicyValue).with_seed(9)).unwrap();
        let bytes = to_bytes(&net);
        assert_eq!(&bytes[..7], b"EXITNN1");
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(to_bytes(&back), bytes);
        assert_eq!(back.config(), net.config());
        let mut q = net.params().clone();
        q.quantize_f32();
        assert_eq!(back.params(), &q);
    }

    #[test]
    fn rejects_garbage() {
        assert!(from_bytes(b"EXITNN2....").is_err());
        let net = Network::new(NetworkConfig::desk(3)).unwrap();
        let bytes = to_bytes(&net);
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(from_bytes(&longer).is_err());
    }
}
