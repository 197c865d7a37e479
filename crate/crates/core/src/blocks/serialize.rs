//! Flat binary container for block parameters.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SPAB"
//! 4       4     version (u32 LE)
//! 8       4     kind word (u32 LE): bits 0..8 block kind, bits 8..16 SPA scale mode
//! 12      16    c, c_i, k, r (u32 LE each)
//! 28      ...   tensors as f64 LE, in `BlockParams::tensors` order
//! ```
//!
//! Kind tags: 0 SPA, 1 NL, 2 SE, 3 GC. For NL the `k` slot carries the key
//! dimension `d`. For SE/GC `c_i` is the bottleneck width and `k` is zero.

use std::io::{Read, Write};

use super::{BlockKind, BlockParams, GcBlockParams, NlBlockParams, ScaleMode, SeBlockParams, SpaBlockParams};
use crate::error::{Error, Result};
use crate::tensor::{ChannelMatrix, Conv1x1};

pub const MAGIC: &[u8; 4] = b"SPAB";
pub const VERSION: u32 = 1;
#[cfg(test)]
const HEADER_LEN: u64 = 28;

fn header_fields(params: &BlockParams) -> (u32, [usize; 4]) {
    match params {
        BlockParams::Spa(p) => (
            u32::from(p.scale_mode.tag()) << 8,
            [p.channels(), p.inner_channels(), p.k, 0],
        ),
        BlockParams::Nl(p) => (0, [p.channels(), p.inner_channels(), p.d, 0]),
        BlockParams::Se(p) => (0, [p.channels(), p.fc1.rows(), 0, p.reduction]),
        BlockParams::Gc(p) => (0, [p.channels(), p.bottleneck_in.rows(), 0, p.reduction]),
    }
}

pub fn write_params<W: Write>(params: &BlockParams, mut w: W) -> Result<()> {
    let (extra, dims) = header_fields(params);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(u32::from(params.kind().tag()) | extra).to_le_bytes())?;
    for d in dims {
        let d = u32::try_from(d).map_err(|_| Error::argument(format!("dimension {d} exceeds u32")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    for (_, t) in params.tensors() {
        for v in t {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::parse(
                self.pos as u64,
                format!(
                    "truncated {what}: need {n} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn floats(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let len = n
            .checked_mul(8)
            .ok_or_else(|| Error::parse(self.pos as u64, format!("{what} size overflows")))?;
        let b = self.take(len, what)?;
        Ok(b
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn matrix(&mut self, rows: usize, cols: usize, what: &str) -> Result<ChannelMatrix> {
        let offset = self.pos as u64;
        let data = self.floats(rows * cols, what)?;
        ChannelMatrix::new(rows, cols, data).map_err(|e| Error::parse(offset, e.to_string()))
    }

    fn conv(&mut self, out: usize, inp: usize, what: &str) -> Result<Conv1x1> {
        let weight = self.matrix(out, inp, what)?;
        let bias = self.floats(out, what)?;
        Ok(Conv1x1 { weight, bias })
    }
}

pub fn read_params<R: Read>(mut r: R) -> Result<BlockParams> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    if cur.take(4, "magic")? != MAGIC {
        return Err(Error::parse(0, "bad magic, expected \"SPAB\""));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::parse(4, format!("unsupported version {version}")));
    }
    let kind_word = cur.u32("kind")?;
    let kind = BlockKind::from_tag((kind_word & 0xFF) as u8)
        .ok_or_else(|| Error::parse(8, format!("unknown block kind tag {}", kind_word & 0xFF)))?;
    let mut dims = [0usize; 4];
    for (i, d) in dims.iter_mut().enumerate() {
        *d = cur.u32(["c", "c_i", "k", "r"][i])? as usize;
    }
    let [c, ci, k, r] = dims;
    if c == 0 || ci == 0 {
        return Err(Error::parse(12, "channel widths must be positive"));
    }
    let params = match kind {
        BlockKind::Spa => {
            let scale_mode = ScaleMode::from_tag(((kind_word >> 8) & 0xFF) as u8)
                .ok_or_else(|| Error::parse(8, "unknown scale mode tag"))?;
            if k == 0 {
                return Err(Error::parse(20, "SPA k must be positive"));
            }
            BlockParams::Spa(SpaBlockParams {
                theta: cur.conv(ci, c, "theta")?,
                g: cur.conv(ci, c, "g")?,
                w_z: cur.conv(c, ci, "w_z")?,
                k,
                scale_mode,
            })
        }
        BlockKind::Nl => {
            if k == 0 {
                return Err(Error::parse(20, "NL key dimension must be positive"));
            }
            BlockParams::Nl(NlBlockParams {
                theta: cur.conv(ci, c, "theta")?,
                phi: cur.conv(ci, c, "phi")?,
                g: cur.conv(ci, c, "g")?,
                w_z: cur.conv(c, ci, "w_z")?,
                d: k,
            })
        }
        BlockKind::Se => BlockParams::Se(SeBlockParams {
            fc1: cur.matrix(ci, c, "fc1")?,
            fc2: cur.matrix(c, ci, "fc2")?,
            reduction: r,
        }),
        BlockKind::Gc => BlockParams::Gc(GcBlockParams {
            mask: cur.conv(1, c, "mask")?,
            bottleneck_in: cur.matrix(ci, c, "bottleneck_in")?,
            bottleneck_out: cur.matrix(c, ci, "bottleneck_out")?,
            reduction: r,
        }),
    };
    if cur.pos != bytes.len() {
        return Err(Error::parse(
            cur.pos as u64,
            format!("{} trailing bytes", bytes.len() - cur.pos),
        ));
    }
    Ok(params)
}
