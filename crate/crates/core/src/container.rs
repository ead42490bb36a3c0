//! `.gk` kernel container.
//!
//! Layout, all fields little-endian u32 unless noted:
//!
//! ```text
//! "GK01"
//! regs_per_thread, shared_bytes, code_len, entry
//! static_ssy_depth, uses_mad, max_reg_used (0xFFFFFFFF when none)
//! histogram[27]
//! name_len, name bytes (UTF-8)
//! code bytes
//! ```

use thiserror::Error;

use crate::isa::Opcode;
use crate::kasm::{analyze, KasmError, Kernel, KernelImage, KernelMetadata};

pub const MAGIC: &[u8; 4] = b"GK01";
const NO_REG: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContainerError {
    #[error("bad magic")]
    BadMagic,
    #[error("truncated container at byte {0}")]
    Truncated(usize),
    #[error("{0} trailing bytes after code")]
    TrailingBytes(usize),
    #[error("kernel name is not UTF-8")]
    BadName,
    #[error("stored metadata does not match the code")]
    MetadataMismatch,
    #[error("{0}")]
    Kernel(#[from] KasmError),
}

pub fn write(image: &KernelImage, meta: &KernelMetadata) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 4 * Opcode::COUNT + image.name.len() + image.code.len());
    out.extend_from_slice(MAGIC);
    let mut put = |v: u32| out.extend_from_slice(&v.to_le_bytes());
    put(image.regs_per_thread);
    put(image.shared_bytes);
    put(image.code.len() as u32);
    put(image.entry);
    put(meta.static_ssy_depth);
    put(meta.uses_mad as u32);
    put(meta.max_reg_used.map_or(NO_REG, u32::from));
    for &h in &meta.histogram {
        put(h);
    }
    put(image.name.len() as u32);
    out.extend_from_slice(image.name.as_bytes());
    out.extend_from_slice(&image.code);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], ContainerError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(ContainerError::Truncated(self.bytes.len()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Parses and validates a container, checking its metadata against the code.
pub fn read(bytes: &[u8]) -> Result<Kernel, ContainerError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).map_err(|_| ContainerError::BadMagic)? != MAGIC {
        return Err(ContainerError::BadMagic);
    }
    let regs_per_thread = r.u32()?;
    let shared_bytes = r.u32()?;
    let code_len = r.u32()? as usize;
    let entry = r.u32()?;
    let static_ssy_depth = r.u32()?;
    let uses_mad = r.u32()? != 0;
    let max_reg_used = match r.u32()? {
        NO_REG => None,
        v => Some(u8::try_from(v).map_err(|_| ContainerError::MetadataMismatch)?),
    };
    let mut histogram = [0u32; Opcode::COUNT];
    for h in &mut histogram {
        *h = r.u32()?;
    }
    let name_len = r.u32()? as usize;
    let name = std::str::from_utf8(r.take(name_len)?)
        .map_err(|_| ContainerError::BadName)?
        .to_string();
    let code = r.take(code_len)?.to_vec();
    if r.pos != bytes.len() {
        return Err(ContainerError::TrailingBytes(bytes.len() - r.pos));
    }
    let stored = KernelMetadata {
        histogram,
        uses_mad,
        static_ssy_depth,
        max_reg_used,
    };
    let image = KernelImage {
        name,
        code,
        entry,
        regs_per_thread,
        shared_bytes,
        symbols: Default::default(),
    };
    image.validate()?;
    if analyze(&image).map_err(KasmError::from)? != stored {
        return Err(ContainerError::MetadataMismatch);
    }
    Ok(Kernel::new(image)?)
}
