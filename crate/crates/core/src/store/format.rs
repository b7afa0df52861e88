//! On-disk layout of a memory bank.
//!
//! ```text
//! "R2SB" | version u16 | modality u8 | key_dim u32 | value_len u32 | value_dim u32 | count u64
//! per entry: id_len u16 | id (UTF-8) | key (key_dim x f32) | value (value_len x value_dim x f32)
//! CRC32 (u32) over every preceding byte
//! ```
//!
//! All integers and floats are little-endian. A JSON manifest with the same stem and a
//! `.json` extension records the source description and build time.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::binio::{self, put_u32, put_u64, Reader};
use crate::error::{Error, Result};
use crate::store::{BankEntry, BankMeta, MemoryBank};
use crate::types::Modality;

pub const BANK_MAGIC: [u8; 4] = *b"R2SB";
pub const BANK_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankManifest {
    pub format: String,
    pub version: u16,
    pub modality: Modality,
    pub key_dim: usize,
    pub value_len: usize,
    pub value_dim: usize,
    pub count: u64,
    pub checksum: String,
    pub source: String,
    pub built_at_unix: u64,
}

pub(crate) fn encode_body(bank: &MemoryBank) -> Vec<u8> {
    let per_entry = 2 + 16 + 4 * (bank.key_dim + bank.value_len * bank.value_dim);
    let mut buf = Vec::with_capacity(27 + bank.entries.len() * per_entry);
    buf.extend_from_slice(&BANK_MAGIC);
    buf.extend_from_slice(&BANK_VERSION.to_le_bytes());
    buf.push(bank.modality.tag());
    put_u32(&mut buf, bank.key_dim as u32);
    put_u32(&mut buf, bank.value_len as u32);
    put_u32(&mut buf, bank.value_dim as u32);
    put_u64(&mut buf, bank.entries.len() as u64);
    for e in &bank.entries {
        binio::put_name(&mut buf, &e.id).expect("ids validated shorter than 64 KiB");
        for v in &e.key {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in &e.value {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

pub fn encode_bank(bank: &MemoryBank) -> Vec<u8> {
    binio::seal(encode_body(bank))
}

pub fn decode_bank(buf: &[u8], source: String) -> Result<MemoryBank> {
    let mut r = Reader::new(buf, "bank");
    let magic = r.array::<4>()?;
    if magic != BANK_MAGIC {
        return Err(Error::BadMagic {
            expected: BANK_MAGIC,
            found: magic,
        });
    }
    let version = r.u16()?;
    if version != BANK_VERSION {
        return Err(Error::Version {
            expected: BANK_VERSION,
            found: version,
        });
    }
    let tag = r.u8()?;
    let modality = Modality::from_tag(tag)
        .filter(|m| *m != Modality::Text)
        .ok_or_else(|| Error::Format(format!("unknown bank modality tag {tag}")))?;
    let key_dim = r.u32()? as usize;
    let value_len = r.u32()? as usize;
    let value_dim = r.u32()? as usize;
    let count = r.u64()?;

    let mut entries = Vec::new();
    for _ in 0..count {
        let id_len = r.u16()? as usize;
        let id = r.string(id_len)?;
        let key = r.f32s(key_dim)?;
        let value = r.f32s(value_len * value_dim)?;
        entries.push(BankEntry { id, key, value });
    }
    binio::verify_trailer(&mut r, buf)?;
    let checksum = u32::from_le_bytes(buf[buf.len() - 4..].try_into().expect("4 bytes"));
    Ok(MemoryBank {
        modality,
        key_dim,
        value_len,
        value_dim,
        entries,
        meta: BankMeta {
            source,
            count,
            checksum,
        },
    })
}

pub fn manifest_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn save_bank(bank: &MemoryBank, path: &Path) -> Result<()> {
    let bytes = encode_bank(bank);
    binio::write_file(path, &bytes)?;
    let manifest = BankManifest {
        format: String::from_utf8_lossy(&BANK_MAGIC).into_owned(),
        version: BANK_VERSION,
        modality: bank.modality,
        key_dim: bank.key_dim,
        value_len: bank.value_len,
        value_dim: bank.value_dim,
        count: bank.entries.len() as u64,
        checksum: format!("{:08x}", bank.meta.checksum),
        source: bank.meta.source.clone(),
        built_at_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    binio::write_file(&manifest_path(path), json.as_bytes())
}

/// Loads a bank; the manifest, when present, supplies the source description.
pub fn load_bank(path: &Path) -> Result<MemoryBank> {
    let bytes = binio::read_file(path)?;
    let source = match std::fs::read(manifest_path(path)) {
        Ok(raw) => serde_json::from_slice::<BankManifest>(&raw)?.source,
        Err(_) => String::new(),
    };
    decode_bank(&bytes, source)
}
