//! Binary checkpoint container.
//!
//! Layout (little endian): magic `JALA-CKP`, version `u32`, phase, config hash,
//! step `u64`, tokenizer digest, named parameter stores, optimizer step and
//! moments, named rng states, a JSON history blob, then a SHA-256 of all
//! preceding bytes.

use std::collections::BTreeMap;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};

use crate::backend::{ParamStore, RngState, Tensor};
use crate::error::{Error, Result};
use crate::io::{expect_magic, read_store, read_str, write_store, write_str};

pub const CKPT_MAGIC: &[u8; 8] = b"JALA-CKP";
pub const CKPT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub phase: String,
    pub config_hash: String,
    pub step: u64,
    pub tokenizer_digest: String,
    pub stores: Vec<(String, ParamStore)>,
    pub opt_step: u64,
    pub opt_first: BTreeMap<String, Tensor>,
    pub opt_second: BTreeMap<String, Tensor>,
    pub rngs: Vec<(String, RngState)>,
    pub history: String,
}

fn to_store(m: &BTreeMap<String, Tensor>) -> ParamStore {
    let mut s = ParamStore::new();
    for (k, v) in m {
        s.insert(k.clone(), v.clone());
    }
    s
}

fn from_store(s: ParamStore) -> BTreeMap<String, Tensor> {
    s.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
}

impl Checkpoint {
    pub fn store(&self, name: &str) -> Result<&ParamStore> {
        self.stores
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter tree `{name}`")))
    }

    pub fn rng(&self, name: &str) -> Result<RngState> {
        self.rngs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| *s)
            .ok_or_else(|| Error::Checkpoint(format!("missing rng state `{name}`")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Vec::new();
        w.write_all(CKPT_MAGIC)?;
        w.write_u32::<LE>(CKPT_VERSION)?;
        write_str(&mut w, &self.phase)?;
        write_str(&mut w, &self.config_hash)?;
        w.write_u64::<LE>(self.step)?;
        write_str(&mut w, &self.tokenizer_digest)?;
        w.write_u32::<LE>(self.stores.len() as u32)?;
        for (name, s) in &self.stores {
            write_str(&mut w, name)?;
            write_store(&mut w, s)?;
        }
        w.write_u64::<LE>(self.opt_step)?;
        write_store(&mut w, &to_store(&self.opt_first))?;
        write_store(&mut w, &to_store(&self.opt_second))?;
        w.write_u32::<LE>(self.rngs.len() as u32)?;
        for (name, r) in &self.rngs {
            write_str(&mut w, name)?;
            w.write_u64::<LE>(r.seed)?;
            w.write_u64::<LE>(r.stream)?;
            w.write_u128::<LE>(r.word_pos)?;
        }
        write_str(&mut w, &self.history)?;
        let digest = Sha256::digest(&w);
        w.extend_from_slice(&digest);
        Ok(w)
    }

    /// Parses and verifies a checkpoint. With `expected_hash`, a different
    /// recorded config hash is refused.
    pub fn from_bytes(bytes: &[u8], expected_hash: Option<&str>) -> Result<Self> {
        if bytes.len() < 8 + 32 {
            return Err(Error::Checkpoint("file too short".into()));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 32);
        let mut r = Cursor::new(body);
        expect_magic(&mut r, CKPT_MAGIC)?;
        let version = r.read_u32::<LE>()?;
        if version != CKPT_VERSION {
            return Err(Error::Checkpoint(format!("format version {version}, expected {CKPT_VERSION}")));
        }
        if Sha256::digest(body).as_slice() != trailer {
            return Err(Error::Checkpoint("content digest mismatch".into()));
        }
        let phase = read_str(&mut r)?;
        let config_hash = read_str(&mut r)?;
        if let Some(want) = expected_hash {
            if want != config_hash {
                return Err(Error::Checkpoint(format!("config hash {config_hash} does not match the current config {want}")));
            }
        }
        let step = r.read_u64::<LE>()?;
        let tokenizer_digest = read_str(&mut r)?;
        let n = r.read_u32::<LE>()?;
        let mut stores = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let name = read_str(&mut r)?;
            stores.push((name, read_store(&mut r)?));
        }
        let opt_step = r.read_u64::<LE>()?;
        let opt_first = from_store(read_store(&mut r)?);
        let opt_second = from_store(read_store(&mut r)?);
        let n = r.read_u32::<LE>()?;
        let mut rngs = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let name = read_str(&mut r)?;
            let seed = r.read_u64::<LE>()?;
            let stream = r.read_u64::<LE>()?;
            let word_pos = r.read_u128::<LE>()?;
            rngs.push((name, RngState { seed, stream, word_pos }));
        }
        let history = read_str(&mut r)?;
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
        }
        Ok(Self { phase, config_hash, step, tokenizer_digest, stores, opt_step, opt_first, opt_second, rngs, history })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path, expected_hash: Option<&str>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes, expected_hash)
    }

    /// Short identifier derived from the serialized bytes.
    pub fn id(&self) -> Result<String> {
        Ok(hex::encode(&Sha256::digest(self.to_bytes()?)[..8]))
    }
}
