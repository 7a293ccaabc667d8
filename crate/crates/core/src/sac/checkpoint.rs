//! Versioned little-endian snapshot of a [`SacAgent`].
//!
//! Layout: magic, version, SHA-256 of the config JSON, the five networks in
//! the order actor, critic 1, critic 2, target 1, target 2, the log
//! temperatures, the four optimizer states, step counters and the sampling
//! RNG position.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use sha2::{Digest, Sha256};

use super::agent::{SacAgent, SacConfig};
use super::nn::Params;
use super::optim::Optimizer;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MLOSAC\0\0";
const VERSION: u32 = 1;

fn config_digest(cfg: &SacConfig) -> Result<[u8; 32]> {
    Ok(Sha256::digest(serde_json::to_vec(cfg)?).into())
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn write_params<W: Write>(out: &mut W, p: &Params) -> Result<()> {
    out.write_u32::<LittleEndian>(p.0.len() as u32)?;
    for t in &p.0 {
        out.write_u32::<LittleEndian>(t.nrows() as u32)?;
        out.write_u32::<LittleEndian>(t.ncols() as u32)?;
        for &x in t.iter() {
            out.write_f64::<LittleEndian>(x)?;
        }
    }
    Ok(())
}

fn read_params<R: Read>(input: &mut R, like: &Params) -> Result<Params> {
    let n = input.read_u32::<LittleEndian>()? as usize;
    if n != like.0.len() {
        return Err(bad(format!("expected {} tensors, found {n}", like.0.len())));
    }
    let mut out = Vec::with_capacity(n);
    for expected in &like.0 {
        let rows = input.read_u32::<LittleEndian>()? as usize;
        let cols = input.read_u32::<LittleEndian>()? as usize;
        if (rows, cols) != expected.dim() {
            return Err(bad(format!("tensor shape ({rows}, {cols}), expected {:?}", expected.dim())));
        }
        let mut data = vec![0.0; rows * cols];
        input.read_f64_into::<LittleEndian>(&mut data)?;
        out.push(Array2::from_shape_vec((rows, cols), data).expect("length checked"));
    }
    Ok(Params(out))
}

fn write_opt<W: Write>(out: &mut W, o: &Optimizer) -> Result<()> {
    out.write_u64::<LittleEndian>(o.t)?;
    out.write_f64::<LittleEndian>(o.lr)?;
    write_params(out, &o.m)?;
    write_params(out, &o.v)
}

fn read_opt<R: Read>(input: &mut R, o: &mut Optimizer) -> Result<()> {
    o.t = input.read_u64::<LittleEndian>()?;
    o.lr = input.read_f64::<LittleEndian>()?;
    o.m = read_params(input, &o.m)?;
    o.v = read_params(input, &o.v)?;
    Ok(())
}

pub fn save<W: Write>(agent: &SacAgent, mut out: W) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_u32::<LittleEndian>(VERSION)?;
    out.write_all(&config_digest(&agent.cfg)?)?;
    for net in [&agent.actor, &agent.critic1, &agent.critic2, &agent.target1, &agent.target2] {
        write_params(&mut out, &net.params)?;
    }
    write_params(&mut out, &agent.log_alpha)?;
    for o in [&agent.actor_opt, &agent.critic1_opt, &agent.critic2_opt, &agent.alpha_opt] {
        write_opt(&mut out, o)?;
    }
    out.write_u64::<LittleEndian>(agent.steps)?;
    out.write_u64::<LittleEndian>(agent.updates)?;
    out.write_all(&agent.rng.get_seed())?;
    out.write_u64::<LittleEndian>(agent.rng.get_stream())?;
    out.write_u128::<LittleEndian>(agent.rng.get_word_pos())?;
    Ok(())
}

pub fn to_bytes(agent: &SacAgent) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    save(agent, &mut buf)?;
    Ok(buf)
}

/// Restores an agent; `cfg` must be the configuration it was saved with.
pub fn load<R: Read>(mut input: R, cfg: SacConfig) -> Result<SacAgent> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint"));
    }
    let version = input.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let mut digest = [0u8; 32];
    input.read_exact(&mut digest)?;
    if digest != config_digest(&cfg)? {
        return Err(bad("checkpoint was written with a different config"));
    }
    let mut agent = SacAgent::new(cfg, 0)?;
    for net in [&mut agent.actor, &mut agent.critic1, &mut agent.critic2, &mut agent.target1, &mut agent.target2] {
        net.params = read_params(&mut input, &net.params)?;
    }
    agent.log_alpha = read_params(&mut input, &agent.log_alpha)?;
    for o in [&mut agent.actor_opt, &mut agent.critic1_opt, &mut agent.critic2_opt, &mut agent.alpha_opt] {
        read_opt(&mut input, o)?;
    }
    agent.steps = input.read_u64::<LittleEndian>()?;
    agent.updates = input.read_u64::<LittleEndian>()?;
    let mut seed = [0u8; 32];
    input.read_exact(&mut seed)?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(input.read_u64::<LittleEndian>()?);
    rng.set_word_pos(input.read_u128::<LittleEndian>()?);
    agent.rng = rng;
    Ok(agent)
}
