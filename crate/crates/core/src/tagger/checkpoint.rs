//! Parameter checkpoints: a text header of config fields terminated by an
//! `end` line, then every block as raw little-endian `f64`s in block order.

use std::io::{BufRead, Write};

use super::{Block, TaggerConfig, TaggerParams};
use crate::error::{Error, Result};

const MAGIC: &str = "SCDL-TAGGER 1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: TaggerParams,
    /// Entity type names of the tag vocabulary the model was trained with.
    pub entity_types: Vec<String>,
}

pub fn write_checkpoint<W: Write>(out: &mut W, checkpoint: &Checkpoint) -> std::io::Result<()> {
    let cfg = checkpoint.params.config();
    writeln!(out, "{MAGIC}")?;
    writeln!(out, "vocab_hash_buckets={}", cfg.vocab_hash_buckets)?;
    writeln!(out, "embed_dim={}", cfg.embed_dim)?;
    writeln!(out, "window={}", cfg.window)?;
    writeln!(out, "hidden_dim={}", cfg.hidden_dim)?;
    writeln!(out, "num_tags={}", cfg.num_tags)?;
    writeln!(out, "init_seed={}", cfg.init_seed)?;
    writeln!(out, "init_scale={}", cfg.init_scale)?;
    writeln!(out, "entity_types={}", checkpoint.entity_types.join(","))?;
    let blocks: Vec<String> = Block::ALL
        .iter()
        .map(|&b| format!("{}:{}", b.name(), cfg.block_len(b)))
        .collect();
    writeln!(out, "blocks={}", blocks.join(","))?;
    writeln!(out, "end")?;
    let mut bytes = Vec::with_capacity(checkpoint.params.len() * 8);
    for v in checkpoint.params.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&bytes)
}

fn header_err(line: usize, message: impl Into<String>) -> Error {
    Error::Format {
        line,
        message: message.into(),
    }
}

pub fn read_checkpoint<R: BufRead>(input: &mut R) -> Result<Checkpoint> {
    let io = |e| Error::io("<checkpoint>", e);
    let mut line = String::new();
    input.read_line(&mut line).map_err(io)?;
    if line.trim_end() != MAGIC {
        return Err(header_err(1, format!("expected {MAGIC:?} header")));
    }
    let mut cfg = TaggerConfig::default();
    let mut entity_types = Vec::new();
    let mut blocks = None;
    let mut line_no = 1;
    loop {
        line.clear();
        line_no += 1;
        if input.read_line(&mut line).map_err(io)? == 0 {
            return Err(header_err(line_no, "header not terminated"));
        }
        let text = line.trim_end();
        if text == "end" {
            break;
        }
        let (key, value) = text
            .split_once('=')
            .ok_or_else(|| header_err(line_no, "expected key=value"))?;
        let parse_usize = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| header_err(line_no, format!("bad integer for {key}")))
        };
        match key {
            "vocab_hash_buckets" => cfg.vocab_hash_buckets = parse_usize(value)?,
            "embed_dim" => cfg.embed_dim = parse_usize(value)?,
            "window" => cfg.window = parse_usize(value)?,
            "hidden_dim" => cfg.hidden_dim = parse_usize(value)?,
            "num_tags" => cfg.num_tags = parse_usize(value)?,
            "init_seed" => {
                cfg.init_seed = value
                    .parse()
                    .map_err(|_| header_err(line_no, "bad init_seed"))?
            }
            "init_scale" => {
                cfg.init_scale = value
                    .parse()
                    .map_err(|_| header_err(line_no, "bad init_scale"))?
            }
            "entity_types" => {
                entity_types = value
                    .split(',')
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect()
            }
            "blocks" => blocks = Some(value.to_string()),
            other => return Err(header_err(line_no, format!("unknown header key {other:?}"))),
        }
    }
    cfg.validate()?;
    let expected: Vec<String> = Block::ALL
        .iter()
        .map(|&b| format!("{}:{}", b.name(), cfg.block_len(b)))
        .collect();
    if blocks.as_deref() != Some(expected.join(",").as_str()) {
        return Err(header_err(line_no, "block table does not match config"));
    }
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(io)?;
    if bytes.len() != cfg.num_params() * 8 {
        return Err(Error::Shape(format!(
            "checkpoint holds {} bytes, expected {}",
            bytes.len(),
            cfg.num_params() * 8
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Checkpoint {
        params: TaggerParams::from_values(cfg, values)?,
        entity_types,
    })
}
