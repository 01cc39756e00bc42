//! `NRNT1` checkpoints: a text header echoing the run configuration,
//! raw little-endian `f64` tensor blocks, and a CRC-32 trailer.
//!
//! ```text
//! NRNT1
//! [config]
//! <RunConfig::to_text>
//! [specs]
//! E = 2,64,8 hidden=leaky_relu(0.2) output=none
//! [state]
//! step = 120
//! scope = full
//! rng = <seed hex>:<stream>:<word pos>
//! opt.E = 120
//! [data]
//! block param E.w0 2x64
//! <2*64 little-endian f64>
//! ...
//! end
//! <crc32 of everything above, little-endian u32>
//! ```

use std::io::{Read, Write};
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bundle::{ModelBundle, NetworkId};
use crate::config::RunConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nets::Mlp;
use crate::optim::Optimizer;
use crate::tensor::Tensor;
use crate::training::{Optimizers, TrainScope, Trainer};

pub const MAGIC: &str = "NRNT1";

/// Everything needed to resume a run bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub bundle: ModelBundle,
    pub optimizers: Optimizers,
    pub rng: ChaCha8Rng,
    pub step: usize,
    pub scope: TrainScope,
}

fn err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn scope_name(scope: &TrainScope) -> Result<&'static str> {
    if *scope == TrainScope::full() {
        Ok("full")
    } else if *scope == TrainScope::interpolator_only() {
        Ok("interpolator")
    } else {
        Err(err(format!("cannot store training scope {scope:?}")))
    }
}

fn net_by_name(name: &str) -> Result<NetworkId> {
    NetworkId::ALL
        .into_iter()
        .find(|n| n.name() == name)
        .ok_or_else(|| err(format!("unknown network {name:?}")))
}

fn write_block(out: &mut Vec<u8>, label: &str, t: &Tensor) {
    let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
    out.extend_from_slice(format!("block {label} {}\n", dims.join("x")).as_bytes());
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn from_trainer(config: &RunConfig, trainer: &Trainer) -> Self {
        Self {
            config: config.clone(),
            bundle: trainer.bundle.clone(),
            optimizers: trainer.optimizers.clone(),
            rng: trainer.rng.clone(),
            step: trainer.step,
            scope: trainer.scope.clone(),
        }
    }

    /// Rebuilds a trainer that continues exactly where this checkpoint stopped.
    pub fn into_trainer(self, dataset: &Dataset) -> Result<Trainer> {
        let mut trainer = Trainer::with_rng(self.bundle, self.config.train.clone(), dataset, self.rng)?;
        trainer.optimizers = self.optimizers;
        trainer.step = self.step;
        trainer.set_scope(self.scope);
        Ok(trainer)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        let mut header = format!("{MAGIC}\n[config]\n{}[specs]\n", self.config.to_text());
        for id in NetworkId::ALL {
            let spec = self.bundle.network(id).spec();
            let widths: Vec<String> = spec.widths.iter().map(|w| w.to_string()).collect();
            header += &format!(
                "{} = {} hidden={} output={}\n",
                id.name(),
                widths.join(","),
                spec.hidden,
                spec.output
            );
        }
        let seed: String = self.rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
        header += &format!(
            "[state]\nstep = {}\nscope = {}\nrng = {seed}:{}:{}\n",
            self.step,
            scope_name(&self.scope)?,
            self.rng.get_stream(),
            self.rng.get_word_pos()
        );
        for (id, opt) in NetworkId::ALL.iter().zip(&self.optimizers.0) {
            header += &format!("opt.{} = {}\n", id.name(), opt.step);
        }
        header += "[data]\n";
        out.extend_from_slice(header.as_bytes());
        for id in NetworkId::ALL {
            let net = self.bundle.network(id);
            for (l, (w, b)) in net.weights().iter().zip(net.biases()).enumerate() {
                write_block(&mut out, &format!("param {}.w{l}", id.name()), w);
                write_block(&mut out, &format!("param {}.b{l}", id.name()), b);
            }
        }
        for (id, opt) in NetworkId::ALL.iter().zip(&self.optimizers.0) {
            for (k, (m, v)) in opt.first_moment.iter().zip(&opt.second_moment).enumerate() {
                write_block(&mut out, &format!("m {}.{k}", id.name()), m);
                write_block(&mut out, &format!("v {}.{k}", id.name()), v);
            }
        }
        out.extend_from_slice(b"end\n");
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    /// Parses a checkpoint, checking parameter shapes against its own
    /// configuration echo.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::parse(bytes, None)
    }

    /// Parses a checkpoint whose parameters must fit `config`'s model.
    pub fn from_bytes_with_config(bytes: &[u8], config: &RunConfig) -> Result<Self> {
        Self::parse(bytes, Some(config))
    }

    fn parse(bytes: &[u8], expect: Option<&RunConfig>) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 1 || &bytes[..MAGIC.len()] != MAGIC.as_bytes() {
            return Err(err("bad magic: not an NRNT1 checkpoint"));
        }
        if bytes.len() < MAGIC.len() + 5 {
            return Err(err("checksum mismatch: file is truncated"));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().unwrap());
        let actual = crc32fast::hash(body);
        if stored != actual {
            return Err(err(format!(
                "checksum mismatch: stored {stored:08x}, computed {actual:08x}"
            )));
        }
        let mut r = Reader { bytes: body, pos: 0 };
        r.line()?; // magic
        if r.line()? != "[config]" {
            return Err(err("missing [config] section"));
        }
        let mut config_text = String::new();
        loop {
            let line = r.line()?;
            if line == "[specs]" {
                break;
            }
            config_text += line;
            config_text.push('\n');
        }
        let config = RunConfig::parse(&config_text)?;
        let model_cfg = expect.unwrap_or(&config);
        while r.line()? != "[state]" {}

        let mut step = None;
        let mut scope = None;
        let mut rng = None;
        let mut opt_steps = vec![0u64; NetworkId::ALL.len()];
        loop {
            let line = r.line()?;
            if line == "[data]" {
                break;
            }
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| err(format!("bad state line {line:?}")))?;
            match k {
                "step" => step = Some(v.parse().map_err(|_| err(format!("bad step {v:?}")))?),
                "scope" => {
                    scope = Some(match v {
                        "full" => TrainScope::full(),
                        "interpolator" => TrainScope::interpolator_only(),
                        _ => return Err(err(format!("bad scope {v:?}"))),
                    })
                }
                "rng" => rng = Some(parse_rng(v)?),
                _ if k.starts_with("opt.") => {
                    let id = net_by_name(&k[4..])?;
                    let i = NetworkId::ALL.iter().position(|&n| n == id).unwrap();
                    opt_steps[i] = v.parse().map_err(|_| err(format!("bad optimizer step {v:?}")))?;
                }
                _ => return Err(err(format!("unknown state key {k:?}"))),
            }
        }

        let mut bundle = ModelBundle::init(
            model_cfg.model.clone(),
            model_cfg.kind,
            &mut ChaCha8Rng::seed_from_u64(0),
        )?;
        for id in NetworkId::ALL {
            let spec = bundle.network(id).spec().clone();
            let mut weights = Vec::new();
            let mut biases = Vec::new();
            for l in 0..spec.layers() {
                let w_shape = [spec.widths[l], spec.widths[l + 1]];
                weights.push(r.block(&format!("param {}.w{l}", id.name()), &w_shape)?);
                biases.push(r.block(&format!("param {}.b{l}", id.name()), &[1, spec.widths[l + 1]])?);
            }
            *bundle.network_mut(id) = Mlp::from_params(spec, weights, biases)?;
        }
        let mut optimizers = Optimizers::new(config.train.optimizer);
        for (i, id) in NetworkId::ALL.into_iter().enumerate() {
            let shapes: Vec<Vec<usize>> = bundle.network(id).params().iter().map(|p| p.shape().to_vec()).collect();
            let opt: &mut Optimizer = &mut optimizers.0[i];
            opt.step = opt_steps[i];
            if opt.step > 0 && r.peek_starts_with(&format!("block m {}.", id.name())) {
                for (k, shape) in shapes.iter().enumerate() {
                    opt.first_moment.push(r.block(&format!("m {}.{k}", id.name()), shape)?);
                    opt.second_moment.push(r.block(&format!("v {}.{k}", id.name()), shape)?);
                }
            }
        }
        if r.line()? != "end" || r.pos != body.len() {
            return Err(err("trailing data after the last block"));
        }
        let missing = |what: &str| err(format!("missing state entry {what:?}"));
        Ok(Self {
            config: expect.cloned().unwrap_or(config),
            bundle,
            optimizers,
            rng: rng.ok_or_else(|| missing("rng"))?,
            step: step.ok_or_else(|| missing("step"))?,
            scope: scope.ok_or_else(|| missing("scope"))?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_all(path)?)
    }

    pub fn load_with_config(path: &Path, config: &RunConfig) -> Result<Self> {
        Self::from_bytes_with_config(&read_all(path)?, config)
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    Ok(bytes)
}

fn parse_rng(v: &str) -> Result<ChaCha8Rng> {
    let bad = || err(format!("bad rng state {v:?}"));
    let mut parts = v.split(':');
    let (seed_hex, stream, word_pos) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
        (Some(a), Some(b), Some(c), None) => (a, b, c),
        _ => return Err(bad()),
    };
    if seed_hex.len() != 64 {
        return Err(bad());
    }
    let mut seed = [0u8; 32];
    for (i, byte) in seed.iter_mut().enumerate() {
        *byte = u8::from_str_radix(&seed_hex[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream.parse().map_err(|_| bad())?);
    rng.set_word_pos(word_pos.parse().map_err(|_| bad())?);
    Ok(rng)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn line(&mut self) -> Result<&'a str> {
        let rest = &self.bytes[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| err("unexpected end of checkpoint"))?;
        self.pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| err("header is not valid UTF-8"))
    }

    fn peek_starts_with(&self, prefix: &str) -> bool {
        self.bytes[self.pos..].starts_with(prefix.as_bytes())
    }

    fn block(&mut self, label: &str, expected: &[usize]) -> Result<Tensor> {
        let line = self.line()?;
        let rest = line
            .strip_prefix("block ")
            .and_then(|l| l.strip_prefix(label))
            .and_then(|l| l.strip_prefix(' '))
            .ok_or_else(|| err(format!("expected block {label:?}, found {line:?}")))?;
        let shape = rest
            .split('x')
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| err(format!("bad shape in {line:?}")))?;
        if shape != expected {
            return Err(err(format!(
                "{label}: checkpoint has shape {shape:?}, configuration expects {expected:?}"
            )));
        }
        let n: usize = shape.iter().product();
        let end = self.pos + 8 * n;
        if end > self.bytes.len() {
            return Err(err(format!("{label}: payload is truncated")));
        }
        let data = self.bytes[self.pos..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        self.pos = end;
        Ok(Tensor::new(shape, data)?)
    }
}
