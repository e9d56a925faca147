//! Flat `key = value` run configuration.
//!
//! ```text
//! # comments run to the end of the line
//! preset = desk
//! network.streams = max_pool, avg_pool, strided_conv
//! network.fusion_kind = width
//! train.epochs = 300
//! ```
//!
//! `preset` (only valid as the first key) picks the starting point; every
//! other key overrides one field. Stream entries take an optional `@scale`
//! suffix (`max_pool@2`), and `network.stream<s>.block<k>` replaces the
//! downsampler of one block of one stream.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Downsampler, NetworkConfig, StreamSpec};
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub num_ids: usize,
    pub frames_per_seq: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            num_ids: 20,
            frames_per_seq: 16,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub preset: String,
    pub network: NetworkConfig,
    pub training: TrainConfig,
    pub data: DataConfig,
    /// Seeds per ablation cell.
    pub seeds: usize,
}

pub const PRESETS: [&str; 6] = [
    "baseline",
    "two_stream_multiscale",
    "three_stream_multiscale",
    "desk",
    "two_stream_multiscale_desk",
    "three_stream_multiscale_desk",
];

impl RunConfig {
    /// Full-size presets train on the long schedule; `*desk` presets
    /// shrink the network and schedule for synthetic runs.
    pub fn preset(name: &str) -> Result<Self> {
        let network = NetworkConfig::preset(name)?;
        let training = if name.ends_with("desk") {
            TrainConfig::desk()
        } else {
            TrainConfig::full()
        };
        Ok(Self {
            preset: name.to_string(),
            network,
            training,
            data: DataConfig::default(),
            seeds: 3,
        })
    }

    /// `spec` is a preset name or the path of a config file.
    pub fn load(spec: &str) -> Result<Self> {
        if PRESETS.contains(&spec) {
            return Self::preset(spec);
        }
        let path = Path::new(spec);
        if !path.is_file() {
            return Err(Error::Config(format!(
                "`{spec}` is neither a preset ({}) nor a readable file",
                PRESETS.join(", ")
            )));
        }
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let entries = parse_lines(text)?;
        let mut rest = &entries[..];
        let mut cfg = match entries.first() {
            Some((_, k, v)) if k == "preset" => {
                rest = &entries[1..];
                Self::preset(v)?
            }
            _ => Self::preset("baseline")?,
        };
        for (line, key, value) in rest {
            cfg.set(key, value).map_err(|e| Error::Config(format!("line {line}: {e}")))?;
        }
        Ok(cfg)
    }

    /// Applies `key=value` overrides.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let n = &mut self.network;
        let t = &mut self.training;
        match key {
            "preset" => return Err(Error::Config("`preset` must be the first key".into())),
            "network.architecture" => n.architecture = value.parse()?,
            "network.streams" => n.streams = parse_streams(value)?,
            "network.fusion_kind" => n.fusion_kind = value.parse()?,
            "network.fusion_layer" => n.fusion_layer = num(key, value)?,
            "network.channels" => {
                let c = list::<usize>(key, value)?;
                n.channels = c
                    .try_into()
                    .map_err(|_| Error::Config(format!("{key} needs exactly 4 widths")))?;
            }
            "network.kernel" => n.kernel = num(key, value)?,
            "network.embedding_dim" => n.embedding_dim = num(key, value)?,
            "network.rnn_hidden" => n.rnn_hidden = num(key, value)?,
            "network.temporal_pool" => n.temporal_pool = value.parse()?,
            "network.input_channels" => n.input_channels = num(key, value)?,
            "network.input_extent" => n.input_extent = parse_extent(value)?,
            "network.trunk_downsampler" => n.trunk_downsampler = value.parse()?,
            "train.margin" => t.margin = num(key, value)?,
            "train.lr" => t.lr = num(key, value)?,
            "train.lr_decay_epoch" => t.lr_decay_epoch = num(key, value)?,
            "train.lr_decay_factor" => t.lr_decay_factor = num(key, value)?,
            "train.epochs" => t.epochs = num(key, value)?,
            "train.train_seq_len" => t.train_seq_len = num(key, value)?,
            "train.test_seq_len" => t.test_seq_len = num(key, value)?,
            "train.momentum" => t.momentum = num(key, value)?,
            "train.pairs_per_step" => t.pairs_per_step = num(key, value)?,
            "train.grad_clip" => {
                t.grad_clip = match value {
                    "none" => None,
                    v => Some(num(key, v)?),
                }
            }
            "train.seed" => t.seed = num(key, value)?,
            "data.num_ids" => self.data.num_ids = num(key, value)?,
            "data.frames_per_seq" => self.data.frames_per_seq = num(key, value)?,
            "data.seed" => self.data.seed = num(key, value)?,
            "experiment.seeds" => self.seeds = num(key, value)?,
            _ => return self.set_block_override(key, value),
        }
        Ok(())
    }

    fn set_block_override(&mut self, key: &str, value: &str) -> Result<()> {
        let unknown = || Error::Config(format!("unknown key `{key}`"));
        let rest = key.strip_prefix("network.stream").ok_or_else(unknown)?;
        let (s, block) = rest.split_once(".block").ok_or_else(unknown)?;
        let s: usize = s.parse().map_err(|_| unknown())?;
        let block: usize = block.parse().map_err(|_| unknown())?;
        let streams = self.network.streams.len();
        let spec = self
            .network
            .streams
            .get_mut(s)
            .ok_or_else(|| Error::Config(format!("`{key}`: only {streams} streams configured")))?;
        spec.overrides.retain(|(b, _)| *b != block);
        spec.overrides.push((block, value.parse()?));
        spec.overrides.sort_by_key(|(b, _)| *b);
        Ok(())
    }

    /// Every field, in a form [`RunConfig::parse`] reads back.
    pub fn to_text(&self) -> String {
        let n = &self.network;
        let t = &self.training;
        let streams: Vec<String> = n
            .streams
            .iter()
            .map(|s| {
                if s.scale == 1 {
                    s.downsampler.name().to_string()
                } else {
                    format!("{}@{}", s.downsampler.name(), s.scale)
                }
            })
            .collect();
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("preset", self.preset.clone());
        kv("network.architecture", n.architecture.name().into());
        kv("network.streams", streams.join(", "));
        kv("network.fusion_kind", n.fusion_kind.name().into());
        kv("network.fusion_layer", n.fusion_layer.to_string());
        kv(
            "network.channels",
            n.channels.iter().map(ToString::to_string).collect::<Vec<_>>().join(", "),
        );
        kv("network.kernel", n.kernel.to_string());
        kv("network.embedding_dim", n.embedding_dim.to_string());
        kv("network.rnn_hidden", n.rnn_hidden.to_string());
        kv("network.temporal_pool", n.temporal_pool.name().into());
        kv("network.input_channels", n.input_channels.to_string());
        kv("network.input_extent", format!("{}x{}", n.input_extent.0, n.input_extent.1));
        kv("network.trunk_downsampler", n.trunk_downsampler.name().into());
        for (s, spec) in n.streams.iter().enumerate() {
            for (b, d) in &spec.overrides {
                kv(&format!("network.stream{s}.block{b}"), d.name().into());
            }
        }
        kv("train.margin", t.margin.to_string());
        kv("train.lr", t.lr.to_string());
        kv("train.lr_decay_epoch", t.lr_decay_epoch.to_string());
        kv("train.lr_decay_factor", t.lr_decay_factor.to_string());
        kv("train.epochs", t.epochs.to_string());
        kv("train.train_seq_len", t.train_seq_len.to_string());
        kv("train.test_seq_len", t.test_seq_len.to_string());
        kv("train.momentum", t.momentum.to_string());
        kv("train.pairs_per_step", t.pairs_per_step.to_string());
        kv("train.grad_clip", t.grad_clip.map_or("none".to_string(), |c| c.to_string()));
        kv("train.seed", t.seed.to_string());
        kv("data.num_ids", self.data.num_ids.to_string());
        kv("data.frames_per_seq", self.data.frames_per_seq.to_string());
        kv("data.seed", self.data.seed.to_string());
        kv("experiment.seeds", self.seeds.to_string());
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.training.validate()?;
        if self.data.num_ids < 2 || self.data.frames_per_seq == 0 || self.seeds == 0 {
            return Err(Error::Config(
                "data needs at least 2 identities and 1 frame; experiments at least 1 seed".into(),
            ));
        }
        Ok(())
    }
}

fn parse_lines(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", k + 1)))?;
        out.push((k + 1, key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|v| num(key, v.trim())).collect()
}

fn parse_extent(value: &str) -> Result<(usize, usize)> {
    let (h, w) = value
        .split_once('x')
        .ok_or_else(|| Error::Config(format!("extent `{value}` is not HxW")))?;
    Ok((num("network.input_extent", h.trim())?, num("network.input_extent", w.trim())?))
}

fn parse_streams(value: &str) -> Result<Vec<StreamSpec>> {
    value
        .split(',')
        .map(|item| {
            let item = item.trim();
            let (name, scale) = match item.split_once('@') {
                Some((n, s)) => (n.trim(), num("network.streams", s.trim())?),
                None => (item, 1),
            };
            Ok(StreamSpec::scaled(Downsampler::from_str(name)?, scale))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::FusionKind;

    #[test]
    fn presets_and_overrides() {
        let mut c = RunConfig::load("desk").unwrap();
        assert_eq!(c.network.kernel, 3);
        assert_eq!(c.training.epochs, 300);
        c.apply_overrides(&["train.epochs=5", "network.fusion_kind = height"]).unwrap();
        assert_eq!(c.training.epochs, 5);
        assert_eq!(c.network.fusion_kind, FusionKind::Height);
        assert!(c.apply_overrides(&["bogus=1"]).is_err());
        assert!(c.apply_overrides(&["train.epochs"]).is_err());
        assert!(RunConfig::load("no_such_preset_or_file").is_err());
    }

    #[test]
    fn parse_file_text() {
        let text = "preset = desk  # start small\n\nnetwork.streams = max_pool, strided_conv@2\n\
                    network.stream1.block2 = dilated_avg\nnetwork.input_extent = 24x20\n";
        let c = RunConfig::parse(text).unwrap();
        assert_eq!(c.network.streams.len(), 2);
        assert_eq!(c.network.streams[1].scale, 2);
        assert_eq!(c.network.streams[1].downsampler_at(2), Downsampler::DilatedAvg);
        assert_eq!(c.network.input_extent, (24, 20));
        assert!(RunConfig::parse("train.epochs = 3\npreset = desk").is_err());
        assert!(RunConfig::parse("train.epochs 3").is_err());
        let err = RunConfig::parse("network.kernel = five").unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::preset("two_stream_multiscale_desk").unwrap();
        c.apply_overrides(&["network.stream0.block3=avg_pool", "train.lr=0.0125", "network.temporal_pool=attentive"])
            .unwrap();
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
        for p in PRESETS {
            let c = RunConfig::preset(p).unwrap();
            assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
            c.validate().unwrap();
        }
    }
}
