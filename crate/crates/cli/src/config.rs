//! `key = value` run configuration. The same format is written back as the
//! run manifest, so a manifest can be fed to `--config` to repeat a run.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mgcn::graph::{parse_label_list, EdgeLabel};
use mgcn::training::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub train_path: Option<PathBuf>,
    pub valid_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

fn parse_bool(value: &str) -> Result<bool, String> {
    match value {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected on/off, got `{value}`")),
    }
}

fn parse_num<T: std::str::FromStr>(value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| format!("`{value}`: {e}"))
}

fn parse_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty() && value != "none").then(|| PathBuf::from(value))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or("none".to_string(), |p| p.display().to_string())
}

pub fn graphs_to_string(graphs: &std::collections::BTreeSet<EdgeLabel>) -> String {
    graphs.iter().map(|l| l.name()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let t = &mut self.train;
        match key {
            "hidden" => t.model.hidden = parse_num(value)?,
            "layers" => t.model.layers = parse_num(value)?,
            "aggregation" => t.model.aggregation = parse_num(value)?,
            "encoder" => t.model.encoder = parse_num(value)?,
            "graphs" => t.model.graphs = parse_label_list(value).map_err(|e| e.to_string())?,
            "mean_neighbors" => t.model.mean_neighbors = parse_bool(value)?,
            "input_feeding" => t.model.input_feeding = parse_bool(value)?,
            "init_scale" => t.model.init_scale = parse_num(value)?,
            "learning_rate" => t.learning_rate = parse_num(value)?,
            "batch_size" => t.batch_size = parse_num(value)?,
            "beam" => t.beam = parse_num(value)?,
            "max_len" => t.max_len = parse_num(value)?,
            "seed" => t.seed = parse_num(value)?,
            "patience" => t.patience = parse_num(value)?,
            "min_delta" => t.min_delta = parse_num(value)?,
            "max_epochs" => t.max_epochs = parse_num(value)?,
            "delex" => t.delexicalize = parse_bool(value)?,
            "min_freq" => t.min_freq = parse_num(value)?,
            "clip_norm" => {
                t.clip_norm = if value == "none" {
                    None
                } else {
                    Some(parse_num(value)?)
                }
            }
            "train" => self.train_path = parse_path(value),
            "valid" => self.valid_path = parse_path(value),
            "test" => self.test_path = parse_path(value),
            "checkpoint" => self.checkpoint = parse_path(value),
            "output" => self.output = parse_path(value),
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, source: &Path) -> Result<(), String> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("{}:{}: expected `key = value`", source.display(), i + 1))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| format!("{}:{}: {e}", source.display(), i + 1))?;
        }
        Ok(())
    }

    /// Every effective value, in the format `apply_text` reads.
    pub fn manifest(&self) -> String {
        let t = &self.train;
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("hidden", t.model.hidden.to_string());
        put("layers", t.model.layers.to_string());
        put("aggregation", t.model.aggregation.to_string());
        put("encoder", t.model.encoder.to_string());
        put("graphs", graphs_to_string(&t.model.graphs));
        put("mean_neighbors", on_off(t.model.mean_neighbors));
        put("input_feeding", on_off(t.model.input_feeding));
        put("init_scale", t.model.init_scale.to_string());
        put("learning_rate", t.learning_rate.to_string());
        put("batch_size", t.batch_size.to_string());
        put("beam", t.beam.to_string());
        put("max_len", t.max_len.to_string());
        put("seed", t.seed.to_string());
        put("patience", t.patience.to_string());
        put("min_delta", t.min_delta.to_string());
        put("max_epochs", t.max_epochs.to_string());
        put("delex", on_off(t.delexicalize));
        put("min_freq", t.min_freq.to_string());
        put("clip_norm", t.clip_norm.map_or("none".into(), |c| c.to_string()));
        put("train", show_path(&self.train_path));
        put("valid", show_path(&self.valid_path));
        put("test", show_path(&self.test_path));
        put("checkpoint", show_path(&self.checkpoint));
        put("output", show_path(&self.output));
        out
    }
}

fn on_off(b: bool) -> String {
    if b { "on" } else { "off" }.to_string()
}
