//! Plain-text checkpoint files.
//!
//! ```text
//! normjet-checkpoint 1
//! meta <key> <value>
//! ...
//! array <name> <rows> <cols>
//! <rows * cols column-major values, space separated>
//! ...
//! end
//! ```
//!
//! Values use the shortest representation that parses back to the same
//! `f64`, so a saved model reloads bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::neural::{Architecture, InitMode, ModelParams};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "normjet-checkpoint";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub config: TrainConfig,
    pub epoch: usize,
}

fn join(widths: &[usize]) -> String {
    widths
        .iter()
        .map(|w| w.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn init_name(mode: InitMode) -> &'static str {
    match mode {
        InitMode::Standard => "standard",
        InitMode::Baseline => "baseline",
    }
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut out = format!("{MAGIC} {CHECKPOINT_VERSION}\n");
        let meta = [
            ("order", c.order.to_string()),
            ("k", c.k.to_string()),
            ("patch_size", c.patch_size.to_string()),
            ("m", c.m.to_string()),
            ("force_center", c.force_center.to_string()),
            ("widths.qst", join(&c.arch.qst)),
            ("widths.features", join(&c.arch.features)),
            ("widths.head", join(&c.arch.head)),
            ("widths.update", join(&c.arch.update)),
            ("batch_size", c.batch_size.to_string()),
            ("learning_rate", c.learning_rate.to_string()),
            ("epochs", c.epochs.to_string()),
            ("alpha1", c.alpha1.to_string()),
            ("alpha2", c.alpha2.to_string()),
            ("seed", c.seed.to_string()),
            ("init", init_name(c.init).to_string()),
            ("frozen", super::format_subnets(&c.frozen)),
            ("epoch", self.epoch.to_string()),
        ];
        for (k, v) in meta {
            let _ = writeln!(out, "meta {k} {v}");
        }
        for a in self.params.arrays() {
            let _ = writeln!(out, "array {} {} {}", a.name, a.shape.0, a.shape.1);
            let values: Vec<String> = a.values.iter().map(|v| v.to_string()).collect();
            out.push_str(&values.join(" "));
            out.push('\n');
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        match lines.next() {
            Some((_, header)) if header == format!("{MAGIC} {CHECKPOINT_VERSION}") => {}
            Some((n, header)) if header.starts_with(MAGIC) => {
                return Err(parse_err(
                    n,
                    format!("unsupported checkpoint version in '{header}'"),
                ))
            }
            _ => return Err(parse_err(1, "not a checkpoint file".into())),
        }
        let mut meta = BTreeMap::new();
        let mut arrays: Vec<(usize, String, usize, usize, Vec<f64>)> = Vec::new();
        let mut ended = false;
        while let Some((n, line)) = lines.next() {
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("meta") => {
                    let key = parts
                        .next()
                        .ok_or_else(|| parse_err(n, "meta line without key".into()))?;
                    let value = parts.next().unwrap_or("");
                    meta.insert(key.to_string(), (n, value.to_string()));
                }
                Some("array") => {
                    let fields: Vec<&str> = parts.collect();
                    let [name, rows, cols] = fields[..] else {
                        return Err(parse_err(
                            n,
                            "array header needs name, rows and cols".into(),
                        ));
                    };
                    let dim = |s: &str| {
                        s.parse::<usize>()
                            .map_err(|_| parse_err(n, format!("bad dimension '{s}'")))
                    };
                    let (rows, cols) = (dim(rows)?, dim(cols)?);
                    let (vn, values_line) = lines
                        .next()
                        .ok_or_else(|| parse_err(n, "missing array values".into()))?;
                    let values = values_line
                        .split_whitespace()
                        .map(|t| {
                            t.parse::<f64>()
                                .map_err(|_| parse_err(vn, format!("bad number '{t}'")))
                        })
                        .collect::<Result<Vec<f64>>>()?;
                    if values.len() != rows * cols {
                        return Err(parse_err(
                            vn,
                            format!(
                                "array {name} has {} values, expected {}",
                                values.len(),
                                rows * cols
                            ),
                        ));
                    }
                    if values.iter().any(|v| !v.is_finite()) {
                        return Err(parse_err(vn, format!("array {name} has non-finite values")));
                    }
                    arrays.push((n, name.to_string(), rows, cols, values));
                }
                Some("end") => {
                    ended = true;
                    break;
                }
                None => {}
                Some(other) => return Err(parse_err(n, format!("unexpected record '{other}'"))),
            }
        }
        if !ended {
            return Err(parse_err(
                text.lines().count(),
                "checkpoint is truncated (no end marker)".into(),
            ));
        }

        let get = |key: &str| -> Result<(usize, String)> {
            meta.get(key)
                .cloned()
                .ok_or_else(|| parse_err(1, format!("missing metadata '{key}'")))
        };
        fn num<T: std::str::FromStr>(v: (usize, String), key: &str, path: &Path) -> Result<T> {
            v.1.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: v.0,
                message: format!("bad value '{}' for {key}", v.1),
            })
        }
        let widths = |key: &str| -> Result<Vec<usize>> {
            let (n, v) = get(key)?;
            v.split(',')
                .map(|w| {
                    w.parse()
                        .map_err(|_| parse_err(n, format!("bad width list '{v}'")))
                })
                .collect()
        };
        let arch = Architecture {
            qst: widths("widths.qst")?,
            features: widths("widths.features")?,
            head: widths("widths.head")?,
            update: widths("widths.update")?,
        };
        let init: InitMode = get("init")?.1.parse()?;
        let config = TrainConfig {
            batch_size: num(get("batch_size")?, "batch_size", path)?,
            learning_rate: num(get("learning_rate")?, "learning_rate", path)?,
            epochs: num(get("epochs")?, "epochs", path)?,
            alpha1: num(get("alpha1")?, "alpha1", path)?,
            alpha2: num(get("alpha2")?, "alpha2", path)?,
            k: num(get("k")?, "k", path)?,
            patch_size: num(get("patch_size")?, "patch_size", path)?,
            order: num(get("order")?, "order", path)?,
            m: num(get("m")?, "m", path)?,
            force_center: num(get("force_center")?, "force_center", path)?,
            seed: num(get("seed")?, "seed", path)?,
            arch,
            init,
            frozen: super::parse_subnets(&get("frozen")?.1)?,
        };
        config.validate()?;
        let epoch = num(get("epoch")?, "epoch", path)?;

        let mut params = ModelParams::init(&config.arch, 0, InitMode::Standard)?;
        let expected: Vec<(String, (usize, usize))> = params
            .arrays()
            .into_iter()
            .map(|a| (a.name, a.shape))
            .collect();
        if arrays.len() != expected.len() {
            return Err(parse_err(
                1,
                format!(
                    "checkpoint has {} arrays, the architecture needs {}",
                    arrays.len(),
                    expected.len()
                ),
            ));
        }
        for (slot, ((name, shape), (n, got_name, rows, cols, values))) in params
            .arrays_mut()
            .into_iter()
            .zip(expected.iter().zip(arrays))
        {
            if *name != got_name || *shape != (rows, cols) {
                return Err(parse_err(
                    n,
                    format!(
                        "expected array {name} {}x{}, found {got_name} {rows}x{cols}",
                        shape.0, shape.1
                    ),
                ));
            }
            slot.copy_from_slice(&values);
        }
        Ok(Checkpoint {
            params,
            config,
            epoch,
        })
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint.to_text()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_text(&text, path)
}
