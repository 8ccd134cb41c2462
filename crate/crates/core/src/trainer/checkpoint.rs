//! Plain-text checkpoints. Reals are written with 17 significant digits,
//! which round-trips every `f64` exactly.

use std::fmt::Write as _;
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use super::config::{TrainConfig, KEYS};
use crate::curriculum::Advancement;
use crate::error::{Error, Result};
use crate::seed::{rng_from_hex, rng_to_hex};
use crate::tensor::{Matrix, ParamStore};

pub const MAGIC: &str = "strokeforge-checkpoint v1";

/// Loop counters and running sums needed to continue a run exactly.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TrainState {
    pub points: u64,
    pub epoch: u64,
    /// Batches already done in the current epoch.
    pub cursor: u64,
    pub batches: u64,
    pub epoch_sse: f64,
    pub epoch_points: u64,
    /// Training sums since the last metrics record.
    pub window_sse: f64,
    pub window_loss: f64,
    pub window_points: u64,
    /// Points at the last metrics record.
    pub last_record: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: ParamStore,
    pub adam_step: u64,
    pub adam_m: ParamStore,
    pub adam_v: ParamStore,
    /// Shuffle generator of the current epoch.
    pub rng: ChaCha8Rng,
    pub state: TrainState,
    pub curriculum_limit: usize,
    pub curriculum_log: Vec<Advancement>,
}

fn real(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_store(out: &mut String, tag: &str, store: &ParamStore) {
    for (name, m) in store.iter() {
        let _ = writeln!(out, "{tag} {name} {} {}", m.rows(), m.cols());
        for r in 0..m.rows() {
            let row: Vec<String> = m.row(r).iter().map(|&v| real(v)).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
    }
}

fn limit_text(limit: usize) -> String {
    if limit == usize::MAX {
        "inf".into()
    } else {
        limit.to_string()
    }
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let s = &self.state;
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        out.push_str(&self.config.to_text());
        let log: Vec<String> = self
            .curriculum_log
            .iter()
            .map(|a| format!("{}:{}", a.points, a.limit))
            .collect();
        let fields = [
            ("points", s.points.to_string()),
            ("epoch", s.epoch.to_string()),
            ("cursor", s.cursor.to_string()),
            ("batches", s.batches.to_string()),
            ("epoch_sse", real(s.epoch_sse)),
            ("epoch_points", s.epoch_points.to_string()),
            ("window_sse", real(s.window_sse)),
            ("window_loss", real(s.window_loss)),
            ("window_points", s.window_points.to_string()),
            (
                "last_record",
                s.last_record.map_or("none".into(), |p| p.to_string()),
            ),
            ("curriculum_limit", limit_text(self.curriculum_limit)),
            (
                "curriculum_log",
                if log.is_empty() {
                    "-".into()
                } else {
                    log.join(" ")
                },
            ),
            ("adam_step", self.adam_step.to_string()),
        ];
        for (k, v) in fields {
            let _ = writeln!(out, "{k} = {v}");
        }
        write_store(&mut out, "param", &self.params);
        write_store(&mut out, "adam_m", &self.adam_m);
        write_store(&mut out, "adam_v", &self.adam_v);
        let _ = writeln!(out, "rng {}", rng_to_hex(&self.rng));
        out.push_str("end\n");
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Checkpoint(format!("line {line}: {msg}"));
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, MAGIC)) => {}
            Some((_, other)) => {
                return Err(Error::Checkpoint(format!(
                    "unsupported header {other:?}, expected {MAGIC:?}"
                )))
            }
            None => return Err(Error::Checkpoint("empty file".into())),
        }

        let mut config = TrainConfig::default();
        let mut config_pairs = Vec::new();
        let mut state = TrainState::default();
        let mut curriculum_limit = None;
        let mut curriculum_log = Vec::new();
        let mut adam_step = None;
        let mut stores = [ParamStore::new(), ParamStore::new(), ParamStore::new()];
        let mut rng = None;
        let mut ended = false;

        let num = |line: usize, v: &str| -> Result<u64> {
            v.parse()
                .map_err(|_| err(line, format!("bad integer {v:?}")))
        };
        let flt = |line: usize, v: &str| -> Result<f64> {
            v.parse().map_err(|_| err(line, format!("bad real {v:?}")))
        };

        while let Some((n, line)) = lines.next() {
            if ended {
                return Err(err(n, "content after end marker".into()));
            }
            if line == "end" {
                ended = true;
                continue;
            }
            if let Some((k, v)) = line.split_once(" = ") {
                let (k, v) = (k.trim(), v.trim());
                match k {
                    _ if KEYS.contains(&k) => config_pairs.push((k.to_string(), v.to_string())),
                    "points" => state.points = num(n, v)?,
                    "epoch" => state.epoch = num(n, v)?,
                    "cursor" => state.cursor = num(n, v)?,
                    "batches" => state.batches = num(n, v)?,
                    "epoch_sse" => state.epoch_sse = flt(n, v)?,
                    "epoch_points" => state.epoch_points = num(n, v)?,
                    "window_sse" => state.window_sse = flt(n, v)?,
                    "window_loss" => state.window_loss = flt(n, v)?,
                    "window_points" => state.window_points = num(n, v)?,
                    "last_record" => {
                        state.last_record = if v == "none" { None } else { Some(num(n, v)?) }
                    }
                    "curriculum_limit" => {
                        curriculum_limit = Some(if v == "inf" {
                            usize::MAX
                        } else {
                            num(n, v)? as usize
                        })
                    }
                    "curriculum_log" if v != "-" => {
                        for entry in v.split_whitespace() {
                            let (p, l) = entry
                                .split_once(':')
                                .ok_or_else(|| err(n, format!("bad log entry {entry:?}")))?;
                            curriculum_log.push(Advancement {
                                points: num(n, p)?,
                                limit: num(n, l)? as usize,
                            });
                        }
                    }
                    "curriculum_log" => {}
                    "adam_step" => adam_step = Some(num(n, v)?),
                    _ => return Err(err(n, format!("unknown key {k:?}"))),
                }
                continue;
            }
            let words: Vec<&str> = line.split_whitespace().collect();
            match words.as_slice() {
                [tag @ ("param" | "adam_m" | "adam_v"), name, rows, cols] => {
                    let rows = num(n, rows)? as usize;
                    let cols = num(n, cols)? as usize;
                    let mut data = Vec::with_capacity(rows * cols);
                    for _ in 0..rows {
                        let (rn, row) = lines
                            .next()
                            .ok_or_else(|| err(n, format!("{name} is truncated")))?;
                        let before = data.len();
                        for w in row.split_whitespace() {
                            data.push(flt(rn, w)?);
                        }
                        if data.len() - before != cols {
                            return Err(err(rn, format!("{name}: expected {cols} values per row")));
                        }
                    }
                    let m = Matrix::from_vec(rows, cols, data)?;
                    let slot = match *tag {
                        "param" => 0,
                        "adam_m" => 1,
                        _ => 2,
                    };
                    stores[slot].insert(*name, m)?;
                }
                ["rng", hex] => {
                    rng = Some(rng_from_hex(hex).ok_or_else(|| err(n, "bad rng state".into()))?);
                }
                _ => return Err(err(n, format!("unexpected line {line:?}"))),
            }
        }
        if !ended {
            return Err(Error::Checkpoint(
                "missing end marker (truncated file?)".into(),
            ));
        }
        config_pairs.sort_by_key(|(k, _)| k == "beta");
        for (k, v) in config_pairs {
            config.set(&k, &v)?;
        }
        let [params, adam_m, adam_v] = stores;
        let missing = |what: &str| Error::Checkpoint(format!("missing {what}"));
        Ok(Self {
            config,
            params,
            adam_step: adam_step.ok_or_else(|| missing("adam_step"))?,
            adam_m,
            adam_v,
            rng: rng.ok_or_else(|| missing("rng"))?,
            state,
            curriculum_limit: curriculum_limit.ok_or_else(|| missing("curriculum_limit"))?,
            curriculum_log,
        })
    }

    /// Written to a sibling temporary file first, then renamed into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_text()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}
