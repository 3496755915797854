//! Line-delimited JSON day logs, one request per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DayStream, Item, Request, EXPOSE_COUNT, N_ADS, N_RECS};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdRecord {
    id: u64,
    score: f64,
    ecpm: f64,
    price: f64,
    pctr: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecRecord {
    id: u64,
    score: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RequestRecord {
    index: u64,
    hour: u32,
    ads: Vec<AdRecord>,
    recs: Vec<RecRecord>,
}

/// Expected candidate counts and slot count for a loaded log.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LogSchema {
    pub n_ads: usize,
    pub n_recs: usize,
    pub expose_count: usize,
}

impl Default for LogSchema {
    fn default() -> Self {
        LogSchema {
            n_ads: N_ADS,
            n_recs: N_RECS,
            expose_count: EXPOSE_COUNT,
        }
    }
}

pub fn load_day_log(path: impl AsRef<Path>) -> Result<DayStream> {
    load_day_log_with(path, LogSchema::default())
}

/// Parses a day log, checking candidate counts against `schema`. The day id is
/// taken from the first run of digits in the file stem (0 when there is none).
pub fn load_day_log_with(path: impl AsRef<Path>, schema: LogSchema) -> Result<DayStream> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut requests = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RequestRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        let record = requests.len();
        if rec.ads.len() != schema.n_ads {
            return Err(Error::Schema {
                record,
                msg: format!("expected {} ads, found {}", schema.n_ads, rec.ads.len()),
            });
        }
        if rec.recs.len() != schema.n_recs {
            return Err(Error::Schema {
                record,
                msg: format!("expected {} recs, found {}", schema.n_recs, rec.recs.len()),
            });
        }
        let req = Request {
            index: rec.index,
            hour: rec.hour,
            ads: rec
                .ads
                .iter()
                .map(|a| Item::ad(a.id, a.score, a.ecpm, a.price, a.pctr))
                .collect(),
            recs: rec.recs.iter().map(|r| Item::rec(r.id, r.score)).collect(),
            expose_count: schema.expose_count,
        };
        for item in req.ads.iter().chain(&req.recs) {
            item.validate()
                .map_err(|msg| Error::Schema { record, msg })?;
        }
        requests.push(req);
    }
    let day = DayStream {
        day_id: day_id_from_path(path),
        requests,
    };
    day.validate()?;
    Ok(day)
}

fn day_id_from_path(path: &Path) -> u64 {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
    let digits: String = stem
        .chars()
        .skip_while(|c| !c.is_ascii_digit())
        .take_while(|c| c.is_ascii_digit())
        .collect();
    digits.parse().unwrap_or(0)
}

pub fn write_day_log(day: &DayStream, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in &day.requests {
        let rec = RequestRecord {
            index: r.index,
            hour: r.hour,
            ads: r
                .ads
                .iter()
                .map(|a| AdRecord {
                    id: a.id,
                    score: a.score,
                    ecpm: a.ecpm,
                    price: a.price,
                    pctr: a.pctr,
                })
                .collect(),
            recs: r
                .recs
                .iter()
                .map(|x| RecRecord {
                    id: x.id,
                    score: x.score,
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
