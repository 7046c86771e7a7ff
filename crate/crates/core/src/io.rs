//! Persistence: MDP and policy JSON documents, dataset CSV and binary
//! containers, bound breakdowns.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::bounds::BoundBreakdown;
use crate::error::{Error, Result};
use crate::mdp::{Mdp, Policy};
use crate::sampling::{Dataset, DatasetMeta, Step};
use crate::scalar::Real;

const MAGIC: &[u8; 4] = b"OPDS";
const VERSION: u32 = 1;

fn json_error(e: serde_json::Error) -> Error {
    if e.is_io() {
        return Error::Io(e.into());
    }
    Error::Parse {
        location: format!("line {}, column {}", e.line(), e.column()),
        message: e.to_string(),
    }
}

pub fn from_json_str<D: DeserializeOwned>(text: &str) -> Result<D> {
    serde_json::from_str(text).map_err(json_error)
}

pub fn to_json_string<S: Serialize>(value: &S) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(json_error)
}

pub fn read_json<D: DeserializeOwned>(path: &Path) -> Result<D> {
    from_json_str(&fs::read_to_string(path)?)
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = to_json_string(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn load_mdp<T: Real>(path: &Path) -> Result<Mdp<T>> {
    read_json(path)
}

pub fn save_mdp<T: Real>(path: &Path, m: &Mdp<T>) -> Result<()> {
    write_json(path, m)
}

pub fn load_policy<T: Real>(path: &Path) -> Result<Policy<T>> {
    read_json(path)
}

pub fn save_policy<T: Real>(path: &Path, pi: &Policy<T>) -> Result<()> {
    write_json(path, pi)
}

fn meta_line(meta: &DatasetMeta) -> String {
    format!(
        "# n={},H={},S={},A={},seed={}",
        meta.n, meta.horizon, meta.num_states, meta.num_actions, meta.seed
    )
}

fn parse_meta(line: &str) -> Result<DatasetMeta> {
    let bad = |msg: String| Error::Parse {
        location: "line 1".into(),
        message: msg,
    };
    let body = line
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| bad("missing '# n=..,H=..,S=..,A=..,seed=..' header".into()))?;
    let mut fields = [None; 5];
    for part in body.split(',') {
        let (k, v) = part
            .trim()
            .split_once('=')
            .ok_or_else(|| bad(format!("malformed header field '{part}'")))?;
        let idx = match k.trim() {
            "n" => 0,
            "H" => 1,
            "S" => 2,
            "A" => 3,
            "seed" => 4,
            other => return Err(bad(format!("unknown header field '{other}'"))),
        };
        let v: u64 = v.trim().parse().map_err(|e| bad(format!("header field '{k}': {e}")))?;
        fields[idx] = Some(v);
    }
    let get = |i: usize, name: &str| fields[i].ok_or_else(|| bad(format!("header lacks '{name}'")));
    Ok(DatasetMeta {
        n: get(0, "n")? as usize,
        horizon: get(1, "H")? as usize,
        num_states: get(2, "S")? as usize,
        num_actions: get(3, "A")? as usize,
        seed: get(4, "seed")?,
    })
}

/// Writes the dataset as CSV: a `# n=..` header line, then
/// `episode,h,s,a,r,s_next` rows with 0-based `h`.
pub fn write_dataset_csv<T: Real, W: Write>(d: &Dataset<T>, out: W) -> Result<()> {
    let mut out = out;
    writeln!(out, "{}", meta_line(&d.meta()))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["episode", "h", "s", "a", "r", "s_next"]).map_err(csv_error)?;
    for (e, ep) in d.episodes().enumerate() {
        for (h, st) in ep.iter().enumerate() {
            w.write_record(&[
                e.to_string(),
                h.to_string(),
                st.s.to_string(),
                st.a.to_string(),
                st.r.as_f64().to_string(),
                st.s_next.to_string(),
            ])
            .map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    let location = match e.position() {
        Some(p) => format!("line {}, record {}", p.line(), p.record()),
        None => "unknown position".into(),
    };
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Parse {
            location,
            message: format!("{kind:?}"),
        },
    }
}

#[derive(serde::Deserialize)]
struct CsvRow {
    episode: usize,
    h: usize,
    s: usize,
    a: usize,
    r: f64,
    s_next: usize,
}

pub fn read_dataset_csv<T: Real, R: Read>(input: R) -> Result<Dataset<T>> {
    let mut reader = BufReader::new(input);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let meta = parse_meta(&first)?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
    let mut steps = Vec::with_capacity(meta.n * meta.horizon);
    for (i, row) in rdr.deserialize::<CsvRow>().enumerate() {
        let row = row.map_err(|e| {
            let mut err = csv_error(e);
            if let Error::Parse { location, .. } = &mut err {
                *location = format!("{location} (file line {})", i + 3);
            }
            err
        })?;
        let (expect_e, expect_h) = (i / meta.horizon.max(1), i % meta.horizon.max(1));
        if row.episode != expect_e || row.h != expect_h {
            return Err(Error::Parse {
                location: format!("line {}", i + 3),
                message: format!(
                    "expected episode {expect_e} step {expect_h}, found episode {} step {}",
                    row.episode, row.h
                ),
            });
        }
        steps.push(Step {
            s: row.s,
            a: row.a,
            r: T::lit(row.r),
            s_next: row.s_next,
        });
    }
    Dataset::new(meta, steps)
}

pub fn save_dataset_csv<T: Real>(path: &Path, d: &Dataset<T>) -> Result<()> {
    let f = fs::File::create(path)?;
    write_dataset_csv(d, std::io::BufWriter::new(f))
}

pub fn load_dataset_csv<T: Real>(path: &Path) -> Result<Dataset<T>> {
    read_dataset_csv(fs::File::open(path)?)
}

/// Little-endian container: magic `OPDS`, version, `n` (u64), `H`, `S`, `A`
/// (u32), seed (u64), then per step `s`, `a` (u32), `r` (f64), `s_next` (u32).
pub fn write_dataset_binary<T: Real, W: Write>(d: &Dataset<T>, mut out: W) -> Result<()> {
    let meta = d.meta();
    out.write_all(MAGIC)?;
    out.write_u32::<LittleEndian>(VERSION)?;
    out.write_u64::<LittleEndian>(meta.n as u64)?;
    out.write_u32::<LittleEndian>(meta.horizon as u32)?;
    out.write_u32::<LittleEndian>(meta.num_states as u32)?;
    out.write_u32::<LittleEndian>(meta.num_actions as u32)?;
    out.write_u64::<LittleEndian>(meta.seed)?;
    for st in d.steps() {
        out.write_u32::<LittleEndian>(st.s as u32)?;
        out.write_u32::<LittleEndian>(st.a as u32)?;
        out.write_f64::<LittleEndian>(st.r.as_f64())?;
        out.write_u32::<LittleEndian>(st.s_next as u32)?;
    }
    out.flush()?;
    Ok(())
}

struct Counting<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Read for Counting<R> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let k = self.inner.read(buf)?;
        self.offset += k as u64;
        Ok(k)
    }
}

pub fn read_dataset_binary<T: Real, R: Read>(input: R) -> Result<Dataset<T>> {
    let mut r = Counting {
        inner: BufReader::new(input),
        offset: 0,
    };
    let fail = |offset: u64, message: String| Error::Parse {
        location: format!("byte {offset}"),
        message,
    };
    let truncated = |offset: u64, e: std::io::Error| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            fail(offset, "unexpected end of data".into())
        } else {
            Error::Io(e)
        }
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| truncated(r.offset, e))?;
    if &magic != MAGIC {
        return Err(fail(0, "not an offline dataset container (bad magic)".into()));
    }
    let version = r.read_u32::<LittleEndian>().map_err(|e| truncated(r.offset, e))?;
    if version != VERSION {
        return Err(fail(4, format!("unsupported version {version}")));
    }
    let n = r.read_u64::<LittleEndian>().map_err(|e| truncated(r.offset, e))? as usize;
    let horizon = r.read_u32::<LittleEndian>().map_err(|e| truncated(r.offset, e))? as usize;
    let num_states = r.read_u32::<LittleEndian>().map_err(|e| truncated(r.offset, e))? as usize;
    let num_actions = r.read_u32::<LittleEndian>().map_err(|e| truncated(r.offset, e))? as usize;
    let seed = r.read_u64::<LittleEndian>().map_err(|e| truncated(r.offset, e))?;
    let meta = DatasetMeta {
        n,
        horizon,
        num_states,
        num_actions,
        seed,
    };
    let total = n.checked_mul(horizon).ok_or_else(|| fail(8, "n * H overflows".into()))?;
    let mut steps = Vec::with_capacity(total.min(1 << 24));
    for _ in 0..total {
        let s = r.read_u32::<LittleEndian>().map_err(|e| truncated(r.offset, e))? as usize;
        let a = r.read_u32::<LittleEndian>().map_err(|e| truncated(r.offset, e))? as usize;
        let rew = r.read_f64::<LittleEndian>().map_err(|e| truncated(r.offset, e))?;
        let s_next = r.read_u32::<LittleEndian>().map_err(|e| truncated(r.offset, e))? as usize;
        steps.push(Step {
            s,
            a,
            r: T::lit(rew),
            s_next,
        });
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(fail(r.offset - 1, "trailing bytes after the last record".into()));
    }
    Dataset::new(meta, steps)
}

pub fn save_dataset_binary<T: Real>(path: &Path, d: &Dataset<T>) -> Result<()> {
    let f = fs::File::create(path)?;
    write_dataset_binary(d, std::io::BufWriter::new(f))
}

pub fn load_dataset_binary<T: Real>(path: &Path) -> Result<Dataset<T>> {
    read_dataset_binary(fs::File::open(path)?)
}

/// Loads a dataset, choosing the format from the leading magic bytes.
pub fn load_dataset<T: Real>(path: &Path) -> Result<Dataset<T>> {
    let mut head = [0u8; 4];
    let k = fs::File::open(path)?.read(&mut head)?;
    if k == 4 && &head == MAGIC {
        load_dataset_binary(path)
    } else {
        load_dataset_csv(path)
    }
}

/// `h,s,a,value` rows of the per-cell intrinsic terms.
pub fn write_per_cell_csv<T: Real, W: Write>(b: &BoundBreakdown<T>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["h", "s", "a", "value"]).map_err(csv_error)?;
    for ((h, s, a), &v) in b.per_cell.indexed_iter() {
        w.write_record(&[h.to_string(), s.to_string(), a.to_string(), v.as_f64().to_string()])
            .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::rollout;
    use crate::zoo::random_mdp;

    #[test]
    fn mdp_json_round_trip_is_bit_exact() {
        let m = random_mdp::<f64>(4, 3, 3, 9, 0.7).unwrap();
        let text = to_json_string(&m).unwrap();
        let back: Mdp<f64> = from_json_str(&text).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn invalid_mdp_document_is_rejected() {
        let text = r#"{"H":1,"S":1,"A":1,"P":[[[[1.0]]]],"r":[[[1.5]]],"reward_noise":"deterministic","d1":[1.0]}"#;
        let err = from_json_str::<Mdp<f64>>(text).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
        assert!(err.to_string().contains("outside [0, 1]"));
    }

    #[test]
    fn malformed_json_reports_location() {
        let err = from_json_str::<Mdp<f64>>("{\n  \"H\": 1,\n  oops\n}").unwrap_err();
        match err {
            Error::Parse { location, .. } => assert!(location.starts_with("line 3")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dataset_csv_and_binary_agree() {
        let m = random_mdp::<f64>(3, 2, 4, 2, 1.0).unwrap().with_reward_noise(crate::mdp::RewardNoise::Bernoulli);
        let d = rollout(&m, &Policy::uniform(4, 3, 2), 40, 11).unwrap();
        let mut csv_bytes = Vec::new();
        write_dataset_csv(&d, &mut csv_bytes).unwrap();
        let mut bin = Vec::new();
        write_dataset_binary(&d, &mut bin).unwrap();
        let from_csv: Dataset<f64> = read_dataset_csv(csv_bytes.as_slice()).unwrap();
        let from_bin: Dataset<f64> = read_dataset_binary(bin.as_slice()).unwrap();
        assert_eq!(from_csv, d);
        assert_eq!(from_bin, d);
    }

    #[test]
    fn truncated_binary_reports_offset() {
        let m = random_mdp::<f64>(3, 2, 2, 2, 1.0).unwrap();
        let d = rollout(&m, &Policy::uniform(2, 3, 2), 3, 1).unwrap();
        let mut bin = Vec::new();
        write_dataset_binary(&d, &mut bin).unwrap();
        bin.truncate(bin.len() - 3);
        match read_dataset_binary::<f64, _>(bin.as_slice()).unwrap_err() {
            Error::Parse { location, .. } => assert!(location.starts_with("byte")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_csv_row_reports_line() {
        let text = "# n=1,H=2,S=2,A=2,seed=0\nepisode,h,s,a,r,s_next\n0,0,0,1,0.5,1\n0,1,x,0,0.5,0\n";
        match read_dataset_csv::<f64, _>(text.as_bytes()).unwrap_err() {
            Error::Parse { location, .. } => assert!(location.contains("line 4"), "{location}"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
