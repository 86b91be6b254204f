//! Binary checkpoint container.
//!
//! Layout: magic `SACN`, `u32` version, `u64` body length, body, then the
//! SHA-256 of everything before it. The body is a sequence of records, each
//! a `u32`-prefixed UTF-8 name, a kind byte and a payload. Tensor payloads
//! are a `u32` rank, `u64` dimensions and little-endian `f64` values; byte
//! payloads are `u64`-prefixed. All integers are little-endian.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::optim::Adam;
use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SACN";
pub const VERSION: u32 = 1;
const HASH_LEN: usize = 32;
const KIND_TENSOR: u8 = 0;
const KIND_BYTES: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Record {
    Tensor(Tensor),
    Bytes(Vec<u8>),
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub epoch: usize,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

pub const CSV_HEADER: &str = "epoch,split,metric,value";

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!("{},{},{},{}\n", r.epoch, r.split, r.metric, r.value));
    }
    s
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Format("metrics log has an unexpected header".into()));
    }
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || Error::Format(format!("bad metrics row {l:?}"));
            if f.len() != 4 {
                return Err(bad());
            }
            Ok(MetricRow {
                epoch: f[0].parse().map_err(|_| bad())?,
                split: f[1].into(),
                metric: f[2].into(),
                value: f[3].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

/// Everything needed to rebuild a model and continue its training.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Canonical run configuration text.
    pub config: String,
    pub params: Vec<(String, Tensor)>,
    pub buffers: Vec<(String, Tensor)>,
    pub adam: Option<Adam>,
    pub rng: RngState,
    /// Completed epochs.
    pub epoch: usize,
    pub steps: u64,
    pub best: f64,
    pub history: Vec<MetricRow>,
}

fn put_name(out: &mut Vec<u8>, name: &str, kind: u8) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(kind);
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    put_name(out, name, KIND_TENSOR);
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &x in t.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn put_bytes(out: &mut Vec<u8>, name: &str, b: &[u8]) {
    put_name(out, name, KIND_BYTES);
    out.extend_from_slice(&(b.len() as u64).to_le_bytes());
    out.extend_from_slice(b);
}

/// Frames named records with the header and trailing digest.
pub fn encode_records(records: &[(String, Record)]) -> Vec<u8> {
    let mut body = Vec::new();
    for (name, r) in records {
        match r {
            Record::Tensor(t) => put_tensor(&mut body, name, t),
            Record::Bytes(b) => put_bytes(&mut body, name, b),
        }
    }
    let mut out = Vec::with_capacity(body.len() + 48);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    out.extend_from_slice(&body);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("record runs past the end of the body".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("length overflows".into()))
    }
}

/// Verifies framing and digest, then splits the body into records.
pub fn decode_records(bytes: &[u8]) -> Result<Vec<(String, Record)>> {
    if bytes.len() < 16 {
        return Err(Error::Integrity("file shorter than the header".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let body_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let expected = (body_len as u128) + 16 + HASH_LEN as u128;
    if bytes.len() as u128 != expected {
        return Err(Error::Integrity(format!(
            "expected {expected} bytes, found {}",
            bytes.len()
        )));
    }
    let split = bytes.len() - HASH_LEN;
    if Sha256::digest(&bytes[..split]).as_slice() != &bytes[split..] {
        return Err(Error::Integrity("digest mismatch".into()));
    }
    let mut r = Reader {
        buf: &bytes[16..split],
        pos: 0,
    };
    let mut out = Vec::new();
    while r.pos < r.buf.len() {
        let n = r.u32()? as usize;
        let name =
            String::from_utf8(r.take(n)?.to_vec()).map_err(|_| Error::Format("record name is not UTF-8".into()))?;
        let kind = r.take(1)?[0];
        let rec = match kind {
            KIND_TENSOR => {
                let rank = r.u32()? as usize;
                let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
                let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
                let count = count.ok_or_else(|| Error::Format(format!("{name}: shape overflows")))?;
                let raw = r.take(
                    count
                        .checked_mul(8)
                        .ok_or_else(|| Error::Format("shape overflows".into()))?,
                )?;
                let data = raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect();
                Record::Tensor(Tensor::new(shape, data)?)
            }
            KIND_BYTES => {
                let n = r.len()?;
                Record::Bytes(r.take(n)?.to_vec())
            }
            k => return Err(Error::Format(format!("{name}: unknown record kind {k}"))),
        };
        out.push((name, rec));
    }
    Ok(out)
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut rec: Vec<(String, Record)> = vec![("config".into(), Record::Bytes(self.config.as_bytes().to_vec()))];
        for (n, t) in &self.params {
            rec.push((format!("param/{n}"), Record::Tensor(t.clone())));
        }
        for (n, t) in &self.buffers {
            rec.push((format!("buffer/{n}"), Record::Tensor(t.clone())));
        }
        if let Some(a) = &self.adam {
            let c = a.config;
            let mut hp = Vec::new();
            for x in [c.lr, c.beta1, c.beta2, c.eps] {
                hp.extend_from_slice(&x.to_le_bytes());
            }
            hp.extend_from_slice(&a.step.to_le_bytes());
            rec.push(("adam".into(), Record::Bytes(hp)));
            for ((n, _), (m, v)) in self.params.iter().zip(a.m.iter().zip(&a.v)) {
                rec.push((format!("adam.m/{n}"), Record::Tensor(m.clone())));
                rec.push((format!("adam.v/{n}"), Record::Tensor(v.clone())));
            }
        }
        let mut rng = self.rng.seed.to_vec();
        rng.extend_from_slice(&self.rng.stream.to_le_bytes());
        rng.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        rec.push(("rng".into(), Record::Bytes(rng)));
        let mut progress = Vec::new();
        progress.extend_from_slice(&(self.epoch as u64).to_le_bytes());
        progress.extend_from_slice(&self.steps.to_le_bytes());
        progress.extend_from_slice(&self.best.to_le_bytes());
        rec.push(("progress".into(), Record::Bytes(progress)));
        rec.push(("history".into(), Record::Bytes(metrics_csv(&self.history).into_bytes())));
        encode_records(&rec)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let records = decode_records(bytes)?;
        let mut config = None;
        let (mut params, mut buffers, mut ms, mut vs) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let (mut adam_hp, mut rng, mut progress, mut history) = (None, None, None, None);
        for (name, rec) in records {
            match (name.split_once('/'), rec) {
                (Some(("param", n)), Record::Tensor(t)) => params.push((n.to_string(), t)),
                (Some(("buffer", n)), Record::Tensor(t)) => buffers.push((n.to_string(), t)),
                (Some(("adam.m", _)), Record::Tensor(t)) => ms.push(t),
                (Some(("adam.v", _)), Record::Tensor(t)) => vs.push(t),
                (None, Record::Bytes(b)) => match name.as_str() {
                    "config" => {
                        config = Some(String::from_utf8(b).map_err(|_| Error::Format("config is not UTF-8".into()))?)
                    }
                    "adam" => adam_hp = Some(b),
                    "rng" => rng = Some(b),
                    "progress" => progress = Some(b),
                    "history" => {
                        history = Some(String::from_utf8(b).map_err(|_| Error::Format("history is not UTF-8".into()))?)
                    }
                    _ => return Err(Error::Format(format!("unexpected record {name}"))),
                },
                _ => return Err(Error::Format(format!("unexpected record {name}"))),
            }
        }
        let missing = |w: &str| Error::Format(format!("checkpoint lacks {w}"));
        let f64_at = |b: &[u8], i: usize| f64::from_le_bytes(b[i..i + 8].try_into().expect("8 bytes"));
        let u64_at = |b: &[u8], i: usize| u64::from_le_bytes(b[i..i + 8].try_into().expect("8 bytes"));
        let rng = rng.ok_or_else(|| missing("rng state"))?;
        if rng.len() != 56 {
            return Err(Error::Format("bad rng record".into()));
        }
        let progress = progress.ok_or_else(|| missing("progress"))?;
        if progress.len() != 24 {
            return Err(Error::Format("bad progress record".into()));
        }
        let adam = match adam_hp {
            None => None,
            Some(hp) => {
                if hp.len() != 40 || ms.len() != params.len() || vs.len() != params.len() {
                    return Err(Error::Format("optimizer state does not match the parameters".into()));
                }
                Some(Adam {
                    config: super::optim::AdamConfig {
                        lr: f64_at(&hp, 0),
                        beta1: f64_at(&hp, 8),
                        beta2: f64_at(&hp, 16),
                        eps: f64_at(&hp, 24),
                    },
                    step: u64_at(&hp, 32),
                    m: ms,
                    v: vs,
                })
            }
        };
        Ok(Self {
            config: config.ok_or_else(|| missing("config"))?,
            params,
            buffers,
            adam,
            rng: RngState {
                seed: rng[..32].try_into().expect("32 bytes"),
                stream: u64_at(&rng, 32),
                word_pos: u128::from_le_bytes(rng[40..56].try_into().expect("16 bytes")),
            },
            epoch: u64_at(&progress, 0) as usize,
            steps: u64_at(&progress, 8),
            best: f64_at(&progress, 16),
            history: parse_metrics_csv(&history.ok_or_else(|| missing("history"))?)?,
        })
    }

    /// Writes through a temporary file so a crash never leaves a torn file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn sample() -> Checkpoint {
        let params = vec![
            (
                "a.w".to_string(),
                Tensor::matrix(2, 2, vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300]).unwrap(),
            ),
            ("b".to_string(), Tensor::vector(vec![0.1, 0.2, 0.3])),
        ];
        let mut r = SeededRng::new(5);
        r.uniform();
        Checkpoint {
            config: "task = ae\n".into(),
            adam: Some(Adam {
                config: Default::default(),
                step: 7,
                m: params.iter().map(|p| p.1.clone()).collect(),
                v: params.iter().map(|p| Tensor::zeros(p.1.shape())).collect(),
            }),
            buffers: vec![("bn.mean".into(), Tensor::vector(vec![0.5]))],
            params,
            rng: r.state(),
            epoch: 3,
            steps: 42,
            best: 0.25,
            history: vec![MetricRow {
                epoch: 1,
                split: "train".into(),
                metric: "loss".into(),
                value: 0.1 + 0.2,
            }],
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.params[0].1.data()[1].to_bits(), (-0.0f64).to_bits());
        assert_eq!(back.to_bytes(), c.to_bytes());
    }

    #[test]
    fn truncation_and_corruption_are_integrity_errors() {
        let bytes = sample().to_bytes();
        for cut in [bytes.len() - 1, bytes.len() / 2, 17] {
            assert!(matches!(
                Checkpoint::from_bytes(&bytes[..cut]),
                Err(Error::Integrity(_))
            ));
        }
        let mut flipped = bytes.clone();
        let n = flipped.len();
        flipped[n - 40] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&flipped), Err(Error::Integrity(_))));
    }

    #[test]
    fn magic_and_version_are_format_errors() {
        let mut bytes = sample().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Format(_))));
        let mut bytes = sample().to_bytes();
        bytes[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn csv_round_trip() {
        let rows = sample().history;
        assert_eq!(parse_metrics_csv(&metrics_csv(&rows)).unwrap(), rows);
    }
}
