//! Event streams, datasets and their JSONL representation.
//!
//! A dataset file starts with a header line carrying the type count (and an
//! optional coarse partition), followed by one stream per line:
//!
//! ```text
//! {"K":2}
//! {"T":10.0,"events":[[1.5,0],[3.2,1]]}
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event<F> {
    pub time: F,
    pub type_id: usize,
}

impl<F> Event<F> {
    pub fn new(time: F, type_id: usize) -> Self {
        Self { time, type_id }
    }
}

/// A time-ordered sequence of events observed on `[0, horizon)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream<F> {
    pub horizon: F,
    pub events: Vec<Event<F>>,
}

impl<F: Real> EventStream<F> {
    pub fn new(horizon: F, events: Vec<Event<F>>) -> Self {
        Self { horizon, events }
    }

    pub fn empty(horizon: F) -> Self {
        Self::new(horizon, Vec::new())
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Events strictly before `t`.
    pub fn history_before(&self, t: F) -> &[Event<F>] {
        let n = self.events.partition_point(|e| e.time < t);
        &self.events[..n]
    }

    /// Checks the stream invariants. Ties are reported through the returned
    /// count rather than rejected.
    pub fn validate(&self, num_types: usize, stream: usize) -> Result<usize> {
        if !(self.horizon > F::zero()) || !self.horizon.is_finite() {
            return Err(Error::InvalidStream {
                stream,
                event: 0,
                reason: format!("horizon {} must be positive and finite", self.horizon),
            });
        }
        let mut ties = 0;
        let mut last: Option<F> = None;
        for (i, e) in self.events.iter().enumerate() {
            let bad = |reason: String| Error::InvalidStream {
                stream,
                event: i,
                reason,
            };
            if !e.time.is_finite() || e.time < F::zero() {
                return Err(bad(format!(
                    "event time {} must be finite and non-negative",
                    e.time
                )));
            }
            if e.time >= self.horizon {
                return Err(bad(format!(
                    "event time ≥ horizon ({} ≥ {})",
                    e.time, self.horizon
                )));
            }
            if e.type_id >= num_types {
                return Err(bad(format!("type {} ≥ K = {}", e.type_id, num_types)));
            }
            if let Some(prev) = last {
                if e.time < prev {
                    return Err(bad(format!(
                        "time {} precedes previous time {}",
                        e.time, prev
                    )));
                }
                if e.time == prev {
                    ties += 1;
                }
            }
            last = Some(e.time);
        }
        Ok(ties)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<F> {
    pub num_types: usize,
    pub streams: Vec<EventStream<F>>,
    /// Optional type → coarse cluster map, total over `0..num_types`.
    pub partition: Option<Partition>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub num_coarse: usize,
    pub coarse_of: Vec<usize>,
}

impl Partition {
    /// Checks totality and range against a type count.
    pub fn new(num_coarse: usize, coarse_of: Vec<usize>, num_types: usize) -> Result<Self> {
        if coarse_of.len() != num_types {
            return Err(Error::InvalidDataset(format!(
                "partition has {} entries, expected K = {}",
                coarse_of.len(),
                num_types
            )));
        }
        if num_coarse == 0 {
            return Err(Error::InvalidDataset("C must be positive".into()));
        }
        if let Some((k, &c)) = coarse_of.iter().enumerate().find(|(_, &c)| c >= num_coarse) {
            return Err(Error::InvalidDataset(format!(
                "partition maps type {k} to coarse id {c} ≥ C = {num_coarse}"
            )));
        }
        Ok(Self {
            num_coarse,
            coarse_of,
        })
    }

    /// Every type in one cluster.
    pub fn single(num_types: usize) -> Self {
        Self {
            num_coarse: 1,
            coarse_of: vec![0; num_types],
        }
    }

    /// Contiguous blocks of nearly equal size.
    pub fn blocks(num_types: usize, num_coarse: usize) -> Result<Self> {
        if num_coarse == 0 || num_coarse > num_types {
            return Err(Error::InvalidArgument(format!(
                "cannot split {num_types} types into {num_coarse} clusters"
            )));
        }
        let coarse_of = (0..num_types).map(|k| k * num_coarse / num_types).collect();
        Ok(Self {
            num_coarse,
            coarse_of,
        })
    }

    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_coarse];
        for (k, &c) in self.coarse_of.iter().enumerate() {
            out[c].push(k);
        }
        out
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    #[serde(rename = "K")]
    num_types: usize,
    #[serde(rename = "C", default, skip_serializing_if = "Option::is_none")]
    num_coarse: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    partition: Option<Vec<usize>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    #[serde(rename = "T")]
    horizon: f64,
    events: Vec<(f64, usize)>,
}

impl<F: Real> Dataset<F> {
    pub fn new(
        num_types: usize,
        streams: Vec<EventStream<F>>,
        partition: Option<Partition>,
    ) -> Result<Self> {
        let d = Self {
            num_types,
            streams,
            partition,
        };
        d.validate()?;
        Ok(d)
    }

    /// Full scan of all invariants; returns the number of tied timestamps seen.
    pub fn validate(&self) -> Result<usize> {
        if self.num_types == 0 {
            return Err(Error::InvalidDataset("K must be positive".into()));
        }
        if let Some(p) = &self.partition {
            Partition::new(p.num_coarse, p.coarse_of.clone(), self.num_types)?;
        }
        let mut ties = 0;
        for (i, s) in self.streams.iter().enumerate() {
            ties += s.validate(self.num_types, i)?;
        }
        Ok(ties)
    }

    pub fn len(&self) -> usize {
        self.streams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.streams.is_empty()
    }

    pub fn num_events(&self) -> usize {
        self.streams.iter().map(|s| s.len()).sum()
    }

    pub fn total_time(&self) -> F {
        self.streams.iter().map(|s| s.horizon).sum()
    }

    /// Per-type event counts.
    pub fn type_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_types];
        for e in self.streams.iter().flat_map(|s| &s.events) {
            counts[e.type_id] += 1;
        }
        counts
    }

    /// The same streams with every type replaced by its coarse id.
    pub fn coarsened(&self, partition: &Partition) -> Dataset<F> {
        let streams = self
            .streams
            .iter()
            .map(|s| EventStream {
                horizon: s.horizon,
                events: s
                    .events
                    .iter()
                    .map(|e| Event::new(e.time, partition.coarse_of[e.type_id]))
                    .collect(),
            })
            .collect();
        Dataset {
            num_types: partition.num_coarse,
            streams,
            partition: None,
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset<F> {
        Dataset {
            num_types: self.num_types,
            streams: indices.iter().map(|&i| self.streams[i].clone()).collect(),
            partition: self.partition.clone(),
        }
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let header = Header {
            num_types: self.num_types,
            num_coarse: self.partition.as_ref().map(|p| p.num_coarse),
            partition: self.partition.as_ref().map(|p| p.coarse_of.clone()),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for s in &self.streams {
            let rec = Record {
                horizon: s.horizon.as_f64(),
                events: s
                    .events
                    .iter()
                    .map(|e| (e.time.as_f64(), e.type_id))
                    .collect(),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate().filter_map(|(i, l)| match l {
            Ok(s) if s.trim().is_empty() => None,
            other => Some((i + 1, other)),
        });
        let (line_no, first) = lines.next().ok_or_else(|| Error::Parse {
            line: 1,
            message: "missing header record".into(),
        })?;
        let header: Header = serde_json::from_str(&first?).map_err(|e| Error::Parse {
            line: line_no,
            message: format!("header: {e}"),
        })?;
        let partition = match (header.partition, header.num_coarse) {
            (Some(p), c) => {
                let c = c.unwrap_or_else(|| p.iter().max().map_or(1, |m| m + 1));
                Some(Partition::new(c, p, header.num_types)?)
            }
            (None, Some(c)) if c > 1 => {
                return Err(Error::Parse {
                    line: line_no,
                    message: "C > 1 given without a partition".into(),
                })
            }
            _ => None,
        };
        let mut streams = Vec::new();
        for (line_no, line) in lines {
            let rec: Record = serde_json::from_str(&line?).map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            streams.push(EventStream {
                horizon: F::lit(rec.horizon),
                events: rec
                    .events
                    .into_iter()
                    .map(|(t, k)| Event::new(F::lit(t), k))
                    .collect(),
            });
        }
        let d = Dataset {
            num_types: header.num_types,
            streams,
            partition,
        };
        let ties = d.validate()?;
        if ties > 0 {
            warn!("{ties} tied timestamps kept in file order");
        }
        Ok(d)
    }
}

pub fn load_dataset<F: Real>(path: impl AsRef<Path>) -> Result<Dataset<F>> {
    let f = File::open(path)?;
    Dataset::read_jsonl(BufReader::new(f))
}

pub fn save_dataset<F: Real>(d: &Dataset<F>, path: impl AsRef<Path>) -> Result<()> {
    let f = File::create(path)?;
    d.write_jsonl(BufWriter::new(f))
}

/// Train/dev/test partition with the original stream indices of each part.
#[derive(Debug, Clone)]
pub struct DatasetSplit<F> {
    pub train: Dataset<F>,
    pub dev: Dataset<F>,
    pub test: Dataset<F>,
    pub train_idx: Vec<usize>,
    pub dev_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

/// Seeded shuffle, then a split by stream count. Each part keeps at least one
/// stream.
pub fn split_dataset<F: Real>(
    d: &Dataset<F>,
    train_frac: f64,
    dev_frac: f64,
    seed: u64,
) -> Result<DatasetSplit<F>> {
    if !(train_frac > 0.0 && dev_frac > 0.0 && train_frac + dev_frac <= 1.0 + 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "fractions {train_frac}/{dev_frac} must be positive with sum ≤ 1"
        )));
    }
    let n = d.len();
    if n < 3 {
        return Err(Error::InvalidDataset(format!(
            "need at least 3 streams to split, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let count = |frac: f64| ((frac * n as f64) + 1e-9).floor() as usize;
    let n_train = count(train_frac).clamp(1, n - 2);
    let n_dev = count(dev_frac).clamp(1, n - 1 - n_train);

    let train_idx = order[..n_train].to_vec();
    let dev_idx = order[n_train..n_train + n_dev].to_vec();
    let test_idx = order[n_train + n_dev..].to_vec();
    Ok(DatasetSplit {
        train: d.subset(&train_idx),
        dev: d.subset(&dev_idx),
        test: d.subset(&test_idx),
        train_idx,
        dev_idx,
        test_idx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Dataset<f64>> {
        Dataset::read_jsonl(text.as_bytes())
    }

    #[test]
    fn loads_minimal_file() {
        let d = parse("{\"K\":2}\n{\"T\":10.0,\"events\":[[1.5,0],[3.2,1]]}\n").unwrap();
        assert_eq!(d.num_types, 2);
        assert_eq!(d.len(), 1);
        assert_eq!(
            d.streams[0].events,
            vec![Event::new(1.5, 0), Event::new(3.2, 1)]
        );
    }

    #[test]
    fn rejects_event_at_horizon() {
        let err = parse("{\"K\":2}\n{\"T\":10.0,\"events\":[[10.0,0]]}\n").unwrap_err();
        assert!(err.to_string().contains("event time ≥ horizon"), "{err}");
        assert!(err.to_string().contains("stream 0, event 0"), "{err}");
    }

    #[test]
    fn parse_error_reports_line() {
        let err = parse("{\"K\":1}\n{\"T\":1.0,\"events\":[]}\n{\"T\":oops}\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn rejects_type_out_of_range_and_unsorted() {
        assert!(parse("{\"K\":1}\n{\"T\":5.0,\"events\":[[1.0,1]]}\n").is_err());
        assert!(parse("{\"K\":1}\n{\"T\":5.0,\"events\":[[2.0,0],[1.0,0]]}\n").is_err());
    }

    #[test]
    fn ties_are_kept_in_file_order() {
        let d = parse("{\"K\":2}\n{\"T\":5.0,\"events\":[[1.0,1],[1.0,0]]}\n").unwrap();
        assert_eq!(d.streams[0].events[0].type_id, 1);
        assert_eq!(d.validate().unwrap(), 1);
    }

    #[test]
    fn partition_header_is_checked() {
        let d = parse("{\"K\":3,\"C\":2,\"partition\":[0,1,1]}\n").unwrap();
        assert_eq!(d.partition.unwrap().members(), vec![vec![0], vec![1, 2]]);
        assert!(parse("{\"K\":3,\"C\":2,\"partition\":[0,2,1]}\n").is_err());
        assert!(parse("{\"K\":3,\"C\":2,\"partition\":[0,1]}\n").is_err());
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let d = Dataset::new(
            2,
            vec![
                EventStream::new(10.0, vec![Event::new(0.1 + 0.2, 0), Event::new(1e-7, 1)]),
                EventStream::new(3.25, vec![]),
            ],
            Some(Partition::single(2)),
        );
        // 1e-7 after 0.3 is out of order, so build a valid version.
        assert!(d.is_err());
        let d = Dataset::new(
            2,
            vec![
                EventStream::new(10.0, vec![Event::new(1e-7, 1), Event::new(0.1 + 0.2, 0)]),
                EventStream::new(3.25, vec![]),
            ],
            Some(Partition::single(2)),
        )
        .unwrap();
        let mut a = Vec::new();
        d.write_jsonl(&mut a).unwrap();
        let back: Dataset<f64> = Dataset::read_jsonl(a.as_slice()).unwrap();
        assert_eq!(back, d);
        let mut b = Vec::new();
        back.write_jsonl(&mut b).unwrap();
        assert_eq!(a, b);
    }

    fn ten_streams() -> Dataset<f64> {
        let streams = (0..10)
            .map(|i| EventStream::new(1.0 + i as f64, vec![Event::new(0.5, 0)]))
            .collect();
        Dataset::new(1, streams, None).unwrap()
    }

    #[test]
    fn split_counts_and_determinism() {
        let d = ten_streams();
        let a = split_dataset(&d, 0.8, 0.1, 7).unwrap();
        assert_eq!((a.train.len(), a.dev.len(), a.test.len()), (8, 1, 1));
        let b = split_dataset(&d, 0.8, 0.1, 7).unwrap();
        assert_eq!(a.train_idx, b.train_idx);
        assert_eq!(a.dev_idx, b.dev_idx);
        assert_eq!(a.train, b.train);
    }

    #[test]
    fn split_union_recovers_original() {
        let d = ten_streams();
        let s = split_dataset(&d, 0.5, 0.3, 99).unwrap();
        let mut tagged: Vec<(usize, EventStream<f64>)> = Vec::new();
        for (idx, part) in [
            (&s.train_idx, &s.train),
            (&s.dev_idx, &s.dev),
            (&s.test_idx, &s.test),
        ] {
            tagged.extend(idx.iter().copied().zip(part.streams.iter().cloned()));
        }
        tagged.sort_by_key(|(i, _)| *i);
        let rebuilt: Vec<_> = tagged.iter().map(|(_, st)| st.clone()).collect();
        assert_eq!(rebuilt, d.streams);
        assert_eq!(
            tagged.iter().map(|(i, _)| *i).collect::<Vec<_>>(),
            (0..10).collect::<Vec<_>>()
        );
    }

    #[test]
    fn split_errors() {
        let d = ten_streams();
        assert!(split_dataset(&d.subset(&[0, 1]), 0.5, 0.2, 0).is_err());
        assert!(split_dataset(&d, 0.9, 0.2, 0).is_err());
        assert!(split_dataset(&d, 0.0, 0.2, 0).is_err());
    }
}
