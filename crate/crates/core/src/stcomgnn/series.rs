use std::fs;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use super::STConfig;
use crate::error::{Error, Result};
use crate::hetgraph::HeteroGraph;
use crate::tensor::Tensor;

/// Time-aligned node and edge signals on a fixed graph.
#[derive(Clone, Debug, PartialEq)]
pub struct STSeries {
    /// `[T x N x F_v]`, nodes in global id order.
    pub node_signal: Tensor,
    /// `[T x E x F_e]`, edges in global id order; `F_e` may be 0.
    pub edge_signal: Tensor,
    /// Epoch minutes, strictly increasing with a uniform step.
    pub timestamps: Vec<i64>,
}

impl STSeries {
    pub fn new(node_signal: Tensor, edge_signal: Tensor, timestamps: Vec<i64>) -> Result<Self> {
        let s = Self {
            node_signal,
            edge_signal,
            timestamps,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let (ns, es) = (self.node_signal.shape(), self.edge_signal.shape());
        if ns.len() != 3 || es.len() != 3 {
            return Err(Error::invalid(
                "series",
                "signals must be [T x entities x features]",
            ));
        }
        let t = self.timestamps.len();
        if ns[0] != t || es[0] != t {
            return Err(Error::invalid(
                "series",
                format!(
                    "{t} timestamps for signals of length {} and {}",
                    ns[0], es[0]
                ),
            ));
        }
        if t >= 2 {
            let step = self.timestamps[1] - self.timestamps[0];
            if step <= 0 || self.timestamps.windows(2).any(|w| w[1] - w[0] != step) {
                return Err(Error::invalid(
                    "series",
                    "timestamps must be strictly increasing with a uniform step",
                ));
            }
        }
        if !self.node_signal.is_finite() || !self.edge_signal.is_finite() {
            return Err(Error::NonFinite {
                context: "series values".into(),
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn num_nodes(&self) -> usize {
        self.node_signal.shape()[1]
    }

    pub fn node_features(&self) -> usize {
        self.node_signal.shape()[2]
    }

    pub fn edge_features(&self) -> usize {
        self.edge_signal.shape()[2]
    }

    /// Step between timestamps in minutes (0 for fewer than two steps).
    pub fn step_min(&self) -> i64 {
        match self.timestamps.as_slice() {
            [a, b, ..] => b - a,
            _ => 0,
        }
    }

    /// Index of timestamp `t`, if it lies on the grid.
    pub fn index_of(&self, t: i64) -> Option<usize> {
        let first = *self.timestamps.first()?;
        let step = self.step_min().max(1);
        if t < first || (t - first) % step != 0 {
            return None;
        }
        let i = ((t - first) / step) as usize;
        (i <= self.len()).then_some(i)
    }

    pub fn slice(&self, range: Range<usize>) -> STSeries {
        STSeries {
            node_signal: time_slice(&self.node_signal, range.clone()),
            edge_signal: time_slice(&self.edge_signal, range.clone()),
            timestamps: self.timestamps[range].to_vec(),
        }
    }
}

/// Steps `range` of a `[T x ...]` tensor.
pub fn time_slice(x: &Tensor, range: Range<usize>) -> Tensor {
    let width: usize = x.shape()[1..].iter().product();
    let mut shape = x.shape().to_vec();
    shape[0] = range.len();
    Tensor::new(
        shape,
        x.data()[range.start * width..range.end * width].to_vec(),
    )
    .expect("slice shape")
}

/// Index ranges of the recent, daily and weekly windows for a target at
/// step `t0` (exclusive end of the recent window).
pub fn window_ranges(cfg: &STConfig, t0: usize) -> Result<[Range<usize>; 3]> {
    let day = cfg.day_steps()?;
    let week = cfg.week_steps()?;
    let span = |end: usize, len: usize, what: &str| {
        end.checked_sub(len).map(|s| s..end).ok_or_else(|| {
            Error::InsufficientHistory(format!(
                "{what} window of {len} steps ending at step {end} starts before the series"
            ))
        })
    };
    let back = |off: usize, what: &str| {
        t0.checked_sub(off).ok_or_else(|| {
            Error::InsufficientHistory(format!(
                "{what} offset of {off} steps reaches before the series"
            ))
        })
    };
    Ok([
        span(t0, cfg.t_recent, "recent")?,
        span(back(day, "daily")?, cfg.t_daily, "daily")?,
        span(back(week, "weekly")?, cfg.t_weekly, "weekly")?,
    ])
}

/// Recent, daily and weekly slices of `series` for target time `t0`
/// (epoch minutes).
pub fn build_period_windows(series: &STSeries, cfg: &STConfig, t0: i64) -> Result<[STSeries; 3]> {
    if series.step_min() != cfg.step_min {
        return Err(Error::Config(format!(
            "series step {} min does not match configured step {} min",
            series.step_min(),
            cfg.step_min
        )));
    }
    let i0 = series.index_of(t0).ok_or_else(|| {
        Error::InsufficientHistory(format!("target time {t0} is not on the series grid"))
    })?;
    let [r, d, w] = window_ranges(cfg, i0)?;
    Ok([series.slice(r), series.slice(d), series.slice(w)])
}

/// Per edge and step, `[(x_i + x_j) / 2, |x_i - x_j|]` for every node
/// channel, giving `[T x E x 2F]`.
pub fn edge_dynamic_features(node_signal: &Tensor, g: &HeteroGraph) -> Result<Tensor> {
    let s = node_signal.shape();
    if s.len() != 3 || s[1] != g.num_nodes() {
        return Err(Error::invalid(
            "edge_dynamic_features",
            format!("signal shape {s:?} does not match {} nodes", g.num_nodes()),
        ));
    }
    let (t, n, f) = (s[0], s[1], s[2]);
    let e = g.num_edges();
    let mut data = Vec::with_capacity(t * e * 2 * f);
    for step in 0..t {
        let base = step * n * f;
        for ed in g.edges() {
            let xi = &node_signal.data()[base + ed.src * f..base + (ed.src + 1) * f];
            let xj = &node_signal.data()[base + ed.dst * f..base + (ed.dst + 1) * f];
            for (a, b) in xi.iter().zip(xj) {
                data.push(0.5 * (a + b));
                data.push((a - b).abs());
            }
        }
    }
    Tensor::new(vec![t, e, 2 * f], data)
}

/// Forward-fills NaNs along time per entity and channel, then replaces
/// leading gaps with the mean of all observed values of that channel.
pub fn impute(x: &mut Tensor) {
    let s = x.shape().to_vec();
    let (t, n, f) = (s[0], s[1], s[2]);
    let data = x.data_mut();
    let mut sum = vec![0.0; f];
    let mut count = vec![0usize; f];
    for (i, v) in data.iter().enumerate() {
        if v.is_finite() {
            sum[i % f] += v;
            count[i % f] += 1;
        }
    }
    let mean: Vec<f64> = sum
        .iter()
        .zip(&count)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    for j in 0..n * f {
        let mut last: Option<f64> = None;
        for step in 0..t {
            let v = &mut data[step * n * f + j];
            if v.is_finite() {
                last = Some(*v);
            } else {
                *v = last.unwrap_or(mean[j % f]);
            }
        }
    }
}

fn write_long_csv(path: &Path, id_col: &str, x: &Tensor, ts: &[i64]) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let f = x.shape()[2];
    let mut header = vec!["timestamp_min".to_string(), id_col.to_string()];
    header.extend((0..f).map(|c| format!("value_{c}")));
    w.write_record(&header).map_err(csv_err)?;
    let n = x.shape()[1];
    for (step, t) in ts.iter().enumerate() {
        for i in 0..n {
            let base = (step * n + i) * f;
            let mut row = vec![t.to_string(), i.to_string()];
            row.extend(x.data()[base..base + f].iter().map(|v| format!("{v:?}")));
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_long_csv(path: &Path, id_col: &str, entities: usize) -> Result<(Vec<i64>, Tensor)> {
    let file = path.display().to_string();
    let mut rdr = csv::Reader::from_path(path).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    let header = rdr
        .headers()
        .map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?
        .clone();
    if header.len() < 3 || &header[0] != "timestamp_min" || &header[1] != id_col {
        return Err(Error::schema(
            &file,
            format!("expected columns timestamp_min,{id_col},<values...>"),
        ));
    }
    let f = header.len() - 2;
    let mut rows: Vec<(i64, usize, Vec<f64>)> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let bad = |col: &str| Error::schema(&file, format!("row {line}: invalid {col}"));
        let t: i64 = rec[0].trim().parse().map_err(|_| bad("timestamp_min"))?;
        let id: usize = rec[1].trim().parse().map_err(|_| bad(id_col))?;
        if id >= entities {
            return Err(Error::schema(
                &file,
                format!("row {line}: {id_col} {id} out of range for {entities}"),
            ));
        }
        let vals = (2..rec.len())
            .map(|j| {
                let s = rec[j].trim();
                if s.is_empty() {
                    Ok(f64::NAN)
                } else {
                    s.parse::<f64>().map_err(|_| bad("value"))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((t, id, vals));
    }
    let mut ts: Vec<i64> = rows.iter().map(|r| r.0).collect();
    ts.sort_unstable();
    ts.dedup();
    if ts.len() >= 2 {
        let step = ts[1] - ts[0];
        if ts.windows(2).any(|w| w[1] - w[0] != step) {
            return Err(Error::schema(&file, "timestamps are not uniformly spaced"));
        }
    }
    let mut data = vec![f64::NAN; ts.len() * entities * f];
    for (t, id, vals) in rows {
        let step = ts.binary_search(&t).expect("timestamp present");
        data[(step * entities + id) * f..(step * entities + id + 1) * f].copy_from_slice(&vals);
    }
    let mut x = Tensor::new(vec![ts.len(), entities, f], data)?;
    impute(&mut x);
    Ok((ts, x))
}

/// Writes `series_nodes.csv` and, when edge features exist,
/// `series_edges.csv` in long format.
pub fn save_series(series: &STSeries, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_long_csv(
        &dir.join("series_nodes.csv"),
        "node_id",
        &series.node_signal,
        &series.timestamps,
    )?;
    if series.edge_features() > 0 {
        write_long_csv(
            &dir.join("series_edges.csv"),
            "edge_id",
            &series.edge_signal,
            &series.timestamps,
        )?;
    }
    Ok(())
}

/// Reads a series bundle for graph `g`. Missing values are imputed.
/// Without `series_edges.csv` the edge signal is derived from node values.
pub fn load_series(dir: impl AsRef<Path>, g: &HeteroGraph) -> Result<STSeries> {
    let dir = dir.as_ref();
    let (ts, nodes) = read_long_csv(&dir.join("series_nodes.csv"), "node_id", g.num_nodes())?;
    let epath = dir.join("series_edges.csv");
    let edges = if epath.exists() {
        let (ets, e) = read_long_csv(&epath, "edge_id", g.num_edges())?;
        if ets != ts {
            return Err(Error::schema(
                "series_edges.csv",
                "timestamps differ from series_nodes.csv",
            ));
        }
        e
    } else {
        edge_dynamic_features(&nodes, g)?
    };
    STSeries::new(nodes, edges, ts)
}

const DENSE_MAGIC: &[u8; 8] = b"CMGDENSE";

/// Binary dense export: magic, `u64` rank, `u64` dims, then row-major
/// little-endian `f64` values.
pub fn write_dense(path: impl AsRef<Path>, x: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(16 + 8 * (x.shape().len() + x.numel()));
    buf.extend_from_slice(DENSE_MAGIC);
    buf.extend_from_slice(&(x.shape().len() as u64).to_le_bytes());
    for &d in x.shape() {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in x.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_dense(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let file = path.display().to_string();
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    let mut words = buf
        .get(8..)
        .unwrap_or(&[])
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()));
    if buf.len() < 16 || &buf[..8] != DENSE_MAGIC {
        return Err(Error::schema(&file, "not a dense tensor file"));
    }
    let rank = words.next().unwrap_or(0) as usize;
    let shape: Vec<usize> = words.by_ref().take(rank).map(|d| d as usize).collect();
    let n: usize = shape.iter().product();
    if shape.len() != rank || buf.len() != 16 + 8 * rank + 8 * n {
        return Err(Error::schema(&file, "truncated or oversized payload"));
    }
    let data = buf[16 + 8 * rank..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(shape, data)
}
