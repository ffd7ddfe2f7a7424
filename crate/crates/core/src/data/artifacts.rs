//! CSV artifacts: per-epoch metrics, per-round metrics, histograms, error
//! and parameter dumps, FLOPs ledgers and normality reports.
//!
//! Reals are written with 17 significant digits so every value round-trips.

use std::fs::File;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fedsim::{RoundMode, RoundRecord};
use crate::flops::{EpochMode, FlopsLedger};
use crate::nn::{LayerPartition, LayerSlice, ParamVector};
use crate::sampler::{EpochError, EpochRecord};
use crate::stats::{Histogram, LayerStatus, NormalityReport};

pub const METRICS_HEADER: [&str; 6] = [
    "epoch",
    "mode",
    "train_loss",
    "val_acc",
    "epoch_flops",
    "cum_flops",
];
pub const ROUNDS_HEADER: [&str; 5] = ["round", "mode", "val_acc", "comm_cost", "cum_flops"];
pub const HISTOGRAM_HEADER: [&str; 5] = ["layer", "epoch", "bin_left", "bin_right", "count"];
pub const VECTOR_HEADER: [&str; 3] = ["layer", "index", "value"];
pub const LEDGER_HEADER: [&str; 4] = ["epoch", "mode", "flops", "cum_flops"];
pub const NORMALITY_HEADER: [&str; 6] = ["layer", "n", "status", "k2", "p_value", "pass"];

/// Scientific notation with 17 significant digits.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(file))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, format!("{other:?}")),
    }
}

fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = writer(path)?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads all rows after checking the header matches exactly.
fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let found = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(Error::parse(
            path,
            format!(
                "expected header `{}`, found `{}`",
                header.join(","),
                found.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    r.records()
        .map(|rec| rec.map_err(|e| csv_err(path, e)))
        .collect()
}

fn field<T: std::str::FromStr>(
    path: &Path,
    rec: &csv::StringRecord,
    i: usize,
    name: &str,
) -> Result<T> {
    rec.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| {
        let line = rec.position().map_or(0, |p| p.line());
        Error::parse(
            path,
            format!("line {line}: bad `{name}` field {:?}", rec.get(i)),
        )
    })
}

pub fn write_metrics_csv(records: &[EpochRecord], path: &Path) -> Result<()> {
    write_rows(
        path,
        &METRICS_HEADER,
        records.iter().map(|r| {
            vec![
                r.epoch.to_string(),
                r.mode.to_string(),
                r.train_loss.map(fmt_real).unwrap_or_default(),
                fmt_real(r.val_acc),
                r.epoch_flops.to_string(),
                r.cum_flops.to_string(),
            ]
        }),
    )
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<EpochRecord>> {
    read_rows(path, &METRICS_HEADER)?
        .iter()
        .map(|rec| {
            let loss = rec.get(2).unwrap_or("");
            Ok(EpochRecord {
                epoch: field(path, rec, 0, "epoch")?,
                mode: field::<String>(path, rec, 1, "mode")?.parse::<EpochMode>()?,
                train_loss: if loss.is_empty() {
                    None
                } else {
                    Some(field(path, rec, 2, "train_loss")?)
                },
                val_acc: field(path, rec, 3, "val_acc")?,
                epoch_flops: field(path, rec, 4, "epoch_flops")?,
                cum_flops: field(path, rec, 5, "cum_flops")?,
            })
        })
        .collect()
}

/// The subset of a [`RoundRecord`] persisted in the rounds CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRow {
    pub round: usize,
    pub mode: RoundMode,
    pub val_acc: f64,
    pub comm_cost: u64,
    pub cum_flops: u64,
}

impl From<&RoundRecord> for RoundRow {
    fn from(r: &RoundRecord) -> Self {
        Self {
            round: r.round,
            mode: r.mode,
            val_acc: r.val_acc,
            comm_cost: r.comm_cost,
            cum_flops: r.cum_flops,
        }
    }
}

pub fn write_rounds_csv(records: &[RoundRecord], path: &Path) -> Result<()> {
    write_rows(
        path,
        &ROUNDS_HEADER,
        records.iter().map(|r| {
            vec![
                r.round.to_string(),
                r.mode.to_string(),
                fmt_real(r.val_acc),
                r.comm_cost.to_string(),
                r.cum_flops.to_string(),
            ]
        }),
    )
}

pub fn read_rounds_csv(path: &Path) -> Result<Vec<RoundRow>> {
    read_rows(path, &ROUNDS_HEADER)?
        .iter()
        .map(|rec| {
            Ok(RoundRow {
                round: field(path, rec, 0, "round")?,
                mode: field::<String>(path, rec, 1, "mode")?.parse()?,
                val_acc: field(path, rec, 2, "val_acc")?,
                comm_cost: field(path, rec, 3, "comm_cost")?,
                cum_flops: field(path, rec, 4, "cum_flops")?,
            })
        })
        .collect()
}

pub fn write_histogram_csv(hist: &Histogram, layer: &str, epoch: usize, path: &Path) -> Result<()> {
    write_rows(
        path,
        &HISTOGRAM_HEADER,
        hist.counts.iter().enumerate().map(|(i, c)| {
            vec![
                layer.to_string(),
                epoch.to_string(),
                fmt_real(hist.bin_edges[i]),
                fmt_real(hist.bin_edges[i + 1]),
                c.to_string(),
            ]
        }),
    )
}

/// Reads `(layer, epoch, histogram)`; all rows must share one layer and epoch.
pub fn read_histogram_csv(path: &Path) -> Result<(String, usize, Histogram)> {
    let rows = read_rows(path, &HISTOGRAM_HEADER)?;
    let first = rows
        .first()
        .ok_or_else(|| Error::parse(path, "no histogram rows"))?;
    let layer = first.get(0).unwrap_or_default().to_string();
    let epoch: usize = field(path, first, 1, "epoch")?;
    let mut bin_edges = vec![field(path, first, 2, "bin_left")?];
    let mut counts = Vec::with_capacity(rows.len());
    for rec in &rows {
        if rec.get(0) != Some(layer.as_str()) || field::<usize>(path, rec, 1, "epoch")? != epoch {
            return Err(Error::parse(path, "rows mix layers or epochs"));
        }
        bin_edges.push(field(path, rec, 3, "bin_right")?);
        counts.push(field(path, rec, 4, "count")?);
    }
    let total = counts.iter().sum();
    Ok((
        layer,
        epoch,
        Histogram {
            bin_edges,
            counts,
            total,
        },
    ))
}

fn write_vector(values: &[f64], partition: &LayerPartition, path: &Path) -> Result<()> {
    write_rows(
        path,
        &VECTOR_HEADER,
        partition.slices().iter().flat_map(|s| {
            values[s.range()]
                .iter()
                .enumerate()
                .map(move |(i, v)| vec![s.name.clone(), i.to_string(), fmt_real(*v)])
        }),
    )
}

fn read_vector(path: &Path) -> Result<(Vec<f64>, LayerPartition)> {
    let mut values = Vec::new();
    let mut slices: Vec<LayerSlice> = Vec::new();
    for rec in read_rows(path, &VECTOR_HEADER)? {
        let name = rec.get(0).unwrap_or_default();
        let index: usize = field(path, &rec, 1, "index")?;
        let value: f64 = field(path, &rec, 2, "value")?;
        match slices.last_mut() {
            Some(s) if s.name == name => {
                if index != s.len {
                    return Err(Error::parse(
                        path,
                        format!("layer `{name}`: index {index} out of sequence"),
                    ));
                }
                s.len += 1;
            }
            _ => {
                if index != 0 || slices.iter().any(|s| s.name == name) {
                    return Err(Error::parse(
                        path,
                        format!("layer `{name}` is not contiguous"),
                    ));
                }
                slices.push(LayerSlice {
                    name: name.to_string(),
                    offset: values.len(),
                    len: 1,
                });
            }
        }
        values.push(value);
    }
    Ok((values, LayerPartition::new(slices)?))
}

/// Writes an error vector as `layer,index,value` rows. `epoch` is informational
/// only; callers encode it in the file name.
pub fn dump_error_vector(err: &EpochError, _epoch: usize, path: &Path) -> Result<()> {
    write_vector(err.values(), err.partition(), path)
}

pub fn read_error_dump(path: &Path) -> Result<EpochError> {
    let (values, partition) = read_vector(path)?;
    EpochError::new(values, partition)
}

pub fn write_param_dump(params: &ParamVector, path: &Path) -> Result<()> {
    write_vector(params.values(), params.partition(), path)
}

pub fn read_param_dump(path: &Path) -> Result<ParamVector> {
    let (values, partition) = read_vector(path)?;
    ParamVector::new(values, partition)
}

pub fn write_ledger_csv(ledger: &FlopsLedger, path: &Path) -> Result<()> {
    let mut cum = 0u64;
    write_rows(
        path,
        &LEDGER_HEADER,
        ledger.entries().iter().map(|e| {
            cum += e.flops;
            vec![
                e.epoch.to_string(),
                e.mode.to_string(),
                e.flops.to_string(),
                cum.to_string(),
            ]
        }),
    )
}

pub fn write_normality_csv(report: &NormalityReport, path: &Path) -> Result<()> {
    write_rows(
        path,
        &NORMALITY_HEADER,
        report.layers.iter().map(|l| {
            let (status, k2, p, pass) = match &l.status {
                LayerStatus::Tested(r) => (
                    "tested",
                    fmt_real(r.k2),
                    fmt_real(r.p_value),
                    r.pass.to_string(),
                ),
                LayerStatus::Skipped => ("skipped", String::new(), String::new(), String::new()),
                LayerStatus::Degenerate => {
                    ("degenerate", String::new(), String::new(), "false".into())
                }
            };
            vec![l.layer.clone(), l.n.to_string(), status.into(), k2, p, pass]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(epoch: usize, mode: EpochMode, loss: Option<f64>, acc: f64) -> EpochRecord {
        EpochRecord {
            epoch,
            mode,
            train_loss: loss,
            val_acc: acc,
            epoch_flops: 1234,
            cum_flops: 1234 * (epoch as u64 + 1),
        }
    }

    #[test]
    fn metrics_header_and_empty_loss_on_sampled_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let records = vec![
            record(0, EpochMode::Backprop, Some(std::f64::consts::LN_2), 0.5),
            record(1, EpochMode::Sampled, None, 2.0 / 3.0),
        ];
        write_metrics_csv(&records, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(
            lines[0],
            "epoch,mode,train_loss,val_acc,epoch_flops,cum_flops"
        );
        assert_eq!(lines[2], "1,sampled,,6.6666666666666663e-1,1234,2468");
        assert_eq!(read_metrics_csv(&path).unwrap(), records);
    }

    #[test]
    fn histogram_rows_conserve_counts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        let values: Vec<f64> = (0..97).map(|i| (i as f64 * 0.37).sin()).collect();
        let h = crate::stats::histogram(&values, 12).unwrap();
        write_histogram_csv(&h, "dense0.w", 40, &path).unwrap();
        let (layer, epoch, back) = read_histogram_csv(&path).unwrap();
        assert_eq!((layer.as_str(), epoch), ("dense0.w", 40));
        assert_eq!(back.counts.iter().sum::<u64>(), 97);
        assert_eq!(back, h);
    }

    #[test]
    fn header_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "epoch,mode\n0,backprop\n").unwrap();
        assert!(matches!(read_metrics_csv(&path), Err(Error::Parse { .. })));
        assert!(matches!(
            read_metrics_csv(&dir.path().join("missing.csv")),
            Err(Error::Io { .. })
        ));
    }

    proptest! {
        #[test]
        fn vector_dump_round_trips(
            lens in prop::collection::vec(1usize..6, 1..4),
            seed in any::<u64>(),
        ) {
            use rand::Rng;
            let mut rng = crate::rng::stream(seed);
            let mut offset = 0;
            let slices: Vec<_> = lens.iter().enumerate().map(|(i, &len)| {
                let s = LayerSlice { name: format!("dense{i}.w"), offset, len };
                offset += len;
                s
            }).collect();
            let values: Vec<f64> = (0..offset).map(|_| rng.random_range(-1e6..1e6) * rng.random::<f64>().powi(9)).collect();
            let err = EpochError::new(values, LayerPartition::new(slices).unwrap()).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("e.csv");
            dump_error_vector(&err, 3, &path).unwrap();
            let back = read_error_dump(&path).unwrap();
            prop_assert_eq!(back.values(), err.values());
            prop_assert_eq!(back.partition(), err.partition());
        }

        #[test]
        fn reals_round_trip(x in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
            prop_assert_eq!(fmt_real(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }
}
