//! One CSV per subject: `sample_index,<channels...>,label`, with string
//! labels resolved through a `labels.json` map `{name: index}` next to it.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::RawRecording;
use crate::error::DataError;

pub const LABEL_MAP_FILE: &str = "labels.json";

pub type LabelMap = BTreeMap<String, usize>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn load_label_map(path: &Path) -> Result<LabelMap, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| DataError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })
}

pub fn write_label_map(map: &LabelMap, path: &Path) -> Result<(), DataError> {
    let json = serde_json::to_string_pretty(map).expect("label map serializes");
    fs::write(path, json).map_err(io_err(path))
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_file_name(LABEL_MAP_FILE)
}

/// Loads a recording, using `labels.json` beside it when present. Without a
/// map, labels must be non-negative integers.
pub fn load_csv(path: &Path, sampling_rate: f64) -> Result<RawRecording, DataError> {
    let map_path = sidecar(path);
    let map = if map_path.exists() {
        Some(load_label_map(&map_path)?)
    } else {
        None
    };
    load_csv_with_labels(path, sampling_rate, map.as_ref())
}

pub fn load_csv_with_labels(
    path: &Path,
    sampling_rate: f64,
    label_map: Option<&LabelMap>,
) -> Result<RawRecording, DataError> {
    let parse_err = |line: usize, msg: String| DataError::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => DataError::Io {
                path: path.to_path_buf(),
                source,
            },
            other => parse_err(1, format!("{other:?}")),
        })?;
    let header = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    if cols.len() < 3 || cols[0] != "sample_index" || cols[cols.len() - 1] != "label" {
        return Err(parse_err(
            1,
            "header must be `sample_index,<channels...>,label` with at least one channel".into(),
        ));
    }
    let channel_names: Vec<String> = cols[1..cols.len() - 1].iter().map(|s| s.to_string()).collect();
    let mut channels = vec![Vec::new(); channel_names.len()];
    let mut labels = Vec::new();
    let known: Option<Vec<usize>> = label_map.map(|m| m.values().copied().collect());
    let mut last_index: Option<i64> = None;

    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| parse_err(line, e.to_string()))?;
        if row.len() != cols.len() {
            return Err(parse_err(line, format!("expected {} fields, found {}", cols.len(), row.len())));
        }
        let idx: i64 = row[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("bad sample index {:?}", &row[0])))?;
        if last_index.is_some_and(|prev| idx <= prev) {
            return Err(parse_err(line, format!("sample index {idx} is not increasing")));
        }
        last_index = Some(idx);
        for (c, ch) in channels.iter_mut().enumerate() {
            let field = row[c + 1].trim();
            let v: f64 = field
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| parse_err(line, format!("bad value {field:?} in channel {}", channel_names[c])))?;
            ch.push(v);
        }
        let raw = row[cols.len() - 1].trim();
        let label = match (label_map, &known) {
            (Some(map), Some(known)) => map
                .get(raw)
                .copied()
                .or_else(|| raw.parse::<usize>().ok().filter(|l| known.contains(l))),
            _ => raw.parse::<usize>().ok(),
        }
        .ok_or_else(|| parse_err(line, format!("unknown label {raw:?}")))?;
        labels.push(label);
    }
    let subject_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    RawRecording::new(subject_id, sampling_rate, channel_names, channels, labels)
}

/// Writes the recording; labels are written by name when a map is given.
pub fn write_csv(rec: &RawRecording, path: &Path, label_map: Option<&LabelMap>) -> Result<(), DataError> {
    let names: Option<BTreeMap<usize, &str>> =
        label_map.map(|m| m.iter().map(|(k, &v)| (v, k.as_str())).collect());
    let mut w = csv::Writer::from_path(path).map_err(|e| DataError::Invalid(format!("{}: {e}", path.display())))?;
    let mut header = vec!["sample_index".to_string()];
    header.extend(rec.channel_names.iter().cloned());
    header.push("label".into());
    let csv_err = |e: csv::Error| DataError::Invalid(format!("{}: {e}", path.display()));
    w.write_record(&header).map_err(csv_err)?;
    let mut row = Vec::with_capacity(header.len());
    for t in 0..rec.len() {
        row.clear();
        row.push(t.to_string());
        // `Display` for f64 prints the shortest representation that parses back exactly.
        row.extend(rec.channels.iter().map(|ch| ch[t].to_string()));
        let l = rec.labels[t];
        row.push(match names.as_ref().and_then(|n| n.get(&l)) {
            Some(name) => name.to_string(),
            None => l.to_string(),
        });
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}
