//! On-disk recordings: a JSON header next to raw little-endian f32 samples.
//!
//! `<stem>.meta.json` holds sampling rate, channel names, sample count and the
//! event log; `<stem>.f32` holds the samples channel-major (all of channel 0,
//! then channel 1, ...). Writing f32 halves the file size; the simulator's
//! signals are far above f32 resolution.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ContinuousRecording, StimulusEvent};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingMeta {
    pub format_version: u32,
    pub fs: f64,
    pub channel_names: Vec<String>,
    pub n_samples: usize,
    pub sample_format: String,
    pub events: Vec<StimulusEvent>,
}

pub fn recording_paths(dir: &Path, stem: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{stem}.meta.json")), dir.join(format!("{stem}.f32")))
}

pub fn encode_samples(samples: &Array2<f64>) -> Vec<u8> {
    let mut buf = Vec::with_capacity(samples.len() * 4);
    for row in samples.rows() {
        for &v in row {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    buf
}

pub fn decode_samples(bytes: &[u8], n_channels: usize, n_samples: usize) -> Result<Array2<f64>> {
    let expected = n_channels * n_samples * 4;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "sample file has {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Array2::from_shape_vec((n_channels, n_samples), values).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_recording(rec: &ContinuousRecording, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
    let (meta_path, data_path) = recording_paths(dir, stem);
    let meta = RecordingMeta {
        format_version: FORMAT_VERSION,
        fs: rec.fs,
        channel_names: rec.channel_names.clone(),
        n_samples: rec.n_samples(),
        sample_format: "f32le-channel-major".into(),
        events: rec.events.clone(),
    };
    write_json(&meta_path, &meta)?;
    let mut w = BufWriter::new(File::create(&data_path).map_err(|e| Error::io(&data_path, e))?);
    w.write_all(&encode_samples(&rec.samples))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(&data_path, e))?;
    Ok((meta_path, data_path))
}

pub fn read_recording(dir: &Path, stem: &str) -> Result<ContinuousRecording> {
    let (meta_path, data_path) = recording_paths(dir, stem);
    let meta: RecordingMeta = read_json(&meta_path)?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported format version {}",
            meta_path.display(),
            meta.format_version
        )));
    }
    let mut bytes = Vec::new();
    File::open(&data_path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(|e| Error::io(&data_path, e))?;
    let samples = decode_samples(&bytes, meta.channel_names.len(), meta.n_samples)?;
    Ok(ContinuousRecording {
        fs: meta.fs,
        channel_names: meta.channel_names,
        samples,
        events: meta.events,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(f))?)
}

pub fn create_file(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

pub fn open_file(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
}
