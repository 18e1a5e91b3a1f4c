use std::fs;
use std::path::{Path, PathBuf};

use super::{VideoSequence, DEFAULT_FPS, FRAME_PIXELS};
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::models::FRAME_SIZE;
use crate::signal::EegRecording;

const VERSION: u32 = 1;

fn check_version(r: &mut Reader<'_>) -> Result<()> {
    let v = r.u32("version")?;
    if v != VERSION {
        return Err(r.err("version", format!("unsupported version {v}")));
    }
    Ok(())
}

/// `EEGR`: u32 version, u32 channels, u32 sample rate, u64 samples per
/// channel, then f32 samples channel-major. The subject id is not stored.
pub fn eeg_to_bytes(rec: &EegRecording) -> Vec<u8> {
    let mut w = Writer::new(b"EEGR");
    w.u32(VERSION);
    w.u32(rec.num_channels() as u32);
    w.u32(rec.sample_rate);
    w.u64(rec.len() as u64);
    for ch in &rec.channels {
        w.f32s(ch.iter().map(|&v| v as f32));
    }
    w.buf
}

pub fn eeg_from_bytes(buf: &[u8]) -> Result<EegRecording> {
    let mut r = Reader::new("EEGR", b"EEGR", buf)?;
    check_version(&mut r)?;
    let channels = r.u32("channels")? as usize;
    let sample_rate = r.u32("sample_rate")?;
    let samples = r.u64("samples")?;
    if channels == 0 {
        return Err(r.err("channels", "zero channels"));
    }
    if sample_rate == 0 {
        return Err(r.err("sample_rate", "zero sample rate"));
    }
    if samples == 0 {
        return Err(r.err("samples", "zero samples"));
    }
    let total = samples
        .checked_mul(channels as u64)
        .ok_or_else(|| r.err("samples", "extent overflow"))?;
    let total = r.count(total, 4, "samples")?;
    let data = r.f32s(total, "samples")?;
    r.finish()?;
    let n = samples as usize;
    let chans = data.chunks_exact(n).map(|c| c.iter().map(|&v| v as f64).collect()).collect();
    EegRecording::new(sample_rate, chans, "")
}

pub fn save_eeg(path: impl AsRef<Path>, rec: &EegRecording) -> Result<()> {
    fs::write(path, eeg_to_bytes(rec))?;
    Ok(())
}

pub fn load_eeg(path: impl AsRef<Path>) -> Result<EegRecording> {
    eeg_from_bytes(&fs::read(path)?)
}

/// One column per channel under a `ch0..chN` header, one row per sample.
pub fn eeg_to_csv(rec: &EegRecording) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record((0..rec.num_channels()).map(|c| format!("ch{c}")))
        .map_err(csv_io)?;
    for t in 0..rec.len() {
        w.write_record(rec.channels.iter().map(|ch| format!("{:e}", ch[t])))
            .map_err(csv_io)?;
    }
    finish_csv(w)
}

pub fn eeg_from_csv(text: &str, sample_rate: u32, subject_id: &str) -> Result<EegRecording> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = rd.headers().map_err(|e| Error::format("EEG CSV", "header", e.to_string()))?.clone();
    for (c, name) in header.iter().enumerate() {
        if name != format!("ch{c}") {
            return Err(Error::format("EEG CSV", "header", format!("column {c} is {name:?}, expected ch{c}")));
        }
    }
    let mut channels = vec![Vec::new(); header.len()];
    for (i, record) in rd.records().enumerate() {
        let record = record.map_err(|e| Error::format("EEG CSV", format!("row {}", i + 1), e.to_string()))?;
        for (c, field) in record.iter().enumerate() {
            channels[c].push(parse_f64(field, "EEG CSV", i + 1, c)?);
        }
    }
    EegRecording::new(sample_rate, channels, subject_id)
}

/// `FEAT`: u32 version, u32 dim, u32 rate, u64 rows, then f32 row-major.
/// Column names are not stored; loaded sequences get `f0..`.
pub fn features_to_bytes(seq: &FeatureSequence) -> Vec<u8> {
    let mut w = Writer::new(b"FEAT");
    w.u32(VERSION);
    w.u32(seq.dim as u32);
    w.u32(seq.rate);
    w.u64(seq.rows() as u64);
    w.f32s(seq.data.iter().map(|&v| v as f32));
    w.buf
}

pub fn features_from_bytes(buf: &[u8]) -> Result<FeatureSequence> {
    let mut r = Reader::new("FEAT", b"FEAT", buf)?;
    check_version(&mut r)?;
    let dim = r.u32("dim")? as usize;
    let rate = r.u32("rate")?;
    let rows = r.u64("rows")?;
    if dim == 0 {
        return Err(r.err("dim", "zero feature dimension"));
    }
    let total = rows.checked_mul(dim as u64).ok_or_else(|| r.err("rows", "extent overflow"))?;
    let total = r.count(total, 4, "rows")?;
    let data = r.f32s(total, "rows")?;
    r.finish()?;
    FeatureSequence::new(rate, dim, data.into_iter().map(f64::from).collect())
}

pub fn save_features(path: impl AsRef<Path>, seq: &FeatureSequence) -> Result<()> {
    fs::write(path, features_to_bytes(seq))?;
    Ok(())
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    features_from_bytes(&fs::read(path)?)
}

/// Header of layout names, then one row per tick.
pub fn features_to_csv(seq: &FeatureSequence) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&seq.layout).map_err(csv_io)?;
    for row in seq.iter_rows() {
        w.write_record(row.iter().map(|v| format!("{v:e}"))).map_err(csv_io)?;
    }
    finish_csv(w)
}

pub fn features_from_csv(text: &str, rate: u32) -> Result<FeatureSequence> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let layout: Vec<String> = rd
        .headers()
        .map_err(|e| Error::format("feature CSV", "header", e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut data = Vec::new();
    for (i, record) in rd.records().enumerate() {
        let record = record.map_err(|e| Error::format("feature CSV", format!("row {}", i + 1), e.to_string()))?;
        for (c, field) in record.iter().enumerate() {
            data.push(parse_f64(field, "feature CSV", i + 1, c)?);
        }
    }
    FeatureSequence::with_layout(rate, layout, data)
}

fn parse_f64(field: &str, format: &'static str, row: usize, col: usize) -> Result<f64> {
    field
        .parse()
        .map_err(|_| Error::format(format, format!("row {row} column {col}"), format!("{field:?} is not a number")))
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// `VIDG`: u32 version, u32 T, u32 H, u32 W, then u8 pixels row-major.
/// Frame rate and subject are not stored.
pub fn video_to_bytes(video: &VideoSequence) -> Vec<u8> {
    let mut w = Writer::new(b"VIDG");
    w.u32(VERSION);
    w.u32(video.len() as u32);
    w.u32(FRAME_SIZE as u32);
    w.u32(FRAME_SIZE as u32);
    w.bytes(&video.frames);
    w.buf
}

pub fn video_from_bytes(buf: &[u8]) -> Result<VideoSequence> {
    let mut r = Reader::new("VIDG", b"VIDG", buf)?;
    check_version(&mut r)?;
    let t = r.u32("frames")? as u64;
    for field in ["height", "width"] {
        let v = r.u32(field)?;
        if v as usize != FRAME_SIZE {
            return Err(r.err(field, format!("{v}, expected {FRAME_SIZE}")));
        }
    }
    let n = r.count(t * FRAME_PIXELS as u64, 1, "frames")?;
    let frames = r.take(n, "frames")?.to_vec();
    r.finish()?;
    VideoSequence::new(DEFAULT_FPS, frames, "")
}

pub fn save_video(path: impl AsRef<Path>, video: &VideoSequence) -> Result<()> {
    fs::write(path, video_to_bytes(video))?;
    Ok(())
}

pub fn load_video(path: impl AsRef<Path>) -> Result<VideoSequence> {
    video_from_bytes(&fs::read(path)?)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PgmImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// Binary P5 with maxval 255.
pub fn pgm_encode(img: &PgmImage) -> Result<Vec<u8>> {
    if img.pixels.len() != img.width * img.height {
        return Err(Error::Shape(format!(
            "{} pixels for a {}x{} image",
            img.pixels.len(),
            img.width,
            img.height
        )));
    }
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    Ok(out)
}

/// Reads binary P5 with maxval <= 255; `#` comments are allowed in the header.
pub fn pgm_decode(buf: &[u8]) -> Result<PgmImage> {
    if buf.len() < 2 || &buf[..2] != b"P5" {
        return Err(Error::format("PGM", "magic", "expected P5"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (i, name) in ["width", "height", "maxval"].iter().enumerate() {
        loop {
            match buf.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while buf.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while buf.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let text = std::str::from_utf8(&buf[start..pos]).unwrap_or("");
        fields[i] = text
            .parse()
            .map_err(|_| Error::format("PGM", *name, "missing or malformed number"))?;
    }
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(Error::format("PGM", "maxval", format!("{maxval} not in 1..=255")));
    }
    if !buf.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format("PGM", "header", "no whitespace before pixel data"));
    }
    pos += 1;
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::format("PGM", "width", "extent overflow"))?;
    let pixels = &buf[pos..];
    if pixels.len() != n {
        return Err(Error::format(
            "PGM",
            "pixels",
            format!("expected {n} bytes, found {}", pixels.len()),
        ));
    }
    Ok(PgmImage {
        width,
        height,
        pixels: pixels.to_vec(),
    })
}

pub fn save_pgm(path: impl AsRef<Path>, img: &PgmImage) -> Result<()> {
    fs::write(path, pgm_encode(img)?)?;
    Ok(())
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<PgmImage> {
    pgm_decode(&fs::read(path)?)
}

/// Writes `frame_00000.pgm`, `frame_00001.pgm`, ... into `dir`.
pub fn export_pgm_frames(video: &VideoSequence, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let width = video.len().saturating_sub(1).to_string().len().max(5);
    (0..video.len())
        .map(|k| {
            let path = dir.join(format!("frame_{k:0width$}.pgm"));
            save_pgm(
                &path,
                &PgmImage {
                    width: FRAME_SIZE,
                    height: FRAME_SIZE,
                    pixels: video.frame(k).to_vec(),
                },
            )?;
            Ok(path)
        })
        .collect()
}
