//! Multichannel WAV and CSV input/output.
//!
//! WAV goes through `hound`, except 64-bit float files, which `hound` does
//! not handle; those are read and written directly.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use auxtde::MultichannelSignal;

use crate::error::CliError;

const WAVE_FORMAT_IEEE_FLOAT: u16 = 3;
const WAVE_FORMAT_EXTENSIBLE: u16 = 0xFFFE;

/// Sample width used when writing WAV files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavBits {
    Float32,
    Float64,
}

/// Reads a WAV or CSV file, chosen by extension. CSV files carry no rate, so
/// `csv_rate` is used for them.
pub fn read_signal(path: &Path, csv_rate: f64) -> Result<MultichannelSignal, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let (channels, rate) = if is_csv {
        (parse_csv(&bytes).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?, csv_rate)
    } else {
        parse_wav(&bytes).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?
    };
    if channels.len() < 2 {
        return Err(CliError::Usage(format!(
            "at least 2 channels required, {} has {}",
            path.display(),
            channels.len()
        )));
    }
    MultichannelSignal::new(channels, rate).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub fn write_signal(path: &Path, sig: &MultichannelSignal, bits: WavBits) -> Result<(), CliError> {
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let bytes = if is_csv {
        csv_bytes(sig)
    } else {
        match bits {
            WavBits::Float32 => wav_f32_bytes(sig)?,
            WavBits::Float64 => wav_f64_bytes(sig),
        }
    };
    fs::write(path, bytes).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

/// Parses a WAV file into per-channel samples scaled to [-1, 1) for PCM.
pub fn parse_wav(bytes: &[u8]) -> Result<(Vec<Vec<f64>>, f64), String> {
    if let Some(parsed) = parse_f64_wav(bytes)? {
        return Ok(parsed);
    }
    let reader = hound::WavReader::new(Cursor::new(bytes)).map_err(|e| format!("invalid WAV: {e}"))?;
    let spec = reader.spec();
    let n = spec.channels as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(|e| format!("invalid WAV data: {e}"))?,
        hound::SampleFormat::Int => {
            let scale = 2f64.powi(spec.bits_per_sample as i32 - 1);
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<Result<_, _>>()
                .map_err(|e| format!("invalid WAV data: {e}"))?
        }
    };
    Ok((deinterleave(&interleaved, n), f64::from(spec.sample_rate)))
}

fn deinterleave(samples: &[f64], n: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::with_capacity(samples.len() / n.max(1)); n];
    for frame in samples.chunks_exact(n) {
        for (ch, &v) in out.iter_mut().zip(frame) {
            ch.push(v);
        }
    }
    out
}

/// `Ok(None)` when the file is not 64-bit float, so `hound` can take it.
fn parse_f64_wav(bytes: &[u8]) -> Result<Option<(Vec<Vec<f64>>, f64)>, String> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err("not a RIFF/WAVE file".into());
    }
    let u16_at = |b: &[u8], i: usize| u16::from_le_bytes([b[i], b[i + 1]]);
    let u32_at = |b: &[u8], i: usize| u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]]);
    let mut pos = 12;
    let mut fmt = None;
    let mut data = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let len = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        let end = (body + len).min(bytes.len());
        match id {
            b"fmt " if len >= 16 => {
                let mut tag = u16_at(bytes, body);
                if tag == WAVE_FORMAT_EXTENSIBLE && len >= 26 {
                    tag = u16_at(bytes, body + 24);
                }
                fmt = Some((tag, u16_at(bytes, body + 2), u32_at(bytes, body + 4), u16_at(bytes, body + 14)));
            }
            b"data" => data = Some(&bytes[body..end]),
            _ => {}
        }
        pos = body + len + (len & 1);
    }
    let Some((tag, channels, rate, bits)) = fmt else {
        return Err("missing fmt chunk".into());
    };
    if tag != WAVE_FORMAT_IEEE_FLOAT || bits != 64 {
        return Ok(None);
    }
    let data = data.ok_or("missing data chunk")?;
    let samples: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok(Some((deinterleave(&samples, channels as usize), f64::from(rate))))
}

fn wav_f32_bytes(sig: &MultichannelSignal) -> Result<Vec<u8>, CliError> {
    let spec = hound::WavSpec {
        channels: sig.num_channels() as u16,
        sample_rate: sig.sample_rate().round() as u32,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut buf = Cursor::new(Vec::new());
    let wav_err = |e: hound::Error| CliError::Runtime(format!("WAV encoding failed: {e}"));
    let mut w = hound::WavWriter::new(&mut buf, spec).map_err(wav_err)?;
    for n in 0..sig.len() {
        for ch in sig.channels() {
            w.write_sample(ch[n] as f32).map_err(wav_err)?;
        }
    }
    w.finalize().map_err(wav_err)?;
    Ok(buf.into_inner())
}

fn wav_f64_bytes(sig: &MultichannelSignal) -> Vec<u8> {
    let m = sig.num_channels() as u16;
    let rate = sig.sample_rate().round() as u32;
    let data_len = (sig.len() * m as usize * 8) as u32;
    let mut out = Vec::with_capacity(data_len as usize + 44);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&WAVE_FORMAT_IEEE_FLOAT.to_le_bytes());
    out.extend_from_slice(&m.to_le_bytes());
    out.extend_from_slice(&rate.to_le_bytes());
    out.extend_from_slice(&(rate * u32::from(m) * 8).to_le_bytes());
    out.extend_from_slice(&(m * 8).to_le_bytes());
    out.extend_from_slice(&64u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for n in 0..sig.len() {
        for ch in sig.channels() {
            out.extend_from_slice(&ch[n].to_le_bytes());
        }
    }
    out
}

/// One column per channel. A first row that does not parse as numbers is a header.
pub fn parse_csv(bytes: &[u8]) -> Result<Vec<Vec<f64>>, String> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(bytes);
    let mut channels: Vec<Vec<f64>> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| format!("invalid CSV: {e}"))?;
        let parsed: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let row = match parsed {
            Ok(row) => row,
            Err(_) if line == 0 => continue,
            Err(e) => return Err(format!("line {}: {e}", line + 1)),
        };
        if channels.is_empty() {
            channels = vec![Vec::new(); row.len()];
        }
        if row.len() != channels.len() {
            return Err(format!("line {}: expected {} columns, got {}", line + 1, channels.len(), row.len()));
        }
        for (ch, v) in channels.iter_mut().zip(row) {
            ch.push(v);
        }
    }
    Ok(channels)
}

fn csv_bytes(sig: &MultichannelSignal) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<String> = (0..sig.num_channels()).map(|m| format!("ch{m}")).collect();
    w.write_record(&header).expect("in-memory write");
    for n in 0..sig.len() {
        w.write_record(sig.channels().iter().map(|ch| ch[n].to_string())).expect("in-memory write");
    }
    w.into_inner().expect("in-memory write")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> MultichannelSignal {
        let a: Vec<f64> = (0..50).map(|n| (n as f64 * 0.3).sin() * 0.5).collect();
        let b: Vec<f64> = a.iter().map(|v| -v / 3.0).collect();
        MultichannelSignal::new(vec![a, b], 8000.0).unwrap()
    }

    #[test]
    fn f64_wav_round_trips_exactly() {
        let sig = sample();
        let (ch, rate) = parse_wav(&wav_f64_bytes(&sig)).unwrap();
        assert_eq!(rate, 8000.0);
        assert_eq!(ch, sig.channels());
    }

    #[test]
    fn f32_wav_round_trips_to_single_precision() {
        let sig = sample();
        let (ch, _) = parse_wav(&wav_f32_bytes(&sig).unwrap()).unwrap();
        for (a, b) in ch.iter().flatten().zip(sig.channels().iter().flatten()) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }

    #[test]
    fn pcm16_is_scaled() {
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut buf = Cursor::new(Vec::new());
        let mut w = hound::WavWriter::new(&mut buf, spec).unwrap();
        for v in [16384i16, -32768, 0, 8192] {
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
        let (ch, rate) = parse_wav(&buf.into_inner()).unwrap();
        assert_eq!(rate, 16000.0);
        assert_eq!(ch, vec![vec![0.5, 0.0], vec![-1.0, 0.25]]);
    }

    #[test]
    fn pcm24_is_scaled() {
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 24,
            sample_format: hound::SampleFormat::Int,
        };
        let mut buf = Cursor::new(Vec::new());
        let mut w = hound::WavWriter::new(&mut buf, spec).unwrap();
        for v in [1 << 22, -(1 << 23)] {
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
        let (ch, _) = parse_wav(&buf.into_inner()).unwrap();
        assert_eq!(ch, vec![vec![0.5], vec![-1.0]]);
    }

    #[test]
    fn csv_header_is_optional() {
        assert_eq!(parse_csv(b"a,b\n1,2\n3,4\n").unwrap(), vec![vec![1.0, 3.0], vec![2.0, 4.0]]);
        assert_eq!(parse_csv(b"1,2\n3,4\n").unwrap(), vec![vec![1.0, 3.0], vec![2.0, 4.0]]);
        assert!(parse_csv(b"1,2\n3\n").is_err());
        assert!(parse_csv(b"1,2\nx,4\n").is_err());
    }

    #[test]
    fn csv_round_trips_exactly() {
        let sig = sample();
        assert_eq!(parse_csv(&csv_bytes(&sig)).unwrap(), sig.channels());
    }

    #[test]
    fn garbage_is_rejected() {
        assert!(parse_wav(b"not a wav file at all").is_err());
    }
}
