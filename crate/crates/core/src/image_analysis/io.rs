use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{normalize_and_crop, Image, MeanProfile, CROP_SIZE};
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Intensities as stored, before normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

/// JSON sidecar describing a RAWF32 file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSidecar {
    pub width: usize,
    pub height: usize,
    pub dtype: String,
}

fn pgm_token<R: BufRead>(r: &mut R) -> Result<String> {
    let mut tok = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            return Err(Error::format("truncated PGM header"));
        }
        match byte[0] {
            b'#' if tok.is_empty() => {
                let mut skip = Vec::new();
                r.read_until(b'\n', &mut skip)?;
            }
            b if b.is_ascii_whitespace() => {
                if !tok.is_empty() {
                    return String::from_utf8(tok).map_err(|_| Error::format("non-ASCII PGM header"));
                }
            }
            b => tok.push(b),
        }
    }
}

fn pgm_number<R: BufRead>(r: &mut R, what: &str) -> Result<usize> {
    let tok = pgm_token(r)?;
    tok.parse().map_err(|_| Error::format(format!("PGM {what} `{tok}` is not a number")))
}

/// Binary (P5) PGM with 8- or 16-bit samples.
pub fn read_pgm<R: Read>(r: R) -> Result<RawImage> {
    let mut r = BufReader::new(r);
    if pgm_token(&mut r)? != "P5" {
        return Err(Error::format("not a binary PGM (expected magic P5)"));
    }
    let width = pgm_number(&mut r, "width")?;
    let height = pgm_number(&mut r, "height")?;
    let maxval = pgm_number(&mut r, "maxval")?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::format(format!("invalid PGM header {width}x{height} maxval {maxval}")));
    }
    let bytes_per = if maxval < 256 { 1 } else { 2 };
    let mut buf = vec![0u8; width * height * bytes_per];
    r.read_exact(&mut buf).map_err(|_| Error::format("PGM pixel data truncated"))?;
    let data: Vec<f64> = if bytes_per == 1 {
        buf.iter().map(|&b| b as f64).collect()
    } else {
        buf.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f64).collect()
    };
    if data.iter().any(|&v| v > maxval as f64) {
        return Err(Error::format(format!("PGM sample exceeds maxval {maxval}")));
    }
    Ok(RawImage { width, height, data })
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Flat little-endian `f32` file with a `<stem>.json` sidecar.
pub fn read_rawf32(path: &Path) -> Result<RawImage> {
    let meta: RawSidecar = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
    parse_rawf32(&fs::read(path)?, &meta)
}

/// RAWF32 payload already in memory.
pub fn parse_rawf32(bytes: &[u8], meta: &RawSidecar) -> Result<RawImage> {
    if meta.dtype != "f32le" {
        return Err(Error::format(format!("unsupported RAWF32 dtype `{}`", meta.dtype)));
    }
    if bytes.len() != meta.width * meta.height * 4 {
        return Err(Error::format(format!(
            "RAWF32 holds {} bytes, sidecar implies {}",
            bytes.len(),
            meta.width * meta.height * 4
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(RawImage { width: meta.width, height: meta.height, data })
}

/// PGM when the file starts with `P5`, RAWF32 otherwise.
pub fn read_image(path: &Path) -> Result<RawImage> {
    let mut magic = [0u8; 2];
    let n = fs::File::open(path)?.read(&mut magic)?;
    if n == 2 && &magic == b"P5" {
        read_pgm(fs::File::open(path)?)
    } else {
        read_rawf32(path)
    }
}

pub fn load_and_normalize<T: Scalar>(path: &Path) -> Result<Image<T>> {
    normalize_and_crop(&read_image(path)?, CROP_SIZE)
}

/// Maps `[-1, 1]` onto `0..=maxval`, clamping out-of-range values.
pub fn write_pgm<T: Scalar, W: Write>(mut w: W, img: &Image<T>, maxval: u16) -> Result<()> {
    if maxval == 0 {
        return Err(Error::invalid("PGM maxval must be positive"));
    }
    write!(w, "P5\n{} {}\n{}\n", img.width(), img.height(), maxval)?;
    let scale = |v: T| ((v.as_f64().clamp(-1.0, 1.0) + 1.0) / 2.0 * maxval as f64).round() as u16;
    let mut out = Vec::with_capacity(img.pixels().len() * 2);
    for &v in img.pixels() {
        if maxval < 256 {
            out.push(scale(v) as u8);
        } else {
            out.extend_from_slice(&scale(v).to_be_bytes());
        }
    }
    w.write_all(&out)?;
    Ok(())
}

pub fn write_rawf32<T: Scalar>(path: &Path, img: &Image<T>) -> Result<()> {
    let bytes: Vec<u8> = img.pixels().iter().flat_map(|v| (v.as_f64() as f32).to_le_bytes()).collect();
    fs::write(path, bytes)?;
    let meta = RawSidecar { width: img.width(), height: img.height(), dtype: "f32le".into() };
    fs::write(sidecar_path(path), serde_json::to_vec(&meta)?)?;
    Ok(())
}

/// `row,<name>,…`; rows without tissue are left empty.
pub fn write_profiles_csv<W: Write>(w: W, profiles: &[(&str, &MeanProfile)]) -> Result<()> {
    let len = profiles.first().map_or(0, |(_, p)| p.values.len());
    if profiles.iter().any(|(_, p)| p.values.len() != len) {
        return Err(Error::invalid("profiles differ in length"));
    }
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(std::iter::once("row").chain(profiles.iter().map(|(n, _)| *n)))?;
    for r in 0..len {
        let mut rec = vec![r.to_string()];
        rec.extend(profiles.iter().map(|(_, p)| p.values[r].map(|v| v.to_string()).unwrap_or_default()));
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_8bit_with_comment() {
        let mut bytes = b"P5\n# scanner\n3 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 10, 255, 1, 2, 3]);
        let raw = read_pgm(&bytes[..]).unwrap();
        assert_eq!((raw.width, raw.height), (3, 2));
        assert_eq!(raw.data, vec![0.0, 10.0, 255.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn pgm_16bit_is_big_endian() {
        let mut bytes = b"P5 2 1 4095\n".to_vec();
        bytes.extend_from_slice(&[0x0f, 0xff, 0x01, 0x00]);
        assert_eq!(read_pgm(&bytes[..]).unwrap().data, vec![4095.0, 256.0]);
    }

    #[test]
    fn malformed_pgm() {
        assert!(read_pgm(&b"P2\n1 1\n255\n0"[..]).is_err());
        assert!(read_pgm(&b"P5\n2 2\n255\n\x01"[..]).is_err());
        assert!(read_pgm(&b"P5\nx 2\n255\n"[..]).is_err());
        assert!(read_pgm(&b"P5\n1 1\n100\n\xff"[..]).is_err());
    }

    #[test]
    fn pgm_round_trip_16bit() {
        let img = Image::new(2, 2, vec![-1.0f32, 1.0, 0.0, 0.5]).unwrap();
        let mut buf = Vec::new();
        write_pgm(&mut buf, &img, 65535).unwrap();
        let raw = read_pgm(&buf[..]).unwrap();
        assert_eq!(raw.data, vec![0.0, 65535.0, 32768.0, 49151.0]);
    }

    #[test]
    fn rawf32_with_sidecar_loads_and_crops() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.f32");
        let pixels: Vec<f32> = (0..300 * 260).map(|i| (i % 300) as f32 / 299.0).collect();
        write_rawf32(&path, &Image::new(300, 260, pixels).unwrap()).unwrap();
        let raw = read_image(&path).unwrap();
        assert_eq!((raw.width, raw.height), (300, 260));
        let img: Image<f32> = load_and_normalize(&path).unwrap();
        assert_eq!((img.width(), img.height()), (256, 256));
        assert_eq!(img.get(0, 0), 2.0 * (22.0f32 / 299.0) - 1.0);
        assert!(img.pixels().iter().all(|v| (-1.0..=1.0).contains(v)));

        fs::write(dir.path().join("img.json"), br#"{"width":300,"height":261,"dtype":"f32le"}"#).unwrap();
        assert!(read_image(&path).is_err());
    }

    #[test]
    fn profiles_csv() {
        let a = MeanProfile { values: vec![Some(1.5), None] };
        let b = MeanProfile { values: vec![Some(2.0), Some(3.0)] };
        let mut buf = Vec::new();
        write_profiles_csv(&mut buf, &[("a", &a), ("b", &b)]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "row,a,b\n0,1.5,2\n1,,3\n");
    }
}
