//! Binary Netpbm I/O: P6 for colour images, P5 for label masks.

use std::fs;
use std::path::Path;

use super::{Image, LabelMap, ViewError};

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: usize,
    payload_offset: usize,
}

fn parse_err(offset: usize, msg: impl Into<String>) -> ViewError {
    ViewError::Parse {
        offset,
        msg: msg.into(),
    }
}

fn skip_space_and_comments(bytes: &[u8], mut pos: usize) -> usize {
    loop {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
        } else {
            return pos;
        }
    }
}

fn parse_number(bytes: &[u8], pos: usize) -> Result<(usize, usize), ViewError> {
    let pos = skip_space_and_comments(bytes, pos);
    let end = bytes[pos..]
        .iter()
        .position(|b| !b.is_ascii_digit())
        .map_or(bytes.len(), |n| pos + n);
    if end == pos {
        return Err(parse_err(pos, "expected a decimal number"));
    }
    let text = std::str::from_utf8(&bytes[pos..end]).expect("ascii digits");
    let value = text
        .parse::<usize>()
        .map_err(|_| parse_err(pos, format!("number {text} out of range")))?;
    Ok((value, end))
}

fn parse_header(bytes: &[u8]) -> Result<Header, ViewError> {
    if bytes.len() < 2 {
        return Err(parse_err(0, "file too short for a magic number"));
    }
    let magic = [bytes[0], bytes[1]];
    let (width, pos) = parse_number(bytes, 2)?;
    let (height, pos) = parse_number(bytes, pos)?;
    let (maxval, pos) = parse_number(bytes, pos)?;
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => {}
        _ => return Err(parse_err(pos, "expected one whitespace byte before the raster")),
    }
    if width == 0 || height == 0 {
        return Err(parse_err(2, "zero image extent"));
    }
    Ok(Header {
        magic,
        width,
        height,
        maxval,
        payload_offset: pos + 1,
    })
}

fn payload<'a>(bytes: &'a [u8], header: &Header, channels: usize) -> Result<&'a [u8], ViewError> {
    if header.maxval != 255 {
        return Err(parse_err(
            header.payload_offset - 1,
            format!("maxval {} unsupported (only 255)", header.maxval),
        ));
    }
    let needed = header.width * header.height * channels;
    let available = bytes.len() - header.payload_offset;
    if available < needed {
        return Err(parse_err(
            bytes.len(),
            format!("truncated raster: {available} of {needed} bytes"),
        ));
    }
    Ok(&bytes[header.payload_offset..header.payload_offset + needed])
}

/// Decodes a binary P6 image with maxval 255.
pub fn decode_ppm(bytes: &[u8]) -> Result<Image, ViewError> {
    let header = parse_header(bytes)?;
    if &header.magic != b"P6" {
        return Err(parse_err(
            0,
            format!(
                "unsupported magic {:?} for colour ingest (need P6)",
                String::from_utf8_lossy(&header.magic)
            ),
        ));
    }
    let raster = payload(bytes, &header, 3)?;
    let data = raster.iter().map(|&b| f32::from(b) / 255.0).collect();
    Image::new(header.height, header.width, data)
}

pub fn encode_ppm(image: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.data().iter().map(|&v| quantize(v)));
    out
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Decodes a binary P5 label map with maxval 255; values are kept as integers.
pub fn decode_pgm(bytes: &[u8]) -> Result<LabelMap, ViewError> {
    let header = parse_header(bytes)?;
    if &header.magic != b"P5" {
        return Err(parse_err(
            0,
            format!(
                "unsupported magic {:?} for label maps (need P5)",
                String::from_utf8_lossy(&header.magic)
            ),
        ));
    }
    let raster = payload(bytes, &header, 1)?;
    LabelMap::new(header.height, header.width, raster.to_vec())
}

pub fn encode_pgm(map: &LabelMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", map.width, map.height).into_bytes();
    out.extend_from_slice(&map.data);
    out
}

pub fn load_ppm(path: impl AsRef<Path>) -> Result<Image, ViewError> {
    decode_ppm(&fs::read(path)?)
}

pub fn save_ppm(image: &Image, path: impl AsRef<Path>) -> Result<(), ViewError> {
    Ok(fs::write(path, encode_ppm(image))?)
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<LabelMap, ViewError> {
    decode_pgm(&fs::read(path)?)
}

pub fn save_pgm(map: &LabelMap, path: impl AsRef<Path>) -> Result<(), ViewError> {
    Ok(fs::write(path, encode_pgm(map))?)
}

/// Writes a single-channel float map as a grey P6 image.
pub fn save_gray_ppm(values: &[f32], height: usize, width: usize, path: impl AsRef<Path>) -> Result<(), ViewError> {
    let data = values.iter().flat_map(|&v| [v.clamp(0.0, 1.0); 3]).collect();
    save_ppm(&Image::new(height, width, data)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_black_pixels_scale() {
        let mut bytes = b"P6\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 255, 255, 0, 0, 0]);
        let img = decode_ppm(&bytes).unwrap();
        assert_eq!(img.data(), &[1., 1., 1., 0., 0., 0.]);
    }

    #[test]
    fn p5_rejected_for_colour() {
        let mut bytes = b"P5\n1 1\n255\n".to_vec();
        bytes.push(0);
        assert!(matches!(decode_ppm(&bytes), Err(ViewError::Parse { offset: 0, .. })));
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3]);
        match decode_ppm(&bytes) {
            Err(ViewError::Parse { offset, msg }) => {
                assert_eq!(offset, bytes.len());
                assert!(msg.contains("truncated"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_header() {
        assert!(decode_ppm(b"P6\nx 2\n255\n").is_err());
        assert!(decode_ppm(b"P").is_err());
        assert!(decode_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0").is_err());
    }

    #[test]
    fn comments_in_header_are_skipped() {
        let mut bytes = b"P6\n# made by hand\n1 1\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 128, 255]);
        let img = decode_ppm(&bytes).unwrap();
        assert_eq!(img.pixel(0, 0)[2], 1.0);
    }

    #[test]
    fn save_load_roundtrip_within_quantization() {
        let img = Image::from_fn(5, 7, |y, x| [y as f32 / 4.0, x as f32 / 6.0, 0.3337]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ppm");
        save_ppm(&img, &path).unwrap();
        let back = load_ppm(&path).unwrap();
        assert!(img.max_abs_diff(&back) <= 1.0 / 255.0);
    }

    #[test]
    fn pgm_roundtrip_is_exact() {
        let map = LabelMap::new(2, 3, vec![0, 1, 2, 3, 0, 1]).unwrap();
        assert_eq!(decode_pgm(&encode_pgm(&map)).unwrap(), map);
        assert!(decode_pgm(&encode_ppm(&Image::filled(1, 1, [0.; 3]))).is_err());
    }
}
