//! IDX and CIFAR-10 readers, synthetic blob data, PGM images, histograms
//! and CSV helpers.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{ChannelMatrix, FeatureMap};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image: FeatureMap,
    pub label: usize,
}

/// Unsigned-byte IDX tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

const IDX_UBYTE: u8 = 0x08;

pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor> {
    if bytes.len() < 4 {
        return Err(Error::parse(0, format!("truncated header: {} bytes", bytes.len())));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::parse(0, "bad magic: first two bytes must be zero"));
    }
    if bytes[2] != IDX_UBYTE {
        return Err(Error::parse(2, format!("unsupported element type 0x{:02x}", bytes[2])));
    }
    let ndim = bytes[3] as usize;
    if ndim == 0 {
        return Err(Error::parse(3, "dimension count must be positive"));
    }
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(Error::parse(
            bytes.len() as u64,
            format!("truncated header: need {header} bytes, got {}", bytes.len()),
        ));
    }
    let mut dims = Vec::with_capacity(ndim);
    let mut total: usize = 1;
    for i in 0..ndim {
        let at = 4 + 4 * i;
        let d = u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
        total = total
            .checked_mul(d)
            .ok_or_else(|| Error::parse(at as u64, "dimension product overflows"))?;
        dims.push(d);
    }
    let payload = bytes.len() - header;
    if payload != total {
        return Err(Error::parse(
            header as u64,
            format!("payload length mismatch: expected {total} bytes, got {payload}"),
        ));
    }
    Ok(IdxTensor {
        dims,
        data: bytes[header..].to_vec(),
    })
}

pub fn encode_idx(t: &IdxTensor) -> Result<Vec<u8>> {
    let total: usize = t.dims.iter().product();
    if t.dims.is_empty() || t.dims.len() > 255 || total != t.data.len() {
        return Err(Error::shape(format!(
            "idx dims {:?} do not match {} data bytes",
            t.dims,
            t.data.len()
        )));
    }
    let mut out = vec![0, 0, IDX_UBYTE, t.dims.len() as u8];
    for &d in &t.dims {
        let d = u32::try_from(d).map_err(|_| Error::argument(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(&t.data);
    Ok(out)
}

pub fn read_idx(path: impl AsRef<Path>) -> Result<IdxTensor> {
    parse_idx(&fs::read(path)?)
}

pub fn write_idx(t: &IdxTensor, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_idx(t)?)?;
    Ok(())
}

/// Pairs an `[N, h, w]` image tensor with an `[N]` label tensor.
pub fn idx_labeled_images(images: &IdxTensor, labels: &IdxTensor) -> Result<Vec<LabeledImage>> {
    let [n, h, w] = images.dims[..] else {
        return Err(Error::shape(format!("expected [N, h, w] images, got {:?}", images.dims)));
    };
    if labels.dims != [n] {
        return Err(Error::shape(format!("expected [{n}] labels, got {:?}", labels.dims)));
    }
    let plane = h * w;
    (0..n)
        .map(|i| {
            let px = images.data[i * plane..(i + 1) * plane].iter().map(|&b| f64::from(b) / 255.0).collect();
            Ok(LabeledImage {
                image: FeatureMap::new(1, h, w, px)?,
                label: labels.data[i] as usize,
            })
        })
        .collect()
}

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_RECORD: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;
pub const CIFAR_CLASSES: usize = 10;

pub fn parse_cifar10(bytes: &[u8]) -> Result<Vec<LabeledImage>> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD) {
        return Err(Error::parse(
            (bytes.len() - bytes.len() % CIFAR_RECORD) as u64,
            format!("length {} is not a multiple of {CIFAR_RECORD}", bytes.len()),
        ));
    }
    bytes
        .chunks_exact(CIFAR_RECORD)
        .enumerate()
        .map(|(i, rec)| {
            let label = rec[0] as usize;
            if label >= CIFAR_CLASSES {
                return Err(Error::parse((i * CIFAR_RECORD) as u64, format!("label {label} out of range")));
            }
            let px = rec[1..].iter().map(|&b| f64::from(b) / 255.0).collect();
            Ok(LabeledImage {
                image: FeatureMap::new(3, CIFAR_SIDE, CIFAR_SIDE, px)?,
                label,
            })
        })
        .collect()
}

pub fn read_cifar10_bin(path: impl AsRef<Path>) -> Result<Vec<LabeledImage>> {
    parse_cifar10(&fs::read(path)?)
}

/// Magic of the raw feature-map container: `FMAP`, then `c, h, w` as u32
/// LE, then `c*h*w` f64 LE values in channel-major order.
pub const FMAP_MAGIC: &[u8; 4] = b"FMAP";

pub fn encode_feature_map(x: &FeatureMap) -> Result<Vec<u8>> {
    let mut out = FMAP_MAGIC.to_vec();
    for d in x.shape() {
        let d = u32::try_from(d).map_err(|_| Error::argument(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in x.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn parse_feature_map(bytes: &[u8]) -> Result<FeatureMap> {
    if bytes.len() < 16 {
        return Err(Error::parse(0, format!("truncated header: {} bytes", bytes.len())));
    }
    if &bytes[..4] != FMAP_MAGIC {
        return Err(Error::parse(0, "bad magic, expected \"FMAP\""));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize;
    let (c, h, w) = (dim(0), dim(1), dim(2));
    if c == 0 || h == 0 || w == 0 {
        return Err(Error::parse(4, "dimensions must be positive"));
    }
    let expected = c
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .and_then(|v| v.checked_mul(8))
        .ok_or_else(|| Error::parse(4, "dimension product overflows"))?;
    if bytes.len() - 16 != expected {
        return Err(Error::parse(
            16,
            format!("payload length mismatch: expected {expected} bytes, got {}", bytes.len() - 16),
        ));
    }
    let data: Vec<f64> = bytes[16..]
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::parse((16 + 8 * i) as u64, "non-finite value"));
    }
    FeatureMap::new(c, h, w, data)
}

pub fn read_feature_map(path: impl AsRef<Path>) -> Result<FeatureMap> {
    parse_feature_map(&fs::read(path)?)
}

pub fn write_feature_map(x: &FeatureMap, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_feature_map(x)?)?;
    Ok(())
}

pub const SYNTH_NOISE: f64 = 0.1;

/// Noise-free single-channel pattern for `class`: a Gaussian blob whose
/// centre sits on a ring around the image centre, one angle per class.
pub fn blob_template(class: usize, classes: usize, h: usize, w: usize) -> FeatureMap {
    let angle = std::f64::consts::TAU * class as f64 / classes as f64 + std::f64::consts::FRAC_PI_4;
    let (cy, cx) = (
        (h as f64 - 1.0) / 2.0 + 0.25 * h as f64 * angle.sin(),
        (w as f64 - 1.0) / 2.0 + 0.25 * w as f64 * angle.cos(),
    );
    let sigma = h.max(w) as f64 / 8.0;
    let mut data = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let d2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
            data.push((-d2 / (2.0 * sigma * sigma)).exp());
        }
    }
    FeatureMap::new(1, h, w, data).expect("template shape")
}

pub fn synth_blobs(n_samples: usize, classes: usize, h: usize, w: usize, seed: u64) -> Result<Vec<LabeledImage>> {
    synth_blobs_with_noise(n_samples, classes, h, w, seed, SYNTH_NOISE)
}

/// Class `i % classes` for sample `i` before a seeded shuffle, so class
/// counts differ by at most one. Pixels are clamped to `[0, 1]`.
pub fn synth_blobs_with_noise(
    n_samples: usize,
    classes: usize,
    h: usize,
    w: usize,
    seed: u64,
    noise: f64,
) -> Result<Vec<LabeledImage>> {
    if classes < 2 {
        return Err(Error::argument(format!("need at least 2 classes, got {classes}")));
    }
    if h == 0 || w == 0 {
        return Err(Error::argument("image sides must be positive"));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::argument(format!("noise must be finite and non-negative, got {noise}")));
    }
    let templates: Vec<FeatureMap> = (0..classes).map(|c| blob_template(c, classes, h, w)).collect();
    let mut rng = Rng::new(seed);
    let mut labels: Vec<usize> = (0..n_samples).map(|i| i % classes).collect();
    rng.shuffle(&mut labels);
    Ok(labels
        .into_iter()
        .map(|label| {
            let mut image = templates[label].clone();
            if noise > 0.0 {
                for v in image.data_mut() {
                    *v = (*v + noise * rng.normal()).clamp(0.0, 1.0);
                }
            }
            LabeledImage { image, label }
        })
        .collect())
}

/// 8-bit grayscale raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PgmImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// Min-max normalises to `0..=255` (constant input maps to zero) and
/// upsamples by pixel replication.
pub fn pgm_from_matrix(m: &ChannelMatrix, upscale: usize) -> Result<PgmImage> {
    if upscale == 0 {
        return Err(Error::argument("upscale factor must be positive"));
    }
    if !m.is_finite() {
        return Err(Error::Numeric("cannot render non-finite matrix".into()));
    }
    let lo = m.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = m.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let level = |v: f64| -> u8 {
        if range > 0.0 {
            ((v - lo) / range * 255.0).round() as u8
        } else {
            0
        }
    };
    let (height, width) = (m.rows() * upscale, m.cols() * upscale);
    let mut pixels = Vec::with_capacity(height * width);
    for r in 0..height {
        for c in 0..width {
            pixels.push(level(m.get(r / upscale, c / upscale)));
        }
    }
    Ok(PgmImage { width, height, pixels })
}

pub fn encode_pgm(img: &PgmImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn write_pgm(m: &ChannelMatrix, path: impl AsRef<Path>, upscale: usize) -> Result<PgmImage> {
    let img = pgm_from_matrix(m, upscale)?;
    fs::write(path, encode_pgm(&img))?;
    Ok(img)
}

fn pgm_token(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::parse(start as u64, "expected a decimal number"));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .expect("ascii digits")
        .parse()
        .map_err(|_| Error::parse(start as u64, "number out of range"))
}

/// Reads binary P5 with maxval 255 and no comments.
pub fn parse_pgm(bytes: &[u8]) -> Result<PgmImage> {
    if !bytes.starts_with(b"P5") {
        return Err(Error::parse(0, "bad magic, expected P5"));
    }
    let mut pos = 2;
    let width = pgm_token(bytes, &mut pos)?;
    let height = pgm_token(bytes, &mut pos)?;
    let maxval_at = pos;
    if pgm_token(bytes, &mut pos)? != 255 {
        return Err(Error::parse(maxval_at as u64, "only maxval 255 is supported"));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::parse(pos as u64, "missing whitespace after header"));
    }
    pos += 1;
    let expected = width
        .checked_mul(height)
        .ok_or_else(|| Error::parse(2, "image size overflows"))?;
    let got = bytes.len() - pos;
    if got != expected {
        return Err(Error::parse(
            pos as u64,
            format!("pixel data length mismatch: expected {expected} bytes, got {got}"),
        ));
    }
    Ok(PgmImage {
        width,
        height,
        pixels: bytes[pos..].to_vec(),
    })
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<PgmImage> {
    parse_pgm(&fs::read(path)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Equal-width bins over `[min, max]`; the maximum lands in the last bin.
pub fn histogram(values: &[f64], bins: usize) -> Result<Histogram> {
    if values.is_empty() {
        return Err(Error::argument("histogram of empty input"));
    }
    if bins < 2 {
        return Err(Error::argument(format!("need at least 2 bins, got {bins}")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("histogram input contains non-finite values".into()));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|i| if i == bins { hi } else { lo + width * i as f64 }).collect();
    let mut counts = vec![0; bins];
    for &v in values {
        let b = if width > 0.0 {
            (((v - lo) / width) as usize).min(bins - 1)
        } else {
            0
        };
        counts[b] += 1;
    }
    Ok(Histogram { edges, counts })
}

impl Histogram {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin,lo,hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(out, "{i},{},{},{c}", self.edges[i], self.edges[i + 1]).expect("write to String");
        }
        out
    }
}

/// One CSV row per matrix row, with a `row,c0,c1,...` header.
pub fn matrix_csv(m: &ChannelMatrix) -> String {
    let mut out = String::from("row");
    for c in 0..m.cols() {
        write!(out, ",c{c}").expect("write to String");
    }
    out.push('\n');
    for r in 0..m.rows() {
        write!(out, "{r}").expect("write to String");
        for v in m.row(r) {
            write!(out, ",{v}").expect("write to String");
        }
        out.push('\n');
    }
    out
}

/// Inverse of [`matrix_csv`].
pub fn parse_matrix_csv(text: &str) -> Result<ChannelMatrix> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::parse(0, "empty csv"))?;
    let cols = header.split(',').count().saturating_sub(1);
    let mut data = Vec::new();
    let mut rows = 0;
    let mut offset = header.len() as u64 + 1;
    for line in lines {
        let fields: Vec<&str> = line.split(',').skip(1).collect();
        if fields.len() != cols {
            return Err(Error::parse(offset, format!("expected {cols} values, got {}", fields.len())));
        }
        for f in fields {
            data.push(f.parse::<f64>().map_err(|e| Error::parse(offset, format!("bad value {f:?}: {e}")))?);
        }
        rows += 1;
        offset += line.len() as u64 + 1;
    }
    ChannelMatrix::new(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idx_header_example() {
        let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        bytes.extend(1..=8u8);
        let t = parse_idx(&bytes).unwrap();
        assert_eq!(t.dims, vec![2, 2, 2]);
        assert_eq!(t.data, (1..=8u8).collect::<Vec<_>>());
        assert_eq!(encode_idx(&t).unwrap(), bytes);
    }

    #[test]
    fn idx_truncation_names_lengths() {
        let mut bytes = vec![0, 0, 8, 1, 0, 0, 0, 5];
        bytes.extend([1, 2, 3]);
        match parse_idx(&bytes) {
            Err(Error::Parse { offset, message }) => {
                assert_eq!(offset, 8);
                assert!(message.contains("expected 5") && message.contains("got 3"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_idx(&[0, 0, 9, 1]), Err(Error::Parse { offset: 2, .. })));
        assert!(matches!(parse_idx(&[1, 0, 8, 1]), Err(Error::Parse { offset: 0, .. })));
        assert!(matches!(parse_idx(&[0, 0, 8, 2, 0, 0]), Err(Error::Parse { .. })));
        let huge = [0, 0, 8, 3, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255];
        assert!(parse_idx(&huge).is_err());
    }

    #[test]
    fn idx_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.idx");
        let t = IdxTensor {
            dims: vec![3, 1, 2],
            data: vec![0, 255, 7, 9, 11, 13],
        };
        write_idx(&t, &path).unwrap();
        assert_eq!(read_idx(&path).unwrap(), t);
    }

    #[test]
    fn idx_images_pair_with_labels() {
        let images = IdxTensor { dims: vec![2, 1, 2], data: vec![0, 255, 255, 0] };
        let labels = IdxTensor { dims: vec![2], data: vec![3, 7] };
        let out = idx_labeled_images(&images, &labels).unwrap();
        assert_eq!(out[1].label, 7);
        assert_eq!(out[0].image.data(), &[0.0, 1.0]);
        assert!(idx_labeled_images(&labels, &labels).is_err());
    }

    fn cifar_fixture() -> Vec<u8> {
        let mut bytes = vec![9u8];
        bytes.extend(std::iter::repeat_n(255, 3072));
        bytes.push(0);
        bytes.extend((0..3072).map(|i| (i % 256) as u8));
        bytes
    }

    #[test]
    fn cifar_two_records() {
        let bytes = cifar_fixture();
        assert_eq!(bytes.len(), 6146);
        let imgs = parse_cifar10(&bytes).unwrap();
        assert_eq!(imgs.len(), 2);
        assert_eq!(imgs[0].image.shape(), [3, 32, 32]);
        assert_eq!(imgs[0].label, 9);
        assert!(imgs[0].image.data().iter().all(|&v| v == 1.0));
        assert_eq!(imgs[1].image.get(0, 0, 1), 1.0 / 255.0);
        assert!(imgs[1].image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn cifar_rejects_ragged_length_and_bad_labels() {
        let bytes = cifar_fixture();
        assert!(matches!(parse_cifar10(&bytes[..6000]), Err(Error::Parse { offset: 3073, .. })));
        let mut bad = bytes;
        bad[CIFAR_RECORD] = 10;
        assert!(matches!(parse_cifar10(&bad), Err(Error::Parse { offset: 3073, .. })));
    }

    #[test]
    fn synth_is_deterministic_and_balanced() {
        let a = synth_blobs(101, 3, 8, 8, 5).unwrap();
        assert_eq!(a, synth_blobs(101, 3, 8, 8, 5).unwrap());
        assert_ne!(a, synth_blobs(101, 3, 8, 8, 6).unwrap());
        let mut counts = [0usize; 3];
        for s in &a {
            counts[s.label] += 1;
            assert!(s.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        assert!(synth_blobs(4, 1, 8, 8, 0).is_err());
    }

    #[test]
    fn noiseless_synth_equals_templates() {
        for s in synth_blobs_with_noise(20, 4, 6, 10, 2, 0.0).unwrap() {
            assert_eq!(s.image, blob_template(s.label, 4, 6, 10));
        }
    }

    #[test]
    fn nearest_template_separates_noisy_blobs() {
        for classes in [2, 4] {
            let templates: Vec<_> = (0..classes).map(|c| blob_template(c, classes, 16, 16)).collect();
            let data = synth_blobs(512, classes, 16, 16, 3).unwrap();
            let correct = data
                .iter()
                .filter(|s| {
                    let dist = |t: &FeatureMap| -> f64 {
                        t.data().iter().zip(s.image.data()).map(|(a, b)| (a - b).powi(2)).sum()
                    };
                    let best = (0..classes)
                        .min_by(|&a, &b| dist(&templates[a]).total_cmp(&dist(&templates[b])))
                        .unwrap();
                    best == s.label
                })
                .count();
            assert!(correct as f64 / data.len() as f64 >= 0.99, "{classes}: {correct}");
        }
    }

    #[test]
    fn pgm_golden_two_by_two() {
        let m = ChannelMatrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let img = pgm_from_matrix(&m, 1).unwrap();
        assert_eq!(img.pixels, vec![0, 255, 255, 0]);
        let mut golden = b"P5\n2 2\n255\n".to_vec();
        golden.extend([0, 255, 255, 0]);
        assert_eq!(encode_pgm(&img), golden);
    }

    #[test]
    fn pgm_constant_and_upscale() {
        let img = pgm_from_matrix(&ChannelMatrix::filled(3, 2, 4.2), 1).unwrap();
        assert!(img.pixels.iter().all(|&p| p == 0));

        let m = ChannelMatrix::new(14, 14, (0..196).map(f64::from).collect()).unwrap();
        let img = pgm_from_matrix(&m, 4).unwrap();
        assert_eq!((img.width, img.height), (56, 56));
        assert_eq!(img.pixels[0], img.pixels[3 * 56 + 3]);
        assert_ne!(img.pixels[0], img.pixels[4]);
        assert!(pgm_from_matrix(&m, 0).is_err());
    }

    #[test]
    fn pgm_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        let m = ChannelMatrix::new(3, 5, (0..15).map(|v| (v as f64).sin()).collect()).unwrap();
        let img = write_pgm(&m, &path, 2).unwrap();
        let bytes = fs::read(&path).unwrap();
        let back = read_pgm(&path).unwrap();
        assert_eq!(back, img);
        assert_eq!(encode_pgm(&back), bytes);
    }

    #[test]
    fn pgm_reader_rejects_malformed() {
        assert!(matches!(parse_pgm(b"P2\n1 1\n255\n\0"), Err(Error::Parse { offset: 0, .. })));
        assert!(matches!(parse_pgm(b"P5\n2 2\n255\n\0"), Err(Error::Parse { offset: 11, .. })));
        assert!(parse_pgm(b"P5\n2 2\n15\n\0\0\0\0").is_err());
        assert!(parse_pgm(b"P5\nx").is_err());
    }

    #[test]
    fn histogram_examples() {
        let h = histogram(&[3.0; 7], 4).unwrap();
        assert_eq!(h.counts, vec![7, 0, 0, 0]);
        let vals: Vec<f64> = (0..100).map(f64::from).collect();
        let h = histogram(&vals, 10).unwrap();
        assert_eq!(h.counts.iter().sum::<usize>(), 100);
        assert_eq!(h.counts, vec![10; 10]);
        assert_eq!(h.edges.len(), 11);
        assert!(histogram(&[], 4).is_err());
        assert!(histogram(&[1.0], 1).is_err());
        assert_eq!(h.to_csv().lines().count(), 11);
    }

    #[test]
    fn gaussian_draws_have_normal_moments() {
        let mut rng = Rng::new(2024);
        let xs: Vec<f64> = (0..100_000).map(|_| rng.normal()).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let m3 = xs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
        let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
        let skew = m3 / m2.powf(1.5);
        let kurt = m4 / (m2 * m2) - 3.0;
        assert!(skew.abs() < 0.05, "skew {skew}");
        assert!(kurt.abs() < 0.1, "kurtosis {kurt}");
        let h = histogram(&xs, 40).unwrap();
        assert_eq!(h.counts.iter().sum::<usize>(), xs.len());
    }

    #[test]
    fn feature_map_container_round_trip() {
        let x = FeatureMap::new(2, 1, 3, vec![0.5, -1.0, 3.25, 0.0, 1e-300, -7.0]).unwrap();
        let bytes = encode_feature_map(&x).unwrap();
        assert_eq!(&bytes[..4], b"FMAP");
        assert_eq!(bytes.len(), 16 + 6 * 8);
        assert_eq!(parse_feature_map(&bytes).unwrap(), x);
        assert!(matches!(parse_feature_map(&bytes[..40]), Err(Error::Parse { offset: 16, .. })));
        let mut bad = bytes.clone();
        bad[16..24].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(parse_feature_map(&bad), Err(Error::Parse { offset: 16, .. })));
        assert!(matches!(parse_feature_map(b"XMAP0000000000000000"), Err(Error::Parse { offset: 0, .. })));
    }

    #[test]
    fn matrix_csv_round_trip() {
        let m = ChannelMatrix::new(2, 3, vec![0.1, -2.5, 1e-17, 3.0, 4.0, 1.0 / 3.0]).unwrap();
        assert_eq!(parse_matrix_csv(&matrix_csv(&m)).unwrap(), m);
        assert!(parse_matrix_csv("row,c0\n0,1,2\n").is_err());
    }
}
