//! Binary shard of fixed-size image-caption pairs.
//!
//! Layout (little-endian):
//!
//! ```text
//! "CLPA" | version u16 | height u16 | width u16 | count u32 | flags u32
//! count x ( class_id i32 | caption_len u32 | caption bytes | H*W*3 bytes )
//! ```
//!
//! A `class_id` of -1 marks an unlabeled record.

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::IngestError;

pub const MAGIC: &[u8; 4] = b"CLPA";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 18;

/// 8-bit interleaved RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self, IngestError> {
        if data.len() != height * width * 3 {
            return Err(IngestError::InvalidRecord(format!(
                "image of {}x{} needs {} bytes, got {}",
                height,
                width,
                height * width * 3,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(height * width * 3).collect();
        Self { height, width, data }
    }

    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairRecord {
    pub image: RgbImage,
    pub caption: String,
    pub class_id: Option<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ShardHeader {
    pub version: u16,
    pub height: u16,
    pub width: u16,
    pub count: u32,
    pub flags: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Shard {
    pub height: usize,
    pub width: usize,
    pub flags: u32,
    pub records: Vec<PairRecord>,
}

impl Shard {
    pub fn new(height: usize, width: usize, records: Vec<PairRecord>) -> Result<Self, IngestError> {
        for (i, r) in records.iter().enumerate() {
            if r.image.height != height || r.image.width != width {
                return Err(IngestError::InvalidRecord(format!(
                    "record {} is {}x{}, shard is {}x{}",
                    i, r.image.height, r.image.width, height, width
                )));
            }
            if r.caption.trim().is_empty() {
                return Err(IngestError::InvalidRecord(format!("record {} has an empty caption", i)));
            }
        }
        Ok(Self { height, width, flags: 0, records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, IngestError> {
        let (h, w) = (u16::try_from(self.height), u16::try_from(self.width));
        let (Ok(h), Ok(w)) = (h, w) else {
            return Err(IngestError::InvalidRecord(format!("image size {}x{} exceeds u16", self.height, self.width)));
        };
        let stride = self.height * self.width * 3;
        let mut out = Vec::with_capacity(HEADER_LEN + self.records.len() * (stride + 40));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&h.to_le_bytes());
        out.extend_from_slice(&w.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.flags.to_le_bytes());
        for r in &self.records {
            let class = r.class_id.map_or(-1i32, |c| c as i32);
            out.extend_from_slice(&class.to_le_bytes());
            out.extend_from_slice(&(r.caption.len() as u32).to_le_bytes());
            out.extend_from_slice(r.caption.as_bytes());
            if r.image.data.len() != stride {
                return Err(IngestError::InvalidRecord("image stride differs from header".into()));
            }
            out.extend_from_slice(&r.image.data);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IngestError> {
        let header = read_header(bytes)?;
        let (h, w) = (header.height as usize, header.width as usize);
        let stride = h * w * 3;
        let expected = header.count as usize;
        let mut records = Vec::with_capacity(expected);
        let mut pos = HEADER_LEN;
        let truncated = |actual: usize| IngestError::Truncated { expected, actual };
        for _ in 0..expected {
            let actual = records.len();
            let fixed = bytes.get(pos..pos + 8).ok_or_else(|| truncated(actual))?;
            let class = i32::from_le_bytes(fixed[0..4].try_into().expect("4 bytes"));
            let cap_len = u32::from_le_bytes(fixed[4..8].try_into().expect("4 bytes")) as usize;
            pos += 8;
            let cap = bytes.get(pos..pos + cap_len).ok_or_else(|| truncated(actual))?;
            let caption = String::from_utf8(cap.to_vec())
                .map_err(|_| IngestError::InvalidRecord(format!("record {} caption is not UTF-8", actual)))?;
            pos += cap_len;
            let img = bytes.get(pos..pos + stride).ok_or_else(|| truncated(actual))?;
            pos += stride;
            let class_id = if class < 0 { None } else { Some(class as u32) };
            records.push(PairRecord { image: RgbImage { height: h, width: w, data: img.to_vec() }, caption, class_id });
        }
        if pos != bytes.len() {
            return Err(IngestError::CountMismatch {
                declared: expected,
                trailing_bytes: bytes.len() - pos,
            });
        }
        Ok(Self { height: h, width: w, flags: header.flags, records })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), IngestError> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path.as_ref())?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, IngestError> {
        Self::from_bytes(&fs::read(path.as_ref())?)
    }

    /// SHA-256 of the serialized shard, hex encoded.
    pub fn checksum(&self) -> Result<String, IngestError> {
        Ok(sha256_hex(&self.to_bytes()?))
    }
}

pub fn read_header(bytes: &[u8]) -> Result<ShardHeader, IngestError> {
    if bytes.len() < HEADER_LEN {
        return Err(IngestError::BadHeader(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(IngestError::BadHeader(format!("magic {:?} is not CLPA", &bytes[0..4])));
    }
    let u16_at = |i: usize| u16::from_le_bytes(bytes[i..i + 2].try_into().expect("2 bytes"));
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let version = u16_at(4);
    if version != VERSION {
        return Err(IngestError::BadHeader(format!("unsupported version {}", version)));
    }
    Ok(ShardHeader { version, height: u16_at(6), width: u16_at(8), count: u32_at(10), flags: u32_at(14) })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{:02x}", b)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(i: u8, labeled: bool) -> PairRecord {
        PairRecord {
            image: RgbImage::new(2, 3, (0..18).map(|v| v * i).collect()).unwrap(),
            caption: format!("caption number {}", i),
            class_id: labeled.then_some(i as u32),
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let shard = Shard::new(2, 3, vec![record(1, true), record(2, false), record(3, true)]).unwrap();
        let bytes = shard.to_bytes().unwrap();
        let back = Shard::from_bytes(&bytes).unwrap();
        assert_eq!(back, shard);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn truncation_names_expected_and_actual_counts() {
        let shard = Shard::new(2, 3, vec![record(1, true), record(2, true), record(3, true)]).unwrap();
        let bytes = shard.to_bytes().unwrap();
        let err = Shard::from_bytes(&bytes[..bytes.len() - 5]).unwrap_err();
        assert_eq!(err, IngestError::Truncated { expected: 3, actual: 2 });
        assert!(err.to_string().contains("expected 3") && err.to_string().contains("found 2"));
    }

    #[test]
    fn empty_shard_is_valid() {
        let shard = Shard::new(4, 4, vec![]).unwrap();
        let back = Shard::from_bytes(&shard.to_bytes().unwrap()).unwrap();
        assert!(back.is_empty());
        assert_eq!((back.height, back.width), (4, 4));
    }

    #[test]
    fn bad_magic_and_version_are_rejected() {
        let mut bytes = Shard::new(2, 3, vec![record(1, true)]).unwrap().to_bytes().unwrap();
        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert!(matches!(Shard::from_bytes(&wrong_magic), Err(IngestError::BadHeader(_))));
        bytes[4] = 9;
        assert!(matches!(Shard::from_bytes(&bytes), Err(IngestError::BadHeader(_))));
    }

    #[test]
    fn trailing_bytes_are_a_count_mismatch() {
        let mut bytes = Shard::new(2, 3, vec![record(1, true)]).unwrap().to_bytes().unwrap();
        bytes.extend_from_slice(&[0, 0, 0]);
        assert!(matches!(Shard::from_bytes(&bytes), Err(IngestError::CountMismatch { declared: 1, .. })));
    }

    #[test]
    fn mixed_sizes_are_rejected() {
        let mut r = record(1, true);
        r.image = RgbImage::filled(3, 3, [0, 0, 0]);
        assert!(Shard::new(2, 3, vec![r]).is_err());
    }
}
