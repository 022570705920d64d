//! Little-endian binary container for k-space, images, maps, masks and
//! network parameters.
//!
//! Layout: magic `JKS1`, version `u16`, record count `u32`, then per record:
//! kind `u8`, name length `u16` + UTF-8 name, dims `u32 x 4` (N, C/J, H, W),
//! dtype `u8`, payload row-major. Round trips are bit-exact.

use crate::error::{Error, Result};
use crate::mask::{AcsRegion, SamplingMask};
use crate::numerics::{ComplexImage, CoilStack, C64};
use crate::sense::SenseMaps;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"JKS1";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    Kspace = 1,
    Image = 2,
    Maps = 3,
    Mask = 4,
    Param = 5,
    AdamState = 6,
}

impl RecordKind {
    fn from_u8(v: u8, offset: u64) -> Result<Self> {
        Ok(match v {
            1 => RecordKind::Kspace,
            2 => RecordKind::Image,
            3 => RecordKind::Maps,
            4 => RecordKind::Mask,
            5 => RecordKind::Param,
            6 => RecordKind::AdamState,
            other => {
                return Err(Error::Format { offset, msg: format!("unknown record kind {other}") })
            }
        })
    }
}

/// Typed payload. Complex data is stored as interleaved (re, im) pairs.
#[derive(Debug, Clone, PartialEq)]
pub enum RecordData {
    C64(Vec<num_complex::Complex<f32>>),
    C128(Vec<C64>),
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
}

impl RecordData {
    fn dtype(&self) -> u8 {
        match self {
            RecordData::C64(_) => 1,
            RecordData::C128(_) => 2,
            RecordData::F32(_) => 3,
            RecordData::F64(_) => 4,
            RecordData::U8(_) => 5,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            RecordData::C64(v) => v.len(),
            RecordData::C128(v) => v.len(),
            RecordData::F32(v) => v.len(),
            RecordData::F64(v) => v.len(),
            RecordData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub kind: RecordKind,
    pub name: String,
    /// (N, C or J, H, W)
    pub dims: [u32; 4],
    pub data: RecordData,
}

impl Record {
    pub fn new(kind: RecordKind, name: &str, dims: [u32; 4], data: RecordData) -> Result<Self> {
        let expect = dims.iter().map(|&d| d as usize).product::<usize>();
        if expect != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "record '{name}': dims {:?} imply {expect} elements, payload has {}",
                dims,
                data.len()
            )));
        }
        Ok(Self { kind, name: name.to_string(), dims, data })
    }

    pub fn image(name: &str, img: &ComplexImage) -> Self {
        Record {
            kind: RecordKind::Image,
            name: name.to_string(),
            dims: [1, 1, img.height() as u32, img.width() as u32],
            data: RecordData::C128(img.data().to_vec()),
        }
    }

    pub fn kspace(name: &str, stack: &CoilStack) -> Self {
        Record {
            kind: RecordKind::Kspace,
            name: name.to_string(),
            dims: [1, stack.coils() as u32, stack.height() as u32, stack.width() as u32],
            data: RecordData::C128(stack.data().to_vec()),
        }
    }

    pub fn maps(name: &str, maps: &SenseMaps) -> Self {
        Record {
            kind: RecordKind::Maps,
            name: name.to_string(),
            dims: [1, maps.coils() as u32, maps.height() as u32, maps.width() as u32],
            data: RecordData::C128(maps.data().to_vec()),
        }
    }

    pub fn to_image(&self) -> Result<ComplexImage> {
        match &self.data {
            RecordData::C128(v) => {
                ComplexImage::new(self.dims[2] as usize, self.dims[3] as usize, v.clone())
            }
            _ => Err(Error::InvalidInput(format!("record '{}' is not c128", self.name))),
        }
    }

    pub fn to_stack(&self) -> Result<CoilStack> {
        match &self.data {
            RecordData::C128(v) => CoilStack::new(
                self.dims[1] as usize,
                self.dims[2] as usize,
                self.dims[3] as usize,
                v.clone(),
            ),
            _ => Err(Error::InvalidInput(format!("record '{}' is not c128", self.name))),
        }
    }

    /// Rebuild sensitivity maps; foreground is the stored non-zero support.
    pub fn to_maps(&self) -> Result<SenseMaps> {
        let stack = self.to_stack()?;
        let n = stack.height() * stack.width();
        let mut foreground = vec![false; n];
        for p in 0..n {
            let any = (0..stack.coils()).any(|j| stack.plane(j)[p].norm_sqr() > 0.0);
            foreground[p] = any;
        }
        SenseMaps::new(stack.coils(), stack.height(), stack.width(), stack.data().to_vec(), foreground)
    }
}

/// Mask serialization: an omega byte plane plus a `<name>.meta` record
/// carrying the ACS descriptor, nominal AF and seed.
pub fn mask_records(name: &str, mask: &SamplingMask) -> Vec<Record> {
    let omega: Vec<u8> = mask.omega().iter().map(|&b| b as u8).collect();
    let (kind_code, count) = match mask.acs() {
        AcsRegion::None => (0.0, 0.0),
        AcsRegion::Lines { count } => (1.0, count as f64),
        AcsRegion::Block { count } => (2.0, count as f64),
    };
    let seed = mask.seed();
    let meta = vec![
        kind_code,
        count,
        mask.af_nominal(),
        (seed & 0xffff_ffff) as f64,
        (seed >> 32) as f64,
    ];
    vec![
        Record {
            kind: RecordKind::Mask,
            name: name.to_string(),
            dims: [1, 1, mask.height() as u32, mask.width() as u32],
            data: RecordData::U8(omega),
        },
        Record {
            kind: RecordKind::Mask,
            name: format!("{name}.meta"),
            dims: [1, 1, 1, 5],
            data: RecordData::F64(meta),
        },
    ]
}

pub fn mask_from_records(omega_rec: &Record, meta_rec: &Record) -> Result<SamplingMask> {
    let omega = match &omega_rec.data {
        RecordData::U8(v) => v.iter().map(|&b| b != 0).collect::<Vec<bool>>(),
        _ => return Err(Error::InvalidInput("mask record is not u8".into())),
    };
    let meta = match &meta_rec.data {
        RecordData::F64(v) if v.len() == 5 => v,
        _ => return Err(Error::InvalidInput("mask meta record malformed".into())),
    };
    let acs = match meta[0] as u8 {
        0 => AcsRegion::None,
        1 => AcsRegion::Lines { count: meta[1] as usize },
        2 => AcsRegion::Block { count: meta[1] as usize },
        _ => return Err(Error::InvalidInput("unknown ACS kind".into())),
    };
    let seed = (meta[3] as u64) | ((meta[4] as u64) << 32);
    SamplingMask::from_parts(
        omega_rec.dims[2] as usize,
        omega_rec.dims[3] as usize,
        omega,
        acs,
        meta[2],
        seed,
    )
}

struct CountingWriter<W: Write> {
    inner: W,
    offset: u64,
}

impl<W: Write> CountingWriter<W> {
    fn put(&mut self, bytes: &[u8]) -> Result<()> {
        self.inner.write_all(bytes)?;
        self.offset += bytes.len() as u64;
        Ok(())
    }
}

pub fn container_write(path: &Path, records: &[Record]) -> Result<()> {
    let file = File::create(path)?;
    let mut w = CountingWriter { inner: BufWriter::new(file), offset: 0 };
    w.put(MAGIC)?;
    w.put(&VERSION.to_le_bytes())?;
    w.put(&(records.len() as u32).to_le_bytes())?;
    for rec in records {
        if rec.name.len() > u16::MAX as usize {
            return Err(Error::InvalidInput(format!("record name too long: {}", rec.name.len())));
        }
        let expect = rec.dims.iter().map(|&d| d as usize).product::<usize>();
        if expect != rec.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "record '{}' dims/payload mismatch",
                rec.name
            )));
        }
        w.put(&[rec.kind as u8])?;
        w.put(&(rec.name.len() as u16).to_le_bytes())?;
        w.put(rec.name.as_bytes())?;
        for d in rec.dims {
            w.put(&d.to_le_bytes())?;
        }
        w.put(&[rec.data.dtype()])?;
        match &rec.data {
            RecordData::C64(v) => {
                for c in v {
                    w.put(&c.re.to_le_bytes())?;
                    w.put(&c.im.to_le_bytes())?;
                }
            }
            RecordData::C128(v) => {
                for c in v {
                    w.put(&c.re.to_le_bytes())?;
                    w.put(&c.im.to_le_bytes())?;
                }
            }
            RecordData::F32(v) => {
                for x in v {
                    w.put(&x.to_le_bytes())?;
                }
            }
            RecordData::F64(v) => {
                for x in v {
                    w.put(&x.to_le_bytes())?;
                }
            }
            RecordData::U8(v) => w.put(v)?,
        }
    }
    w.inner.flush()?;
    Ok(())
}

struct CountingReader<R: Read> {
    inner: R,
    offset: u64,
}

impl<R: Read> CountingReader<R> {
    fn take(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let at = self.offset;
        self.inner.read_exact(buf).map_err(|e| Error::Format {
            offset: at,
            msg: format!("truncated while reading {what}: {e}"),
        })?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        let mut b = [0u8; 1];
        self.take(&mut b, what)?;
        Ok(b[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let mut b = [0u8; 2];
        self.take(&mut b, what)?;
        Ok(u16::from_le_bytes(b))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.take(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }
}

pub fn container_read(path: &Path) -> Result<Vec<Record>> {
    let file = File::open(path)?;
    let mut r = CountingReader { inner: BufReader::new(file), offset: 0 };
    let mut magic = [0u8; 4];
    r.take(&mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Format { offset: 0, msg: format!("bad magic {magic:02x?}") });
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::Format { offset: 4, msg: format!("unsupported version {version}") });
    }
    let count = r.u32("record count")? as usize;
    let mut records = Vec::with_capacity(count);
    for idx in 0..count {
        let kind_at = r.offset;
        let kind = RecordKind::from_u8(r.u8("record kind")?, kind_at)?;
        let name_len = r.u16("name length")? as usize;
        let mut name_bytes = vec![0u8; name_len];
        let name_at = r.offset;
        r.take(&mut name_bytes, "record name")?;
        let name = String::from_utf8(name_bytes).map_err(|e| Error::Format {
            offset: name_at,
            msg: format!("record {idx} name is not UTF-8: {e}"),
        })?;
        let dims = [
            r.u32("dims[0]")?,
            r.u32("dims[1]")?,
            r.u32("dims[2]")?,
            r.u32("dims[3]")?,
        ];
        let n = dims.iter().map(|&d| d as usize).product::<usize>();
        let dtype_at = r.offset;
        let dtype = r.u8("dtype")?;
        let data = match dtype {
            1 => {
                let mut v = Vec::with_capacity(n);
                let mut b = [0u8; 8];
                for _ in 0..n {
                    r.take(&mut b, "c64 payload")?;
                    v.push(num_complex::Complex::new(
                        f32::from_le_bytes(b[0..4].try_into().unwrap()),
                        f32::from_le_bytes(b[4..8].try_into().unwrap()),
                    ));
                }
                RecordData::C64(v)
            }
            2 => {
                let mut v = Vec::with_capacity(n);
                let mut b = [0u8; 16];
                for _ in 0..n {
                    r.take(&mut b, "c128 payload")?;
                    v.push(C64::new(
                        f64::from_le_bytes(b[0..8].try_into().unwrap()),
                        f64::from_le_bytes(b[8..16].try_into().unwrap()),
                    ));
                }
                RecordData::C128(v)
            }
            3 => {
                let mut v = Vec::with_capacity(n);
                let mut b = [0u8; 4];
                for _ in 0..n {
                    r.take(&mut b, "f32 payload")?;
                    v.push(f32::from_le_bytes(b));
                }
                RecordData::F32(v)
            }
            4 => {
                let mut v = Vec::with_capacity(n);
                let mut b = [0u8; 8];
                for _ in 0..n {
                    r.take(&mut b, "f64 payload")?;
                    v.push(f64::from_le_bytes(b));
                }
                RecordData::F64(v)
            }
            5 => {
                let mut v = vec![0u8; n];
                r.take(&mut v, "u8 payload")?;
                RecordData::U8(v)
            }
            other => {
                return Err(Error::Format {
                    offset: dtype_at,
                    msg: format!("record '{name}': unknown dtype {other}"),
                })
            }
        };
        records.push(Record { kind, name, dims, data });
    }
    Ok(records)
}

/// Convenience: first record with the given name.
pub fn find<'a>(records: &'a [Record], name: &str) -> Result<&'a Record> {
    records
        .iter()
        .find(|r| r.name == name)
        .ok_or_else(|| Error::InvalidInput(format!("record '{name}' not found")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::make_mask_2d;
    use crate::testutil::{random_image, random_stack};

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sample.jks");
        let img = random_image(6, 7, 1);
        let stack = random_stack(3, 6, 7, 2);
        let mask = make_mask_2d(7, 6, 2.0, 2, 3).unwrap();
        let mut records = vec![
            Record::image("truth", &img),
            Record::kspace("kspace", &stack),
            Record::new(
                RecordKind::Param,
                "w0",
                [1, 2, 1, 3],
                RecordData::F32(vec![0.5, -1.25, f32::MIN_POSITIVE, 3.0, -0.0, 1e-30]),
            )
            .unwrap(),
            Record::new(RecordKind::AdamState, "w0.m", [1, 1, 1, 2], RecordData::F64(vec![1e-300, -4.25]))
                .unwrap(),
        ];
        records.extend(mask_records("mask", &mask));
        container_write(&path, &records).unwrap();
        let back = container_read(&path).unwrap();
        assert_eq!(back, records);
        let mask2 = mask_from_records(find(&back, "mask").unwrap(), find(&back, "mask.meta").unwrap())
            .unwrap();
        assert_eq!(mask2, mask);
    }

    #[test]
    fn corrupted_magic_rejected_at_offset_zero() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jks");
        std::fs::File::create(&path).unwrap().write_all(b"NOPE\x01\x00\x00\x00\x00\x00").unwrap();
        match container_read(&path) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncation_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.jks");
        let img = random_image(4, 4, 3);
        container_write(&path, &[Record::image("x", &img)]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        match container_read(&path) {
            Err(Error::Format { offset, .. }) => assert!(offset > 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn mask_payload_is_one_byte_per_position() {
        let mask = make_mask_2d(9, 5, 3.0, 0, 1).unwrap();
        let recs = mask_records("m", &mask);
        match &recs[0].data {
            RecordData::U8(v) => assert_eq!(v.len(), 45),
            _ => panic!("mask payload should be u8"),
        }
    }

    #[test]
    fn dims_payload_mismatch_rejected() {
        assert!(Record::new(RecordKind::Param, "bad", [1, 1, 2, 2], RecordData::F32(vec![0.0; 3]))
            .is_err());
    }
}
