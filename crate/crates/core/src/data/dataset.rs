use std::fs::File;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::ops::Range;
use std::path::Path;

use super::glyphs::Glyph;
use super::moving_mnist::{sequence_bytes, MovingMnistSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DATASET_MAGIC: [u8; 4] = *b"MMSQ";
pub const DATASET_VERSION: u32 = 1;
pub const DATASET_HEADER_LEN: u64 = 28;

/// Dimensions of a sequence file. Pixels are bytes, `0..=255` mapping
/// linearly onto `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DatasetHeader {
    pub n_sequences: u32,
    pub seq_len: u32,
    pub height: u32,
    pub width: u32,
    pub channels: u32,
}

impl DatasetHeader {
    pub fn frame_bytes(&self) -> u64 {
        self.channels as u64 * self.height as u64 * self.width as u64
    }

    pub fn sequence_bytes(&self) -> u64 {
        self.seq_len as u64 * self.frame_bytes()
    }

    pub fn payload_bytes(&self) -> u64 {
        self.n_sequences as u64 * self.sequence_bytes()
    }

    pub fn file_bytes(&self) -> u64 {
        DATASET_HEADER_LEN + self.payload_bytes()
    }

    pub fn encode(&self) -> [u8; 28] {
        let mut out = [0u8; 28];
        out[..4].copy_from_slice(&DATASET_MAGIC);
        for (i, v) in [
            DATASET_VERSION,
            self.n_sequences,
            self.seq_len,
            self.height,
            self.width,
            self.channels,
        ]
        .into_iter()
        .enumerate()
        {
            out[4 + 4 * i..8 + 4 * i].copy_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < DATASET_HEADER_LEN as usize {
            return Err(Error::format(
                bytes.len() as u64,
                format!("dataset header needs {DATASET_HEADER_LEN} bytes, found {}", bytes.len()),
            ));
        }
        if bytes[..4] != DATASET_MAGIC {
            return Err(Error::format(0, format!("bad magic {:?}, expected \"MMSQ\"", &bytes[..4])));
        }
        let word = |i: usize| u32::from_le_bytes([bytes[4 * i], bytes[4 * i + 1], bytes[4 * i + 2], bytes[4 * i + 3]]);
        if word(1) != DATASET_VERSION {
            return Err(Error::format(4, format!("unsupported version {}, expected {DATASET_VERSION}", word(1))));
        }
        let header = DatasetHeader {
            n_sequences: word(2),
            seq_len: word(3),
            height: word(4),
            width: word(5),
            channels: word(6),
        };
        for (offset, name, v) in [
            (12, "sequence length", header.seq_len),
            (16, "height", header.height),
            (20, "width", header.width),
            (24, "channels", header.channels),
        ] {
            if v == 0 {
                return Err(Error::format(offset, format!("{name} must be positive")));
            }
        }
        Ok(header)
    }
}

/// Streams sequences into a new dataset file.
pub struct DatasetWriter {
    out: BufWriter<File>,
    header: DatasetHeader,
    written: u32,
}

impl DatasetWriter {
    pub fn create(path: &Path, header: DatasetHeader) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(&header.encode())?;
        Ok(DatasetWriter {
            out,
            header,
            written: 0,
        })
    }

    pub fn write_sequence(&mut self, bytes: &[u8]) -> Result<()> {
        if bytes.len() as u64 != self.header.sequence_bytes() {
            return Err(Error::shape("dataset sequence bytes", self.header.sequence_bytes(), bytes.len()));
        }
        if self.written == self.header.n_sequences {
            return Err(Error::InvalidArgument(format!(
                "header declares {} sequences; refusing to write more",
                self.header.n_sequences
            )));
        }
        self.out.write_all(bytes)?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        if self.written != self.header.n_sequences {
            return Err(Error::InvalidArgument(format!(
                "header declares {} sequences, {} written",
                self.header.n_sequences, self.written
            )));
        }
        self.out.flush()?;
        Ok(())
    }
}

pub fn save_sequences(path: &Path, header: DatasetHeader, sequences: &[Vec<u8>]) -> Result<()> {
    let mut w = DatasetWriter::create(path, header)?;
    for s in sequences {
        w.write_sequence(s)?;
    }
    w.finish()
}

/// Generates `n` moving-digit sequences straight into a dataset file.
pub fn write_moving_mnist(path: &Path, spec: &MovingMnistSpec, glyphs: &[Glyph], n: u32) -> Result<DatasetHeader> {
    let side = spec.canvas as u32;
    let header = DatasetHeader {
        n_sequences: n,
        seq_len: spec.seq_len as u32,
        height: side,
        width: side,
        channels: 1,
    };
    super::moving_mnist::tracks(spec, glyphs, 0)?;
    let mut w = DatasetWriter::create(path, header)?;
    for i in 0..n {
        w.write_sequence(&sequence_bytes(spec, glyphs, i as u64)?)?;
    }
    w.finish()?;
    Ok(header)
}

/// Random access to the sequences of a dataset file; only the requested
/// sequence is read.
#[derive(Debug)]
pub struct DatasetReader {
    file: File,
    header: DatasetHeader,
}

impl DatasetReader {
    pub fn open(path: &Path) -> Result<Self> {
        let mut file = File::open(path)?;
        let actual = file.metadata()?.len();
        let mut head = Vec::with_capacity(DATASET_HEADER_LEN as usize);
        Read::by_ref(&mut file).take(DATASET_HEADER_LEN).read_to_end(&mut head)?;
        let header = DatasetHeader::decode(&head)?;
        if actual != header.file_bytes() {
            return Err(Error::format(
                actual.min(header.file_bytes()),
                format!(
                    "dataset size mismatch: header implies {} bytes ({} sequences × {} bytes + {DATASET_HEADER_LEN}), file has {actual}",
                    header.file_bytes(),
                    header.n_sequences,
                    header.sequence_bytes()
                ),
            ));
        }
        Ok(DatasetReader { file, header })
    }

    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }

    pub fn len(&self) -> usize {
        self.header.n_sequences as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn read_sequence_bytes(&mut self, index: usize) -> Result<Vec<u8>> {
        if index >= self.len() {
            return Err(Error::InvalidArgument(format!(
                "sequence {index} out of range for {} sequences",
                self.len()
            )));
        }
        let n = self.header.sequence_bytes();
        self.file.seek(SeekFrom::Start(DATASET_HEADER_LEN + index as u64 * n))?;
        let mut buf = vec![0u8; n as usize];
        self.file.read_exact(&mut buf)?;
        Ok(buf)
    }

    /// Frames of sequence `index` as `C × H × W` tensors in `[0, 1]`.
    pub fn read_frames(&mut self, index: usize) -> Result<Vec<Tensor<f32>>> {
        let bytes = self.read_sequence_bytes(index)?;
        let h = &self.header;
        let shape = [h.channels as usize, h.height as usize, h.width as usize];
        bytes
            .chunks_exact(h.frame_bytes() as usize)
            .map(|f| Tensor::from_vec(&shape, f.iter().map(|&b| b as f32 / 255.0).collect()))
            .collect()
    }

    pub fn read_range(&mut self, range: Range<usize>) -> Result<Vec<Vec<Tensor<f32>>>> {
        range.map(|i| self.read_frames(i)).collect()
    }
}

/// `1` where the value is at least `threshold`, `0` elsewhere.
pub fn binarize(frame: &Tensor<f32>, threshold: f32) -> Tensor<f32> {
    frame.map(|v| if v >= threshold { 1.0 } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::builtin_glyphs;
    use proptest::prelude::*;

    fn header(n: u32) -> DatasetHeader {
        DatasetHeader {
            n_sequences: n,
            seq_len: 3,
            height: 4,
            width: 2,
            channels: 1,
        }
    }

    #[test]
    fn full_dataset_size() {
        let h = DatasetHeader {
            n_sequences: 10_000,
            seq_len: 20,
            height: 64,
            width: 64,
            channels: 1,
        };
        assert_eq!(h.payload_bytes(), 819_200_000);
        assert_eq!(h.file_bytes(), 819_200_028);
        assert_eq!(DatasetHeader::decode(&h.encode()).unwrap(), h);
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.mmsq");
        let seqs: Vec<Vec<u8>> = (0..4u8).map(|i| (0..24u8).map(|b| b.wrapping_mul(i + 7)).collect()).collect();
        save_sequences(&path, header(4), &seqs).unwrap();
        let first = std::fs::read(&path).unwrap();
        assert_eq!(first.len(), 28 + 4 * 24);
        let mut r = DatasetReader::open(&path).unwrap();
        assert_eq!(r.len(), 4);
        let back: Vec<Vec<u8>> = (0..4).map(|i| r.read_sequence_bytes(i).unwrap()).collect();
        assert_eq!(back, seqs);
        let other = dir.path().join("b.mmsq");
        save_sequences(&other, *r.header(), &back).unwrap();
        assert_eq!(std::fs::read(&other).unwrap(), first);
        let frames = r.read_frames(1).unwrap();
        assert_eq!(frames.len(), 3);
        assert_eq!(frames[0].shape(), &[1, 4, 2]);
        assert_eq!(frames[0].data()[1], seqs[1][1] as f32 / 255.0);
        assert!(r.read_frames(4).is_err());
    }

    #[test]
    fn truncated_file_names_sizes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.mmsq");
        let seqs = vec![vec![1u8; 24]; 2];
        save_sequences(&path, header(2), &seqs).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..60]).unwrap();
        let err = DatasetReader::open(&path).unwrap_err().to_string();
        assert!(err.contains("76 bytes") && err.contains("file has 60"), "{err}");
        assert!(err.contains("byte offset 60"), "{err}");
        std::fs::write(&path, &bytes[..10]).unwrap();
        assert!(DatasetReader::open(&path).unwrap_err().to_string().contains("found 10"));
    }

    #[test]
    fn header_errors() {
        let mut b = header(1).encode();
        b[0] = b'X';
        assert!(DatasetHeader::decode(&b).unwrap_err().to_string().contains("offset 0"));
        let mut b = header(1).encode();
        b[4] = 2;
        assert!(DatasetHeader::decode(&b).unwrap_err().to_string().contains("offset 4"));
        let mut b = header(1).encode();
        b[16..20].fill(0);
        assert!(DatasetHeader::decode(&b).unwrap_err().to_string().contains("offset 16"));
    }

    #[test]
    fn writer_enforces_declared_count() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = DatasetWriter::create(&dir.path().join("w"), header(1)).unwrap();
        assert!(w.write_sequence(&[0u8; 23]).is_err());
        w.write_sequence(&[0u8; 24]).unwrap();
        assert!(w.write_sequence(&[0u8; 24]).is_err());
        w.finish().unwrap();
        let w = DatasetWriter::create(&dir.path().join("v"), header(2)).unwrap();
        assert!(w.finish().is_err());
    }

    #[test]
    fn generated_files_are_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let glyphs = builtin_glyphs();
        let spec = MovingMnistSpec {
            seed: 42,
            ..Default::default()
        };
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        write_moving_mnist(&a, &spec, &glyphs, 3).unwrap();
        write_moving_mnist(&b, &spec, &glyphs, 3).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(std::fs::metadata(&a).unwrap().len(), 28 + 3 * 20 * 4096);
    }

    #[test]
    fn binarize_cases() {
        let t = Tensor::from_vec(&[4], vec![0.49f32, 0.5, 0.0, 1.0]).unwrap();
        assert_eq!(binarize(&t, 0.5).data(), &[0.0, 1.0, 0.0, 1.0]);
        let z = Tensor::<f32>::zeros(&[3]);
        assert_eq!(binarize(&z, 0.5), z);
    }

    proptest! {
        #[test]
        fn binarize_is_idempotent(v in proptest::collection::vec(0.0f32..=1.0, 1..50)) {
            let t = Tensor::from_vec(&[v.len()], v).unwrap();
            let once = binarize(&t, 0.5);
            prop_assert_eq!(binarize(&once, 0.5), once);
        }
    }
}
