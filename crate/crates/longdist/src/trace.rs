//! Prediction traces and the `.ldtr` trace file format.
//!
//! A [`TraceMatrix`] holds, for `n` instances and `k` epochs, the label a
//! classifier assigned to each instance at the end of each epoch. Distances
//! consume nothing else, so a trace file fully decouples attribution from the
//! trainer that produced it. Traces are immutable after construction and safe
//! to share across threads.
//!
//! # File format (`.ldtr`, little-endian, no padding)
//!
//! | field        | type               | value                                   |
//! |--------------|--------------------|-----------------------------------------|
//! | magic        | 4 bytes            | `4C 44 54 52` (`"LDTR"`)                |
//! | version      | u16                | 1                                       |
//! | flags        | u8                 | bit 0 = true labels present, rest 0     |
//! | reserved     | u8                 | 0                                       |
//! | n_instances  | u32                |                                         |
//! | k_epochs     | u16                |                                         |
//! | n_classes    | u16                |                                         |
//! | true labels  | n_instances × u16  | only if flags bit 0 is set              |
//! | predictions  | n×k × u16          | row-major: instance-major, epoch-minor  |

use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

/// A class index. Valid labels are `0..n_classes` of the owning trace.
pub type Label = u16;

pub const LDTR_MAGIC: [u8; 4] = *b"LDTR";
pub const LDTR_VERSION: u16 = 1;
const FLAG_TRUE_LABELS: u8 = 0b0000_0001;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("predictions grid is ragged: row {row} has {got} epochs, expected {expected}")]
    RaggedGrid { row: usize, expected: usize, got: usize },
    #[error("trace must cover at least one epoch")]
    EmptyEpochs,
    #[error("n_classes must be at least 2, got {0}")]
    TooFewClasses(u16),
    #[error("label {label} at instance {instance}, epoch {epoch} is out of range (n_classes = {n_classes})")]
    LabelOutOfRange { instance: usize, epoch: usize, label: Label, n_classes: u16 },
    #[error("true label {label} for instance {instance} is out of range (n_classes = {n_classes})")]
    TrueLabelOutOfRange { instance: usize, label: Label, n_classes: u16 },
    #[error("true_labels has length {got}, expected {expected}")]
    TrueLabelLength { expected: usize, got: usize },
    #[error("trace has no true labels")]
    MissingTrueLabels,
    #[error("too many instances for the trace format: {0} (max {max})", max = u32::MAX)]
    TooManyInstances(usize),
    #[error("too many epochs for the trace format: {0} (max {max})", max = u16::MAX)]
    TooManyEpochs(usize),
    #[error("prediction data length {got} does not match {n} instances x {k} epochs")]
    FlatLength { n: usize, k: usize, got: usize },
    #[error("bad magic bytes {0:02X?}, not an .ldtr file")]
    BadMagic([u8; 4]),
    #[error("unsupported trace format version {0}")]
    UnsupportedVersion(u16),
    #[error("unknown flag bits set: {0:#010b}")]
    UnknownFlags(u8),
    #[error("reserved header byte must be 0, got {0}")]
    BadReserved(u8),
    #[error("file truncated: header declares {expected} payload bytes, found {got}")]
    Truncated { expected: u64, got: u64 },
    #[error("{got} trailing bytes after declared payload")]
    TrailingBytes { got: u64 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Per-instance, per-epoch predicted labels, plus optional ground truth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceMatrix {
    n_instances: usize,
    k_epochs: usize,
    n_classes: u16,
    /// Flat row-major grid: entry for instance `i`, epoch `e` is at `i * k_epochs + e`.
    predictions: Vec<Label>,
    true_labels: Option<Vec<Label>>,
}

impl TraceMatrix {
    /// Builds a validated trace from a rectangular grid of per-epoch labels.
    pub fn new(
        predictions: Vec<Vec<Label>>,
        true_labels: Option<Vec<Label>>,
        n_classes: u16,
    ) -> Result<Self, TraceError> {
        let n_instances = predictions.len();
        let k_epochs = predictions.first().map_or(0, Vec::len);
        for (row, r) in predictions.iter().enumerate() {
            if r.len() != k_epochs {
                return Err(TraceError::RaggedGrid { row, expected: k_epochs, got: r.len() });
            }
        }
        let flat = predictions.into_iter().flatten().collect();
        Self::from_flat(n_instances, k_epochs, n_classes, flat, true_labels)
    }

    /// Builds a validated trace from an already-flat row-major grid.
    pub fn from_flat(
        n_instances: usize,
        k_epochs: usize,
        n_classes: u16,
        predictions: Vec<Label>,
        true_labels: Option<Vec<Label>>,
    ) -> Result<Self, TraceError> {
        if k_epochs == 0 {
            return Err(TraceError::EmptyEpochs);
        }
        if n_classes < 2 {
            return Err(TraceError::TooFewClasses(n_classes));
        }
        if n_instances > u32::MAX as usize {
            return Err(TraceError::TooManyInstances(n_instances));
        }
        if k_epochs > u16::MAX as usize {
            return Err(TraceError::TooManyEpochs(k_epochs));
        }
        if predictions.len() != n_instances * k_epochs {
            return Err(TraceError::FlatLength {
                n: n_instances,
                k: k_epochs,
                got: predictions.len(),
            });
        }
        for (pos, &label) in predictions.iter().enumerate() {
            if label >= n_classes {
                return Err(TraceError::LabelOutOfRange {
                    instance: pos / k_epochs,
                    epoch: pos % k_epochs,
                    label,
                    n_classes,
                });
            }
        }
        if let Some(ref labels) = true_labels {
            if labels.len() != n_instances {
                return Err(TraceError::TrueLabelLength {
                    expected: n_instances,
                    got: labels.len(),
                });
            }
            for (instance, &label) in labels.iter().enumerate() {
                if label >= n_classes {
                    return Err(TraceError::TrueLabelOutOfRange { instance, label, n_classes });
                }
            }
        }
        Ok(Self { n_instances, k_epochs, n_classes, predictions, true_labels })
    }

    pub fn n_instances(&self) -> usize {
        self.n_instances
    }

    pub fn k_epochs(&self) -> usize {
        self.k_epochs
    }

    pub fn n_classes(&self) -> u16 {
        self.n_classes
    }

    /// The epoch-label sequence of one instance.
    pub fn row(&self, instance: usize) -> &[Label] {
        &self.predictions[instance * self.k_epochs..(instance + 1) * self.k_epochs]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[Label]> {
        self.predictions.chunks_exact(self.k_epochs)
    }

    pub fn true_labels(&self) -> Option<&[Label]> {
        self.true_labels.as_deref()
    }

    pub fn has_true_labels(&self) -> bool {
        self.true_labels.is_some()
    }

    /// Serializes the trace in `.ldtr` format. Returns the number of bytes written.
    pub fn write_to<W: Write>(&self, mut dest: W) -> Result<u64, TraceError> {
        let mut written = 0u64;
        let mut put = |dest: &mut W, bytes: &[u8]| -> Result<(), TraceError> {
            dest.write_all(bytes)?;
            written += bytes.len() as u64;
            Ok(())
        };
        put(&mut dest, &LDTR_MAGIC)?;
        put(&mut dest, &LDTR_VERSION.to_le_bytes())?;
        let flags = if self.true_labels.is_some() { FLAG_TRUE_LABELS } else { 0 };
        put(&mut dest, &[flags, 0])?;
        put(&mut dest, &(self.n_instances as u32).to_le_bytes())?;
        put(&mut dest, &(self.k_epochs as u16).to_le_bytes())?;
        put(&mut dest, &self.n_classes.to_le_bytes())?;
        if let Some(ref labels) = self.true_labels {
            put(&mut dest, &labels_to_le_bytes(labels))?;
        }
        put(&mut dest, &labels_to_le_bytes(&self.predictions))?;
        Ok(written)
    }

    /// Deserializes a trace from `.ldtr` bytes, validating all invariants.
    pub fn read_from<R: Read>(mut source: R) -> Result<Self, TraceError> {
        let mut header = [0u8; 16];
        read_exact_or_truncated(&mut source, &mut header, 16)?;
        let magic: [u8; 4] = header[0..4].try_into().unwrap();
        if magic != LDTR_MAGIC {
            return Err(TraceError::BadMagic(magic));
        }
        let version = u16::from_le_bytes(header[4..6].try_into().unwrap());
        if version != LDTR_VERSION {
            return Err(TraceError::UnsupportedVersion(version));
        }
        let flags = header[6];
        if flags & !FLAG_TRUE_LABELS != 0 {
            return Err(TraceError::UnknownFlags(flags));
        }
        if header[7] != 0 {
            return Err(TraceError::BadReserved(header[7]));
        }
        let n_instances = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let k_epochs = u16::from_le_bytes(header[12..14].try_into().unwrap()) as usize;
        let n_classes = u16::from_le_bytes(header[14..16].try_into().unwrap());

        let has_labels = flags & FLAG_TRUE_LABELS != 0;
        let label_bytes = if has_labels { n_instances as u64 * 2 } else { 0 };
        let expected = label_bytes + n_instances as u64 * k_epochs as u64 * 2;

        let mut payload = Vec::new();
        source.read_to_end(&mut payload)?;
        let got = payload.len() as u64;
        if got < expected {
            return Err(TraceError::Truncated { expected, got });
        }
        if got > expected {
            return Err(TraceError::TrailingBytes { got: got - expected });
        }

        let (label_part, pred_part) = payload.split_at(label_bytes as usize);
        let true_labels = has_labels.then(|| labels_from_le_bytes(label_part));
        let predictions = labels_from_le_bytes(pred_part);
        Self::from_flat(n_instances, k_epochs, n_classes, predictions, true_labels)
    }

    pub fn write_file<P: AsRef<Path>>(&self, path: P) -> Result<u64, TraceError> {
        let file = File::create(path)?;
        let mut buf = io::BufWriter::new(file);
        let n = self.write_to(&mut buf)?;
        buf.flush()?;
        Ok(n)
    }

    pub fn read_file<P: AsRef<Path>>(path: P) -> Result<Self, TraceError> {
        let file = File::open(path)?;
        Self::read_from(io::BufReader::new(file))
    }
}

fn labels_to_le_bytes(labels: &[Label]) -> Vec<u8> {
    let mut out = Vec::with_capacity(labels.len() * 2);
    for &l in labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out
}

fn labels_from_le_bytes(bytes: &[u8]) -> Vec<Label> {
    bytes
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect()
}

fn read_exact_or_truncated<R: Read>(
    source: &mut R,
    buf: &mut [u8],
    expected: u64,
) -> Result<(), TraceError> {
    let mut filled = 0;
    while filled < buf.len() {
        match source.read(&mut buf[filled..]) {
            Ok(0) => return Err(TraceError::Truncated { expected, got: filled as u64 }),
            Ok(n) => filled += n,
            Err(ref e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

/// Binary per-instance, per-epoch grid marking epochs where a training
/// instance was classified correctly. Entry is 1 exactly when the predicted
/// label equals the instance's true label at that epoch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrectnessMask {
    n_instances: usize,
    k_epochs: usize,
    mask: Vec<u8>,
}

impl CorrectnessMask {
    /// Requires the trace to carry true labels.
    pub fn from_trace(trace: &TraceMatrix) -> Result<Self, TraceError> {
        let true_labels = trace.true_labels().ok_or(TraceError::MissingTrueLabels)?;
        let mut mask = Vec::with_capacity(trace.n_instances() * trace.k_epochs());
        for (row, &truth) in trace.rows().zip(true_labels) {
            mask.extend(row.iter().map(|&p| u8::from(p == truth)));
        }
        Ok(Self { n_instances: trace.n_instances(), k_epochs: trace.k_epochs(), mask })
    }

    pub fn n_instances(&self) -> usize {
        self.n_instances
    }

    pub fn k_epochs(&self) -> usize {
        self.k_epochs
    }

    /// The 0/1 weight row for one training instance.
    pub fn row(&self, instance: usize) -> &[u8] {
        &self.mask[instance * self.k_epochs..(instance + 1) * self.k_epochs]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace_2x3() -> TraceMatrix {
        TraceMatrix::new(vec![vec![0, 0, 1], vec![1, 1, 1]], Some(vec![0, 1]), 2).unwrap()
    }

    #[test]
    fn builds_well_formed_trace() {
        let t = trace_2x3();
        assert_eq!(t.n_instances(), 2);
        assert_eq!(t.k_epochs(), 3);
        assert_eq!(t.row(0), &[0, 0, 1]);
        assert_eq!(t.row(1), &[1, 1, 1]);
    }

    #[test]
    fn rejects_label_equal_to_n_classes() {
        let err = TraceMatrix::new(vec![vec![0, 7]], None, 7).unwrap_err();
        assert!(matches!(err, TraceError::LabelOutOfRange { label: 7, .. }));
    }

    #[test]
    fn rejects_ragged_grid() {
        let err = TraceMatrix::new(vec![vec![0, 0, 0], vec![0, 0, 0, 0]], None, 2).unwrap_err();
        assert!(matches!(err, TraceError::RaggedGrid { row: 1, expected: 3, got: 4 }));
    }

    #[test]
    fn rejects_zero_epochs() {
        let err = TraceMatrix::new(vec![vec![], vec![]], None, 2).unwrap_err();
        assert!(matches!(err, TraceError::EmptyEpochs));
    }

    #[test]
    fn rejects_true_label_length_mismatch() {
        let err = TraceMatrix::new(vec![vec![0, 1]], Some(vec![0, 1]), 2).unwrap_err();
        assert!(matches!(err, TraceError::TrueLabelLength { expected: 1, got: 2 }));
    }

    #[test]
    fn rejects_out_of_range_true_label() {
        let err = TraceMatrix::new(vec![vec![0, 1]], Some(vec![5]), 2).unwrap_err();
        assert!(matches!(err, TraceError::TrueLabelOutOfRange { label: 5, .. }));
    }

    #[test]
    fn mask_all_correct() {
        let t = TraceMatrix::new(vec![vec![1, 1, 1]], Some(vec![1]), 2).unwrap();
        assert_eq!(CorrectnessMask::from_trace(&t).unwrap().row(0), &[1, 1, 1]);
    }

    #[test]
    fn mask_elementwise_equality() {
        let t = TraceMatrix::new(vec![vec![0, 1, 1, 1]], Some(vec![1]), 2).unwrap();
        assert_eq!(CorrectnessMask::from_trace(&t).unwrap().row(0), &[0, 1, 1, 1]);
    }

    #[test]
    fn mask_never_correct() {
        let t = TraceMatrix::new(vec![vec![2, 2]], Some(vec![0]), 3).unwrap();
        assert_eq!(CorrectnessMask::from_trace(&t).unwrap().row(0), &[0, 0]);
    }

    #[test]
    fn mask_requires_true_labels() {
        let t = TraceMatrix::new(vec![vec![0, 1]], None, 2).unwrap();
        assert!(matches!(
            CorrectnessMask::from_trace(&t).unwrap_err(),
            TraceError::MissingTrueLabels
        ));
    }

    #[test]
    fn golden_bytes() {
        let t = trace_2x3();
        let mut buf = Vec::new();
        let n = t.write_to(&mut buf).unwrap();
        assert_eq!(n, buf.len() as u64);
        #[rustfmt::skip]
        let expected: &[u8] = &[
            0x4C, 0x44, 0x54, 0x52,             // "LDTR"
            0x01, 0x00,                         // version 1
            0x01,                               // flags: true labels present
            0x00,                               // reserved
            0x02, 0x00, 0x00, 0x00,             // n_instances = 2
            0x03, 0x00,                         // k_epochs = 3
            0x02, 0x00,                         // n_classes = 2
            0x00, 0x00, 0x01, 0x00,             // true labels [0, 1]
            0x00, 0x00, 0x00, 0x00, 0x01, 0x00, // row 0: [0, 0, 1]
            0x01, 0x00, 0x01, 0x00, 0x01, 0x00, // row 1: [1, 1, 1]
        ];
        assert_eq!(buf, expected);
    }

    #[test]
    fn round_trip_identity() {
        let t = trace_2x3();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        let back = TraceMatrix::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, t);
        let mut buf2 = Vec::new();
        back.write_to(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn bad_magic_rejected() {
        let mut buf = Vec::new();
        trace_2x3().write_to(&mut buf).unwrap();
        buf[..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            TraceMatrix::read_from(buf.as_slice()).unwrap_err(),
            TraceError::BadMagic(m) if &m == b"XXXX"
        ));
    }

    #[test]
    fn truncated_payload_rejected() {
        // Header declares 10 instances but carries payload for 9.
        let full = TraceMatrix::new(vec![vec![0, 1]; 10], None, 2).unwrap();
        let mut buf = Vec::new();
        full.write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 4); // drop one instance's worth of predictions
        assert!(matches!(
            TraceMatrix::read_from(buf.as_slice()).unwrap_err(),
            TraceError::Truncated { .. }
        ));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut buf = Vec::new();
        trace_2x3().write_to(&mut buf).unwrap();
        buf.push(0);
        assert!(matches!(
            TraceMatrix::read_from(buf.as_slice()).unwrap_err(),
            TraceError::TrailingBytes { got: 1 }
        ));
    }

    #[test]
    fn unsupported_version_rejected() {
        let mut buf = Vec::new();
        trace_2x3().write_to(&mut buf).unwrap();
        buf[4] = 2;
        assert!(matches!(
            TraceMatrix::read_from(buf.as_slice()).unwrap_err(),
            TraceError::UnsupportedVersion(2)
        ));
    }

    #[test]
    fn unknown_flag_bits_rejected() {
        let mut buf = Vec::new();
        trace_2x3().write_to(&mut buf).unwrap();
        buf[6] |= 0b0000_0010;
        assert!(matches!(
            TraceMatrix::read_from(buf.as_slice()).unwrap_err(),
            TraceError::UnknownFlags(_)
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ldtr");
        let t = trace_2x3();
        let bytes = t.write_file(&path).unwrap();
        assert_eq!(bytes, std::fs::metadata(&path).unwrap().len());
        assert_eq!(TraceMatrix::read_file(&path).unwrap(), t);
    }
}
