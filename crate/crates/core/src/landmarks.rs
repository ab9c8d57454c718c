//! Landmark feature layout, the LMK1 sequence file format and the frame
//! stream record protocol.
//!
//! A tracked frame is flattened into a fixed 1662-value vector:
//!
//! | block      | range          | points | channels            |
//! |------------|----------------|--------|---------------------|
//! | pose       | `[0, 132)`     | 33     | x, y, z, visibility |
//! | face       | `[132, 1536)`  | 468    | x, y, z             |
//! | left hand  | `[1536, 1599)` | 21     | x, y, z             |
//! | right hand | `[1599, 1662)` | 21     | x, y, z             |
//!
//! Groups the tracker did not detect are written as zeros.

use std::io::Read;

use thiserror::Error;

pub const POSE_POINTS: usize = 33;
pub const FACE_POINTS: usize = 468;
pub const HAND_POINTS: usize = 21;

pub const POSE_LEN: usize = POSE_POINTS * 4;
pub const FACE_LEN: usize = FACE_POINTS * 3;
pub const HAND_LEN: usize = HAND_POINTS * 3;

pub const POSE_OFFSET: usize = 0;
pub const FACE_OFFSET: usize = POSE_OFFSET + POSE_LEN;
pub const LEFT_HAND_OFFSET: usize = FACE_OFFSET + FACE_LEN;
pub const RIGHT_HAND_OFFSET: usize = LEFT_HAND_OFFSET + HAND_LEN;

/// Length of one flattened frame.
pub const FEATURE_DIM: usize = RIGHT_HAND_OFFSET + HAND_LEN;

/// Frames per captured video.
pub const FRAMES_PER_SEQUENCE: usize = 30;

pub const LMK1_MAGIC: &[u8; 4] = b"LMK1";
pub const LMK1_VERSION: u16 = 1;
pub const LMK1_HEADER_LEN: usize = 4 + 2 + 4 + 4;

pub const FRAME_RECORD_LEAD: u8 = 0x4C;
pub const FRAME_RECORD_HEADER_LEN: usize = 1 + 4;
pub const FRAME_RECORD_LEN: usize = FRAME_RECORD_HEADER_LEN + FEATURE_DIM * 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LandmarkGroup {
    Pose,
    Face,
    LeftHand,
    RightHand,
}

impl LandmarkGroup {
    pub fn name(self) -> &'static str {
        match self {
            LandmarkGroup::Pose => "pose",
            LandmarkGroup::Face => "face",
            LandmarkGroup::LeftHand => "left_hand",
            LandmarkGroup::RightHand => "right_hand",
        }
    }

    pub fn points(self) -> usize {
        match self {
            LandmarkGroup::Pose => POSE_POINTS,
            LandmarkGroup::Face => FACE_POINTS,
            LandmarkGroup::LeftHand | LandmarkGroup::RightHand => HAND_POINTS,
        }
    }
}

impl std::fmt::Display for LandmarkGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum LayoutError {
    #[error("{group} has {found} points, expected {expected}")]
    WrongCardinality {
        group: LandmarkGroup,
        expected: usize,
        found: usize,
    },
    #[error("frame has {found} values, expected {expected}")]
    WrongLength { expected: usize, found: usize },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("frames disagree on feature dimension: {expected} vs {found}")]
    MixedDims { expected: usize, found: usize },
}

/// One tracker result. Each group is optional.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LandmarkFrame {
    pub pose: Option<Vec<[f32; 4]>>,
    pub face: Option<Vec<[f32; 3]>>,
    pub left_hand: Option<Vec<[f32; 3]>>,
    pub right_hand: Option<Vec<[f32; 3]>>,
}

fn check_group<const N: usize>(
    group: LandmarkGroup,
    points: &Option<Vec<[f32; N]>>,
) -> Result<(), LayoutError> {
    match points {
        Some(p) if p.len() != group.points() => Err(LayoutError::WrongCardinality {
            group,
            expected: group.points(),
            found: p.len(),
        }),
        _ => Ok(()),
    }
}

fn write_group<const N: usize>(out: &mut [f32], points: &Option<Vec<[f32; N]>>) {
    if let Some(points) = points {
        for (dst, p) in out.chunks_exact_mut(N).zip(points) {
            dst.copy_from_slice(p);
        }
    }
}

/// Flattens a tracker result into the fixed block layout, zero-filling
/// absent groups.
pub fn flatten_frame(frame: &LandmarkFrame) -> Result<FrameFeatures, LayoutError> {
    check_group(LandmarkGroup::Pose, &frame.pose)?;
    check_group(LandmarkGroup::Face, &frame.face)?;
    check_group(LandmarkGroup::LeftHand, &frame.left_hand)?;
    check_group(LandmarkGroup::RightHand, &frame.right_hand)?;

    let mut values = vec![0.0f32; FEATURE_DIM];
    write_group(&mut values[POSE_OFFSET..FACE_OFFSET], &frame.pose);
    write_group(&mut values[FACE_OFFSET..LEFT_HAND_OFFSET], &frame.face);
    write_group(
        &mut values[LEFT_HAND_OFFSET..RIGHT_HAND_OFFSET],
        &frame.left_hand,
    );
    write_group(
        &mut values[RIGHT_HAND_OFFSET..FEATURE_DIM],
        &frame.right_hand,
    );
    FrameFeatures::new(values)
}

/// One time step's feature vector: finite `f32` values of a fixed dimension
/// (1662 for holistic landmarks).
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures(Vec<f32>);

impl FrameFeatures {
    /// Builds a full holistic frame (length 1662).
    pub fn new(values: Vec<f32>) -> Result<Self, LayoutError> {
        Self::with_dim(values, FEATURE_DIM)
    }

    /// Builds a frame of an arbitrary feature dimension, for reduced-dimension
    /// corpora.
    pub fn with_dim(values: Vec<f32>, dim: usize) -> Result<Self, LayoutError> {
        if values.len() != dim {
            return Err(LayoutError::WrongLength {
                expected: dim,
                found: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(LayoutError::NonFinite { index });
        }
        Ok(Self(values))
    }

    pub fn zeros() -> Self {
        Self(vec![0.0; FEATURE_DIM])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f32> {
        self.0
    }
}

impl AsRef<[f32]> for FrameFeatures {
    fn as_ref(&self) -> &[f32] {
        &self.0
    }
}

/// An ordered list of frames sharing one feature dimension, with an optional
/// label. The label is not part of the LMK1 payload; it comes from the corpus
/// directory the file lives in.
#[derive(Debug, Clone, PartialEq)]
pub struct GestureSequence {
    dim: usize,
    frames: Vec<FrameFeatures>,
    pub label: Option<String>,
}

impl GestureSequence {
    pub fn new(frames: Vec<FrameFeatures>, label: Option<String>) -> Result<Self, LayoutError> {
        let dim = frames.first().map_or(FEATURE_DIM, FrameFeatures::dim);
        Self::with_dim(dim, frames, label)
    }

    pub fn with_dim(
        dim: usize,
        frames: Vec<FrameFeatures>,
        label: Option<String>,
    ) -> Result<Self, LayoutError> {
        if let Some(f) = frames.iter().find(|f| f.dim() != dim) {
            return Err(LayoutError::MixedDims {
                expected: dim,
                found: f.dim(),
            });
        }
        Ok(Self { dim, frames, label })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            frames: Vec::new(),
            label: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frames(&self) -> &[FrameFeatures] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SequenceDecodeError {
    #[error("bad magic {found:?}, expected \"LMK1\"")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported LMK1 version {found}")]
    UnsupportedVersion { found: u16 },
    #[error("truncated LMK1 data: need {expected} bytes, have {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{extra} trailing bytes after LMK1 payload")]
    TrailingBytes { extra: usize },
    #[error("declared feature dim {found} differs from expected {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Layout(#[from] LayoutError),
}

/// Encodes a sequence as LMK1: magic, version u16, feature dim u32, frame
/// count u32, then frame-major `f32` values, all little-endian.
pub fn encode_sequence(seq: &GestureSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(LMK1_HEADER_LEN + seq.len() * seq.dim() * 4);
    out.extend_from_slice(LMK1_MAGIC);
    out.extend_from_slice(&LMK1_VERSION.to_le_bytes());
    out.extend_from_slice(&(seq.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(seq.len() as u32).to_le_bytes());
    for frame in seq.frames() {
        for v in frame.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Decodes an LMK1 buffer of any declared feature dimension.
pub fn decode_sequence(bytes: &[u8]) -> Result<GestureSequence, SequenceDecodeError> {
    decode_sequence_inner(bytes, None)
}

/// Decodes an LMK1 buffer, requiring the declared feature dimension to equal
/// `dim`.
pub fn decode_sequence_with_dim(
    bytes: &[u8],
    dim: usize,
) -> Result<GestureSequence, SequenceDecodeError> {
    decode_sequence_inner(bytes, Some(dim))
}

fn decode_sequence_inner(
    bytes: &[u8],
    expected_dim: Option<usize>,
) -> Result<GestureSequence, SequenceDecodeError> {
    if bytes.len() < 4 || &bytes[..4] != LMK1_MAGIC {
        return Err(SequenceDecodeError::BadMagic {
            found: bytes[..bytes.len().min(4)].to_vec(),
        });
    }
    if bytes.len() < LMK1_HEADER_LEN {
        return Err(SequenceDecodeError::Truncated {
            expected: LMK1_HEADER_LEN,
            found: bytes.len(),
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != LMK1_VERSION {
        return Err(SequenceDecodeError::UnsupportedVersion { found: version });
    }
    let dim = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let count = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    if let Some(expected) = expected_dim {
        if dim != expected {
            return Err(SequenceDecodeError::DimMismatch {
                expected,
                found: dim,
            });
        }
    }
    let expected_len = LMK1_HEADER_LEN + count * dim * 4;
    if bytes.len() < expected_len {
        return Err(SequenceDecodeError::Truncated {
            expected: expected_len,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected_len {
        return Err(SequenceDecodeError::TrailingBytes {
            extra: bytes.len() - expected_len,
        });
    }
    let payload = &bytes[LMK1_HEADER_LEN..];
    let frames = if dim == 0 {
        Vec::new()
    } else {
        payload
            .chunks_exact(dim * 4)
            .map(|chunk| FrameFeatures::with_dim(read_f32s(chunk), dim))
            .collect::<Result<Vec<_>, _>>()?
    };
    Ok(GestureSequence::with_dim(dim, frames, None)?)
}

fn read_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect()
}

#[derive(Debug, Error, PartialEq)]
pub enum FrameProtocolError {
    #[error("bad record lead byte 0x{found:02x}, expected 0x4c")]
    BadLead { found: u8 },
    #[error("record declares dim {found}, expected {expected}")]
    WrongDim { expected: usize, found: usize },
    #[error("truncated record: need {expected} bytes, have {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{extra} trailing bytes after record")]
    TrailingBytes { extra: usize },
    #[error(transparent)]
    Layout(#[from] LayoutError),
}

/// Encodes one stream record: lead byte `0x4C`, dim as u32-LE, then `dim`
/// little-endian `f32` values.
pub fn encode_frame_record(frame: &FrameFeatures) -> Vec<u8> {
    let mut out = Vec::with_capacity(FRAME_RECORD_HEADER_LEN + frame.dim() * 4);
    out.push(FRAME_RECORD_LEAD);
    out.extend_from_slice(&(frame.dim() as u32).to_le_bytes());
    for v in frame.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes exactly one complete 1662-dim record.
pub fn decode_frame_record(bytes: &[u8]) -> Result<FrameFeatures, FrameProtocolError> {
    decode_frame_record_with_dim(bytes, FEATURE_DIM)
}

pub fn decode_frame_record_with_dim(
    bytes: &[u8],
    dim: usize,
) -> Result<FrameFeatures, FrameProtocolError> {
    let body_len = parse_record_header(bytes, dim)?;
    let need = FRAME_RECORD_HEADER_LEN + body_len;
    if bytes.len() < need {
        return Err(FrameProtocolError::Truncated {
            expected: need,
            found: bytes.len(),
        });
    }
    if bytes.len() > need {
        return Err(FrameProtocolError::TrailingBytes {
            extra: bytes.len() - need,
        });
    }
    Ok(FrameFeatures::with_dim(
        read_f32s(&bytes[FRAME_RECORD_HEADER_LEN..]),
        dim,
    )?)
}

fn parse_record_header(bytes: &[u8], dim: usize) -> Result<usize, FrameProtocolError> {
    match bytes.first() {
        None => {
            return Err(FrameProtocolError::Truncated {
                expected: FRAME_RECORD_HEADER_LEN,
                found: 0,
            })
        }
        Some(&b) if b != FRAME_RECORD_LEAD => return Err(FrameProtocolError::BadLead { found: b }),
        _ => {}
    }
    if bytes.len() < FRAME_RECORD_HEADER_LEN {
        return Err(FrameProtocolError::Truncated {
            expected: FRAME_RECORD_HEADER_LEN,
            found: bytes.len(),
        });
    }
    let declared = u32::from_le_bytes(bytes[1..5].try_into().unwrap()) as usize;
    if declared != dim {
        return Err(FrameProtocolError::WrongDim {
            expected: dim,
            found: declared,
        });
    }
    Ok(dim * 4)
}

#[derive(Debug, Error)]
pub enum FrameReadError {
    #[error(transparent)]
    Protocol(#[from] FrameProtocolError),
    #[error("stream ended inside a record ({read} of {expected} bytes)")]
    UnexpectedEof { read: usize, expected: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Reads consecutive frame records from a byte stream.
pub struct FrameReader<R> {
    inner: R,
    dim: usize,
    buf: Vec<u8>,
}

impl<R: Read> FrameReader<R> {
    pub fn new(inner: R) -> Self {
        Self::with_dim(inner, FEATURE_DIM)
    }

    pub fn with_dim(inner: R, dim: usize) -> Self {
        Self {
            inner,
            dim,
            buf: vec![0; FRAME_RECORD_HEADER_LEN + dim * 4],
        }
    }

    /// Returns `Ok(None)` on a clean end of stream between records.
    pub fn read_frame(&mut self) -> Result<Option<FrameFeatures>, FrameReadError> {
        let header_read = read_full(&mut self.inner, &mut self.buf[..FRAME_RECORD_HEADER_LEN])?;
        if header_read == 0 {
            return Ok(None);
        }
        if header_read < FRAME_RECORD_HEADER_LEN {
            // a bad lead byte is more informative than a short read
            parse_record_header(&self.buf[..header_read], self.dim)?;
            return Err(FrameReadError::UnexpectedEof {
                read: header_read,
                expected: self.buf.len(),
            });
        }
        parse_record_header(&self.buf[..FRAME_RECORD_HEADER_LEN], self.dim)?;
        let body_read = read_full(&mut self.inner, &mut self.buf[FRAME_RECORD_HEADER_LEN..])?;
        if body_read < self.dim * 4 {
            return Err(FrameReadError::UnexpectedEof {
                read: FRAME_RECORD_HEADER_LEN + body_read,
                expected: self.buf.len(),
            });
        }
        Ok(Some(decode_frame_record_with_dim(&self.buf, self.dim)?))
    }
}

impl<R: Read> Iterator for FrameReader<R> {
    type Item = Result<FrameFeatures, FrameReadError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.read_frame().transpose()
    }
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}
