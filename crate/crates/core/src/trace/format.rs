use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{Frame, FramePayload, Payload, TraceHeader, FORMAT_TAG, FORMAT_VERSION};
use crate::diversity::Embeddings;
use crate::scoring::{AttentionMatrix, ScoreVector};

/// Environment variable overriding the I/O buffer size in bytes.
pub const BUFFER_ENV: &str = "VLAT_BUFFER_SIZE";
const DEFAULT_BUFFER: usize = 1 << 20;

/// I/O buffer size, overridable through the environment.
pub fn buffer_size() -> usize {
    std::env::var(BUFFER_ENV).ok().and_then(|v| v.parse().ok()).filter(|&n: &usize| n > 0).unwrap_or(DEFAULT_BUFFER)
}

#[derive(Debug, Error)]
#[error("trace error at byte {offset}: {kind}")]
pub struct TraceError {
    pub offset: u64,
    pub kind: TraceErrorKind,
}

#[derive(Debug, Error)]
pub enum TraceErrorKind {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("not a vlat trace (format tag {0:?})")]
    Format(String),
    #[error("unsupported version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("timestep {found} does not follow {previous}")]
    Timestep { previous: u64, found: u64 },
    #[error("stream ends mid-record")]
    Truncated,
    #[error("stream is empty")]
    Empty,
}

impl TraceError {
    fn at(offset: u64, kind: TraceErrorKind) -> Self {
        TraceError { offset, kind }
    }
}

#[derive(Serialize, Deserialize)]
struct Blob {
    rows: usize,
    cols: usize,
    data: String,
}

impl Blob {
    fn encode(rows: usize, cols: usize, values: impl Iterator<Item = f32>) -> Self {
        let mut bytes = Vec::with_capacity(rows * cols * 4);
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        Blob { rows, cols, data: STANDARD.encode(bytes) }
    }

    fn decode(&self) -> Result<Vec<f32>, TraceErrorKind> {
        let bytes =
            STANDARD.decode(&self.data).map_err(|e| TraceErrorKind::Malformed(format!("base-64 payload: {e}")))?;
        if bytes.len() != self.rows * self.cols * 4 {
            return Err(TraceErrorKind::Shape(format!(
                "payload holds {} bytes, {}x{} f32 needs {}",
                bytes.len(),
                self.rows,
                self.cols,
                self.rows * self.cols * 4
            )));
        }
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }

    fn expect_shape(&self, what: &str, rows: Option<usize>, cols: usize) -> Result<(), TraceErrorKind> {
        if rows.is_some_and(|r| r != self.rows) || self.cols != cols {
            let want_rows = rows.map_or("*".to_string(), |r| r.to_string());
            return Err(TraceErrorKind::Shape(format!(
                "{what}: expected {want_rows}x{cols}, found {}x{}",
                self.rows, self.cols
            )));
        }
        Ok(())
    }

    fn matrix(m: &AttentionMatrix) -> Self {
        Blob::encode(m.rows(), m.cols(), m.values().iter().map(|v| *v as f32))
    }

    fn vector(s: &ScoreVector) -> Self {
        Blob::encode(1, s.len(), s.as_slice().iter().map(|v| *v as f32))
    }

    fn to_matrix(&self) -> Result<AttentionMatrix, TraceErrorKind> {
        let values = self.decode()?.into_iter().map(f64::from).collect();
        AttentionMatrix::new(self.rows, self.cols, values).map_err(|e| TraceErrorKind::Malformed(e.to_string()))
    }

    fn to_vector(&self) -> Result<ScoreVector, TraceErrorKind> {
        ScoreVector::new(self.decode()?.into_iter().map(f64::from).collect())
            .map_err(|e| TraceErrorKind::Malformed(e.to_string()))
    }
}

#[derive(Serialize, Deserialize)]
struct FrameRecord {
    t: u64,
    prefill: Blob,
    decode: Vec<Blob>,
    embeddings: Blob,
}

fn check_header(h: &TraceHeader) -> Result<(), TraceErrorKind> {
    if h.format != FORMAT_TAG {
        return Err(TraceErrorKind::Format(h.format.clone()));
    }
    if h.version != FORMAT_VERSION {
        return Err(TraceErrorKind::Version { found: h.version, expected: FORMAT_VERSION });
    }
    if h.m_visual == 0 || h.layers == 0 || h.embed_dim == 0 {
        return Err(TraceErrorKind::Shape("m_visual, layers and embed_dim must be at least 1".into()));
    }
    if h.visual_offset > h.n_text {
        return Err(TraceErrorKind::Shape(format!("visual_offset {} exceeds n_text {}", h.visual_offset, h.n_text)));
    }
    Ok(())
}

fn check_frame(h: &TraceHeader, f: &Frame) -> Result<(), TraceErrorKind> {
    let mu = h.n_text + h.m_visual;
    let shape = |msg: String| Err(TraceErrorKind::Shape(msg));
    if f.embeddings.m() != h.m_visual || f.embeddings.dim() != h.embed_dim {
        return shape(format!(
            "embeddings: expected {}x{}, found {}x{}",
            h.m_visual,
            h.embed_dim,
            f.embeddings.m(),
            f.embeddings.dim()
        ));
    }
    match (&f.payload, h.payload) {
        (FramePayload::Raw { prefill, decode }, Payload::Raw) => {
            if prefill.rows() != mu || prefill.cols() != mu {
                return shape(format!("prefill: expected {mu}x{mu}, found {}x{}", prefill.rows(), prefill.cols()));
            }
            if decode.len() != h.layers {
                return shape(format!("decode: expected {} layers, found {}", h.layers, decode.len()));
            }
            if let Some(bad) = decode.iter().find(|a| a.cols() != mu || a.rows() == 0) {
                return shape(format!(
                    "decode layer: expected Rx{mu} with R >= 1, found {}x{}",
                    bad.rows(),
                    bad.cols()
                ));
            }
        }
        (FramePayload::Scored { prefill, decode }, Payload::Scored) => {
            if prefill.len() != h.m_visual {
                return shape(format!("prefill scores: expected {}, found {}", h.m_visual, prefill.len()));
            }
            if decode.len() != h.layers {
                return shape(format!("decode: expected {} layers, found {}", h.layers, decode.len()));
            }
            if let Some(bad) = decode.iter().find(|s| s.len() != h.m_visual) {
                return shape(format!("decode scores: expected {}, found {}", h.m_visual, bad.len()));
            }
        }
        _ => return shape(format!("frame payload kind does not match header payload {:?}", h.payload)),
    }
    Ok(())
}

fn encode_frame(f: &Frame) -> FrameRecord {
    let (prefill, decode) = match &f.payload {
        FramePayload::Raw { prefill, decode } => (Blob::matrix(prefill), decode.iter().map(Blob::matrix).collect()),
        FramePayload::Scored { prefill, decode } => (Blob::vector(prefill), decode.iter().map(Blob::vector).collect()),
    };
    FrameRecord {
        t: f.timestep,
        prefill,
        decode,
        embeddings: Blob::encode(f.embeddings.m(), f.embeddings.dim(), f.embeddings.values().iter().copied()),
    }
}

fn decode_frame(h: &TraceHeader, r: FrameRecord) -> Result<Frame, TraceErrorKind> {
    let mu = h.n_text + h.m_visual;
    r.embeddings.expect_shape("embeddings", Some(h.m_visual), h.embed_dim)?;
    let embeddings = Embeddings::new(h.m_visual, h.embed_dim, r.embeddings.decode()?)
        .map_err(|e| TraceErrorKind::Malformed(e.to_string()))?;
    if r.decode.len() != h.layers {
        return Err(TraceErrorKind::Shape(format!("decode: expected {} layers, found {}", h.layers, r.decode.len())));
    }
    let payload = match h.payload {
        Payload::Raw => {
            r.prefill.expect_shape("prefill", Some(mu), mu)?;
            let mut decode = Vec::with_capacity(r.decode.len());
            for b in &r.decode {
                b.expect_shape("decode layer", None, mu)?;
                decode.push(b.to_matrix()?);
            }
            FramePayload::Raw { prefill: r.prefill.to_matrix()?, decode }
        }
        Payload::Scored => {
            r.prefill.expect_shape("prefill scores", Some(1), h.m_visual)?;
            let mut decode = Vec::with_capacity(r.decode.len());
            for b in &r.decode {
                b.expect_shape("decode scores", Some(1), h.m_visual)?;
                decode.push(b.to_vector()?);
            }
            FramePayload::Scored { prefill: r.prefill.to_vector()?, decode }
        }
    };
    let frame = Frame { timestep: r.t, payload, embeddings };
    check_frame(h, &frame)?;
    Ok(frame)
}

/// Streaming writer. Frames must arrive with strictly increasing timesteps.
pub struct TraceWriter<W: Write> {
    inner: W,
    header: TraceHeader,
    offset: u64,
    last_t: Option<u64>,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(mut inner: W, header: TraceHeader) -> Result<Self, TraceError> {
        check_header(&header).map_err(|k| TraceError::at(0, k))?;
        let mut line = serde_json::to_vec(&header).expect("header serializes");
        line.push(b'\n');
        inner.write_all(&line).map_err(|e| TraceError::at(0, e.into()))?;
        Ok(TraceWriter { inner, header, offset: line.len() as u64, last_t: None })
    }

    pub fn header(&self) -> &TraceHeader {
        &self.header
    }

    pub fn write_frame(&mut self, frame: &Frame) -> Result<(), TraceError> {
        let at = self.offset;
        check_frame(&self.header, frame).map_err(|k| TraceError::at(at, k))?;
        if let Some(prev) = self.last_t {
            if frame.timestep <= prev {
                return Err(TraceError::at(at, TraceErrorKind::Timestep { previous: prev, found: frame.timestep }));
            }
        }
        let mut line = serde_json::to_vec(&encode_frame(frame)).expect("frame serializes");
        line.push(b'\n');
        self.inner.write_all(&line).map_err(|e| TraceError::at(at, e.into()))?;
        self.offset += line.len() as u64;
        self.last_t = Some(frame.timestep);
        Ok(())
    }

    pub fn finish(mut self) -> Result<W, TraceError> {
        self.inner.flush().map_err(|e| TraceError::at(self.offset, e.into()))?;
        Ok(self.inner)
    }
}

/// Streaming reader yielding one frame at a time.
pub struct TraceReader<R: BufRead> {
    inner: R,
    header: TraceHeader,
    offset: u64,
    last_t: Option<u64>,
    line: String,
    failed: bool,
}

impl<R: BufRead> TraceReader<R> {
    pub fn new(mut inner: R) -> Result<Self, TraceError> {
        let mut line = String::new();
        let n = inner.read_line(&mut line).map_err(|e| TraceError::at(0, e.into()))?;
        if n == 0 {
            return Err(TraceError::at(0, TraceErrorKind::Empty));
        }
        if !line.ends_with('\n') {
            return Err(TraceError::at(0, TraceErrorKind::Truncated));
        }
        let header: TraceHeader = serde_json::from_str(&line)
            .map_err(|e| TraceError::at(0, TraceErrorKind::Malformed(format!("header: {e}"))))?;
        check_header(&header).map_err(|k| TraceError::at(0, k))?;
        Ok(TraceReader { inner, header, offset: n as u64, last_t: None, line, failed: false })
    }

    pub fn header(&self) -> &TraceHeader {
        &self.header
    }

    fn next_frame(&mut self) -> Option<Result<Frame, TraceError>> {
        let at = self.offset;
        self.line.clear();
        let n = match self.inner.read_line(&mut self.line) {
            Ok(n) => n,
            Err(e) => return Some(Err(TraceError::at(at, e.into()))),
        };
        if n == 0 {
            return None;
        }
        self.offset += n as u64;
        if !self.line.ends_with('\n') {
            return Some(Err(TraceError::at(at, TraceErrorKind::Truncated)));
        }
        let record: FrameRecord = match serde_json::from_str(&self.line) {
            Ok(r) => r,
            Err(e) => return Some(Err(TraceError::at(at, TraceErrorKind::Malformed(e.to_string())))),
        };
        if let Some(prev) = self.last_t {
            if record.t <= prev {
                return Some(Err(TraceError::at(at, TraceErrorKind::Timestep { previous: prev, found: record.t })));
            }
        }
        self.last_t = Some(record.t);
        Some(decode_frame(&self.header, record).map_err(|k| TraceError::at(at, k)))
    }
}

impl<R: BufRead> Iterator for TraceReader<R> {
    type Item = Result<Frame, TraceError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let item = self.next_frame();
        if matches!(item, Some(Err(_))) {
            self.failed = true;
        }
        item
    }
}

impl TraceReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, TraceError> {
        let file = File::open(path).map_err(|e| TraceError::at(0, e.into()))?;
        Self::new(BufReader::with_capacity(buffer_size(), file))
    }
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<(TraceHeader, Vec<Frame>), TraceError> {
    let reader = TraceReader::open(path)?;
    let header = reader.header().clone();
    let frames = reader.collect::<Result<Vec<_>, _>>()?;
    Ok((header, frames))
}

pub fn write_trace(path: impl AsRef<Path>, header: &TraceHeader, frames: &[Frame]) -> Result<(), TraceError> {
    let file = File::create(path).map_err(|e| TraceError::at(0, e.into()))?;
    let mut writer = TraceWriter::new(BufWriter::with_capacity(buffer_size(), file), header.clone())?;
    for f in frames {
        writer.write_frame(f)?;
    }
    writer.finish()?;
    Ok(())
}

/// Hex SHA-256 of a file's bytes.
pub fn checksum(path: impl AsRef<Path>) -> io::Result<String> {
    checksum_reader(File::open(path)?)
}

pub fn checksum_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn checksum_reader(mut file: impl Read) -> io::Result<String> {
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; buffer_size()];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scored_header(m: usize) -> TraceHeader {
        TraceHeader::new("ep", m, 2, 1, 2, Payload::Scored)
    }

    fn scored_frame(t: u64, prefill: &[f64]) -> Frame {
        let m = prefill.len();
        Frame {
            timestep: t,
            payload: FramePayload::Scored {
                prefill: ScoreVector::new(prefill.to_vec()).unwrap(),
                decode: vec![ScoreVector::new(vec![1.0 / m as f64; m]).unwrap()],
            },
            embeddings: Embeddings::new(m, 2, vec![0.5; m * 2]).unwrap(),
        }
    }

    fn write_to_vec(h: &TraceHeader, frames: &[Frame]) -> Vec<u8> {
        let mut w = TraceWriter::new(Vec::new(), h.clone()).unwrap();
        for f in frames {
            w.write_frame(f).unwrap();
        }
        w.finish().unwrap()
    }

    #[test]
    fn header_only() {
        let bytes = write_to_vec(&scored_header(4), &[]);
        let r = TraceReader::new(&bytes[..]).unwrap();
        assert_eq!(r.header(), &scored_header(4));
        assert_eq!(r.count(), 0);
    }

    #[test]
    fn scored_round_trip() {
        let f = scored_frame(0, &[0.25, 0.25, 0.25, 0.25]);
        let bytes = write_to_vec(&scored_header(4), std::slice::from_ref(&f));
        let frames: Vec<Frame> = TraceReader::new(&bytes[..]).unwrap().map(Result::unwrap).collect();
        assert_eq!(frames, vec![f]);
    }

    #[test]
    fn version_mismatch() {
        let mut h = scored_header(4);
        h.version = 9;
        let line = format!("{}\n", serde_json::to_string(&h).unwrap());
        let err = TraceReader::new(line.as_bytes()).err().unwrap();
        assert!(matches!(err.kind, TraceErrorKind::Version { found: 9, expected: 1 }));
        assert_eq!(err.offset, 0);
    }

    #[test]
    fn truncated_stream_reports_offset() {
        let bytes = write_to_vec(&scored_header(4), &[scored_frame(0, &[0.1; 4]), scored_frame(1, &[0.2; 4])]);
        let header_len = bytes.iter().position(|b| *b == b'\n').unwrap() + 1;
        let cut = &bytes[..bytes.len() - 10];
        let results: Vec<_> = TraceReader::new(cut).unwrap().collect();
        assert_eq!(results.len(), 2);
        assert!(results[0].is_ok());
        let err = results[1].as_ref().unwrap_err();
        assert!(matches!(err.kind, TraceErrorKind::Truncated));
        let second_start = header_len + bytes[header_len..].iter().position(|b| *b == b'\n').unwrap() + 1;
        assert_eq!(err.offset, second_start as u64);
    }

    #[test]
    fn shape_mismatch_rejected_on_write_and_read() {
        let h = scored_header(4);
        let mut w = TraceWriter::new(Vec::new(), h.clone()).unwrap();
        let err = w.write_frame(&scored_frame(0, &[0.2; 3])).unwrap_err();
        assert!(matches!(err.kind, TraceErrorKind::Shape(_)));

        // a 3-patch frame smuggled under a 4-patch header
        let bytes = write_to_vec(&scored_header(3), &[scored_frame(0, &[0.2; 3])]);
        let body = bytes.splitn(2, |b| *b == b'\n').nth(1).unwrap();
        let mut spliced = serde_json::to_vec(&h).unwrap();
        spliced.push(b'\n');
        spliced.extend_from_slice(body);
        let err = TraceReader::new(&spliced[..]).unwrap().next().unwrap().unwrap_err();
        assert!(matches!(err.kind, TraceErrorKind::Shape(_)), "{err}");
    }

    #[test]
    fn timesteps_must_increase() {
        let h = scored_header(4);
        let mut w = TraceWriter::new(Vec::new(), h).unwrap();
        w.write_frame(&scored_frame(5, &[0.1; 4])).unwrap();
        let err = w.write_frame(&scored_frame(5, &[0.1; 4])).unwrap_err();
        assert!(matches!(err.kind, TraceErrorKind::Timestep { previous: 5, found: 5 }));
    }

    #[test]
    fn garbage_is_malformed() {
        let mut bytes = write_to_vec(&scored_header(4), &[]);
        bytes.extend_from_slice(b"{not json}\n");
        let err = TraceReader::new(&bytes[..]).unwrap().next().unwrap().unwrap_err();
        assert!(matches!(err.kind, TraceErrorKind::Malformed(_)));
        assert!(TraceReader::new(&b""[..]).is_err());
    }
}
