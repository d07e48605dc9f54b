//! Binary dataset and checkpoint files, CSV import/export, atomic writes.
//!
//! All integers and floats are little-endian; samples and weights are stored
//! as `f32`.
//!
//! Dataset file:
//! ```text
//! "SISGDSET" u32:version f64:sample_rate u32:channels u32:time_steps
//! u32:n_trials u32:n_classes f64×n_classes u32:n_subjects u32×n_subjects
//! u32:n_meta (str:key str:value)×n_meta
//! (u32:subject u32:class|0xFFFFFFFF u8:provenance f32×channels×time_steps)×n_trials
//! ```
//! Checkpoint file:
//! ```text
//! "SISGCKPT" u32:version u8:frozen u32:n_meta (str str)×n_meta
//! u32:n_tensors (str:name u8:kind u32:rank u32×rank f32×numel)×n_tensors
//! ```
//! where `str` is a u32 byte length followed by UTF-8.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{ParameterStore, StoreEntry, Tensor, TensorKind};
use crate::signal::{Dataset, EegTrial, Provenance, SsvepClassTable, SubjectId};

pub const DATASET_MAGIC: &[u8; 8] = b"SISGDSET";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SISGCKPT";
pub const FORMAT_VERSION: u32 = 1;
const UNLABELED: u32 = u32::MAX;

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f64) {
        self.buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
    fn meta(&mut self, meta: &BTreeMap<String, String>) {
        self.u32(meta.len() as u32);
        for (k, v) in meta {
            self.str(k);
            self.str(v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::TruncatedPayload(format!(
                "{what}: need {n} bytes at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn magic(&mut self, magic: &'static [u8; 8]) -> Result<()> {
        let expected = std::str::from_utf8(magic).expect("ascii magic");
        let got = self.take(8, "magic").map_err(|_| Error::BadMagic { expected })?;
        if got != magic {
            return Err(Error::BadMagic { expected });
        }
        let version = self.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        Ok(())
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::TruncatedPayload(what.into()))?, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }
    fn str(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let bytes = self.take(n, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::InvariantViolation(format!("{what} is not UTF-8")))
    }
    fn meta(&mut self) -> Result<BTreeMap<String, String>> {
        let n = self.u32("meta count")?;
        let mut meta = BTreeMap::new();
        for _ in 0..n {
            let k = self.str("meta key")?;
            let v = self.str("meta value")?;
            meta.insert(k, v);
        }
        Ok(meta)
    }
}

fn provenance_code(p: Provenance) -> u8 {
    match p {
        Provenance::OracleReal => 0,
        Provenance::Generated => 1,
    }
}

pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let mut w = Writer::default();
    w.buf.extend_from_slice(DATASET_MAGIC);
    w.u32(FORMAT_VERSION);
    let (channels, steps, rate) = ds.shape().unwrap_or((0, 0, 0.0));
    w.f64(rate);
    w.u32(channels as u32);
    w.u32(steps as u32);
    w.u32(ds.len() as u32);
    let freqs = ds.class_table().frequencies_hz();
    w.u32(freqs.len() as u32);
    for &f in freqs {
        w.f64(f);
    }
    w.u32(ds.subject_roster().len() as u32);
    for &s in ds.subject_roster() {
        w.u32(s);
    }
    w.meta(&ds.meta);
    for t in ds.trials() {
        w.u32(t.subject);
        w.u32(t.class_label.map_or(UNLABELED, |c| c as u32));
        w.u8(provenance_code(t.provenance));
        for &v in t.samples() {
            w.f32(v);
        }
    }
    w.buf
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader::new(bytes);
    r.magic(DATASET_MAGIC)?;
    let rate = r.f64("sample rate")?;
    let channels = r.u32("channels")? as usize;
    let steps = r.u32("time steps")? as usize;
    let n_trials = r.u32("trial count")? as usize;
    let n_classes = r.u32("class count")? as usize;
    let freqs = (0..n_classes).map(|_| r.f64("class frequency")).collect::<Result<Vec<_>>>()?;
    let n_subjects = r.u32("subject count")? as usize;
    let roster = (0..n_subjects).map(|_| r.u32("subject id")).collect::<Result<Vec<SubjectId>>>()?;
    let meta = r.meta()?;
    let record = 9 + 4 * channels * steps;
    let need = n_trials * record;
    if r.remaining() < need {
        return Err(Error::TruncatedPayload(format!(
            "{n_trials} trials need {need} bytes, {} present",
            r.remaining()
        )));
    }
    if r.remaining() > need {
        return Err(Error::InvariantViolation(format!(
            "{} trailing bytes after {n_trials} trials",
            r.remaining() - need
        )));
    }
    let classes = SsvepClassTable::new(freqs).map_err(|e| Error::InvariantViolation(e.to_string()))?;
    let mut trials = Vec::with_capacity(n_trials);
    for i in 0..n_trials {
        let subject = r.u32("subject")?;
        let class = r.u32("class")?;
        let class_label = match class {
            UNLABELED => None,
            c if (c as usize) < n_classes => Some(c as usize),
            c => {
                return Err(Error::InvariantViolation(format!(
                    "trial {i} has class {c} but only {n_classes} classes"
                )))
            }
        };
        let provenance = match r.u8("provenance")? {
            0 => Provenance::OracleReal,
            1 => Provenance::Generated,
            p => return Err(Error::InvariantViolation(format!("trial {i} has provenance code {p}"))),
        };
        let samples = r.f32s(channels * steps, "samples")?;
        let t = EegTrial::new(channels, steps, samples, rate, subject, class_label, provenance)
            .map_err(|e| Error::InvariantViolation(format!("trial {i}: {e}")))?;
        trials.push(t);
    }
    let mut ds = Dataset::new(trials, classes, roster).map_err(|e| match e {
        Error::InvariantViolation(_) => e,
        other => Error::InvariantViolation(other.to_string()),
    })?;
    ds.meta = meta;
    Ok(ds)
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    write_atomic(path, &encode_dataset(ds))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&read_file(path)?)
}

/// Parameters plus free-form metadata (architecture, config hash, roster).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub store: ParameterStore,
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(store: ParameterStore) -> Self {
        Self {
            store,
            meta: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.meta.insert(key.into(), value.into());
        self
    }

    /// Metadata value or an invariant error naming the missing key.
    pub fn require(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::InvariantViolation(format!("checkpoint lacks {key:?}")))
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut w = Writer::default();
    w.buf.extend_from_slice(CHECKPOINT_MAGIC);
    w.u32(FORMAT_VERSION);
    w.u8(ckpt.store.is_frozen() as u8);
    w.meta(&ckpt.meta);
    let entries = ckpt.store.entries();
    w.u32(entries.len() as u32);
    for e in entries {
        w.str(&e.name);
        w.u8(match e.kind {
            TensorKind::Param => 0,
            TensorKind::Buffer => 1,
        });
        w.u32(e.tensor.shape.len() as u32);
        for &d in &e.tensor.shape {
            w.u32(d as u32);
        }
        for &v in &e.tensor.data {
            w.f32(v);
        }
    }
    w.buf
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let frozen = match r.u8("frozen flag")? {
        0 => false,
        1 => true,
        f => return Err(Error::InvariantViolation(format!("frozen flag {f}"))),
    };
    let meta = r.meta()?;
    let n = r.u32("tensor count")?;
    let mut entries = Vec::new();
    for _ in 0..n {
        let name = r.str("tensor name")?;
        let kind = match r.u8("tensor kind")? {
            0 => TensorKind::Param,
            1 => TensorKind::Buffer,
            k => return Err(Error::InvariantViolation(format!("tensor {name:?} has kind {k}"))),
        };
        let rank = r.u32("rank")? as usize;
        let shape = (0..rank).map(|_| r.u32("dim").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let numel = numel.ok_or_else(|| Error::InvariantViolation(format!("tensor {name:?} too large")))?;
        let data = r.f32s(numel, "tensor data")?;
        entries.push(StoreEntry {
            name,
            kind,
            tensor: Tensor::new(shape, data),
        });
    }
    if r.remaining() > 0 {
        return Err(Error::InvariantViolation(format!("{} trailing bytes", r.remaining())));
    }
    Ok(Checkpoint {
        store: ParameterStore::from_entries(entries, frozen)?,
        meta,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ckpt))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&read_file(path)?)
}

/// Imports one trial per row: `subject, class, s_0 … s_{C·T−1}` with samples
/// row-major `[channel][time]`. The first row is a header; an empty class
/// cell means unlabeled.
pub fn import_csv(path: &Path, sample_rate_hz: f64, channels: usize) -> Result<Dataset> {
    import_csv_with_classes(path, sample_rate_hz, channels, SsvepClassTable::default())
}

pub fn import_csv_with_classes(path: &Path, sample_rate_hz: f64, channels: usize, classes: SsvepClassTable) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let cols = header.len();
    if cols < 3 || header.get(0).map(str::trim) != Some("subject") || header.get(1).map(str::trim) != Some("class") {
        return Err(Error::SchemaMismatch(format!(
            "header must start with subject,class and have sample columns; got {:?}",
            header.iter().take(3).collect::<Vec<_>>()
        )));
    }
    if channels == 0 || (cols - 2) % channels != 0 {
        return Err(Error::SchemaMismatch(format!(
            "{} sample columns do not split into {channels} channels",
            cols - 2
        )));
    }
    let steps = (cols - 2) / channels;
    let mut trials = Vec::new();
    let mut roster: Vec<SubjectId> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| csv_error(path, e))?;
        if rec.len() != cols {
            return Err(Error::SchemaMismatch(format!("row {row} has {} columns, header {cols}", rec.len())));
        }
        let cell = |c: usize| rec.get(c).unwrap_or("").trim();
        let fail = |c: usize| Error::ParseFailure {
            row,
            column: c + 1,
            value: cell(c).to_string(),
        };
        let subject: SubjectId = cell(0).parse().map_err(|_| fail(0))?;
        let class_label = match cell(1) {
            "" => None,
            s => {
                let c: usize = s.parse().map_err(|_| fail(1))?;
                if c >= classes.len() {
                    return Err(fail(1));
                }
                Some(c)
            }
        };
        let samples = (2..cols)
            .map(|c| cell(c).parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| fail(c)))
            .collect::<Result<Vec<_>>>()?;
        if !roster.contains(&subject) {
            roster.push(subject);
        }
        trials.push(EegTrial::new(channels, steps, samples, sample_rate_hz, subject, class_label, Provenance::OracleReal)?);
    }
    Dataset::new(trials, classes, roster)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::SchemaMismatch(format!("{other:?}")),
    }
}

/// Writes the CSV layout read by [`import_csv`].
pub fn export_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let (channels, steps, _) = ds.shape().unwrap_or((0, 0, 0.0));
    let mut header = vec!["subject".to_string(), "class".to_string()];
    for c in 0..channels {
        for t in 0..steps {
            header.push(format!("c{c}_t{t}"));
        }
    }
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for t in ds.trials() {
        let mut rec = vec![t.subject.to_string(), t.class_label.map(|c| c.to_string()).unwrap_or_default()];
        rec.extend(t.samples().iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{synthesize_dataset, SimulationConfig};

    fn small() -> Dataset {
        let cfg = SimulationConfig {
            n_subjects: 2,
            trials_per_class_per_subject: 2,
            channels: 2,
            time_steps: 64,
            sample_rate_hz: 128.0,
            ..Default::default()
        };
        synthesize_dataset(&cfg, &SsvepClassTable::default()).unwrap().with_meta("k", "v")
    }

    fn f32_rounded(ds: &Dataset) -> Dataset {
        let trials = ds
            .trials()
            .iter()
            .map(|t| t.with_samples(t.samples().iter().map(|v| *v as f32 as f64).collect()).unwrap())
            .collect();
        let mut out = Dataset::new(trials, ds.class_table().clone(), ds.subject_roster().to_vec()).unwrap();
        out.meta = ds.meta.clone();
        out
    }

    #[test]
    fn dataset_round_trip_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small();
        let p = dir.path().join("a.bin");
        save_dataset(&ds, &p).unwrap();
        assert_eq!(load_dataset(&p).unwrap(), f32_rounded(&ds));
        let q = dir.path().join("b.bin");
        save_dataset(&ds, &q).unwrap();
        assert_eq!(fs::read(&p).unwrap(), fs::read(&q).unwrap());
    }

    #[test]
    fn empty_dataset_round_trips() {
        let ds = Dataset::new(vec![], SsvepClassTable::default(), vec![3]).unwrap();
        let back = decode_dataset(&encode_dataset(&ds)).unwrap();
        assert_eq!(back.len(), 0);
        assert_eq!(back.subject_roster(), &[3]);
    }

    #[test]
    fn dataset_corruption() {
        let bytes = encode_dataset(&small());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_dataset(&bad), Err(Error::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(decode_dataset(&bad), Err(Error::UnsupportedVersion(9))));
        assert!(matches!(decode_dataset(&bytes[..bytes.len() - 3]), Err(Error::TruncatedPayload(_))));
        assert!(matches!(decode_dataset(&bytes[..20]), Err(Error::TruncatedPayload(_))));
        assert!(matches!(decode_dataset(&bytes[..4]), Err(Error::BadMagic { .. })));
        // class index of the first trial record
        let header_len = bytes.len() - 12 * (9 + 4 * 2 * 64);
        let mut bad = bytes.clone();
        bad[header_len + 4..header_len + 8].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(decode_dataset(&bad), Err(Error::InvariantViolation(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let (net, store) = crate::nn::Backbone::build(
            crate::nn::BackboneSpec::new(2, 64, crate::nn::Head::SsvepClassifier { n_classes: 3 }),
            4,
        )
        .unwrap();
        let ck = Checkpoint::new(store.clone().freeze()).with_meta("arch", "x");
        let bytes = encode_checkpoint(&ck);
        let back = decode_checkpoint(&bytes).unwrap();
        assert!(back.store.is_frozen());
        assert_eq!(back.store, store.rounded_to_f32().freeze());
        assert_eq!(back.meta["arch"], "x");
        net.check_store(&back.store).unwrap();
        assert_eq!(encode_checkpoint(&back), bytes);
        let other = crate::nn::Backbone::new(crate::nn::BackboneSpec::new(3, 64, crate::nn::Head::SsvepClassifier { n_classes: 3 })).unwrap();
        match other.check_store(&back.store) {
            Err(Error::ShapeMismatch(m)) => assert!(m.contains("block0.conv.weight"), "{m}"),
            r => panic!("{r:?}"),
        }
        assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 1]), Err(Error::TruncatedPayload(_))));
    }

    #[test]
    fn csv_import_export() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("one.csv");
        fs::write(&p, "subject,class,a,b,c,d,e,f,g,h\n4,1,1,2,3,4,5,6,7,8\n").unwrap();
        let ds = import_csv(&p, 128.0, 2).unwrap();
        assert_eq!(ds.shape(), Some((2, 4, 128.0)));
        assert_eq!(ds.trials()[0].channel(1), &[5.0, 6.0, 7.0, 8.0]);
        assert_eq!(ds.subject_roster(), &[4]);

        fs::write(&p, "subject,class,a,b\n4,1,1,oops\n").unwrap();
        match import_csv(&p, 128.0, 1) {
            Err(Error::ParseFailure { row, column, value }) => assert_eq!((row, column, value.as_str()), (2, 4, "oops")),
            r => panic!("{r:?}"),
        }
        fs::write(&p, "id,class,a,b\n4,1,1,2\n").unwrap();
        assert!(matches!(import_csv(&p, 128.0, 1), Err(Error::SchemaMismatch(_))));
        fs::write(&p, "subject,class,a,b,c\n4,1,1,2,3\n").unwrap();
        assert!(matches!(import_csv(&p, 128.0, 2), Err(Error::SchemaMismatch(_))));

        let ds = small();
        let q = dir.path().join("rt.csv");
        export_csv(&ds, &q).unwrap();
        let back = import_csv(&q, 128.0, 2).unwrap();
        assert_eq!(back.len(), ds.len());
        for (a, b) in back.trials().iter().zip(ds.trials()) {
            assert_eq!(a.subject, b.subject);
            assert_eq!(a.class_label, b.class_label);
            for (x, y) in a.samples().iter().zip(b.samples()) {
                assert!((x - y).abs() <= 1e-6 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn missing_file_is_io_failure() {
        let e = load_dataset(Path::new("/nonexistent/x.bin")).unwrap_err();
        assert!(matches!(e, Error::IoFailure { .. }));
        assert_eq!(e.exit_code(), 3);
    }
}
