//! Streaming ingestion of delimited text and the airline feature transform.
//!
//! [`CsvSource`] reads a (optionally gzip-compressed) delimited file one
//! chunk at a time and rewinds by reopening the file, so memory stays
//! proportional to the chunk size. [`Prefetch`] runs any source on a
//! background thread behind a bounded channel.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, SyncSender, TryRecvError};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};

use crate::chunkglm::ChunkSource;
use crate::data::Chunk;
use crate::error::{Error, Result};

/// What to do with a row that cannot be parsed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MalformedPolicy {
    /// Drop the row and count it.
    #[default]
    Skip,
    /// Fail the read.
    Abort,
}

/// Which columns of a delimited file make up the design.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub response: String,
    pub covariates: Vec<String>,
    pub delimiter: u8,
    pub policy: MalformedPolicy,
}

impl ColumnSpec {
    pub fn new(response: impl Into<String>, covariates: Vec<String>) -> Self {
        Self {
            response: response.into(),
            covariates,
            delimiter: b',',
            policy: MalformedPolicy::Skip,
        }
    }

    /// Chunk width: intercept plus covariates.
    pub fn width(&self) -> usize {
        self.covariates.len() + 1
    }
}

/// Opens a file, decompressing transparently when it starts with the gzip
/// magic bytes.
pub fn open_maybe_gz(path: &Path) -> Result<Box<dyn Read + Send>> {
    let mut probe = [0u8; 2];
    let n = File::open(path)?.read(&mut probe)?;
    let file = BufReader::with_capacity(1 << 16, File::open(path)?);
    if n == 2 && probe == [0x1f, 0x8b] {
        Ok(Box::new(BufReader::new(flate2::read::MultiGzDecoder::new(
            file,
        ))))
    } else {
        Ok(Box::new(file))
    }
}

fn csv_reader(path: &Path, delimiter: u8) -> Result<csv::Reader<Box<dyn Read + Send>>> {
    Ok(csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .from_reader(open_maybe_gz(path)?))
}

fn column_index(headers: &csv::StringRecord, path: &Path, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::HeaderMismatch {
            path: path.to_path_buf(),
            column: name.to_string(),
        })
}

/// Reads the header line of a delimited file.
pub fn read_header(path: &Path, delimiter: u8) -> Result<Vec<String>> {
    let mut r = csv_reader(path, delimiter)?;
    Ok(r.headers()?.iter().map(|h| h.trim().to_string()).collect())
}

/// Streaming chunk source over a delimited text file.
pub struct CsvSource {
    path: PathBuf,
    spec: ColumnSpec,
    chunk_size: usize,
    reader: Option<csv::Reader<Box<dyn Read + Send>>>,
    /// Response column first, then covariates.
    indices: Vec<usize>,
    record: csv::StringRecord,
    skipped: Arc<AtomicU64>,
}

impl CsvSource {
    /// Opens `path` and checks that every mapped column is present.
    pub fn open(path: impl Into<PathBuf>, spec: ColumnSpec, chunk_size: usize) -> Result<Self> {
        if chunk_size < 1 {
            return Err(Error::Config("chunk size must be at least 1".into()));
        }
        let mut src = Self {
            path: path.into(),
            spec,
            chunk_size,
            reader: None,
            indices: Vec::new(),
            record: csv::StringRecord::new(),
            skipped: Arc::default(),
        };
        src.rewind()?;
        Ok(src)
    }

    /// Malformed rows skipped so far in the current pass.
    pub fn skipped(&self) -> u64 {
        self.skipped.load(Ordering::Relaxed)
    }

    /// Shared view of the skip count that stays readable after the source
    /// is moved, e.g. into a [`Prefetch`].
    pub fn skip_counter(&self) -> Arc<AtomicU64> {
        Arc::clone(&self.skipped)
    }

    pub fn width(&self) -> usize {
        self.spec.width()
    }

    fn rewind(&mut self) -> Result<()> {
        let mut reader = csv_reader(&self.path, self.spec.delimiter)?;
        let headers = reader.headers()?.clone();
        let mut indices = vec![column_index(&headers, &self.path, &self.spec.response)?];
        for c in &self.spec.covariates {
            indices.push(column_index(&headers, &self.path, c)?);
        }
        self.indices = indices;
        self.reader = Some(reader);
        self.skipped.store(0, Ordering::Relaxed);
        Ok(())
    }

    fn parse_row(&self, row: &mut [f64]) -> std::result::Result<f64, String> {
        let field = |i: usize| -> std::result::Result<f64, String> {
            let raw = self
                .record
                .get(i)
                .ok_or_else(|| format!("missing field {}", i + 1))?
                .trim();
            let v: f64 = raw
                .parse()
                .map_err(|_| format!("cannot parse {raw:?} as a number"))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(format!("non-finite value {raw:?}"))
            }
        };
        let y = field(self.indices[0])?;
        row[0] = 1.0;
        for (slot, &i) in row[1..].iter_mut().zip(&self.indices[1..]) {
            *slot = field(i)?;
        }
        Ok(y)
    }
}

impl ChunkSource for CsvSource {
    fn next_chunk(&mut self, reset: bool) -> Result<Chunk> {
        if reset || self.reader.is_none() {
            self.rewind()?;
        }
        let width = self.spec.width();
        let mut chunk = Chunk::with_capacity(width, self.chunk_size.min(1 << 20));
        let mut row = vec![0.0; width];
        while chunk.len() < self.chunk_size {
            let mut record = std::mem::take(&mut self.record);
            let more = self
                .reader
                .as_mut()
                .expect("reader is open")
                .read_record(&mut record)?;
            self.record = record;
            if !more {
                break;
            }
            match self.parse_row(&mut row) {
                Ok(y) => chunk.push(&row, y)?,
                Err(reason) => {
                    let line = self.record.position().map_or(0, |p| p.line());
                    if self.spec.policy == MalformedPolicy::Abort {
                        return Err(Error::MalformedRow { line, reason });
                    }
                    log::debug!("skipping line {line}: {reason}");
                    self.skipped.fetch_add(1, Ordering::Relaxed);
                }
            }
        }
        Ok(chunk)
    }
}

enum Command {
    Restart(u64),
}

/// Runs a source on a worker thread that reads ahead up to `depth` chunks.
///
/// Each rewind starts a new generation; chunks from an abandoned pass are
/// discarded by the consumer, so the sequence seen through `Prefetch` is
/// exactly the sequence the wrapped source produces.
pub struct Prefetch {
    commands: Option<mpsc::Sender<Command>>,
    chunks: Option<Receiver<(u64, Result<Chunk>)>>,
    worker: Option<JoinHandle<()>>,
    generation: u64,
    /// Whether the current pass has delivered its end marker.
    finished: bool,
    started: bool,
    /// Width of the last chunk delivered, reused for repeated end markers.
    width: usize,
}

impl Prefetch {
    pub fn new<S: ChunkSource + Send + 'static>(mut src: S, depth: usize) -> Self {
        let (cmd_tx, cmd_rx) = mpsc::channel::<Command>();
        let (data_tx, data_rx) = mpsc::sync_channel(depth.max(1));
        let worker = std::thread::spawn(move || {
            let mut pending = cmd_rx.recv().ok();
            while let Some(Command::Restart(generation)) = pending.take() {
                pending = stream_pass(&mut src, generation, &data_tx, &cmd_rx);
                if pending.is_none() {
                    pending = cmd_rx.recv().ok();
                }
            }
        });
        Self {
            commands: Some(cmd_tx),
            chunks: Some(data_rx),
            worker: Some(worker),
            generation: 0,
            finished: false,
            started: false,
            width: 0,
        }
    }
}

/// Streams one pass into `tx`. Returns a restart command received mid-pass.
fn stream_pass<S: ChunkSource>(
    src: &mut S,
    generation: u64,
    tx: &SyncSender<(u64, Result<Chunk>)>,
    commands: &Receiver<Command>,
) -> Option<Command> {
    let mut reset = true;
    loop {
        match commands.try_recv() {
            Ok(cmd) => return Some(cmd),
            Err(TryRecvError::Disconnected) => return None,
            Err(TryRecvError::Empty) => {}
        }
        let item = src.next_chunk(reset);
        reset = false;
        let last = matches!(&item, Ok(c) if c.is_empty()) || item.is_err();
        if tx.send((generation, item)).is_err() || last {
            return None;
        }
    }
}

impl ChunkSource for Prefetch {
    fn next_chunk(&mut self, reset: bool) -> Result<Chunk> {
        if reset || !self.started {
            self.generation += 1;
            self.started = true;
            self.finished = false;
            self.commands
                .as_ref()
                .expect("prefetch is live")
                .send(Command::Restart(self.generation))
                .map_err(|_| Error::Config("prefetch worker stopped".into()))?;
        }
        if self.finished {
            return Ok(Chunk::new(self.width));
        }
        let rx = self.chunks.as_ref().expect("prefetch is live");
        loop {
            let (generation, item) = rx
                .recv()
                .map_err(|_| Error::Config("prefetch worker stopped".into()))?;
            if generation != self.generation {
                continue;
            }
            match &item {
                Ok(c) => {
                    self.width = c.width();
                    self.finished = c.is_empty();
                }
                Err(_) => self.finished = true,
            }
            return item;
        }
    }
}

impl Drop for Prefetch {
    fn drop(&mut self) {
        // Closing both channels unblocks the worker wherever it waits.
        self.commands.take();
        self.chunks.take();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

/// Airline column names in the raw on-time performance files.
pub const AIRLINE_DEP_TIME: &str = "DepTime";
pub const AIRLINE_ARR_DELAY: &str = "ArrDelay";
pub const AIRLINE_DISTANCE: &str = "Distance";
pub const AIRLINE_DAY_OF_WEEK: &str = "DayOfWeek";

/// Output columns of [`airline_prep`], response first.
pub const AIRLINE_OUTPUT_HEADER: [&str; 5] = ["Late", "DepHour", "Distance", "Night", "Weekend"];

/// Engineered features of one flight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AirlineRow {
    /// 1 when the arrival delay exceeds 15 minutes.
    pub late: u8,
    /// Departure time in hours, in `[0, 24)`.
    pub dep_hour: f64,
    /// Distance in thousands of miles.
    pub distance_kmi: f64,
    /// 1 for departures in `[20:00, 05:00)`.
    pub night: u8,
    /// 1 for Saturday and Sunday (day-of-week codes 6 and 7, Monday = 1).
    pub weekend: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkipReason {
    /// A required field is empty or `NA`.
    Missing,
    /// A required field is present but not a valid value.
    Malformed,
}

fn is_missing(raw: &str) -> bool {
    let t = raw.trim();
    t.is_empty() || t.eq_ignore_ascii_case("NA")
}

fn parse_num(raw: &str) -> std::result::Result<f64, SkipReason> {
    if is_missing(raw) {
        return Err(SkipReason::Missing);
    }
    match raw.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(SkipReason::Malformed),
    }
}

/// Parses an `HHmm` clock time into minutes after midnight. `2400` and
/// later times in the 24th hour wrap to the start of the day.
pub fn hhmm_to_minutes(raw: &str) -> std::result::Result<u32, SkipReason> {
    let v = parse_num(raw)?;
    if v < 0.0 || v.fract() != 0.0 || v > 2459.0 {
        return Err(SkipReason::Malformed);
    }
    let v = v as u32;
    let (hh, mm) = (v / 100, v % 100);
    if mm >= 60 {
        return Err(SkipReason::Malformed);
    }
    Ok((hh % 24) * 60 + mm)
}

/// Builds the engineered features from the four raw fields.
pub fn airline_transform(
    dep_time: &str,
    arr_delay: &str,
    distance_miles: &str,
    day_of_week: &str,
) -> std::result::Result<AirlineRow, SkipReason> {
    let minutes = hhmm_to_minutes(dep_time);
    let delay = parse_num(arr_delay);
    let miles = parse_num(distance_miles);
    let dow = parse_num(day_of_week);
    // Report a missing field ahead of a malformed one.
    for r in [minutes.err(), delay.err(), miles.err(), dow.err()] {
        if r == Some(SkipReason::Missing) {
            return Err(SkipReason::Missing);
        }
    }
    let (minutes, delay, miles, dow) = (minutes?, delay?, miles?, dow?);
    if miles < 0.0 || !(1.0..=7.0).contains(&dow) || dow.fract() != 0.0 {
        return Err(SkipReason::Malformed);
    }
    let dep_hour = f64::from(minutes) / 60.0;
    Ok(AirlineRow {
        late: u8::from(delay > 15.0),
        dep_hour,
        distance_kmi: miles / 1000.0,
        night: u8::from(!(5.0..20.0).contains(&dep_hour)),
        weekend: u8::from(dow >= 6.0),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrepStats {
    pub rows_read: u64,
    pub rows_written: u64,
    pub skipped_missing: u64,
    pub skipped_malformed: u64,
}

/// Streams a raw airline file into the engineered five-column layout.
pub fn airline_prep<W: Write>(input: &Path, delimiter: u8, out: W) -> Result<PrepStats> {
    let mut reader = csv_reader(input, delimiter)?;
    let headers = reader.headers()?.clone();
    let idx: Vec<usize> = [
        AIRLINE_DEP_TIME,
        AIRLINE_ARR_DELAY,
        AIRLINE_DISTANCE,
        AIRLINE_DAY_OF_WEEK,
    ]
    .iter()
    .map(|c| column_index(&headers, input, c))
    .collect::<Result<_>>()?;
    let mut writer = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_writer(out);
    writer.write_record(AIRLINE_OUTPUT_HEADER)?;
    let mut stats = PrepStats::default();
    let mut record = csv::StringRecord::new();
    while reader.read_record(&mut record)? {
        stats.rows_read += 1;
        let get = |i: usize| record.get(idx[i]).unwrap_or("");
        match airline_transform(get(0), get(1), get(2), get(3)) {
            Ok(r) => {
                writer.write_record([
                    r.late.to_string(),
                    r.dep_hour.to_string(),
                    r.distance_kmi.to_string(),
                    r.night.to_string(),
                    r.weekend.to_string(),
                ])?;
                stats.rows_written += 1;
            }
            Err(SkipReason::Missing) => stats.skipped_missing += 1,
            Err(SkipReason::Malformed) => stats.skipped_malformed += 1,
        }
    }
    writer.flush()?;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_file(dir: &tempfile::TempDir, name: &str, text: &str) -> PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    fn ten_rows() -> String {
        let mut s = String::from("y,a,b\n");
        for i in 0..10 {
            s.push_str(&format!("{},{},{}\n", i, i * 2, i as f64 / 4.0));
        }
        s
    }

    fn spec() -> ColumnSpec {
        ColumnSpec::new("y", vec!["a".into(), "b".into()])
    }

    #[test]
    fn chunks_then_empty_and_replay() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(&dir, "d.csv", &ten_rows());
        let mut src = CsvSource::open(&p, spec(), 4).unwrap();
        let sizes: Vec<usize> = (0..4)
            .map(|_| src.next_chunk(false).unwrap().len())
            .collect();
        assert_eq!(sizes, vec![4, 4, 2, 0]);
        let first = src.next_chunk(true).unwrap();
        assert_eq!(first.row(1), &[1.0, 2.0, 0.25]);
        assert_eq!(first.response(3), 3.0);
        // Reset mid-stream replays the same sequence.
        src.next_chunk(false).unwrap();
        let again = src.next_chunk(true).unwrap();
        assert_eq!(again, first);
    }

    #[test]
    fn gzip_input() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv.gz");
        let mut gz = flate2::write::GzEncoder::new(
            File::create(&p).unwrap(),
            flate2::Compression::default(),
        );
        gz.write_all(ten_rows().as_bytes()).unwrap();
        gz.finish().unwrap();
        let mut src = CsvSource::open(&p, spec(), 100).unwrap();
        assert_eq!(src.next_chunk(false).unwrap().len(), 10);
    }

    #[test]
    fn missing_column_is_header_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(&dir, "d.csv", &ten_rows());
        let bad = ColumnSpec::new("y", vec!["c".into()]);
        assert!(
            matches!(CsvSource::open(&p, bad, 4), Err(Error::HeaderMismatch { column, .. }) if column == "c")
        );
    }

    #[test]
    fn malformed_rows_skip_or_abort() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(&dir, "d.csv", "y,a,b\n1,2,3\n1,NA,3\n2,x,1\n4,5\n3,3,3\n");
        let mut src = CsvSource::open(&p, spec(), 10).unwrap();
        assert_eq!(src.next_chunk(false).unwrap().len(), 2);
        assert_eq!(src.skipped(), 3);
        let abort = ColumnSpec {
            policy: MalformedPolicy::Abort,
            ..spec()
        };
        let mut src = CsvSource::open(&p, abort, 10).unwrap();
        assert!(matches!(
            src.next_chunk(false),
            Err(Error::MalformedRow { line: 3, .. })
        ));
    }

    #[test]
    fn other_delimiter() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(&dir, "d.tsv", "y\ta\tb\n1\t2\t3\n");
        let s = ColumnSpec {
            delimiter: b'\t',
            ..spec()
        };
        let mut src = CsvSource::open(&p, s, 10).unwrap();
        assert_eq!(src.next_chunk(false).unwrap().row(0), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn rows_conserved_over_passes_of_a_large_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("big.csv");
        let mut f = std::io::BufWriter::new(File::create(&p).unwrap());
        writeln!(f, "y,a,b").unwrap();
        for i in 0..200_000u32 {
            writeln!(f, "{},{},{}", i % 2, i % 7, i % 13).unwrap();
        }
        drop(f);
        let mut src = Prefetch::new(CsvSource::open(&p, spec(), 30_000).unwrap(), 2);
        for _ in 0..2 {
            let mut total = 0;
            let mut reset = true;
            loop {
                let c = src.next_chunk(reset).unwrap();
                reset = false;
                if c.is_empty() {
                    break;
                }
                total += c.len();
            }
            assert_eq!(total, 200_000);
        }
    }

    #[test]
    fn prefetch_matches_direct_reads_across_resets() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(&dir, "d.csv", &ten_rows());
        let mut direct = CsvSource::open(&p, spec(), 3).unwrap();
        let mut pre = Prefetch::new(CsvSource::open(&p, spec(), 3).unwrap(), 1);
        for reset in [true, false, true, false, false, false, false, false, true] {
            assert_eq!(
                direct.next_chunk(reset).unwrap(),
                pre.next_chunk(reset).unwrap()
            );
        }
    }

    #[test]
    fn transform_rules() {
        let r = airline_transform("2030", "20", "500", "3").unwrap();
        assert_eq!(
            r,
            AirlineRow {
                late: 1,
                dep_hour: 20.5,
                distance_kmi: 0.5,
                night: 1,
                weekend: 0
            }
        );
        assert_eq!(airline_transform("0459", "0", "1", "1").unwrap().night, 1);
        assert_eq!(airline_transform("0500", "0", "1", "1").unwrap().night, 0);
        assert_eq!(airline_transform("1959", "0", "1", "1").unwrap().night, 0);
        assert_eq!(airline_transform("2000", "0", "1", "1").unwrap().night, 1);
        assert_eq!(airline_transform("1200", "15", "1", "6").unwrap().late, 0);
        assert_eq!(
            airline_transform("1200", "16", "1", "7").unwrap().weekend,
            1
        );
        assert_eq!(
            airline_transform("2400", "0", "1", "1").unwrap().dep_hour,
            0.0
        );
        assert_eq!(
            airline_transform("5", "0", "1", "1").unwrap().dep_hour,
            5.0 / 60.0
        );
    }

    #[test]
    fn transform_skips() {
        assert_eq!(
            airline_transform("NA", "3", "100", "2"),
            Err(SkipReason::Missing)
        );
        assert_eq!(
            airline_transform("1200", "", "100", "2"),
            Err(SkipReason::Missing)
        );
        assert_eq!(
            airline_transform("1275", "3", "100", "2"),
            Err(SkipReason::Malformed)
        );
        assert_eq!(
            airline_transform("2500", "3", "100", "2"),
            Err(SkipReason::Malformed)
        );
        assert_eq!(
            airline_transform("1200", "3", "-1", "2"),
            Err(SkipReason::Malformed)
        );
        assert_eq!(
            airline_transform("1200", "3", "100", "8"),
            Err(SkipReason::Malformed)
        );
        assert_eq!(
            airline_transform("abc", "NA", "100", "2"),
            Err(SkipReason::Missing)
        );
    }

    #[test]
    fn prep_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(
            &dir,
            "raw.csv",
            "Year,DayOfWeek,DepTime,ArrDelay,Distance\n2008,3,2030,20,500\n2008,6,NA,NA,300\n2008,7,0715,-4,1200\n",
        );
        let mut out = Vec::new();
        let stats = airline_prep(&p, b',', &mut out).unwrap();
        assert_eq!(
            stats,
            PrepStats {
                rows_read: 3,
                rows_written: 2,
                skipped_missing: 1,
                skipped_malformed: 0
            }
        );
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "Late,DepHour,Distance,Night,Weekend\n1,20.5,0.5,1,0\n0,7.25,1.2,0,1\n"
        );
    }
}
