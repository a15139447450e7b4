//! CSV log of readings, one line per cycle.
//!
//! Line format, ASCII with LF endings:
//!
//! ```text
//! no,pm2.5,pm10,temperature,humidity,co,aqi
//! 2,180,108,29,62,5.27,193
//! ```
//!
//! `no` restarts at 1 in every file. Integers are written bare and CO with
//! exactly two decimals. The header can be switched off to get the bare form
//! the original SD-card log used.
//!
//! Each line goes out in a single `write` on an append-mode descriptor and is
//! synced before `append` returns. New files are assembled under a temporary
//! name and renamed into place, so a crash at any point leaves every log as a
//! header plus whole lines.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use chrono::Utc;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reading::{format_centi, CompositeReading};

pub const HEADER: &str = "no,pm2.5,pm10,temperature,humidity,co,aqi";

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("log I/O failed on {path}: {source}")]
    IoFailure { path: PathBuf, source: io::Error },
    #[error("{path} line {line}: {reason}")]
    Malformed { path: PathBuf, line: usize, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StorageError + '_ {
    move |source| StorageError::IoFailure {
        path: path.to_path_buf(),
        source,
    }
}

/// The measured columns of a log line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub pm2_5: u32,
    pub pm10: u32,
    pub temperature: i32,
    pub humidity: u32,
    /// ppm, two decimals
    pub co: f64,
    pub aqi: u16,
}

impl Measurement {
    pub fn from_reading(r: &CompositeReading) -> Self {
        Self {
            pm2_5: u32::from(r.pm2_5),
            pm10: u32::from(r.pm10),
            temperature: r.temperature_display(),
            humidity: r.humidity_display(),
            co: r.co_centi() as f64 / 100.0,
            aqi: r.aqi.overall,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CsvRecord {
    pub no: u64,
    #[serde(flatten)]
    pub values: Measurement,
}

impl CsvRecord {
    pub fn new(no: u64, values: Measurement) -> Self {
        Self { no, values }
    }

    /// The line without its terminator.
    pub fn to_line(&self) -> String {
        let v = &self.values;
        format!(
            "{},{},{},{},{},{},{}",
            self.no,
            v.pm2_5,
            v.pm10,
            v.temperature,
            v.humidity,
            format_centi(v.co),
            v.aqi
        )
    }

    pub fn parse_line(line: &str) -> Result<Self, String> {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 7 {
            return Err(format!("expected 7 columns, found {}", cols.len()));
        }
        fn num<T: std::str::FromStr>(name: &str, s: &str) -> Result<T, String> {
            s.parse().map_err(|_| format!("{name}: `{s}` is not a valid number"))
        }
        let co = cols[5];
        match co.split_once('.') {
            Some((_, frac)) if frac.len() == 2 => {}
            _ => return Err(format!("co: `{co}` must have exactly two decimals")),
        }
        Ok(Self {
            no: num("no", cols[0])?,
            values: Measurement {
                pm2_5: num("pm2.5", cols[1])?,
                pm10: num("pm10", cols[2])?,
                temperature: num("temperature", cols[3])?,
                humidity: num("humidity", cols[4])?,
                co: num("co", co)?,
                aqi: num("aqi", cols[6])?,
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RotationPolicy {
    /// Rows per file; 0 disables.
    pub max_rows: u64,
    /// Bytes per file including the header; 0 disables. A file always
    /// receives at least one row.
    pub max_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvLogConfig {
    pub dir: PathBuf,
    pub prefix: String,
    pub headerless: bool,
    pub rotation: RotationPolicy,
}

impl Default for CsvLogConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("logs"),
            prefix: "airq".to_string(),
            headerless: false,
            rotation: RotationPolicy::default(),
        }
    }
}

/// Single-writer handle on the current log file.
#[derive(Debug)]
pub struct CsvLog {
    cfg: CsvLogConfig,
    file: File,
    path: PathBuf,
    rows: u64,
    bytes: u64,
    files: Vec<PathBuf>,
}

impl CsvLog {
    /// Creates the directory if needed, repairs any torn tail left in older
    /// logs with the same prefix, and starts a fresh file.
    pub fn create(cfg: CsvLogConfig) -> Result<Self, StorageError> {
        fs::create_dir_all(&cfg.dir).map_err(io_err(&cfg.dir))?;
        for old in list_logs(&cfg.dir, &cfg.prefix)? {
            repair_tail(&old)?;
        }
        let (file, path, bytes) = open_new(&cfg)?;
        Ok(Self {
            cfg,
            file,
            files: vec![path.clone()],
            path,
            rows: 0,
            bytes,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Every file this handle has written, oldest first.
    pub fn files(&self) -> &[PathBuf] {
        &self.files
    }

    pub fn rows(&self) -> u64 {
        self.rows
    }

    fn should_rotate(&self, line_len: u64) -> bool {
        let p = self.cfg.rotation;
        self.rows > 0
            && ((p.max_rows > 0 && self.rows >= p.max_rows) || (p.max_bytes > 0 && self.bytes + line_len > p.max_bytes))
    }

    /// Appends one line, rotating first if the policy says so. Returns the
    /// record as written.
    pub fn append(&mut self, values: Measurement) -> Result<CsvRecord, StorageError> {
        let mut record = CsvRecord::new(self.rows + 1, values);
        let mut line = record.to_line();
        line.push('\n');
        if self.should_rotate(line.len() as u64) {
            self.rotate()?;
            record.no = 1;
            line = record.to_line();
            line.push('\n');
        }
        self.file.write_all(line.as_bytes()).map_err(io_err(&self.path))?;
        self.file.sync_data().map_err(io_err(&self.path))?;
        self.rows += 1;
        self.bytes += line.len() as u64;
        Ok(record)
    }

    /// Closes the current file and starts a new one.
    pub fn rotate(&mut self) -> Result<&Path, StorageError> {
        self.file.sync_all().map_err(io_err(&self.path))?;
        let (file, path, bytes) = open_new(&self.cfg)?;
        self.file = file;
        self.path = path.clone();
        self.files.push(path);
        self.rows = 0;
        self.bytes = bytes;
        Ok(&self.path)
    }

    pub fn flush(&mut self) -> Result<(), StorageError> {
        self.file.sync_all().map_err(io_err(&self.path))
    }
}

fn open_new(cfg: &CsvLogConfig) -> Result<(File, PathBuf, u64), StorageError> {
    let stamp = Utc::now().format("%Y%m%dT%H%M%S%.3fZ").to_string();
    let header = if cfg.headerless {
        String::new()
    } else {
        format!("{HEADER}\n")
    };
    for n in 0u32.. {
        let name = format!("{}-{stamp}-{n:02}.csv", cfg.prefix);
        let path = cfg.dir.join(name);
        if path.exists() {
            continue;
        }
        let tmp = cfg
            .dir
            .join(format!(".{}.tmp", path.file_name().unwrap().to_string_lossy()));
        {
            let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
            f.write_all(header.as_bytes()).map_err(io_err(&tmp))?;
            f.sync_all().map_err(io_err(&tmp))?;
        }
        // Hard-link rather than rename so a concurrently created file with the
        // same name is never replaced.
        match fs::hard_link(&tmp, &path) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                let _ = fs::remove_file(&tmp);
                continue;
            }
            Err(e) => return Err(io_err(&path)(e)),
        }
        fs::remove_file(&tmp).map_err(io_err(&tmp))?;
        if let Ok(d) = File::open(&cfg.dir) {
            let _ = d.sync_all();
        }
        let file = OpenOptions::new().append(true).open(&path).map_err(io_err(&path))?;
        return Ok((file, path, header.len() as u64));
    }
    unreachable!("u32 range of suffixes exhausted")
}

/// Log files in `dir` whose names start with `prefix-`, in name order. Names
/// are `<prefix>-<UTC stamp>-<nn>.csv`, so name order is creation order.
pub fn list_logs(dir: &Path, prefix: &str) -> Result<Vec<PathBuf>, StorageError> {
    let mut out = Vec::new();
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(io_err(dir)(e)),
    };
    let want = format!("{prefix}-");
    for entry in entries {
        let entry = entry.map_err(io_err(dir))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with(&want) && name.ends_with(".csv") {
            out.push(entry.path());
        }
    }
    out.sort();
    Ok(out)
}

/// Truncates a file back to its last complete line. Returns the number of
/// octets removed.
pub fn repair_tail(path: &Path) -> Result<u64, StorageError> {
    let mut f = OpenOptions::new()
        .read(true)
        .write(true)
        .open(path)
        .map_err(io_err(path))?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes).map_err(io_err(path))?;
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let cut = (bytes.len() - keep) as u64;
    if cut > 0 {
        f.set_len(keep as u64).map_err(io_err(path))?;
        f.seek(SeekFrom::End(0)).map_err(io_err(path))?;
        f.sync_all().map_err(io_err(path))?;
    }
    Ok(cut)
}

/// Contents of one log file.
#[derive(Debug, Clone, PartialEq)]
pub struct LogContents {
    pub has_header: bool,
    pub records: Vec<CsvRecord>,
}

/// Reads a log back, checking the header, the line terminators and that row
/// numbers run 1, 2, 3, ...
pub fn read_log(path: &Path) -> Result<LogContents, StorageError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    parse_log(path, &bytes)
}

pub fn parse_log(path: &Path, bytes: &[u8]) -> Result<LogContents, StorageError> {
    let malformed = |line: usize, reason: String| StorageError::Malformed {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let text = std::str::from_utf8(bytes).map_err(|_| malformed(0, "not UTF-8".into()))?;
    if !text.is_ascii() {
        return Err(malformed(0, "non-ASCII content".into()));
    }
    if !text.is_empty() && !text.ends_with('\n') {
        return Err(malformed(text.lines().count(), "last line is not terminated".into()));
    }
    let body = text.strip_suffix('\n').unwrap_or(text);
    let mut lines = body.split('\n').filter(|_| !text.is_empty()).enumerate().peekable();
    let has_header = matches!(lines.peek(), Some((_, l)) if *l == HEADER);
    if has_header {
        lines.next();
    }
    let mut records = Vec::new();
    for (i, line) in lines {
        if line.contains('\r') {
            return Err(malformed(i + 1, "CR in line".into()));
        }
        let rec = CsvRecord::parse_line(line).map_err(|r| malformed(i + 1, r))?;
        let expected = records.len() as u64 + 1;
        if rec.no != expected {
            return Err(malformed(
                i + 1,
                format!("row number {} where {expected} was expected", rec.no),
            ));
        }
        records.push(rec);
    }
    Ok(LogContents { has_header, records })
}

/// Reads CSV text (with or without the header) as loosely as the `csv`
/// crate allows; used to export logs that may come from elsewhere.
pub fn read_records_lenient<R: Read>(input: R) -> Result<Vec<CsvRecord>, csv::Error> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        if row.get(0) == Some("no") {
            continue;
        }
        let joined = row.iter().collect::<Vec<_>>().join(",");
        match CsvRecord::parse_line(&joined) {
            Ok(r) => out.push(r),
            Err(reason) => {
                let line = row.position().map_or(0, |p| p.line());
                return Err(csv::Error::from(io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("line {line}: {reason}"),
                )));
            }
        }
    }
    Ok(out)
}
