use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use airq_core::aqi::categorize;
use airq_core::storage::{read_log, read_records_lenient, CsvRecord};
use anyhow::Context;
use serde::Serialize;

use crate::{CmdResult, ExitWith};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// CSV log files, or directories whose *.csv files are read in name
    /// order.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Write here instead of stdout.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// One JSON object per line instead of a single array.
    #[arg(long)]
    ndjson: bool,
    /// Accept logs that do not follow the strict format (spacing, quoting,
    /// row numbering), as long as every row has the seven columns.
    #[arg(long)]
    lenient: bool,
}

/// One exported row. Keys match the CSV header, plus the source file and
/// the category of the logged AQI.
#[derive(Debug, Serialize)]
struct Row<'a> {
    file: &'a str,
    no: u64,
    #[serde(rename = "pm2.5")]
    pm2_5: u32,
    pm10: u32,
    temperature: i32,
    humidity: u32,
    co: f64,
    aqi: u16,
    category: Option<&'static str>,
}

fn expand(inputs: &[PathBuf]) -> anyhow::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .with_context(|| format!("cannot list {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "csv"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

fn records(path: &Path, lenient: bool) -> anyhow::Result<Vec<CsvRecord>> {
    if lenient {
        let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
        read_records_lenient(f).with_context(|| format!("{}", path.display()))
    } else {
        Ok(read_log(path)?.records)
    }
}

pub fn export(args: Args) -> CmdResult {
    let files = expand(&args.inputs).exit_with(1)?;
    let mut sink: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p)
                .with_context(|| format!("cannot create {}", p.display()))
                .exit_with(1)?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    let mut all = Vec::new();
    let names: Vec<String> = files.iter().map(|f| f.display().to_string()).collect();
    for (path, name) in files.iter().zip(&names) {
        for r in records(path, args.lenient).exit_with(1)? {
            let v = r.values;
            all.push(Row {
                file: name,
                no: r.no,
                pm2_5: v.pm2_5,
                pm10: v.pm10,
                temperature: v.temperature,
                humidity: v.humidity,
                co: v.co,
                aqi: v.aqi,
                category: categorize(i64::from(v.aqi)).ok().map(|c| c.as_str()),
            });
        }
    }
    let write = |sink: &mut dyn Write| -> anyhow::Result<()> {
        if args.ndjson {
            for row in &all {
                serde_json::to_writer(&mut *sink, row)?;
                sink.write_all(b"\n")?;
            }
        } else {
            serde_json::to_writer_pretty(&mut *sink, &all)?;
            sink.write_all(b"\n")?;
        }
        sink.flush()?;
        Ok(())
    };
    write(&mut *sink).exit_with(1)?;
    Ok(())
}
