use std::fmt::Write as _;
use std::path::PathBuf;

use airq_core::calibration::{self, Mq135Config};
use airq_core::protocols::{adc, dht11, dump, Dht11Error, Pms5003Error, Pms5003Frame, Pms5003Scanner, ScanEvent};
use anyhow::Context;

use crate::simulate::load_calibration;
use crate::{fail, CmdResult, ExitWith};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Capture file (record format), or a raw PMS5003 byte stream with --raw.
    capture: PathBuf,
    /// Exit 0 even if some frames are invalid.
    #[arg(long)]
    tolerate: bool,
    /// Treat the file as raw PMS5003 octets instead of a capture.
    #[arg(long)]
    raw: bool,
    /// Also convert ADC samples to ppm with this calibration (see `replay`).
    #[arg(long, value_name = "FILE")]
    calibration: Option<PathBuf>,
}

#[derive(Debug, Default)]
struct Tally {
    pms_frames: u64,
    dht_frames: u64,
    dht_bad_checksum: u64,
    dht_bad_length: u64,
    adc_samples: u64,
    adc_ragged: u64,
    invalid: u64,
}

fn pms_line(out: &mut String, f: &Pms5003Frame, offset: u64) {
    let _ =
        writeln!(
        out,
        "  pms5003 @{offset:<8} OK           pm1.0 {} pm2.5 {} pm10 {} (atm)  cf1 {}/{}/{}  counts {} {} {} {} {} {}{}",
        f.pm1_0_atm,
        f.pm2_5_atm,
        f.pm10_atm,
        f.pm1_0_cf1,
        f.pm2_5_cf1,
        f.pm10_cf1,
        f.counts_0_3um,
        f.counts_0_5um,
        f.counts_1_0um,
        f.counts_2_5um,
        f.counts_5_0um,
        f.counts_10um,
        if f.counts_monotone() { "" } else { "  (counts not monotone)" }
    );
}

fn marker(e: &Pms5003Error) -> &'static str {
    match e {
        Pms5003Error::BadChecksum { .. } => "BADCHECKSUM",
        Pms5003Error::BadLength(_) => "BADLENGTH",
        Pms5003Error::BadSync => "BADSYNC",
        Pms5003Error::Truncated { .. } => "TRUNCATED",
    }
}

/// Drains the scanner, listing frames, rejections and skipped octets.
fn drain_pms(out: &mut String, scanner: &mut Pms5003Scanner, tally: &mut Tally) {
    let skipped_before = scanner.stats().skipped_octets;
    let mut rejected_octets = 0;
    while let Some(ev) = scanner.next_event() {
        match ev {
            ScanEvent::Frame { frame, offset } => {
                tally.pms_frames += 1;
                pms_line(out, &frame, offset);
            }
            ScanEvent::Rejected { error, offset } => {
                tally.invalid += 1;
                // The rejected candidate's first octet is counted as skipped.
                rejected_octets += 1;
                let _ = writeln!(out, "  pms5003 @{offset:<8} {:<12} {error}", marker(&error));
            }
        }
    }
    let garbage = scanner.stats().skipped_octets - skipped_before - rejected_octets;
    if garbage > 0 {
        let _ = writeln!(out, "  pms5003           resync skipped {garbage} octet(s)");
    }
}

fn dht_chunk(out: &mut String, chunk: &[u8], tally: &mut Tally) {
    if chunk.len() < dht11::FRAME_LEN {
        tally.invalid += 1;
        tally.dht_bad_length += 1;
        let _ = writeln!(out, "  dht11             TRUNCATED    {} octet(s)", chunk.len());
        return;
    }
    for frame in chunk.chunks(dht11::FRAME_LEN) {
        match dht11::decode(frame) {
            Ok(f) => {
                tally.dht_frames += 1;
                let warn = match f.range_warning() {
                    Some(_) => "  (outside rated range)",
                    None => "",
                };
                let _ = writeln!(
                    out,
                    "  dht11             OK           T {:.1} C  H {:.1} %RH{warn}",
                    f.temperature(),
                    f.humidity()
                );
            }
            Err(e @ Dht11Error::BadChecksum { .. }) => {
                tally.invalid += 1;
                tally.dht_bad_checksum += 1;
                let _ = writeln!(out, "  dht11             BADCHECKSUM  {e}");
            }
            Err(Dht11Error::Length(n)) => {
                tally.invalid += 1;
                tally.dht_bad_length += 1;
                let _ = writeln!(out, "  dht11             BADLENGTH    {n} trailing octet(s)");
            }
        }
    }
}

fn adc_chunk(out: &mut String, chunk: &[u8], cal: Option<&Mq135Config>, tally: &mut Tally) {
    for s in chunk.chunks(adc::SAMPLE_LEN) {
        if s.len() < adc::SAMPLE_LEN {
            tally.invalid += 1;
            tally.adc_ragged += 1;
            let _ = writeln!(out, "  mq135             BADLENGTH    dangling octet");
            continue;
        }
        tally.adc_samples += 1;
        let count = u16::from_be_bytes([s[0], s[1]]);
        let ppm = match cal.map(|c| calibration::adc_to_ppm(u32::from(count), c)) {
            None => String::new(),
            Some(Ok(p)) => format!("  CO {p:.2} ppm"),
            Some(Err(e)) => format!("  ({e})"),
        };
        let _ = writeln!(out, "  mq135             OK           adc {count}{ppm}");
    }
}

pub fn decode(args: Args) -> CmdResult {
    let bytes = std::fs::read(&args.capture)
        .with_context(|| format!("cannot read {}", args.capture.display()))
        .exit_with(1)?;
    let cal = match &args.calibration {
        Some(p) => Some(load_calibration(p).exit_with(1)?),
        None => None,
    };
    let mut out = String::new();
    let mut tally = Tally::default();
    let mut scanner = Pms5003Scanner::new();

    if args.raw {
        let _ = writeln!(
            out,
            "{}: raw PMS5003 stream, {} octet(s)",
            args.capture.display(),
            bytes.len()
        );
        scanner.push(&bytes);
        drain_pms(&mut out, &mut scanner, &mut tally);
    } else {
        let records = dump::parse_records(&bytes)
            .with_context(|| format!("{}", args.capture.display()))
            .exit_with(1)?;
        let cycles = dump::records_to_cycles(&records);
        let _ = writeln!(
            out,
            "{}: {} cycle(s), {} record(s)",
            args.capture.display(),
            cycles.len(),
            records.len()
        );
        for (i, c) in cycles.iter().enumerate() {
            let _ = writeln!(out, "cycle {}", i + 1);
            match &c.pms5003 {
                Some(b) => {
                    scanner.push(b);
                    drain_pms(&mut out, &mut scanner, &mut tally);
                }
                None => {
                    let _ = writeln!(out, "  pms5003           silent");
                }
            }
            match &c.dht11 {
                Some(b) => dht_chunk(&mut out, b, &mut tally),
                None => {
                    let _ = writeln!(out, "  dht11             silent");
                }
            }
            match &c.adc {
                Some(b) => adc_chunk(&mut out, b, cal.as_ref(), &mut tally),
                None => {
                    let _ = writeln!(out, "  mq135             silent");
                }
            }
        }
    }

    let tail = scanner.pending();
    let st = scanner.finish();
    if tail > 0 {
        let _ = writeln!(out, "  pms5003           TRUNCATED    {tail} octet(s) at end of stream");
        tally.invalid += 1;
    }
    let _ = writeln!(
        out,
        "pms5003: {} frame(s), {} bad checksum, {} bad length, {} skipped octet(s)",
        st.frames, st.bad_checksum, st.bad_length, st.skipped_octets
    );
    if !args.raw {
        let _ = writeln!(
            out,
            "dht11: {} frame(s), {} bad checksum, {} bad length",
            tally.dht_frames, tally.dht_bad_checksum, tally.dht_bad_length
        );
        let _ = writeln!(
            out,
            "mq135: {} sample(s), {} dangling octet(s)",
            tally.adc_samples, tally.adc_ragged
        );
    }
    print!("{out}");
    if tally.invalid > 0 && !args.tolerate {
        return Err(fail(
            4,
            format!("{} invalid frame(s); pass --tolerate to accept", tally.invalid),
        ));
    }
    Ok(())
}
