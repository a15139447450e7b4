use std::collections::BTreeMap;
use std::path::PathBuf;

use airq_core::aqi::{OffScale, Pollutant, Sample};
use serde::Serialize;

use crate::simulate::load_tables;
use crate::{fail, CmdResult, ExitWith};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// `pollutant=value` pairs; pollutants are pm2.5, pm10 and co
    /// (µg/m³, µg/m³, ppm).
    #[arg(required = true, value_name = "POLLUTANT=VALUE")]
    pairs: Vec<String>,
    /// Print one JSON record instead of text.
    #[arg(long)]
    json: bool,
    /// Report 500 for concentrations above the top breakpoint instead of
    /// failing.
    #[arg(long)]
    clamp: bool,
    /// Breakpoint tables (TOML) replacing the built-in ones.
    #[arg(long, value_name = "FILE")]
    breakpoints: Option<PathBuf>,
}

/// The `--json` record.
#[derive(Debug, Serialize)]
struct Report {
    /// Concentrations after truncation to table precision.
    concentrations: BTreeMap<Pollutant, f64>,
    sub_indices: BTreeMap<Pollutant, u16>,
    overall: u16,
    dominant: Pollutant,
    category: &'static str,
    label: &'static str,
}

fn parse_pair(s: &str) -> Result<(Pollutant, f64), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("`{s}` is not POLLUTANT=VALUE"))?;
    let p: Pollutant = k.trim().parse()?;
    let value: f64 = v
        .trim()
        .parse()
        .map_err(|_| format!("{p}: `{}` is not a number", v.trim()))?;
    Ok((p, value))
}

pub fn aqi(args: Args) -> CmdResult {
    let tables = load_tables(args.breakpoints.as_deref()).exit_with(1)?;
    let mut sample = Sample::default();
    for pair in &args.pairs {
        let (p, v) = parse_pair(pair).map_err(|e| fail(1, e))?;
        let slot = match p {
            Pollutant::Pm2_5 => &mut sample.pm2_5,
            Pollutant::Pm10 => &mut sample.pm10,
            Pollutant::Co => &mut sample.co,
        };
        if slot.replace(v).is_some() {
            return Err(fail(1, format!("{p} given more than once")));
        }
    }
    let off_scale = if args.clamp { OffScale::Clamp } else { OffScale::Error };
    // Every evaluation error already names the pollutant.
    let result = tables.evaluate(&sample, off_scale).map_err(|e| fail(1, e))?;
    let concentrations = Pollutant::ALL
        .into_iter()
        .filter_map(|p| {
            let v = sample.get(p)?;
            let c = tables.table(p).concentration(v).ok()?;
            Some((p, c.value()))
        })
        .collect::<BTreeMap<_, _>>();

    if args.json {
        let report = Report {
            concentrations,
            sub_indices: result.sub_indices.clone(),
            overall: result.overall,
            dominant: result.dominant,
            category: result.category.as_str(),
            label: result.category.label(),
        };
        println!("{}", serde_json::to_string(&report).map_err(|e| fail(1, e))?);
        return Ok(());
    }
    for (p, sub) in &result.sub_indices {
        let prec = usize::from(tables.table(*p).precision());
        println!(
            "{:<6} {:>8.prec$} {:<5}  sub-index {sub}",
            p.as_str(),
            concentrations[p],
            p.unit()
        );
    }
    println!("overall  {}", result.overall);
    println!("dominant {}", result.dominant);
    println!("category {} ({})", result.category.as_str(), result.category.label());
    Ok(())
}
