//! Report tables and their atomic emission to disk.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::emissions::{euro5_check, improvement_factor, improvement_factors, EmissionRecord, Pollutant, RECORD_CSV_HEADER};
use crate::error::{Error, Result};
use crate::powertrain::Strategy;

use super::sweep::{PointFlags, SweepReport, ENGINE_POINTS_HEADER, FLAGS_HEADER};

pub const RECORDS_FILE: &str = "sweep_records.csv";
pub const IMPROVEMENTS_FILE: &str = "improvements.csv";
pub const PER_KM_FILE: &str = "per_km.csv";
pub const ENGINE_POINTS_FILE: &str = "engine_points.csv";
pub const FLAGS_FILE: &str = "efm_flags.csv";
pub const CHANNELS_DIR: &str = "channels";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::Config(format!("unsupported report format '{other}'"))),
        }
    }
}

fn fmt_factor(f: f64) -> String {
    if f.is_infinite() {
        if f > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{f:.2}")
    }
}

fn find<'a>(records: &'a [EmissionRecord], grade: f64, strategy: Strategy) -> Option<&'a EmissionRecord> {
    records.iter().find(|r| r.strategy == strategy && (r.grade - grade).abs() < 1e-9)
}

fn usable(flags: &[PointFlags], grade: f64, strategy: Strategy) -> bool {
    flags.iter().any(|f| f.strategy == strategy && (f.grade - grade).abs() < 1e-9 && f.usable())
}

fn grades(records: &[EmissionRecord]) -> Vec<f64> {
    let mut g: Vec<f64> = records.iter().map(|r| r.grade).collect();
    g.sort_by(f64::total_cmp);
    g.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    g
}

/// OR against VC per grade where both points carry a plausible flow reading.
pub fn improvements_csv(records: &[EmissionRecord], flags: &[PointFlags]) -> String {
    let mut out = String::from("grade,quantity,or,vc,improvement\n");
    for g in grades(records) {
        let (Some(or), Some(vc)) = (find(records, g, Strategy::Or), find(records, g, Strategy::Vc)) else {
            continue;
        };
        if !(usable(flags, g, Strategy::Or) && usable(flags, g, Strategy::Vc)) {
            continue;
        }
        for (q, f) in improvement_factors(or, vc) {
            let _ = writeln!(out, "{g:.4},{},{:.5},{:.5},{}", q.label(), q.of(or), q.of(vc), fmt_factor(f));
        }
        let (a, b) = (or.per_km[&Pollutant::Nox], vc.per_km[&Pollutant::Nox]);
        let _ = writeln!(out, "{g:.4},nox_mgkm,{a:.5},{b:.5},{}", fmt_factor(improvement_factor(a, b)));
    }
    out
}

/// Distance-specific masses with limit verdicts.
pub fn per_km_csv(records: &[EmissionRecord], flags: &[PointFlags]) -> Result<String> {
    let mut out = String::from("grade,strategy,vd_m3km,co_mgkm,hc_mgkm,nox_mgkm,co2_gkm,co_euro5,hc_euro5,nox_euro5,efm_valid\n");
    for r in records {
        let v = euro5_check(&r.per_km)?;
        let _ = writeln!(
            out,
            "{:.4},{},{:.4},{:.3},{:.3},{:.3},{:.3},{},{},{},{}",
            r.grade,
            r.strategy,
            r.vd(),
            r.per_km[&Pollutant::Co],
            r.per_km[&Pollutant::Hc],
            r.per_km[&Pollutant::Nox],
            r.per_km[&Pollutant::Co2] / 1000.0,
            v[&Pollutant::Co].label(),
            v[&Pollutant::Hc].label(),
            v[&Pollutant::Nox].label(),
            usable(flags, r.grade, r.strategy)
        );
    }
    Ok(out)
}

fn table(header: &str, rows: impl Iterator<Item = String>) -> String {
    let mut out = format!("{header}\n");
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    out
}

fn channel_dir_name(strategy: Strategy, grade: f64) -> String {
    format!("{}_{:+.1}pct", strategy.label().to_ascii_lowercase(), grade * 100.0)
}

/// Writes into a staging directory first, then moves entries into place.
struct Staging {
    out: PathBuf,
    dir: PathBuf,
}

impl Staging {
    fn new(out: &Path) -> Result<Self> {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let dir = out.join(".staging");
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { out: out.to_path_buf(), dir })
    }

    fn put(&self, name: &str, text: &str) -> Result<()> {
        let p = self.dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(p, e))
    }

    fn commit(self) -> Result<()> {
        let entries = fs::read_dir(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&self.dir, e))?;
            let target = self.out.join(entry.file_name());
            if target.is_dir() {
                fs::remove_dir_all(&target).map_err(|e| Error::io(&target, e))?;
            }
            fs::rename(entry.path(), &target).map_err(|e| Error::io(&target, e))?;
        }
        fs::remove_dir(&self.dir).map_err(|e| Error::io(&self.dir, e))
    }
}

pub fn emit_report(report: &SweepReport, out: &Path, format: ReportFormat) -> Result<()> {
    let ReportFormat::Csv = format;
    if report.points.is_empty() {
        return Err(Error::Validation("sweep report is empty; nothing written".into()));
    }
    // tables are derived from the rounded rows so `report` regenerates them byte for byte
    let records = report
        .points
        .iter()
        .map(|p| EmissionRecord::from_csv_row(&p.record.csv_row()))
        .collect::<Result<Vec<_>>>()?;
    let flags = report
        .points
        .iter()
        .map(|p| PointFlags::from_csv_row(&p.flags.csv_row()))
        .collect::<Result<Vec<_>>>()?;
    let stage = Staging::new(out)?;
    let written = (|| {
        stage.put(RECORDS_FILE, &table(RECORD_CSV_HEADER, records.iter().map(EmissionRecord::csv_row)))?;
        stage.put(FLAGS_FILE, &table(FLAGS_HEADER, flags.iter().map(PointFlags::csv_row)))?;
        stage.put(ENGINE_POINTS_FILE, &table(ENGINE_POINTS_HEADER, report.points.iter().map(|p| p.engine.csv_row())))?;
        stage.put(IMPROVEMENTS_FILE, &improvements_csv(&records, &flags))?;
        stage.put(PER_KM_FILE, &per_km_csv(&records, &flags)?)?;
        for p in &report.points {
            p.bundle.write(&stage.dir.join(CHANNELS_DIR).join(channel_dir_name(p.record.strategy, p.record.grade)))?;
        }
        Ok(())
    })();
    match written {
        Ok(()) => stage.commit(),
        Err(e) => {
            let _ = fs::remove_dir_all(&stage.dir);
            Err(e)
        }
    }
}

fn read_rows(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().skip(1).filter(|l| !l.trim().is_empty()).map(str::to_string).collect())
}

/// Rebuilds the improvement and per-km tables from a sweep directory.
pub fn regenerate_report(dir: &Path, format: ReportFormat) -> Result<()> {
    let ReportFormat::Csv = format;
    let records = read_rows(&dir.join(RECORDS_FILE))?
        .iter()
        .map(|l| EmissionRecord::from_csv_row(l))
        .collect::<Result<Vec<_>>>()?;
    if records.is_empty() {
        return Err(Error::Validation(format!("{} holds no records", dir.join(RECORDS_FILE).display())));
    }
    let flags = read_rows(&dir.join(FLAGS_FILE))?
        .iter()
        .map(|l| PointFlags::from_csv_row(l))
        .collect::<Result<Vec<_>>>()?;
    let stage = Staging::new(dir)?;
    stage.put(IMPROVEMENTS_FILE, &improvements_csv(&records, &flags))?;
    stage.put(PER_KM_FILE, &per_km_csv(&records, &flags)?)?;
    stage.commit()
}
