//! Session CSV files: `<id>.imu.csv` (`t,ax,ay,az`) and `<id>.gps.csv`
//! (`t,speed,gdop`).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{GpsPoint, GpsTrack, ImuSample, ImuSession, IMU_RATE_HZ};
use crate::error::{Error, Result};

pub const IMU_HEADER: [&str; 4] = ["t", "ax", "ay", "az"];
pub const GPS_HEADER: [&str; 3] = ["t", "speed", "gdop"];
pub const IMU_SUFFIX: &str = ".imu.csv";
pub const GPS_SUFFIX: &str = ".gps.csv";

/// Decimal places written for every value.
const PRECISION: usize = 6;

/// The session id is the file name without its `.imu.csv`/`.gps.csv` suffix.
fn session_id(path: &Path, suffix: &str) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    name.strip_suffix(suffix).map(str::to_string).unwrap_or(name)
}

/// Reads `path` as rows of `N` finite numbers under the exact `header`,
/// returning each row with its 1-based line number.
fn read_rows<const N: usize>(path: &Path, header: [&str; N]) -> Result<Vec<(u64, [f64; N])>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path)?;
    let malformed = |line: u64, msg: String| Error::MalformedRow { path: path.to_path_buf(), line, msg };
    let found: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if found != header {
        return Err(malformed(1, format!("header {:?}, expected {:?}", found.join(","), header.join(","))));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            malformed(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let mut vals = [0.0; N];
        for (i, v) in vals.iter_mut().enumerate() {
            let field = rec.get(i).unwrap_or("");
            *v = field.parse::<f64>().map_err(|_| malformed(line, format!("{}: {field:?} is not a number", header[i])))?;
            if !v.is_finite() {
                return Err(malformed(line, format!("{}: non-finite value", header[i])));
            }
        }
        rows.push((line, vals));
    }
    if rows.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    for pair in rows.windows(2) {
        if !(pair[1].1[0] > pair[0].1[0]) {
            return Err(Error::NonMonotonic { path: path.to_path_buf(), line: pair[1].0, t: pair[1].1[0] });
        }
    }
    Ok(rows)
}

pub fn parse_imu_csv(path: impl AsRef<Path>) -> Result<ImuSession> {
    let path = path.as_ref();
    let rows = read_rows(path, IMU_HEADER)?;
    Ok(ImuSession {
        session_id: session_id(path, IMU_SUFFIX),
        samples: rows.into_iter().map(|(_, [t, ax, ay, az])| ImuSample { t, a: [ax, ay, az] }).collect(),
        nominal_rate: IMU_RATE_HZ,
    })
}

pub fn parse_gps_csv(path: impl AsRef<Path>) -> Result<GpsTrack> {
    let path = path.as_ref();
    let rows = read_rows(path, GPS_HEADER)?;
    let mut points = Vec::with_capacity(rows.len());
    for (line, [t, speed, gdop]) in rows {
        if speed < 0.0 || gdop <= 0.0 {
            return Err(Error::MalformedRow {
                path: path.to_path_buf(),
                line,
                msg: format!("speed {speed} must be >= 0 and gdop {gdop} > 0"),
            });
        }
        points.push(GpsPoint { t, speed, gdop });
    }
    Ok(GpsTrack { session_id: session_id(path, GPS_SUFFIX), points })
}

fn write_rows<const N: usize>(path: &Path, header: [&str; N], rows: impl Iterator<Item = [f64; N]>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{}", header.join(","))?;
    for row in rows {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.write_all(b",")?;
            }
            // avoid printing "-0.000000"
            let v = if v.abs() < 0.5e-6 { 0.0 } else { *v };
            write!(out, "{v:.PRECISION$}")?;
        }
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_imu_csv(path: impl AsRef<Path>, imu: &ImuSession) -> Result<()> {
    write_rows(path.as_ref(), IMU_HEADER, imu.samples.iter().map(|s| [s.t, s.a[0], s.a[1], s.a[2]]))
}

pub fn write_gps_csv(path: impl AsRef<Path>, gps: &GpsTrack) -> Result<()> {
    write_rows(path.as_ref(), GPS_HEADER, gps.points.iter().map(|p| [p.t, p.speed, p.gdop]))
}

pub fn imu_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}{IMU_SUFFIX}"))
}

pub fn gps_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}{GPS_SUFFIX}"))
}

/// Session ids in `dir` that have both files, sorted.
pub fn list_sessions(dir: impl AsRef<Path>) -> Result<Vec<String>> {
    let dir = dir.as_ref();
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_suffix(IMU_SUFFIX) {
            if gps_path(dir, id).is_file() {
                ids.push(id.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

/// Parses one session's file pair.
pub fn load_session(dir: impl AsRef<Path>, id: &str) -> Result<(ImuSession, GpsTrack)> {
    let dir = dir.as_ref();
    let imu = parse_imu_csv(imu_path(dir, id))?;
    let gps = parse_gps_csv(gps_path(dir, id))?;
    Ok((imu, gps))
}

#[cfg(test)]
mod tests {
    use std::fs;

    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn three_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.imu.csv", "t,ax,ay,az\n0.000,0,0,9.8\n0.002,0.1,0,9.8\n0.004,0.2,0,9.8\n");
        let s = parse_imu_csv(&p).unwrap();
        assert_eq!(s.session_id, "a");
        assert_eq!(s.samples.len(), 3);
        assert_eq!(s.samples[2].a, [0.2, 0.0, 9.8]);
    }

    #[test]
    fn duplicated_timestamp_names_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.gps.csv", "t,speed,gdop\n0,1,1\n1,1,1\n1,2,1\n");
        match parse_gps_csv(&p) {
            Err(Error::NonMonotonic { line, t, .. }) => {
                assert_eq!(line, 4);
                assert_eq!(t, 1.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_and_empty() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.imu.csv", "t,ax,ay,az\n0,1,2,3\n0.1,x,2,3\n");
        assert!(matches!(parse_imu_csv(&p), Err(Error::MalformedRow { line: 3, .. })));
        let p = write(dir.path(), "b.imu.csv", "t,ax,ay\n0,1,2\n");
        assert!(matches!(parse_imu_csv(&p), Err(Error::MalformedRow { line: 1, .. })));
        let p = write(dir.path(), "c.imu.csv", "t,ax,ay,az\n0,1,2\n");
        assert!(matches!(parse_imu_csv(&p), Err(Error::MalformedRow { line: 2, .. })));
        let p = write(dir.path(), "d.imu.csv", "t,ax,ay,az\n");
        assert!(matches!(parse_imu_csv(&p), Err(Error::EmptyFile(_))));
        let p = write(dir.path(), "e.gps.csv", "t,speed,gdop\n0,-1,1\n");
        assert!(matches!(parse_gps_csv(&p), Err(Error::MalformedRow { line: 2, .. })));
    }

    #[test]
    fn write_parse_write_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let imu = ImuSession {
            session_id: "s".into(),
            samples: (0..10).map(|i| ImuSample { t: i as f64 / 500.0, a: [i as f64 * 0.1234567, -1e-9, 9.80665] }).collect(),
            nominal_rate: IMU_RATE_HZ,
        };
        let p = imu_path(dir.path(), "s");
        write_imu_csv(&p, &imu).unwrap();
        let parsed = parse_imu_csv(&p).unwrap();
        for (a, b) in parsed.samples.iter().zip(&imu.samples) {
            assert!((a.t - b.t).abs() < 5e-7);
            assert!(a.a.iter().zip(&b.a).all(|(x, y)| (x - y).abs() <= 5e-7));
        }
        let q = dir.path().join("again.imu.csv");
        write_imu_csv(&q, &parsed).unwrap();
        assert_eq!(fs::read(&p).unwrap(), fs::read(&q).unwrap());
    }

    #[test]
    fn lists_complete_pairs_only() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["b.imu.csv", "b.gps.csv", "a.imu.csv", "a.gps.csv", "c.imu.csv"] {
            write(dir.path(), name, "");
        }
        assert_eq!(list_sessions(dir.path()).unwrap(), vec!["a", "b"]);
    }
}
