//! On-disk formats: matches files, gyro CSV, ground-truth and report JSON.
//!
//! A matches file holds one correspondence `x1 y1 x2 y2` (pixels) per line.
//! `#` starts a comment; comments that open a line may be directives:
//!
//! ```text
//! # K_gt 1000 0 640 0 1000 360 0 0 1
//! # image_size 1280 720
//! # pair frames_10_11
//! # angle_deg 12.5
//! # tau 2.9526
//! ```
//!
//! `K_gt` and `image_size` apply to the whole file. `pair` starts a new
//! pair; `angle_deg` and `tau` belong to the current pair. Lines before the
//! first `pair` directive form a pair named `pair`.

use std::fmt::Write as _;
use std::io::{Read, Write};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gyro::GyroSample;
use crate::pipeline::{matrix_rows, Rows3};
use crate::twoview::Correspondence;

/// Points and optional rotation information for one image pair.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairMatches {
    pub name: String,
    pub points: Vec<Correspondence>,
    pub angle_deg: Option<f64>,
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchesFile {
    pub k_gt: Option<Matrix3<f64>>,
    pub image_size: Option<(f64, f64)>,
    pub pairs: Vec<PairMatches>,
}

impl MatchesFile {
    /// Image center from `image_size`, if given.
    pub fn image_center(&self) -> Option<(f64, f64)> {
        self.image_size.map(|(w, h)| (w / 2.0, h / 2.0))
    }
}

fn parse_error(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn numbers(fields: &[&str], line: usize) -> Result<Vec<f64>> {
    fields
        .iter()
        .map(|s| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_error(line, format!("not a finite number: {s:?}")))
        })
        .collect()
}

fn exactly<const N: usize>(fields: &[&str], line: usize, what: &str) -> Result<[f64; N]> {
    let v = numbers(fields, line)?;
    v.try_into()
        .map_err(|v: Vec<f64>| parse_error(line, format!("{what} needs {N} numbers, got {}", v.len())))
}

pub fn parse_matches(text: &str) -> Result<MatchesFile> {
    let mut out = MatchesFile::default();
    let mut current: Option<PairMatches> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            let fields: Vec<&str> = comment.split_whitespace().collect();
            let Some((&key, args)) = fields.split_first() else {
                continue;
            };
            match key {
                "K_gt" => {
                    let v: [f64; 9] = exactly(args, line, "K_gt")?;
                    out.k_gt = Some(Matrix3::from_row_slice(&v));
                }
                "image_size" => {
                    let [w, h] = exactly(args, line, "image_size")?;
                    if !(w > 0.0 && h > 0.0) {
                        return Err(parse_error(line, "image_size must be positive"));
                    }
                    out.image_size = Some((w, h));
                }
                "pair" => {
                    if args.len() != 1 {
                        return Err(parse_error(line, "pair needs exactly one name"));
                    }
                    if let Some(p) = current.take() {
                        out.pairs.push(p);
                    }
                    current = Some(PairMatches {
                        name: args[0].to_string(),
                        ..PairMatches::default()
                    });
                }
                "angle_deg" | "tau" => {
                    let [v] = exactly(args, line, key)?;
                    let pair = current.get_or_insert_with(default_pair);
                    if key == "tau" {
                        pair.tau = Some(v);
                    } else {
                        pair.angle_deg = Some(v);
                    }
                }
                _ => {}
            }
            continue;
        }
        let data = trimmed.split('#').next().unwrap_or_default();
        let fields: Vec<&str> = data.split_whitespace().collect();
        let [x1, y1, x2, y2] = exactly(&fields, line, "a correspondence")?;
        current
            .get_or_insert_with(default_pair)
            .points
            .push(Correspondence::new(x1, y1, x2, y2));
    }
    if let Some(p) = current {
        out.pairs.push(p);
    }
    Ok(out)
}

fn default_pair() -> PairMatches {
    PairMatches {
        name: "pair".into(),
        ..PairMatches::default()
    }
}

pub fn read_matches(path: &std::path::Path) -> Result<MatchesFile> {
    parse_matches(&std::fs::read_to_string(path)?)
}

/// Serializes with shortest round-trip number formatting, so output is
/// deterministic and re-parses to the same values.
pub fn format_matches(file: &MatchesFile) -> String {
    let mut s = String::new();
    if let Some(k) = &file.k_gt {
        let v: Vec<String> = matrix_rows(k).iter().flatten().map(|x| x.to_string()).collect();
        let _ = writeln!(s, "# K_gt {}", v.join(" "));
    }
    if let Some((w, h)) = file.image_size {
        let _ = writeln!(s, "# image_size {w} {h}");
    }
    for pair in &file.pairs {
        let _ = writeln!(s, "# pair {}", pair.name);
        if let Some(a) = pair.angle_deg {
            let _ = writeln!(s, "# angle_deg {a}");
        }
        if let Some(t) = pair.tau {
            let _ = writeln!(s, "# tau {t}");
        }
        for c in &pair.points {
            let _ = writeln!(s, "{} {} {} {}", c.q.x, c.q.y, c.q_prime.x, c.q_prime.y);
        }
    }
    s
}

pub const GYRO_HEADER: [&str; 4] = ["timestamp_s", "wx", "wy", "wz"];

#[derive(Debug, Serialize, Deserialize)]
struct GyroRow {
    timestamp_s: f64,
    wx: f64,
    wy: f64,
    wz: f64,
}

/// Reads `timestamp_s,wx,wy,wz` rows after a header with those names.
pub fn read_gyro_csv<R: Read>(reader: R) -> Result<Vec<GyroSample>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != GYRO_HEADER {
        return Err(parse_error(
            1,
            format!("expected header {}, got {}", GYRO_HEADER.join(","), header.join(",")),
        ));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<GyroRow>().enumerate() {
        let row = row.map_err(|e| parse_error(i + 2, e.to_string()))?;
        let values = [row.timestamp_s, row.wx, row.wy, row.wz];
        if !values.iter().all(|v| v.is_finite()) {
            return Err(parse_error(i + 2, "non-finite value"));
        }
        out.push(GyroSample {
            timestamp: row.timestamp_s,
            omega: Vector3::new(row.wx, row.wy, row.wz),
        });
    }
    Ok(out)
}

pub fn write_gyro_csv<W: Write>(writer: W, samples: &[GyroSample]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(GYRO_HEADER)?;
    for s in samples {
        w.serialize(GyroRow {
            timestamp_s: s.timestamp,
            wx: s.omega.x,
            wy: s.omega.y,
            wz: s.omega.z,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Ground truth written next to synthetic matches; `X2 = R X + t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub k: Rows3,
    pub r: Rows3,
    pub t: [f64; 3],
    pub theta_deg: f64,
    pub tau: f64,
    pub image_size: (f64, f64),
    pub n_points: usize,
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &std::path::Path) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_directives_and_pairs() {
        let text = "\
# K_gt 1000 0 640 0 1000 360 0 0 1
# image_size 1280 720
# a free comment
1 2 3 4
# pair second
# angle_deg 12.5

5 6 7 8
9 10 11 12 # trailing comment
";
        let m = parse_matches(text).unwrap();
        assert_eq!(m.k_gt.unwrap()[(0, 2)], 640.0);
        assert_eq!(m.image_center(), Some((640.0, 360.0)));
        assert_eq!(m.pairs.len(), 2);
        assert_eq!(m.pairs[0].name, "pair");
        assert_eq!(m.pairs[0].points, vec![Correspondence::new(1.0, 2.0, 3.0, 4.0)]);
        assert_eq!(m.pairs[1].name, "second");
        assert_eq!(m.pairs[1].angle_deg, Some(12.5));
        assert_eq!(m.pairs[1].tau, None);
        assert_eq!(m.pairs[1].points.len(), 2);
    }

    #[test]
    fn reports_bad_lines() {
        for (text, line) in [
            ("1 2 3\n", 1),
            ("1 2 3 4\n1 2 x 4\n", 2),
            ("# K_gt 1 2 3\n", 1),
            ("# tau nan\n", 1),
            ("# image_size 0 5\n", 1),
        ] {
            match parse_matches(text) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    proptest! {
        #[test]
        fn matches_round_trip(
            pts in prop::collection::vec(prop::array::uniform4(-1e4f64..1e4), 0..20),
            tau in prop::option::of(-1.0f64..3.0),
        ) {
            let file = MatchesFile {
                k_gt: Some(Matrix3::new(1000.5, 0.0, 640.25, 0.0, 1000.5, 360.0, 0.0, 0.0, 1.0)),
                image_size: Some((1280.0, 720.0)),
                pairs: vec![PairMatches {
                    name: "p0".into(),
                    points: pts.iter().map(|p| Correspondence::new(p[0], p[1], p[2], p[3])).collect(),
                    angle_deg: None,
                    tau,
                }],
            };
            let text = format_matches(&file);
            prop_assert_eq!(parse_matches(&text).unwrap(), file);
        }
    }

    #[test]
    fn gyro_csv_round_trip() {
        let samples = vec![
            GyroSample::new(0.0, 0.1, -0.2, 0.3),
            GyroSample::new(0.005, 1e-9, 0.0, -4.5),
        ];
        let mut buf = Vec::new();
        write_gyro_csv(&mut buf, &samples).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("timestamp_s,wx,wy,wz\n"));
        assert_eq!(read_gyro_csv(buf.as_slice()).unwrap(), samples);
    }

    #[test]
    fn gyro_csv_rejects_bad_header_and_rows() {
        assert!(matches!(
            read_gyro_csv("t,wx,wy,wz\n0,0,0,0\n".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            read_gyro_csv("timestamp_s,wx,wy,wz\n0,0,0,0\n0.1,a,0,0\n".as_bytes()),
            Err(Error::Parse { line: 3, .. })
        ));
    }
}
