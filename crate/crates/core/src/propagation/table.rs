//! Distance-indexed loss tables for externally computed losses.
//!
//! File format: UTF-8 CSV with the header `distance_km,loss_db`, one sample
//! per line, `.` as decimal separator, LF or CRLF line endings. Blank lines
//! are skipped. Distances must be strictly increasing.

use std::fs;
use std::path::Path;

use thiserror::Error;

pub const TABLE_HEADER: &str = "distance_km,loss_db";

#[derive(Debug, Error)]
pub enum LossTableError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: distance {distance_km} km does not exceed the previous row ({previous_km} km)")]
    NonMonotoneDistances {
        line: usize,
        distance_km: f64,
        previous_km: f64,
    },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Piecewise-linear loss versus distance.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTable {
    distances_km: Vec<f64>,
    losses_db: Vec<f64>,
}

impl LossTable {
    /// Builds a table from `(distance_km, loss_db)` rows.
    pub fn new(rows: impl IntoIterator<Item = (f64, f64)>) -> Result<Self, LossTableError> {
        let mut distances_km = Vec::new();
        let mut losses_db = Vec::new();
        for (i, (d, l)) in rows.into_iter().enumerate() {
            push_row(&mut distances_km, &mut losses_db, d, l, i + 1)?;
        }
        finish(distances_km, losses_db)
    }

    pub fn from_csv_str(text: &str) -> Result<Self, LossTableError> {
        let text = text.strip_prefix('\u{feff}').unwrap_or(text);
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));

        match lines.find(|(_, l)| !l.trim().is_empty()) {
            Some((_, header)) if header.trim() == TABLE_HEADER => {}
            Some((line, header)) => {
                return Err(LossTableError::Parse {
                    line,
                    message: format!("expected header `{TABLE_HEADER}`, found `{}`", header.trim()),
                })
            }
            None => {
                return Err(LossTableError::Parse {
                    line: 1,
                    message: "empty file".into(),
                })
            }
        }

        let mut distances_km = Vec::new();
        let mut losses_db = Vec::new();
        let mut last_line = 1;
        for (line, raw) in lines {
            last_line = line;
            let raw = raw.trim();
            if raw.is_empty() {
                continue;
            }
            let mut fields = raw.split(',');
            let (Some(d), Some(l), None) = (fields.next(), fields.next(), fields.next()) else {
                return Err(LossTableError::Parse {
                    line,
                    message: format!("expected 2 fields, found `{raw}`"),
                });
            };
            let d = parse_number(d, "distance_km", line)?;
            let l = parse_number(l, "loss_db", line)?;
            push_row(&mut distances_km, &mut losses_db, d, l, line)?;
        }
        if distances_km.is_empty() {
            return Err(LossTableError::Parse {
                line: last_line,
                message: "no data rows".into(),
            });
        }
        finish(distances_km, losses_db)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LossTableError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| LossTableError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_csv_str(&text)
    }

    pub fn len(&self) -> usize {
        self.distances_km.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances_km.is_empty()
    }

    /// Closed distance span `[first, last]` covered by the table.
    pub fn span_km(&self) -> (f64, f64) {
        (self.distances_km[0], *self.distances_km.last().unwrap())
    }

    pub fn rows(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.distances_km.iter().copied().zip(self.losses_db.iter().copied())
    }

    /// Linear interpolation; `None` outside the table span.
    pub fn interpolate(&self, distance_km: f64) -> Option<f64> {
        let (lo, hi) = self.span_km();
        if !(lo..=hi).contains(&distance_km) {
            return None;
        }
        let i = self.distances_km.partition_point(|&d| d < distance_km);
        if self.distances_km[i] == distance_km {
            return Some(self.losses_db[i]);
        }
        let (d0, d1) = (self.distances_km[i - 1], self.distances_km[i]);
        let (l0, l1) = (self.losses_db[i - 1], self.losses_db[i]);
        Some(l0 + (l1 - l0) * (distance_km - d0) / (d1 - d0))
    }
}

fn parse_number(field: &str, name: &str, line: usize) -> Result<f64, LossTableError> {
    let v: f64 = field.trim().parse().map_err(|_| LossTableError::Parse {
        line,
        message: format!("{name} `{}` is not a number", field.trim()),
    })?;
    if !v.is_finite() {
        return Err(LossTableError::Parse {
            line,
            message: format!("{name} must be finite"),
        });
    }
    Ok(v)
}

fn push_row(
    distances: &mut Vec<f64>,
    losses: &mut Vec<f64>,
    d: f64,
    l: f64,
    line: usize,
) -> Result<(), LossTableError> {
    if !d.is_finite() || !l.is_finite() {
        return Err(LossTableError::Parse {
            line,
            message: "values must be finite".into(),
        });
    }
    if d < 0.0 {
        return Err(LossTableError::Parse {
            line,
            message: format!("negative distance {d}"),
        });
    }
    if let Some(&prev) = distances.last() {
        if d <= prev {
            return Err(LossTableError::NonMonotoneDistances {
                line,
                distance_km: d,
                previous_km: prev,
            });
        }
    }
    distances.push(d);
    losses.push(l);
    Ok(())
}

fn finish(distances_km: Vec<f64>, losses_db: Vec<f64>) -> Result<LossTable, LossTableError> {
    if distances_km.len() < 2 {
        return Err(LossTableError::Parse {
            line: distances_km.len() + 1,
            message: format!("table needs at least 2 rows, found {}", distances_km.len()),
        });
    }
    Ok(LossTable {
        distances_km,
        losses_db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_table() {
        let t = LossTable::from_csv_str("distance_km,loss_db\n1.0,100.0\n3.0,120.0\n").unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.interpolate(2.0), Some(110.0));
        assert_eq!(t.interpolate(1.0), Some(100.0));
        assert_eq!(t.interpolate(3.0), Some(120.0));
        assert_eq!(t.interpolate(3.5), None);
        assert_eq!(t.interpolate(0.5), None);
    }

    #[test]
    fn crlf_and_blank_lines() {
        let t = LossTable::from_csv_str("distance_km,loss_db\r\n1,100\r\n\r\n2,104\r\n4, 110\r\n").unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.interpolate(3.0), Some(107.0));
    }

    #[test]
    fn out_of_order_rows_rejected() {
        let err = LossTable::from_csv_str("distance_km,loss_db\n3.0,120.0\n1.0,100.0\n").unwrap_err();
        assert!(
            matches!(err, LossTableError::NonMonotoneDistances { line: 3, .. }),
            "{err}"
        );
        let err = LossTable::from_csv_str("distance_km,loss_db\n1.0,100.0\n1.0,101.0\n").unwrap_err();
        assert!(matches!(err, LossTableError::NonMonotoneDistances { .. }));
    }

    #[test]
    fn header_only_rejected() {
        let err = LossTable::from_csv_str("distance_km,loss_db\n").unwrap_err();
        match err {
            LossTableError::Parse { message, .. } => assert!(message.contains("no data rows")),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn bad_rows_report_line_numbers() {
        let err = LossTable::from_csv_str("distance_km,loss_db\n1,100\n2,abc\n").unwrap_err();
        assert!(matches!(err, LossTableError::Parse { line: 3, .. }), "{err}");
        let err = LossTable::from_csv_str("distance_km,loss_db\n1,100,5\n").unwrap_err();
        assert!(matches!(err, LossTableError::Parse { line: 2, .. }), "{err}");
        let err = LossTable::from_csv_str("d,l\n1,100\n").unwrap_err();
        assert!(matches!(err, LossTableError::Parse { line: 1, .. }), "{err}");
        let err = LossTable::from_csv_str("distance_km,loss_db\n1,inf\n2,3\n").unwrap_err();
        assert!(matches!(err, LossTableError::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn single_row_rejected() {
        assert!(LossTable::from_csv_str("distance_km,loss_db\n1,100\n").is_err());
    }
}
