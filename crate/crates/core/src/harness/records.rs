//! Per-replica records and their CSV form.
//!
//! Floats are written with 17 significant digits, which reads back to the
//! same `f64`, so statistics recomputed from a CSV file match the in-memory
//! ones exactly.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{CouplingError, Result};

/// How a replica ended, independent of the experiment's own outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordStatus {
    Ok,
    /// The engine reported a non-finite state.
    Aborted,
    /// The replica panicked; the rest of the experiment continued.
    Panicked,
    /// The engine returned an error.
    Failed,
}

impl RecordStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RecordStatus::Ok => "ok",
            RecordStatus::Aborted => "aborted",
            RecordStatus::Panicked => "panicked",
            RecordStatus::Failed => "failed",
        }
    }
}

impl FromStr for RecordStatus {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ok" => Ok(RecordStatus::Ok),
            "aborted" => Ok(RecordStatus::Aborted),
            "panicked" => Ok(RecordStatus::Panicked),
            "failed" => Ok(RecordStatus::Failed),
            _ => Err(format!("unknown status `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordLayout {
    Full,
    Reduced,
    Dufresne,
    Ito,
    Kolmogorov,
}

impl RecordLayout {
    pub const ALL: [RecordLayout; 5] = [
        RecordLayout::Full,
        RecordLayout::Reduced,
        RecordLayout::Dufresne,
        RecordLayout::Ito,
        RecordLayout::Kolmogorov,
    ];

    pub fn columns(self) -> &'static [&'static str] {
        match self {
            RecordLayout::Full => &[
                "replica_id",
                "seed_used",
                "coupled",
                "T",
                "steps",
                "final_Vsq",
                "final_Usq",
                "truncated",
                "status",
            ],
            RecordLayout::Reduced => &[
                "replica_id",
                "seed_used",
                "scaledT",
                "absorbed",
                "truncated",
                "tau_end",
                "log_scaledT",
                "steps",
                "status",
            ],
            RecordLayout::Dufresne => &["replica_id", "seed_used", "value", "status"],
            RecordLayout::Ito => &[
                "replica_id",
                "seed_used",
                "z_drift_Vsq",
                "z_qv_Vsq",
                "z_cov",
                "z_qv_Usq",
                "z_drift_Usq",
                "max_abs_z",
                "reversed_sign_z",
                "status",
            ],
            RecordLayout::Kolmogorov => &[
                "replica_id",
                "seed_used",
                "coupled",
                "T",
                "steps",
                "loops",
                "truncated",
                "status",
            ],
        }
    }

    pub fn header(self) -> String {
        self.columns().join(",")
    }
}

/// Layout-specific outcome fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(untagged)]
pub enum RecordData {
    Full {
        coupled: bool,
        t: f64,
        steps: u64,
        final_vsq: f64,
        final_usq: f64,
        truncated: bool,
    },
    Reduced {
        scaled_t: f64,
        absorbed: bool,
        truncated: bool,
        tau_end: f64,
        log_scaled_t: f64,
        steps: u64,
    },
    Dufresne {
        value: f64,
    },
    Ito {
        z: [f64; 5],
        max_abs_z: f64,
        reversed_sign_z: f64,
    },
    Kolmogorov {
        coupled: bool,
        t: f64,
        steps: u64,
        loops: u64,
        truncated: bool,
    },
}

impl RecordData {
    pub fn layout(&self) -> RecordLayout {
        match self {
            RecordData::Full { .. } => RecordLayout::Full,
            RecordData::Reduced { .. } => RecordLayout::Reduced,
            RecordData::Dufresne { .. } => RecordLayout::Dufresne,
            RecordData::Ito { .. } => RecordLayout::Ito,
            RecordData::Kolmogorov { .. } => RecordLayout::Kolmogorov,
        }
    }

    /// Placeholder fields for a replica that produced no outcome.
    pub fn missing(layout: RecordLayout) -> Self {
        let nan = f64::NAN;
        match layout {
            RecordLayout::Full => RecordData::Full {
                coupled: false,
                t: nan,
                steps: 0,
                final_vsq: nan,
                final_usq: nan,
                truncated: false,
            },
            RecordLayout::Reduced => RecordData::Reduced {
                scaled_t: nan,
                absorbed: false,
                truncated: false,
                tau_end: nan,
                log_scaled_t: nan,
                steps: 0,
            },
            RecordLayout::Dufresne => RecordData::Dufresne { value: nan },
            RecordLayout::Ito => RecordData::Ito {
                z: [nan; 5],
                max_abs_z: nan,
                reversed_sign_z: nan,
            },
            RecordLayout::Kolmogorov => RecordData::Kolmogorov {
                coupled: false,
                t: nan,
                steps: 0,
                loops: 0,
                truncated: false,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunRecord {
    pub replica_id: u64,
    /// Base seed; the replica's stream is `(seed_used, replica_id)`.
    pub seed_used: u64,
    pub status: RecordStatus,
    #[serde(flatten)]
    pub data: RecordData,
}

impl RunRecord {
    /// Bitwise equality, so `NaN` fields compare equal to themselves.
    pub fn same_bits(&self, other: &RunRecord) -> bool {
        self.to_csv_row() == other.to_csv_row()
    }

    pub fn to_csv_row(&self) -> String {
        let mut row = format!("{},{}", self.replica_id, self.seed_used);
        let push_f = |row: &mut String, x: f64| {
            let _ = write!(row, ",{}", fmt_f64(x));
        };
        match self.data {
            RecordData::Full {
                coupled,
                t,
                steps,
                final_vsq,
                final_usq,
                truncated,
            } => {
                let _ = write!(row, ",{coupled}");
                push_f(&mut row, t);
                let _ = write!(row, ",{steps}");
                push_f(&mut row, final_vsq);
                push_f(&mut row, final_usq);
                let _ = write!(row, ",{truncated}");
            }
            RecordData::Reduced {
                scaled_t,
                absorbed,
                truncated,
                tau_end,
                log_scaled_t,
                steps,
            } => {
                push_f(&mut row, scaled_t);
                let _ = write!(row, ",{absorbed},{truncated}");
                push_f(&mut row, tau_end);
                push_f(&mut row, log_scaled_t);
                let _ = write!(row, ",{steps}");
            }
            RecordData::Dufresne { value } => push_f(&mut row, value),
            RecordData::Ito {
                z,
                max_abs_z,
                reversed_sign_z,
            } => {
                for v in z {
                    push_f(&mut row, v);
                }
                push_f(&mut row, max_abs_z);
                push_f(&mut row, reversed_sign_z);
            }
            RecordData::Kolmogorov {
                coupled,
                t,
                steps,
                loops,
                truncated,
            } => {
                let _ = write!(row, ",{coupled}");
                push_f(&mut row, t);
                let _ = write!(row, ",{steps},{loops},{truncated}");
            }
        }
        let _ = write!(row, ",{}", self.status.as_str());
        row
    }
}

/// 17 significant digits; `inf`, `-inf` and `NaN` for non-finite values.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

/// Header line plus one row per record.
pub fn records_to_csv(layout: RecordLayout, records: &[RunRecord]) -> Result<String> {
    let mut out = layout.header();
    out.push('\n');
    for r in records {
        if r.data.layout() != layout {
            return Err(CouplingError::Invariant(format!(
                "record {} does not use the {:?} layout",
                r.replica_id, layout
            )));
        }
        out.push_str(&r.to_csv_row());
        out.push('\n');
    }
    Ok(out)
}

struct Fields<'a> {
    items: std::str::Split<'a, char>,
    line: usize,
}

impl Fields<'_> {
    fn next_str(&mut self, name: &str) -> Result<&str> {
        self.items.next().ok_or_else(|| CouplingError::Parse {
            line: self.line,
            message: format!("missing column `{name}`"),
        })
    }

    fn parse<T: FromStr>(&mut self, name: &str) -> Result<T> {
        let line = self.line;
        let raw = self.next_str(name)?;
        raw.parse().map_err(|_| CouplingError::Parse {
            line,
            message: format!("bad value `{raw}` in column `{name}`"),
        })
    }
}

/// Reads a file written by [`records_to_csv`]; the header selects the layout.
pub fn parse_records_csv(text: &str) -> Result<(RecordLayout, Vec<RunRecord>)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(CouplingError::Parse {
        line: 1,
        message: "empty input".into(),
    })?;
    let header = header.trim_end_matches('\r');
    let layout = RecordLayout::ALL
        .into_iter()
        .find(|l| l.header() == header)
        .ok_or_else(|| CouplingError::Parse {
            line: 1,
            message: "unrecognized header".into(),
        })?;
    let mut records = Vec::new();
    for (index, raw) in lines {
        let line = index + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.split(',').count() != layout.columns().len() {
            return Err(CouplingError::Parse {
                line,
                message: format!("expected {} columns", layout.columns().len()),
            });
        }
        let mut f = Fields {
            items: raw.split(','),
            line,
        };
        let replica_id = f.parse("replica_id")?;
        let seed_used = f.parse("seed_used")?;
        let data = match layout {
            RecordLayout::Full => RecordData::Full {
                coupled: f.parse("coupled")?,
                t: f.parse("T")?,
                steps: f.parse("steps")?,
                final_vsq: f.parse("final_Vsq")?,
                final_usq: f.parse("final_Usq")?,
                truncated: f.parse("truncated")?,
            },
            RecordLayout::Reduced => RecordData::Reduced {
                scaled_t: f.parse("scaledT")?,
                absorbed: f.parse("absorbed")?,
                truncated: f.parse("truncated")?,
                tau_end: f.parse("tau_end")?,
                log_scaled_t: f.parse("log_scaledT")?,
                steps: f.parse("steps")?,
            },
            RecordLayout::Dufresne => RecordData::Dufresne {
                value: f.parse("value")?,
            },
            RecordLayout::Ito => RecordData::Ito {
                z: [
                    f.parse("z_drift_Vsq")?,
                    f.parse("z_qv_Vsq")?,
                    f.parse("z_cov")?,
                    f.parse("z_qv_Usq")?,
                    f.parse("z_drift_Usq")?,
                ],
                max_abs_z: f.parse("max_abs_z")?,
                reversed_sign_z: f.parse("reversed_sign_z")?,
            },
            RecordLayout::Kolmogorov => RecordData::Kolmogorov {
                coupled: f.parse("coupled")?,
                t: f.parse("T")?,
                steps: f.parse("steps")?,
                loops: f.parse("loops")?,
                truncated: f.parse("truncated")?,
            },
        };
        let status = f.parse("status")?;
        records.push(RunRecord {
            replica_id,
            seed_used,
            status,
            data,
        });
    }
    Ok((layout, records))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(layout: RecordLayout) -> RunRecord {
        let data = match RecordData::missing(layout) {
            RecordData::Full { .. } => RecordData::Full {
                coupled: true,
                t: 0.1 + 0.2,
                steps: 7,
                final_vsq: 1e-300,
                final_usq: f64::MIN_POSITIVE / 3.0,
                truncated: false,
            },
            RecordData::Reduced { .. } => RecordData::Reduced {
                scaled_t: f64::INFINITY,
                absorbed: true,
                truncated: false,
                tau_end: 12.5,
                log_scaled_t: 812.25,
                steps: 1250,
            },
            other => other,
        };
        RunRecord {
            replica_id: 3,
            seed_used: u64::MAX,
            status: RecordStatus::Ok,
            data,
        }
    }

    #[test]
    fn rows_round_trip_bit_exactly() {
        for layout in RecordLayout::ALL {
            let records = vec![sample(layout), {
                let mut r = sample(layout);
                r.replica_id = 4;
                r.status = RecordStatus::Panicked;
                r
            }];
            let text = records_to_csv(layout, &records).unwrap();
            let (back_layout, back) = parse_records_csv(&text).unwrap();
            assert_eq!(back_layout, layout);
            assert_eq!(back.len(), 2);
            for (a, b) in records.iter().zip(&back) {
                assert!(a.same_bits(b), "{layout:?}");
            }
        }
    }

    #[test]
    fn float_format_is_exact() {
        for x in [0.1, 1.0 / 3.0, 1e-308, 5e-324, 1.7976931348623157e308, -2.5] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
        assert_eq!(fmt_f64(f64::NEG_INFINITY), "-inf");
    }

    #[test]
    fn malformed_input_is_rejected() {
        assert!(parse_records_csv("").is_err());
        assert!(parse_records_csv("a,b\n1,2\n").is_err());
        let header = RecordLayout::Dufresne.header();
        assert!(parse_records_csv(&format!("{header}\n1,2,3\n")).is_err());
        assert!(parse_records_csv(&format!("{header}\n1,2,x,ok\n")).is_err());
        assert!(parse_records_csv(&format!("{header}\n1,2,3.0,maybe\n")).is_err());
        assert!(parse_records_csv(&format!("{header}\n1,2,3.0,ok\n")).is_ok());
    }
}
