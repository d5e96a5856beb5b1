//! CSV input and output.
//!
//! Every table has a header row. Floats are written in scientific notation
//! with 17 significant digits so that values survive a round trip exactly.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::bench::BenchRow;
use crate::design::DesignSet;
use crate::error::{Error, Result};
use crate::global::GlobalResult;
use crate::local::TraceStep;

/// Round-trip formatting of a float.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:.16e}")
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// A numeric table: header plus row-major values.
#[derive(Clone, Debug, PartialEq)]
pub struct NumericTable {
    pub header: Vec<String>,
    pub values: Vec<f64>,
}

impl NumericTable {
    pub fn cols(&self) -> usize {
        self.header.len()
    }

    pub fn rows(&self) -> usize {
        if self.header.is_empty() {
            0
        } else {
            self.values.len() / self.header.len()
        }
    }
}

/// Reads a headed all-numeric CSV; `name` labels errors.
pub fn read_numeric<R: Read>(reader: R, name: &Path) -> Result<NumericTable> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: name.to_path_buf(),
        line,
        msg,
    };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(parse_err(1, "missing header row".into()));
    }
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != header.len() {
            return Err(parse_err(line, format!("expected {} fields, found {}", header.len(), rec.len())));
        }
        for (field, col) in rec.iter().zip(&header) {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, format!("column `{col}`: `{field}` is not a number")))?;
            values.push(v);
        }
    }
    Ok(NumericTable { header, values })
}

fn check_finite(t: &NumericTable, name: &Path) -> Result<()> {
    if let Some(i) = t.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Parse {
            path: name.to_path_buf(),
            line: i / t.cols() + 2,
            msg: format!("non-finite value in column `{}`", t.header[i % t.cols()]),
        });
    }
    Ok(())
}

/// Design CSV: input columns followed by the response in the last column.
pub fn read_design(path: &Path) -> Result<DesignSet> {
    read_design_from(open(path)?, path)
}

pub fn read_design_from<R: Read>(reader: R, name: &Path) -> Result<DesignSet> {
    let t = read_numeric(reader, name)?;
    check_finite(&t, name)?;
    let p = t.cols();
    if p < 2 {
        return Err(Error::Parse {
            path: name.to_path_buf(),
            line: 1,
            msg: "design needs at least one input column and a response column".into(),
        });
    }
    if t.rows() == 0 {
        return Err(Error::Parse {
            path: name.to_path_buf(),
            line: 2,
            msg: "design has no rows".into(),
        });
    }
    let mut x = Vec::with_capacity(t.rows() * (p - 1));
    let mut y = Vec::with_capacity(t.rows());
    for row in t.values.chunks(p) {
        x.extend_from_slice(&row[..p - 1]);
        y.push(row[p - 1]);
    }
    DesignSet::new(x, y, p - 1)
}

/// Points CSV (predictive grid): returns row-major coordinates, the
/// dimension and the column names.
pub fn read_points(path: &Path) -> Result<(Vec<f64>, usize, Vec<String>)> {
    read_points_from(open(path)?, path)
}

pub fn read_points_from<R: Read>(reader: R, name: &Path) -> Result<(Vec<f64>, usize, Vec<String>)> {
    let t = read_numeric(reader, name)?;
    check_finite(&t, name)?;
    if t.rows() == 0 {
        return Err(Error::Parse {
            path: name.to_path_buf(),
            line: 2,
            msg: "no points".into(),
        });
    }
    let dim = t.cols();
    Ok((t.values, dim, t.header))
}

fn coord_names(dim: usize, names: Option<&[String]>) -> Vec<String> {
    match names {
        Some(n) if n.len() == dim => n.to_vec(),
        _ => (1..=dim).map(|i| format!("x{i}")).collect(),
    }
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(false).from_writer(w)
}

fn io_err(e: std::io::Error) -> Error {
    Error::Io {
        path: PathBuf::from("<output>"),
        source: e,
    }
}

/// `step,row_id,<coords>,criterion_value,vx_after`; steps count from 1.
pub fn write_trace<W: Write>(w: W, design: &DesignSet, steps: &[TraceStep], names: Option<&[String]>) -> Result<()> {
    let mut out = csv_writer(w);
    let mut head = vec!["step".to_string(), "row_id".to_string()];
    head.extend(coord_names(design.dim(), names));
    head.extend(["criterion_value".to_string(), "vx_after".to_string()]);
    out.write_record(&head)?;
    for (i, s) in steps.iter().enumerate() {
        let mut rec = vec![(i + 1).to_string(), s.row.to_string()];
        rec.extend(design.x(s.row).iter().map(|&v| fmt_f64(v)));
        rec.push(fmt_f64(s.value));
        rec.push(fmt_f64(s.vx_after));
        out.write_record(&rec)?;
    }
    out.flush().map_err(io_err)
}

/// One row of predictions.csv.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRow {
    pub coords: Vec<f64>,
    pub mean: f64,
    pub scale2: f64,
    pub dof: usize,
    pub variance: f64,
    pub theta_hat: f64,
    pub n_used: usize,
    pub status: String,
}

pub const PREDICTION_FIELDS: [&str; 7] = ["mean", "scale2", "dof", "variance", "theta_hat", "n_used", "status"];

/// Rows of predictions.csv for a global run over `grid`.
pub fn prediction_rows(grid: &[f64], dim: usize, res: &GlobalResult) -> Vec<PredictionRow> {
    grid.chunks(dim)
        .zip(res.predictions.iter().zip(&res.status))
        .map(|(x, (p, s))| PredictionRow {
            coords: x.to_vec(),
            mean: p.mean,
            scale2: p.scale2,
            dof: p.dof,
            variance: p.variance,
            theta_hat: p.theta_hat,
            n_used: p.n_used,
            status: s.code().to_string(),
        })
        .collect()
}

pub fn write_predictions<W: Write>(w: W, rows: &[PredictionRow], names: Option<&[String]>) -> Result<()> {
    let dim = rows.first().map_or(names.map_or(0, <[String]>::len), |r| r.coords.len());
    let mut out = csv_writer(w);
    let mut head = coord_names(dim, names);
    head.extend(PREDICTION_FIELDS.iter().map(|s| s.to_string()));
    out.write_record(&head)?;
    for r in rows {
        let mut rec: Vec<String> = r.coords.iter().map(|&v| fmt_f64(v)).collect();
        rec.extend([
            fmt_f64(r.mean),
            fmt_f64(r.scale2),
            r.dof.to_string(),
            fmt_f64(r.variance),
            fmt_f64(r.theta_hat),
            r.n_used.to_string(),
            r.status.clone(),
        ]);
        out.write_record(&rec)?;
    }
    out.flush().map_err(io_err)
}

pub fn read_predictions<R: Read>(reader: R, name: &Path) -> Result<Vec<PredictionRow>> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: name.to_path_buf(),
        line,
        msg,
    };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let head = rdr.headers()?.clone();
    let nf = PREDICTION_FIELDS.len();
    if head.len() <= nf || head.iter().skip(head.len() - nf).ne(PREDICTION_FIELDS.iter().copied()) {
        return Err(parse_err(1, "not a predictions table".into()));
    }
    let dim = head.len() - nf;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let f = |i: usize| -> Result<f64> {
            rec[i].parse().map_err(|_| parse_err(line, format!("`{}` is not a number", &rec[i])))
        };
        let u = |i: usize| -> Result<usize> {
            rec[i].parse().map_err(|_| parse_err(line, format!("`{}` is not a count", &rec[i])))
        };
        rows.push(PredictionRow {
            coords: (0..dim).map(f).collect::<Result<_>>()?,
            mean: f(dim)?,
            scale2: f(dim + 1)?,
            dof: u(dim + 2)?,
            variance: f(dim + 3)?,
            theta_hat: f(dim + 4)?,
            n_used: u(dim + 5)?,
            status: rec[dim + 6].to_string(),
        });
    }
    Ok(rows)
}

pub const METRICS_HEADER: [&str; 9] = [
    "problem",
    "method",
    "rep",
    "rmse",
    "sqrt_one_minus_nse",
    "coverage95",
    "mean_sd",
    "seconds",
    "failures",
];

/// metrics.csv; `rep` is `mean` on aggregate rows. Without `timing` the
/// seconds column is left empty so that reruns are byte-identical.
pub fn write_metrics<W: Write>(w: W, rows: &[BenchRow], timing: bool) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(METRICS_HEADER)?;
    for r in rows {
        let m = &r.metrics;
        out.write_record([
            r.problem.name().to_string(),
            r.method.name().to_string(),
            r.rep.map_or("mean".to_string(), |k| k.to_string()),
            fmt_f64(m.rmse),
            fmt_f64(m.sqrt_one_minus_nse),
            fmt_f64(m.coverage95),
            fmt_f64(m.mean_sd),
            if timing { fmt_f64(m.seconds) } else { String::new() },
            r.failures.to_string(),
        ])?;
    }
    out.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{Method, MetricsReport, Problem};
    use proptest::prelude::*;

    #[test]
    fn design_parse_and_errors() {
        let d = read_design_from("a,b,y\n0,1,2\n3,4,5\n".as_bytes(), Path::new("d.csv")).unwrap();
        assert_eq!((d.len(), d.dim()), (2, 2));
        assert_eq!(d.y(1), 5.0);
        let e = read_design_from("a,y\n0,1\n3,x\n".as_bytes(), Path::new("d.csv")).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
        let e = read_design_from("a,y\n0,1\n3\n".as_bytes(), Path::new("d.csv")).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
        assert!(read_design_from("y\n1\n".as_bytes(), Path::new("d.csv")).is_err());
        assert!(read_design_from("a,y\n".as_bytes(), Path::new("d.csv")).is_err());
        assert!(read_design_from("a,y\nNaN,1\n".as_bytes(), Path::new("d.csv")).is_err());
    }

    proptest! {
        #[test]
        fn float_round_trip(v in any::<f64>()) {
            let back: f64 = fmt_f64(v).parse().unwrap();
            if v.is_nan() {
                prop_assert!(back.is_nan());
            } else {
                prop_assert_eq!(back.to_bits(), v.to_bits());
            }
        }

        #[test]
        fn predictions_round_trip(vals in prop::collection::vec((any::<f64>(), any::<f64>(), 0usize..500), 1..20)) {
            let rows: Vec<PredictionRow> = vals
                .iter()
                .map(|&(a, b, n)| PredictionRow {
                    coords: vec![a, b],
                    mean: b,
                    scale2: a.abs(),
                    dof: n,
                    variance: a * b,
                    theta_hat: b.abs(),
                    n_used: n,
                    status: "ok".into(),
                })
                .collect();
            let mut buf = Vec::new();
            write_predictions(&mut buf, &rows, None).unwrap();
            let back = read_predictions(buf.as_slice(), Path::new("p.csv")).unwrap();
            let mut again = Vec::new();
            write_predictions(&mut again, &back, None).unwrap();
            prop_assert_eq!(buf, again);
        }
    }

    #[test]
    fn metrics_table_layout() {
        let m = MetricsReport {
            rmse: 0.5,
            sqrt_one_minus_nse: 0.1,
            coverage95: 1.0,
            mean_sd: 2.0,
            seconds: 3.25,
        };
        let rows = vec![
            BenchRow { problem: Problem::Borehole, method: Method::Alc2, rep: Some(0), metrics: m, failures: 0 },
            BenchRow { problem: Problem::Borehole, method: Method::Alc2, rep: None, metrics: m, failures: 0 },
        ];
        let mut buf = Vec::new();
        write_metrics(&mut buf, &rows, false).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], METRICS_HEADER.join(","));
        assert!(lines[1].starts_with("borehole,alc2,0,5.0000000000000000e-1,"));
        assert!(lines[2].contains(",mean,") && lines[2].ends_with(",,0"));
        let mut timed = Vec::new();
        write_metrics(&mut timed, &rows, true).unwrap();
        assert!(String::from_utf8(timed).unwrap().contains("3.2500000000000000e0"));
    }
}
