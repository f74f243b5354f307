//! CSV and text-file helpers.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;
use sqmc::models::Observations;

/// Shortest decimal text that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v != 0.0 && v.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

/// Writes `t, <prefix>0, <prefix>1, ...` rows.
pub fn write_series<W: Write>(out: W, prefix: &str, dim: usize, values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((0..dim).map(|i| format!("{prefix}{i}")));
    w.write_record(&header)?;
    for (t, row) in values.chunks_exact(dim).enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(row.iter().map(|&v| fmt_f64(v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_observations<W: Write>(out: W, obs: &Observations) -> Result<()> {
    write_series(out, "y", obs.dim(), obs.values())
}

/// Reads a `t, y0, y1, ...` file; `t` must run `0, 1, 2, ...`.
pub fn read_observations<R: Read>(input: R) -> Result<Observations> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let dim = r.headers()?.len().checked_sub(1).filter(|&d| d > 0).context("need a t column and at least one y column")?;
    let mut values = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let t: usize = rec[0].parse().with_context(|| format!("row {}: bad t `{}`", i + 1, &rec[0]))?;
        if t != i {
            bail!("row {}: expected t = {i}, found {t}", i + 1);
        }
        for field in rec.iter().skip(1) {
            values.push(field.parse::<f64>().with_context(|| format!("row {}: bad value `{field}`", i + 1))?);
        }
    }
    Ok(Observations::new(dim, values)?)
}

pub fn load_observations(path: &Path) -> Result<Observations> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_observations(f).with_context(|| format!("reading {}", path.display()))
}

/// Square matrix given as rows of comma- or whitespace-separated numbers;
/// `#` starts a comment.
pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<f64>().with_context(|| format!("bad number `{s}`")))
                .collect()
        })
        .collect::<Result<_>>()?;
    let p = rows.len();
    if p == 0 || rows.iter().any(|r| r.len() != p) {
        bail!("expected a square matrix, got {p} rows of lengths {:?}", rows.iter().map(Vec::len).collect::<Vec<_>>());
    }
    Ok(DMatrix::from_fn(p, p, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.0, -0.0, 0.1, 1.0 / 3.0, 1e-300, -2.5e20, 123456.789, f64::MIN_POSITIVE, 5e-324] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap().to_bits(), v.to_bits(), "{v}");
        }
        assert_eq!(fmt_f64(1e-7), "1e-7");
    }

    #[test]
    fn observations_round_trip() {
        let obs = Observations::new(2, vec![0.1, -2.0, 1e-9, 3.5, 7.0, 8.0]).unwrap();
        let mut buf = Vec::new();
        write_observations(&mut buf, &obs).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("t,y0,y1\n0,0.1,-2\n"));
        assert_eq!(read_observations(&buf[..]).unwrap(), obs);
        assert!(read_observations("t,y0\n1,3\n".as_bytes()).is_err());
    }

    #[test]
    fn matrices() {
        let m = parse_matrix("# sigma\n1, 0.5\n0.5 2\n").unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0]));
        assert!(parse_matrix("1 2\n3").is_err());
        assert!(parse_matrix("").is_err());
    }
}
