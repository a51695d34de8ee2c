//! CSV artifacts.
//!
//! Tables carry one snake_case header row. Matrices are written row-major
//! under a `# rows=R,cols=C` dimension line followed by a `c0,c1,...`
//! header row.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A CSV table assembled in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(headers: &[&str]) -> Self {
        Table {
            headers: headers.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push<I, T>(&mut self, row: I)
    where
        I: IntoIterator<Item = T>,
        T: ToString,
    {
        let row: Vec<String> = row.into_iter().map(|v| v.to_string()).collect();
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn to_csv_string(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.headers).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

pub fn matrix_to_csv_string(m: &DMatrix<f64>) -> String {
    let mut out = format!("# rows={},cols={}\n", m.nrows(), m.ncols());
    let mut t = Table {
        headers: (0..m.ncols()).map(|i| format!("c{i}")).collect(),
        rows: Vec::with_capacity(m.nrows()),
    };
    for j in 0..m.nrows() {
        t.push(m.row(j).iter());
    }
    out.push_str(&t.to_csv_string());
    out
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    fs::write(path, matrix_to_csv_string(m)).map_err(|e| Error::io(path, e))
}

/// Reads a matrix written by [`write_matrix`]. Plain numeric grids with no
/// dimension line and no header are accepted as well.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matrix(&text).map_err(|msg| Error::MalformedFile {
        path: path.to_path_buf(),
        msg,
    })
}

pub fn parse_matrix(text: &str) -> std::result::Result<DMatrix<f64>, String> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty()).peekable();
    let mut dims = None;
    if let Some(first) = lines.peek() {
        if let Some(rest) = first.trim().strip_prefix('#') {
            dims = Some(parse_dims(rest)?);
            lines.next();
        }
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        match fields
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
        {
            Ok(vals) => rows.push(vals),
            Err(_) if lineno == 0 => continue, // header row
            Err(e) => return Err(format!("data line {}: {e}", lineno + 1)),
        }
    }
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err("ragged rows".into());
    }
    if let Some((r, c)) = dims {
        if r != rows.len() || (r > 0 && c != ncols) {
            return Err(format!("declared {r}x{c} but found {}x{ncols}", rows.len()));
        }
        if r == 0 {
            return Ok(DMatrix::zeros(0, c));
        }
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |j, i| rows[j][i]))
}

fn parse_dims(s: &str) -> std::result::Result<(usize, usize), String> {
    let mut rows = None;
    let mut cols = None;
    for part in s.split(',') {
        let (k, v) = part
            .trim()
            .split_once('=')
            .ok_or_else(|| format!("bad dimension field `{part}`"))?;
        let v: usize = v
            .trim()
            .parse()
            .map_err(|_| format!("bad dimension value `{v}`"))?;
        match k.trim() {
            "rows" => rows = Some(v),
            "cols" => cols = Some(v),
            other => return Err(format!("unknown dimension key `{other}`")),
        }
    }
    Ok((rows.ok_or("missing rows")?, cols.ok_or("missing cols")?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn table_format() {
        let mut t = Table::new(&["snr_db", "trial", "code"]);
        t.push(["-10".to_string(), "0".into(), "3".into()]);
        t.push([5.5, 1.0, -2.0]);
        assert_eq!(t.to_csv_string(), "snr_db,trial,code\n-10,0,3\n5.5,1,-2\n");
    }

    #[test]
    fn plain_grid_and_mismatch() {
        let m = parse_matrix("1,2\n3,4\n").unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        assert!(parse_matrix("# rows=3,cols=2\nc0,c1\n1,2\n").is_err());
        assert!(parse_matrix("1,2\n3\n").is_err());
        assert!(parse_matrix("1,2\n3,x\n").is_err());
    }

    #[test]
    fn missing_file_names_path() {
        let err = read_matrix(Path::new("/nonexistent/grid.csv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/grid.csv"));
    }

    proptest! {
        #[test]
        fn matrix_csv_round_trips(r in 0usize..6, c in 1usize..6, seed in any::<u64>()) {
            let m = DMatrix::from_fn(r, c, |j, i| {
                let x = seed.wrapping_mul(31).wrapping_add((j * 7 + i) as u64) as f64;
                (x * 1e-7).sin() * 1e3
            });
            let back = parse_matrix(&matrix_to_csv_string(&m)).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
