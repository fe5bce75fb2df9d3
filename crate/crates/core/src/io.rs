//! Text formats for tensors and fitted models.
//!
//! Tensors use a coordinate format: a `dims I J K` header followed by
//! `i j k value` lines with 1-based indices. Omitted coordinates are zero.
//!
//! Models use a line-oriented document tagged `btdmodel-v1`:
//!
//! ```text
//! btdmodel-v1
//! dims 5 6 7
//! structure 1 2
//! fit {"final_cost":...}        (or `fit none`)
//! block 1
//! A 5 1
//! <one row per line>
//! B 6 1
//! ...
//! c 7
//! <values>
//! block 2
//! ...
//! ```
//!
//! Values are written with 17 significant digits, which round-trips every
//! `f64` exactly. Blank lines and lines starting with `#` are ignored.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::ll1::{BlockStructure, FitInfo, Ll1Model};
use crate::tensor::{DenseTensor3, Matrix};

pub const MODEL_FORMAT_TAG: &str = "btdmodel-v1";

fn fmt_value(v: f64) -> String {
    format!("{v:.16e}")
}

/// Non-comment lines with their 1-based line numbers.
fn content_lines<R: Read>(r: R) -> impl Iterator<Item = Result<(usize, String)>> {
    BufReader::new(r)
        .lines()
        .enumerate()
        .filter_map(|(n, line)| match line {
            Err(e) => Some(Err(Error::from(e))),
            Ok(l) => {
                let t = l.trim();
                (!t.is_empty() && !t.starts_with('#')).then(|| Ok((n + 1, t.to_string())))
            }
        })
}

fn parse_usize(tok: &str, line: usize, what: &str) -> Result<usize> {
    tok.parse()
        .map_err(|_| Error::parse(line, format!("expected {what}, found {tok:?}")))
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| Error::parse(line, format!("expected a number, found {tok:?}")))?;
    if !v.is_finite() {
        return Err(Error::parse(line, format!("non-finite value {tok:?}")));
    }
    Ok(v)
}

fn parse_dims(rest: &[&str], line: usize) -> Result<[usize; 3]> {
    if rest.len() != 3 {
        return Err(Error::parse(line, "expected `dims I J K`"));
    }
    let mut dims = [0; 3];
    for (d, tok) in dims.iter_mut().zip(rest) {
        *d = parse_usize(tok, line, "a dimension")?;
        if *d == 0 {
            return Err(Error::parse(line, "dimensions must be positive"));
        }
    }
    Ok(dims)
}

pub fn write_tensor<W: Write>(t: &DenseTensor3, w: W) -> Result<()> {
    let mut w = BufWriter::new(w);
    let [ni, nj, nk] = t.dims();
    writeln!(w, "dims {ni} {nj} {nk}")?;
    for k in 0..nk {
        for j in 0..nj {
            for i in 0..ni {
                writeln!(w, "{} {} {} {}", i + 1, j + 1, k + 1, fmt_value(t.get(i, j, k)))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_tensor<R: Read>(r: R) -> Result<DenseTensor3> {
    let mut lines = content_lines(r);
    let (hline, header) = lines.next().ok_or_else(|| Error::parse(1, "empty tensor file"))??;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.first() != Some(&"dims") {
        return Err(Error::parse(hline, "first line must be `dims I J K`"));
    }
    let dims = parse_dims(&toks[1..], hline)?;
    let mut data = vec![0.0; dims.iter().product()];
    let mut seen = vec![false; data.len()];
    for item in lines {
        let (n, l) = item?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() != 4 {
            return Err(Error::parse(n, "expected `i j k value`"));
        }
        let mut idx = [0; 3];
        for (m, (slot, tok)) in idx.iter_mut().zip(&toks[..3]).enumerate() {
            let v = parse_usize(tok, n, "a 1-based index")?;
            if v == 0 || v > dims[m] {
                return Err(Error::parse(n, format!("index {v} outside 1..={} in mode {}", dims[m], m + 1)));
            }
            *slot = v - 1;
        }
        let off = idx[0] + dims[0] * (idx[1] + dims[1] * idx[2]);
        if seen[off] {
            return Err(Error::parse(
                n,
                format!("duplicate entry ({} {} {})", idx[0] + 1, idx[1] + 1, idx[2] + 1),
            ));
        }
        seen[off] = true;
        data[off] = parse_f64(toks[3], n)?;
    }
    DenseTensor3::new(dims, data)
}

pub fn save_tensor(t: &DenseTensor3, path: impl AsRef<Path>) -> Result<()> {
    write_tensor(t, File::create(path)?)
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<DenseTensor3> {
    read_tensor(File::open(path)?)
}

fn write_matrix<W: Write>(w: &mut W, tag: &str, m: &Matrix) -> Result<()> {
    writeln!(w, "{tag} {} {}", m.nrows(), m.ncols())?;
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|&v| fmt_value(v)).collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    Ok(())
}

pub fn write_model<W: Write>(model: &Ll1Model, w: W) -> Result<()> {
    let mut w = BufWriter::new(w);
    let [ni, nj, nk] = model.dims();
    writeln!(w, "{MODEL_FORMAT_TAG}")?;
    writeln!(w, "dims {ni} {nj} {nk}")?;
    let ranks: Vec<String> = model.structure().ranks().iter().map(|l| l.to_string()).collect();
    writeln!(w, "structure {}", ranks.join(" "))?;
    match &model.fit {
        Some(info) => {
            let json = serde_json::to_string(info).map_err(|e| Error::Io(std::io::Error::other(e)))?;
            writeln!(w, "fit {json}")?;
        }
        None => writeln!(w, "fit none")?,
    }
    for r in 0..model.structure().num_blocks() {
        writeln!(w, "block {}", r + 1)?;
        write_matrix(&mut w, "A", &model.block_a(r).into_owned())?;
        write_matrix(&mut w, "B", &model.block_b(r).into_owned())?;
        writeln!(w, "c {nk}")?;
        let c: Vec<String> = model.block_c(r).iter().map(|&v| fmt_value(v)).collect();
        writeln!(w, "{}", c.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

struct Lines<I> {
    inner: I,
    last: usize,
}

impl<I: Iterator<Item = Result<(usize, String)>>> Lines<I> {
    fn next_line(&mut self, what: &str) -> Result<(usize, String)> {
        match self.inner.next() {
            Some(item) => {
                let (n, l) = item?;
                self.last = n;
                Ok((n, l))
            }
            None => Err(Error::parse(self.last + 1, format!("unexpected end of file, expected {what}"))),
        }
    }

    /// Next line, which must start with `keyword`; returns the remaining tokens.
    fn keyword(&mut self, keyword: &str) -> Result<(usize, Vec<String>)> {
        let (n, l) = self.next_line(keyword)?;
        let mut toks = l.split_whitespace().map(str::to_string);
        if toks.next().as_deref() != Some(keyword) {
            return Err(Error::parse(n, format!("expected `{keyword}` line")));
        }
        Ok((n, toks.collect()))
    }

    fn values(&mut self, count: usize) -> Result<Vec<f64>> {
        let (n, l) = self.next_line("values")?;
        let vals = l.split_whitespace().map(|t| parse_f64(t, n)).collect::<Result<Vec<_>>>()?;
        if vals.len() != count {
            return Err(Error::parse(n, format!("expected {count} values, found {}", vals.len())));
        }
        Ok(vals)
    }

    fn matrix(&mut self, tag: &str, rows: usize, cols: usize) -> Result<Matrix> {
        let (n, toks) = self.keyword(tag)?;
        let shape: Vec<usize> = toks
            .iter()
            .map(|t| parse_usize(t, n, "a matrix size"))
            .collect::<Result<_>>()?;
        if shape != [rows, cols] {
            return Err(Error::parse(n, format!("{tag} must be {rows}x{cols}, found {shape:?}")));
        }
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let row = self.values(cols)?;
            for (j, v) in row.into_iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        Ok(m)
    }
}

pub fn read_model<R: Read>(r: R) -> Result<Ll1Model> {
    let mut lines = Lines {
        inner: content_lines(r),
        last: 0,
    };
    let (n, tag) = lines.next_line("format tag")?;
    if tag != MODEL_FORMAT_TAG {
        return Err(Error::parse(n, format!("expected format tag `{MODEL_FORMAT_TAG}`, found {tag:?}")));
    }
    let (n, toks) = lines.keyword("dims")?;
    let toks: Vec<&str> = toks.iter().map(String::as_str).collect();
    let [ni, nj, nk] = parse_dims(&toks, n)?;
    let (n, toks) = lines.keyword("structure")?;
    let ranks = toks
        .iter()
        .map(|t| parse_usize(t, n, "a block rank"))
        .collect::<Result<Vec<_>>>()?;
    let structure = BlockStructure::new(ranks).map_err(|e| Error::parse(n, e.to_string()))?;
    let (n, l) = lines.next_line("fit")?;
    let fit = match l.strip_prefix("fit") {
        Some(rest) if rest.trim() == "none" => None,
        Some(rest) => Some(
            serde_json::from_str::<FitInfo>(rest.trim())
                .map_err(|e| Error::parse(n, format!("bad fit metadata: {e}")))?,
        ),
        None => return Err(Error::parse(n, "expected `fit` line")),
    };
    let mut blocks = Vec::with_capacity(structure.num_blocks());
    for (r, &l) in structure.ranks().iter().enumerate() {
        let (n, toks) = lines.keyword("block")?;
        if toks != [(r + 1).to_string()] {
            return Err(Error::parse(n, format!("expected `block {}`", r + 1)));
        }
        let a = lines.matrix("A", ni, l)?;
        let b = lines.matrix("B", nj, l)?;
        let (n, toks) = lines.keyword("c")?;
        if toks != [nk.to_string()] {
            return Err(Error::parse(n, format!("expected `c {nk}`")));
        }
        blocks.push((a, b, lines.values(nk)?));
    }
    if let Some(extra) = lines.inner.next() {
        let (n, _) = extra?;
        return Err(Error::parse(n, "unexpected content after the last block"));
    }
    let mut model = Ll1Model::from_blocks(structure, &blocks)?;
    model.fit = fit;
    Ok(model)
}

pub fn save_model(model: &Ll1Model, path: impl AsRef<Path>) -> Result<()> {
    write_model(model, File::create(path)?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Ll1Model> {
    read_model(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ll1::{random_init, FitInfo, InitKind};

    fn tensor_text(t: &DenseTensor3) -> String {
        let mut buf = Vec::new();
        write_tensor(t, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn tensor_header_and_entry_count() {
        let t = DenseTensor3::from_fn([2, 2, 2], |i, j, k| (i + 2 * j + 4 * k) as f64).unwrap();
        let text = tensor_text(&t);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "dims 2 2 2");
        assert_eq!(lines.len(), 9);
        assert_eq!(read_tensor(text.as_bytes()).unwrap(), t);
    }

    #[test]
    fn tensor_round_trip_is_bit_exact() {
        let vals = [0.1, -1.0 / 3.0, 1e-300, -2.5e300, f64::MIN_POSITIVE, 0.0, -0.0, std::f64::consts::PI];
        let t = DenseTensor3::new([2, 4, 1], vals.to_vec()).unwrap();
        let back = read_tensor(tensor_text(&t).as_bytes()).unwrap();
        for (a, b) in t.as_slice().iter().zip(back.as_slice()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn sparse_files_fill_zeros() {
        let t = read_tensor("# sparse\ndims 2 1 2\n2 1 2 5.5\n\n".as_bytes()).unwrap();
        assert_eq!(t.as_slice(), &[0.0, 0.0, 0.0, 5.5]);
    }

    #[test]
    fn tensor_parse_errors_carry_line_numbers() {
        let cases = [
            ("", 1),
            ("dims 2 2\n", 1),
            ("dims 2 2 0\n", 1),
            ("dims 2 2 2\n1 1 1 1.0\n1 1 1 2.0\n", 3),
            ("dims 2 2 2\n3 1 1 1.0\n", 2),
            ("dims 2 2 2\n0 1 1 1.0\n", 2),
            ("dims 2 2 2\n1 1 1 abc\n", 2),
            ("dims 2 2 2\n1 1 1 NaN\n", 2),
            ("dims 2 2 2\n1 1 1\n", 2),
        ];
        for (text, line) in cases {
            match read_tensor(text.as_bytes()) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    fn model_text(m: &Ll1Model) -> String {
        let mut buf = Vec::new();
        write_model(m, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn model_round_trip() {
        let s = BlockStructure::new(vec![1, 3, 2]).unwrap();
        let mut m = random_init([5, 6, 4], &s, 8).unwrap();
        assert_eq!(read_model(model_text(&m).as_bytes()).unwrap(), m);
        m.fit = Some(FitInfo {
            final_cost: 1.0 / 3.0,
            relative_error: 1e-17,
            iterations: 42,
            init: InitKind::Gevd,
            converged: true,
            restarts_converged: 2,
            restarts: 3,
            used_pseudoinverse: false,
            gevd_fallback: true,
            warnings: vec![],
        });
        let text = model_text(&m);
        assert!(text.starts_with("btdmodel-v1\ndims 5 6 4\nstructure 1 3 2\nfit {"));
        let back = read_model(text.as_bytes()).unwrap();
        assert_eq!(back, m);
        for (x, y) in back.a().iter().zip(m.a().iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn model_parse_errors() {
        let s = BlockStructure::new(vec![2]).unwrap();
        let good = model_text(&random_init([3, 3, 2], &s, 1).unwrap());
        assert!(read_model(good.replace("btdmodel-v1", "btdmodel-v2").as_bytes()).is_err());
        assert!(read_model(good.replace("structure 2", "structure 0").as_bytes()).is_err());
        assert!(read_model(good.replace("A 3 2", "A 3 3").as_bytes()).is_err());
        let truncated: String = good.lines().take(8).map(|l| format!("{l}\n")).collect();
        assert!(matches!(read_model(truncated.as_bytes()), Err(Error::Parse { .. })));
        assert!(read_model(format!("{good}block 2\n").as_bytes()).is_err());
    }
}
