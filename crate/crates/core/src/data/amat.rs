//! `.amat` text files: one example per line, whitespace-separated decimals,
//! label last.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn load_amat(path: impl AsRef<Path>, features: usize) -> Result<Dataset> {
    load_amat_limited(path, features, None)
}

/// Like [`load_amat`] but stops after `limit` examples.
pub fn load_amat_limited(path: impl AsRef<Path>, features: usize, limit: Option<usize>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_amat(BufReader::new(file), features, limit, path)
}

/// Parses `.amat` rows from any reader. `origin` is only used in error messages.
pub fn parse_amat<R: BufRead>(reader: R, features: usize, limit: Option<usize>, origin: &Path) -> Result<Dataset> {
    if features == 0 {
        return Err(Error::InvalidInput("feature count must be positive".into()));
    }
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        if limit.is_some_and(|l| labels.len() >= l) {
            break;
        }
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != features + 1 {
            return Err(Error::Format {
                path: origin.to_path_buf(),
                line: line_no,
                expected: features + 1,
                found: tokens.len(),
            });
        }
        let parse = |token: &str| -> Result<f64> {
            token
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    path: origin.to_path_buf(),
                    line: line_no,
                    token: token.to_owned(),
                })
        };
        for token in &tokens[..features] {
            values.push(parse(token)?);
        }
        let label = parse(tokens[features])?;
        if label < 0.0 {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                line: line_no,
                token: tokens[features].to_owned(),
            });
        }
        labels.push(label.trunc() as usize);
    }
    if labels.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} contains no examples",
            origin.display()
        )));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(Tensor::new(vec![labels.len(), features], values)?, labels, classes)
}

/// Renders a dataset in `.amat` layout (shortest round-trip decimal formatting).
pub fn write_amat(dataset: &Dataset) -> String {
    let mut out = String::new();
    for (i, &y) in dataset.labels().iter().enumerate() {
        for v in dataset.features().row(i) {
            write!(out, "{v} ").expect("writing to a String");
        }
        writeln!(out, "{y}").expect("writing to a String");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str, d: usize) -> Result<Dataset> {
        parse_amat(text.as_bytes(), d, None, Path::new("mem.amat"))
    }

    #[test]
    fn direct_parse_with_float_label() {
        let d = parse("0.0 1.0 0.5 2\n", 3).unwrap();
        assert_eq!(d.features().data(), &[0.0, 1.0, 0.5]);
        assert_eq!(d.labels(), &[2]);
        let d = parse("  0.25   0.75\t7.0  \n\n", 2).unwrap();
        assert_eq!(d.labels(), &[7]);
        assert_eq!(d.classes(), 8);
    }

    #[test]
    fn counts_lines_at_full_width() {
        let row = |y: usize| {
            let mut s = "0.5 ".repeat(784);
            s.push_str(&format!("{y}\n"));
            s
        };
        let text: String = (0..3).map(row).collect();
        let d = parse(&text, 784).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.dim(), 784);
        let limited = parse_amat(text.as_bytes(), 784, Some(2), Path::new("m")).unwrap();
        assert_eq!(limited.len(), 2);
    }

    #[test]
    fn malformed_lines_carry_line_numbers() {
        match parse("1 2 0\n1 x 0\n", 2).unwrap_err() {
            Error::Parse { line, token, .. } => assert_eq!((line, token.as_str()), (2, "x")),
            other => panic!("unexpected {other:?}"),
        }
        match parse("1 2 0\n1 2\n", 2).unwrap_err() {
            Error::Format {
                line,
                expected,
                found,
                ..
            } => assert_eq!((line, expected, found), (2, 3, 2)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse("1 2 -1\n", 2).is_err());
        assert!(parse("", 2).is_err());
    }

    proptest! {
        #[test]
        fn write_then_load_round_trips(
            rows in proptest::collection::vec((proptest::collection::vec(-1e3f64..1e3, 5), 0usize..4), 1..20)
        ) {
            let data: Vec<f64> = rows.iter().flat_map(|(x, _)| x.clone()).collect();
            let labels: Vec<usize> = rows.iter().map(|(_, y)| *y).collect();
            let classes = labels.iter().max().unwrap() + 1;
            let original = Dataset::new(Tensor::new(vec![rows.len(), 5], data).unwrap(), labels, classes).unwrap();
            let text = write_amat(&original);
            let back = parse(&text, 5).unwrap();
            prop_assert_eq!(back.labels(), original.labels());
            for (a, b) in back.features().data().iter().zip(original.features().data()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}
