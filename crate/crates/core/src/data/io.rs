//! Plain-text dataset files.
//!
//! ```text
//! #dynskip-dataset v1 variant=single T=11 seed=7
//! 8,5,1,7,4,3,0,2,9,9,3;7
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{label_oracle, Dataset, DatasetSpec, Example, Variant, NUM_DIGITS};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitHeader {
    pub variant: Variant,
    pub seq_len: usize,
    pub seed: u64,
}

impl SplitHeader {
    fn render(&self) -> String {
        format!(
            "#dynskip-dataset v1 variant={} T={} seed={}",
            self.variant.name(),
            self.seq_len,
            self.seed
        )
    }

    fn parse(line: &str) -> Result<Self> {
        let bad = |message: String| Error::Parse { line: 1, message };
        let mut fields = line.split_whitespace();
        if fields.next() != Some("#dynskip-dataset") || fields.next() != Some("v1") {
            return Err(bad(format!("expected a v1 dataset header, found {line:?}")));
        }
        let (mut variant, mut seq_len, mut seed) = (None, None, None);
        for field in fields {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| bad(format!("header field {field:?} is not key=value")))?;
            match key {
                "variant" => variant = Some(value.parse().map_err(|_| bad(format!("bad variant {value:?}")))?),
                "T" => seq_len = Some(value.parse().map_err(|_| bad(format!("bad length {value:?}")))?),
                "seed" => seed = Some(value.parse().map_err(|_| bad(format!("bad seed {value:?}")))?),
                _ => return Err(bad(format!("unknown header field {key:?}"))),
            }
        }
        Ok(SplitHeader {
            variant: variant.ok_or_else(|| bad("header lacks variant".into()))?,
            seq_len: seq_len.ok_or_else(|| bad("header lacks T".into()))?,
            seed: seed.ok_or_else(|| bad("header lacks seed".into()))?,
        })
    }
}

/// Parses one `tokens;label` line and checks the label against the oracle.
/// `line_no` is only used for error messages.
pub fn parse_line(line: &str, line_no: usize, variant: Variant) -> Result<Example> {
    let bad = |message: String| Error::Parse { line: line_no, message };
    let (tokens, label) = line
        .split_once(';')
        .ok_or_else(|| bad("missing ';' between tokens and label".into()))?;
    let digit = |s: &str| -> Result<usize> {
        let v: usize = s
            .trim()
            .parse()
            .map_err(|_| bad(format!("{s:?} is not an integer")))?;
        if v >= NUM_DIGITS {
            return Err(bad(format!("{v} is not a digit")));
        }
        Ok(v)
    };
    let tokens = tokens.split(',').map(digit).collect::<Result<Vec<_>>>()?;
    let label = digit(label)?;
    let expected = label_oracle(&tokens, variant).map_err(|e| bad(e.to_string()))?;
    if expected != label {
        return Err(Error::Integrity {
            line: line_no,
            expected,
            found: label,
        });
    }
    Ok(Example { tokens, label })
}

fn render_split(header: &SplitHeader, examples: &[Example]) -> String {
    let mut out = header.render();
    out.push('\n');
    for ex in examples {
        for (i, tok) in ex.tokens.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write!(out, "{tok}").unwrap();
        }
        writeln!(out, ";{}", ex.label).unwrap();
    }
    out
}

pub fn write_split(path: &Path, header: &SplitHeader, examples: &[Example]) -> Result<()> {
    fs::write(path, render_split(header, examples)).map_err(|e| Error::io(path, e))
}

pub fn read_split(path: &Path) -> Result<(SplitHeader, Vec<Example>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = SplitHeader::parse(lines.next().unwrap_or(""))?;
    let mut examples = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let ex = parse_line(line, line_no, header.variant)?;
        if ex.len() != header.seq_len {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {} tokens, found {}", header.seq_len, ex.len()),
            });
        }
        examples.push(ex);
    }
    Ok((header, examples))
}

pub const SPLIT_FILES: [&str; 3] = ["train.txt", "dev.txt", "test.txt"];

/// Writes `train.txt`, `dev.txt` and `test.txt` into `dir`.
pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let header = SplitHeader {
        variant: ds.spec.variant,
        seq_len: ds.spec.seq_len,
        seed: ds.spec.seed,
    };
    for (name, split) in SPLIT_FILES.iter().zip([&ds.train, &ds.dev, &ds.test]) {
        write_split(&dir.join(name), &header, split)?;
    }
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let mut splits = Vec::new();
    let mut header = None;
    for name in SPLIT_FILES {
        let (h, examples) = read_split(&dir.join(name))?;
        if let Some(prev) = &header {
            if prev != &h {
                return Err(Error::contract(format!("{name} header {h:?} disagrees with {prev:?}")));
            }
        }
        header = Some(h);
        splits.push(examples);
    }
    let header = header.expect("three splits were read");
    let test = splits.pop().unwrap();
    let dev = splits.pop().unwrap();
    let train = splits.pop().unwrap();
    Ok(Dataset {
        spec: DatasetSpec {
            variant: header.variant,
            seq_len: header.seq_len,
            train: train.len(),
            dev: dev.len(),
            test: test.len(),
            seed: header.seed,
            allow_custom_len: header.seq_len != header.variant.default_len(),
        },
        train,
        dev,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate;

    #[test]
    fn printed_line_parses() {
        let ex = parse_line("8,5,1,7,4,3;7", 1, Variant::Single).unwrap();
        assert_eq!(ex.tokens, vec![8, 5, 1, 7, 4, 3]);
        assert_eq!(ex.label, 7);
    }

    #[test]
    fn wrong_label_is_an_integrity_error() {
        let err = parse_line("8,5,1,7,4,3;9", 4, Variant::Single).unwrap_err();
        assert!(matches!(err, Error::Integrity { line: 4, expected: 7, found: 9 }));
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        for line in ["8,5,1", "8,x,1;1", "8,5,12;1", ";3"] {
            match parse_line(line, 17, Variant::Single) {
                Err(Error::Parse { line: 17, .. }) => {}
                other => panic!("{line:?} gave {other:?}"),
            }
        }
    }

    #[test]
    fn header_round_trip() {
        let h = SplitHeader {
            variant: Variant::Double,
            seq_len: 21,
            seed: 99,
        };
        assert_eq!(h.render(), "#dynskip-dataset v1 variant=double T=21 seed=99");
        assert_eq!(SplitHeader::parse(&h.render()).unwrap(), h);
        assert!(SplitHeader::parse("#dynskip-dataset v2 variant=double T=21 seed=99").is_err());
    }

    #[test]
    fn dataset_round_trip_is_lossless() {
        let spec = DatasetSpec {
            train: 1000,
            dev: 20,
            test: 20,
            ..DatasetSpec::reference(Variant::Double, 3)
        };
        let ds = generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &ds).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn corrupted_file_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.txt");
        fs::write(
            &path,
            "#dynskip-dataset v1 variant=single T=6 seed=1\n8,5,1,7,4,3;7\n8,5,1,7,4,3;9\n",
        )
        .unwrap();
        assert!(matches!(read_split(&path), Err(Error::Integrity { line: 3, .. })));
    }
}
