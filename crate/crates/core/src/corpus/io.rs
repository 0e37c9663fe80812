//! Tab-separated dataset files with a one-line header.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use csv::{QuoteStyle, ReaderBuilder, StringRecord, WriterBuilder};

use super::{AdListing, GradedLabel, LabeledSample, UnlabeledPair};
use crate::error::{Error, Result};

pub(crate) const PAIR_COLUMNS: [&str; 4] = ["query", "keyword", "ad_title", "lp_title"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Labeled,
    Unlabeled,
    Clicked,
}

impl DatasetKind {
    pub fn columns(self) -> Vec<&'static str> {
        let mut cols = PAIR_COLUMNS.to_vec();
        match self {
            DatasetKind::Labeled => cols.extend(["ac", "lp"]),
            DatasetKind::Unlabeled => {}
            DatasetKind::Clicked => cols.push("clicked"),
        }
        cols
    }

    pub fn file_name(self) -> &'static str {
        match self {
            DatasetKind::Labeled => "labeled.tsv",
            DatasetKind::Unlabeled => "unlabeled.tsv",
            DatasetKind::Clicked => "clicked.tsv",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Samples {
    Labeled(Vec<LabeledSample>),
    Unlabeled(Vec<UnlabeledPair>),
}

impl Samples {
    pub fn len(&self) -> usize {
        match self {
            Samples::Labeled(v) => v.len(),
            Samples::Unlabeled(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Row-level reader shared by all TSV artifacts. Checks that the header
/// starts with `columns`; extra trailing columns are allowed so scored files
/// can be read back as plain datasets.
pub(crate) struct TsvRows {
    path: PathBuf,
    reader: csv::Reader<BufReader<File>>,
    width: usize,
}

impl TsvRows {
    pub(crate) fn open(path: &Path, columns: &[&str]) -> Result<Option<Self>> {
        let file = File::open(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingArtifact(path.to_path_buf())
            } else {
                Error::io(path, e)
            }
        })?;
        let mut reader = ReaderBuilder::new()
            .delimiter(b'\t')
            .quoting(false)
            .has_headers(true)
            .flexible(true)
            .from_reader(BufReader::new(file));
        let header = reader.headers().map_err(|e| format_err(path, 1, e.to_string()))?.clone();
        if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
            return Ok(None);
        }
        let found: Vec<&str> = header.iter().collect();
        if found.len() < columns.len() || found[..columns.len()] != *columns {
            return Err(format_err(path, 1, format!("expected columns {:?}, found {:?}", columns, found)));
        }
        Ok(Some(Self { path: path.to_path_buf(), reader, width: found.len() }))
    }

    /// Next record and its 1-based line number.
    pub(crate) fn next_row(&mut self) -> Result<Option<(u64, StringRecord)>> {
        let mut rec = StringRecord::new();
        match self.reader.read_record(&mut rec) {
            Ok(false) => Ok(None),
            Ok(true) => {
                let line = rec.position().map_or(0, |p| p.line());
                if rec.len() != self.width {
                    return Err(self.error(line, format!("expected {} fields, found {}", self.width, rec.len())));
                }
                Ok(Some((line, rec)))
            }
            Err(e) => Err(self.error(0, e.to_string())),
        }
    }

    pub(crate) fn error(&self, line: u64, message: impl Into<String>) -> Error {
        format_err(&self.path, line, message)
    }

    pub(crate) fn pair(&self, line: u64, rec: &StringRecord) -> Result<(String, AdListing)> {
        if rec[0].trim().is_empty() {
            return Err(self.error(line, "empty query"));
        }
        Ok((rec[0].to_string(), AdListing::new(&rec[1], &rec[2], &rec[3])))
    }

    pub(crate) fn int<T: std::str::FromStr>(&self, line: u64, rec: &StringRecord, col: usize, name: &str) -> Result<T> {
        rec[col].trim().parse().map_err(|_| self.error(line, format!("{name}: not an integer: {:?}", &rec[col])))
    }
}

fn format_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), line, message: message.into() }
}

pub(crate) fn tsv_writer(path: &Path, columns: &[&str]) -> Result<csv::Writer<BufWriter<File>>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = WriterBuilder::new()
        .delimiter(b'\t')
        .quote_style(QuoteStyle::Never)
        .from_writer(BufWriter::new(file));
    w.write_record(columns).map_err(|e| csv_io(path, e))?;
    Ok(w)
}

pub(crate) fn finish(path: &Path, w: csv::Writer<BufWriter<File>>) -> Result<()> {
    let mut inner = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    inner.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

/// Text fields are written unquoted, so they must not contain separators.
pub(crate) fn check_field(text: &str) -> Result<&str> {
    if text.contains(['\t', '\n', '\r']) {
        return Err(Error::Precondition(format!("field contains a tab or newline: {text:?}")));
    }
    Ok(text)
}

pub(crate) fn pair_fields<'a>(query: &'a str, l: &'a AdListing) -> Result<[&'a str; 4]> {
    Ok([check_field(query)?, check_field(&l.keyword)?, check_field(&l.ad_title)?, check_field(&l.lp_title)?])
}

pub fn save_labeled(path: &Path, samples: &[LabeledSample]) -> Result<()> {
    let mut w = tsv_writer(path, &DatasetKind::Labeled.columns())?;
    for s in samples {
        let [q, k, a, l] = pair_fields(&s.query, &s.listing)?;
        let (ac, lp) = (s.label.ac().to_string(), s.label.lp().to_string());
        w.write_record([q, k, a, l, &ac, &lp]).map_err(|e| csv_io(path, e))?;
    }
    finish(path, w)
}

/// Writes an unlabeled or clicked file; the `clicked` column is emitted when
/// the rows carry click flags.
pub fn save_unlabeled(path: &Path, pairs: &[UnlabeledPair]) -> Result<()> {
    let clicked = pairs.first().is_some_and(|p| p.clicked.is_some());
    if pairs.iter().any(|p| p.clicked.is_some() != clicked) {
        return Err(Error::Precondition("mixed clicked and unclicked rows".into()));
    }
    let kind = if clicked { DatasetKind::Clicked } else { DatasetKind::Unlabeled };
    let mut w = tsv_writer(path, &kind.columns())?;
    for p in pairs {
        let [q, k, a, l] = pair_fields(&p.query, &p.listing)?;
        match p.clicked {
            Some(c) => w.write_record([q, k, a, l, if c { "1" } else { "0" }]),
            None => w.write_record([q, k, a, l]),
        }
        .map_err(|e| csv_io(path, e))?;
    }
    finish(path, w)
}

pub fn load_labeled(path: &Path) -> Result<Vec<LabeledSample>> {
    let Some(mut rows) = TsvRows::open(path, &DatasetKind::Labeled.columns())? else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    while let Some((line, rec)) = rows.next_row()? {
        let (query, listing) = rows.pair(line, &rec)?;
        let ac: u8 = rows.int(line, &rec, 4, "ac")?;
        let lp: u8 = rows.int(line, &rec, 5, "lp")?;
        let label = GradedLabel::new(ac, lp).map_err(|e| rows.error(line, e.to_string()))?;
        out.push(LabeledSample { query, listing, label });
    }
    Ok(out)
}

pub fn load_unlabeled(path: &Path, kind: DatasetKind) -> Result<Vec<UnlabeledPair>> {
    if kind == DatasetKind::Labeled {
        return Err(Error::Precondition("load_unlabeled called with labeled kind".into()));
    }
    let Some(mut rows) = TsvRows::open(path, &kind.columns())? else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    while let Some((line, rec)) = rows.next_row()? {
        let (query, listing) = rows.pair(line, &rec)?;
        let clicked = match kind {
            DatasetKind::Clicked => match &rec[4] {
                "0" => Some(false),
                "1" => Some(true),
                other => return Err(rows.error(line, format!("clicked must be 0 or 1, found {other:?}"))),
            },
            _ => None,
        };
        out.push(UnlabeledPair { query, listing, clicked });
    }
    Ok(out)
}

pub fn load_dataset(path: &Path, kind: DatasetKind) -> Result<Samples> {
    match kind {
        DatasetKind::Labeled => load_labeled(path).map(Samples::Labeled),
        _ => load_unlabeled(path, kind).map(Samples::Unlabeled),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, CorpusSpec};

    fn corpus() -> crate::corpus::Corpus {
        generate_corpus(&CorpusSpec {
            n_intents: 50,
            vocab_size: 100,
            n_labeled: 40,
            n_unlabeled: 30,
            n_clicked: 30,
            n_test: 0,
            click_noise_rate: 0.2,
            seed: 3,
        })
        .unwrap()
    }

    #[test]
    fn round_trips_all_kinds() {
        let dir = tempfile::tempdir().unwrap();
        let c = corpus();
        let p = dir.path().join("l.tsv");
        save_labeled(&p, &c.labeled).unwrap();
        assert_eq!(load_labeled(&p).unwrap(), c.labeled);
        let p = dir.path().join("u.tsv");
        save_unlabeled(&p, &c.unlabeled).unwrap();
        assert_eq!(load_dataset(&p, DatasetKind::Unlabeled).unwrap(), Samples::Unlabeled(c.unlabeled.clone()));
        let p = dir.path().join("c.tsv");
        save_unlabeled(&p, &c.clicked).unwrap();
        assert_eq!(load_unlabeled(&p, DatasetKind::Clicked).unwrap(), c.clicked);
    }

    #[test]
    fn out_of_range_grade_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.tsv");
        std::fs::write(&p, "query\tkeyword\tad_title\tlp_title\tac\tlp\na\tb\tc\td\t1\t1\ne\tf\tg\th\t7\t2\n").unwrap();
        match load_labeled(&p) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn schema_mismatch_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("u.tsv");
        std::fs::write(&p, "query\tkeyword\tad_title\tlp_title\na\tb\tc\td\n").unwrap();
        assert!(matches!(load_labeled(&p), Err(Error::Format { line: 1, .. })));
        std::fs::write(&p, "query\tkeyword\tad_title\tlp_title\na\tb\tc\n").unwrap();
        assert!(matches!(load_unlabeled(&p, DatasetKind::Unlabeled), Err(Error::Format { line: 2, .. })));
    }

    #[test]
    fn empty_file_is_empty_sequence() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.tsv");
        std::fs::write(&p, "").unwrap();
        assert!(load_dataset(&p, DatasetKind::Labeled).unwrap().is_empty());
        assert!(load_dataset(&p, DatasetKind::Clicked).unwrap().is_empty());
    }

    #[test]
    fn missing_file_is_a_missing_artifact() {
        assert!(matches!(load_labeled(Path::new("/nonexistent/x.tsv")), Err(Error::MissingArtifact(_))));
    }
}
