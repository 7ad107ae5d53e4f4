use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    stratified_split, Corpus, DatasetSplit, Label, LabeledExample, Sentiment, SplitName,
    SplitRatios, Topic,
};
use crate::error::{Error, Result};

/// Environment variable naming a local directory that mirrors hub datasets
/// as `<dir>/<owner>/<name>/`.
pub const DATA_DIR_ENV: &str = "ESC_DATA_DIR";

/// Where a dataset lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetSource {
    /// A `.jsonl` / `.csv` file, or a directory of per-split files.
    Path(PathBuf),
    /// A hub identifier such as `hf:hung20gg/NEU-ESC`.
    Hub(String),
}

impl DatasetSource {
    pub fn parse(locator: &str) -> Self {
        match locator.strip_prefix("hf:").or_else(|| locator.strip_prefix("hf://")) {
            Some(id) => DatasetSource::Hub(id.trim_matches('/').to_owned()),
            None => DatasetSource::Path(PathBuf::from(locator)),
        }
    }

    fn resolve(&self) -> Result<PathBuf> {
        match self {
            DatasetSource::Path(p) => {
                if p.exists() {
                    Ok(p.clone())
                } else {
                    Err(Error::Load(format!("dataset source {} does not exist", p.display())))
                }
            }
            DatasetSource::Hub(id) => {
                let root = std::env::var_os(DATA_DIR_ENV).ok_or_else(|| {
                    Error::Load(format!(
                        "hub dataset `{id}` requested but {DATA_DIR_ENV} is not set; \
                         download the dataset files and point {DATA_DIR_ENV} at their parent"
                    ))
                })?;
                let dir = Path::new(&root).join(id);
                if dir.exists() {
                    Ok(dir)
                } else {
                    Err(Error::Load(format!(
                        "hub dataset `{id}` not found under {}",
                        dir.display()
                    )))
                }
            }
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawId {
    Text(String),
    Int(i64),
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawLabel {
    Code(i64),
    Name(String),
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    id: Option<RawId>,
    text: String,
    sentiment: RawLabel,
    topic: RawLabel,
    #[serde(default)]
    split: Option<String>,
}

/// On-disk line format.
#[derive(Debug, Serialize)]
struct OutRecord<'a> {
    id: &'a str,
    text: &'a str,
    sentiment: usize,
    topic: usize,
    split: &'a str,
}

fn decode_label<L: Label>(raw: &RawLabel, field: &str, location: &str) -> Result<L> {
    let decoded = match raw {
        RawLabel::Code(c) => usize::try_from(*c).ok().and_then(L::from_code),
        RawLabel::Name(s) => match s.trim().parse::<usize>() {
            Ok(c) => L::from_code(c),
            Err(_) => L::from_name(s),
        },
    };
    decoded.ok_or_else(|| Error::Schema {
        location: location.to_owned(),
        message: format!("unknown {field} label {raw:?}"),
    })
}

fn decode_record(
    raw: RawRecord,
    location: &str,
    fallback_id: String,
) -> Result<(LabeledExample, Option<SplitName>)> {
    let id = match raw.id {
        Some(RawId::Text(s)) => s,
        Some(RawId::Int(i)) => i.to_string(),
        None => fallback_id,
    };
    let location = format!("{location} (id={id})");
    if raw.text.trim().is_empty() {
        return Err(Error::Schema {
            location,
            message: "text is empty after trimming".into(),
        });
    }
    let sentiment: Sentiment = decode_label(&raw.sentiment, "sentiment", &location)?;
    let topic: Topic = decode_label(&raw.topic, "topic", &location)?;
    let split = match raw.split {
        Some(s) if !s.trim().is_empty() => Some(SplitName::parse(&s).ok_or_else(|| Error::Schema {
            location: location.clone(),
            message: format!("unknown split `{s}`"),
        })?),
        _ => None,
    };
    Ok((
        LabeledExample {
            id,
            text: raw.text,
            sentiment,
            topic,
        },
        split,
    ))
}

type Rows = Vec<(LabeledExample, Option<SplitName>)>;

/// Parses line-delimited JSON records. `origin` labels error locations.
pub fn parse_jsonl(content: &str, origin: &str) -> Result<Vec<(LabeledExample, Option<SplitName>)>> {
    let mut rows = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let location = format!("{origin}:{}", idx + 1);
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| Error::Schema {
            location: location.clone(),
            message: e.to_string(),
        })?;
        rows.push(decode_record(raw, &location, format!("{origin}#{}", idx + 1))?);
    }
    Ok(rows)
}

fn parse_csv(content: &str, origin: &str) -> Result<Rows> {
    let mut reader = csv::ReaderBuilder::new().from_reader(content.as_bytes());
    let mut rows = Vec::new();
    for (idx, rec) in reader.deserialize::<RawCsvRecord>().enumerate() {
        // header is line 1
        let location = format!("{origin}:{}", idx + 2);
        let rec = rec.map_err(|e| Error::Schema {
            location: location.clone(),
            message: e.to_string(),
        })?;
        let raw = RawRecord {
            id: rec.id.map(RawId::Text),
            text: rec.text,
            sentiment: RawLabel::Name(rec.sentiment),
            topic: RawLabel::Name(rec.topic),
            split: rec.split,
        };
        rows.push(decode_record(raw, &location, format!("{origin}#{}", idx + 2))?);
    }
    Ok(rows)
}

#[derive(Debug, Deserialize)]
struct RawCsvRecord {
    #[serde(default)]
    id: Option<String>,
    text: String,
    sentiment: String,
    topic: String,
    #[serde(default)]
    split: Option<String>,
}

fn read_file(path: &Path) -> Result<Rows> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let origin = path.display().to_string();
    let rows = match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => parse_csv(&content, &origin)?,
        _ => parse_jsonl(&content, &origin)?,
    };
    if rows.is_empty() {
        return Err(Error::Schema {
            location: origin,
            message: "dataset file contains zero rows".into(),
        });
    }
    Ok(rows)
}

fn find_split_file(dir: &Path, split: SplitName) -> Option<PathBuf> {
    let stems: &[&str] = match split {
        SplitName::Train => &["train"],
        SplitName::Validation => &["validation", "valid", "val", "dev"],
        SplitName::Test => &["test"],
    };
    stems.iter().find_map(|stem| {
        ["jsonl", "json", "csv"]
            .iter()
            .map(|ext| dir.join(format!("{stem}.{ext}")))
            .find(|p| p.is_file())
    })
}

/// Loads the three partitions from `source`.
///
/// Shipped split assignments win; a file without a `split` column is
/// re-split 7:1:2 with seed 0.
pub fn load_corpus(source: &DatasetSource) -> Result<Corpus> {
    let path = source.resolve()?;
    let rows: Rows = if path.is_dir() {
        let mut rows = Vec::new();
        let mut found = false;
        for split in SplitName::ALL {
            if let Some(file) = find_split_file(&path, split) {
                found = true;
                rows.extend(read_file(&file)?.into_iter().map(|(ex, _)| (ex, Some(split))));
            }
        }
        if !found {
            let single = ["data.jsonl", "data.csv", "neu-esc.jsonl"]
                .iter()
                .map(|f| path.join(f))
                .find(|p| p.is_file())
                .ok_or_else(|| {
                    Error::Load(format!("no split or data files found in {}", path.display()))
                })?;
            rows = read_file(&single)?;
        }
        rows
    } else {
        read_file(&path)?
    };
    assemble(rows)
}

fn assemble(rows: Rows) -> Result<Corpus> {
    let mut seen = HashSet::new();
    for (ex, _) in &rows {
        if !seen.insert(ex.id.as_str()) {
            return Err(Error::Schema {
                location: format!("id={}", ex.id),
                message: "duplicate example id".into(),
            });
        }
    }
    let any_split = rows.iter().any(|(_, s)| s.is_some());
    let all_split = rows.iter().all(|(_, s)| s.is_some());
    if any_split && !all_split {
        let (ex, _) = rows.iter().find(|(_, s)| s.is_none()).expect("checked above");
        return Err(Error::Schema {
            location: format!("id={}", ex.id),
            message: "split assignment missing while other rows carry one".into(),
        });
    }
    if !any_split {
        log::warn!("dataset carries no split column; re-splitting 7:1:2 with seed 0");
        let examples: Vec<_> = rows.into_iter().map(|(ex, _)| ex).collect();
        return stratified_split(&examples, SplitRatios::default(), 0);
    }
    let mut parts: [Vec<LabeledExample>; 3] = Default::default();
    for (ex, split) in rows {
        let idx = split.expect("all rows carry a split") as usize;
        parts[idx].push(ex);
    }
    let [train, validation, test] = parts;
    Ok(Corpus {
        train: DatasetSplit::new(SplitName::Train, train),
        validation: DatasetSplit::new(SplitName::Validation, validation),
        test: DatasetSplit::new(SplitName::Test, test),
    })
}

/// Writes a corpus as one JSONL file carrying the `split` column.
pub fn write_jsonl(corpus: &Corpus, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for split in corpus.splits() {
        for ex in &split.examples {
            let rec = OutRecord {
                id: &ex.id,
                text: &ex.text,
                sentiment: ex.sentiment.code(),
                topic: ex.topic.code(),
                split: split.name.as_str(),
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_label_names_the_row() {
        let content = "{\"id\":\"a\",\"text\":\"x\",\"sentiment\":0,\"topic\":1,\"split\":\"train\"}\n\
                       {\"id\":\"b\",\"text\":\"y\",\"sentiment\":7,\"topic\":1,\"split\":\"train\"}\n";
        let err = parse_jsonl(content, "fx").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("fx:2"), "{msg}");
        assert!(msg.contains("id=b"), "{msg}");
    }

    #[test]
    fn labels_accept_names_and_numeric_strings() {
        let content = "{\"id\":1,\"text\":\"x\",\"sentiment\":\"Toxic\",\"topic\":\"9\",\"split\":\"dev\"}";
        let rows = parse_jsonl(content, "fx").unwrap();
        assert_eq!(rows[0].0.sentiment, Sentiment::Toxic);
        assert_eq!(rows[0].0.topic, Topic::ClubEvents);
        assert_eq!(rows[0].1, Some(SplitName::Validation));
        assert_eq!(rows[0].0.id, "1");
    }

    #[test]
    fn blank_text_is_rejected() {
        let content = "{\"id\":\"a\",\"text\":\"   \",\"sentiment\":0,\"topic\":1}";
        assert!(matches!(parse_jsonl(content, "fx"), Err(Error::Schema { .. })));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let ex = LabeledExample::new("dup", "t", Sentiment::Neutral, Topic::Other);
        let rows = vec![
            (ex.clone(), Some(SplitName::Train)),
            (ex, Some(SplitName::Test)),
        ];
        assert!(matches!(assemble(rows), Err(Error::Schema { .. })));
    }

    #[test]
    fn hub_locator_parses() {
        assert_eq!(
            DatasetSource::parse("hf:hung20gg/NEU-ESC"),
            DatasetSource::Hub("hung20gg/NEU-ESC".into())
        );
        assert_eq!(
            DatasetSource::parse("data/x.jsonl"),
            DatasetSource::Path("data/x.jsonl".into())
        );
    }
}
