use serde::Serialize;
use serde_json::{Map, Value};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{
    DataError, DatasetSplit, FilterVerdict, Label, PreferenceExample, SftRecord, SftSplit,
    SplitName, Strategy,
};

// Checked in this order; `label` first since a record without one is unusable.
const TOP_FIELDS: [&str; 6] = ["label", "id", "prompt", "response_a", "response_b", "meta"];
const META_FIELDS: [&str; 5] = [
    "strategy",
    "label_is_noisy",
    "corrupted_aspects",
    "filter_verdict",
    "seed",
];

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_records<T: Serialize>(records: &[T], path: &Path) -> Result<(), DataError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    for rec in records {
        let line = serde_json::to_string(rec).expect("records serialize");
        out.write_all(line.as_bytes()).map_err(|e| io_err(path, e))?;
        out.write_all(b"\n").map_err(|e| io_err(path, e))?;
    }
    out.flush().map_err(|e| io_err(path, e))
}

/// Writes one preference example per line, fields in declaration order.
pub fn write_jsonl(split: &DatasetSplit, path: impl AsRef<Path>) -> Result<(), DataError> {
    write_records(&split.examples, path.as_ref())
}

pub fn write_sft_jsonl(split: &SftSplit, path: impl AsRef<Path>) -> Result<(), DataError> {
    write_records(&split.records, path.as_ref())
}

fn check_enum(
    line: usize,
    obj: &Map<String, Value>,
    key: &str,
    field: &str,
    allowed: &[&str],
) -> Result<(), DataError> {
    match obj.get(key) {
        Some(Value::String(s)) if !allowed.contains(&s.as_str()) => Err(DataError::UnknownEnumValue {
            line,
            field: field.to_string(),
            value: s.clone(),
        }),
        _ => Ok(()),
    }
}

fn parse_example(line: usize, text: &str) -> Result<PreferenceExample, DataError> {
    let value: Value = serde_json::from_str(text).map_err(|e| DataError::Parse {
        line,
        message: e.to_string(),
    })?;
    let obj = value.as_object().ok_or_else(|| DataError::Parse {
        line,
        message: "expected a JSON object".into(),
    })?;
    for field in TOP_FIELDS {
        if !obj.contains_key(field) {
            return Err(DataError::MissingField {
                line,
                field: field.to_string(),
            });
        }
    }
    check_enum(line, obj, "label", "label", &Label::NAMES)?;
    if let Some(meta) = obj.get("meta").and_then(Value::as_object) {
        for field in META_FIELDS {
            if !meta.contains_key(field) {
                return Err(DataError::MissingField {
                    line,
                    field: format!("meta.{field}"),
                });
            }
        }
        check_enum(line, meta, "strategy", "meta.strategy", &Strategy::NAMES)?;
        check_enum(
            line,
            meta,
            "filter_verdict",
            "meta.filter_verdict",
            &FilterVerdict::NAMES,
        )?;
    }
    let ex: PreferenceExample = serde_json::from_value(value).map_err(|e| DataError::Parse {
        line,
        message: e.to_string(),
    })?;
    ex.validate().map_err(|e| DataError::Parse {
        line,
        message: e.to_string(),
    })?;
    Ok(ex)
}

/// Reads a preference split. Line numbers in errors are 1-based.
pub fn read_jsonl(path: impl AsRef<Path>, name: SplitName) -> Result<DatasetSplit, DataError> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path).map_err(|e| io_err(path, e))?);
    let mut examples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        examples.push(parse_example(i + 1, &line)?);
    }
    Ok(DatasetSplit { name, examples })
}

pub fn read_sft_jsonl(path: impl AsRef<Path>, name: SplitName) -> Result<SftSplit, DataError> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path).map_err(|e| io_err(path, e))?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SftRecord = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    Ok(SftSplit { name, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{example, GenerationMeta};
    use proptest::prelude::{any, prop_assert_eq, prop_oneof, proptest, Just, ProptestConfig};
    use proptest::strategy::Strategy as _;

    fn write_raw(dir: &tempfile::TempDir, body: &str) -> std::path::PathBuf {
        let p = dir.path().join("raw.jsonl");
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn roundtrip_three_examples() {
        let dir = tempfile::tempdir().unwrap();
        let split = DatasetSplit::new(
            SplitName::RmTrain,
            vec![
                example("e1", "a", "b", Label::APreferred),
                example("e2", "c", "d", Label::BPreferred),
                example("e3", "é ü", "ß\n\"q\"", Label::APreferred),
            ],
        );
        let path = dir.path().join("s.jsonl");
        write_jsonl(&split, &path).unwrap();
        let back = read_jsonl(&path, SplitName::RmTrain).unwrap();
        assert_eq!(back, split);

        // byte stability: writing the read-back split gives the same bytes
        let path2 = dir.path().join("s2.jsonl");
        write_jsonl(&back, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn field_order_is_fixed() {
        let ex = example("e1", "a", "b", Label::APreferred);
        let line = serde_json::to_string(&ex).unwrap();
        assert!(line.starts_with(r#"{"id":"e1","prompt":"p","response_a":"a","response_b":"b","label":"A_PREFERRED","meta":{"strategy":"REAL","label_is_noisy":false,"corrupted_aspects":[],"filter_verdict":"UNCHECKED","prompt_tokens":null,"completion_tokens":null,"seed":0}}"#));
    }

    #[test]
    fn missing_label_reports_line_and_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_raw(&dir, "{\"id\":\"e1\"}\n");
        let err = read_jsonl(&p, SplitName::RmTrain).unwrap_err();
        assert!(matches!(&err, DataError::MissingField { line: 1, field } if field == "label"));
        assert_eq!(err.to_string(), "line 1: missing field: label");
    }

    #[test]
    fn malformed_line_carries_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let good = serde_json::to_string(&example("e1", "a", "b", Label::APreferred)).unwrap();
        let p = write_raw(&dir, &format!("{good}\n{{not json\n"));
        let err = read_jsonl(&p, SplitName::RmTrain).unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 2, .. }));
    }

    #[test]
    fn unknown_enum_value_names_field() {
        let dir = tempfile::tempdir().unwrap();
        let good = serde_json::to_string(&example("e1", "a", "b", Label::APreferred)).unwrap();
        let p = write_raw(&dir, &good.replace("\"REAL\"", "\"MAGIC\""));
        let err = read_jsonl(&p, SplitName::RmTrain).unwrap_err();
        assert!(err.to_string().contains("meta.strategy"), "{err}");

        let p = write_raw(&dir, &good.replace("A_PREFERRED", "TIE"));
        let err = read_jsonl(&p, SplitName::RmTrain).unwrap_err();
        assert!(matches!(err, DataError::UnknownEnumValue { ref field, .. } if field == "label"));
    }

    #[test]
    fn large_split_count() {
        let dir = tempfile::tempdir().unwrap();
        let examples: Vec<_> = (0..14_982)
            .map(|i| example(&format!("qa{i}"), &format!("a{i}"), "b", Label::APreferred))
            .collect();
        let split = DatasetSplit::new(SplitName::RmTrain, examples);
        let path = dir.path().join("qa.jsonl");
        write_jsonl(&split, &path).unwrap();
        assert_eq!(read_jsonl(&path, SplitName::RmTrain).unwrap().len(), 14_982);
    }

    #[test]
    fn sft_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let split = SftSplit {
            name: SplitName::SftTrain,
            records: vec![SftRecord {
                id: "s1".into(),
                prompt: "q".into(),
                reference: "r".into(),
            }],
        };
        let p = dir.path().join("sft.jsonl");
        write_sft_jsonl(&split, &p).unwrap();
        assert_eq!(
            std::fs::read_to_string(&p).unwrap(),
            "{\"id\":\"s1\",\"prompt\":\"q\",\"reference\":\"r\"}\n"
        );
        assert_eq!(read_sft_jsonl(&p, SplitName::SftTrain).unwrap(), split);
    }

    fn arb_strategy() -> impl proptest::strategy::Strategy<Value = crate::data::Strategy> {
        prop_oneof![
            Just(crate::data::Strategy::Rlaif),
            Just(crate::data::Strategy::WestOfN),
            Just(crate::data::Strategy::Rlcd),
            Just(crate::data::Strategy::Rmboost),
            Just(crate::data::Strategy::RmboostSft),
            Just(crate::data::Strategy::Real),
        ]
    }

    fn arb_example() -> impl proptest::strategy::Strategy<Value = PreferenceExample> {
        (
            "[a-z0-9#]{1,8}",
            ".{0,20}",
            ".{0,20}",
            ".{0,20}",
            any::<bool>(),
            arb_strategy(),
            proptest::option::of(0u64..10_000),
            proptest::option::of(0u64..10_000),
            any::<u64>(),
        )
            .prop_filter("distinct responses", |t| t.2 != t.3)
            .prop_map(|(id, prompt, a, b, la, strategy, pt, ct, seed)| {
                let mut meta = GenerationMeta::new(strategy, seed);
                if strategy.is_rmboost() {
                    meta.corrupted_aspects = vec!["completeness".into()];
                    meta.filter_verdict = FilterVerdict::Kept;
                }
                meta.prompt_tokens = pt;
                meta.completion_tokens = ct;
                let label = if la { Label::APreferred } else { Label::BPreferred };
                PreferenceExample::new(id, prompt, a, b, label, meta).unwrap()
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn jsonl_roundtrip_is_identity(examples in proptest::collection::vec(arb_example(), 0..12)) {
            let dir = tempfile::tempdir().unwrap();
            let split = DatasetSplit::new(SplitName::RmVal, examples);
            let path = dir.path().join("p.jsonl");
            write_jsonl(&split, &path).unwrap();
            prop_assert_eq!(read_jsonl(&path, SplitName::RmVal).unwrap(), split);
        }
    }
}
