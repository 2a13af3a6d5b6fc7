use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{RawSample, SegMask};
use crate::ctc::GlossVocabulary;
use crate::error::{Error, Result};
use crate::numcore::Matrix;

/// One line of a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub frames: Vec<Vec<f64>>,
    pub glosses: Vec<String>,
}

#[derive(Deserialize)]
struct MaskRecord {
    id: String,
    mask: Vec<Vec<f64>>,
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Non-blank lines with their 1-based line numbers.
fn lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

fn rows_to_matrix(path: &Path, line: usize, rows: &[Vec<f64>]) -> Result<Matrix<f64>> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(parse_err(path, line, "empty frame matrix"));
    }
    let width = rows[0].len();
    if let Some((r, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != width) {
        return Err(parse_err(
            path,
            line,
            format!("ragged frames: row {r} has {} values, expected {width}", row.len()),
        ));
    }
    Matrix::from_rows(rows)
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<DatasetRecord>> {
    let path = path.as_ref();
    lines(path)?
        .into_iter()
        .map(|(n, line)| {
            let rec: DatasetRecord = serde_json::from_str(&line).map_err(|e| parse_err(path, n, e.to_string()))?;
            let width = rec.frames.first().map(Vec::len);
            if let Some((r, _)) = rec.frames.iter().enumerate().find(|(_, f)| Some(f.len()) != width) {
                return Err(parse_err(path, n, format!("ragged frames at row {r}")));
            }
            Ok(rec)
        })
        .collect()
}

/// Loads a dataset, mapping gloss strings through `vocab`.
pub fn read_dataset(path: impl AsRef<Path>, vocab: &GlossVocabulary) -> Result<Vec<RawSample>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for (n, line) in lines(path)? {
        let rec: DatasetRecord = serde_json::from_str(&line).map_err(|e| parse_err(path, n, e.to_string()))?;
        let frames = rows_to_matrix(path, n, &rec.frames)?;
        let glosses = vocab
            .encode(&rec.glosses)
            .map_err(|e| parse_err(path, n, e.to_string()))?;
        out.push(RawSample {
            id: rec.id,
            frames,
            glosses,
        });
    }
    Ok(out)
}

pub fn write_dataset(path: impl AsRef<Path>, samples: &[RawSample], vocab: &GlossVocabulary) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for s in samples {
        let rec = DatasetRecord {
            id: s.id.clone(),
            frames: (0..s.num_frames()).map(|r| s.frames.row(r).to_vec()).collect(),
            glosses: vocab.decode(&s.glosses),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Glosses in order of first appearance.
pub fn vocabulary_from_records(records: &[DatasetRecord]) -> Result<GlossVocabulary> {
    let mut seen = Vec::new();
    let mut set = std::collections::HashSet::new();
    for r in records {
        for g in &r.glosses {
            if set.insert(g.clone()) {
                seen.push(g.clone());
            }
        }
    }
    GlossVocabulary::new(seen)
}

/// One gloss per line; line order defines indices `1..=V`.
pub fn read_vocabulary(path: impl AsRef<Path>) -> Result<GlossVocabulary> {
    let path = path.as_ref();
    let glosses = lines(path)?.into_iter().map(|(_, l)| l.trim().to_string()).collect();
    GlossVocabulary::new(glosses).map_err(|e| parse_err(path, 0, e.to_string()))
}

pub fn write_vocabulary(path: impl AsRef<Path>, vocab: &GlossVocabulary) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for g in vocab.glosses() {
        writeln!(w, "{g}")?;
    }
    w.flush()?;
    Ok(())
}

/// Masks keyed by sample id.
pub fn read_masks(path: impl AsRef<Path>) -> Result<HashMap<String, SegMask>> {
    let path = path.as_ref();
    let mut out = HashMap::new();
    for (n, line) in lines(path)? {
        let rec: MaskRecord = serde_json::from_str(&line).map_err(|e| parse_err(path, n, e.to_string()))?;
        let values = rows_to_matrix(path, n, &rec.mask)?;
        let mask = SegMask::new(values).map_err(|e| parse_err(path, n, e.to_string()))?;
        out.insert(rec.id, mask);
    }
    Ok(out)
}

/// `id \t space-joined glosses`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HypothesisLine {
    pub id: String,
    pub glosses: Vec<String>,
}

pub fn write_hypotheses(path: impl AsRef<Path>, hyps: &[HypothesisLine]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for h in hyps {
        writeln!(w, "{}\t{}", h.id, h.glosses.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_hypotheses(path: impl AsRef<Path>) -> Result<Vec<HypothesisLine>> {
    let path = path.as_ref();
    lines(path)?
        .into_iter()
        .map(|(n, line)| {
            let (id, rest) = line
                .split_once('\t')
                .ok_or_else(|| parse_err(path, n, "expected `id<TAB>glosses`"))?;
            Ok(HypothesisLine {
                id: id.to_string(),
                glosses: rest.split_whitespace().map(str::to_string).collect(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{gen_dataset, synth_vocabulary, SynthConfig};

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("iiga-files-{}-{name}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn dataset_round_trip_is_exact() {
        let dir = tmp("rt");
        let cfg = SynthConfig::default();
        let vocab = synth_vocabulary(cfg.vocab_size);
        let data = gen_dataset(&cfg, 5).unwrap();
        write_dataset(dir.join("d.jsonl"), &data, &vocab).unwrap();
        write_vocabulary(dir.join("v.txt"), &vocab).unwrap();
        let vocab2 = read_vocabulary(dir.join("v.txt")).unwrap();
        assert_eq!(vocab2, vocab);
        assert_eq!(read_dataset(dir.join("d.jsonl"), &vocab2).unwrap(), data);
    }

    #[test]
    fn ragged_rows_report_line_number() {
        let dir = tmp("ragged");
        let p = dir.join("bad.jsonl");
        fs::write(
            &p,
            "{\"id\":\"a\",\"frames\":[[1,2]],\"glosses\":[\"G01\"]}\n{\"id\":\"b\",\"frames\":[[1,2],[3]],\"glosses\":[\"G01\"]}\n",
        )
        .unwrap();
        let err = read_dataset(&p, &synth_vocabulary(2)).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(matches!(read_records(&p), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn vocabulary_file_rejects_blank_and_duplicates() {
        let dir = tmp("vocab");
        let p = dir.join("v.txt");
        fs::write(&p, "A\nB\nA\n").unwrap();
        assert!(read_vocabulary(&p).is_err());
        fs::write(&p, "A\n<blank>\n").unwrap();
        assert!(read_vocabulary(&p).is_err());
    }

    #[test]
    fn hypotheses_round_trip() {
        let dir = tmp("hyp");
        let hyps = vec![
            HypothesisLine {
                id: "x".into(),
                glosses: vec!["A".into(), "B".into()],
            },
            HypothesisLine {
                id: "y".into(),
                glosses: vec![],
            },
        ];
        write_hypotheses(dir.join("h.tsv"), &hyps).unwrap();
        assert_eq!(read_hypotheses(dir.join("h.tsv")).unwrap(), hyps);
    }

    #[test]
    fn masks_load_and_validate() {
        let dir = tmp("mask");
        let p = dir.join("m.jsonl");
        fs::write(&p, "{\"id\":\"a\",\"mask\":[[1,0.5]]}\n").unwrap();
        let masks = read_masks(&p).unwrap();
        assert_eq!(masks["a"].values().get(0, 1), 0.5);
        fs::write(&p, "{\"id\":\"a\",\"mask\":[[2]]}\n").unwrap();
        assert!(read_masks(&p).is_err());
    }
}
