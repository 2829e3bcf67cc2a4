//! File formats.
//!
//! * embeddings CSV: header `id,speaker,e0,...,e{D-1}`; `speaker` empty for
//!   unlabeled sets (all rows or none).
//! * trials CSV: `enroll,test,label`, label `target`, `nontarget` or empty
//!   (all rows or none).
//! * scores CSV: `enroll,test,score,label`.
//! * model JSON: `{"type":"gplda","dim","mu","phi_b","phi_w"}` or
//!   `{"type":"htplda","dim","d_h","nu","F","W"}`; matrices row-major.
//! * metrics JSON, DET CSV `threshold,p_miss,p_fa`, sweep CSV
//!   `alpha,eer,minc_primary`.
//!
//! CSV files may start with `#` comment lines before the header; writers use
//! one to record `# config-sha256: <hex>`. JSON files carry the same value in
//! an optional `config_hash` field. Floats are written in the shortest form
//! that parses back to the same value.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::EmbeddingSet;
use crate::error::{Error, Result};
use crate::eval::{DetPoint, Metrics, SweepRow, TrialSet};
use crate::gplda::GPldaModel;
use crate::htplda::{self, HtPldaModel};
use crate::linalg::SymMatrix;
use crate::synth::{matrix_from_rows, matrix_to_rows};

pub const HASH_PREFIX: &str = "# config-sha256: ";

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Strip leading `#` lines; returns the remaining text.
fn skip_comments(text: &str) -> &str {
    let mut rest = text;
    while rest.starts_with('#') {
        rest = rest.find('\n').map_or("", |i| &rest[i + 1..]);
    }
    rest
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new().has_headers(true).from_reader(skip_comments(text).as_bytes())
}

fn parse_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

fn check_header(reader: &mut csv::Reader<&[u8]>, expected: &[&str]) -> Result<()> {
    let header = reader.headers().map_err(parse_err)?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::Parse(format!(
            "expected header {:?}, got {:?}",
            expected.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(())
}

fn parse_f64(field: &str, line: u64, what: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("line {line}: {what} {field:?} is not a number")))
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

struct CsvOut {
    writer: csv::Writer<Vec<u8>>,
    prefix: String,
}

impl CsvOut {
    fn new(config_hash: Option<&str>) -> Self {
        Self {
            writer: csv::Writer::from_writer(Vec::new()),
            prefix: config_hash.map(|h| format!("{HASH_PREFIX}{h}\n")).unwrap_or_default(),
        }
    }

    fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).map_err(parse_err)
    }

    fn finish(self) -> Result<String> {
        let body = self
            .writer
            .into_inner()
            .map_err(|e| Error::Parse(e.to_string()))?;
        let body = String::from_utf8(body).map_err(|e| Error::Parse(e.to_string()))?;
        Ok(self.prefix + &body)
    }
}

/// Hash recorded in a CSV comment line or JSON `config_hash` field, if any.
pub fn embedded_hash(text: &str) -> Option<&str> {
    text.lines()
        .take_while(|l| l.starts_with('#'))
        .find_map(|l| l.strip_prefix(HASH_PREFIX))
        .map(str::trim)
}

pub fn parse_embeddings(text: &str) -> Result<EmbeddingSet> {
    let mut reader = csv_reader(text);
    let header = reader.headers().map_err(parse_err)?.clone();
    if header.len() < 3 || &header[0] != "id" || &header[1] != "speaker" {
        return Err(Error::Parse("embedding header must be id,speaker,e0,...".into()));
    }
    let dim = header.len() - 2;
    for (k, name) in header.iter().skip(2).enumerate() {
        if name != format!("e{k}") {
            return Err(Error::Parse(format!("embedding column {} must be named e{k}, got {name:?}", k + 2)));
        }
    }
    let mut ids = Vec::new();
    let mut speakers = Vec::new();
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record.map_err(parse_err)?;
        let line = line_of(&record);
        ids.push(record[0].to_string());
        speakers.push(record[1].to_string());
        for field in record.iter().skip(2) {
            values.push(parse_f64(field, line, "embedding value")?);
        }
    }
    let labeled = speakers.iter().filter(|s| !s.is_empty()).count();
    let speakers = if labeled == 0 {
        None
    } else if labeled == speakers.len() {
        Some(speakers)
    } else {
        return Err(Error::Parse("speaker column must be filled on every row or on none".into()));
    };
    let data = DMatrix::from_row_slice(ids.len(), dim, &values);
    EmbeddingSet::new(ids, speakers, data)
}

pub fn format_embeddings(x: &EmbeddingSet, config_hash: Option<&str>) -> Result<String> {
    let mut out = CsvOut::new(config_hash);
    let mut header = vec!["id".to_string(), "speaker".to_string()];
    header.extend((0..x.dim()).map(|k| format!("e{k}")));
    out.row(&header)?;
    for (i, id) in x.ids().iter().enumerate() {
        let mut fields = vec![id.clone(), x.speakers().map_or(String::new(), |s| s[i].clone())];
        fields.extend(x.data().row(i).iter().map(|v| v.to_string()));
        out.row(&fields)?;
    }
    out.finish()
}

fn parse_label(field: &str, line: u64) -> Result<Option<bool>> {
    match field.trim() {
        "target" => Ok(Some(true)),
        "nontarget" => Ok(Some(false)),
        "" => Ok(None),
        other => Err(Error::Parse(format!(
            "line {line}: label must be target, nontarget or empty, got {other:?}"
        ))),
    }
}

fn collect_labels(labels: Vec<Option<bool>>) -> Result<Option<Vec<bool>>> {
    let n = labels.iter().filter(|l| l.is_some()).count();
    if n == 0 {
        Ok(None)
    } else if n == labels.len() {
        Ok(Some(labels.into_iter().flatten().collect()))
    } else {
        Err(Error::Parse("label column must be filled on every row or on none".into()))
    }
}

fn label_str(labels: Option<&Vec<bool>>, i: usize) -> &'static str {
    match labels.map(|l| l[i]) {
        Some(true) => "target",
        Some(false) => "nontarget",
        None => "",
    }
}

pub fn parse_trials(text: &str) -> Result<TrialSet> {
    let mut reader = csv_reader(text);
    check_header(&mut reader, &["enroll", "test", "label"])?;
    let mut pairs = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(parse_err)?;
        pairs.push((record[0].to_string(), record[1].to_string()));
        labels.push(parse_label(&record[2], line_of(&record))?);
    }
    Ok(TrialSet {
        pairs,
        labels: collect_labels(labels)?,
    })
}

pub fn format_trials(t: &TrialSet, config_hash: Option<&str>) -> Result<String> {
    let mut out = CsvOut::new(config_hash);
    out.row(["enroll", "test", "label"])?;
    for (i, (e, s)) in t.pairs.iter().enumerate() {
        out.row([e.as_str(), s.as_str(), label_str(t.labels.as_ref(), i)])?;
    }
    out.finish()
}

pub fn parse_scores(text: &str) -> Result<(TrialSet, Vec<f64>)> {
    let mut reader = csv_reader(text);
    check_header(&mut reader, &["enroll", "test", "score", "label"])?;
    let mut pairs = Vec::new();
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(parse_err)?;
        let line = line_of(&record);
        pairs.push((record[0].to_string(), record[1].to_string()));
        let s = parse_f64(&record[2], line, "score")?;
        if s.is_nan() {
            return Err(Error::Parse(format!("line {line}: score is NaN")));
        }
        scores.push(s);
        labels.push(parse_label(&record[3], line)?);
    }
    let trials = TrialSet {
        pairs,
        labels: collect_labels(labels)?,
    };
    Ok((trials, scores))
}

pub fn format_scores(t: &TrialSet, scores: &[f64], config_hash: Option<&str>) -> Result<String> {
    if scores.len() != t.len() {
        return Err(Error::dim(t.len(), scores.len(), "score count"));
    }
    let mut out = CsvOut::new(config_hash);
    out.row(["enroll", "test", "score", "label"])?;
    for (i, (e, s)) in t.pairs.iter().enumerate() {
        let score = scores[i].to_string();
        out.row([e.as_str(), s.as_str(), score.as_str(), label_str(t.labels.as_ref(), i)])?;
    }
    out.finish()
}

pub fn format_det(points: &[DetPoint], config_hash: Option<&str>) -> Result<String> {
    let mut out = CsvOut::new(config_hash);
    out.row(["threshold", "p_miss", "p_fa"])?;
    for p in points {
        out.row([p.threshold.to_string(), p.p_miss.to_string(), p.p_fa.to_string()])?;
    }
    out.finish()
}

pub fn format_sweep(rows: &[SweepRow], config_hash: Option<&str>) -> Result<String> {
    let mut out = CsvOut::new(config_hash);
    out.row(["alpha", "eer", "minc_primary"])?;
    for r in rows {
        out.row([r.alpha.to_string(), r.eer.to_string(), r.minc_primary.to_string()])?;
    }
    out.finish()
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    #[serde(flatten)]
    metrics: &'a Metrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    config_hash: Option<&'a str>,
}

pub fn format_metrics(m: &Metrics, config_hash: Option<&str>) -> Result<String> {
    let file = MetricsFile { metrics: m, config_hash };
    serde_json::to_string_pretty(&file).map(|s| s + "\n").map_err(|e| Error::Parse(e.to_string()))
}

pub fn parse_metrics(text: &str) -> Result<Metrics> {
    serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
}

/// Either back-end.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Gplda(GPldaModel),
    Htplda(HtPldaModel),
}

impl Model {
    pub fn dim(&self) -> usize {
        match self {
            Model::Gplda(m) => m.dim(),
            Model::Htplda(m) => m.dim(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Model::Gplda(_) => "gplda",
            Model::Htplda(_) => "htplda",
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum ModelFile {
    Gplda {
        dim: usize,
        mu: Vec<f64>,
        phi_b: Vec<Vec<f64>>,
        phi_w: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        config_hash: Option<String>,
    },
    Htplda {
        dim: usize,
        d_h: usize,
        nu: f64,
        #[serde(rename = "F")]
        f: Vec<Vec<f64>>,
        #[serde(rename = "W")]
        w: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        config_hash: Option<String>,
    },
}

pub fn parse_model(text: &str) -> Result<Model> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    match file {
        ModelFile::Gplda { dim, mu, phi_b, phi_w, .. } => {
            if dim == 0 {
                return Err(Error::Parse("model dim must be positive".into()));
            }
            if mu.len() != dim {
                return Err(Error::dim(dim, mu.len(), "model mu"));
            }
            let phi_b = SymMatrix::new(matrix_from_rows(&phi_b, dim, dim, "phi_b")?)?;
            let phi_w = SymMatrix::new(matrix_from_rows(&phi_w, dim, dim, "phi_w")?)?;
            Ok(Model::Gplda(GPldaModel::new(DVector::from_vec(mu), phi_b, phi_w)?))
        }
        ModelFile::Htplda { dim, d_h, nu, f, w, .. } => {
            if dim == 0 {
                return Err(Error::Parse("model dim must be positive".into()));
            }
            let f = matrix_from_rows(&f, dim, d_h, "F")?;
            let w = SymMatrix::new(matrix_from_rows(&w, dim, dim, "W")?)?;
            Ok(Model::Htplda(htplda::ht_precompute(nu, f, w)?))
        }
    }
}

pub fn format_model(model: &Model, config_hash: Option<&str>) -> Result<String> {
    let config_hash = config_hash.map(str::to_string);
    let file = match model {
        Model::Gplda(m) => ModelFile::Gplda {
            dim: m.dim(),
            mu: m.mu.iter().copied().collect(),
            phi_b: m.phi_b.to_rows(),
            phi_w: m.phi_w.to_rows(),
            config_hash,
        },
        Model::Htplda(m) => ModelFile::Htplda {
            dim: m.dim(),
            d_h: m.d_h(),
            nu: m.nu(),
            f: matrix_to_rows(m.f()),
            w: m.w().to_rows(),
            config_hash,
        },
    };
    serde_json::to_string_pretty(&file).map(|s| s + "\n").map_err(|e| Error::Parse(e.to_string()))
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingSet> {
    parse_embeddings(&read_text(path)?)
}

pub fn read_trials(path: &Path) -> Result<TrialSet> {
    parse_trials(&read_text(path)?)
}

pub fn read_scores(path: &Path) -> Result<(TrialSet, Vec<f64>)> {
    parse_scores(&read_text(path)?)
}

pub fn read_model(path: &Path) -> Result<Model> {
    parse_model(&read_text(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embeddings_round_trip_exact() {
        let data = DMatrix::from_row_slice(2, 3, &[0.1, -1e-300, 1.0 / 3.0, 2.5e17, -0.0, 7.0]);
        let x = EmbeddingSet::new(
            vec!["u,1".into(), "#u2".into()],
            Some(vec!["a".into(), "b \"q\"".into()]),
            data,
        )
        .unwrap();
        let text = format_embeddings(&x, Some("abc")).unwrap();
        assert!(text.starts_with("# config-sha256: abc\nid,speaker,e0,e1,e2\n"));
        assert_eq!(embedded_hash(&text), Some("abc"));
        let back = parse_embeddings(&text).unwrap();
        assert_eq!(back, x);
        assert_eq!(back.data()[(0, 2)].to_bits(), (1.0f64 / 3.0).to_bits());
    }

    #[test]
    fn embeddings_rejects() {
        assert!(parse_embeddings("id,spk,e0\na,,1\n").is_err());
        assert!(parse_embeddings("id,speaker,e1\na,,1\n").is_err());
        assert!(parse_embeddings("id,speaker,e0\na,s,1\nb,,2\n").is_err());
        assert!(parse_embeddings("id,speaker,e0\na,,x\n").is_err());
        assert!(parse_embeddings("id,speaker,e0\na,,1,2\n").is_err());
        assert!(parse_embeddings("id,speaker,e0\na,,NaN\n").is_err());
        let x = parse_embeddings("id,speaker,e0,e1\na,,1,2\n").unwrap();
        assert!(!x.is_labeled());
    }

    #[test]
    fn trials_and_scores_round_trip() {
        let t = TrialSet {
            pairs: vec![("a".into(), "b".into()), ("c".into(), "d".into())],
            labels: Some(vec![true, false]),
        };
        assert_eq!(parse_trials(&format_trials(&t, None).unwrap()).unwrap(), t);
        let scores = [1.25, -3.0e-7];
        let (t2, s2) = parse_scores(&format_scores(&t, &scores, Some("h")).unwrap()).unwrap();
        assert_eq!((t2, s2), (t.clone(), scores.to_vec()));
        let unl = TrialSet { pairs: t.pairs.clone(), labels: None };
        assert_eq!(parse_trials(&format_trials(&unl, None).unwrap()).unwrap(), unl);
        assert!(parse_trials("enroll,test,label\na,b,maybe\n").is_err());
        assert!(parse_trials("enroll,test,label\na,b,target\nc,d,\n").is_err());
    }

    #[test]
    fn models_round_trip() {
        let g = GPldaModel::new(
            DVector::from_vec(vec![0.5, -1.0]),
            SymMatrix::from_rows(&[vec![2.0, 0.3], vec![0.3, 1.0]]).unwrap(),
            SymMatrix::from_diagonal(&[1.0, 0.7]),
        )
        .unwrap();
        let text = format_model(&Model::Gplda(g.clone()), Some("x")).unwrap();
        assert!(text.contains("\"config_hash\": \"x\""));
        assert_eq!(parse_model(&text).unwrap(), Model::Gplda(g));

        let h = htplda::ht_precompute(3.0, DMatrix::from_row_slice(2, 1, &[1.0, 0.5]), SymMatrix::identity(2)).unwrap();
        let text = format_model(&Model::Htplda(h.clone()), None).unwrap();
        assert!(text.contains("\"F\"") && !text.contains("b0"));
        assert_eq!(parse_model(&text).unwrap(), Model::Htplda(h));

        assert!(parse_model(r#"{"type":"gplda","dim":2,"mu":[0],"phi_b":[[1,0],[0,1]],"phi_w":[[1,0],[0,1]]}"#).is_err());
        assert!(parse_model(r#"{"type":"other"}"#).is_err());
    }

    #[test]
    fn metrics_json() {
        let m = Metrics {
            eer: 0.1,
            min_dcf_001: 0.2,
            min_dcf_0005: 0.3,
            minc_primary: 0.25,
            n_target: 3,
            n_nontarget: 4,
        };
        let text = format_metrics(&m, Some("h")).unwrap();
        assert_eq!(parse_metrics(&text).unwrap(), m);
    }
}
