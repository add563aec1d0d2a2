//! On-disk formats for datasets, classifiers and the surrogate.
//!
//! Every float is written with Rust's shortest round-trip formatting, so a
//! save/load cycle is bit-exact.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dam_core::datagen::DomainDataset;
use dam_core::models::{Activation, Architecture, ClassifierModel};
use dam_core::vilsurrogate::{FrozenEncoder, PromptBank};

use crate::error::{io_err, LabError, Result};

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> LabError {
    LabError::Parse { path: path.to_path_buf(), line, message: message.into() }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(io_err(path))
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

/// Header line `C,d,n,domain_tag,seed`, then one `label,f_0,...,f_{d-1}` row per sample.
pub fn dataset_to_string(ds: &DomainDataset) -> Result<String> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
    w.write_record([
        ds.classes().to_string(),
        ds.dim().to_string(),
        ds.len().to_string(),
        ds.domain_tag().to_string(),
        ds.seed().to_string(),
    ])?;
    for (x, y) in ds.samples().iter().zip(ds.labels()) {
        let row = std::iter::once(y.to_string()).chain(x.iter().map(|v| v.to_string()));
        w.write_record(row)?;
    }
    let bytes = w.into_inner().map_err(|e| LabError::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn save_dataset(ds: &DomainDataset, path: &Path) -> Result<()> {
    write_file(path, &dataset_to_string(ds)?)
}

pub fn load_dataset(path: &Path) -> Result<DomainDataset> {
    parse_dataset(&read_file(path)?, path)
}

/// Parses the dataset format; `path` only labels error messages.
pub fn parse_dataset(text: &str, path: &Path) -> Result<DomainDataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = match records.next() {
        None => return Err(parse_error(path, 1, "empty file, expected header `C,d,n,domain_tag,seed`")),
        Some(r) => r?,
    };
    if header.len() != 5 {
        return Err(parse_error(path, 1, format!("header has {} fields, expected 5 (C,d,n,domain_tag,seed)", header.len())));
    }
    let header_field = |i: usize, name: &str| -> Result<u64> {
        header[i].trim().parse().map_err(|_| parse_error(path, 1, format!("field {} ({name}): `{}` is not an integer", i + 1, &header[i])))
    };
    let classes = header_field(0, "C")? as usize;
    let dim = header_field(1, "d")? as usize;
    let n = header_field(2, "n")? as usize;
    let tag = header[3].to_string();
    let seed = header_field(4, "seed")?;

    let mut samples = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for record in records {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != dim + 1 {
            return Err(parse_error(path, line, format!("row has {} fields, expected {}", record.len(), dim + 1)));
        }
        let label: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| parse_error(path, line, format!("field 1 (label): `{}` is not a class index", &record[0])))?;
        if label >= classes {
            return Err(parse_error(path, line, format!("row {}: label {label} >= {classes} classes", samples.len())));
        }
        let x = (1..=dim)
            .map(|j| {
                record[j]
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| parse_error(path, line, format!("field {} (f_{}): `{}` is not a number", j + 1, j - 1, &record[j])))
            })
            .collect::<Result<Vec<f64>>>()?;
        samples.push(x);
        labels.push(label);
    }
    if samples.len() != n {
        return Err(parse_error(
            path,
            samples.len() + 2,
            format!("truncated: header declares {n} rows, found {}", samples.len()),
        ));
    }
    DomainDataset::new(classes, samples, labels, tag, seed).map_err(|e| parse_error(path, 0, e.to_string()))
}

/// A `key value` header followed by named float sections.
struct SectionFile {
    path: PathBuf,
    header: Vec<(String, String, usize)>,
    sections: Vec<(String, Vec<f64>)>,
}

const MODEL_MAGIC: &str = "dam-classifier 1";
const SURROGATE_MAGIC: &str = "dam-surrogate 1";

fn render_sections(magic: &str, header: &[(&str, String)], sections: &[(&str, &[f64])]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{magic}");
    for (k, v) in header {
        let _ = writeln!(out, "{k} {v}");
    }
    for (name, values) in sections {
        let _ = writeln!(out, "[{name}] {}", values.len());
        for v in values.iter() {
            let _ = writeln!(out, "{v}");
        }
    }
    out
}

fn parse_sections(text: &str, path: &Path, magic: &str) -> Result<SectionFile> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l.trim() == magic => {}
        _ => return Err(parse_error(path, 1, format!("expected `{magic}`"))),
    }
    let mut file = SectionFile { path: path.to_path_buf(), header: Vec::new(), sections: Vec::new() };
    let mut current: Option<(String, usize, usize)> = None;
    for (no, raw) in lines {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            if let Some((name, expected, start)) = current.take() {
                close_section(&file, &name, expected, start, no)?;
            }
            let (name, count) = rest.split_once(']').ok_or_else(|| parse_error(path, no, "unterminated section name"))?;
            let count: usize =
                count.trim().parse().map_err(|_| parse_error(path, no, format!("section `{name}` has no valid length")))?;
            file.sections.push((name.to_string(), Vec::with_capacity(count)));
            current = Some((name.to_string(), count, no));
        } else if current.is_some() {
            let v: f64 = line.parse().map_err(|_| parse_error(path, no, format!("`{line}` is not a number")))?;
            file.sections.last_mut().expect("open section").1.push(v);
        } else {
            let (k, v) = line.split_once(' ').ok_or_else(|| parse_error(path, no, format!("expected `key value`, got `{line}`")))?;
            file.header.push((k.to_string(), v.trim().to_string(), no));
        }
    }
    if let Some((name, expected, start)) = current {
        close_section(&file, &name, expected, start, text.lines().count() + 1)?;
    }
    Ok(file)
}

fn close_section(file: &SectionFile, name: &str, expected: usize, start: usize, end: usize) -> Result<()> {
    let got = file.sections.last().map_or(0, |s| s.1.len());
    if got != expected {
        return Err(parse_error(&file.path, end, format!("section `{name}` (line {start}) declares {expected} values, found {got}")));
    }
    Ok(())
}

impl SectionFile {
    fn value<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let (_, v, line) = self
            .header
            .iter()
            .find(|(k, _, _)| k == key)
            .ok_or_else(|| parse_error(&self.path, 0, format!("missing header key `{key}`")))?;
        v.parse().map_err(|_| parse_error(&self.path, *line, format!("`{key}`: cannot parse `{v}`")))
    }

    fn section(&mut self, name: &str) -> Result<Vec<f64>> {
        let i = self
            .sections
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| parse_error(&self.path, 0, format!("missing section `{name}`")))?;
        Ok(self.sections.remove(i).1)
    }
}

pub fn model_to_string(model: &ClassifierModel) -> String {
    let arch = model.architecture();
    render_sections(
        MODEL_MAGIC,
        &[
            ("input_dim", arch.input_dim.to_string()),
            ("hidden_dim", arch.hidden_dim.to_string()),
            ("classes", arch.classes.to_string()),
            ("activation", model.activation().name().to_string()),
            ("seed", model.seed().to_string()),
        ],
        &[("params", model.params())],
    )
}

pub fn save_model(model: &ClassifierModel, path: &Path) -> Result<()> {
    write_file(path, &model_to_string(model))
}

pub fn parse_model(text: &str, path: &Path) -> Result<ClassifierModel> {
    let mut f = parse_sections(text, path, MODEL_MAGIC)?;
    let arch = Architecture::new(f.value("input_dim")?, f.value("hidden_dim")?, f.value("classes")?);
    let activation: String = f.value("activation")?;
    if activation != Activation::Tanh.name() {
        return Err(parse_error(path, 0, format!("unknown activation `{activation}`")));
    }
    let seed = f.value("seed")?;
    let params = f.section("params")?;
    ClassifierModel::from_params(arch, Activation::Tanh, params, seed).map_err(|e| parse_error(path, 0, e.to_string()))
}

pub fn load_model(path: &Path) -> Result<ClassifierModel> {
    parse_model(&read_file(path)?, path)
}

/// Encoder and prompt bank in one file; every section is tagged frozen or learnable.
pub fn surrogate_to_string(enc: &FrozenEncoder, bank: &PromptBank) -> String {
    render_sections(
        SURROGATE_MAGIC,
        &[
            ("input_dim", enc.input_dim().to_string()),
            ("feature_dim", bank.feature_dim().to_string()),
            ("classes", bank.classes().to_string()),
            ("context_len", bank.context_len().to_string()),
            ("tau", bank.tau().to_string()),
        ],
        &[
            ("frozen encoder.projection", enc.projection()),
            ("frozen encoder.phase", enc.phase()),
            ("frozen class_tokens", bank.class_tokens()),
            ("frozen mixing", bank.mixing()),
            ("frozen anchors", bank.anchors()),
            ("learnable context", bank.context()),
        ],
    )
}

pub fn save_surrogate(enc: &FrozenEncoder, bank: &PromptBank, path: &Path) -> Result<()> {
    write_file(path, &surrogate_to_string(enc, bank))
}

pub fn parse_surrogate(text: &str, path: &Path) -> Result<(FrozenEncoder, PromptBank)> {
    let mut f = parse_sections(text, path, SURROGATE_MAGIC)?;
    let input_dim: usize = f.value("input_dim")?;
    let feature_dim: usize = f.value("feature_dim")?;
    let classes: usize = f.value("classes")?;
    let context_len: usize = f.value("context_len")?;
    let tau: f64 = f.value("tau")?;
    let wrap = |e: dam_core::Error| parse_error(path, 0, e.to_string());
    let enc = FrozenEncoder::from_parts(input_dim, feature_dim, f.section("frozen encoder.projection")?, f.section("frozen encoder.phase")?)
        .map_err(wrap)?;
    let tokens = f.section("frozen class_tokens")?;
    let mixing = f.section("frozen mixing")?;
    let anchors = f.section("frozen anchors")?;
    let context = f.section("learnable context")?;
    let bank = PromptBank::from_parts(classes, feature_dim, context_len, tau, context, tokens, mixing, anchors).map_err(wrap)?;
    Ok((enc, bank))
}

pub fn load_surrogate(path: &Path) -> Result<(FrozenEncoder, PromptBank)> {
    parse_surrogate(&read_file(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use dam_core::datagen::{generate_domain_pair, DomainPairSpec, ShiftSpec};

    #[test]
    fn dataset_text_round_trip() {
        let spec = DomainPairSpec::new(3, 4, 30, 30, ShiftSpec::rotation(0.3));
        let ds = generate_domain_pair(&spec, 9).unwrap().target;
        let text = dataset_to_string(&ds).unwrap();
        assert!(text.starts_with("3,4,30,target,"));
        assert_eq!(parse_dataset(&text, Path::new("mem")).unwrap(), ds);
    }

    #[test]
    fn malformed_number_names_line_and_field() {
        let text = "2,2,2,t,0\n0,1.0,2.0\n1,x,3.0\n";
        let err = parse_dataset(text, Path::new("mem")).unwrap_err().to_string();
        assert!(err.contains(":3:") && err.contains("field 2"), "{err}");
    }

    #[test]
    fn model_file_rejects_short_section() {
        let text = "dam-classifier 1\ninput_dim 2\nhidden_dim 1\nclasses 2\nactivation tanh\nseed 0\n[params] 7\n0\n0\n";
        assert!(parse_model(text, Path::new("mem")).is_err());
    }
}
