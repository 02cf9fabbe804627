//! CLI file I/O: atomic writes (temp file plus rename, so failures never
//! leave partial output) and the small TSV formats the subcommands exchange.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::dist::{SentimentDistribution, NUM_CLASSES};

use super::CliError;

/// Shortest decimal form that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Writes through a temp file in the target directory and renames into
/// place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .map_err(|e| CliError::Io(format!("creating temp file in {}: {e}", dir.display())))?;
    tmp.write_all(contents.as_bytes())
        .map_err(|e| CliError::Io(format!("writing {}: {e}", path.display())))?;
    tmp.persist(path)
        .map_err(|e| CliError::Io(format!("renaming into {}: {e}", path.display())))?;
    Ok(())
}

pub fn read_to_string(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))
}

/// Label column encoding: classes `0..=4` map to `-2..=2`.
pub fn class_to_label(class: u8) -> i8 {
    class as i8 - 2
}

pub fn label_to_class(label: i8) -> Result<u8, CliError> {
    if !(-2..=2).contains(&label) {
        return Err(CliError::Data(format!("label {label} outside -2..=2")));
    }
    Ok((label + 2) as u8)
}

/// Renders predictions as `id<TAB>entity<TAB>label` lines.
pub fn render_predictions(rows: &[(String, Option<String>, u8)]) -> String {
    let mut out = String::new();
    for (id, entity, class) in rows {
        out.push_str(id);
        out.push('\t');
        if let Some(entity) = entity {
            out.push_str(entity);
        }
        out.push('\t');
        out.push_str(&class_to_label(*class).to_string());
        out.push('\n');
    }
    out
}

/// Reads `id<TAB>entity<TAB>label` prediction lines.
pub fn parse_predictions(text: &str, path: &Path) -> Result<Vec<(String, Option<String>, u8)>, CliError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(CliError::Data(format!(
                "{} line {}: want 3 tab-separated fields, got {}",
                path.display(),
                i + 1,
                fields.len()
            )));
        }
        let label: i8 = fields[2].parse().map_err(|_| {
            CliError::Data(format!("{} line {}: bad label {:?}", path.display(), i + 1, fields[2]))
        })?;
        let entity = if fields[1].is_empty() { None } else { Some(fields[1].to_string()) };
        out.push((fields[0].to_string(), entity, label_to_class(label)?));
    }
    Ok(out)
}

/// Renders `entity<TAB>p0..p4` quantification lines.
pub fn render_quantification(quants: &BTreeMap<String, SentimentDistribution>) -> String {
    let mut out = String::new();
    for (entity, dist) in quants {
        out.push_str(entity);
        for c in 0..NUM_CLASSES {
            out.push('\t');
            out.push_str(&fmt_f64(dist.prob(c)));
        }
        out.push('\n');
    }
    out
}

/// Renders `entity<TAB>ppos` binary quantification lines.
pub fn render_binary_quantification(quants: &BTreeMap<String, f64>) -> String {
    let mut out = String::new();
    for (entity, p) in quants {
        out.push_str(entity);
        out.push('\t');
        out.push_str(&fmt_f64(*p));
        out.push('\n');
    }
    out
}

/// Reads `entity<TAB>ppos` lines.
pub fn parse_binary_quantification(
    text: &str,
    path: &Path,
) -> Result<BTreeMap<String, f64>, CliError> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((entity, value)) = line.split_once('\t') else {
            return Err(CliError::Data(format!(
                "{} line {}: want entity<TAB>ppos",
                path.display(),
                i + 1
            )));
        };
        let p: f64 = value.parse().map_err(|_| {
            CliError::Data(format!("{} line {}: bad probability {value:?}", path.display(), i + 1))
        })?;
        out.insert(entity.to_string(), p);
    }
    Ok(out)
}

/// Reads `entity<TAB>p0..p4` lines.
pub fn parse_quantification(
    text: &str,
    path: &Path,
) -> Result<BTreeMap<String, SentimentDistribution>, CliError> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 1 + NUM_CLASSES {
            return Err(CliError::Data(format!(
                "{} line {}: want entity plus {NUM_CLASSES} probabilities",
                path.display(),
                i + 1
            )));
        }
        let mut probs = [0.0; NUM_CLASSES];
        for (slot, field) in probs.iter_mut().zip(&fields[1..]) {
            *slot = field.parse().map_err(|_| {
                CliError::Data(format!(
                    "{} line {}: bad probability {field:?}",
                    path.display(),
                    i + 1
                ))
            })?;
        }
        let dist = SentimentDistribution::from_weights(&probs)
            .map_err(|e| CliError::Data(format!("{} line {}: {e}", path.display(), i + 1)))?;
        out.insert(fields[0].to_string(), dist);
    }
    Ok(out)
}

/// Sentence prediction rows from `predict-tree`:
/// `id<TAB>p0..p4<TAB>known_fraction<TAB>length`.
pub fn parse_sentence_rows(
    text: &str,
    path: &Path,
) -> Result<Vec<(String, SentimentDistribution, f64, usize)>, CliError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 8 {
            return Err(CliError::Data(format!(
                "{} line {}: want 8 tab-separated fields, got {}",
                path.display(),
                i + 1,
                fields.len()
            )));
        }
        let mut probs = [0.0; NUM_CLASSES];
        for (slot, field) in probs.iter_mut().zip(&fields[1..6]) {
            *slot = field.parse().map_err(|_| {
                CliError::Data(format!(
                    "{} line {}: bad probability {field:?}",
                    path.display(),
                    i + 1
                ))
            })?;
        }
        let dist = SentimentDistribution::from_weights(&probs)
            .map_err(|e| CliError::Data(format!("{} line {}: {e}", path.display(), i + 1)))?;
        let fraction: f64 = fields[6].parse().map_err(|_| {
            CliError::Data(format!("{} line {}: bad fraction", path.display(), i + 1))
        })?;
        let length: usize = fields[7].parse().map_err(|_| {
            CliError::Data(format!("{} line {}: bad length", path.display(), i + 1))
        })?;
        out.push((fields[0].to_string(), dist, fraction, length));
    }
    Ok(out)
}
