use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use super::{compact_ids, PointCloud};
use crate::error::{Error, Result};

/// On-disk encodings understood by [`load_cloud`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    PlyAscii,
    Csv,
}

impl CloudFormat {
    /// Guesses the format from the file extension.
    pub fn from_path(path: &Path) -> Result<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("ply") => Ok(CloudFormat::PlyAscii),
            Some("csv") => Ok(CloudFormat::Csv),
            _ => Err(Error::data(format!(
                "cannot infer cloud format from {}",
                path.display()
            ))),
        }
    }
}

pub fn load_cloud(path: &Path, format: CloudFormat) -> Result<PointCloud> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cloud = match format {
        CloudFormat::Csv => parse_csv(path, &text)?,
        CloudFormat::PlyAscii => parse_ply(path, &text)?,
    };
    cloud.validate()?;
    Ok(cloud)
}

/// Column accumulator shared by both parsers.
#[derive(Default)]
struct Columns {
    xyz: Vec<f64>,
    rgb: Vec<f64>,
    labels: Vec<usize>,
    superpoints: Vec<i64>,
}

impl Columns {
    fn finish(self, rgb_is_byte: Option<bool>) -> PointCloud {
        let n = self.xyz.len() / 3;
        let positions = Array2::from_shape_vec((n, 3), self.xyz).expect("xyz triples");
        let colors = (!self.rgb.is_empty()).then(|| {
            let byte = rgb_is_byte.unwrap_or_else(|| self.rgb.iter().any(|&c| c > 1.0));
            let scale = if byte { 1.0 / 255.0 } else { 1.0 };
            Array2::from_shape_vec((n, 3), self.rgb.iter().map(|c| c * scale).collect())
                .expect("rgb triples")
        });
        PointCloud {
            positions,
            colors,
            gt_labels: (!self.labels.is_empty()).then_some(self.labels),
            superpoint_ids: (!self.superpoints.is_empty()).then(|| compact_ids(&self.superpoints)),
        }
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_f64(path: &Path, line: usize, tok: &str) -> Result<f64> {
    tok.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| parse_err(path, line, format!("non-numeric field `{}`", tok.trim())))
}

fn parse_int(path: &Path, line: usize, tok: &str) -> Result<i64> {
    let v = parse_f64(path, line, tok)?;
    if v.fract() != 0.0 {
        return Err(parse_err(path, line, format!("expected integer, got `{}`", tok.trim())));
    }
    Ok(v as i64)
}

fn parse_label(path: &Path, line: usize, tok: &str) -> Result<usize> {
    let v = parse_int(path, line, tok)?;
    usize::try_from(v).map_err(|_| parse_err(path, line, "negative label"))
}

fn check_color(path: &Path, line: usize, c: f64) -> Result<f64> {
    if !(0.0..=255.0).contains(&c) {
        return Err(parse_err(path, line, format!("color value {c} out of range")));
    }
    Ok(c)
}

struct Layout {
    xyz: [usize; 3],
    rgb: Option<[usize; 3]>,
    label: Option<usize>,
    superpoint: Option<usize>,
    width: usize,
}

impl Layout {
    fn from_names(path: &Path, line: usize, names: &[&str], rgb: [&str; 3]) -> Result<Self> {
        let find = |n: &str| names.iter().position(|c| c.eq_ignore_ascii_case(n));
        let req = |n: &str| {
            find(n).ok_or_else(|| parse_err(path, line, format!("missing required column `{n}`")))
        };
        let xyz = [req("x")?, req("y")?, req("z")?];
        let rgb = match rgb.map(&find) {
            [Some(r), Some(g), Some(b)] => Some([r, g, b]),
            [None, None, None] => None,
            _ => return Err(parse_err(path, line, "partial color columns")),
        };
        Ok(Layout {
            xyz,
            rgb,
            label: find("label"),
            superpoint: find("superpoint"),
            width: names.len(),
        })
    }

    fn read_row(&self, path: &Path, line: usize, toks: &[&str], cols: &mut Columns) -> Result<()> {
        if toks.len() != self.width {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, found {}", self.width, toks.len()),
            ));
        }
        for &i in &self.xyz {
            cols.xyz.push(parse_f64(path, line, toks[i])?);
        }
        if let Some(rgb) = self.rgb {
            for i in rgb {
                let c = parse_f64(path, line, toks[i])?;
                cols.rgb.push(check_color(path, line, c)?);
            }
        }
        if let Some(i) = self.label {
            cols.labels.push(parse_label(path, line, toks[i])?);
        }
        if let Some(i) = self.superpoint {
            cols.superpoints.push(parse_int(path, line, toks[i])?);
        }
        Ok(())
    }
}

fn parse_csv(path: &Path, text: &str) -> Result<PointCloud> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let (hline, header) = lines.next().ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    let layout = Layout::from_names(path, hline, &names, ["r", "g", "b"])?;
    let mut cols = Columns::default();
    for (lineno, line) in lines {
        let toks: Vec<&str> = line.split(',').collect();
        layout.read_row(path, lineno, &toks, &mut cols)?;
    }
    Ok(cols.finish(None))
}

struct PlyElement {
    name: String,
    count: usize,
    props: Vec<(String, String)>,
}

fn parse_ply(path: &Path, text: &str) -> Result<PointCloud> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(parse_err(path, 1, "missing `ply` magic")),
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut saw_format = false;
    loop {
        let (lineno, line) = lines
            .next()
            .ok_or_else(|| parse_err(path, 0, "header not terminated by end_header"))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => saw_format = true,
            ["format", other, ..] => {
                return Err(parse_err(path, lineno, format!("unsupported format `{other}`")))
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(PlyElement {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| parse_err(path, lineno, "bad element count"))?,
                props: Vec::new(),
            }),
            ["property", "list", ..] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, lineno, "property before element"))?;
                if el.name == "vertex" {
                    return Err(parse_err(path, lineno, "list properties on vertex unsupported"));
                }
                el.props.push(("list".into(), "list".into()));
            }
            ["property", ty, name] => elements
                .last_mut()
                .ok_or_else(|| parse_err(path, lineno, "property before element"))?
                .props
                .push((ty.to_string(), name.to_string())),
            _ => return Err(parse_err(path, lineno, format!("malformed header line `{line}`"))),
        }
    }
    if !saw_format {
        return Err(parse_err(path, 0, "missing format line"));
    }
    let vi = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| parse_err(path, 0, "no vertex element"))?;
    let vertex = &elements[vi];
    let names: Vec<&str> = vertex.props.iter().map(|(_, n)| n.as_str()).collect();
    let layout = Layout::from_names(path, 0, &names, ["red", "green", "blue"])?;
    let rgb_is_byte = layout.rgb.map(|[r, _, _]| {
        matches!(vertex.props[r].0.as_str(), "uchar" | "uint8" | "char" | "int8")
    });

    let skip: usize = elements[..vi].iter().map(|e| e.count).sum();
    let mut body = lines.filter(|(_, l)| !l.is_empty()).skip(skip);
    let mut cols = Columns::default();
    for _ in 0..vertex.count {
        let (lineno, line) = body
            .next()
            .ok_or_else(|| parse_err(path, 0, "fewer vertex rows than declared"))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        layout.read_row(path, lineno, &toks, &mut cols)?;
    }
    Ok(cols.finish(rgb_is_byte))
}

/// Writes a cloud as CSV with the columns it carries.
pub fn write_cloud_csv(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut out = String::from("x,y,z");
    if cloud.colors.is_some() {
        out.push_str(",r,g,b");
    }
    if cloud.gt_labels.is_some() {
        out.push_str(",label");
    }
    if cloud.superpoint_ids.is_some() {
        out.push_str(",superpoint");
    }
    out.push('\n');
    for i in 0..cloud.len() {
        let p = cloud.positions.row(i);
        out.push_str(&format!("{},{},{}", p[0], p[1], p[2]));
        if let Some(c) = &cloud.colors {
            out.push_str(&format!(",{},{},{}", c[[i, 0]], c[[i, 1]], c[[i, 2]]));
        }
        if let Some(l) = &cloud.gt_labels {
            out.push_str(&format!(",{}", l[i]));
        }
        if let Some(s) = &cloud.superpoint_ids {
            out.push_str(&format!(",{}", s[i]));
        }
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
