//! Plain-text weight files.
//!
//! ```text
//! knode-mlp v1
//! layers 8 32 32 3
//! output_scale 3.3354000000000002e-1
//! <one line per weight-matrix row, then one bias line, for each layer>
//! end
//! ```
//!
//! Values are written with 17 significant digits so a round trip is exact.

use std::fmt::Write as _;
use std::path::Path;

use super::Mlp;
use crate::error::{Error, Result};

const MAGIC: &str = "knode-mlp";
const VERSION: &str = "v1";

pub fn write_weights(mlp: &Mlp) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC} {VERSION}");
    let sizes: Vec<String> = mlp.sizes().iter().map(|s| s.to_string()).collect();
    let _ = writeln!(out, "layers {}", sizes.join(" "));
    let _ = writeln!(out, "output_scale {:.16e}", mlp.output_scale);
    let params = mlp.params();
    let mut offset = 0;
    for w in mlp.sizes().windows(2) {
        let (n_in, n_out) = (w[0], w[1]);
        for o in 0..n_out {
            push_row(
                &mut out,
                &params[offset + o * n_in..offset + (o + 1) * n_in],
            );
        }
        offset += n_in * n_out;
        push_row(&mut out, &params[offset..offset + n_out]);
        offset += n_out;
    }
    out.push_str("end\n");
    out
}

fn push_row(out: &mut String, values: &[f64]) {
    let row: Vec<String> = values.iter().map(|v| format!("{v:.16e}")).collect();
    out.push_str(&row.join(" "));
    out.push('\n');
}

pub fn save_weights(mlp: &Mlp, path: &Path) -> Result<()> {
    std::fs::write(path, write_weights(mlp))?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<Mlp> {
    let text = std::fs::read_to_string(path)?;
    parse_weights(&text, path)
}

pub fn parse_weights(text: &str, path: &Path) -> Result<Mlp> {
    let err = |line: usize, message: String| Error::WeightsParse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let lines: Vec<&str> = text.lines().collect();

    let header = lines.first().ok_or_else(|| err(1, "empty file".into()))?;
    let mut head = header.split_whitespace();
    if head.next() != Some(MAGIC) {
        return Err(err(1, format!("expected `{MAGIC}` header")));
    }
    match head.next() {
        Some(VERSION) => {}
        other => {
            return Err(err(
                1,
                format!(
                    "version: expected {VERSION}, found {}",
                    other.unwrap_or("nothing")
                ),
            ))
        }
    }

    let layers_line = lines
        .get(1)
        .ok_or_else(|| err(2, "missing `layers` line".into()))?;
    let mut fields = layers_line.split_whitespace();
    if fields.next() != Some("layers") {
        return Err(err(2, "expected `layers`".into()));
    }
    let sizes = fields
        .map(|s| s.parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| err(2, format!("layers: {e}")))?;
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(err(2, format!("layers: invalid sizes {sizes:?}")));
    }

    let scale_line = lines
        .get(2)
        .ok_or_else(|| err(3, "missing `output_scale` line".into()))?;
    let output_scale = match scale_line.split_whitespace().collect::<Vec<_>>().as_slice() {
        ["output_scale", v] => v
            .parse::<f64>()
            .map_err(|e| err(3, format!("output_scale: {e}")))?,
        _ => return Err(err(3, "expected `output_scale <value>`".into())),
    };

    let end = lines
        .iter()
        .rposition(|l| l.trim() == "end")
        .ok_or_else(|| {
            err(
                lines.len() + 1,
                "unexpected end of file (missing `end`)".into(),
            )
        })?;
    let body = &lines[3..end];
    let expected_rows: usize = sizes.windows(2).map(|w| w[1] + 1).sum();
    if body.len() != expected_rows {
        return Err(Error::Dimension(format!(
            "{}: layers {sizes:?} need {expected_rows} rows, file has {}",
            path.display(),
            body.len()
        )));
    }

    let mut params = Vec::new();
    let mut row = 0;
    for w in sizes.windows(2) {
        let (n_in, n_out) = (w[0], w[1]);
        for width in std::iter::repeat_n(n_in, n_out).chain(std::iter::once(n_out)) {
            let line_no = 4 + row;
            let values = body[row]
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| err(line_no, e.to_string()))?;
            if values.len() != width {
                return Err(err(
                    line_no,
                    format!("expected {width} values, found {}", values.len()),
                ));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(err(line_no, "non-finite value".into()));
            }
            params.extend(values);
            row += 1;
        }
    }
    Mlp::from_parts(sizes, params, output_scale)
}
