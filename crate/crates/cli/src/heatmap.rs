//! Grayscale attention heatmaps as binary PGM (P5) images.
//!
//! Rows are generated tokens, columns are history tokens, and each weight
//! fills a `cell`×`cell` square with gray level `round(255·(1−α))`, so
//! darker means more attention. Cells beyond a row's scope are white.
//! The header comments carry the exact weights:
//!
//! ```text
//! P5
//! # arnn attention heatmap
//! # columns<TAB>label<TAB>label...
//! # row<TAB>index<TAB>token<TAB>w w w ...
//! width height
//! 255
//! <width*height bytes>
//! ```
//!
//! Weights are written in shortest round-trip form, so parsing them back
//! reproduces the trace export bit for bit.

use arnn_core::generator::{TraceExport, TraceRow};

pub fn gray(alpha: f64) -> u8 {
    (255.0 * (1.0 - alpha.clamp(0.0, 1.0))).round() as u8
}

pub fn render_pgm(trace: &TraceExport, cell: usize) -> Vec<u8> {
    let cell = cell.max(1);
    let cols = trace
        .rows
        .iter()
        .map(|r| r.weights.len())
        .max()
        .unwrap_or(0)
        .max(trace.columns.len());
    let (width, height) = (cols * cell, trace.rows.len() * cell);
    let mut out = String::from("P5\n# arnn attention heatmap\n# columns");
    for c in &trace.columns {
        out.push('\t');
        out.push_str(c);
    }
    out.push('\n');
    for (i, r) in trace.rows.iter().enumerate() {
        let w: Vec<String> = r.weights.iter().map(|x| x.to_string()).collect();
        out.push_str(&format!("# row\t{i}\t{}\t{}\n", r.token, w.join(" ")));
    }
    out.push_str(&format!("{width} {height}\n255\n"));
    let mut bytes = out.into_bytes();
    for r in &trace.rows {
        let line: Vec<u8> = (0..cols)
            .flat_map(|c| {
                let g = r.weights.get(c).map_or(255, |&a| gray(a));
                std::iter::repeat_n(g, cell)
            })
            .collect();
        for _ in 0..cell {
            bytes.extend_from_slice(&line);
        }
    }
    bytes
}

/// A parsed heatmap: the trace from the header comments plus the raster.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub trace: TraceExport,
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

pub fn parse_pgm(bytes: &[u8]) -> Result<Heatmap, String> {
    let mut pos = 0;
    let next_line = |pos: &mut usize| -> Result<String, String> {
        let end = bytes[*pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or("truncated header")?;
        let line = std::str::from_utf8(&bytes[*pos..*pos + end]).map_err(|_| "header is not UTF-8")?;
        *pos += end + 1;
        Ok(line.to_string())
    };
    if next_line(&mut pos)? != "P5" {
        return Err("not a binary PGM".into());
    }
    let mut trace = TraceExport {
        columns: Vec::new(),
        rows: Vec::new(),
    };
    let dims = loop {
        let line = next_line(&mut pos)?;
        let Some(comment) = line.strip_prefix('#') else {
            break line;
        };
        let fields: Vec<&str> = comment.trim_start().split('\t').collect();
        match fields[0] {
            "columns" => trace.columns = fields[1..].iter().map(|s| s.to_string()).collect(),
            "row" if fields.len() == 4 => {
                let weights = fields[3]
                    .split_whitespace()
                    .map(|w| w.parse::<f64>().map_err(|e| format!("weight {w:?}: {e}")))
                    .collect::<Result<Vec<_>, _>>()?;
                trace.rows.push(TraceRow {
                    token: fields[2].to_string(),
                    weights,
                });
            }
            _ => {}
        }
    };
    let mut it = dims.split_whitespace().map(|v| v.parse::<usize>());
    let (Some(Ok(width)), Some(Ok(height)), None) = (it.next(), it.next(), it.next()) else {
        return Err(format!("bad dimensions line {dims:?}"));
    };
    if next_line(&mut pos)? != "255" {
        return Err("expected maxval 255".into());
    }
    let pixels = bytes[pos..].to_vec();
    if pixels.len() != width * height {
        return Err(format!("expected {} pixels, found {}", width * height, pixels.len()));
    }
    Ok(Heatmap {
        trace,
        width,
        height,
        pixels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace() -> TraceExport {
        TraceExport {
            columns: vec!["<A>".into(), "hi".into(), "</u>".into()],
            rows: vec![
                TraceRow {
                    token: "yo".into(),
                    weights: vec![0.1, 0.6, 0.3],
                },
                TraceRow {
                    token: "</u>".into(),
                    weights: vec![1.0 / 3.0; 3],
                },
            ],
        }
    }

    #[test]
    fn gray_levels() {
        assert_eq!(gray(0.0), 255);
        assert_eq!(gray(1.0), 0);
        assert_eq!(gray(0.5), 128);
    }

    #[test]
    fn round_trips_weights_and_raster() {
        let t = trace();
        let bytes = render_pgm(&t, 2);
        let h = parse_pgm(&bytes).unwrap();
        assert_eq!(h.trace, t);
        assert_eq!((h.width, h.height), (6, 4));
        assert_eq!(&h.pixels[..6], &[gray(0.1), gray(0.1), gray(0.6), gray(0.6), gray(0.3), gray(0.3)]);
        assert_eq!(&h.pixels[6..12], &h.pixels[..6]);
        assert!(h.pixels[2] < h.pixels[0]);
    }

    #[test]
    fn short_rows_pad_white() {
        let t = TraceExport {
            columns: vec!["a".into(), "b".into()],
            rows: vec![TraceRow {
                token: "x".into(),
                weights: vec![1.0],
            }],
        };
        let h = parse_pgm(&render_pgm(&t, 1)).unwrap();
        assert_eq!(h.pixels, vec![0, 255]);
    }
}
