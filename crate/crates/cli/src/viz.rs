//! Lambda heatmap extraction: full-precision CSV export, binary portable
//! pixmap (P6) rendering with a sidecar range file, and cross-checkpoint
//! seed comparison of mean-lambda profiles.

use loglin_core::error::{Error, Result};
use loglin_core::model::{Model, ModelTrace};
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadSel {
    Index(usize),
    Averaged,
}

impl std::str::FromStr for HeadSel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "avg" || s == "averaged" {
            return Ok(HeadSel::Averaged);
        }
        s.parse::<usize>()
            .map(HeadSel::Index)
            .map_err(|_| Error::InvalidConfig(format!("head must be an index or `avg`, got `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    TokenLevel,
    Averaged,
    SeedComparison,
}

impl std::str::FromStr for View {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "token_level" => Ok(View::TokenLevel),
            "averaged" => Ok(View::Averaged),
            "seed_comparison" => Ok(View::SeedComparison),
            other => Err(Error::InvalidConfig(format!(
                "view must be token_level | averaged | seed_comparison, got `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HeatmapSpec {
    pub layer: usize,
    pub head: HeadSel,
    pub view: View,
    pub sample: usize,
}

/// One token-level CSV row: `layer,head,level,position,active,lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaRow {
    pub layer: usize,
    pub head: String,
    pub level: usize,
    pub position: usize,
    pub active: u8,
    pub lambda: f64,
}

fn check_spec(model: &Model, spec: &HeatmapSpec) -> Result<()> {
    if spec.layer >= model.cfg.n_layers {
        return Err(Error::InvalidConfig(format!(
            "layer {} out of range ({} layers)",
            spec.layer, model.cfg.n_layers
        )));
    }
    if let HeadSel::Index(h) = spec.head {
        if h >= model.cfg.heads {
            return Err(Error::InvalidConfig(format!(
                "head {} out of range ({} heads)",
                h, model.cfg.heads
            )));
        }
    }
    Ok(())
}

/// Token-level rows for the selected layer and head (or the head average)
/// from one sample's trace: T x L rows, `active` from the Fenwick structure
/// of t+1.
pub fn lambda_rows(model: &Model, trace: &ModelTrace, spec: &HeatmapSpec) -> Result<Vec<LambdaRow>> {
    check_spec(model, spec)?;
    let layer = &trace.layers[spec.layer];
    let mut rows = Vec::with_capacity(layer.t * layer.levels);
    for position in 0..layer.t {
        for level in 0..layer.levels {
            let (head, lambda) = match spec.head {
                HeadSel::Index(h) => (h.to_string(), layer.lambda_at(position, h, level)),
                HeadSel::Averaged => {
                    let sum: f64 = (0..layer.heads)
                        .map(|h| layer.lambda_at(position, h, level))
                        .sum();
                    ("avg".to_string(), sum / layer.heads as f64)
                }
            };
            rows.push(LambdaRow {
                layer: spec.layer,
                head,
                level,
                position,
                active: layer.is_active(position, level) as u8,
                lambda,
            });
        }
    }
    Ok(rows)
}

/// Full-precision CSV (shortest round-trip f64 formatting).
pub fn write_lambda_csv<W: Write>(out: &mut W, rows: &[LambdaRow]) -> Result<()> {
    writeln!(out, "layer,head,level,position,active,lambda")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.layer, r.head, r.level, r.position, r.active, r.lambda
        )?;
    }
    Ok(())
}

/// Mean lambda per (layer, head, level) over tokens and samples.
pub fn mean_profile(model: &Model, traces: &[ModelTrace]) -> Vec<(usize, usize, usize, f64)> {
    let layers = model.cfg.n_layers;
    let heads = model.cfg.heads;
    let levels = model.cfg.levels();
    let mut sums = vec![0.0; layers * heads * levels];
    let mut count = 0usize;
    for trace in traces {
        for (li, layer) in trace.layers.iter().enumerate() {
            for t in 0..layer.t {
                for h in 0..heads {
                    for l in 0..levels {
                        sums[(li * heads + h) * levels + l] += layer.lambda_at(t, h, l);
                    }
                }
            }
        }
        count += trace.layers.first().map(|l| l.t).unwrap_or(0);
    }
    let denom = count.max(1) as f64;
    let mut out = Vec::with_capacity(sums.len());
    for li in 0..layers {
        for h in 0..heads {
            for l in 0..levels {
                out.push((li, h, l, sums[(li * heads + h) * levels + l] / denom));
            }
        }
    }
    out
}

/// CSV for the averaged view: `layer,head,level,lambda_mean`.
pub fn write_profile_csv<W: Write>(out: &mut W, profile: &[(usize, usize, usize, f64)]) -> Result<()> {
    writeln!(out, "layer,head,level,lambda_mean")?;
    for (layer, head, level, mean) in profile {
        writeln!(out, "{layer},{head},{level},{mean}")?;
    }
    Ok(())
}

/// CSV for the seed-comparison view: `seed,layer,head,level,lambda_mean`,
/// grouped by seed in input order.
pub fn write_seed_comparison_csv<W: Write>(
    out: &mut W,
    profiles: &[(u64, Vec<(usize, usize, usize, f64)>)],
) -> Result<()> {
    writeln!(out, "seed,layer,head,level,lambda_mean")?;
    for (seed, profile) in profiles {
        for (layer, head, level, mean) in profile {
            writeln!(out, "{seed},{layer},{head},{level},{mean}")?;
        }
    }
    Ok(())
}

const CELL: usize = 8;
// Single-hue ramp, white at the data minimum to dark blue at the maximum.
const RAMP_LO: [f64; 3] = [255.0, 255.0, 255.0];
const RAMP_HI: [f64; 3] = [8.0, 48.0, 107.0];

/// Binary P6 pixmap: one CELL x CELL block per (level row, position column),
/// level 0 on top. The color map is linear over [min, max] of the data; the
/// range is written to `<image>.range.txt`. `boundary` (a position index)
/// draws a dashed red vertical line at that column's left edge — the copy
/// target region marker for selective-copy runs.
pub fn render_heatmap(
    rows: &[LambdaRow],
    levels: usize,
    positions: usize,
    path: &Path,
    boundary: Option<usize>,
) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::InvalidConfig("render_heatmap: empty input".into()));
    }
    if rows.len() != levels * positions {
        return Err(Error::InvalidConfig(format!(
            "render_heatmap: {} rows for {} cells",
            rows.len(),
            levels * positions
        )));
    }
    let mut grid = vec![0.0; levels * positions];
    for r in rows {
        grid[r.level * positions + r.position] = r.lambda;
    }
    let min = grid.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = grid.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if max > min { max - min } else { 1.0 };

    let w = positions * CELL;
    let h = levels * CELL;
    let mut pixels = vec![0u8; w * h * 3];
    for level in 0..levels {
        for pos in 0..positions {
            let t = (grid[level * positions + pos] - min) / span;
            let rgb = [
                (RAMP_LO[0] + t * (RAMP_HI[0] - RAMP_LO[0])) as u8,
                (RAMP_LO[1] + t * (RAMP_HI[1] - RAMP_LO[1])) as u8,
                (RAMP_LO[2] + t * (RAMP_HI[2] - RAMP_LO[2])) as u8,
            ];
            for dy in 0..CELL {
                let y = level * CELL + dy;
                for dx in 0..CELL {
                    let x = pos * CELL + dx;
                    let at = (y * w + x) * 3;
                    pixels[at..at + 3].copy_from_slice(&rgb);
                }
            }
        }
    }
    if let Some(b) = boundary {
        let x0 = (b * CELL).min(w.saturating_sub(2));
        for y in 0..h {
            if (y / 4) % 2 == 0 {
                for x in [x0, x0 + 1] {
                    let at = (y * w + x) * 3;
                    pixels[at..at + 3].copy_from_slice(&[220, 20, 20]);
                }
            }
        }
    }

    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(file, "P6\n{w} {h}\n255\n")?;
    file.write_all(&pixels)?;
    file.flush()?;

    let range_path = path.with_extension(format!(
        "{}.range.txt",
        path.extension().and_then(|e| e.to_str()).unwrap_or("ppm")
    ));
    let mut range = std::fs::File::create(range_path)?;
    writeln!(range, "min={min} max={max}")?;
    Ok(())
}
