use std::fmt::Write as _;

use anyhow::{bail, Context, Result};
use srlocal_core::projection::ProjectedCloud;
use srlocal_core::registration::Transform;

pub fn transforms_to_csv(transforms: &[Transform]) -> String {
    let mut out = String::from("frame,tx,ty\n");
    for (k, t) in transforms.iter().enumerate() {
        let _ = writeln!(out, "{k},{:?},{:?}", t.tx, t.ty);
    }
    out
}

/// Parses `frame,tx,ty` rows; frames must be listed as 0, 1, 2, ...
pub fn transforms_from_csv(text: &str) -> Result<Vec<Transform>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == "frame,tx,ty" => {}
        other => bail!("expected header `frame,tx,ty`, found {other:?}"),
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 3 {
            bail!("row {}: expected 3 columns", i + 1);
        }
        let frame: usize = cols[0].parse().with_context(|| format!("row {}: frame", i + 1))?;
        if frame != i {
            bail!("row {}: frame {frame} out of order", i + 1);
        }
        let tx: f64 = cols[1].parse().with_context(|| format!("row {}: tx", i + 1))?;
        let ty: f64 = cols[2].parse().with_context(|| format!("row {}: ty", i + 1))?;
        out.push(Transform::new(tx, ty));
    }
    Ok(out)
}

pub fn cloud_to_csv(cloud: &ProjectedCloud) -> String {
    let mut out = String::from("x,y,value,frame\n");
    for p in cloud.pixels() {
        let _ = writeln!(out, "{:?},{:?},{:?},{}", p.x, p.y, p.value, p.frame);
    }
    out
}
