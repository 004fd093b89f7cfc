//! Flow files: JSON `{depth, levels}` and flat CSV `depth,path_bits,mass`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::array::TreeArray;
use super::flow::Flow;
use super::vertex::VertexId;
use crate::error::{CascadeError, Result};

#[derive(Serialize, Deserialize)]
struct FlowJson {
    depth: u32,
    levels: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct FlowRow {
    depth: u32,
    path_bits: u64,
    mass: f64,
}

impl Flow {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&FlowJson {
            depth: self.depth(),
            levels: self.levels(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Flow> {
        let raw: FlowJson = serde_json::from_str(s)?;
        if raw.levels.len() as u32 != raw.depth + 1 {
            return Err(CascadeError::InvalidFlow(format!(
                "depth {} but {} levels",
                raw.depth,
                raw.levels.len()
            )));
        }
        Flow::from_levels(raw.levels)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for (v, &mass) in self.masses().iter() {
            w.serialize(FlowRow {
                depth: v.depth(),
                path_bits: v.bits(),
                mass,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the flat CSV form; rows may come in any order but every vertex
    /// down to the deepest listed level must appear exactly once.
    pub fn read_csv<R: Read>(input: R) -> Result<Flow> {
        let mut rows = Vec::new();
        for row in csv::Reader::from_reader(input).deserialize() {
            let row: FlowRow = row?;
            rows.push((VertexId::new(row.depth, row.path_bits)?, row.mass));
        }
        let depth = rows
            .iter()
            .map(|(v, _)| v.depth())
            .max()
            .ok_or_else(|| CascadeError::InvalidFlow("empty CSV".into()))?;
        let mut mass = TreeArray::filled(depth, f64::NAN);
        let mut seen = TreeArray::filled(depth, false);
        for (v, m) in rows {
            if seen[v] {
                return Err(CascadeError::InvalidFlow(format!("duplicate vertex {v}")));
            }
            seen[v] = true;
            mass[v] = m;
        }
        if let Some(i) = seen.as_slice().iter().position(|s| !s) {
            return Err(CascadeError::InvalidFlow(format!(
                "missing vertex {}",
                VertexId::from_heap_index(i)
            )));
        }
        Flow::from_levels((0..=depth).map(|k| mass.level(k).to_vec()).collect())
    }

    /// Loads `.json` or `.csv` by extension.
    pub fn load(path: &Path) -> Result<Flow> {
        let bytes = std::fs::read(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Flow::read_csv(bytes.as_slice()),
            _ => Flow::from_json(
                std::str::from_utf8(&bytes)
                    .map_err(|e| CascadeError::InvalidFlow(format!("{}: {e}", path.display())))?,
            ),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => self.write_csv(std::fs::File::create(path)?),
            _ => Ok(std::fs::write(path, self.to_json()?)?),
        }
    }
}
