//! On-disk dataset layout.
//!
//! ```text
//! DIR/split.json                 {"train": [..], "val": [..], "test": [..]}
//! DIR/design_000/meta.json       {"H", "W", "C", "b", "a", "seed", "bin_w", "bin_h"}
//! DIR/design_000/geom.f32        H*W*3 little-endian f32, [row][col][channel]
//! DIR/design_000/topo_features.f32   C*b
//! DIR/design_000/adjacency.edges one "j k" per line, j < k
//! DIR/design_000/target.f32      H*W
//! DIR/design_000/design.{nodes,nets,pl}
//! ```
//!
//! Feature and target values are held at f32 precision in memory as well, so
//! a saved and reloaded dataset is identical to the generated one.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    build_topo_features, geom_features, parse_bookshelf, synth_generate, write_bookshelf, CircuitError,
    CongestionMap, GeomFeatureMap, GridSpec, Netlist, Placement, SynthSpec, TopoGraph,
};

/// One design with its features and ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub name: String,
    pub seed: u64,
    /// Neighborhood radius the example was prepared for.
    pub a: usize,
    pub grid: GridSpec,
    pub netlist: Netlist,
    pub placement: Placement,
    pub geom: GeomFeatureMap,
    pub topo: TopoGraph,
    pub target: CongestionMap,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    #[serde(rename = "H")]
    h: usize,
    #[serde(rename = "W")]
    w: usize,
    #[serde(rename = "C")]
    c: usize,
    b: usize,
    a: usize,
    seed: u64,
    bin_w: f64,
    bin_h: f64,
}

fn to_f32_precision(values: &mut [f64]) {
    for v in values {
        *v = *v as f32 as f64;
    }
}

fn write_f32(path: &Path, values: &[f64]) -> Result<(), CircuitError> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for &v in values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn read_f32(path: &Path, expected: usize) -> Result<Vec<f64>, CircuitError> {
    let bytes = fs::read(path)?;
    if bytes.len() != expected * 4 {
        return Err(CircuitError::InvalidDataset(format!(
            "{} holds {} bytes, expected {}",
            path.display(),
            bytes.len(),
            expected * 4
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect())
}

impl Example {
    /// Derives the feature channels and cell graph from a placed design.
    pub fn from_design(
        name: String,
        seed: u64,
        a: usize,
        grid: GridSpec,
        netlist: Netlist,
        placement: Placement,
        target: CongestionMap,
    ) -> Result<Self, CircuitError> {
        placement.validate(&netlist)?;
        if target.rows != grid.rows || target.cols != grid.cols {
            return Err(CircuitError::InvalidDataset(format!(
                "target is {}x{}, grid is {}x{}",
                target.rows, target.cols, grid.rows, grid.cols
            )));
        }
        let mut geom = geom_features(&netlist, &placement, &grid);
        let mut topo = build_topo_features(&netlist, Some(&placement));
        let mut target_values = target.values;
        to_f32_precision(&mut geom.values);
        to_f32_precision(&mut topo.features);
        to_f32_precision(&mut target_values);
        let target = CongestionMap::new(grid.rows, grid.cols, target_values)?;
        Ok(Example {
            name,
            seed,
            a,
            grid,
            netlist,
            placement,
            geom,
            topo,
            target,
        })
    }

    /// Row-major bin index of every cell center.
    pub fn cell_bins(&self) -> Vec<usize> {
        (0..self.netlist.cells().len())
            .map(|i| {
                let (x, y) = self.placement.cell_center(&self.netlist, i);
                self.grid.bin_of(x, y)
            })
            .collect()
    }

    pub fn save(&self, dir: &Path) -> Result<(), CircuitError> {
        fs::create_dir_all(dir)?;
        let meta = Meta {
            h: self.grid.rows,
            w: self.grid.cols,
            c: self.topo.cells,
            b: self.topo.width,
            a: self.a,
            seed: self.seed,
            bin_w: self.grid.bin_w,
            bin_h: self.grid.bin_h,
        };
        fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
        write_f32(&dir.join("geom.f32"), &self.geom.values)?;
        write_f32(&dir.join("topo_features.f32"), &self.topo.features)?;
        write_f32(&dir.join("target.f32"), &self.target.values)?;
        let edges: String = self.topo.edges.iter().map(|(j, k)| format!("{j} {k}\n")).collect();
        fs::write(dir.join("adjacency.edges"), edges)?;
        let text = write_bookshelf(&self.netlist, &self.placement);
        fs::write(dir.join("design.nodes"), text.nodes)?;
        fs::write(dir.join("design.nets"), text.nets)?;
        fs::write(dir.join("design.pl"), text.pl)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, CircuitError> {
        let meta: Meta = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;
        let grid = GridSpec::new(meta.h, meta.w, meta.bin_w, meta.bin_h)?;
        let (netlist, placement) = parse_bookshelf(
            &fs::read_to_string(dir.join("design.nodes"))?,
            &fs::read_to_string(dir.join("design.nets"))?,
            &fs::read_to_string(dir.join("design.pl"))?,
        )?;
        if netlist.cells().len() != meta.c {
            return Err(CircuitError::InvalidDataset(format!(
                "meta.json says C = {}, design has {} cells",
                meta.c,
                netlist.cells().len()
            )));
        }
        let geom = GeomFeatureMap {
            rows: meta.h,
            cols: meta.w,
            values: read_f32(&dir.join("geom.f32"), meta.h * meta.w * GeomFeatureMap::CHANNELS)?,
        };
        let features = read_f32(&dir.join("topo_features.f32"), meta.c * meta.b)?;
        let mut edges = Vec::new();
        for (i, line) in fs::read_to_string(dir.join("adjacency.edges"))?.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let bad = || CircuitError::Syntax {
                file: "adjacency.edges",
                line: i + 1,
                msg: format!("expected 'j k' with j < k < {}, found {line:?}", meta.c),
            };
            let mut toks = line.split_whitespace().map(str::parse::<usize>);
            let (Some(Ok(j)), Some(Ok(k)), None) = (toks.next(), toks.next(), toks.next()) else {
                return Err(bad());
            };
            if j >= k || k >= meta.c {
                return Err(bad());
            }
            edges.push((j, k));
        }
        edges.sort_unstable();
        edges.dedup();
        let topo = TopoGraph {
            cells: meta.c,
            width: meta.b,
            features,
            edges,
        };
        let target = CongestionMap::new(meta.h, meta.w, read_f32(&dir.join("target.f32"), meta.h * meta.w)?)?;
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(Example {
            name,
            seed: meta.seed,
            a: meta.a,
            grid,
            netlist,
            placement,
            geom,
            topo,
            target,
        })
    }
}

/// Example indices of the three partitions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// 70/15/15 in index order; the training share is rounded, the remainder
    /// after the rounded validation share is the test set.
    pub fn by_fraction(n: usize) -> Self {
        let n_train = ((0.70 * n as f64).round() as usize).min(n);
        let n_val = ((0.15 * n as f64).round() as usize).min(n - n_train);
        Split {
            train: (0..n_train).collect(),
            val: (n_train..n_train + n_val).collect(),
            test: (n_train + n_val..n).collect(),
        }
    }

    pub fn indices(&self, name: &str) -> Option<&[usize]> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub split: Split,
}

impl Dataset {
    pub fn new(examples: Vec<Example>, split: Split) -> Result<Self, CircuitError> {
        if split.train.is_empty() {
            return Err(CircuitError::InvalidDataset("training split is empty".into()));
        }
        let all = split.train.iter().chain(&split.val).chain(&split.test);
        if let Some(i) = all.clone().find(|&&i| i >= examples.len()) {
            return Err(CircuitError::InvalidDataset(format!(
                "split references example {i} of {}",
                examples.len()
            )));
        }
        let first = &examples[split.train[0]];
        for e in &examples {
            if e.grid != first.grid || e.topo.width != first.topo.width || e.a != first.a {
                return Err(CircuitError::InvalidDataset(format!(
                    "example {} does not share the grid/feature layout of {}",
                    e.name, first.name
                )));
            }
        }
        Ok(Dataset { examples, split })
    }

    /// Generates `n` synthetic designs in parallel; design `i` uses seed
    /// `seed * 1000 + i`.
    pub fn synthetic(n: usize, spec: &SynthSpec, seed: u64) -> Result<Self, CircuitError> {
        let examples = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut e = synth_generate(seed.wrapping_mul(1000).wrapping_add(i as u64), spec)?;
                e.name = format!("design_{i:03}");
                Ok(e)
            })
            .collect::<Result<Vec<_>, CircuitError>>()?;
        Dataset::new(examples, Split::by_fraction(n))
    }

    pub fn save(&self, dir: &Path) -> Result<(), CircuitError> {
        fs::create_dir_all(dir)?;
        for (i, e) in self.examples.iter().enumerate() {
            e.save(&dir.join(format!("design_{i:03}")))?;
        }
        fs::write(dir.join("split.json"), serde_json::to_string(&self.split)? + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, CircuitError> {
        if !dir.is_dir() {
            return Err(CircuitError::InvalidDataset(format!("{} is not a directory", dir.display())));
        }
        let split: Split = serde_json::from_str(&fs::read_to_string(dir.join("split.json"))?)?;
        let mut names: Vec<_> = fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join("meta.json").is_file())
            .map(|e| e.file_name())
            .collect();
        names.sort();
        let examples = names
            .iter()
            .map(|n| Example::load(&dir.join(n)))
            .collect::<Result<Vec<_>, _>>()?;
        Dataset::new(examples, split)
    }

    pub fn split_examples(&self, name: &str) -> Option<Vec<&Example>> {
        self.split
            .indices(name)
            .map(|ix| ix.iter().map(|&i| &self.examples[i]).collect())
    }
}
