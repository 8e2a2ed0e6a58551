//! Dataset bundles: a directory holding the remapped edge list, its
//! metadata and the id mapping.
//!
//! ```text
//! <bundle>/edges.csv    src,dst,t with dense ids, time-sorted
//! <bundle>/meta.json    BundleMeta
//! <bundle>/id_map.csv   id,role,raw
//! ```

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use craft_core::tgstore::{GraphMeta, NodeId, TemporalEdge, Timestamp};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::hex;

/// Sidecar describing the raw edge file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestMeta {
    #[serde(default)]
    pub bipartite: bool,
    /// Expected partition sizes; checked after remapping when given.
    #[serde(default)]
    pub num_sources: Option<usize>,
    #[serde(default)]
    pub num_destinations: Option<usize>,
}

impl IngestMeta {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub num_nodes: usize,
    pub num_edges: usize,
    pub bipartite: bool,
    /// Sources occupy ids `0..num_sources` in a bipartite bundle.
    pub num_sources: usize,
    pub num_destinations: usize,
    /// SHA-256 of `edges.csv`.
    pub checksum: String,
}

impl BundleMeta {
    pub fn graph_meta(&self) -> GraphMeta {
        if self.bipartite {
            GraphMeta::bipartite(self.num_sources, self.num_destinations)
        } else {
            GraphMeta::homogeneous(self.num_nodes)
        }
    }
}

/// A loaded bundle.
#[derive(Clone, Debug)]
pub struct Bundle {
    pub meta: BundleMeta,
    pub edges: Vec<TemporalEdge>,
}

impl Bundle {
    /// Loads a bundle and verifies its checksum.
    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta.json");
        let meta: BundleMeta = serde_json::from_slice(
            &fs::read(&meta_path).with_context(|| format!("reading {}", meta_path.display()))?,
        )
        .with_context(|| format!("parsing {}", meta_path.display()))?;
        let edges_path = dir.join("edges.csv");
        let bytes =
            fs::read(&edges_path).with_context(|| format!("reading {}", edges_path.display()))?;
        let checksum = sha256_hex(&bytes);
        ensure!(
            checksum == meta.checksum,
            "{} does not match the checksum in meta.json (bundle modified?)",
            edges_path.display()
        );
        let mut reader = csv::Reader::from_reader(bytes.as_slice());
        let mut edges = Vec::with_capacity(meta.num_edges);
        for (ord, row) in reader
            .deserialize::<(NodeId, NodeId, Timestamp)>()
            .enumerate()
        {
            let (s, d, t) = row.with_context(|| format!("{}", edges_path.display()))?;
            edges.push(TemporalEdge::new(s, d, t, ord));
        }
        ensure!(
            edges.len() == meta.num_edges,
            "edge count differs from meta.json"
        );
        Ok(Self { meta, edges })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// First-appearance numbering of raw string ids.
#[derive(Default)]
struct IdMap {
    ids: HashMap<String, NodeId>,
    raw: Vec<String>,
}

impl IdMap {
    fn get(&mut self, raw: &str) -> NodeId {
        if let Some(&id) = self.ids.get(raw) {
            return id;
        }
        let id = self.raw.len() as NodeId;
        self.ids.insert(raw.to_string(), id);
        self.raw.push(raw.to_string());
        id
    }
}

fn is_timestamp(field: &str) -> bool {
    field.parse::<Timestamp>().is_ok()
}

/// Reads a raw `src,dst,t` file, remaps ids and writes the bundle into
/// `out`. The first line is treated as a header when its time field is not
/// an integer.
pub fn ingest(edge_file: &Path, meta: &IngestMeta, out: &Path) -> Result<BundleMeta> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(edge_file)
        .with_context(|| format!("opening {}", edge_file.display()))?;

    let mut sources = IdMap::default();
    let mut destinations = IdMap::default();
    let mut raw_edges: Vec<(NodeId, NodeId, Timestamp)> = Vec::new();
    let mut record = csv::StringRecord::new();
    let mut first = true;
    loop {
        let more = reader
            .read_record(&mut record)
            .with_context(|| format!("{}: unreadable record", edge_file.display()))?;
        if !more {
            break;
        }
        let line = record.position().map_or(0, |p| p.line());
        let is_header =
            std::mem::take(&mut first) && record.len() == 3 && !is_timestamp(&record[2]);
        if is_header || (record.len() == 1 && record[0].is_empty()) {
            continue;
        }
        if record.len() != 3 {
            bail!(
                "{}:{line}: expected 3 fields (src,dst,t), found {}",
                edge_file.display(),
                record.len()
            );
        }
        if record[0].is_empty() || record[1].is_empty() {
            bail!("{}:{line}: empty node id", edge_file.display());
        }
        let t: Timestamp = record[2].parse().with_context(|| {
            format!(
                "{}:{line}: timestamp {:?} is not a non-negative integer",
                edge_file.display(),
                &record[2]
            )
        })?;
        if let Some(&(_, _, prev)) = raw_edges.last() {
            if t < prev {
                bail!(
                    "{}:{line}: timestamp regression at edge ordinal {} ({t} after {prev})",
                    edge_file.display(),
                    raw_edges.len()
                );
            }
        }
        let s = sources.get(&record[0]);
        let d = if meta.bipartite {
            destinations.get(&record[1])
        } else {
            sources.get(&record[1])
        };
        raw_edges.push((s, d, t));
    }
    ensure!(
        !raw_edges.is_empty(),
        "{} contains no edges",
        edge_file.display()
    );

    let num_sources = sources.raw.len();
    let (num_nodes, num_destinations, offset) = if meta.bipartite {
        (
            num_sources + destinations.raw.len(),
            destinations.raw.len(),
            num_sources as NodeId,
        )
    } else {
        (num_sources, num_sources, 0)
    };
    if meta.bipartite {
        if let Some(n) = meta.num_sources {
            ensure!(
                n == num_sources,
                "meta declares {n} sources, edge file has {num_sources}"
            );
        }
        if let Some(n) = meta.num_destinations {
            ensure!(
                n == num_destinations,
                "meta declares {n} destinations, edge file has {num_destinations}"
            );
        }
    } else if let Some(n) = meta.num_sources.or(meta.num_destinations) {
        ensure!(
            n == num_nodes,
            "meta declares {n} nodes, edge file has {num_nodes}"
        );
    }
    ensure!(num_nodes <= NodeId::MAX as usize, "too many nodes");

    let mut edges_csv = Vec::with_capacity(raw_edges.len() * 16);
    writeln!(edges_csv, "src,dst,t")?;
    // Destination ids shift past the sources in a bipartite bundle.
    for &(s, d, t) in &raw_edges {
        writeln!(edges_csv, "{s},{},{t}", d + offset)?;
    }

    let mut id_map = csv::Writer::from_writer(Vec::new());
    id_map.write_record(["id", "role", "raw"])?;
    let role = if meta.bipartite { "src" } else { "node" };
    for (id, raw) in sources.raw.iter().enumerate() {
        id_map.write_record([id.to_string().as_str(), role, raw])?;
    }
    for (id, raw) in destinations.raw.iter().enumerate() {
        id_map.write_record([(id + num_sources).to_string().as_str(), "dst", raw])?;
    }
    let id_map = id_map.into_inner().context("flushing id map")?;

    let bundle = BundleMeta {
        num_nodes,
        num_edges: raw_edges.len(),
        bipartite: meta.bipartite,
        num_sources: if meta.bipartite {
            num_sources
        } else {
            num_nodes
        },
        num_destinations,
        checksum: sha256_hex(&edges_csv),
    };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("edges.csv"), &edges_csv)?;
    fs::write(out.join("id_map.csv"), &id_map)?;
    let mut meta_json = serde_json::to_vec_pretty(&bundle)?;
    meta_json.push(b'\n');
    fs::write(out.join("meta.json"), meta_json)?;
    Ok(bundle)
}
