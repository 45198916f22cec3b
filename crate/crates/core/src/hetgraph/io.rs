//! Graph bundles: a directory holding `schema.json`, one
//! `nodes_<type>.csv` per node type and one `edges_<type>.csv` per relation.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EdgeRecord, EdgeType, HeteroGraph, NodeRecord, NodeType, Schema};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct SchemaFile {
    node_types: Vec<NodeTypeEntry>,
    edge_types: Vec<EdgeTypeEntry>,
}

#[derive(Serialize, Deserialize)]
struct NodeTypeEntry {
    name: String,
    attributes: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct EdgeTypeEntry {
    name: String,
    src: String,
    dst: String,
    attributes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reverse_of: Option<String>,
}

fn schema_from_file(sf: SchemaFile) -> Result<Schema> {
    let mut schema = Schema::default();
    for nt in sf.node_types {
        let attrs: Vec<&str> = nt.attributes.iter().map(String::as_str).collect();
        schema.add_node_type(&nt.name, &attrs)?;
    }
    let lookup = |schema: &Schema, name: &str, what: &str| {
        schema.node_type_id(name).ok_or_else(|| {
            Error::schema(
                "schema.json",
                format!("{what} refers to unknown node type {name:?}"),
            )
        })
    };
    let mut reverse_names = Vec::new();
    for et in sf.edge_types {
        let src = lookup(&schema, &et.src, &et.name)?;
        let dst = lookup(&schema, &et.dst, &et.name)?;
        let attrs: Vec<&str> = et.attributes.iter().map(String::as_str).collect();
        schema.add_edge_type(&et.name, src, dst, &attrs)?;
        reverse_names.push(et.reverse_of);
    }
    for (r, rev) in reverse_names.into_iter().enumerate() {
        if let Some(name) = rev {
            let orig = schema.edge_type_id(&name).ok_or_else(|| {
                Error::schema(
                    "schema.json",
                    format!("reverse_of refers to unknown relation {name:?}"),
                )
            })?;
            schema.edge_types[r].reverse_of = Some(orig);
        }
    }
    Ok(schema)
}

fn schema_to_file(schema: &Schema) -> SchemaFile {
    SchemaFile {
        node_types: schema
            .node_types
            .iter()
            .map(|t: &NodeType| NodeTypeEntry {
                name: t.name.clone(),
                attributes: t.attr_names.clone(),
            })
            .collect(),
        edge_types: schema
            .edge_types
            .iter()
            .map(|t: &EdgeType| EdgeTypeEntry {
                name: t.name.clone(),
                src: schema.node_types[t.src_type].name.clone(),
                dst: schema.node_types[t.dst_type].name.clone(),
                attributes: t.attr_names.clone(),
                reverse_of: t.reverse_of.map(|r| schema.edge_types[r].name.clone()),
            })
            .collect(),
    }
}

fn check_header(
    file: &str,
    header: &csv::StringRecord,
    leading: &[&str],
    attrs: &[String],
) -> Result<()> {
    let expected: Vec<&str> = leading
        .iter()
        .copied()
        .chain(attrs.iter().map(String::as_str))
        .collect();
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    for col in &expected {
        if !got.contains(col) {
            return Err(Error::schema(file, format!("missing column {col:?}")));
        }
    }
    if got != expected {
        return Err(Error::schema(
            file,
            format!("header {got:?} does not match expected {expected:?}"),
        ));
    }
    Ok(())
}

fn parse_id(file: &str, line: usize, col: &str, s: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::schema(file, format!("row {line}: column {col}: invalid id {s:?}")))
}

fn parse_f64(file: &str, line: usize, col: &str, s: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| {
        Error::schema(
            file,
            format!("row {line}: column {col}: invalid number {s:?}"),
        )
    })
}

fn open_csv(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })
}

/// Reads and validates a graph bundle.
pub fn load_graph(dir: impl AsRef<Path>) -> Result<HeteroGraph> {
    let dir = dir.as_ref();
    let schema_path = dir.join("schema.json");
    let text = fs::read_to_string(&schema_path).map_err(|e| Error::io(&schema_path, e))?;
    let sf: SchemaFile = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: schema_path.clone(),
        source,
    })?;
    let schema = schema_from_file(sf)?;

    let mut nodes = Vec::new();
    for (o, nt) in schema.node_types.iter().enumerate() {
        let file = format!("nodes_{}.csv", nt.name);
        let path = dir.join(&file);
        let mut rdr = open_csv(&path)?;
        let header = rdr
            .headers()
            .map_err(|source| Error::Csv {
                path: path.clone(),
                source,
            })?
            .clone();
        check_header(&file, &header, &["global_id"], &nt.attr_names)?;
        for (i, row) in rdr.records().enumerate() {
            let line = i + 2;
            let row = row.map_err(|source| Error::Csv {
                path: path.clone(),
                source,
            })?;
            let id = parse_id(&file, line, "global_id", &row[0])?;
            let attrs = nt
                .attr_names
                .iter()
                .enumerate()
                .map(|(j, name)| parse_f64(&file, line, name, &row[j + 1]))
                .collect::<Result<Vec<_>>>()?;
            nodes.push(NodeRecord {
                id,
                node_type: o,
                attrs,
            });
        }
    }

    let mut edges = Vec::new();
    for (r, et) in schema.edge_types.iter().enumerate() {
        let file = format!("edges_{}.csv", et.name);
        let path = dir.join(&file);
        let mut rdr = open_csv(&path)?;
        let header = rdr
            .headers()
            .map_err(|source| Error::Csv {
                path: path.clone(),
                source,
            })?
            .clone();
        check_header(&file, &header, &["edge_id", "src", "dst"], &et.attr_names)?;
        for (i, row) in rdr.records().enumerate() {
            let line = i + 2;
            let row = row.map_err(|source| Error::Csv {
                path: path.clone(),
                source,
            })?;
            let id = parse_id(&file, line, "edge_id", &row[0])?;
            let src = parse_id(&file, line, "src", &row[1])?;
            let dst = parse_id(&file, line, "dst", &row[2])?;
            let attrs = et
                .attr_names
                .iter()
                .enumerate()
                .map(|(j, name)| parse_f64(&file, line, name, &row[j + 3]))
                .collect::<Result<Vec<_>>>()?;
            edges.push(EdgeRecord {
                id,
                src,
                dst,
                rel: r,
                attrs,
            });
        }
    }
    HeteroGraph::from_parts(schema, nodes, edges)
}

fn write_csv(
    path: &Path,
    header: Vec<String>,
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(&header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `g` as a bundle under `dir`, creating it if needed. Numbers are
/// written in shortest round-trip form, so loading the bundle reproduces
/// `g` exactly.
pub fn save_graph(g: &HeteroGraph, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let schema = g.schema();
    let schema_path = dir.join("schema.json");
    let text = serde_json::to_string_pretty(&schema_to_file(schema)).expect("schema serializes");
    fs::write(&schema_path, text + "\n").map_err(|e| Error::io(&schema_path, e))?;

    for (o, nt) in schema.node_types.iter().enumerate() {
        let header = std::iter::once("global_id".to_string())
            .chain(nt.attr_names.iter().cloned())
            .collect();
        let rows = g.nodes_of_type(o).iter().map(|&v| {
            std::iter::once(v.to_string())
                .chain(g.node_attr(v).iter().map(|x| format!("{x:?}")))
                .collect()
        });
        write_csv(&dir.join(format!("nodes_{}.csv", nt.name)), header, rows)?;
    }
    for (r, et) in schema.edge_types.iter().enumerate() {
        let header = ["edge_id", "src", "dst"]
            .iter()
            .map(|s| s.to_string())
            .chain(et.attr_names.iter().cloned())
            .collect();
        let rows = g.edges_of_type(r).iter().map(|&e| {
            let ed = g.edge(e);
            [e.to_string(), ed.src.to_string(), ed.dst.to_string()]
                .into_iter()
                .chain(g.edge_attr(e).iter().map(|x| format!("{x:?}")))
                .collect()
        });
        write_csv(&dir.join(format!("edges_{}.csv", et.name)), header, rows)?;
    }
    Ok(())
}
