//! On-disk formats: edge-list CSV with a JSON sidecar, and parameter checkpoints.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SgnnError};
use crate::graph::{Edge, Graph, ShiftKind};
use crate::gres::GresModel;
use crate::model::{Architecture, SgnnParams};
use crate::objective::DualVars;

/// Writes `i,j,w` rows, zero-based ids.
pub fn write_edge_list<W: Write>(graph: &Graph, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["i", "j", "w"])?;
    for e in graph.edges() {
        wr.write_record([e.i.to_string(), e.j.to_string(), format_float(e.w)])?;
    }
    wr.flush()?;
    Ok(())
}

/// Shortest round-tripping representation.
fn format_float(v: f64) -> String {
    format!("{v:?}")
}

#[derive(Deserialize)]
struct EdgeRow {
    i: usize,
    j: usize,
    w: f64,
}

pub fn read_edge_list<R: Read>(r: R) -> Result<Vec<Edge>> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let headers = rd.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["i", "j", "w"] {
        return Err(SgnnError::Parse {
            line: 1,
            msg: "expected header i,j,w".into(),
        });
    }
    let mut out = Vec::new();
    for (k, row) in rd.deserialize::<EdgeRow>().enumerate() {
        let row = row.map_err(|e| SgnnError::Parse {
            line: k + 2,
            msg: e.to_string(),
        })?;
        out.push(Edge::new(row.i, row.j, row.w));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GresSidecar {
    pub drop_edges: Vec<(usize, usize)>,
    pub add_edges: Vec<Edge>,
    pub p: f64,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSidecar {
    pub n: usize,
    pub kind: ShiftKind,
    #[serde(default)]
    pub gres: Option<GresSidecar>,
}

fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Writes `path` (edge list) and the sidecar next to it with a `.json` extension.
pub fn save_graph(path: &Path, graph: &Graph, kind: ShiftKind, gres: Option<&GresModel>) -> Result<()> {
    write_edge_list(graph, BufWriter::new(File::create(path)?))?;
    let sidecar = GraphSidecar {
        n: graph.n(),
        kind,
        gres: gres.map(|m| GresSidecar {
            drop_edges: m.drop_edges().iter().map(Edge::key).collect(),
            add_edges: m.add_edges().to_vec(),
            p: m.p(),
            q: m.q(),
        }),
    };
    write_json(&sidecar_path(path), &sidecar)
}

/// Loads a graph and, when the sidecar carries one, its random-edge model.
pub fn load_graph(path: &Path) -> Result<(Graph, GraphSidecar, Option<GresModel>)> {
    let edges = read_edge_list(BufReader::new(File::open(path)?))?;
    let sidecar: GraphSidecar = read_json(&sidecar_path(path))?;
    let graph = Graph::new(sidecar.n, edges)?;
    let model = match &sidecar.gres {
        Some(g) => Some(GresModel::new(
            graph.clone(),
            sidecar.kind,
            &g.drop_edges,
            g.add_edges.clone(),
            g.p,
            g.q,
        )?),
        None => None,
    };
    Ok((graph, sidecar, model))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// Where a resumed run picks up its randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub master_seed: u64,
    pub next_iteration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutParams {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub architecture: Architecture,
    pub n: usize,
    /// `[layer][out_feature][in_feature][tap]`.
    pub coeffs: Vec<Vec<Vec<Vec<f64>>>>,
    pub readout: Option<ReadoutParams>,
    pub rng_state: RngState,
    pub iteration: usize,
    #[serde(default)]
    pub gamma: DualVars,
}

impl Checkpoint {
    pub fn new(params: &SgnnParams, gamma: DualVars, master_seed: u64, iteration: usize) -> Self {
        Checkpoint {
            architecture: params.arch().clone(),
            n: params.n(),
            coeffs: params.nested_coeffs(),
            readout: params
                .nested_readout()
                .map(|(weights, bias)| ReadoutParams { weights, bias }),
            rng_state: RngState {
                master_seed,
                next_iteration: iteration,
            },
            iteration,
            gamma,
        }
    }

    pub fn params(&self) -> Result<SgnnParams> {
        let readout = self.readout.as_ref().map(|r| (r.weights.clone(), r.bias.clone()));
        SgnnParams::from_nested(self.architecture.clone(), self.n, &self.coeffs, readout.as_ref())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Activation;
    use crate::rng::stream;

    #[test]
    fn edge_list_round_trip() {
        let g = Graph::new(4, [Edge::new(0, 1, 0.1), Edge::new(3, 2, 1.0 / 3.0)]).unwrap();
        let mut buf = Vec::new();
        write_edge_list(&g, &mut buf).unwrap();
        assert!(buf.starts_with(b"i,j,w\n"));
        let back = Graph::new(4, read_edge_list(&buf[..]).unwrap()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn malformed_row_reports_line() {
        let err = read_edge_list(&b"i,j,w\n0,1,1.0\n0,x,1.0\n"[..]).unwrap_err();
        assert!(matches!(err, SgnnError::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn graph_and_model_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        let g = Graph::new(3, [Edge::new(0, 1, 1.0), Edge::new(1, 2, 2.0)]).unwrap();
        let m = GresModel::new(g.clone(), ShiftKind::Laplacian, &[(1, 2)], vec![Edge::new(0, 2, 0.5)], 0.2, 0.3)
            .unwrap();
        save_graph(&path, &g, ShiftKind::Laplacian, Some(&m)).unwrap();
        let (g2, side, m2) = load_graph(&path).unwrap();
        assert_eq!(g2, g);
        assert_eq!(side.kind, ShiftKind::Laplacian);
        let m2 = m2.unwrap();
        assert_eq!(m2.drop_edges(), m.drop_edges());
        assert_eq!(m2.add_edges(), m.add_edges());
        assert_eq!((m2.p(), m2.q()), (0.2, 0.3));
    }

    #[test]
    fn checkpoint_round_trip() {
        let arch = Architecture {
            widths: vec![1, 2, 1],
            k: 2,
            activation: Activation::Relu,
            readout: Some(crate::model::Readout {
                kind: crate::model::ReadoutKind::Dense,
                out_dim: 3,
            }),
            realization_mode: Default::default(),
        };
        let p = SgnnParams::init(arch, 5, &mut stream(1)).unwrap();
        let c = Checkpoint::new(&p, DualVars { gamma1: 0.5, gamma2: 0.0 }, 9, 12);
        let text = serde_json::to_string(&c).unwrap();
        let back: Checkpoint = serde_json::from_str(&text).unwrap();
        assert_eq!(back.params().unwrap().values(), p.values());
        assert_eq!(back.rng_state.next_iteration, 12);
    }
}
