//! JSON model, gain and certificate files.
//!
//! Matrices are row-major nested arrays. Unknown transition cells are the
//! string `"?"`. Gain grids are keyed `"i,m"` with one-based mode and node.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::augment::EstimatorGains;
use crate::linalg::{from_rows, to_rows};
use crate::lmi::Certificate;
use crate::model::{
    validate_model, Activation, CompletionError, DelaySpec, MjnnModel, ModeMatrices, ModelError, SectorBounds,
    TransitionCompletion, TransitionEntry, TransitionSpec,
};
use crate::protocol::{NodePartition, ProtocolError, WtodConfig, WtodWeights};

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid model: {}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<ModelError>),
    #[error("invalid protocol: {0}")]
    Protocol(#[from] ProtocolError),
    #[error("invalid completion: {0}")]
    Completion(#[from] CompletionError),
    #[error("invalid gains: {0}")]
    Gains(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModeFile {
    #[serde(rename = "A")]
    a: Rows,
    #[serde(rename = "B")]
    b: Rows,
    #[serde(rename = "C")]
    c: Rows,
    #[serde(rename = "D1")]
    d1: Rows,
    #[serde(rename = "D2")]
    d2: Rows,
    #[serde(rename = "E")]
    e: Rows,
    #[serde(rename = "M")]
    m: Rows,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum Cell {
    Known(f64),
    Mark(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SectorFile {
    #[serde(rename = "F1")]
    f1: Rows,
    #[serde(rename = "F2")]
    f2: Rows,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DelayFile {
    min: usize,
    max: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ActivationFile {
    #[serde(rename = "type")]
    kind: String,
    scales: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum WeightsFile {
    Named(String),
    Matrices(Vec<Rows>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProtocolFile {
    partition: Vec<usize>,
    weights: WeightsFile,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    modes: Vec<ModeFile>,
    transitions: Vec<Vec<Cell>>,
    sector: SectorFile,
    delay: DelayFile,
    activation: ActivationFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    protocol: Option<ProtocolFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    completion: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gains: Option<BTreeMap<String, Rows>>,
}

/// Model plus the optional protocol, completion and gain sections of a file.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub model: MjnnModel,
    pub wtod: WtodConfig,
    /// Supplied completion, or the known matrix when every cell is known.
    pub completion: Option<TransitionCompletion>,
    pub gains: Option<EstimatorGains>,
}

fn matrix(rows: &Rows, what: &str) -> Result<DMatrix<f64>, IoError> {
    if rows.is_empty() {
        return Ok(DMatrix::zeros(0, 0));
    }
    let c = rows[0].len();
    if rows.iter().any(|r| r.len() != c) {
        return Err(IoError::Parse(format!("{what} has rows of different lengths")));
    }
    Ok(from_rows(rows))
}

fn read(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|source| IoError::Read { path: path.display().to_string(), source })
}

fn parse_gain_map(map: &BTreeMap<String, Rows>, modes: usize, nodes: usize) -> Result<EstimatorGains, IoError> {
    let mut k: Vec<Vec<Option<DMatrix<f64>>>> = vec![vec![None; nodes]; modes];
    for (key, rows) in map {
        let parts: Vec<&str> = key.split(',').map(str::trim).collect();
        let idx = |s: &str| s.parse::<usize>().ok().filter(|&v| v >= 1);
        let (Some(i), Some(m)) = (parts.first().and_then(|s| idx(s)), parts.get(1).and_then(|s| idx(s))) else {
            return Err(IoError::Gains(format!("bad key {key:?}, expected \"i,m\"")));
        };
        if parts.len() != 2 || i > modes || m > nodes {
            return Err(IoError::Gains(format!("key {key:?} outside {modes} modes x {nodes} nodes")));
        }
        k[i - 1][m - 1] = Some(matrix(rows, key)?);
    }
    let mut out = Vec::with_capacity(modes);
    for (i, row) in k.into_iter().enumerate() {
        let mut r = Vec::with_capacity(nodes);
        for (m, g) in row.into_iter().enumerate() {
            r.push(g.ok_or_else(|| IoError::Gains(format!("missing gain \"{},{}\"", i + 1, m + 1)))?);
        }
        out.push(r);
    }
    Ok(EstimatorGains { k: out })
}

pub fn parse_model(text: &str) -> Result<LoadedModel, IoError> {
    let f: ModelFile = serde_json::from_str(text).map_err(|e| IoError::Parse(e.to_string()))?;
    let mut modes = Vec::with_capacity(f.modes.len());
    for (i, md) in f.modes.iter().enumerate() {
        let name = |m: &str| format!("mode {} {m}", i + 1);
        modes.push(ModeMatrices {
            a: matrix(&md.a, &name("A"))?,
            b: matrix(&md.b, &name("B"))?,
            c: matrix(&md.c, &name("C"))?,
            d1: matrix(&md.d1, &name("D1"))?,
            d2: matrix(&md.d2, &name("D2"))?,
            e: matrix(&md.e, &name("E"))?,
            m: matrix(&md.m, &name("M"))?,
        });
    }
    let mut entries = Vec::with_capacity(f.transitions.len());
    for row in &f.transitions {
        let mut r = Vec::with_capacity(row.len());
        for cell in row {
            r.push(match cell {
                Cell::Known(p) => TransitionEntry::Known(*p),
                Cell::Mark(s) if s == "?" => TransitionEntry::Unknown,
                Cell::Mark(s) => return Err(IoError::Parse(format!("transition cell {s:?} is neither a number nor \"?\""))),
            });
        }
        entries.push(r);
    }
    if f.activation.kind != "tanh" {
        return Err(IoError::Parse(format!("unsupported activation type {:?}", f.activation.kind)));
    }
    let model = MjnnModel {
        modes,
        transitions: TransitionSpec { entries },
        sector: SectorBounds { f1: matrix(&f.sector.f1, "F1")?, f2: matrix(&f.sector.f2, "F2")? },
        delay: DelaySpec { min: f.delay.min, max: f.delay.max },
        activation: Activation::Tanh { scales: f.activation.scales.clone() },
    };
    let model = validate_model(model).map_err(IoError::Invalid)?;
    let wtod = match &f.protocol {
        None => WtodConfig::identity(NodePartition::single(model.ny())),
        Some(p) => {
            let partition = NodePartition::new(p.partition.clone())?;
            if partition.total() != model.ny() {
                return Err(ProtocolError::PartitionSize { expected: model.ny(), found: partition.total() }.into());
            }
            let weights = match &p.weights {
                WeightsFile::Named(s) if s == "identity" => WtodWeights::identity(&partition),
                WeightsFile::Named(s) => return Err(IoError::Parse(format!("unknown weights {s:?}"))),
                WeightsFile::Matrices(ms) => WtodWeights {
                    q: ms.iter().enumerate().map(|(m, q)| matrix(q, &format!("Q{}", m + 1))).collect::<Result<_, _>>()?,
                },
            };
            WtodConfig::new(partition, weights)?
        }
    };
    let completion = match &f.completion {
        Some(rows) => Some(TransitionCompletion::new(matrix(rows, "completion")?, &model.transitions)?),
        None if model.transitions.is_fully_known() => Some(TransitionCompletion::from_known(&model.transitions)?),
        None => None,
    };
    let gains = match &f.gains {
        Some(map) => {
            let g = parse_gain_map(map, model.n_modes(), wtod.nodes())?;
            g.check(model.n_modes(), wtod.nodes(), model.n_aug(), model.ny()).map_err(|e| IoError::Gains(e.to_string()))?;
            Some(g)
        }
        None => None,
    };
    Ok(LoadedModel { model, wtod, completion, gains })
}

pub fn load_model(path: &Path) -> Result<LoadedModel, IoError> {
    parse_model(&read(path)?)
}

/// Reads a gain grid from a file holding `{"gains": {"i,m": ...}}`.
pub fn parse_gains(text: &str, model: &MjnnModel, wtod: &WtodConfig) -> Result<EstimatorGains, IoError> {
    #[derive(Deserialize)]
    struct GainsFile {
        gains: BTreeMap<String, Rows>,
    }
    let f: GainsFile = serde_json::from_str(text).map_err(|e| IoError::Parse(e.to_string()))?;
    let g = parse_gain_map(&f.gains, model.n_modes(), wtod.nodes())?;
    g.check(model.n_modes(), wtod.nodes(), model.n_aug(), model.ny()).map_err(|e| IoError::Gains(e.to_string()))?;
    Ok(g)
}

pub fn load_gains(path: &Path, model: &MjnnModel, wtod: &WtodConfig) -> Result<EstimatorGains, IoError> {
    parse_gains(&read(path)?, model, wtod)
}

fn gain_map(gains: &EstimatorGains) -> BTreeMap<String, Rows> {
    let mut map = BTreeMap::new();
    for (i, row) in gains.k.iter().enumerate() {
        for (m, k) in row.iter().enumerate() {
            map.insert(format!("{},{}", i + 1, m + 1), to_rows(k));
        }
    }
    map
}

pub fn gains_to_json(gains: &EstimatorGains) -> Value {
    json!({ "gains": gain_map(gains) })
}

/// Serializes a model with its protocol section. Custom activations cannot be written.
pub fn model_to_json(model: &MjnnModel, wtod: &WtodConfig, gains: Option<&EstimatorGains>) -> Result<Value, IoError> {
    let Activation::Tanh { scales } = &model.activation else {
        return Err(IoError::Parse("only tanh activations can be serialized".into()));
    };
    let identity = wtod.weights == WtodWeights::identity(&wtod.partition);
    let file = ModelFile {
        modes: model
            .modes
            .iter()
            .map(|m| ModeFile {
                a: to_rows(&m.a),
                b: to_rows(&m.b),
                c: to_rows(&m.c),
                d1: to_rows(&m.d1),
                d2: to_rows(&m.d2),
                e: to_rows(&m.e),
                m: to_rows(&m.m),
            })
            .collect(),
        transitions: model
            .transitions
            .entries
            .iter()
            .map(|r| {
                r.iter()
                    .map(|c| match c {
                        TransitionEntry::Known(p) => Cell::Known(*p),
                        TransitionEntry::Unknown => Cell::Mark("?".into()),
                    })
                    .collect()
            })
            .collect(),
        sector: SectorFile { f1: to_rows(&model.sector.f1), f2: to_rows(&model.sector.f2) },
        delay: DelayFile { min: model.delay.min, max: model.delay.max },
        activation: ActivationFile { kind: "tanh".into(), scales: scales.clone() },
        protocol: Some(ProtocolFile {
            partition: wtod.partition.dims().to_vec(),
            weights: if identity {
                WeightsFile::Named("identity".into())
            } else {
                WeightsFile::Matrices(wtod.weights.q.iter().map(to_rows).collect())
            },
        }),
        completion: None,
        gains: gains.map(gain_map),
    };
    serde_json::to_value(file).map_err(|e| IoError::Parse(e.to_string()))
}

/// `P1`, `Z`, `ρ` and `σ` with one-based keys.
pub fn certificate_to_json(cert: &Certificate) -> Value {
    let mut p1 = BTreeMap::new();
    for (i, row) in cert.p1.iter().enumerate() {
        for (m, p) in row.iter().enumerate() {
            p1.insert(format!("{},{}", i + 1, m + 1), to_rows(p));
        }
    }
    let mut sigma = BTreeMap::new();
    for (i, row) in cert.sigma.iter().enumerate() {
        for (m, col) in row.iter().enumerate() {
            for (o, &v) in col.iter().enumerate() {
                if o != m {
                    sigma.insert(format!("{},{},{}", i + 1, m + 1, o + 1), v);
                }
            }
        }
    }
    json!({
        "gamma": cert.gamma,
        "P1": p1,
        "Z_plant": to_rows(&cert.zp),
        "Z_error": to_rows(&cert.ze),
        "rho1": cert.rho1,
        "rho2": cert.rho2,
        "sigma": sigma,
    })
}
