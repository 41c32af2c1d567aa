//! JSON model files, partial-order files and dataset loading.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::data::SequenceDataset;
use crate::error::{Error, Result};
use crate::graph::{Network, NodeId, NodeKind, VarId};
use crate::model::{
    find_variable, validate_variables, ModelMetadata, PartialOrder, RspmnModel, Slot, TemplateNetwork, TopNetwork,
    VarKind, VariableMeta,
};

pub const MODEL_VERSION: u32 = 1;

/// One slot of an order file: `{"info": [...]}` or `{"decision": "..."}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SlotSpec {
    Info { info: Vec<String> },
    Decision { decision: String },
}

/// Contents of an order file: either a bare slot array or an object with
/// `slots` and optional per-variable `cardinality`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderSpec {
    pub slots: Vec<SlotSpec>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub cardinality: BTreeMap<String, u32>,
}

impl OrderSpec {
    pub fn parse(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Form {
            Bare(Vec<SlotSpec>),
            Full(OrderSpec),
        }
        Ok(match serde_json::from_str::<Form>(text)? {
            Form::Bare(slots) => OrderSpec { slots, cardinality: BTreeMap::new() },
            Form::Full(spec) => spec,
        })
    }

    pub fn from_order(order: &PartialOrder, vars: &[VariableMeta]) -> Self {
        OrderSpec { slots: slot_specs(order, vars), cardinality: BTreeMap::new() }
    }

    /// Resolves slot names against `vars`.
    pub fn to_order(&self, vars: &[VariableMeta]) -> Result<PartialOrder> {
        let slots = self
            .slots
            .iter()
            .map(|s| {
                Ok(match s {
                    SlotSpec::Info { info } => {
                        Slot::Info(info.iter().map(|n| find_variable(vars, n)).collect::<Result<_>>()?)
                    }
                    SlotSpec::Decision { decision } => Slot::Decision(find_variable(vars, decision)?),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        PartialOrder::new(slots, vars)
    }

    fn kind_and_slot(&self, name: &str) -> Option<(VarKind, usize)> {
        self.slots.iter().enumerate().find_map(|(i, s)| match s {
            SlotSpec::Info { info } if info.iter().any(|n| n == name) => Some((VarKind::State, i)),
            SlotSpec::Decision { decision } if decision == name => Some((VarKind::Decision, i)),
            _ => None,
        })
    }
}

fn slot_specs(order: &PartialOrder, vars: &[VariableMeta]) -> Vec<SlotSpec> {
    order
        .step_slots()
        .iter()
        .map(|s| match s {
            Slot::Info(ids) => SlotSpec::Info { info: ids.iter().map(|&i| vars[i].name.clone()).collect() },
            Slot::Decision(d) => SlotSpec::Decision { decision: vars[*d].name.clone() },
        })
        .collect()
}

/// Name of the utility variable of datasets read from CSV.
pub const UTILITY_NAME: &str = "U";

/// Reads a long-format CSV whose variable kinds come from `spec`. Columns keep
/// their header order, followed by the utility. Cardinalities missing from
/// `spec` are one more than the largest value seen (at least 2).
pub fn read_dataset(mut input: impl Read, spec: &OrderSpec) -> Result<(SequenceDataset, PartialOrder)> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    let header: Vec<String> = {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        r.headers()?.iter().map(|s| s.trim().to_string()).collect()
    };
    if header.len() < 3 {
        return Err(Error::Malformed("CSV header must be `episode,step,<state vars>,<decision vars>,utility`".into()));
    }
    let last_slot = spec.slots.len().saturating_sub(1);
    let mut vars = Vec::new();
    for name in &header[2..header.len() - 1] {
        let (kind, slot) = spec
            .kind_and_slot(name)
            .ok_or_else(|| Error::Malformed(format!("column `{name}` is not in the order file")))?;
        vars.push(VariableMeta { name: name.clone(), kind, cardinality: Some(u32::MAX), slot });
    }
    vars.push(VariableMeta { name: UTILITY_NAME.into(), kind: VarKind::Utility, cardinality: None, slot: last_slot });
    let loose = SequenceDataset::read_csv(text.as_bytes(), vars.clone())?;
    for (i, v) in vars.iter_mut().enumerate() {
        if v.kind == VarKind::Utility {
            continue;
        }
        let seen = loose.episodes.iter().flatten().map(|s| s.values[i]).max().unwrap_or(0);
        v.cardinality = Some(match spec.cardinality.get(&v.name) {
            Some(&c) => c,
            None => (seen + 1).max(2),
        });
    }
    let data = SequenceDataset::new(vars, loose.episodes)?;
    let order = spec.to_order(&data.variables)?;
    Ok((data, order))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NodeRecord {
    id: usize,
    kind: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    children: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    var: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    probs: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    interface_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TopRecord {
    root: usize,
    nodes: Vec<NodeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TemplateRecord {
    interface_roots: Vec<usize>,
    latent_leaves: Vec<usize>,
    bijection: Vec<usize>,
    nodes: Vec<NodeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelRecord {
    version: u32,
    variables: Vec<VariableMeta>,
    partial_order: Vec<SlotSpec>,
    top: TopRecord,
    template: TemplateRecord,
    #[serde(default)]
    metadata: ModelMetadata,
}

/// Decimal text with 17 significant digits; parses back to the same double.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_num(s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Malformed(format!("bad number `{s}`")))
}

fn encode_nodes(net: &Network, vars: &[VariableMeta]) -> Vec<NodeRecord> {
    net.nodes()
        .iter()
        .enumerate()
        .map(|(id, node)| {
            let mut r = NodeRecord {
                id,
                kind: node.name().to_string(),
                children: node.children().iter().map(|c| c.0).collect(),
                weights: None,
                var: None,
                labels: None,
                probs: None,
                value: None,
                interface_index: None,
            };
            match node {
                NodeKind::Sum { weights, .. } => r.weights = Some(weights.iter().map(|&w| num(w)).collect()),
                NodeKind::Max { decision, labels, .. } => {
                    r.var = Some(vars[*decision].name.clone());
                    r.labels = Some(labels.clone());
                }
                NodeKind::Categorical { var, probs } => {
                    r.var = Some(vars[*var].name.clone());
                    r.probs = Some(probs.iter().map(|&p| num(p)).collect());
                }
                NodeKind::Utility { var, value } => {
                    r.var = Some(vars[*var].name.clone());
                    r.value = Some(num(*value));
                }
                NodeKind::Latent { index } => r.interface_index = Some(*index),
                NodeKind::Product { .. } => {}
            }
            r
        })
        .collect()
}

fn decode_nodes(records: &[NodeRecord], vars: &[VariableMeta]) -> Result<Vec<NodeKind>> {
    let var_of = |r: &NodeRecord| -> Result<VarId> {
        let name = r.var.as_deref().ok_or_else(|| Error::Malformed(format!("node {} lacks `var`", r.id)))?;
        find_variable(vars, name)
    };
    let missing = |r: &NodeRecord, field: &str| Error::Malformed(format!("node {} lacks `{field}`", r.id));
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            if r.id != i {
                return Err(Error::Malformed(format!("node ids must be 0..n in order, found {} at {i}", r.id)));
            }
            let children: Vec<NodeId> = r.children.iter().map(|&c| NodeId(c)).collect();
            Ok(match r.kind.as_str() {
                "sum" => NodeKind::Sum {
                    children,
                    weights: r
                        .weights
                        .as_ref()
                        .ok_or_else(|| missing(r, "weights"))?
                        .iter()
                        .map(|w| parse_num(w))
                        .collect::<Result<_>>()?,
                },
                "product" => NodeKind::Product { children },
                "max" => NodeKind::Max {
                    decision: var_of(r)?,
                    children,
                    labels: r.labels.clone().ok_or_else(|| missing(r, "labels"))?,
                },
                "categorical" => NodeKind::Categorical {
                    var: var_of(r)?,
                    probs: r
                        .probs
                        .as_ref()
                        .ok_or_else(|| missing(r, "probs"))?
                        .iter()
                        .map(|p| parse_num(p))
                        .collect::<Result<_>>()?,
                },
                "utility" => NodeKind::Utility {
                    var: var_of(r)?,
                    value: parse_num(r.value.as_deref().ok_or_else(|| missing(r, "value"))?)?,
                },
                "latent" => NodeKind::Latent { index: r.interface_index.ok_or_else(|| missing(r, "interface_index"))? },
                other => return Err(Error::Malformed(format!("node {} has unknown kind `{other}`", r.id))),
            })
        })
        .collect()
}

pub fn model_to_json(model: &RspmnModel) -> Result<String> {
    let vars = &model.variables;
    let tpl = &model.template;
    let record = ModelRecord {
        version: MODEL_VERSION,
        variables: vars.clone(),
        partial_order: slot_specs(&model.order, vars),
        top: TopRecord { root: model.top.network().root().0, nodes: encode_nodes(model.top.network(), vars) },
        template: TemplateRecord {
            interface_roots: tpl.interface_roots().iter().map(|r| r.0).collect(),
            latent_leaves: tpl.latent_leaves().iter().map(|l| l.0).collect(),
            bijection: tpl.bijection().to_vec(),
            nodes: encode_nodes(tpl.network(), vars),
        },
        metadata: model.metadata.clone(),
    };
    Ok(serde_json::to_string_pretty(&record)?)
}

pub fn model_from_json(text: &str) -> Result<RspmnModel> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    if let Some(v) = value.get("version").and_then(serde_json::Value::as_u64) {
        if v != u64::from(MODEL_VERSION) {
            return Err(Error::VersionMismatch { found: v as u32, expected: MODEL_VERSION });
        }
    }
    let record: ModelRecord = serde_json::from_value(value)?;
    if record.template.interface_roots.is_empty() {
        return Err(Error::NoInterfaceRoots);
    }
    let vars = record.variables;
    validate_variables(&vars)?;
    let order = OrderSpec { slots: record.partial_order, cardinality: BTreeMap::new() }.to_order(&vars)?;

    let top_nodes = decode_nodes(&record.top.nodes, &vars)?;
    let top_net = Network::new(top_nodes, vec![NodeId(record.top.root)])?;
    top_net.check_parameters()?;
    let tpl_nodes = decode_nodes(&record.template.nodes, &vars)?;
    let roots = record.template.interface_roots.iter().map(|&r| NodeId(r)).collect();
    let tpl_net = Network::new(tpl_nodes, roots)?;
    tpl_net.check_parameters()?;
    let template = TemplateNetwork::new(
        tpl_net,
        record.template.latent_leaves.iter().map(|&l| NodeId(l)).collect(),
        record.template.bijection,
    )?;
    let mut model = RspmnModel::new(vars, order, TopNetwork::new(top_net)?, template)?;
    model.metadata.horizon = record.metadata.horizon;
    Ok(model)
}

pub fn save_model(model: &RspmnModel, path: impl AsRef<std::path::Path>) -> Result<()> {
    std::fs::write(path, model_to_json(model)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<std::path::Path>) -> Result<RspmnModel> {
    model_from_json(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_file_forms() {
        let bare = OrderSpec::parse(r#"[{"info":["X","Y"]},{"decision":"A"},{"info":[]}]"#).unwrap();
        assert_eq!(bare.slots.len(), 3);
        let full = OrderSpec::parse(r#"{"slots":[{"info":["X"]},{"decision":"A"}],"cardinality":{"X":3}}"#).unwrap();
        assert_eq!(full.cardinality["X"], 3);
    }

    #[test]
    fn dataset_from_csv_infers_cardinality() {
        let spec = OrderSpec::parse(r#"[{"info":["X"]},{"decision":"A"},{"info":[]}]"#).unwrap();
        let csv = "episode,step,X,A,utility\n0,0,0,3,-1\n0,1,2,0,4.5\n";
        let (data, order) = read_dataset(csv.as_bytes(), &spec).unwrap();
        assert_eq!(data.variables[0].cardinality, Some(3));
        assert_eq!(data.variables[1].cardinality, Some(4));
        assert_eq!(data.variables[2].name, "U");
        assert_eq!(order.step_slots().len(), 3);
    }

    #[test]
    fn numbers_round_trip_exactly() {
        for x in [0.1, 1.0 / 3.0, 2.0f64.sqrt(), -1e-300, 123456.789] {
            assert_eq!(parse_num(&num(x)).unwrap(), x);
        }
    }
}
