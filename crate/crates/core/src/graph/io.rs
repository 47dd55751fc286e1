//! JSON graph files.
//!
//! ```json
//! {"name": "mlp", "ops": [{"id": "fc1", "kind": "gemm", "m": 64, "n": 256, "k": 128,
//!   "param_bytes": 65536, "activation_bytes": 32768}], "edges": [["fc1", "act1"]]}
//! ```
//!
//! Forward graphs use only the normative fields. Dumps of synthesized training
//! graphs add the optional `pass`, `affinity`, `mirror_of` and `collective`
//! fields and may carry `"kind": "fused"` ops with both `m/n/k` and `elements`.

use serde::{Deserialize, Serialize};

use super::{Affinity, Collective, GraphError, OpKind, Operator, OperatorGraph, Pass, TensorShape};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    name: String,
    ops: Vec<OpRecord>,
    #[serde(default)]
    edges: Vec<(String, String)>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OpRecord {
    id: String,
    kind: OpKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    m: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    k: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    elements: Option<u64>,
    #[serde(default)]
    param_bytes: u64,
    #[serde(default)]
    activation_bytes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pass: Option<Pass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    affinity: Option<Affinity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mirror_of: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    collective: Option<Collective>,
}

impl OpRecord {
    fn into_operator(self) -> Result<Operator, GraphError> {
        let tensor = match (self.m, self.n, self.k) {
            (Some(m), Some(n), Some(k)) => Some(TensorShape::new(m, n, k)),
            (None, None, None) => None,
            _ => {
                return Err(GraphError::Parse(format!(
                    "op `{}`: m, n and k must be given together",
                    self.id
                )))
            }
        };
        let default_affinity = match self.kind {
            OpKind::Gemm | OpKind::Conv => Affinity::Tensor,
            OpKind::Vector => Affinity::Vector,
            OpKind::Fused => Affinity::Both,
        };
        if matches!(self.kind, OpKind::Gemm | OpKind::Conv) && tensor.is_none() {
            return Err(GraphError::Parse(format!(
                "op `{}`: {} needs m, n, k",
                self.id, self.kind
            )));
        }
        if self.kind == OpKind::Vector && self.elements.is_none() {
            return Err(GraphError::Parse(format!(
                "op `{}`: vector needs elements",
                self.id
            )));
        }
        let op = Operator {
            id: self.id,
            kind: self.kind,
            pass: self.pass.unwrap_or(Pass::Forward),
            affinity: self.affinity.unwrap_or(default_affinity),
            tensor,
            elements: self.elements,
            param_bytes: self.param_bytes,
            activation_bytes: self.activation_bytes,
            mirror_of: self.mirror_of,
            collective: self.collective,
        };
        op.validate()?;
        Ok(op)
    }

    fn from_operator(op: &Operator) -> Self {
        let extended = op.pass != Pass::Forward || op.kind == OpKind::Fused;
        let default_affinity = match op.kind {
            OpKind::Gemm | OpKind::Conv => Affinity::Tensor,
            OpKind::Vector => Affinity::Vector,
            OpKind::Fused => Affinity::Both,
        };
        OpRecord {
            id: op.id.clone(),
            kind: op.kind,
            m: op.tensor.map(|s| s.m),
            n: op.tensor.map(|s| s.n),
            k: op.tensor.map(|s| s.k),
            elements: op.elements,
            param_bytes: op.param_bytes,
            activation_bytes: op.activation_bytes,
            pass: extended.then_some(op.pass),
            affinity: (op.affinity != default_affinity).then_some(op.affinity),
            mirror_of: op.mirror_of.clone(),
            collective: op.collective,
        }
    }
}

/// Parses any graph file (forward or synthesized training graph).
pub fn load_graph(source: &str) -> Result<OperatorGraph, GraphError> {
    let file: GraphFile =
        serde_json::from_str(source).map_err(|e| GraphError::Parse(e.to_string()))?;
    let ops = file
        .ops
        .into_iter()
        .map(OpRecord::into_operator)
        .collect::<Result<Vec<_>, _>>()?;
    OperatorGraph::new(file.name, ops, &file.edges)
}

/// Parses a forward-pass graph file. Rejects anything that is not a forward op.
pub fn load_forward_graph(source: &str) -> Result<OperatorGraph, GraphError> {
    let g = load_graph(source)?;
    if let Some(op) = g
        .ops()
        .iter()
        .find(|op| op.pass != Pass::Forward || op.kind == OpKind::Fused)
    {
        return Err(GraphError::NonForwardInput(op.id.clone()));
    }
    Ok(g)
}

pub fn write_graph(g: &OperatorGraph) -> String {
    let file = GraphFile {
        name: g.name().to_string(),
        ops: g.ops().iter().map(OpRecord::from_operator).collect(),
        edges: g.edge_ids(),
    };
    serde_json::to_string_pretty(&file).expect("graph serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_valid_graph() {
        let g = load_forward_graph(
            r#"{"name":"one","ops":[{"id":"g","kind":"gemm","m":2,"n":3,"k":4,"param_bytes":24,"activation_bytes":12}],"edges":[]}"#,
        )
        .unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.topological_order(), vec!["g"]);
        assert_eq!(g.ops()[0].affinity, Affinity::Tensor);
    }

    #[test]
    fn unknown_edge_endpoint() {
        let err = load_forward_graph(
            r#"{"name":"x","ops":[{"id":"a","kind":"vector","elements":4},{"id":"b","kind":"vector","elements":4}],"edges":[["a","zzz"]]}"#,
        )
        .unwrap_err();
        assert_eq!(err, GraphError::UnknownNode("zzz".into()));
    }

    #[test]
    fn diamond_accepted() {
        let g = load_forward_graph(
            r#"{"name":"d","ops":[
                {"id":"A","kind":"gemm","m":8,"n":8,"k":8},
                {"id":"B","kind":"gemm","m":8,"n":8,"k":8},
                {"id":"C","kind":"gemm","m":8,"n":8,"k":8},
                {"id":"D","kind":"gemm","m":8,"n":8,"k":8}],
               "edges":[["A","B"],["A","C"],["B","D"],["C","D"]]}"#,
        )
        .unwrap();
        assert_eq!(g.edges().len(), 4);
    }

    #[test]
    fn malformed_and_mismatched_inputs() {
        assert!(matches!(
            load_forward_graph("{not json"),
            Err(GraphError::Parse(_))
        ));
        assert!(matches!(
            load_forward_graph(r#"{"name":"x","ops":[{"id":"a","kind":"gemm","m":1}]}"#),
            Err(GraphError::Parse(_))
        ));
        assert!(matches!(
            load_forward_graph(
                r#"{"name":"x","ops":[{"id":"a","kind":"vector","elements":3,"affinity":"tensor"}]}"#
            ),
            Err(GraphError::Affinity { .. })
        ));
        assert!(matches!(
            load_forward_graph(
                r#"{"name":"x","ops":[{"id":"a","kind":"vector","elements":3,"pass":"backward"}]}"#
            ),
            Err(GraphError::NonForwardInput(_))
        ));
        assert!(matches!(
            load_forward_graph(
                r#"{"name":"x","ops":[{"id":"a","kind":"vector","elements":3},{"id":"b","kind":"vector","elements":3}],"edges":[["a","b"],["b","a"]]}"#
            ),
            Err(GraphError::Cycle(_))
        ));
    }

    #[test]
    fn empty_graph_parses() {
        let g = load_graph(r#"{"name":"empty","ops":[],"edges":[]}"#).unwrap();
        assert!(g.is_empty());
    }

    #[test]
    fn dump_reloads_identically() {
        let src = r#"{"name":"d","ops":[
            {"id":"A","kind":"gemm","m":8,"n":4,"k":2,"param_bytes":16,"activation_bytes":64},
            {"id":"B","kind":"vector","elements":32,"activation_bytes":64}],
           "edges":[["A","B"]]}"#;
        let g = load_forward_graph(src).unwrap();
        let again = load_graph(&write_graph(&g)).unwrap();
        assert_eq!(g, again);
    }
}
