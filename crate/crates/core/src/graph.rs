//! Heterogeneous collaboration graph around the ego vehicle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature::AgentId;
use crate::geometry::Pose2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Infrastructure,
    Vehicle,
}

impl AgentKind {
    pub const ALL: [AgentKind; 2] = [AgentKind::Vehicle, AgentKind::Infrastructure];

    pub fn index(self) -> usize {
        match self {
            AgentKind::Vehicle => 0,
            AgentKind::Infrastructure => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Vehicle => "vehicle",
            AgentKind::Infrastructure => "infrastructure",
        }
    }
}

/// Edge type, named source kind first: `IV` is infrastructure → vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeKind {
    VV,
    VI,
    IV,
    II,
}

impl EdgeKind {
    pub const ALL: [EdgeKind; 4] = [EdgeKind::VV, EdgeKind::VI, EdgeKind::IV, EdgeKind::II];

    pub fn from_kinds(src: AgentKind, dst: AgentKind) -> Self {
        use AgentKind::*;
        match (src, dst) {
            (Vehicle, Vehicle) => EdgeKind::VV,
            (Vehicle, Infrastructure) => EdgeKind::VI,
            (Infrastructure, Vehicle) => EdgeKind::IV,
            (Infrastructure, Infrastructure) => EdgeKind::II,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            EdgeKind::VV => "vv",
            EdgeKind::VI => "vi",
            EdgeKind::IV => "iv",
            EdgeKind::II => "ii",
        }
    }
}

/// Shared metadata of one agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentMeta {
    pub id: AgentId,
    pub kind: AgentKind,
    pub pose: Pose2,
    /// Seconds.
    #[serde(default)]
    pub capture_time: f64,
}

pub fn edge_kind(src: &AgentMeta, dst: &AgentMeta) -> EdgeKind {
    EdgeKind::from_kinds(src.kind, dst.kind)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub src: AgentId,
    pub dst: AgentId,
    pub kind: EdgeKind,
}

/// Directed graph over the agents connected to the ego.
///
/// The ego is always node 0; the remaining nodes keep their input order.
#[derive(Debug, Clone, PartialEq)]
pub struct V2XGraph {
    ego: AgentId,
    nodes: Vec<AgentMeta>,
    edges: Vec<Edge>,
}

impl V2XGraph {
    pub fn ego(&self) -> AgentId {
        self.ego
    }

    pub fn nodes(&self) -> &[AgentMeta] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn index_of(&self, id: AgentId) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    /// Incoming neighbours of node `i` as `(node index, edge kind)`, in node order.
    pub fn incoming(&self, i: usize) -> Vec<(usize, EdgeKind)> {
        let dst = self.nodes[i].id;
        let mut out: Vec<(usize, EdgeKind)> = self
            .edges
            .iter()
            .filter(|e| e.dst == dst)
            .map(|e| (self.index_of(e.src).expect("edge endpoint exists"), e.kind))
            .collect();
        out.sort_by_key(|&(j, _)| j);
        out
    }

    /// Graph with node order permuted: `order[k]` is the old index placed at `k`.
    /// The ego must stay at position 0.
    pub fn reordered(&self, order: &[usize]) -> Result<V2XGraph> {
        if order.len() != self.nodes.len() || order.first() != Some(&0) {
            return Err(Error::config("reordering must keep the ego first"));
        }
        let mut seen = vec![false; order.len()];
        for &o in order {
            if o >= order.len() || std::mem::replace(&mut seen[o], true) {
                return Err(Error::config("reordering is not a permutation"));
            }
        }
        let nodes: Vec<AgentMeta> = order.iter().map(|&o| self.nodes[o]).collect();
        Ok(V2XGraph {
            ego: self.ego,
            edges: complete_edges(&nodes),
            nodes,
        })
    }
}

fn complete_edges(nodes: &[AgentMeta]) -> Vec<Edge> {
    let mut edges = Vec::with_capacity(nodes.len() * nodes.len());
    for dst in nodes {
        for src in nodes {
            edges.push(Edge {
                src: src.id,
                dst: dst.id,
                kind: edge_kind(src, dst),
            });
        }
    }
    edges
}

/// Connects the ego with every agent within `comm_range` metres of it.
///
/// Every ordered pair of included agents gets an edge, self-edges included.
pub fn build_graph(agents: &[AgentMeta], ego: AgentId, comm_range: f64) -> Result<V2XGraph> {
    for (k, a) in agents.iter().enumerate() {
        if agents[..k].iter().any(|b| b.id == a.id) {
            return Err(Error::config(format!("duplicate agent id {}", a.id)));
        }
    }
    let ego_meta = agents
        .iter()
        .find(|a| a.id == ego)
        .ok_or_else(|| Error::config(format!("ego {ego} not among agents")))?;
    if ego_meta.kind != AgentKind::Vehicle {
        return Err(Error::config(format!("ego {ego} is not a vehicle")));
    }
    let mut nodes = vec![*ego_meta];
    nodes.extend(
        agents
            .iter()
            .filter(|a| a.id != ego && a.pose.distance(&ego_meta.pose) <= comm_range),
    );
    Ok(V2XGraph {
        ego,
        edges: complete_edges(&nodes),
        nodes,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn agent(id: u32, kind: AgentKind, x: f64) -> AgentMeta {
        AgentMeta {
            id: AgentId(id),
            kind,
            pose: Pose2::new(x, 0.0, 0.0),
            capture_time: 0.0,
        }
    }

    #[test]
    fn lone_ego() {
        let g = build_graph(&[agent(0, AgentKind::Vehicle, 0.0)], AgentId(0), 70.0).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.edges().len(), 1);
        assert_eq!(g.edges()[0].kind, EdgeKind::VV);
        assert_eq!(g.incoming(0), vec![(0, EdgeKind::VV)]);
    }

    #[test]
    fn infrastructure_in_range() {
        let agents = [agent(0, AgentKind::Vehicle, 0.0), agent(7, AgentKind::Infrastructure, 50.0)];
        let g = build_graph(&agents, AgentId(0), 70.0).unwrap();
        assert_eq!(g.len(), 2);
        let e = g
            .edges()
            .iter()
            .find(|e| e.src == AgentId(7) && e.dst == AgentId(0))
            .unwrap();
        assert_eq!(e.kind, EdgeKind::IV);
    }

    #[test]
    fn vehicle_out_of_range() {
        let agents = [agent(0, AgentKind::Vehicle, 0.0), agent(1, AgentKind::Vehicle, 71.0)];
        let g = build_graph(&agents, AgentId(0), 70.0).unwrap();
        assert_eq!(g.len(), 1);
    }

    #[test]
    fn edge_kinds() {
        let v = agent(0, AgentKind::Vehicle, 0.0);
        let i = agent(1, AgentKind::Infrastructure, 0.0);
        assert_eq!(edge_kind(&v, &v), EdgeKind::VV);
        assert_eq!(edge_kind(&i, &v), EdgeKind::IV);
        assert_eq!(edge_kind(&v, &i), EdgeKind::VI);
        assert_eq!(edge_kind(&i, &i), EdgeKind::II);
    }

    #[test]
    fn ego_errors() {
        let agents = [agent(0, AgentKind::Infrastructure, 0.0), agent(1, AgentKind::Vehicle, 5.0)];
        assert!(matches!(build_graph(&agents, AgentId(0), 70.0), Err(Error::Config(_))));
        assert!(matches!(build_graph(&agents, AgentId(9), 70.0), Err(Error::Config(_))));
        let dup = [agent(1, AgentKind::Vehicle, 0.0), agent(1, AgentKind::Vehicle, 5.0)];
        assert!(build_graph(&dup, AgentId(1), 70.0).is_err());
    }

    fn scene() -> impl Strategy<Value = Vec<AgentMeta>> {
        prop::collection::vec((-150.0f64..150.0, -150.0f64..150.0, any::<bool>()), 0..8).prop_map(|v| {
            let mut out = vec![agent(0, AgentKind::Vehicle, 0.0)];
            for (k, (x, y, infra)) in v.into_iter().enumerate() {
                let kind = if infra { AgentKind::Infrastructure } else { AgentKind::Vehicle };
                let mut a = agent(k as u32 + 1, kind, x);
                a.pose.y = y;
                out.push(a);
            }
            out
        })
    }

    proptest! {
        #[test]
        fn node_count_monotone_in_range(agents in scene(), r in 0.0f64..200.0, dr in 0.0f64..100.0) {
            let small = build_graph(&agents, AgentId(0), r).unwrap();
            let large = build_graph(&agents, AgentId(0), r + dr).unwrap();
            prop_assert!(small.len() <= large.len());
        }

        #[test]
        fn edge_count_is_square_and_consistent(agents in scene(), r in 0.0f64..200.0) {
            let g = build_graph(&agents, AgentId(0), r).unwrap();
            prop_assert_eq!(g.edges().len(), g.len() * g.len());
            for e in g.edges() {
                let s = g.nodes()[g.index_of(e.src).unwrap()];
                let d = g.nodes()[g.index_of(e.dst).unwrap()];
                prop_assert_eq!(e.kind, edge_kind(&s, &d));
            }
        }

        #[test]
        fn relabeling_is_isomorphic(agents in scene(), offset in 100u32..1000) {
            let g = build_graph(&agents, AgentId(0), 70.0).unwrap();
            let relabeled: Vec<AgentMeta> = agents
                .iter()
                .map(|a| AgentMeta { id: AgentId(a.id.0 + offset), ..*a })
                .collect();
            let h = build_graph(&relabeled, AgentId(offset), 70.0).unwrap();
            prop_assert_eq!(g.len(), h.len());
            for (e, f) in g.edges().iter().zip(h.edges()) {
                prop_assert_eq!(e.src.0 + offset, f.src.0);
                prop_assert_eq!(e.dst.0 + offset, f.dst.0);
                prop_assert_eq!(e.kind, f.kind);
            }
        }
    }
}
