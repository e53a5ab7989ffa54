//! Multi-state flow networks and the two-terminal max-flow limit state.
//!
//! Each edge is one input dimension. Its state label selects a capacity from
//! the edge's capacity map, the s-t max flow is computed with Dinic's
//! algorithm, and the system fails when the flow does not exceed the demand.
//!
//! # Network file format
//!
//! Line oriented, `#` starts a comment, blank lines are ignored:
//!
//! ```text
//! nodes 11
//! source 1
//! sink 11
//! demand 6
//! directed false          # optional, default false
//! edge 1 2 0:0 3:3 5:5    # endpoints, then label:capacity per state
//! ```
//!
//! Nodes are numbered `1..=nodes`. Edges are numbered by order of appearance,
//! starting at 1, and map to model dimensions in the same order. Undirected
//! edges carry flow in either direction up to their capacity.

use std::collections::VecDeque;
use std::ops::{Add, Sub};

use crate::error::{Error, Result};
use crate::lsf::LimitState;

/// Arithmetic needed by the max-flow routine.
pub trait FlowValue: Copy + PartialOrd + Add<Output = Self> + Sub<Output = Self> {
    const ZERO: Self;
    fn is_positive(self) -> bool;
    fn min_of(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }
}

impl FlowValue for i64 {
    const ZERO: i64 = 0;
    fn is_positive(self) -> bool {
        self > 0
    }
}

impl FlowValue for f64 {
    const ZERO: f64 = 0.0;
    fn is_positive(self) -> bool {
        self > 1e-12
    }
}

#[derive(Debug, Clone)]
struct Arc<T> {
    to: usize,
    rev: usize,
    residual: T,
}

/// Dinic max-flow on a residual graph.
#[derive(Debug, Clone)]
pub struct Dinic<T> {
    graph: Vec<Vec<Arc<T>>>,
    level: Vec<i32>,
    iter: Vec<usize>,
}

impl<T: FlowValue> Dinic<T> {
    pub fn new(nodes: usize) -> Self {
        Dinic { graph: vec![Vec::new(); nodes], level: vec![0; nodes], iter: vec![0; nodes] }
    }

    pub fn add_edge(&mut self, from: usize, to: usize, capacity: T) {
        self.add_arc_pair(from, to, capacity, T::ZERO);
    }

    /// Two opposed arcs sharing one capacity.
    pub fn add_undirected_edge(&mut self, a: usize, b: usize, capacity: T) {
        self.add_arc_pair(a, b, capacity, capacity);
    }

    fn add_arc_pair(&mut self, from: usize, to: usize, forward: T, backward: T) {
        let rf = self.graph[to].len() + usize::from(from == to);
        let rb = self.graph[from].len();
        self.graph[from].push(Arc { to, rev: rf, residual: forward });
        self.graph[to].push(Arc { to: from, rev: rb, residual: backward });
    }

    fn bfs(&mut self, s: usize) {
        self.level.iter_mut().for_each(|l| *l = -1);
        let mut queue = VecDeque::new();
        self.level[s] = 0;
        queue.push_back(s);
        while let Some(v) = queue.pop_front() {
            for arc in &self.graph[v] {
                if arc.residual.is_positive() && self.level[arc.to] < 0 {
                    self.level[arc.to] = self.level[v] + 1;
                    queue.push_back(arc.to);
                }
            }
        }
    }

    fn dfs(&mut self, v: usize, t: usize, limit: T) -> T {
        if v == t {
            return limit;
        }
        while self.iter[v] < self.graph[v].len() {
            let i = self.iter[v];
            let Arc { to, rev, residual } = self.graph[v][i].clone();
            if residual.is_positive() && self.level[v] < self.level[to] {
                let pushed = self.dfs(to, t, limit.min_of(residual));
                if pushed.is_positive() {
                    self.graph[v][i].residual = self.graph[v][i].residual - pushed;
                    self.graph[to][rev].residual = self.graph[to][rev].residual + pushed;
                    return pushed;
                }
            }
            self.iter[v] += 1;
        }
        T::ZERO
    }

    /// Maximum s-t flow. Consumes the residual capacities.
    pub fn max_flow(&mut self, s: usize, t: usize, upper: T) -> T {
        let mut flow = T::ZERO;
        if s == t {
            return flow;
        }
        loop {
            self.bfs(s);
            if self.level[t] < 0 {
                return flow;
            }
            self.iter.iter_mut().for_each(|i| *i = 0);
            loop {
                let f = self.dfs(s, t, upper);
                if !f.is_positive() {
                    break;
                }
                flow = flow + f;
            }
        }
    }
}

/// One network edge: endpoints (0-based) and its label-to-capacity map.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowEdge {
    pub from: usize,
    pub to: usize,
    pub states: Vec<(f64, f64)>,
}

impl FlowEdge {
    pub fn capacity(&self, label: f64) -> Option<f64> {
        self.states.iter().find(|(l, _)| *l == label).map(|&(_, c)| c)
    }

    pub fn labels(&self) -> Vec<f64> {
        self.states.iter().map(|&(l, _)| l).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowNetwork {
    pub nodes: usize,
    pub source: usize,
    pub sink: usize,
    pub demand: f64,
    pub directed: bool,
    pub edges: Vec<FlowEdge>,
}

impl FlowNetwork {
    /// Validates and builds a network. Node indices are 0-based here.
    pub fn new(
        nodes: usize,
        source: usize,
        sink: usize,
        demand: f64,
        directed: bool,
        edges: Vec<FlowEdge>,
    ) -> Result<Self> {
        if source >= nodes || sink >= nodes {
            return Err(Error::Validation("source or sink outside the node range".into()));
        }
        if source == sink {
            return Err(Error::Validation("source and sink must differ".into()));
        }
        if !demand.is_finite() {
            return Err(Error::Validation("demand must be finite".into()));
        }
        for (e, edge) in edges.iter().enumerate() {
            if edge.from >= nodes || edge.to >= nodes {
                return Err(Error::Validation(format!("edge {}: endpoint out of range", e + 1)));
            }
            if edge.states.len() < 2 {
                return Err(Error::Validation(format!("edge {}: needs at least two states", e + 1)));
            }
            for (i, &(l, c)) in edge.states.iter().enumerate() {
                if !l.is_finite() || !c.is_finite() || c < 0.0 {
                    return Err(Error::Validation(format!(
                        "edge {}: invalid state {l}:{c}",
                        e + 1
                    )));
                }
                if edge.states[..i].iter().any(|&(m, _)| m == l) {
                    return Err(Error::Validation(format!("edge {}: duplicate label {l}", e + 1)));
                }
            }
        }
        Ok(FlowNetwork { nodes, source, sink, demand, directed, edges })
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Capacities selected by the labelled state `x`.
    pub fn capacities(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.edges.len() {
            return Err(Error::invalid(format!(
                "state has {} entries, network has {} edges",
                x.len(),
                self.edges.len()
            )));
        }
        self.edges
            .iter()
            .zip(x)
            .enumerate()
            .map(|(d, (edge, &label))| {
                edge.capacity(label)
                    .ok_or_else(|| Error::UnknownState { dim: d, state: label.to_string() })
            })
            .collect()
    }

    /// s-t max flow for explicit per-edge capacities. Integer capacities are
    /// handled in exact integer arithmetic.
    pub fn max_flow_with_capacities(&self, caps: &[f64]) -> f64 {
        let integral = caps.iter().all(|c| c.fract() == 0.0 && c.abs() < 9.0e15);
        if integral {
            let mut dinic = Dinic::<i64>::new(self.nodes);
            let mut upper = 0i64;
            for (edge, &c) in self.edges.iter().zip(caps) {
                let c = c as i64;
                upper += c;
                self.push_edge(&mut dinic, edge, c);
            }
            dinic.max_flow(self.source, self.sink, upper) as f64
        } else {
            let mut dinic = Dinic::<f64>::new(self.nodes);
            let mut upper = 0.0;
            for (edge, &c) in self.edges.iter().zip(caps) {
                upper += c;
                self.push_edge(&mut dinic, edge, c);
            }
            dinic.max_flow(self.source, self.sink, upper)
        }
    }

    fn push_edge<T: FlowValue>(&self, dinic: &mut Dinic<T>, edge: &FlowEdge, c: T) {
        if self.directed {
            dinic.add_edge(edge.from, edge.to, c);
        } else {
            dinic.add_undirected_edge(edge.from, edge.to, c);
        }
    }

    pub fn max_flow(&self, x: &[f64]) -> Result<f64> {
        Ok(self.max_flow_with_capacities(&self.capacities(x)?))
    }

    /// `max_flow(x) - demand`; the boundary `flow == demand` counts as failure.
    pub fn two_terminal_lsf(&self, x: &[f64]) -> Result<f64> {
        Ok(self.max_flow(x)? - self.demand)
    }

    /// Parses the network text format.
    pub fn parse(text: &str) -> Result<Self> {
        let mut nodes = None;
        let mut source = None;
        let mut sink = None;
        let mut demand = None;
        let mut directed = false;
        // (line, from, to, states)
        #[allow(clippy::type_complexity)]
        let mut raw_edges: Vec<(usize, usize, usize, Vec<(f64, f64)>)> = Vec::new();

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut tokens = line.split_whitespace();
            let key = tokens.next().unwrap_or_default();
            let rest: Vec<&str> = tokens.collect();
            let single = |what: &str| -> Result<&str> {
                match rest.as_slice() {
                    [v] => Ok(*v),
                    _ => Err(Error::parse(line_no, format!("`{what}` takes exactly one value"))),
                }
            };
            match key {
                "nodes" => nodes = Some(parse_usize(single("nodes")?, line_no)?),
                "source" => source = Some(parse_usize(single("source")?, line_no)?),
                "sink" => sink = Some(parse_usize(single("sink")?, line_no)?),
                "demand" => demand = Some(parse_f64(single("demand")?, line_no)?),
                "directed" => {
                    directed = match single("directed")? {
                        "true" => true,
                        "false" => false,
                        other => {
                            return Err(Error::parse(line_no, format!("expected true/false, got `{other}`")))
                        }
                    }
                }
                "edge" => {
                    if rest.len() < 4 {
                        return Err(Error::parse(
                            line_no,
                            "edge needs two endpoints and at least two label:capacity states",
                        ));
                    }
                    let u = parse_usize(rest[0], line_no)?;
                    let v = parse_usize(rest[1], line_no)?;
                    let states = rest[2..]
                        .iter()
                        .map(|tok| {
                            let (l, c) = tok.split_once(':').ok_or_else(|| {
                                Error::parse(line_no, format!("expected label:capacity, got `{tok}`"))
                            })?;
                            Ok((parse_f64(l, line_no)?, parse_f64(c, line_no)?))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    raw_edges.push((line_no, u, v, states));
                }
                other => return Err(Error::parse(line_no, format!("unknown keyword `{other}`"))),
            }
        }

        let nodes = nodes.ok_or_else(|| Error::parse(0, "missing `nodes`"))?;
        let one_based = |v: usize, line: usize, what: &str| -> Result<usize> {
            if v == 0 || v > nodes {
                Err(Error::parse(line, format!("{what} {v} outside 1..={nodes}")))
            } else {
                Ok(v - 1)
            }
        };
        let source = one_based(source.ok_or_else(|| Error::parse(0, "missing `source`"))?, 0, "source")?;
        let sink = one_based(sink.ok_or_else(|| Error::parse(0, "missing `sink`"))?, 0, "sink")?;
        let demand = demand.ok_or_else(|| Error::parse(0, "missing `demand`"))?;
        let mut edges = Vec::with_capacity(raw_edges.len());
        for (line, u, v, states) in raw_edges {
            edges.push(FlowEdge {
                from: one_based(u, line, "endpoint")?,
                to: one_based(v, line, "endpoint")?,
                states,
            });
        }
        FlowNetwork::new(nodes, source, sink, demand, directed, edges)
    }

    /// Writes the network text format (1-based nodes).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("nodes {}\n", self.nodes));
        out.push_str(&format!("source {}\n", self.source + 1));
        out.push_str(&format!("sink {}\n", self.sink + 1));
        out.push_str(&format!("demand {}\n", self.demand));
        out.push_str(&format!("directed {}\n", self.directed));
        for (i, e) in self.edges.iter().enumerate() {
            let states: Vec<String> = e.states.iter().map(|(l, c)| format!("{l}:{c}")).collect();
            out.push_str(&format!(
                "edge {} {} {}    # edge {}\n",
                e.from + 1,
                e.to + 1,
                states.join(" "),
                i + 1
            ));
        }
        out
    }
}

fn parse_usize(tok: &str, line: usize) -> Result<usize> {
    tok.parse().map_err(|_| Error::parse(line, format!("expected a non-negative integer, got `{tok}`")))
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    tok.parse().map_err(|_| Error::parse(line, format!("expected a number, got `{tok}`")))
}

/// Two-terminal max-flow limit state `g(x) = max_flow(x) - demand`.
#[derive(Debug, Clone)]
pub struct TwoTerminalLsf {
    pub network: FlowNetwork,
}

impl TwoTerminalLsf {
    pub fn new(network: FlowNetwork) -> Self {
        TwoTerminalLsf { network }
    }
}

impl LimitState for TwoTerminalLsf {
    fn n_dims(&self) -> usize {
        self.network.n_edges()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        self.network.two_terminal_lsf(x)
    }
}
