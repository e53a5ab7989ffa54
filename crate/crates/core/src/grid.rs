//! DC load flow, cascading overload failures and the load-loss limit state.
//!
//! # Case file format
//!
//! Line oriented, `#` starts a comment:
//!
//! ```text
//! base_mva 100
//! # bus <id> <slack|generator|load> <demand MW> <generation MW>
//! bus 1 slack 0 100
//! bus 2 load 30 0
//! # branch <from id> <to id> <reactance p.u.> <rating MW>
//! branch 1 2 0.1 60
//! ```
//!
//! Bus ids are arbitrary distinct positive integers. Branches are numbered in
//! file order and map to model dimensions in the same order. The slack bus
//! generation is recomputed so that total generation equals total demand.
//! Branch state labels are `1` (in service) and `0` (failed).

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lsf::LimitState;

/// Load-loss threshold of the grid limit state.
pub const LOAD_LOSS_THRESHOLD: f64 = 0.30;

/// Relative slack on the rating before a branch counts as overloaded; absorbs
/// solver roundoff only.
const OVERLOAD_ROUNDOFF: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BusType {
    Slack,
    Generator,
    Load,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bus {
    pub id: u32,
    pub kind: BusType,
    pub demand: f64,
    pub generation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Branch {
    /// Bus positions (not ids).
    pub from: usize,
    pub to: usize,
    pub reactance: f64,
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerGrid {
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    base_mva: f64,
    slack: usize,
}

impl PowerGrid {
    /// Builds a grid from buses and branches given by bus position. The
    /// slack generation is rebalanced to cover total demand.
    pub fn new(mut buses: Vec<Bus>, branches: Vec<Branch>, base_mva: f64) -> Result<Self> {
        if !(base_mva > 0.0) || !base_mva.is_finite() {
            return Err(Error::Validation("base power must be positive".into()));
        }
        let slacks: Vec<usize> =
            buses.iter().enumerate().filter(|(_, b)| b.kind == BusType::Slack).map(|(i, _)| i).collect();
        let slack = match slacks.as_slice() {
            [s] => *s,
            [] => return Err(Error::Validation("no slack bus".into())),
            _ => return Err(Error::Validation(format!("{} slack buses, exactly one is required", slacks.len()))),
        };
        for (i, b) in buses.iter().enumerate() {
            if buses[..i].iter().any(|o| o.id == b.id) {
                return Err(Error::Validation(format!("duplicate bus id {}", b.id)));
            }
            if !(b.demand >= 0.0) || !(b.generation >= 0.0) || !b.demand.is_finite() || !b.generation.is_finite() {
                return Err(Error::Validation(format!("bus {}: demand and generation must be finite and non-negative", b.id)));
            }
            if b.kind == BusType::Load && b.generation > 0.0 {
                return Err(Error::Validation(format!("bus {}: load bus with generation", b.id)));
            }
        }
        for (k, br) in branches.iter().enumerate() {
            if br.from >= buses.len() || br.to >= buses.len() || br.from == br.to {
                return Err(Error::Validation(format!("branch {}: invalid endpoints", k + 1)));
            }
            if !(br.reactance > 0.0) || !br.reactance.is_finite() {
                return Err(Error::Validation(format!("branch {}: reactance must be positive", k + 1)));
            }
            if !(br.capacity > 0.0) || !br.capacity.is_finite() {
                return Err(Error::Validation(format!("branch {}: capacity must be positive", k + 1)));
            }
        }
        let demand: f64 = buses.iter().map(|b| b.demand).sum();
        let other: f64 = buses.iter().enumerate().filter(|&(i, _)| i != slack).map(|(_, b)| b.generation).sum();
        let slack_gen = demand - other;
        if slack_gen < -1e-9 * demand.max(1.0) {
            return Err(Error::Validation(format!(
                "scheduled generation exceeds demand by {:.6} MW; the slack bus cannot absorb it",
                -slack_gen
            )));
        }
        buses[slack].generation = slack_gen.max(0.0);
        Ok(PowerGrid { buses, branches, base_mva, slack })
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    pub fn base_mva(&self) -> f64 {
        self.base_mva
    }

    pub fn slack(&self) -> usize {
        self.slack
    }

    pub fn total_demand(&self) -> f64 {
        self.buses.iter().map(|b| b.demand).sum()
    }

    pub fn n_generators(&self) -> usize {
        self.buses.iter().filter(|b| b.kind != BusType::Load).count()
    }

    pub fn n_load_buses(&self) -> usize {
        self.buses.iter().filter(|b| b.demand > 0.0).count()
    }

    /// Parses the case text format.
    pub fn parse(text: &str) -> Result<Self> {
        let mut base_mva = 100.0;
        let mut buses = Vec::new();
        let mut index: HashMap<u32, usize> = HashMap::new();
        let mut raw_branches = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let tok: Vec<&str> = line.split_whitespace().collect();
            match tok[0] {
                "base_mva" => {
                    if tok.len() != 2 {
                        return Err(Error::parse(line_no, "base_mva takes one value"));
                    }
                    base_mva = num(tok[1], line_no)?;
                }
                "bus" => {
                    if tok.len() != 5 {
                        return Err(Error::parse(line_no, "expected `bus <id> <type> <demand> <generation>`"));
                    }
                    let id: u32 = tok[1]
                        .parse()
                        .map_err(|_| Error::parse(line_no, format!("bad bus id `{}`", tok[1])))?;
                    let kind = match tok[2] {
                        "slack" => BusType::Slack,
                        "generator" | "gen" => BusType::Generator,
                        "load" => BusType::Load,
                        other => return Err(Error::parse(line_no, format!("unknown bus type `{other}`"))),
                    };
                    if index.insert(id, buses.len()).is_some() {
                        return Err(Error::parse(line_no, format!("duplicate bus id {id}")));
                    }
                    buses.push(Bus { id, kind, demand: num(tok[3], line_no)?, generation: num(tok[4], line_no)? });
                }
                "branch" => {
                    if tok.len() != 5 {
                        return Err(Error::parse(line_no, "expected `branch <from> <to> <reactance> <rating>`"));
                    }
                    let from: u32 = tok[1].parse().map_err(|_| Error::parse(line_no, "bad bus id"))?;
                    let to: u32 = tok[2].parse().map_err(|_| Error::parse(line_no, "bad bus id"))?;
                    raw_branches.push((line_no, from, to, num(tok[3], line_no)?, num(tok[4], line_no)?));
                }
                other => return Err(Error::parse(line_no, format!("unknown record `{other}`"))),
            }
        }
        let mut branches = Vec::with_capacity(raw_branches.len());
        for (line, f, t, x, c) in raw_branches {
            let lookup = |id: u32| {
                index.get(&id).copied().ok_or_else(|| Error::parse(line, format!("unknown bus {id}")))
            };
            branches.push(Branch { from: lookup(f)?, to: lookup(t)?, reactance: x, capacity: c });
        }
        PowerGrid::new(buses, branches, base_mva)
    }

    pub fn load_case_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("base_mva {}\n", self.base_mva);
        for b in &self.buses {
            let kind = match b.kind {
                BusType::Slack => "slack",
                BusType::Generator => "generator",
                BusType::Load => "load",
            };
            out.push_str(&format!("bus {} {} {} {}\n", b.id, kind, b.demand, b.generation));
        }
        for br in &self.branches {
            out.push_str(&format!(
                "branch {} {} {} {}\n",
                self.buses[br.from].id, self.buses[br.to].id, br.reactance, br.capacity
            ));
        }
        out
    }

    /// Connected components of the buses over the active branches.
    pub fn components(&self, active: &[bool]) -> Vec<Vec<usize>> {
        let mut parent: Vec<usize> = (0..self.buses.len()).collect();
        fn find(p: &mut [usize], mut v: usize) -> usize {
            while p[v] != v {
                p[v] = p[p[v]];
                v = p[v];
            }
            v
        }
        for (br, _) in self.branches.iter().zip(active).filter(|(_, &a)| a) {
            let (a, b) = (find(&mut parent, br.from), find(&mut parent, br.to));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut slot: HashMap<usize, usize> = HashMap::new();
        for v in 0..self.buses.len() {
            let r = find(&mut parent, v);
            let g = *slot.entry(r).or_insert_with(|| {
                groups.push(Vec::new());
                groups.len() - 1
            });
            groups[g].push(v);
        }
        groups
    }
}

fn num(tok: &str, line: usize) -> Result<f64> {
    tok.parse().map_err(|_| Error::parse(line, format!("expected a number, got `{tok}`")))
}

/// DC load flow for given net injections (MW) over the active branches.
///
/// Every connected component is solved on its own with the angle of its
/// reference bus (the slack if present, else the lowest-index bus) fixed at
/// zero. Injections of each component must sum to zero. Returns per-branch
/// flows in MW, oriented from `from` to `to`; inactive branches carry 0.
pub fn dclf_solve(grid: &PowerGrid, active: &[bool], injections: &[f64]) -> Result<Vec<f64>> {
    if active.len() != grid.n_branches() || injections.len() != grid.n_buses() {
        return Err(Error::invalid("branch state or injection vector has the wrong length"));
    }
    let mut flows = vec![0.0; grid.n_branches()];
    let mut position = vec![usize::MAX; grid.n_buses()];
    for comp in grid.components(active) {
        if comp.len() < 2 {
            continue;
        }
        let reference = if comp.contains(&grid.slack) { grid.slack } else { comp[0] };
        let mut k = 0;
        for &v in &comp {
            if v == reference {
                position[v] = usize::MAX;
            } else {
                position[v] = k;
                k += 1;
            }
        }
        let m = comp.len() - 1;
        let mut b = DMatrix::<f64>::zeros(m, m);
        let mut p = DVector::<f64>::zeros(m);
        for &v in &comp {
            if position[v] != usize::MAX {
                p[position[v]] = injections[v] / grid.base_mva;
            }
        }
        let in_comp = |br: &Branch| comp.binary_search(&br.from).is_ok();
        for (br, _) in grid.branches.iter().zip(active).filter(|(br, &a)| a && in_comp(br)) {
            let y = 1.0 / br.reactance;
            let (i, j) = (position[br.from], position[br.to]);
            if i != usize::MAX {
                b[(i, i)] += y;
            }
            if j != usize::MAX {
                b[(j, j)] += y;
            }
            if i != usize::MAX && j != usize::MAX {
                b[(i, j)] -= y;
                b[(j, i)] -= y;
            }
        }
        let chol = b
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Singular(format!("reduced susceptance matrix of a {}-bus island", comp.len())))?;
        let theta = chol.solve(&p);
        let residual = (&b * &theta - &p).amax();
        if residual > 1e-10 * p.amax().max(1.0) {
            return Err(Error::Singular(format!("load-flow residual {residual:e} too large")));
        }
        let angle = |v: usize| if position[v] == usize::MAX { 0.0 } else { theta[position[v]] };
        for (k, br) in grid.branches.iter().enumerate() {
            if active[k] && in_comp(br) {
                flows[k] = (angle(br.from) - angle(br.to)) / br.reactance * grid.base_mva;
            }
        }
    }
    Ok(flows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IslandSummary {
    /// Bus ids in the island.
    pub buses: Vec<u32>,
    pub demand: f64,
    pub served: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CascadeResult {
    pub surviving: Vec<bool>,
    /// Final per-branch flows in MW (0 for removed branches).
    pub flows: Vec<f64>,
    pub islands: Vec<IslandSummary>,
    pub load_loss_fraction: f64,
    pub iterations: usize,
}

/// Balanced net injections per bus for the given branch state, plus island
/// summaries.
fn balance(grid: &PowerGrid, active: &[bool]) -> (Vec<f64>, Vec<IslandSummary>) {
    let mut injections = vec![0.0; grid.n_buses()];
    let mut islands = Vec::new();
    for comp in grid.components(active) {
        let demand: f64 = comp.iter().map(|&v| grid.buses[v].demand).sum();
        let generation: f64 = comp.iter().map(|&v| grid.buses[v].generation).sum();
        let served = demand.min(generation);
        if served > 0.0 {
            let gen_scale = served / generation;
            let load_scale = served / demand;
            for &v in &comp {
                let b = &grid.buses[v];
                injections[v] = b.generation * gen_scale - b.demand * load_scale;
            }
        }
        islands.push(IslandSummary {
            buses: comp.iter().map(|&v| grid.buses[v].id).collect(),
            demand,
            served,
        });
    }
    (injections, islands)
}

/// Runs overload cascades to equilibrium from the initial branch states
/// (`true` = in service).
///
/// Each round balances every island pro-rata (generation scaled down to the
/// island demand, or load shed down to the island generation), solves the DC
/// load flow, and removes all branches with `|flow| > capacity` at once.
pub fn cascade(grid: &PowerGrid, initial: &[bool]) -> Result<CascadeResult> {
    if initial.len() != grid.n_branches() {
        return Err(Error::invalid(format!(
            "state has {} entries, grid has {} branches",
            initial.len(),
            grid.n_branches()
        )));
    }
    let total = grid.total_demand();
    let mut active = initial.to_vec();
    let mut iterations = 0;
    loop {
        iterations += 1;
        let (injections, islands) = balance(grid, &active);
        let flows = dclf_solve(grid, &active, &injections)?;
        let mut removed = false;
        for (k, br) in grid.branches.iter().enumerate() {
            if active[k] && flows[k].abs() > br.capacity * (1.0 + OVERLOAD_ROUNDOFF) {
                active[k] = false;
                removed = true;
            }
        }
        if !removed {
            let unserved: f64 = islands.iter().map(|i| i.demand - i.served).sum();
            let loss = if total > 0.0 { (unserved / total).clamp(0.0, 1.0) } else { 0.0 };
            return Ok(CascadeResult {
                surviving: active,
                flows,
                islands,
                load_loss_fraction: loss,
                iterations,
            });
        }
    }
}

/// Grid limit state `0.30 - L(x)` over branch labels (1 = in service, 0 = failed).
#[derive(Debug, Clone)]
pub struct GridLsf {
    pub grid: PowerGrid,
    pub threshold: f64,
}

impl GridLsf {
    pub fn new(grid: PowerGrid) -> Self {
        GridLsf { grid, threshold: LOAD_LOSS_THRESHOLD }
    }

    pub fn branch_states(&self, x: &[f64]) -> Result<Vec<bool>> {
        if x.len() != self.grid.n_branches() {
            return Err(Error::invalid(format!(
                "state has {} entries, grid has {} branches",
                x.len(),
                self.grid.n_branches()
            )));
        }
        x.iter()
            .enumerate()
            .map(|(d, &l)| match l {
                1.0 => Ok(true),
                0.0 => Ok(false),
                l => Err(Error::UnknownState { dim: d, state: l.to_string() }),
            })
            .collect()
    }
}

pub fn grid_lsf(grid: &PowerGrid, x: &[f64]) -> Result<f64> {
    GridLsf::new(grid.clone()).value(x)
}

impl LimitState for GridLsf {
    fn n_dims(&self) -> usize {
        self.grid.n_branches()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        let states = self.branch_states(x)?;
        Ok(self.threshold - cascade(&self.grid, &states)?.load_loss_fraction)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const FOUR_BUS: &str = "\
base_mva 100
bus 1 slack 0 100
bus 2 load 30 0
bus 3 load 30 0
bus 4 load 40 0
branch 1 2 0.1 110
branch 2 3 0.1 25
branch 1 3 0.1 120
branch 3 4 0.1 50
";

    #[test]
    fn two_bus_single_branch_carries_everything() {
        let g = PowerGrid::parse("bus 1 slack 0 100\nbus 2 load 100 0\nbranch 1 2 0.1 500\n").unwrap();
        assert_eq!(g.n_branches(), 1);
        let flows = dclf_solve(&g, &[true], &[100.0, -100.0]).unwrap();
        assert!((flows[0] - 100.0).abs() < 1e-10);
    }

    #[test]
    fn three_bus_symmetric_split() {
        let g = PowerGrid::parse(
            "bus 1 slack 0 90\nbus 2 load 45 0\nbus 3 load 45 0\nbranch 1 2 0.1 500\nbranch 1 3 0.1 500\nbranch 2 3 0.1 500\n",
        )
        .unwrap();
        let f = dclf_solve(&g, &[true; 3], &[90.0, -45.0, -45.0]).unwrap();
        for (a, b) in f.iter().zip([45.0, 45.0, 0.0]) {
            assert!((a - b).abs() < 1e-10, "{f:?}");
        }
    }

    #[test]
    fn three_bus_hand_solve() {
        // Reduced system [[2,-1],[-1,2]] th = [-0.6,-0.3] / 10 per-unit.
        let g = PowerGrid::parse(
            "bus 1 slack 0 90\nbus 2 load 60 0\nbus 3 load 30 0\nbranch 1 2 0.1 500\nbranch 1 3 0.1 500\nbranch 2 3 0.1 500\n",
        )
        .unwrap();
        let f = dclf_solve(&g, &[true; 3], &[90.0, -60.0, -30.0]).unwrap();
        for (a, b) in f.iter().zip([50.0, 40.0, -10.0]) {
            assert!((a - b).abs() < 1e-10, "{f:?}");
        }
    }

    #[test]
    fn uniform_reactance_scaling_keeps_flows() {
        let g = PowerGrid::parse(FOUR_BUS).unwrap();
        let doubled = PowerGrid::new(
            g.buses().to_vec(),
            g.branches().iter().map(|b| Branch { reactance: 2.0 * b.reactance, ..b.clone() }).collect(),
            g.base_mva(),
        )
        .unwrap();
        let inj = [100.0, -30.0, -30.0, -40.0];
        let a = dclf_solve(&g, &[true; 4], &inj).unwrap();
        let b = dclf_solve(&doubled, &[true; 4], &inj).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn intact_grid_is_in_equilibrium() {
        let g = PowerGrid::parse(FOUR_BUS).unwrap();
        let r = cascade(&g, &[true; 4]).unwrap();
        assert_eq!(r.iterations, 1);
        assert_eq!(r.load_loss_fraction, 0.0);
        assert!((r.flows[0] - 130.0 / 3.0).abs() < 1e-10);
        assert!((r.flows[1] - 40.0 / 3.0).abs() < 1e-10);
        assert!((r.flows[2] - 170.0 / 3.0).abs() < 1e-10);
        assert!((r.flows[3] - 40.0).abs() < 1e-10);
    }

    #[test]
    fn four_bus_cascade_trace() {
        let g = PowerGrid::parse(FOUR_BUS).unwrap();
        let r = cascade(&g, &[false, true, true, true]).unwrap();
        assert_eq!(r.iterations, 2);
        assert_eq!(r.surviving, vec![false, false, true, true]);
        assert_eq!(r.load_loss_fraction, 0.3);
        assert!((r.flows[2] - 70.0).abs() < 1e-10);
        assert!((grid_lsf(&g, &[0.0, 1.0, 1.0, 1.0]).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn isolated_generation_loses_everything() {
        let g = PowerGrid::parse(FOUR_BUS).unwrap();
        let r = cascade(&g, &[false, true, false, true]).unwrap();
        assert_eq!(r.load_loss_fraction, 1.0);
        assert!((grid_lsf(&g, &[0.0, 1.0, 0.0, 1.0]).unwrap() + 0.7).abs() < 1e-15);
        assert_eq!(grid_lsf(&g, &[1.0; 4]).unwrap(), 0.30);
    }

    #[test]
    fn rating_exactly_met_survives() {
        let g = PowerGrid::parse("bus 1 slack 0 100\nbus 2 load 100 0\nbranch 1 2 0.1 100\n").unwrap();
        assert_eq!(cascade(&g, &[true]).unwrap().load_loss_fraction, 0.0);
    }

    #[test]
    fn monotone_damage_on_four_bus() {
        let g = PowerGrid::parse(FOUR_BUS).unwrap();
        let loss = |mask: u32| {
            let s: Vec<bool> = (0..4).map(|k| mask & (1 << k) != 0).collect();
            cascade(&g, &s).unwrap().load_loss_fraction
        };
        for mask in 0u32..16 {
            for k in 0..4 {
                if mask & (1 << k) != 0 {
                    assert!(loss(mask & !(1 << k)) >= loss(mask), "mask {mask:04b} bit {k}");
                }
            }
        }
    }

    #[test]
    fn case_file_errors() {
        assert!(matches!(
            PowerGrid::parse("bus 1 slack 0 0\nbus 2 load 1 0\nbranch 1 2 0 10\n"),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            PowerGrid::parse("bus 1 slack 0 0\nbus 2 load 1 0\nbranch 1 2 x 10\n"),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(matches!(
            PowerGrid::parse("bus 1 slack 0 0\nbus 2 generator 0 50\nbus 3 load 10 0\n"),
            Err(Error::Validation(_))
        ));
        assert!(matches!(PowerGrid::parse("bus 1 load 1 0\n"), Err(Error::Validation(_))));
        assert!(matches!(PowerGrid::parse("bus 1 slack 0 0\nbranch 1 9 0.1 1\n"), Err(Error::Parse { line: 2, .. })));
        assert!(GridLsf::new(PowerGrid::parse(FOUR_BUS).unwrap()).value(&[1.0; 3]).is_err());
    }

    #[test]
    fn slack_is_rebalanced_and_text_round_trips() {
        let g = PowerGrid::parse("bus 1 slack 0 5\nbus 2 generator 0 20\nbus 3 load 70 0\nbranch 1 3 0.1 100\nbranch 2 3 0.1 100\n").unwrap();
        assert_eq!(g.buses()[0].generation, 50.0);
        assert_eq!(PowerGrid::parse(&g.to_text()).unwrap(), g);
    }

    fn arb_grid() -> impl Strategy<Value = (PowerGrid, Vec<bool>)> {
        (3usize..9).prop_flat_map(|n| {
            let buses = prop::collection::vec((0u8..3, 0.0f64..50.0, 0.0f64..80.0), n);
            let extra = prop::collection::vec((0..n, 0..n, 0.05f64..0.5), 0..n);
            let tree = prop::collection::vec((any::<prop::sample::Index>(), 0.05f64..0.5), n - 1);
            let alive = prop::collection::vec(prop::bool::weighted(0.85), 2 * n);
            (buses, tree, extra, alive).prop_map(move |(bs, tree, extra, alive)| {
                let buses: Vec<Bus> = bs
                    .iter()
                    .enumerate()
                    .map(|(i, &(k, d, g))| {
                        let kind = if i == 0 {
                            BusType::Slack
                        } else if k == 0 {
                            BusType::Generator
                        } else {
                            BusType::Load
                        };
                        let generation = if kind == BusType::Generator { g * 0.2 } else { 0.0 };
                        Bus { id: i as u32 + 1, kind, demand: d, generation }
                    })
                    .collect();
                let mut branches: Vec<Branch> = tree
                    .iter()
                    .enumerate()
                    .map(|(i, (ix, x))| Branch { from: ix.index(i + 1), to: i + 1, reactance: *x, capacity: 1e6 })
                    .collect();
                branches.extend(
                    extra.iter().filter(|(a, b, _)| a != b).map(|&(a, b, x)| Branch { from: a, to: b, reactance: x, capacity: 1e6 }),
                );
                let active = alive[..branches.len().min(alive.len())].to_vec();
                let active = [active, vec![true; branches.len().saturating_sub(alive.len())]].concat();
                // Cap generators so the slack can absorb the remainder.
                let demand: f64 = buses.iter().map(|b| b.demand).sum();
                let gen: f64 = buses.iter().map(|b| b.generation).sum();
                let buses = if gen > demand {
                    buses.into_iter().map(|b| Bus { generation: if b.kind == BusType::Generator { 0.0 } else { b.generation }, ..b }).collect()
                } else {
                    buses
                };
                (PowerGrid::new(buses, branches, 100.0).unwrap(), active)
            })
        })
    }

    proptest! {
        #[test]
        fn flow_conservation((grid, active) in arb_grid()) {
            let (inj, _) = balance(&grid, &active);
            let flows = dclf_solve(&grid, &active, &inj).unwrap();
            let mut net = vec![0.0; grid.n_buses()];
            for (k, br) in grid.branches().iter().enumerate() {
                net[br.from] += flows[k];
                net[br.to] -= flows[k];
            }
            for (v, (n, i)) in net.iter().zip(&inj).enumerate() {
                prop_assert!(((n - i) / grid.base_mva()).abs() < 1e-8, "bus {}: {} vs {}", v, n, i);
            }
        }

        #[test]
        fn cascade_equilibrium_is_sound(
            (grid, active) in arb_grid(),
            caps in prop::collection::vec(1.0f64..60.0, 32),
        ) {
            let branches: Vec<Branch> = grid.branches().iter().zip(&caps).map(|(b, &c)| Branch { capacity: c, ..b.clone() }).collect();
            let grid = PowerGrid::new(grid.buses().to_vec(), branches, 100.0).unwrap();
            let r = cascade(&grid, &active).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.load_loss_fraction));
            // Every round but the last removes at least one branch.
            prop_assert!(r.iterations <= grid.n_branches() + 1);
            for (k, br) in grid.branches().iter().enumerate() {
                if r.surviving[k] {
                    prop_assert!(r.flows[k].abs() <= br.capacity * (1.0 + 1e-9));
                }
            }
            // Reversing branch order leaves the outcome unchanged.
            let rev: Vec<Branch> = grid.branches().iter().rev().cloned().collect();
            let rgrid = PowerGrid::new(grid.buses().to_vec(), rev, 100.0).unwrap();
            let ra: Vec<bool> = active.iter().rev().copied().collect();
            let rr = cascade(&rgrid, &ra).unwrap();
            prop_assert!((rr.load_loss_fraction - r.load_loss_fraction).abs() < 1e-12);
        }
    }
}
