//! Bundled benchmark problems.
//!
//! | name    | problem                                                          |
//! |---------|------------------------------------------------------------------|
//! | `ex511` | 50 Bernoulli(1e-3) inputs, coefficients 2/1/0 in blocks of 10/30/10, fails at sum >= 6 |
//! | `ex512` | same coefficients, states {0, 1, 3} w.p. {0.899, 0.1, 1e-3}, fails at sum >= 19 |
//! | `ex52`  | 11-node, 20-edge multi-state flow network, capacities {0, 3, 5} w.p. {1e-3, 0.1, 0.899}, demand 6 |
//! | `grid4` | 4-bus grid where one outage overloads a second line and islands a load |
//! | `grid3` | 3-bus ring for checking the DC load flow by hand |
//!
//! The `ex52` topology has three routes into the sink: edge 14 from a meshed
//! cluster of nine edges, the two-edge path 16/17 and the three-edge path
//! 4/13/19.

use crate::categorical::IndependentCategorical;
use crate::error::Result;
use crate::flow::FlowNetwork;
use crate::grid::PowerGrid;
use crate::lsf::LinearLsfSpec;

pub const FIXTURE_NAMES: [&str; 5] = ["ex511", "ex512", "ex52", "grid4", "grid3"];

/// Bernoulli failure probability of every grid branch.
pub const GRID_BRANCH_FAILURE: f64 = 1e-3;

const EX511_PROBLEM: &str = "\
# Fails when 2*(x1+..+x10) + (x11+..+x40) + 0*(x41+..+x50) >= threshold.
threshold = 6.0

[[block]]
count = 10
coefficient = 2.0

[[block]]
count = 30
coefficient = 1.0

[[block]]
count = 10
coefficient = 0.0
";

const EX511_MODEL: &str = "\
[iid]
count = 50
labels = [0.0, 1.0]
probs = [0.999, 0.001]
";

const EX512_PROBLEM: &str = "\
threshold = 19.0

[[block]]
count = 10
coefficient = 2.0

[[block]]
count = 30
coefficient = 1.0

[[block]]
count = 10
coefficient = 0.0
";

const EX512_MODEL: &str = "\
[iid]
count = 50
labels = [0.0, 1.0, 3.0]
probs = [0.899, 0.1, 0.001]
";

const EX52_NETWORK: &str = "\
# Multi-state two-terminal network. Edge capacities equal their state labels.
nodes 11
source 1
sink 11
demand 6
directed false
edge 1 2 0:0 3:3 5:5     # 1
edge 1 3 0:0 3:3 5:5     # 2
edge 1 7 0:0 3:3 5:5     # 3
edge 1 4 0:0 3:3 5:5     # 4
edge 2 3 0:0 3:3 5:5     # 5
edge 2 7 0:0 3:3 5:5     # 6
edge 3 8 0:0 3:3 5:5     # 7
edge 7 8 0:0 3:3 5:5     # 8
edge 2 9 0:0 3:3 5:5     # 9
edge 7 9 0:0 3:3 5:5     # 10
edge 8 9 0:0 3:3 5:5     # 11
edge 3 10 0:0 3:3 5:5    # 12
edge 4 5 0:0 3:3 5:5     # 13
edge 10 11 0:0 3:3 5:5   # 14
edge 7 10 0:0 3:3 5:5    # 15
edge 1 6 0:0 3:3 5:5     # 16
edge 6 11 0:0 3:3 5:5    # 17
edge 8 10 0:0 3:3 5:5    # 18
edge 5 11 0:0 3:3 5:5    # 19
edge 9 10 0:0 3:3 5:5    # 20
";

const EX52_MODEL: &str = "\
[iid]
count = 20
labels = [0.0, 3.0, 5.0]
probs = [0.001, 0.1, 0.899]
";

const GRID4_CASE: &str = "\
# Losing branch 1 pushes 30 MW over branch 2 (rating 25); its trip islands bus 2.
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

const GRID3_CASE: &str = "\
base_mva 100
bus 1 slack 0 90
bus 2 load 60 0
bus 3 load 30 0
branch 1 2 0.1 100
branch 1 3 0.1 100
branch 2 3 0.1 100
";

/// Problem kind of a fixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixtureKind {
    Linear,
    MaxFlow,
    Grid,
}

/// A named fixture as text files.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub name: &'static str,
    pub kind: FixtureKind,
    /// File name of the problem definition.
    pub problem_file: &'static str,
    pub problem: &'static str,
    /// Input model text; grid fixtures generate it from the branch count.
    pub model: String,
}

pub fn fixture(name: &str) -> Option<Fixture> {
    let (name, kind, problem_file, problem, model) = match name {
        "ex511" => ("ex511", FixtureKind::Linear, "problem.toml", EX511_PROBLEM, EX511_MODEL.to_string()),
        "ex512" => ("ex512", FixtureKind::Linear, "problem.toml", EX512_PROBLEM, EX512_MODEL.to_string()),
        "ex52" => ("ex52", FixtureKind::MaxFlow, "network.txt", EX52_NETWORK, EX52_MODEL.to_string()),
        "grid4" => ("grid4", FixtureKind::Grid, "case.txt", GRID4_CASE, grid_model_text(4)),
        "grid3" => ("grid3", FixtureKind::Grid, "case.txt", GRID3_CASE, grid_model_text(3)),
        _ => return None,
    };
    Some(Fixture { name, kind, problem_file, problem, model })
}

fn grid_model_text(branches: usize) -> String {
    grid_input_model(branches).expect("valid grid model").to_toml_string()
}

/// Independent branch states: label 0 (failed) w.p. [`GRID_BRANCH_FAILURE`], else 1.
pub fn grid_input_model(branches: usize) -> Result<IndependentCategorical> {
    IndependentCategorical::iid(branches, &[0.0, 1.0], &[GRID_BRANCH_FAILURE, 1.0 - GRID_BRANCH_FAILURE])
}

pub fn ex511() -> (LinearLsfSpec, IndependentCategorical) {
    linear(EX511_PROBLEM, EX511_MODEL)
}

pub fn ex512() -> (LinearLsfSpec, IndependentCategorical) {
    linear(EX512_PROBLEM, EX512_MODEL)
}

fn linear(problem: &str, model: &str) -> (LinearLsfSpec, IndependentCategorical) {
    (
        LinearLsfSpec::from_toml_str(problem).expect("bundled linear problem parses"),
        IndependentCategorical::from_toml_str(model).expect("bundled model parses"),
    )
}

pub fn ex52() -> (FlowNetwork, IndependentCategorical) {
    (
        FlowNetwork::parse(EX52_NETWORK).expect("bundled network parses"),
        IndependentCategorical::from_toml_str(EX52_MODEL).expect("bundled model parses"),
    )
}

pub fn grid4() -> PowerGrid {
    PowerGrid::parse(GRID4_CASE).expect("bundled case parses")
}

pub fn grid3() -> PowerGrid {
    PowerGrid::parse(GRID3_CASE).expect("bundled case parses")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_fixture_loads() {
        for name in FIXTURE_NAMES {
            let f = fixture(name).unwrap();
            let model = IndependentCategorical::from_toml_str(&f.model).unwrap();
            let dims = match f.kind {
                FixtureKind::Linear => LinearLsfSpec::from_toml_str(f.problem).unwrap().coefficients.len(),
                FixtureKind::MaxFlow => FlowNetwork::parse(f.problem).unwrap().n_edges(),
                FixtureKind::Grid => PowerGrid::parse(f.problem).unwrap().n_branches(),
            };
            assert_eq!(dims, model.n_dims(), "{name}");
        }
        assert!(fixture("nope").is_none());
    }

    #[test]
    fn ex511_shape() {
        let (spec, model) = ex511();
        assert_eq!(spec.coefficients.len(), 50);
        assert_eq!(spec.coefficients[..10], [2.0; 10]);
        assert_eq!(spec.coefficients[10..40], [1.0; 30]);
        assert_eq!(spec.coefficients[40..], [0.0; 10]);
        assert_eq!(spec.threshold, 6.0);
        assert_eq!(model.probs(7), &[0.999, 0.001]);
    }

    #[test]
    fn ex52_shape() {
        let (net, model) = ex52();
        assert_eq!(net.nodes, 11);
        assert_eq!(net.n_edges(), 20);
        assert_eq!(net.demand, 6.0);
        assert_eq!(model.labels(13), &[0.0, 3.0, 5.0]);
        assert_eq!(net.max_flow(&[5.0; 20]).unwrap(), 15.0);
        // Edge 14 cut and both side paths at 3: flow 6, a failure.
        let mut x = [5.0; 20];
        x[13] = 0.0;
        x[15] = 3.0;
        x[12] = 3.0;
        assert_eq!(net.two_terminal_lsf(&x).unwrap(), 0.0);
    }
}
