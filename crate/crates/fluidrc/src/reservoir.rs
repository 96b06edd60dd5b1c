//! Compartment-flow model of the microfluidic chip and its camera optics.
//!
//! The chip is a small directed graph of compartments. Each frame, every
//! active pump injects pure dye at its inlet and pushes fluid along the
//! edges its flow drives; a fixed fraction of the source compartment's
//! volume moves per frame. With no pump running nothing moves, so dye laid
//! down by earlier slots is retained exactly. The red feed line is a
//! plug-flow stage: what enters it reappears at the far end a fixed number
//! of active-flow frames later, which is why red dye needs two full
//! injection slots before any detection area sees it.
//!
//! Detection areas are read out as camera channel values: a channel dips
//! below its baseline in proportion to how strongly the dyes present absorb
//! it (a dye never absorbs its own channel by default).

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patterns::{encode_schedule, Label, Pattern, Schedule};

pub const DYE_COUNT: usize = 3;
pub const AREA_COUNT: usize = 3;
pub const CHANNEL_COUNT: usize = 3;
/// Signal series per record: three camera channels for each detection area.
pub const SERIES_COUNT: usize = AREA_COUNT * CHANNEL_COUNT;

/// Column order of the nine signal series in every record and CSV file.
pub const SERIES_NAMES: [&str; SERIES_COUNT] = [
    "D1_R", "D1_G", "D1_B", "D2_R", "D2_G", "D2_B", "D3_R", "D3_G", "D3_B",
];

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub enum Dye {
    Red,
    Green,
    Blue,
}

impl Dye {
    pub const ALL: [Dye; DYE_COUNT] = [Dye::Red, Dye::Green, Dye::Blue];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Detection areas, in series order.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub enum Area {
    D1,
    D2,
    D3,
}

impl Area {
    pub const ALL: [Area; AREA_COUNT] = [Area::D1, Area::D2, Area::D3];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Area::D1 => "D1",
            Area::D2 => "D2",
            Area::D3 => "D3",
        }
    }
}

impl std::fmt::Display for Area {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Area {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "D1" | "1" => Ok(Area::D1),
            "D2" | "2" => Ok(Area::D2),
            "D3" | "3" => Ok(Area::D3),
            other => Err(Error::config(format!("unknown detection area '{other}'"))),
        }
    }
}

/// One simulated (or ingested) record: nine series of camera channel values.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalRecord {
    pub label: Label,
    /// series[area * 3 + channel][frame], ordered as [`SERIES_NAMES`].
    pub series: Vec<Vec<f64>>,
}

impl SignalRecord {
    pub fn frames(&self) -> usize {
        self.series.first().map_or(0, Vec::len)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum NodeKind {
    /// Boundary source: while its pump runs, injection drives the node's
    /// mix toward pure dye. Outflow does not deplete it.
    Inlet(Dye),
    /// Well-mixed compartment.
    Mixing,
    /// Plug-flow line: emits what entered `frames` active frames earlier.
    Delay { frames: usize },
    /// Absorbing waste port; inflow displaces its content.
    Outlet,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Node {
    pub name: String,
    pub kind: NodeKind,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Edge {
    pub from: String,
    pub to: String,
    /// Fraction of one compartment volume moved per active frame.
    pub coeff: f64,
    /// Dye pumps whose flow drives this edge.
    pub drives: Vec<Dye>,
}

impl Edge {
    fn new(from: &str, to: &str, coeff: f64, drives: &[Dye]) -> Self {
        Edge {
            from: from.into(),
            to: to.into(),
            coeff,
            drives: drives.to_vec(),
        }
    }
}

/// The chip graph: compartments, driven transfer edges, and the injection
/// gain applied at inlets each active frame.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChipTopology {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    /// Per-frame injection gain at an inlet whose pump is running. The
    /// default reaches >= 0.95 of pure dye within one 300-frame slot.
    pub inlet_gain: f64,
    /// Names of the three detection-area nodes, in [`Area`] order.
    pub detectors: [String; AREA_COUNT],
}

/// Active-frame length of the red feed line's plug-flow stage: two full
/// injection slots.
pub const RED_LINE_FRAMES: usize = 600;

impl ChipTopology {
    /// The stock chip: one inlet per dye, a plug-flow red feed coil, three
    /// propagation compartments, three output areas, and a detection area
    /// with waste port per output. Red propagates via prop_4 toward det_D1,
    /// green via prop_6 (spilling into all three outputs, mostly out_8),
    /// blue via prop_5 toward det_D3; out_8 collects all three dyes.
    ///
    /// Only the three inlet arms are private to their own pump. Everything
    /// downstream shares the carrier stream, so running any pump advances
    /// the whole network. That matters twice over: a dye's compartments
    /// drain while other dyes run (an off slot reads as a decay, not a
    /// held plateau), and the red coil advances per active frame rather
    /// than per red frame, so early red injections surface before the
    /// record ends even when the red row is sparse.
    pub fn default_chip() -> Self {
        use Dye::{Blue, Green, Red};
        let mixing = |name: &str| Node {
            name: name.into(),
            kind: NodeKind::Mixing,
        };
        let nodes = vec![
            Node { name: "inlet_R".into(), kind: NodeKind::Inlet(Red) },
            Node { name: "inlet_G".into(), kind: NodeKind::Inlet(Green) },
            Node { name: "inlet_B".into(), kind: NodeKind::Inlet(Blue) },
            mixing("junc_R"),
            Node { name: "red_line".into(), kind: NodeKind::Delay { frames: RED_LINE_FRAMES } },
            mixing("prop_4"),
            mixing("prop_5"),
            mixing("prop_6"),
            mixing("out_7"),
            mixing("out_8"),
            mixing("out_9"),
            mixing("det_D1"),
            mixing("det_D2"),
            mixing("det_D3"),
            Node { name: "outlet_10".into(), kind: NodeKind::Outlet },
            Node { name: "outlet_11".into(), kind: NodeKind::Outlet },
            Node { name: "outlet_12".into(), kind: NodeKind::Outlet },
            Node { name: "waste_4".into(), kind: NodeKind::Outlet },
            Node { name: "waste_5".into(), kind: NodeKind::Outlet },
            Node { name: "waste_6".into(), kind: NodeKind::Outlet },
        ];
        let carrier = [Red, Green, Blue];
        // The propagation compartments turn over fast (most of their volume
        // goes straight to waste), while the output and detection areas are
        // wide and turn over slowly: a 5-second injection charges them to
        // about half of steady state and the charge lingers a couple of
        // slots, so an area integrates its dye history instead of tracking
        // the instantaneous feed. Steady dye totals at the areas cap out
        // near 0.83, leaving the camera channels clear of the floor even
        // for the busiest patterns. Green spills into the side outputs
        // unevenly, which keeps D1 and D3 distinguishable even for
        // green-heavy patterns.
        let edges = vec![
            Edge::new("inlet_R", "junc_R", 0.025, &[Red]),
            Edge::new("junc_R", "red_line", 0.025, &carrier),
            Edge::new("red_line", "prop_4", 0.025, &carrier),
            Edge::new("inlet_G", "prop_6", 0.025, &[Green]),
            Edge::new("inlet_B", "prop_5", 0.025, &[Blue]),
            Edge::new("prop_4", "out_7", 0.0047, &carrier),
            Edge::new("prop_4", "out_8", 0.0023, &carrier),
            Edge::new("prop_4", "waste_4", 0.018, &carrier),
            Edge::new("prop_6", "out_7", 0.0012, &carrier),
            Edge::new("prop_6", "out_8", 0.0034, &carrier),
            Edge::new("prop_6", "out_9", 0.0017, &carrier),
            Edge::new("prop_6", "waste_6", 0.0187, &carrier),
            Edge::new("prop_5", "out_9", 0.0046, &carrier),
            Edge::new("prop_5", "out_8", 0.0023, &carrier),
            Edge::new("prop_5", "waste_5", 0.0181, &carrier),
            Edge::new("out_7", "det_D1", 0.006, &carrier),
            Edge::new("out_8", "det_D2", 0.0085, &carrier),
            Edge::new("out_9", "det_D3", 0.0066, &carrier),
            Edge::new("det_D1", "outlet_10", 0.006, &carrier),
            Edge::new("det_D2", "outlet_11", 0.0085, &carrier),
            Edge::new("det_D3", "outlet_12", 0.0066, &carrier),
        ];
        ChipTopology {
            nodes,
            edges,
            inlet_gain: 0.02,
            detectors: ["det_D1".into(), "det_D2".into(), "det_D3".into()],
        }
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    /// Structural validation. Beyond basic well-formedness this enforces the
    /// flow bookkeeping rules that keep concentrations inside [0, 1]: per
    /// node, total outgoing coefficient stays <= 1 and covers the total
    /// incoming coefficient, and every outgoing edge is driven by at least
    /// the dyes that drive some incoming edge.
    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        let fail = |msg: String| Err(Error::config(format!("topology: {msg}")));
        for (i, node) in self.nodes.iter().enumerate() {
            if node.name.is_empty() {
                return fail(format!("node {i} has an empty name"));
            }
            if self.nodes.iter().filter(|m| m.name == node.name).count() > 1 {
                return fail(format!("duplicate node name '{}'", node.name));
            }
        }
        for dye in Dye::ALL {
            let count = self
                .nodes
                .iter()
                .filter(|node| node.kind == NodeKind::Inlet(dye))
                .count();
            if count != 1 {
                return fail(format!("expected exactly one {dye:?} inlet, found {count}"));
            }
        }
        if !(0.0..=1.0).contains(&self.inlet_gain) || self.inlet_gain <= 0.0 {
            return fail(format!("inlet_gain {} outside (0, 1]", self.inlet_gain));
        }
        for name in &self.detectors {
            match self.node_index(name) {
                None => return fail(format!("detector '{name}' is not a node")),
                Some(i) if self.nodes[i].kind != NodeKind::Mixing => {
                    return fail(format!("detector '{name}' must be a mixing compartment"))
                }
                Some(_) => {}
            }
        }

        let mut incoming: Vec<Vec<&Edge>> = vec![Vec::new(); n];
        let mut outgoing: Vec<Vec<&Edge>> = vec![Vec::new(); n];
        for edge in &self.edges {
            let from = self
                .node_index(&edge.from)
                .ok_or_else(|| Error::config(format!("topology: edge from unknown node '{}'", edge.from)))?;
            let to = self
                .node_index(&edge.to)
                .ok_or_else(|| Error::config(format!("topology: edge to unknown node '{}'", edge.to)))?;
            if !(0.0..=1.0).contains(&edge.coeff) {
                return fail(format!(
                    "edge {} -> {} coefficient {} outside [0, 1]",
                    edge.from, edge.to, edge.coeff
                ));
            }
            if edge.drives.is_empty() {
                return fail(format!("edge {} -> {} is driven by no pump", edge.from, edge.to));
            }
            outgoing[from].push(edge);
            incoming[to].push(edge);
        }

        for (i, node) in self.nodes.iter().enumerate() {
            let in_sum: f64 = incoming[i].iter().map(|e| e.coeff).sum();
            let out_sum: f64 = outgoing[i].iter().map(|e| e.coeff).sum();
            if out_sum > 1.0 + 1e-12 {
                return fail(format!("node '{}' sheds {out_sum} > 1 per frame", node.name));
            }
            if in_sum > 1.0 + 1e-12 {
                return fail(format!("node '{}' receives {in_sum} > 1 per frame", node.name));
            }
            match node.kind {
                NodeKind::Inlet(dye) => {
                    if !incoming[i].is_empty() {
                        return fail(format!("inlet '{}' has incoming edges", node.name));
                    }
                    for e in &outgoing[i] {
                        if e.drives != [dye] {
                            return fail(format!(
                                "inlet edge {} -> {} must be driven by {dye:?} alone",
                                e.from, e.to
                            ));
                        }
                    }
                }
                NodeKind::Mixing => {
                    if in_sum > out_sum + 1e-12 {
                        return fail(format!(
                            "compartment '{}' receives {in_sum} but sheds only {out_sum}",
                            node.name
                        ));
                    }
                    for out in &outgoing[i] {
                        for inc in &incoming[i] {
                            if inc.drives.iter().any(|d| !out.drives.contains(d)) {
                                return fail(format!(
                                    "edge {} -> {} must be driven by every pump feeding '{}'",
                                    out.from, out.to, node.name
                                ));
                            }
                        }
                    }
                }
                NodeKind::Delay { frames } => {
                    if frames == 0 {
                        return fail(format!("delay '{}' has zero length", node.name));
                    }
                    if incoming[i].len() != 1 || outgoing[i].len() != 1 {
                        return fail(format!(
                            "delay '{}' must have exactly one inflow and one outflow",
                            node.name
                        ));
                    }
                    let (inc, out) = (incoming[i][0], outgoing[i][0]);
                    if (inc.coeff - out.coeff).abs() > 1e-12 || inc.drives != out.drives {
                        return fail(format!(
                            "delay '{}' inflow and outflow must match in coefficient and drive",
                            node.name
                        ));
                    }
                }
                NodeKind::Outlet => {
                    if !outgoing[i].is_empty() {
                        return fail(format!("outlet '{}' has outgoing edges", node.name));
                    }
                }
            }
        }

        // Acyclic, inlets to outlets.
        let mut indegree = vec![0usize; n];
        for edges in &incoming {
            for e in edges.iter() {
                indegree[self.node_index(&e.to).unwrap()] = 0;
            }
        }
        for (i, edges) in incoming.iter().enumerate() {
            indegree[i] = edges.len();
        }
        let mut queue: VecDeque<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut seen = 0;
        while let Some(i) = queue.pop_front() {
            seen += 1;
            for e in &outgoing[i] {
                let to = self.node_index(&e.to).unwrap();
                indegree[to] -= 1;
                if indegree[to] == 0 {
                    queue.push_back(to);
                }
            }
        }
        if seen != n {
            return fail("graph contains a cycle".into());
        }
        Ok(())
    }
}

/// Camera model mapping dye concentrations to channel values.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OpticsConfig {
    /// Channel value of clear fluid.
    pub baseline: f64,
    /// Channel value under full absorption.
    pub floor: f64,
    /// alpha[dye][channel]: how strongly a dye absorbs a camera channel.
    /// The default absorbs the two foreign channels fully and its own not
    /// at all.
    pub alpha: [[f64; CHANNEL_COUNT]; DYE_COUNT],
}

impl Default for OpticsConfig {
    fn default() -> Self {
        OpticsConfig {
            baseline: 120.0,
            floor: 40.0,
            alpha: [[0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]],
        }
    }
}

impl OpticsConfig {
    /// Default optics with the blue/green bleed enabled: blue dye absorbs
    /// the green channel only partially and dims its own channel slightly,
    /// so blue output reads weaker and mixed with green.
    pub fn with_blue_green_bleed(bleed: f64) -> Self {
        let mut optics = OpticsConfig::default();
        optics.alpha[Dye::Blue.index()][1] = bleed;
        optics.alpha[Dye::Blue.index()][2] = (1.0 - bleed).min(0.3);
        optics
    }

    pub fn range(&self) -> f64 {
        self.baseline - self.floor
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.baseline > self.floor && self.floor >= 0.0) {
            return Err(Error::config(format!(
                "optics: baseline {} must exceed floor {} and floor must be >= 0",
                self.baseline, self.floor
            )));
        }
        for row in &self.alpha {
            for &a in row {
                if !(0.0..=1.0).contains(&a) {
                    return Err(Error::config(format!("optics: alpha entry {a} outside [0, 1]")));
                }
            }
        }
        Ok(())
    }

    /// Channel value for a dye mix: baseline minus absorption, saturating
    /// at the floor.
    pub fn reading(&self, conc: &[f64; DYE_COUNT], channel: usize) -> f64 {
        let absorb: f64 = (0..DYE_COUNT).map(|d| self.alpha[d][channel] * conc[d]).sum();
        self.baseline - self.range() * absorb.clamp(0.0, 1.0)
    }
}

#[derive(Clone, Copy)]
struct CompiledEdge {
    from: usize,
    to: usize,
    coeff: f64,
    drives: [bool; DYE_COUNT],
}

/// Mutable simulation state: per-node dye concentrations, plug-flow queues,
/// and the running injected-mass tally.
#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub conc: Vec<[f64; DYE_COUNT]>,
    queues: Vec<VecDeque<[f64; DYE_COUNT]>>,
    /// Total dye mass that has crossed from an inlet into the chip.
    pub injected: [f64; DYE_COUNT],
}

/// A validated chip plus optics, ready to run schedules.
pub struct Simulator {
    topology: ChipTopology,
    optics: OpticsConfig,
    edges: Vec<CompiledEdge>,
    detectors: [usize; AREA_COUNT],
    inlets: Vec<(usize, usize)>,
    delay_frames: Vec<usize>,
    delay_feed: Vec<f64>,
}

/// A full schedule run: the nine signal series plus the final state.
pub struct SimTrace {
    pub series: Vec<Vec<f64>>,
    pub state: SimState,
}

impl Simulator {
    pub fn new(topology: ChipTopology, optics: OpticsConfig) -> Result<Self> {
        topology.validate()?;
        optics.validate()?;
        let edges = topology
            .edges
            .iter()
            .map(|e| {
                let mut drives = [false; DYE_COUNT];
                for d in &e.drives {
                    drives[d.index()] = true;
                }
                CompiledEdge {
                    from: topology.node_index(&e.from).unwrap(),
                    to: topology.node_index(&e.to).unwrap(),
                    coeff: e.coeff,
                    drives,
                }
            })
            .collect();
        let detectors = [
            topology.node_index(&topology.detectors[0]).unwrap(),
            topology.node_index(&topology.detectors[1]).unwrap(),
            topology.node_index(&topology.detectors[2]).unwrap(),
        ];
        let inlets = topology
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.kind {
                NodeKind::Inlet(dye) => Some((i, dye.index())),
                _ => None,
            })
            .collect();
        let delay_frames = topology
            .nodes
            .iter()
            .map(|n| match n.kind {
                NodeKind::Delay { frames } => frames,
                _ => 0,
            })
            .collect();
        // Parcel volume of each delay line = its (validated, unique) inflow
        // coefficient; used for mass accounting.
        let delay_feed = topology
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| match n.kind {
                NodeKind::Delay { .. } => topology
                    .edges
                    .iter()
                    .find(|e| topology.node_index(&e.to) == Some(i))
                    .map_or(0.0, |e| e.coeff),
                _ => 0.0,
            })
            .collect();
        Ok(Simulator {
            topology,
            optics,
            edges,
            detectors,
            inlets,
            delay_frames,
            delay_feed,
        })
    }

    pub fn topology(&self) -> &ChipTopology {
        &self.topology
    }

    pub fn optics(&self) -> &OpticsConfig {
        &self.optics
    }

    pub fn fresh_state(&self) -> SimState {
        SimState {
            conc: vec![[0.0; DYE_COUNT]; self.topology.nodes.len()],
            queues: self
                .delay_frames
                .iter()
                .map(|&frames| {
                    let mut q = VecDeque::with_capacity(frames + 1);
                    q.extend(std::iter::repeat([0.0; DYE_COUNT]).take(frames));
                    q
                })
                .collect(),
            injected: [0.0; DYE_COUNT],
        }
    }

    /// Advance one frame. With no pump active the state is left untouched.
    pub fn step(&self, state: &mut SimState, active: [bool; DYE_COUNT]) {
        if !active.contains(&true) {
            return;
        }
        let gain = self.topology.inlet_gain;
        for &(node, dye) in &self.inlets {
            if active[dye] {
                let c = &mut state.conc[node];
                for d in 0..DYE_COUNT {
                    c[d] *= 1.0 - gain;
                }
                c[dye] += gain;
            }
        }

        let old = state.conc.clone();
        let mut delta = vec![[0.0; DYE_COUNT]; old.len()];
        for edge in &self.edges {
            if !(0..DYE_COUNT).any(|d| active[d] && edge.drives[d]) {
                continue;
            }
            let src = match self.topology.nodes[edge.from].kind {
                NodeKind::Delay { .. } => state.queues[edge.from]
                    .pop_front()
                    .unwrap_or([0.0; DYE_COUNT]),
                _ => old[edge.from],
            };
            let moved = [
                edge.coeff * src[0],
                edge.coeff * src[1],
                edge.coeff * src[2],
            ];
            match self.topology.nodes[edge.from].kind {
                NodeKind::Mixing => {
                    for d in 0..DYE_COUNT {
                        delta[edge.from][d] -= moved[d];
                    }
                }
                NodeKind::Inlet(_) => {
                    for d in 0..DYE_COUNT {
                        state.injected[d] += moved[d];
                    }
                }
                // Delay: the popped parcel already left the queue.
                // Outlets have no outgoing edges.
                _ => {}
            }
            match self.topology.nodes[edge.to].kind {
                NodeKind::Delay { .. } => {
                    state.queues[edge.to].push_back(src);
                }
                NodeKind::Outlet => {
                    for d in 0..DYE_COUNT {
                        delta[edge.to][d] += moved[d] - edge.coeff * old[edge.to][d];
                    }
                }
                _ => {
                    for d in 0..DYE_COUNT {
                        delta[edge.to][d] += moved[d];
                    }
                }
            }
        }
        for (c, d) in state.conc.iter_mut().zip(&delta) {
            for k in 0..DYE_COUNT {
                c[k] += d[k];
            }
        }
        // Keep the emitting end of each delay line observable.
        for (i, &frames) in self.delay_frames.iter().enumerate() {
            if frames > 0 {
                state.conc[i] = *state.queues[i].front().unwrap_or(&[0.0; DYE_COUNT]);
            }
        }
    }

    /// Camera value at a detection area for one channel (0 = R, 1 = G, 2 = B).
    pub fn read(&self, state: &SimState, area: Area, channel: usize) -> f64 {
        self.optics
            .reading(&state.conc[self.detectors[area.index()]], channel)
    }

    pub fn concentration(&self, state: &SimState, node: &str) -> Option<[f64; DYE_COUNT]> {
        self.topology.node_index(node).map(|i| state.conc[i])
    }

    pub fn detector_concentration(&self, state: &SimState, area: Area) -> [f64; DYE_COUNT] {
        state.conc[self.detectors[area.index()]]
    }

    /// Total dye mass held by interior compartments and delay lines.
    pub fn interior_dye_mass(&self, state: &SimState) -> [f64; DYE_COUNT] {
        let mut mass = [0.0; DYE_COUNT];
        for (i, node) in self.topology.nodes.iter().enumerate() {
            match node.kind {
                NodeKind::Mixing => {
                    for d in 0..DYE_COUNT {
                        mass[d] += state.conc[i][d];
                    }
                }
                NodeKind::Delay { .. } => {
                    for parcel in &state.queues[i] {
                        for d in 0..DYE_COUNT {
                            mass[d] += self.delay_feed[i] * parcel[d];
                        }
                    }
                }
                _ => {}
            }
        }
        mass
    }

    /// Run a schedule from a fresh state, sampling every frame.
    pub fn trace(&self, schedule: &Schedule) -> SimTrace {
        let mut state = self.fresh_state();
        let mut series = vec![Vec::with_capacity(schedule.len()); SERIES_COUNT];
        for &active in schedule {
            self.step(&mut state, active);
            for area in Area::ALL {
                for channel in 0..CHANNEL_COUNT {
                    series[area.index() * CHANNEL_COUNT + channel]
                        .push(self.read(&state, area, channel));
                }
            }
        }
        SimTrace { series, state }
    }

    /// Simulate one pattern's full 1800-frame record (noiseless).
    pub fn simulate(&self, pattern: &Pattern) -> SignalRecord {
        let trace = self.trace(&encode_schedule(pattern));
        SignalRecord {
            label: pattern.label,
            series: trace.series,
        }
    }
}

/// Add one seeded offset per series, clamping back into the raw value range.
pub fn add_sensor_offsets<R: Rng>(
    record: &mut SignalRecord,
    sigma: f64,
    floor: f64,
    baseline: f64,
    rng: &mut R,
) {
    let normal = Normal::new(0.0, sigma).expect("sigma must be finite and non-negative");
    for series in &mut record.series {
        let offset = normal.sample(rng);
        for value in series.iter_mut() {
            *value = (*value + offset).clamp(floor, baseline);
        }
    }
}

/// Simulate a whole corpus, with optional per-series sensor offsets drawn
/// from a per-record stream of the given seed. Records run in parallel;
/// output order and values match a sequential run because each record's
/// stream depends only on its index.
pub fn run_corpus(
    patterns: &[Pattern],
    simulator: &Simulator,
    noise_sigma: f64,
    seed: u64,
) -> Vec<SignalRecord> {
    patterns
        .par_iter()
        .enumerate()
        .map(|(index, pattern)| {
            let mut record = simulator.simulate(pattern);
            if noise_sigma > 0.0 {
                let mut rng = ChaCha12Rng::seed_from_u64(seed);
                rng.set_stream(index as u64);
                add_sensor_offsets(
                    &mut record,
                    noise_sigma,
                    simulator.optics().floor,
                    simulator.optics().baseline,
                    &mut rng,
                );
            }
            record
        })
        .collect()
}

pub fn default_simulator() -> Simulator {
    Simulator::new(ChipTopology::default_chip(), OpticsConfig::default())
        .expect("default chip is valid")
}
