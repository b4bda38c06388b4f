//! The controller as a message-passing protocol between plant nodes.
//!
//! Each agent sees only its own state measurement, its memory of last step's
//! internal states, and the messages delivered on its incoming edges. Agents run
//! in a topological order of the zero-delay subgraph within every step.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use nalgebra::DVector;
use serde::Serialize;

use crate::controller::{ControllerRealization, Trajectory};
use crate::error::{Error, Result};
use crate::infograph::InfoGraph;
use crate::netgraph::NetworkGraph;
use crate::problem::{Disturbances, LqProblem};

/// Which internal states travel on one edge.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlannedEdge {
    pub from: usize,
    pub to: usize,
    pub delay: u32,
    /// Info-node indices carried, in canonical order.
    pub carries: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MessagePlan {
    pub edges: Vec<PlannedEdge>,
    /// Stored internal states per agent, by the memory rule.
    pub memory: Vec<Vec<usize>>,
    /// Stored internal states that the protocol actually reads back.
    pub read_memory: Vec<Vec<usize>>,
    /// Per agent: info nodes received on a zero-delay edge instead of being computed.
    pub received: Vec<Vec<usize>>,
    pub schedule: Vec<usize>,
}

/// Kahn's algorithm on the zero-delay subgraph, smallest position first.
pub fn schedule(graph: &NetworkGraph) -> Result<Vec<usize>> {
    graph.validate()?;
    let n = graph.node_count();
    let mut indeg = vec![0usize; n];
    let mut out = vec![Vec::new(); n];
    for (f, t, d) in graph.positional_edges() {
        if d == 0 {
            indeg[t] += 1;
            out[f].push(t);
        }
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(&i) = ready.iter().next() {
        ready.remove(&i);
        order.push(i);
        for &j in &out[i] {
            indeg[j] -= 1;
            if indeg[j] == 0 {
                ready.insert(j);
            }
        }
    }
    if order.len() != n {
        return Err(Error::InvalidGraph("zero-delay cycle".into()));
    }
    Ok(order)
}

fn zero_delay_senders(graph: &NetworkGraph, i: usize) -> Vec<usize> {
    graph
        .positional_edges()
        .filter(|&(_, t, d)| t == i && d == 0)
        .map(|(f, _, _)| f)
        .collect()
}

pub fn build_plan(graph: &NetworkGraph, ig: &InfoGraph) -> Result<MessagePlan> {
    graph.validate()?;
    if let Some(e) = graph.edges().iter().find(|e| e.delay > 1) {
        return Err(Error::MustExpandRelays {
            from: e.from,
            to: e.to,
            delay: e.delay,
        });
    }
    let n = graph.node_count();
    if ig.plant_nodes() != n {
        return Err(Error::Dimension(
            "info graph and network graph disagree on node count".into(),
        ));
    }
    let mut edges = Vec::new();
    for (f, t, d) in graph.positional_edges() {
        let carries = (0..ig.len())
            .filter(|&s| {
                let set = ig.node(s);
                set.contains(f) && (set.contains(t) == (d == 0))
            })
            .collect();
        edges.push(PlannedEdge {
            from: f,
            to: t,
            delay: d,
            carries,
        });
    }
    edges.sort_by_key(|e| (e.from, e.to));
    let mut memory = Vec::with_capacity(n);
    let mut read_memory = Vec::with_capacity(n);
    let mut received = Vec::with_capacity(n);
    for i in 0..n {
        let senders = zero_delay_senders(graph, i);
        let by_message = |s: usize| senders.iter().any(|&j| ig.node(s).contains(j));
        let mine = ig.containing(i);
        memory.push(mine.iter().copied().filter(|&s| !by_message(s)).collect::<Vec<_>>());
        received.push(mine.iter().copied().filter(|&s| by_message(s)).collect());
        // Computed by recursion: non-roots not received, and roots with more than node i.
        let mut reads = BTreeSet::new();
        for &s in &mine {
            let recursion = if ig.root(i) == s {
                ig.node(s).len() > 1
            } else {
                !by_message(s)
            };
            if recursion {
                reads.extend(ig.predecessors(s).into_iter().filter(|&r| ig.node(r).contains(i)));
            }
        }
        read_memory.push(reads.into_iter().collect());
    }
    Ok(MessagePlan {
        edges,
        memory,
        read_memory,
        received,
        schedule: schedule(graph)?,
    })
}

impl MessagePlan {
    /// Scalars stored by agent `i`.
    pub fn memory_scalars(&self, i: usize, cr: &ControllerRealization) -> usize {
        self.memory[i].iter().map(|&s| cr.zeta_dim(s)).sum()
    }

    /// Share of stored internal states that are never read back.
    pub fn unread_fraction(&self) -> f64 {
        let stored: usize = self.memory.iter().map(Vec::len).sum();
        if stored == 0 {
            return 0.0;
        }
        let read: usize = self.read_memory.iter().map(Vec::len).sum();
        (stored - read) as f64 / stored as f64
    }

    pub fn payloads_per_step(&self) -> usize {
        self.edges.iter().map(|e| e.carries.len()).sum()
    }

    pub fn to_dot(&self, ids: &[u32], ig: &InfoGraph) -> String {
        let labels = ig.labels(ids);
        let mut out = String::from("digraph plan {\n");
        for (i, mem) in self.memory.iter().enumerate() {
            let stored: Vec<&str> = mem.iter().map(|&s| labels[s].as_str()).collect();
            let read: Vec<&str> = self.read_memory[i].iter().map(|&s| labels[s].as_str()).collect();
            let _ = writeln!(
                out,
                "  n{i} [label=\"{}\\nmemory: {}\\nread: {}\"];",
                ids[i],
                stored.join(" "),
                read.join(" ")
            );
        }
        for e in &self.edges {
            let carried: Vec<&str> = e.carries.iter().map(|&s| labels[s].as_str()).collect();
            let _ = writeln!(
                out,
                "  n{} -> n{} [label=\"{}: {}\"];",
                e.from,
                e.to,
                e.delay,
                carried.join(" ")
            );
        }
        out.push_str("}\n");
        out
    }
}

/// Where an agent obtained a value of `ζ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Source {
    Memory,
    /// Delivered this step on a zero-delay edge from the given agent.
    Instant(usize),
    /// Sent last step on a unit-delay edge by the given agent.
    Delayed(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Read {
    pub step: usize,
    pub agent: usize,
    pub info_node: usize,
    pub source: Source,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MessageRecord {
    pub step: usize,
    pub from: usize,
    pub to: usize,
    pub delay: u32,
    pub info_nodes: Vec<usize>,
    pub norms: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct DistributedRun {
    pub trajectory: Trajectory,
    pub messages: Vec<MessageRecord>,
    pub reads: Vec<Read>,
    /// Largest disagreement between duplicate copies of one `ζ` received by an agent.
    pub max_duplicate_gap: f64,
}

/// Tolerance for duplicate receipts of the same value.
pub const DUPLICATE_TOL: f64 = 1e-9;

type Inbox = BTreeMap<usize, (usize, DVector<f64>)>;

/// Local view of one agent. Holds no reference to other agents or the plant.
struct Agent {
    id: usize,
    memory: BTreeMap<usize, DVector<f64>>,
    instant: Inbox,
    delayed: Inbox,
    incoming_delayed: Inbox,
    current: BTreeMap<usize, DVector<f64>>,
}

fn deliver(inbox: &mut Inbox, from: usize, s: usize, value: &DVector<f64>, gap: &mut f64) -> Result<()> {
    match inbox.get(&s) {
        Some((_, prev)) => {
            let d = (prev - value).amax();
            *gap = gap.max(d);
            if d > DUPLICATE_TOL * (1.0 + value.amax()) {
                return Err(Error::Protocol(format!(
                    "inconsistent duplicate of info node {s} (gap {d:e})"
                )));
            }
        }
        None => {
            inbox.insert(s, (from, value.clone()));
        }
    }
    Ok(())
}

impl Agent {
    /// Value of `ζ_{t-1}^r` from memory (if `i ∈ r`) or the unit-delay inbox.
    fn previous(&self, t: usize, r: usize, cr: &ControllerRealization, reads: &mut Vec<Read>) -> Result<DVector<f64>> {
        let ig = cr.info_graph();
        if t == 0 {
            return Ok(DVector::zeros(cr.zeta_dim(r)));
        }
        let (value, source) = if ig.node(r).contains(self.id) {
            let v = self.memory.get(&r).ok_or_else(|| {
                Error::Protocol(format!("agent {} has no memory of info node {r}", self.id))
            })?;
            (v.clone(), Source::Memory)
        } else {
            let (from, v) = self.delayed.get(&r).ok_or_else(|| {
                Error::Protocol(format!(
                    "agent {} missing delayed message for info node {r}",
                    self.id
                ))
            })?;
            (v.clone(), Source::Delayed(*from))
        };
        reads.push(Read {
            step: t,
            agent: self.id,
            info_node: r,
            source,
        });
        Ok(value)
    }

    fn recursion(&self, t: usize, s: usize, cr: &ControllerRealization, reads: &mut Vec<Read>) -> Result<DVector<f64>> {
        let mut acc = DVector::zeros(cr.zeta_dim(s));
        if t == 0 {
            return Ok(acc);
        }
        for (r, m) in cr.updates(t - 1, s) {
            acc += m * self.previous(t, *r, cr, reads)?;
        }
        Ok(acc)
    }

    /// Compute every `ζ_t^s` with `i ∈ s`, then the local input.
    fn act(
        &mut self,
        t: usize,
        x_local: &DVector<f64>,
        cr: &ControllerRealization,
        reads: &mut Vec<Read>,
    ) -> Result<DVector<f64>> {
        let ig = cr.info_graph();
        let xs = cr.partition().states();
        let root = ig.root(self.id);
        self.current.clear();
        for s in ig.containing(self.id) {
            if s == root {
                continue;
            }
            let value = match self.instant.get(&s) {
                Some((from, v)) => {
                    reads.push(Read {
                        step: t,
                        agent: self.id,
                        info_node: s,
                        source: Source::Instant(*from),
                    });
                    v.clone()
                }
                None => self.recursion(t, s, cr, reads)?,
            };
            self.current.insert(s, value);
        }
        // Root: other rows from the recursion, own block by subtraction.
        let mut z = if ig.node(root).len() > 1 {
            self.recursion(t, root, cr, reads)?
        } else {
            DVector::zeros(cr.zeta_dim(root))
        };
        let mut own = x_local.clone();
        for (&r, v) in &self.current {
            let off = xs.offset_within(ig.node(r), self.id).unwrap();
            own -= v.rows(off, x_local.len());
        }
        let off = xs.offset_within(ig.node(root), self.id).unwrap();
        z.rows_mut(off, x_local.len()).copy_from(&own);
        self.current.insert(root, z);

        let mut u = DVector::zeros(cr.partition().inputs().dim(self.id));
        let us = cr.partition().inputs();
        for (&r, v) in &self.current {
            let k = cr.gain(t, r);
            let off = us.offset_within(ig.node(r), self.id).unwrap();
            u += k.rows(off, u.len()) * v;
        }
        Ok(u)
    }

    fn finish_step(&mut self, plan: &MessagePlan) {
        self.memory = plan.memory[self.id]
            .iter()
            .map(|s| (*s, self.current[s].clone()))
            .collect();
        self.instant.clear();
        self.delayed = std::mem::take(&mut self.incoming_delayed);
    }
}

/// Run the protocol in lockstep with the plant.
pub fn run_distributed(
    cr: &ControllerRealization,
    problem: &LqProblem,
    plan: &MessagePlan,
    dist: &Disturbances,
) -> Result<DistributedRun> {
    let steps = problem.steps()?;
    let part = problem.partition();
    let (xs, us) = (part.states(), part.inputs());
    let n = part.node_count();
    if dist.steps() != steps || dist.x0.len() != xs.total() {
        return Err(Error::Dimension("disturbances do not match the problem".into()));
    }
    let mut agents: Vec<Agent> = (0..n)
        .map(|id| Agent {
            id,
            memory: BTreeMap::new(),
            instant: Inbox::new(),
            delayed: Inbox::new(),
            incoming_delayed: Inbox::new(),
            current: BTreeMap::new(),
        })
        .collect();
    let mut outgoing: Vec<Vec<&PlannedEdge>> = vec![Vec::new(); n];
    for e in &plan.edges {
        outgoing[e.from].push(e);
    }

    let mut x = vec![dist.x0.clone()];
    let mut u_all = Vec::with_capacity(steps);
    let mut zeta = Vec::with_capacity(steps + 1);
    let mut costs = Vec::with_capacity(steps + 1);
    let mut messages = Vec::new();
    let mut reads = Vec::new();
    let mut gap = 0.0;
    for t in 0..=steps {
        let mut u = DVector::zeros(us.total());
        let mut zt: Vec<Option<DVector<f64>>> = vec![None; cr.info_graph().len()];
        for &i in &plan.schedule {
            let r = xs.range(i);
            let x_local = x[t].rows(r.start, r.len()).into_owned();
            let ui = agents[i].act(t, &x_local, cr, &mut reads)?;
            if t < steps {
                u.rows_mut(us.range(i).start, ui.len()).copy_from(&ui);
            }
            for (&s, v) in &agents[i].current {
                zt[s].get_or_insert_with(|| v.clone());
            }
            for e in &outgoing[i] {
                let mut norms = Vec::with_capacity(e.carries.len());
                for &s in &e.carries {
                    let value = agents[i].current[&s].clone();
                    norms.push(value.norm());
                    let target = &mut agents[e.to];
                    if e.delay == 0 {
                        deliver(&mut target.instant, i, s, &value, &mut gap)?;
                    } else {
                        deliver(&mut target.incoming_delayed, i, s, &value, &mut gap)?;
                    }
                }
                if !e.carries.is_empty() {
                    messages.push(MessageRecord {
                        step: t,
                        from: i,
                        to: e.to,
                        delay: e.delay,
                        info_nodes: e.carries.clone(),
                        norms,
                    });
                }
            }
        }
        for a in &mut agents {
            a.finish_step(plan);
        }
        zeta.push(
            zt.into_iter()
                .map(|v| v.expect("every info node is held by one of its members"))
                .collect(),
        );
        if t < steps {
            let st = problem.stage(t);
            costs.push(problem.stage_cost(t, &x[t], &u));
            let next = st.a.entries() * &x[t] + st.b.entries() * &u + &dist.w[t];
            x.push(next);
            u_all.push(u);
        }
    }
    let xt = &x[steps];
    costs.push(xt.dot(&(problem.qf().entries() * xt)));
    Ok(DistributedRun {
        trajectory: Trajectory {
            x,
            u: u_all,
            zeta,
            stage_costs: costs,
        },
        messages,
        reads,
        max_duplicate_gap: gap,
    })
}

/// Reads that fall outside what the plan makes available to the agent.
pub fn locality_violations(plan: &MessagePlan, run: &DistributedRun) -> Vec<Read> {
    let carries = |from: usize, to: usize, delay: u32, s: usize| {
        plan.edges
            .iter()
            .any(|e| e.from == from && e.to == to && e.delay == delay && e.carries.contains(&s))
    };
    run.reads
        .iter()
        .filter(|r| match r.source {
            Source::Memory => !plan.memory[r.agent].contains(&r.info_node),
            Source::Instant(from) => !carries(from, r.agent, 0, r.info_node),
            Source::Delayed(from) => r.step == 0 || !carries(from, r.agent, 1, r.info_node),
        })
        .copied()
        .collect()
}

/// Memory reads per agent actually observed during a run.
pub fn observed_memory_reads(run: &DistributedRun, n: usize) -> Vec<BTreeSet<usize>> {
    let mut out = vec![BTreeSet::new(); n];
    for r in &run.reads {
        if r.source == Source::Memory {
            out[r.agent].insert(r.info_node);
        }
    }
    out
}

#[derive(Serialize)]
struct LogLine<'a> {
    step: usize,
    from: u32,
    to: u32,
    delay: u32,
    info_nodes: &'a [String],
    norms: &'a [f64],
}

/// One JSON object per message, in send order.
pub fn trace_log(run: &DistributedRun, ids: &[u32], ig: &InfoGraph) -> String {
    let labels = ig.labels(ids);
    let mut out = String::new();
    for m in &run.messages {
        let tags: Vec<String> = m.info_nodes.iter().map(|&s| labels[s].clone()).collect();
        let line = LogLine {
            step: m.step,
            from: ids[m.from],
            to: ids[m.to],
            delay: m.delay,
            info_nodes: &tags,
            norms: &m.norms,
        };
        out.push_str(&serde_json::to_string(&line).expect("log line serializes"));
        out.push('\n');
    }
    out
}
