//! Wires a [`Scenario`] into a running simulation: nodes, per-direction
//! channels, sources, destinations and the control mechanism in use.

use std::collections::VecDeque;

use crate::credit::{
    destination_entry, CreditFeedback, CreditLinkState, CreditRuleParams, DestinationCreditState, NodeCreditState,
    SourceCreditState,
};
use crate::engine::{
    ConnId, EnqueueOutcome, EventQueue, Link, NodeId, Packet, PacketKind, Payload, PriorityQueue, SimTime,
    Transmitter, CELL_BITS,
};
use crate::metrics::{goodput_ratio, path_available, DestinationGoodput, GoodputRatioReport, MetricSample};
use crate::rate::{apply_bwd_at_source, on_fwd_feedback_at_dest, EricaParams, EricaPort, FwdFeedback, FwdPacer, MergeState};
use crate::scenario::{MechanismKind, Scenario};
use crate::traffic::InterferenceGenerator;
use crate::video::{classify_reception, goodput, throughput, LayerSet, ReceptionMonitor, VideoEmitter};

/// Width of the bins over which available bandwidth is averaged.
pub const AVAILABILITY_BIN: SimTime = SimTime::from_secs(1);

const MAX_VIOLATION_MESSAGES: usize = 32;

#[derive(Debug)]
enum Ev {
    SourceEmit { conn: usize, epoch: u64 },
    TxDone { chan: usize },
    Arrive { chan: usize, pkt: Packet },
    EricaTick,
    MergeTimeout { conn: usize, node: usize, generation: u64 },
    AccumulationTick { conn: usize },
    Sample,
}

struct Slot {
    conn: usize,
    queue: PriorityQueue,
    credit: Option<CreditLinkState>,
    steady_bits: u64,
}

struct Channel {
    tx: Transmitter,
    from: usize,
    to: usize,
    control: VecDeque<Packet>,
    slots: Vec<Slot>,
    rr: usize,
    busy: bool,
    erica: Option<EricaPort>,
}

struct DestState {
    monitor: ReceptionMonitor,
    credit: DestinationCreditState,
    samples: Vec<(SimTime, f64, f64)>,
}

/// A connection's view of one node of its tree.
struct NodeConn {
    /// Channel towards the parent (feedback goes here).
    up: Option<usize>,
    /// Outgoing video channels and the connection's slot on each.
    down: Vec<(usize, usize)>,
    merge: Option<MergeState>,
    credit: Option<NodeCreditState>,
    dest: Option<DestState>,
}

struct ConnState {
    name: String,
    emitter: VideoEmitter,
    epoch: u64,
    src_chan: usize,
    src_slot: usize,
    pacer: FwdPacer,
    credit: Option<SourceCreditState>,
    nodes: Vec<Option<NodeConn>>,
}

/// Layer state of a source from `t` on.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerChange {
    pub t: SimTime,
    pub conn: usize,
    pub cumulative: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunStats {
    pub events: u64,
    pub video_generated: u64,
    pub video_transmissions: u64,
    pub video_delivered: u64,
    /// Video discarded at intermediate nodes.
    pub video_drops: u64,
    /// Video discarded in a source queue.
    pub source_drops: u64,
    pub fwd_feedback: u64,
    pub bwd_feedback: u64,
    pub credit_feedback: u64,
    pub priority_violations: u64,
    pub credit_violations: u64,
}

#[derive(Clone, Debug)]
pub struct DestinationTrace {
    pub destination: String,
    pub connection: String,
    /// `(t, goodput, throughput)` per reception interval, bits/s.
    pub samples: Vec<(SimTime, f64, f64)>,
    /// Available bandwidth per availability bin of the steady window.
    pub available: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub kind: MechanismKind,
    pub duration: SimTime,
    pub warmup: SimTime,
    pub connections: Vec<String>,
    pub layer_trace: Vec<LayerChange>,
    pub destinations: Vec<DestinationTrace>,
    pub goodput: GoodputRatioReport,
    /// Per-connection mean rate across the bottleneck link in the steady
    /// window, bits/s.
    pub bottleneck_rates: Option<Vec<f64>>,
    /// Periodic observations: `source_occupancy/<connection>` in packets.
    pub samples: Vec<MetricSample>,
    pub stats: RunStats,
    pub violations: Vec<String>,
}

impl RunResult {
    /// Cumulative rates of `conn` in force at `t`.
    pub fn layers_at(&self, conn: usize, t: SimTime) -> Option<&[f64]> {
        self.layer_trace
            .iter().rfind(|c| c.conn == conn && c.t <= t)
            .map(|c| c.cumulative.as_slice())
    }

    /// Layer changes of one connection.
    pub fn trace_of(&self, conn: usize) -> impl Iterator<Item = &LayerChange> {
        self.layer_trace.iter().filter(move |c| c.conn == conn)
    }
}

pub struct Simulation {
    kind: MechanismKind,
    duration: SimTime,
    warmup: SimTime,
    bottleneck: Option<usize>,
    q: EventQueue<Ev>,
    channels: Vec<Channel>,
    node_names: Vec<String>,
    conns: Vec<ConnState>,
    max_layers: usize,
    fwd_peak: f64,
    erica_interval: SimTime,
    merge_timeout: SimTime,
    credit_batch: u32,
    credit_gap: usize,
    condition2: bool,
    accumulation: SimTime,
    reception_interval: SimTime,
    partial_threshold: f64,
    trace: Vec<LayerChange>,
    samples: Vec<MetricSample>,
    stats: RunStats,
    violations: Vec<String>,
    // video packet instances created minus destroyed, and those on a wire
    alive: i64,
    in_flight: i64,
}

impl Simulation {
    /// Builds the simulation; the scenario must already be valid.
    pub fn new(sc: &Scenario) -> Self {
        let m = &sc.mechanism;
        let kind = m.kind;
        let node_idx = |id: &str| sc.nodes.iter().position(|n| n.id == id).expect("validated node");
        let mut channels = Vec::with_capacity(sc.links.len() * 2);
        let erica_params = EricaParams {
            target_utilization: m.rate.target_utilization,
            interval: m.rate.erica_interval,
            min_rate: m.rate.min_rate_bps as f64,
            overload_floor: 1e-3,
        };
        for (i, l) in sc.links.iter().enumerate() {
            let (a, b) = (node_idx(&l.a), node_idx(&l.b));
            for (from, to, forward) in [(a, b, true), (b, a, false)] {
                let gen = if forward {
                    sc.traffic
                        .iter()
                        .find(|t| t.link == l.name)
                        .map(|t| InterferenceGenerator::new(&t.kind, CELL_BITS, sc.sim.seed, i as u64))
                } else {
                    None
                };
                let link = Link {
                    capacity_bps: l.capacity_bps,
                    prop_delay: l.delay,
                    endpoints: (NodeId(from as u16), NodeId(to as u16)),
                };
                channels.push(Channel {
                    tx: Transmitter::new(link, gen),
                    from,
                    to,
                    control: VecDeque::new(),
                    slots: Vec::new(),
                    rr: 0,
                    busy: false,
                    erica: (kind == MechanismKind::Rate).then(|| EricaPort::new(l.capacity_bps as f64, erica_params)),
                });
            }
        }
        let ends: Vec<(usize, usize)> = channels.iter().map(|c| (c.from, c.to)).collect();
        let chan_between = |x: usize, y: usize| ends.iter().position(|&e| e == (x, y)).expect("validated edge");
        let layers = m.layers;
        let mut conns = Vec::new();
        let mut slot_plan: Vec<(usize, usize, usize)> = Vec::new();
        for (ci, c) in sc.connections.iter().enumerate() {
            let src = node_idx(&c.source);
            let mut nodes: Vec<Option<NodeConn>> = (0..sc.nodes.len()).map(|_| None).collect();
            for id in std::iter::once(c.source.as_str()).chain(c.edges.iter().map(|(_, ch)| ch.as_str())) {
                let n = node_idx(id);
                let up = c.parent(id).map(|p| chan_between(n, node_idx(p)));
                let children: Vec<usize> = c.children(id).map(node_idx).collect();
                let down: Vec<(usize, usize)> = children
                    .iter()
                    .map(|&ch| {
                        let chan = chan_between(n, ch);
                        let slot = slot_plan.iter().filter(|(k, _, _)| *k == chan).count();
                        slot_plan.push((chan, ci, n));
                        (chan, slot)
                    })
                    .collect();
                let is_dest = children.is_empty();
                let intermediate = !is_dest && n != src;
                nodes[n] = Some(NodeConn {
                    up,
                    merge: (intermediate && kind == MechanismKind::Rate)
                        .then(|| MergeState::new(down.len(), layers as u8, m.rate.merge_tolerance_bps as f64)),
                    credit: (intermediate && kind == MechanismKind::Credit)
                        .then(|| NodeCreditState::new(down.len(), layers as u8)),
                    dest: is_dest.then(|| DestState {
                        monitor: ReceptionMonitor::new(m.reception_interval, m.partial_threshold, layers),
                        credit: DestinationCreditState::new(),
                        samples: Vec::new(),
                    }),
                    down,
                });
            }
            let (src_chan, src_slot) = nodes[src].as_ref().expect("source").down[0];
            let initial = LayerSet::single(m.initial_rate_bps as f64, layers);
            conns.push(ConnState {
                name: c.name.clone(),
                emitter: VideoEmitter::new(initial, CELL_BITS, SimTime::ZERO),
                epoch: 0,
                src_chan,
                src_slot,
                pacer: FwdPacer::new(m.rate.fwd_spacing),
                credit: (kind == MechanismKind::Credit).then(|| {
                    SourceCreditState::new(CreditRuleParams {
                        max_layers: layers,
                        batch: m.credit.batch,
                        rate_step: m.credit.rate_step_pps as f64 * CELL_BITS as f64,
                        packet_bits: CELL_BITS,
                        buffer: m.credit.source_buffer,
                        drain_window: m.credit.drain_window,
                    })
                }),
                nodes,
            });
        }
        for (chan, ci, n) in slot_plan {
            let from_source = n == node_idx(&sc.connections[ci].source);
            let cap = match kind {
                MechanismKind::Credit if from_source => m.credit.source_buffer.size,
                _ => m.node_buffer(),
            };
            channels[chan].slots.push(Slot {
                conn: ci,
                queue: PriorityQueue::new(cap),
                credit: (kind == MechanismKind::Credit).then(|| CreditLinkState::new(m.credit.node_buffer as u64)),
                steady_bits: 0,
            });
        }
        let bottleneck = sc.sim.bottleneck.as_ref().map(|b| {
            let l = sc.link(b).expect("validated bottleneck");
            chan_between(node_idx(&l.a), node_idx(&l.b))
        });
        Simulation {
            kind,
            duration: sc.sim.duration,
            warmup: sc.sim.warmup,
            bottleneck,
            q: EventQueue::new(),
            channels,
            node_names: sc.nodes.iter().map(|n| n.id.clone()).collect(),
            conns,
            max_layers: layers,
            fwd_peak: m.rate.peak_rate_bps as f64,
            erica_interval: m.rate.erica_interval,
            merge_timeout: m.rate.merge_timeout,
            credit_batch: m.credit.batch,
            credit_gap: m.credit.gap,
            condition2: m.credit.condition2,
            accumulation: m.credit.accumulation_interval,
            reception_interval: m.reception_interval,
            partial_threshold: m.partial_threshold,
            trace: Vec::new(),
            samples: Vec::new(),
            stats: RunStats::default(),
            violations: Vec::new(),
            alive: 0,
            in_flight: 0,
        }
    }

    fn violation(&mut self, msg: String) {
        if self.violations.len() < MAX_VIOLATION_MESSAGES {
            self.violations.push(msg);
        }
    }

    pub fn run(mut self) -> RunResult {
        for ci in 0..self.conns.len() {
            self.q.schedule(SimTime::ZERO, Ev::SourceEmit { conn: ci, epoch: 0 });
            let cumulative = self.conns[ci].emitter.layers().cumulative().to_vec();
            self.trace.push(LayerChange {
                t: SimTime::ZERO,
                conn: ci,
                cumulative,
            });
            match self.kind {
                MechanismKind::Rate => {
                    for n in 0..self.node_names.len() {
                        let merge = self.conns[ci].nodes[n].as_ref().and_then(|nc| nc.merge.as_ref());
                        if let Some(g) = merge.map(|m| m.generation()) {
                            self.q.schedule(
                                self.merge_timeout,
                                Ev::MergeTimeout {
                                    conn: ci,
                                    node: n,
                                    generation: g,
                                },
                            );
                        }
                    }
                }
                MechanismKind::Credit => self.q.schedule(self.accumulation, Ev::AccumulationTick { conn: ci }),
            }
        }
        if self.kind == MechanismKind::Rate {
            self.q.schedule(self.erica_interval, Ev::EricaTick);
        }
        self.q.schedule(self.reception_interval, Ev::Sample);

        while let Some((now, ev)) = self.q.pop() {
            if now > self.duration {
                break;
            }
            self.stats.events += 1;
            match ev {
                Ev::SourceEmit { conn, epoch } => self.on_source_emit(conn, epoch, now),
                Ev::TxDone { chan } => {
                    self.channels[chan].busy = false;
                    self.try_start(chan, now);
                }
                Ev::Arrive { chan, pkt } => self.on_arrive(chan, pkt, now),
                Ev::EricaTick => self.on_erica_tick(now),
                Ev::MergeTimeout { conn, node, generation } => self.on_merge_timeout(conn, node, generation, now),
                Ev::AccumulationTick { conn } => self.on_accumulation(conn, now),
                Ev::Sample => self.on_sample(now),
            }
        }
        self.finish()
    }

    fn node_conn(&mut self, conn: usize, node: usize) -> &mut NodeConn {
        self.conns[conn].nodes[node].as_mut().expect("node on the connection's tree")
    }

    fn on_source_emit(&mut self, ci: usize, epoch: u64, now: SimTime) {
        if self.conns[ci].epoch != epoch {
            return;
        }
        let (chan, slot) = (self.conns[ci].src_chan, self.conns[ci].src_slot);
        while let Some((layer, seq)) = self.conns[ci].emitter.pop_due(now) {
            self.stats.video_generated += 1;
            self.alive += 1;
            let pkt = Packet::video(ConnId(ci as u16), layer, seq);
            self.enqueue_video(chan, slot, pkt, true);
            if self.kind == MechanismKind::Rate && self.conns[ci].pacer.on_video_sent() {
                let fb = FwdFeedback {
                    max_layers: self.max_layers as u8,
                    current_rate: self.conns[ci].emitter.layers().combined(),
                    explicit_rate: self.fwd_peak,
                };
                self.stats.fwd_feedback += 1;
                self.send_fwd(chan, ci, fb, now);
            }
        }
        self.try_start(chan, now);
        let next = self.conns[ci].emitter.next_due().max(now);
        self.q.schedule(next, Ev::SourceEmit { conn: ci, epoch });
    }

    fn enqueue_video(&mut self, chan: usize, slot: usize, pkt: Packet, at_source: bool) {
        let q = &mut self.channels[chan].slots[slot].queue;
        let dropped = match q.enqueue(pkt) {
            EnqueueOutcome::Accepted => return,
            EnqueueOutcome::DroppedIncoming(p) | EnqueueOutcome::DroppedOther(p) => p,
        };
        let buffered_max = q.max_layer().unwrap_or(0);
        self.alive -= 1;
        if at_source {
            self.stats.source_drops += 1;
        } else {
            self.stats.video_drops += 1;
        }
        if buffered_max > dropped.layer {
            self.stats.priority_violations += 1;
            let msg = format!(
                "layer {} dropped on channel {chan} while layer {buffered_max} stays buffered",
                dropped.layer
            );
            self.violation(msg);
        }
    }

    /// Marks a forward feedback packet with the port's explicit rate and
    /// queues it on the control path.
    fn send_fwd(&mut self, chan: usize, ci: usize, fb: FwdFeedback, now: SimTime) {
        let marked = match &self.channels[chan].erica {
            Some(port) => port.mark(&fb),
            None => fb,
        };
        self.send_control(chan, Packet::control(ConnId(ci as u16), Payload::Fwd(marked)), now);
    }

    fn send_control(&mut self, chan: usize, pkt: Packet, now: SimTime) {
        self.channels[chan].control.push_back(pkt);
        self.try_start(chan, now);
    }

    fn try_start(&mut self, chan: usize, now: SimTime) {
        let ch = &mut self.channels[chan];
        if ch.busy {
            return;
        }
        let pkt = if let Some(p) = ch.control.pop_front() {
            p
        } else {
            let n = ch.slots.len();
            let pick = (0..n).map(|k| (ch.rr + k) % n).find(|&i| {
                let s = &ch.slots[i];
                !s.queue.is_empty() && s.credit.as_ref().is_none_or(|c| c.can_send())
            });
            let Some(i) = pick else {
                return;
            };
            ch.rr = (i + 1) % n;
            let s = &mut ch.slots[i];
            if let Some(c) = s.credit.as_mut() {
                c.consume();
                if !c.conserved() {
                    self.stats.credit_violations += 1;
                }
            }
            s.queue.dequeue().expect("non-empty queue")
        };
        let (start, done) = ch.tx.reserve(now, pkt.size_bits);
        let arrival = done + ch.tx.link().prop_delay;
        ch.busy = true;
        let is_video = pkt.is_video();
        let ci = pkt.conn.0 as usize;
        let from = ch.from;
        if is_video {
            if let Some(port) = ch.erica.as_mut() {
                port.record_video(pkt.conn, pkt.size_bits);
            }
            if start >= self.warmup && done <= self.duration {
                if let Some(s) = ch.slots.iter_mut().find(|s| s.conn == ci) {
                    s.steady_bits += pkt.size_bits as u64;
                }
            }
        }
        self.q.schedule(done, Ev::TxDone { chan });
        self.q.schedule(arrival, Ev::Arrive { chan, pkt });
        if is_video {
            self.stats.video_transmissions += 1;
            self.in_flight += 1;
            if self.kind == MechanismKind::Credit {
                self.after_credit_transmit(ci, from, chan, now);
            }
        }
    }

    /// Credit emission check at an intermediate node after it sent video.
    fn after_credit_transmit(&mut self, ci: usize, node: usize, chan: usize, now: SimTime) {
        let (batch, gap, cond2) = (self.credit_batch, self.credit_gap, self.condition2);
        let nc = self.conns[ci].nodes[node].as_ref().expect("tree node");
        if nc.credit.is_none() {
            return;
        }
        let port = nc.down.iter().position(|&(c, _)| c == chan).expect("output port");
        let occupancies: Vec<usize> = nc
            .down
            .iter()
            .map(|&(c, s)| self.channels[c].slots[s].queue.len())
            .collect();
        let up = nc.up.expect("intermediate node has a parent");
        let nc = self.node_conn(ci, node);
        let st = nc.credit.as_mut().expect("credit state");
        st.on_transmit(port);
        if let Some(fb) = st.maybe_emit(&occupancies, batch, gap, cond2) {
            self.stats.credit_feedback += 1;
            self.send_control(up, Packet::control(ConnId(ci as u16), Payload::Credit(Box::new(fb))), now);
        }
    }

    fn on_arrive(&mut self, chan: usize, pkt: Packet, now: SimTime) {
        let node = self.channels[chan].to;
        let ci = pkt.conn.0 as usize;
        match pkt.kind {
            PacketKind::Video => {
                self.in_flight -= 1;
                self.on_video(ci, node, pkt, now)
            }
            PacketKind::RateFwdFb => {
                let Payload::Fwd(fb) = pkt.payload else {
                    unreachable!("forward feedback payload")
                };
                let nc = self.node_conn(ci, node);
                if nc.dest.is_some() {
                    let up = nc.up.expect("destination has a parent");
                    let bwd = on_fwd_feedback_at_dest(&fb);
                    self.stats.bwd_feedback += 1;
                    self.send_control(up, Packet::control(pkt.conn, Payload::Bwd(Box::new(bwd))), now);
                } else {
                    let down: Vec<usize> = nc.down.iter().map(|&(c, _)| c).collect();
                    for c in down {
                        self.send_fwd(c, ci, fb, now);
                    }
                }
            }
            PacketKind::RateBwdFb => {
                let Payload::Bwd(fb) = pkt.payload else {
                    unreachable!("backward feedback payload")
                };
                let from = self.channels[chan].from;
                if node == self.channels[self.conns[ci].src_chan].from {
                    match apply_bwd_at_source(&fb, self.max_layers) {
                        Ok(ls) => self.set_layers(ci, ls, now),
                        Err(e) => self.violation(format!("unusable backward feedback at source: {e:?}")),
                    }
                    return;
                }
                let channels = &self.channels;
                let nc = self.conns[ci].nodes[node].as_mut().expect("tree node");
                let branch = nc
                    .down
                    .iter()
                    .position(|&(c, _)| channels[c].to == from)
                    .expect("feedback from a child");
                let up = nc.up.expect("junction has a parent");
                let merge = nc.merge.as_mut().expect("merge state");
                if let Some(out) = merge.on_arrival(branch, *fb) {
                    let generation = merge.generation();
                    self.forward_merged(ci, node, up, out, generation, now);
                }
            }
            PacketKind::CreditFb => {
                let Payload::Credit(fb) = pkt.payload else {
                    unreachable!("credit feedback payload")
                };
                self.on_credit_feedback(ci, chan ^ 1, *fb, now);
            }
            PacketKind::Interference => unreachable!("interference is never queued"),
        }
    }

    fn forward_merged(
        &mut self,
        ci: usize,
        node: usize,
        up: usize,
        out: crate::rate::BwdFeedback,
        generation: u64,
        now: SimTime,
    ) {
        self.stats.bwd_feedback += 1;
        self.send_control(up, Packet::control(ConnId(ci as u16), Payload::Bwd(Box::new(out))), now);
        self.q.schedule(
            now + self.merge_timeout,
            Ev::MergeTimeout {
                conn: ci,
                node,
                generation,
            },
        );
    }

    fn on_merge_timeout(&mut self, ci: usize, node: usize, generation: u64, now: SimTime) {
        let nc = self.node_conn(ci, node);
        let up = nc.up.expect("junction has a parent");
        let merge = nc.merge.as_mut().expect("merge state");
        if merge.generation() != generation {
            return;
        }
        let out = merge.on_timeout();
        let next = merge.generation();
        match out {
            Some(fb) => self.forward_merged(ci, node, up, fb, next, now),
            None => self.q.schedule(
                now + self.merge_timeout,
                Ev::MergeTimeout {
                    conn: ci,
                    node,
                    generation: next,
                },
            ),
        }
    }

    fn on_video(&mut self, ci: usize, node: usize, pkt: Packet, now: SimTime) {
        let batch = self.credit_batch;
        let kind = self.kind;
        let max_layers = self.max_layers;
        let threshold = self.partial_threshold;
        self.alive -= 1;
        let nc = self.conns[ci].nodes[node].as_mut().expect("tree node");
        if let Some(d) = nc.dest.as_mut() {
            let up = nc.up.expect("destination has a parent");
            self.stats.video_delivered += 1;
            d.monitor.record(now, pkt.layer, pkt.seq);
            if kind == MechanismKind::Credit {
                if let Some(total) = d.credit.on_video(batch) {
                    let w = d.monitor.window(now);
                    let (full, partial) = destination_entry(classify_reception(&w, threshold), max_layers);
                    let fb = CreditFeedback {
                        max_layers: max_layers as u8,
                        credits_total: total,
                        full,
                        partial,
                    };
                    self.stats.credit_feedback += 1;
                    self.send_control(up, Packet::control(pkt.conn, Payload::Credit(Box::new(fb))), now);
                }
            }
            return;
        }
        let down = nc.down.clone();
        for &(c, s) in &down {
            self.alive += 1;
            self.enqueue_video(c, s, pkt.clone(), false);
        }
        for &(c, _) in &down {
            self.try_start(c, now);
        }
    }

    /// Credit feedback arriving over the reverse of `chan`, the channel
    /// whose credit loop it replenishes.
    fn on_credit_feedback(&mut self, ci: usize, chan: usize, fb: CreditFeedback, now: SimTime) {
        let ch = &mut self.channels[chan];
        let node = ch.from;
        let child = ch.to;
        let slot = ch.slots.iter_mut().find(|s| s.conn == ci).expect("connection slot");
        slot.credit.as_mut().expect("credit loop").on_feedback(fb.credits_total);
        if chan == self.conns[ci].src_chan {
            let occupancy = self.channels[chan].slots[self.conns[ci].src_slot].queue.len();
            let conn = &mut self.conns[ci];
            let mut ls = conn.emitter.layers().clone();
            conn.credit
                .as_mut()
                .expect("credit source")
                .on_feedback(&mut ls, &fb, occupancy, now);
            self.set_layers(ci, ls, now);
        } else {
            let channels = &self.channels;
            let nc = self.conns[ci].nodes[node].as_mut().expect("tree node");
            let branch = nc
                .down
                .iter()
                .position(|&(c, _)| channels[c].to == child)
                .expect("feedback from a child");
            nc.credit
                .as_mut()
                .expect("credit node")
                .on_downstream_feedback(branch, fb);
        }
        self.try_start(chan, now);
    }

    fn on_accumulation(&mut self, ci: usize, now: SimTime) {
        let conn = &mut self.conns[ci];
        let mut ls = conn.emitter.layers().clone();
        conn.credit.as_mut().expect("credit source").on_accumulation_end(&mut ls);
        self.set_layers(ci, ls, now);
        self.q.schedule(now + self.accumulation, Ev::AccumulationTick { conn: ci });
    }

    fn set_layers(&mut self, ci: usize, ls: LayerSet, now: SimTime) {
        let conn = &mut self.conns[ci];
        if conn.emitter.layers() == &ls {
            return;
        }
        self.trace.push(LayerChange {
            t: now,
            conn: ci,
            cumulative: ls.cumulative().to_vec(),
        });
        conn.emitter.set_layers(ls, now);
        conn.epoch += 1;
        let next = conn.emitter.next_due().max(now);
        self.q.schedule(
            next,
            Ev::SourceEmit {
                conn: ci,
                epoch: conn.epoch,
            },
        );
    }

    fn on_erica_tick(&mut self, now: SimTime) {
        let from = now.saturating_sub(self.erica_interval);
        for ch in &mut self.channels {
            if ch.slots.is_empty() {
                continue;
            }
            ch.tx.absorb_until(now);
            let guaranteed = ch.tx.interference_bits(from, now);
            if let Some(port) = ch.erica.as_mut() {
                port.end_interval(guaranteed);
            }
        }
        self.q.schedule(now + self.erica_interval, Ev::EricaTick);
    }

    fn on_sample(&mut self, now: SimTime) {
        let (bits, thr) = (CELL_BITS, self.partial_threshold);
        for conn in &mut self.conns {
            let occupancy = self.channels[conn.src_chan].slots[conn.src_slot].queue.len();
            self.samples.push(MetricSample {
                t: now,
                series: format!("source_occupancy/{}", conn.name),
                value: occupancy as f64,
            });
            for nc in conn.nodes.iter_mut().flatten() {
                if let Some(d) = nc.dest.as_mut() {
                    let w = d.monitor.window(now);
                    d.samples.push((now, goodput(&w, bits, thr), throughput(&w, bits)));
                }
            }
        }
        self.q.schedule(now + self.reception_interval, Ev::Sample);
    }

    fn finish(mut self) -> RunResult {
        let queued: i64 = self
            .channels
            .iter()
            .flat_map(|c| c.slots.iter())
            .map(|s| s.queue.len() as i64)
            .sum();
        if self.alive != queued + self.in_flight {
            let msg = format!(
                "video conservation: {} alive, {} queued, {} in flight",
                self.alive, queued, self.in_flight
            );
            self.violation(msg);
        }
        if self.stats.credit_violations > 0 {
            let msg = format!("{} transmissions exceeded the credit window", self.stats.credit_violations);
            self.violation(msg);
        }
        let (warmup, duration) = (self.warmup, self.duration);
        for ch in &mut self.channels {
            ch.tx.absorb_until(duration);
        }
        let window = duration - warmup;
        let bins = (window.as_nanos() / AVAILABILITY_BIN.as_nanos()).max(1) as usize;
        let bin = if window < AVAILABILITY_BIN { window } else { AVAILABILITY_BIN };
        let mut destinations = Vec::new();
        let mut reports = Vec::new();
        for conn in &self.conns {
            for (n, nc) in conn.nodes.iter().enumerate() {
                let Some(d) = nc.as_ref().and_then(|nc| nc.dest.as_ref()) else {
                    continue;
                };
                // walk up the tree collecting the forward channels
                let mut path = Vec::new();
                let mut cur = n;
                while let Some(up) = conn.nodes[cur].as_ref().and_then(|x| x.up) {
                    let down = up ^ 1;
                    path.push(down);
                    cur = self.channels[down].from;
                }
                let links: Vec<(u64, Vec<u64>)> = path
                    .iter()
                    .map(|&c| {
                        let tx = &self.channels[c].tx;
                        let per_bin = (0..bins as u64)
                            .map(|b| {
                                let from = warmup + SimTime(b * bin.as_nanos());
                                tx.interference_bits(from, from + bin)
                            })
                            .collect();
                        (tx.link().capacity_bps, per_bin)
                    })
                    .collect();
                let available = path_available(&links, bin, bins);
                let steady: Vec<f64> = d
                    .samples
                    .iter()
                    .filter(|s| s.0 > warmup && s.0 <= duration)
                    .map(|s| s.1)
                    .collect();
                let mean_goodput = crate::metrics::mean(&steady).unwrap_or(0.0);
                let mean_available = crate::metrics::mean(&available).unwrap_or(0.0);
                reports.push(DestinationGoodput {
                    destination: self.node_names[n].clone(),
                    connection: conn.name.clone(),
                    mean_goodput_bps: mean_goodput,
                    mean_available_bps: mean_available,
                    ratio: goodput_ratio(&steady, &available),
                });
                destinations.push(DestinationTrace {
                    destination: self.node_names[n].clone(),
                    connection: conn.name.clone(),
                    samples: d.samples.clone(),
                    available,
                });
            }
        }
        let secs = window.as_secs_f64();
        let bottleneck_rates = self.bottleneck.map(|b| {
            (0..self.conns.len())
                .map(|ci| {
                    self.channels[b]
                        .slots
                        .iter()
                        .find(|s| s.conn == ci)
                        .map_or(0.0, |s| s.steady_bits as f64 / secs)
                })
                .collect()
        });
        RunResult {
            kind: self.kind,
            duration,
            warmup,
            connections: self.conns.iter().map(|c| c.name.clone()).collect(),
            layer_trace: self.trace,
            destinations,
            goodput: GoodputRatioReport { destinations: reports },
            bottleneck_rates,
            samples: self.samples,
            stats: self.stats,
            violations: self.violations,
        }
    }
}

/// Runs a validated scenario to completion.
pub fn simulate(sc: &Scenario) -> RunResult {
    Simulation::new(sc).run()
}
