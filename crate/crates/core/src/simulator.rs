//! Slot-level Monte Carlo simulation of the MAC protocol.
//!
//! Every slot consumes the same fixed set of uniform draws regardless of the
//! system state, so two runs with the same seed see identical arrivals,
//! ranks, coins and channel outcomes. That is what makes the coupled
//! dominance check meaningful.
//!
//! Besides real departures the simulator counts, for each secondary queue, the
//! slots in which that queue would have been served successfully had it been
//! backlogged (with every other queue as it actually was). In a dominant
//! system those counts estimate exactly the service rates of the analysis.

use crate::model::{Access, BoundKind, ModelError, Policy, QueueId, Result, Scheme, SystemConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Which system a run simulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// The real network under the given access mode.
    Original(Access),
    /// A dominant system: the scheme fixes the access mode and the queues
    /// that transmit dummy packets when empty.
    Dominant(Scheme),
}

impl Variant {
    pub fn access(self) -> Access {
        match self {
            Variant::Original(a) => a,
            Variant::Dominant(s) => s.access(),
        }
    }

    fn padded(self) -> [bool; 5] {
        let mut out = [false; 5];
        if let Variant::Dominant(s) = self {
            for q in s.dummy_queues() {
                out[q.index()] = true;
            }
        }
        out
    }

    /// Outer and noncooperative systems hand relayed packets straight to the
    /// primary receiver, so relay queues never hold anything.
    fn bypass_relays(self) -> bool {
        matches!(self, Variant::Dominant(s) if s.kind() != BoundKind::Inner)
    }

    fn policy(self, pol: &Policy) -> Policy {
        match self {
            Variant::Original(_) => Policy {
                rho: pol.effective_rho(),
                ..*pol
            },
            Variant::Dominant(s) => {
                let p = s.effective_policy(pol);
                Policy {
                    rho: p.effective_rho(),
                    ..p
                }
            }
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Variant::Original(Access::Ordered) => f.write_str("Original(Ordered)"),
            Variant::Original(Access::RandomAccess) => f.write_str("Original(RandomAccess)"),
            Variant::Dominant(s) => write!(f, "Dominant({s})"),
        }
    }
}

/// Point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    /// `(value - reference) / se`, zero when both agree exactly.
    pub fn z_score(&self, reference: f64) -> f64 {
        let d = self.value - reference;
        if d == 0.0 {
            0.0
        } else if self.se > 0.0 {
            d / self.se
        } else {
            f64::INFINITY.copysign(d)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueStats {
    pub arrivals: u64,
    pub departures: u64,
    pub final_len: u64,
    /// Length at the end of the first half of the run.
    pub mid_len: u64,
    pub mean_len: f64,
    /// Least-squares slope of the length over the second half, packets/slot.
    pub drift: f64,
    /// Real departures per slot.
    pub throughput: Estimate,
    /// Slots in which the queue would have been served had it been
    /// backlogged, per slot. Not tracked for the primary queue.
    pub service: Estimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Stable,
    Unstable,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Stable => "Stable",
            Verdict::Unstable => "Unstable",
            Verdict::Inconclusive => "Inconclusive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerdictThresholds {
    pub drift: f64,
    pub len_factor: f64,
}

impl Default for VerdictThresholds {
    fn default() -> Self {
        VerdictThresholds {
            drift: 1e-3,
            len_factor: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStats {
    pub variant: Variant,
    pub slots: u64,
    pub seed: u64,
    /// Indexed by [`QueueId::index`].
    pub queues: [QueueStats; 5],
    /// Slots in which the primary queue held a packet.
    pub busy_slots: u64,
    pub direct_departures: u64,
    pub relayed_departures: u64,
    /// Primary departures per busy slot; `None` if the primary never had a
    /// packet.
    pub empirical_mu_p: Option<Estimate>,
    /// Relay-queue arrivals per slot for s1 and s2.
    pub empirical_relay_arrivals: [Estimate; 2],
    pub verdict: Verdict,
}

impl SimStats {
    pub fn queue(&self, q: QueueId) -> &QueueStats {
        &self.queues[q.index()]
    }
}

/// Classifies a run by its second-half drift and final backlog.
pub fn stability_verdict(stats: &SimStats, th: &VerdictThresholds) -> Verdict {
    let len_cap = th.len_factor * (stats.slots as f64).sqrt();
    let stable = stats
        .queues
        .iter()
        .all(|q| q.drift < th.drift && (q.final_len as f64) < len_cap);
    if stable {
        return Verdict::Stable;
    }
    let growing = stats
        .queues
        .iter()
        .any(|q| q.drift > 2.0 * th.drift && q.final_len > q.mid_len);
    if growing {
        Verdict::Unstable
    } else {
        Verdict::Inconclusive
    }
}

/// One secondary transmission within a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transmission {
    pub user: u8,
    pub queue: QueueId,
    /// 1 or 2; always 1 under random access.
    pub rank: u8,
    pub dummy: bool,
    pub success: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrimaryAck {
    /// Primary receiver decoded the packet.
    Direct,
    /// Secondary user 1 or 2 accepted the packet for relaying.
    Relay(u8),
}

/// Debug record of a single slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotTrace {
    pub slot: u64,
    pub primary_active: bool,
    pub sensing_first: u8,
    pub decoding_first: u8,
    pub transmissions: Vec<Transmission>,
    pub primary_ack: Option<PrimaryAck>,
}

/// Writes trace records as JSON lines.
pub fn write_trace<W: Write>(mut out: W, trace: &[SlotTrace]) -> std::io::Result<()> {
    for t in trace {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// The uniforms consumed by one slot.
#[derive(Debug, Clone, Copy)]
struct Draws {
    arrival: [f64; 3],
    sensing: f64,
    decoding: f64,
    primary: f64,
    decode: [f64; 2],
    accept: [f64; 2],
    choice: [f64; 2],
    transmit: [f64; 2],
    channel: [f64; 2],
}

impl Draws {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        let mut u = || rng.gen::<f64>();
        Draws {
            arrival: [u(), u(), u()],
            sensing: u(),
            decoding: u(),
            primary: u(),
            decode: [u(), u()],
            accept: [u(), u()],
            choice: [u(), u()],
            transmit: [u(), u()],
            channel: [u(), u()],
        }
    }
}

/// Success probabilities indexed `[relay][rank - 1][user - 1]`.
type LinkTable = [[[f64; 2]; 2]; 2];

struct Params {
    lambda: [f64; 3],
    pol: Policy,
    access: Access,
    p_direct: f64,
    p_overhear: [f64; 2],
    links: LinkTable,
    padded: [bool; 5],
    bypass_relays: bool,
}

impl Params {
    fn new(cfg: &SystemConfig, pol: &Policy, lambda_1: f64, lambda_2: f64, variant: Variant) -> Result<Self> {
        let cfg = cfg.resolved()?;
        cfg.validate()?;
        for (field, v) in [("lambda_1", lambda_1), ("lambda_2", lambda_2)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ModelError::InvalidProbability { field: field.into(), value: v });
            }
        }
        let pol = variant.policy(pol);
        pol.validate()?;
        let mut links = [[[0.0; 2]; 2]; 2];
        for rank in 1..=2 {
            for user in 1..=2 {
                links[0][rank - 1][user - 1] = cfg.secondary_success(rank, user);
                links[1][rank - 1][user - 1] = cfg.relay_success(rank, user);
            }
        }
        Ok(Params {
            lambda: [cfg.lambda_p, lambda_1, lambda_2],
            pol,
            access: variant.access(),
            p_direct: cfg.p_succ_primary,
            p_overhear: [cfg.p_succ_p_to_s1, cfg.p_succ_p_to_s2],
            links,
            padded: variant.padded(),
            bypass_relays: variant.bypass_relays(),
        })
    }
}

fn own(user: usize) -> usize {
    user + 1
}

fn relay(user: usize) -> usize {
    user + 3
}

fn queue_id(k: usize) -> QueueId {
    QueueId::ALL[k]
}

/// Secondary transmissions in an idle slot given which queues have something
/// to send. Returns up to two `(queue index, rank, success)` entries.
fn secondary_access(par: &Params, d: &Draws, has: &[bool; 5], sensing_first: usize) -> [Option<(usize, u8, bool)>; 2] {
    let pick = |u: usize| -> Option<usize> {
        match (has[own(u)], has[relay(u)]) {
            (true, true) => Some(if d.choice[u] < par.pol.p(u + 1) { own(u) } else { relay(u) }),
            (true, false) => Some(own(u)),
            (false, true) => Some(relay(u)),
            (false, false) => None,
        }
    };
    let link = |q: usize, rank: u8, u: usize| par.links[usize::from(q >= 3)][rank as usize - 1][u];
    let mut out = [None, None];
    match par.access {
        Access::Ordered => {
            let first = sensing_first;
            let second = 1 - first;
            if let Some(q) = pick(first) {
                out[0] = Some((q, 1, d.channel[first] < link(q, 1, first)));
            } else if let Some(q) = pick(second) {
                out[0] = Some((q, 2, d.channel[second] < link(q, 2, second)));
            }
        }
        Access::RandomAccess => {
            let tx: Vec<(usize, usize)> = (0..2)
                .filter_map(|u| pick(u).filter(|_| d.transmit[u] < par.pol.alpha(u + 1)).map(|q| (u, q)))
                .collect();
            match tx.as_slice() {
                [(u, q)] => out[0] = Some((*q, 1, d.channel[*u] < link(*q, 1, *u))),
                [(_, q0), (_, q1)] => {
                    out[0] = Some((*q0, 1, false));
                    out[1] = Some((*q1, 1, false));
                }
                _ => {}
            }
        }
    }
    out
}

struct Sim {
    par: Params,
    len: [u64; 5],
}

struct SlotOutcome {
    busy: bool,
    arrivals: [bool; 5],
    departures: [bool; 5],
    opportunities: [bool; 5],
    primary_ack: Option<PrimaryAck>,
    sensing_first: usize,
    decoding_first: usize,
    transmissions: [Option<(usize, u8, bool, bool)>; 2],
}

impl Sim {
    fn step(&mut self, d: &Draws) -> SlotOutcome {
        let par = &self.par;
        let mut out = SlotOutcome {
            busy: false,
            arrivals: [false; 5],
            departures: [false; 5],
            opportunities: [false; 5],
            primary_ack: None,
            sensing_first: if d.sensing < par.pol.epsilon { 0 } else { 1 },
            decoding_first: if d.decoding < par.pol.rho { 0 } else { 1 },
            transmissions: [None, None],
        };
        for k in 0..3 {
            if d.arrival[k] < par.lambda[k] {
                self.len[k] += 1;
                out.arrivals[k] = true;
            }
        }

        if self.len[0] > 0 {
            out.busy = true;
            if d.primary < par.p_direct {
                out.primary_ack = Some(PrimaryAck::Direct);
            } else {
                let first = out.decoding_first;
                for u in [first, 1 - first] {
                    let decoded = d.decode[u] < par.p_overhear[u];
                    if decoded && d.accept[u] < par.pol.f(u + 1) {
                        out.primary_ack = Some(PrimaryAck::Relay(u as u8 + 1));
                        out.arrivals[relay(u)] = true;
                        if par.bypass_relays {
                            out.departures[relay(u)] = true;
                        } else {
                            self.len[relay(u)] += 1;
                        }
                        break;
                    }
                }
            }
            if out.primary_ack.is_some() {
                self.len[0] -= 1;
                out.departures[0] = true;
            }
            return out;
        }

        let mut has = [false; 5];
        for k in 1..5 {
            has[k] = self.len[k] > 0 || par.padded[k];
        }
        let actual = secondary_access(par, d, &has, out.sensing_first);
        for (slot, tx) in out.transmissions.iter_mut().zip(actual) {
            if let Some((q, rank, ok)) = tx {
                let dummy = self.len[q] == 0;
                *slot = Some((q, rank, ok, dummy));
                if ok && !dummy {
                    self.len[q] -= 1;
                    out.departures[q] = true;
                }
            }
        }
        for k in 1..5 {
            if has[k] {
                out.opportunities[k] = actual.iter().flatten().any(|&(q, _, ok)| q == k && ok);
            } else {
                let mut forced = has;
                forced[k] = true;
                out.opportunities[k] = secondary_access(par, d, &forced, out.sensing_first)
                    .iter()
                    .flatten()
                    .any(|&(q, _, ok)| q == k && ok);
            }
        }
        out
    }

    fn trace(&self, slot: u64, o: &SlotOutcome) -> SlotTrace {
        SlotTrace {
            slot,
            primary_active: o.busy,
            sensing_first: o.sensing_first as u8 + 1,
            decoding_first: o.decoding_first as u8 + 1,
            transmissions: o
                .transmissions
                .iter()
                .flatten()
                .map(|&(q, rank, success, dummy)| Transmission {
                    user: if q == 1 || q == 3 { 1 } else { 2 },
                    queue: queue_id(q),
                    rank,
                    dummy,
                    success,
                })
                .collect(),
            primary_ack: o.primary_ack,
        }
    }
}

const BATCHES: u64 = 50;

/// Per-batch counters for batch-means standard errors.
#[derive(Debug, Clone, Copy, Default)]
struct Batch {
    slots: u64,
    busy: u64,
    departures: [u64; 5],
    opportunities: [u64; 5],
    relay_arrivals: [u64; 2],
}

fn rate_estimate(batches: &[Batch], total: u64, slots: u64, count: impl Fn(&Batch) -> u64) -> Estimate {
    let value = total as f64 / slots as f64;
    let b = batches.len();
    if b < 2 {
        return Estimate { value, se: 0.0 };
    }
    let rates: Vec<f64> = batches.iter().map(|x| count(x) as f64 / x.slots as f64).collect();
    let mean = rates.iter().sum::<f64>() / b as f64;
    let var = rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (b - 1) as f64;
    Estimate {
        value,
        se: (var / b as f64).sqrt(),
    }
}

fn ratio_estimate(batches: &[Batch], num: impl Fn(&Batch) -> u64, den: impl Fn(&Batch) -> u64) -> Option<Estimate> {
    let n: u64 = batches.iter().map(&num).sum();
    let m: u64 = batches.iter().map(&den).sum();
    if m == 0 {
        return None;
    }
    let r = n as f64 / m as f64;
    let b = batches.len();
    if b < 2 {
        return Some(Estimate { value: r, se: 0.0 });
    }
    let mean_den = m as f64 / b as f64;
    let ss: f64 = batches
        .iter()
        .map(|x| (num(x) as f64 - r * den(x) as f64).powi(2))
        .sum();
    let se = (ss / ((b * (b - 1)) as f64)).sqrt() / mean_den;
    Some(Estimate { value: r, se })
}

/// Exact least-squares accumulator for the length-vs-time slope.
#[derive(Debug, Clone, Copy, Default)]
struct Slope {
    n: i128,
    st: i128,
    stt: i128,
    sl: i128,
    stl: i128,
}

impl Slope {
    fn push(&mut self, t: u64, len: u64) {
        let (t, l) = (i128::from(t), i128::from(len));
        self.n += 1;
        self.st += t;
        self.stt += t * t;
        self.sl += l;
        self.stl += t * l;
    }

    fn slope(&self) -> f64 {
        let den = self.n * self.stt - self.st * self.st;
        if den == 0 {
            return 0.0;
        }
        (self.n * self.stl - self.st * self.sl) as f64 / den as f64
    }
}

/// Simulates `slots` slots from empty queues.
pub fn simulate(
    cfg: &SystemConfig,
    pol: &Policy,
    lambda_1: f64,
    lambda_2: f64,
    variant: Variant,
    slots: u64,
    seed: u64,
) -> Result<SimStats> {
    simulate_traced(cfg, pol, lambda_1, lambda_2, variant, slots, seed, 0).map(|(s, _)| s)
}

/// [`simulate`] that also records the first `trace_slots` slots.
#[allow(clippy::too_many_arguments)]
pub fn simulate_traced(
    cfg: &SystemConfig,
    pol: &Policy,
    lambda_1: f64,
    lambda_2: f64,
    variant: Variant,
    slots: u64,
    seed: u64,
    trace_slots: u64,
) -> Result<(SimStats, Vec<SlotTrace>)> {
    if slots == 0 {
        return Err(ModelError::InvalidParameter {
            field: "slots".into(),
            reason: "must be at least 1".into(),
        });
    }
    let mut sim = Sim {
        par: Params::new(cfg, pol, lambda_1, lambda_2, variant)?,
        len: [0; 5],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_batches = BATCHES.min(slots);
    let mut batches = vec![Batch::default(); n_batches as usize];
    let mut trace = Vec::new();

    let half = slots / 2;
    let mut arrivals = [0u64; 5];
    let mut departures = [0u64; 5];
    let mut opportunities = [0u64; 5];
    let mut relay_arrivals = [0u64; 2];
    let mut busy = 0u64;
    let mut direct = 0u64;
    let mut len_sum = [0u128; 5];
    let mut mid_len = [0u64; 5];
    let mut slope = [Slope::default(); 5];

    for t in 0..slots {
        let d = Draws::sample(&mut rng);
        let o = sim.step(&d);
        if t < trace_slots {
            trace.push(sim.trace(t, &o));
        }
        let b = &mut batches[(t * n_batches / slots) as usize];
        b.slots += 1;
        if o.busy {
            busy += 1;
            b.busy += 1;
        }
        if o.primary_ack == Some(PrimaryAck::Direct) {
            direct += 1;
        }
        for k in 0..5 {
            arrivals[k] += u64::from(o.arrivals[k]);
            departures[k] += u64::from(o.departures[k]);
            opportunities[k] += u64::from(o.opportunities[k]);
            b.departures[k] += u64::from(o.departures[k]);
            b.opportunities[k] += u64::from(o.opportunities[k]);
            len_sum[k] += u128::from(sim.len[k]);
            if t >= half {
                slope[k].push(t, sim.len[k]);
            }
        }
        for u in 0..2 {
            let a = u64::from(o.arrivals[relay(u)]);
            relay_arrivals[u] += a;
            b.relay_arrivals[u] += a;
        }
        if t + 1 == half.max(1) {
            mid_len = sim.len;
        }
    }

    let queues: [QueueStats; 5] = std::array::from_fn(|k| QueueStats {
        arrivals: arrivals[k],
        departures: departures[k],
        final_len: sim.len[k],
        mid_len: mid_len[k],
        mean_len: len_sum[k] as f64 / slots as f64,
        drift: slope[k].slope(),
        throughput: rate_estimate(&batches, departures[k], slots, |b| b.departures[k]),
        service: rate_estimate(&batches, opportunities[k], slots, |b| b.opportunities[k]),
    });
    let mut stats = SimStats {
        variant,
        slots,
        seed,
        queues,
        busy_slots: busy,
        direct_departures: direct,
        relayed_departures: departures[0] - direct,
        empirical_mu_p: ratio_estimate(&batches, |b| b.departures[0], |b| b.busy),
        empirical_relay_arrivals: std::array::from_fn(|u| {
            rate_estimate(&batches, relay_arrivals[u], slots, |b| b.relay_arrivals[u])
        }),
        verdict: Verdict::Inconclusive,
    };
    stats.verdict = stability_verdict(&stats, &VerdictThresholds::default());
    Ok((stats, trace))
}

/// First slot at which some real-packet queue of `upper` is shorter than the
/// same queue of `lower`, when both run on identical randomness.
#[allow(clippy::too_many_arguments)]
pub fn first_dominance_violation(
    cfg: &SystemConfig,
    pol: &Policy,
    lambda_1: f64,
    lambda_2: f64,
    upper: Variant,
    lower: Variant,
    slots: u64,
    seed: u64,
) -> Result<Option<u64>> {
    let mut hi = Sim {
        par: Params::new(cfg, pol, lambda_1, lambda_2, upper)?,
        len: [0; 5],
    };
    let mut lo = Sim {
        par: Params::new(cfg, pol, lambda_1, lambda_2, lower)?,
        len: [0; 5],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in 0..slots {
        let d = Draws::sample(&mut rng);
        hi.step(&d);
        lo.step(&d);
        if (0..5).any(|k| hi.len[k] < lo.len[k]) {
            return Ok(Some(t));
        }
    }
    Ok(None)
}

/// Runs the original system and the dominant system of `scheme` on the same
/// randomness and reports whether the dominant queues never fall below the
/// original ones.
pub fn dominance_check(
    cfg: &SystemConfig,
    pol: &Policy,
    lambdas: (f64, f64),
    scheme: Scheme,
    slots: u64,
    seed: u64,
) -> Result<bool> {
    // Both runs use the scheme's policy so the only difference is the dummies.
    let pol = scheme.effective_policy(pol);
    let v = first_dominance_violation(
        cfg,
        &pol,
        lambdas.0,
        lambdas.1,
        Variant::Dominant(scheme),
        Variant::Original(scheme.access()),
        slots,
        seed,
    )?;
    Ok(v.is_none())
}
