//! Discrete-event simulation of the closed task-routing network.
//!
//! The simulator replays the physical protocol directly: a fixed population
//! of tasks cycles through per-client downlink, compute and uplink stages
//! (plus the optional central stage), an update is applied whenever a task
//! finishes its route, and a fresh task is dispatched immediately according
//! to the routing vector. Downlink and uplink are infinite-server stages,
//! compute and the central stage are single-server FIFO queues.
//!
//! Everything is deterministic given the seed: events are ordered by
//! `(time, stage priority, station, insertion order)`, and every station
//! draws from its own counter-based stream, so the draw a station sees does
//! not depend on how events at other stations interleave.
//!
//! With exponential service the long-run update rate and per-client delays
//! converge to the closed-form predictions; the other service laws exist to
//! probe how far those predictions carry beyond the exponential assumption.

use crate::model::{ModelKind, SystemConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};
use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("warmup of {warmup} updates must be smaller than the {horizon}-update horizon")]
    BadWarmup { warmup: u64, horizon: u64 },
    #[error("time horizon {0} must be positive and finite")]
    BadTimeHorizon(f64),
    #[error("horizon ended after {applied} updates, not past the {warmup}-update warmup")]
    HorizonTooShort { applied: u64, warmup: u64 },
    #[error("simulating the central-server variant needs a cs block in the config")]
    MissingCs,
}

/// Service-time law used by every station. The rate parameter of each
/// station is always interpreted as the reciprocal mean, so switching the
/// law changes variability but never the mean service times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ServiceLaw {
    /// Exponential holding times, the regime the closed-form results cover.
    Exponential,
    /// Constant holding times `1/rate`, zero variability.
    Deterministic,
    /// Lognormal with underlying unit variance, heavier tailed than
    /// exponential at the same mean.
    Lognormal,
}

/// When to stop the run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon {
    /// Stop once this many updates have been applied in total, warmup
    /// included.
    Rounds(u64),
    /// Stop at this simulated time.
    Time(f64),
}

/// A reasonable warmup for a population of `m` tasks: long enough to forget
/// the deterministic start, never shorter than a thousand updates.
pub fn default_warmup(m: usize) -> u64 {
    (10 * m as u64).max(1000)
}

/// What happened at one instant of the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    Dispatch,
    DownlinkDone,
    ComputeDone,
    UplinkDone,
    CentralDone,
}

/// One row of the event log emitted by [`run_simulation_traced`]:
/// `updates_applied` is the update counter right after the event, and
/// `task` identifies the in-flight task (slots are reused, so a task is the
/// span from one dispatch of an id to its application).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub time: f64,
    pub kind: TraceKind,
    pub client: usize,
    pub task: u32,
    pub updates_applied: u64,
}

/// Summary statistics of one run, measured over the window that starts at
/// the warmup-th applied update and ends at the last counted update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStats {
    pub seed: u64,
    pub warmup_discarded: u64,
    /// Updates applied inside the measurement window.
    pub rounds_completed: u64,
    /// Simulated clock at the end of the window.
    pub sim_time: f64,
    /// Length of the measurement window.
    pub window: f64,
    pub empirical_throughput: f64,
    /// Batch-means standard error of the throughput estimate.
    pub throughput_se: f64,
    /// Empirical counterpart of the closed-form per-client delay: the
    /// client's share of updates times its mean delay per update, which by
    /// a counting identity equals the average number of the client's tasks
    /// in flight at completion instants.
    pub empirical_delays: Vec<f64>,
    /// Standard error of each entry of `empirical_delays`, combining the
    /// delay noise and the share noise.
    pub delay_se: Vec<f64>,
    /// Mean delay per applied update from each client: how many other
    /// updates were applied while the client's task was in flight.
    pub mean_update_delay: Vec<f64>,
    pub per_client_updates: Vec<u64>,
    pub per_client_update_fraction: Vec<f64>,
    /// Energy drawn inside the measurement window.
    pub energy_total: f64,
    pub energy_per_round: f64,
}

const CLASS_CS: u8 = 0;
const CLASS_DOWN: u8 = 1;
const CLASS_COMP: u8 = 2;
const CLASS_UP: u8 = 3;

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    class: u8,
    station: u32,
    seq: u64,
    task: u32,
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.class.cmp(&other.class))
            .then(self.station.cmp(&other.station))
            .then(self.seq.cmp(&other.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

#[derive(Debug, Clone, Copy)]
struct Task {
    client: u32,
    dispatch_round: u64,
}

/// Running mean and variance over one client's delays.
#[derive(Debug, Clone, Default)]
struct Welford {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    fn mean(&self) -> f64 {
        if self.count == 0 {
            f64::NAN
        } else {
            self.mean
        }
    }

    fn se(&self) -> f64 {
        if self.count < 2 {
            return f64::INFINITY;
        }
        (self.m2 / (self.count - 1) as f64 / self.count as f64).sqrt()
    }
}

struct Sim<'a> {
    config: &'a SystemConfig,
    law: ServiceLaw,
    with_cs: bool,
    mu_cs: f64,
    p_cs: f64,
    heap: BinaryHeap<Reverse<Event>>,
    seq: u64,
    tasks: Vec<Task>,
    free: Vec<u32>,
    live: usize,
    down_count: Vec<u32>,
    up_count: Vec<u32>,
    comp_busy: Vec<bool>,
    comp_queue: Vec<VecDeque<u32>>,
    cs_busy: bool,
    cs_queue: VecDeque<u32>,
    routing_rng: ChaCha8Rng,
    down_rng: Vec<ChaCha8Rng>,
    comp_rng: Vec<ChaCha8Rng>,
    up_rng: Vec<ChaCha8Rng>,
    cs_rng: ChaCha8Rng,
    routing_cdf: Vec<f64>,
    clock: f64,
    energy_cum: f64,
    updates: u64,
    warmup: u64,
    window_start_time: f64,
    window_start_energy: f64,
    last_counted_time: f64,
    last_counted_energy: f64,
    update_times: Vec<f64>,
    delay_stats: Vec<Welford>,
    per_client_updates: Vec<u64>,
    trace: Option<Vec<TraceEvent>>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl<'a> Sim<'a> {
    fn new(
        config: &'a SystemConfig,
        model: ModelKind,
        law: ServiceLaw,
        warmup: u64,
        seed: u64,
        traced: bool,
    ) -> Result<Self, SimulateError> {
        let n = config.n();
        let (with_cs, mu_cs, p_cs) = match model {
            ModelKind::NoCs => (false, 1.0, 0.0),
            ModelKind::WithCs => {
                let cs = config.cs.as_ref().ok_or(SimulateError::MissingCs)?;
                (true, cs.mu_cs, cs.p_cs)
            }
        };
        let mut cdf = Vec::with_capacity(n);
        let mut acc = 0.0;
        for i in 0..n {
            acc += config.routing[i];
            cdf.push(acc);
        }
        Ok(Sim {
            config,
            law,
            with_cs,
            mu_cs,
            p_cs,
            heap: BinaryHeap::new(),
            seq: 0,
            tasks: Vec::new(),
            free: Vec::new(),
            live: 0,
            down_count: vec![0; n],
            up_count: vec![0; n],
            comp_busy: vec![false; n],
            comp_queue: vec![VecDeque::new(); n],
            cs_busy: false,
            cs_queue: VecDeque::new(),
            routing_rng: stream(seed, 0),
            down_rng: (0..n).map(|i| stream(seed, 2 + 3 * i as u64)).collect(),
            comp_rng: (0..n).map(|i| stream(seed, 3 + 3 * i as u64)).collect(),
            up_rng: (0..n).map(|i| stream(seed, 4 + 3 * i as u64)).collect(),
            cs_rng: stream(seed, 1),
            routing_cdf: cdf,
            clock: 0.0,
            energy_cum: 0.0,
            updates: 0,
            warmup,
            window_start_time: 0.0,
            window_start_energy: 0.0,
            last_counted_time: 0.0,
            last_counted_energy: 0.0,
            update_times: Vec::new(),
            delay_stats: vec![Welford::default(); n],
            per_client_updates: vec![0; n],
            trace: if traced { Some(Vec::new()) } else { None },
        })
    }

    fn draw_service(&mut self, station_class: u8, client: usize) -> f64 {
        let (rate, rng) = match station_class {
            CLASS_DOWN => (self.config.clients[client].mu_d, &mut self.down_rng[client]),
            CLASS_COMP => (self.config.clients[client].mu_c, &mut self.comp_rng[client]),
            CLASS_UP => (self.config.clients[client].mu_u, &mut self.up_rng[client]),
            CLASS_CS => (self.mu_cs, &mut self.cs_rng),
            _ => unreachable!(),
        };
        match self.law {
            ServiceLaw::Exponential => Exp::new(rate).expect("positive rate").sample(rng),
            ServiceLaw::Deterministic => 1.0 / rate,
            ServiceLaw::Lognormal => {
                let mu_n = -rate.ln() - 0.5;
                LogNormal::new(mu_n, 1.0).expect("finite parameter").sample(rng)
            }
        }
    }

    fn draw_client(&mut self) -> usize {
        let u: f64 = self.routing_rng.gen();
        self.routing_cdf
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.routing_cdf.len() - 1)
    }

    fn schedule(&mut self, time: f64, class: u8, station: usize, task: u32) {
        let seq = self.seq;
        self.seq += 1;
        self.heap.push(Reverse(Event {
            time,
            class,
            station: station as u32,
            seq,
            task,
        }));
    }

    fn power(&self) -> f64 {
        let mut p = if self.cs_busy { self.p_cs } else { 0.0 };
        for (i, c) in self.config.clients.iter().enumerate() {
            p += c.p_d * self.down_count[i] as f64 + c.p_u * self.up_count[i] as f64;
            if self.comp_busy[i] {
                p += c.p_c;
            }
        }
        p
    }

    fn advance(&mut self, to: f64) {
        debug_assert!(to >= self.clock);
        self.energy_cum += self.power() * (to - self.clock);
        self.clock = to;
    }

    fn record(&mut self, time: f64, kind: TraceKind, client: usize, task: u32) {
        if let Some(trace) = &mut self.trace {
            trace.push(TraceEvent {
                time,
                kind,
                client,
                task,
                updates_applied: self.updates,
            });
        }
    }

    fn alloc_task(&mut self, client: usize) -> u32 {
        let task = Task {
            client: client as u32,
            dispatch_round: self.updates,
        };
        self.live += 1;
        match self.free.pop() {
            Some(id) => {
                self.tasks[id as usize] = task;
                id
            }
            None => {
                self.tasks.push(task);
                (self.tasks.len() - 1) as u32
            }
        }
    }

    fn dispatch(&mut self, time: f64) {
        let client = self.draw_client();
        let id = self.alloc_task(client);
        self.down_count[client] += 1;
        let done = time + self.draw_service(CLASS_DOWN, client);
        self.schedule(done, CLASS_DOWN, client, id);
        self.record(time, TraceKind::Dispatch, client, id);
    }

    /// Apply the update carried by `task`: record its delay, advance the
    /// counter, and mark the measurement window boundaries.
    fn apply_update(&mut self, time: f64, task: u32) {
        let client = self.tasks[task as usize].client as usize;
        let delay = (self.updates - self.tasks[task as usize].dispatch_round) as f64;
        self.updates += 1;
        if self.updates == self.warmup {
            self.window_start_time = time;
            self.window_start_energy = self.energy_cum;
        }
        if self.updates > self.warmup {
            self.delay_stats[client].push(delay);
            self.per_client_updates[client] += 1;
            self.update_times.push(time);
            self.last_counted_time = time;
            self.last_counted_energy = self.energy_cum;
        }
        self.free.push(task);
        self.live -= 1;
    }

    fn start_compute(&mut self, time: f64, client: usize, task: u32) {
        self.comp_busy[client] = true;
        let done = time + self.draw_service(CLASS_COMP, client);
        self.schedule(done, CLASS_COMP, client, task);
    }

    fn start_central(&mut self, time: f64, task: u32) {
        self.cs_busy = true;
        let done = time + self.draw_service(CLASS_CS, 0);
        self.schedule(done, CLASS_CS, 0, task);
    }

    fn run(&mut self, horizon: Horizon) -> Result<(), SimulateError> {
        let target = match horizon {
            Horizon::Rounds(r) => {
                if r <= self.warmup {
                    return Err(SimulateError::BadWarmup {
                        warmup: self.warmup,
                        horizon: r,
                    });
                }
                Some(r)
            }
            Horizon::Time(t) => {
                if !(t.is_finite() && t > 0.0) {
                    return Err(SimulateError::BadTimeHorizon(t));
                }
                None
            }
        };
        for _ in 0..self.config.m {
            self.dispatch(0.0);
        }
        while let Some(Reverse(event)) = self.heap.pop() {
            if let Horizon::Time(t) = horizon {
                if event.time > t {
                    break;
                }
            }
            debug_assert_eq!(self.live, self.config.m, "population must stay constant");
            self.advance(event.time);
            let client = self.tasks[event.task as usize].client as usize;
            match event.class {
                CLASS_DOWN => {
                    self.down_count[client] -= 1;
                    self.record(event.time, TraceKind::DownlinkDone, client, event.task);
                    if self.comp_busy[client] {
                        self.comp_queue[client].push_back(event.task);
                    } else {
                        self.start_compute(event.time, client, event.task);
                    }
                }
                CLASS_COMP => {
                    self.record(event.time, TraceKind::ComputeDone, client, event.task);
                    self.up_count[client] += 1;
                    let done = event.time + self.draw_service(CLASS_UP, client);
                    self.schedule(done, CLASS_UP, client, event.task);
                    match self.comp_queue[client].pop_front() {
                        Some(next) => self.start_compute(event.time, client, next),
                        None => self.comp_busy[client] = false,
                    }
                }
                CLASS_UP => {
                    self.up_count[client] -= 1;
                    if self.with_cs {
                        self.record(event.time, TraceKind::UplinkDone, client, event.task);
                        if self.cs_busy {
                            self.cs_queue.push_back(event.task);
                        } else {
                            self.start_central(event.time, event.task);
                        }
                    } else {
                        self.apply_update(event.time, event.task);
                        self.record(event.time, TraceKind::UplinkDone, client, event.task);
                        if Some(self.updates) == target {
                            break;
                        }
                        self.dispatch(event.time);
                    }
                }
                CLASS_CS => {
                    self.apply_update(event.time, event.task);
                    self.record(event.time, TraceKind::CentralDone, client, event.task);
                    match self.cs_queue.pop_front() {
                        Some(next) => self.start_central(event.time, next),
                        None => self.cs_busy = false,
                    }
                    if Some(self.updates) == target {
                        break;
                    }
                    self.dispatch(event.time);
                }
                _ => unreachable!(),
            }
        }
        if self.updates <= self.warmup {
            return Err(SimulateError::HorizonTooShort {
                applied: self.updates,
                warmup: self.warmup,
            });
        }
        Ok(())
    }

    fn stats(&self, seed: u64) -> SimStats {
        let counted = self.updates - self.warmup;
        let counted_f = counted as f64;
        let window = self.last_counted_time - self.window_start_time;
        let energy_total = self.last_counted_energy - self.window_start_energy;
        let n = self.config.n();
        let mut empirical_delays = Vec::with_capacity(n);
        let mut delay_se = Vec::with_capacity(n);
        let mut mean_update_delay = Vec::with_capacity(n);
        for i in 0..n {
            let w = &self.delay_stats[i];
            let frac = self.per_client_updates[i] as f64 / counted_f;
            let mean = w.mean();
            mean_update_delay.push(mean);
            empirical_delays.push(frac * mean);
            delay_se.push(if w.count < 2 {
                f64::INFINITY
            } else {
                let share_var = mean * mean * frac * (1.0 - frac) / counted_f;
                ((frac * w.se()).powi(2) + share_var).sqrt()
            });
        }
        SimStats {
            seed,
            warmup_discarded: self.warmup,
            rounds_completed: counted,
            sim_time: self.last_counted_time,
            window,
            empirical_throughput: counted_f / window,
            throughput_se: batch_means_rate_se(&self.update_times, self.window_start_time),
            empirical_delays,
            delay_se,
            mean_update_delay,
            per_client_updates: self.per_client_updates.clone(),
            per_client_update_fraction: self
                .per_client_updates
                .iter()
                .map(|&c| c as f64 / counted_f)
                .collect(),
            energy_total,
            energy_per_round: energy_total / counted_f,
        }
    }
}

/// Standard error of the update rate via batch means over inter-update
/// intervals, mapped to the rate scale with the delta method. Consecutive
/// intervals are correlated, so batching is what keeps the estimate honest.
fn batch_means_rate_se(update_times: &[f64], window_start: f64) -> f64 {
    let n = update_times.len();
    if n < 16 {
        return f64::INFINITY;
    }
    let batches = (n / 8).clamp(2, 32);
    let per_batch = n / batches;
    let mut means = Vec::with_capacity(batches);
    let mut prev = window_start;
    for b in 0..batches {
        let end = update_times[(b + 1) * per_batch - 1];
        means.push((end - prev) / per_batch as f64);
        prev = end;
    }
    let grand: f64 = means.iter().sum::<f64>() / batches as f64;
    let var: f64 = means.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>()
        / (batches - 1) as f64;
    let se_interval = (var / batches as f64).sqrt();
    se_interval / (grand * grand)
}

/// Run one simulation and return its summary statistics.
pub fn run_simulation(
    config: &SystemConfig,
    model: ModelKind,
    law: ServiceLaw,
    horizon: Horizon,
    warmup: u64,
    seed: u64,
) -> Result<SimStats, SimulateError> {
    let mut sim = Sim::new(config, model, law, warmup, seed, false)?;
    sim.run(horizon)?;
    Ok(sim.stats(seed))
}

/// Like [`run_simulation`], also returning the full event log.
pub fn run_simulation_traced(
    config: &SystemConfig,
    model: ModelKind,
    law: ServiceLaw,
    horizon: Horizon,
    warmup: u64,
    seed: u64,
) -> Result<(SimStats, Vec<TraceEvent>), SimulateError> {
    let mut sim = Sim::new(config, model, law, warmup, seed, true)?;
    sim.run(horizon)?;
    let stats = sim.stats(seed);
    Ok((stats, sim.trace.take().expect("trace was requested")))
}

/// Recompute the energy drawn during the measurement window by replaying an
/// event log, independently of the online integration. Returns total energy
/// and energy per counted update.
pub fn measure_energy(
    config: &SystemConfig,
    model: ModelKind,
    trace: &[TraceEvent],
    warmup: u64,
) -> Result<(f64, f64), SimulateError> {
    let n = config.n();
    let (with_cs, p_cs) = match model {
        ModelKind::NoCs => (false, 0.0),
        ModelKind::WithCs => {
            let cs = config.cs.as_ref().ok_or(SimulateError::MissingCs)?;
            (true, cs.p_cs)
        }
    };
    let mut down = vec![0u32; n];
    let mut up = vec![0u32; n];
    let mut comp_pending = vec![0u32; n];
    let mut cs_pending = 0u32;
    let mut clock = 0.0;
    let mut energy = 0.0;
    let mut updates = 0u64;
    let mut window_start_energy = 0.0;
    let mut last_counted_energy = f64::NAN;
    let mut counted = 0u64;
    for event in trace {
        let mut p = if cs_pending > 0 { p_cs } else { 0.0 };
        for (i, c) in config.clients.iter().enumerate() {
            p += c.p_d * down[i] as f64 + c.p_u * up[i] as f64;
            if comp_pending[i] > 0 {
                p += c.p_c;
            }
        }
        energy += p * (event.time - clock);
        clock = event.time;
        let i = event.client;
        let mut applied = false;
        match event.kind {
            TraceKind::Dispatch => down[i] += 1,
            TraceKind::DownlinkDone => {
                down[i] -= 1;
                comp_pending[i] += 1;
            }
            TraceKind::ComputeDone => {
                comp_pending[i] -= 1;
                up[i] += 1;
            }
            TraceKind::UplinkDone => {
                up[i] -= 1;
                if with_cs {
                    cs_pending += 1;
                } else {
                    applied = true;
                }
            }
            TraceKind::CentralDone => {
                cs_pending -= 1;
                applied = true;
            }
        }
        if applied {
            updates += 1;
            if updates == warmup {
                window_start_energy = energy;
            }
            if updates > warmup {
                counted += 1;
                last_counted_energy = energy;
            }
        }
    }
    if counted == 0 {
        return Err(SimulateError::HorizonTooShort {
            applied: updates,
            warmup,
        });
    }
    let total = last_counted_energy - window_start_energy;
    Ok((total, total / counted as f64))
}
