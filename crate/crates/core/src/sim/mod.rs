//! Discrete-event simulation of the per-link age processes.
//!
//! Each link holds at most one packet: Poisson arrivals overwrite it, and
//! whenever the link gets the channel it transmits whatever it holds. With
//! an empty buffer the link resends its previous packet (a fake update), so
//! a delivery always sets the monitor's age to the age of the newest packet
//! the source has seen.
//!
//! Three channel access schemes are supported, see [`Mac`]. Runs are
//! deterministic given the scenario seed; every link draws its arrivals,
//! back-offs and service times from its own random stream.

mod queue;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::csma::{CsmaError, NetworkParams};
use queue::EventQueue;

/// Fraction of the horizon discarded as warm-up by [`SimScenario::new`].
pub const DEFAULT_WARMUP_FRACTION: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("horizon {horizon} must exceed warmup {warmup} >= 0")]
    BadHorizon { horizon: f64, warmup: f64 },
    #[error("slot time must be positive and finite, got {0}")]
    BadSlotTime(f64),
    #[error("expected {expected} contention windows, got {got}")]
    WindowCount { expected: usize, got: usize },
    #[error("link {link}: contention window {window} is below 2")]
    WindowTooSmall { link: usize, window: u32 },
    #[error("round robin order must be a permutation of 0..{0}")]
    BadOrder(usize),
    #[error("collision estimation requires slotted mode")]
    NotSlotted,
    #[error(transparent)]
    Network(#[from] CsmaError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mac {
    /// Continuous exponential back-off at rate `R_k`, instantaneous
    /// sensing, no collisions. Timers are redrawn at every idle onset.
    Idealized,
    /// Back-off counters drawn uniformly from `0..W_k` mini-slots that
    /// count down only while the channel is idle. Links whose counters
    /// expire in the same slot collide; a collision keeps the channel busy
    /// for the longest of the colliding frames and delivers nothing.
    Slotted { t_slot: f64, windows: Vec<u32> },
    /// Fixed cyclic order with no contention and no idle gaps.
    RoundRobin { order: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub params: NetworkParams,
    pub mac: Mac,
    pub horizon: f64,
    pub warmup: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    /// Time-average monitor age of each link over `[warmup, horizon]`.
    pub per_link_age: Vec<f64>,
    pub total_age: f64,
    pub busy_fraction: f64,
    pub collisions: u64,
    /// Successful transmissions started inside the measurement window.
    pub successes: u64,
    /// Deliveries per link inside the measurement window.
    pub deliveries: Vec<u64>,
    /// False when some link saw no delivery inside the window.
    pub converged: bool,
}

impl SimScenario {
    /// Scenario with the default warm-up of 5% of the horizon.
    pub fn new(params: NetworkParams, mac: Mac, horizon: f64, seed: u64) -> Self {
        Self {
            params,
            mac,
            horizon,
            warmup: DEFAULT_WARMUP_FRACTION * horizon,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.params.validate()?;
        if !(self.warmup >= 0.0 && self.horizon > self.warmup && self.horizon.is_finite()) {
            return Err(SimError::BadHorizon {
                horizon: self.horizon,
                warmup: self.warmup,
            });
        }
        let n = self.params.num_links();
        match &self.mac {
            Mac::Idealized => {}
            Mac::Slotted { t_slot, windows } => {
                if !(*t_slot > 0.0 && t_slot.is_finite()) {
                    return Err(SimError::BadSlotTime(*t_slot));
                }
                if windows.len() != n {
                    return Err(SimError::WindowCount {
                        expected: n,
                        got: windows.len(),
                    });
                }
                if let Some(link) = windows.iter().position(|&w| w < 2) {
                    return Err(SimError::WindowTooSmall {
                        link,
                        window: windows[link],
                    });
                }
            }
            Mac::RoundRobin { order } => {
                let mut seen = vec![false; n];
                for &k in order {
                    if k >= n || seen[k] {
                        return Err(SimError::BadOrder(n));
                    }
                    seen[k] = true;
                }
                if order.len() != n {
                    return Err(SimError::BadOrder(n));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
#[repr(u64)]
enum Purpose {
    Arrivals = 0,
    Backoff = 1,
    Service = 2,
}

/// Independent stream per (link, purpose), so adding a link never perturbs
/// the sample paths of the others.
fn stream(seed: u64, link: usize, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((link as u64) << 2) | purpose as u64);
    rng
}

/// Lazily sampled Poisson arrival times of one source.
struct Arrivals {
    rng: ChaCha8Rng,
    gap: Exp<f64>,
    latest: f64,
    next: f64,
}

impl Arrivals {
    fn new(mut rng: ChaCha8Rng, rate: f64) -> Self {
        let gap = Exp::new(rate).expect("validated rate");
        let next = gap.sample(&mut rng);
        Self {
            rng,
            gap,
            latest: 0.0,
            next,
        }
    }

    /// Generation time of the newest packet at time `t`.
    fn newest_at(&mut self, t: f64) -> f64 {
        while self.next <= t {
            self.latest = self.next;
            self.next += self.gap.sample(&mut self.rng);
        }
        self.latest
    }
}

/// Integrates `t - stamp` over the measurement window.
struct AgeMeter {
    warmup: f64,
    horizon: f64,
    stamp: f64,
    since: f64,
    area: f64,
    deliveries: u64,
}

impl AgeMeter {
    fn new(warmup: f64, horizon: f64) -> Self {
        Self {
            warmup,
            horizon,
            stamp: 0.0,
            since: 0.0,
            area: 0.0,
            deliveries: 0,
        }
    }

    fn accumulate(&mut self, until: f64) {
        let a = self.since.max(self.warmup);
        let b = until.min(self.horizon);
        if b > a {
            let (x, y) = (a - self.stamp, b - self.stamp);
            self.area += 0.5 * (y - x) * (y + x);
        }
        self.since = until;
    }

    /// Delivery at `t` of a packet generated at `generated`. Returns the
    /// monitor age right after delivery.
    fn deliver(&mut self, t: f64, generated: f64) -> f64 {
        self.accumulate(t);
        self.stamp = self.stamp.max(generated);
        if t >= self.warmup && t <= self.horizon {
            self.deliveries += 1;
        }
        t - self.stamp
    }
}

struct LinkState {
    arrivals: Arrivals,
    backoff_rng: ChaCha8Rng,
    service_rng: ChaCha8Rng,
    service: Exp<f64>,
    meter: AgeMeter,
}

impl LinkState {
    fn deliver(&mut self, t: f64) {
        let generated = self.arrivals.newest_at(t);
        let age = self.meter.deliver(t, generated);
        debug_assert!((age - (t - generated)).abs() <= 1e-9 * t.max(1.0));
    }

    fn service_time(&mut self) -> f64 {
        self.service.sample(&mut self.service_rng)
    }
}

enum Event {
    /// Idealized back-off expiry, valid only for the matching idle epoch.
    Expiry { link: usize, epoch: u64 },
    /// Slotted back-off countdown reaches zero for the links in `epoch`.
    SlotExpiry { epoch: u64 },
    /// End of a transmission; `success` is the delivering link, if any.
    TxEnd { success: Option<usize> },
}

struct Run {
    links: Vec<LinkState>,
    warmup: f64,
    horizon: f64,
    busy: f64,
    collisions: u64,
    successes: u64,
}

impl Run {
    fn new(scenario: &SimScenario) -> Self {
        let links = scenario
            .params
            .links
            .iter()
            .enumerate()
            .map(|(k, l)| LinkState {
                arrivals: Arrivals::new(stream(scenario.seed, k, Purpose::Arrivals), l.arrival_rate),
                backoff_rng: stream(scenario.seed, k, Purpose::Backoff),
                service_rng: stream(scenario.seed, k, Purpose::Service),
                service: Exp::new(l.holding_rate).expect("validated rate"),
                meter: AgeMeter::new(scenario.warmup, scenario.horizon),
            })
            .collect();
        Self {
            links,
            warmup: scenario.warmup,
            horizon: scenario.horizon,
            busy: 0.0,
            collisions: 0,
            successes: 0,
        }
    }

    fn in_window(&self, t: f64) -> bool {
        t >= self.warmup && t < self.horizon
    }

    fn record_busy(&mut self, start: f64, end: f64) {
        let a = start.max(self.warmup);
        let b = end.min(self.horizon);
        if b > a {
            self.busy += b - a;
        }
    }

    fn finish(mut self) -> SimResult {
        let window = self.horizon - self.warmup;
        let mut per_link_age = Vec::with_capacity(self.links.len());
        let mut deliveries = Vec::with_capacity(self.links.len());
        for link in &mut self.links {
            link.meter.accumulate(self.horizon);
            per_link_age.push(link.meter.area / window);
            deliveries.push(link.meter.deliveries);
        }
        SimResult {
            total_age: per_link_age.iter().sum(),
            converged: deliveries.iter().all(|&d| d > 0),
            per_link_age,
            busy_fraction: (self.busy / window).clamp(0.0, 1.0),
            collisions: self.collisions,
            successes: self.successes,
            deliveries,
        }
    }
}

/// Runs one simulation to the scenario horizon.
pub fn simulate(scenario: &SimScenario) -> Result<SimResult, SimError> {
    scenario.validate()?;
    let run = Run::new(scenario);
    Ok(match &scenario.mac {
        Mac::Idealized => run_idealized(run, scenario),
        Mac::Slotted { t_slot, windows } => run_slotted(run, *t_slot, windows),
        Mac::RoundRobin { order } => run_round_robin(run, order),
    })
}

/// Fraction of channel captures in a slotted run that ended in collision.
pub fn estimate_collision_rate(scenario: &SimScenario) -> Result<f64, SimError> {
    if !matches!(scenario.mac, Mac::Slotted { .. }) {
        return Err(SimError::NotSlotted);
    }
    let result = simulate(scenario)?;
    let attempts = result.collisions + result.successes;
    Ok(if attempts == 0 {
        0.0
    } else {
        result.collisions as f64 / attempts as f64
    })
}

fn run_idealized(mut run: Run, scenario: &SimScenario) -> SimResult {
    let timers: Vec<Option<Exp<f64>>> = scenario
        .params
        .links
        .iter()
        .map(|l| (l.backoff_rate > 0.0).then(|| Exp::new(l.backoff_rate).expect("validated")))
        .collect();
    let mut queue = EventQueue::new();
    let mut epoch = 0u64;
    let mut busy_since = 0.0;
    let mut busy = false;

    let start_idle = |run: &mut Run, queue: &mut EventQueue<Event>, now: f64, epoch: u64| {
        for (link, timer) in timers.iter().enumerate() {
            if let Some(timer) = timer {
                let wait = timer.sample(&mut run.links[link].backoff_rng);
                queue.push(now + wait, Event::Expiry { link, epoch });
            }
        }
    };
    start_idle(&mut run, &mut queue, 0.0, epoch);

    while let Some((now, event)) = queue.pop() {
        if now > run.horizon {
            break;
        }
        match event {
            Event::Expiry { link, epoch: e } if e == epoch => {
                epoch += 1;
                busy = true;
                busy_since = now;
                if run.in_window(now) {
                    run.successes += 1;
                }
                let d = run.links[link].service_time();
                queue.push(now + d, Event::TxEnd { success: Some(link) });
            }
            Event::Expiry { .. } => {}
            Event::TxEnd { success } => {
                if let Some(link) = success {
                    run.links[link].deliver(now);
                }
                run.record_busy(busy_since, now);
                busy = false;
                start_idle(&mut run, &mut queue, now, epoch);
            }
            Event::SlotExpiry { .. } => unreachable!("slotted event in idealized run"),
        }
    }
    if busy {
        let horizon = run.horizon;
        run.record_busy(busy_since, horizon);
    }
    run.finish()
}

fn run_slotted(mut run: Run, t_slot: f64, windows: &[u32]) -> SimResult {
    let n = windows.len();
    let draw = |run: &mut Run, k: usize| -> u64 {
        u64::from(run.links[k].backoff_rng.random_range(0..windows[k]))
    };
    let mut counters: Vec<u64> = (0..n).map(|k| draw(&mut run, k)).collect();
    let mut queue = EventQueue::new();
    let mut epoch = 0u64;
    let mut busy_since = 0.0;
    let mut transmitters: Vec<usize> = Vec::with_capacity(n);

    let schedule = |queue: &mut EventQueue<Event>, counters: &[u64], now: f64, epoch: u64| {
        let wait = counters.iter().copied().min().expect("at least one link");
        queue.push(now + wait as f64 * t_slot, Event::SlotExpiry { epoch });
    };
    schedule(&mut queue, &counters, 0.0, epoch);
    let mut idle_since = 0.0;
    let mut busy = false;

    while let Some((now, event)) = queue.pop() {
        if now > run.horizon {
            break;
        }
        match event {
            Event::SlotExpiry { epoch: e } => {
                debug_assert_eq!(e, epoch);
                let elapsed = ((now - idle_since) / t_slot).round() as u64;
                transmitters.clear();
                for (k, c) in counters.iter_mut().enumerate() {
                    *c -= elapsed;
                    if *c == 0 {
                        transmitters.push(k);
                    }
                }
                busy = true;
                busy_since = now;
                let counted = run.in_window(now);
                let mut duration: f64 = 0.0;
                for &k in &transmitters {
                    duration = duration.max(run.links[k].service_time());
                }
                let success = if transmitters.len() == 1 {
                    if counted {
                        run.successes += 1;
                    }
                    Some(transmitters[0])
                } else {
                    if counted {
                        run.collisions += 1;
                    }
                    None
                };
                for &k in &transmitters {
                    counters[k] = draw(&mut run, k);
                }
                queue.push(now + duration, Event::TxEnd { success });
            }
            Event::TxEnd { success } => {
                if let Some(link) = success {
                    run.links[link].deliver(now);
                }
                run.record_busy(busy_since, now);
                busy = false;
                epoch += 1;
                idle_since = now;
                schedule(&mut queue, &counters, now, epoch);
            }
            Event::Expiry { .. } => unreachable!("idealized event in slotted run"),
        }
    }
    if busy {
        let horizon = run.horizon;
        run.record_busy(busy_since, horizon);
    }
    run.finish()
}

fn run_round_robin(mut run: Run, order: &[usize]) -> SimResult {
    let mut queue = EventQueue::new();
    let mut turn = 0usize;
    let first = order[0];
    let d = run.links[first].service_time();
    queue.push(d, Event::TxEnd { success: Some(first) });
    if run.in_window(0.0) {
        run.successes += 1;
    }
    while let Some((now, event)) = queue.pop() {
        if now > run.horizon {
            break;
        }
        if let Event::TxEnd { success: Some(link) } = event {
            run.links[link].deliver(now);
            turn = (turn + 1) % order.len();
            let next = order[turn];
            if run.in_window(now) {
                run.successes += 1;
            }
            let d = run.links[next].service_time();
            queue.push(now + d, Event::TxEnd { success: Some(next) });
        }
    }
    // no idle gaps
    let (warmup, horizon) = (run.warmup, run.horizon);
    run.record_busy(warmup, horizon);
    run.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csma;

    fn net(lambda: &[f64], h: &[f64], r: &[f64]) -> NetworkParams {
        NetworkParams::from_rates(lambda, h, r).unwrap()
    }

    #[test]
    fn meter_integrates_sawtooth() {
        let mut m = AgeMeter::new(0.0, 10.0);
        // age grows 0..2, drops to 0.5, grows to 3.5 at t = 5, then to 8.5
        assert_eq!(m.deliver(2.0, 1.5), 0.5);
        assert_eq!(m.deliver(5.0, 1.5), 3.5);
        m.accumulate(10.0);
        let expected = 2.0 + (0.5 + 3.5) / 2.0 * 3.0 + (3.5 + 8.5) / 2.0 * 5.0;
        assert!((m.area - expected).abs() < 1e-12);
        assert_eq!(m.deliveries, 2);
    }

    #[test]
    fn meter_respects_window() {
        let mut m = AgeMeter::new(1.0, 3.0);
        m.deliver(0.5, 0.0);
        m.accumulate(4.0);
        // age t - 0 over [1, 3]
        assert!((m.area - 4.0).abs() < 1e-12);
        assert_eq!(m.deliveries, 0);
    }

    #[test]
    fn fake_update_resets_to_packet_age() {
        let mut m = AgeMeter::new(0.0, 100.0);
        assert_eq!(m.deliver(4.0, 3.0), 1.0);
        // no new packet: the resent update carries the old stamp
        assert_eq!(m.deliver(9.0, 3.0), 6.0);
        assert_eq!(m.stamp, 3.0);
    }

    #[test]
    fn arrivals_track_newest_packet() {
        let mut a = Arrivals::new(ChaCha8Rng::seed_from_u64(3), 2.0);
        let mut last = 0.0;
        for t in [0.1, 0.5, 2.0, 2.0, 7.5] {
            let g = a.newest_at(t);
            assert!(g <= t && g >= last);
            last = g;
        }
    }

    #[test]
    fn scenario_validation() {
        let p = net(&[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0]);
        let mut s = SimScenario::new(p.clone(), Mac::Idealized, 100.0, 1);
        assert!(s.validate().is_ok());
        s.warmup = 100.0;
        assert!(matches!(s.validate(), Err(SimError::BadHorizon { .. })));
        let s = SimScenario::new(
            p.clone(),
            Mac::Slotted {
                t_slot: 0.009,
                windows: vec![16, 1],
            },
            100.0,
            1,
        );
        assert!(matches!(s.validate(), Err(SimError::WindowTooSmall { link: 1, .. })));
        let s = SimScenario::new(
            p.clone(),
            Mac::Slotted {
                t_slot: 0.009,
                windows: vec![16],
            },
            100.0,
            1,
        );
        assert!(matches!(s.validate(), Err(SimError::WindowCount { .. })));
        let s = SimScenario::new(p, Mac::RoundRobin { order: vec![0, 0] }, 100.0, 1);
        assert_eq!(s.validate(), Err(SimError::BadOrder(2)));
    }

    #[test]
    fn deterministic_given_seed() {
        let p = net(&[1.0, 2.0], &[1.0, 5.0], &[5.16, 14.8]);
        for mac in [
            Mac::Idealized,
            Mac::Slotted {
                t_slot: 0.009,
                windows: vec![44, 16],
            },
            Mac::RoundRobin { order: vec![1, 0] },
        ] {
            let s = SimScenario::new(p.clone(), mac, 2e4, 42);
            assert_eq!(simulate(&s).unwrap(), simulate(&s).unwrap());
            let other = SimScenario { seed: 43, ..s.clone() };
            assert_ne!(simulate(&s).unwrap(), simulate(&other).unwrap());
        }
    }

    #[test]
    fn idealized_single_link() {
        let s = SimScenario::new(net(&[1.0], &[1.0], &[1.0]), Mac::Idealized, 1e6, 7);
        let r = simulate(&s).unwrap();
        assert!((r.per_link_age[0] - 2.5).abs() / 2.5 < 0.02, "{r:?}");
        assert_eq!(r.collisions, 0);
        assert!(r.converged);
        assert!((r.busy_fraction - 0.5).abs() < 0.01);
    }

    #[test]
    fn idealized_figure_two_optimum() {
        let p = net(&[1.0, 1.0], &[1.0, 5.0], &[5.16, 14.8]);
        let r = simulate(&SimScenario::new(p.clone(), Mac::Idealized, 1e6, 11)).unwrap();
        let expected = csma::total_age(&p).unwrap().total;
        assert!((r.total_age - expected).abs() / expected < 0.02, "{r:?}");
        assert!((r.total_age - 4.44).abs() / 4.44 < 0.02);
        assert!((r.total_age - r.per_link_age.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn starved_link_is_unconverged() {
        let p = net(&[1.0, 1.0], &[1.0, 1.0], &[1.0, 0.0]);
        let r = simulate(&SimScenario::new(p, Mac::Idealized, 1e3, 1)).unwrap();
        assert!(!r.converged);
        assert_eq!(r.deliveries[1], 0);
    }

    #[test]
    fn collision_rate_bounds() {
        let p = net(&[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0]);
        let wide = SimScenario::new(
            p.clone(),
            Mac::Slotted {
                t_slot: 0.009,
                windows: vec![1024, 1024],
            },
            2e4,
            3,
        );
        assert!(estimate_collision_rate(&wide).unwrap() < 0.01);
        let narrow = SimScenario::new(
            p.clone(),
            Mac::Slotted {
                t_slot: 0.009,
                windows: vec![2, 2],
            },
            2e4,
            3,
        );
        let rate = estimate_collision_rate(&narrow).unwrap();
        assert!((0.3..=0.7).contains(&rate), "{rate}");
        let ideal = SimScenario::new(p, Mac::Idealized, 1e3, 3);
        assert_eq!(
            estimate_collision_rate(&ideal).unwrap_err().to_string(),
            "collision estimation requires slotted mode"
        );
    }

    #[test]
    fn round_robin_keeps_channel_busy() {
        let p = net(&[1.0, 1.0], &[1.0, 1.0], &[0.0, 0.0]);
        let r = simulate(&SimScenario::new(p, Mac::RoundRobin { order: vec![0, 1] }, 1e5, 5))
            .unwrap();
        assert_eq!(r.busy_fraction, 1.0);
        assert_eq!(r.collisions, 0);
        assert!((r.deliveries[0] as i64 - r.deliveries[1] as i64).abs() <= 1);
    }
}
