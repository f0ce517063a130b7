// Copyright 2026 The revive-afl Authors
// SPDX-License-Identifier: Apache-2.0

//! Discrete-event timeline of an asynchronous federated run.
//!
//! The [`Simulator`] decides *when* things happen: which client gets a job,
//! when its update lands at the server, and how stale that update is. It
//! knows nothing about models. The caller reports each server model update
//! through [`Simulator::record_server_update`], which is the only thing that
//! advances the version counter staleness is measured against.

mod population;
mod queue;
mod trace;

pub use population::{
    ClientProfile, DelayParams, GroupDelays, GroupMix, Population, PopulationConfig, SpeedGroup,
};
pub use queue::EventQueue;
pub use trace::{read_trace, write_trace, TraceRow};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One dispatched unit of local training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InFlightJob {
    /// Dispatch order, unique within a run.
    pub id: u64,
    pub client: usize,
    /// Server version (count of model updates) the client starts from.
    pub version: u64,
    pub dispatch_time: f64,
    pub arrival_time: f64,
}

#[derive(Debug, Clone, Copy)]
enum Event {
    Arrival(InFlightJob),
    /// Re-check availability for queued dispatch requests.
    Wakeup,
}

/// `server_updates - job.version`; a job from the future is an internal error.
pub fn staleness_of(job: &InFlightJob, server_updates: u64) -> Result<u64> {
    server_updates.checked_sub(job.version).ok_or_else(|| {
        Error::Consistency(format!(
            "job {} started at version {} but the server is at {server_updates}",
            job.id, job.version
        ))
    })
}

pub struct Simulator {
    population: Population,
    queue: EventQueue<Event>,
    now: f64,
    version: u64,
    busy: Vec<bool>,
    in_flight: usize,
    pending: usize,
    wakeup_scheduled: bool,
    /// Jobs started while advancing the clock, not yet handed out.
    woken: Vec<InFlightJob>,
    next_job: u64,
    rng: ChaCha8Rng,
}

impl Simulator {
    pub fn new(population: Population, seed: u64) -> Self {
        let n = population.len();
        Self {
            population,
            queue: EventQueue::new(),
            now: 0.0,
            version: 0,
            busy: vec![false; n],
            in_flight: 0,
            pending: 0,
            wakeup_scheduled: false,
            woken: Vec::new(),
            next_job: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    /// Number of server model updates applied so far.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight
    }

    /// Dispatch requests waiting for an available client.
    pub fn pending(&self) -> usize {
        self.pending
    }

    pub fn population(&self) -> &Population {
        &self.population
    }

    /// Time of the next queued event, arrival or wakeup.
    pub fn peek_time(&self) -> Option<f64> {
        self.queue.peek_time()
    }

    pub fn record_server_update(&mut self) -> u64 {
        self.version += 1;
        self.version
    }

    pub fn staleness_of(&self, job: &InFlightJob) -> Result<u64> {
        staleness_of(job, self.version)
    }

    /// Clients that are available now and not training.
    pub fn idle_active_clients(&mut self) -> Vec<usize> {
        let now = self.now;
        (0..self.busy.len())
            .filter(|&c| !self.busy[c] && self.population.is_active(c, now))
            .collect()
    }

    /// Starts a job on `client` at the current version.
    pub fn dispatch(&mut self, client: usize) -> Result<InFlightJob> {
        let profile = *self.population.profile(client)?;
        if self.busy[client] {
            return Err(Error::ClientBusy(client));
        }
        if !self.population.is_active(client, self.now) {
            return Err(Error::Precondition(format!(
                "client {client} is not available"
            )));
        }
        let lag = profile.sample_lag(&mut self.rng);
        let job = InFlightJob {
            id: self.next_job,
            client,
            version: self.version,
            dispatch_time: self.now,
            arrival_time: self.now + lag,
        };
        self.next_job += 1;
        self.busy[client] = true;
        self.in_flight += 1;
        self.queue.push(job.arrival_time, Event::Arrival(job));
        Ok(job)
    }

    /// Asks for one job on a uniformly random available idle client. If none
    /// is free the request waits until one becomes available; either way all
    /// jobs started by this call are returned.
    pub fn request_dispatch(&mut self) -> Result<Vec<InFlightJob>> {
        self.pending += 1;
        self.service_pending()
    }

    fn service_pending(&mut self) -> Result<Vec<InFlightJob>> {
        let mut started = Vec::new();
        while self.pending > 0 {
            let idle = self.idle_active_clients();
            if idle.is_empty() {
                self.schedule_wakeup();
                break;
            }
            let client = idle[self.rng.random_range(0..idle.len())];
            started.push(self.dispatch(client)?);
            self.pending -= 1;
        }
        Ok(started)
    }

    fn schedule_wakeup(&mut self) {
        if self.wakeup_scheduled {
            return;
        }
        let now = self.now;
        let earliest = (0..self.busy.len())
            .filter(|&c| !self.busy[c])
            .map(|c| self.population.next_active_time(c, now))
            .fold(f64::INFINITY, f64::min);
        // With every client busy the next arrival frees one instead.
        if earliest.is_finite() {
            self.queue.push(earliest, Event::Wakeup);
            self.wakeup_scheduled = true;
        }
    }

    /// Advances the clock to the next client upload and returns it. Queued
    /// dispatch requests that become serviceable on the way are started at
    /// the current version.
    pub fn next_arrival(&mut self) -> Result<InFlightJob> {
        loop {
            let (time, event) = self.queue.pop().ok_or(Error::SimulationExhausted)?;
            if time < self.now {
                return Err(Error::Consistency(format!(
                    "event at {time} precedes clock {}",
                    self.now
                )));
            }
            self.now = time;
            match event {
                Event::Arrival(job) => {
                    self.busy[job.client] = false;
                    self.in_flight -= 1;
                    return Ok(job);
                }
                Event::Wakeup => {
                    self.wakeup_scheduled = false;
                    let started = self.service_pending()?;
                    self.woken.extend(started);
                }
            }
        }
    }

    /// Jobs that [`Self::next_arrival`] started on its own because a client
    /// became available for a waiting request. Drains the list.
    pub fn take_woken(&mut self) -> Vec<InFlightJob> {
        std::mem::take(&mut self.woken)
    }

    /// Serves requests left waiting when every client was busy. Call after
    /// handling an arrival.
    pub fn retry_pending(&mut self) -> Result<Vec<InFlightJob>> {
        self.service_pending()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixed_population(clients: usize) -> Population {
        let g = GroupDelays {
            compute_median: 2.0,
            upload_median: 0.5,
            sigma: 0.0,
            jitter: 0.0,
        };
        let cfg = PopulationConfig {
            clients,
            slow: g,
            medium: g,
            fast: g,
            ..Default::default()
        };
        Population::build(&cfg, 0).unwrap()
    }

    #[test]
    fn degenerate_delays_are_exact() {
        let mut sim = Simulator::new(fixed_population(3), 1);
        let job = sim.dispatch(1).unwrap();
        assert_eq!(job.arrival_time, 2f64.ln().exp() + 0.5f64.ln().exp());
        assert!(matches!(sim.dispatch(1), Err(Error::ClientBusy(1))));
        let got = sim.next_arrival().unwrap();
        assert_eq!(got, job);
        assert_eq!(sim.now(), job.arrival_time);
    }

    #[test]
    fn simultaneous_arrivals_pop_in_dispatch_order() {
        let mut sim = Simulator::new(fixed_population(4), 1);
        let a = sim.dispatch(2).unwrap();
        let b = sim.dispatch(0).unwrap();
        assert_eq!(a.arrival_time, b.arrival_time);
        assert_eq!(sim.next_arrival().unwrap().client, 2);
        assert_eq!(sim.next_arrival().unwrap().client, 0);
        assert!(matches!(
            sim.next_arrival(),
            Err(Error::SimulationExhausted)
        ));
    }

    #[test]
    fn staleness_counts_server_updates() {
        let job = InFlightJob {
            id: 0,
            client: 0,
            version: 5,
            dispatch_time: 0.0,
            arrival_time: 1.0,
        };
        assert_eq!(staleness_of(&job, 5).unwrap(), 0);
        assert_eq!(staleness_of(&job, 12).unwrap(), 7);
        assert!(matches!(staleness_of(&job, 4), Err(Error::Consistency(_))));
    }

    #[test]
    fn requests_wait_when_everyone_is_busy() {
        let mut sim = Simulator::new(fixed_population(2), 1);
        assert_eq!(sim.request_dispatch().unwrap().len(), 1);
        assert_eq!(sim.request_dispatch().unwrap().len(), 1);
        assert!(sim.request_dispatch().unwrap().is_empty());
        assert_eq!(sim.pending(), 1);
        sim.next_arrival().unwrap();
        assert_eq!(sim.retry_pending().unwrap().len(), 1);
        assert_eq!(sim.pending(), 0);
        assert_eq!(sim.in_flight(), 2);
    }
}
