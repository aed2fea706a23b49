//! Batched leaf evaluation across many concurrent searches.
//!
//! Workers advance searches until one needs a network evaluation, park it
//! on the queue and move on to another position. A dispatcher evaluates the
//! first `batch` queued requests in one forward pass and hands the results
//! back to the exact searches that asked for them.

use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};

use crate::error::{ExitError, Result};
use crate::imitation::{Expert, PositionTask, TrainingSample};
use crate::neural::{NetOutput, Network};
use crate::parallel::resolve_workers;
use crate::search::{EvalRequest, Search, Step};

/// A search parked until its pending request is evaluated.
#[derive(Debug)]
pub struct SuspendedSearch {
    pub position: usize,
    pub search: Search,
    pub request: EvalRequest,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Labelled {
    /// One entry per task, in task order; `None` for skipped positions.
    pub samples: Vec<Option<TrainingSample>>,
    pub evaluations: u64,
    pub batches: u64,
    pub dispatched: u64,
    pub largest_batch: usize,
}

impl Labelled {
    pub fn mean_batch(&self) -> f64 {
        if self.batches == 0 {
            0.0
        } else {
            self.dispatched as f64 / self.batches as f64
        }
    }
}

struct Shared {
    next_task: usize,
    ready: VecDeque<(usize, Search, NetOutput)>,
    queue: VecDeque<SuspendedSearch>,
    active: usize,
    finished: usize,
    results: Vec<Option<TrainingSample>>,
    evaluations: u64,
    error: Option<ExitError>,
}

impl Shared {
    fn all_done(&self, total: usize) -> bool {
        self.finished == total || self.error.is_some()
    }
}

/// Labels every task with the expert using `workers` search threads and
/// evaluation batches of at most `batch`. Each search is seeded from its
/// task, so the samples do not depend on `workers` or `batch`.
pub fn generate_labels_parallel(tasks: &[PositionTask], expert: &Expert, workers: usize, batch: usize) -> Result<Labelled> {
    let network = expert.network.filter(|_| expert.search.mode.needs_network());
    if expert.search.mode.needs_network() && network.is_none() {
        return Err(ExitError::Config(format!("{:?} expert needs a network", expert.search.mode)));
    }
    if network.is_some() && batch == 0 {
        return Err(ExitError::Config("evaluation batch size must be at least 1".into()));
    }
    let total = tasks.len();
    let shared = Mutex::new(Shared {
        next_task: 0,
        ready: VecDeque::new(),
        queue: VecDeque::new(),
        active: 0,
        finished: 0,
        results: vec![None; total],
        evaluations: 0,
        error: None,
    });
    let changed = Condvar::new();
    let mut stats = Labelled::default();
    let workers = resolve_workers(workers).min(total.max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| worker(tasks, expert, network.is_some(), &shared, &changed));
        }
        if let Some(net) = network {
            dispatcher(net, batch, total, &shared, &changed, &mut stats);
        }
    });

    let shared = shared.into_inner().expect("scheduler lock poisoned");
    if let Some(e) = shared.error {
        return Err(e);
    }
    stats.samples = shared.results;
    stats.evaluations = shared.evaluations;
    Ok(stats)
}

fn worker(tasks: &[PositionTask], expert: &Expert, uses_network: bool, shared: &Mutex<Shared>, changed: &Condvar) {
    let total = tasks.len();
    loop {
        let mut guard = shared.lock().expect("scheduler lock poisoned");
        let job = loop {
            if guard.all_done(total) {
                return;
            }
            if let Some((position, search, output)) = guard.ready.pop_front() {
                break Job::Resume(position, search, output);
            }
            if guard.next_task < total {
                guard.next_task += 1;
                break Job::Start(guard.next_task - 1);
            }
            guard = changed.wait(guard).expect("scheduler lock poisoned");
        };
        guard.active += 1;
        drop(guard);

        let position = match &job {
            Job::Start(p) | Job::Resume(p, ..) => *p,
        };
        let outcome = run_until_blocked(tasks, job, expert, uses_network);

        let mut guard = shared.lock().expect("scheduler lock poisoned");
        guard.active -= 1;
        match outcome {
            Ok(Outcome::Suspended(s)) => guard.queue.push_back(s),
            Ok(Outcome::Finished(sample, evaluations)) => {
                guard.results[position] = sample;
                guard.evaluations += evaluations;
                guard.finished += 1;
            }
            Err(e) => {
                guard.error.get_or_insert(e);
            }
        }
        changed.notify_all();
    }
}

enum Job {
    Start(usize),
    Resume(usize, Search, NetOutput),
}

enum Outcome {
    Suspended(SuspendedSearch),
    Finished(Option<TrainingSample>, u64),
}

fn run_until_blocked(tasks: &[PositionTask], job: Job, expert: &Expert, uses_network: bool) -> Result<Outcome> {
    let (position, mut search) = match job {
        Job::Resume(position, mut search, output) => {
            search.resume(output)?;
            (position, search)
        }
        Job::Start(position) => {
            let task = &tasks[position];
            if task.state.is_terminal() {
                log::warn!("skipping terminal position {:?}", task.provenance);
                return Ok(Outcome::Finished(None, 0));
            }
            (position, Search::new(task.state.clone(), expert.search.clone().with_seed(task.seed), uses_network)?)
        }
    };
    let task = &tasks[position];
    match search.advance()? {
        Step::NeedsEval(request) => Ok(Outcome::Suspended(SuspendedSearch { position, search, request })),
        Step::Done => {
            let result = search.result();
            Ok(Outcome::Finished(
                Some(TrainingSample::from_search(&task.state, &result, task.provenance)),
                result.evaluations,
            ))
        }
    }
}

fn dispatcher(net: &Network, batch: usize, total: usize, shared: &Mutex<Shared>, changed: &Condvar, stats: &mut Labelled) {
    loop {
        let mut guard = shared.lock().expect("scheduler lock poisoned");
        let jobs: Vec<SuspendedSearch> = loop {
            if guard.all_done(total) {
                return;
            }
            let stalled = guard.active == 0 && guard.ready.is_empty() && guard.next_task >= total;
            if guard.queue.len() >= batch || (stalled && !guard.queue.is_empty()) {
                let take = guard.queue.len().min(batch);
                break guard.queue.drain(..take).collect();
            }
            guard = changed.wait(guard).expect("scheduler lock poisoned");
        };
        drop(guard);

        let inputs: Vec<_> = jobs.iter().map(|j| (j.request.input.clone(), j.request.to_move, j.request.mask.clone())).collect();
        let tau = jobs[0].request.tau;
        let outputs = net.forward_batch(&inputs, tau);
        stats.batches += 1;
        stats.dispatched += jobs.len() as u64;
        stats.largest_batch = stats.largest_batch.max(jobs.len());

        let mut guard = shared.lock().expect("scheduler lock poisoned");
        match outputs {
            Ok(outputs) => {
                for (job, out) in jobs.into_iter().zip(outputs) {
                    guard.ready.push_back((job.position, job.search, out));
                }
            }
            Err(e) => {
                guard.error.get_or_insert(e);
            }
        }
        changed.notify_all();
    }
}
