//! Wall-clock instrumentation and a thread-safe scheduler handle.

use std::sync::{Mutex, MutexGuard};
use std::time::{Duration, Instant};

use edgepart_core::scheduler::{Placement, Scheduler, SchedulerMetrics, TaskRecord, TaskRequest};

use crate::error::Result;

/// [`Scheduler::select`] timed with the monotonic clock; the elapsed time is
/// also added to the scheduler's overhead counters.
pub fn timed_select(
    scheduler: &mut Scheduler,
    task: &TaskRequest,
    preferred: Option<&str>,
) -> Result<(Option<Placement>, Duration)> {
    let start = Instant::now();
    let placement = scheduler.select(task, preferred)?;
    let elapsed = start.elapsed();
    scheduler.record_overhead(elapsed.as_nanos());
    Ok((placement, elapsed))
}

/// A scheduler shared between threads. Placement decisions are serialized
/// through one lock, so the scheduler stays the single authority over
/// reservations; metrics are read from a snapshot taken under the lock.
#[derive(Debug)]
pub struct SharedScheduler {
    inner: Mutex<Scheduler>,
}

impl SharedScheduler {
    pub fn new(scheduler: Scheduler) -> Self {
        SharedScheduler {
            inner: Mutex::new(scheduler),
        }
    }

    fn lock(&self) -> MutexGuard<'_, Scheduler> {
        // a panic mid-update cannot leave the scheduler half-written in a way
        // later calls would misread, so a poisoned lock is still usable
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Timed select plus reservation.
    pub fn schedule(&self, task: &TaskRequest, preferred: Option<&str>) -> Result<Option<Placement>> {
        let mut s = self.lock();
        let (placement, _) = timed_select(&mut s, task, preferred)?;
        if let Some(p) = &placement {
            s.assign(task, &p.node_id)?;
        }
        Ok(placement)
    }

    pub fn complete(&self, record: &mut TaskRecord) -> Result<()> {
        self.lock().complete_task(record)?;
        Ok(())
    }

    pub fn snapshot(&self) -> Scheduler {
        self.lock().clone()
    }

    pub fn metrics(&self, records: &[TaskRecord]) -> SchedulerMetrics {
        self.snapshot().metrics(records)
    }

    pub fn into_inner(self) -> Scheduler {
        self.inner.into_inner().unwrap_or_else(|p| p.into_inner())
    }
}
