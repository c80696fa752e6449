use std::collections::VecDeque;

use parking_lot::{Condvar, Mutex};

/// Counting semaphore that admits waiters in arrival order.
pub struct Limiter {
    max: usize,
    state: Mutex<State>,
    cond: Condvar,
}

struct State {
    in_flight: usize,
    next_ticket: u64,
    queue: VecDeque<u64>,
}

pub struct Permit<'a> {
    limiter: &'a Limiter,
}

impl Limiter {
    pub fn new(max: usize) -> Self {
        assert!(max > 0, "limiter needs at least one slot");
        Self {
            max,
            state: Mutex::new(State { in_flight: 0, next_ticket: 0, queue: VecDeque::new() }),
            cond: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut state = self.state.lock();
        let ticket = state.next_ticket;
        state.next_ticket += 1;
        state.queue.push_back(ticket);
        while !(state.queue.front() == Some(&ticket) && state.in_flight < self.max) {
            self.cond.wait(&mut state);
        }
        state.queue.pop_front();
        state.in_flight += 1;
        drop(state);
        // The next waiter in line may also fit.
        self.cond.notify_all();
        Permit { limiter: self }
    }

    pub fn in_flight(&self) -> usize {
        self.state.lock().in_flight
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        self.limiter.state.lock().in_flight -= 1;
        self.limiter.cond.notify_all();
    }
}
