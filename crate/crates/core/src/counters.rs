//! Per-thread operation counters.
//!
//! Every arithmetic primitive in the crate bumps a counter in the bucket of
//! the party currently executing on this thread. Client code runs in the
//! [`Party::Client`] bucket by default; server handlers wrap their work in
//! [`as_server`] so that an in-process server sharing the client's thread
//! does not pollute the client's tally.

use std::cell::{Cell, RefCell};
use std::ops::{Add, AddAssign, Sub};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Party {
    Client,
    Server,
}

/// Tally of the operations the cost claims are stated in.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OpCounts {
    pub ring_add: u64,
    pub ring_mul: u64,
    pub ring_inv: u64,
    pub point_add: u64,
    pub point_double: u64,
    pub scalar_mul: u64,
    pub pairing: u64,
    pub gt_mul: u64,
    pub gt_exp: u64,
    pub prime_gen: u64,
}

impl OpCounts {
    pub fn is_zero(&self) -> bool {
        *self == OpCounts::default()
    }
}

macro_rules! fieldwise {
    ($trait:ident, $method:ident, $op:tt) => {
        impl $trait for OpCounts {
            type Output = OpCounts;
            fn $method(self, rhs: OpCounts) -> OpCounts {
                OpCounts {
                    ring_add: self.ring_add $op rhs.ring_add,
                    ring_mul: self.ring_mul $op rhs.ring_mul,
                    ring_inv: self.ring_inv $op rhs.ring_inv,
                    point_add: self.point_add $op rhs.point_add,
                    point_double: self.point_double $op rhs.point_double,
                    scalar_mul: self.scalar_mul $op rhs.scalar_mul,
                    pairing: self.pairing $op rhs.pairing,
                    gt_mul: self.gt_mul $op rhs.gt_mul,
                    gt_exp: self.gt_exp $op rhs.gt_exp,
                    prime_gen: self.prime_gen $op rhs.prime_gen,
                }
            }
        }
    };
}

fieldwise!(Add, add, +);
fieldwise!(Sub, sub, -);

impl AddAssign for OpCounts {
    fn add_assign(&mut self, rhs: OpCounts) {
        *self = *self + rhs;
    }
}

thread_local! {
    static PARTY: Cell<Party> = const { Cell::new(Party::Client) };
    static COUNTS: RefCell<[OpCounts; 2]> = RefCell::new([OpCounts::default(); 2]);
}

fn slot(party: Party) -> usize {
    match party {
        Party::Client => 0,
        Party::Server => 1,
    }
}

#[inline]
pub(crate) fn record(f: impl FnOnce(&mut OpCounts)) {
    let idx = slot(PARTY.with(Cell::get));
    COUNTS.with(|c| f(&mut c.borrow_mut()[idx]));
}

pub fn current_party() -> Party {
    PARTY.with(Cell::get)
}

/// Running total for `party` on this thread.
pub fn snapshot(party: Party) -> OpCounts {
    COUNTS.with(|c| c.borrow()[slot(party)])
}

/// Runs `f` and returns the operations it performed as the current party.
pub fn measure<T>(f: impl FnOnce() -> T) -> (T, OpCounts) {
    let party = current_party();
    let before = snapshot(party);
    let out = f();
    (out, snapshot(party) - before)
}

/// Runs `f` attributed to the server bucket and returns its operation count.
pub fn as_server<T>(f: impl FnOnce() -> T) -> (T, OpCounts) {
    let previous = PARTY.with(|p| p.replace(Party::Server));
    let before = snapshot(Party::Server);
    let out = f();
    let spent = snapshot(Party::Server) - before;
    PARTY.with(|p| p.set(previous));
    (out, spent)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn server_scope_is_separate() {
        let ((), client) = measure(|| {
            record(|c| c.ring_mul += 1);
            let ((), server) = as_server(|| record(|c| c.pairing += 2));
            assert_eq!(server.pairing, 2);
            assert_eq!(server.ring_mul, 0);
        });
        assert_eq!(client.ring_mul, 1);
        assert_eq!(client.pairing, 0);
        assert_eq!(current_party(), Party::Client);
    }
}
