//! Simulated point-to-point transport between logical ranks.
//!
//! Each rank has a mailbox; a posted batch is delivered exactly once when the
//! destination drains its mailbox. Delivery order between distinct
//! sender-receiver pairs is unspecified, and an optional shuffle seed makes
//! that explicit for tests.

use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A query batch headed to one producer rank.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryBatch {
    pub origin: usize,
    pub dest: usize,
    /// (query id, producer-frame coordinates, opaque payload)
    pub items: Vec<(u64, [f64; 3], Vec<u8>)>,
}

/// Replies returning to the origin rank.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplyBatch {
    pub origin: usize,
    /// (query id, found flag, interpolated values)
    pub items: Vec<(u64, bool, Vec<f64>)>,
}

#[derive(Clone, Debug)]
pub enum Message {
    Queries(QueryBatch),
    Replies(ReplyBatch),
}

pub struct Transport {
    mailboxes: Vec<Vec<Message>>,
    shuffle: Option<ChaCha8Rng>,
    posted: usize,
    delivered: usize,
}

impl Transport {
    pub fn new(rank_count: usize) -> Self {
        Transport {
            mailboxes: vec![Vec::new(); rank_count],
            shuffle: None,
            posted: 0,
            delivered: 0,
        }
    }

    /// Transport that hands out drained messages in a seeded random order.
    pub fn with_shuffle(rank_count: usize, seed: u64) -> Self {
        Transport {
            shuffle: Some(ChaCha8Rng::seed_from_u64(seed)),
            ..Transport::new(rank_count)
        }
    }

    pub fn rank_count(&self) -> usize {
        self.mailboxes.len()
    }

    pub fn post(&mut self, dest: usize, msg: Message) -> Result<()> {
        if dest >= self.mailboxes.len() {
            return Err(Error::Transport(format!(
                "destination rank {dest} out of range"
            )));
        }
        self.mailboxes[dest].push(msg);
        self.posted += 1;
        Ok(())
    }

    pub fn drain(&mut self, rank: usize) -> Vec<Message> {
        let mut msgs = std::mem::take(&mut self.mailboxes[rank]);
        if let Some(rng) = &mut self.shuffle {
            msgs.shuffle(rng);
        }
        self.delivered += msgs.len();
        msgs
    }

    pub fn posted(&self) -> usize {
        self.posted
    }

    /// Every posted batch must have been delivered exactly once.
    pub fn check_drained(&self) -> Result<()> {
        let pending: usize = self.mailboxes.iter().map(Vec::len).sum();
        if pending != 0 || self.delivered != self.posted {
            return Err(Error::Transport(format!(
                "{pending} undelivered messages ({} posted, {} delivered)",
                self.posted, self.delivered
            )));
        }
        Ok(())
    }
}
