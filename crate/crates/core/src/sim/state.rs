use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::model::CountTail;

/// Exact state of the finite system.
///
/// Alongside per-queue lengths the state keeps the count tail `m_k` and a
/// bucket index `level -> queues of exactly that length`, both updated in
/// O(1) per event.
#[derive(Debug, Clone)]
pub struct QueueSystemState {
    lengths: Vec<u32>,
    /// `m[k]` = number of queues with at least `k` packets; `m[0] = n`.
    m: Vec<u64>,
    buckets: Vec<Vec<u32>>,
    /// Position of each queue inside its bucket.
    slot: Vec<u32>,
    fifo: Vec<VecDeque<f64>>,
    time: f64,
    total: u64,
    max_len: usize,
}

impl QueueSystemState {
    /// All queues empty.
    pub fn empty(n: usize) -> Result<Self> {
        Self::from_lengths(vec![0; n])
    }

    /// Explicit initial lengths; initial packets carry arrival time 0.
    pub fn from_lengths(lengths: Vec<u32>) -> Result<Self> {
        let n = lengths.len();
        if n == 0 {
            return Err(Error::param("n must be >= 1"));
        }
        if n > u32::MAX as usize {
            return Err(Error::Allocation { n });
        }
        let mut slot = Vec::new();
        slot.try_reserve_exact(n).map_err(|_| Error::Allocation { n })?;
        let mut fifo = Vec::new();
        fifo.try_reserve_exact(n).map_err(|_| Error::Allocation { n })?;

        let max_len = lengths.iter().copied().max().unwrap_or(0) as usize;
        let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); max_len + 1];
        for (i, &l) in lengths.iter().enumerate() {
            let b = &mut buckets[l as usize];
            slot.push(b.len() as u32);
            b.push(i as u32);
            fifo.push(VecDeque::from(vec![0.0; l as usize]));
        }
        let counts = CountTail::from_lengths(&lengths, 0.0);
        let total = counts.total();
        Ok(Self {
            lengths,
            m: counts.m,
            buckets,
            slot,
            fifo,
            time: 0.0,
            total,
            max_len,
        })
    }

    pub fn n(&self) -> usize {
        self.lengths.len()
    }

    pub fn lengths(&self) -> &[u32] {
        &self.lengths
    }

    pub fn length(&self, i: usize) -> u32 {
        self.lengths[i]
    }

    /// `m_k`, zero beyond the tracked range.
    pub fn m(&self, k: usize) -> u64 {
        self.m.get(k).copied().unwrap_or(0)
    }

    /// Count tail `m_0..=m_{max+1}` at the current time.
    pub fn counts(&self) -> CountTail {
        let mut m = self.m[..=self.max_len + 1].to_vec();
        m[0] = self.n() as u64;
        CountTail {
            n: self.n() as u64,
            m,
            t: self.time,
        }
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub(crate) fn set_time(&mut self, t: f64) {
        self.time = t;
    }

    pub fn total_packets(&self) -> u64 {
        self.total
    }

    pub fn max_length(&self) -> usize {
        self.max_len
    }

    /// Queues holding exactly `k` packets.
    pub fn bucket(&self, k: usize) -> &[u32] {
        self.buckets.get(k).map_or(&[], Vec::as_slice)
    }

    fn move_queue(&mut self, i: usize, from: usize, to: usize) {
        let pos = self.slot[i] as usize;
        let bucket = &mut self.buckets[from];
        bucket.swap_remove(pos);
        if let Some(&moved) = bucket.get(pos) {
            self.slot[moved as usize] = pos as u32;
        }
        if to >= self.buckets.len() {
            self.buckets.resize_with(to + 1, Vec::new);
        }
        self.slot[i] = self.buckets[to].len() as u32;
        self.buckets[to].push(i as u32);
    }

    /// One packet joins queue `i` at the current time.
    pub fn apply_arrival(&mut self, i: usize) {
        let from = self.lengths[i] as usize;
        let to = from + 1;
        self.lengths[i] += 1;
        if to + 1 >= self.m.len() {
            self.m.resize(to + 2, 0);
        }
        self.m[to] += 1;
        self.move_queue(i, from, to);
        self.fifo[i].push_back(self.time);
        self.total += 1;
        self.max_len = self.max_len.max(to);
        self.debug_check_level(from);
        self.debug_check_level(to);
    }

    /// Head-of-line packet leaves queue `i`; returns its arrival time.
    pub fn apply_departure(&mut self, i: usize) -> f64 {
        let from = self.lengths[i] as usize;
        assert!(from > 0, "departure from empty queue {i}");
        self.lengths[i] -= 1;
        self.m[from] -= 1;
        self.move_queue(i, from, from - 1);
        self.total -= 1;
        while self.max_len > 0 && self.buckets[self.max_len].is_empty() {
            self.max_len -= 1;
        }
        self.debug_check_level(from);
        self.debug_check_level(from - 1);
        self.fifo[i].pop_front().expect("fifo tracks lengths")
    }

    #[inline]
    fn debug_check_level(&self, k: usize) {
        if cfg!(debug_assertions) {
            let exact = self.buckets.get(k).map_or(0, Vec::len) as u64;
            let m_k = if k == 0 { self.n() as u64 } else { self.m(k) };
            assert_eq!(m_k - self.m(k + 1), exact, "count tail out of sync at level {k}");
        }
    }

    /// Full O(n) consistency check of counts, buckets and FIFOs.
    pub fn check_consistency(&self) -> std::result::Result<(), String> {
        let reference = CountTail::from_lengths(&self.lengths, self.time);
        for (k, &m) in reference.m.iter().enumerate() {
            let ours = if k == 0 { self.n() as u64 } else { self.m(k) };
            if ours != m {
                return Err(format!("m_{k} = {ours}, expected {m}"));
            }
        }
        if self.m.iter().skip(reference.m.len()).any(|&x| x != 0) {
            return Err("nonzero counts above the longest queue".into());
        }
        if reference.total() != self.total {
            return Err(format!("total {} vs {}", self.total, reference.total()));
        }
        let max = self.lengths.iter().copied().max().unwrap_or(0) as usize;
        if max != self.max_len {
            return Err(format!("max length {} vs {max}", self.max_len));
        }
        for (k, b) in self.buckets.iter().enumerate() {
            for (pos, &i) in b.iter().enumerate() {
                if self.lengths[i as usize] as usize != k || self.slot[i as usize] as usize != pos {
                    return Err(format!("bucket {k} misindexes queue {i}"));
                }
            }
        }
        for (i, f) in self.fifo.iter().enumerate() {
            if f.len() != self.lengths[i] as usize {
                return Err(format!("fifo of queue {i} has {} entries", f.len()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arrival_updates_exactly_one_level() {
        let mut s = QueueSystemState::from_lengths(vec![0, 2, 1]).unwrap();
        assert_eq!(s.counts().m, vec![3, 2, 1, 0]);

        s.apply_arrival(0);
        assert_eq!(s.m(1), 3);
        assert_eq!(s.m(2), 1);

        s.apply_arrival(1);
        assert_eq!((s.m(1), s.m(2), s.m(3)), (3, 1, 1));
        assert_eq!(s.total_packets(), 5);
        assert_eq!(s.max_length(), 3);
        s.check_consistency().unwrap();
    }

    #[test]
    fn departure_is_fifo() {
        let mut s = QueueSystemState::empty(2).unwrap();
        s.set_time(1.0);
        s.apply_arrival(1);
        s.set_time(2.5);
        s.apply_arrival(1);
        assert_eq!(s.apply_departure(1), 1.0);
        assert_eq!(s.apply_departure(1), 2.5);
        assert_eq!(s.total_packets(), 0);
        assert_eq!(s.max_length(), 0);
        s.check_consistency().unwrap();
    }

    #[test]
    fn buckets_follow_lengths() {
        let mut s = QueueSystemState::empty(5).unwrap();
        for i in [0, 0, 3, 4, 0, 3] {
            s.apply_arrival(i);
        }
        assert_eq!(s.bucket(3), &[0]);
        let mut two: Vec<u32> = s.bucket(2).to_vec();
        two.sort_unstable();
        assert_eq!(two, vec![3]);
        s.apply_departure(0);
        s.apply_departure(0);
        s.check_consistency().unwrap();
        assert_eq!(s.max_length(), 2);
    }
}
