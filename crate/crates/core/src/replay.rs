//! Episodic experience replay sampling contiguous sub-trajectories.
//!
//! Transitions are kept grouped by episode in arrival order. A sample is a
//! window of `burn_in + train_steps` consecutive transitions from one
//! episode, drawn uniformly over every valid window in the buffer. Episodes
//! shorter than a full window contribute exactly one window: the whole
//! episode, with the burn-in shortened so the training part keeps up to
//! `train_steps` transitions.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub observation: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_observation: Vec<f64>,
    pub terminal: bool,
    pub episode: u64,
    /// Index of this transition within its episode, from 0.
    pub step: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayConfig {
    pub capacity: usize,
    pub burn_in: usize,
    pub train_steps: usize,
    pub batch_size: usize,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        ReplayConfig {
            capacity: 100_000,
            burn_in: 10,
            train_steps: 22,
            batch_size: 4,
        }
    }
}

impl ReplayConfig {
    pub fn window(&self) -> usize {
        self.burn_in + self.train_steps
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("replay train_steps and batch_size must be >= 1".into()));
        }
        if self.capacity < self.window() {
            return Err(Error::Config(format!(
                "replay capacity {} is smaller than one window of {}",
                self.capacity,
                self.window()
            )));
        }
        Ok(())
    }
}

/// A contiguous same-episode window: burn-in first, then training steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubTrajectory<'a> {
    pub transitions: &'a [Transition],
    pub burn_in_count: usize,
}

impl<'a> SubTrajectory<'a> {
    pub fn burn_in(&self) -> &'a [Transition] {
        &self.transitions[..self.burn_in_count]
    }

    pub fn train(&self) -> &'a [Transition] {
        &self.transitions[self.burn_in_count..]
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn episode(&self) -> u64 {
        self.transitions[0].episode
    }

    pub fn start_step(&self) -> u64 {
        self.transitions[0].step
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Episode {
    id: u64,
    transitions: Vec<Transition>,
    /// Windows in all episodes appended before this one, counted since the
    /// buffer was created. Never changes once set.
    window_offset: u64,
}

impl Episode {
    fn closed(&self) -> bool {
        self.transitions.last().is_some_and(|t| t.terminal)
    }

    fn next_step(&self) -> u64 {
        self.transitions.last().map_or(0, |t| t.step + 1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    config: ReplayConfig,
    episodes: VecDeque<Episode>,
    size: usize,
}

impl ReplayBuffer {
    pub fn new(config: ReplayConfig) -> Result<Self> {
        config.validate()?;
        Ok(ReplayBuffer {
            config,
            episodes: VecDeque::new(),
            size: 0,
        })
    }

    pub fn config(&self) -> &ReplayConfig {
        &self.config
    }

    /// Stored transitions.
    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn episode_count(&self) -> usize {
        self.episodes.len()
    }

    fn windows_in(&self, len: usize) -> u64 {
        let w = self.config.window();
        if len >= w { (len - w + 1) as u64 } else { u64::from(len > 0) }
    }

    /// Number of distinct windows the sampler chooses between.
    pub fn window_count(&self) -> u64 {
        match (self.episodes.front(), self.episodes.back()) {
            (Some(first), Some(last)) => {
                last.window_offset + self.windows_in(last.transitions.len()) - first.window_offset
            }
            _ => 0,
        }
    }

    pub fn append(&mut self, transition: Transition) -> Result<()> {
        match self.episodes.back_mut() {
            Some(open) if open.id == transition.episode => {
                if open.closed() {
                    return Err(Error::Replay(format!(
                        "episode {} already ended with a terminal transition",
                        open.id
                    )));
                }
                if transition.step != open.next_step() {
                    return Err(Error::Replay(format!(
                        "episode {} expects step {}, got {}",
                        open.id,
                        open.next_step(),
                        transition.step
                    )));
                }
                open.transitions.push(transition);
            }
            back => {
                if let Some(prev) = back
                    && transition.episode < prev.id
                {
                    return Err(Error::Replay(format!(
                        "episode id {} is older than the latest episode {}",
                        transition.episode, prev.id
                    )));
                }
                if transition.step != 0 {
                    return Err(Error::Replay(format!(
                        "new episode {} must start at step 0, got {}",
                        transition.episode, transition.step
                    )));
                }
                let window_offset = match self.episodes.back() {
                    Some(prev) => prev.window_offset + self.windows_in(prev.transitions.len()),
                    None => 0,
                };
                self.episodes.push_back(Episode {
                    id: transition.episode,
                    transitions: vec![transition],
                    window_offset,
                });
            }
        }
        self.size += 1;
        self.evict();
        Ok(())
    }

    fn evict(&mut self) {
        while self.size > self.config.capacity && self.episodes.len() > 1 {
            let old = self.episodes.pop_front().expect("non-empty");
            self.size -= old.transitions.len();
        }
        if self.size > self.config.capacity {
            // A single in-progress episode longer than the whole buffer:
            // drop its oldest transitions, keeping it contiguous.
            let only = self.episodes.front_mut().expect("non-empty");
            let excess = self.size - self.config.capacity;
            only.transitions.drain(..excess);
            self.size -= excess;
        }
    }

    /// Window number `index` in `0..window_count()`.
    pub fn window(&self, index: u64) -> Option<SubTrajectory<'_>> {
        let first = self.episodes.front()?;
        if index >= self.window_count() {
            return None;
        }
        let absolute = first.window_offset + index;
        let pos = self
            .episodes
            .partition_point(|e| e.window_offset <= absolute)
            - 1;
        let episode = &self.episodes[pos];
        let start = (absolute - episode.window_offset) as usize;
        let len = episode.transitions.len();
        let w = self.config.window();
        Some(if len >= w {
            SubTrajectory {
                transitions: &episode.transitions[start..start + w],
                burn_in_count: self.config.burn_in,
            }
        } else {
            SubTrajectory {
                transitions: &episode.transitions,
                burn_in_count: len.saturating_sub(self.config.train_steps),
            }
        })
    }

    /// `batch_size` windows drawn independently and uniformly.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<SubTrajectory<'_>>> {
        let total = self.window_count();
        if total == 0 {
            return Err(Error::Replay("cannot sample from an empty buffer".into()));
        }
        Ok((0..self.config.batch_size)
            .map(|_| self.window(rng.gen_range(0..total)).expect("index in range"))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn transition(episode: u64, step: u64, terminal: bool) -> Transition {
        Transition {
            observation: vec![step as f64],
            action: 0,
            reward: 0.0,
            next_observation: vec![step as f64 + 1.0],
            terminal,
            episode,
            step,
        }
    }

    fn fill(buf: &mut ReplayBuffer, episode: u64, len: u64, terminal: bool) {
        for s in 0..len {
            buf.append(transition(episode, s, terminal && s + 1 == len)).unwrap();
        }
    }

    fn config(capacity: usize) -> ReplayConfig {
        ReplayConfig {
            capacity,
            ..ReplayConfig::default()
        }
    }

    #[test]
    fn append_to_empty() {
        let mut buf = ReplayBuffer::new(config(100)).unwrap();
        buf.append(transition(0, 0, false)).unwrap();
        assert_eq!(buf.len(), 1);
    }

    #[test]
    fn overflow_evicts_oldest_whole_episode() {
        let mut buf = ReplayBuffer::new(config(100)).unwrap();
        fill(&mut buf, 0, 40, true);
        fill(&mut buf, 1, 60, true);
        assert_eq!(buf.len(), 100);
        buf.append(transition(2, 0, false)).unwrap();
        assert_eq!(buf.len(), 61);
        assert_eq!(buf.episode_count(), 2);
        assert_eq!(buf.window(0).unwrap().episode(), 1);
    }

    #[test]
    fn a_single_oversized_episode_is_trimmed_from_the_front() {
        let mut buf = ReplayBuffer::new(config(40)).unwrap();
        fill(&mut buf, 0, 50, false);
        assert_eq!(buf.len(), 40);
        let w = buf.window(0).unwrap();
        assert_eq!(w.start_step(), 10);
        buf.append(transition(0, 50, true)).unwrap();
        assert_eq!(buf.len(), 40);
    }

    #[test]
    fn indexing_errors() {
        let mut buf = ReplayBuffer::new(config(100)).unwrap();
        fill(&mut buf, 0, 3, true);
        assert!(buf.append(transition(0, 3, false)).is_err());
        assert!(buf.append(transition(1, 1, false)).is_err());
        fill(&mut buf, 1, 2, false);
        assert!(buf.append(transition(1, 5, false)).is_err());
        assert!(buf.append(transition(0, 0, false)).is_err());
        assert_eq!(buf.len(), 5);
    }

    #[test]
    fn window_shapes() {
        let mut buf = ReplayBuffer::new(config(1000)).unwrap();
        fill(&mut buf, 0, 40, true);
        assert_eq!(buf.window_count(), 9);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            for w in buf.sample(&mut rng).unwrap() {
                assert_eq!(w.len(), 32);
                assert_eq!(w.burn_in().len(), 10);
                assert_eq!(w.train().len(), 22);
                assert!(w.start_step() <= 8);
            }
        }
    }

    #[test]
    fn short_episode_is_one_whole_window() {
        let mut buf = ReplayBuffer::new(config(1000)).unwrap();
        fill(&mut buf, 0, 12, true);
        assert_eq!(buf.window_count(), 1);
        let w = buf.window(0).unwrap();
        assert_eq!((w.len(), w.burn_in_count, w.train().len()), (12, 0, 12));
        fill(&mut buf, 1, 25, true);
        let w = buf.window(1).unwrap();
        assert_eq!((w.len(), w.burn_in_count, w.train().len()), (25, 3, 22));
    }

    #[test]
    fn empty_buffer_cannot_sample() {
        let buf = ReplayBuffer::new(config(100)).unwrap();
        assert!(buf.sample(&mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn capacity_must_hold_a_window() {
        assert!(ReplayBuffer::new(config(31)).is_err());
        assert!(ReplayBuffer::new(config(32)).is_ok());
    }
}
