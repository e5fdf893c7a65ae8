use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::CsiVector;
use crate::harness::container;
use crate::{Error, Result};

/// `(R̂_t, s_t, a_t, r_t)` for `t = 1..T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub returns_to_go: Vec<f64>,
    pub states: Vec<CsiVector>,
    /// Interleaved `(cos, sin)` pairs, length `2N` each.
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
}

/// Returns-to-go: the total reward first, then each later entry is the
/// previous one minus the reward just collected, exactly as at rollout time.
pub fn returns_to_go(rewards: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(rewards.len());
    let mut acc: f64 = rewards.iter().rev().sum();
    for r in rewards {
        out.push(acc);
        acc -= r;
    }
    out
}

pub fn build_trajectory(states: Vec<CsiVector>, actions: Vec<Vec<f64>>, rewards: Vec<f64>) -> Result<Trajectory> {
    if states.is_empty() || states.len() != actions.len() || actions.len() != rewards.len() {
        return Err(Error::Shape(format!(
            "{} states, {} actions, {} rewards",
            states.len(),
            actions.len(),
            rewards.len()
        )));
    }
    Ok(Trajectory {
        returns_to_go: returns_to_go(&rewards),
        states,
        actions,
        rewards,
    })
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Largest `|R̂_t - R̂_{t+1} - r_t|` (with `R̂_{T+1} = 0`).
    pub fn telescoping_error(&self) -> f64 {
        let t = self.len();
        (0..t)
            .map(|i| {
                let next = if i + 1 < t { self.returns_to_go[i + 1] } else { 0.0 };
                (self.returns_to_go[i] - next - self.rewards[i]).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Whether `R̂_{t+1} = R̂_t - r_t` holds bit-exactly, as produced by a
    /// rollout that decrements the return-to-go.
    pub fn decrements_exactly(&self) -> bool {
        self.returns_to_go.windows(2).zip(&self.rewards).all(|(w, r)| w[1] == w[0] - r)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredEpisode {
    pub env: String,
    pub tag: u32,
    /// Target return used as the episode prompt.
    pub prompt: f64,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EpisodeHeader {
    env: String,
    tag: u32,
    prompt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BufferHeader {
    elements: usize,
    antennas: usize,
    slots: usize,
    episodes: Vec<EpisodeHeader>,
}

const MAGIC: &[u8; 8] = b"DEDTTRAJ";
const VERSION: u32 = 1;

/// Offline episodes sharing `N`, `M` and `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    pub elements: usize,
    pub antennas: usize,
    pub slots: usize,
    pub episodes: Vec<StoredEpisode>,
}

impl ReplayBuffer {
    pub fn new(elements: usize, antennas: usize, slots: usize) -> Self {
        Self {
            elements,
            antennas,
            slots,
            episodes: Vec::new(),
        }
    }

    pub fn push(&mut self, episode: StoredEpisode) -> Result<()> {
        let t = &episode.trajectory;
        let state_ok = t.states.iter().all(|s| s.len() == 2 * self.elements * self.antennas);
        let action_ok = t.actions.iter().all(|a| a.len() == 2 * self.elements);
        if t.len() != self.slots || !state_ok || !action_ok {
            return Err(Error::Shape(format!(
                "episode does not fit a buffer with N = {}, M = {}, T = {}",
                self.elements, self.antennas, self.slots
            )));
        }
        self.episodes.push(episode);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    /// Concatenates two buffers of identical shape.
    pub fn extend(&mut self, other: ReplayBuffer) -> Result<()> {
        for ep in other.episodes {
            self.push(ep)?;
        }
        Ok(())
    }

    pub fn mean_return(&self) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        self.episodes.iter().map(|e| e.trajectory.returns_to_go[0]).sum::<f64>() / self.episodes.len() as f64
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = BufferHeader {
            elements: self.elements,
            antennas: self.antennas,
            slots: self.slots,
            episodes: self
                .episodes
                .iter()
                .map(|e| EpisodeHeader {
                    env: e.env.clone(),
                    tag: e.tag,
                    prompt: e.prompt,
                })
                .collect(),
        };
        let mut payload = Vec::new();
        for ep in &self.episodes {
            let t = &ep.trajectory;
            for i in 0..t.len() {
                payload.push(t.rewards[i]);
                payload.push(t.returns_to_go[i]);
                payload.extend_from_slice(t.states[i].as_slice());
                payload.extend_from_slice(&t.actions[i]);
            }
        }
        container::encode(MAGIC, VERSION, &header, &payload)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let (h, payload): (BufferHeader, Vec<f64>) = container::decode(MAGIC, VERSION, bytes, origin)?;
        let (sd, ad) = (2 * h.elements * h.antennas, 2 * h.elements);
        let per_slot = 2 + sd + ad;
        if payload.len() != h.episodes.len() * h.slots * per_slot {
            return Err(Error::format(origin, "payload length does not match header"));
        }
        let mut buf = ReplayBuffer::new(h.elements, h.antennas, h.slots);
        let mut chunks = payload.chunks_exact(per_slot);
        for eh in h.episodes {
            let mut t = Trajectory {
                returns_to_go: Vec::with_capacity(h.slots),
                states: Vec::with_capacity(h.slots),
                actions: Vec::with_capacity(h.slots),
                rewards: Vec::with_capacity(h.slots),
            };
            for _ in 0..h.slots {
                let c = chunks.next().expect("length checked");
                t.rewards.push(c[0]);
                t.returns_to_go.push(c[1]);
                t.states.push(CsiVector(c[2..2 + sd].to_vec()));
                t.actions.push(c[2 + sd..].to_vec());
            }
            buf.push(StoredEpisode {
                env: eh.env,
                tag: eh.tag,
                prompt: eh.prompt,
                trajectory: t,
            })?;
        }
        Ok(buf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        container::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&container::read_file(path)?, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    #[test]
    fn return_to_go_examples() {
        assert_eq!(returns_to_go(&[1.0, 2.0, 3.0]), vec![6.0, 5.0, 3.0]);
        assert_eq!(returns_to_go(&[0.0; 4]), vec![0.0; 4]);
        let s = vec![CsiVector::zeros(2); 2];
        assert!(build_trajectory(s, vec![vec![1.0, 0.0]], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn telescoping_holds_for_random_rewards() {
        let mut r = stream(0, "t");
        let rewards: Vec<f64> = (0..50).map(|_| r.random_range(0.0..10.0)).collect();
        let rtg = returns_to_go(&rewards);
        // brute-force recomputation of every suffix sum
        for t in 0..50 {
            let direct: f64 = rewards[t..].iter().sum();
            assert!((rtg[t] - direct).abs() < 1e-12);
            let next = if t + 1 < 50 { rtg[t + 1] } else { 0.0 };
            assert!((rtg[t] - next - rewards[t]).abs() < 1e-12);
        }
    }

    fn buffer() -> ReplayBuffer {
        let mut r = stream(1, "t");
        let mut b = ReplayBuffer::new(2, 1, 3);
        for tag in 0..2 {
            let states = (0..3).map(|_| CsiVector((0..4).map(|_| r.random()).collect())).collect();
            let actions = (0..3).map(|_| vec![1.0, 0.0, 0.0, 1.0]).collect();
            let rewards = (0..3).map(|_| r.random()).collect();
            b.push(StoredEpisode {
                env: format!("env{tag}"),
                tag,
                prompt: 1.5,
                trajectory: build_trajectory(states, actions, rewards).unwrap(),
            })
            .unwrap();
        }
        b
    }

    #[test]
    fn buffer_round_trip_is_exact() {
        let b = buffer();
        let back = ReplayBuffer::from_bytes(&b.to_bytes().unwrap(), Path::new("m")).unwrap();
        assert_eq!(back, b);
        let bytes = b.to_bytes().unwrap();
        assert!(ReplayBuffer::from_bytes(&bytes[..bytes.len() - 8], Path::new("m")).is_err());
    }

    #[test]
    fn buffer_rejects_mismatched_episodes() {
        let mut b = buffer();
        let mut ep = b.episodes[0].clone();
        ep.trajectory.rewards.pop();
        assert!(b.push(ep).is_err());
    }
}
