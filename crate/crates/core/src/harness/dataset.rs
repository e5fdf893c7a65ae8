//! Channel datasets: a run of slots drawn from one environment.
//!
//! Per slot the payload holds `G` (column-major), then `h`, then `H`
//! (column-major), each complex value as interleaved real/imaginary f64.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::container;
use crate::channel::{build_correlation_with, sample_slot, CMatrix, CVector, ChannelRealization, EnvConfig, C64};
use crate::diffusion::{vectorize, CsiVector};
use crate::rng::{derive, streams};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"DEDTDATA";
pub const DATASET_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub env: EnvConfig,
    pub slots: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<ChannelRealization>,
}

/// Draws `slots` independent realizations from the `dataset` stream of `seed`.
pub fn generate_dataset(env: &EnvConfig, slots: usize, seed: u64) -> Result<Dataset> {
    if slots == 0 {
        return Err(Error::Config("dataset needs at least one slot".into()));
    }
    env.validate()?;
    let corr = build_correlation_with(&env.geometry, env.correlation)?;
    let mut rng = derive(seed, streams::DATASET, 0);
    let records = (0..slots)
        .map(|_| sample_slot(env, &corr, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        header: DatasetHeader {
            env: env.clone(),
            slots,
            seed,
        },
        records,
    })
}

fn push_complex(out: &mut Vec<f64>, values: impl Iterator<Item = C64>) {
    for v in values {
        out.push(v.re);
        out.push(v.im);
    }
}

impl Dataset {
    pub fn elements(&self) -> usize {
        self.header.env.elements()
    }

    pub fn antennas(&self) -> usize {
        self.header.env.antennas
    }

    /// Vectorized cascaded channels.
    pub fn cascaded_vectors(&self) -> Vec<CsiVector> {
        self.records.iter().map(|r| vectorize(&r.cascaded)).collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (n, m) = (self.elements(), self.antennas());
        let mut payload = Vec::with_capacity(self.records.len() * 2 * (2 * n * m + n));
        for r in &self.records {
            push_complex(&mut payload, r.g.iter().copied());
            push_complex(&mut payload, r.h.iter().copied());
            push_complex(&mut payload, r.cascaded.iter().copied());
        }
        container::encode(MAGIC, DATASET_SCHEMA_VERSION, &self.header, &payload)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let (header, payload): (DatasetHeader, Vec<f64>) =
            container::decode(MAGIC, DATASET_SCHEMA_VERSION, bytes, origin)?;
        let (n, m) = (header.env.elements(), header.env.antennas);
        let per = 2 * (2 * n * m + n);
        if payload.len() != per * header.slots {
            return Err(Error::format(origin, format!("payload holds {} values, expected {}", payload.len(), per * header.slots)));
        }
        let c = |s: &[f64], i: usize| C64::new(s[2 * i], s[2 * i + 1]);
        let records = payload
            .chunks_exact(per)
            .map(|s| {
                let g = CMatrix::from_fn(n, m, |r, col| c(s, col * n + r));
                let h = CVector::from_fn(n, |r, _| c(s, n * m + r));
                let cascaded = CMatrix::from_fn(n, m, |r, col| c(s, n * m + n + col * n + r));
                ChannelRealization { g, h, cascaded }
            })
            .collect();
        Ok(Self { header, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        container::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&container::read_file(path)?, path)
    }
}
