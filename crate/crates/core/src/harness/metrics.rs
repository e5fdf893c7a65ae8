//! Metrics rows and their CSV form.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "DEDT")]
    Dedt,
    #[serde(rename = "PCDT")]
    Pcdt,
    #[serde(rename = "RCDT")]
    Rcdt,
    #[serde(rename = "DM-PPO")]
    DmPpo,
    #[serde(rename = "RC-PPO")]
    RcPpo,
    #[serde(rename = "AO")]
    Ao,
    #[serde(rename = "RANDOM")]
    Random,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Dedt,
        Method::Pcdt,
        Method::Rcdt,
        Method::DmPpo,
        Method::RcPpo,
        Method::Ao,
        Method::Random,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Dedt => "DEDT",
            Method::Pcdt => "PCDT",
            Method::Rcdt => "RCDT",
            Method::DmPpo => "DM-PPO",
            Method::RcPpo => "RC-PPO",
            Method::Ao => "AO",
            Method::Random => "RANDOM",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// One measurement. Fields not meaningful for a row are left empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub experiment: String,
    pub env: String,
    pub method: Method,
    pub rho: Option<f64>,
    pub snr_db: Option<f64>,
    pub nmse: Option<f64>,
    pub raw_rate: Option<f64>,
    pub effective_rate: Option<f64>,
    pub step: Option<u64>,
    pub seed: u64,
}

pub const HEADER: [&str; 10] = [
    "experiment",
    "env",
    "method",
    "rho",
    "snr_db",
    "nmse",
    "raw_rate",
    "effective_rate",
    "step",
    "seed",
];

impl MetricsRow {
    pub fn new(experiment: &str, env: &str, method: Method, seed: u64) -> Self {
        Self {
            experiment: experiment.into(),
            env: env.into(),
            method,
            rho: None,
            snr_db: None,
            nmse: None,
            raw_rate: None,
            effective_rate: None,
            step: None,
            seed,
        }
    }
}

pub fn to_csv(rows: &[MetricsRow]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(HEADER).map_err(|e| Error::Config(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Config(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Config(e.to_string()))
}

pub fn from_csv(bytes: &[u8], origin: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers().map_err(|e| Error::format(origin, e.to_string()))?;
    if header.iter().ne(HEADER) {
        return Err(Error::format(origin, "unexpected metrics header".to_string()));
    }
    r.deserialize()
        .map(|row| row.map_err(|e| Error::format(origin, e.to_string())))
        .collect()
}

pub fn write_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    super::container::write_file(path, &to_csv(rows)?)
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    from_csv(&super::container::read_file(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_order_and_round_trip() {
        let mut a = MetricsRow::new("nmse", "train0", Method::Dedt, 7);
        a.rho = Some(0.5);
        a.snr_db = Some(10.0);
        a.nmse = Some(0.123456789012345);
        let mut b = MetricsRow::new("rate", "heldout", Method::DmPpo, 7);
        b.raw_rate = Some(8.5);
        b.step = Some(3);
        let bytes = to_csv(&[a.clone(), b.clone()]).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), "experiment,env,method,rho,snr_db,nmse,raw_rate,effective_rate,step,seed");
        assert!(text.contains("DM-PPO"));
        assert_eq!(from_csv(&bytes, Path::new("m")).unwrap(), vec![a, b]);
        assert!(from_csv(b"a,b\n1,2\n", Path::new("m")).is_err());
    }

    #[test]
    fn method_names_parse() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("PPO".parse::<Method>().is_err());
    }
}
