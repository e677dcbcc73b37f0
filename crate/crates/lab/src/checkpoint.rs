//! Binary checkpoint: magic, format version, training-state header, then every parameter
//! of the meta-policy followed by the sub-policy as (name, shape, values, first moments,
//! second moments). All numbers little-endian; floats stored as raw bits.

use std::path::Path;

use tsc_core::meta::{EmaScale, GoalScales};
use tsc_core::nn::{Adam, Parameters};
use tsc_core::train::{TrainConfig, Trainer};

use crate::error::LabError;
use crate::scenario::Scenario;

pub const MAGIC: &[u8; 4] = b"TSCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
    fn adam(&mut self, a: &Adam) {
        for v in [a.lr, a.beta1, a.beta2, a.eps] {
            self.f64(v);
        }
        self.u8(a.max_grad_norm.is_some() as u8);
        self.f64(a.max_grad_norm.unwrap_or(0.0));
        self.u64(a.step);
    }
    fn ema(&mut self, e: &EmaScale) {
        self.f64(e.value);
        self.u8(e.initialized as u8);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], LabError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| LabError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, LabError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, LabError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, LabError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64, LabError> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn str(&mut self) -> Result<String, LabError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| LabError::Checkpoint("string is not utf-8".into()))
    }
    fn adam(&mut self) -> Result<Adam, LabError> {
        let (lr, beta1, beta2, eps) = (self.f64()?, self.f64()?, self.f64()?, self.f64()?);
        let clip = self.u8()? != 0;
        let max = self.f64()?;
        Ok(Adam { lr, beta1, beta2, eps, max_grad_norm: clip.then_some(max), step: self.u64()? })
    }
    fn ema(&mut self) -> Result<EmaScale, LabError> {
        Ok(EmaScale { value: self.f64()?, initialized: self.u8()? != 0 })
    }
}

pub fn encode(trainer: &Trainer, scenario: &Scenario) -> Vec<u8> {
    let mut w = Writer::default();
    w.buf.extend_from_slice(MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.u64(trainer.episode);
    w.u8(trainer.lr_halved as u8);
    w.adam(&trainer.meta_opt);
    w.adam(&trainer.sub_opt);
    w.ema(&trainer.scales.waiting);
    w.ema(&trainer.scales.queue);
    w.str(&toml::to_string(&trainer.config).expect("config serializes"));
    w.str(&scenario.to_toml());
    let mut params = Vec::new();
    trainer.meta.visit(&mut |p| params.push(p.clone()));
    trainer.sub.visit(&mut |p| params.push(p.clone()));
    w.u32(params.len() as u32);
    for p in &params {
        w.str(&p.name);
        w.u32(p.value.rows as u32);
        w.u32(p.value.cols as u32);
        for data in [&p.value.data, &p.m, &p.v] {
            for &x in data.iter() {
                w.f64(x);
            }
        }
    }
    w.buf
}

/// Rebuild a trainer and its scenario from checkpoint bytes.
pub fn decode(bytes: &[u8]) -> Result<(Trainer, Scenario), LabError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(LabError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(LabError::Version(format!("checkpoint version {version} (supported: {CHECKPOINT_VERSION})")));
    }
    let episode = r.u64()?;
    let lr_halved = r.u8()? != 0;
    let meta_opt = r.adam()?;
    let sub_opt = r.adam()?;
    let scales = GoalScales { waiting: r.ema()?, queue: r.ema()? };
    let config: TrainConfig = toml::from_str(&r.str()?).map_err(|e| LabError::Checkpoint(format!("config: {e}")))?;
    let scenario = Scenario::from_toml(&r.str()?)?;
    let mut trainer = Trainer::new(config, scenario.network()?, scenario.flow.clone())?;
    let count = r.u32()? as usize;
    let mut stored = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.str()?;
        let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
        let n = rows * cols;
        let read = |r: &mut Reader| (0..n).map(|_| r.f64()).collect::<Result<Vec<f64>, LabError>>();
        let (value, m, v) = (read(&mut r)?, read(&mut r)?, read(&mut r)?);
        stored.push((name, rows, cols, value, m, v));
    }
    if r.pos != bytes.len() {
        return Err(LabError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let mut it = stored.into_iter();
    let mut mismatch = None;
    let mut assign = |p: &mut tsc_core::nn::Param| {
        match it.next() {
            Some((name, rows, cols, value, m, v)) if name == p.name && (rows, cols) == p.value.shape() => {
                p.value.data = value;
                p.m = m;
                p.v = v;
            }
            Some((name, rows, cols, ..)) => {
                mismatch.get_or_insert(format!("expected {} {:?}, found {name} ({rows}, {cols})", p.name, p.value.shape()));
            }
            None => {
                mismatch.get_or_insert(format!("missing parameter {}", p.name));
            }
        }
    };
    trainer.meta.visit_mut(&mut assign);
    trainer.sub.visit_mut(&mut assign);
    if let Some(msg) = mismatch {
        return Err(LabError::Checkpoint(msg));
    }
    if it.next().is_some() {
        return Err(LabError::Checkpoint("more parameters than the model has".into()));
    }
    trainer.episode = episode;
    trainer.lr_halved = lr_halved;
    trainer.meta_opt = meta_opt;
    trainer.sub_opt = sub_opt;
    trainer.scales = scales;
    Ok((trainer, scenario))
}

pub fn save(path: &Path, trainer: &Trainer, scenario: &Scenario) -> Result<(), LabError> {
    crate::output::write_file(path, &encode(trainer, scenario))
}

pub fn load(path: &Path) -> Result<(Trainer, Scenario), LabError> {
    let bytes = std::fs::read(path).map_err(|e| LabError::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::ScenarioKind;
    use tsc_core::sim::FlowPattern;

    fn small() -> (Trainer, Scenario) {
        let scenario = Scenario::generate(ScenarioKind::Grid2x2, FlowPattern::Constant, 1);
        let mut config = TrainConfig { seed: 5, ..TrainConfig::default() };
        config.meta.lstm_hidden = 6;
        config.meta.lstm_layers = 1;
        config.meta.ff_dim = 5;
        let mut t = Trainer::new(config, scenario.network().unwrap(), scenario.flow.clone()).unwrap();
        t.episode = 7;
        t.lr_halved = true;
        t.sub_opt.step = 11;
        t.scales.observe(3.5, 1.25);
        t.sub.visit_mut(&mut |p| {
            for (k, m) in p.m.iter_mut().enumerate() {
                *m = k as f64 * 1e-3 + 0.1f64.sqrt();
            }
        });
        (t, scenario)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (t, s) = small();
        let bytes = encode(&t, &s);
        let (back, s2) = decode(&bytes).unwrap();
        assert_eq!(s2, s);
        assert_eq!(encode(&back, &s2), bytes);
        assert_eq!(back.config, t.config);
        assert_eq!(back.scales, t.scales);
        assert_eq!((back.episode, back.lr_halved, back.sub_opt, back.meta_opt), (7, true, t.sub_opt, t.meta_opt));
        let bits = |tr: &Trainer| tr.sub.flat_values().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&t));
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let (t, s) = small();
        let bytes = encode(&t, &s);
        assert!(matches!(decode(&bytes[..bytes.len() - 3]), Err(LabError::Checkpoint(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(LabError::Checkpoint(_))));
        let mut old = bytes.clone();
        old[4..8].copy_from_slice(&9u32.to_le_bytes());
        assert!(matches!(decode(&old), Err(LabError::Version(_))));
        let mut extra = bytes;
        extra.push(0);
        assert!(matches!(decode(&extra), Err(LabError::Checkpoint(_))));
    }
}
