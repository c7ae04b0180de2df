//! Momentum SGD on the noise-prediction loss, checkpoints and loss curves.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::diffusion::{example_gradient, example_loss, noise_example, NoisedExample};
use super::network::{NetConfig, NoisePredictor};
use super::schedule::NoiseSchedule;
use crate::dataset::PlanSample;
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch: 64,
            lr: 1e-3,
            momentum: 0.9,
            seed: 0,
        }
    }
}

/// Examples per gradient chunk; chunks are summed in index order so the
/// result does not depend on the thread count.
const CHUNK: usize = 8;

fn batch_gradient(model: &NoisePredictor, batch: &[NoisedExample]) -> Result<(f64, Vec<f64>)> {
    let weight = 1.0 / batch.len() as f64;
    let parts: Vec<Result<(f64, Vec<f64>)>> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = vec![0.0; model.params.len()];
            let mut l = 0.0;
            for ex in chunk {
                l += example_gradient(model, ex, weight, &mut g)?;
            }
            Ok((l, g))
        })
        .collect();
    let mut total = 0.0;
    let mut grad = vec![0.0; model.params.len()];
    for p in parts {
        let (l, g) = p?;
        total += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((total * weight, grad))
}

/// Loss on a fixed set of noise draws, so epochs are comparable.
pub fn evaluate(model: &NoisePredictor, set: &[NoisedExample]) -> Result<f64> {
    let losses: Vec<Result<f64>> = set.par_iter().map(|ex| example_loss(model, ex)).collect();
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / set.len() as f64)
}

pub fn evaluation_set(data: &[PlanSample], schedule: &NoiseSchedule, seed: u64) -> Result<Vec<NoisedExample>> {
    let mut r = rng::child(seed, &[0xe7a1]);
    data.iter().map(|s| noise_example(s, schedule, &mut r)).collect()
}

/// Trains in place. The returned curve has `epochs + 1` entries: the loss on
/// a fixed evaluation draw before training and after every epoch.
pub fn train(model: &mut NoisePredictor, data: &[PlanSample], schedule: &NoiseSchedule, cfg: &TrainConfig) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if cfg.batch == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    let eval = evaluation_set(data, schedule, cfg.seed)?;
    let mut curve = vec![evaluate(model, &eval)?];
    let mut velocity = vec![0.0; model.params.len()];
    let mut r = rng::child(cfg.seed, &[0x7a1]);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut batch_id = 0usize;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut r);
        for idx in order.chunks(cfg.batch) {
            let batch: Vec<NoisedExample> = idx
                .iter()
                .map(|&i| noise_example(&data[i], schedule, &mut r))
                .collect::<Result<_>>()?;
            let (l, grad) = batch_gradient(model, &batch)?;
            if !l.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss(batch_id));
            }
            for ((p, v), g) in model.params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = cfg.momentum * *v - cfg.lr * g;
                *p += *v;
            }
            batch_id += 1;
        }
        let l = evaluate(model, &eval)?;
        if !l.is_finite() {
            return Err(Error::NonFiniteLoss(batch_id));
        }
        curve.push(l);
    }
    Ok(curve)
}

pub fn write_loss_curve<W: Write>(out: W, curve: &[f64]) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        epoch: usize,
        mean_loss: f64,
    }
    let mut w = csv::Writer::from_writer(out);
    for (epoch, &mean_loss) in curve.iter().enumerate() {
        w.serialize(Row { epoch, mean_loss })?;
    }
    w.flush()?;
    Ok(())
}

const MAGIC: &[u8; 8] = b"OAVPLAN1";

/// Everything needed to rebuild a sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: NoisePredictor,
    pub k: usize,
    pub horizon: usize,
}

impl Checkpoint {
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let c = &self.model.config;
        out.write_all(MAGIC)?;
        for v in [c.traj_dim, c.cond_dim, c.time_dim, c.hidden, self.k, self.horizon] {
            out.write_all(&(v as u32).to_le_bytes())?;
        }
        out.write_all(&(self.model.params.len() as u64).to_le_bytes())?;
        for p in &self.model.params {
            out.write_all(&p.to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut input: R) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("wrong magic"));
        }
        let mut u32s = [0usize; 6];
        for v in &mut u32s {
            let mut b = [0u8; 4];
            input.read_exact(&mut b).map_err(|_| bad("truncated header"))?;
            *v = u32::from_le_bytes(b) as usize;
        }
        let [traj_dim, cond_dim, time_dim, hidden, k, horizon] = u32s;
        let config = NetConfig {
            traj_dim,
            cond_dim,
            time_dim,
            hidden,
        };
        let mut b = [0u8; 8];
        input.read_exact(&mut b).map_err(|_| bad("truncated header"))?;
        let n = u64::from_le_bytes(b) as usize;
        if n != config.param_count() {
            return Err(bad("parameter count does not match dimensions"));
        }
        let mut params = Vec::with_capacity(n);
        for _ in 0..n {
            input.read_exact(&mut b).map_err(|_| bad("truncated parameters"))?;
            params.push(f64::from_le_bytes(b));
        }
        let mut rest = Vec::new();
        input.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self {
            model: NoisePredictor::from_params(config, params)?,
            k,
            horizon,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.write(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::schedule::build_schedule;

    fn tiny() -> NetConfig {
        NetConfig {
            traj_dim: 4,
            cond_dim: 3,
            time_dim: 4,
            hidden: 8,
        }
    }

    #[test]
    fn checkpoint_roundtrip_and_corruption() {
        let ck = Checkpoint {
            model: NoisePredictor::new(tiny(), &mut rng::seeded(1)),
            k: 50,
            horizon: 2,
        };
        let mut buf = Vec::new();
        ck.write(&mut buf).unwrap();
        assert_eq!(&buf[..8], b"OAVPLAN1");
        assert_eq!(buf.len(), 8 + 24 + 8 + 8 * tiny().param_count());
        assert_eq!(Checkpoint::read(&buf[..]).unwrap(), ck);
        assert!(Checkpoint::read(&buf[..buf.len() - 1]).is_err());
        let mut wrong = buf.clone();
        wrong[0] = b'X';
        assert!(matches!(Checkpoint::read(&wrong[..]), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn zero_learning_rate_keeps_the_curve_flat() {
        let data = crate::dataset::generate_samples(&crate::dataset::DatasetConfig {
            n: 6,
            seed: 2,
            ..Default::default()
        })
        .unwrap();
        let s = build_schedule(10).unwrap();
        let mut net = NoisePredictor::new(NetConfig::default(), &mut rng::seeded(3));
        let cfg = TrainConfig {
            epochs: 3,
            batch: 4,
            lr: 0.0,
            ..TrainConfig::default()
        };
        let curve = train(&mut net, &data, &s, &cfg).unwrap();
        assert_eq!(curve.len(), 4);
        assert!(curve.windows(2).all(|w| w[0] == w[1]));
        let mut buf = Vec::new();
        write_loss_curve(&mut buf, &curve).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("epoch,mean_loss\n0,"));
    }
}
