//! Seeded disturbance/noise generation and Monte-Carlo instance sets.
//!
//! Instance `i` of a set with master seed `m` draws from a ChaCha8 generator
//! seeded with `m` on stream `i`, so instances are independent of the order
//! in which they are generated. Within an instance the draw order is
//! `x₀`, then `w₀..w_{t_f−1}`, then `v₀..v_{t_f}`.

use std::io::Write;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::systems::{SystemModel, TrajectoryInstance};

/// Half-width of every truncation box, in standard deviations.
pub const TRUNCATION: f64 = 3.0;

/// Attempts at drawing an admissible instance before giving up.
const MAX_INSTANCE_ATTEMPTS: usize = 10_000;

#[derive(Debug, Error)]
pub enum StochasticsError {
    #[error("noise standard deviation must be positive and finite, got {0}")]
    BadSigma(f64),
    #[error("nominal probability must lie in (0, 1], got {0}")]
    BadProbability(f64),
    #[error("outlier scale must be at least 1, got {0}")]
    BadScale(f64),
    #[error("dimension mismatch: {what} has {got}, model expects {expected}")]
    Dimension {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("could not draw an admissible instance {index} after {attempts} attempts")]
    Inadmissible { index: usize, attempts: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    /// Identically zero.
    Zero,
    TruncGauss {
        sigma: f64,
    },
    /// Per scalar: with probability `p_nominal` a draw from the nominal
    /// component, otherwise from one with standard deviation `scale·sigma`.
    MixedTruncGauss {
        sigma: f64,
        #[serde(default = "default_outlier_scale")]
        scale: f64,
        p_nominal: f64,
    },
}

fn default_outlier_scale() -> f64 {
    10.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub dim: usize,
    #[serde(flatten)]
    pub kind: NoiseKind,
}

impl NoiseSpec {
    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            kind: NoiseKind::Zero,
        }
    }

    pub fn trunc_gauss(dim: usize, sigma: f64) -> Result<Self, StochasticsError> {
        Self {
            dim,
            kind: NoiseKind::TruncGauss { sigma },
        }
        .validated()
    }

    pub fn mixed(dim: usize, sigma: f64, p_nominal: f64) -> Result<Self, StochasticsError> {
        Self {
            dim,
            kind: NoiseKind::MixedTruncGauss {
                sigma,
                scale: default_outlier_scale(),
                p_nominal,
            },
        }
        .validated()
    }

    pub fn validated(self) -> Result<Self, StochasticsError> {
        let check_sigma = |s: f64| {
            if s > 0.0 && s.is_finite() {
                Ok(())
            } else {
                Err(StochasticsError::BadSigma(s))
            }
        };
        match self.kind {
            NoiseKind::Zero => {}
            NoiseKind::TruncGauss { sigma } => check_sigma(sigma)?,
            NoiseKind::MixedTruncGauss {
                sigma,
                scale,
                p_nominal,
            } => {
                check_sigma(sigma)?;
                if !(scale >= 1.0 && scale.is_finite()) {
                    return Err(StochasticsError::BadScale(scale));
                }
                if !(p_nominal > 0.0 && p_nominal <= 1.0) {
                    return Err(StochasticsError::BadProbability(p_nominal));
                }
            }
        }
        Ok(self)
    }

    /// Standard deviation of the nominal component (0 for `Zero`).
    pub fn sigma(&self) -> f64 {
        match self.kind {
            NoiseKind::Zero => 0.0,
            NoiseKind::TruncGauss { sigma } | NoiseKind::MixedTruncGauss { sigma, .. } => sigma,
        }
    }

    /// Largest magnitude any scalar sample can take.
    pub fn max_abs(&self) -> f64 {
        match self.kind {
            NoiseKind::Zero => 0.0,
            NoiseKind::TruncGauss { sigma } => TRUNCATION * sigma,
            NoiseKind::MixedTruncGauss { sigma, scale, .. } => TRUNCATION * sigma * scale,
        }
    }

    /// One scalar sample and whether it came from the outlier component.
    fn draw_scalar<R: Rng>(&self, rng: &mut R) -> (f64, bool) {
        match self.kind {
            NoiseKind::Zero => (0.0, false),
            NoiseKind::TruncGauss { sigma } => (truncated_normal(rng, sigma), false),
            NoiseKind::MixedTruncGauss {
                sigma,
                scale,
                p_nominal,
            } => {
                let nominal = rng.random::<f64>() < p_nominal;
                let s = if nominal { sigma } else { sigma * scale };
                (truncated_normal(rng, s), !nominal)
            }
        }
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_fn(self.dim, |_, _| self.draw_scalar(rng).0)
    }

    /// A vector whose entries all equal one scalar draw.
    pub fn draw_shared<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_element(self.dim, self.draw_scalar(rng).0)
    }
}

/// `σ·z` with `z ~ N(0,1)` conditioned on `|z| ≤ 3`, by rejection.
pub fn truncated_normal<R: Rng>(rng: &mut R, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= TRUNCATION {
            return sigma * z;
        }
    }
}

/// `count` independent samples from `spec`.
pub fn sample_noise(spec: &NoiseSpec, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| spec.draw(&mut rng)).collect()
}

/// As [`sample_noise`], also returning per-scalar outlier flags.
pub fn sample_noise_tagged(
    spec: &NoiseSpec,
    count: usize,
    seed: u64,
) -> (Vec<DVector<f64>>, Vec<Vec<bool>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let (vals, tags): (Vec<f64>, Vec<bool>) =
                (0..spec.dim).map(|_| spec.draw_scalar(&mut rng)).unzip();
            (DVector::from_vec(vals), tags)
        })
        .unzip()
}

/// Gaussian prior on the initial state, truncated per element at `±3σ₀`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialPrior {
    pub mean: DVector<f64>,
    pub sigma0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceSet {
    pub n: usize,
    pub t_f: usize,
    pub master_seed: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationOptions {
    /// All disturbance channels share one scalar sequence.
    pub identical_disturbances: bool,
    /// `w_t` and `v_t` are set to zero for every `t` after this time.
    pub quiet_after: Option<usize>,
}

/// Generator for instance `index` of a set with the given master seed.
pub fn instance_rng(master_seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index as u64);
    rng
}

pub fn generate_instances(
    model: &SystemModel,
    process: &NoiseSpec,
    meas: &NoiseSpec,
    init: &InitialPrior,
    set: &InstanceSet,
    identical_disturbances: bool,
) -> Result<Vec<TrajectoryInstance>, StochasticsError> {
    generate_instances_with(
        model,
        process,
        meas,
        init,
        set,
        &GenerationOptions {
            identical_disturbances,
            quiet_after: None,
        },
    )
}

/// Draws `set.n` instances. Draws whose state trajectory leaves the model's
/// admissible box are discarded and redrawn from the same stream.
pub fn generate_instances_with(
    model: &SystemModel,
    process: &NoiseSpec,
    meas: &NoiseSpec,
    init: &InitialPrior,
    set: &InstanceSet,
    opts: &GenerationOptions,
) -> Result<Vec<TrajectoryInstance>, StochasticsError> {
    let checks = [
        ("disturbance spec", process.dim, model.disturbance_dim()),
        ("measurement-noise spec", meas.dim, model.output_dim()),
        ("prior mean", init.mean.len(), model.state_dim()),
    ];
    for (what, got, expected) in checks {
        if got != expected {
            return Err(StochasticsError::Dimension {
                what,
                got,
                expected,
            });
        }
    }
    if !(init.sigma0 >= 0.0 && init.sigma0.is_finite()) {
        return Err(StochasticsError::BadSigma(init.sigma0));
    }
    (0..set.n)
        .map(|i| generate_one(model, process, meas, init, set, opts, i))
        .collect()
}

fn generate_one(
    model: &SystemModel,
    process: &NoiseSpec,
    meas: &NoiseSpec,
    init: &InitialPrior,
    set: &InstanceSet,
    opts: &GenerationOptions,
    index: usize,
) -> Result<TrajectoryInstance, StochasticsError> {
    let mut rng = instance_rng(set.master_seed, index);
    let quiet = |t: usize| opts.quiet_after.is_some_and(|q| t > q);
    for _ in 0..MAX_INSTANCE_ATTEMPTS {
        let x0 = DVector::from_fn(model.state_dim(), |j, _| {
            init.mean[j] + truncated_normal(&mut rng, init.sigma0)
        });
        let w: Vec<DVector<f64>> = (0..set.t_f)
            .map(|t| {
                let d = if opts.identical_disturbances {
                    process.draw_shared(&mut rng)
                } else {
                    process.draw(&mut rng)
                };
                if quiet(t) {
                    DVector::zeros(process.dim)
                } else {
                    d
                }
            })
            .collect();
        let v: Vec<DVector<f64>> = (0..=set.t_f)
            .map(|t| {
                let d = meas.draw(&mut rng);
                if quiet(t) {
                    DVector::zeros(meas.dim)
                } else {
                    d
                }
            })
            .collect();
        let x = model.simulate(&x0, &w);
        if !x.iter().all(|xt| model.admissible(xt)) {
            continue;
        }
        let y = x.iter().zip(&v).map(|(xt, vt)| model.h(xt) + vt).collect();
        return Ok(TrajectoryInstance {
            x,
            y,
            w,
            v,
            x0_prior: init.mean.clone(),
            seed: set.master_seed,
            stream: index as u64,
        });
    }
    Err(StochasticsError::Inadmissible {
        index,
        attempts: MAX_INSTANCE_ATTEMPTS,
    })
}

/// Writes instances as CSV with columns
/// `instance,t,x0..x{n-1},y0..y{p-1},w0..w{g-1},v0..v{p-1}`;
/// the disturbance cells are empty at `t = t_f`.
pub fn write_instances_csv<W: Write>(
    instances: &[TrajectoryInstance],
    writer: W,
) -> Result<(), StochasticsError> {
    let mut out = csv::Writer::from_writer(writer);
    let Some(first) = instances.first() else {
        out.flush()?;
        return Ok(());
    };
    let (n, p, g) = (first.x[0].len(), first.y[0].len(), first.w.first().map_or(0, |w| w.len()));
    let mut header = vec!["instance".to_string(), "t".to_string()];
    for (prefix, dim) in [("x", n), ("y", p), ("w", g), ("v", p)] {
        header.extend((0..dim).map(|j| format!("{prefix}{j}")));
    }
    out.write_record(&header)?;
    for (i, inst) in instances.iter().enumerate() {
        for t in 0..inst.x.len() {
            let mut row = vec![i.to_string(), t.to_string()];
            row.extend(inst.x[t].iter().map(|v| v.to_string()));
            row.extend(inst.y[t].iter().map(|v| v.to_string()));
            match inst.w.get(t) {
                Some(w) => row.extend(w.iter().map(|v| v.to_string())),
                None => row.extend(std::iter::repeat_n(String::new(), g)),
            }
            row.extend(inst.v[t].iter().map(|v| v.to_string()));
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{
        make_linear_example, make_reactor_example, linear_example_prior, reactor_example_prior,
    };

    fn std_dev(xs: &[f64]) -> f64 {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
    }

    #[test]
    fn truncated_gauss_statistics() {
        let spec = NoiseSpec::trunc_gauss(1, 0.1).unwrap();
        let xs: Vec<f64> = sample_noise(&spec, 10_000, 11).iter().map(|v| v[0]).collect();
        assert!(xs.iter().all(|x| x.abs() <= 0.3));
        let s = std_dev(&xs);
        assert!((0.090..=0.105).contains(&s), "std {s}");
    }

    #[test]
    fn degenerate_sigma_rejected() {
        assert!(matches!(
            NoiseSpec::trunc_gauss(1, 0.0),
            Err(StochasticsError::BadSigma(_))
        ));
        assert!(NoiseSpec::mixed(1, 0.1, 0.0).is_err());
        assert!(NoiseSpec::mixed(1, 0.1, 1.2).is_err());
    }

    #[test]
    fn mixture_regimes() {
        let spec = NoiseSpec::mixed(1, 0.1, 0.9).unwrap();
        let (xs, tags) = sample_noise_tagged(&spec, 10_000, 5);
        let nominal = tags.iter().filter(|t| !t[0]).count() as f64 / 1e4;
        assert!((nominal - 0.9).abs() <= 0.02, "nominal fraction {nominal}");
        let wide = xs.iter().filter(|x| x[0].abs() > 0.3).count();
        assert!(wide > 0);
        assert!(xs.iter().all(|x| x[0].abs() <= 3.0));
        for (x, t) in xs.iter().zip(&tags) {
            if !t[0] {
                assert!(x[0].abs() <= 0.3);
            }
        }
    }

    fn linear_set(seed: u64, identical: bool) -> Vec<TrajectoryInstance> {
        let m = make_linear_example();
        generate_instances(
            &m,
            &NoiseSpec::trunc_gauss(3, 0.2).unwrap(),
            &NoiseSpec::trunc_gauss(1, 0.1).unwrap(),
            &InitialPrior {
                mean: linear_example_prior(),
                sigma0: 1.0,
            },
            &InstanceSet {
                n: 2,
                t_f: 5,
                master_seed: seed,
            },
            identical,
        )
        .unwrap()
    }

    #[test]
    fn linear_instances_are_reproducible() {
        let a = linear_set(7, false);
        let b = linear_set(7, false);
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        assert_ne!(a[0].x[0], a[1].x[0]);
        let m = make_linear_example();
        for inst in &a {
            assert_eq!(inst.replay_error(&m), 0.0);
            assert_eq!(inst.x.len(), 6);
            assert_eq!(inst.w.len(), 5);
            for (x0, mu) in inst.x[0].iter().zip(linear_example_prior().iter()) {
                assert!((x0 - mu).abs() <= 3.0);
            }
        }
        assert_ne!(linear_set(8, false), a);
    }

    #[test]
    fn identical_disturbances_share_channels() {
        for inst in linear_set(3, true) {
            for w in &inst.w {
                assert_eq!(w[0], w[1]);
                assert_eq!(w[1], w[2]);
            }
        }
    }

    #[test]
    fn reactor_instances_admissible() {
        let m = make_reactor_example(0.1, 0.1).unwrap();
        let set = generate_instances(
            &m,
            &NoiseSpec::trunc_gauss(1, 0.001).unwrap(),
            &NoiseSpec::trunc_gauss(1, 0.01).unwrap(),
            &InitialPrior {
                mean: reactor_example_prior(),
                sigma0: 3.0,
            },
            &InstanceSet {
                n: 50,
                t_f: 60,
                master_seed: 1,
            },
            false,
        )
        .unwrap();
        for inst in &set {
            assert!(inst.x.iter().all(|x| m.admissible(x)));
            assert_eq!(inst.replay_error(&m), 0.0);
        }
    }

    #[test]
    fn quiet_tail_is_zero() {
        let m = make_linear_example();
        let set = generate_instances_with(
            &m,
            &NoiseSpec::trunc_gauss(3, 0.2).unwrap(),
            &NoiseSpec::trunc_gauss(1, 0.1).unwrap(),
            &InitialPrior {
                mean: linear_example_prior(),
                sigma0: 1.0,
            },
            &InstanceSet {
                n: 1,
                t_f: 10,
                master_seed: 2,
            },
            &GenerationOptions {
                identical_disturbances: false,
                quiet_after: Some(4),
            },
        )
        .unwrap();
        let inst = &set[0];
        assert!(inst.w[5..].iter().all(|w| w.iter().all(|&x| x == 0.0)));
        assert!(inst.v[5..].iter().all(|v| v[0] == 0.0));
        assert!(inst.w[4].iter().any(|&x| x != 0.0));
    }

    #[test]
    fn dimension_mismatch() {
        let m = make_linear_example();
        let err = generate_instances(
            &m,
            &NoiseSpec::trunc_gauss(2, 0.2).unwrap(),
            &NoiseSpec::trunc_gauss(1, 0.1).unwrap(),
            &InitialPrior {
                mean: linear_example_prior(),
                sigma0: 1.0,
            },
            &InstanceSet {
                n: 1,
                t_f: 3,
                master_seed: 0,
            },
            false,
        );
        assert!(matches!(err, Err(StochasticsError::Dimension { .. })));
    }

    #[test]
    fn csv_export_layout() {
        let set = linear_set(1, false);
        let mut buf = Vec::new();
        write_instances_csv(&set, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "instance,t,x0,x1,x2,y0,w0,w1,w2,v0");
        assert_eq!(text.lines().count(), 1 + 2 * 6);
        let last: Vec<&str> = text.lines().nth(6).unwrap().split(',').collect();
        assert_eq!(&last[..2], &["0", "5"]);
        assert!(last[6..9].iter().all(|c| c.is_empty()));
        assert!(!last[9].is_empty());
    }
}
