//! Randomized-time Euler-Maruyama sampling of terminal values.
//!
//! On the grid `kh` the scheme reads
//!
//! ```text
//! X_{(k+1)h} = X_{kh} + (W_{(k+1)h} - W_{kh}) + b(delta_k, X_{kh}) h,
//! ```
//!
//! where `delta_k` is uniform on `[kh, (k+1)h]` and independent of everything
//! else. Every sample `i` owns a ChaCha8 stream selected by `(master_seed, i)`,
//! so results do not depend on how samples are spread across threads.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{DriftSpec, InitialState, SdeProblem};

const CHUNK: usize = 1024;

/// Magic bytes of the binary endpoint dump.
pub const DUMP_MAGIC: &[u8; 4] = b"TVE1";

#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub problem: SdeProblem,
    pub h: f64,
    pub n_samples: usize,
    pub master_seed: u64,
    pub record_paths: bool,
}

impl SamplerConfig {
    pub fn new(problem: SdeProblem, h: f64, n_samples: usize, master_seed: u64) -> Result<Self> {
        let cfg = SamplerConfig {
            problem,
            h,
            n_samples,
            master_seed,
            record_paths: false,
        };
        cfg.n_steps()?;
        if n_samples == 0 {
            return Err(Error::domain("need at least one sample"));
        }
        Ok(cfg)
    }

    pub fn with_paths(mut self, record: bool) -> Self {
        self.record_paths = record;
        self
    }

    /// `T / h`, which must be a positive integer.
    pub fn n_steps(&self) -> Result<usize> {
        steps_for(self.problem.horizon, self.h)
    }

    pub fn dimension(&self) -> usize {
        self.problem.drift.dimension()
    }
}

pub(crate) fn steps_for(horizon: f64, h: f64) -> Result<usize> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::domain(format!("time step must be positive, got {h}")));
    }
    if h > horizon {
        return Err(Error::domain(format!("time step {h} exceeds horizon {horizon}")));
    }
    let ratio = horizon / h;
    let n = ratio.round();
    if (ratio - n).abs() > 1e-9 * ratio {
        return Err(Error::domain(format!("T/h = {ratio} is not an integer")));
    }
    Ok(n as usize)
}

/// Per-sample noise source: for each step, `d` standard normals followed by
/// one standard uniform for the randomized time.
pub struct StepNoise {
    rng: ChaCha8Rng,
}

impl StepNoise {
    pub fn for_stream(master_seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(stream);
        StepNoise { rng }
    }

    /// Fills `gaussian` and returns the uniform.
    #[inline]
    pub fn next_step(&mut self, gaussian: &mut [f64]) -> f64 {
        for g in gaussian.iter_mut() {
            *g = self.rng.sample(StandardNormal);
        }
        self.rng.random::<f64>()
    }

    #[inline]
    fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    #[inline]
    fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }
}

/// One step of the scheme: `x + sqrt(h) g + b(kh + h u, x) h`.
pub fn step(x: &[f64], k: usize, h: f64, gaussian: &[f64], uniform: f64, drift: &DriftSpec) -> Result<Vec<f64>> {
    let d = drift.dimension();
    if x.len() != d || gaussian.len() != d {
        return Err(Error::domain("state and noise dimensions must match the drift"));
    }
    if x.iter().chain(gaussian).any(|v| !v.is_finite()) || !uniform.is_finite() {
        return Err(Error::domain("step inputs must be finite"));
    }
    if !(h > 0.0) {
        return Err(Error::domain("time step must be positive"));
    }
    if !(0.0..=1.0).contains(&uniform) {
        return Err(Error::domain("uniform draw must lie in [0, 1]"));
    }
    let t = (k as f64 + uniform) * h;
    let mut b = vec![0.0; d];
    drift.eval_into(t, x, &mut b);
    let sh = h.sqrt();
    Ok((0..d).map(|i| x[i] + sh * gaussian[i] + b[i] * h).collect())
}

/// Terminal values of `N` independent runs of the scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointSample {
    /// Row-major `N x d`.
    pub values: Vec<f64>,
    pub dimension: usize,
    pub h: f64,
    pub horizon: f64,
    pub master_seed: u64,
    /// Row-major `N x (T/h + 1) x d` grid points, when requested.
    pub paths: Option<Vec<f64>>,
}

impl EndpointSample {
    pub fn len(&self) -> usize {
        self.values.len() / self.dimension
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.values[i * self.dimension..(i + 1) * self.dimension]
    }

    /// Path of sample `i` at grid points `0, h, ..., T`.
    pub fn path(&self, i: usize) -> Option<&[f64]> {
        let paths = self.paths.as_ref()?;
        let per = paths.len() / self.len();
        Some(&paths[i * per..(i + 1) * per])
    }

    /// Little-endian dump: 32-byte header `{"TVE1", d: u32, N: u64, h: f64,
    /// T: f64}` followed by the `N x d` values.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(DUMP_MAGIC)?;
        w.write_all(&(self.dimension as u32).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&self.h.to_le_bytes())?;
        w.write_all(&self.horizon.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()
    }

    pub fn save_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_binary(std::io::BufWriter::new(f))
            .map_err(|e| Error::io(path, e))
    }

    /// Reads a dump written by [`EndpointSample::write_binary`]. The seed is
    /// not stored and comes back as zero.
    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; 32];
        r.read_exact(&mut header)
            .map_err(|e| Error::domain(format!("truncated header: {e}")))?;
        if &header[0..4] != DUMP_MAGIC {
            return Err(Error::domain("bad magic, expected TVE1"));
        }
        let d = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
        let n = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
        let h = f64::from_le_bytes(header[16..24].try_into().unwrap());
        let horizon = f64::from_le_bytes(header[24..32].try_into().unwrap());
        if d == 0 {
            return Err(Error::domain("dimension 0 in dump header"));
        }
        let count = n.checked_mul(d).ok_or(Error::Capacity { requested: usize::MAX })?;
        let mut values = Vec::new();
        values
            .try_reserve_exact(count)
            .map_err(|_| Error::Capacity { requested: count })?;
        let mut buf = [0u8; 8];
        for _ in 0..count {
            r.read_exact(&mut buf)
                .map_err(|e| Error::domain(format!("truncated body: {e}")))?;
            values.push(f64::from_le_bytes(buf));
        }
        Ok(EndpointSample {
            values,
            dimension: d,
            h,
            horizon,
            master_seed: 0,
            paths: None,
        })
    }
}

fn alloc(count: usize) -> Result<Vec<f64>> {
    let mut v = Vec::new();
    v.try_reserve_exact(count)
        .map_err(|_| Error::Capacity { requested: count })?;
    v.resize(count, 0.0);
    Ok(v)
}

/// Draws the initial state for one sample.
fn initial_state(start: &InitialState, noise: &mut StepNoise, out: &mut [f64]) {
    match start {
        InitialState::Point(x0) => out.copy_from_slice(x0),
        InitialState::Density(grid) => {
            // Inverse CDF of the trapezoid cell masses, uniform within a cell.
            let u = noise.uniform() * grid.mass();
            let v = grid.values();
            let dx = grid.spacing();
            let mut acc = 0.0;
            let mut x = grid.x_max();
            for i in 0..v.len() - 1 {
                let cell = 0.5 * (v[i] + v[i + 1]) * dx;
                if acc + cell >= u && cell > 0.0 {
                    x = grid.abscissa(i) + dx * ((u - acc) / cell).clamp(0.0, 1.0);
                    break;
                }
                acc += cell;
            }
            out[0] = x;
        }
    }
}

/// Runs one sample from its stream, writing the terminal state and, if
/// `path` is given, every grid point.
fn run_one(
    problem: &SdeProblem,
    h: f64,
    n_steps: usize,
    noise: &mut StepNoise,
    out: &mut [f64],
    mut path: Option<&mut [f64]>,
) {
    let drift = &problem.drift;
    let d = drift.dimension();
    let sh = h.sqrt();
    initial_state(&problem.start, noise, out);
    if let Some(p) = path.as_deref_mut() {
        p[..d].copy_from_slice(out);
    }
    if d == 1 {
        let mut x = out[0];
        for k in 0..n_steps {
            let g = noise.normal();
            let u = noise.uniform();
            let t = (k as f64 + u) * h;
            x += sh * g + drift.eval_scalar(t, x) * h;
            if let Some(p) = path.as_deref_mut() {
                p[k + 1] = x;
            }
        }
        out[0] = x;
    } else {
        let mut g = vec![0.0; d];
        let mut b = vec![0.0; d];
        for k in 0..n_steps {
            let u = noise.next_step(&mut g);
            let t = (k as f64 + u) * h;
            drift.eval_into(t, out, &mut b);
            for i in 0..d {
                out[i] += sh * g[i] + b[i] * h;
            }
            if let Some(p) = path.as_deref_mut() {
                p[(k + 1) * d..(k + 2) * d].copy_from_slice(out);
            }
        }
    }
}

/// `N` i.i.d. terminal values `X^h_T`. Sample `i` uses stream `i` of
/// `master_seed`; output is identical for any thread count.
pub fn sample_endpoints(cfg: &SamplerConfig) -> Result<EndpointSample> {
    let n_steps = cfg.n_steps()?;
    let d = cfg.dimension();
    let n = cfg.n_samples;
    let mut values = alloc(n.checked_mul(d).ok_or(Error::Capacity { requested: usize::MAX })?)?;
    let per_path = (n_steps + 1) * d;
    let mut paths = if cfg.record_paths {
        Some(alloc(
            n.checked_mul(per_path)
                .ok_or(Error::Capacity { requested: usize::MAX })?,
        )?)
    } else {
        None
    };
    let run = |base: usize, chunk: &mut [f64], path_chunk: Option<&mut [f64]>| {
        let mut path_chunk = path_chunk;
        for (j, out) in chunk.chunks_mut(d).enumerate() {
            let i = base + j;
            let mut noise = StepNoise::for_stream(cfg.master_seed, i as u64);
            let p = path_chunk
                .as_deref_mut()
                .map(|pc| &mut pc[j * per_path..(j + 1) * per_path]);
            run_one(&cfg.problem, cfg.h, n_steps, &mut noise, out, p);
        }
    };
    match paths.as_mut() {
        None => values
            .par_chunks_mut(CHUNK * d)
            .enumerate()
            .for_each(|(c, chunk)| run(c * CHUNK, chunk, None)),
        Some(p) => values
            .par_chunks_mut(CHUNK * d)
            .zip(p.par_chunks_mut(CHUNK * per_path))
            .enumerate()
            .for_each(|(c, (chunk, pc))| run(c * CHUNK, chunk, Some(pc))),
    }
    Ok(EndpointSample {
        values,
        dimension: d,
        h: cfg.h,
        horizon: cfg.problem.horizon,
        master_seed: cfg.master_seed,
        paths,
    })
}

/// How the `h` and `h/2` samples of [`coupled_endpoints`] relate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Coupling {
    /// Both resolutions are driven by the same Brownian path: every coarse
    /// increment is the sum of the two fine increments it spans. The
    /// randomized times are drawn separately per resolution.
    #[default]
    SharedBrownian,
    /// Fully independent streams per resolution.
    Independent,
}

/// Terminal samples at steps `h` and `h/2`, `N` each.
pub fn coupled_endpoints(cfg: &SamplerConfig, coupling: Coupling) -> Result<(EndpointSample, EndpointSample)> {
    let n_coarse = cfg.n_steps()?;
    let half = cfg.h / 2.0;
    steps_for(cfg.problem.horizon, half)?;
    if cfg.record_paths {
        return Err(Error::domain("path recording is not supported for coupled sampling"));
    }
    match coupling {
        Coupling::Independent => {
            let coarse = SamplerConfig {
                master_seed: derive_seed(cfg.master_seed, 0xC0A2_5E00),
                ..cfg.clone()
            };
            let fine = SamplerConfig {
                h: half,
                master_seed: derive_seed(cfg.master_seed, 0xF17E_0001),
                ..cfg.clone()
            };
            let mut a = sample_endpoints(&coarse)?;
            let mut b = sample_endpoints(&fine)?;
            a.master_seed = cfg.master_seed;
            b.master_seed = cfg.master_seed;
            Ok((a, b))
        }
        Coupling::SharedBrownian => {
            let d = cfg.dimension();
            let n = cfg.n_samples;
            let count = n.checked_mul(d).ok_or(Error::Capacity { requested: usize::MAX })?;
            let mut coarse = alloc(count)?;
            let mut fine = alloc(count)?;
            coarse
                .par_chunks_mut(CHUNK * d)
                .zip(fine.par_chunks_mut(CHUNK * d))
                .enumerate()
                .for_each(|(c, (cc, fc))| {
                    for (j, (xc, xf)) in cc.chunks_mut(d).zip(fc.chunks_mut(d)).enumerate() {
                        let i = (c * CHUNK + j) as u64;
                        let mut noise = StepNoise::for_stream(cfg.master_seed, i);
                        run_coupled(&cfg.problem, cfg.h, n_coarse, &mut noise, xc, xf);
                    }
                });
            let make = |values, h| EndpointSample {
                values,
                dimension: d,
                h,
                horizon: cfg.problem.horizon,
                master_seed: cfg.master_seed,
                paths: None,
            };
            Ok((make(coarse, cfg.h), make(fine, half)))
        }
    }
}

fn run_coupled(problem: &SdeProblem, h: f64, n_coarse: usize, noise: &mut StepNoise, xc: &mut [f64], xf: &mut [f64]) {
    let drift = &problem.drift;
    let d = drift.dimension();
    let hh = 0.5 * h;
    let sh = hh.sqrt();
    initial_state(&problem.start, noise, xc);
    xf.copy_from_slice(xc);
    if d == 1 {
        let (mut c, mut f) = (xc[0], xf[0]);
        for k in 0..n_coarse {
            let g1 = noise.normal();
            let g2 = noise.normal();
            let uc = noise.uniform();
            let u1 = noise.uniform();
            let u2 = noise.uniform();
            c += sh * (g1 + g2) + drift.eval_scalar((k as f64 + uc) * h, c) * h;
            f += sh * g1 + drift.eval_scalar((2.0 * k as f64 + u1) * hh, f) * hh;
            f += sh * g2 + drift.eval_scalar((2.0 * k as f64 + 1.0 + u2) * hh, f) * hh;
        }
        xc[0] = c;
        xf[0] = f;
    } else {
        let mut g1 = vec![0.0; d];
        let mut g2 = vec![0.0; d];
        let mut b = vec![0.0; d];
        for k in 0..n_coarse {
            let u1 = noise.next_step(&mut g1);
            let u2 = noise.next_step(&mut g2);
            let uc = noise.uniform();
            drift.eval_into((k as f64 + uc) * h, xc, &mut b);
            for i in 0..d {
                xc[i] += sh * (g1[i] + g2[i]) + b[i] * h;
            }
            drift.eval_into((2.0 * k as f64 + u1) * hh, xf, &mut b);
            for i in 0..d {
                xf[i] += sh * g1[i] + b[i] * hh;
            }
            drift.eval_into((2.0 * k as f64 + 1.0 + u2) * hh, xf, &mut b);
            for i in 0..d {
                xf[i] += sh * g2[i] + b[i] * hh;
            }
        }
    }
}

/// SplitMix64 finalizer applied to `seed ^ tag`; used to derive run and
/// resolution seeds from a master seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
