use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lsa::{attend, attention_cost, AttnVariant, ShiftSpec};
use crate::numerics::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub frames: usize,
    pub tokens: usize,
    pub dim: usize,
    pub variant: String,
    pub macs: u64,
    pub median_ms: f64,
    /// Fastest repeat, the least disturbed by other load.
    pub min_ms: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Attention core only (no projections): global attention over all `L*N`
/// tokens of a clip versus per-frame attention over the frame plus its
/// shifted composite.
fn run_core(q: &Tensor<f32>, k: &Tensor<f32>, v: &Tensor<f32>, l: usize, n: usize, d: usize, variant: AttnVariant) -> Result<Tensor<f32>> {
    match variant {
        AttnVariant::GlobalSt => attend(&q.reshape(&[1, l * n, d])?, &k.reshape(&[1, l * n, d])?, &v.reshape(&[1, l * n, d])?),
        AttnVariant::Framewise => attend(q, k, v),
        AttnVariant::Lsa(spec) => {
            let rows = spec.gather_rows(1, l, n);
            let kv = |t: &Tensor<f32>| -> Result<Tensor<f32>> {
                let c = t.reshape(&[l * n, d])?.index_select(&rows)?.reshape(&[l, n, d])?;
                Tensor::concat(&[t.clone(), c], 1)
            };
            attend(q, &kv(k)?, &kv(v)?)
        }
    }
}

/// Analytic MACs and median wall-clock of global versus latent-shift
/// attention for each clip length in `lengths`.
pub fn bench_attention(lengths: &[usize], n: usize, d: usize, repeats: usize, spec: ShiftSpec, seed: u64) -> Result<Vec<BenchRow>> {
    if lengths.is_empty() || lengths.contains(&0) || n == 0 || d == 0 || repeats == 0 {
        return Err(Error::Config("benchmark sizes and repeats must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for &l in lengths {
        let q = Tensor::<f32>::randn(&[l, n, d], &mut rng);
        let k = Tensor::<f32>::randn(&[l, n, d], &mut rng);
        let v = Tensor::<f32>::randn(&[l, n, d], &mut rng);
        let variants = [AttnVariant::GlobalSt, AttnVariant::Lsa(spec)];
        let mut times = vec![Vec::with_capacity(repeats); variants.len()];
        for variant in variants {
            // One untimed warm-up run.
            run_core(&q, &k, &v, l, n, d, variant)?;
        }
        // Interleaved so background load hits both variants alike.
        for _ in 0..repeats {
            for (i, &variant) in variants.iter().enumerate() {
                let start = Instant::now();
                let y = run_core(&q, &k, &v, l, n, d, variant)?;
                times[i].push(start.elapsed().as_secs_f64() * 1e3);
                std::hint::black_box(y);
            }
        }
        for (variant, t) in variants.into_iter().zip(times) {
            out.push(BenchRow {
                frames: l,
                tokens: n,
                dim: d,
                variant: variant.name().to_string(),
                macs: attention_cost(l as u64, n as u64, d as u64, variant),
                min_ms: t.iter().copied().fold(f64::INFINITY, f64::min),
                median_ms: median(t),
            });
        }
    }
    Ok(out)
}
