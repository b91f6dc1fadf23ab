//! Synthetic end-to-end delay samples `Y = AX`.
//!
//! Every path gets its own random stream: the master seed initializes a
//! ChaCha8 generator and path `i` (0-based) uses stream `i + 1`. Paths never
//! share link draws, which mirrors asynchronous probing of distinct paths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::model::{GhMix, RoutingMatrix};

const INVERSE_CDF_TOL: f64 = 1e-12;

/// Precomputed sampler for one mix.
#[derive(Debug, Clone)]
pub struct MixSampler {
    mix: GhMix,
    cumulative: Vec<f64>,
}

impl MixSampler {
    pub fn new(mix: &GhMix) -> Self {
        let mut acc = 0.0;
        let cumulative = mix
            .weights()
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        MixSampler {
            mix: mix.clone(),
            cumulative,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.mix.is_hyperexponential() {
            let u: f64 = rng.random::<f64>() * self.cumulative[self.cumulative.len() - 1];
            let stage = self
                .cumulative
                .iter()
                .position(|&c| u < c)
                .unwrap_or(self.cumulative.len() - 1);
            let e: f64 = Exp1.sample(rng);
            e / self.mix.rates()[stage]
        } else {
            self.inverse_cdf(rng.random::<f64>())
        }
    }

    // Bisection on the CDF; used for mixes with signed weights.
    fn inverse_cdf(&self, u: f64) -> f64 {
        let mut hi = 1.0 / self.mix.rates().iter().cloned().fold(f64::INFINITY, f64::min);
        while self.mix.cdf_unchecked(hi) < u {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        while hi - lo > INVERSE_CDF_TOL * hi.max(1.0) {
            let mid = 0.5 * (lo + hi);
            if self.mix.cdf_unchecked(mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// One draw from `mix`.
pub fn sample_mix<R: Rng + ?Sized>(mix: &GhMix, rng: &mut R) -> f64 {
    MixSampler::new(mix).sample(rng)
}

/// Exponential link with the given mean.
pub fn sample_exponential<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> f64 {
    let e: f64 = Exp1.sample(rng);
    e * mean
}

/// Samples of one path, 0-based path index.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSamples {
    pub path: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub seed: Option<u64>,
    pub paths: Vec<PathSamples>,
}

impl SampleSet {
    pub fn for_path(&self, path: usize) -> Option<&[f64]> {
        self.paths
            .iter()
            .find(|p| p.path == path)
            .map(|p| p.values.as_slice())
    }

    pub fn counts(&self) -> Vec<usize> {
        self.paths.iter().map(|p| p.values.len()).collect()
    }
}

/// Random stream for path `path` under `seed`.
pub fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64 + 1);
    rng
}

fn check_sizes(matrix: &RoutingMatrix, links: usize, count: usize) -> Result<()> {
    if count == 0 {
        return Err(Error::Domain("sample count must be at least 1".into()));
    }
    if links != matrix.num_links() {
        return Err(Error::Dimension(format!(
            "{} link distributions for {} links",
            links,
            matrix.num_links()
        )));
    }
    Ok(())
}

fn generate<F>(matrix: &RoutingMatrix, count: usize, seed: u64, draw: F) -> SampleSet
where
    F: Fn(usize, &mut ChaCha8Rng) -> f64 + Sync,
{
    let paths = (0..matrix.num_paths())
        .into_par_iter()
        .map(|i| {
            let links = matrix.path_links(i);
            let mut rng = path_rng(seed, i);
            let values = (0..count)
                .map(|_| links.iter().map(|&j| draw(j, &mut rng)).sum())
                .collect();
            PathSamples { path: i, values }
        })
        .collect();
    SampleSet {
        seed: Some(seed),
        paths,
    }
}

/// `count` IID samples of every path delay `Y_i = Σ_{j ∈ p_i} X_j`.
pub fn sample_paths(
    matrix: &RoutingMatrix,
    mixes: &[GhMix],
    count: usize,
    seed: u64,
) -> Result<SampleSet> {
    check_sizes(matrix, mixes.len(), count)?;
    let samplers: Vec<MixSampler> = mixes.iter().map(MixSampler::new).collect();
    Ok(generate(matrix, count, seed, |j, rng| samplers[j].sample(rng)))
}

/// Same as [`sample_paths`] for exponential links given by their means.
pub fn sample_paths_exponential(
    matrix: &RoutingMatrix,
    means: &[f64],
    count: usize,
    seed: u64,
) -> Result<SampleSet> {
    check_sizes(matrix, means.len(), count)?;
    Ok(generate(matrix, count, seed, |j, rng| {
        sample_exponential(means[j], rng)
    }))
}

/// Decimal rendering with 17 significant digits.
pub fn format_sample(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    let decimals = (16 - exp).max(0) as usize;
    format!("{v:.decimals$}")
}

/// Writes `path_id,sample_index,value` rows (1-based ids and indices).
pub fn write_samples_csv<W: Write>(out: W, paths: &[&PathSamples]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["path_id", "sample_index", "value"])?;
    for p in paths {
        let id = (p.path + 1).to_string();
        for (l, v) in p.values.iter().enumerate() {
            w.write_record([id.as_str(), &(l + 1).to_string(), &format_sample(*v)])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a samples CSV into 0-based path index → values ordered by sample index.
pub fn read_samples_csv<R: Read>(input: R) -> Result<BTreeMap<usize, Vec<f64>>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let expected = ["path_id", "sample_index", "value"];
    if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h.trim() != e) {
        return Err(Error::Parse(format!(
            "expected header path_id,sample_index,value, found {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse_err = |what: &str| Error::Parse(format!("row {}: bad {what}", line + 2));
        let path: usize = rec[0].trim().parse().map_err(|_| parse_err("path_id"))?;
        let idx: usize = rec[1].trim().parse().map_err(|_| parse_err("sample_index"))?;
        let value: f64 = rec[2].trim().parse().map_err(|_| parse_err("value"))?;
        if path == 0 {
            return Err(parse_err("path_id (ids start at 1)"));
        }
        rows.entry(path - 1).or_default().push((idx, value));
    }
    Ok(rows
        .into_iter()
        .map(|(p, mut v)| {
            v.sort_by_key(|&(i, _)| i);
            (p, v.into_iter().map(|(_, x)| x).collect())
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mgfest::empirical_mgf;

    fn expt1() -> (RoutingMatrix, Vec<GhMix>) {
        let rates = vec![5.0, 3.0, 1.0];
        let mixes = [[0.17, 0.80, 0.03], [0.13, 0.47, 0.40], [0.80, 0.15, 0.05]]
            .iter()
            .map(|w| GhMix::new(rates.clone(), w.to_vec()).unwrap())
            .collect();
        (
            RoutingMatrix::new(vec![vec![1, 1, 0], vec![1, 0, 1]]).unwrap(),
            mixes,
        )
    }

    #[test]
    fn exponential_mean() {
        let mix = GhMix::exponential(1.0).unwrap();
        let s = MixSampler::new(&mix);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 1_000_000;
        let mean = (0..n).map(|_| s.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.005, "{mean}");
    }

    #[test]
    fn hyperexponential_mean() {
        let (_, mixes) = expt1();
        let s = MixSampler::new(&mixes[0]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 1_000_000;
        let mean = (0..n).map(|_| s.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 0.33067).abs() < 0.01, "{mean}");
    }

    #[test]
    fn degenerate_weights_behave_as_single_exponential() {
        let mix = GhMix::new(vec![5.0, 3.0, 1.0], vec![1.0, 0.0, 0.0]).unwrap();
        let s = MixSampler::new(&mix);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws: Vec<f64> = (0..200_000).map(|_| s.sample(&mut rng)).collect();
        let m = empirical_mgf(&draws, 1.0).unwrap();
        assert!((m - 5.0 / 6.0).abs() < 0.01, "{m}");
    }

    #[test]
    fn signed_weights_use_inverse_cdf() {
        let mix = GhMix::new(vec![3.0, 5.0], vec![2.0, -1.0]).unwrap();
        assert!(!mix.is_hyperexponential());
        let s = MixSampler::new(&mix);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 200_000;
        let draws: Vec<f64> = (0..n).map(|_| s.sample(&mut rng)).collect();
        assert!(draws.iter().all(|&y| y >= 0.0));
        let mean = draws.iter().sum::<f64>() / n as f64;
        assert!((mean - mix.mean()).abs() < 0.01, "{mean} vs {}", mix.mean());
        let m = empirical_mgf(&draws, 2.0).unwrap();
        assert!((m - mix.mgf(2.0).unwrap()).abs() < 0.01);
    }

    #[test]
    fn path_sums_and_errors() {
        let (a, mixes) = expt1();
        let set = sample_paths(&a, &mixes, 200_000, 9).unwrap();
        assert_eq!(set.counts(), vec![200_000, 200_000]);
        let y1 = set.for_path(0).unwrap();
        let mean = y1.iter().sum::<f64>() / y1.len() as f64;
        let expect = mixes[0].mean() + mixes[1].mean();
        assert!((mean / expect - 1.0).abs() < 0.01);
        assert!(sample_paths(&a, &mixes, 0, 1).is_err());
        assert!(sample_paths(&a, &mixes[..2], 10, 1).is_err());
    }

    #[test]
    fn determinism_and_independent_streams() {
        let (a, mixes) = expt1();
        let s1 = sample_paths(&a, &mixes, 1000, 42).unwrap();
        let s2 = sample_paths(&a, &mixes, 1000, 42).unwrap();
        assert_eq!(s1, s2);
        let s3 = sample_paths(&a, &mixes, 1000, 43).unwrap();
        assert_ne!(s1, s3);
        assert_ne!(s1.paths[0].values, s1.paths[1].values);
    }

    #[test]
    fn csv_round_trip() {
        let set = SampleSet {
            seed: Some(1),
            paths: vec![
                PathSamples {
                    path: 0,
                    values: vec![0.1, 1.0 / 3.0, 12345.678901234567],
                },
                PathSamples {
                    path: 1,
                    values: vec![0.0, 2.5e-7],
                },
            ],
        };
        let mut buf = Vec::new();
        write_samples_csv(&mut buf, &set.paths.iter().collect::<Vec<_>>()).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("path_id,sample_index,value\n1,1,0.10000000000000001\n"));
        let back = read_samples_csv(buf.as_slice()).unwrap();
        assert_eq!(back[&0], set.paths[0].values);
        assert_eq!(back[&1], set.paths[1].values);
        assert!(read_samples_csv("a,b,c\n1,1,1\n".as_bytes()).is_err());
        assert!(read_samples_csv("path_id,sample_index,value\n1,1,x\n".as_bytes()).is_err());
    }

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(format_sample(1.0 / 3.0), "0.33333333333333331");
        assert_eq!(format_sample(123.0), "123.00000000000000");
        assert_eq!(format_sample(0.0), "0");
    }
}
