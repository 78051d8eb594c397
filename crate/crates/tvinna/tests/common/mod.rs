//! Fixtures and independent oracles shared by the integration tests.
//!
//! Everything here re-derives documented behavior from scratch, shaped
//! differently from the library code, so a bug in the implementation is
//! unlikely to be mirrored by the check.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tvinna::{Dtype, Tensor, TensorMap};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Float32 sum in the library's documented order: ascending by total
/// ordering, folded from zero.
pub fn total_order_sum(values: &[f32]) -> f32 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f32::total_cmp);
    let mut acc = 0.0f32;
    for v in sorted {
        acc += v;
    }
    acc
}

/// Mask of the ceil(density·n) largest-magnitude positions, preferring the
/// lower index when magnitudes tie.
pub fn oracle_keep_mask(values: &[f32], density: f32) -> Vec<bool> {
    let n = values.len();
    let keep = ((density as f64) * (n as f64)).ceil() as usize;
    let mut ranked: Vec<(f32, usize)> = values.iter().map(|v| v.abs()).zip(0..n).collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut mask = vec![false; n];
    for (_, idx) in ranked.into_iter().take(keep.min(n)) {
        mask[idx] = true;
    }
    mask
}

/// Scalar-loop TIES over one tensor: trim each weighted source, elect a
/// sign per element by total-order summation (zero elects positive), then
/// average the survivors that match the sign. `sources` pairs each weight
/// with that source's delta values.
pub fn oracle_ties(
    base: &[f32],
    sources: &[(f32, Vec<f32>)],
    density: f32,
    lambda: f32,
) -> Vec<f32> {
    let weighted: Vec<Vec<f32>> = sources
        .iter()
        .map(|(w, d)| d.iter().map(|x| w * x).collect())
        .collect();
    let masks: Vec<Vec<bool>> = weighted
        .iter()
        .map(|w| oracle_keep_mask(w, density))
        .collect();
    let mut out = Vec::with_capacity(base.len());
    for (j, b) in base.iter().enumerate() {
        let mut survivors = Vec::new();
        for (s, w) in weighted.iter().enumerate() {
            if masks[s][j] {
                survivors.push(w[j]);
            }
        }
        let electorate = total_order_sum(&survivors);
        let negative = electorate < 0.0;
        let mut kept = Vec::new();
        for v in survivors {
            let matches = if negative { v < 0.0 } else { v > 0.0 };
            if matches {
                kept.push(v);
            }
        }
        let m = if kept.is_empty() {
            0.0
        } else {
            let count = kept.len() as f32;
            total_order_sum(&kept) / count
        };
        out.push(b + lambda * m);
    }
    out
}

/// Scalar-loop task arithmetic over one tensor.
pub fn oracle_task_arithmetic(
    base: &[f32],
    sources: &[(f32, Vec<f32>)],
    lambda: f32,
    normalize: bool,
) -> Vec<f32> {
    let weights: Vec<f32> = sources.iter().map(|(w, _)| *w).collect();
    let wsum = total_order_sum(&weights);
    let mut out = Vec::with_capacity(base.len());
    for (j, b) in base.iter().enumerate() {
        let contribs: Vec<f32> = sources.iter().map(|(w, d)| w * d[j]).collect();
        let s = total_order_sum(&contribs);
        let m = if normalize { s / wsum } else { s };
        out.push(b + lambda * m);
    }
    out
}

/// A shape with at most 64 elements.
pub fn random_shape(rng: &mut ChaCha8Rng) -> Vec<usize> {
    match rng.random_range(0..3) {
        0 => vec![rng.random_range(1..=64)],
        1 => vec![rng.random_range(1..=8), rng.random_range(1..=8)],
        _ => vec![
            rng.random_range(1..=4),
            rng.random_range(1..=4),
            rng.random_range(1..=4),
        ],
    }
}

/// Values mixing a coarse grid (which produces exact duplicates, zeros, and
/// magnitude ties) with arbitrary floats.
pub fn random_values(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n)
        .map(|_| {
            if rng.random_bool(0.3) {
                rng.random_range(-8i32..=8) as f32 / 4.0
            } else {
                rng.random_range(-1.0f32..1.0)
            }
        })
        .collect()
}

/// A random float32 base model with 1..=max_tensors named tensors.
pub fn random_base(rng: &mut ChaCha8Rng, max_tensors: usize) -> TensorMap {
    let count = rng.random_range(1..=max_tensors);
    let mut map = TensorMap::new();
    for i in 0..count {
        let shape = random_shape(rng);
        let n = shape.iter().product();
        map.insert(
            format!("layer.{i}.weight"),
            Tensor::from_f32(shape, Dtype::F32, &random_values(rng, n)).unwrap(),
        );
    }
    map
}

/// A tuned model: the base plus fresh random offsets. Returns the tuned map
/// and the offsets added per tensor (on the same grid, so `tuned − base`
/// recovers them up to float32 subtraction, exactly as the library sees).
pub fn random_tuned(rng: &mut ChaCha8Rng, base: &TensorMap) -> (TensorMap, BTreeMap<String, Vec<f32>>) {
    let mut tuned = TensorMap::new();
    let mut offsets = BTreeMap::new();
    for (name, tensor) in base.iter() {
        let b = tensor.to_f32();
        let offset = random_values(rng, b.len());
        let values: Vec<f32> = b.iter().zip(&offset).map(|(x, d)| x + d).collect();
        tuned.insert(
            name.to_string(),
            Tensor::from_f32(tensor.shape().to_vec(), Dtype::F32, &values).unwrap(),
        );
        offsets.insert(name.to_string(), offset);
    }
    (tuned, offsets)
}

/// What the library should recover as a delta: tuned − base, elementwise.
pub fn oracle_delta(base: &TensorMap, tuned: &TensorMap, name: &str) -> Vec<f32> {
    let b = base.get(name).unwrap().to_f32();
    let t = tuned.get(name).unwrap().to_f32();
    t.iter().zip(&b).map(|(t, b)| t - b).collect()
}

/// Full-matrix Levenshtein over Unicode scalar values.
pub fn oracle_levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut dp = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in dp.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        dp[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = dp[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            dp[i][j] = sub.min(dp[i - 1][j] + 1).min(dp[i][j - 1] + 1);
        }
    }
    dp[a.len()][b.len()]
}

pub fn oracle_similarity(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - oracle_levenshtein(a, b) as f64 / longest as f64
}

/// Quadratic enumeration of shuffled-answer QA pairs, straight from the
/// definition: for samples (id, context, question, answer), every ordered
/// (sample, donor) pair where the donor's answer is a substring of the
/// sample's context, has the same whitespace token count as the sample's
/// answer, and differs from it, yields (good prompt, bad prompt).
pub fn brute_force_qa(samples: &[(String, String, String, String)]) -> Vec<(String, String)> {
    let prompt = |context: &str, question: &str, answer: &str| {
        format!("{context}\n\nSpurningur: {question}\nSvar: {answer}")
    };
    let mut pairs = Vec::new();
    for (i, (_, context, question, answer)) in samples.iter().enumerate() {
        for (j, (_, _, _, donor_answer)) in samples.iter().enumerate() {
            if i == j {
                continue;
            }
            let is_span = context.contains(donor_answer.as_str());
            let same_len = donor_answer.split_whitespace().count()
                == answer.split_whitespace().count();
            let differs = donor_answer != answer;
            if is_span && same_len && differs {
                pairs.push((
                    prompt(context, question, answer),
                    prompt(context, question, donor_answer),
                ));
            }
        }
    }
    pairs
}

/// A checkpoint container built byte by byte, without the library: 8-byte
/// little-endian header length, JSON header, space padding to an 8-aligned
/// data region, then the tensor bytes. Holds one float32 tensor [2, 2], one
/// float16 tensor [3], and a metadata entry.
pub fn handmade_checkpoint() -> (Vec<u8>, Vec<f32>, Vec<f32>) {
    let f32_values: Vec<f32> = vec![1.0, -2.5, 0.25, 3.0];
    // 1.0, -0.5, 2.0 in IEEE half precision.
    let f16_bits: Vec<u16> = vec![0x3c00, 0xb800, 0x4000];
    let f16_values: Vec<f32> = vec![1.0, -0.5, 2.0];

    let mut data = Vec::new();
    for v in &f32_values {
        data.extend_from_slice(&v.to_le_bytes());
    }
    for bits in &f16_bits {
        data.extend_from_slice(&bits.to_le_bytes());
    }

    let header = format!(
        concat!(
            "{{",
            "\"__metadata__\":{{\"origin\":\"handmade\"}},",
            "\"alpha\":{{\"dtype\":\"F32\",\"shape\":[2,2],\"data_offsets\":[0,16]}},",
            "\"beta\":{{\"dtype\":\"F16\",\"shape\":[3],\"data_offsets\":[16,22]}}",
            "}}"
        ),
    );
    let mut padded = header.into_bytes();
    while padded.len() % 8 != 0 {
        padded.push(b' ');
    }

    let mut bytes = Vec::new();
    bytes.extend_from_slice(&(padded.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&padded);
    bytes.extend_from_slice(&data);
    (bytes, f32_values, f16_values)
}
