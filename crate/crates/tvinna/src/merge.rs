//! Task vectors and checkpoint merging.
//!
//! A task vector is the elementwise float32 difference between a fine-tuned
//! checkpoint and its base. Merging combines several weighted task vectors
//! into one delta, either by plain weighted averaging (task arithmetic) or by
//! TIES: trim each vector to its highest-magnitude entries, elect a sign per
//! element, then average only the contributors that agree with the elected
//! sign.
//!
//! Every reduction over source values uses *canonical summation*: the
//! contributions are sorted by `f32::total_cmp` and folded from zero, so the
//! merged result is bit-identical no matter how the source list is ordered
//! or how tensors are scheduled across threads.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensorstore::{CompatReport, Tensor, TensorMap, TensorStoreError};

/// Metadata key marking what a checkpoint-container file holds.
pub const META_KIND: &str = "tvinna.kind";
pub const KIND_TASK_VECTOR: &str = "task_vector";
pub const KIND_LORA_ADAPTER: &str = "lora_adapter";
pub const META_LABEL: &str = "tvinna.label";
pub const META_RANK: &str = "tvinna.rank";
pub const META_ALPHA: &str = "tvinna.alpha";

/// One named delta: float32 values plus the tensor shape they fill.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaTensor {
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

impl DeltaTensor {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let count = shape.iter().product();
        DeltaTensor {
            shape,
            values: vec![0.0; count],
        }
    }
}

/// Per-tensor float32 differences from one fine-tuned source, with the
/// weight it carries into a merge.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskVector {
    pub source_label: String,
    pub weight: f32,
    pub deltas: BTreeMap<String, DeltaTensor>,
}

impl TaskVector {
    pub fn with_weight(mut self, weight: f32) -> Self {
        self.weight = weight;
        self
    }

    /// Store as a checkpoint container: one F32 tensor per delta, tagged via
    /// metadata so loaders can tell task-vector files from model files.
    pub fn to_tensor_map(&self) -> TensorMap {
        let mut map = TensorMap::new();
        for (name, delta) in &self.deltas {
            let tensor = Tensor::from_f32(delta.shape.clone(), crate::Dtype::F32, &delta.values)
                .expect("delta shape matches its value count");
            map.insert(name.clone(), tensor);
        }
        map.set_metadata(META_KIND, KIND_TASK_VECTOR);
        map.set_metadata(META_LABEL, self.source_label.clone());
        map
    }

    /// Read back a container written by [`to_tensor_map`]. The weight is not
    /// stored in the file; it comes from the recipe, so the result carries
    /// weight 1.0 until [`with_weight`] is applied.
    pub fn from_tensor_map(map: &TensorMap) -> Result<Self, MergeError> {
        match map.metadata().get(META_KIND).map(String::as_str) {
            Some(KIND_TASK_VECTOR) => {}
            other => {
                return Err(MergeError::WrongKind {
                    expected: KIND_TASK_VECTOR,
                    found: other.unwrap_or("<none>").to_string(),
                })
            }
        }
        let label = map
            .metadata()
            .get(META_LABEL)
            .cloned()
            .unwrap_or_default();
        let mut deltas = BTreeMap::new();
        for (name, tensor) in map.iter() {
            deltas.insert(
                name.to_string(),
                DeltaTensor {
                    shape: tensor.shape().to_vec(),
                    values: tensor.to_f32(),
                },
            );
        }
        Ok(TaskVector {
            source_label: label,
            weight: 1.0,
            deltas,
        })
    }
}

/// Low-rank factors for one target tensor: `a` is r×k, `b` is d×r, and the
/// materialized delta is (alpha/rank)·b·a with shape d×k.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraPair {
    pub a: DeltaTensor,
    pub b: DeltaTensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    pub rank: usize,
    pub alpha: f32,
    pub factors: BTreeMap<String, LoraPair>,
}

impl LoraAdapter {
    pub fn validate(&self) -> Result<(), MergeError> {
        if self.rank == 0 {
            return Err(MergeError::BadRank { rank: self.rank });
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(MergeError::BadAlpha { alpha: self.alpha });
        }
        for (name, pair) in &self.factors {
            if pair.a.shape.len() != 2 || pair.b.shape.len() != 2 {
                return Err(MergeError::LoraShape {
                    name: name.clone(),
                    reason: format!(
                        "factors must be matrices, got a{:?} b{:?}",
                        pair.a.shape, pair.b.shape
                    ),
                });
            }
            if pair.a.shape[0] != self.rank || pair.b.shape[1] != self.rank {
                return Err(MergeError::LoraShape {
                    name: name.clone(),
                    reason: format!(
                        "inner dimensions must equal rank {}: a{:?} b{:?}",
                        self.rank, pair.a.shape, pair.b.shape
                    ),
                });
            }
        }
        Ok(())
    }

    pub fn to_tensor_map(&self) -> TensorMap {
        let mut map = TensorMap::new();
        for (name, pair) in &self.factors {
            for (suffix, factor) in [("lora_a", &pair.a), ("lora_b", &pair.b)] {
                let tensor =
                    Tensor::from_f32(factor.shape.clone(), crate::Dtype::F32, &factor.values)
                        .expect("factor shape matches its value count");
                map.insert(format!("{name}.{suffix}"), tensor);
            }
        }
        map.set_metadata(META_KIND, KIND_LORA_ADAPTER);
        map.set_metadata(META_RANK, self.rank.to_string());
        map.set_metadata(META_ALPHA, self.alpha.to_string());
        map
    }

    pub fn from_tensor_map(map: &TensorMap) -> Result<Self, MergeError> {
        match map.metadata().get(META_KIND).map(String::as_str) {
            Some(KIND_LORA_ADAPTER) => {}
            other => {
                return Err(MergeError::WrongKind {
                    expected: KIND_LORA_ADAPTER,
                    found: other.unwrap_or("<none>").to_string(),
                })
            }
        }
        let rank: usize = map
            .metadata()
            .get(META_RANK)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| MergeError::AdapterMetadata {
                key: META_RANK.to_string(),
            })?;
        let alpha: f32 = map
            .metadata()
            .get(META_ALPHA)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| MergeError::AdapterMetadata {
                key: META_ALPHA.to_string(),
            })?;
        let mut halves: BTreeMap<String, (Option<DeltaTensor>, Option<DeltaTensor>)> =
            BTreeMap::new();
        for (name, tensor) in map.iter() {
            let delta = DeltaTensor {
                shape: tensor.shape().to_vec(),
                values: tensor.to_f32(),
            };
            if let Some(target) = name.strip_suffix(".lora_a") {
                halves.entry(target.to_string()).or_default().0 = Some(delta);
            } else if let Some(target) = name.strip_suffix(".lora_b") {
                halves.entry(target.to_string()).or_default().1 = Some(delta);
            } else {
                return Err(MergeError::LoraShape {
                    name: name.to_string(),
                    reason: "tensor name lacks a .lora_a/.lora_b suffix".to_string(),
                });
            }
        }
        let mut factors = BTreeMap::new();
        for (target, (a, b)) in halves {
            match (a, b) {
                (Some(a), Some(b)) => {
                    factors.insert(target, LoraPair { a, b });
                }
                (a, _) => {
                    return Err(MergeError::LoraShape {
                        name: target,
                        reason: format!(
                            "missing {} factor",
                            if a.is_none() { "lora_a" } else { "lora_b" }
                        ),
                    })
                }
            }
        }
        let adapter = LoraAdapter {
            rank,
            alpha,
            factors,
        };
        adapter.validate()?;
        Ok(adapter)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeMethod {
    TaskArithmetic,
    Ties,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecipeSource {
    pub path: PathBuf,
    #[serde(default = "default_weight")]
    pub weight: f32,
    #[serde(default)]
    pub label: String,
}

fn default_weight() -> f32 {
    1.0
}

fn default_lambda() -> f32 {
    1.0
}

fn default_density() -> f32 {
    1.0
}

fn default_normalize() -> bool {
    true
}

/// A merge described as data: which checkpoints, how weighted, and which
/// combination rule. This is the YAML schema the CLI consumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeRecipe {
    pub method: MergeMethod,
    #[serde(default = "default_lambda")]
    pub lambda: f32,
    #[serde(default = "default_density")]
    pub density: f32,
    #[serde(default = "default_normalize")]
    pub normalize: bool,
    pub sources: Vec<RecipeSource>,
}

impl MergeRecipe {
    pub fn from_yaml_str(text: &str) -> Result<Self, MergeError> {
        let mut recipe: MergeRecipe =
            serde_yaml::from_str(text).map_err(|e| MergeError::Recipe {
                reason: e.to_string(),
            })?;
        for source in &mut recipe.sources {
            if source.label.is_empty() {
                source.label = source
                    .path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
            }
        }
        recipe.validate()?;
        Ok(recipe)
    }

    pub fn validate(&self) -> Result<(), MergeError> {
        if self.sources.is_empty() {
            return Err(MergeError::EmptySources);
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(MergeError::BadDensity {
                density: self.density,
            });
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(MergeError::BadLambda {
                lambda: self.lambda,
            });
        }
        for source in &self.sources {
            if !(source.weight > 0.0) || !source.weight.is_finite() {
                return Err(MergeError::BadWeight {
                    label: source.label.clone(),
                    weight: source.weight,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum MergeError {
    #[error("task vector '{label}' does not line up with the base model: {report}")]
    IncompatibleVector { label: String, report: CompatReport },

    #[error("checkpoints are incompatible: {0}")]
    Store(#[from] TensorStoreError),

    #[error("merge needs at least one source")]
    EmptySources,

    #[error("density must lie in (0, 1], got {density}")]
    BadDensity { density: f32 },

    #[error("lambda must be a positive finite number, got {lambda}")]
    BadLambda { lambda: f32 },

    #[error("source '{label}' has non-positive weight {weight}")]
    BadWeight { label: String, weight: f32 },

    #[error("adapter rank must be at least 1, got {rank}")]
    BadRank { rank: usize },

    #[error("adapter alpha must be a positive finite number, got {alpha}")]
    BadAlpha { alpha: f32 },

    #[error("bad low-rank factors for '{name}': {reason}")]
    LoraShape { name: String, reason: String },

    #[error("adapter container is missing or has unparsable metadata '{key}'")]
    AdapterMetadata { key: String },

    #[error("expected a {expected} container, found kind '{found}'")]
    WrongKind {
        expected: &'static str,
        found: String,
    },

    #[error("recipe '{name}' requires a source for language '{language}'")]
    MissingLanguage { name: String, language: String },

    #[error("unknown recipe preset '{name}'")]
    UnknownPreset { name: String },

    #[error("bad recipe: {reason}")]
    Recipe { reason: String },
}

/// Sum float32 values in a fixed order: sort by total ordering, fold from
/// zero. Input order never affects the result bit pattern.
fn canonical_sum(mut values: Vec<f32>) -> f32 {
    values.sort_by(f32::total_cmp);
    values.into_iter().fold(0.0f32, |acc, v| acc + v)
}

fn weight_sum(vectors: &[TaskVector]) -> f32 {
    canonical_sum(vectors.iter().map(|v| v.weight).collect())
}

/// Differences between a task vector's deltas and a base map's tensors,
/// reported with the base on the left.
fn delta_compat(base: &TensorMap, vector: &TaskVector) -> CompatReport {
    let mut report = CompatReport::default();
    for (name, tensor) in base.iter() {
        match vector.deltas.get(name) {
            None => report.missing_in_right.push(name.to_string()),
            Some(delta) => {
                if delta.shape != tensor.shape() {
                    report.shape_conflicts.push((
                        name.to_string(),
                        tensor.shape().to_vec(),
                        delta.shape.clone(),
                    ));
                }
            }
        }
    }
    for name in vector.deltas.keys() {
        if base.get(name).is_none() {
            report.missing_in_left.push(name.clone());
        }
    }
    report
}

fn check_vectors(base: &TensorMap, vectors: &[TaskVector]) -> Result<(), MergeError> {
    if vectors.is_empty() {
        return Err(MergeError::EmptySources);
    }
    for vector in vectors {
        if !(vector.weight > 0.0) || !vector.weight.is_finite() {
            return Err(MergeError::BadWeight {
                label: vector.source_label.clone(),
                weight: vector.weight,
            });
        }
        let report = delta_compat(base, vector);
        if !report.is_empty() {
            return Err(MergeError::IncompatibleVector {
                label: vector.source_label.clone(),
                report,
            });
        }
    }
    Ok(())
}

/// tuned − base, elementwise in float32.
pub fn task_vector(
    base: &TensorMap,
    tuned: &TensorMap,
    label: &str,
) -> Result<TaskVector, MergeError> {
    crate::tensorstore::assert_compatible(base, tuned)?;
    let deltas = base
        .iter()
        .map(|(name, bt)| {
            let tt = tuned.get(name).expect("compatibility was just checked");
            let bv = bt.to_f32();
            let tv = tt.to_f32();
            let values = tv.iter().zip(&bv).map(|(t, b)| t - b).collect();
            (
                name.to_string(),
                DeltaTensor {
                    shape: bt.shape().to_vec(),
                    values,
                },
            )
        })
        .collect();
    Ok(TaskVector {
        source_label: label.to_string(),
        weight: 1.0,
        deltas,
    })
}

/// Materialize an adapter into a dense task vector: (alpha/rank)·b·a for each
/// adapted tensor, zero for every other tensor in the base.
pub fn lora_to_task_vector(
    base: &TensorMap,
    adapter: &LoraAdapter,
    label: &str,
) -> Result<TaskVector, MergeError> {
    adapter.validate()?;
    for (name, pair) in &adapter.factors {
        let Some(target) = base.get(name) else {
            return Err(MergeError::LoraShape {
                name: name.clone(),
                reason: "base model has no tensor by this name".to_string(),
            });
        };
        let d = pair.b.shape[0];
        let k = pair.a.shape[1];
        if target.shape() != [d, k] {
            return Err(MergeError::LoraShape {
                name: name.clone(),
                reason: format!(
                    "b·a gives shape [{d}, {k}] but the target is {:?}",
                    target.shape()
                ),
            });
        }
    }
    let scale = adapter.alpha / adapter.rank as f32;
    let deltas = base
        .iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(name, tensor)| {
            let delta = match adapter.factors.get(name) {
                None => DeltaTensor::zeros(tensor.shape().to_vec()),
                Some(pair) => {
                    let r = adapter.rank;
                    let d = pair.b.shape[0];
                    let k = pair.a.shape[1];
                    let mut values = vec![0.0f32; d * k];
                    for i in 0..d {
                        for j in 0..k {
                            let mut acc = 0.0f32;
                            for l in 0..r {
                                acc += pair.b.values[i * r + l] * pair.a.values[l * k + j];
                            }
                            values[i * k + j] = scale * acc;
                        }
                    }
                    DeltaTensor {
                        shape: vec![d, k],
                        values,
                    }
                }
            };
            (name.to_string(), delta)
        })
        .collect();
    Ok(TaskVector {
        source_label: label.to_string(),
        weight: 1.0,
        deltas,
    })
}

fn merged_map<F>(base: &TensorMap, per_element: F) -> TensorMap
where
    F: Fn(&str, &[f32]) -> Vec<f32> + Sync,
{
    let merged: Vec<(String, Tensor)> = base
        .iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(name, tensor)| {
            let out = per_element(name, &tensor.to_f32());
            let merged = Tensor::from_f32(tensor.shape().to_vec(), tensor.dtype(), &out)
                .expect("merged values match the base shape");
            (name.to_string(), merged)
        })
        .collect();
    let mut map = TensorMap::new();
    for (name, tensor) in merged {
        map.insert(name, tensor);
    }
    for (k, v) in base.metadata() {
        map.set_metadata(k.clone(), v.clone());
    }
    map
}

/// base + lambda · (Σ wᵢ·δᵢ / Σ wᵢ) when `normalize`, else
/// base + lambda · Σ wᵢ·δᵢ. Output tensors keep the base storage dtype.
pub fn merge_task_arithmetic(
    base: &TensorMap,
    vectors: &[TaskVector],
    lambda: f32,
    normalize: bool,
) -> Result<TensorMap, MergeError> {
    check_vectors(base, vectors)?;
    let wsum = weight_sum(vectors);
    Ok(merged_map(base, |name, base_vals| {
        let sources: Vec<(&f32, &[f32])> = vectors
            .iter()
            .map(|v| (&v.weight, v.deltas[name].values.as_slice()))
            .collect();
        base_vals
            .iter()
            .enumerate()
            .map(|(j, b)| {
                let contribs = sources.iter().map(|(w, d)| **w * d[j]).collect();
                let s = canonical_sum(contribs);
                let m = if normalize { s / wsum } else { s };
                b + lambda * m
            })
            .collect()
    }))
}

/// Zero all but the ⌈density·n⌉ largest-magnitude entries. Ties at the
/// boundary keep the lower flat index.
fn trim_top_density(values: &[f32], density: f32) -> Vec<f32> {
    let n = values.len();
    let keep = (density as f64 * n as f64).ceil() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .abs()
            .total_cmp(&values[a].abs())
            .then(a.cmp(&b))
    });
    let mut out = vec![0.0f32; n];
    for &idx in order.iter().take(keep.min(n)) {
        out[idx] = values[idx];
    }
    out
}

/// TIES merge. Per tensor: trim each weighted vector to its top-density
/// entries by magnitude, elect a per-element sign from the summed survivors
/// (a zero sum elects positive), then average only the survivors matching
/// the elected sign. Elements with no matching survivor stay zero.
pub fn merge_ties(
    base: &TensorMap,
    vectors: &[TaskVector],
    density: f32,
    lambda: f32,
) -> Result<TensorMap, MergeError> {
    check_vectors(base, vectors)?;
    if !(density > 0.0 && density <= 1.0) {
        return Err(MergeError::BadDensity { density });
    }
    Ok(merged_map(base, |name, base_vals| {
        let trimmed: Vec<Vec<f32>> = vectors
            .iter()
            .map(|v| {
                let weighted: Vec<f32> = v.deltas[name].values.iter().map(|d| v.weight * d).collect();
                trim_top_density(&weighted, density)
            })
            .collect();
        base_vals
            .iter()
            .enumerate()
            .map(|(j, b)| {
                let vals: Vec<f32> = trimmed.iter().map(|t| t[j]).collect();
                let electorate = canonical_sum(vals.clone());
                let negative = electorate < 0.0;
                let keep: Vec<f32> = vals
                    .into_iter()
                    .filter(|c| if negative { *c < 0.0 } else { *c > 0.0 })
                    .collect();
                let m = if keep.is_empty() {
                    0.0
                } else {
                    let count = keep.len() as f32;
                    canonical_sum(keep) / count
                };
                b + lambda * m
            })
            .collect()
    }))
}

/// Run a recipe against a base and pre-built task vectors. With
/// `normalize`, TIES weights are pre-scaled to sum to one; task arithmetic
/// folds the normalization into its own averaging.
pub fn merge_with_recipe(
    base: &TensorMap,
    vectors: &[TaskVector],
    recipe: &MergeRecipe,
) -> Result<TensorMap, MergeError> {
    recipe.validate()?;
    match recipe.method {
        MergeMethod::TaskArithmetic => {
            merge_task_arithmetic(base, vectors, recipe.lambda, recipe.normalize)
        }
        MergeMethod::Ties => {
            if recipe.normalize {
                let wsum = weight_sum(vectors);
                let scaled: Vec<TaskVector> = vectors
                    .iter()
                    .map(|v| v.clone().with_weight(v.weight / wsum))
                    .collect();
                merge_ties(base, &scaled, recipe.density, recipe.lambda)
            } else {
                merge_ties(base, vectors, recipe.density, recipe.lambda)
            }
        }
    }
}

/// Languages every five-way preset expects, as ISO 639-1 codes.
pub const FIVE_LANGUAGES: [&str; 5] = ["da", "is", "nb", "nn", "sv"];

/// Build one of the three named merge presets over per-language checkpoint
/// paths: `merge_eq` weights all five donors equally, `merge_is_plus` keeps
/// Icelandic at full weight and halves the rest, `merge_2` takes only
/// Icelandic and Danish. All use TIES with density 0.5.
pub fn build_recipe(
    name: &str,
    sources: &BTreeMap<String, PathBuf>,
) -> Result<MergeRecipe, MergeError> {
    let require = |language: &str| -> Result<PathBuf, MergeError> {
        sources
            .get(language)
            .cloned()
            .ok_or_else(|| MergeError::MissingLanguage {
                name: name.to_string(),
                language: language.to_string(),
            })
    };
    let source = |language: &str, weight: f32| -> Result<RecipeSource, MergeError> {
        Ok(RecipeSource {
            path: require(language)?,
            weight,
            label: language.to_string(),
        })
    };
    let sources = match name {
        "merge_eq" => FIVE_LANGUAGES
            .iter()
            .map(|lang| source(lang, 1.0))
            .collect::<Result<Vec<_>, _>>()?,
        "merge_is_plus" => FIVE_LANGUAGES
            .iter()
            .map(|lang| source(lang, if *lang == "is" { 1.0 } else { 0.5 }))
            .collect::<Result<Vec<_>, _>>()?,
        "merge_2" => vec![source("da", 1.0)?, source("is", 1.0)?],
        other => {
            return Err(MergeError::UnknownPreset {
                name: other.to_string(),
            })
        }
    };
    Ok(MergeRecipe {
        method: MergeMethod::Ties,
        lambda: 1.0,
        density: 0.5,
        normalize: true,
        sources,
    })
}

/// Load a source file and lift it to a task vector against `base`. The file
/// may be a plain checkpoint (differenced against the base), a stored task
/// vector, or a low-rank adapter; the container metadata decides.
pub fn load_source_as_task_vector(
    base: &TensorMap,
    path: &Path,
    label: &str,
    weight: f32,
) -> Result<TaskVector, MergeError> {
    let map = crate::tensorstore::load_checkpoint(path)?;
    let vector = match map.metadata().get(META_KIND).map(String::as_str) {
        Some(KIND_TASK_VECTOR) => {
            let mut tv = TaskVector::from_tensor_map(&map)?;
            if !label.is_empty() {
                tv.source_label = label.to_string();
            }
            tv
        }
        Some(KIND_LORA_ADAPTER) => {
            let adapter = LoraAdapter::from_tensor_map(&map)?;
            lora_to_task_vector(base, &adapter, label)?
        }
        _ => task_vector(base, &map, label)?,
    };
    Ok(vector.with_weight(weight))
}
