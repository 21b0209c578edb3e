//! Python bindings: model configuration, synthetic data, training,
//! evaluation, and the attention/positional-encoding primitives.

use std::path::PathBuf;
use std::str::FromStr;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use mmsd_core::attention;
use mmsd_core::data;
use mmsd_core::data::synth::CueMode;
use mmsd_core::error::Error;
use mmsd_core::model::net::{self, Ablation};
use mmsd_core::model::params::DEFAULT_INIT_SEED;
use mmsd_core::model::{ModelConfig, ParameterStore};
use mmsd_core::numerics::tensor::Tensor;
use mmsd_core::numerics::Graph;
use mmsd_core::training;
use mmsd_core::training::{MetricsReport, TrainConfig};

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Numeric(_) => PyRuntimeError::new_err(err.to_string()),
        Error::Io(_) | Error::Format { .. } => PyIOError::new_err(err.to_string()),
        _ => PyValueError::new_err(err.to_string()),
    }
}

/// Architecture dimensions.
#[pyclass(name = "Config", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ModelConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (
        d_v=8, d_a=8, d_t=16, l_v=12, l_a=12, l_t=9, l_prime=6, d_e=16, vocab=8,
        n_enc_layers=1, n_dec_layers=2, heads=4, fusion_heads=1, d_ff=128,
        max_total_len=512
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        d_v: usize,
        d_a: usize,
        d_t: usize,
        l_v: usize,
        l_a: usize,
        l_t: usize,
        l_prime: usize,
        d_e: usize,
        vocab: usize,
        n_enc_layers: usize,
        n_dec_layers: usize,
        heads: usize,
        fusion_heads: usize,
        d_ff: usize,
        max_total_len: usize,
    ) -> PyResult<Self> {
        let inner = ModelConfig {
            d_v,
            d_a,
            d_t,
            l_v,
            l_a,
            l_t,
            l_prime,
            d_e,
            vocab,
            n_enc_layers,
            n_dec_layers,
            heads,
            fusion_heads,
            d_ff,
            max_total_len,
        };
        inner.validate().map_err(to_py)?;
        Ok(PyConfig { inner })
    }

    /// Small configuration sized for gradient checks.
    #[staticmethod]
    fn toy() -> Self {
        PyConfig { inner: ModelConfig::toy() }
    }

    #[getter]
    fn d_e(&self) -> usize {
        self.inner.d_e
    }

    #[getter]
    fn vocab(&self) -> usize {
        self.inner.vocab
    }

    #[getter]
    fn l_prime(&self) -> usize {
        self.inner.l_prime
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

/// Optimization hyperparameters.
#[pyclass(name = "TrainOptions", skip_from_py_object)]
#[derive(Clone)]
struct PyTrainOptions {
    inner: TrainConfig,
}

#[pymethods]
impl PyTrainOptions {
    #[new]
    #[pyo3(signature = (
        peak_lr=3e-4, warmup_ratio=0.02, epochs=10, batch_size=4,
        grad_accum_steps=5, seed=42, adam_beta1=0.9, adam_beta2=0.999,
        adam_eps=1e-8
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        peak_lr: f64,
        warmup_ratio: f64,
        epochs: usize,
        batch_size: usize,
        grad_accum_steps: usize,
        seed: u64,
        adam_beta1: f64,
        adam_beta2: f64,
        adam_eps: f64,
    ) -> PyResult<Self> {
        let inner = TrainConfig {
            peak_lr,
            warmup_ratio,
            epochs,
            batch_size,
            grad_accum_steps,
            seed,
            adam_beta1,
            adam_beta2,
            adam_eps,
        };
        inner.validate().map_err(to_py)?;
        Ok(PyTrainOptions { inner })
    }

    /// A historically reported learning rate, far too small to train
    /// from scratch; kept selectable for completeness.
    #[staticmethod]
    fn reported_lr_preset() -> Self {
        PyTrainOptions { inner: TrainConfig::reported_lr_preset() }
    }

    /// 300 fast optimizer steps for memorizing a small set.
    #[staticmethod]
    fn overfit_preset() -> Self {
        PyTrainOptions { inner: TrainConfig::overfit_preset() }
    }

    #[getter]
    fn peak_lr(&self) -> f64 {
        self.inner.peak_lr
    }

    #[getter]
    fn epochs(&self) -> usize {
        self.inner.epochs
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

/// Synthetic-corpus recipe.
#[pyclass(name = "DataSpec", skip_from_py_object)]
#[derive(Clone)]
struct PyDataSpec {
    inner: data::SynthSpec,
}

#[pymethods]
impl PyDataSpec {
    #[new]
    #[pyo3(signature = (
        n_samples=300, stutter_fraction=0.5, l_v=12, l_a=12, l_t=9, d_v=8,
        d_a=8, vocab=8, seed=7, cue_mode="both"
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        n_samples: usize,
        stutter_fraction: f64,
        l_v: usize,
        l_a: usize,
        l_t: usize,
        d_v: usize,
        d_a: usize,
        vocab: usize,
        seed: u64,
        cue_mode: &str,
    ) -> PyResult<Self> {
        let inner = data::SynthSpec {
            n_samples,
            stutter_fraction,
            l_v,
            l_a,
            l_t,
            d_v,
            d_a,
            vocab,
            seed,
            cue_mode: CueMode::from_str(cue_mode).map_err(to_py)?,
        };
        inner.validate().map_err(to_py)?;
        Ok(PyDataSpec { inner })
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

/// A loaded synthetic corpus.
#[pyclass(name = "Dataset")]
struct PyDataset {
    inner: data::synth::Dataset,
}

#[pymethods]
impl PyDataset {
    /// Generate the corpus described by `spec`; byte-identical per seed.
    #[staticmethod]
    fn generate(spec: &PyDataSpec) -> PyResult<Self> {
        Ok(PyDataset { inner: data::generate(&spec.inner).map_err(to_py)? })
    }

    /// Read a dataset file, validating tokens against `vocab`.
    #[staticmethod]
    fn read(path: PathBuf, vocab: usize) -> PyResult<Self> {
        Ok(PyDataset { inner: data::read_dataset(&path, vocab).map_err(to_py)? })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        data::write_dataset(&self.inner, &path).map_err(to_py)?;
        Ok(())
    }

    /// Stratified train/test split; deterministic per seed.
    fn split(&self, test_fraction: f64, seed: u64) -> PyResult<(PyDataset, PyDataset)> {
        let (train, test) = data::split(&self.inner, test_fraction, seed).map_err(to_py)?;
        Ok((PyDataset { inner: train }, PyDataset { inner: test }))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn labels(&self) -> Vec<u8> {
        self.inner.labels()
    }

    fn label_counts(&self) -> (usize, usize) {
        self.inner.label_counts()
    }

    /// F1 of the rule-based run-length detector against the labels.
    fn detector_f1(&self) -> f64 {
        data::detector_report(&self.inner).f1()
    }
}

/// Model parameters bound to an architecture.
#[pyclass(name = "Model")]
struct PyModel {
    config: ModelConfig,
    params: ParameterStore,
}

fn ablation_from(zero_video: bool, zero_audio: bool, zero_text: bool) -> Ablation {
    Ablation { zero_video, zero_audio, zero_text }
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (config, seed=DEFAULT_INIT_SEED))]
    fn new(config: &PyConfig, seed: u64) -> PyResult<Self> {
        let params = ParameterStore::init(&config.inner, seed).map_err(to_py)?;
        Ok(PyModel { config: config.inner.clone(), params })
    }

    /// Load a checkpoint written by `save` (or the CLI).
    #[staticmethod]
    fn load(path: PathBuf, config: &PyConfig) -> PyResult<Self> {
        let params = ParameterStore::load(&path).map_err(to_py)?;
        params.validate_against(&config.inner).map_err(to_py)?;
        Ok(PyModel { config: config.inner.clone(), params })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.params.save(&path).map_err(to_py)?;
        Ok(())
    }

    /// Class probabilities `[p_fluent, p_stuttered]` for one sample.
    #[pyo3(signature = (dataset, index, zero_video=false, zero_audio=false, zero_text=false))]
    fn probabilities(
        &self,
        dataset: &PyDataset,
        index: usize,
        zero_video: bool,
        zero_audio: bool,
        zero_text: bool,
    ) -> PyResult<[f64; 2]> {
        let sample = dataset
            .inner
            .samples
            .get(index)
            .ok_or_else(|| PyValueError::new_err(format!("sample index {index} out of range")))?;
        let logits = net::forward(
            &self.config,
            &self.params,
            sample,
            ablation_from(zero_video, zero_audio, zero_text),
        )
        .map_err(to_py)?;
        net::logits_to_probs(&logits).map_err(to_py)
    }

    /// Predicted class (1 = stuttered) and its probability.
    fn predict(&self, dataset: &PyDataset, index: usize) -> PyResult<(u8, f64)> {
        let probs = self.probabilities(dataset, index, false, false, false)?;
        Ok(if probs[1] > probs[0] { (1, probs[1]) } else { (0, probs[0]) })
    }

    fn parameter_count(&self) -> usize {
        self.params.coord_count()
    }
}

fn metrics_dict<'py>(py: Python<'py>, m: &MetricsReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("tp", m.true_pos)?;
    d.set_item("fp", m.false_pos)?;
    d.set_item("fn", m.false_neg)?;
    d.set_item("tn", m.true_neg)?;
    d.set_item("precision", m.precision())?;
    d.set_item("recall", m.recall())?;
    d.set_item("f1", m.f1())?;
    d.set_item("accuracy", m.accuracy())?;
    Ok(d)
}

/// Train `model` in place; returns a dict with the final training metrics,
/// per-epoch mean losses, and the optimizer step count.
#[pyfunction]
#[pyo3(signature = (model, dataset, options, zero_video=false, zero_audio=false, zero_text=false))]
fn train<'py>(
    py: Python<'py>,
    model: &mut PyModel,
    dataset: &PyDataset,
    options: &PyTrainOptions,
    zero_video: bool,
    zero_audio: bool,
    zero_text: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let outcome = training::train(
        &model.config,
        &mut model.params,
        &dataset.inner.samples,
        &options.inner,
        ablation_from(zero_video, zero_audio, zero_text),
    )
    .map_err(to_py)?;
    let d = metrics_dict(py, &outcome.final_metrics)?;
    d.set_item("epoch_losses", outcome.epoch_losses)?;
    d.set_item("optimizer_steps", outcome.optimizer_steps)?;
    Ok(d)
}

/// Metrics of `model` on `dataset`.
#[pyfunction]
#[pyo3(signature = (model, dataset, zero_video=false, zero_audio=false, zero_text=false))]
fn evaluate<'py>(
    py: Python<'py>,
    model: &PyModel,
    dataset: &PyDataset,
    zero_video: bool,
    zero_audio: bool,
    zero_text: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let m = training::evaluate(
        &model.config,
        &model.params,
        &dataset.inner.samples,
        ablation_from(zero_video, zero_audio, zero_text),
    )
    .map_err(to_py)?;
    metrics_dict(py, &m)
}

/// Full-model finite-difference gradient check; returns the max relative
/// error over every parameter coordinate.
#[pyfunction]
fn grad_check(config: &PyConfig) -> PyResult<f64> {
    net::full_model_grad_check(&config.inner).map_err(to_py)
}

/// Cosine-with-warmup learning rate at `step` of `total_steps`.
#[pyfunction]
fn lr_at(step: usize, total_steps: usize, options: &PyTrainOptions) -> PyResult<f64> {
    training::lr_at(step, total_steps, &options.inner).map_err(to_py)
}

/// Harmonic mean of precision and recall.
#[pyfunction]
fn f1_score(precision: f64, recall: f64) -> f64 {
    training::f1_score(precision, recall)
}

/// Sinusoidal position table of shape `[max_pos, d_model]`.
#[pyfunction]
fn positional_encoding(max_pos: usize, d_model: usize) -> PyResult<Vec<Vec<f64>>> {
    let pe = attention::positional_encoding(max_pos, d_model).map_err(to_py)?;
    Ok((0..max_pos).map(|p| pe.row(p).to_vec()).collect())
}

/// `softmax(Q K^T / sqrt(d_k)) V` over row-major nested lists, optionally
/// with a causal mask.
#[pyfunction]
#[pyo3(signature = (q, k, v, causal=false))]
fn scaled_dot_attention(
    q: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    causal: bool,
) -> PyResult<Vec<Vec<f64>>> {
    let mut g = Graph::new();
    let qt = Tensor::from_rows(&q).map_err(to_py)?;
    let kt = Tensor::from_rows(&k).map_err(to_py)?;
    let vt = Tensor::from_rows(&v).map_err(to_py)?;
    let n_q = qt.nrows();
    let n_k = kt.nrows();
    let qv = g.input(qt);
    let kv = g.input(kt);
    let vv = g.input(vt);
    let mask = if causal {
        if n_q != n_k {
            return Err(PyValueError::new_err("causal mask requires n_q == n_k"));
        }
        Some(attention::causal_mask(n_q).map_err(to_py)?)
    } else {
        None
    };
    let out = attention::scaled_dot_attention(&mut g, qv, kv, vv, mask.as_ref()).map_err(to_py)?;
    let t = g.value(out);
    Ok((0..t.nrows()).map(|i| t.row(i).to_vec()).collect())
}

#[pymodule]
fn mmsd_net(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyTrainOptions>()?;
    m.add_class::<PyDataSpec>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    m.add_function(wrap_pyfunction!(lr_at, m)?)?;
    m.add_function(wrap_pyfunction!(f1_score, m)?)?;
    m.add_function(wrap_pyfunction!(positional_encoding, m)?)?;
    m.add_function(wrap_pyfunction!(scaled_dot_attention, m)?)?;
    Ok(())
}
