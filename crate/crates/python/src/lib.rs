//! Python bindings: `import tailcomb`.

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;

use tailcomb::angular::{self, DiscreteAngularMeasure};
use tailcomb::combiners::{CombinationTest, CombinerSpec};
use tailcomb::experiments::{
    self, presets, CalibrationRecord, Direction, PowerConfig, PowerRecord, TailScaleRecord,
};
use tailcomb::samplers::{ModelSpec, RngStream, SigmaSpec};
use tailcomb::transforms::{self, PValueVector};
use tailcomb::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Numerical(_) => PyArithmeticError::new_err(e.to_string()),
        Error::Io(_) => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn or_py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for tailcomb::Result<T> {
    fn or_py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

/// Discrete angular (spectral) measure.
#[pyclass(name = "AngularMeasure", module = "tailcomb", frozen)]
struct PyMeasure(DiscreteAngularMeasure);

#[pymethods]
impl PyMeasure {
    #[new]
    #[pyo3(signature = (atoms, weights, beta = 1.0, signed = false))]
    fn new(atoms: Vec<Vec<f64>>, weights: Vec<f64>, beta: f64, signed: bool) -> PyResult<Self> {
        DiscreteAngularMeasure::new(beta, atoms, weights, signed)
            .map(Self)
            .or_py()
    }

    #[staticmethod]
    #[pyo3(signature = (d, beta = 1.0))]
    fn axes(d: usize, beta: f64) -> PyResult<Self> {
        DiscreteAngularMeasure::axes(d, beta).map(Self).or_py()
    }

    #[staticmethod]
    #[pyo3(signature = (d, beta = 1.0))]
    fn comonotone(d: usize, beta: f64) -> PyResult<Self> {
        DiscreteAngularMeasure::comonotone(d, beta)
            .map(Self)
            .or_py()
    }

    /// Equal-margin weights on the given atoms (unit vectors added if needed).
    #[staticmethod]
    #[pyo3(signature = (atoms, beta = 1.0))]
    fn standardized(atoms: Vec<Vec<f64>>, beta: f64) -> PyResult<Self> {
        let d = atoms.first().map_or(0, Vec::len);
        angular::standardize_weights(&atoms, d, beta)
            .map(|s| Self(s.into_measure()))
            .or_py()
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        DiscreteAngularMeasure::load(path).map(Self).or_py()
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        serde_json::from_str(text)
            .map(Self)
            .map_err(|e| to_py(e.into()))
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    fn symmetrized(&self) -> Self {
        Self(self.0.symmetrized())
    }

    #[getter]
    fn atoms(&self) -> Vec<Vec<f64>> {
        self.0.atoms().to_vec()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.0.weights().to_vec()
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.0.beta()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn signed(&self) -> bool {
        self.0.is_signed()
    }

    fn __repr__(&self) -> String {
        format!(
            "AngularMeasure(dim={}, atoms={}, beta={})",
            self.0.dim(),
            self.0.atoms().len(),
            self.0.beta()
        )
    }
}

/// Homogeneous statistic `h`, e.g. `linear`, `tippett`, `powermean:2`, `maxlinear:1,2;3,4`.
#[pyclass(name = "Combiner", module = "tailcomb", frozen)]
struct PyCombiner(CombinerSpec);

#[pymethods]
impl PyCombiner {
    #[new]
    fn new(spec: &str, dim: usize) -> PyResult<Self> {
        CombinerSpec::parse(spec, dim).map(Self).or_py()
    }

    fn evaluate(&self, x: Vec<f64>) -> PyResult<f64> {
        self.0.evaluate(&x).or_py()
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.0.name()
    }

    fn __repr__(&self) -> String {
        format!("Combiner('{}')", self.0)
    }
}

/// Combination test: `pct`, `cct`, `tippett`, `fct`, `fct:1,2;3,4` or `powermean:G`.
#[pyclass(name = "CombinationTest", module = "tailcomb", frozen)]
struct PyTest(CombinationTest);

#[pymethods]
impl PyTest {
    #[new]
    fn new(spec: &str, d: usize) -> PyResult<Self> {
        experiments::parse_test(spec, d)
            .map(|t| Self(t.test))
            .or_py()
    }

    fn combined_pvalue(&self, p: Vec<f64>) -> PyResult<f64> {
        self.0
            .combined_pvalue(&PValueVector::new(p).or_py()?)
            .or_py()
    }

    fn combined_pvalues(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        rows.into_iter().map(|p| self.combined_pvalue(p)).collect()
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.0.name()
    }

    fn __repr__(&self) -> String {
        format!("CombinationTest('{}')", self.0)
    }
}

/// Null model built from its JSON description.
#[pyclass(name = "Model", module = "tailcomb", frozen)]
struct PyModel(ModelSpec);

#[pymethods]
impl PyModel {
    #[new]
    fn new(json: &str) -> PyResult<Self> {
        let spec: ModelSpec = serde_json::from_str(json).map_err(|e| to_py(e.into()))?;
        spec.prepare().or_py()?;
        Ok(Self(spec))
    }

    /// Preset family (`t`, `gaussian`, `frechet`, `breiman-axes`, `s1s-axes`).
    #[staticmethod]
    #[pyo3(signature = (name, d, nu = 1.0, sigma = "ar:0.5"))]
    fn preset(name: &str, d: usize, nu: f64, sigma: &str) -> PyResult<Self> {
        let sigma = SigmaSpec::parse(sigma).or_py()?;
        let mut models = presets::preset_models(name, &[nu], d, &sigma).or_py()?;
        Ok(Self(models.remove(0)))
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.0).expect("model spec serializes")
    }

    /// `n` rows of marginal p-values from replicate streams `0..n`.
    fn sample_pvalues(&self, py: Python<'_>, n: u64, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        let model = self.0.prepare().or_py()?;
        if !model.emits_pvalues() {
            return Err(PyValueError::new_err(format!(
                "{} models have no exact margins",
                self.0.kind_name()
            )));
        }
        Ok(py.detach(|| {
            let d = model.d();
            let mut x = vec![0.0; d];
            (0..n)
                .map(|r| {
                    let mut p = vec![0.0; d];
                    model.sample(&mut RngStream::new(seed, r), &mut x, &mut p);
                    p
                })
                .collect()
        }))
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.0.kind_name()
    }

    #[getter]
    fn fingerprint(&self) -> String {
        self.0.fingerprint()
    }

    fn __repr__(&self) -> String {
        format!("Model('{}')", self.0.fingerprint())
    }
}

/// Asymptotic calibration ratio of the combiner under the measure.
#[pyfunction]
fn asymptotic_ratio(combiner: &PyCombiner, measure: &PyMeasure) -> PyResult<f64> {
    angular::asymptotic_ratio(&combiner.0, &measure.0).or_py()
}

/// `calibrated`, `strictly_honest` or `liberal`.
#[pyfunction]
#[pyo3(signature = (combiner, measure, tol = 1e-9))]
fn classify(combiner: &PyCombiner, measure: &PyMeasure, tol: f64) -> PyResult<&'static str> {
    angular::classify(&combiner.0, &measure.0, tol)
        .map(|h| h.name())
        .or_py()
}

#[pyfunction]
fn t_copula_lambda(nu: f64, rho: f64) -> PyResult<f64> {
    angular::t_copula_lambda(nu, rho).or_py()
}

#[pyfunction]
fn pareto_transform(p: f64) -> PyResult<f64> {
    transforms::pareto_transform(p).or_py()
}

#[pyfunction]
fn cauchy_transform(p: f64) -> PyResult<f64> {
    transforms::cauchy_transform(p).or_py()
}

#[pyfunction]
fn frechet_transform(p: f64) -> PyResult<f64> {
    transforms::frechet_transform(p).or_py()
}

#[pyfunction]
fn student_t_cdf(x: f64, nu: f64) -> PyResult<f64> {
    transforms::student_t_cdf(x, nu).or_py()
}

/// Type I error calibration; returns the CSV text.
#[pyfunction]
#[pyo3(signature = (model, tests, alphas, n, seed = 42, workers = 0))]
fn calibrate(
    py: Python<'_>,
    model: &PyModel,
    tests: &str,
    alphas: Vec<f64>,
    n: u64,
    seed: u64,
    workers: usize,
) -> PyResult<String> {
    let d = model.0.prepare().or_py()?.d();
    let tests = experiments::parse_tests(tests, d).or_py()?;
    let spec = &model.0;
    py.detach(|| experiments::run_calibration(spec, &tests, &alphas, n, seed, workers))
        .map(|r| CalibrationRecord::to_csv(&r))
        .or_py()
}

/// Power study under a multivariate t location shift; returns the CSV text.
#[pyfunction]
#[pyo3(signature = (effects, nu = 10.0, d = 10, sigma = "ar:0.5", direction = "bottom", alpha = 0.05,
                    tests = "pct,cct", n = 100_000, seed = 42, workers = 0))]
#[allow(clippy::too_many_arguments)]
fn power(
    py: Python<'_>,
    effects: Vec<f64>,
    nu: f64,
    d: usize,
    sigma: &str,
    direction: &str,
    alpha: f64,
    tests: &str,
    n: u64,
    seed: u64,
    workers: usize,
) -> PyResult<String> {
    let config = PowerConfig {
        nu,
        d,
        sigma: SigmaSpec::parse(sigma).or_py()?,
        direction: Direction::parse(direction).or_py()?,
        effects,
        alpha,
        n,
        seed,
    };
    let tests = experiments::parse_tests(tests, d).or_py()?;
    py.detach(|| experiments::run_power(&config, &tests, workers))
        .map(|r| PowerRecord::to_csv(&r))
        .or_py()
}

/// Falsifier search; returns the JSON report.
#[pyfunction]
#[pyo3(signature = (combiner, d, beta = 1.0, atoms = 8, budget = 10_000, seed = 42))]
fn falsify(
    py: Python<'_>,
    combiner: &PyCombiner,
    d: usize,
    beta: f64,
    atoms: usize,
    budget: u64,
    seed: u64,
) -> PyResult<String> {
    let spec = &combiner.0;
    let report = py
        .detach(|| experiments::run_falsifier(spec, d, beta, atoms, budget, seed))
        .or_py()?;
    Ok(serde_json::to_string(&report).expect("report serializes"))
}

/// Direct tail-scale estimates; returns the CSV text.
#[pyfunction]
#[pyo3(signature = (model, combiner, thresholds, n, seed = 42, workers = 0))]
fn tail_scale(
    py: Python<'_>,
    model: &PyModel,
    combiner: &PyCombiner,
    thresholds: Vec<f64>,
    n: u64,
    seed: u64,
    workers: usize,
) -> PyResult<String> {
    let (spec, comb) = (&model.0, &combiner.0);
    py.detach(|| experiments::run_tail_scale(spec, comb, &thresholds, n, seed, workers))
        .map(|r| TailScaleRecord::to_csv(&r))
        .or_py()
}

#[pymodule]
#[pyo3(name = "tailcomb")]
fn tailcomb_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyMeasure>()?;
    m.add_class::<PyCombiner>()?;
    m.add_class::<PyTest>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(asymptotic_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(classify, m)?)?;
    m.add_function(wrap_pyfunction!(t_copula_lambda, m)?)?;
    m.add_function(wrap_pyfunction!(pareto_transform, m)?)?;
    m.add_function(wrap_pyfunction!(cauchy_transform, m)?)?;
    m.add_function(wrap_pyfunction!(frechet_transform, m)?)?;
    m.add_function(wrap_pyfunction!(student_t_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(power, m)?)?;
    m.add_function(wrap_pyfunction!(falsify, m)?)?;
    m.add_function(wrap_pyfunction!(tail_scale, m)?)?;
    Ok(())
}
