//! Python bindings for `chanflip`.

use chanflip::accountant::{self, PrivacyBudget};
use chanflip::analysis;
use chanflip::binfloat::{self, BitStream, FixedPointFormat, ModelVector, WireFrame};
use chanflip::flsim::{self, ExperimentConfig};
use chanflip::perturb::{self, ChannelConfig, FlipProbability, Modulation, RngHandle, Stage};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

fn err(e: chanflip::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn prob(p: f64) -> PyResult<FlipProbability> {
    FlipProbability::new(p).map_err(err)
}

/// Shared-exponent fixed-point format for a clip range `nu_inf`.
#[pyclass(name = "FixedPointFormat", frozen)]
struct PyFormat(FixedPointFormat);

#[pymethods]
impl PyFormat {
    #[new]
    fn new(nu_inf: f32) -> PyResult<Self> {
        FixedPointFormat::from_nu_inf(nu_inf).map(Self).map_err(err)
    }

    #[getter]
    fn limit(&self) -> f64 {
        self.0.limit()
    }
    #[getter]
    fn offset(&self) -> f64 {
        self.0.offset()
    }
    #[getter]
    fn step(&self) -> f64 {
        self.0.step()
    }
    #[getter]
    fn unit(&self) -> f64 {
        self.0.unit()
    }
    #[getter]
    fn shared_exponent(&self) -> u8 {
        self.0.shared_exponent()
    }

    fn __repr__(&self) -> String {
        format!("FixedPointFormat(limit={}, shared_exponent={})", self.0.limit(), self.0.shared_exponent())
    }
}

/// Wire frame bytes for a clipped model.
#[pyfunction]
fn encode<'py>(py: Python<'py>, values: Vec<f32>, nu_inf: f32) -> PyResult<Bound<'py, PyBytes>> {
    let fx = binfloat::fp_to_fx(&ModelVector::new(values), nu_inf).map_err(err)?;
    Ok(PyBytes::new(py, &WireFrame::from_fixed_point(&fx).to_bytes()))
}

/// Model recovered from wire frame bytes.
#[pyfunction]
fn decode(frame: &[u8]) -> PyResult<Vec<f32>> {
    let frame = WireFrame::from_bytes(frame).map_err(err)?;
    let format = FixedPointFormat::from_shared_exponent(frame.shared_exponent).map_err(err)?;
    Ok(frame.bits.groups().iter().map(|&f| format.dequantize(f)).collect())
}

/// Encode, flip every fraction bit with probability `p`, recover.
#[pyfunction]
#[pyo3(signature = (values, nu_inf, p, seed, round = 0, client = 0))]
fn perturb_model(values: Vec<f32>, nu_inf: f32, p: f64, seed: u64, round: u64, client: u64) -> PyResult<Vec<f32>> {
    let bits = binfloat::encode_model(&ModelVector::new(values), nu_inf).map_err(err)?;
    let handle = RngHandle::new(seed, round, client, Stage::Artificial);
    let flipped: BitStream = perturb::flip_bits(&bits, prob(p)?, &handle);
    Ok(binfloat::recover_model(&flipped, nu_inf).map_err(err)?.into_inner())
}

#[pyfunction]
fn compose_ber(p_a: f64, p_c: f64) -> PyResult<f64> {
    Ok(perturb::compose_ber(prob(p_a)?, prob(p_c)?).value())
}

#[pyfunction]
fn artificial_ber(p_target: f64, p_c: f64) -> PyResult<f64> {
    perturb::artificial_ber(prob(p_target)?, prob(p_c)?).map(|p| p.value()).map_err(err)
}

/// BER of BPSK or QPSK over AWGN at the given SNR in dB.
#[pyfunction]
#[pyo3(signature = (snr_db, modulation = "bpsk"))]
fn awgn_ber(snr_db: f64, modulation: &str) -> PyResult<f64> {
    let m = match modulation {
        "bpsk" => Modulation::Bpsk,
        "qpsk" => Modulation::Qpsk,
        other => return Err(PyValueError::new_err(format!("unknown modulation {other:?}"))),
    };
    perturb::awgn_ber(&ChannelConfig::awgn(m, perturb::db_to_linear(snr_db)))
        .map(|p| p.value())
        .map_err(err)
}

/// Exact inversion of the per-round Rényi condition.
#[pyfunction]
fn required_ber(lambda_: f64, epsilon: f64, rounds: u32, kappa_bar: f64) -> PyResult<f64> {
    let budget = PrivacyBudget::new(lambda_, epsilon, rounds).map_err(err)?;
    accountant::required_ber(&budget, kappa_bar).map(|p| p.value()).map_err(err)
}

#[pyfunction]
fn required_ber_closed_form(lambda_: f64, epsilon: f64, rounds: u32, kappa_bar: f64) -> PyResult<f64> {
    let budget = PrivacyBudget::new(lambda_, epsilon, rounds).map_err(err)?;
    accountant::required_ber_closed_form(&budget, kappa_bar).map_err(err)
}

#[pyfunction]
fn renyi_to_dp_delta(lambda_: f64, epsilon: f64, epsilon_prime: f64) -> PyResult<f64> {
    accountant::renyi_to_dp_delta(lambda_, epsilon, epsilon_prime).map_err(err)
}

#[pyfunction]
fn gaussian_sigma(sensitivity: f64, rounds: u32, delta: f64, epsilon_prime: f64) -> PyResult<f64> {
    accountant::gaussian_sigma(sensitivity, rounds, delta, epsilon_prime).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (models, sensitivity, samples, nu_inf, seed = 0))]
fn estimate_kappa_bar(models: Vec<Vec<f32>>, sensitivity: f64, samples: usize, nu_inf: f32, seed: u64) -> PyResult<f64> {
    let models: Vec<ModelVector> = models.into_iter().map(ModelVector::new).collect();
    let handle = RngHandle::new(seed, 0, 0, Stage::Kappa);
    accountant::estimate_kappa_bar(&models, sensitivity, samples, nu_inf, &handle)
        .map(|k| k.kappa_bar)
        .map_err(err)
}

#[pyfunction]
fn flipped_mean(a: f32, p: f64) -> PyResult<f64> {
    analysis::flipped_mean(a, prob(p)?).map_err(err)
}

#[pyfunction]
fn flipped_variance(a: f32, p: f64) -> PyResult<f64> {
    analysis::flipped_variance(a, prob(p)?).map_err(err)
}

#[pyfunction]
fn renyi_divergence_oracle(j: u32, q: f64, p: f64, lambda_: f64) -> PyResult<f64> {
    analysis::renyi_divergence_oracle(j, q, p, lambda_).map_err(err)
}

#[pyfunction]
fn per_bit_divergence_bound(j: u32, q: f64, p: f64, lambda_: f64) -> PyResult<f64> {
    analysis::per_bit_divergence_bound(j, q, p, lambda_).map_err(err)
}

#[pyfunction]
fn x_bf_bound(weights: Vec<f64>, p: Vec<f64>, m: usize, nu2: f64, nu_inf: f32) -> PyResult<f64> {
    let p = p.into_iter().map(prob).collect::<PyResult<Vec<_>>>()?;
    analysis::x_bf_bound(&weights, &p, m, nu2, nu_inf).map_err(err)
}

/// Runs an experiment given as TOML text; returns one dict per round record.
#[pyfunction]
fn run_experiment<'py>(py: Python<'py>, config_toml: &str) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg: ExperimentConfig = toml::from_str(config_toml).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let records = py.detach(|| flsim::run_experiment(&cfg)).map_err(err)?;
    records
        .into_iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("arm", r.arm)?;
            d.set_item("seed", r.seed)?;
            d.set_item("round", r.round)?;
            d.set_item("iteration", r.iteration)?;
            d.set_item("global_loss", r.global_loss)?;
            d.set_item("accuracy", r.accuracy)?;
            d.set_item("mean_ber", r.mean_ber)?;
            d.set_item("mean_artificial_ber", r.mean_artificial_ber)?;
            d.set_item("over_satisfied", r.over_satisfied)?;
            d.set_item("packets_dropped", r.packets_dropped)?;
            d.set_item("packets_total", r.packets_total)?;
            d.set_item("dist_to_opt_sq", r.dist_to_opt_sq)?;
            d.set_item("diverged", r.diverged)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn chanflip_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFormat>()?;
    m.add_function(wrap_pyfunction!(encode, m)?)?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    m.add_function(wrap_pyfunction!(perturb_model, m)?)?;
    m.add_function(wrap_pyfunction!(compose_ber, m)?)?;
    m.add_function(wrap_pyfunction!(artificial_ber, m)?)?;
    m.add_function(wrap_pyfunction!(awgn_ber, m)?)?;
    m.add_function(wrap_pyfunction!(required_ber, m)?)?;
    m.add_function(wrap_pyfunction!(required_ber_closed_form, m)?)?;
    m.add_function(wrap_pyfunction!(renyi_to_dp_delta, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_sigma, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_kappa_bar, m)?)?;
    m.add_function(wrap_pyfunction!(flipped_mean, m)?)?;
    m.add_function(wrap_pyfunction!(flipped_variance, m)?)?;
    m.add_function(wrap_pyfunction!(renyi_divergence_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(per_bit_divergence_bound, m)?)?;
    m.add_function(wrap_pyfunction!(x_bf_bound, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_wrappers() {
        assert!((required_ber(2.0, 10.0, 50, 0.02).unwrap() - 1.0 / 12.0).abs() < 1e-15);
        assert!((required_ber_closed_form(2.0, 10.0, 50, 0.02).unwrap() - 1.0 / 11.0).abs() < 1e-15);
        let pa = artificial_ber(0.1, 0.02).unwrap();
        assert!((compose_ber(pa, 0.02).unwrap() - 0.1).abs() < 1e-15);
        assert!(awgn_ber(10.0, "bpsk").unwrap() < 1e-5);
    }

    #[test]
    fn perturb_is_deterministic_and_in_range() {
        let values: Vec<f32> = (0..100).map(|i| (i as f32 - 50.0) / 100.0).collect();
        let a = perturb_model(values.clone(), 0.5, 0.2, 3, 1, 2).unwrap();
        assert_eq!(a, perturb_model(values.clone(), 0.5, 0.2, 3, 1, 2).unwrap());
        assert_ne!(a, perturb_model(values, 0.5, 0.2, 4, 1, 2).unwrap());
        let limit = FixedPointFormat::from_nu_inf(0.5).unwrap().limit();
        assert!(a.iter().all(|v| (*v as f64).abs() <= limit));
    }

    #[test]
    fn decode_reads_the_core_wire_format() {
        let model = ModelVector::new(vec![0.25, -0.5, 0.1]);
        let fx = binfloat::fp_to_fx(&model, 0.5).unwrap();
        let bytes = WireFrame::from_fixed_point(&fx).to_bytes();
        let back = decode(&bytes).unwrap();
        let step = FixedPointFormat::from_nu_inf(0.5).unwrap().step();
        for (a, b) in model.as_slice().iter().zip(&back) {
            assert!(((a - b) as f64).abs() <= step);
        }
    }
}
