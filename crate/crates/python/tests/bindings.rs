use pyo3::prelude::*;
use pyo3::types::PyModule;

fn with_module<F: FnOnce(&Bound<'_, PyModule>)>(f: F) {
    Python::initialize();
    Python::attach(|py| {
        let m = PyModule::new(py, "capred").unwrap();
        capred_py::register(&m).unwrap();
        f(&m);
    });
}

#[test]
fn reduce_through_python() {
    with_module(|m| {
        let map = m.getattr("Map").unwrap().call1(("pinch:[3];blocks=1,1,1",)).unwrap();
        let text: String = m.getattr("reduce_capacity").unwrap().call1((map,)).unwrap().extract().unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!((v["value"].as_f64().unwrap() - 3f64.ln()).abs() < 1e-11);
    });
}

#[test]
fn invalid_maps_raise_value_error() {
    with_module(|m| {
        let err = m.getattr("Map").unwrap().call1(("pinch:[2];blocks=3",)).unwrap_err();
        Python::attach(|py| assert!(err.is_instance_of::<pyo3::exceptions::PyValueError>(py)));
    });
}
