use pyo3::prelude::*;
use pyo3::types::PyDict;

fn with_module(code: &std::ffi::CStr) {
    Python::attach(|py| {
        let m = pyo3::wrap_pymodule!(threshnet_py::threshnet_py)(py);
        let g = PyDict::new(py);
        g.set_item("tn", m).unwrap();
        if let Err(e) = py.run(code, Some(&g), None) {
            e.display(py);
            panic!("python code failed");
        }
    });
}

#[test]
fn network_and_dataset_round_trip() {
    with_module(
        c"
net = tn.Network.orthonormal(3, 3, 1.0, pair_coeff=0.5, seed=2)
assert (net.n, net.d) == (3, 3)
assert tn.Network.from_text(net.to_text()).to_text() == net.to_text()
data = net.sample(1000, seed=3)
assert len(data) == 1000 and data.n == 3
x = data.x(5)
assert abs(net.eval(x) - data.labels()[5]) < 1e-12
own = tn.Dataset([[0.0, 1.0], [1.0, 0.0]], [1.0, 0.0])
assert len(own) == 2
try:
    tn.Dataset([[0.0], [1.0, 2.0]], [1.0, 0.0])
    raise AssertionError('ragged rows accepted')
except ValueError:
    pass
",
    );
}

#[test]
fn hermite_helpers() {
    with_module(
        c"
h = tn.hermite(3, 0.5)
assert abs(h[3] - (0.5**3 - 1.5) / 6**0.5) < 1e-12
assert abs(tn.cross_coeff(2, 2, 1.0) - 1.0) < 1e-12
assert tn.sign_threshold(8, 1.0) > 2.0
",
    );
}

#[test]
fn config_runner_reports_json() {
    with_module(
        c"
import json
cfg = '''
scenario = \"corrgraph\"
samples = 100000
[network]
layout = \"binary\"
n = 8
supports = [[0, 1, 2], [3, 4, 5]]
activation = { kind = \"exp-rate\", rho = 0.25, t = 1.0 }
'''
r = json.loads(tn.run_config(cfg))
assert r['scenario'] == 'corrgraph'
assert r['metrics']['exact'] == 1.0
try:
    tn.run_config('scenario = \"corrgraph\"')
    raise AssertionError('missing network accepted')
except ValueError as e:
    assert 'network' in str(e)
",
    );
}
