"""The compiled kernels and the numpy fallback must agree."""
import numpy as np
import pytest

from iva.autodiff import _kernels_py as py
from iva.autodiff import kernels

compiled = kernels.compiled_backend
needs_compiled = pytest.mark.skipif(compiled is None, reason="compiled kernels not built")


@pytest.fixture
def restore_backend():
    name = kernels.backend_name()
    yield
    kernels.use_backend(name)


@needs_compiled
def test_kernels_agree(rng):
    x = rng.normal(0, 5, (7, 11))
    g = rng.standard_normal((7, 11))
    gain, bias = rng.standard_normal(11), rng.standard_normal(11)
    for inv_tau in (1.0, 2.0):
        a, b = py.softmax_forward(x, inv_tau), compiled.softmax_forward(x, inv_tau)
        assert np.allclose(a, b, rtol=1e-13, atol=1e-15)
        assert np.allclose(py.softmax_backward(a, g, inv_tau), compiled.softmax_backward(b, g, inv_tau),
                           rtol=1e-12, atol=1e-14)
    pa, pb = py.layer_norm_forward(x, gain, bias, 1e-5), compiled.layer_norm_forward(x, gain, bias, 1e-5)
    for u, v in zip(pa, pb):
        assert np.allclose(u, v, rtol=1e-12, atol=1e-14)
    for u, v in zip(py.layer_norm_backward(g, pa[1], pa[2], gain),
                    compiled.layer_norm_backward(g, pb[1], pb[2], gain)):
        assert np.allclose(u, v, rtol=1e-12, atol=1e-13)
    ya, sa = py.gelu_forward(x)
    yb, sb = compiled.gelu_forward(x)
    assert np.allclose(ya, yb, rtol=1e-13, atol=1e-15)
    assert np.allclose(py.gelu_backward(x, sa, g), compiled.gelu_backward(x, sb, g), rtol=1e-12, atol=1e-14)
    t = rng.integers(0, 11, 7)
    w = rng.random(7)
    na, qa = py.cross_entropy_forward(x, t, w)
    nb, qb = compiled.cross_entropy_forward(x, t, w)
    assert np.allclose(na, nb, rtol=1e-13) and np.allclose(qa, qb, rtol=1e-13, atol=1e-16)
    ones = np.ones(7)
    assert np.allclose(py.cross_entropy_backward(qa, t, w, ones), compiled.cross_entropy_backward(qb, t, w, ones),
                       rtol=1e-13, atol=1e-16)


@needs_compiled
def test_gelu_extremes_agree():
    x = np.array([[-800.0, -50.0, 0.0, 50.0, 800.0]])
    assert np.array_equal(py.gelu_forward(x)[0], compiled.gelu_forward(x)[0])


@needs_compiled
def test_model_loss_agrees_across_backends(restore_backend):
    from iva.features import generate_needle_dataset
    from iva.host import IvaModel
    from iva.training import batch_loss, to_examples
    from conftest import randomize_queries, small_config

    ex = to_examples(generate_needle_dataset(1, 2, 3, 8, 12, seed=0, num_classes=2, num_families=2)[0])
    results = {}
    for name in ("python", "cython"):
        kernels.use_backend(name)
        model = randomize_queries(IvaModel(small_config(), seed=0, iva_out_std=0.3))
        loss = batch_loss(model, ex, True, True)
        loss.backward()
        results[name] = (loss.item(), {n: p.grad for n, p in model.named_parameters()})
    (la, ga), (lb, gb) = results["python"], results["cython"]
    assert la == pytest.approx(lb, rel=1e-12)
    for n in ga:
        assert np.allclose(ga[n], gb[n], rtol=1e-9, atol=1e-12), n


def test_backend_selection(restore_backend):
    assert kernels.use_backend("python") is py
    assert kernels.backend_name() == "python"
    with pytest.raises(ValueError):
        kernels.use_backend("fortran")
