import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flexkrylov.problems import (
    ProblemInstance,
    add_noise,
    blur2d,
    dot_phantom,
    gaussian_psf,
    heat_like,
    identity_problem,
    load_instance,
    random_dense,
    random_sparse,
    save_instance,
)


def test_zero_noise():
    b = np.array([1.0, 2.0])
    out, e = add_noise(b, 0.0)
    np.testing.assert_array_equal(out, b)
    np.testing.assert_array_equal(e, 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000), st.floats(1e-8, 1.0))
def test_noise_level_exact(seed, eta):
    b = np.random.default_rng(seed).standard_normal(50)
    out, e = add_noise(b, eta, seed)
    assert np.linalg.norm(e) / np.linalg.norm(b) == pytest.approx(eta, rel=1e-12)
    assert np.array_equal(out, b + e)


def test_noise_deterministic_and_errors():
    b = np.ones(5)
    np.testing.assert_array_equal(add_noise(b, 1e-4, 3)[1], add_noise(b, 1e-4, 3)[1])
    with pytest.raises(ValueError):
        add_noise(b, -1e-3)
    with pytest.raises(ValueError):
        add_noise(np.zeros(3), 1e-3)


@pytest.mark.parametrize("make", [
    lambda: random_dense(10, seed=1),
    lambda: random_dense(8, seed=1, m=12),
    lambda: random_sparse(60, density=0.05, seed=2),
    lambda: heat_like(64, seed=3),
    lambda: blur2d(16, seed=4),
    lambda: identity_problem(4, seed=5, eta=1e-3),
])
def test_generators_are_deterministic_and_consistent(make):
    a, b = make(), make()
    np.testing.assert_array_equal(a.b, b.b)
    np.testing.assert_array_equal(a.x_exact, b.x_exact)
    assert np.array_equal(a.b, a.b_exact + a.e)
    assert np.linalg.norm(a.e) / np.linalg.norm(a.b_exact) == pytest.approx(a.eta, rel=1e-12)


def test_degenerate_sizes():
    for bad in (lambda: random_dense(1), lambda: random_sparse(1), lambda: random_sparse(10, density=0),
                lambda: heat_like(8), lambda: blur2d(8)):
        with pytest.raises(ValueError):
            bad()


def test_instance_invariants_enforced():
    inst = random_dense(5, seed=0)
    with pytest.raises(ValueError, match="b_exact \\+ e"):
        ProblemInstance(inst.A, inst.b + 1.0, inst.b_exact, inst.e, inst.eta, inst.x_exact)
    with pytest.raises(ValueError, match="noise level"):
        ProblemInstance(inst.A, inst.b, inst.b_exact, inst.e, 2 * inst.eta, inst.x_exact)


def test_sparse_density():
    inst = random_sparse(200, density=0.05, seed=0)
    assert inst.A.matrix.nnz == pytest.approx(0.05 * 200 * 200, rel=0.01)


def test_heat_like_structure():
    inst = heat_like(100, eta=0.0)
    A = inst.A.todense()
    assert np.all(np.triu(A, 1) == 0)
    s = np.linalg.svd(A, compute_uv=False)
    assert s[0] / s[-1] > 1e6


def test_blur_delta_and_column_sums():
    side = 16
    inst = blur2d(side, psf_sigma=1.5, phantom="delta", eta=0.0)
    np.testing.assert_allclose(inst.b_exact.reshape(side, side), gaussian_psf(side, 1.5), atol=1e-15)
    # every column of A sums to one: A^T 1 = 1
    np.testing.assert_allclose(inst.A.apply_adjoint(np.ones(side * side)), 1.0, atol=1e-12)
    with pytest.raises(ValueError):
        blur2d(side, psf_sigma=0.0)
    with pytest.raises(ValueError):
        blur2d(side, phantom="circle")


def test_phantom_is_sparse():
    img = dot_phantom(64, seed=0)
    assert np.mean(img == 0) >= 0.9
    assert np.all(img >= 0)


def test_supplied_phantom():
    img = np.zeros((16, 16))
    img[3, 4] = 2.0
    inst = blur2d(16, phantom=img, eta=0.0)
    np.testing.assert_array_equal(inst.x_exact, img.ravel())
    with pytest.raises(ValueError):
        blur2d(16, phantom=np.zeros((4, 4)))


@pytest.mark.parametrize("make", [lambda: random_dense(6, seed=1), lambda: random_sparse(30, seed=2)])
def test_save_load_round_trip(tmp_path, make):
    inst = make()
    save_instance(tmp_path, inst)
    back = load_instance(tmp_path)
    np.testing.assert_array_equal(back.b, inst.b)
    np.testing.assert_array_equal(back.x_exact, inst.x_exact)
    np.testing.assert_array_equal(back.A.todense(), inst.A.todense())
    assert back.eta == inst.eta
