import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heunflow import autodiff as ad
from heunflow import blocks, ode_solvers
from heunflow.autodiff import Tape, Tensor
from heunflow.errors import AlphaOutOfRange, ShapeMismatch


def test_zero_map_is_identity_for_residual_families():
    x = Tensor([1.0, 2.0])
    F = blocks.zero_map()
    for family in ("resnet", "heun"):
        assert blocks.block_forward(family, F, x).data.tolist() == [1.0, 2.0]
    assert blocks.block_forward("extheun", F, x, 0.3).data.tolist() == [1.0, 2.0]
    assert blocks.plain_forward(F, x).data.tolist() == [0.0, 0.0]


def test_constant_map():
    F = blocks.constant_map([1.0, 1.0])
    assert blocks.heun_forward(F, Tensor([0.0, 0.0])).data.tolist() == [1.0, 1.0]
    assert blocks.resnet_forward(F, Tensor([0.0, 0.0])).data.tolist() == [1.0, 1.0]


def test_identity_map_heun():
    assert blocks.heun_forward(blocks.identity_map(), Tensor([1.0])).data.tolist() == [2.5]


def test_extheun_bad_alpha():
    with pytest.raises(AlphaOutOfRange):
        blocks.extended_heun_forward(blocks.identity_map(), Tensor([1.0]), 1.5)
    with pytest.raises(ValueError):
        blocks.BlockSpec("extheun", 2)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 6))
def test_extheun_reduces_bitwise(seed, n):
    rng = np.random.default_rng(seed)
    F = blocks.DenseMap.init(n, rng, bias=True)
    x = Tensor(rng.normal(size=(n, 2)))
    e0 = blocks.extended_heun_forward(F, x, 0.0).data
    e5 = blocks.extended_heun_forward(F, x, 0.5).data
    assert e0.tobytes() == blocks.resnet_forward(F, x).data.tobytes()
    assert e5.tobytes() == blocks.heun_forward(F, x).data.tobytes()


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 5), depth=st.integers(1, 4))
def test_linear_heun_stack_closed_form(seed, n, depth):
    rng = np.random.default_rng(seed)
    A = 0.5 * rng.normal(size=(n, n))
    x0 = rng.normal(size=(n, 1))
    xL, states = blocks.stack_forward(blocks.BlockSpec("heun", depth), blocks.LinearMap(A), x0)
    M = np.eye(n) + A + 0.5 * A @ A
    expected = np.linalg.matrix_power(M, depth) @ x0
    assert len(states) == depth + 1
    assert np.allclose(xL.data, expected, rtol=1e-10, atol=1e-12)


def test_linear_resnet_closed_form(rng):
    A = 0.3 * rng.normal(size=(4, 4))
    x0 = rng.normal(size=(4, 1))
    xL, _ = blocks.stack_forward(blocks.BlockSpec("resnet", 5), blocks.LinearMap(A), x0)
    assert np.allclose(xL.data, np.linalg.matrix_power(np.eye(4) + A, 5) @ x0, rtol=1e-12)


@pytest.mark.parametrize("family,alpha", [("plain", None), ("resnet", None), ("heun", None),
                                          ("extheun", 0.8)])
def test_jacobian_matches_finite_differences(rng, family, alpha):
    F = blocks.DenseMap.init(5, rng, bias=True)
    x = rng.normal(size=5)
    J = blocks.block_jacobian(family, F, x, alpha)
    assert np.allclose(J, blocks.finite_difference_jacobian(family, F, x, alpha), atol=1e-8)


def test_linear_heun_jacobian_closed_form(rng):
    A = rng.normal(size=(3, 3))
    J = blocks.block_jacobian("heun", blocks.LinearMap(A), rng.normal(size=3))
    assert np.allclose(J, np.eye(3) + A + 0.5 * A @ A, atol=1e-13)


def test_near_identity_jacobian(rng):
    A = 1e-3 * rng.normal(size=(4, 4))
    for family in ("resnet", "heun"):
        J = blocks.block_jacobian(family, blocks.LinearMap(A), rng.normal(size=4))
        assert np.linalg.norm(J - np.eye(4), 2) <= 1.1 * np.linalg.norm(A, 2)


def _gradient_norm_ratio(family, depth, rng):
    n = 8
    F = blocks.DenseMap(0.05 * rng.uniform(-1, 1, size=(n, n)), "tanh")
    v = rng.normal(size=(n, 1))
    with Tape() as tape:
        x0 = tape.watch(rng.normal(size=(n, 1)))
        xL, _ = blocks.stack_forward(blocks.BlockSpec(family, depth), F, x0)
        root = ad.reduce_sum(ad.mul(xL, v))
    tape.backward(root)
    return np.linalg.norm(tape.grad(x0)) / np.linalg.norm(v)


def test_gradient_flows_through_deep_heun_stack():
    rng = np.random.default_rng(3)
    assert 0.5 <= _gradient_norm_ratio("heun", 20, rng) <= 2.0
    assert _gradient_norm_ratio("plain", 20, np.random.default_rng(3)) < 0.1


def test_heun_stack_equals_unit_step_solver(rng):
    """With the map treated as a vector field and h = 1 the block is one Heun step."""
    A = 0.2 * rng.normal(size=(3, 3))
    F = blocks.DenseMap(A, "tanh")
    x = rng.normal(size=3)
    spec = blocks.BlockSpec("heun", 4)
    xL, _ = blocks.stack_forward(spec, F, x)
    f = lambda t, y: np.tanh(A @ y)  # noqa: E731
    problem = ode_solvers.OdeProblem(f, x, 0.0, 4.0)
    traj = ode_solvers.integrate(problem, ode_solvers.SolverSpec("heun", 1.0))
    assert np.allclose(xL.data, traj.endpoint, rtol=1e-14, atol=1e-15)


def test_unshared_stack_uses_each_map(rng):
    maps = [blocks.LinearMap(0.1 * rng.normal(size=(2, 2)), name=f"A{k}") for k in range(3)]
    x0 = rng.normal(size=(2, 1))
    xL, _ = blocks.stack_forward(blocks.BlockSpec("resnet", 3, share_weights=False), maps, x0)
    expected = x0
    for m in maps:
        expected = expected + m.W.value @ expected
    assert np.allclose(xL.data, expected, rtol=1e-14)
    with pytest.raises(ValueError):
        blocks.stack_forward(blocks.BlockSpec("resnet", 2, share_weights=False), maps, x0)


def test_map_must_preserve_shape():
    F = blocks.FunctionMap(lambda x: ad.concat([x, x]))
    with pytest.raises(ShapeMismatch):
        blocks.heun_forward(F, Tensor([1.0, 2.0]))


@pytest.mark.parametrize("family,alpha", [("heun", None), ("extheun", 0.3), ("plain", None)])
def test_block_parameter_gradients(rng, family, alpha):
    F = blocks.DenseMap.init(4, rng, bias=True)
    x = rng.normal(size=(4, 3))
    y = rng.normal(size=(4, 3))

    def loss():
        xL, _ = blocks.stack_forward(blocks.BlockSpec(family, 2, alpha=alpha), F, x)
        return ad.mse(xL, y)

    errors = ad.gradient_check(loss, F.parameters)
    assert max(errors.values()) < 1e-6


def test_unknown_family():
    with pytest.raises(ValueError):
        blocks.block_forward("rk4", blocks.identity_map(), Tensor([1.0]))
