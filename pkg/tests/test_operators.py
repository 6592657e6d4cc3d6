import json

import numpy as np
import pytest

from fracparabolic import operators as ops
from fracparabolic.errors import ConfigurationError, DomainBoundaryError, PreconditionError
from fracparabolic.grids import GridSpec


def test_multi_index():
    mu = ops.MultiIndex((2, 1))
    assert mu.order == 3 and mu.n == 2
    assert len(list(ops.multi_indices(2, 2))) == 3
    with pytest.raises(ConfigurationError):
        ops.MultiIndex((-1,))


def test_symbol_of_builtins():
    xi = np.array([[0.0], [1.5], [-2.0]])
    np.testing.assert_allclose(ops.symbol_eval(ops.heat_1d(), xi)[:, 0, 0], -xi[:, 0] ** 2)
    np.testing.assert_allclose(ops.symbol_eval(ops.biharmonic_1d(), xi)[:, 0, 0], -xi[:, 0] ** 4)
    s = ops.symbol_eval(ops.coupled_1d(), [2.0])
    np.testing.assert_allclose(s, 4.0 * np.array([[-1.0, 0.3], [0.0, -2.0]]))


def test_symbol_homogeneity():
    op = ops.ConstantOperator(2, 2, 1, {(2, 0): [[-1, 0.2], [0, -1]], (1, 1): [[0.1, 0], [0, 0.1]],
                                        (0, 2): [[-2, 0], [0.3, -1]]})
    xi = np.array([0.3, -0.7])
    np.testing.assert_allclose(op.symbol(3.0 * xi), 9.0 * op.symbol(xi))


def test_constant_operator_validation():
    with pytest.raises(ConfigurationError):
        ops.ConstantOperator(1, 1, 1, {(1,): [[1.0]]})
    with pytest.raises(ConfigurationError):
        ops.ConstantOperator(1, 1, 1, {})
    with pytest.raises(ConfigurationError):
        ops.ConstantOperator(1, 1, 1, {(2,): [[np.nan]]})
    with pytest.raises(ConfigurationError):
        ops.symbol_eval(ops.heat_1d(), [1.0, 2.0])


def test_parabolicity():
    assert ops.require_parabolic(ops.heat_1d()) == pytest.approx(1.0)
    assert ops.require_parabolic(ops.coupled_1d()) > 0
    with pytest.raises(PreconditionError):
        ops.require_parabolic(ops.ConstantOperator(1, 1, 1, {(2,): [[1.0]]}))
    # eigenvalues in the left half plane are not enough: the quadratic form must be negative
    non_normal = ops.ConstantOperator(1, 2, 1, {(2,): [[-1.0, 5.0], [0.0, -1.0]]})
    with pytest.raises(PreconditionError):
        ops.require_parabolic(non_normal)


def test_freeze_and_variable_system():
    sys_ = ops.sine_system()
    op = ops.freeze(sys_, [np.pi / 2])
    assert op.coeffs[ops.MultiIndex((2,))][0, 0] == pytest.approx(-1.5)
    assert sys_.is_constant(np.array([[0.0], [1.0]])) is False
    c = ops.VariableSystem.from_constant(ops.heat_1d())
    assert c.is_constant(np.linspace(-3, 3, 7)[:, None])
    rep = sys_.verify(np.linspace(-np.pi, np.pi, 13)[:, None])
    assert rep["bound_ok"] and rep["holder_ok"] and rep["parabolic_ok"]
    with pytest.raises(ConfigurationError):
        ops.VariableSystem(1, 1, 1, {(2,): [[-1.0]]}, {(2,): [[1.0]]})
    with pytest.raises(ConfigurationError):
        ops.VariableSystem(1, 1, 1, {(2,): [[-1.0]]}, holder_exponent=1.5)


def test_freeze_rejects_non_parabolic_point():
    sys_ = ops.sine_system(amplitude=2.0)
    ops.freeze(sys_, [np.pi / 2])
    with pytest.raises(PreconditionError):
        ops.freeze(sys_, [-np.pi / 2])


@pytest.mark.parametrize("order", [1, 2, 3, 4])
def test_finite_differences_second_order(order):
    # D^m e^{ikx} = k^m e^{ikx}; the error must fall by ~4 per grid doubling
    k = 2.0
    errs = []
    for M in (32, 64, 128):
        g = GridSpec(1, np.pi, M)
        x = g.points()[:, 0]
        D = ops.derivative_matrix(g, ops.MultiIndex((order,)), periodic=True)
        u = np.exp(1j * k * x)
        errs.append(np.max(np.abs(D @ u - k**order * u)))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.9)


def test_apply_plane_wave_matches_symbol():
    op = ops.coupled_1d()
    sys_ = ops.VariableSystem.from_constant(op)
    z = np.array([1.0, 2.0])
    k = 1.0
    errs = []
    for M in (64, 128):
        g = GridSpec(1, np.pi, M)
        x = g.points()[:, 0]
        u = np.exp(1j * k * x)[:, None] * z
        got = ops.apply(sys_, "principal", u, g, periodic=True)
        ref = u @ ops.symbol_eval(op, [k]).T
        errs.append(np.max(np.abs(got - ref)))
    assert errs[1] < errs[0] / 3.5 and errs[1] < 1e-3


def test_apply_boundary():
    sys_ = ops.VariableSystem.from_constant(ops.heat_1d())
    g = GridSpec(1, 1.0, 16)
    u = np.ones(16)
    with pytest.raises(DomainBoundaryError):
        ops.apply(sys_, "full", u, g, x_index=0)
    assert np.isnan(ops.apply(sys_, "full", u, g)[0, 0])
    assert ops.apply(sys_, "full", u, g, x_index=5)[0] == 0


def test_apply_frozen_part():
    sys_ = ops.sine_system()
    g = GridSpec(1, np.pi, 64)
    x = g.points()[:, 0]
    u = np.sin(x)
    y = np.array([0.7])
    got = ops.apply(sys_, ("frozen", y), u, g, periodic=True)[:, 0]
    a = -(1 + 0.5 * np.sin(0.7))
    # a D^2 = -a d^2/dx^2 maps sin to a sin
    np.testing.assert_allclose(got, a * np.sin(x), atol=5e-3)


def test_expression_grammar():
    f = ops.compile_expression("-(1 + 0.5*sin(x)) * exp(-x**2) + pi", 1)
    x = np.array([[0.3], [1.0]])
    np.testing.assert_allclose(f(x), -(1 + 0.5 * np.sin(x[:, 0])) * np.exp(-x[:, 0] ** 2) + np.pi)
    for bad in ["__import__('os')", "y + 1", "x.real", "lambda: 1", "sin(x, x)", "1 +"]:
        with pytest.raises(ConfigurationError):
            ops.compile_expression(bad, 1)


def test_load_system_constant_and_variable(tmp_path):
    doc = {"n": 1, "N": 1, "b": 1, "principal": [{"index": [2], "matrix": [[-2.0]]}]}
    op = ops.load_system(doc)
    assert isinstance(op, ops.ConstantOperator)
    assert op.symbol([1.0])[0, 0] == -2.0
    vdoc = {"n": 1, "N": 1, "b": 1,
            "principal": [{"index": [2], "matrix": [["-(1 + 0.5*sin(x))"]]}],
            "lower": [{"index": [1], "matrix": [[[0.0, 0.1]]]}],
            "holder": {"exponent": 1.0, "constant": 0.5}, "bound": 1.5, "period": 2 * np.pi}
    path = tmp_path / "sys.json"
    path.write_text(json.dumps(vdoc))
    sys_ = ops.load_system(str(path))
    assert isinstance(sys_, ops.VariableSystem) and sys_.period == pytest.approx(2 * np.pi)
    ref = ops.sine_system()
    x = np.linspace(-3, 3, 9)[:, None]
    np.testing.assert_allclose(sys_.coefficient_samples(x)[ops.MultiIndex((2,))],
                               ref.coefficient_samples(x)[ops.MultiIndex((2,))])
    assert sys_.coefficient_samples(x, "lower")[ops.MultiIndex((1,))][0, 0, 0] == 0.1j
    assert isinstance(ops.load_system(json.dumps(vdoc)), ops.VariableSystem)


@pytest.mark.parametrize("doc", [
    {"n": 1, "N": 1},
    {"n": 1, "N": 1, "b": 1, "principal": [{"index": [2], "matrix": [[-1, 0]]}]},
    {"n": 1, "N": 1, "b": 1, "principal": [{"index": [2], "matrix": [["-1 + z"]]}]},
])
def test_load_system_errors(doc):
    with pytest.raises(ConfigurationError):
        ops.load_system(doc)


def test_load_system_missing_file(tmp_path):
    with pytest.raises(ConfigurationError):
        ops.load_system(str(tmp_path / "nope.json"))


def test_to_dict_round_trip():
    op = ops.coupled_1d()
    doc = op.to_dict()
    doc["principal"] = [{"index": c["index"], "matrix": c["real"]} for c in doc.pop("coefficients")]
    again = ops.load_system(doc)
    assert again.key == op.key
