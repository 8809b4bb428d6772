"""Infinite-depth kernel machines: path states, nesting, commutation, training."""

import numpy as np
import pytest

import endokit.kernel_infinite as ki
from endokit.errors import DimMismatch
from endokit.volterra import TimeGrid


def make_filtration(steps=100, dim=2, t0=0.0, T=1.0):
    return ki.ContinuousFiltration(grid=TimeGrid(t0=t0, T=T, steps=steps), dim=dim)


def smooth_params(seed=0, m=3, dim=2, steps=100, max_frequency=2, gamma=1.0):
    """Random machine with smooth anchor trajectories and mild coefficients."""
    filt = make_filtration(steps=steps, dim=dim)
    rng = np.random.default_rng(seed)
    t = filt.grid.nodes
    base = rng.normal(size=(m, 1, dim))
    wave = 0.3 * np.sin(2 * np.pi * t[None, :, None] + rng.uniform(0, 2 * np.pi, size=(m, 1, dim)))
    coeffs = ki.FourierCoefficients(
        values=0.1 * rng.normal(size=(m, dim, 2 * max_frequency + 1)),
        t0=filt.t0, T=filt.T)
    return ki.InfiniteMachineParams(filtration=filt, anchors=base + wave,
                                    coefficients=coeffs, gamma=gamma)


def trapezoid_residual(params, psi_points, u_nodes):
    """Defect of u in the fixed-point equation, measured by trapezoid quadrature."""
    grid = params.filtration.grid
    t = grid.nodes
    worst = 0.0
    c_nodes = params.coefficients.evaluate(t)  # (steps+1, m, dim)
    for b in range(u_nodes.shape[0]):
        u = u_nodes[b]
        k_vals = np.exp(-params.gamma *
                        np.sum((u[:, None, :] - np.transpose(params.anchors, (1, 0, 2))) ** 2,
                               axis=2))  # (steps+1, m)
        z = np.zeros_like(k_vals)
        z[1:] = np.cumsum(0.5 * grid.dt * (k_vals[:-1] + k_vals[1:]), axis=0)
        rhs = psi_points[b][None, :] + np.einsum("tm,tmd->td", z, c_nodes)
        worst = max(worst, float(np.max(np.abs(u - rhs))))
    return worst


# ---------------------------------------------------------------------------
# basis and coefficient paths
# ---------------------------------------------------------------------------

def test_fourier_basis_columns():
    t = np.linspace(0, 1, 5)
    basis = ki.fourier_basis(t, 0.0, 1.0, 2)
    assert basis.shape == (5, 5)
    np.testing.assert_array_equal(basis[:, 0], np.ones(5))
    np.testing.assert_allclose(basis[0, 1::2], [1.0, 1.0])  # cosines at t0
    np.testing.assert_allclose(basis[0, 2::2], [0.0, 0.0])  # sines at t0
    assert ki.fourier_basis(t, 0.0, 1.0, 0).shape == (5, 1)
    with pytest.raises(ValueError):
        ki.fourier_basis(t, 0.0, 1.0, -1)


def test_coefficients_validation():
    with pytest.raises(ValueError):
        ki.FourierCoefficients(values=np.zeros((2, 3, 4)), t0=0.0, T=1.0)  # even basis
    with pytest.raises(ValueError):
        ki.FourierCoefficients(values=np.zeros((2, 3)), t0=0.0, T=1.0)
    with pytest.raises(ValueError):
        ki.FourierCoefficients(values=np.zeros((2, 3, 5)), t0=1.0, T=1.0)
    coeffs = ki.FourierCoefficients(values=np.zeros((2, 3, 5)), t0=0.0, T=2.0)
    assert coeffs.m == 2 and coeffs.dim == 3 and coeffs.max_frequency == 2
    assert coeffs.evaluate(np.linspace(0, 2, 7)).shape == (7, 2, 3)
    with pytest.raises(ValueError):
        coeffs.zero_pad(1)


def test_zero_padding_reproduces_paths_exactly():
    rng = np.random.default_rng(4)
    coeffs = ki.FourierCoefficients(values=rng.normal(size=(3, 2, 5)), t0=0.0, T=1.5)
    wide = coeffs.zero_pad(6)
    assert wide.max_frequency == 6
    t = np.linspace(0, 1.5, 33)
    np.testing.assert_array_equal(coeffs.evaluate(t), wide.evaluate(t))


# ---------------------------------------------------------------------------
# encoding and readout
# ---------------------------------------------------------------------------

def test_encode_vector_pads_or_embeds():
    filt = make_filtration(steps=4, dim=3)
    np.testing.assert_array_equal(ki.encode_vector([1.0, 2.0], filt), [1.0, 2.0, 0.0])
    emb = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0]])
    np.testing.assert_array_equal(
        ki.encode_vector([1.0, 2.0, 3.0, 4.0], filt, emb), [1.0, 2.0, 7.0])
    with pytest.raises(DimMismatch):
        ki.encode_vector([1.0, 2.0, 3.0, 4.0], filt)
    with pytest.raises(DimMismatch):
        ki.encode_vector([1.0, 2.0], filt, np.eye(3))


def test_encode_input_is_constant_path():
    filt = make_filtration(steps=4, dim=2)
    path = ki.encode_input([0.5, -1.0], filt)
    assert path.shape == (5, 2)
    np.testing.assert_array_equal(path, np.tile([0.5, -1.0], (5, 1)))


def test_readout_scores_single_and_batch():
    params = smooth_params(steps=10)
    params.readout_weights = np.array([[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]])
    params.readout_bias = np.array([0.0, 1.0, -1.0])
    u = np.zeros((11, 2))
    u[-1] = [3.0, 4.0]
    np.testing.assert_allclose(ki.readout_scores(params, u), [3.0, 9.0, 6.0])
    batch = ki.readout_scores(params, np.array([[3.0, 4.0], [1.0, 0.0]]))
    np.testing.assert_allclose(batch, [[3.0, 9.0, 6.0], [1.0, 1.0, 0.0]])
    with pytest.raises(DimMismatch):
        ki.readout_scores(params, np.zeros((2, 5)))
    bare = smooth_params(steps=10)
    with pytest.raises(ValueError):
        ki.readout_scores(bare, u)


# ---------------------------------------------------------------------------
# stable states
# ---------------------------------------------------------------------------

def test_linear_anchor_gives_closed_form_state():
    # with a single anchor x(t) = p + t c, constant coefficient path c and
    # psi == p, the trajectory rides the anchor: k(u, x) == 1 along it, so
    # u(t) = p + t c and every RK4 stage sees rate exactly one
    steps, dim = 64, 2
    filt = make_filtration(steps=steps, dim=dim)
    p = np.array([0.5, -0.3])
    c = np.array([1.0, 2.0])
    t = filt.grid.nodes
    anchors = (p[None, :] + t[:, None] * c[None, :])[None, :, :]
    coeffs = ki.FourierCoefficients(values=c.reshape(1, dim, 1), t0=0.0, T=1.0)
    params = ki.InfiniteMachineParams(filtration=filt, anchors=anchors,
                                      coefficients=coeffs, gamma=2.0)
    expected = p[None, :] + t[:, None] * c[None, :]

    u_nodes, z_nodes = ki.stable_state_batch(params, p[None, :])
    np.testing.assert_allclose(u_nodes[0], expected, atol=1e-12)
    np.testing.assert_allclose(z_nodes[0][:, 0], t, atol=1e-12)

    sol = ki.stable_state_continuous(params, p)
    np.testing.assert_allclose(sol.u, expected, atol=1e-12)
    assert sol.residual < 1e-12


def test_batch_matches_continuous_solver():
    params = smooth_params(seed=1, steps=60)
    points = np.random.default_rng(2).normal(size=(4, 2))
    u_nodes, _ = ki.stable_state_batch(params, points)
    for b in range(4):
        sol = ki.stable_state_continuous(params, points[b])
        np.testing.assert_allclose(u_nodes[b], sol.u, atol=1e-10)


def test_stable_state_residual_is_small():
    params = smooth_params(seed=3, steps=100)
    points = np.random.default_rng(5).normal(size=(3, 2))
    u_nodes, _ = ki.stable_state_batch(params, points)
    assert trapezoid_residual(params, points, u_nodes) < 1e-4


def test_stable_state_refines_under_grid_doubling():
    coarse = smooth_params(seed=6, steps=50)
    fine = smooth_params(seed=6, steps=100)
    # same machine: resample the coarse anchors rather than redrawing
    fine.anchors = np.stack([
        np.stack([np.interp(fine.filtration.grid.nodes,
                            coarse.filtration.grid.nodes, coarse.anchors[j][:, d])
                  for d in range(2)], axis=1)
        for j in range(coarse.m)])
    fine.coefficients = coarse.coefficients
    point = np.array([[0.4, -0.2]])
    u_coarse, _ = ki.stable_state_batch(coarse, point)
    u_fine, _ = ki.stable_state_batch(fine, point)
    assert np.max(np.abs(u_fine[0][::2] - u_coarse[0])) < 1e-3


def test_nested_basis_reproduces_states_bit_for_bit():
    params = smooth_params(seed=7, steps=40, max_frequency=2)
    wide = ki.InfiniteMachineParams(
        filtration=params.filtration, anchors=params.anchors.copy(),
        coefficients=params.coefficients.zero_pad(5), gamma=params.gamma)
    points = np.random.default_rng(8).normal(size=(5, 2))
    u_small, z_small = ki.stable_state_batch(params, points)
    u_wide, z_wide = ki.stable_state_batch(wide, points)
    assert np.max(np.abs(u_wide - u_small)) == 0.0
    np.testing.assert_array_equal(z_wide, z_small)
    sol_small = ki.stable_state_continuous(params, points[0])
    sol_wide = ki.stable_state_continuous(wide, points[0])
    assert np.max(np.abs(sol_wide.u - sol_small.u)) <= 1e-12


def test_stable_state_batch_validates_dim():
    params = smooth_params(steps=10)
    with pytest.raises(DimMismatch):
        ki.stable_state_batch(params, np.zeros((2, 5)))


def test_restrict_zeroes_future_nodes():
    filt = make_filtration(steps=4, dim=1)
    x = np.arange(5.0)[:, None] + 1.0
    np.testing.assert_array_equal(filt.restrict(x, 0.5).ravel(), [1, 2, 3, 0, 0])
    np.testing.assert_array_equal(filt.restrict(x, 1.0), x)
    with pytest.raises(DimMismatch):
        filt.restrict(np.zeros((4, 1)), 0.5)


# ---------------------------------------------------------------------------
# the induced operator
# ---------------------------------------------------------------------------

def test_running_gram_of_identical_paths_is_elapsed_time():
    params = smooth_params(steps=20)
    x = np.random.default_rng(9).normal(size=(21, 2))
    g = ki.running_gram(x, x, params)
    np.testing.assert_allclose(g, params.filtration.grid.nodes, atol=1e-12)


def test_apply_operator_scales_by_running_gram():
    params = smooth_params(steps=20)
    rng = np.random.default_rng(10)
    x1, x2, x = (rng.normal(size=(21, 2)) for _ in range(3))
    out = ki.apply_operator(x1, x2, x, params)
    g = ki.running_gram(x1, x2, params)
    np.testing.assert_array_equal(out, g[:, None] * x)
    assert out[0, 0] == 0.0  # G(t0) = 0: nothing integrated yet


def test_operator_commutes_with_restriction():
    params = smooth_params(seed=11, steps=30)
    worst = ki.filtration_commutation_check(params, ki.commutation_probes(params, count=10))
    assert worst <= 1e-10


def test_kernel_gram_is_symmetric_psd():
    params = smooth_params(seed=12, m=6, steps=40)
    gram = ki.kernel_gram(params)
    np.testing.assert_allclose(gram, gram.T, atol=1e-14)
    assert float(np.min(np.linalg.eigvalsh(gram))) >= -1e-8
    np.testing.assert_allclose(np.diag(gram), np.full(6, 1.0), atol=1e-12)


def test_rkhs_norm_matches_manual_quadrature():
    params = smooth_params(seed=13, m=4, steps=30)
    grid = params.filtration.grid
    c_nodes = params.coefficients.evaluate(grid.nodes)
    w = np.full(grid.steps + 1, grid.dt)
    w[0] = w[-1] = 0.5 * grid.dt
    gram = ki.kernel_gram(params)
    expected = 0.0
    for j in range(params.m):
        for k in range(params.m):
            inner = float(np.sum(w * np.sum(c_nodes[:, j] * c_nodes[:, k], axis=1)))
            expected += gram[j, k] * inner
    assert ki.rkhs_norm_sq(params) == pytest.approx(expected, rel=1e-10)
    zero = smooth_params(seed=13, m=4, steps=30)
    zero.coefficients = ki.FourierCoefficients(
        values=np.zeros_like(zero.coefficients.values), t0=0.0, T=1.0)
    assert ki.rkhs_norm_sq(zero) == 0.0


def test_param_count_includes_readout():
    params = smooth_params(m=3, dim=2, max_frequency=2)
    assert ki.param_count(params) == 3 * 2 * 5
    params.readout_weights = np.zeros((4, 2))
    params.readout_bias = np.zeros(4)
    assert ki.param_count(params) == 3 * 2 * 5 + 8 + 4


# ---------------------------------------------------------------------------
# validation and serialization
# ---------------------------------------------------------------------------

def test_params_validation():
    filt = make_filtration(steps=10, dim=2)
    coeffs = ki.FourierCoefficients(values=np.zeros((2, 2, 3)), t0=0.0, T=1.0)
    good = np.zeros((2, 11, 2))
    with pytest.raises(DimMismatch):
        ki.InfiniteMachineParams(filtration=filt, anchors=np.zeros((2, 10, 2)),
                                 coefficients=coeffs)
    with pytest.raises(DimMismatch):
        ki.InfiniteMachineParams(filtration=filt, anchors=np.zeros((3, 11, 2)),
                                 coefficients=coeffs)
    wrong_dim = ki.FourierCoefficients(values=np.zeros((2, 3, 3)), t0=0.0, T=1.0)
    with pytest.raises(DimMismatch):
        ki.InfiniteMachineParams(filtration=filt, anchors=good,
                                 coefficients=wrong_dim)
    with pytest.raises(ValueError):
        ki.InfiniteMachineParams(filtration=filt, anchors=good,
                                 coefficients=coeffs, gamma=0.0)
    with pytest.raises(ValueError):
        ki.ContinuousFiltration(grid=TimeGrid(t0=0.0, T=1.0, steps=4), dim=0)


def test_params_json_round_trip():
    params = smooth_params(seed=14, steps=20)
    params.readout_weights = np.random.default_rng(15).normal(size=(3, 2))
    params.readout_bias = np.zeros(3)
    rebuilt = ki.params_from_json(ki.params_to_json(params))
    np.testing.assert_array_equal(rebuilt.anchors, params.anchors)
    np.testing.assert_array_equal(rebuilt.coefficients.values,
                                  params.coefficients.values)
    np.testing.assert_array_equal(rebuilt.readout_weights, params.readout_weights)
    assert rebuilt.encoder is None
    points = np.random.default_rng(16).normal(size=(2, 2))
    u0, _ = ki.stable_state_batch(params, points)
    u1, _ = ki.stable_state_batch(rebuilt, points)
    np.testing.assert_array_equal(u0, u1)
    with pytest.raises(ValueError):
        ki.params_from_json('{"schema": "bogus/9"}')


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def blob_dataset(rng, per_class=4):
    centers = np.array([[2.0, 0.0, 0.0], [-2.0, 1.0, 0.0]])
    x = np.concatenate([c + 0.3 * rng.normal(size=(per_class, 3)) for c in centers])
    y = np.repeat(np.arange(2), per_class)
    return {"x_train": x, "y_train": y, "x_test": x, "y_test": y}


def test_train_infinite_learns_blobs():
    dataset = blob_dataset(np.random.default_rng(0))
    params, history = ki.train_infinite(dataset, {
        "dim": 3, "max_frequency": 1, "mu": 0.001, "epochs": 30, "lr": 0.1,
        "steps": 8, "seed": 0, "eval_every": 10})
    assert history[-1]["train_loss"] < history[0]["train_loss"]
    assert history[-1]["accuracy"] == 1.0
    assert history[-1]["test_accuracy"] == 1.0
    assert {"epoch", "train_loss", "objective", "accuracy", "coeff_hist"} <= set(history[0])
    # eval cadence: test metrics only at multiples of eval_every (and the end)
    assert "test_loss" not in history[0]
    assert "test_loss" in history[9] and "test_loss" in history[-1]
    hist = history[-1]["coeff_hist"]
    assert sum(hist["counts"]) == params.coefficients.values.size
    assert len(hist["edges"]) == len(hist["counts"]) + 1
    assert ki.param_count(params) == 8 * 3 * 3 + 2 * 3 + 2


def test_train_infinite_uses_encoder_for_wide_features():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(6, 10))
    y = np.array([0, 0, 0, 1, 1, 1])
    params, _ = ki.train_infinite({"x_train": x, "y_train": y}, {
        "dim": 4, "max_frequency": 1, "epochs": 2, "steps": 6, "seed": 1})
    assert params.encoder is not None and params.encoder.shape == (4, 10)
    ce, acc = ki.evaluate(params, x, y, embedding=params.encoder)
    assert np.isfinite(ce) and 0.0 <= acc <= 1.0
