"""Part-matrix fitting, combination, revision, and baselines."""
import numpy as np
import pytest

from partnoise.errors import ConfigError, DataError
from partnoise.simplexopt import ProjGradConfig, project_simplex_rows
from partnoise.transition import (
    approximation_error,
    class_dependent_baseline,
    combine,
    combine_batch,
    fit_part_matrices,
    load_stack,
    revise,
    revise_batch,
    save_stack,
)


def _planted_anchor_problem(c, r, k, seed, alpha=0.8):
    """Targets generated exactly as coefficient-weighted stack rows."""
    rng = np.random.default_rng(seed)
    stack = rng.dirichlet(np.full(c, alpha), size=(r, c))
    coeffs = rng.dirichlet(np.full(r, 0.5), size=(c, k))
    targets = np.einsum("ikj,jic->ikc", coeffs, stack)
    return stack, coeffs, targets


def test_recovers_planted_combined_rows():
    stack_true, coeffs, targets = _planted_anchor_problem(4, 3, 40, seed=0)
    fitted = fit_part_matrices(targets, coeffs, ProjGradConfig(seed=0))
    rng = np.random.default_rng(1)
    h_fresh = rng.dirichlet(np.ones(3), size=100).T
    t_hat = combine_batch(fitted, h_fresh)
    t_true = np.einsum("jm,jab->mab", h_fresh, stack_true)
    assert np.abs(t_hat - t_true).sum(axis=2).max() <= 1e-3


def test_r1_matches_mean_of_targets():
    # with one part every coefficient is 1, so the optimum per class row
    # is the plain mean of that class's anchor rows
    rng = np.random.default_rng(2)
    c, k = 4, 9
    targets = rng.dirichlet(np.ones(c), size=(c, k))
    ones = np.ones((c, k, 1))
    fitted = fit_part_matrices(targets, ones, ProjGradConfig(seed=0))
    assert np.allclose(fitted.matrices[0], targets.mean(axis=1), atol=1e-6)


def test_fit_traces_non_increasing():
    _, coeffs, targets = _planted_anchor_problem(3, 2, 12, seed=3)
    fitted = fit_part_matrices(targets, coeffs)
    for trace in fitted.row_objective_traces:
        assert np.all(np.diff(trace) <= 1e-10)
    assert fitted.converged
    assert np.all(fitted.matrices >= 0.0)
    assert np.allclose(fitted.matrices.sum(axis=2), 1.0, atol=1e-12)


def test_fit_validation():
    _, coeffs, targets = _planted_anchor_problem(3, 2, 12, seed=4)
    with pytest.raises(ConfigError):
        fit_part_matrices(targets[:, :1, :], coeffs[:, :1, :])  # k < r
    with pytest.raises(ConfigError):
        fit_part_matrices(targets[0], coeffs)
    with pytest.raises(ConfigError):
        fit_part_matrices(targets, coeffs[:, :, 0])
    bad = targets.copy()
    bad[0, 0, 0] += 0.5
    with pytest.raises(ConfigError):
        fit_part_matrices(bad, coeffs)


def test_combine_linearity():
    stack, _, _ = _planted_anchor_problem(3, 4, 10, seed=5)
    from partnoise.transition import TransitionStack

    ts = TransitionStack(
        matrices=stack,
        fit_objective_per_row=np.zeros(3),
        row_objective_traces=[],
        converged=True,
    )
    rng = np.random.default_rng(6)
    for alpha in (0.0, 0.25, 0.5, 0.9, 1.0):
        h1 = rng.dirichlet(np.ones(4))
        h2 = rng.dirichlet(np.ones(4))
        mixed = combine(ts, alpha * h1 + (1 - alpha) * h2)
        parts = alpha * combine(ts, h1) + (1 - alpha) * combine(ts, h2)
        assert np.max(np.abs(mixed - parts)) <= 1e-12
    # convexity: combined rows stay on the simplex
    t = combine(ts, rng.dirichlet(np.ones(4)))
    assert np.all(t >= 0.0) and np.allclose(t.sum(axis=1), 1.0, atol=1e-12)


def test_combine_batch_matches_single():
    stack, _, _ = _planted_anchor_problem(3, 2, 8, seed=7)
    from partnoise.transition import TransitionStack

    ts = TransitionStack(stack, np.zeros(3), [], True)
    rng = np.random.default_rng(8)
    h = rng.dirichlet(np.ones(2), size=15).T
    batch = combine_batch(ts, h)
    for i in range(15):
        assert np.array_equal(batch[i], combine(ts, h[:, i]))
    with pytest.raises(ConfigError):
        combine(ts, np.ones(3))
    with pytest.raises(ConfigError):
        combine_batch(ts, h.T)


def test_revise_row_stochastic_over_random_pairs():
    rng = np.random.default_rng(9)
    for _ in range(300):
        c = int(rng.integers(2, 6))
        t = project_simplex_rows(rng.dirichlet(np.ones(c), size=c))
        slack = rng.uniform(-0.5, 0.5, size=(c, c))
        out = revise(t, slack)
        assert np.all(out.matrix >= 0.0)
        assert np.all(np.abs(out.matrix.sum(axis=1) - 1.0) <= 1e-12)


def test_revise_zero_slack_is_exact_identity():
    rng = np.random.default_rng(10)
    t = project_simplex_rows(rng.dirichlet(np.ones(4), size=4))
    out = revise(t, np.zeros((4, 4)))
    assert np.array_equal(out.matrix, t)
    assert out.uniform_rows == ()


def test_revise_degenerate_row_goes_uniform():
    t = np.array([[0.5, 0.5], [0.3, 0.7]])
    slack = np.array([[-1.0, -1.0], [0.0, 0.0]])
    out = revise(t, slack)
    assert out.uniform_rows == (0,)
    assert np.array_equal(out.matrix[0], [0.5, 0.5])
    assert np.allclose(out.matrix[1], [0.3, 0.7])


def test_revise_batch_matches_single():
    rng = np.random.default_rng(11)
    t = rng.dirichlet(np.ones(3), size=(20, 3))
    slack = rng.uniform(-0.3, 0.3, size=(3, 3))
    batch = revise_batch(t, slack)
    for i in range(20):
        assert np.allclose(batch[i], revise(t[i], slack).matrix, atol=1e-15)
    with pytest.raises(ConfigError):
        revise(t, slack)  # 3-D input to the single-matrix form
    with pytest.raises(ConfigError):
        revise_batch(t[0], slack)


def test_approximation_error_values():
    assert approximation_error(np.array([0.2, 0.8]), np.array([0.2, 0.8])) == 0.0
    assert approximation_error(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 2.0
    with pytest.raises(ConfigError):
        approximation_error(np.zeros(2), np.zeros(3))


def test_class_dependent_baseline_shapes():
    rng = np.random.default_rng(12)
    one_each = rng.dirichlet(np.ones(3), size=(3, 1))
    base = class_dependent_baseline(one_each)
    assert np.allclose(base, one_each[:, 0, :], atol=1e-12)
    same = np.repeat(one_each, 5, axis=1)
    assert np.allclose(class_dependent_baseline(same), base, atol=1e-12)
    with pytest.raises(ConfigError):
        class_dependent_baseline(np.zeros((2, 3)))
    with pytest.raises(DataError):
        class_dependent_baseline(np.zeros((2, 0, 2)))


def test_planted_dominance_with_exact_coefficients():
    # heterogeneous planted rows: fitting with the generator's own
    # coefficients reconstructs instance rows far better than the
    # per-class constant baseline can
    rng = np.random.default_rng(13)
    c, r, k, m = 3, 2, 20, 400
    stack_true = rng.dirichlet(np.full(c, 0.5), size=(r, c))
    h_all = rng.dirichlet(np.full(r, 0.5), size=m).T
    y = rng.integers(0, c, size=m)
    t_rows = np.einsum("jm,jab->mab", h_all, stack_true)[np.arange(m), y]
    anchor_idx = rng.permutation(m)[: c * k].reshape(c, k)
    anchor_rows = np.stack(
        [
            np.einsum("jm,jb->mb", h_all[:, anchor_idx[i]], stack_true[:, i, :])
            for i in range(c)
        ]
    )
    coeffs = h_all[:, anchor_idx].transpose(1, 2, 0)
    fitted = fit_part_matrices(anchor_rows, coeffs, ProjGradConfig(seed=0))
    ptd_rows = combine_batch(fitted, h_all)[np.arange(m), y]
    ptd = np.abs(ptd_rows - t_rows).sum(axis=1).mean()
    base = class_dependent_baseline(anchor_rows)
    cd = np.abs(base[y] - t_rows).sum(axis=1).mean()
    assert ptd <= 0.5 * cd


def test_stack_save_load_roundtrip(tmp_path):
    _, coeffs, targets = _planted_anchor_problem(3, 2, 10, seed=14)
    fitted = fit_part_matrices(targets, coeffs)
    save_stack(fitted, tmp_path / "stack")
    loaded = load_stack(tmp_path / "stack")
    assert np.array_equal(loaded.matrices, fitted.matrices)
    assert np.array_equal(
        loaded.fit_objective_per_row, fitted.fit_objective_per_row
    )
    assert loaded.converged == fitted.converged
    with pytest.raises(DataError):
        load_stack(tmp_path / "missing")
