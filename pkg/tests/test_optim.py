import numpy as np
import pytest

from fewtune import AdamState, NumericError, UsageError, adam_step, make_rng
from fewtune.optim import check_finite_params


def scalar_adam_reference(params, grad_seq, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Plain-Python per-entry Adam, the oracle for the vectorized update."""
    theta = [list(row) for row in params]
    m = [[0.0] * len(params[0]) for _ in params]
    v = [[0.0] * len(params[0]) for _ in params]
    for t, grad in enumerate(grad_seq, start=1):
        for i in range(len(theta)):
            for j in range(len(theta[0])):
                g = grad[i][j]
                m[i][j] = beta1 * m[i][j] + (1 - beta1) * g
                v[i][j] = beta2 * v[i][j] + (1 - beta2) * g * g
                m_hat = m[i][j] / (1 - beta1 ** t)
                v_hat = v[i][j] / (1 - beta2 ** t)
                theta[i][j] -= lr * m_hat / (v_hat ** 0.5 + eps)
    return np.array(theta)


class TestAdamStep:
    def test_first_step_hand_value(self):
        """From zero state, bias correction gives m_hat=g, v_hat=g^2, so the
        first update is -lr * g / (|g| + eps)."""
        params = {"w": np.zeros((1, 1))}
        state = AdamState({"w": (1, 1)}, lr=1e-6)
        out = adam_step(params, {"w": np.array([[0.5]])}, state)
        expected = -1e-6 * 0.5 / (0.5 + 1e-8)
        assert abs(out["w"][0, 0] - expected) < 1e-18
        assert abs(out["w"][0, 0] + 1e-6) < 1e-13

    def test_zero_gradient_leaves_params_unchanged(self):
        params = {"w": np.full((2, 2), 3.5)}
        state = AdamState({"w": (2, 2)}, lr=0.1)
        out = adam_step(params, {"w": np.zeros((2, 2))}, state)
        np.testing.assert_array_equal(out["w"], params["w"])

    def test_matches_scalar_reference_loop(self):
        rng = make_rng(2)
        start = rng.normal(size=(3, 4))
        grad_seq = [rng.normal(size=(3, 4)) for _ in range(7)]
        params = {"w": start.copy()}
        state = AdamState({"w": (3, 4)}, lr=0.01)
        for g in grad_seq:
            params = adam_step(params, {"w": g}, state)
        reference = scalar_adam_reference(start.tolist(), [g.tolist() for g in grad_seq], lr=0.01)
        np.testing.assert_allclose(params["w"], reference, atol=1e-12)

    def test_step_counter_and_moments(self):
        rng = make_rng(3)
        params = {"w": np.zeros((2, 3))}
        state = AdamState({"w": (2, 3)}, lr=0.1)
        for expected_t in (1, 2, 3):
            params = adam_step(params, {"w": rng.normal(size=(2, 3))}, state)
            assert state.t == expected_t
            assert np.all(state.v["w"] >= 0.0)

    def test_rejects_mismatched_names(self):
        state = AdamState({"w": (1, 1)}, lr=0.1)
        with pytest.raises(UsageError):
            adam_step({"other": np.zeros((1, 1))}, {"other": np.zeros((1, 1))}, state)

    def test_rejects_non_positive_lr(self):
        with pytest.raises(UsageError):
            AdamState({"w": (1, 1)}, lr=0.0)


class TestFiniteGuard:
    def test_flags_step_index(self):
        with pytest.raises(NumericError, match="step 17"):
            check_finite_params({"w": np.array([[np.inf]])}, step=17)

    def test_passes_finite_params(self):
        check_finite_params({"w": np.zeros((2, 2))}, step=1)
