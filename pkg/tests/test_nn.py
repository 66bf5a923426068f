import math

import numpy as np
import pytest

from tvtlab import autodiff as ad
from tvtlab.autodiff import Tensor
from tvtlab.nn import MLP, DeepLSTM, Linear, ParameterSet

from conftest import finite_diff_check


def lstm_step_oracle(x, states, weights):
    """Scalar-loop restatement of the two-layer recursion."""
    def sigmoid(v):
        return 1.0 / (1.0 + math.exp(-v))

    outputs = []
    new_states = []
    below = None
    for layer, (h_prev, c_prev) in enumerate(states):
        xin = list(x) + list(h_prev) + (list(below) if below is not None else [])
        hidden = len(h_prev)
        h_new, c_new = [], []
        for u in range(hidden):
            acts = {}
            for gate in ("i", "f", "s", "o"):
                w, b = weights[f"l{layer + 1}.w_{gate}"], weights[f"l{layer + 1}.b_{gate}"]
                s = b[u]
                for j, xv in enumerate(xin):
                    s += w[u, j] * xv
                acts[gate] = s
            i = sigmoid(acts["i"])
            f = sigmoid(acts["f"])
            o = sigmoid(acts["o"])
            c = f * c_prev[u] + i * math.tanh(acts["s"])
            c_new.append(c)
            h_new.append(o * math.tanh(c))
        new_states.append((h_new, c_new))
        outputs.extend(h_new)
        below = h_new
    return outputs, new_states


def _make_lstm(rng, in_dim=3, hidden=4):
    params = ParameterSet()
    lstm = DeepLSTM(params, "lstm", in_dim, hidden, rng, dtype=np.float64)
    return params, lstm


class TestDeepLSTM:
    def test_zero_params_zero_state_gives_zero_output(self, rng):
        params, lstm = _make_lstm(rng)
        for _name, p in params:
            p.data[...] = 0.0
        x = Tensor(rng.standard_normal(3))
        h, _ = lstm(x, lstm.zero_state())
        # o = sigmoid(0) = 0.5, c = 0, h = 0.5 * tanh(0) = 0
        np.testing.assert_array_equal(h.data, np.zeros(8))

    def test_matches_scalar_loop_oracle(self, rng):
        params, lstm = _make_lstm(rng)
        weights = {name.removeprefix("lstm."): p.data for name, p in params}
        x = rng.standard_normal(3)
        state = [(rng.standard_normal(4), rng.standard_normal(4)) for _ in range(2)]
        tensor_state = [(Tensor(h.copy()), Tensor(c.copy())) for h, c in state]
        h, new_state = lstm(Tensor(x.copy()), tensor_state)
        want, want_states = lstm_step_oracle(x, state, weights)
        np.testing.assert_allclose(h.data, want, rtol=1e-10)
        for (ht, ct), (hw, cw) in zip(new_state, want_states):
            np.testing.assert_allclose(ht.data, hw, rtol=1e-10)
            np.testing.assert_allclose(ct.data, cw, rtol=1e-10)

    def test_layer_input_is_concatenation_spec(self, rng):
        params, lstm = _make_lstm(rng, in_dim=2, hidden=3)
        assert params["lstm.l1.w_i"].data.shape == (3, 2 + 3)
        assert params["lstm.l2.w_i"].data.shape == (3, 2 + 3 + 3)

    def test_output_concatenates_both_layers(self, rng):
        _params, lstm = _make_lstm(rng, hidden=5)
        h, state = lstm(Tensor(rng.standard_normal(3)), lstm.zero_state())
        np.testing.assert_array_equal(h.data[:5], state[0][0].data)
        np.testing.assert_array_equal(h.data[5:], state[1][0].data)

    def test_gradients_match_finite_differences(self, rng):
        params, lstm = _make_lstm(rng)
        x = rng.standard_normal(3)

        def loss():
            h, _ = lstm(Tensor(x), lstm.zero_state())
            return ad.tsum(h)

        finite_diff_check([p for _n, p in params], loss, rel_tol=1e-4, rng=rng,
                          max_coords_per_tensor=4)

    def test_state_shape_mismatch_rejected(self, rng):
        _params, lstm = _make_lstm(rng)
        with pytest.raises(ad.ShapeError):
            lstm(Tensor(np.zeros(7)), lstm.zero_state())


class TestInit:
    def test_uniform_bounds(self, rng):
        params = ParameterSet()
        Linear(params, "lin", 100, 50, rng, dtype=np.float64)
        w = params["lin.w"].data
        bound = 1.0 / math.sqrt(100)
        assert np.all(np.abs(w) <= bound)
        assert np.std(w) > bound / 4  # actually random, not degenerate

    def test_forget_gate_bias_shifted(self, rng):
        params = ParameterSet()
        DeepLSTM(params, "lstm", 4, 8, rng, dtype=np.float64)
        fan_in = 4 + 8
        bound = 1.0 / math.sqrt(fan_in)
        assert np.all(params["lstm.l1.b_f"].data >= 1.0 - bound)
        assert np.all(np.abs(params["lstm.l1.b_i"].data) <= bound)

    def test_duplicate_name_rejected(self, rng):
        params = ParameterSet()
        params.add("p", np.zeros(3))
        with pytest.raises(ValueError):
            params.add("p", np.zeros(3))

    def test_every_parameter_has_gradient_slot(self, rng):
        params = ParameterSet()
        MLP(params, "m", 3, 4, 2, rng)
        for _name, p in params:
            assert p.grad is not None and p.grad.shape == p.data.shape

    def test_copy_is_deep(self, rng):
        params = ParameterSet()
        MLP(params, "m", 3, 4, 2, rng)
        clone = params.copy()
        clone["m.l1.w"].data[...] = 99.0
        assert not np.any(params["m.l1.w"].data == 99.0)
