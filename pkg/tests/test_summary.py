"""Trace embedding network: shapes, determinism, serialization."""

import numpy as np
import pytest

from adexsbi.config import NdeConfig
from adexsbi.nn import conv1d_output_length
from adexsbi.summary import SummaryNet


def test_output_dimension_is_14():
    net = SummaryNet(NdeConfig(), seed=0)
    traces = np.random.default_rng(0).normal(size=(3, 10000))
    out = net.forward_np(traces)
    assert out.shape == (3, 14)


def test_conv_stack_sequence_lengths():
    net = SummaryNet(NdeConfig(), seed=0)
    assert net.seq_lengths == (2499, 1248)
    # oracle: count of valid kernel placements
    naive1 = len(range(0, 10000 - 8 + 1, 4))
    naive2 = len(range(0, naive1 - 4 + 1, 2))
    assert net.seq_lengths == (naive1, naive2)
    assert conv1d_output_length(10000, 8, 4) == naive1


def test_eval_deterministic():
    net = SummaryNet(NdeConfig(), seed=1)
    traces = np.random.default_rng(1).normal(size=(2, 10000))
    np.testing.assert_array_equal(net.forward_np(traces), net.forward_np(traces))


def test_wrong_length_rejected():
    net = SummaryNet(NdeConfig(), seed=0)
    with pytest.raises(ValueError, match="10000"):
        net.forward_np(np.zeros((1, 5000)))


def test_normalization_applied():
    net = SummaryNet(NdeConfig(), seed=2)
    net.set_normalization(mean=-0.06, std=0.01)
    raw = np.full((1, 10000), -0.06)
    assert np.all(net.normalize_traces(raw) == 0.0)


def test_save_load_roundtrip(tmp_path):
    net = SummaryNet(NdeConfig(), seed=3)
    net.set_normalization(-0.065, 0.008)
    traces = np.random.default_rng(3).normal(-0.06, 0.01, size=(2, 10000))
    expected = net.forward_np(traces)
    net.save(tmp_path)
    again = SummaryNet.load(tmp_path)
    np.testing.assert_array_equal(again.forward_np(traces), expected)
    assert again.trace_mean == net.trace_mean


def test_gradients_reach_all_parameters():
    from adexsbi import nn

    spec = NdeConfig(gru_units=8, summary_dim=4)
    net = SummaryNet(spec, seed=4, n_input=200)
    traces = np.random.default_rng(4).normal(size=(2, 200))
    out = net.forward_graph(traces)
    loss = nn.tsum(nn.mul(out, out))
    loss.backward()
    for p in net.parameters():
        assert p.grad is not None, p.name
        assert np.any(p.grad != 0.0), p.name
