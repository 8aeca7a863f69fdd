"""Attention layer and stack against a naive per-head re-implementation."""

import math

import numpy as np
import pytest

from tiltopt import autodiff as ad
from tiltopt import gat
from tiltopt.autodiff import Var
from tiltopt.graph import build_graph
from tiltopt.simulator import build_layout

from test_autodiff import fd_grads, rel_err


# --- independent oracle ------------------------------------------------------

def np_leaky(x):
    return np.where(x >= 0.0, x, 0.2 * x)


def np_softmax(x):
    e = np.exp(x - x.max())
    return e / e.sum()


def np_elu(x):
    return np.where(x > 0.0, x, np.exp(x) - 1.0)


def naive_layer(feats, layer, neighborhoods):
    """Per-head, per-node, per-neighbor triple loop straight from the math."""
    n = feats.shape[0]
    out = np.zeros((n, layer.d_out))
    for head in range(layer.n_heads):
        w = layer.w[head].value
        a = layer.att[head].value[:, 0]
        z = feats @ w.T
        do = layer.d_out
        for i in range(n):
            nb = neighborhoods[i]
            logits = np.array([z[i] @ a[:do] + z[j] @ a[do:] for j in nb])
            alpha = np_softmax(np_leaky(logits))
            for weight, j in zip(alpha, nb):
                out[i] += weight * z[j]
    return out


def naive_stack(feats, stack, neighborhoods):
    h = feats
    for li, layer in enumerate(stack.layers):
        h = naive_layer(h, layer, neighborhoods)
        if li != len(stack.layers) - 1:
            h = np_elu(h)
    return h


def random_graph_neighborhoods(rng, n):
    """Random symmetric graph, then closed neighborhoods, self first."""
    adj = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < 0.45:
                adj[i, j] = adj[j, i] = True
    return [np.concatenate(([i], np.nonzero(adj[i])[0])).astype(np.intp)
            for i in range(n)]


# --- coefficients -------------------------------------------------------------

def make_layer(rng, d_in, d_out, heads):
    return gat.GatLayer(
        [Var(rng.standard_normal((d_out, d_in))) for _ in range(heads)],
        [Var(rng.standard_normal((2 * d_out, 1))) for _ in range(heads)])


def test_singleton_neighborhood_gives_weight_one():
    layer = make_layer(np.random.default_rng(0), 4, 3, 2)
    alpha = gat.attention_coefficients(np.ones((1, 4)), layer, 0)
    assert alpha.shape == (1,)
    assert alpha[0] == pytest.approx(1.0, abs=1e-15)


def test_identical_neighbors_get_uniform_attention():
    layer = make_layer(np.random.default_rng(1), 4, 3, 2)
    feats = np.tile(np.array([0.3, -1.2, 0.7, 0.1]), (5, 1))
    alpha = gat.attention_coefficients(feats, layer, 1)
    assert np.allclose(alpha, 0.2, atol=1e-12)


def test_two_node_hand_case():
    # identity transform, attention vector picking one coordinate per side:
    # logits are 1+2=3 toward self and 1+4=5 toward the neighbor
    layer = gat.GatLayer([Var(np.eye(2))],
                         [Var(np.array([[1.0], [0.0], [0.0], [1.0]]))])
    feats = np.array([[1.0, 2.0], [3.0, 4.0]])
    alpha = gat.attention_coefficients(feats, layer, 0)
    z = math.exp(3.0) + math.exp(5.0)
    assert alpha[0] == pytest.approx(math.exp(3.0) / z, rel=1e-12)
    assert alpha[1] == pytest.approx(math.exp(5.0) / z, rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_coefficients_positive_and_normalized(seed):
    rng = np.random.default_rng(seed)
    layer = make_layer(rng, 6, 5, 3)
    feats = rng.standard_normal((7, 6)) * 3.0
    for head in range(3):
        alpha = gat.attention_coefficients(feats, layer, head)
        assert np.all(alpha > 0.0)
        assert abs(alpha.sum() - 1.0) < 1e-9


def test_empty_neighborhood_rejected():
    layer = make_layer(np.random.default_rng(2), 4, 3, 1)
    with pytest.raises(ValueError):
        gat.attention_coefficients(np.zeros((0, 4)), layer, 0)


# --- packed forward vs oracle --------------------------------------------------

@pytest.mark.parametrize("seed", range(6))
def test_stack_forward_matches_naive(seed):
    rng = np.random.default_rng(100 + seed)
    n = int(rng.integers(2, 9))
    stack = gat.init_gat_stack(rng, d_in=5, d_hidden=6, n_layers=2, n_heads=3)
    feats = rng.standard_normal((n, 5))
    neighborhoods = random_graph_neighborhoods(rng, n)
    packed = gat.stack_forward(stack, feats, neighborhoods).value
    assert np.allclose(packed, naive_stack(feats, stack, neighborhoods), atol=1e-10)


def test_six_node_graph_matches_naive():
    rng = np.random.default_rng(55)
    layout = build_layout(1, 500.0)
    g = build_graph(layout.site_xy[:2], layout.cell_site[:6], 3)
    stack = gat.init_gat_stack(rng, d_in=8, d_hidden=16, n_layers=2, n_heads=6)
    feats = rng.standard_normal((6, 8))
    packed = gat.stack_forward(stack, feats, g.closed_neighborhoods).value
    assert packed.shape == (6, 16)
    assert np.allclose(packed, naive_stack(feats, stack, g.closed_neighborhoods),
                       atol=1e-10)


def test_star_topology_matches_naive():
    # hub-and-spoke neighborhoods exercise the size-grouped packing: one
    # size-5 group for the hub, one size-2 group for the leaves
    rng = np.random.default_rng(7)
    stack = gat.init_gat_stack(rng, d_in=4, d_hidden=5, n_layers=2, n_heads=2)
    feats = rng.standard_normal((5, 4))
    stars = [np.arange(5)] + [np.array([j, 0]) for j in range(1, 5)]
    embedded = gat.stack_forward(stack, feats, stars, final_nodes=[0]).value
    assert embedded.shape == (1, 5)
    assert np.allclose(embedded, naive_stack(feats, stack, stars)[0], atol=1e-10)


def test_single_layer_singleton_is_plain_transform():
    rng = np.random.default_rng(3)
    layer = make_layer(rng, 4, 6, 1)
    stack = gat.GatStack([layer])
    x = rng.standard_normal((1, 4))
    out = gat.stack_forward(stack, x, [np.array([0])]).value
    assert np.allclose(out, x @ layer.w[0].value.T, atol=1e-12)


def test_inner_layer_activation_is_elu():
    rng = np.random.default_rng(4)
    stack = gat.init_gat_stack(rng, d_in=3, d_hidden=4, n_layers=2, n_heads=1)
    x = rng.standard_normal((1, 3))
    nb = [np.array([0])]
    out = gat.stack_forward(stack, x, nb).value
    z1 = x @ stack.layers[0].w[0].value.T
    expect = np_elu(z1) @ stack.layers[1].w[0].value.T
    assert np.allclose(out, expect, atol=1e-12)


def test_neighbor_order_does_not_change_output():
    rng = np.random.default_rng(9)
    stack = gat.init_gat_stack(rng, d_in=4, d_hidden=5, n_layers=2, n_heads=2)
    feats = rng.standard_normal((6, 4))
    base = [np.array([0, 1, 2, 3, 4, 5]), np.array([1, 0, 2]), np.array([2, 0, 1]),
            np.array([3, 0]), np.array([4, 0]), np.array([5, 0])]
    shuffled = [np.array([0, 4, 2, 5, 1, 3]), np.array([1, 2, 0]), np.array([2, 1, 0]),
                np.array([3, 0]), np.array([4, 0]), np.array([5, 0])]
    a = gat.stack_forward(stack, feats, base, final_nodes=[0]).value
    b = gat.stack_forward(stack, feats, shuffled, final_nodes=[0]).value
    assert np.allclose(a, b, atol=1e-12)


def test_zero_weights_give_zero_outputs():
    stack = gat.init_gat_stack(np.random.default_rng(0), 4, 5, 2, 2)
    for layer in stack.layers:
        for w in layer.w:
            w.value[:] = 0.0
    feats = np.random.default_rng(1).standard_normal((4, 4))
    stars = [np.arange(4)] + [np.array([j, 0]) for j in range(1, 4)]
    out = gat.stack_forward(stack, feats, stars).value
    assert np.all(out == 0.0)


def test_two_layer_stack_ignores_nodes_beyond_two_hops():
    # chain graph 0-1-2-3-4: node 0 must be bit-identical under any change at 3, 4
    rng = np.random.default_rng(12)
    stack = gat.init_gat_stack(rng, d_in=4, d_hidden=6, n_layers=2, n_heads=3)
    chain = [np.array([0, 1]), np.array([1, 0, 2]), np.array([2, 1, 3]),
             np.array([3, 2, 4]), np.array([4, 3])]
    feats = rng.standard_normal((5, 4))
    base = gat.stack_forward(stack, feats, chain, final_nodes=[0]).value
    for far in (3, 4):
        bumped = feats.copy()
        bumped[far] += rng.standard_normal(4) * 10.0
        again = gat.stack_forward(stack, bumped, chain, final_nodes=[0]).value
        assert np.array_equal(base, again)
    near = feats.copy()
    near[2] += 1.0   # two hops away: must influence node 0
    moved = gat.stack_forward(stack, near, chain, final_nodes=[0]).value
    assert not np.allclose(base, moved)


# --- gradients ------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(3))
def test_stack_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(200 + seed)
    stack = gat.init_gat_stack(rng, d_in=4, d_hidden=5, n_layers=2, n_heads=2)
    feats = rng.standard_normal((5, 4))
    neighborhoods = random_graph_neighborhoods(rng, 5)
    r = rng.standard_normal((5, 5))
    params = stack.params()

    def fn(tape):
        out = gat.stack_forward(stack, feats, neighborhoods, tape=tape)
        return ad.sum_all(tape, ad.cmul(tape, out, r))

    tape = ad.Tape()
    ad.backward(tape, fn(tape))
    analytic = [p.grad.copy() for p in params]
    numeric = fd_grads(lambda: float(fn(None).value[0, 0]), params)
    for a, n_ in zip(analytic, numeric):
        assert rel_err(a, n_) < 1e-4


# --- plumbing ---------------------------------------------------------------------

def test_init_shapes_and_determinism():
    a = gat.init_gat_stack(np.random.default_rng(5))
    b = gat.init_gat_stack(np.random.default_rng(5))
    assert len(a.layers) == 2
    assert a.layers[0].n_heads == 6
    assert a.layers[0].w[0].value.shape == (16, 8)
    assert a.layers[0].att[0].value.shape == (32, 1)
    assert a.layers[1].w[0].value.shape == (16, 16)
    assert all(x.value.tobytes() == y.value.tobytes()
               for x, y in zip(a.params(), b.params()))


def test_clone_and_copy_are_deep():
    a = gat.init_gat_stack(np.random.default_rng(6))
    b = gat.clone_stack(a)
    b.layers[0].w[0].value[:] = 0.0
    assert not np.allclose(a.layers[0].w[0].value, 0.0)
    gat.copy_stack_values(a, b)
    assert np.array_equal(a.layers[0].w[0].value, b.layers[0].w[0].value)


def test_mean_first_layer_attention_normalized():
    rng = np.random.default_rng(8)
    stack = gat.init_gat_stack(rng, d_in=4, d_hidden=5, n_layers=2, n_heads=3)
    feats = rng.standard_normal((6, 4))
    neighborhoods = random_graph_neighborhoods(rng, 6)
    rows = gat.mean_first_layer_attention(stack, feats, neighborhoods)
    for nb, alpha in zip(neighborhoods, rows):
        assert alpha.shape == (len(nb),)
        assert abs(alpha.sum() - 1.0) < 1e-9
        assert np.all(alpha > 0.0)


def test_misordered_neighborhood_rejected():
    stack = gat.init_gat_stack(np.random.default_rng(1), 3, 4, 1, 1)
    with pytest.raises(ValueError):
        gat.stack_forward(stack, np.zeros((2, 3)),
                          [np.array([1, 0]), np.array([1, 0])])
