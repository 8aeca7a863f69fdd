"""Multi-head graph attention over cell features.

Each head scores every neighbor j of an attending cell i by a leaky-rectified
linear form in the transformed pair (W h_i, W h_j), normalizes the scores with
a softmax over the closed neighborhood (self included), and aggregates the
transformed neighbors with those weights. Head outputs are summed, not
concatenated. A stack applies an exponential-linear unit between layers and
leaves the final layer linear.

One implementation serves every call pattern; only the neighborhood lists
handed in differ. Acting and the attention export run over the whole cell
graph at once; replay rebuilds each transition's stored neighborhood and runs
the same forward on that induced subgraph.

The forward is packed: all heads of a layer run as a handful of rank-2 tape
ops instead of per-head Python loops. ``attention_coefficients`` is the
plain per-head reference used for inspection and export; tests pin the packed
path to a naive re-implementation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Var

LEAKY_SLOPE = 0.2


@dataclass
class GatLayer:
    w: list[Var]     # per head, (d_out, d_in)
    att: list[Var]   # per head, (2 * d_out, 1)

    @property
    def n_heads(self) -> int:
        return len(self.w)

    @property
    def d_in(self) -> int:
        return self.w[0].value.shape[1]

    @property
    def d_out(self) -> int:
        return self.w[0].value.shape[0]


@dataclass
class GatStack:
    layers: list[GatLayer]

    @property
    def d_in(self) -> int:
        return self.layers[0].d_in

    @property
    def d_out(self) -> int:
        return self.layers[-1].d_out

    def params(self) -> list[Var]:
        out: list[Var] = []
        for layer in self.layers:
            out.extend(layer.w)
            out.extend(layer.att)
        return out


def init_gat_stack(rng: np.random.Generator, d_in: int = 8, d_hidden: int = 16,
                   n_layers: int = 2, n_heads: int = 6) -> GatStack:
    """Glorot-uniform stack; hidden width is per head, outputs sum over heads."""
    layers = []
    din = d_in
    for _ in range(n_layers):
        w = [Var(ad.xavier_uniform(rng, d_hidden, din)) for _ in range(n_heads)]
        att = [Var(ad.xavier_uniform(rng, 2 * d_hidden, 1)) for _ in range(n_heads)]
        layers.append(GatLayer(w, att))
        din = d_hidden
    return GatStack(layers)


def clone_stack(stack: GatStack) -> GatStack:
    return GatStack([GatLayer([Var(w.value.copy()) for w in layer.w],
                              [Var(a.value.copy()) for a in layer.att])
                     for layer in stack.layers])


def copy_stack_values(src: GatStack, dst: GatStack) -> None:
    for ls, ld in zip(src.layers, dst.layers):
        for a, b in zip(ls.w, ld.w):
            np.copyto(b.value, a.value)
        for a, b in zip(ls.att, ld.att):
            np.copyto(b.value, a.value)


def _head_block(n_heads: int, d_out: int) -> np.ndarray:
    # (n_heads*d_out, n_heads) indicator that sums each head's column block
    blk = np.zeros((n_heads * d_out, n_heads))
    for m in range(n_heads):
        blk[m * d_out:(m + 1) * d_out, m] = 1.0
    return blk


def _head_stack(n_heads: int, d_out: int) -> np.ndarray:
    # (n_heads*d_out, d_out) stacked identities: multiplying sums head blocks
    return np.tile(np.eye(d_out), (n_heads, 1))


def _layer_forward(tape, layer: GatLayer, h: Var, neighborhoods,
                   out_nodes=None) -> Var:
    """One packed layer. Returns rows for out_nodes (default: every node).

    Nodes whose closed neighborhoods have the same size share identical
    shapes, so they are batched together; the scores of all heads ride along
    as interleaved rows. This keeps the tape-op count proportional to the
    number of distinct neighborhood sizes, not the number of nodes.
    """
    m, do = layer.n_heads, layer.d_out
    n = h.value.shape[0]
    wcat = ad.concat_rows(tape, layer.w)                        # (m*do, d_in)
    z = ad.matmul(tape, h, ad.transpose(tape, wcat))            # (n, m*do)

    src_rows = range(0, do)
    dst_rows = range(do, 2 * do)
    a_src = ad.concat_rows(tape, [ad.take_rows(tape, a, src_rows) for a in layer.att])
    a_dst = ad.concat_rows(tape, [ad.take_rows(tape, a, dst_rows) for a in layer.att])
    blk = Var(_head_block(m, do))
    # per-head scores with heads as columns: column m is Z^m @ a^m
    s = ad.matmul(tape, ad.mul_rowvec(tape, z, ad.transpose(tape, a_src)), blk)
    d = ad.matmul(tape, ad.mul_rowvec(tape, z, ad.transpose(tape, a_dst)), blk)

    # row i*m + head of this view is head's transform of node i
    z_stacked = ad.reshape(tape, z, n * m, do)
    head_offsets = np.arange(m, dtype=np.intp)
    headsum = Var(_head_stack(m, do))

    nodes = list(range(len(neighborhoods))) if out_nodes is None else list(out_nodes)
    groups: dict[int, list[int]] = {}
    for pos, i in enumerate(nodes):
        groups.setdefault(len(neighborhoods[i]), []).append(pos)

    parts, order = [], []
    for k, positions in groups.items():
        members = np.array([nodes[p] for p in positions], dtype=np.intp)
        nb = np.stack([neighborhoods[nodes[p]] for p in positions])  # (g, k)
        if np.any(nb[:, 0] != members):
            bad = members[nb[:, 0] != members][0]
            raise ValueError(f"neighborhood of {bad} must list itself first")
        g = len(positions)
        s_own = ad.take_rows(tape, s, members)                   # (g, m)
        cols = []
        for j in range(k):
            lg = ad.add(tape, ad.take_rows(tape, d, nb[:, j]), s_own)
            cols.append(ad.reshape(tape, lg, g * m, 1))
        logits = cols[0] if k == 1 else ad.concat_cols(tape, cols)
        scored = ad.leaky_relu(tape, logits, LEAKY_SLOPE)        # (g*m, k)
        alpha = ad.softmax_rows(tape, scored)
        out_flat = None
        for j in range(k):
            idx = (nb[:, j][:, None] * m + head_offsets).ravel()
            zsel = ad.take_rows(tape, z_stacked, idx)            # (g*m, do)
            term = ad.mul_colvec(tape, zsel, ad.take_cols(tape, alpha, [j]))
            out_flat = term if out_flat is None else ad.add(tape, out_flat, term)
        parts.append(ad.matmul(tape, ad.reshape(tape, out_flat, g, m * do),
                               headsum))                         # (g, do)
        order.extend(positions)

    out = parts[0] if len(parts) == 1 else ad.concat_rows(tape, parts)
    if order != list(range(len(nodes))):
        back_to_input = np.empty(len(nodes), dtype=np.intp)
        back_to_input[np.array(order, dtype=np.intp)] = np.arange(len(nodes))
        out = ad.take_rows(tape, out, back_to_input)
    return out


def stack_forward(stack: GatStack, feats, neighborhoods, tape=None,
                  final_nodes=None) -> Var:
    """Run the full stack; inner layers get the exponential-linear unit.

    feats is an (N, d_in) array or Var; neighborhoods[i] is the closed
    neighborhood of node i, itself first. final_nodes restricts the last
    layer's output rows (inner layers always cover every node, since any of
    them can be attended to).
    """
    h = feats if isinstance(feats, Var) else Var(feats)
    last = len(stack.layers) - 1
    for li, layer in enumerate(stack.layers):
        h = _layer_forward(tape, layer, h, neighborhoods,
                           out_nodes=final_nodes if li == last else None)
        if li != last:
            h = ad.elu(tape, h)
    return h


def attention_coefficients(neigh_feats: np.ndarray, layer: GatLayer,
                           head: int) -> np.ndarray:
    """Reference attention weights of one head over a closed neighborhood.

    Row 0 of neigh_feats is the attending cell. Returns weights aligned with
    the rows, strictly positive, summing to 1.
    """
    if neigh_feats.shape[0] < 1:
        raise ValueError("empty neighborhood")
    w = layer.w[head].value
    a = layer.att[head].value[:, 0]
    do = w.shape[0]
    z = neigh_feats @ w.T
    logits = z[0] @ a[:do] + z @ a[do:]
    logits = np.where(logits >= 0.0, logits, LEAKY_SLOPE * logits)
    return ad.stable_softmax(logits)


def mean_first_layer_attention(stack: GatStack, feats: np.ndarray,
                               neighborhoods) -> list[np.ndarray]:
    """Head-averaged first-layer attention per node, aligned with each
    node's closed neighborhood. Used by the attention export."""
    layer = stack.layers[0]
    out = []
    for nb in neighborhoods:
        per_head = [attention_coefficients(feats[nb], layer, m)
                    for m in range(layer.n_heads)]
        out.append(np.mean(per_head, axis=0))
    return out
