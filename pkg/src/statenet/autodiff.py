"""Reverse-mode differentiation of rollout losses.

The computation shape is fixed by the topology, so instead of a general
expression graph the tape is simply the state trajectory of a forward
window: ``states[0]`` is the entry state and ``states[t]`` the state after
step t. The backward sweep re-derives the few intermediates it needs
(drive, pre-threshold membrane, pre-clip plastic weights) from the stored
states with exactly the forward expressions, so recorded and replayed
values are bitwise identical by construction.

Differentiation conventions (they define what "the gradient" means here):

* spike thresholds use the fast-sigmoid surrogate on the spike-output
  path; the post-spike reset gate is treated as a constant (detached),
* weight clipping is straight-through strictly inside (-c, c) and zero at
  or beyond the bound,
* the stdp weight increment is treated as non-differentiable (its
  magnitudes are fixed hyperparameters); gradients still flow through the
  additive weight carry,
* the hebbian retention factor is stored unconstrained and squashed with a
  sigmoid on read, so its gradient carries the sigmoid derivative.

Losses are summed over steps and masked per (step, output). Truncated
backpropagation advances every ``k1`` steps and unrolls ``k2`` steps per
flush; loss derivatives are injected only at steps not yet flushed, so a
single window covering the whole episode reproduces full backpropagation
exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import RolloutState, fresh_state, full_weights, step
from .params import ParameterSet
from .topology import NetworkTopology


class TapeReplayError(RuntimeError):
    """Recorded trajectory does not reproduce under re-execution."""


# ---------------------------------------------------------------------------
# losses

LOSS_TAGS = ("mse", "bce", "cce")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def step_loss(tag: str, v_out: np.ndarray, y: np.ndarray,
              mask_row: np.ndarray) -> float:
    """Masked loss of one step's output vector against its target."""
    if tag == "mse":
        return float(0.5 * np.sum(mask_row * (v_out - y) ** 2))
    if tag == "bce":
        # logits form: max(v,0) - v*y + log(1 + exp(-|v|))
        terms = np.maximum(v_out, 0.0) - v_out * y + np.log1p(np.exp(-np.abs(v_out)))
        return float(np.sum(mask_row * terms))
    if tag == "cce":
        w = _cce_step_weight(mask_row)
        if w == 0.0:
            return 0.0
        m = float(np.max(v_out))
        lse = m + float(np.log(np.sum(np.exp(v_out - m))))
        return w * (lse - float(np.sum(y * v_out)))
    raise ValueError(f"unknown loss tag {tag!r}")


def step_loss_grad(tag: str, v_out: np.ndarray, y: np.ndarray,
                   mask_row: np.ndarray) -> np.ndarray:
    """d(step loss)/d(output vector)."""
    if tag == "mse":
        return mask_row * (v_out - y)
    if tag == "bce":
        return mask_row * (_sigmoid(v_out) - y)
    if tag == "cce":
        w = _cce_step_weight(mask_row)
        if w == 0.0:
            return np.zeros_like(v_out)
        m = np.max(v_out)
        ex = np.exp(v_out - m)
        return w * (ex / np.sum(ex) - y)
    raise ValueError(f"unknown loss tag {tag!r}")


def _cce_step_weight(mask_row: np.ndarray) -> float:
    # cross-entropy couples all outputs of a step; the mask must not split them
    if not (np.all(mask_row == mask_row[0])):
        raise ValueError("cce mask must be constant within a step")
    return float(mask_row[0])


# ---------------------------------------------------------------------------
# tape


@dataclass
class Tape:
    """Recorded forward window: entry state at index 0, one state per step."""

    topology: NetworkTopology
    params: ParameterSet
    states: list[RolloutState]
    xs: np.ndarray
    ys: np.ndarray
    mask: np.ndarray
    loss_tag: str
    loss: float

    def __len__(self) -> int:
        return len(self.states) - 1

    def verify_replay(self) -> None:
        """Re-run the window and compare every state bitwise."""
        state = self.states[0]
        for t in range(len(self)):
            _, state = step(state, self.xs[t], self.topology, self.params)
            rec = self.states[t + 1]
            same = (np.array_equal(state.s, rec.s)
                    and np.array_equal(state.v_last, rec.v_last)
                    and np.array_equal(state.plastic.weights, rec.plastic.weights))
            if not same:
                raise TapeReplayError(f"tape replay diverged at step {t + 1}")


@dataclass
class StateGradient:
    """Adjoint of a rollout state (same shapes as RolloutState fields)."""

    s: np.ndarray
    v: np.ndarray
    e: np.ndarray

    @classmethod
    def zeros(cls, topology: NetworkTopology) -> "StateGradient":
        return cls(np.zeros(topology.n), np.zeros(topology.n),
                   np.zeros(topology.n_plastic))


def _norm_mask(mask, T: int, n_out: int) -> np.ndarray:
    if mask is None:
        return np.ones((T, n_out))
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != (T, n_out):
        raise ValueError(f"mask shape {mask.shape} != ({T}, {n_out})")
    return mask


def forward_taped(state0: RolloutState, xs, ys, mask,
                  topology: NetworkTopology, params: ParameterSet,
                  loss_tag: str) -> tuple[float, Tape, RolloutState]:
    """Run a window forward, recording the state trajectory.

    Returns (masked window loss, tape, exit state). The exit state is the
    carry for the next window.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    T = len(xs)
    if len(ys) != T:
        raise ValueError(f"window lengths differ: {T} stimuli, {len(ys)} targets")
    mask = _norm_mask(mask, T, topology.n_outputs)
    states = [state0]
    loss = 0.0
    state = state0
    for t in range(T):
        res, state = step(state, xs[t], topology, params)
        states.append(state)
        loss += step_loss(loss_tag, res.y, ys[t], mask[t])
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite loss in window of length {T}")
    tape = Tape(topology=topology, params=params, states=states,
                xs=xs, ys=ys, mask=mask, loss_tag=loss_tag, loss=loss)
    return loss, tape, state


def backward(tape: Tape, upstream: StateGradient | None = None,
             verify: bool = False) -> tuple[np.ndarray, StateGradient]:
    """Reverse sweep over a taped window.

    Returns (gradient w.r.t. the flat parameter vector, gradient w.r.t.
    the window's entry state). The entry-state ``e`` component is the
    adjoint of the plastic weights at window start; when the window starts
    at an episode boundary the caller folds it into the ``w0`` gradient
    (plastic weights are reset to ``w0`` there).
    """
    if verify:
        tape.verify_replay()
    topo = tape.topology
    params = tape.params
    meta = params.meta
    n = topo.n
    K = len(tape)

    g = np.zeros(params.count)
    w0_sl = params.registry["w0"]
    sc_sl = params.registry["self_coeff"]
    b_sl = params.registry["bias"]

    retention = params.retention
    learn_rate = params.learn_rate
    if params.has("retention_raw"):
        sig_prime = retention * (1.0 - retention)

    if upstream is None:
        gs = np.zeros(n)
        gv = np.zeros(n)
        ge = np.zeros(topo.n_plastic)
    else:
        gs = upstream.s.copy()
        gv = upstream.v.copy()
        ge = upstream.e.copy()

    rate = topo.rate_ids
    lif = topo.lif_ids
    heb = topo.hebbian_idx
    sd = topo.stdp_idx
    src_h = topo.edge_src[heb]
    dst_h = topo.edge_dst[heb]
    self_coeff = params.self_coeff

    for t in range(K, 0, -1):
        st_prev = tape.states[t - 1]
        st = tape.states[t]
        v_t = st.v_last
        v_prev = st_prev.v_last
        s_prev = st_prev.s
        w_full_prev = full_weights(topo, params, st_prev.plastic)

        # loss term at this step
        gv[topo.output_ids] += step_loss_grad(
            tape.loss_tag, v_t[topo.output_ids], tape.ys[t - 1], tape.mask[t - 1])

        gv_prev = np.zeros(n)
        ge_prev = np.zeros(topo.n_plastic)

        # plasticity backward first: it consumed this step's outputs, so its
        # contribution to gv must land before the neuron backward reads gv
        if len(heb):
            e_prev_h = st_prev.plastic.weights[topo.hebbian_pos]
            pre_post = v_prev[src_h] * v_t[dst_h]
            raw = retention * e_prev_h + learn_rate * pre_post
            gate = (np.abs(raw) < meta.clip_bound).astype(np.float64)
            gh = ge[topo.hebbian_pos] * gate
            g[params.registry["learn_rate"]] += gh * pre_post
            g[params.registry["retention_raw"]] += np.sum(gh * e_prev_h) * sig_prime
            ge_prev[topo.hebbian_pos] = gh * retention
            np.add.at(gv, dst_h, gh * learn_rate * v_prev[src_h])
            np.add.at(gv_prev, src_h, gh * learn_rate * v_t[dst_h])
        if len(sd):
            # increment is non-differentiable; only the additive carry and
            # its clip gate pass gradient
            spikes = np.zeros(n)
            spikes[lif] = v_t[lif]
            if len(topo.lif_input_ids):
                spikes[topo.lif_input_ids] = v_t[topo.lif_input_ids]
            tp = meta.trace_decay * st_prev.plastic.trace_pre[topo.edge_src[sd]]
            tq = meta.trace_decay * st_prev.plastic.trace_post[topo.edge_dst[sd]]
            delta = (meta.potentiation * tp * spikes[topo.edge_dst[sd]]
                     - meta.depression * tq * spikes[topo.edge_src[sd]])
            raw_sd = st_prev.plastic.weights[topo.stdp_pos] + delta
            gate = (np.abs(raw_sd) < meta.clip_bound).astype(np.float64)
            ge_prev[topo.stdp_pos] = ge[topo.stdp_pos] * gate

        # neuron backward
        gu = np.zeros(n)
        gs_prev = np.zeros(n)
        if len(rate):
            gz = (gs[rate] + gv[rate]) * (1.0 - v_t[rate] ** 2)
            g[sc_sl] += gz * s_prev[rate]
            g[b_sl] += gz
            gu[rate] = gz
            gs_prev[rate] = gz * self_coeff
        if len(lif):
            sp = s_prev[lif]
            u = np.zeros(n)
            np.add.at(u, topo.edge_dst, w_full_prev * v_prev[topo.edge_src])
            pre = sp + topo.lif_dt * (-(sp - topo.lif_rest) + u[lif])
            surr = topo.lif_sharpness / (
                1.0 + topo.lif_sharpness * np.abs(pre - topo.lif_threshold)) ** 2
            spk = v_t[lif]
            gp = gv[lif] * surr + gs[lif] * (1.0 - spk)
            gu[lif] = gp * topo.lif_dt
            gs_prev[lif] = gp * (1.0 - topo.lif_dt)

        # gather backward: u[dst] = sum_e w_e * v_prev[src_e]
        contrib = gu[topo.edge_dst] * v_prev[topo.edge_src]
        if len(topo.static_idx):
            g[w0_sl][topo.static_idx] += contrib[topo.static_idx]
        if topo.n_plastic:
            ge_prev += contrib[topo.plastic_idx]
        np.add.at(gv_prev, topo.edge_src, gu[topo.edge_dst] * w_full_prev)

        gs = gs_prev
        gv = gv_prev
        ge = ge_prev

    return g, StateGradient(s=gs, v=gv, e=ge)


# ---------------------------------------------------------------------------
# episode-level drivers


def episode_loss(topology: NetworkTopology, params: ParameterSet, xs, ys, mask,
                 loss_tag: str) -> float:
    """Plain (untaped) episode loss from a fresh episode-start state."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    mask = _norm_mask(mask, len(xs), topology.n_outputs)
    state = fresh_state(topology, params)
    loss = 0.0
    for t in range(len(xs)):
        res, state = step(state, xs[t], topology, params)
        loss += step_loss(loss_tag, res.y, ys[t], mask[t])
    return loss


def episode_gradients(topology: NetworkTopology, params: ParameterSet, xs, ys,
                      mask, loss_tag: str) -> tuple[float, np.ndarray]:
    """Full-window backpropagation over one episode from its start."""
    state0 = fresh_state(topology, params)
    loss, tape, _ = forward_taped(state0, xs, ys, mask, topology, params, loss_tag)
    g, entry = backward(tape)
    if topology.n_plastic:
        g[params.registry["w0"]][topology.plastic_idx] += entry.e
    return loss, params.apply_freeze(g)


def tbptt_gradients(topology: NetworkTopology, params: ParameterSet, xs, ys,
                    mask, loss_tag: str, k1: int, k2: int) -> tuple[float, np.ndarray]:
    """Truncated backpropagation through time.

    Windows flush every ``k1`` steps (and at the sequence end), each
    unrolling at most ``k2`` steps back; state carries across flushes but
    gradient does not. Loss derivatives are injected only at not-yet-
    flushed steps, so with ``k2 >= T`` the result equals full
    backpropagation regardless of ``k1``.
    """
    if not (1 <= k1 <= k2):
        raise ValueError(f"invalid window config k1={k1}, k2={k2}")
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    T = len(xs)
    mask = _norm_mask(mask, T, topology.n_outputs)
    grad = np.zeros(params.count)
    if T == 0:
        return 0.0, grad

    states = [fresh_state(topology, params)]
    total_loss = 0.0
    last_flushed = 0
    for t in range(1, T + 1):
        res, state = step(states[-1], xs[t - 1], topology, params)
        states.append(state)
        total_loss += step_loss(loss_tag, res.y, ys[t - 1], mask[t - 1])
        if t % k1 == 0 or t == T:
            depth = min(k2, t)
            t0 = t - depth
            win_mask = mask[t0:t].copy()
            # rows already flushed carry no fresh loss
            for i in range(t0, last_flushed):
                win_mask[i - t0] = 0.0
            _, tape, _ = forward_taped(states[t0], xs[t0:t], ys[t0:t], win_mask,
                                       topology, params, loss_tag)
            g, entry = backward(tape)
            grad += g
            if t0 == 0 and topology.n_plastic:
                grad[params.registry["w0"]][topology.plastic_idx] += entry.e
            last_flushed = t
    return total_loss, params.apply_freeze(grad)


def fd_gradient(topology: NetworkTopology, params: ParameterSet, xs, ys, mask,
                loss_tag: str, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of the episode loss over every parameter.

    Costs two rollouts per coordinate; the episode restarts from a fresh
    state for each evaluation so perturbing ``w0`` also moves the plastic
    initial weights.
    """
    base = params.flat
    grad = np.zeros(len(base))
    for i in range(len(base)):
        bump = np.zeros(len(base))
        bump[i] = eps
        lp = episode_loss(topology, params.with_flat(base + bump), xs, ys, mask,
                          loss_tag)
        lm = episode_loss(topology, params.with_flat(base - bump), xs, ys, mask,
                          loss_tag)
        grad[i] = (lp - lm) / (2.0 * eps)
    return grad
