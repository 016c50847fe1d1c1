"""Semantically controlled LSTM: forward pass, sampling step and exact BPTT.

Per step, with embedded token ``e`` and per-layer previous states::

    r  = sigmoid(W_wr e + sum_l alpha_l W_hr[l] h_prev[l])     (learned gating)
    d  = r * d_prev
    i, f, o = sigmoid(W_w* u + W_h* h_prev);  g = tanh(W_wc u + W_hc h_prev)
    c  = f * c_prev + i * g  (+ tanh(W_dc d) on the bottom layer)
    h  = o * tanh(c)
    p  = softmax(W_out [h[0]; ...; h[L-1]])

Layer ``l > 0`` reads ``u = [e; h[l-1]]``. Dropout (inverted, train mode only)
hits the lower-layer half of that input and the concatenated output, never
the embedding or the recurrent connections. No bias terms anywhere.
"""
from __future__ import annotations

import json
import zipfile
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .numkit import Rng, log_softmax, make_rng, sigmoid, softmax

GATING_MODES = ("learned", "heuristic", "none")
GATE_NAMES = ("i", "f", "o", "c")
MODEL_FORMAT = "sclstm-model/1"


class NumericError(FloatingPointError):
    pass


@dataclass(frozen=True)
class NetConfig:
    vocab_size: int
    da_dim: int
    hidden_size: int = 80
    num_layers: int = 1
    dropout: float = 0.0
    alpha: tuple[float, ...] = (0.5,)
    gating_mode: str = "learned"
    embedding_dim: int | None = None
    # (token index, index of the slot's "mentioned" feature, indices of its special features)
    heuristic_slots: tuple[tuple[int, int, tuple[int, ...]], ...] = ()

    def __post_init__(self):
        if self.hidden_size <= 0 or self.vocab_size <= 0 or self.da_dim <= 0:
            raise ValueError("sizes must be positive")
        if self.num_layers < 1:
            raise ValueError("need at least one layer")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.gating_mode not in GATING_MODES:
            raise ValueError(f"gating_mode must be one of {GATING_MODES}")
        alpha = tuple(float(a) for a in self.alpha)
        if len(alpha) == 1:
            alpha = alpha * self.num_layers
        if len(alpha) != self.num_layers or not all(np.isfinite(alpha)):
            raise ValueError("need one finite alpha per layer")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "heuristic_slots", tuple(
            (int(t), int(m), tuple(int(s) for s in sp)) for t, m, sp in self.heuristic_slots))

    @property
    def emb_dim(self) -> int:
        return self.embedding_dim or self.hidden_size

    def input_dim(self, layer: int) -> int:
        return self.emb_dim if layer == 0 else self.emb_dim + self.hidden_size

    def to_dict(self) -> dict:
        d = asdict(self)
        d["alpha"] = list(self.alpha)
        d["heuristic_slots"] = [[t, m, list(sp)] for t, m, sp in self.heuristic_slots]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        d = dict(d)
        d["alpha"] = tuple(d.get("alpha", (0.5,)))
        d["heuristic_slots"] = tuple(
            (t, m, tuple(sp)) for t, m, sp in d.get("heuristic_slots", ()))
        return cls(**d)


@dataclass
class NetworkParams:
    """All weights of one network, as named float64 arrays.

    Blocks shared with another network (the reading-gate keyword detector
    ``W_wr`` of a forward/backward pair) are the *same* array object in
    both; in-place updates through either network affect both.
    """
    config: NetConfig
    blocks: dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.blocks[name]

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.config, {k: v.copy() for k, v in self.blocks.items()})

    def named_views(self) -> Iterator[tuple[str, np.ndarray]]:
        """Blocks with stacked gate matrices split into one view per gate."""
        n = self.config.hidden_size
        for name, arr in self.blocks.items():
            base, _, layer = name.partition(".")
            if base in ("W_x", "W_h"):
                prefix = "W_w" if base == "W_x" else "W_h"
                for k, gate in enumerate(GATE_NAMES):
                    label = f"{prefix}{gate}"
                    if label == "W_ho":
                        label = "W_ho_rec"
                    yield f"{label}.{layer}", arr[k * n:(k + 1) * n]
            else:
                yield name, arr


def block_shapes(cfg: NetConfig) -> dict[str, tuple[int, int]]:
    n, D, V, e, L = cfg.hidden_size, cfg.da_dim, cfg.vocab_size, cfg.emb_dim, cfg.num_layers
    shapes = {"E": (V, e), "W_wr": (D, e)}
    for l in range(L):
        shapes[f"W_x.{l}"] = (4 * n, cfg.input_dim(l))
        shapes[f"W_h.{l}"] = (4 * n, n)
        shapes[f"W_hr.{l}"] = (D, n)
    shapes["W_dc"] = (n, D)
    shapes["W_out"] = (V, L * n)
    return shapes


def init_params(cfg: NetConfig, rng: Rng, scale: float = 0.1) -> NetworkParams:
    blocks = {name: rng.uniform(-scale, scale, size=shape)
              for name, shape in block_shapes(cfg).items()}
    return NetworkParams(cfg, blocks)


def tie(shared_from: NetworkParams, other: NetworkParams, names: Sequence[str] = ("W_wr",)) -> None:
    for name in names:
        if shared_from.blocks[name].shape != other.blocks[name].shape:
            raise ValueError(f"cannot tie {name}: shapes differ")
        other.blocks[name] = shared_from.blocks[name]


def reverse_for_reranker(tokens: Sequence[str]) -> list[str]:
    """[BOS a b EOS] -> [BOS b a EOS]; the backward net reads sentences right to left."""
    body = list(tokens)
    if body and body[0] == "BOS":
        body = body[1:]
    if body and body[-1] == "EOS":
        body = body[:-1]
    return ["BOS", *reversed(body), "EOS"]


# ----------------------------------------------------------------------
# forward
# ----------------------------------------------------------------------
@dataclass
class State:
    h: list[np.ndarray]
    c: list[np.ndarray]

    @classmethod
    def zeros(cls, cfg: NetConfig) -> "State":
        n = cfg.hidden_size
        return cls([np.zeros(n) for _ in range(cfg.num_layers)],
                   [np.zeros(n) for _ in range(cfg.num_layers)])


@dataclass
class StepMasks:
    """Dropout masks for one time step (already scaled by 1/keep)."""
    inputs: list[np.ndarray | None]  # per layer, applies to the lower-layer half of the input
    output: np.ndarray | None


@dataclass
class ForwardTrace:
    tokens: np.ndarray                # (T,) input token indices
    d: np.ndarray                     # (T+1, D); d[0] = d0
    r: np.ndarray | None              # (T, D) reading gate, None without gating
    u: list[np.ndarray]               # per layer (T, in_l) layer input after dropout
    gates: list[np.ndarray]           # per layer (T, 4n) activations i, f, o, g
    c: list[np.ndarray]               # per layer (T+1, n)
    h: list[np.ndarray]               # per layer (T+1, n)
    da_term: np.ndarray               # (T, n) tanh(W_dc d_t)
    z: np.ndarray                     # (T, L n) output-layer input after dropout
    logits: np.ndarray                # (T, V)
    p: np.ndarray                     # (T, V)
    in_masks: list[np.ndarray | None] = field(default_factory=list)
    out_mask: np.ndarray | None = None

    def __len__(self) -> int:
        return int(self.tokens.shape[0])

    def gate(self, name: str, layer: int = 0) -> np.ndarray:
        n = self.c[layer].shape[1]
        k = GATE_NAMES.index(name)
        return self.gates[layer][:, k * n:(k + 1) * n]

    def masks_at(self, t: int) -> StepMasks:
        return StepMasks([m[t] if m is not None else None for m in self.in_masks],
                         self.out_mask[t] if self.out_mask is not None else None)


def _heuristic_table(cfg: NetConfig) -> dict[int, tuple[int, tuple[int, ...]]]:
    return {tok: (m, sp) for tok, m, sp in cfg.heuristic_slots}


def heuristic_gate(cfg: NetConfig, token_index: int, d_prev: np.ndarray,
                   table: dict | None = None) -> np.ndarray:
    """Reading gate of the hand-written rule: switch off a slot when its token is read.

    Only the slot's "mentioned" feature is cleared, and only for slots bound
    to a categorical value; binary and dontcare features have no slot token
    and are never cleared.
    """
    table = _heuristic_table(cfg) if table is None else table
    r = np.ones(cfg.da_dim, dtype=d_prev.dtype)
    entry = table.get(int(token_index))
    if entry is not None:
        mentioned, specials = entry
        if not any(d_prev[k] != 0.0 for k in specials):
            r[mentioned] = 0.0
    return r


def _advance(params: NetworkParams, x: int, h_prev: list[np.ndarray], c_prev: list[np.ndarray],
             d_prev: np.ndarray, masks: StepMasks | None, table, r_override=None):
    """One step of the recurrence; returns everything backprop needs."""
    cfg = params.config
    B = params.blocks
    n = cfg.hidden_size
    e = B["E"][x]

    if r_override is not None:
        r = np.asarray(r_override, dtype=d_prev.dtype)
        d_new = r * d_prev
    elif cfg.gating_mode == "learned":
        pre = B["W_wr"] @ e
        for l in range(cfg.num_layers):
            pre = pre + cfg.alpha[l] * (B[f"W_hr.{l}"] @ h_prev[l])
        r = sigmoid(pre)
        d_new = r * d_prev
    elif cfg.gating_mode == "heuristic":
        r = heuristic_gate(cfg, x, d_prev, table)
        d_new = r * d_prev
    else:
        r = None
        d_new = d_prev

    da_term = np.tanh(B["W_dc"] @ d_new)
    us, gates, hs, cs = [], [], [], []
    for l in range(cfg.num_layers):
        if l == 0:
            u = e
        else:
            below = hs[l - 1]
            if masks is not None and masks.inputs[l] is not None:
                below = below * masks.inputs[l]
            u = np.concatenate([e, below])
        a = B[f"W_x.{l}"] @ u + B[f"W_h.{l}"] @ h_prev[l]
        act = np.empty(4 * n, dtype=a.dtype)
        act[:3 * n] = sigmoid(a[:3 * n])
        act[3 * n:] = np.tanh(a[3 * n:])
        i, f, o, g = act[:n], act[n:2 * n], act[2 * n:3 * n], act[3 * n:]
        c = f * c_prev[l] + i * g
        if l == 0:
            c = c + da_term
        h = o * np.tanh(c)
        us.append(u)
        gates.append(act)
        cs.append(c)
        hs.append(h)
    z = np.concatenate(hs) if cfg.num_layers > 1 else hs[0]
    if masks is not None and masks.output is not None:
        z = z * masks.output
    return r, d_new, da_term, us, gates, cs, hs, z


def step(params: NetworkParams, token_index: int, prev_state: State, d_prev: np.ndarray,
         masks: StepMasks | None = None, r_override=None):
    """Advance one token; returns (new_state, d_new, next-token distribution).

    ``r_override`` forces the reading gate to a given vector (inspection only).
    """
    cfg = params.config
    if not 0 <= token_index < cfg.vocab_size:
        raise IndexError(f"token index {token_index} outside vocabulary")
    _, d_new, _, _, _, cs, hs, z = _advance(
        params, token_index, prev_state.h, prev_state.c, np.asarray(d_prev, dtype=np.float64),
        masks, _heuristic_table(cfg), r_override)
    p = softmax(params.blocks["W_out"] @ z)
    if not np.all(np.isfinite(p)):
        raise NumericError("non-finite activation at this step")
    return State(hs, cs), d_new, p


def heuristic_gate_step(params: NetworkParams, token_index: int, prev_state: State,
                        d_prev: np.ndarray, masks: StepMasks | None = None):
    if params.config.gating_mode != "heuristic":
        raise ValueError("heuristic_gate_step needs gating_mode='heuristic'")
    return step(params, token_index, prev_state, d_prev, masks)


def sample_masks(cfg: NetConfig, T: int, rng: Rng) -> tuple[list[np.ndarray | None], np.ndarray | None]:
    if cfg.dropout <= 0.0:
        return [None] * cfg.num_layers, None
    keep = 1.0 - cfg.dropout
    n, L = cfg.hidden_size, cfg.num_layers
    in_masks: list[np.ndarray | None] = [None]
    for _ in range(1, L):
        in_masks.append((rng.random((T, n)) < keep) / keep)
    out_mask = (rng.random((T, L * n)) < keep) / keep
    return in_masks, out_mask


def forward_sentence(params: NetworkParams, tokens: Sequence[int], d0: np.ndarray,
                     rng: Rng | None = None, train: bool = False,
                     masks: tuple[list, np.ndarray | None] | None = None) -> ForwardTrace:
    """Teacher-forced pass over ``tokens`` (starting with BOS).

    In train mode fresh dropout masks are drawn from ``rng`` unless ``masks``
    pins them; eval mode never drops anything.
    """
    cfg = params.config
    toks = np.asarray(tokens, dtype=np.int64)
    if toks.ndim != 1 or toks.size == 0:
        raise ValueError("need a non-empty token sequence")
    if toks.min() < 0 or toks.max() >= cfg.vocab_size:
        bad = int(toks[(toks < 0) | (toks >= cfg.vocab_size)][0])
        raise IndexError(f"unknown token index {bad}")
    dtype = params.blocks["E"].dtype
    d0 = np.asarray(d0, dtype=dtype)
    if d0.shape != (cfg.da_dim,):
        raise ValueError(f"d0 must have length {cfg.da_dim}")
    T, n, L = toks.size, cfg.hidden_size, cfg.num_layers

    if masks is not None:
        in_masks, out_mask = masks
    elif train:
        if rng is None:
            raise ValueError("train mode needs an rng for dropout")
        in_masks, out_mask = sample_masks(cfg, T, rng)
    else:
        in_masks, out_mask = [None] * L, None
    in_masks = list(in_masks) + [None] * (L - len(in_masks))

    d = np.empty((T + 1, cfg.da_dim), dtype=dtype)
    d[0] = d0
    r_all = np.empty((T, cfg.da_dim), dtype=dtype) if cfg.gating_mode != "none" else None
    u = [np.empty((T, cfg.input_dim(l)), dtype=dtype) for l in range(L)]
    gates = [np.empty((T, 4 * n), dtype=dtype) for _ in range(L)]
    c = [np.zeros((T + 1, n), dtype=dtype) for _ in range(L)]
    h = [np.zeros((T + 1, n), dtype=dtype) for _ in range(L)]
    da_term = np.empty((T, n), dtype=dtype)
    z = np.empty((T, L * n), dtype=dtype)
    table = _heuristic_table(cfg)

    for t in range(T):
        step_masks = StepMasks([m[t] if m is not None else None for m in in_masks],
                               out_mask[t] if out_mask is not None else None)
        r, d_new, q, us, gs, cs, hs, zt = _advance(
            params, int(toks[t]), [h[l][t] for l in range(L)], [c[l][t] for l in range(L)],
            d[t], step_masks, table)
        d[t + 1] = d_new
        if r_all is not None:
            r_all[t] = r
        da_term[t] = q
        for l in range(L):
            u[l][t] = us[l]
            gates[l][t] = gs[l]
            c[l][t + 1] = cs[l]
            h[l][t + 1] = hs[l]
        z[t] = zt

    logits = z @ params.blocks["W_out"].T
    p = softmax(logits, axis=1)
    finite = np.isfinite(logits).all(axis=1) & np.isfinite(p).all(axis=1)
    if not finite.all():
        raise NumericError(f"non-finite activation at timestep {int(np.argmin(finite))}")
    return ForwardTrace(toks, d, r_all, u, gates, c, h, da_term, z, logits, p,
                        in_masks, out_mask)


# ----------------------------------------------------------------------
# cost and gradients
# ----------------------------------------------------------------------
ETA = 1e-4
XI = 100.0


@dataclass(frozen=True)
class CostBreakdown:
    cross_entropy: float
    final_da_norm: float
    transition_penalty: float

    @property
    def total(self) -> float:
        return self.cross_entropy + self.final_da_norm + self.transition_penalty


def sentence_cost(trace: ForwardTrace, targets: Sequence[int],
                  eta: float = ETA, xi: float = XI) -> tuple[float, CostBreakdown]:
    """Cross entropy + ||d_T|| + sum_t eta * xi ** ||d_{t+1} - d_t||."""
    ce, final, transition = _cost_terms(trace, targets, eta, xi)
    parts = CostBreakdown(float(ce), float(final), float(transition))
    return parts.total, parts


def _cost_terms(trace: ForwardTrace, targets, eta: float, xi: float):
    y = np.asarray(targets, dtype=np.int64)
    if y.shape != trace.tokens.shape:
        raise ValueError("targets must align with the input tokens")
    logp = log_softmax(trace.logits, axis=1)
    ce = -np.sum(logp[np.arange(y.size), y])
    final = np.sqrt(np.sum(trace.d[-1] * trace.d[-1]))
    delta = np.diff(trace.d, axis=0)
    jumps = np.sqrt(np.sum(delta * delta, axis=1))
    transition = np.sum(eta * np.power(xi, jumps))
    return ce, final, transition


def backprop_sentence(params: NetworkParams, trace: ForwardTrace, targets: Sequence[int],
                      eta: float = ETA, xi: float = XI) -> tuple[dict[str, np.ndarray], float]:
    """Exact gradient of ``sentence_cost`` with respect to every block."""
    cfg = params.config
    B = params.blocks
    n, L, e_dim = cfg.hidden_size, cfg.num_layers, cfg.emb_dim
    y = np.asarray(targets, dtype=np.int64)
    T = len(trace)
    if y.shape != (T,):
        raise ValueError("targets must align with the trace")
    loss, _ = sentence_cost(trace, y, eta, xi)
    grads = {k: np.zeros_like(v) for k, v in B.items()}
    gE = grads["E"]

    dlogits = trace.p.copy()
    dlogits[np.arange(T), y] -= 1.0
    grads["W_out"] = dlogits.T @ trace.z
    dz = dlogits @ B["W_out"]
    if trace.out_mask is not None:
        dz *= trace.out_mask

    gated = cfg.gating_mode != "none"
    if gated:
        delta = np.diff(trace.d, axis=0)
        jump = np.linalg.norm(delta, axis=1)
        coef = np.zeros(T)
        nz = jump > 0
        coef[nz] = eta * np.log(xi) * np.power(xi, jump[nz]) / jump[nz]
        g_delta = coef[:, None] * delta
        final_norm = np.linalg.norm(trace.d[-1])
        g_final = trace.d[-1] / final_norm if final_norm > 0 else np.zeros(cfg.da_dim)
        dd_next = np.zeros(cfg.da_dim)

    dh_next = [np.zeros(n) for _ in range(L)]
    dc_next = [np.zeros(n) for _ in range(L)]
    learned = cfg.gating_mode == "learned"

    for t in range(T - 1, -1, -1):
        x = int(trace.tokens[t])
        if gated:
            dd_new = dd_next + g_delta[t]
            if t == T - 1:
                dd_new = dd_new + g_final
        dh_prev: list[np.ndarray] = [None] * L  # type: ignore[list-item]
        from_above = None
        for l in range(L - 1, -1, -1):
            dh = dz[t, l * n:(l + 1) * n] + dh_next[l]
            if from_above is not None:
                dh = dh + from_above
            act = trace.gates[l][t]
            i, f, o, g = act[:n], act[n:2 * n], act[2 * n:3 * n], act[3 * n:]
            tc = np.tanh(trace.c[l][t + 1])
            dc = dh * o * (1.0 - tc * tc) + dc_next[l]
            da = np.concatenate([
                dc * g * i * (1.0 - i),
                dc * trace.c[l][t] * f * (1.0 - f),
                dh * tc * o * (1.0 - o),
                dc * i * (1.0 - g * g),
            ])
            dc_next[l] = dc * f
            grads[f"W_x.{l}"] += np.outer(da, trace.u[l][t])
            grads[f"W_h.{l}"] += np.outer(da, trace.h[l][t])
            du = B[f"W_x.{l}"].T @ da
            dh_prev[l] = B[f"W_h.{l}"].T @ da
            gE[x] += du[:e_dim]
            if l > 0:
                below = du[e_dim:]
                if trace.in_masks[l] is not None:
                    below = below * trace.in_masks[l][t]
                from_above = below
            else:
                q = trace.da_term[t]
                dq = dc * (1.0 - q * q)
                grads["W_dc"] += np.outer(dq, trace.d[t + 1])
                if gated:
                    dd_new = dd_new + B["W_dc"].T @ dq

        if gated:
            r = trace.r[t]
            d_prev = trace.d[t]
            dd_next = dd_new * r - g_delta[t]
            if learned:
                drp = dd_new * d_prev * r * (1.0 - r)
                grads["W_wr"] += np.outer(drp, B["E"][x])
                gE[x] += B["W_wr"].T @ drp
                for l in range(L):
                    a = cfg.alpha[l]
                    grads[f"W_hr.{l}"] += a * np.outer(drp, trace.h[l][t])
                    dh_prev[l] = dh_prev[l] + a * (B[f"W_hr.{l}"].T @ drp)
        dh_next = dh_prev

    return grads, loss


def named_gradient_views(params: NetworkParams, grads: dict[str, np.ndarray]):
    return dict(NetworkParams(params.config, grads).named_views())


# ----------------------------------------------------------------------
# finite-difference check
# ----------------------------------------------------------------------
def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def numeric_gradient(loss_fn, array: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of ``loss_fn()`` with respect to ``array`` (perturbed in place)."""
    out = np.zeros_like(array)
    flat = array.reshape(-1)
    grad = out.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        up = loss_fn()
        flat[k] = orig - h
        down = loss_fn()
        flat[k] = orig
        grad[k] = (up - down) / (2 * flat.dtype.type(h))
    return out


@dataclass
class GradcheckReport:
    label: str
    worst: dict[str, float]

    @property
    def max_error(self) -> float:
        return max(self.worst.values()) if self.worst else 0.0

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_error < tol


def check_instance(params: NetworkParams, tokens: Sequence[int], targets: Sequence[int],
                   d0: np.ndarray, masks=None, h: float = 1e-5, label: str = "",
                   extended: bool = True) -> GradcheckReport:
    """Compare analytic and central-difference gradients on one sentence.

    With ``extended`` the numeric side re-evaluates the loss in long double,
    so that rounding of an O(10) loss does not swamp the O(h * grad)
    differences of weakly coupled weights. The analytic side is always
    float64.
    """
    if masks is None:
        masks = ([None] * params.config.num_layers, None)
    trace = forward_sentence(params, tokens, d0, masks=masks)
    analytic, _ = backprop_sentence(params, trace, targets)

    dtype = np.longdouble if extended else np.float64
    probe = NetworkParams(params.config, {k: v.astype(dtype) for k, v in params.blocks.items()})
    probe_masks = ([m.astype(dtype) if m is not None else None for m in masks[0]],
                   masks[1].astype(dtype) if masks[1] is not None else None)

    def loss():
        trace = forward_sentence(probe, tokens, d0, masks=probe_masks)
        return sum(_cost_terms(trace, targets, ETA, XI))

    worst: dict[str, float] = {}
    analytic_views = named_gradient_views(params, analytic)
    for name, view in probe.named_views():
        numeric = numeric_gradient(loss, view, h).astype(np.float64)
        worst[name] = float(np.max(relative_error(analytic_views[name], numeric)))
    return GradcheckReport(label, worst)


def gradcheck(rng: Rng | int = 0, hidden_size: int = 6, da_dim: int = 9, vocab_size: int = 12,
              length: int = 5, modes: Sequence[str] = GATING_MODES,
              layers: Sequence[int] = (1, 2), h: float = 1e-5, scale: float = 0.5) -> list[GradcheckReport]:
    """Run the finite-difference check for every gating mode and depth.

    Deep configurations use 50% dropout with the masks frozen between the
    analytic and numeric passes.
    """
    rng = make_rng(rng) if isinstance(rng, (int, np.integer)) else rng
    reports = []
    for mode in modes:
        for num_layers in layers:
            dropout = 0.5 if num_layers > 1 else 0.0
            cfg = NetConfig(vocab_size=vocab_size, da_dim=da_dim, hidden_size=hidden_size,
                            num_layers=num_layers, dropout=dropout, gating_mode=mode,
                            heuristic_slots=_toy_heuristic_slots(vocab_size, da_dim))
            params = init_params(cfg, rng, scale=scale)
            body = rng.integers(1, vocab_size, size=length - 1)
            tokens = np.concatenate([[0], body])
            targets = np.concatenate([body, [vocab_size - 1]])
            d0 = (rng.random(da_dim) < 0.6).astype(np.float64)
            d0[0] = 1.0
            masks = sample_masks(cfg, length, rng)
            reports.append(check_instance(params, tokens, targets, d0, masks, h,
                                          label=f"{mode}/{num_layers}-layer"))
    return reports


def _toy_heuristic_slots(vocab_size: int, da_dim: int):
    # tokens 1..3 act as slot tokens clearing features 1..3
    return tuple((k, k, ()) for k in range(1, min(4, vocab_size, da_dim)))


# ----------------------------------------------------------------------
# persistence
# ----------------------------------------------------------------------
def save_model(path: str | Path, params: NetworkParams, extra: dict | None = None) -> None:
    """Write config, metadata and every block to an ``.npz`` file."""
    meta = {"format": MODEL_FORMAT, "config": params.config.to_dict(), "extra": extra or {}}
    arrays = {f"block:{k}": v for k, v in sorted(params.blocks.items())}
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    # fixed entry timestamps keep the file byte-identical across runs
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            with zf.open(info, "w", force_zip64=True) as fh:
                np.lib.format.write_array(fh, np.ascontiguousarray(arr), allow_pickle=False)


def load_model(path: str | Path) -> tuple[NetworkParams, dict]:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(bytes(data["meta"]).decode("utf-8"))
        if meta.get("format") != MODEL_FORMAT:
            raise ValueError(f"{path}: unsupported model format {meta.get('format')!r}")
        blocks = {k[len("block:"):]: data[k].copy() for k in data.files if k.startswith("block:")}
    cfg = NetConfig.from_dict(meta["config"])
    expected = block_shapes(cfg)
    if {k: v.shape for k, v in blocks.items()} != expected:
        raise ValueError(f"{path}: blocks do not match the stored config")
    return NetworkParams(cfg, blocks), meta.get("extra", {})


def load_word_vectors(path: str | Path, vocab: Sequence[str], params: NetworkParams) -> int:
    """Copy externally trained vectors (``word f1 f2 ...`` per line) into the embedding table."""
    index = {w: i for i, w in enumerate(vocab)}
    E = params.blocks["E"]
    loaded = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip().split(" ")
            if len(parts) < 2 or parts[0] not in index:
                continue
            vec = np.array([float(x) for x in parts[1:]])
            if vec.size != E.shape[1]:
                raise ValueError(f"vector for {parts[0]!r} has {vec.size} dims, need {E.shape[1]}")
            E[index[parts[0]]] = vec
            loaded += 1
    return loaded


def with_config(params: NetworkParams, **changes) -> NetworkParams:
    """Same weights under a modified config (e.g. switching dropout off)."""
    return NetworkParams(replace(params.config, **changes), params.blocks)
