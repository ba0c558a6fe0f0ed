"""Single-layer LSTM with a linear head, trained on MAE with Adam.

Everything is fp64 numpy. Gate blocks are stacked in the order
input, forget, output, candidate along the first axis of ``W``, ``U`` and ``b``.
"""

from __future__ import annotations

import io
import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .core import Normalizer, WindowSample, stack_samples

log = logging.getLogger(__name__)

GATES = ("i", "f", "o", "g")


class DivergenceError(FloatingPointError):
    pass


@dataclass
class LstmParams:
    W: np.ndarray  # (4H, F)
    U: np.ndarray  # (4H, H)
    b: np.ndarray  # (4H,)

    @property
    def hidden_size(self) -> int:
        return self.U.shape[1]

    @property
    def input_size(self) -> int:
        return self.W.shape[1]

    def gate(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(W_k, U_k, b_k)`` views for gate ``name`` in ``i, f, o, g``."""
        H = self.hidden_size
        k = GATES.index(name)
        sl = slice(k * H, (k + 1) * H)
        return self.W[sl], self.U[sl], self.b[sl]


@dataclass
class DenseParams:
    W: np.ndarray  # (n, H)
    b: np.ndarray  # (n,)

    @property
    def horizon(self) -> int:
        return self.b.shape[0]


def _arrays(lstm: LstmParams, dense: DenseParams) -> list[np.ndarray]:
    return [lstm.W, lstm.U, lstm.b, dense.W, dense.b]


def init_params(
    input_size: int, hidden_size: int, horizon: int, rng: np.random.Generator
) -> tuple[LstmParams, DenseParams]:
    H, F = hidden_size, input_size
    bound = 1.0 / np.sqrt(H)
    W = rng.uniform(-bound, bound, (4 * H, F))
    U = rng.uniform(-bound, bound, (4 * H, H))
    b = np.zeros(4 * H)
    b[H : 2 * H] = 1.0  # forget-gate bias
    Wd = rng.uniform(-bound, bound, (horizon, H))
    bd = np.zeros(horizon)
    return LstmParams(W, U, b), DenseParams(Wd, bd)


def zeros_like(lstm: LstmParams, dense: DenseParams) -> tuple[LstmParams, DenseParams]:
    return (
        LstmParams(np.zeros_like(lstm.W), np.zeros_like(lstm.U), np.zeros_like(lstm.b)),
        DenseParams(np.zeros_like(dense.W), np.zeros_like(dense.b)),
    )


_sigmoid = expit


@dataclass
class ForwardCache:
    X: np.ndarray
    gates: list  # per step (i, f, o, g)
    cells: list  # c_0 .. c_m
    hiddens: list  # h_0 .. h_m
    tanh_cells: list  # tanh(c_1) .. tanh(c_m)
    lstm: LstmParams
    dense: DenseParams
    single: bool = False


def forward(lstm: LstmParams, dense: DenseParams, seq) -> tuple[np.ndarray, ForwardCache]:
    """Run the network on ``(m, F)`` or a batch ``(B, m, F)``.

    Returns predictions shaped ``(n,)`` or ``(B, n)`` plus the backprop cache.
    """
    X = np.asarray(seq, dtype=np.float64)
    single = X.ndim == 2
    if single:
        X = X[None]
    B, m, F = X.shape
    if F != lstm.input_size:
        raise ValueError(f"expected {lstm.input_size} input columns, got {F}")
    if m < 1:
        raise ValueError("sequence must have at least one step")
    H = lstm.hidden_size
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    # input projections for all steps at once
    Zx = X @ lstm.W.T + lstm.b
    UT = lstm.U.T
    gates, cells, hiddens, tanh_cells = [], [c], [h], []
    for t in range(m):
        z = Zx[:, t] + h @ UT
        s = _sigmoid(z[:, : 3 * H])
        i, f, o = s[:, :H], s[:, H : 2 * H], s[:, 2 * H :]
        g = np.tanh(z[:, 3 * H :])
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        gates.append((i, f, o, g))
        cells.append(c)
        hiddens.append(h)
        tanh_cells.append(tc)
    pred = h @ dense.W.T + dense.b
    cache = ForwardCache(X, gates, cells, hiddens, tanh_cells, lstm, dense, single)
    return (pred[0] if single else pred), cache


def predict(lstm: LstmParams, dense: DenseParams, seq) -> np.ndarray:
    return forward(lstm, dense, seq)[0]


def mae_loss(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return float(np.mean(np.abs(pred - target)))


def mae_grad(pred, target) -> np.ndarray:
    """d(mean |pred - target|)/d(pred); zero where the residual is exactly 0."""
    pred = np.asarray(pred, dtype=np.float64)
    return np.sign(pred - np.asarray(target, dtype=np.float64)) / pred.size


def backward(cache: ForwardCache, dpred) -> tuple[LstmParams, DenseParams]:
    """Backpropagation through time for the loss gradient ``dpred``."""
    lstm, dense = cache.lstm, cache.dense
    dpred = np.asarray(dpred, dtype=np.float64)
    if cache.single:
        dpred = dpred[None]
    H = lstm.hidden_size
    X = cache.X
    B, m, F = X.shape
    h_last = cache.hiddens[-1]
    dWd = dpred.T @ h_last
    dbd = dpred.sum(axis=0)
    dh = dpred @ dense.W
    dc = np.zeros((B, H))
    dZ = np.empty((B, m, 4 * H))
    dU = np.zeros_like(lstm.U)
    for t in range(m - 1, -1, -1):
        i, f, o, g = cache.gates[t]
        tc = cache.tanh_cells[t]
        c_prev = cache.cells[t]
        dc = dc + dh * o * (1.0 - tc * tc)
        dz = dZ[:, t]
        dz[:, :H] = dc * g * i * (1.0 - i)
        dz[:, H : 2 * H] = dc * c_prev * f * (1.0 - f)
        dz[:, 2 * H : 3 * H] = dh * tc * o * (1.0 - o)
        dz[:, 3 * H :] = dc * i * (1.0 - g * g)
        dU += dz.T @ cache.hiddens[t]
        dh = dz @ lstm.U
        dc = dc * f
    dZ2 = dZ.reshape(B * m, 4 * H)
    dW = dZ2.T @ X.reshape(B * m, F)
    db = dZ2.sum(axis=0)
    return LstmParams(dW, dU, db), DenseParams(dWd, dbd)


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, arrays: Sequence[np.ndarray], **hyper) -> "AdamState":
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], **hyper)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState, lr: float):
    """In-place bias-corrected Adam update of ``params``; returns ``(params, state)``."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


@dataclass
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 1e-3
    hidden_candidates: tuple[int, ...] = (30, 10, 5)
    batch_size: int = 32
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.hidden_candidates or min(self.hidden_candidates) < 1:
            raise ValueError("hidden_candidates must be positive")
        self.hidden_candidates = tuple(int(h) for h in self.hidden_candidates)


@dataclass
class TrainedModel:
    """Learned weights plus what is needed to use them on raw counts."""

    lstm: LstmParams
    dense: DenseParams
    loss_trace: np.ndarray = field(default_factory=lambda: np.zeros(0))
    validation_rmse: dict = field(default_factory=dict)
    normalizer: Normalizer | None = None
    meta: dict = field(default_factory=dict)

    @property
    def hidden_size(self) -> int:
        return self.lstm.hidden_size

    @property
    def horizon(self) -> int:
        return self.dense.horizon

    def predict(self, seq) -> np.ndarray:
        return predict(self.lstm, self.dense, seq)


def _epoch_batches(n_samples: int, batch_size: int, rng, shuffle: bool):
    order = rng.permutation(n_samples) if shuffle else np.arange(n_samples)
    for lo in range(0, n_samples, batch_size):
        yield order[lo : lo + batch_size]


def fit_network(
    X: np.ndarray,
    Y: np.ndarray,
    hidden: int,
    config: TrainConfig,
    rng: np.random.Generator,
) -> tuple[LstmParams, DenseParams, np.ndarray]:
    """Train one network; returns params and the per-epoch mean MAE trace."""
    lstm, dense = init_params(X.shape[2], hidden, Y.shape[1], rng)
    params = _arrays(lstm, dense)
    state = AdamState.for_params(params)
    trace = np.empty(config.epochs)
    n_samples = len(X)
    for epoch in range(config.epochs):
        total = 0.0
        for idx in _epoch_batches(n_samples, config.batch_size, rng, config.shuffle):
            pred, cache = forward(lstm, dense, X[idx])
            loss = mae_loss(pred, Y[idx])
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch} (hidden={hidden})")
            total += loss * len(idx)
            gl, gd = backward(cache, mae_grad(pred, Y[idx]))
            adam_step(params, _arrays(gl, gd), state, config.learning_rate)
        trace[epoch] = total / n_samples
    return lstm, dense, trace


def _rmse(a, b) -> float:
    return float(np.sqrt(np.mean((np.asarray(a) - np.asarray(b)) ** 2)))


def train(
    samples: Sequence[WindowSample],
    config: TrainConfig,
    validation: Sequence[WindowSample] = (),
    denormalize: Callable[[np.ndarray], np.ndarray] | None = None,
) -> TrainedModel:
    """Train one network per hidden-size candidate and keep the best.

    The winner has the lowest RMSE on ``validation`` after ``denormalize``
    (identity if omitted). Without validation samples the final training
    loss decides. Deterministic for a given ``config.seed``.
    """
    if not samples:
        raise ValueError("need at least one training sample")
    X, Y = stack_samples(samples)
    if validation:
        Xv, Yv = stack_samples(validation)
        if Xv.shape[2] != X.shape[2] or Yv.shape[1] != Y.shape[1]:
            raise ValueError("validation samples do not match training shapes")
    denorm = denormalize or (lambda a: a)
    best = None
    scores = {}
    for k, hidden in enumerate(config.hidden_candidates):
        rng = np.random.default_rng([config.seed, hidden, k])
        try:
            lstm, dense, trace = fit_network(X, Y, hidden, config, rng)
        except DivergenceError as exc:
            log.warning("discarding hidden=%d candidate: %s", hidden, exc)
            continue
        if validation:
            score = _rmse(denorm(predict(lstm, dense, Xv)), denorm(Yv))
        else:
            score = float(trace[-1])
        if not np.isfinite(score):
            log.warning("discarding hidden=%d candidate: non-finite validation score", hidden)
            continue
        scores[hidden] = score
        if best is None or score < best[0]:
            best = (score, lstm, dense, trace)
    if best is None:
        raise DivergenceError("every hidden-size candidate diverged")
    _, lstm, dense, trace = best
    return TrainedModel(lstm, dense, trace, scores)


def grad_check(
    lstm: LstmParams,
    dense: DenseParams,
    seq,
    target,
    eps: float = 1e-5,
) -> float:
    """Max relative error of the BPTT gradient against central differences.

    Checks every parameter of the MAE loss at ``(seq, target)``; relative
    error uses a 1e-8 floor in the denominator.
    """
    pred, cache = forward(lstm, dense, seq)
    gl, gd = backward(cache, mae_grad(pred, target))
    worst = 0.0
    for p, g in zip(_arrays(lstm, dense), _arrays(gl, gd)):
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + eps
            up = mae_loss(predict(lstm, dense, seq), target)
            flat[j] = old - eps
            down = mae_loss(predict(lstm, dense, seq), target)
            flat[j] = old
            num = (up - down) / (2 * eps)
            err = abs(gflat[j] - num) / max(abs(gflat[j]), abs(num), 1e-8)
            worst = max(worst, err)
    return worst


def random_network(input_size: int, hidden: int, horizon: int, seed: int = 0, scale: float = 0.5):
    """Random weights (biases included) for gradient checks and tests."""
    rng = np.random.default_rng(seed)
    H, F = hidden, input_size
    lstm = LstmParams(
        rng.normal(0, scale, (4 * H, F)),
        rng.normal(0, scale, (4 * H, H)),
        rng.normal(0, scale, 4 * H),
    )
    dense = DenseParams(rng.normal(0, scale, (horizon, H)), rng.normal(0, scale, horizon))
    return lstm, dense


def gradcheck_suite(n_configs: int = 20, seed: int = 0, eps: float = 1e-5) -> list[dict]:
    """Gradient check over random ``(H, F, m, n)`` shapes.

    Targets are offset from the prediction so no residual sits on the MAE
    kink, where the finite difference is meaningless.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for k in range(n_configs):
        H = int(rng.integers(1, 9))
        F = int(rng.integers(1, 7))
        m = int(rng.integers(1, 8))
        n = int(rng.integers(1, 5))
        lstm, dense = random_network(F, H, n, seed=int(rng.integers(2**31)))
        seq = rng.normal(size=(m, F))
        pred = predict(lstm, dense, seq)
        target = pred + rng.choice([-1.0, 1.0], n) * rng.uniform(0.1, 1.0, n)
        err = grad_check(lstm, dense, seq, target, eps)
        rows.append({"config": k, "hidden": H, "features": F, "m": m, "n": n, "max_rel_error": err})
    return rows


# -- serialization -----------------------------------------------------------

_ARRAY_KEYS = ("W", "U", "b", "W_out", "b_out", "loss_trace")


def dumps(model: TrainedModel) -> bytes:
    """Self-describing ``.npz`` payload; fp64 arrays round-trip bit-exactly."""
    header = {
        "format": "tapcast-lstm/1",
        "hidden_size": model.hidden_size,
        "input_size": model.lstm.input_size,
        "horizon": model.horizon,
        "validation_rmse": {str(k): v for k, v in model.validation_rmse.items()},
        "meta": model.meta,
    }
    arrays = dict(
        W=model.lstm.W,
        U=model.lstm.U,
        b=model.lstm.b,
        W_out=model.dense.W,
        b_out=model.dense.b,
        loss_trace=np.asarray(model.loss_trace, dtype=np.float64),
    )
    if model.normalizer is not None:
        arrays["norm_min"] = model.normalizer.mins
        arrays["norm_max"] = model.normalizer.maxs
    buf = io.BytesIO()
    np.savez(buf, header=np.frombuffer(json.dumps(header, sort_keys=True).encode(), np.uint8), **arrays)
    return buf.getvalue()


def loads(payload: bytes) -> TrainedModel:
    with np.load(io.BytesIO(payload)) as z:
        header = json.loads(bytes(z["header"]).decode())
        if header.get("format") != "tapcast-lstm/1":
            raise ValueError(f"unknown model format {header.get('format')!r}")
        a = {k: z[k].copy() for k in _ARRAY_KEYS}
        normalizer = Normalizer(z["norm_min"], z["norm_max"]) if "norm_min" in z else None
    model = TrainedModel(
        LstmParams(a["W"], a["U"], a["b"]),
        DenseParams(a["W_out"], a["b_out"]),
        a["loss_trace"],
        {int(k): v for k, v in header["validation_rmse"].items()},
        normalizer,
        header["meta"],
    )
    if (model.hidden_size, model.lstm.input_size, model.horizon) != (
        header["hidden_size"],
        header["input_size"],
        header["horizon"],
    ):
        raise ValueError("model payload shapes disagree with header")
    return model


def save(model: TrainedModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(model))


def load(path) -> TrainedModel:
    with open(path, "rb") as fh:
        return loads(fh.read())
