"""Learned strategy selector.

A small feed-forward network maps a stream's feature vector to one class
per strategy dimension.  Labels come from an exhaustive simulation oracle:
every applicable tuple of a finite grid is simulated and the one with the
lowest mu becomes the target.  Training is greedy layer-wise followed by a
global fine-tune on the summed per-head cross-entropy.
"""

from __future__ import annotations

import csv
import json
import logging
import warnings
from collections import Counter
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import ConfigError, NoApplicableStrategy
from .filesystem import FatQueryMethod, FdtQueryMethod
from .flash_model import MB
from .strategies import (
    HEAD_SIZES,
    DataWrite,
    FatUpdate,
    FdtUpdate,
    StrategyTuple,
    applicable,
    strategy_grid,
)
from .workload import (
    FEATURE_LEN,
    FEATURE_VERSION,
    HardwareContext,
    TrainingSample,
    WorkloadSpec,
    preprocess,
    with_budget,
)

log = logging.getLogger(__name__)

MODEL_VERSION = 1
DEFAULT_BUDGET = 64 * MB
DEFAULT_PARAMS = {"fat_batch": 16, "fdt_batch": 16, "burst": 8}
_ENUMS = (FatQueryMethod, FatUpdate, FdtQueryMethod, FdtUpdate, DataWrite)


# --- activations -----------------------------------------------------------


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# name -> (f, f' expressed through the output a = f(z))
ACTIVATIONS = {
    "sigmoid": (_sigmoid, lambda a: a * (1.0 - a)),
    "tanh": (np.tanh, lambda a: 1.0 - a * a),
    "linear": (lambda z: z, lambda a: np.ones_like(a)),
}


def softmax(z, axis=-1):
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


# --- model -----------------------------------------------------------------


@dataclass
class Mlp:
    layer_dims: list  # [input, hidden_1, ..., hidden_N]
    weights: list  # hidden layers, then the output layer
    biases: list
    heads: tuple = HEAD_SIZES
    activation: str = "sigmoid"
    input_shift: np.ndarray | None = None
    input_scale: np.ndarray | None = None
    params: dict = field(default_factory=lambda: dict(DEFAULT_PARAMS))
    feature_version: int = FEATURE_VERSION

    def __post_init__(self):
        self.heads = tuple(self.heads)
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        dims = list(self.layer_dims) + [sum(self.heads)]
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ValueError("need one weight matrix and bias per layer")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (dims[i + 1], dims[i]) or b.shape != (dims[i + 1],):
                raise ValueError(
                    f"layer {i + 1}: expected W {(dims[i + 1], dims[i])}, b {(dims[i + 1],)}; "
                    f"got {W.shape}, {b.shape}"
                )
        n = self.layer_dims[0]
        if self.input_shift is None:
            self.input_shift = np.zeros(n)
        if self.input_scale is None:
            self.input_scale = np.ones(n)

    @property
    def n_hidden(self) -> int:
        return len(self.layer_dims) - 1

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    def copy(self) -> "Mlp":
        return replace(
            self,
            weights=[W.copy() for W in self.weights],
            biases=[b.copy() for b in self.biases],
            input_shift=self.input_shift.copy(),
            input_scale=self.input_scale.copy(),
            params=dict(self.params),
        )


def _init_layer(rng, n_out, n_in, scale):
    lim = scale / np.sqrt(n_in)
    return rng.uniform(-lim, lim, size=(n_out, n_in)), np.zeros(n_out)


def init_mlp(input_dim=FEATURE_LEN, hidden=(32, 32), heads=HEAD_SIZES, seed=0, scale=1.0,
             activation="sigmoid") -> Mlp:
    """Weights uniform in +-scale/sqrt(fan_in), biases zero."""
    rng = np.random.default_rng(seed)
    dims = [input_dim, *hidden, sum(heads)]
    Ws, bs = [], []
    for i in range(len(dims) - 1):
        W, b = _init_layer(rng, dims[i + 1], dims[i], scale)
        Ws.append(W)
        bs.append(b)
    return Mlp([input_dim, *hidden], Ws, bs, heads=heads, activation=activation)


def _split_heads(z, heads):
    out, i = [], 0
    for k in heads:
        out.append(z[..., i:i + k])
        i += k
    return out


def _hidden_pass(model: Mlp, X, upto=None):
    """Layer outputs [X_0, X_1, ..., X_upto] for a batch (rows are samples)."""
    f, _ = ACTIVATIONS[model.activation]
    a = (X - model.input_shift) / model.input_scale
    acts = [a]
    n = model.n_hidden if upto is None else upto
    for W, b in zip(model.weights[:n], model.biases[:n]):
        a = f(a @ W.T + b)
        acts.append(a)
    return acts


def logits(model: Mlp, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.input_dim:
        raise ValueError(f"input has {X.shape[1]} features, model expects {model.input_dim}")
    a = _hidden_pass(model, X)[-1]
    return a @ model.weights[-1].T + model.biases[-1]


def forward(model: Mlp, x) -> list:
    """Per-head probability vectors for one input (or per-head matrices for a batch)."""
    x = np.asarray(x, dtype=float)
    z = logits(model, x)
    probs = [softmax(h) for h in _split_heads(z, model.heads)]
    return [p[0] for p in probs] if x.ndim == 1 else probs


# --- loss and gradients ----------------------------------------------------


def _ce_and_delta(z, Y, heads):
    """Mean summed cross-entropy and dL/dz for a batch of logits."""
    n = z.shape[0]
    loss = 0.0
    delta = np.empty_like(z)
    i = 0
    for h, k in enumerate(heads):
        p = softmax(z[:, i:i + k])
        y = Y[:, h]
        loss -= np.sum(np.log(np.clip(p[np.arange(n), y], 1e-300, None)))
        d = p.copy()
        d[np.arange(n), y] -= 1.0
        delta[:, i:i + k] = d / n
        i += k
    return loss / n, delta


def loss(model: Mlp, X, Y) -> float:
    z = logits(model, X)
    return _ce_and_delta(z, np.asarray(Y), model.heads)[0]


def gradients(model: Mlp, X, Y):
    """Analytic gradients of ``loss`` w.r.t. every weight and bias (backprop)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y)
    _, df = ACTIVATIONS[model.activation]
    acts = _hidden_pass(model, X)
    z = acts[-1] @ model.weights[-1].T + model.biases[-1]
    value, delta = _ce_and_delta(z, Y, model.heads)
    gW = [None] * len(model.weights)
    gb = [None] * len(model.biases)
    for layer in range(len(model.weights) - 1, -1, -1):
        a_in = acts[layer]
        gW[layer] = delta.T @ a_in
        gb[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ model.weights[layer]) * df(acts[layer])
    return value, gW, gb


# --- prediction ------------------------------------------------------------


def _valid(classes) -> bool:
    fq, fu = classes[0], classes[1]
    return not (fu == FatUpdate.FULL_PREALLOC.value and fq != FatQueryMethod.PRESCAN_ALL.value)


def tuple_from_classes(classes, params=None) -> StrategyTuple:
    params = {**DEFAULT_PARAMS, **(params or {})}
    fq, fu, dq, du, dw = (e(c) for e, c in zip(_ENUMS, classes))
    return StrategyTuple(
        fq, fu, dq, du, dw,
        fat_batch=params["fat_batch"] if fu is FatUpdate.BATCH_DEFERRED else None,
        fdt_batch=params["fdt_batch"] if du is FdtUpdate.BATCH_DEFERRED else None,
        burst=params["burst"] if dw is DataWrite.BURST else None,
    )


def _ranked(p):
    # descending probability, ties to the lowest index
    return sorted(range(len(p)), key=lambda i: (-p[i], i))


def _completable(prefix, workload, params) -> bool:
    import itertools

    rest = [range(k) for k in HEAD_SIZES[len(prefix):]]
    for tail in itertools.product(*rest):
        cls = tuple(prefix) + tail
        if _valid(cls) and (workload is None or applicable(tuple_from_classes(cls, params), workload)):
            return True
    return False


def predict_strategy(model: Mlp, x, workload: WorkloadSpec | None = None) -> StrategyTuple:
    """Argmax per head, falling back head by head to an applicable tuple."""
    probs = forward(model, x)
    chosen = []
    for p in probs:
        for c in _ranked(p):
            if _completable(chosen + [c], workload, model.params):
                chosen.append(c)
                break
        else:
            raise NoApplicableStrategy("no applicable strategy tuple")
    return tuple_from_classes(chosen, model.params)


def dominant_stream(workload: WorkloadSpec):
    """Highest-rate stream (lowest index on ties)."""
    return max(enumerate(workload.streams), key=lambda p: (p[1].rate, -p[0]))[1]


def predict_for_workload(model: Mlp, workload: WorkloadSpec, hw: HardwareContext) -> StrategyTuple:
    x = preprocess(dominant_stream(workload), hw)
    return predict_strategy(model, x, workload)


# --- oracle labels ---------------------------------------------------------


def _sim_key(spec, budget):
    s = with_budget(spec, budget)
    # a lone periodic stream with an unbounded cache is served in arrival
    # order, so only sizes matter for the counters
    n = s.packet_count()
    f = s.file_limit
    return (s.packet_bytes, n, f if f <= n * s.packet_bytes else None)


class Oracle:
    """Memoized exhaustive simulation over a strategy grid."""

    def __init__(self, grid=None, sim_budget=DEFAULT_BUDGET, hw: HardwareContext | None = None,
                 static_setup=False, charge_read_jumps=True):
        self.grid = sorted(grid) if grid is not None else strategy_grid()
        if not self.grid:
            raise ConfigError("strategy grid is empty")
        self.budget = int(sim_budget)
        self.hw = hw or HardwareContext()
        self.static_setup = static_setup
        self.charge_read_jumps = charge_read_jumps
        if self.budget < 8 * self.hw.timing.cluster_bytes:
            raise ConfigError("simulation budget must cover at least 8 clusters")
        self._mu: dict = {}

    def mu(self, spec, t: StrategyTuple) -> Fraction:
        from .harness.engine import RunConfig, run_simulation

        key = (_sim_key(spec, self.budget), t)
        if key not in self._mu:
            wl = WorkloadSpec((with_budget(spec, self.budget),))
            rep = run_simulation(RunConfig(
                wl, t, timing=self.hw.timing, static_setup=self.static_setup,
                charge_read_jumps=self.charge_read_jumps,
            ))
            self._mu[key] = Fraction(rep.mu_exact)
        return self._mu[key]

    def best(self, spec) -> tuple[StrategyTuple, Fraction]:
        wl = WorkloadSpec((spec,))
        cands = [t for t in self.grid if applicable(t, wl)]
        if not cands:
            raise NoApplicableStrategy("no tuple in the grid applies to this sample")
        return min(((t, self.mu(spec, t)) for t in cands), key=lambda p: (p[1], p[0].sort_key()))


def label_by_oracle(sample: TrainingSample, strategy_grid=None, sim_budget=DEFAULT_BUDGET,
                    oracle: Oracle | None = None, **kw) -> TrainingSample:
    """Return a copy of ``sample`` labelled with its mu-minimizing tuple."""
    if oracle is None:
        oracle = Oracle(strategy_grid, sim_budget, **kw)
    t, mu = oracle.best(sample.spec)
    return replace(sample, label=t, mu_best=float(mu))


def label_samples(samples, oracle: Oracle, progress=None) -> list[TrainingSample]:
    out = []
    for i, s in enumerate(samples):
        out.append(label_by_oracle(s, oracle=oracle))
        if progress and (i + 1) % 500 == 0:
            progress(i + 1, len(samples))
    return out


# --- training --------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    hidden: tuple = (32, 32)
    activation: str = "sigmoid"
    learning_rate: float = 0.5
    pretrain_epochs: int = 30
    finetune_epochs: int = 150
    batch_size: int = 64
    seed: int = 0
    init_scale: float = 1.0
    holdout_fraction: float = 0.2

    def __post_init__(self):
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ConfigError("held-out fraction must lie in (0, 1)")
        for name in ("learning_rate", "pretrain_epochs", "finetune_epochs", "batch_size",
                     "init_scale"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not self.hidden or any(h <= 0 for h in self.hidden):
            raise ConfigError("hidden layer sizes must be positive")


@dataclass
class TrainReport:
    rows: list = field(default_factory=list)  # dicts: phase, layer, epoch, loss, heldout_acc
    train_ids: list = field(default_factory=list)
    heldout_ids: list = field(default_factory=list)
    degenerate: bool = False

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write("# schema-version: 1\n")
            w = csv.DictWriter(fh, ["phase", "layer", "epoch", "loss", "heldout_acc"],
                               lineterminator="\n")
            w.writeheader()
            w.writerows(self.rows)


def split_samples(samples, holdout_fraction=0.2, seed=0):
    """Deterministic train / held-out split."""
    idx = np.random.default_rng(seed).permutation(len(samples))
    n_hold = int(round(holdout_fraction * len(samples)))
    hold = sorted(idx[:n_hold].tolist())
    train = sorted(idx[n_hold:].tolist())
    return [samples[i] for i in train], [samples[i] for i in hold]


def _matrix(samples, hw):
    X = np.array([s.features(hw) for s in samples])
    Y = np.array([s.label.classes() for s in samples], dtype=int)
    return X, Y


def _accuracy(model, X, Y):
    if len(X) == 0:
        return float("nan")
    z = logits(model, X)
    ok = np.ones(len(X), dtype=bool)
    for h, zh in enumerate(_split_heads(z, model.heads)):
        ok &= np.argmax(zh, axis=1) == Y[:, h]
    return float(ok.mean())


def _modal_params(samples):
    params = dict(DEFAULT_PARAMS)
    for name in params:
        vals = Counter(getattr(s.label, name) for s in samples if getattr(s.label, name) is not None)
        if vals:
            params[name] = min(vals, key=lambda v: (-vals[v], v))
    return params


def _sgd(model, layers, X, Y, epochs, cfg, rng, report, phase, layer, Xh, Yh):
    """Mini-batch gradient descent on the listed layer indices."""
    n = len(X)
    for epoch in range(epochs):
        order = rng.permutation(n)
        for i in range(0, n, cfg.batch_size):
            b = order[i:i + cfg.batch_size]
            _, gW, gb = gradients(model, X[b], Y[b])
            for li in layers:
                model.weights[li] -= cfg.learning_rate * gW[li]
                model.biases[li] -= cfg.learning_rate * gb[li]
        report.rows.append({
            "phase": phase, "layer": layer, "epoch": epoch,
            "loss": float(loss(model, X, Y)), "heldout_acc": float(_accuracy(model, Xh, Yh)),
        })


def train(model: Mlp | None, samples, cfg: TrainConfig = TrainConfig(),
          hw: HardwareContext | None = None):
    """Layer-wise pre-training, then a global fine-tune.  Returns (model, report)."""
    hw = hw or HardwareContext()
    if any(s.label is None for s in samples):
        raise ConfigError("every training sample needs a label")
    train_s, hold_s = split_samples(samples, cfg.holdout_fraction, cfg.seed)
    X, Y = _matrix(train_s, hw)
    Xh, Yh = _matrix(hold_s, hw) if hold_s else (np.zeros((0, X.shape[1])), np.zeros((0, 5), int))
    report = TrainReport(train_ids=[s.sample_id for s in train_s],
                         heldout_ids=[s.sample_id for s in hold_s])
    if all(len(np.unique(Y[:, h])) < 2 for h in range(Y.shape[1])):
        report.degenerate = True
        warnings.warn("every head sees a single class; the model can only learn a constant",
                      stacklevel=2)

    rng = np.random.default_rng(cfg.seed)
    if model is None:
        model = init_mlp(X.shape[1], cfg.hidden, HEAD_SIZES, cfg.seed, cfg.init_scale, cfg.activation)
    else:
        model = model.copy()
    shift = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    model.input_shift, model.input_scale = shift, scale
    model.params = _modal_params(train_s)

    # phase 1: each hidden layer trained under a temporary output head
    dims = model.layer_dims
    n_out = sum(model.heads)
    for l in range(1, model.n_hidden + 1):
        W_tmp, b_tmp = _init_layer(rng, n_out, dims[l], cfg.init_scale)
        sub = Mlp(dims[:l + 1], model.weights[:l] + [W_tmp], model.biases[:l] + [b_tmp],
                  heads=model.heads, activation=model.activation,
                  input_shift=shift, input_scale=scale)
        _sgd(sub, [l - 1, l], X, Y, cfg.pretrain_epochs, cfg, rng, report, "layerwise", l, Xh, Yh)
        model.weights[l - 1], model.biases[l - 1] = sub.weights[l - 1], sub.biases[l - 1]
        if l == model.n_hidden:
            model.weights[-1], model.biases[-1] = sub.weights[-1], sub.biases[-1]

    # phase 2: every layer at once
    report.rows.append({"phase": "finetune", "layer": 0, "epoch": -1,
                        "loss": float(loss(model, X, Y)), "heldout_acc": float(_accuracy(model, Xh, Yh))})
    _sgd(model, list(range(len(model.weights))), X, Y, cfg.finetune_epochs, cfg, rng, report,
         "finetune", 0, Xh, Yh)
    return model, report


# --- cost evaluation -------------------------------------------------------


@dataclass(frozen=True)
class CostRecord:
    sample_id: int
    strategy: StrategyTuple
    mu_achieved: float
    mu_best: float

    @property
    def regret(self) -> float:
        return self.mu_achieved - self.mu_best

    @property
    def ratio(self) -> float:
        return self.mu_achieved / self.mu_best if self.mu_best > 0 else float("inf")


def evaluate_cost(model: Mlp, samples, sim_budget=DEFAULT_BUDGET, oracle: Oracle | None = None,
                  hw: HardwareContext | None = None) -> list[CostRecord]:
    """Simulate the predicted tuple for every labelled sample."""
    if oracle is None:
        oracle = Oracle(None, sim_budget, hw)
    out = []
    for s in samples:
        t = predict_for_workload(model, WorkloadSpec((s.spec,)), oracle.hw)
        mu = oracle.mu(s.spec, t)
        best = s.mu_best if s.mu_best is not None else float(oracle.best(s.spec)[1])
        out.append(CostRecord(s.sample_id, t, float(mu), float(best)))
    return out


# --- persistence -----------------------------------------------------------


def model_to_dict(model: Mlp) -> dict:
    return {
        "version": MODEL_VERSION,
        "feature_version": model.feature_version,
        "layer_dims": list(model.layer_dims),
        "heads": list(model.heads),
        "activation": model.activation,
        "weights": [W.tolist() for W in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "input_shift": model.input_shift.tolist(),
        "input_scale": model.input_scale.tolist(),
        "params": dict(model.params),
    }


def model_from_dict(d: dict) -> Mlp:
    if d.get("version") != MODEL_VERSION:
        raise ConfigError(f"unsupported model version {d.get('version')!r}")
    if d.get("feature_version") != FEATURE_VERSION:
        raise ConfigError("model was trained on a different feature encoding")
    return Mlp(
        layer_dims=list(d["layer_dims"]),
        weights=[np.array(W, dtype=float) for W in d["weights"]],
        biases=[np.array(b, dtype=float) for b in d["biases"]],
        heads=tuple(d["heads"]),
        activation=d["activation"],
        input_shift=np.array(d["input_shift"], dtype=float),
        input_scale=np.array(d["input_scale"], dtype=float),
        params=dict(d.get("params") or DEFAULT_PARAMS),
    )


def save_model(model: Mlp, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n")


def load_model(path) -> Mlp:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"model file {p} not found")
    try:
        return model_from_dict(json.loads(p.read_text()))
    except (KeyError, ValueError, TypeError) as e:
        raise ConfigError(f"malformed model file {p}: {e}") from None
