"""Incremental network construction.

One framework builds all six learners. A node is added per step: the
supervisory variants draw batches of random candidates and keep only those
passing the positive-xi acceptance test, while the RVFL variants accept a
single random draw. After every acceptance the full readout is re-solved by
minimum-norm least squares and the training residual renewed. The
early-stopping variants watch validation RMSE and roll back trailing nodes
before opening a new layer.

Randomness is fully keyed: every candidate draw comes from its own Philox
substream derived from (master seed, layer, node, scan pair, candidate
index), so evaluation order and thread count cannot change results.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .activations import ActivationKind
from .dataset import Dataset, NormParams
from .model import (
    BinaryWeightMatrix,
    DenseWeightMatrix,
    Layer,
    LinearMechanism,
    Mechanism,
    ScmModel,
    mechanism_output,
)
from .numerics import lasso_fit, least_squares_pinv, rmse

UNBOUNDED = 2**31 - 1

DEFAULT_LAMBDA_SET = (0.5, 1.0, 5.0, 10.0, 30.0, 50.0, 100.0)
DEFAULT_R_SET = (0.9, 0.99, 0.999, 0.9999, 0.99999)

BINARY = "binary"
REAL = "real"

# Candidates are evaluated in fixed-size chunks so that chunk boundaries (and
# therefore BLAS call shapes) are identical whether or not a thread pool is
# used; parallel and serial searches then return bit-identical winners.
_CHUNK = 128

_H_NORM_FLOOR = 1e-300


class DegenerateCandidateError(ValueError):
    """Candidate activation vector has (numerically) zero norm."""


@dataclass(frozen=True)
class BuilderConfig:
    """All hyperparameters of the constructive algorithm.

    ``max_nodes_per_layer``, ``candidates_per_layer`` and ``activations``
    accept either a single value applied to every layer or one value per
    layer. ``UNBOUNDED`` marks a layer grown solely under early stopping.
    """

    max_layers: int
    max_nodes_per_layer: object = UNBOUNDED
    candidates_per_layer: object = 100
    lambda_set: tuple = DEFAULT_LAMBDA_SET
    r_set: tuple = DEFAULT_R_SET
    error_tol: float = 0.0
    early_stop_tol: float = 0.001
    early_stop_step: int = 10
    lasso_alpha: float = 1.0
    activations: object = "sigmoid"
    weight_mode: str = BINARY
    seed: int = 0

    def __post_init__(self):
        if self.max_layers < 1:
            raise ValueError("max_layers must be >= 1")
        if self.early_stop_step < 1:
            raise ValueError("early_stop_step must be >= 1")
        if not (math.isfinite(self.error_tol) and self.error_tol >= 0):
            raise ValueError("error_tol must be finite and >= 0")
        if not (math.isfinite(self.lasso_alpha) and self.lasso_alpha >= 0):
            raise ValueError("lasso_alpha must be finite and >= 0")
        if self.weight_mode not in (BINARY, REAL):
            raise ValueError(f"weight_mode must be '{BINARY}' or '{REAL}'")
        lam = tuple(float(v) for v in self.lambda_set)
        if not lam or any(v <= 0 for v in lam):
            raise ValueError("lambda_set must be non-empty and strictly positive")
        rs = tuple(float(v) for v in self.r_set)
        if not rs or any(not 0 < v < 1 for v in rs):
            raise ValueError("r_set values must lie in (0, 1)")
        if any(b <= a for a, b in zip(rs, rs[1:])):
            raise ValueError("r_set must be strictly increasing")
        object.__setattr__(self, "lambda_set", lam)
        object.__setattr__(self, "r_set", rs)
        object.__setattr__(self, "max_nodes_per_layer", self._per_layer_int(self.max_nodes_per_layer, "max_nodes_per_layer"))
        object.__setattr__(self, "candidates_per_layer", self._per_layer_int(self.candidates_per_layer, "candidates_per_layer"))
        object.__setattr__(self, "activations", self._per_layer_act(self.activations))

    def _per_layer_int(self, value, name) -> tuple:
        if isinstance(value, (int, np.integer)):
            values = (int(value),) * self.max_layers
        else:
            values = tuple(int(v) for v in value)
        if len(values) != self.max_layers:
            raise ValueError(f"{name} needs 1 or {self.max_layers} entries, got {len(values)}")
        if any(v < 1 for v in values):
            raise ValueError(f"{name} entries must be >= 1")
        return values

    def _per_layer_act(self, value) -> tuple:
        if isinstance(value, (str, ActivationKind)):
            value = (value,) * self.max_layers
        acts = tuple(a if isinstance(a, ActivationKind) else ActivationKind.parse(a) for a in value)
        if len(acts) != self.max_layers:
            raise ValueError(f"activations needs 1 or {self.max_layers} entries, got {len(acts)}")
        return acts

    def l_max(self, layer: int) -> int:
        return self.max_nodes_per_layer[layer - 1]

    def t_max(self, layer: int) -> int:
        return self.candidates_per_layer[layer - 1]

    def activation(self, layer: int) -> ActivationKind:
        return self.activations[layer - 1]

    def to_dict(self) -> dict:
        return {
            "max_layers": self.max_layers,
            "max_nodes_per_layer": list(self.max_nodes_per_layer),
            "candidates_per_layer": list(self.candidates_per_layer),
            "lambda_set": list(self.lambda_set),
            "r_set": list(self.r_set),
            "error_tol": self.error_tol,
            "early_stop_tol": self.early_stop_tol,
            "early_stop_step": self.early_stop_step,
            "lasso_alpha": self.lasso_alpha,
            "activations": [a.name for a in self.activations],
            "weight_mode": self.weight_mode,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "BuilderConfig":
        known = {
            "max_layers", "max_nodes_per_layer", "candidates_per_layer",
            "lambda_set", "r_set", "error_tol", "early_stop_tol",
            "early_stop_step", "lasso_alpha", "activations", "weight_mode", "seed",
        }
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown builder config keys: {sorted(unknown)}")
        if "max_layers" not in raw:
            raise ValueError("builder config requires max_layers")
        data = dict(raw)
        for key in ("max_nodes_per_layer",):
            if key in data:
                data[key] = _parse_node_limit(data[key])
        return cls(**data)


def _parse_node_limit(value):
    """Accept 'unbounded'/null for the L_max sentinel, per layer or scalar."""
    def one(v):
        if v is None or (isinstance(v, str) and v.lower() in ("unbounded", "inf")):
            return UNBOUNDED
        return int(v)

    if isinstance(value, (list, tuple)):
        return tuple(one(v) for v in value)
    return one(value)


@dataclass(frozen=True)
class CandidateEvaluation:
    """A drawn hidden-node candidate and its supervisory score."""

    signs: np.ndarray
    bias_raw: float
    lam: float
    xi_per_output: np.ndarray | None
    xi_sum: float
    r_used: float
    h: np.ndarray | None = None


@dataclass
class TraceNode:
    layer: int
    node: int
    train_rmse: float
    val_rmse: float
    lam: float
    r_used: float
    prev_train_rmse: float


@dataclass
class TraceEvent:
    kind: str  # "layer_advance" | "rollback" | "layer_deleted" | "stop"
    layer: int
    detail: str = ""
    removed: int = 0
    retained: int = 0


@dataclass
class TrainingTrace:
    """Per-node history (including later rolled-back nodes) plus events."""

    nodes: list = field(default_factory=list)
    events: list = field(default_factory=list)
    initial_train_rmse: float = math.nan
    initial_val_rmse: float = math.nan
    stop_reason: str = ""
    early_stop_source: str = "val"
    rollback_count: int = 0

    def final_train_rmse(self) -> float:
        return self.nodes[-1].train_rmse if self.nodes else self.initial_train_rmse


@dataclass(frozen=True)
class CandidateStream:
    """Deterministic Philox substreams for one node attempt."""

    master_seed: int
    layer: int
    node: int

    def generator(self, pair_idx: int, cand_idx: int) -> np.random.Generator:
        seq = np.random.SeedSequence(
            self.master_seed, spawn_key=(self.layer, self.node, pair_idx, cand_idx)
        )
        return np.random.Generator(np.random.Philox(seq))


def compute_xi(e, h, r: float) -> float:
    """Supervisory score <e,h>^2/<h,h> - (1-r)<e,e> for one output channel."""
    e = np.asarray(e, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    hh = float(h @ h)
    if hh <= _H_NORM_FLOOR:
        raise DegenerateCandidateError(f"candidate norm^2 {hh} below {_H_NORM_FLOOR}")
    eh = float(e @ h)
    return eh * eh / hh - (1.0 - r) * float(e @ e)


def _draw_raw(rng: np.random.Generator, a: int, weight_mode: str):
    """Weights first, then bias; the order is part of the determinism contract."""
    if weight_mode == BINARY:
        w = rng.integers(0, 2, size=a).astype(np.float64) * 2.0 - 1.0
    else:
        w = rng.uniform(-1.0, 1.0, size=a)
    b = float(rng.uniform(-1.0, 1.0))
    return w, b


def _eval_chunk(residual, layer_input, e_sq, act, lam, r, stream, pair_idx, start, count, weight_mode):
    """Evaluate candidates [start, start+count); return best qualifying or None."""
    a = layer_input.shape[1]
    w = np.empty((a, count))
    b = np.empty(count)
    for j in range(count):
        rng = stream.generator(pair_idx, start + j)
        w[:, j], b[j] = _draw_raw(rng, a, weight_mode)
    h = act.apply(layer_input @ (lam * w) + lam * b)
    hh = np.einsum("ij,ij->j", h, h)
    ok = hh > _H_NORM_FLOOR
    if not ok.any():
        return None
    eh = residual.T @ h  # m x count
    xi = (eh * eh) / np.where(ok, hh, 1.0) - (1.0 - r) * e_sq[:, None]
    qualified = ok & (xi > 0.0).all(axis=0)
    if not qualified.any():
        return None
    xi_sum = xi.sum(axis=0)
    j = int(np.argmax(np.where(qualified, xi_sum, -np.inf)))
    return (
        float(xi_sum[j]),
        start + j,
        CandidateEvaluation(
            signs=w[:, j].copy(),
            bias_raw=float(b[j]),
            lam=lam,
            xi_per_output=xi[:, j].copy(),
            xi_sum=float(xi_sum[j]),
            r_used=r,
            h=h[:, j].copy(),
        ),
    )


def candidate_search(
    residual,
    layer_input,
    layer_idx: int,
    cfg: BuilderConfig,
    stream: CandidateStream,
    workers: int = 1,
    weight_mode: str | None = None,
) -> CandidateEvaluation | None:
    """Scan (lambda, r) pairs for a node satisfying min_q xi_q > 0.

    For each pair, ``t_max`` fresh candidates are drawn; the first pair with
    any qualifying candidate yields the one with the largest xi sum (ties
    broken by lowest candidate index) and the scan stops. Returns None when
    every pair fails, which callers treat as "close this layer".
    """
    residual = np.asarray(residual, dtype=np.float64)
    layer_input = np.asarray(layer_input, dtype=np.float64)
    if residual.shape[0] != layer_input.shape[0]:
        raise ValueError("residual and layer_input must share their row count")
    act = cfg.activation(layer_idx)
    t_max = cfg.t_max(layer_idx)
    mode = weight_mode or cfg.weight_mode
    e_sq = np.einsum("ij,ij->j", residual, residual)

    chunks = [(s, min(_CHUNK, t_max - s)) for s in range(0, t_max, _CHUNK)]
    executor = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        pair_idx = 0
        for lam in cfg.lambda_set:
            for r in cfg.r_set:
                args = [
                    (residual, layer_input, e_sq, act, lam, r, stream, pair_idx, s, c, mode)
                    for s, c in chunks
                ]
                if executor is None:
                    results = [_eval_chunk(*a) for a in args]
                else:
                    results = list(executor.map(lambda a: _eval_chunk(*a), args))
                best = None
                for res in results:
                    if res is None:
                        continue
                    if best is None or res[0] > best[0] or (res[0] == best[0] and res[1] < best[1]):
                        best = res
                if best is not None:
                    return best[2]
                pair_idx += 1
    finally:
        if executor is not None:
            executor.shutdown(wait=False)
    return None


def draw_random_node(layer_input, activation: ActivationKind, weight_mode: str, stream: CandidateStream) -> CandidateEvaluation:
    """Single unsupervised draw (RVFL family): weights/bias on [-1,1], no scaling."""
    layer_input = np.asarray(layer_input, dtype=np.float64)
    rng = stream.generator(0, 0)
    w, b = _draw_raw(rng, layer_input.shape[1], weight_mode)
    h = activation.apply(layer_input @ w + b)
    return CandidateEvaluation(
        signs=w, bias_raw=b, lam=1.0, xi_per_output=None, xi_sum=math.nan,
        r_used=math.nan, h=h,
    )


def fit_linear_mechanism(x, y, alpha: float) -> LinearMechanism:
    """Per-output LASSO on mean-centered targets; the intercept is the mean."""
    x = np.asarray(x, dtype=np.float64)
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if y.shape[0] != x.shape[0]:
        y = y.T
    n, d = x.shape
    m = y.shape[1]
    u = y.mean(axis=0)
    p = np.zeros((d, m))
    for i in range(m):
        p[:, i] = lasso_fit(x, y[:, i] - u[i], alpha).coefficients
    return LinearMechanism(p, u)


def solve_readout(hidden, y, mech_out) -> np.ndarray:
    """Minimum-norm readout for the mechanism-corrected targets, as m x T."""
    beta = least_squares_pinv(hidden, np.asarray(y) - np.asarray(mech_out))
    return beta.T


@dataclass(frozen=True)
class EarlyStopAction:
    advance_layer: bool
    rollback_count: int = 0


CONTINUE = EarlyStopAction(False, 0)


def _improvement_ratio(prev: float, cur: float) -> float:
    if cur == 0.0:
        return math.inf if prev > 0.0 else 0.0
    return (prev - cur) / cur


def early_stop_action(val_history, l_step: int, tau: float, baseline: float | None = None) -> EarlyStopAction:
    """Early-stopping core on a layer's per-node validation RMSE sequence.

    Triggers once the L_step-step relative improvement falls to tau or
    below; then trailing nodes are removed while the one-step improvement
    stays at tau or below. ``baseline`` is the validation RMSE before the
    layer's first node; without it the first node is always retained.
    """
    length = len(val_history)
    if length <= l_step:
        return CONTINUE
    if _improvement_ratio(val_history[length - l_step - 1], val_history[-1]) > tau:
        return CONTINUE
    k = 0
    idx = length - 1
    while idx >= 0:
        prev = val_history[idx - 1] if idx >= 1 else baseline
        if prev is None:
            break
        if _improvement_ratio(prev, val_history[idx]) <= tau:
            k += 1
            idx -= 1
        else:
            break
    return EarlyStopAction(True, k)


def early_stop_check(trace: TrainingTrace, cfg: BuilderConfig) -> EarlyStopAction:
    """Apply the early-stopping rule to the trace's current (last) layer."""
    if not trace.nodes:
        return CONTINUE
    layer = trace.nodes[-1].layer
    history = [n.val_rmse for n in trace.nodes if n.layer == layer]
    before = [n.val_rmse for n in trace.nodes if n.layer != layer]
    baseline = before[-1] if before else trace.initial_val_rmse
    if math.isnan(baseline):
        baseline = None
    return early_stop_action(history, cfg.early_stop_step, cfg.early_stop_tol, baseline)


@dataclass(frozen=True)
class _Features:
    deep: bool
    early_stopping: bool
    linear_model: bool
    supervisory: bool
    binary_only: bool = False
    scaled: bool = True  # lambda-scaled draws (supervisory family)


ALGORITHMS = {
    "scn": _Features(False, False, False, True),
    "deepscn": _Features(True, False, False, True),
    "scm": _Features(True, True, True, True, binary_only=True),
    "irvfl": _Features(False, False, False, False, scaled=False),
    "dirvfl-i": _Features(True, False, False, False, scaled=False),
    "dirvfl-ii": _Features(True, True, True, False, binary_only=True, scaled=False),
}


def canonical_algorithm(kind: str) -> str:
    name = kind.strip().lower().replace("_", "-")
    aliases = {"dirvfl1": "dirvfl-i", "dirvfl2": "dirvfl-ii", "deep-scn": "deepscn"}
    name = aliases.get(name, name)
    if name not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {kind!r}; expected one of {sorted(ALGORITHMS)}")
    return name


class _LayerAccum:
    """Accepted nodes of the layer under construction."""

    def __init__(self, activation: ActivationKind):
        self.activation = activation
        self.signs = []
        self.lams = []
        self.biases_raw = []
        self.h_train = []
        self.h_val = []

    def add(self, cand: CandidateEvaluation, h_val):
        self.signs.append(cand.signs)
        self.lams.append(cand.lam)
        self.biases_raw.append(cand.bias_raw)
        self.h_train.append(cand.h)
        self.h_val.append(h_val)

    def pop(self, k: int):
        del self.signs[-k:]
        del self.lams[-k:]
        del self.biases_raw[-k:]
        del self.h_train[-k:]
        del self.h_val[-k:]

    def __len__(self):
        return len(self.signs)

    def to_layer(self, weight_mode: str) -> Layer:
        raw = np.column_stack(self.signs)
        scales = np.asarray(self.lams, dtype=np.float64)
        biases = scales * np.asarray(self.biases_raw, dtype=np.float64)
        if weight_mode == BINARY:
            weights = BinaryWeightMatrix.from_signs(raw, scales)
        else:
            weights = DenseWeightMatrix(raw.shape[0], raw.shape[1], raw * scales[None, :], scales)
        return Layer(weights, biases, self.activation)


def build_baseline(
    kind: str,
    train: Dataset,
    val: Dataset,
    cfg: BuilderConfig,
    mechanism: Mechanism = None,
    norm: NormParams | None = None,
    workers: int = 1,
    early_stop_source: str = "val",
) -> tuple[ScmModel, TrainingTrace]:
    """Build one of the six learners under the shared constructive skeleton.

    ``mechanism`` overrides the LASSO linear model for the linear-model
    variants (plug-in mechanism case); it is evaluated, never fitted.
    ``norm`` is stored in the model and used to feed raw inputs to plug-in
    mechanisms. The shallow variants ignore all but the first layer's
    settings.
    """
    feats = ALGORITHMS[canonical_algorithm(kind)]
    if train.n_rows < 1:
        raise ValueError("training set is empty")
    if val is None or val.n_rows < 1:
        raise ValueError("a non-empty validation (or test) dataset is required")
    if train.n_features != val.n_features or train.n_targets != val.n_targets:
        raise ValueError("train and val must share feature/target dimensions")

    x_t, y_t = train.inputs, train.targets
    x_v, y_v = val.inputs, val.targets
    m = train.n_targets
    weight_mode = BINARY if feats.binary_only else cfg.weight_mode

    if feats.linear_model:
        mech = mechanism if mechanism is not None else fit_linear_mechanism(x_t, y_t, cfg.lasso_alpha)
    else:
        mech = None
    mech_tr = mechanism_output(mech, x_t, norm, m)
    mech_va = mechanism_output(mech, x_v, norm, m)

    residual = y_t - mech_tr
    train_rmse = rmse(mech_tr, y_t)
    val_rmse = rmse(mech_va, y_v)
    trace = TrainingTrace(
        initial_train_rmse=train_rmse,
        initial_val_rmse=val_rmse,
        early_stop_source=early_stop_source,
    )

    h_train_cols: list[np.ndarray] = []
    h_val_cols: list[np.ndarray] = []
    finished_layers: list[Layer] = []
    beta = np.zeros((m, 0))
    layer_input, val_input = x_t, x_v
    max_layers = cfg.max_layers if feats.deep else 1
    stop_reason = ""

    layer_no = 0
    while layer_no < max_layers and train_rmse > cfg.error_tol:
        layer_no += 1
        acc = _LayerAccum(cfg.activation(layer_no))
        layer_val_history = [val_rmse]  # index 0 = baseline before this layer
        none_found = False
        l_max = cfg.l_max(layer_no)
        while len(acc) < l_max and train_rmse > cfg.error_tol:
            node_idx = len(acc) + 1
            stream = CandidateStream(cfg.seed, layer_no, node_idx)
            if feats.supervisory:
                cand = candidate_search(
                    residual, layer_input, layer_no, cfg, stream,
                    workers=workers, weight_mode=weight_mode,
                )
            else:
                cand = draw_random_node(layer_input, cfg.activation(layer_no), weight_mode, stream)
            if cand is None:
                none_found = True
                break

            h_val = cfg.activation(layer_no).apply(
                val_input @ (cand.lam * cand.signs) + cand.lam * cand.bias_raw
            )
            prev_train_rmse = train_rmse
            acc.add(cand, h_val)
            h_train_cols.append(cand.h)
            h_val_cols.append(h_val)
            hidden = np.column_stack(h_train_cols)
            beta = solve_readout(hidden, y_t, mech_tr)
            train_pred = mech_tr + hidden @ beta.T
            residual = y_t - train_pred
            train_rmse = rmse(train_pred, y_t)
            val_pred = mech_va + np.column_stack(h_val_cols) @ beta.T
            val_rmse = rmse(val_pred, y_v)
            trace.nodes.append(
                TraceNode(layer_no, node_idx, train_rmse, val_rmse, cand.lam, cand.r_used, prev_train_rmse)
            )
            layer_val_history.append(val_rmse)

            if feats.early_stopping:
                action = early_stop_action(
                    layer_val_history[1:], cfg.early_stop_step, cfg.early_stop_tol,
                    baseline=layer_val_history[0],
                )
                if action.advance_layer:
                    k = action.rollback_count
                    if k > 0:
                        acc.pop(k)
                        del h_train_cols[-k:]
                        del h_val_cols[-k:]
                        if h_train_cols:
                            hidden = np.column_stack(h_train_cols)
                            beta = solve_readout(hidden, y_t, mech_tr)
                            train_pred = mech_tr + hidden @ beta.T
                            val_pred = mech_va + np.column_stack(h_val_cols) @ beta.T
                        else:
                            beta = np.zeros((m, 0))
                            train_pred = mech_tr
                            val_pred = mech_va
                        residual = y_t - train_pred
                        train_rmse = rmse(train_pred, y_t)
                        val_rmse = rmse(val_pred, y_v)
                        trace.rollback_count += k
                    trace.events.append(
                        TraceEvent("rollback", layer_no, removed=k, retained=len(acc))
                    )
                    break

        if len(acc) == 0:
            trace.events.append(TraceEvent("layer_deleted", layer_no))
            if none_found:
                # No candidate ever qualified for an empty layer: stop building.
                stop_reason = "no_candidate"
                break
            continue  # emptied by rollback: delete layer, advance

        # A failed search on a non-empty layer just closes the layer.
        layer_input = np.column_stack(acc.h_train)
        val_input = np.column_stack(acc.h_val)
        finished_layers.append(acc.to_layer(weight_mode))
        trace.events.append(TraceEvent("layer_advance", layer_no, retained=len(acc)))

    if not stop_reason:
        stop_reason = "error_tol" if train_rmse <= cfg.error_tol else "max_layers"
    trace.stop_reason = stop_reason
    trace.events.append(TraceEvent("stop", layer_no, detail=stop_reason))

    meta = {
        "algorithm": canonical_algorithm(kind),
        "weight_mode": weight_mode,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "format": "scm-forge",
    }
    model = ScmModel(mech, tuple(finished_layers), beta, norm, meta)
    return model, trace


def build_scm(
    train: Dataset,
    val: Dataset,
    cfg: BuilderConfig,
    mechanism: Mechanism = None,
    norm: NormParams | None = None,
    workers: int = 1,
    early_stop_source: str = "val",
) -> tuple[ScmModel, TrainingTrace]:
    """Full learner: supervisory search, linear/plug-in mechanism, deep
    layers, binary weights, early stopping with rollback."""
    return build_baseline(
        "scm", train, val, cfg,
        mechanism=mechanism, norm=norm, workers=workers,
        early_stop_source=early_stop_source,
    )
