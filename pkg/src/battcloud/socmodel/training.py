"""Levenberg-Marquardt training and evaluation of the SOC network."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .network import FullChargeRule, Normalization, SocError, SocNetwork, WindowConfig

log = logging.getLogger(__name__)


class TrainingError(SocError):
    pass


@dataclass(frozen=True)
class SplitConfig:
    train: float = 0.70
    val: float = 0.15
    test: float = 0.15
    seed: int = 0

    def __post_init__(self):
        if min(self.train, self.val, self.test) < 0 or abs(self.train + self.val + self.test - 1.0) > 1e-9:
            raise SocError("split fractions must be non-negative and sum to 1")

    def indices(self, n: int):
        perm = np.random.default_rng(self.seed).permutation(n)
        n_tr = int(round(self.train * n))
        n_va = int(round(self.val * n))
        return perm[:n_tr], perm[n_tr:n_tr + n_va], perm[n_tr + n_va:]


@dataclass(frozen=True)
class LMConfig:
    hidden: tuple = (12, 8)
    activation: str = "tanh"
    damping0: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 10.0
    damping_max: float = 1e10
    max_iter: int = 300
    patience: int = 10
    min_rel_improvement: float = 0.0
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict | None) -> "LMConfig":
        d = dict(d or {})
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)


@dataclass
class TrainReport:
    rmse_train: float | None
    rmse_val: float | None
    rmse_test: float | None
    max_abs_error_test: float | None
    within_5_test: float | None = None
    epochs: int = 0
    final_damping: float | None = None
    seed: int | None = None
    loss_history: list = field(default_factory=list)  # training SSE after each accepted step

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


def lm_step(jac: np.ndarray, resid: np.ndarray, damping: float) -> np.ndarray:
    """Solve ``(J^T J + damping I) delta = -J^T r``."""
    a = jac.T @ jac
    a[np.diag_indices_from(a)] += damping
    g = jac.T @ resid
    try:
        return -np.linalg.solve(a, g)
    except np.linalg.LinAlgError:
        return None


def _errors(pred, y):
    e = np.abs(pred - y)
    return float(np.sqrt(np.mean(e ** 2))), float(e.max()), float(np.mean(e <= 5.0))


def levenberg_marquardt(net: SocNetwork, x, yn, x_val=None, yn_val=None, config: LMConfig | None = None):
    """Fit ``net`` in place on normalized targets ``yn``.

    Returns (best_params, accepted losses, iterations, final damping). With a
    validation set, training stops after ``patience`` accepted steps without
    a validation improvement and the best-on-validation parameters win.
    """
    config = config or LMConfig()
    theta = net.get_params()
    r = net.raw_output(x) - yn
    loss = float(r @ r)
    losses = [loss]
    mu = config.damping0
    best = theta.copy()
    best_val = np.inf
    if x_val is not None and len(x_val):
        rv = net.raw_output(x_val) - yn_val
        best_val = float(rv @ rv)
    stale = 0
    it = 0
    while it < config.max_iter and mu <= config.damping_max:
        it += 1
        jac = net.jacobian(x)
        while mu <= config.damping_max:
            delta = lm_step(jac, r, mu)
            if delta is None or not np.all(np.isfinite(delta)):
                mu *= config.damping_up
                continue
            net.set_params(theta + delta)
            r_new = net.raw_output(x) - yn
            new_loss = float(r_new @ r_new)
            if np.isfinite(new_loss) and new_loss < loss:
                theta, r, loss = theta + delta, r_new, new_loss
                mu /= config.damping_down
                losses.append(loss)
                break
            mu *= config.damping_up
        else:
            net.set_params(theta)
            break
        if x_val is not None and len(x_val):
            rv = net.raw_output(x_val) - yn_val
            val = float(rv @ rv)
            if val < best_val * (1.0 - config.min_rel_improvement):
                best_val, best, stale = val, theta.copy(), 0
            else:
                stale += 1
                if stale >= config.patience:
                    break
        else:
            best = theta.copy()
    if mu > config.damping_max and len(losses) == 1:
        raise TrainingError("no step accepted before damping limit; normal equations are singular")
    net.set_params(best)
    return best, losses, it, mu


def train(x, y, split: SplitConfig | None = None, lm: LMConfig | None = None,
          window: WindowConfig | None = None, full_charge: FullChargeRule | None = None):
    """Train a SOC network on raw feature rows ``x`` and SOC targets ``y`` (percent).

    Input and target scaling are fitted on the training split and stored in
    the network, so callers always pass raw physical features.
    """
    split = split or SplitConfig()
    lm = lm or LMConfig()
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if x.ndim != 2 or len(x) != len(y) or len(y) == 0:
        raise SocError("need a 2-D feature array with one target per row")
    if np.any((y < 0) | (y > 100)) or not np.all(np.isfinite(x)):
        raise SocError("targets must lie in [0, 100] and features must be finite")
    sizes = (x.shape[1],) + tuple(lm.hidden) + (1,)
    itr, iva, ite = split.indices(len(y))
    norm = Normalization.fit(x[itr])
    offset = float(np.mean(y[itr]))
    scale = float(np.std(y[itr])) or 1.0
    rng = np.random.default_rng(lm.seed)
    acts = (lm.activation,) * (len(sizes) - 2) + ("linear",)
    net = SocNetwork.initialize(sizes, rng, acts, normalization=norm,
                                window=window or WindowConfig(), target_offset=offset, target_scale=scale,
                                full_charge=full_charge or FullChargeRule())
    if len(itr) < 10 * net.n_params:
        log.warning("only %d training rows for %d parameters", len(itr), net.n_params)
    yn = (y - offset) / scale
    _, losses, iters, mu = levenberg_marquardt(net, x[itr], yn[itr], x[iva], yn[iva], lm)
    rep = TrainReport(None, None, None, None, epochs=iters, final_damping=mu, seed=lm.seed,
                      loss_history=losses)
    for name, idx in (("train", itr), ("val", iva), ("test", ite)):
        if len(idx):
            rmse, mx, w5 = _errors(net.predict_batch(x[idx]), y[idx])
            setattr(rep, f"rmse_{name}", rmse)
            if name == "test":
                rep.max_abs_error_test, rep.within_5_test = mx, w5
    return net, rep


def evaluate(network: SocNetwork, x, y) -> TrainReport:
    """RMSE, max error and share within 5 points of the full prediction pipeline."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if len(y) == 0:
        raise SocError("empty evaluation set")
    rmse, mx, w5 = _errors(network.predict_batch(x), y)
    return TrainReport(None, None, rmse, mx, w5)
