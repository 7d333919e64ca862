"""Fitting, prediction and persistence of single-quantile GP models.

Hyperparameters (log lengthscales, log amplitude, log ALD scale) are
chosen by minimizing ``-log Z_EP`` with multi-restart Nelder-Mead, on
standardized data.  Predictions are reported in the original units.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize
from scipy.spatial.distance import cdist

from .ald import ALDParams
from .datagen import Dataset, Standardizer, destandardize, philox, standardize
from .ep import EPConfig, EPState, Sites, posterior_from_sites, run_ep
from .errors import (
    CorruptModelError,
    DegenerateDataError,
    FitFailureError,
    InvalidArgumentError,
    NotFittedError,
    QGPError,
)
from .kernel import KernelParams, covariance, covariance_with_jitter

__all__ = ["OptConfig", "QuantileModel", "Objective", "build_model", "fit", "predict", "save", "load"]

FORMAT_NAME = "qgpep-model"
FORMAT_VERSION = 1

# Box on the log-parameters (standardized units); the objective is +inf outside.
_LOG_BOUND = 8.0
_WARM_RADIUS = 0.1
# Edge of the starting simplex in log-parameter units; scipy's default (5% of each
# coordinate) is tiny near log 0 and roughly doubles the evaluation count.
_SIMPLEX_STEP = 0.5


@dataclass(frozen=True)
class OptConfig:
    restarts: int = 5
    max_evals: int = 500
    lengthscale_range: tuple = (0.05, 5.0)  # multiples of each input's range
    amplitude_range: tuple = (0.1, 10.0)    # multiples of std(y)
    sigma_range: tuple = (0.01, 1.0)        # multiples of std(y)
    sigma_floor: float = 1e-3               # multiple of std(y)
    seed: int = 0
    tol: float = 1e-5
    warm_start: bool = True

    def __post_init__(self):
        if not (isinstance(self.restarts, int) and self.restarts >= 1):
            raise InvalidArgumentError(f"restarts must be a positive integer, got {self.restarts}")
        if not self.max_evals >= 1:
            raise InvalidArgumentError(f"max_evals must be positive, got {self.max_evals}")
        for name in ("lengthscale_range", "amplitude_range", "sigma_range"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise InvalidArgumentError(f"{name} must satisfy 0 < lo <= hi, got {(lo, hi)}")
        if not self.sigma_floor > 0 or not self.tol > 0:
            raise InvalidArgumentError("sigma_floor and tol must be positive")


@dataclass
class QuantileModel:
    """A fitted model; everything is stored in standardized units except ``standardizer``."""

    tau: float
    kernel_params: KernelParams
    ald_sigma: float
    X_train: np.ndarray
    y_train: np.ndarray
    ep_state: EPState
    standardizer: Standardizer
    columns: tuple = ()
    fit_report: dict = field(default_factory=dict)
    jitter: float = 0.0

    def __post_init__(self):
        ALDParams(self.tau, self.ald_sigma)
        self._cache = None

    @property
    def dim(self):
        return self.X_train.shape[1]

    def _predictor(self):
        if self._cache is None:
            K, _ = self._cross(self.X_train)
            sites = self.ep_state.sites
            sw = np.sqrt(sites.tau)
            B = np.eye(K.shape[0]) + sw[:, None] * K * sw[None, :]
            L = linalg.cholesky(B, lower=True)
            # (K + Sigma_sites)^-1 mu_sites = nu - S^1/2 B^-1 S^1/2 K nu
            alpha = sites.nu - sw * linalg.cho_solve((L, True), sw * (K @ sites.nu))
            self._cache = (L, sw, alpha)
        return self._cache

    def _cross(self, Xs):
        # the jitter acts as a nugget: it applies wherever a test input equals a training input
        Ks = covariance(Xs, self.X_train, self.kernel_params)
        hit = np.zeros(Ks.shape, dtype=bool)
        if self.jitter:
            hit = cdist(Xs, self.X_train, "sqeuclidean") == 0.0
            Ks[hit] += self.jitter * self.kernel_params.amplitude**2
        return Ks, hit

    def predict_standardized(self, Xs):
        """Latent quantile mean and variance at already-standardized inputs."""
        L, sw, alpha = self._predictor()
        Xs = np.asarray(Xs, dtype=float)
        Ks, hit = self._cross(Xs)
        mean = Ks @ alpha
        V = linalg.solve_triangular(L, (sw[:, None] * Ks.T), lower=True)
        prior_var = self.kernel_params.amplitude**2 * (1.0 + self.jitter * hit.any(axis=1))
        var = prior_var - np.einsum("ij,ij->j", V, V)
        return mean, var


def _check_fitted(model):
    if not isinstance(model, QuantileModel) or model.ep_state is None:
        raise NotFittedError("model is not fitted")


def predict(model: QuantileModel, X_star):
    """Predictive mean and variance of the latent quantile, in original units."""
    _check_fitted(model)
    X_star = np.asarray(X_star, dtype=float)
    if X_star.ndim == 1:
        X_star = X_star[:, None] if model.dim == 1 else X_star[None, :]
    if X_star.ndim != 2 or X_star.shape[1] != model.dim:
        raise InvalidArgumentError(
            f"model expects {model.dim} input column(s), got array of shape {X_star.shape}")
    mean, var = model.predict_standardized(model.standardizer.transform_inputs(X_star))
    return destandardize(mean, model.standardizer, "y"), destandardize(var, model.standardizer, "y_var")


# ----------------------------------------------------------------------------
# objective and fitting
# ----------------------------------------------------------------------------

class Objective:
    """``theta -> -log Z_EP`` on standardized data, with optional EP warm starts.

    ``theta = [log lengthscales..., log amplitude, log sigma]``.  Returns
    ``inf`` outside the parameter box, below the sigma floor, or when EP
    fails.  With warm starts the value matches a cold evaluation only up
    to the EP tolerance.
    """

    def __init__(self, X, y, tau, ep_config=None, sigma_floor=1e-3, warm_start=True):
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.tau = tau
        self.ep_config = ep_config or EPConfig()
        self.log_sigma_floor = math.log(sigma_floor)
        self.warm_start = warm_start
        self.n_evals = 0
        self.n_failures = 0
        self._last = None

    def unpack(self, theta):
        theta = np.asarray(theta, dtype=float)
        return KernelParams(theta[:-2], theta[-2]), float(np.exp(theta[-1]))

    def in_domain(self, theta):
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(np.abs(theta[:-1]) <= _LOG_BOUND)
                    and self.log_sigma_floor <= theta[-1] <= _LOG_BOUND)

    def state(self, theta, init_sites=None) -> EPState:
        return self.state_and_jitter(theta, init_sites)[0]

    def state_and_jitter(self, theta, init_sites=None):
        kp, sigma = self.unpack(theta)
        K, j = covariance_with_jitter(self.X, kp, self.ep_config.jitter, return_jitter=True)
        return run_ep(K, self.y, ALDParams(self.tau, sigma), self.ep_config, init_sites=init_sites), j

    def __call__(self, theta):
        self.n_evals += 1
        theta = np.asarray(theta, dtype=float)
        if not self.in_domain(theta):
            return math.inf
        init = None
        if self.warm_start and self._last is not None:
            prev_theta, prev_sites = self._last
            if np.max(np.abs(theta - prev_theta)) < _WARM_RADIUS:
                init = prev_sites
        try:
            st = self.state(theta, init)
        except QGPError:
            self.n_failures += 1
            return math.inf
        if self.warm_start:
            self._last = (theta.copy(), st.sites)
        return -st.log_z_ep


def _initial_theta(rng, Xs, cfg: OptConfig):
    span = Xs.max(axis=0) - Xs.min(axis=0)

    def logu(lo, hi, size=None):
        return rng.uniform(math.log(lo), math.log(hi), size)

    log_ls = np.log(span) + logu(*cfg.lengthscale_range, size=span.size)
    return np.concatenate([log_ls, [logu(*cfg.amplitude_range), logu(*cfg.sigma_range)]])


def build_model(data: Dataset, tau: float, kernel_params: KernelParams, ald_sigma: float,
                ep_config: EPConfig | None = None) -> QuantileModel:
    """Model at fixed hyperparameters: standardize ``data``, run EP from scratch, package.

    ``kernel_params`` and ``ald_sigma`` are in standardized units.
    """
    ep_config = ep_config or EPConfig()
    std_data, st = standardize(data)
    K, jitter = covariance_with_jitter(std_data.X, kernel_params, ep_config.jitter, return_jitter=True)
    state = run_ep(K, std_data.y, ALDParams(tau, ald_sigma), ep_config)
    return QuantileModel(tau=float(tau), kernel_params=kernel_params, ald_sigma=float(ald_sigma),
                         X_train=std_data.X, y_train=std_data.y, ep_state=state, standardizer=st,
                         columns=data.columns, jitter=jitter)


def fit(data: Dataset, tau: float, opt_config: OptConfig | None = None,
        ep_config: EPConfig | None = None) -> QuantileModel:
    """Fit a tau-quantile model by maximizing EP's expected-utility estimate."""
    cfg = opt_config or OptConfig()
    ep_config = ep_config or EPConfig()
    ALDParams(tau, 1.0)
    if data.n < 5:
        raise DegenerateDataError(f"fit needs at least 5 rows, got {data.n}")
    std_data, st = standardize(data)
    Xs, ys = std_data.X, std_data.y

    rng = philox(cfg.seed, stream=3)
    starts = [_initial_theta(rng, Xs, cfg) for _ in range(cfg.restarts)]
    trace = []
    for r, x0 in enumerate(starts):
        obj = Objective(Xs, ys, tau, ep_config, cfg.sigma_floor, cfg.warm_start)
        # keep the starting point inside the feasible box
        x0 = np.clip(x0, -_LOG_BOUND + 1e-9, _LOG_BOUND - 1e-9)
        x0[-1] = max(x0[-1], obj.log_sigma_floor + 1e-9)
        simplex = np.vstack([x0, x0 + _SIMPLEX_STEP * np.eye(x0.size)])
        res = optimize.minimize(obj, x0, method="Nelder-Mead",
                                options={"maxfev": cfg.max_evals, "xatol": 1e-3, "fatol": cfg.tol,
                                         "initial_simplex": simplex})
        trace.append({"restart": r, "x0": x0.tolist(), "theta": np.asarray(res.x).tolist(),
                      "objective": float(res.fun), "evals": obj.n_evals, "ep_failures": obj.n_failures,
                      "optimizer_success": bool(res.success), "message": str(res.message)})

    order = sorted(range(len(trace)), key=lambda i: trace[i]["objective"])
    diagnostics = []
    for i in order:
        t = trace[i]
        if not math.isfinite(t["objective"]):
            diagnostics.append((i, "non-finite objective"))
            continue
        kp, sigma = Objective(Xs, ys, tau).unpack(t["theta"])
        try:
            model = build_model(data, tau, kp, sigma, ep_config)
        except QGPError as exc:
            diagnostics.append((i, f"EP failed at optimum: {exc}"))
            continue
        if not model.ep_state.converged:
            diagnostics.append((i, f"EP unconverged after {model.ep_state.sweeps} sweeps"))
            continue
        model.fit_report = {"objective": -model.ep_state.log_z_ep, "chosen_restart": i, "restarts": trace,
                            "rejected": [{"restart": j, "reason": why} for j, why in diagnostics]}
        return model
    raise FitFailureError(f"no restart produced a converged EP state (tau={tau})", diagnostics)


# ----------------------------------------------------------------------------
# persistence
# ----------------------------------------------------------------------------

def _payload(model: QuantileModel):
    s = model.ep_state
    return {
        "tau": model.tau,
        "kernel_params": {"log_lengthscales": model.kernel_params.log_lengthscales.tolist(),
                          "log_amplitude": model.kernel_params.log_amplitude},
        "ald_sigma": model.ald_sigma,
        "columns": list(model.columns),
        "X_train": model.X_train.tolist(),
        "y_train": model.y_train.tolist(),
        "standardizer": model.standardizer.to_dict(),
        "ep_state": {"sites": {"log_c": s.sites.log_c.tolist(), "tau": s.sites.tau.tolist(),
                               "nu": s.sites.nu.tolist()},
                     "post_mean": s.post_mean.tolist(), "post_cov": s.post_cov.tolist(),
                     "log_z_ep": s.log_z_ep, "sweeps": s.sweeps, "converged": s.converged,
                     "skipped": s.skipped, "clamped": s.clamped},
        "fit_report": model.fit_report,
        "jitter": model.jitter,
    }


def _digest(payload_text):
    return hashlib.sha256(payload_text.encode("utf-8")).hexdigest()


def save(model: QuantileModel) -> bytes:
    """Serialize to versioned, checksummed JSON (floats written round-trip exact)."""
    _check_fitted(model)
    text = json.dumps(_payload(model), sort_keys=True, allow_nan=True)
    doc = {"format": FORMAT_NAME, "version": FORMAT_VERSION, "sha256": _digest(text), "payload": text}
    return (json.dumps(doc, indent=1) + "\n").encode("utf-8")


def load(blob: bytes) -> QuantileModel:
    """Inverse of :func:`save`; raises :class:`CorruptModelError` on any mismatch."""
    try:
        doc = json.loads(blob.decode("utf-8") if isinstance(blob, (bytes, bytearray)) else blob)
        fmt, version, digest, text = doc["format"], doc["version"], doc["sha256"], doc["payload"]
    except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
        raise CorruptModelError(f"unreadable model file: {exc}") from exc
    if fmt != FORMAT_NAME or version != FORMAT_VERSION:
        raise CorruptModelError(f"unsupported model format {fmt!r} version {version!r}")
    if _digest(text) != digest:
        raise CorruptModelError("model checksum mismatch")
    p = json.loads(text)
    e = p["ep_state"]
    sites = Sites(*(np.asarray(e["sites"][k], dtype=float) for k in ("log_c", "tau", "nu")))
    ep_state = EPState(sites=sites, post_mean=np.asarray(e["post_mean"]), post_cov=np.asarray(e["post_cov"]),
                       log_z_ep=e["log_z_ep"], sweeps=e["sweeps"], converged=e["converged"],
                       skipped=e["skipped"], clamped=e["clamped"])
    kp = p["kernel_params"]
    return QuantileModel(
        tau=p["tau"],
        kernel_params=KernelParams(np.asarray(kp["log_lengthscales"]), kp["log_amplitude"]),
        ald_sigma=p["ald_sigma"],
        X_train=np.asarray(p["X_train"], dtype=float).reshape(len(p["y_train"]), -1),
        y_train=np.asarray(p["y_train"], dtype=float),
        ep_state=ep_state,
        standardizer=Standardizer.from_dict(p["standardizer"]),
        columns=tuple(p["columns"]),
        fit_report=p["fit_report"],
        jitter=p["jitter"],
    )


def refit_state(model: QuantileModel, ep_config: EPConfig | None = None) -> EPState:
    """Re-run EP from scratch at the model's hyperparameters."""
    K = covariance(model.X_train, model.X_train, model.kernel_params)
    K[np.diag_indices_from(K)] += model.jitter * model.kernel_params.amplitude**2
    return run_ep(K, model.y_train, ALDParams(model.tau, model.ald_sigma), ep_config)


def posterior_check(model: QuantileModel):
    """Max deviation between the stored posterior and one rebuilt from the sites."""
    K = covariance(model.X_train, model.X_train, model.kernel_params)
    K[np.diag_indices_from(K)] += model.jitter * model.kernel_params.amplitude**2
    mean, cov = posterior_from_sites(K, model.ep_state.sites)
    return float(max(np.abs(mean - model.ep_state.post_mean).max(), np.abs(cov - model.ep_state.post_cov).max()))
