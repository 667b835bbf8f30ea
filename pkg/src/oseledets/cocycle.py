"""
Matrix cocycles over invertible base maps.

Base points are chart coordinates in [0, 1)^k with the wraparound metric.
Every callable on points is vectorized: it takes an array of shape (B, k)
and returns one value (or one d x d matrix) per row.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import BadParams, NonFiniteMatrix, UnknownSystem

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0
OVERFLOW_LIMIT = 1e300

CAT = np.array([[2.0, 1.0], [1.0, 1.0]])
CAT_INV = np.array([[1.0, -1.0], [-1.0, 2.0]])
CAT_NORM = (3.0 + np.sqrt(5.0)) / 2.0


def torus_metric(x, y):
    """Flat metric on [0,1)^k with wraparound; broadcasts over leading axes."""
    diff = np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float)) % 1.0
    diff = np.minimum(diff, 1.0 - diff)
    return np.sqrt(np.sum(diff * diff, axis=-1))


def _as_batch(x, k):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    return np.atleast_2d(x).reshape(-1, k), single


@dataclass(frozen=True)
class BaseSystem:
    """Invertible Lipschitz map f on a chart of X, with metric and sampler.

    ``lipschitz_const`` bounds f and ``backward_lipschitz`` bounds f^-1.
    ``draw(rng, n)`` returns n points distributed according to mu.
    """

    state_dim: int
    forward: Callable
    backward: Callable
    metric: Callable
    lipschitz_const: float
    backward_lipschitz: float
    draw: Callable

    def inverse(self) -> "BaseSystem":
        return replace(
            self,
            forward=self.backward,
            backward=self.forward,
            lipschitz_const=self.backward_lipschitz,
            backward_lipschitz=self.lipschitz_const,
        )


@dataclass(frozen=True)
class Generator:
    """x -> A(x) with declared Hoelder data |A(x)-A(y)| <= C rho(x,y)^nu."""

    matrix_dim: int
    eval: Callable
    holder_const: float
    holder_exp: float


@dataclass(frozen=True)
class CocycleSystem:
    base: BaseSystem
    gen: Generator
    label: str
    seed: int = 0
    # JSON-able description, used for serialization and cache keys
    spec: dict = field(default_factory=dict, compare=False)
    adjoint_of: "CocycleSystem | None" = field(default=None, compare=False, repr=False)

    @property
    def d(self) -> int:
        return self.gen.matrix_dim

    @property
    def k(self) -> int:
        return self.base.state_dim

    def matrix(self, x) -> np.ndarray:
        return self.gen.eval(np.asarray(x, dtype=float).reshape(1, self.k))[0]

    def matrices(self, points) -> np.ndarray:
        """A(x) for each row of ``points``; shape (..., d, d)."""
        pts = np.asarray(points, dtype=float)
        lead = pts.shape[:-1]
        mats = self.gen.eval(pts.reshape(-1, self.k))
        return mats.reshape(*lead, self.d, self.d)

    def step(self, points, n: int = 1):
        """f^n applied to ``points`` (negative n uses the inverse map)."""
        pts = np.asarray(points, dtype=float)
        shape = pts.shape
        pts = pts.reshape(-1, self.k)
        fn = self.base.forward if n >= 0 else self.base.backward
        for _ in range(abs(n)):
            pts = fn(pts)
        return pts.reshape(shape)

    def sample(self, n: int, stream: int = 0) -> np.ndarray:
        """n mu-distributed points from the independent stream ``stream``."""
        ss = np.random.SeedSequence(self.seed, spawn_key=(stream,))
        return np.asarray(self.base.draw(np.random.default_rng(ss), n), dtype=float)

    def rho(self, x, y):
        return self.base.metric(x, y)

    def to_dict(self) -> dict:
        return dict(self.spec)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def orbit(sys: CocycleSystem, x, n_back: int = 0, n_fwd: int = 0) -> np.ndarray:
    """Points f^m(x) for m = -n_back..n_fwd, stacked along axis 0.

    ``x`` may be a single point (k,) or a batch (B, k); the result has shape
    (n_back + n_fwd + 1, k) or (n_back + n_fwd + 1, B, k) accordingly.
    """
    if n_back < 0 or n_fwd < 0:
        raise ValueError("n_back and n_fwd must be nonnegative")
    X, single = _as_batch(x, sys.k)
    out = np.empty((n_back + n_fwd + 1,) + X.shape)
    out[n_back] = X
    p = X
    for m in range(1, n_back + 1):
        p = sys.base.backward(p)
        out[n_back - m] = p
    p = X
    for m in range(1, n_fwd + 1):
        p = sys.base.forward(p)
        out[n_back + m] = p
    return out[:, 0] if single else out


def compose(sys: CocycleSystem, x, n: int) -> np.ndarray:
    """The cocycle A(x, n) = A(f^{n-1} x) ... A(f x) A(x)."""
    if n < 0:
        raise ValueError("n must be >= 0")
    x = np.asarray(x, dtype=float).reshape(1, sys.k)
    out = np.eye(sys.d)
    if n == 0:
        return out
    mats = sys.matrices(orbit(sys, x, 0, n - 1)[:, 0])
    for A in mats:
        with np.errstate(over="ignore", invalid="ignore"):
            out = A @ out
        if not np.all(np.isfinite(out)) or np.max(np.abs(out)) > OVERFLOW_LIMIT:
            raise NonFiniteMatrix("cocycle product overflowed; use the rescaled routines")
    return out


def adjoint_cocycle(sys: CocycleSystem) -> CocycleSystem:
    """Cocycle over f^-1 generated by x -> A(f^-1 x)^T."""
    if sys.adjoint_of is not None:
        return sys.adjoint_of
    back = sys.base.backward
    ev = sys.gen.eval

    def adj_eval(points):
        return np.swapaxes(ev(back(points)), -1, -2)

    gen = Generator(
        matrix_dim=sys.d,
        eval=adj_eval,
        holder_const=sys.gen.holder_const * sys.base.backward_lipschitz ** sys.gen.holder_exp,
        holder_exp=sys.gen.holder_exp,
    )
    spec = dict(sys.spec)
    spec["adjoint"] = not spec.get("adjoint", False)
    adj = CocycleSystem(
        base=sys.base.inverse(), gen=gen, label=f"adjoint({sys.label})",
        seed=sys.seed, spec=spec,
    )
    object.__setattr__(adj, "adjoint_of", sys)
    return adj


# --- built-in systems ----------------------------------------------------


def _point_base():
    ident = lambda p: np.array(p, dtype=float)  # noqa: E731
    return BaseSystem(
        state_dim=1,
        forward=ident,
        backward=ident,
        metric=torus_metric,
        lipschitz_const=1.0,
        backward_lipschitz=1.0,
        draw=lambda rng, n: np.zeros((n, 1)),
    )


def _rotation_base(alpha):
    return BaseSystem(
        state_dim=1,
        forward=lambda p: (p + alpha) % 1.0,
        backward=lambda p: (p - alpha) % 1.0,
        metric=torus_metric,
        lipschitz_const=1.0,
        backward_lipschitz=1.0,
        draw=lambda rng, n: rng.random((n, 1)),
    )


def _cat_base():
    return BaseSystem(
        state_dim=2,
        forward=lambda p: (p @ CAT.T) % 1.0,
        backward=lambda p: (p @ CAT_INV.T) % 1.0,
        metric=torus_metric,
        lipschitz_const=CAT_NORM,
        backward_lipschitz=CAT_NORM,
        draw=lambda rng, n: rng.random((n, 2)),
    )


def parse_matrix(text) -> np.ndarray:
    """Parse ``"2,0;0,0.5"`` (rows split by ';') or a nested list."""
    if isinstance(text, str):
        try:
            rows = [[float(v) for v in row.split(",")] for row in text.split(";")]
        except ValueError as exc:
            raise BadParams(f"cannot parse matrix {text!r}") from exc
    else:
        rows = text
    try:
        A = np.array(rows, dtype=float)
    except (TypeError, ValueError) as exc:
        raise BadParams(f"cannot parse matrix {text!r}") from exc
    if A.ndim != 2 or A.shape[0] != A.shape[1] or not np.all(np.isfinite(A)):
        raise BadParams("A must be a finite square matrix")
    return A


def log_mean_sin(offset, amplitude):
    """Closed form of the integral of log(offset + amplitude sin 2 pi x) over [0,1]."""
    return np.log((offset + np.sqrt(offset**2 - amplitude**2)) / 2.0)


def _constant(params):
    A = parse_matrix(params.get("A", [[2.0, 0.0], [0.0, 0.5]]))
    d = A.shape[0]

    def ev(points):
        return np.broadcast_to(A, (len(points), d, d)).copy()

    return _point_base(), Generator(d, ev, holder_const=1.0, holder_exp=1.0)


def _rotation_triangular(params):
    alpha = float(params.get("alpha", GOLDEN))
    sa, sb = 1.0, 1.0
    if "diag_scale" in params:
        sa, sb = (float(v) for v in params["diag_scale"])
    if "target_rates" in params:
        lo, hi = (float(v) for v in params["target_rates"])
        sa = np.exp(hi - log_mean_sin(1.5, 0.4))
        sb = np.exp(lo - log_mean_sin(0.5, 0.1))
    if sa <= 0 or sb <= 0:
        raise BadParams("diagonal scales must be positive")

    def ev(points):
        t = 2 * np.pi * points[:, 0]
        out = np.zeros((len(points), 2, 2))
        out[:, 0, 0] = sa * (1.5 + 0.4 * np.sin(t))
        out[:, 1, 1] = sb * (0.5 + 0.1 * np.cos(t))
        out[:, 0, 1] = 0.3 * np.cos(t)
        return out

    C = 2 * np.pi * np.sqrt((0.4 * sa) ** 2 + (0.1 * sb) ** 2 + 0.3**2)
    return _rotation_base(alpha), Generator(2, ev, holder_const=C, holder_exp=1.0)


def _rotation_stochastic(params):
    alpha = float(params.get("alpha", GOLDEN))

    def ev(points):
        t = 2 * np.pi * points[:, 0]
        p = 0.25 + 0.2 * np.sin(t)
        q = 0.35 + 0.2 * np.cos(t)
        out = np.empty((len(points), 2, 2))
        out[:, 0, 0] = 1 - p
        out[:, 1, 0] = p
        out[:, 0, 1] = q
        out[:, 1, 1] = 1 - q
        return out

    return _rotation_base(alpha), Generator(2, ev, holder_const=0.8 * np.pi, holder_exp=1.0)


def _cat_rank_deficient(params):
    amp = float(params.get("angle_amp", 0.5))

    def ev(points):
        th = amp * np.sin(2 * np.pi * points[:, 0])
        r = np.stack([np.cos(th), np.sin(th)], axis=-1)
        return 2.0 * r[:, :, None] * r[:, None, :]

    return _cat_base(), Generator(2, ev, holder_const=4 * np.pi * abs(amp), holder_exp=1.0)


# (a, b) frequency pairs of the perturbation entries; odd slots use cos
_GENERIC_FREQ = [
    [(1, 0), (0, 1), (1, 1)],
    [(1, -1), (0, 1), (1, 0)],
    [(1, 2), (2, 1), (1, -1)],
]


def _cat_generic(params):
    eps = float(params.get("perturbation", 0.1))
    diag = np.diag([2.0, 1.0, 0.5])

    def ev(points):
        u, v = points[:, 0], points[:, 1]
        out = np.broadcast_to(diag, (len(points), 3, 3)).copy()
        for i in range(3):
            for j in range(3):
                a, b = _GENERIC_FREQ[i][j]
                phase = 2 * np.pi * (a * u + b * v)
                out[:, i, j] += eps * (np.sin(phase) if (i + j) % 2 == 0 else np.cos(phase))
        return out

    freq_sq = sum(a * a + b * b for row in _GENERIC_FREQ for a, b in row)
    C = abs(eps) * 2 * np.pi * np.sqrt(freq_sq)
    return _cat_base(), Generator(3, ev, holder_const=C, holder_exp=1.0)


BUILTINS = {
    "constant": (_constant, {"A"}),
    "rotation_triangular": (_rotation_triangular, {"alpha", "diag_scale", "target_rates"}),
    "rotation_stochastic": (_rotation_stochastic, {"alpha"}),
    "cat_rank_deficient": (_cat_rank_deficient, {"angle_amp"}),
    "cat_generic": (_cat_generic, {"perturbation"}),
}


def _jsonable(params):
    out = {}
    for key, val in params.items():
        if isinstance(val, np.ndarray):
            val = val.tolist()
        elif isinstance(val, tuple):
            val = list(val)
        out[key] = val
    return out


def make_builtin(name: str, params: dict | None = None, seed: int = 0) -> CocycleSystem:
    """Construct one of the built-in cocycles by name."""
    try:
        factory, allowed = BUILTINS[name]
    except KeyError:
        raise UnknownSystem(f"unknown system {name!r}; choose from {sorted(BUILTINS)}") from None
    params = dict(params or {})
    unknown = set(params) - allowed
    if unknown:
        raise BadParams(f"unknown parameters for {name}: {sorted(unknown)}")
    try:
        base, gen = factory(params)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, BadParams):
            raise
        raise BadParams(str(exc)) from exc
    spec = {"name": name, "params": _jsonable(params), "seed": int(seed)}
    return CocycleSystem(base=base, gen=gen, label=name, seed=int(seed), spec=spec)


def system_from_dict(doc: dict) -> CocycleSystem:
    if not isinstance(doc, dict) or "name" not in doc:
        raise BadParams("system document needs a 'name' key")
    sys = make_builtin(doc["name"], doc.get("params") or {}, int(doc.get("seed", 0)))
    return adjoint_cocycle(sys) if doc.get("adjoint") else sys


def log_norm_mean(sys: CocycleSystem, n: int = 10_000, stream: int = 0) -> float:
    """Monte Carlo mean of log+ |A(x)| over mu (integrability proxy)."""
    mats = sys.matrices(sys.sample(n, stream))
    norms = np.linalg.norm(mats, 2, axis=(-2, -1))
    return float(np.mean(np.log(np.maximum(norms, 1.0))))
