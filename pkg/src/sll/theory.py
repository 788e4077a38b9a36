"""Exact checks of the layer-wise ELBO bound on small discrete hierarchies.

A hierarchy has a fixed input state ``x`` and label ``y`` and, for each layer
``i = 1..L``, row-stochastic tables

* ``p_trans[i][a, b] = p(h_i = b | h_{i-1} = a)`` (generative prior),
* ``q_trans[i][a, b] = q(h_i = b | h_{i-1} = a)`` (inference factor),
* ``likelihood[i][b, c] = p(y = c | h_i = b)`` (per-layer readout).

Two code paths compute the same quantities: :func:`global_elbo` sums over every
joint assignment of ``(h_1, ..., h_L)``, while :func:`layer_terms` propagates
marginals layer by layer. The identity tests compare the two.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidInputError

MAX_LAYERS = 4
MAX_STATES = 6


@dataclass
class DiscreteHierarchy:
    p_trans: list
    q_trans: list
    likelihood: list
    x: int = 0
    y: int = 0

    def __post_init__(self):
        self.p_trans = [np.asarray(t, dtype=float) for t in self.p_trans]
        self.q_trans = [np.asarray(t, dtype=float) for t in self.q_trans]
        self.likelihood = [np.asarray(t, dtype=float) for t in self.likelihood]
        L = len(self.p_trans)
        if not (1 <= L <= MAX_LAYERS) or len(self.q_trans) != L or len(self.likelihood) != L:
            raise InvalidInputError(f"need 1..{MAX_LAYERS} layers with matching p, q and "
                                    "likelihood tables")
        for name, tables in (("p", self.p_trans), ("q", self.q_trans),
                             ("likelihood", self.likelihood)):
            for i, t in enumerate(tables):
                if t.ndim != 2 or np.any(t < 0) or not np.allclose(t.sum(axis=1), 1.0,
                                                                    atol=1e-12, rtol=0):
                    raise InvalidInputError(f"{name} table {i + 1} is not row-stochastic")
        for i in range(L):
            if self.p_trans[i].shape != self.q_trans[i].shape:
                raise InvalidInputError(f"p and q tables of layer {i + 1} differ in shape")
            if i and self.p_trans[i].shape[0] != self.p_trans[i - 1].shape[1]:
                raise InvalidInputError(f"layer {i + 1} input size does not match layer {i}")
            if self.likelihood[i].shape[0] != self.p_trans[i].shape[1]:
                raise InvalidInputError(f"readout of layer {i + 1} has wrong state count")
            if self.p_trans[i].shape[1] > MAX_STATES:
                raise InvalidInputError(f"at most {MAX_STATES} states per layer")

    @property
    def L(self) -> int:
        return len(self.p_trans)

    @property
    def state_sizes(self) -> list[int]:
        return [t.shape[1] for t in self.p_trans]


def _xlogy_ratio(q: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Elementwise ``q log(q/p)`` with ``0 log 0 = 0`` and ``+inf`` where
    ``q > 0 = p``."""
    out = np.zeros_like(q)
    nz = q > 0
    with np.errstate(divide="ignore"):
        out[nz] = q[nz] * (np.log(q[nz]) - np.log(p[nz]))
    return out


def _row_kl(q: np.ndarray, p: np.ndarray) -> np.ndarray:
    return _xlogy_ratio(q, p).sum(axis=1)


def _log(x):
    with np.errstate(divide="ignore"):
        return np.log(x)


def global_elbo(h: DiscreteHierarchy) -> float:
    """``E_q[log p(y|h_L)] - sum_i E_q[KL(q(.|h_{i-1}) || p(.|h_{i-1}))]`` by
    brute-force enumeration of the joint ``q``. Returns ``-inf`` when some ``q``
    puts mass where ``p`` has none."""
    kls = [_row_kl(q, p) for q, p in zip(h.q_trans, h.p_trans)]
    total = 0.0
    for states in itertools.product(*(range(n) for n in h.state_sizes)):
        prev = h.x
        weight = 1.0
        kl_sum = 0.0
        for i, s in enumerate(states):
            kl_sum += kls[i][prev]
            weight *= h.q_trans[i][prev, s]
            prev = s
        if weight == 0.0:
            continue
        total += weight * (_log(h.likelihood[-1][states[-1], h.y]) - kl_sum)
    return float(total)


@dataclass(frozen=True)
class LayerTerms:
    A: np.ndarray
    K: np.ndarray

    @property
    def elbos(self) -> np.ndarray:
        return self.A - self.K


def layer_terms(h: DiscreteHierarchy) -> LayerTerms:
    """Expected log-likelihood ``A_i`` under the marginal ``q(h_i)`` and expected
    conditional KL ``K_i`` under ``q(h_{i-1})``, via forward marginals."""
    m = np.zeros(h.p_trans[0].shape[0])
    m[h.x] = 1.0
    A, K = [], []
    for q, p, lik in zip(h.q_trans, h.p_trans, h.likelihood):
        rk = _row_kl(q, p)
        K.append(float(np.sum(m[m > 0] * rk[m > 0])))
        m = m @ q
        ll = _log(lik[:, h.y])
        A.append(float(np.sum(m[m > 0] * ll[m > 0])))
    return LayerTerms(np.array(A), np.array(K))


def layer_elbos(h: DiscreteHierarchy) -> np.ndarray:
    return layer_terms(h).elbos


@dataclass(frozen=True)
class AssumptionReport:
    monotone_gain: bool
    kl_budget: bool
    gain_margin: float
    budget_margin: float


def check_assumptions(h: DiscreteHierarchy, tol: float = 1e-12) -> AssumptionReport:
    """Monotone predictive gain (``A_i <= A_L``) and the KL budget
    ``(L-1)/L sum K_i <= 1/L sum (A_L - A_i)``. Margins are the slacks; a
    negative margin marks a violation."""
    t = layer_terms(h)
    L = h.L
    gains = t.A[-1] - t.A
    gain_margin = float(np.min(gains)) if np.all(np.isfinite(gains)) else -np.inf
    budget = (L - 1) / L * np.sum(t.K)
    gain = np.sum(gains) / L
    budget_margin = float(gain - budget) if np.isfinite(gain - budget) else -np.inf
    return AssumptionReport(gain_margin >= -tol, budget_margin >= -tol, gain_margin, budget_margin)


@dataclass(frozen=True)
class BoundReport:
    holds: bool
    lhs: float
    rhs: float
    slack: float
    identity_residual: float
    asserted: bool


def verify_layerwise_bound(h: DiscreteHierarchy, tol: float = 1e-9) -> BoundReport:
    """Compare the mean of the layer-wise objectives with the enumerated global
    objective. ``asserted`` is True when both assumptions hold, in which case
    ``holds`` must be True. The identity residual compares
    ``mean(E_i) - E_NN`` with ``-(1/L) sum (A_L - A_i) + (L-1)/L sum K_i`` and
    should vanish for every model."""
    t = layer_terms(h)
    L = h.L
    lhs = float(np.mean(t.elbos))
    rhs = global_elbo(h)
    predicted = -np.sum(t.A[-1] - t.A) / L + (L - 1) / L * np.sum(t.K)
    with np.errstate(invalid="ignore"):
        residual = float(abs((lhs - rhs) - predicted))
    if not np.isfinite(residual) and not np.isfinite(lhs) and not np.isfinite(rhs):
        residual = float("nan")
    a = check_assumptions(h)
    return BoundReport(bool(lhs <= rhs + tol), lhs, rhs, float(rhs - lhs), residual,
                         a.monotone_gain and a.kl_budget)


def random_hierarchy(rng: np.random.Generator, L: int | None = None,
                     state_sizes=None, n_labels: int | None = None,
                     concentration: float = 1.0) -> DiscreteHierarchy:
    """Tables with Dirichlet rows; sizes are drawn when not given."""
    if L is None:
        L = int(rng.integers(1, MAX_LAYERS + 1))
    if state_sizes is None:
        state_sizes = [int(s) for s in rng.integers(2, MAX_STATES + 1, size=L)]
    if n_labels is None:
        n_labels = int(rng.integers(2, 5))
    n_in = int(rng.integers(1, 4))
    sizes = [n_in] + list(state_sizes)

    def table(r, c, alpha=concentration):
        return rng.dirichlet(np.full(c, alpha), size=r)

    p = [table(sizes[i], sizes[i + 1]) for i in range(L)]
    q = [table(sizes[i], sizes[i + 1]) for i in range(L)]
    lik = [table(sizes[i + 1], n_labels) for i in range(L)]
    return DiscreteHierarchy(p, q, lik, x=int(rng.integers(0, n_in)),
                             y=int(rng.integers(0, n_labels)))


def sharpening_hierarchy(rng: np.random.Generator, L: int = 3, states: int = 4,
                         n_labels: int = 3, kl_scale: float = 0.05) -> DiscreteHierarchy:
    """A hierarchy built to satisfy both assumptions: readouts become more
    confident in the label with depth and ``q`` stays close to ``p``."""
    p, q, lik = [], [], []
    n_prev = 1
    for i in range(L):
        base = rng.dirichlet(np.full(states, 2.0), size=n_prev)
        noise = rng.dirichlet(np.full(states, 2.0), size=n_prev)
        p.append(base)
        q.append((1 - kl_scale) * base + kl_scale * noise)
        conf = 0.4 + 0.5 * (i + 1) / L
        t = np.full((states, n_labels), (1 - conf) / (n_labels - 1))
        t[:, 0] = conf
        lik.append(t)
        n_prev = states
    return DiscreteHierarchy(p, q, lik, x=0, y=0)


def adversarial_hierarchy() -> DiscreteHierarchy:
    """Two binary layers whose first ``q`` row is nearly deterministic where
    ``p`` is tiny, giving a huge ``K_1`` that breaks the KL budget."""
    p1 = [[0.999999, 0.000001]]
    q1 = [[0.000001, 0.999999]]
    p2 = [[0.5, 0.5], [0.5, 0.5]]
    lik1 = [[0.5, 0.5], [0.5, 0.5]]
    lik2 = [[0.9, 0.1], [0.9, 0.1]]
    return DiscreteHierarchy([p1, p2], [q1, p2], [lik1, lik2], x=0, y=0)
