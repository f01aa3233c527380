"""Seeded generators of finite enlargement scenarios.

Each generator returns a :class:`Scenario`: an :class:`EnlargementPair`, the
analysis horizon ``T`` (never beyond the space horizon) and the verdict that
the model predicts, to be confronted with the computed one.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .enlargement import EnlargementPair, check_condition_B
from .lattice import INF, FiniteFilteredSpace, RandomTime

log = logging.getLogger(__name__)

MAX_T = 12
MAX_ATOMS = 4096
MAX_T_DEEP = 32

KINDS = ("cox", "mixture_ex41", "mixture_ex42", "own_filtration_exponential",
         "fg_equal_inaccessible", "common_shock", "random")


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Expected:
    verdict: str
    pseudo_stopping: bool | None = None
    clause: str | None = None
    witness: str | None = None

    def to_json(self) -> dict:
        return {"verdict": self.verdict, "pseudo_stopping": self.pseudo_stopping,
                "clause": self.clause}


@dataclass(frozen=True)
class ScenarioDescriptor:
    kind: str
    params: dict = field(default_factory=dict)
    id: str | None = None

    @property
    def scenario_id(self) -> str:
        if self.id:
            return self.id
        body = ",".join(f"{k}={self.params[k]}" for k in sorted(self.params))
        return f"{self.kind}({body})"


@dataclass
class Scenario:
    id: str
    kind: str
    params: dict
    pair: EnlargementPair
    horizon: int
    expected: Expected
    info: dict = field(default_factory=dict)

    @property
    def space(self) -> FiniteFilteredSpace:
        return self.pair.space


# ---------------------------------------------------------------------------
# builders


def _encode(keys) -> np.ndarray:
    table: dict[Any, int] = {}
    return np.array([table.setdefault(k, len(table)) for k in keys], dtype=np.int64)


def build_space(weights, fkey: Callable[[int, int], Any], gkey: Callable[[int, int], Any],
                horizon: int, atoms=None, max_T: int = MAX_T) -> FiniteFilteredSpace:
    """Space whose cells at ``t`` are the level sets of ``fkey(t, i)`` and ``gkey(t, i)``."""
    w = np.asarray(weights, dtype=float)
    if np.any(w <= 0):
        raise ScenarioError("parameters produce a zero-probability atom")
    if horizon > max_T or w.size > MAX_ATOMS:
        raise ScenarioError(f"scenario exceeds desk scale (T={horizon}, atoms={w.size})")
    n = w.size
    F = np.array([_encode([fkey(t, i) for i in range(n)]) for t in range(horizon + 1)])
    G = np.array([_encode([(fkey(t, i), gkey(t, i)) for i in range(n)]) for t in range(horizon + 1)])
    return FiniteFilteredSpace(w / w.sum(), F, G, atoms)


def _default_state(theta: float, t: int):
    return theta if theta <= t else -1


def _progressive(thetas, extra=None):
    """``G_t`` key: the default indicator history, plus optional extra keys."""
    if extra is None:
        return lambda t, i: _default_state(thetas[i], t)
    return lambda t, i: (_default_state(thetas[i], t), extra(t, i))


def _check_guard(T: int, limit: int = MAX_T):
    if not 1 <= T <= limit:
        raise ScenarioError(f"horizon {T} outside 1..{limit}")


def _prob(x: float, name: str, open_interval: bool = True) -> float:
    x = float(x)
    if open_interval and not 0.0 < x < 1.0:
        raise ScenarioError(f"{name}={x} must lie in (0, 1)")
    return x


def _first_head(path) -> float:
    for s, c in enumerate(path, start=1):
        if c:
            return float(s)
    return INF


# ---------------------------------------------------------------------------
# worked-example kinds


def cox(T: int = 4, hazard=0.1, branching: int = 2, spread: float = 0.5, p_up: float = 0.5,
        deep: bool = False) -> Scenario:
    """Cox construction: ``theta`` driven by an ``F``-predictable hazard and independent noise.

    The factor moves in ``branching`` states per step; the hazard at step
    ``t`` depends on the fraction of up moves before ``t``.  ``deep`` lifts
    the horizon cap for the single-branch tree, which has only ``T + 1``
    atoms (used by grid-refinement studies).
    """
    limit = MAX_T_DEEP if deep and branching == 1 else MAX_T
    _check_guard(T, limit)
    hz = np.broadcast_to(np.asarray(hazard, dtype=float), (T,))
    if np.any(hz <= 0) or np.any(hz >= 1):
        raise ScenarioError("hazards must lie in (0, 1)")
    if branching < 1:
        raise ScenarioError("branching must be positive")
    probs = np.full(branching, 1.0 / branching) if branching != 2 else np.array([1 - p_up, p_up])
    paths = list(itertools.product(range(branching), repeat=T))
    weights, thetas, fpaths, atoms = [], [], [], []
    for path in paths:
        pw = float(np.prod(probs[list(path)]))
        lam = []
        for t in range(1, T + 1):
            past = path[:t - 1]
            frac = (np.mean(past) / (branching - 1)) if past and branching > 1 else 0.5
            lam.append(min(max(hz[t - 1] * (1 + spread * (2 * frac - 1)), 1e-6), 1 - 1e-6))
        surv = 1.0
        for t in range(1, T + 1):
            weights.append(pw * surv * lam[t - 1])
            thetas.append(float(t))
            fpaths.append(path)
            atoms.append(f"{''.join(map(str, path))}|{t}")
            surv *= 1 - lam[t - 1]
        weights.append(pw * surv)
        thetas.append(INF)
        fpaths.append(path)
        atoms.append(f"{''.join(map(str, path))}|inf")
    space = build_space(weights, lambda t, i: fpaths[i][:t], _progressive(thetas), T, atoms, limit)
    pair = EnlargementPair(space, RandomTime(space, thetas, "G"))
    return Scenario("", "cox", {}, pair, T, Expected("invariant", None, None, "Q"))


def own_filtration_exponential(T: int = 4, hazard: float = 0.2, variant: str = "F_trivial") -> Scenario:
    """Geometric ``theta`` with ``G`` its natural filtration; ``F`` trivial or equal to ``G``."""
    _check_guard(T)
    lam = _prob(hazard, "hazard")
    if variant not in ("F_trivial", "F_equals_G"):
        raise ScenarioError(f"unknown variant {variant!r}")
    thetas = [float(t) for t in range(1, T + 1)] + [INF]
    weights = [(1 - lam) ** (t - 1) * lam for t in range(1, T + 1)] + [(1 - lam) ** T]
    g = _progressive(thetas)
    f = (lambda t, i: 0) if variant == "F_trivial" else g
    space = build_space(weights, f, g, T, [f"theta={x:g}" for x in thetas])
    pair = EnlargementPair(space, RandomTime(space, thetas, "G"))
    exp = (Expected("invariant", None, None, "Q") if variant == "F_trivial"
           else Expected("not_invariant", None, "positivity"))
    return Scenario("", "own_filtration_exponential", {}, pair, T, exp)


def fg_equal_inaccessible(T: int = 3, p: float = 0.5) -> Scenario:
    """``F = G`` a coin-toss filtration and ``theta`` the first head."""
    _check_guard(T)
    p = _prob(p, "p")
    paths = list(itertools.product((0, 1), repeat=T))
    weights = [np.prod([p if c else 1 - p for c in path]) for path in paths]
    thetas = [_first_head(path) for path in paths]
    key = lambda t, i: paths[i][:t]
    space = build_space(weights, key, key, T, ["".join(map(str, x)) for x in paths])
    pair = EnlargementPair(space, RandomTime(space, thetas, "G"))
    return Scenario("", "fg_equal_inaccessible", {}, pair, T,
                    Expected("not_invariant", None, "positivity"))


def _coin_space(N: int, p: float):
    paths = list(itertools.product((0, 1), repeat=N))
    pw = [float(np.prod([p if c else 1 - p for c in path])) for path in paths]
    return paths, pw


def mixture_ex41(alpha: float = 0.3, T: int = 3, p: float = 0.5, sigma2: int | None = None) -> Scenario:
    """``theta = sigma1`` on ``A``, ``sigma2`` off ``A``, with ``A`` independent of ``F``.

    ``sigma1`` is the first head, capped at the space horizon ``N = T + 1``;
    ``sigma2 = T + 1`` by default, so that ``S >= 1 - alpha`` on ``[0, T]``.
    """
    _check_guard(T)
    alpha = _prob(alpha, "alpha")
    p = _prob(p, "p")
    s2 = T + 1 if sigma2 is None else int(sigma2)
    N = max(T + 1, s2)
    _check_guard(N)
    paths, pw = _coin_space(N, p)
    weights, thetas, fpaths, atoms = [], [], [], []
    for path, w in zip(paths, pw):
        s1 = min(_first_head(path), N)
        for a, wa in ((1, alpha), (0, 1 - alpha)):
            weights.append(w * wa)
            thetas.append(float(s1 if a else s2))
            fpaths.append(path)
            atoms.append(f"{''.join(map(str, path))}|{'A' if a else 'Ac'}")
    space = build_space(weights, lambda t, i: fpaths[i][:t], _progressive(thetas), N, atoms)
    pair = EnlargementPair(space, RandomTime(space, thetas, "G"))
    exp = Expected("invariant", True if s2 <= N else None, None)
    return Scenario("", "mixture_ex41", {}, pair, T, exp,
                    {"sigma1": [min(_first_head(x), N) for x in fpaths], "sigma2": s2})


def _last_argmax(path) -> int:
    x, best, arg = 0, -np.inf, 1
    for s, c in enumerate(path, start=1):
        x += 1 if c else -1
        if x >= best:
            best, arg = x, s
    return arg


def mixture_ex42(alphas=(0.3, 0.4, 0.3), T: int = 3, p: float = 0.5) -> Scenario:
    """Three-branch mixture; the third branch is an honest time.

    ``sigma1`` is the first head capped at ``N = T + 1``, ``sigma2 = N`` and
    ``sigma3`` the last time in ``1..N`` at which the random walk of the
    coins attains its running maximum over ``1..N``.  ``sigma3`` is not a
    stopping time, which is what breaks the pseudo-stopping property.
    """
    _check_guard(T)
    a = np.asarray(alphas, dtype=float)
    if a.shape != (3,) or np.any(a <= 0) or not np.isclose(a.sum(), 1.0):
        raise ScenarioError("alphas must be three positive weights summing to 1")
    p = _prob(p, "p")
    N = T + 1
    _check_guard(N)
    paths, pw = _coin_space(N, p)
    weights, thetas, fpaths, atoms = [], [], [], []
    for path, w in zip(paths, pw):
        times = (min(_first_head(path), N), N, _last_argmax(path))
        for k in range(3):
            weights.append(w * a[k])
            thetas.append(float(times[k]))
            fpaths.append(path)
            atoms.append(f"{''.join(map(str, path))}|A{k + 1}")
    space = build_space(weights, lambda t, i: fpaths[i][:t], _progressive(thetas), N, atoms)
    pair = EnlargementPair(space, RandomTime(space, thetas, "G"))
    return Scenario("", "mixture_ex42", {}, pair, T, Expected("invariant", False, None))


def common_shock(T: int = 4, lam_ref: float = 0.1, lam_cpty: float = 0.15,
                 lam_common: float = 0.05) -> Scenario:
    """Common-shock model with three independent geometric shocks.

    ``tau1`` hits the reference name, ``tau0`` the counterparty and ``tauc``
    both.  ``F`` observes the reference default ``min(tau1, tauc)``; ``G``
    observes every shock; ``theta = min(tau0, tauc)``.  ``G`` is strictly
    larger than the progressive enlargement of ``F`` by ``theta``.
    """
    _check_guard(T)
    lams = [_prob(x, n) for x, n in ((lam_ref, "lam_ref"), (lam_cpty, "lam_cpty"),
                                      (lam_common, "lam_common"))]
    support = [float(t) for t in range(1, T + 1)] + [INF]

    def law(lam):
        return [(1 - lam) ** (t - 1) * lam for t in range(1, T + 1)] + [(1 - lam) ** T]

    laws = [law(x) for x in lams]
    weights, shocks, atoms = [], [], []
    for (i1, t1), (i0, t0), (ic, tc) in itertools.product(*(list(enumerate(support)),) * 3):
        weights.append(laws[0][i1] * laws[1][i0] * laws[2][ic])
        shocks.append((t1, t0, tc))
        atoms.append(f"tau1={t1:g},tau0={t0:g},tauc={tc:g}")
    ref = [min(a, c) for a, _, c in shocks]
    thetas = [min(b, c) for _, b, c in shocks]
    fkey = lambda t, i: _default_state(ref[i], t)
    gkey = lambda t, i: tuple(_default_state(x, t) for x in shocks[i])
    space = build_space(weights, fkey, gkey, T, atoms)
    pair = EnlargementPair(space, RandomTime(space, thetas, "G"))
    return Scenario("", "common_shock", {}, pair, T, Expected("invariant", None, None))


# ---------------------------------------------------------------------------
# random kind


def _dirichlet(rng: np.random.Generator, k: int, floor: float = 0.3) -> np.ndarray:
    x = rng.dirichlet(np.full(k, 2.0))
    return (1 - floor) * x + floor / k


def random(seed: int = 0, T: int = 3, max_branch: int = 3, zero_mode: str = "none",
           max_atoms: int = 400, marks: bool = False, max_tries: int = 20) -> Scenario:
    """Random ``F`` tree and a ``theta`` whose law depends on the whole ``F`` path.

    ``zero_mode`` plants a zero of ``S``: ``predictable`` forces every leaf
    below an ``F_{t0-1}`` cell to default by ``t0``; ``inaccessible`` does
    the same below one of several ``F_{t0}`` siblings.  ``marks`` adds a
    ``G``-observable mark revealed at ``max(theta, r)``; triples failing
    condition (B) are rejected and resampled.
    """
    _check_guard(T)
    if zero_mode not in ("none", "predictable", "inaccessible", "random"):
        raise ScenarioError(f"unknown zero_mode {zero_mode!r}")
    rng = np.random.default_rng(seed)
    mode = zero_mode if zero_mode != "random" else str(rng.choice(["none", "predictable", "inaccessible"]))

    branch = max_branch
    for _ in range(50):
        leaves = _random_tree(rng, T, branch)
        if mode == "inaccessible" and not _has_split(leaves):
            continue
        size = sum(T + 1 for _ in leaves) * (2 if marks else 1)
        if size <= max_atoms:
            break
        branch = max(1, branch - 1)
    else:
        raise ScenarioError("could not fit the random tree under max_atoms")

    forced: dict[tuple, int] = {}
    zero = None
    if mode != "none":
        zero = _plant_zero(rng, leaves, T, mode)
        for path, _ in leaves:
            if path[:len(zero["cell"])] == zero["cell"]:
                forced[path] = zero["t0"]

    weights, thetas, fpaths = [], [], []
    for path, pw in leaves:
        t0 = forced.get(path)
        if t0 is None:
            support = [float(t) for t in range(1, T + 1)] + [INF]
            law = _dirichlet(rng, T + 1, 0.2)
        else:
            support = [float(t) for t in range(1, t0 + 1)]
            law = _dirichlet(rng, t0, 0.2)
        for th, q in zip(support, law):
            weights.append(pw * q)
            thetas.append(th)
            fpaths.append(path)

    info: dict = {"zero_mode": mode, "zero": zero}
    base_atoms = [f"{'.'.join(map(str, p))}|{th:g}" for p, th in zip(fpaths, thetas)]
    if not marks:
        space = build_space(weights, lambda t, i: fpaths[i][:t], _progressive(thetas), T, base_atoms)
        pair = EnlargementPair(space, RandomTime(space, thetas, "G"))
    else:
        pair, info["acceptance"] = _with_marks(rng, weights, thetas, fpaths, base_atoms, T, max_tries)
    exp = (Expected("not_invariant", None, "positivity") if mode == "inaccessible"
           else Expected("invariant", None, None))
    return Scenario("", "random", {}, pair, T, exp, info)


def _random_tree(rng, T, max_branch):
    leaves = [((), 1.0)]
    for _ in range(T):
        nxt = []
        for path, pw in leaves:
            b = int(rng.integers(1, max_branch + 1))
            probs = _dirichlet(rng, b)
            nxt.extend((path + (j,), pw * probs[j]) for j in range(b))
        leaves = nxt
    return leaves


def _has_split(leaves) -> bool:
    T = len(leaves[0][0])
    return any(len({p[:t + 1] for p, _ in leaves if p[:t] == q[:t]}) > 1
               for t in range(T) for q, _ in leaves)


def _plant_zero(rng, leaves, T, mode):
    """Pick the cell whose leaves are forced to default by ``t0``."""
    options = []
    for t0 in range(1, T + 1):
        parents = sorted({p[:t0 - 1] for p, _ in leaves})
        for par in parents:
            kids = sorted({p[:t0] for p, _ in leaves if p[:t0 - 1] == par})
            if mode == "predictable":
                options.append((t0, par))
            elif len(kids) > 1:
                options.extend((t0, k) for k in kids)
    t0, cell = options[int(rng.integers(len(options)))]
    return {"t0": int(t0), "cell": tuple(int(c) for c in cell)}


def _with_marks(rng, weights, thetas, fpaths, atoms, T, max_tries):
    """Duplicate atoms with a binary mark revealed at ``max(theta, r)``."""
    accepted = 0
    log_rows = []
    for attempt in range(max_tries + 1):
        fallback = attempt == max_tries
        r = T + 1 if fallback else int(rng.integers(0, T + 2))
        leaf_only = bool(rng.random() < 0.5)
        w2, th2, fp2, marks, at2 = [], [], [], [], []
        leaf_bias: dict = {}
        for w, th, fp, name in zip(weights, thetas, fpaths, atoms):
            key = fp if leaf_only else (fp, th)
            q = leaf_bias.setdefault(key, float(rng.uniform(0.2, 0.8)))
            for m, wm in ((0, 1 - q), (1, q)):
                w2.append(w * wm)
                th2.append(th)
                fp2.append(fp)
                marks.append(m)
                at2.append(f"{name}|m{m}")
        mark_key = lambda t, i: marks[i] if (t >= th2[i] or t >= r) else -1
        space = build_space(w2, lambda t, i: fp2[i][:t], _progressive(th2, mark_key), T, at2)
        theta = RandomTime(space, th2, "G")
        ok = bool(check_condition_B(space, theta))
        log_rows.append({"attempt": attempt, "reveal": r, "leaf_only": leaf_only, "accepted": ok})
        if ok:
            accepted += 1
            log.info("random marks accepted after %d attempt(s)", attempt + 1)
            return EnlargementPair(space, theta), {"tries": attempt + 1, "log": log_rows,
                                                   "fallback": fallback}
    raise ScenarioError("fallback mark construction failed condition (B)")


# ---------------------------------------------------------------------------
# dispatch

_GENERATORS: dict[str, Callable[..., Scenario]] = {
    "cox": cox,
    "mixture_ex41": mixture_ex41,
    "mixture_ex42": mixture_ex42,
    "own_filtration_exponential": own_filtration_exponential,
    "fg_equal_inaccessible": fg_equal_inaccessible,
    "common_shock": common_shock,
    "random": random,
}


def generate(descriptor: ScenarioDescriptor | dict) -> Scenario:
    """Build the scenario described by ``descriptor`` (a descriptor or a plain dict)."""
    if isinstance(descriptor, dict):
        descriptor = ScenarioDescriptor(descriptor["kind"], dict(descriptor.get("params", {})),
                                        descriptor.get("id"))
    gen = _GENERATORS.get(descriptor.kind)
    if gen is None:
        raise ScenarioError(f"unknown scenario kind {descriptor.kind!r}")
    params = dict(descriptor.params)
    if "alphas" in params:
        params["alphas"] = tuple(params["alphas"])
    try:
        sc = gen(**params)
    except TypeError as exc:
        raise ScenarioError(f"{descriptor.kind}: {exc}") from exc
    sc.id = descriptor.scenario_id
    sc.params = dict(descriptor.params)
    return sc


def random_batch(n: int, seed: int = 0, **kw) -> list[Scenario]:
    """``n`` random scenarios cycling through the zero modes and mark option."""
    out = []
    modes = ("none", "predictable", "inaccessible")
    rng = np.random.default_rng(seed)
    for k in range(n):
        params = {"seed": int(seed * 100003 + k), "T": int(rng.integers(2, 5)),
                  "zero_mode": modes[k % 3], "marks": bool(k % 4 == 3)}
        params.update(kw)
        out.append(generate(ScenarioDescriptor("random", params, f"random-{seed}-{k}")))
    return out


WORKED_EXAMPLES = (
    ScenarioDescriptor("cox", {"T": 4, "hazard": 0.1}, "cox"),
    ScenarioDescriptor("fg_equal_inaccessible", {"T": 3, "p": 0.5}, "fg_equal_inaccessible"),
    ScenarioDescriptor("own_filtration_exponential", {"T": 4, "hazard": 0.2, "variant": "F_trivial"},
                       "own_filtration_exponential_F_trivial"),
    ScenarioDescriptor("own_filtration_exponential", {"T": 4, "hazard": 0.2, "variant": "F_equals_G"},
                       "own_filtration_exponential_F_equals_G"),
    ScenarioDescriptor("mixture_ex41", {"alpha": 0.3, "T": 3}, "mixture_ex41"),
    ScenarioDescriptor("mixture_ex42", {"alphas": [0.3, 0.4, 0.3], "T": 3}, "mixture_ex42"),
)
