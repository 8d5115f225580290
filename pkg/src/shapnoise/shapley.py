"""Exact and permutation-sampling data Shapley values.

Both engines work on a *game*: a value function over coalitions of canonical
player positions ``0..N-1``, returning one value per tracked metric. Dataset
valuation wraps a :class:`~shapnoise.metrics.Utility` as such a game, and the
tests plug in synthetic games directly.

Monte Carlo sampling is deterministic given the seed. Permutation ``j`` is drawn
from its own counter-based Philox stream (key = seed, counter block = j).
Workers evaluate permutations in any order, and their marginals are reduced
strictly in ascending ``j``. The estimates therefore do not depend on the
thread count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .core import Dataset
from .metrics import MetricKind, Utility, parse_kinds, score
from .model import TrainConfig

EXACT_MAX_PLAYERS = 16
TELESCOPING_TOL = 1e-9

# value(rows, mask) -> scores, one per metric; rows are sorted positions
GameValue = Callable[[np.ndarray, int], np.ndarray]


class EfficiencyViolation(ArithmeticError):
    """A sampled permutation's marginals failed to telescope to V(D) - V(empty)."""


class TooManyPlayersError(ValueError):
    pass


@dataclass(frozen=True)
class ShapleyVector:
    values: dict[int, float]
    metric: MetricKind
    method: str
    n_permutations: int = 0

    @property
    def ids(self) -> list[int]:
        return list(self.values)

    def as_array(self) -> np.ndarray:
        return np.array(list(self.values.values()), dtype=np.float64)

    def total(self) -> float:
        return math.fsum(self.values.values())


@dataclass(frozen=True)
class SamplerConfig:
    """Permutation-sampling controls.

    ``None`` for ``max_permutations`` or ``convergence_window`` resolves
    against the number of players N to 3N and N respectively, with the default
    window clipped below a shorter explicit cap. The window is counted in
    checkpoints. With ``early_stop=False`` the sampler always runs
    ``max_permutations`` and only records where the monitor first fired.
    """

    max_permutations: Optional[int] = None
    checkpoint_every: int = 1
    convergence_window: Optional[int] = None
    convergence_tol: float = 0.05
    seed: int = 0
    early_stop: bool = True

    def resolve(self, n_players: int) -> "SamplerConfig":
        max_perm = self.max_permutations or 3 * max(n_players, 1)
        window = self.convergence_window
        if window is None:
            # the N-checkpoint default shrinks to fit a short explicit cap
            window = max(1, min(max(n_players, 1), max_perm - 1))
        cfg = replace(self, max_permutations=max_perm, convergence_window=window)
        if cfg.max_permutations < 1:
            raise ValueError("max_permutations must be positive")
        if cfg.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be positive")
        if not cfg.convergence_tol > 0:
            raise ValueError("convergence_tol must be positive")
        if cfg.convergence_window < 1:
            raise ValueError("convergence_window must be positive")
        # a 1-permutation run cannot satisfy window < max; it never checks convergence anyway
        if cfg.max_permutations > 1 and cfg.convergence_window >= cfg.max_permutations:
            raise ValueError("convergence_window must be smaller than max_permutations")
        return cfg

    def to_dict(self) -> dict:
        return {
            "max_permutations": self.max_permutations,
            "checkpoint_every": self.checkpoint_every,
            "convergence_window": self.convergence_window,
            "convergence_tol": self.convergence_tol,
            "seed": self.seed,
            "early_stop": self.early_stop,
        }


@dataclass(eq=False)
class ShapleyRun:
    """State of a permutation-sampling run for one metric.

    ``trace[c]`` holds every player's running mean after
    ``checkpoints[c]`` permutations.
    """

    estimates: ShapleyVector
    marginal_counts: np.ndarray
    checkpoints: np.ndarray
    trace: np.ndarray
    seed: int
    converged_at: Optional[int] = None
    v_full: float = math.nan
    v_empty: float = math.nan
    sampler: Optional[SamplerConfig] = field(default=None, repr=False)

    @property
    def n_permutations(self) -> int:
        return self.estimates.n_permutations

    @property
    def ids(self) -> list[int]:
        return self.estimates.ids

    def trace_of(self, id_: int) -> np.ndarray:
        return self.trace[:, self.ids.index(id_)]


def _popcount(masks: np.ndarray) -> np.ndarray:
    counts = np.zeros(masks.shape, dtype=np.int64)
    m = masks.copy()
    while m.any():
        counts += m & 1
        m >>= 1
    return counts


def shapley_from_table(table: np.ndarray) -> np.ndarray:
    """Shapley values from ``table[mask]`` = V(coalition encoded by ``mask``).

    ``table`` has shape ``(2**N,)`` or ``(2**N, m)``; the result has shape
    ``(N,)`` or ``(N, m)``. Each coalition S not containing i is weighted by
    ``1 / (N * C(N-1, |S|))``.
    """
    table = np.asarray(table, dtype=np.float64)
    squeeze = table.ndim == 1
    if squeeze:
        table = table[:, None]
    n = int(table.shape[0]).bit_length() - 1
    if table.shape[0] != 1 << n:
        raise ValueError("table length must be a power of two")
    masks = np.arange(1 << n, dtype=np.int64)
    size = _popcount(masks)
    weight = np.array([1.0 / (n * math.comb(n - 1, s)) if s < n else 0.0 for s in range(n + 1)])
    out = np.empty((n, table.shape[1]))
    for i in range(n):
        without = masks[(masks >> i) & 1 == 0]
        marg = table[without | (1 << i)] - table[without]
        out[i] = (marg * weight[size[without]][:, None]).sum(axis=0)
    return out[:, 0] if squeeze else out


def exact_game(n: int, value: Callable[[int], object], max_players: int = EXACT_MAX_PLAYERS) -> np.ndarray:
    """Exact Shapley values of an ``n``-player game with ``value(mask)``.

    Evaluates each of the ``2**n`` coalitions once.
    """
    if n > max_players:
        raise TooManyPlayersError(f"exact enumeration capped at {max_players} players, got {n}")
    if n == 0:
        return np.empty(0)
    table = np.array([value(mask) for mask in range(1 << n)], dtype=np.float64)
    return shapley_from_table(table)


def _dataset_game(util: Utility, kinds: Sequence[MetricKind]) -> GameValue:
    def value(rows: np.ndarray, mask: int) -> np.ndarray:
        counts = util.counts_for_rows(rows, mask)
        return np.array([score(counts, k) for k in kinds])

    return value


def _rows_of(mask: int, n: int) -> np.ndarray:
    return np.array([i for i in range(n) if mask >> i & 1], dtype=np.int64)


def exact_shapley_multi(
    train: Dataset,
    test: Dataset,
    kinds,
    config: TrainConfig = TrainConfig(),
    max_players: int = EXACT_MAX_PLAYERS,
    utility: Optional[Utility] = None,
) -> dict[MetricKind, ShapleyVector]:
    kinds = parse_kinds(kinds)
    if train.n > max_players:
        raise TooManyPlayersError(
            f"exact enumeration capped at {max_players} players, got {train.n}"
        )
    util = utility or Utility(train, test, config)
    game = _dataset_game(util, kinds)
    n = train.n
    values = exact_game(n, lambda mask: game(_rows_of(mask, n), mask), max_players)
    values = values.reshape(n, len(kinds))
    ids = train.ids.tolist()
    return {
        k: ShapleyVector(dict(zip(ids, values[:, c].tolist())), k, "exact", 0)
        for c, k in enumerate(kinds)
    }


def exact_shapley(
    train: Dataset,
    test: Dataset,
    kind: MetricKind | str,
    config: TrainConfig = TrainConfig(),
    max_players: int = EXACT_MAX_PLAYERS,
) -> ShapleyVector:
    """Exact data Shapley values by enumerating all ``2**N`` coalitions."""
    kind = MetricKind(kind)
    return exact_shapley_multi(train, test, [kind], config, max_players)[kind]


def permutation_stream(seed: int, index: int) -> np.random.Generator:
    """Independent generator for permutation ``index`` of a run seeded by ``seed``."""
    bitgen = np.random.Philox(key=seed % (1 << 64), counter=[0, 0, index, 0])
    return np.random.Generator(bitgen)


def sample_permutation(seed: int, index: int, n: int) -> np.ndarray:
    return permutation_stream(seed, index).permutation(n)


def permutation_marginals(
    order: np.ndarray,
    value: GameValue,
    v_empty: np.ndarray,
    v_full: np.ndarray,
    tol: float = TELESCOPING_TOL,
) -> np.ndarray:
    """Marginal contribution of each player when joining in ``order``.

    Walks the permutation once and reuses the previous prefix's value, so it
    needs one new evaluation per step. Row ``p`` of the result holds the
    marginal of the player at canonical position ``p``.
    """
    n = order.shape[0]
    member = np.zeros(n, dtype=bool)
    marg = np.empty((n, v_empty.shape[0]))
    prev = v_empty
    mask = 0
    for p in order:
        p = int(p)
        member[p] = True
        mask |= 1 << p
        cur = value(np.flatnonzero(member), mask)
        marg[p] = cur - prev
        prev = cur
    gap = np.abs(marg.sum(axis=0) - (v_full - v_empty))
    if not (gap <= tol).all():
        raise EfficiencyViolation(
            f"permutation marginals sum off by {gap.max():.3e} from V(D) - V(empty)"
        )
    return marg


def has_converged(run: ShapleyRun, sampler: SamplerConfig) -> bool:
    """Range-normalized stability test over the trailing checkpoint window.

    True when no player's running mean moved by ``convergence_tol`` times the
    current spread of estimates (floored at 1e-12) or more between any two
    consecutive checkpoints of the last ``convergence_window`` checkpoints.
    """
    window = sampler.resolve(len(run.ids)).convergence_window
    return _window_converged(run.trace, window, sampler.convergence_tol)


def _window_converged(trace: np.ndarray, window: int, tol: float) -> bool:
    if trace.shape[0] < window + 1:
        return False
    recent = trace[-(window + 1):]
    current = recent[-1]
    spread = max(float(current.max() - current.min()), 1e-12)
    return float(np.abs(np.diff(recent, axis=0)).max()) < tol * spread


def monte_carlo_game(
    n: int,
    value: GameValue,
    n_metrics: int,
    sampler: SamplerConfig,
    threads: int = 1,
) -> dict:
    """Permutation sampling on an arbitrary ``n``-player game.

    Returns the raw run state: per-metric means, trace, checkpoints, the
    permutation count, convergence points and the endpoint values.
    """
    cfg = sampler.resolve(n)
    all_rows = np.arange(n, dtype=np.int64)
    v_empty = np.asarray(value(all_rows[:0], 0), dtype=np.float64)
    v_full = np.asarray(value(all_rows, (1 << n) - 1), dtype=np.float64)

    max_ckpt = cfg.max_permutations // cfg.checkpoint_every + 1
    trace = np.empty((max_ckpt, n_metrics, n))
    checkpoints: list[int] = []
    converged_at: list[Optional[int]] = [None] * n_metrics
    sums = np.zeros((n, n_metrics))

    def one(j: int) -> np.ndarray:
        return permutation_marginals(sample_permutation(cfg.seed, j, n), value, v_empty, v_full)

    block = max(cfg.checkpoint_every, 8 * max(threads, 1))
    done = 0
    stop = False
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        while done < cfg.max_permutations and not stop:
            js = range(done, min(done + block, cfg.max_permutations))
            results = pool.map(one, js) if pool else map(one, js)
            for marg in results:
                sums += marg
                done += 1
                if done % cfg.checkpoint_every == 0:
                    c = len(checkpoints)
                    trace[c] = (sums / done).T
                    checkpoints.append(done)
                    for m in range(n_metrics):
                        if converged_at[m] is None and _window_converged(
                            trace[: c + 1, m], cfg.convergence_window, cfg.convergence_tol
                        ):
                            converged_at[m] = done
                    if cfg.early_stop and all(c is not None for c in converged_at):
                        stop = True
                        break
    finally:
        if pool:
            pool.shutdown(cancel_futures=True)

    if not checkpoints or checkpoints[-1] != done:
        trace[len(checkpoints)] = (sums / done).T
        checkpoints.append(done)
    k = len(checkpoints)
    return {
        "means": sums / done,
        "trace": trace[:k],
        "checkpoints": np.array(checkpoints, dtype=np.int64),
        "n_permutations": done,
        "converged_at": converged_at,
        "v_empty": v_empty,
        "v_full": v_full,
        "sampler": cfg,
    }


def mc_shapley_multi(
    train: Dataset,
    test: Dataset,
    kinds,
    config: TrainConfig = TrainConfig(),
    sampler: SamplerConfig = SamplerConfig(),
    threads: int = 1,
    utility: Optional[Utility] = None,
) -> dict[MetricKind, ShapleyRun]:
    """One permutation stream, scored under several metrics at once.

    Every metric sees the same sequence of coalitions, and each coalition is
    fitted once. With early stopping, sampling ends when all metrics'
    monitors have fired.
    """
    kinds = parse_kinds(kinds)
    util = utility or Utility(train, test, config)
    raw = monte_carlo_game(train.n, _dataset_game(util, kinds), len(kinds), sampler, threads)
    ids = train.ids.tolist()
    done = raw["n_permutations"]
    runs = {}
    for m, kind in enumerate(kinds):
        runs[kind] = ShapleyRun(
            estimates=ShapleyVector(
                dict(zip(ids, raw["means"][:, m].tolist())), kind, "monte_carlo", done
            ),
            marginal_counts=np.full(train.n, done, dtype=np.int64),
            checkpoints=raw["checkpoints"],
            trace=raw["trace"][:, m, :],
            seed=sampler.seed,
            converged_at=raw["converged_at"][m],
            v_full=float(raw["v_full"][m]),
            v_empty=float(raw["v_empty"][m]),
            sampler=raw["sampler"],
        )
    return runs


def mc_shapley(
    train: Dataset,
    test: Dataset,
    kind: MetricKind | str,
    config: TrainConfig = TrainConfig(),
    sampler: SamplerConfig = SamplerConfig(),
    threads: int = 1,
) -> ShapleyRun:
    """Permutation-sampling estimate of data Shapley values for one metric."""
    kind = MetricKind(kind)
    return mc_shapley_multi(train, test, [kind], config, sampler, threads)[kind]


def efficiency_gap(sv: ShapleyVector, v_full: float, v_empty: float) -> float:
    return sv.total() - (v_full - v_empty)
