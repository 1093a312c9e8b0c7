"""Reversible-jump MCMC over latent shot-noise trajectories.

The chain explores trajectories of unknown jump count given an observed
count panel.  Five moves:

    s  redraw initial values from their stationary Gamma laws
    p  move one jump uniformly between its neighbours
    h  redraw one jump's multivariate size from the size law f_X
    b  birth: new jump, position uniform on [0, T], size from f_X
    d  death: delete one jump chosen uniformly

Move probabilities: s and b equally likely when the trajectory has no jumps,
all five at 0.2 otherwise.  A proposal is accepted with probability
min(1, likelihood ratio * prior ratio * proposal ratio * Jacobian); the
Jacobian is 1 for every move, and for s, p and h the prior and proposal
ratios cancel exactly by construction.

Masses M_{g,i} are maintained incrementally: a move touching time tau only
updates the periods it can reach, with per-jump decay contributions cut off
once they fall below exp(-37) of the jump size (beneath double rounding at
the mass scale).  A periodic full recomputation bounds drift; tests assert
incremental and full masses agree.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .counts import CountsPanel, ExposureSeries, gamma_logpdf
from .shotnoise import MarginalShotParams, Trajectory, simulate_trajectory

__all__ = [
    "MoveType",
    "FilterConfig",
    "MoveProposal",
    "FilterResult",
    "select_move",
    "move_probability",
    "move_s",
    "move_p",
    "move_h",
    "move_b",
    "move_d",
    "run_filter",
]

MoveType = Literal["s", "p", "h", "b", "d"]
_MOVES: tuple[MoveType, ...] = ("s", "p", "h", "b", "d")

EXP_TAIL_CUTOFF = 37.0  # exp(-37) ~ 8.5e-17, below double rounding of the mass
MASS_FLOOR = 1e-300


def move_probability(r: MoveType, n: int) -> float:
    """Selection probability p(r | n) of move r at jump count n."""
    if n == 0:
        return 0.5 if r in ("s", "b") else 0.0
    return 0.2


def select_move(n: int, rng: np.random.Generator) -> MoveType:
    """Draw a move type with the p(r | n) distribution."""
    if n == 0:
        return "s" if rng.integers(2) == 0 else "b"
    return _MOVES[rng.integers(5)]


@dataclass(frozen=True)
class FilterConfig:
    """Chain length, burn-in and posterior sample selection."""

    iterations: int = 20_000
    burn_fraction: float = 0.5
    num_samples: int = 100
    seed: int | None = None
    resync_every: int = 100_000

    def __post_init__(self) -> None:
        if self.iterations <= 0:
            raise ValueError("iterations must be > 0")
        if not 0.0 <= self.burn_fraction < 1.0:
            raise ValueError("burn_fraction must be in [0, 1)")
        if self.num_samples <= 0:
            raise ValueError("num_samples must be > 0")


@dataclass
class MoveProposal:
    """One proposed transition with its acceptance-ratio factors (logs)."""

    move: MoveType
    trajectory: Trajectory
    log_prior_ratio: float
    log_proposal_ratio: float
    log_likelihood_ratio: float
    log_jacobian: float = 0.0

    @property
    def log_acceptance(self) -> float:
        return (
            self.log_likelihood_ratio
            + self.log_prior_ratio
            + self.log_proposal_ratio
            + self.log_jacobian
        )


@dataclass
class FilterResult:
    samples: list[Trajectory]
    final: Trajectory
    proposed: dict[str, int]
    accepted: dict[str, int]
    mass_floor_rejections: int = 0
    nonfinite_rejections: int = 0

    def acceptance_rate(self, move: MoveType) -> float:
        return self.accepted[move] / max(self.proposed[move], 1)


class _ChainState:
    """Mutable trajectory plus incrementally maintained cell masses."""

    def __init__(
        self,
        traj: Trajectory,
        params: Sequence[MarginalShotParams] | None,
        size_model,
        panel: CountsPanel | None,
        exposure: ExposureSeries | None,
    ):
        self.g_count = traj.num_margins
        self.horizon = traj.horizon
        self.params = params
        self.size_model = size_model
        self.kappas = traj.decay_rates
        self.lam0 = list(traj.initial_values)
        self.times: list[float] = [float(t) for t in traj.times]
        self.sizes: list[tuple[float, ...]] = [tuple(map(float, r)) for r in traj.sizes]
        self.flat = panel is None

        if not self.flat:
            if exposure is None:
                raise ValueError("exposure required with a panel")
            if panel.num_margins != self.g_count:
                raise ValueError("panel margins do not match trajectory")
            dpp = panel.delta
            if abs(dpp - round(dpp)) > 1e-9:
                raise ValueError("the filter requires day-aligned periods")
            self.dpp = int(round(dpp))
            self.num_periods = panel.num_periods
            self.n_days = self.num_periods * self.dpp
            if exposure.num_days < self.n_days:
                raise ValueError("exposure does not cover the panel")
            self.w = exposure.values[:, : self.n_days]
            self.counts = panel.counts.astype(float)
            self.nonzero = panel.counts > 0
            self.cut = [
                min(self.n_days, int(math.ceil(EXP_TAIL_CUTOFF / k)) + 2)
                for k in self.kappas
            ]
            self.pow = [np.exp(-k * np.arange(c + 1)) for k, c in zip(self.kappas, self.cut)]
            self.day_b = [(1.0 - math.exp(-k)) / k for k in self.kappas]
            self.masses = self._full_masses()

    # -- mass bookkeeping -------------------------------------------------

    def _full_masses(self) -> np.ndarray:
        from scipy.signal import lfilter

        n_days = self.n_days
        out = np.empty((self.g_count, self.num_periods))
        times = np.array(self.times)
        sizes = np.array(self.sizes, dtype=float).reshape(len(self.times), self.g_count)
        for g in range(self.g_count):
            kappa = self.kappas[g]
            x = sizes[:, g] if times.size else np.empty(0)
            keep = (x > 0.0) & (times < n_days) if times.size else np.zeros(0, bool)
            idx = times[keep].astype(np.int64)
            ts = times[keep]
            xs = x[keep]
            decay_to_end = np.exp(-kappa * (idx + 1.0 - ts))
            p = np.bincount(idx, weights=xs * decay_to_end, minlength=n_days)
            r = np.bincount(idx, weights=xs * (1.0 - decay_to_end) / kappa, minlength=n_days)
            drive = np.empty(n_days)
            drive[0] = self.lam0[g]
            drive[1:] = p[:-1]
            v = lfilter([1.0], [1.0, -math.exp(-kappa)], drive)
            day_mass = self.w[g] * (v * self.day_b[g] + r)
            out[g] = day_mass.reshape(self.num_periods, self.dpp).sum(axis=1)
        return out

    def _day_window(self, g: int, c: float, tau: float):
        """Day-mass delta from adding c * exp(-kappa_g (t - tau)), t >= tau."""
        d0 = int(tau)
        if d0 >= self.n_days or c == 0.0:
            return None
        kappa = self.kappas[g]
        m = min(self.cut[g] + 1, self.n_days - d0)
        f0 = math.exp(-kappa * (d0 + 1.0 - tau))
        dm = np.empty(m)
        dm[0] = c * (1.0 - f0) / kappa
        if m > 1:
            dm[1:] = (c * f0 * self.day_b[g]) * self.pow[g][: m - 1]
        dm *= self.w[g, d0 : d0 + m]
        return d0, dm

    def _period_delta(self, g: int, windows):
        """Merge day windows into one contiguous period-delta array."""
        spans = []
        for win in windows:
            if win is None:
                continue
            d0, dm = win
            spans.append((d0, dm))
        if not spans:
            return None
        if self.dpp == 1:
            p_lo = min(d0 for d0, _ in spans)
            p_hi = max(d0 + dm.size for d0, dm in spans)
            out = np.zeros(p_hi - p_lo)
            for d0, dm in spans:
                out[d0 - p_lo : d0 - p_lo + dm.size] += dm
            return p_lo, out
        p_lo = min(d0 // self.dpp for d0, _ in spans)
        p_hi = max((d0 + dm.size - 1) // self.dpp + 1 for d0, dm in spans)
        out = np.zeros(p_hi - p_lo)
        for d0, dm in spans:
            pidx = (d0 + np.arange(dm.size)) // self.dpp - p_lo
            np.add.at(out, pidx, dm)
        return p_lo, out

    def _log_lik_delta(self, deltas) -> float:
        """Sum of cell log-likelihood changes for per-margin period deltas.

        Returns -inf when a positive-count cell would fall below the mass
        floor (the caller counts that as a floored rejection).
        """
        total = 0.0
        for g, span in deltas:
            if span is None:
                continue
            p0, dm = span
            m_old = self.masses[g, p0 : p0 + dm.size]
            total -= float(dm.sum())
            nz = self.nonzero[g, p0 : p0 + dm.size]
            if not nz.any():
                continue
            m_nz = m_old[nz]
            d_nz = dm[nz]
            m_new = m_nz + d_nz
            if np.any(m_new < MASS_FLOOR):
                return -math.inf
            total += float(np.dot(self.counts[g, p0 : p0 + dm.size][nz], np.log1p(d_nz / m_nz)))
        return total

    def _apply_deltas(self, deltas) -> None:
        for g, span in deltas:
            if span is None:
                continue
            p0, dm = span
            seg = self.masses[g, p0 : p0 + dm.size]
            seg += dm
            np.maximum(seg, 0.0, out=seg)

    # -- snapshots ---------------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.times)

    def snapshot(self) -> Trajectory:
        n = len(self.times)
        sizes = np.array(self.sizes, dtype=float).reshape(n, self.g_count)
        return Trajectory(
            tuple(self.lam0), np.array(self.times), sizes, self.horizon, self.kappas
        )


@dataclass
class _Pending:
    """Proposal factors plus the state mutation to run on acceptance."""

    move: MoveType
    log_prior_ratio: float
    log_proposal_ratio: float
    log_likelihood_ratio: float
    deltas: list
    mutate: tuple


def _propose(state: _ChainState, move: MoveType, rng: np.random.Generator) -> _Pending:
    if move == "s":
        return _propose_s(state, rng)
    if move == "p":
        return _propose_p(state, rng)
    if move == "h":
        return _propose_h(state, rng)
    if move == "b":
        return _propose_b(state, rng)
    return _propose_d(state, rng)


def _propose_s(state: _ChainState, rng: np.random.Generator) -> _Pending:
    if state.params is None:
        raise ValueError("move s requires marginal parameters")
    new0 = [
        float(rng.gamma(p.stationary_shape, 1.0 / p.eta)) for p in state.params
    ]
    lp = 0.0
    for g, p in enumerate(state.params):
        lp += gamma_logpdf(new0[g], p.stationary_shape, p.eta) - gamma_logpdf(
            state.lam0[g], p.stationary_shape, p.eta
        )
    if not math.isfinite(lp):  # degenerate current initial value: exact cancellation
        lp = 0.0
    deltas = []
    if not state.flat:
        for g in range(state.g_count):
            win = state._day_window(g, new0[g] - state.lam0[g], 0.0)
            deltas.append((g, state._period_delta(g, [win])))
    ll = state._log_lik_delta(deltas) if not state.flat else 0.0
    return _Pending("s", lp, -lp, ll, deltas, ("s", new0))


def _propose_p(state: _ChainState, rng: np.random.Generator) -> _Pending:
    n = state.n
    j = int(rng.integers(n))
    lo = state.times[j - 1] if j > 0 else 0.0
    hi = state.times[j + 1] if j < n - 1 else state.horizon
    tau_new = float(rng.uniform(lo, hi))
    tau_old = state.times[j]
    deltas = []
    if not state.flat:
        for g in range(state.g_count):
            x = state.sizes[j][g]
            if x == 0.0:
                continue
            w_del = state._day_window(g, -x, tau_old)
            w_add = state._day_window(g, x, tau_new)
            deltas.append((g, state._period_delta(g, [w_del, w_add])))
    ll = state._log_lik_delta(deltas) if not state.flat else 0.0
    return _Pending("p", 0.0, 0.0, ll, deltas, ("p", j, tau_new))


def _propose_h(state: _ChainState, rng: np.random.Generator) -> _Pending:
    n = state.n
    j = int(rng.integers(n))
    new_sizes = tuple(state.size_model.sample_sizes(rng))
    old_sizes = state.sizes[j]
    log_f_new = state.size_model.log_density(new_sizes)
    log_f_old = state.size_model.log_density(old_sizes)
    lp = log_f_new - log_f_old
    deltas = []
    if not state.flat:
        tau = state.times[j]
        for g in range(state.g_count):
            c = new_sizes[g] - old_sizes[g]
            if c == 0.0:
                continue
            win = state._day_window(g, c, tau)
            deltas.append((g, state._period_delta(g, [win])))
    ll = state._log_lik_delta(deltas) if not state.flat else 0.0
    return _Pending("h", lp, -lp, ll, deltas, ("h", j, new_sizes))


def _propose_b(state: _ChainState, rng: np.random.Generator) -> _Pending:
    n = state.n
    tau = float(rng.uniform(0.0, state.horizon))
    new_sizes = tuple(state.size_model.sample_sizes(rng))
    log_f = state.size_model.log_density(new_sizes)
    lp = math.log(state.size_model.rho_total) + log_f
    lq = (
        math.log(move_probability("d", n + 1))
        - math.log(move_probability("b", n))
        + math.log(state.horizon)
        - math.log(n + 1.0)
        - log_f
    )
    deltas = []
    if not state.flat:
        for g in range(state.g_count):
            if new_sizes[g] == 0.0:
                continue
            win = state._day_window(g, new_sizes[g], tau)
            deltas.append((g, state._period_delta(g, [win])))
    ll = state._log_lik_delta(deltas) if not state.flat else 0.0
    return _Pending("b", lp, lq, ll, deltas, ("b", tau, new_sizes))


def _propose_d(state: _ChainState, rng: np.random.Generator) -> _Pending:
    n = state.n
    j = int(rng.integers(n))
    old_sizes = state.sizes[j]
    log_f = state.size_model.log_density(old_sizes)
    lp = -(math.log(state.size_model.rho_total) + log_f)
    lq = (
        math.log(move_probability("b", n - 1))
        - math.log(move_probability("d", n))
        - math.log(state.horizon)
        + math.log(float(n))
        + log_f
    )
    deltas = []
    if not state.flat:
        tau = state.times[j]
        for g in range(state.g_count):
            x = old_sizes[g]
            if x == 0.0:
                continue
            win = state._day_window(g, -x, tau)
            deltas.append((g, state._period_delta(g, [win])))
    ll = state._log_lik_delta(deltas) if not state.flat else 0.0
    return _Pending("d", lp, lq, ll, deltas, ("d", j))


def _apply(state: _ChainState, pending: _Pending) -> None:
    mut = pending.mutate
    kind = mut[0]
    if kind == "s":
        state.lam0 = mut[1]
    elif kind == "p":
        _, j, tau_new = mut
        sizes = state.sizes[j]
        del state.times[j], state.sizes[j]
        k = bisect_right(state.times, tau_new)
        state.times.insert(k, tau_new)
        state.sizes.insert(k, sizes)
    elif kind == "h":
        _, j, new_sizes = mut
        state.sizes[j] = new_sizes
    elif kind == "b":
        _, tau, new_sizes = mut
        k = bisect_right(state.times, tau)
        state.times.insert(k, tau)
        state.sizes.insert(k, new_sizes)
    else:
        _, j = mut
        del state.times[j], state.sizes[j]
    if not state.flat:
        state._apply_deltas(pending.deltas)


def _single_move(
    move: MoveType,
    traj: Trajectory,
    rng: np.random.Generator,
    params=None,
    size_model=None,
    panel=None,
    exposure=None,
) -> MoveProposal:
    state = _ChainState(traj, params, size_model, panel, exposure)
    if move in ("p", "h", "d") and state.n == 0:
        raise ValueError(f"move {move} is unavailable with no jumps")
    pending = _propose(state, move, rng)
    _apply(state, pending)
    return MoveProposal(
        move=move,
        trajectory=state.snapshot(),
        log_prior_ratio=pending.log_prior_ratio,
        log_proposal_ratio=pending.log_proposal_ratio,
        log_likelihood_ratio=pending.log_likelihood_ratio,
    )


def move_s(traj, params, rng, panel=None, exposure=None) -> MoveProposal:
    """Redraw all initial values from their stationary Gamma laws."""
    return _single_move("s", traj, rng, params=params, panel=panel, exposure=exposure)


def move_p(traj, rng, panel=None, exposure=None) -> MoveProposal:
    """Move one jump's position uniformly between its neighbours."""
    return _single_move("p", traj, rng, panel=panel, exposure=exposure)


def move_h(traj, size_model, rng, panel=None, exposure=None) -> MoveProposal:
    """Redraw one jump's multivariate size from the size law."""
    return _single_move("h", traj, rng, size_model=size_model, panel=panel, exposure=exposure)


def move_b(traj, size_model, rng, panel=None, exposure=None) -> MoveProposal:
    """Give birth to a new jump at a uniform position."""
    return _single_move("b", traj, rng, size_model=size_model, panel=panel, exposure=exposure)


def move_d(traj, size_model, rng, panel=None, exposure=None) -> MoveProposal:
    """Delete one jump chosen uniformly."""
    return _single_move("d", traj, rng, size_model=size_model, panel=panel, exposure=exposure)


def run_filter(
    panel: CountsPanel | None,
    exposure: ExposureSeries | None,
    params: Sequence[MarginalShotParams],
    size_model,
    config: FilterConfig,
    rng: np.random.Generator | None = None,
    initial: Trajectory | None = None,
    horizon: float | None = None,
    debug_checks: bool = False,
) -> FilterResult:
    """Sample the posterior over trajectories given a count panel.

    With ``panel=None`` the likelihood is flat and the chain samples the
    trajectory prior (the strongest whole-filter check available).  The
    returned samples are ``config.num_samples`` states evenly spaced over
    the post-burn-in part of the chain.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    if initial is None:
        t_span = panel.horizon if panel is not None else horizon
        if t_span is None:
            raise ValueError("flat-likelihood runs need an initial trajectory or horizon")
        initial = simulate_trajectory(params, size_model, t_span, rng)
    state = _ChainState(initial, params, size_model, panel, exposure)

    burn_end = int(config.iterations * config.burn_fraction)
    sample_at = np.unique(
        np.linspace(burn_end, config.iterations - 1, config.num_samples).round().astype(int)
    )
    sample_set = set(int(i) for i in sample_at)

    samples: list[Trajectory] = []
    proposed = {m: 0 for m in _MOVES}
    accepted = {m: 0 for m in _MOVES}
    floored = 0
    nonfinite = 0

    for it in range(config.iterations):
        move = select_move(state.n, rng)
        pending = _propose(state, move, rng)
        proposed[move] += 1
        if debug_checks and move in ("s", "p", "h"):
            assert pending.log_prior_ratio + pending.log_proposal_ratio == 0.0
        log_alpha = (
            pending.log_likelihood_ratio
            + pending.log_prior_ratio
            + pending.log_proposal_ratio
        )
        if math.isnan(log_alpha):
            nonfinite += 1
        elif log_alpha == -math.inf:
            if pending.log_likelihood_ratio == -math.inf:
                floored += 1
        elif log_alpha >= 0.0 or rng.random() < math.exp(log_alpha):
            _apply(state, pending)
            accepted[move] += 1
        if not state.flat and (it + 1) % config.resync_every == 0:
            fresh = state._full_masses()
            if debug_checks:
                np.testing.assert_allclose(state.masses, fresh, rtol=1e-8, atol=1e-10)
            state.masses = fresh
        if it in sample_set:
            samples.append(state.snapshot())

    return FilterResult(
        samples=samples,
        final=state.snapshot(),
        proposed=proposed,
        accepted=accepted,
        mass_floor_rejections=floored,
        nonfinite_rejections=nonfinite,
    )
