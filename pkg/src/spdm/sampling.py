"""Stochastic and deterministic integrators for diffusion processes.

The reverse-time family is parameterized by the noise level lambda: drift
``u - ((1 + lambda^2)/2) g^2 s`` with injected noise ``lambda g``; lambda=0
is the probability-flow ODE, lambda=1 the standard reverse SDE.  All SDEs
use Euler-Maruyama with the update

    x_next = x + drift(x, t) (t_next - t) + scale sqrt(|t_next - t|) eps

and the PF-ODE uses Heun's second-order rule.  Bridge sampling follows the
backward family ``u + g^2 h - ((1 + tau^2)/2) g^2 s(x | x_T, t)`` with
noise ``tau g``.

Noise sequences are regenerated from a counter-based PRNG keyed by
(seed, step index), so a group orientation can be applied lazily and the
oriented sequence {k eps_i} is reproduced bit-exactly.  Canonicalizers
implement the max-location construction on grids (upper half / quadrant /
octant) and angular sectors on 2-D point data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParams, NonFiniteState, TimeOutOfRange
from .groups import (GroupElement, IsometryGroup, make_c4_group, make_d4_group,
                     make_flip_group, make_point_group_2d)
from .process import Schedule, grad_log_transition_h


@dataclass(frozen=True)
class TimeGrid:
    """Strictly monotone sequence of times; n_steps = len(times) - 1."""

    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or len(t) < 1:
            raise InvalidParams("times must be a 1-D array with at least one entry")
        d = np.diff(t)
        if len(d) and not (np.all(d > 0) or np.all(d < 0)):
            raise InvalidParams("times must be strictly monotone")
        object.__setattr__(self, "times", t)

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    @property
    def descending(self) -> bool:
        return self.n_steps > 0 and self.times[1] < self.times[0]

    def reversed(self) -> "TimeGrid":
        return TimeGrid(self.times[::-1].copy())


def sampling_grid(s: Schedule, n: int = 400) -> TimeGrid:
    """Uniform reverse-sampling grid from T down to t_clip (n steps)."""
    return TimeGrid(np.linspace(s.T, s.t_clip, n + 1))


def bridge_grid(s: Schedule, n: int = 400) -> TimeGrid:
    """Uniform bridge grid from T - t_clip down to t_clip (n steps)."""
    return TimeGrid(np.linspace(s.T - s.t_clip, s.t_clip, n + 1))


def nll_grid(s: Schedule, n: int = 1000) -> TimeGrid:
    """Uniform forward grid from t_clip up to T (n steps)."""
    return TimeGrid(np.linspace(s.t_clip, s.T, n + 1))


def _step_rng(seed: int, index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(0, index))
    return np.random.Generator(np.random.Philox(ss))


def _aux_rng(seed: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(1, 0))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class NoiseSequence:
    """Per-step N(0, I) noises with an optional group orientation.

    ``get(i)`` returns ``orientation(eps_i)`` where eps_i is regenerated
    from the counter-based stream keyed by (seed, offset + i); regenerating
    a sequence with the same (seed, orientation) reproduces the oriented
    noises bit-exactly.
    """

    seed: int
    n: int
    shape: tuple
    orientation: GroupElement | None = None
    offset: int = 0

    def base(self, i: int) -> np.ndarray:
        if not (0 <= i < self.n):
            raise InvalidParams(f"noise index {i} outside [0, {self.n})")
        return _step_rng(self.seed, self.offset + i).standard_normal(self.shape)

    def get(self, i: int) -> np.ndarray:
        eps = self.base(i)
        return eps if self.orientation is None else self.orientation.apply(eps)

    def shifted(self, by: int) -> "NoiseSequence":
        """View of the same stream starting ``by`` steps later."""
        return NoiseSequence(seed=self.seed, n=self.n - by, shape=self.shape,
                             orientation=self.orientation, offset=self.offset + by)


@dataclass
class Trajectory:
    """States recorded at every grid time; states[0] is the start."""

    grid: TimeGrid
    states: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def terminal(self) -> np.ndarray:
        return self.states[-1]


def _check_finite(x: np.ndarray, step: int) -> None:
    if not np.all(np.isfinite(x)):
        raise NonFiniteState(f"state became non-finite at step {step}")


def _resolve_start(x_T, noise_seed: int | None):
    if callable(x_T):
        if noise_seed is None:
            raise InvalidParams("a prior sampler start needs a noise seed")
        return np.asarray(x_T(_aux_rng(noise_seed)), dtype=float)
    return np.asarray(x_T, dtype=float).copy()


def _resolve_noise(noise, shape, n_steps: int):
    if isinstance(noise, NoiseSequence):
        return noise
    if noise is None:
        return None
    return NoiseSequence(seed=int(noise), n=n_steps, shape=tuple(shape))


def reverse_sde_sample(score, s: Schedule, lam: float, grid: TimeGrid,
                       x_T, noise=None) -> Trajectory:
    """Integrate the reverse-time SDE family from the terminal state down.

    Parameters
    ----------
    score : callable (x, t) -> array
    s : Schedule
    lam : float
        Noise level lambda >= 0; lambda=0 is the PF-ODE integrated with
        Euler steps and no injected noise.
    grid : TimeGrid
        Descending times, typically sampling_grid(s, n).
    x_T : array or callable(rng) -> array
        Terminal state or a prior sampler.
    noise : NoiseSequence or int seed or None
        Required (as sequence or seed) when lam > 0 or x_T is a sampler.
    """
    if lam < 0:
        raise InvalidParams(f"lambda must be >= 0, got {lam}")
    if grid.n_steps > 0 and not grid.descending:
        raise InvalidParams("reverse sampling needs a descending time grid")
    seed = noise.seed if isinstance(noise, NoiseSequence) else noise
    x = _resolve_start(x_T, seed)
    seq = _resolve_noise(noise, x.shape, grid.n_steps)
    if lam > 0 and seq is None:
        raise InvalidParams("lambda > 0 needs a noise sequence or seed")
    states = np.empty((grid.n_steps + 1, *x.shape))
    states[0] = x
    times = grid.times
    for i in range(grid.n_steps):
        t, t_next = times[i], times[i + 1]
        dt = t_next - t
        g2 = float(s.g2(t))
        drift = s.drift(x, t) - 0.5 * (1.0 + lam**2) * g2 * np.asarray(score(x, t))
        x = x + drift * dt
        if lam > 0:
            x = x + lam * np.sqrt(g2) * np.sqrt(-dt) * seq.get(i)
        _check_finite(x, i)
        states[i + 1] = x
    return Trajectory(grid=grid, states=states,
                      metadata={"lam": lam, "seed": seed, "kind": "reverse_sde"})


def pf_ode_solve(score, s: Schedule, grid: TimeGrid, x_start,
                 direction: str = "forward") -> Trajectory:
    """Heun integration of the probability-flow ODE dx = [u - g^2 s / 2] dt.

    ``direction`` must agree with the grid: "forward" needs ascending
    times (data toward the prior), "backward" descending times.
    """
    if direction not in ("forward", "backward"):
        raise InvalidParams(f"direction must be forward or backward, got {direction!r}")
    if grid.n_steps > 0:
        ascending = not grid.descending
        if direction == "forward" and not ascending:
            raise InvalidParams("forward integration needs an ascending grid")
        if direction == "backward" and ascending:
            raise InvalidParams("backward integration needs a descending grid")
    x = np.asarray(x_start, dtype=float).copy()

    def f(x, t):
        return s.drift(x, t) - 0.5 * float(s.g2(t)) * np.asarray(score(x, t))

    states = np.empty((grid.n_steps + 1, *x.shape))
    states[0] = x
    times = grid.times
    for i in range(grid.n_steps):
        t, t_next = times[i], times[i + 1]
        dt = t_next - t
        k1 = f(x, t)
        k2 = f(x + dt * k1, t_next)
        x = x + 0.5 * dt * (k1 + k2)
        _check_finite(x, i)
        states[i + 1] = x
    return Trajectory(grid=grid, states=states,
                      metadata={"direction": direction, "kind": "pf_ode"})


def ddbm_reverse_sample(cond_score, s: Schedule, x_T, tau: float,
                        grid: TimeGrid, noise=None) -> Trajectory:
    """Integrate the backward bridge family conditioned on the endpoint x_T.

    The drift is ``u + g^2 h - ((1 + tau^2)/2) g^2 s(x | x_T, t)`` with
    injected noise ``tau g``; tau=0 is deterministic.  The grid must stay
    within (t_clip, T - t_clip] where h is regular.
    """
    if tau < 0:
        raise InvalidParams(f"tau must be >= 0, got {tau}")
    if grid.n_steps > 0 and not grid.descending:
        raise InvalidParams("bridge sampling needs a descending time grid")
    eps_t = 1e-12 * s.T
    if np.any(grid.times > s.T - s.t_clip + eps_t) or np.any(grid.times < s.t_clip - eps_t):
        raise TimeOutOfRange("bridge grid must lie within [t_clip, T - t_clip]")
    seed = noise.seed if isinstance(noise, NoiseSequence) else noise
    x_T = np.asarray(x_T, dtype=float)
    x = x_T.copy()
    seq = _resolve_noise(noise, x.shape, grid.n_steps)
    if tau > 0 and seq is None:
        raise InvalidParams("tau > 0 needs a noise sequence or seed")
    states = np.empty((grid.n_steps + 1, *x.shape))
    states[0] = x
    times = grid.times
    for i in range(grid.n_steps):
        t, t_next = times[i], times[i + 1]
        dt = t_next - t
        g2 = float(s.g2(t))
        h = grad_log_transition_h(s, x, x_T, t)
        drift = s.drift(x, t) + g2 * h \
            - 0.5 * (1.0 + tau**2) * g2 * np.asarray(cond_score(x, x_T, t))
        x = x + drift * dt
        if tau > 0:
            x = x + tau * np.sqrt(g2) * np.sqrt(-dt) * seq.get(i)
        _check_finite(x, i)
        states[i + 1] = x
    return Trajectory(grid=grid, states=states,
                      metadata={"tau": tau, "seed": seed, "kind": "ddbm"})


# ---- canonicalizers ------------------------------------------------------


@dataclass(frozen=True)
class Canonicalizer:
    """Assigns to each x the group element giving its orientation.

    ``canonicalize(c, x)`` returns the first element k (ascending id) whose
    inverse moves x into the reference region: for grids the region holding
    the entry of maximum value (upper half, upper-left quadrant, or its
    above-diagonal wedge), for 2-D points an angular sector at the origin.
    Ties (max on a region boundary) resolve to the smallest element id.
    """

    tag: str
    group: IsometryGroup
    _in_region: callable = field(repr=False, default=None)

    def __call__(self, x: np.ndarray) -> GroupElement:
        return canonicalize(self, x)


def _grid_region_test(tag: str, shape: tuple[int, int]):
    h, w = shape

    def upper(i, j):
        return i < h / 2.0

    def left(i, j):
        return j < w / 2.0

    def quadrant(i, j):
        return i < h / 2.0 and j < w / 2.0

    def wedge(i, j):
        return i < h / 2.0 and j < w / 2.0 and j >= i

    return {"flip_v": upper, "flip_h": left, "C4": quadrant, "D4": wedge}[tag]


def make_canonicalizer(tag: str, shape: tuple[int, int] | None = None) -> Canonicalizer:
    """Build a canonicalizer and its matching group.

    With ``shape`` given the tag names a grid group (flip_v, flip_h, C4,
    D4) and orientation is decided by the location of the maximum entry.
    Without ``shape`` the tag must be C4 or D4 and the canonicalizer acts
    on 2-D points through angular sectors.
    """
    if shape is not None:
        if tag == "flip_v":
            group = make_flip_group("vertical", shape)
        elif tag == "flip_h":
            group = make_flip_group("horizontal", shape)
        elif tag == "C4":
            group = make_c4_group(shape)
        elif tag == "D4":
            group = make_d4_group(shape)
        else:
            raise InvalidParams(f"unknown grid canonicalizer tag {tag!r}")
        region = _grid_region_test(tag, shape)

        def in_region(y: np.ndarray) -> bool:
            # Channels collapse by max so the decision uses the global peak.
            plane = y if y.ndim == 2 else np.max(y, axis=-1)
            pos = int(np.argmax(plane))
            i, j = divmod(pos, shape[1])
            return region(i, j)

        return Canonicalizer(tag=tag, group=group, _in_region=in_region)

    if tag not in ("C4", "D4"):
        raise InvalidParams(f"point canonicalizer tag must be C4 or D4, got {tag!r}")
    n = 4
    group = make_point_group_2d(n, with_reflection=(tag == "D4"))
    sector = 2.0 * np.pi / n if tag == "C4" else np.pi / n

    def in_region(y: np.ndarray) -> bool:
        ang = float(np.arctan2(y[1], y[0])) % (2.0 * np.pi)
        return ang < sector

    return Canonicalizer(tag=tag, group=group, _in_region=in_region)


def default_canonicalizer(group: IsometryGroup) -> Canonicalizer:
    """Infer the canonicalizer matching one of the built-in groups."""
    name = group.name
    el = group.elements[0]
    if el.kind == "grid":
        shape = el.grid_shape
        if name.startswith("flip-v"):
            return make_canonicalizer("flip_v", shape)
        if name.startswith("flip-h"):
            return make_canonicalizer("flip_h", shape)
        if name.startswith("C4"):
            return make_canonicalizer("C4", shape)
        if name.startswith("D4"):
            return make_canonicalizer("D4", shape)
    else:
        if name.startswith("C4"):
            return make_canonicalizer("C4")
        if name.startswith("D4"):
            return make_canonicalizer("D4")
    raise InvalidParams(f"no default canonicalizer for group {name!r}")


def canonicalize(c: Canonicalizer, x: np.ndarray) -> GroupElement:
    """Return the unique k with x in orientation k (ties: smallest id)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1 and c.group.elements[0].kind == "grid":
        raise InvalidParams("grid canonicalizer needs a grid-shaped input")
    for k in c.group.elements:
        y = c.group.inverse(k).apply(x)
        if c._in_region(np.asarray(y).ravel() if k.kind == "matrix" else y):
            return k
    return c.group.identity


def equivariant_noise_sequence(x_ref: np.ndarray, seed: int, G: IsometryGroup,
                               c: Canonicalizer, n: int) -> NoiseSequence:
    """Noise sequence whose orientation follows the reference state.

    The base noises come from (seed, index); the orientation is the unique
    k with phi(x_ref) = k phi(eps_0), i.e. k = c(x_ref) o c(eps_0)^{-1},
    where eps_0 is the first noise consumed.  Replacing x_ref by r x_ref
    yields the sequence {r k eps_i} bit-exactly for grid actions.
    """
    if c.group is not G and c.group.name != G.name:
        raise InvalidParams("canonicalizer group must match G")
    x_ref = np.asarray(x_ref, dtype=float)
    base = NoiseSequence(seed=seed, n=n, shape=x_ref.shape)
    eps0 = base.base(0)
    kappa = G.compose(canonicalize(c, x_ref), G.inverse(canonicalize(c, eps0)))
    return NoiseSequence(seed=seed, n=n, shape=x_ref.shape, orientation=kappa)


def sdedit_denoise(score, s: Schedule, x0_tilde: np.ndarray, t_start: float,
                   grid: TimeGrid, G: IsometryGroup | None = None,
                   use_en: bool = False, seed: int = 0, lam: float = 1.0) -> np.ndarray:
    """Denoise by diffusing to t_start and reverse-sampling back to t_clip.

    With ``use_en`` the forward injection noise and every reverse-step
    noise share one orientation aligned to x0_tilde, so an equivariant
    score makes the whole map commute with the group.
    """
    t_start = float(t_start)
    if not (s.t_clip <= t_start < s.T):
        raise TimeOutOfRange(f"t_start={t_start} outside [t_clip, T)")
    if grid.n_steps > 0:
        if not grid.descending:
            raise InvalidParams("denoising needs a descending grid")
        if abs(grid.times[0] - t_start) > 1e-9 * s.T:
            raise InvalidParams("grid must start at t_start")
    x0_tilde = np.asarray(x0_tilde, dtype=float)
    n_total = grid.n_steps + 1
    if use_en:
        if G is None:
            raise InvalidParams("use_en needs a group")
        seq = equivariant_noise_sequence(x0_tilde, seed, G,
                                         default_canonicalizer(G), n_total)
    else:
        seq = NoiseSequence(seed=seed, n=n_total, shape=x0_tilde.shape)
    x_t = float(s.alpha(t_start)) * x0_tilde + float(s.sigma(t_start)) * seq.get(0)
    traj = reverse_sde_sample(score, s, lam, grid, x_t, noise=seq.shifted(1))
    return traj.terminal


def simulate_drift_only(drift, x0_sampler, grid: TimeGrid, n_chains: int,
                        seed: int = 0) -> np.ndarray:
    """Euler-integrate dx = f(x, t) dt for a batch of chains; no noise.

    ``x0_sampler`` is either an (N, d) array of start states or a callable
    (rng, n) -> (n, d).  Returns the terminal states.
    """
    if callable(x0_sampler):
        x = np.asarray(x0_sampler(_aux_rng(seed), n_chains), dtype=float)
    else:
        x = np.asarray(x0_sampler, dtype=float).copy()
        if x.shape[0] != n_chains:
            raise InvalidParams(f"expected {n_chains} chains, got {x.shape[0]}")
    times = grid.times
    for i in range(grid.n_steps):
        dt = times[i + 1] - times[i]
        x = x + dt * np.asarray(drift(x, times[i]))
        _check_finite(x, i)
    return x
