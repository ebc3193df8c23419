"""Discrete-time systems ``x+ = f(x, u, w)`` with interval extensions.

Every model supplies a vectorised point map and an interval extension that
over-approximates the image of a state box and a noise box.  The one-step
reachable set of a region under a noise cell is that box; the unbounded tail
cell maps to the whole space.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import UNIVERSE, Rect
from .noise import DiagonalGaussian, UniformBox

# outward padding applied to every interval image; covers float rounding
# between the interval bounds and pointwise evaluation of f
REACH_PAD = 1e-12


class CatalogError(KeyError):
    pass


@dataclass(frozen=True)
class Action:
    """Control input, possibly a box of inputs when ``lower != upper``."""

    name: str
    lower: tuple
    upper: tuple

    @classmethod
    def point(cls, name, u):
        u = tuple(np.atleast_1d(np.asarray(u, dtype=float)).tolist())
        return cls(name, u, u)

    @property
    def value(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.lower) + np.asarray(self.upper))

    def to_dict(self):
        return {"name": self.name, "lower": list(self.lower), "upper": list(self.upper)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["name"], tuple(d["lower"]), tuple(d["upper"]))


def imul(alo, ahi, blo, bhi):
    """Interval product, elementwise."""
    cands = np.stack([alo * blo, alo * bhi, ahi * blo, ahi * bhi])
    return cands.min(axis=0), cands.max(axis=0)


def affine_image(M, lo, hi):
    """Tight box of ``{M v : lo <= v <= hi}``."""
    M = np.asarray(M, dtype=float)
    c, r = 0.5 * (lo + hi), 0.5 * (hi - lo)
    mc, mr = M @ c, np.abs(M) @ r
    return mc - mr, mc + mr


def _cos_range(lo, hi):
    """Exact range of cos over [lo, hi] via its monotone pieces."""
    if hi - lo >= 2 * np.pi:
        return -1.0, 1.0
    vals = [np.cos(lo), np.cos(hi)]
    k = np.ceil(lo / np.pi)
    while k * np.pi <= hi:
        vals.append(1.0 if int(k) % 2 == 0 else -1.0)
        k += 1
    return float(min(vals)), float(max(vals))


def trig_range(lo, hi):
    """Ranges ``(cos_lo, cos_hi, sin_lo, sin_hi)`` over the heading interval."""
    c_lo, c_hi = _cos_range(lo, hi)
    s_lo, s_hi = _cos_range(lo - np.pi / 2, hi - np.pi / 2)
    return c_lo, c_hi, s_lo, s_hi


@dataclass(frozen=True, eq=False)
class SystemModel:
    name: str
    dim: int
    noise_dim: int
    actions: tuple
    params: dict = field(default_factory=dict)

    def f(self, x, u, w) -> np.ndarray:
        raise NotImplementedError

    def interval(self, xlo, xhi, ulo, uhi, wlo, whi):
        raise NotImplementedError

    def step(self, x, action_index, w) -> np.ndarray:
        """Vectorised successor with per-row action indices."""
        x = np.atleast_2d(x)
        w = np.atleast_2d(w)
        action_index = np.broadcast_to(np.asarray(action_index), (x.shape[0],))
        out = np.empty_like(x)
        for a in np.unique(action_index):
            rows = action_index == a
            out[rows] = self.f(x[rows], self.actions[a].value, w[rows])
        return out

    def to_dict(self):
        return {"name": self.name, "params": self.params}


class AffineSystem(SystemModel):
    """``x+ = A x + B u + b + G w`` with the exact interval bounding box."""

    def __init__(self, name, A, B, G, b=None, actions=(), params=None):
        A, B, G = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, G))
        if B.shape[0] != A.shape[0] and B.shape[1] == A.shape[0]:
            B = B.T
        if G.shape[0] != A.shape[0] and G.shape[1] == A.shape[0]:
            G = G.T
        super().__init__(name, A.shape[0], G.shape[1], tuple(actions), dict(params or {}))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "b", np.zeros(A.shape[0]) if b is None else np.asarray(b, dtype=float))

    def f(self, x, u, w):
        x, w = np.atleast_2d(x), np.atleast_2d(w)
        return x @ self.A.T + np.asarray(u, dtype=float) @ self.B.T + self.b + w @ self.G.T

    def interval(self, xlo, xhi, ulo, uhi, wlo, whi):
        parts = [affine_image(self.A, xlo, xhi), affine_image(self.B, ulo, uhi), affine_image(self.G, wlo, whi)]
        lo = self.b + sum(p[0] for p in parts)
        hi = self.b + sum(p[1] for p in parts)
        return lo, hi


class Unicycle3D(SystemModel):
    """Position advances along the heading; speed and yaw rate carry noise.

    ``px+ = px + dt (v + w_v) cos th``, ``py+ = py + dt (v + w_v) sin th``,
    ``th+ = th + dt (omega + w_om)``.
    """

    def __init__(self, name, dt, actions, params=None):
        super().__init__(name, 3, 2, tuple(actions), dict(params or {}))
        object.__setattr__(self, "dt", float(dt))

    def f(self, x, u, w):
        x, w = np.atleast_2d(x), np.atleast_2d(w)
        u = np.asarray(u, dtype=float)
        speed = u[..., 0] + w[:, 0]
        th = x[:, 2]
        return np.stack([
            x[:, 0] + self.dt * speed * np.cos(th),
            x[:, 1] + self.dt * speed * np.sin(th),
            th + self.dt * (u[..., 1] + w[:, 1]),
        ], axis=1)

    def interval(self, xlo, xhi, ulo, uhi, wlo, whi):
        c_lo, c_hi, s_lo, s_hi = trig_range(xlo[2], xhi[2])
        sp_lo, sp_hi = ulo[0] + wlo[0], uhi[0] + whi[0]
        dx = imul(sp_lo, sp_hi, c_lo, c_hi)
        dy = imul(sp_lo, sp_hi, s_lo, s_hi)
        lo = np.array([xlo[0] + self.dt * dx[0], xlo[1] + self.dt * dy[0], xlo[2] + self.dt * (ulo[1] + wlo[1])])
        hi = np.array([xhi[0] + self.dt * dx[1], xhi[1] + self.dt * dy[1], xhi[2] + self.dt * (uhi[1] + whi[1])])
        return lo, hi


class RoomsSystem(SystemModel):
    """Linear thermal coupling between rooms with multiplicative ambient noise.

    ``x+ = x + dt (L x + beta (T_amb - x) (1 + w) + b_u u)`` where ``L`` is the
    graph Laplacian of a chain of rooms scaled by ``alpha``.  The term
    ``(T_amb - x) w`` is bounded by an interval product, so the extension is
    affine in the noise box.
    """

    def __init__(self, name, n, dt, alpha, beta, t_amb, b_u, actions, params=None):
        super().__init__(name, n, n, tuple(actions), dict(params or {}))
        L = np.zeros((n, n))
        for i in range(n - 1):
            L[i, i + 1] = L[i + 1, i] = alpha
            L[i, i] -= alpha
            L[i + 1, i + 1] -= alpha
        M = np.eye(n) + dt * (L - beta * np.eye(n))
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "dt", float(dt))
        object.__setattr__(self, "beta", float(beta))
        object.__setattr__(self, "t_amb", float(t_amb))
        object.__setattr__(self, "b_u", float(b_u))

    def f(self, x, u, w):
        x, w = np.atleast_2d(x), np.atleast_2d(w)
        u = np.asarray(u, dtype=float)
        return (x @ self.M.T + self.dt * self.beta * self.t_amb
                + self.dt * self.beta * (self.t_amb - x) * w + self.dt * self.b_u * u)

    def interval(self, xlo, xhi, ulo, uhi, wlo, whi):
        lin_lo, lin_hi = affine_image(self.M, xlo, xhi)
        m_lo, m_hi = imul(self.t_amb - xhi, self.t_amb - xlo, wlo, whi)
        k = self.dt * self.beta
        lo = lin_lo + k * self.t_amb + k * m_lo + self.dt * self.b_u * np.asarray(ulo)
        hi = lin_hi + k * self.t_amb + k * m_hi + self.dt * self.b_u * np.asarray(uhi)
        return lo, hi


def reach(system: SystemModel, s: Rect, a: int, c):
    """Over-approximated one-step reachable box of region ``s`` under noise cell ``c``."""
    if c is UNIVERSE:
        return UNIVERSE
    act = system.actions[a]
    lo, hi = system.interval(s.lower, s.upper, np.asarray(act.lower), np.asarray(act.upper), c.lower, c.upper)
    return Rect(lo, hi).padded(REACH_PAD)


def _example1(**_):
    sys = AffineSystem(
        "example1",
        A=[[0.5, 0.2], [0.0, 0.5]],
        B=[[0.25], [0.7]],
        G=[[0.0], [2.4]],
        actions=[Action.point("a", [1.0])],
    )
    return sys, UniformBox((-1.0,), (1.0,))


def _compass(n_dirs, speed):
    return [Action.point(f"dir{k}", speed * np.array([np.cos(2 * np.pi * k / n_dirs), np.sin(2 * np.pi * k / n_dirs)]))
            for k in range(n_dirs)]


def _affine2d(A=None, B=None, G=None, b=None, n_dirs=8, speed=0.15, noise_std=0.3, noise_gain=0.035,
              inputs=None, **_):
    A = np.eye(2) if A is None else A
    B = np.eye(2) if B is None else B
    G = noise_gain * np.eye(2) if G is None else G
    if inputs is None:
        actions = _compass(n_dirs, speed)
    else:
        actions = [Action.point(f"u{k}", u) for k, u in enumerate(inputs)]
    params = dict(A=np.asarray(A).tolist(), B=np.asarray(B).tolist(), G=np.asarray(G).tolist(),
                  b=None if b is None else list(b), n_dirs=n_dirs, speed=speed, noise_std=noise_std,
                  noise_gain=noise_gain, inputs=inputs)
    sys = AffineSystem("affine2d", A, B, G, b, actions, params)
    return sys, DiagonalGaussian((0.0, 0.0), (noise_std, noise_std))


def _unicycle3d(dt=0.1, speeds=(0.5,), turn_rates=(-1.0, 0.0, 1.0), speed_std=0.5, yaw_std=0.5, **_):
    actions = [Action.point(f"v{v}_w{om}", [v, om]) for v in speeds for om in turn_rates]
    params = dict(dt=dt, speeds=list(speeds), turn_rates=list(turn_rates), speed_std=speed_std, yaw_std=yaw_std)
    sys = Unicycle3D("unicycle3d", dt, actions, params)
    return sys, DiagonalGaussian((0.0, 0.0), (speed_std, yaw_std))


def _rooms(n=2, dt=0.25, alpha=0.2, beta=0.1, t_amb=10.0, b_u=4.0, heater_levels=(0.0, 0.5, 1.0),
           noise_std=0.01, **_):
    if n not in (2, 3, 4):
        raise ValueError("rooms_n supports n in {2, 3, 4}")
    actions = [Action.point(f"h{h}", np.full(n, h)) for h in heater_levels]
    params = dict(n=n, dt=dt, alpha=alpha, beta=beta, t_amb=t_amb, b_u=b_u,
                  heater_levels=list(heater_levels), noise_std=noise_std)
    sys = RoomsSystem(f"rooms_{n}", n, dt, alpha, beta, t_amb, b_u, actions, params)
    return sys, DiagonalGaussian(tuple([0.0] * n), tuple([noise_std] * n))


_CATALOG = {
    "example1": _example1,
    "affine2d": _affine2d,
    "unicycle3d": _unicycle3d,
    "rooms_n": _rooms,
}


def builtin_systems() -> dict:
    """Factories ``name -> (**params) -> (SystemModel, noise model)``."""
    return dict(_CATALOG)


def make_system(name: str, **params):
    if name.startswith("rooms_") and name[6:].isdigit():
        params.setdefault("n", int(name[6:]))
        name = "rooms_n"
    try:
        factory = _CATALOG[name]
    except KeyError:
        raise CatalogError(f"unknown system {name!r}; known: {sorted(_CATALOG)}") from None
    return factory(**params)
