"""Quantum-jump unravelling of the master equation.

Between jumps the state evolves under ``H_eff`` with exact step propagators
``exp(-i H_eff h)`` for a ladder of dyadic steps ``h = dt * 2**k``.  The
no-jump norm is monotone non-increasing, so a jump fires at the first time
the accumulated norm drops below a pre-drawn uniform threshold, and that time
can be bracketed by galloping up and down the ladder.  The smallest rung is
the jump-time resolution.

Click times are stored in units of ``1/gamma_a``; the model itself runs in
units of ``1/g``.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.linalg

from .model import SystemParams, effective_hamiltonian
from .qspace import GROUND, SpaceDescriptor, build_operators, pure_density

CAVITY = 0
EMITTER = 1
CHANNEL_CODES = {CAVITY: "a", EMITTER: "s"}

DEFAULT_DT = 0.05          # 1/g
DEFAULT_BURN_IN = 50.0     # 1/gamma_a
DEFAULT_RESOLUTION = 1e-3  # 1/gamma_a
DEFAULT_MAX_LEVEL = 16
MONOTONE_TOL = 1e-10


class NormUnderflow(RuntimeError):
    pass


@dataclass(frozen=True)
class ClickRecord:
    times: np.ndarray        # units of 1/gamma_a, strictly ascending
    channels: np.ndarray     # CAVITY or EMITTER per click
    duration: float          # 1/gamma_a
    burn_in: float           # 1/gamma_a
    seed: int
    params: SystemParams
    settings: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.times)

    @property
    def observed_time(self) -> float:
        return self.duration - self.burn_in

    def channel_times(self, channel: int) -> np.ndarray:
        return self.times[self.channels == channel]

    @property
    def cavity_times(self) -> np.ndarray:
        return self.channel_times(CAVITY)

    @property
    def emitter_times(self) -> np.ndarray:
        return self.channel_times(EMITTER)

    def __eq__(self, other):
        if not isinstance(other, ClickRecord):
            return NotImplemented
        return (np.array_equal(self.times, other.times)
                and np.array_equal(self.channels, other.channels)
                and (self.duration, self.burn_in, self.seed, self.params, self.settings)
                == (other.duration, other.burn_in, other.seed, other.params, other.settings))


@dataclass(frozen=True)
class TrajectorySnapshot:
    times: np.ndarray        # 1/gamma_a
    populations: np.ndarray  # (len(times), dim), |<n,s|psi>|^2


class JumpPropagator:
    """Cached exact no-jump propagators on a dyadic ladder of step sizes."""

    def __init__(self, params: SystemParams, space: SpaceDescriptor,
                 dt: float = DEFAULT_DT, resolution: float = DEFAULT_RESOLUTION,
                 max_level: int = DEFAULT_MAX_LEVEL):
        max_rate = max(params.gamma_a, params.gamma_sigma)
        if not dt > 0:
            raise ValueError(f"dt must be > 0, got {dt}")
        if dt * max_rate > 0.5:
            raise ValueError(f"dt={dt} too large: must not exceed 0.5/max rate = {0.5 / max_rate:g}")
        self.params = params
        self.space = space
        self.dt = dt
        ops = build_operators(space)
        self.a, self.sigma = np.array(ops.a), np.array(ops.sigma)
        self.heff = effective_hamiltonian(params, space, ops)
        res_g = resolution / params.gamma_a
        self.min_level = -max(0, math.ceil(math.log2(dt / res_g)))
        self.max_level = max(0, max_level)
        self.steps = np.array([dt * 2.0**k for k in range(self.min_level, self.max_level + 1)])
        self.U = np.stack([scipy.linalg.expm(-1j * self.heff * h) for h in self.steps])

    def propagator(self, h: float) -> np.ndarray:
        return scipy.linalg.expm(-1j * self.heff * h)


def trajectory_seed(master_seed: int, index: int) -> int:
    """Counter-based child seed: depends only on ``(master_seed, index)``."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _run_reference(prop: JumpPropagator, psi0: np.ndarray, t_end: float, burn_in: float,
                   seed: int, snapshot: bool, max_level: int | None = None):
    """Pure-Python loop; same random stream and decisions as the compiled kernel.

    Times are in units of ``1/g``.
    """
    rng = np.random.default_rng(seed)
    gamma_a, gamma_s = prop.params.gamma_a, prop.params.gamma_sigma
    a, sigma, U, steps = prop.a, prop.sigma, prop.U, prop.steps
    lo = 0
    hi = len(steps) - 1 if max_level is None else min(len(steps) - 1, max_level - prop.min_level)
    base = min(-prop.min_level, hi)

    psi = _check_initial(psi0)
    t, survival, threshold = 0.0, 1.0, rng.random()
    level = base
    times, channels = [], []
    snap_t = [0.0] if snapshot else None
    snap_p = [np.abs(psi) ** 2] if snapshot else None

    while t < t_end:
        h = steps[level]
        if t + h > t_end:
            if level > lo:
                level -= 1
                continue
            h = t_end - t
            phi = prop.propagator(h) @ psi
        else:
            phi = U[level] @ psi
        p = _checked_norm(phi, t)
        if survival * p > threshold:
            psi = phi / math.sqrt(p)
            survival *= p
            t += h
            if level < hi and t + h < t_end:
                level += 1
        elif level > lo:
            level -= 1
            continue
        else:
            # Crossing lies within the finest step: jump at its end.
            t += h
            ch, psi = _fire(phi / math.sqrt(p), a, sigma, gamma_a, gamma_s, rng.random())
            if t > burn_in:
                times.append(t)
                channels.append(ch)
            survival, threshold = 1.0, rng.random()
            level = base
        if snapshot:
            snap_t.append(t)
            snap_p.append(np.abs(psi) ** 2)
    snap = (np.array(snap_t), np.array(snap_p)) if snapshot else None
    return np.array(times, dtype=float), np.array(channels, dtype=np.int8), psi, snap


def _check_initial(psi0) -> np.ndarray:
    psi = np.array(psi0, dtype=complex)
    norm0 = np.vdot(psi, psi).real
    if abs(norm0 - 1.0) > 1e-9:
        raise ValueError(f"initial state not normalised (|psi|^2 = {norm0:.12g})")
    return psi


def _checked_norm(phi, t) -> float:
    p = np.vdot(phi, phi).real
    if p > 1.0 + MONOTONE_TOL:
        raise RuntimeError(f"no-jump norm increased ({p:.15g}); H_eff is not dissipative")
    if not p > 0:
        raise NormUnderflow(f"state norm underflow at t={t:.6g}/g")
    return p


def _fire(psi, a, sigma, gamma_a, gamma_s, u):
    ap, sp = a @ psi, sigma @ psi
    wa = gamma_a * np.vdot(ap, ap).real
    ws = gamma_s * np.vdot(sp, sp).real
    if not wa + ws > 0:
        raise NormUnderflow("jump requested from a state with no decay channel")
    if u * (wa + ws) < wa:
        return CAVITY, ap / math.sqrt(np.vdot(ap, ap).real)
    return EMITTER, sp / math.sqrt(np.vdot(sp, sp).real)


# Kernel exit codes.
_DONE, _REMAINDER, _REFILL, _FLUSH, _NOT_MONOTONE, _UNDERFLOW, _DARK = range(7)
_CHUNK = 8192


@numba.njit(cache=True)
def _norm2(v):
    acc = 0.0
    for i in range(v.shape[0]):
        acc += v[i].real * v[i].real + v[i].imag * v[i].imag
    return acc


@numba.njit(cache=True)
def _matvec(M, v, out):
    d = v.shape[0]
    for i in range(d):
        acc = 0j
        for j in range(d):
            acc += M[i, j] * v[j]
        out[i] = acc


@numba.njit(cache=True)
def _kernel(U, steps, a, sigma, gamma_a, gamma_s, psi, t, t_end, burn_in, survival,
            threshold, level, lo, hi, base, uniforms, u_pos, out_t, out_c, tol):
    d = psi.shape[0]
    phi = np.empty(d, dtype=np.complex128)
    tmp = np.empty(d, dtype=np.complex128)
    n_out = 0
    while t < t_end:
        h = steps[level]
        if t + h > t_end:
            if level > lo:
                level -= 1
                continue
            return _REMAINDER, t, survival, threshold, level, u_pos, n_out
        _matvec(U[level], psi, phi)
        p = _norm2(phi)
        if p > 1.0 + tol:
            return _NOT_MONOTONE, t, survival, threshold, level, u_pos, n_out
        if not p > 0.0:
            return _UNDERFLOW, t, survival, threshold, level, u_pos, n_out
        if survival * p > threshold:
            s = 1.0 / np.sqrt(p)
            for i in range(d):
                psi[i] = phi[i] * s
            survival *= p
            t += h
            if level < hi and t + h < t_end:
                level += 1
        elif level > lo:
            level -= 1
        else:
            if u_pos + 2 > uniforms.shape[0]:
                return _REFILL, t, survival, threshold, level, u_pos, n_out
            if n_out >= out_t.shape[0]:
                return _FLUSH, t, survival, threshold, level, u_pos, n_out
            t += h
            s = 1.0 / np.sqrt(p)
            for i in range(d):
                phi[i] *= s
            _matvec(a, phi, tmp)
            wa = gamma_a * _norm2(tmp)
            _matvec(sigma, phi, psi)
            ws = gamma_s * _norm2(psi)
            if not wa + ws > 0.0:
                return _DARK, t, survival, threshold, level, u_pos, n_out
            ch = 0 if uniforms[u_pos] * (wa + ws) < wa else 1
            u_pos += 1
            if ch == 0:
                for i in range(d):
                    psi[i] = tmp[i]
            s = 1.0 / np.sqrt(_norm2(psi))
            for i in range(d):
                psi[i] *= s
            if t > burn_in:
                out_t[n_out] = t
                out_c[n_out] = ch
                n_out += 1
            survival = 1.0
            threshold = uniforms[u_pos]
            u_pos += 1
            level = base
    return _DONE, t, survival, threshold, level, u_pos, n_out


def _run(prop: JumpPropagator, psi0: np.ndarray, t_end: float, burn_in: float, seed: int,
         snapshot: bool = False, max_level: int | None = None):
    """Compiled quantum-jump loop.  Times are in units of ``1/g``."""
    if snapshot:
        return _run_reference(prop, psi0, t_end, burn_in, seed, True, max_level)
    rng = np.random.default_rng(seed)
    gamma_a, gamma_s = prop.params.gamma_a, prop.params.gamma_sigma
    lo = 0
    hi = len(prop.steps) - 1 if max_level is None else min(len(prop.steps) - 1,
                                                            max_level - prop.min_level)
    base = min(-prop.min_level, hi)
    psi = _check_initial(psi0)
    uniforms = rng.random(_CHUNK)
    u_pos = 1
    t, survival, threshold, level = 0.0, 1.0, float(uniforms[0]), base
    out_t = np.empty(_CHUNK)
    out_c = np.empty(_CHUNK, dtype=np.int8)
    times, channels = [], []
    while True:
        status, t, survival, threshold, level, u_pos, n_out = _kernel(
            prop.U, prop.steps, prop.a, prop.sigma, gamma_a, gamma_s, psi, t, t_end,
            burn_in, survival, threshold, level, lo, hi, base, uniforms, u_pos,
            out_t, out_c, MONOTONE_TOL)
        if n_out:
            times.append(out_t[:n_out].copy())
            channels.append(out_c[:n_out].copy())
        if status == _DONE:
            break
        if status == _REFILL:
            uniforms = np.concatenate((uniforms[u_pos:], rng.random(_CHUNK)))
            u_pos = 0
        elif status == _REMAINDER:
            h = t_end - t
            phi = prop.propagator(h) @ psi
            p = _checked_norm(phi, t)
            t = t_end
            if survival * p > threshold:
                psi = phi / math.sqrt(p)
            else:
                if u_pos >= uniforms.size:
                    uniforms = np.concatenate((uniforms[u_pos:], rng.random(_CHUNK)))
                    u_pos = 0
                ch, psi = _fire(phi / math.sqrt(p), prop.a, prop.sigma, gamma_a, gamma_s,
                                uniforms[u_pos])
                if t > burn_in:
                    times.append(np.array([t]))
                    channels.append(np.array([ch], dtype=np.int8))
            break
        elif status == _NOT_MONOTONE:
            raise RuntimeError("no-jump norm increased; H_eff is not dissipative")
        elif status in (_UNDERFLOW, _DARK):
            raise NormUnderflow(f"state norm underflow at t={t:.6g}/g")
    if times:
        return np.concatenate(times), np.concatenate(channels), psi, None
    return np.array([], dtype=float), np.array([], dtype=np.int8), psi, None


def simulate(params: SystemParams, space: SpaceDescriptor, duration: float, seed: int,
             dt: float = DEFAULT_DT, psi0: np.ndarray | None = None,
             burn_in: float = DEFAULT_BURN_IN, snapshot: bool = False,
             resolution: float = DEFAULT_RESOLUTION, max_level: int = DEFAULT_MAX_LEVEL,
             propagator: JumpPropagator | None = None):
    """Run one trajectory and return its :class:`ClickRecord`.

    ``duration``, ``burn_in`` and ``resolution`` are in units of ``1/gamma_a``.
    With ``snapshot=True`` the trajectory is stepped uniformly at ``dt`` and a
    ``(ClickRecord, TrajectorySnapshot)`` pair is returned instead.
    """
    if not duration > burn_in >= 0:
        raise ValueError(f"need duration > burn_in >= 0, got {duration}, {burn_in}")
    prop = propagator or JumpPropagator(params, space, dt, resolution, max_level)
    if psi0 is None:
        psi0 = space.basis_state(0, GROUND)
    ga = params.gamma_a
    times, channels, _, snap = _run(prop, psi0, duration / ga, burn_in / ga, seed, snapshot,
                                    max_level=0 if snapshot else None)
    settings = {"n_max": space.n_max, "dt": dt, "resolution": resolution, "max_level": max_level}
    record = ClickRecord(times * ga, channels, float(duration), float(burn_in), int(seed),
                         params, settings)
    if snapshot:
        return record, TrajectorySnapshot(snap[0] * ga, snap[1])
    return record


def _simulate_job(args):
    params, n_max, duration, seed, dt, burn_in = args
    from .qspace import build_space
    return simulate(params, build_space(n_max), duration, seed, dt=dt, burn_in=burn_in)


def simulate_many(params: SystemParams, space: SpaceDescriptor, duration: float,
                  master_seed: int, n_traj: int, dt: float = DEFAULT_DT,
                  burn_in: float = DEFAULT_BURN_IN, workers: int = 1) -> list[ClickRecord]:
    """Independent trajectories with counter-derived seeds, returned in index order."""
    jobs = [(params, space.n_max, duration, trajectory_seed(master_seed, i), dt, burn_in)
            for i in range(n_traj)]
    if workers <= 1:
        return [_simulate_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_simulate_job, jobs))


def ensemble_state(params: SystemParams, space: SpaceDescriptor, n_traj: int,
                   t_sample: float, master_seed: int, dt: float = DEFAULT_DT,
                   psi0: np.ndarray | None = None) -> np.ndarray:
    """Average of ``|psi><psi|`` over ``n_traj`` trajectories at ``t_sample`` (1/gamma_a)."""
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    prop = JumpPropagator(params, space, dt)
    if psi0 is None:
        psi0 = space.basis_state(0, GROUND)
    rho = np.zeros((space.dim, space.dim), dtype=complex)
    t_end = t_sample / params.gamma_a
    for i in range(n_traj):
        _, _, psi, _ = _run(prop, psi0, t_end, t_end, trajectory_seed(master_seed, i), False)
        rho += pure_density(psi)
    return rho / n_traj


# --- click-record text format -------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def write_click_record(record: ClickRecord, path) -> None:
    """Write ``# key=value`` header lines then ``time,channel`` rows."""
    lines = ["# format=nbundle-clicks/1", "# time_units=1/gamma_a",
             "# rate_units=g", f"# seed={record.seed}",
             f"# duration={_fmt(record.duration)}", f"# burn_in={_fmt(record.burn_in)}"]
    for k, v in record.params.as_dict().items():
        lines.append(f"# param.{k}={_fmt(v)}")
    for k, v in record.settings.items():
        lines.append(f"# setting.{k}={v!r}")
    lines.append("time,channel")
    lines.extend(f"{_fmt(t)},{CHANNEL_CODES[int(c)]}" for t, c in zip(record.times, record.channels))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_click_record(path) -> ClickRecord:
    header, times, channels = {}, [], []
    codes = {v: k for k, v in CHANNEL_CODES.items()}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                header[key] = value
            elif line == "time,channel" or not line:
                continue
            else:
                t, c = line.split(",")
                times.append(float(t))
                channels.append(codes[c])
    params = SystemParams(**{k[len("param."):]: float(v) for k, v in header.items()
                             if k.startswith("param.")})
    settings = {k[len("setting."):]: _literal(v) for k, v in header.items()
                if k.startswith("setting.")}
    return ClickRecord(np.array(times, dtype=float), np.array(channels, dtype=np.int8),
                       float(header["duration"]), float(header["burn_in"]),
                       int(header["seed"]), params, settings)


def _literal(text: str):
    import ast
    return ast.literal_eval(text)
