"""Seeded synthetic weights and activation-variance traces.

All randomness comes from ``numpy.random.default_rng(seed)`` (PCG64), so a
seed reproduces the same bundle on any platform with the same numpy major
version.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidInput
from .linalg import hadamard_matrix, is_power_of_two, svd
from .model import Layer, ModelBundle
from .vatmp import TemporalTrace

PROFILES = ("monotone", "bump", "constant")


@dataclass
class SyntheticModelSpec:
    n_layers: int = 8
    dims: list[tuple[int, int]] = field(default_factory=lambda: [(64, 64)])
    spread: float = 100.0
    block: tuple[int, int] | None = (16, 16)
    planted_rank: int = 8
    block_energy: float = 0.25
    noise_energy: float = 0.01
    inactive: tuple[int, ...] = ()
    seed: int = 0
    name: str = "synthetic"

    def layer_dims(self, i: int) -> tuple[int, int]:
        return tuple(self.dims[i % len(self.dims)])


def _unit_energy(m: np.ndarray) -> np.ndarray:
    e = float(np.mean(m * m))
    return m / np.sqrt(e) if e > 0 else m


def _complement_basis(rng: np.random.Generator, basis: np.ndarray, n: int, k: int) -> np.ndarray:
    """``k`` orthonormal random vectors of length ``n`` orthogonal to ``basis`` columns."""
    g = rng.standard_normal((n, k))
    if basis.shape[1] and basis.shape[1] + k <= n:
        g -= basis @ (basis.T @ g)
    q, _ = np.linalg.qr(g)
    return q


def planted_hadamard_weight(
    rng: np.random.Generator,
    out: int,
    inp: int,
    planted_rank: int,
    block: tuple[int, int] | None,
    block_energy: float,
    noise_energy: float,
) -> np.ndarray:
    """Global low-rank + block-wise rank-1 + noise, each part at a set per-entry energy.

    The global part has at least unit per-entry energy, singular values
    decaying linearly to half the largest (and at least twice the largest
    block singular value), and row/column spaces orthogonal to the
    block part whenever the dimensions leave room, so a rank-``planted_rank``
    truncated SVD recovers it and leaves the block structure in the residual.
    """
    tiled = np.zeros((out, inp))
    if block is not None and block_energy > 0:
        s_o, s_i = block
        if out % s_o or inp % s_i:
            raise InvalidInput(f"block {block} does not tile {out}x{inp}")
        p, q = out // s_o, inp // s_i
        u = rng.standard_normal((p, q, s_o))
        v = rng.standard_normal((p, q, s_i))
        amp = rng.uniform(0.5, 1.5, (p, q))
        tiles = amp[..., None, None] * u[..., :, None] * v[..., None, :]
        tiled = np.sqrt(block_energy) * _unit_energy(tiles.swapaxes(1, 2).reshape(out, inp))
    w = tiled.copy()
    k = min(planted_rank, out, inp)
    if k > 0:
        f = svd(tiled)
        keep = f.singular_values > 1e-10 * max(float(f.singular_values[0]), 1e-300)
        left = _complement_basis(rng, f.left[:, keep], out, k)
        right = _complement_basis(rng, f.right[keep].T, inp, k)
        decay = np.linspace(1.0, 0.5, k)
        floor = 4.0 * float(f.singular_values[0]) if f.singular_values.size else 0.0
        sigma = decay * max(np.sqrt(out * inp / np.sum(decay**2)), floor)
        w += (left * sigma) @ right.T
    if noise_energy > 0:
        w += np.sqrt(noise_energy) * rng.standard_normal((out, inp))
    return w


def generate_synthetic_model(spec: SyntheticModelSpec) -> ModelBundle:
    """Layers whose Hadamard-domain mean row variances span ``spread`` geometrically.

    Weights are rounded to float32 so the bundle survives a save/load round
    trip unchanged.
    """
    if spec.n_layers < 1:
        raise InvalidInput("n_layers must be >= 1")
    if spec.spread < 1:
        raise InvalidInput("spread must be >= 1")
    rng = np.random.default_rng(spec.seed)
    n = spec.n_layers
    targets = spec.spread ** (np.arange(n) / max(n - 1, 1))
    targets = targets[rng.permutation(n)]
    layers = []
    for i in range(n):
        out, inp = spec.layer_dims(i)
        if not is_power_of_two(inp):
            raise InvalidInput(f"layer {i}: input dimension {inp} is not a power of two")
        w_h = planted_hadamard_weight(
            rng, out, inp, spec.planted_rank, spec.block, spec.block_energy, spec.noise_energy
        )
        w_h *= np.sqrt(targets[i] / np.var(w_h, axis=1).mean())
        w = (w_h @ hadamard_matrix(inp).T).astype(np.float32).astype(np.float64)
        layers.append(Layer(f"layer{i:02d}", w, i not in spec.inactive))
    meta = asdict(spec)
    meta["dims"] = [list(d) for d in spec.dims]
    meta["block"] = None if spec.block is None else list(spec.block)
    meta["inactive"] = list(spec.inactive)
    return ModelBundle(spec.name, layers, meta)


def _profile(rng: np.random.Generator, steps: int, profile: str) -> np.ndarray:
    t = np.arange(steps, dtype=np.float64)
    if profile == "constant":
        return np.ones(steps)
    jitter = 1.0 + 0.05 * rng.uniform(-1.0, 1.0, steps)
    if profile == "monotone":
        base = np.exp(-3.0 * t / max(steps - 1, 1)) * jitter
        return np.sort(base)[::-1].copy()
    if profile == "bump":
        center = rng.uniform(0.4, 0.6) * (steps - 1)
        width = max(steps / 6.0, 0.5)
        return (0.2 + np.exp(-0.5 * ((t - center) / width) ** 2)) * jitter
    raise InvalidInput(f"unknown profile {profile!r}; expected one of {PROFILES}")


def generate_synthetic_traces(
    layer_ids,
    steps: int,
    profile: str = "bump",
    scale: float = 1.0,
    seed: int = 0,
) -> list[TemporalTrace]:
    """One variance trace per layer; per-layer amplitude is log-uniform in [scale/10, 10 scale]."""
    if steps < 1:
        raise InvalidInput("steps must be >= 1")
    rng = np.random.default_rng(seed)
    traces = []
    for lid in layer_ids:
        amp = scale * 10.0 ** rng.uniform(-1.0, 1.0)
        traces.append(TemporalTrace(lid, amp * _profile(rng, steps, profile)))
    return traces
