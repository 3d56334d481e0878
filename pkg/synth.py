"""
Synthetic test images: labelings drawn from the Potts prior by raster-scan
Gibbs sampling, and colors drawn from the per-label Gaussians.

Random numbers come from numpy's Generator with the PCG64 bit generator
(a documented algorithm with identical output on every platform); the Gibbs
kernel itself consumes pre-drawn uniforms so it stays deterministic under
numba compilation.
"""
from typing import Optional

import numpy as np
from numba import njit

from colormodel import GaussianLabelModel
from errors import UsageError
from grid import ColorImage, LabelField, Torus

# uniforms drawn per call of the compiled kernel
SWEEP_BLOCK_DRAWS = 1 << 22


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


@njit(cache=True)
def _gibbs_sweeps(labels, alpha, q, uniforms, n_sweeps, record_every, records, first_record):
    """
    Raster-scan sweeps over labels (H, W) in place. Site (x, y) is resampled
    from P(xi) ~ exp(alpha/2 * #{neighbours equal to xi}) by inverting the
    CDF with one uniform. On an axis of length 2 the single neighbour along
    it is counted once. Every `record_every`-th sweep the state is copied
    into records[first_record + k]. Returns the number of states recorded.
    """
    height, width = labels.shape
    weights = np.empty(q)
    half = 0.5 * alpha
    u = 0
    recorded = 0
    for sweep in range(n_sweeps):
        for y in range(height):
            for x in range(width):
                for k in range(q):
                    weights[k] = 0.0
                weights[labels[y, (x + 1) % width]] += 1.0
                if width > 2:
                    weights[labels[y, (x - 1) % width]] += 1.0
                weights[labels[(y + 1) % height, x]] += 1.0
                if height > 2:
                    weights[labels[(y - 1) % height, x]] += 1.0
                total = 0.0
                for k in range(q):
                    weights[k] = np.exp(half * weights[k])
                    total += weights[k]
                target = uniforms[u] * total
                u += 1
                acc = 0.0
                chosen = q - 1
                for k in range(q):
                    acc += weights[k]
                    if target < acc:
                        chosen = k
                        break
                labels[y, x] = chosen
        if record_every > 0 and (sweep + 1) % record_every == 0:
            records[first_record + recorded] = labels
            recorded += 1
    return recorded


def potts_chain(t: Torus, alpha: float, q: int, seed: int, sweeps: int,
                record_every: int = 0, initial: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Run `sweeps` Gibbs sweeps from a uniformly random (or given) labeling.

    Returns the recorded states, shape (sweeps // record_every, H, W), or
    only the final state with shape (1, H, W) when record_every is 0.
    """
    if int(q) != q or q < 2:
        raise UsageError(f"number of labels q must be an integer >= 2, got {q}")
    if not np.isfinite(alpha) or alpha < 0:
        raise UsageError(f"alpha must be finite and non-negative, got {alpha}")
    if sweeps < 1:
        raise UsageError(f"sweeps must be >= 1, got {sweeps}")

    rng = make_rng(seed)
    if initial is None:
        labels = rng.integers(0, q, size=t.shape).astype(np.int64)
    else:
        initial = np.asarray(initial)
        if initial.shape != t.shape:
            raise UsageError(f"initial labeling must have shape {t.shape}, got {initial.shape}")
        labels = initial.astype(np.int64)
        if np.any(labels != initial) or labels.min() < 0 or labels.max() >= q:
            raise UsageError(f"initial labels must be integers in [0, {q}), got {initial.min()}..{initial.max()}")

    n_records = sweeps // record_every if record_every > 0 else 0
    records = np.empty((max(n_records, 1),) + t.shape, dtype=np.int64)
    block = max(1, SWEEP_BLOCK_DRAWS // t.num_sites)
    # keep record boundaries aligned with blocks
    if record_every > 0:
        block = max(record_every, block - block % record_every)

    done = 0
    recorded = 0
    while done < sweeps:
        n = min(block, sweeps - done)
        uniforms = rng.random(n * t.num_sites)
        recorded += _gibbs_sweeps(labels, float(alpha), int(q), uniforms, n,
                                  record_every, records, recorded)
        done += n

    if record_every > 0:
        return records[:recorded]
    return labels[None, ...]


def sample_potts(t: Torus, alpha: float, q: int, seed: int, sweeps: int) -> LabelField:
    """Labeling after `sweeps` raster-scan Gibbs sweeps (the burn-in), no thinning"""
    return LabelField(t, potts_chain(t, alpha, q, seed, sweeps)[0], q)


def sample_image(labels: LabelField, model: GaussianLabelModel, seed: int) -> ColorImage:
    """d_i = m(a_i) + L(a_i) z_i with L the Cholesky factor of C(a_i) and z_i standard normal"""
    if labels.q > model.q:
        raise UsageError(f"label field has q={labels.q}, model only {model.q} labels")
    rng = make_rng(seed)
    flat = labels.labels.ravel()
    z = rng.standard_normal((flat.size, 3))
    noise = np.einsum('nij,nj->ni', model.factors[flat], z)
    pixels = model.means[flat] + noise
    return ColorImage(labels.torus, pixels.reshape(labels.torus.shape + (3,)))


def default_palette(q: int) -> np.ndarray:
    """Gray levels evenly spaced over [0.2, 0.8], one per label"""
    levels = np.linspace(0.2, 0.8, q)
    return np.repeat(levels[:, None], 3, axis=1)


def isotropic_model(means, sigma: float) -> GaussianLabelModel:
    means = np.asarray(means, dtype=np.float64)
    covs = np.repeat((sigma ** 2 * np.eye(3))[None], means.shape[0], axis=0)
    return GaussianLabelModel(means, covs)
