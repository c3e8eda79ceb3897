"""Z-normalization, shape-based distance and k-shape clustering."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_TIE = 1e-12


class ShapeError(ValueError):
    pass


class UndefinedDistanceError(ShapeError):
    pass


def znormalize(values, eps: float = 1e-12):
    """Zero mean and unit energy (L2 norm 1). Returns ``(z, static)``.

    Constant input has no shape: it maps to the zero vector with ``static=True``.
    """
    x = np.asarray(values, float)
    if x.ndim != 1 or len(x) < 2:
        raise ShapeError("need a 1-D series of length >= 2")
    x = x - x.mean()
    norm = np.linalg.norm(x)
    if norm <= eps * max(1.0, np.abs(values).max() if len(values) else 1.0):
        return np.zeros_like(x), True
    return x / norm, False


def ncc_sequence(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``sum_i x[i] y[i+w]`` for ``w = -(n-1) .. n-1`` via zero-padded FFT, divided by the norms."""
    n = len(x)
    nfft = 1 << (2 * n - 1).bit_length()
    cc = np.fft.irfft(np.conj(np.fft.rfft(x, nfft)) * np.fft.rfft(y, nfft), nfft)
    cc = np.concatenate([cc[-(n - 1):], cc[:n]]) if n > 1 else cc[:1]
    return cc / (np.linalg.norm(x) * np.linalg.norm(y))


def best_shift(ncc: np.ndarray) -> int:
    """Index of the maximum as a shift; ties go to the smallest |shift|, then the negative one."""
    n = (len(ncc) + 1) // 2
    top = ncc.max()
    cand = np.nonzero(ncc >= top - _TIE)[0] - (n - 1)
    return int(min(cand, key=lambda w: (abs(w), w > 0)))


def sbd(x, y, normalize: bool = True):
    """Shape-based distance ``1 - max_w NCC_w(x, y)`` in [0, 2] and the maximizing shift.

    A positive shift ``w`` means ``y`` lags ``x`` by ``w`` samples.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ShapeError("sbd needs two 1-D series of equal length >= 2")
    if normalize:
        (x, sx), (y, sy) = znormalize(x), znormalize(y)
        if sx or sy:
            raise UndefinedDistanceError("sbd undefined for a constant series")
    elif not (np.any(x) and np.any(y)):
        raise UndefinedDistanceError("sbd undefined for an all-zero series")
    ncc = ncc_sequence(x, y)
    w = best_shift(ncc)
    d = 1.0 - ncc[w + len(x) - 1]
    return float(min(max(d, 0.0), 2.0)), w


def shift_series(y: np.ndarray, w: int) -> np.ndarray:
    """``out[i] = y[i + w]`` with zero padding: undoes a lag of ``w``."""
    n = len(y)
    out = np.zeros_like(y)
    if w >= 0:
        out[:n - w] = y[w:]
    else:
        out[-w:] = y[:n + w]
    return out


def shape_extract(members: np.ndarray, reference: np.ndarray | None = None) -> np.ndarray:
    """Centroid maximizing summed squared NCC with the members.

    Members are first aligned to ``reference`` (when it is non-zero); the
    result is the dominant eigenvector of ``Q^T S Q`` with ``S`` the members'
    scatter matrix and ``Q`` the centering matrix. Its sign is chosen to
    correlate positively with ``reference``, else with the members' sum.
    """
    members = np.atleast_2d(np.asarray(members, float))
    m, n = members.shape
    if m == 0:
        return np.zeros(n)
    have_ref = reference is not None and np.any(reference)
    aligned = members
    if have_ref:
        aligned = np.empty_like(members)
        for j, x in enumerate(members):
            if np.any(x):
                _, w = sbd(reference, x, normalize=False)
                aligned[j] = shift_series(x, w)
            else:
                aligned[j] = x
    q = np.eye(n) - 1.0 / n
    s = aligned.T @ aligned
    mat = q.T @ s @ q
    vals, vecs = np.linalg.eigh(mat)
    c = vecs[:, -1]
    if vals[-1] <= 0:
        return np.zeros(n)
    basis = reference if have_ref else aligned.sum(axis=0)
    dot = float(c @ basis)
    if abs(dot) <= 1e-12:
        nz = np.nonzero(np.abs(c) > 1e-12)[0]
        dot = c[nz[0]] if len(nz) else 1.0
    if dot < 0:
        c = -c
    z, static = znormalize(c)
    return np.zeros(n) if static else z


@dataclass
class KShapeResult:
    labels: np.ndarray
    centroids: np.ndarray  # (k, n), z-normalized or zero
    distances: np.ndarray  # SBD of each window to its centroid
    objective: float
    history: list  # objective after every accepted iteration
    iterations: int


def _assign(windows, centroids):
    k = len(centroids)
    d = np.full((len(windows), k), np.inf)
    for j, x in enumerate(windows):
        for c in range(k):
            if np.any(centroids[c]):
                d[j, c] = sbd(x, centroids[c], normalize=False)[0]
    labels = np.argmin(d, axis=1)
    return labels, d[np.arange(len(windows)), labels]


def kshape(windows, k: int, seed: int = 0, max_iter: int = 100, init_labels=None) -> KShapeResult:
    """K-shape on z-normalized, non-constant rows of ``windows``.

    Alternates SBD assignment and shape extraction until memberships stop
    changing. An iteration that would raise the summed SBD is rejected and
    ends the refinement, so the recorded objective never increases.
    """
    x = np.atleast_2d(np.asarray(windows, float))
    m, n = x.shape
    if k < 1 or k > m:
        raise ShapeError(f"k={k} needs at least k non-static windows, got {m}")
    if not np.all(np.any(x != 0, axis=1)):
        raise ShapeError("constant windows cannot be clustered")
    rng = np.random.default_rng(seed)
    if init_labels is None:
        labels = rng.permutation(np.arange(m) % k)
    else:
        labels = np.asarray(init_labels, int).copy()
    centroids = np.zeros((k, n))
    best = None
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        new_c = np.array([shape_extract(x[labels == c], centroids[c]) for c in range(k)])
        new_labels, dist = _assign(x, new_c)
        # empty clusters take the worst-fitting window of the crowd
        for c in range(k):
            if not np.any(new_labels == c):
                counts = np.bincount(new_labels, minlength=k)
                donors = np.nonzero(counts[new_labels] > 1)[0]
                j = donors[np.argmax(dist[donors])]
                new_labels[j] = c
                new_c[c] = x[j]
                dist[j] = 0.0
        obj = float(dist.sum())
        if best is not None and obj > best.objective + 1e-12:
            break
        changed = best is None or np.any(new_labels != best.labels)
        best = KShapeResult(new_labels.copy(), new_c, dist, obj, history, it)
        history.append(obj)
        centroids, labels = new_c, new_labels
        if not changed:
            break
    best.iterations = it
    return best
