"""Per-category linear statistical shape models.

A model is the mean of the flattened training parts plus the top ``q``
eigenvectors/eigenvalues of their sample covariance (divisor n-1). Parts
encode into whitened coefficients ``z = diag(1/sqrt(lam)) Q^T (x - mean)``
so training latents have zero mean and unit sample variance, and decode as

    x = mean + Q (z * sqrt(lam))

Eigendecomposition runs on the n x n Gram matrix when n < 3p, otherwise on
the 3p x 3p covariance; both give identical eigenpairs on the data span.
Eigenvector signs are canonicalized (largest-magnitude entry positive) so
fits are bit-reproducible.
"""

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import geometry, kernels
from .errors import DataFormatError, NumericalError, ValidationError

RANK_EPS = 1e-10

SSM_MAGIC = b"PARTSSM\x00"
SSM_VERSION = 1


@dataclass(frozen=True)
class PartSSM:
    category_id: int
    p: int
    q: int
    mean: np.ndarray         # (3p,)
    basis: np.ndarray        # (3p, q) orthonormal columns
    eigenvalues: np.ndarray  # (q,) positive, descending

    @property
    def mean_shape(self):
        return self.mean.reshape(self.p, 3)

    def __post_init__(self):
        if self.basis.shape != (3 * self.p, self.q):
            raise ValidationError("basis shape does not match p, q")
        if self.eigenvalues.shape != (self.q,):
            raise ValidationError("eigenvalue count does not match q")


def _stack_parts(parts):
    clouds = [geometry.as_cloud(c, f"part {i}") for i, c in enumerate(parts)]
    p = clouds[0].shape[0]
    for i, c in enumerate(clouds):
        if c.shape[0] != p:
            raise ValidationError(f"part {i} has {c.shape[0]} points, expected {p}")
    return np.stack([c.reshape(-1) for c in clouds]), p


def fit_ssm(parts, q, category_id=0):
    """Fit a PartSSM to corresponded part clouds.

    ``q`` is clamped (with a warning) when the data rank is lower: eigenvalues
    below ``RANK_EPS`` are never retained. All-identical inputs have rank 0
    and raise.
    """
    X, p = _stack_parts(parts)
    n = X.shape[0]
    if n < 2:
        raise ValidationError("need at least 2 shapes to fit an SSM")
    d = 3 * p
    q_max = min(n - 1, d)
    if not 1 <= q <= q_max:
        raise ValidationError(f"q must be in [1, {q_max}], got {q}")
    mean = X.mean(axis=0)
    Xc = X - mean

    if n - 1 < d:
        # Gram-matrix route: eigenvalues match the covariance spectrum
        G = (Xc @ Xc.T) / (n - 1)
        lam, U = np.linalg.eigh(G)
    else:
        C = (Xc.T @ Xc) / (n - 1)
        lam, U = np.linalg.eigh(C)
    order = np.argsort(lam)[::-1]
    lam = lam[order]
    U = U[:, order]

    rank = int(np.sum(lam > RANK_EPS))
    if rank == 0:
        raise NumericalError("zero covariance: all training parts identical")
    if q > rank:
        warnings.warn(
            f"requested q={q} exceeds data rank {rank}; clamping", stacklevel=2)
        q = rank
    lam = lam[:q]
    U = U[:, :q]

    if n - 1 < d:
        basis = Xc.T @ U
        basis /= np.sqrt(lam * (n - 1))[None, :]
    else:
        basis = U

    # canonical signs: largest-magnitude entry of each column positive
    flip = basis[np.argmax(np.abs(basis), axis=0), np.arange(q)] < 0
    basis[:, flip] *= -1.0

    return PartSSM(category_id=category_id, p=p, q=q, mean=mean,
                   basis=np.ascontiguousarray(basis),
                   eigenvalues=np.ascontiguousarray(lam))


def spectrum(parts):
    """Full covariance spectrum (descending), for explained-variance reports."""
    X, _ = _stack_parts(parts)
    n = X.shape[0]
    Xc = X - X.mean(axis=0)
    if n - 1 < Xc.shape[1]:
        lam = np.linalg.eigvalsh((Xc @ Xc.T) / (n - 1))
    else:
        lam = np.linalg.eigvalsh((Xc.T @ Xc) / (n - 1))
    return np.sort(np.clip(lam, 0.0, None))[::-1]


def encode_part(model, cloud):
    """Whitened latent of a corresponded cloud: ``diag(lam^-1/2) Q^T (x - mean)``."""
    x = geometry.as_cloud(cloud)
    if x.shape[0] != model.p:
        raise ValidationError(f"cloud has {x.shape[0]} points, model expects {model.p}")
    y = model.basis.T @ (x.reshape(-1) - model.mean)
    return y / np.sqrt(model.eigenvalues)


def decode_part(model, z):
    """Decode a latent: ``mean + Q (z * sqrt(lam))``, reshaped to (p, 3)."""
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if z.shape[0] != model.q:
        raise ValidationError(f"latent has {z.shape[0]} dims, model expects {model.q}")
    x = model.mean + model.basis @ (z * np.sqrt(model.eigenvalues))
    return x.reshape(model.p, 3)


def fit_latent_least_squares(model, observed, ridge=1e-3, max_iters=50,
                             return_trace=False):
    """Fit a latent to an unordered partial observation.

    Alternates (a) assigning each observed point to the nearest point of the
    currently decoded shape and (b) solving the ridge-regularized normal
    equations for the latent in closed form, until the assignment reaches a
    fixed point. Coordinate descent on the joint objective, so the trace of
    objective values is non-increasing.
    """
    obs = geometry.as_cloud(observed, "observed")
    if ridge < 0:
        raise ValidationError("ridge must be >= 0")
    scaled = model.basis * np.sqrt(model.eigenvalues)[None, :]   # (3p, q)
    rows = scaled.reshape(model.p, 3, model.q)
    mean_pts = model.mean_shape

    z = np.zeros(model.q)
    assign = None
    trace = []

    def objective(zv, idx):
        resid = obs - (mean_pts[idx] + rows[idx] @ zv)
        return float(np.sum(resid**2) + ridge * np.sum(zv**2))

    rank = model.q
    for _ in range(max_iters):
        decoded = decode_part(model, z)
        idx, _ = kernels.nn_sqdist(obs, decoded)
        trace.append(objective(z, idx))
        if assign is not None and np.array_equal(idx, assign):
            break
        assign = idx
        A = rows[idx].reshape(-1, model.q)             # (3k, q)
        b = (obs - mean_pts[idx]).reshape(-1)
        if ridge == 0.0:
            # min-norm least squares; transiently deficient assignments are
            # tolerated, deficiency of the converged system raises below
            z, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
        else:
            ata = A.T @ A + ridge * np.eye(model.q)
            z = np.linalg.solve(ata, A.T @ b)
        trace.append(objective(z, idx))

    if ridge == 0.0 and rank < model.q:
        raise NumericalError(
            "singular normal equations at convergence; observation does not "
            "constrain every latent dimension (use ridge > 0)")
    decoded = decode_part(model, z)
    idx, sqd = kernels.nn_sqdist(obs, decoded)
    residual = float(np.mean(np.sum((obs - decoded[idx]) ** 2, axis=1)))
    if return_trace:
        return z, residual, trace
    return z, residual


# ---------------------------------------------------------------------------
# Binary checkpoint: ssm_<category>.bin


def save_ssm(model, path):
    """Little-endian layout: magic, version u32, category u32, p u32, q u32,
    then mean (3p f64), basis column-major (3p*q f64), eigenvalues (q f64)."""
    path = Path(path)
    blob = bytearray(SSM_MAGIC)
    blob += struct.pack("<IIII", SSM_VERSION, model.category_id, model.p, model.q)
    blob += model.mean.astype("<f8").tobytes()
    blob += np.asfortranarray(model.basis).astype("<f8").tobytes(order="F")
    blob += model.eigenvalues.astype("<f8").tobytes()
    path.write_bytes(bytes(blob))
    return path


def load_ssm(path):
    blob = Path(path).read_bytes()
    if blob[:8] != SSM_MAGIC:
        raise DataFormatError(f"{path}: not an SSM checkpoint")
    version, cid, p, q = struct.unpack_from("<IIII", blob, 8)
    if version != SSM_VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    d = 3 * p
    want = 8 + 16 + 8 * (d + d * q + q)
    if len(blob) != want:
        raise DataFormatError(f"{path}: truncated or oversized ({len(blob)} vs {want} bytes)")
    off = 24
    mean = np.frombuffer(blob, dtype="<f8", count=d, offset=off).copy()
    off += 8 * d
    basis = np.frombuffer(blob, dtype="<f8", count=d * q, offset=off)
    basis = basis.reshape(d, q, order="F").copy()
    off += 8 * d * q
    lam = np.frombuffer(blob, dtype="<f8", count=q, offset=off).copy()
    return PartSSM(category_id=cid, p=p, q=q, mean=mean,
                   basis=np.ascontiguousarray(basis), eigenvalues=lam)


def ssm_filename(category_id):
    return f"ssm_{category_id}.bin"
