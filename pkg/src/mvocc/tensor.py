"""Dense float64 tensors, deterministic random streams and symmetric linear algebra."""

import hashlib
import logging
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConvergenceError, NotPSDError, NumericalError, ShapeError

logger = logging.getLogger(__name__)

# Dense row-major float64 array. Every value, parameter and gradient uses this type.
Tensor = np.ndarray

EIG_TOLERANCE = 1e-11
EIG_MAX_SWEEPS = 100
PSD_SLACK = 1e-9

_SEED_MASK = (1 << 64) - 1


def as_tensor(data, name: str = "tensor") -> Tensor:
    """
    Convert array-like data to a float64 tensor.

    Args:
        data: Nested sequence or array
        name: Name used in error messages

    Returns:
        C-contiguous float64 array

    Raises:
        NumericalError: If any entry is NaN or infinite
    """
    array = np.ascontiguousarray(data, dtype=np.float64)
    check_finite(array, name)
    return array


def check_finite(array: Tensor, name: str = "tensor") -> Tensor:
    """Raise NumericalError when the array holds NaN or Inf."""
    if not np.all(np.isfinite(array)):
        raise NumericalError(f"{name} contains non-finite entries")
    return array


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    Matrix product of two 2-D tensors.

    Raises:
        ShapeError: If either operand is not 2-D or inner dimensions differ
    """
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"Cannot multiply shapes {tuple(a.shape)} and {tuple(b.shape)}")
    return a @ b


def _round_robin(n: int) -> list:
    """Pairings of a cyclic tournament: n-1 rounds of disjoint index pairs (n even)."""
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        pairs = [(players[i], players[n - 1 - i]) for i in range(n // 2)]
        rounds.append(pairs)
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _off_diagonal_max(a: Tensor) -> float:
    off = a - np.diag(np.diag(a))
    return float(np.max(np.abs(off))) if a.size > 1 else 0.0


def sym_eig(
    a: Tensor,
    tol: float = EIG_TOLERANCE,
    max_sweeps: int = EIG_MAX_SWEEPS,
) -> Tuple[Tensor, Tensor]:
    """
    Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Each sweep visits every index pair once, in round-robin order so that the
    rotations of one round touch disjoint rows and can be applied as a single
    orthogonal similarity transform.

    Args:
        a: Symmetric d x d matrix (symmetrized internally)
        tol: Convergence threshold on the largest off-diagonal entry, relative to
            max(1, largest absolute entry)
        max_sweeps: Sweep limit

    Returns:
        (eigenvalues sorted descending, eigenvectors as orthonormal columns)

    Raises:
        ShapeError: If the input is not square
        ConvergenceError: If the sweep limit is reached
    """
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"sym_eig needs a square matrix, got shape {tuple(a.shape)}")

    n = a.shape[0]
    work = (np.asarray(a, dtype=np.float64) + np.asarray(a, dtype=np.float64).T) / 2.0
    vectors = np.eye(n)
    threshold = tol * max(1.0, float(np.max(np.abs(work))) if n else 1.0)

    padded = n + (n % 2)
    schedule = _round_robin(padded) if n > 1 else []

    sweeps = 0
    residual = _off_diagonal_max(work)
    while residual >= threshold:
        if sweeps >= max_sweeps:
            raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps", residual)
        for pairs in schedule:
            p = np.array([min(i, j) for i, j in pairs if i < n and j < n], dtype=int)
            q = np.array([max(i, j) for i, j in pairs if i < n and j < n], dtype=int)
            apq = work[p, q]
            active = np.abs(apq) > 0.0
            if not np.any(active):
                continue
            p, q, apq = p[active], q[active], apq[active]
            phi = (work[q, q] - work[p, p]) / (2.0 * apq)
            sign = np.where(phi >= 0.0, 1.0, -1.0)
            t = sign / (np.abs(phi) + np.sqrt(phi * phi + 1.0))
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c

            rotation = np.eye(n)
            rotation[p, p] = c
            rotation[q, q] = c
            rotation[p, q] = s
            rotation[q, p] = -s

            work = rotation.T @ work @ rotation
            work = (work + work.T) / 2.0
            vectors = vectors @ rotation
        sweeps += 1
        residual = _off_diagonal_max(work)

    logger.debug(f"Jacobi converged after {sweeps} sweeps (n={n}, residual={residual:.2e})")

    eigenvalues = np.diag(work).copy()
    order = np.argsort(-eigenvalues, kind="stable")
    eigenvalues = eigenvalues[order]
    vectors = vectors[:, order]

    # Sign convention: first non-negligible component of each eigenvector is positive
    for k in range(n):
        column = vectors[:, k]
        nonzero = np.flatnonzero(np.abs(column) > 1e-12)
        if nonzero.size and column[nonzero[0]] < 0:
            vectors[:, k] = -column
    return eigenvalues, vectors


def inv_sqrt_psd(a: Tensor, floor: float) -> Tensor:
    """
    Inverse square root of a PSD matrix with eigenvalue flooring.

    Args:
        a: Symmetric PSD matrix
        floor: Positive lower bound applied to eigenvalues

    Returns:
        Q diag(max(lambda, floor)^-1/2) Q^T

    Raises:
        NotPSDError: If an eigenvalue is below -1e-9
    """
    if floor <= 0:
        raise ValueError(f"floor must be positive, got {floor}")
    eigenvalues, vectors = sym_eig(a)
    if eigenvalues.size and eigenvalues[-1] < -PSD_SLACK:
        raise NotPSDError(float(eigenvalues[-1]))
    scaled = vectors * (np.maximum(eigenvalues, floor) ** -0.5)
    return scaled @ vectors.T


def derive_seed(base: int, *keys: Union[int, str]) -> int:
    """
    Derive an independent 64-bit seed from a base seed and job keys.

    The derivation hashes the decimal/text form of its inputs, so it does not depend
    on platform, process or scheduling order.
    """
    text = ":".join([str(int(base) & _SEED_MASK)] + [str(k) for k in keys])
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class Rng:
    """Counter-based deterministic random stream (Philox) with Box-Muller normals."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & _SEED_MASK
        self._generator = np.random.Generator(np.random.Philox(key=self.seed))

    @property
    def counter(self) -> Tensor:
        """Current Philox counter (the internal state of the stream)."""
        return np.asarray(self._generator.bit_generator.state["state"]["counter"])

    def uniform(
        self,
        low: float = 0.0,
        high: float = 1.0,
        size: Optional[Union[int, Sequence[int]]] = None,
    ) -> Tensor:
        """Uniform samples on [low, high)."""
        return low + (high - low) * self._generator.random(size)

    def normal(self, size: Union[int, Sequence[int]], mean: float = 0.0, std: float = 1.0) -> Tensor:
        """Gaussian samples via the Box-Muller transform."""
        shape = (size,) if isinstance(size, int) else tuple(size)
        count = int(np.prod(shape)) if shape else 1
        pairs = (count + 1) // 2
        u1 = 1.0 - self._generator.random(pairs)  # (0, 1]
        u2 = self._generator.random(pairs)
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * np.pi * u2
        samples = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])[:count]
        return mean + std * samples.reshape(shape)

    def permutation(self, n: int) -> Tensor:
        """Uniform random permutation of range(n)."""
        return self._generator.permutation(n)

    def spawn(self, *keys: Union[int, str]) -> "Rng":
        """Independent child stream keyed by job identifiers."""
        return Rng(derive_seed(self.seed, *keys))
