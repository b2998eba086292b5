"""Spin operator algebra for small electron-nuclear registers.

Conventions used throughout the toolkit:

* Angular momentum basis states are ordered by descending magnetic quantum
  number m = I, I-1, ..., -I.
* Energies and couplings are ordinary (non-angular) frequencies in MHz,
  magnetic fields are in Gauss, gyromagnetic ratios in MHz/G.
* All operators are dense complex128 matrices, immutable after construction.

Spins are specified by the integer 2I (``two_i``) so half-integer spins stay
exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import prod, sqrt

import numpy as np

from .errors import ValidationError

# Largest dense Hilbert-space dimension the eigensolver path accepts.
MAX_DENSE_DIM = 64


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class SpinMatrices:
    """The standard operator set for a single spin: x, y, z, plus, minus."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    plus: np.ndarray
    minus: np.ndarray


def spin_matrices(two_i: int) -> SpinMatrices:
    """Spin matrices for spin I = two_i/2 in the descending-m basis.

    <m+1|S+|m> = sqrt(I(I+1) - m(m+1)); Sx = (S+ + S-)/2, Sy = (S+ - S-)/2i.
    For two_i = 2 this reproduces Sz = diag(1, 0, -1) and S+ with sqrt(2) on
    the first superdiagonal.
    """
    if not isinstance(two_i, (int, np.integer)) or two_i < 1:
        raise ValidationError(f"two_i must be a positive integer, got {two_i!r}")
    n = two_i + 1
    i_val = two_i / 2.0
    m = i_val - np.arange(n)
    sz = np.diag(m).astype(complex)
    sp = np.zeros((n, n), dtype=complex)
    for k in range(1, n):
        sp[k - 1, k] = sqrt(i_val * (i_val + 1) - m[k] * (m[k] + 1))
    sm = sp.conj().T
    sx = (sp + sm) / 2.0
    sy = (sp - sm) / 2.0j
    return SpinMatrices(*(map(_readonly, (sx, sy, sz, sp, sm))))


@dataclass(frozen=True)
class IsotopeSpecies:
    """One nuclear isotope: name, 2I, gyromagnetic ratio (MHz/G), abundance.

    ``gamma_n_mhz_per_g`` may be None for registry entries that ship without a
    ratio; any operation that actually needs gamma rejects such species.
    """

    name: str
    two_i: int
    gamma_n_mhz_per_g: float | None
    abundance: float

    def __post_init__(self):
        if self.two_i < 1 or int(self.two_i) != self.two_i:
            raise ValidationError(f"isotope {self.name}: two_i must be a positive integer")
        if not 0.0 <= self.abundance <= 1.0:
            raise ValidationError(f"isotope {self.name}: abundance {self.abundance} outside [0, 1]")

    @property
    def spin(self) -> float:
        return self.two_i / 2.0

    @property
    def multiplicity(self) -> int:
        return self.two_i + 1

    @property
    def element(self) -> str:
        return "".join(c for c in self.name if c.isalpha())

    def require_gamma(self) -> float:
        if self.gamma_n_mhz_per_g is None:
            raise ValidationError(
                f"isotope {self.name}: gamma_n_MHz_per_G is required user input and is not set"
            )
        return self.gamma_n_mhz_per_g


@dataclass(frozen=True)
class SpinRegister:
    """An ordered product of spins; subsystem 0 is the electron by convention.

    ``two_j`` holds 2J per subsystem, ``names`` a label per subsystem.
    """

    two_j: tuple[int, ...]
    names: tuple[str, ...]

    def __post_init__(self):
        if len(self.two_j) != len(self.names):
            raise ValidationError("register: two_j and names length mismatch")
        if not self.two_j:
            raise ValidationError("register: needs at least one subsystem")
        for tj in self.two_j:
            if tj < 1 or int(tj) != tj:
                raise ValidationError(f"register: invalid 2J value {tj}")

    @property
    def n_subsystems(self) -> int:
        return len(self.two_j)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(tj + 1 for tj in self.two_j)

    @property
    def dim(self) -> int:
        return prod(self.dims)

    def m_values(self) -> np.ndarray:
        """(dim, n_subsystems) array of m quantum numbers per basis state."""
        per_site = [tj / 2.0 - np.arange(tj + 1) for tj in self.two_j]
        grids = np.meshgrid(*per_site, indexing="ij")
        return _readonly(np.stack([g.ravel() for g in grids], axis=1))


@dataclass(frozen=True)
class Operator:
    """A dense operator on a register's Hilbert space.

    Hermitian-flagged operators are verified at construction. ``register`` is
    optional bookkeeping used downstream for basis labelling.
    """

    entries: np.ndarray
    hermitian: bool = False
    register: SpinRegister | None = field(default=None, compare=False)

    def __post_init__(self):
        a = np.asarray(self.entries, dtype=complex)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValidationError(f"operator entries must be square, got shape {a.shape}")
        if self.hermitian:
            scale = max(np.abs(a).max(), 1.0)
            dev = np.abs(a - a.conj().T).max()
            if dev > 1e-12 * scale:
                raise ValidationError(
                    f"operator flagged hermitian deviates from H = H^dagger by {dev:.3e}"
                )
        if self.register is not None and self.register.dim != a.shape[0]:
            raise ValidationError(
                f"operator dim {a.shape[0]} does not match register dim {self.register.dim}"
            )
        object.__setattr__(self, "entries", _readonly(a))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]


def kron_chain(ops: list[np.ndarray]) -> np.ndarray:
    """Kronecker product of a list of matrices, left to right."""
    if not ops:
        raise ValidationError("kron_chain: empty operator list")
    out = np.asarray(ops[0], dtype=complex)
    for op in ops[1:]:
        out = np.kron(out, np.asarray(op, dtype=complex))
    return out


def embed(op: np.ndarray, register: SpinRegister, site: int) -> np.ndarray:
    """Embed a single-subsystem matrix at ``site``, identity elsewhere."""
    if not 0 <= site < register.n_subsystems:
        raise ValidationError(f"embed: site {site} out of range")
    op = np.asarray(op, dtype=complex)
    want = register.dims[site]
    if op.shape != (want, want):
        raise ValidationError(f"embed: operator shape {op.shape} does not fit subsystem dim {want}")
    factors = [np.eye(d, dtype=complex) for d in register.dims]
    factors[site] = op
    return kron_chain(factors)
