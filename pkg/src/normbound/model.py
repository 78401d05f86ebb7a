"""System description for x' = A(t) x + f(t, x) + F(t) and Lipschitz envelopes.

Coefficients are trig-affine scalars (a constant plus finitely many sine
harmonics), the nonlinearity is a polynomial field with no degree-0 terms,
and the forcing is a vector of trig-affine scalars.  Restricting to this
class keeps every supremum needed downstream exactly computable.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class ModelError(ValueError):
    """Raised for malformed system descriptions."""


@dataclass(frozen=True)
class TrigAffineScalar:
    """c + sum_j a_j sin(w_j t + phi_j)."""

    constant: float = 0.0
    harmonics: tuple[tuple[float, float, float], ...] = ()

    def __post_init__(self):
        harmonics = tuple(tuple(float(v) for v in h) for h in self.harmonics)
        for h in harmonics:
            if len(h) != 3:
                raise ModelError(f"harmonic must be (amplitude, frequency, phase), got {h}")
            if h[1] < 0:
                raise ModelError(f"harmonic frequency must be >= 0, got {h[1]}")
        values = (float(self.constant),) + tuple(v for h in harmonics for v in h)
        if not all(math.isfinite(v) for v in values):
            raise ModelError("trig-affine scalar has non-finite fields")
        object.__setattr__(self, "constant", float(self.constant))
        object.__setattr__(self, "harmonics", harmonics)

    @classmethod
    def coerce(cls, value: "TrigAffineScalar | float") -> "TrigAffineScalar":
        if isinstance(value, cls):
            return value
        return cls(float(value))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.full(t.shape, self.constant)
        for amp, freq, phase in self.harmonics:
            out = out + amp * np.sin(freq * t + phase)
        return out if out.ndim else float(out)

    @property
    def is_constant(self) -> bool:
        return all(freq == 0.0 for _, freq, _ in self.harmonics)

    @property
    def is_zero(self) -> bool:
        return self.constant == 0.0 and all(amp == 0.0 for amp, _, _ in self.harmonics)

    def sup_bound(self) -> float:
        """|c| + sum |a_j|, an upper bound of sup_t |value|; exact for one term."""
        return abs(self.constant) + sum(abs(amp) for amp, _, _ in self.harmonics)

    def frozen(self) -> float:
        """Value with every oscillating harmonic removed."""
        return self.constant + sum(amp * math.sin(phase) for amp, freq, phase in self.harmonics
                                   if freq == 0.0)

    def scaled(self, factor: float) -> "TrigAffineScalar":
        return TrigAffineScalar(self.constant * factor,
                                tuple((a * factor, w, ph) for a, w, ph in self.harmonics))

    def scalar(self, t: float) -> float:
        """Fast path of ``__call__`` for a single float time."""
        out = self.constant
        for amp, freq, phase in self.harmonics:
            out += amp * math.sin(freq * t + phase)
        return out

    def canonical_abs(self) -> "TrigAffineScalar":
        # |.| is what envelopes use, so a sign flip of a pure constant is irrelevant
        if not self.harmonics:
            return TrigAffineScalar(abs(self.constant))
        return self


@dataclass(frozen=True)
class MatrixFunction:
    """Square matrix of trig-affine entries."""

    entries: tuple[tuple[TrigAffineScalar, ...], ...]

    def __post_init__(self):
        rows = tuple(tuple(TrigAffineScalar.coerce(e) for e in row) for row in self.entries)
        n = len(rows)
        if n < 1 or any(len(row) != n for row in rows):
            raise ModelError("matrix function must be square with dimension >= 1")
        object.__setattr__(self, "entries", rows)
        const = np.array([[e.constant for e in row] for row in rows])
        osc = [(i, j, e) for i, row in enumerate(rows) for j, e in enumerate(row) if e.harmonics]
        object.__setattr__(self, "_const", const)
        object.__setattr__(self, "_osc", osc)

    @classmethod
    def constant(cls, matrix) -> "MatrixFunction":
        m = np.asarray(matrix, dtype=float)
        return cls(tuple(tuple(TrigAffineScalar(v) for v in row) for row in m))

    @property
    def n(self) -> int:
        return len(self.entries)

    def __call__(self, t: float) -> np.ndarray:
        out = self._const.copy()
        for i, j, e in self._osc:
            out[i, j] = e.scalar(t)
        return out

    def evaluate(self, times) -> np.ndarray:
        """A(t) for an array of times, shape (m, n, n)."""
        times = np.asarray(times, dtype=float)
        out = np.broadcast_to(self._const, times.shape + self._const.shape).copy()
        for i, j, e in self._osc:
            out[..., i, j] = e(times)
        return out

    def frozen(self) -> np.ndarray:
        """The mean matrix: every oscillating harmonic zeroed."""
        return np.array([[e.frozen() for e in row] for row in self.entries])


@dataclass(frozen=True)
class Monomial:
    coefficient: TrigAffineScalar
    exponents: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "coefficient", TrigAffineScalar.coerce(self.coefficient))
        exps = tuple(int(e) for e in self.exponents)
        if any(e < 0 for e in exps):
            raise ModelError(f"monomial exponents must be nonnegative, got {exps}")
        if sum(exps) < 1:
            raise ModelError("monomial of degree 0 violates f(t, 0) = 0")
        object.__setattr__(self, "exponents", exps)

    @property
    def degree(self) -> int:
        return sum(self.exponents)

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        out = np.asarray(self.coefficient(t), dtype=float)
        for m, e in enumerate(self.exponents):
            if e:
                out = out * x[..., m] ** e
        return out


@dataclass(frozen=True)
class PolynomialField:
    """f(t, x); components[i] lists the monomials of the i-th component."""

    components: tuple[tuple[Monomial, ...], ...]

    def __post_init__(self):
        comps = tuple(tuple(self.components[i]) for i in range(len(self.components)))
        n = len(comps)
        for comp in comps:
            for mono in comp:
                if len(mono.exponents) != n:
                    raise ModelError(
                        f"monomial has {len(mono.exponents)} exponents, field dimension is {n}")
        object.__setattr__(self, "components", comps)

    @classmethod
    def zero(cls, n: int) -> "PolynomialField":
        return cls(tuple(() for _ in range(n)))

    @property
    def n(self) -> int:
        return len(self.components)

    @property
    def is_zero(self) -> bool:
        return all(m.coefficient.is_zero for comp in self.components for m in comp)

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for i, comp in enumerate(self.components):
            for mono in comp:
                out[..., i] += mono(t, x)
        return out


@dataclass(frozen=True)
class ForcingTerm:
    components: tuple[TrigAffineScalar, ...]
    amplitude_hat: float = field(init=False)

    def __post_init__(self):
        comps = tuple(TrigAffineScalar.coerce(c) for c in self.components)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "amplitude_hat", forcing_amplitude(self))

    @classmethod
    def zero(cls, n: int) -> "ForcingTerm":
        return cls(tuple(TrigAffineScalar() for _ in range(n)))

    @property
    def n(self) -> int:
        return len(self.components)

    @property
    def is_zero(self) -> bool:
        return all(c.is_zero for c in self.components)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.stack([np.broadcast_to(c(t), t.shape) for c in self.components], axis=-1)

    def norm(self, times) -> np.ndarray:
        return np.linalg.norm(self(times), axis=-1)


@dataclass(frozen=True)
class SystemSpec:
    A: MatrixFunction
    f: PolynomialField
    F: ForcingTerm
    t0: float = 0.0
    horizon: float = 50.0
    omega2_radius: float | None = None

    def __post_init__(self):
        if not (self.A.n == self.f.n == self.F.n):
            raise ModelError(
                f"dimension mismatch: A is {self.A.n}, f is {self.f.n}, F is {self.F.n}")
        if not self.horizon > 0:
            raise ModelError("horizon must be positive")
        if self.omega2_radius is not None and not self.omega2_radius > 0:
            raise ModelError("omega2_radius must be positive when given")

    @property
    def n(self) -> int:
        return self.A.n


def eval_rhs(spec: SystemSpec, t: float, x) -> np.ndarray:
    """A(t) x + f(t, x) + F(t); x may carry leading batch dimensions."""
    x = np.asarray(x, dtype=float)
    return x @ spec.A(t).T + spec.f(t, x) + spec.F(t)


@dataclass(frozen=True)
class LipschitzEnvelope:
    """L(t, r) = sum_d c_d(t) r^d with c_d(t) = sum_j |a_{d,j}(t)|.

    ``terms`` maps each degree to the coefficient functions whose absolute
    values add up to the degree-d profile.
    """

    terms: tuple[tuple[int, tuple[TrigAffineScalar, ...]], ...] = ()

    def __post_init__(self):
        terms = tuple(sorted((int(d), tuple(cs)) for d, cs in self.terms))
        if any(d < 1 for d, _ in terms):
            raise ModelError("envelope degrees must be >= 1")
        object.__setattr__(self, "terms", terms)

    @property
    def degrees(self) -> tuple[int, ...]:
        return tuple(d for d, _ in self.terms)

    @property
    def is_zero(self) -> bool:
        return not self.terms

    @property
    def sup_coefficients(self) -> dict[int, float]:
        return {d: sum(c.sup_bound() for c in cs) for d, cs in self.terms}

    def coefficient_profile(self, degree: int, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape)
        for d, cs in self.terms:
            if d == degree:
                for c in cs:
                    out = out + np.abs(c(t))
        return out if out.ndim else float(out)

    def __call__(self, t, rho):
        t = np.asarray(t, dtype=float)
        rho = np.asarray(rho, dtype=float)
        out = np.zeros(np.broadcast(t, rho).shape)
        for d, _ in self.terms:
            out = out + self.coefficient_profile(d, t) * rho ** d
        return out if out.ndim else float(out)

    def scalar_evaluator(self) -> Callable[[float, float], float]:
        """L(t, rho) for float arguments, avoiding array overhead."""
        fixed = [(d, sum(abs(c.constant) for c in cs)) for d, cs in self.terms
                 if all(c.is_constant for c in cs)]
        varying = [(d, cs) for d, cs in self.terms if not all(c.is_constant for c in cs)]
        if not varying:
            return lambda t, rho: sum(c * rho ** d for d, c in fixed)

        def L(t, rho):
            out = sum(c * rho ** d for d, c in fixed)
            for d, cs in varying:
                out += sum(abs(c.scalar(t)) for c in cs) * rho ** d
            return out

        return L

    def sup(self, rho):
        """sup_t L(t, rho) bound: sum_d c_hat_d rho^d."""
        rho = np.asarray(rho, dtype=float)
        out = np.zeros(rho.shape)
        for d, c in self.sup_coefficients.items():
            out = out + c * rho ** d
        return out if out.ndim else float(out)


def derive_envelope(f: PolynomialField) -> LipschitzEnvelope:
    """Polynomial envelope via ||f||_2 <= ||f||_1 and |x_m|^k <= ||x||_2^k."""
    buckets: dict[int, list[TrigAffineScalar]] = defaultdict(list)
    for comp in f.components:
        for mono in comp:
            if mono.coefficient.is_zero:
                continue
            buckets[mono.degree].append(mono.coefficient.canonical_abs())
    terms = []
    for d, cs in buckets.items():
        cs.sort(key=lambda c: (c.constant, c.harmonics))
        terms.append((d, tuple(cs)))
    return LipschitzEnvelope(tuple(terms))


def lipschitz_constant(env: LipschitzEnvelope, R: float) -> tuple[float, Callable]:
    """Classical Lipschitz data on the ball of radius R.

    Returns ``(l_hat, l_profile)`` with l_profile(t) = sum_d c_d(t) R^(d-1) and
    l_hat = sum_d c_hat_d R^(d-1).
    """
    if not R > 0:
        raise ValueError(f"Lipschitz radius must be positive, got {R}")
    l_hat = sum(c * R ** (d - 1) for d, c in env.sup_coefficients.items())

    def l_profile(t):
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape)
        for d in env.degrees:
            out = out + env.coefficient_profile(d, t) * R ** (d - 1)
        return out if out.ndim else float(out)

    return float(l_hat), l_profile


def forcing_amplitude(F: ForcingTerm) -> float:
    """2-norm of the per-component sup bounds; >= sup_t ||F(t)||."""
    return float(math.sqrt(sum(c.sup_bound() ** 2 for c in F.components)))


def default_lipschitz_radius(A: MatrixFunction, X0: float) -> tuple[float, str]:
    """R = kappa * X0 when no radius is configured.

    For a 2x2 companion-type frozen matrix [[0, 1], [-w0^2, *]] kappa comes from
    the energy norm of the undamped oscillator, sqrt(max(w0^2,1)/min(w0^2,1)).
    Otherwise kappa is the condition number of the frozen modal matrix.
    """
    A0 = A.frozen()
    if A0.shape == (2, 2) and A0[0, 0] == 0.0 and A0[0, 1] == 1.0 and A0[1, 0] < 0.0:
        w2 = -A0[1, 0]
        kappa = math.sqrt(max(w2, 1.0) / min(w2, 1.0))
        return kappa * X0, "energy-norm kappa of undamped companion system"
    _, vecs = np.linalg.eig(A0)
    kappa = float(np.linalg.cond(vecs))
    if not math.isfinite(kappa):
        kappa = 1.0
    return kappa * X0, "condition number of frozen modal matrix"


def oscillator_system(omega0: float = 2.0, alpha1: float = 0.2, alpha2: float = 0.1,
                      a: float = 0.0, omega2: float = 2 * math.pi,
                      a1: float = 0.0, r1: float = 0.0, a2: float = 0.0, r2: float = 0.0,
                      cubic_on: int = 1, t0: float = 0.0, horizon: float = 50.0) -> SystemSpec:
    """Forced damped oscillator with modulated stiffness and cubic term.

    x1' = x2,  x2' = -(w0^2 + a1 sin r1 t + a2 sin r2 t) x1 - alpha1 x2
                      - alpha2 x_c^3 + a sin(omega2 t)

    ``cubic_on=1`` puts the cubic on x2 (Van der Pol type), ``cubic_on=0`` on
    x1 (Duffing type).
    """
    harmonics = tuple((-amp, r, 0.0) for amp, r in ((a1, r1), (a2, r2)) if amp != 0.0)
    A = MatrixFunction((
        (TrigAffineScalar(0.0), TrigAffineScalar(1.0)),
        (TrigAffineScalar(-omega0 ** 2, harmonics), TrigAffineScalar(-alpha1)),
    ))
    exps = (3, 0) if cubic_on == 0 else (0, 3)
    second = (Monomial(TrigAffineScalar(-alpha2), exps),) if alpha2 != 0.0 else ()
    f = PolynomialField(((), second))
    forcing = TrigAffineScalar(0.0, ((a, omega2, 0.0),) if a != 0.0 else ())
    F = ForcingTerm((TrigAffineScalar(0.0), forcing))
    return SystemSpec(A, f, F, t0=t0, horizon=horizon)
