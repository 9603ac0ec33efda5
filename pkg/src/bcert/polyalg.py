"""Sparse multivariate polynomial algebra over role-tagged variables.

Polynomials are dictionaries mapping exponent tuples to binary64 coefficients,
over an ordered, immutable ``VariableSpace`` whose variables carry one of the
roles ``state``, ``input`` (internal input) or ``noise``.  The one non-generic
operation is :func:`expectation_over_noise`, which eliminates noise variables
by substituting raw moments, giving the closed-form conditional expectation
E[p(x, w, noise) | x, w] used by the certificate checkers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import CapabilityError, InputError

ROLE_STATE = "state"
ROLE_INPUT = "input"
ROLE_NOISE = "noise"
_ROLES = (ROLE_STATE, ROLE_INPUT, ROLE_NOISE)


@dataclass(frozen=True)
class VariableSpace:
    """Ordered variable list with roles; the carrier of every Polynomial."""

    names: tuple[str, ...]
    roles: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.names) != len(self.roles):
            raise InputError("names and roles must have equal length")
        if len(set(self.names)) != len(self.names):
            raise InputError(f"duplicate variable names in {self.names}")
        for r in self.roles:
            if r not in _ROLES:
                raise InputError(f"unknown variable role {r!r}")

    @staticmethod
    def make(states: Iterable[str] = (), inputs: Iterable[str] = (),
             noises: Iterable[str] = ()) -> "VariableSpace":
        names: list[str] = []
        roles: list[str] = []
        for group, role in ((states, ROLE_STATE), (inputs, ROLE_INPUT), (noises, ROLE_NOISE)):
            for n in group:
                names.append(n)
                roles.append(role)
        return VariableSpace(tuple(names), tuple(roles))

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise InputError(f"unknown variable {name!r} in space {self.names}") from None

    def indices_of_role(self, role: str) -> tuple[int, ...]:
        return tuple(i for i, r in enumerate(self.roles) if r == role)

    @property
    def state_indices(self) -> tuple[int, ...]:
        return self.indices_of_role(ROLE_STATE)

    @property
    def input_indices(self) -> tuple[int, ...]:
        return self.indices_of_role(ROLE_INPUT)

    @property
    def noise_indices(self) -> tuple[int, ...]:
        return self.indices_of_role(ROLE_NOISE)

    def drop_noise(self) -> "VariableSpace":
        keep = [i for i, r in enumerate(self.roles) if r != ROLE_NOISE]
        return VariableSpace(tuple(self.names[i] for i in keep),
                             tuple(self.roles[i] for i in keep))


@dataclass(frozen=True)
class NoiseSpec:
    """Per-component noise distribution with closed-form raw moments."""

    kind: str  # "gaussian" | "uniform"
    a: float = 0.0  # mean | lo
    b: float = 1.0  # std  | hi

    def __post_init__(self) -> None:
        if self.kind == "gaussian":
            if self.b < 0:
                raise InputError("gaussian std must be >= 0")
        elif self.kind == "uniform":
            if self.b < self.a:
                raise InputError("uniform needs lo <= hi")
        else:
            raise CapabilityError(f"unsupported noise distribution {self.kind!r}")

    @staticmethod
    def gaussian(mean: float = 0.0, std: float = 1.0) -> "NoiseSpec":
        return NoiseSpec("gaussian", float(mean), float(std))

    @staticmethod
    def uniform(lo: float, hi: float) -> "NoiseSpec":
        return NoiseSpec("uniform", float(lo), float(hi))

    def raw_moment(self, k: int) -> float:
        """E[X^k], exact closed form for any k >= 0."""
        if k < 0:
            raise InputError("moment degree must be >= 0")
        if k == 0:
            return 1.0
        if self.kind == "gaussian":
            m, s = self.a, self.b
            # binomial expansion around the mean; central moments are
            # s^j (j-1)!! for even j, zero for odd j
            total = 0.0
            for j in range(0, k + 1, 2):
                central = s**j * _double_factorial(j - 1)
                total += math.comb(k, j) * m ** (k - j) * central
            return total
        lo, hi = self.a, self.b
        if hi == lo:
            return lo**k
        # integral of x^k over [lo, hi] divided by the width
        return (hi ** (k + 1) - lo ** (k + 1)) / ((k + 1) * (hi - lo))

    def sample(self, rng: np.random.Generator, shape) -> np.ndarray:
        if self.kind == "gaussian":
            return self.a + self.b * rng.standard_normal(shape)
        return rng.uniform(self.a, self.b, shape)

    def to_json(self) -> dict:
        if self.kind == "gaussian":
            return {"type": "gaussian", "mean": self.a, "std": self.b}
        return {"type": "uniform", "lo": self.a, "hi": self.b}

    @staticmethod
    def from_json(obj: dict) -> "NoiseSpec":
        kind = obj.get("type")
        if kind == "gaussian":
            return NoiseSpec.gaussian(obj.get("mean", 0.0), obj.get("std", 1.0))
        if kind == "uniform":
            return NoiseSpec.uniform(obj["lo"], obj["hi"])
        raise InputError(f"unknown noise type {kind!r}")


def _double_factorial(n: int) -> float:
    if n <= 0:
        return 1.0
    out = 1.0
    while n > 0:
        out *= n
        n -= 2
    return out


STD_GAUSSIAN = NoiseSpec.gaussian(0.0, 1.0)


class Polynomial:
    """Immutable sparse polynomial: exponent-tuple -> coefficient."""

    __slots__ = ("space", "terms", "_hash")

    def __init__(self, space: VariableSpace, terms: Mapping[tuple[int, ...], float]):
        nv = len(space)
        clean: dict[tuple[int, ...], float] = {}
        for exp, coef in terms.items():
            exp = tuple(int(e) for e in exp)
            if len(exp) != nv:
                raise InputError(f"exponent vector {exp} does not match {nv} variables")
            if any(e < 0 for e in exp):
                raise InputError(f"negative exponent in {exp}")
            c = clean.get(exp, 0.0) + float(coef)
            if c == 0.0:
                clean.pop(exp, None)
            else:
                clean[exp] = c
        # only exact zeros are dropped: a coefficient of 1e-13 still moves a
        # margin by ~1e-6 once monomials reach the scale of the state box
        object.__setattr__(self, "space", space)
        object.__setattr__(self, "terms", clean)
        object.__setattr__(self, "_hash", None)

    def __setattr__(self, *a):  # pragma: no cover - immutability guard
        raise AttributeError("Polynomial is immutable")

    # ---- constructors -------------------------------------------------
    @staticmethod
    def zero(space: VariableSpace) -> "Polynomial":
        return Polynomial(space, {})

    @staticmethod
    def constant(space: VariableSpace, c: float) -> "Polynomial":
        return Polynomial(space, {(0,) * len(space): float(c)})

    @staticmethod
    def variable(space: VariableSpace, name: str) -> "Polynomial":
        i = space.index(name)
        exp = [0] * len(space)
        exp[i] = 1
        return Polynomial(space, {tuple(exp): 1.0})

    # ---- ring operations ----------------------------------------------
    def _check_same_space(self, other: "Polynomial") -> None:
        if self.space != other.space:
            raise InputError("polynomials live in different variable spaces")

    def __add__(self, other) -> "Polynomial":
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.space, other)
        self._check_same_space(other)
        terms = dict(self.terms)
        for e, c in other.terms.items():
            terms[e] = terms.get(e, 0.0) + c
        return Polynomial(self.space, terms)

    __radd__ = __add__

    def __neg__(self) -> "Polynomial":
        return Polynomial(self.space, {e: -c for e, c in self.terms.items()})

    def __sub__(self, other) -> "Polynomial":
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.space, other)
        return self + (-other)

    def __rsub__(self, other) -> "Polynomial":
        return (-self) + other

    def __mul__(self, other) -> "Polynomial":
        if isinstance(other, (int, float)):
            return Polynomial(self.space,
                              {e: c * float(other) for e, c in self.terms.items()})
        self._check_same_space(other)
        terms: dict[tuple[int, ...], float] = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                terms[e] = terms.get(e, 0.0) + c1 * c2
        return Polynomial(self.space, terms)

    __rmul__ = __mul__

    def __pow__(self, k: int) -> "Polynomial":
        if not isinstance(k, int) or k < 0:
            raise InputError("polynomial power requires a non-negative integer")
        out = Polynomial.constant(self.space, 1.0)
        base = self
        while k:
            if k & 1:
                out = out * base
            base = base * base if k > 1 else base
            k >>= 1
        return out

    def __eq__(self, other) -> bool:
        return (isinstance(other, Polynomial) and self.space == other.space
                and self.terms == other.terms)

    def __hash__(self) -> int:
        h = object.__getattribute__(self, "_hash")
        if h is None:
            h = hash((self.space, frozenset(self.terms.items())))
            object.__setattr__(self, "_hash", h)
        return h

    # ---- queries -------------------------------------------------------
    def degree(self) -> int:
        return max((sum(e) for e in self.terms), default=0)

    def is_zero(self) -> bool:
        return not self.terms

    def used_variables(self) -> set[str]:
        used = set()
        for e in self.terms:
            for i, k in enumerate(e):
                if k > 0:
                    used.add(self.space.names[i])
        return used

    # ---- evaluation ----------------------------------------------------
    def __call__(self, point) -> float:
        return poly_eval(self, point)

    def eval_many(self, points: np.ndarray) -> np.ndarray:
        """Vectorized evaluation over an (m, nvars) array of points."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != len(self.space):
            raise InputError(
                f"expected (m, {len(self.space)}) point array, got {pts.shape}")
        out = np.zeros(pts.shape[0])
        power_cache: dict[tuple[int, int], np.ndarray] = {}
        for exp, coef in self.terms.items():
            term = np.full(pts.shape[0], coef)
            for i, k in enumerate(exp):
                if k == 0:
                    continue
                key = (i, k)
                col = power_cache.get(key)
                if col is None:
                    col = pts[:, i] ** k
                    power_cache[key] = col
                term = term * col
            out += term
        return out

    # ---- rendering -----------------------------------------------------
    def __repr__(self) -> str:
        return f"Polynomial({self.to_string()!r})"

    def to_string(self) -> str:
        if not self.terms:
            return "0"
        def sort_key(item):
            exp, _ = item
            return (-sum(exp), tuple(-e for e in exp))
        pieces = []
        for exp, coef in sorted(self.terms.items(), key=sort_key):
            factors = []
            for name, k in zip(self.space.names, exp):
                if k == 1:
                    factors.append(name)
                elif k > 1:
                    factors.append(f"{name}^{k}")
            mag = repr(abs(coef))
            if factors:
                body = "*".join([mag] + factors) if abs(coef) != 1.0 else "*".join(factors)
            else:
                body = mag
            sign = "-" if coef < 0 else "+"
            pieces.append((sign, body))
        first_sign, first_body = pieces[0]
        out = ("-" if first_sign == "-" else "") + first_body
        for sign, body in pieces[1:]:
            out += f" {sign} {body}"
        return out

    def to_json(self) -> dict:
        return {
            "vars": [{"name": n, "role": r} for n, r in zip(self.space.names, self.space.roles)],
            "terms": [{"exp": list(e), "coef": c} for e, c in sorted(self.terms.items())],
        }

    @staticmethod
    def from_json(obj: dict) -> "Polynomial":
        space = VariableSpace(tuple(v["name"] for v in obj["vars"]),
                              tuple(v["role"] for v in obj["vars"]))
        return Polynomial(space, {tuple(t["exp"]): t["coef"] for t in obj["terms"]})


def poly_eval(p: Polynomial, point) -> float:
    """Evaluate p at a single point (sequence of reals)."""
    pt = [float(v) for v in point]
    if len(pt) != len(p.space):
        raise InputError(f"point has {len(pt)} coords, space has {len(p.space)}")
    total = 0.0
    for exp, coef in p.terms.items():
        v = coef
        for x, k in zip(pt, exp):
            if k:
                v *= x**k
        total += v
    return total


def poly_compose(p: Polynomial, substitution: Mapping[str, Polynomial]) -> Polynomial:
    """Substitute polynomials for variables of p and expand.

    All substituted polynomials must share one target space.  Variables of p
    absent from the mapping are passed through by name: the target space must
    then contain a variable of the same name.
    """
    for name in substitution:
        if name not in p.space.names:
            raise InputError(f"unknown variable {name!r} in substitution")
    subs = dict(substitution)
    target: VariableSpace | None = None
    for q in subs.values():
        if target is None:
            target = q.space
        elif q.space != target:
            raise InputError("substituted polynomials live in different spaces")
    if target is None:
        target = p.space
    for name in p.used_variables():
        if name not in subs:
            subs[name] = Polynomial.variable(target, name)

    result = Polynomial.zero(target)
    pow_cache: dict[tuple[str, int], Polynomial] = {}
    for exp, coef in p.terms.items():
        term = Polynomial.constant(target, coef)
        for name, k in zip(p.space.names, exp):
            if k == 0:
                continue
            key = (name, k)
            q = pow_cache.get(key)
            if q is None:
                q = subs[name] ** k
                pow_cache[key] = q
            term = term * q
        result = result + term
    return result


def expectation_over_noise(p: Polynomial,
                           noise: Mapping[str, NoiseSpec] | Iterable[NoiseSpec]) -> Polynomial:
    """Closed-form E[p | non-noise variables].

    Each monomial's noise factor is replaced by the product of raw moments
    (components independent); the result lives in the noise-free subspace.
    """
    noise_idx = p.space.noise_indices
    if isinstance(noise, Mapping):
        specs = {}
        for name, spec in noise.items():
            i = p.space.index(name)
            if p.space.roles[i] != ROLE_NOISE:
                raise InputError(f"{name!r} is not a noise variable")
            specs[i] = spec
    else:
        specs = dict(zip(noise_idx, noise))
    for i in noise_idx:
        if i not in specs:
            raise InputError(f"no NoiseSpec for noise variable {p.space.names[i]!r}")

    reduced = p.space.drop_noise()
    keep = [i for i in range(len(p.space)) if i not in noise_idx]
    terms: dict[tuple[int, ...], float] = {}
    for exp, coef in p.terms.items():
        c = coef
        for i in noise_idx:
            if exp[i]:
                c *= specs[i].raw_moment(exp[i])
        if c == 0.0:
            continue
        new_exp = tuple(exp[i] for i in keep)
        terms[new_exp] = terms.get(new_exp, 0.0) + c
    return Polynomial(reduced, terms)


# ---------------------------------------------------------------------------
# String syntax: + - * ^ with parentheses and decimal/scientific literals.
# ---------------------------------------------------------------------------

class _Tokenizer:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def peek(self) -> str | None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1
        return self.text[self.pos] if self.pos < len(self.text) else None

    def take_number(self) -> float:
        start = self.pos
        t = self.text
        n = len(t)
        while self.pos < n and (t[self.pos].isdigit() or t[self.pos] == "."):
            self.pos += 1
        if self.pos < n and t[self.pos] in "eE":
            save = self.pos
            self.pos += 1
            if self.pos < n and t[self.pos] in "+-":
                self.pos += 1
            if self.pos < n and t[self.pos].isdigit():
                while self.pos < n and t[self.pos].isdigit():
                    self.pos += 1
            else:
                self.pos = save  # bare 'e' is an identifier, not an exponent
        try:
            return float(t[start:self.pos])
        except ValueError:
            raise InputError(f"bad numeric literal at position {start} in {t!r}") from None

    def take_name(self) -> str:
        start = self.pos
        t = self.text
        while self.pos < len(t) and (t[self.pos].isalnum() or t[self.pos] == "_"):
            self.pos += 1
        return t[start:self.pos]


def parse_polynomial(text: str, space: VariableSpace) -> Polynomial:
    """Parse human syntax like "-0.00012*T^4 + 0.01045*T^3" over a space."""
    tok = _Tokenizer(text)

    def parse_expr() -> Polynomial:
        node = parse_term()
        while True:
            ch = tok.peek()
            if ch == "+":
                tok.pos += 1
                node = node + parse_term()
            elif ch == "-":
                tok.pos += 1
                node = node - parse_term()
            else:
                return node

    def parse_term() -> Polynomial:
        node = parse_unary()
        while tok.peek() == "*":
            tok.pos += 1
            node = node * parse_unary()
        return node

    def parse_unary() -> Polynomial:
        ch = tok.peek()
        if ch == "-":
            tok.pos += 1
            return -parse_unary()
        if ch == "+":
            tok.pos += 1
            return parse_unary()
        return parse_power()

    def parse_power() -> Polynomial:
        base = parse_atom()
        if tok.peek() == "^":
            tok.pos += 1
            ch = tok.peek()
            if ch is None or not ch.isdigit():
                raise InputError(f"exponent must be a non-negative integer in {text!r}")
            k = tok.take_number()
            if k != int(k):
                raise InputError(f"exponent must be an integer in {text!r}")
            return base ** int(k)
        return base

    def parse_atom() -> Polynomial:
        ch = tok.peek()
        if ch is None:
            raise InputError(f"unexpected end of input in {text!r}")
        if ch == "(":
            tok.pos += 1
            node = parse_expr()
            if tok.peek() != ")":
                raise InputError(f"missing ')' in {text!r}")
            tok.pos += 1
            return node
        if ch.isdigit() or ch == ".":
            return Polynomial.constant(space, tok.take_number())
        if ch.isalpha() or ch == "_":
            return Polynomial.variable(space, tok.take_name())
        raise InputError(f"unexpected character {ch!r} at position {tok.pos} in {text!r}")

    node = parse_expr()
    if tok.peek() is not None:
        raise InputError(f"trailing input at position {tok.pos} in {text!r}")
    return node


def polynomial_to_json_str(p: Polynomial) -> str:
    return json.dumps(p.to_json())
