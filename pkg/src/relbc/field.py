"""Arithmetic in GF(2^n): XOR addition, carry-less multiplication modulo an
irreducible polynomial, and inversion.

Elements are plain Python ints in canonical little-endian bit order (bit i is
the coefficient of x^i), always reduced below 2^n. A :class:`FieldSpec` pins
the bit width and reduction polynomial; :class:`FieldElement` is a thin typed
wrapper used at API boundaries, while bulk code paths work on raw ints through
the FieldSpec methods.

Multiplication fast path: for n <= 255 operands are "spread" (each coefficient
bit placed in its own byte-wide slot), multiplied as ordinary integers (slot
sums never exceed 255, so no carry crosses a slot boundary), and the product's
per-slot parities are the carry-less product. Chained operations can stay in
spread form; `_smul`/`_sxor`/`_compact` are the internal primitives the
protocol and storage layers use for long multiplication chains. If gmpy2 is
importable the same code runs on mpz limbs, which is roughly 2x faster; there
is no algorithmic difference and the pure-int fallback is fully supported.
"""

from __future__ import annotations

import random
from typing import Sequence

try:  # optional accelerator; identical semantics on plain ints
    from gmpy2 import mpz as _mpz
except ImportError:  # pragma: no cover - exercised on gmpy2-free installs
    def _mpz(x):
        return x


class FieldError(Exception):
    """Base class for field arithmetic errors."""


class FieldMismatchError(FieldError):
    """Operands belong to different field specs."""


class NonInvertibleError(FieldError):
    """Inversion of zero (or a non-unit) was requested."""


__all__ = [
    "FieldError",
    "FieldMismatchError",
    "NonInvertibleError",
    "FieldSpec",
    "FieldElement",
    "add",
    "mul",
    "inv",
    "random_element",
    "batch_inverse",
    "gf2_128",
    "gf2_8",
    "DEFAULT_POLYS",
]


# Low parts (without the x^n term) of widely used irreducible polynomials.
# n <= 16 is re-checked exhaustively at construction; these entries are the
# accepted list for larger n.
DEFAULT_POLYS = {
    8: 0x1B,     # x^8 + x^4 + x^3 + x + 1
    16: 0x2B,    # x^16 + x^5 + x^3 + x + 1
    32: 0x8D,    # x^32 + x^7 + x^3 + x^2 + 1
    64: 0x1B,    # x^64 + x^4 + x^3 + x + 1
    128: 0x87,   # x^128 + x^7 + x^2 + x + 1
    256: 0x425,  # x^256 + x^10 + x^5 + x^2 + 1
}

_KNOWN_IRREDUCIBLE = {(n, p) for n, p in DEFAULT_POLYS.items()}

_MAX_SPREAD_N = 255  # slot sums must stay below 256 in the spread fast path

# bit chars <-> byte slots, for the C-speed spread/compact conversions
_BIN_TO_SLOTS = bytes.maketrans(b"01", b"\x00\x01")
_SLOTS_TO_BIN = bytes.maketrans(b"\x00\x01", b"01")


def _poly_mod(a: int, mod: int) -> int:
    """Remainder of polynomial division over GF(2), ints as bit vectors."""
    mb = mod.bit_length()
    while a.bit_length() >= mb:
        a ^= mod << (a.bit_length() - mb)
    return a


def _is_irreducible_small(n: int, low: int) -> bool:
    """Exhaustive trial division for degree n <= 16."""
    full = low | (1 << n)
    if not low & 1:  # divisible by x
        return False
    for d in range(2, 1 << (n // 2 + 1)):
        if _poly_mod(full, d) == 0:
            return False
    return True


class FieldSpec:
    """Bit width and reduction polynomial defining one GF(2^n).

    ``poly`` is the reduction polynomial without its leading x^n term; the
    degree is implied by ``n``. Two specs compare equal iff (n, poly) match.
    """

    __slots__ = (
        "n", "poly", "mask", "full_poly", "element_bytes",
        "_spread_ok", "_slot_bytes", "_par_mask", "_lo_mask", "_s_poly",
    )

    def __init__(self, n: int, poly: int | None = None):
        if not isinstance(n, int) or n <= 0 or n > 1024:
            raise FieldError(f"bit width must be a positive integer <= 1024, got {n!r}")
        if poly is None:
            if n not in DEFAULT_POLYS:
                raise FieldError(f"no default reduction polynomial for n={n}")
            poly = DEFAULT_POLYS[n]
        if not isinstance(poly, int) or poly < 0 or poly.bit_length() > n:
            raise FieldError("reduction polynomial must fit below the x^n term")
        if n <= 16:
            if not _is_irreducible_small(n, poly):
                raise FieldError(f"x^{n} + 0x{poly:x} is reducible over GF(2)")
        elif (n, poly) not in _KNOWN_IRREDUCIBLE:
            raise FieldError(
                f"polynomial 0x{poly:x} for n={n} is not on the known-good "
                "irreducible list (exhaustive checking stops at n=16)"
            )
        self.n = n
        self.poly = poly
        self.mask = (1 << n) - 1
        self.full_poly = poly | (1 << n)
        self.element_bytes = (n + 7) // 8
        self._init_spread()

    def _init_spread(self) -> None:
        self._spread_ok = self.n <= _MAX_SPREAD_N
        if not self._spread_ok:
            return
        n = self.n
        self._slot_bytes = n  # one byte-wide slot per coefficient
        par = int.from_bytes(b"\x01" * (2 * n), "little")
        self._par_mask = _mpz(par)
        self._lo_mask = _mpz((1 << (8 * n)) - 1)
        self._s_poly = self._spread(self.poly)

    # -- spread-domain primitives (internal fast path) --------------------
    #
    # Spread form places coefficient i in byte slot i. The carry-less product
    # of two <=255-coefficient polynomials then falls out of one ordinary
    # integer multiplication: per-slot sums stay below 256, so no carry ever
    # crosses a slot, and masking each slot to its low bit takes parities.
    # Values passed between these helpers are always parity-collapsed
    # (every slot is 0 or 1).

    def _spread(self, v: int):
        """Compact int -> spread form (coefficient i in byte slot i)."""
        return _mpz(int.from_bytes(
            bin(v)[2:].encode().translate(_BIN_TO_SLOTS)[::-1], "little"
        ))

    def _sxor(self, sa, sb):
        """XOR of two parity-collapsed spread values."""
        return (sa + sb) & self._par_mask

    def _smul(self, sa, sb):
        """Reduced product of two parity-collapsed spread values."""
        p = (sa * sb) & self._par_mask
        hi = p >> (8 * self.n)
        while hi:
            p = ((p & self._lo_mask) + ((hi * self._s_poly) & self._par_mask)) & self._par_mask
            hi = p >> (8 * self.n)
        return p

    def _compact(self, sv) -> int:
        """Spread form (parity-collapsed, reduced) -> compact int."""
        raw = sv.to_bytes(self._slot_bytes, "little").translate(_SLOTS_TO_BIN)
        return int(raw[::-1], 2)

    # -- raw-int operations ----------------------------------------------

    def validate(self, v: int) -> int:
        if not isinstance(v, int) or v < 0 or v > self.mask:
            raise FieldError(f"value does not fit in {self.n} bits: {v!r}")
        return v

    def add(self, a: int, b: int) -> int:
        return a ^ b

    def mul(self, a: int, b: int) -> int:
        if self._spread_ok:
            return self._compact(self._smul(self._spread(a), self._spread(b)))
        return self._mul_generic(a, b)

    def _mul_generic(self, a: int, b: int) -> int:
        p = 0
        while b:
            low = b & -b
            p ^= a << (low.bit_length() - 1)
            b ^= low
        return self.reduce(p)

    def reduce(self, p: int) -> int:
        """Reduce a carry-less product below 2^n."""
        n, poly = self.n, self.poly
        hi = p >> n
        while hi:
            p &= self.mask
            while hi:
                low = hi & -hi
                p ^= poly << (low.bit_length() - 1)
                hi ^= low
            hi = p >> n
        return p

    def inv(self, a: int) -> int:
        """Multiplicative inverse by the extended Euclidean algorithm."""
        if a == 0:
            raise NonInvertibleError("zero has no multiplicative inverse")
        if a == 1:
            return 1
        u, v = a, self.full_poly
        g1, g2 = 1, 0
        while u != 1:
            j = u.bit_length() - v.bit_length()
            if j < 0:
                u, v = v, u
                g1, g2 = g2, g1
                j = -j
            u ^= v << j
            g1 ^= g2 << j
        return _poly_mod(g1, self.full_poly)

    def pow(self, a: int, e: int) -> int:
        if e < 0:
            return self.pow(self.inv(a), -e)
        r, base = 1, a
        while e:
            if e & 1:
                r = self.mul(r, base)
            base = self.mul(base, base)
            e >>= 1
        return r

    def random_int(self, rng: random.Random, nonzero: bool = False) -> int:
        v = rng.getrandbits(self.n)
        while nonzero and v == 0:
            v = rng.getrandbits(self.n)
        return v

    # -- element construction / serialization -----------------------------

    @property
    def zero(self) -> "FieldElement":
        return FieldElement(self, 0)

    @property
    def one(self) -> "FieldElement":
        return FieldElement(self, 1)

    def element(self, value: int) -> "FieldElement":
        return FieldElement(self, self.validate(value))

    def encode(self, v: int) -> bytes:
        """Canonical wire/file form: little-endian bytes, bit i = coeff of x^i."""
        return v.to_bytes(self.element_bytes, "little")

    def decode(self, data: bytes) -> int:
        if len(data) != self.element_bytes:
            raise FieldError(
                f"expected {self.element_bytes} bytes for an n={self.n} element, got {len(data)}"
            )
        return self.validate(int.from_bytes(data, "little"))

    def __eq__(self, other) -> bool:
        return isinstance(other, FieldSpec) and self.n == other.n and self.poly == other.poly

    def __hash__(self) -> int:
        return hash((self.n, self.poly))

    def __repr__(self) -> str:
        return f"FieldSpec(n={self.n}, poly=0x{self.poly:x})"


class FieldElement:
    """An element of one GF(2^n), tied to its :class:`FieldSpec`.

    Immutable; arithmetic between elements of different specs raises
    :class:`FieldMismatchError`.
    """

    __slots__ = ("spec", "value")

    def __init__(self, spec: FieldSpec, value: int):
        object.__setattr__(self, "spec", spec)
        object.__setattr__(self, "value", spec.validate(value))

    def __setattr__(self, name, value):
        raise AttributeError("FieldElement is immutable")

    def _check(self, other: "FieldElement") -> "FieldElement":
        if not isinstance(other, FieldElement):
            raise TypeError(f"expected FieldElement, got {type(other).__name__}")
        if other.spec != self.spec:
            raise FieldMismatchError(f"field mismatch: {self.spec} vs {other.spec}")
        return other

    def __add__(self, other: "FieldElement") -> "FieldElement":
        return FieldElement(self.spec, self.value ^ self._check(other).value)

    __sub__ = __add__
    __xor__ = __add__

    def __mul__(self, other: "FieldElement") -> "FieldElement":
        return FieldElement(self.spec, self.spec.mul(self.value, self._check(other).value))

    def __pow__(self, e: int) -> "FieldElement":
        return FieldElement(self.spec, self.spec.pow(self.value, e))

    def inverse(self) -> "FieldElement":
        return FieldElement(self.spec, self.spec.inv(self.value))

    def __truediv__(self, other: "FieldElement") -> "FieldElement":
        return self * other.inverse()

    def __eq__(self, other) -> bool:
        if not isinstance(other, FieldElement):
            return NotImplemented
        return self.spec == other.spec and self.value == other.value

    def __hash__(self) -> int:
        return hash((self.spec, self.value))

    def __bool__(self) -> bool:
        return self.value != 0

    def __repr__(self) -> str:
        width = (self.spec.n + 3) // 4
        return f"<GF(2^{self.spec.n}): 0x{self.value:0{width}x}>"

    def to_bytes(self) -> bytes:
        return self.spec.encode(self.value)

    @classmethod
    def from_bytes(cls, spec: FieldSpec, data: bytes) -> "FieldElement":
        return cls(spec, spec.decode(data))


# -- spec-level operations on elements ------------------------------------

def add(a: FieldElement, b: FieldElement) -> FieldElement:
    """Field addition (bitwise XOR)."""
    return a + b


def mul(a: FieldElement, b: FieldElement) -> FieldElement:
    """Field multiplication (carry-less product mod the reduction polynomial)."""
    return a * b


def inv(a: FieldElement) -> FieldElement:
    """Multiplicative inverse; raises NonInvertibleError on zero."""
    return a.inverse()


def random_element(rng: random.Random, spec: FieldSpec, nonzero: bool = False) -> FieldElement:
    """Uniform element from `rng`; with `nonzero`, resample until != 0."""
    return FieldElement(spec, spec.random_int(rng, nonzero=nonzero))


def _batch_inverse_spread(spec: FieldSpec, values: Sequence[int]) -> list:
    """Spread-form inverses of `values` via Montgomery's trick.

    3 multiplications per element plus one EEA inversion, all in spread form;
    internal building block for chained verification.
    """
    smul, spread = spec._smul, spec._spread
    svals = []
    acc = spread(1)
    prefix = [acc]
    for i, v in enumerate(values):
        if v == 0:
            raise NonInvertibleError(f"zero at batch index {i}")
        sv = spread(v)
        svals.append(sv)
        acc = smul(acc, sv)
        prefix.append(acc)
    inv_acc = spread(spec.inv(spec._compact(acc)))
    out = [None] * len(values)
    for i in range(len(values) - 1, -1, -1):
        out[i] = smul(inv_acc, prefix[i])
        inv_acc = smul(inv_acc, svals[i])
    return out


def batch_inverse(spec: FieldSpec, values: Sequence[int]) -> list[int]:
    """Invert many elements with one EEA inversion (Montgomery's trick).

    Cost: 3 multiplications per element plus a single inversion. Raises
    NonInvertibleError if any input is zero.
    """
    if not values:
        return []
    if spec._spread_ok:
        return [spec._compact(sv) for sv in _batch_inverse_spread(spec, values)]
    prefix = [1] * (len(values) + 1)
    acc = 1
    for i, v in enumerate(values):
        if v == 0:
            raise NonInvertibleError(f"zero at batch index {i}")
        acc = spec.mul(acc, v)
        prefix[i + 1] = acc
    inv_acc = spec.inv(acc)
    out = [0] * len(values)
    for i in range(len(values) - 1, -1, -1):
        out[i] = spec.mul(inv_acc, prefix[i])
        inv_acc = spec.mul(inv_acc, values[i])
    return out


_CACHED_SPECS: dict[tuple[int, int], FieldSpec] = {}


def _cached_spec(n: int, poly: int) -> FieldSpec:
    key = (n, poly)
    spec = _CACHED_SPECS.get(key)
    if spec is None:
        spec = _CACHED_SPECS[key] = FieldSpec(n, poly)
    return spec


def gf2_128() -> FieldSpec:
    """The production field: GF(2^128) with x^128 + x^7 + x^2 + x + 1."""
    return _cached_spec(128, DEFAULT_POLYS[128])


def gf2_8() -> FieldSpec:
    """The exhaustively checkable test field: GF(2^8) with x^8+x^4+x^3+x+1."""
    return _cached_spec(8, DEFAULT_POLYS[8])
