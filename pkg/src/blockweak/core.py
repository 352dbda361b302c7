"""Problem structure, seeded instance generation and the instance document.

Random streams
--------------
Every random draw goes through :class:`RngSpec`.  A spec ``(master_seed,
stream_id)`` is turned into a :class:`numpy.random.SeedSequence` with entropy
``[master_seed, stream_id]`` which keys a Philox4x64 counter-based bit
generator; normals come from numpy's ziggurat sampler.  The string
:data:`RNG_ALGORITHM` names this pipeline and is written into every document
that depends on it.

Sub-streams for Monte Carlo units are derived with :func:`derive_stream_id`,
which folds integer indices through two rounds of the SplitMix64 finalizer.

Instance document
-----------------
JSON object with keys ``format, n, d, m, k, seed, rng_algorithm, A, y,
x_true, support, directions``.  ``A`` is row-major (a list of ``d*m`` rows of
length ``d*n``).  Floats are written as the shortest decimal string that
round-trips (Python ``repr``), so a serialize/deserialize cycle is
bit-identical.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from ._validation import blocks, check_directions, check_support

__all__ = [
    "RNG_ALGORITHM",
    "BlockStructure",
    "RngSpec",
    "ProblemInstance",
    "InstanceFormatError",
    "derive_stream_id",
    "generate_instance",
    "serialize_instance",
    "deserialize_instance",
]

RNG_ALGORITHM = "numpy-SeedSequence/Philox4x64/ziggurat-normal"
DOCUMENT_FORMAT = "blockweak.instance/1"

_MASK64 = (1 << 64) - 1


def _splitmix64(z):
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_stream_id(*indices):
    """Mix non-negative integer indices into one 64-bit stream id."""
    h = 0
    for i in indices:
        if i < 0:
            raise ValueError("stream indices must be non-negative")
        h = _splitmix64(_splitmix64(h ^ (i & _MASK64)))
    return h


@dataclass(frozen=True)
class RngSpec:
    master_seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("master_seed", "stream_id"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or not 0 <= v <= _MASK64:
                raise ValueError(f"{name} must be an integer in [0, 2**64), got {v!r}")

    def generator(self):
        seq = np.random.SeedSequence([int(self.master_seed), int(self.stream_id)])
        return np.random.Generator(np.random.Philox(seq))

    def child(self, *indices):
        """RngSpec for a sub-stream keyed by ``(stream_id, *indices)``."""
        return RngSpec(self.master_seed, derive_stream_id(self.stream_id, *indices))


@dataclass(frozen=True)
class BlockStructure:
    """Sizes of a block-sparse problem.

    ``n`` blocks of length ``d``; ``m`` measurement blocks (``d*m`` equations);
    ``k`` nonzero blocks.
    """

    n: int
    d: int
    m: int
    k: int

    def __post_init__(self):
        for name in ("n", "d", "m", "k"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
                raise TypeError(f"{name} must be an integer, got {v!r}")
        if self.d < 1 or self.n < 1:
            raise ValueError(f"need n >= 1 and d >= 1, got n={self.n}, d={self.d}")
        if not 1 <= self.m <= self.n:
            raise ValueError(f"need 1 <= m <= n, got m={self.m}, n={self.n}")
        if not 0 <= self.k <= self.n:
            raise ValueError(f"need 0 <= k <= n, got k={self.k}, n={self.n}")

    @property
    def N(self):
        return self.d * self.n

    @property
    def M(self):
        return self.d * self.m

    @property
    def alpha(self):
        return self.m / self.n

    @property
    def beta(self):
        return self.k / self.n


class InstanceFormatError(ValueError):
    """Malformed or inconsistent instance document; ``field`` names the culprit."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    structure: BlockStructure
    A: np.ndarray
    y: np.ndarray
    x_true: np.ndarray
    support: tuple
    directions: np.ndarray
    seed: int = None
    rng_algorithm: str = field(default=RNG_ALGORITHM)

    def __post_init__(self):
        s = self.structure
        A = np.asfortranarray(self.A, dtype=np.float64)
        if A.shape != (s.M, s.N):
            raise InstanceFormatError("A", f"expected shape {(s.M, s.N)}, got {A.shape}")
        y = np.array(self.y, dtype=np.float64)
        if y.shape != (s.M,):
            raise InstanceFormatError("y", f"expected length {s.M}, got {y.shape}")
        x = np.array(self.x_true, dtype=np.float64)
        if x.shape != (s.N,):
            raise InstanceFormatError("x_true", f"expected length {s.N}, got {x.shape}")
        try:
            supp = check_support(self.support, s.n)
        except ValueError as exc:
            raise InstanceFormatError("support", str(exc)) from None
        if supp.size != s.k:
            raise InstanceFormatError("support", f"expected {s.k} indices, got {supp.size}")
        if np.any(np.diff(supp) <= 0):
            raise InstanceFormatError("support", "indices must be sorted ascending")
        try:
            D = check_directions(self.directions, s.k, s.d)
        except ValueError as exc:
            raise InstanceFormatError("directions", str(exc)) from None
        off = np.ones(s.n, dtype=bool)
        off[supp] = False
        if np.any(blocks(x, s.d)[off] != 0.0):
            raise InstanceFormatError("x_true", "blocks outside the support must be zero")
        for arr in (A, y, x, D):
            arr.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x_true", x)
        object.__setattr__(self, "support", tuple(int(i) for i in supp))
        object.__setattr__(self, "directions", D)

    @property
    def support_array(self):
        return np.asarray(self.support, dtype=np.int64)

    def magnitudes(self):
        return np.linalg.norm(blocks(self.x_true, self.structure.d)[self.support_array], axis=1)


def generate_instance(structure, magnitude_low=1.0, magnitude_high=2.0, rng=RngSpec(0)):
    """Draw a Gaussian measurement matrix and a planted block-sparse signal.

    Draw order is fixed: ``A`` (row-major normals), the support (uniform
    without replacement, then sorted), the directions (normalized normals),
    the magnitudes (uniform in ``[magnitude_low, magnitude_high]``).
    """
    if not 0.0 < magnitude_low <= magnitude_high:
        raise ValueError("need 0 < magnitude_low <= magnitude_high")
    s = structure
    gen = rng.generator()
    A = gen.standard_normal((s.M, s.N))
    support = np.sort(gen.choice(s.n, size=s.k, replace=False)) if s.k else np.zeros(0, np.int64)
    D = gen.standard_normal((s.k, s.d))
    D /= np.linalg.norm(D, axis=1, keepdims=True) if s.k else 1.0
    mags = gen.uniform(magnitude_low, magnitude_high, size=s.k)
    X = np.zeros((s.n, s.d))
    X[support] = D * mags[:, None]
    x = X.reshape(-1)
    return ProblemInstance(structure=s, A=A, y=A @ x, x_true=x, support=support,
                           directions=D, seed=int(rng.master_seed))


def _instance_to_dict(inst):
    s = inst.structure
    return {
        "format": DOCUMENT_FORMAT,
        "n": s.n,
        "d": s.d,
        "m": s.m,
        "k": s.k,
        "seed": inst.seed,
        "rng_algorithm": inst.rng_algorithm,
        "A": np.ascontiguousarray(inst.A).tolist(),
        "y": inst.y.tolist(),
        "x_true": inst.x_true.tolist(),
        "support": list(inst.support),
        "directions": inst.directions.tolist(),
    }


def serialize_instance(inst):
    return json.dumps(_instance_to_dict(inst), separators=(",", ":")) + "\n"


def _require(doc, key):
    if key not in doc:
        raise InstanceFormatError(key, "missing field")
    return doc[key]


def _float_array(doc, key, shape):
    try:
        arr = np.array(_require(doc, key), dtype=np.float64)
    except (TypeError, ValueError):
        raise InstanceFormatError(key, "expected an array of numbers") from None
    if arr.shape != shape and not (arr.size == 0 and int(np.prod(shape)) == 0):
        raise InstanceFormatError(key, f"expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InstanceFormatError(key, "non-finite value")
    return arr.reshape(shape)


def deserialize_instance(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceFormatError("document", f"invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise InstanceFormatError("document", "expected a JSON object")
    dims = {}
    for key in ("n", "d", "m", "k"):
        v = _require(doc, key)
        if isinstance(v, bool) or not isinstance(v, int):
            raise InstanceFormatError(key, "expected an integer")
        dims[key] = v
    try:
        s = BlockStructure(**dims)
    except (TypeError, ValueError) as exc:
        raise InstanceFormatError("structure", str(exc)) from None
    A = _float_array(doc, "A", (s.M, s.N))
    y = _float_array(doc, "y", (s.M,))
    x = _float_array(doc, "x_true", (s.N,))
    support = _require(doc, "support")
    if not isinstance(support, list) or not all(isinstance(i, int) and not isinstance(i, bool)
                                                for i in support):
        raise InstanceFormatError("support", "expected a list of integers")
    D = _float_array(doc, "directions", (s.k, s.d))
    seed = doc.get("seed")
    return ProblemInstance(structure=s, A=A, y=y, x_true=x, support=tuple(support),
                           directions=D, seed=seed,
                           rng_algorithm=doc.get("rng_algorithm", RNG_ALGORITHM))


def instance_from_signal(A, x, d, seed=None):
    """Wrap a hand-built ``(A, x)`` pair; ``y`` is computed as ``A @ x``."""
    A = np.asarray(A, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    X = blocks(x, d)
    norms = np.linalg.norm(X, axis=1)
    support = np.flatnonzero(norms > 0)
    s = BlockStructure(n=X.shape[0], d=d, m=A.shape[0] // d, k=support.size)
    return ProblemInstance(structure=s, A=A, y=A @ x, x_true=x, support=support,
                           directions=X[support] / norms[support, None], seed=seed)
