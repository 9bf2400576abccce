"""Offloadable workloads and the task bundle that describes them.

Every bundle carries a cost model (``work_units`` times ``ms_per_unit`` is
the compute time on a single "main" clone) used by the deterministic clock,
a declared peak memory for the server's memory guard, and, for splittable
tasks, split/merge functions with ``merge(map(run, split(x, k))) == run(x)``.
"""

from __future__ import annotations

import hashlib
import math
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, NamedTuple, Sequence

import numpy as np

MB = 1024 * 1024


class InputError(ValueError):
    pass


@dataclass(frozen=True)
class TaskBundle:
    task_id: str
    version: int
    run: Callable[..., Any]
    work_units: Callable[[Any], int]
    input_size_proxy: Callable[[Any], float]
    peak_memory: Callable[[Any], float] = lambda _: 1.0  # MB
    split: Callable[[Any, int], list] | None = None
    merge: Callable[[list], Any] | None = None
    ms_per_unit: float = 1e-4
    stateful: bool = False  # run(input, state) mutates a dict-like state

    def __post_init__(self):
        if (self.split is None) != (self.merge is None):
            raise ValueError("split and merge come together")

    @property
    def splittable(self) -> bool:
        return self.split is not None

    @property
    def key(self) -> tuple[str, int]:
        return (self.task_id, self.version)

    def digest(self) -> bytes:
        """Identity + integrity hash exchanged during bundle negotiation."""
        ident = f"{self.task_id}:{self.version}:{self.run.__module__}.{self.run.__qualname__}"
        return hashlib.sha256(ident.encode()).digest()

    def cost_ms(self, input) -> float:
        return self.work_units(input) * self.ms_per_unit


def even_chunks(items: Sequence, k: int) -> list[list]:
    """Split into ``k`` contiguous chunks whose sizes differ by at most one."""
    if k < 1:
        raise ValueError("k must be >= 1")
    n = len(items)
    base, extra = divmod(n, k)
    out, start = [], 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        out.append(list(items[start:start + size]))
        start += size
    return out


# -- fibonacci ----------------------------------------------------------------

FIB_MAX = 40


def fibonacci(n: int) -> int:
    if not isinstance(n, int) or not 0 <= n <= FIB_MAX:
        raise InputError(f"fibonacci input must be an int in [0, {FIB_MAX}], got {n!r}")
    return _fib(n)


def _fib(n: int) -> int:
    if n < 2:
        return n
    return _fib(n - 1) + _fib(n - 2)


def fib_calls(n: int) -> int:
    """Calls made by the naive recursion: 2*F(n+1) - 1."""
    a, b = 0, 1
    for _ in range(n + 1):
        a, b = b, a + b
    return 2 * a - 1


# -- n-queens -----------------------------------------------------------------

class QueensPart(NamedTuple):
    n: int
    first_cols: tuple[int, ...]


def _queens_args(x) -> QueensPart:
    if isinstance(x, QueensPart):
        return x
    if not isinstance(x, int) or not 1 <= x <= 10:
        raise InputError(f"n-queens board size must be in [1, 10], got {x!r}")
    return QueensPart(x, tuple(range(x)))


def nqueens(x) -> int:
    """Count placements of N non-attacking queens, one per row.

    Accepts a board size or a ``QueensPart`` restricting the first-row column
    (the unit of parallel partitioning).
    """
    n, cols = _queens_args(x)
    full = (1 << n) - 1

    def place(row_cols, diag1, diag2):
        if row_cols == full:
            return 1
        count = 0
        free = full & ~(row_cols | diag1 | diag2)
        while free:
            bit = free & -free
            free ^= bit
            count += place(row_cols | bit, ((diag1 | bit) << 1) & full, (diag2 | bit) >> 1)
        return count

    total = 0
    for c in cols:
        bit = 1 << c
        total += place(bit, (bit << 1) & full, bit >> 1)
    return total


def nqueens_split(x, k: int) -> list[QueensPart]:
    n, cols = _queens_args(x)
    return [QueensPart(n, tuple(chunk)) for chunk in even_chunks(cols, k)]


def nqueens_work(x) -> int:
    # brute force over N^N row-constrained placements, N^(N-1) per first-row column
    n, cols = _queens_args(x)
    return len(cols) * n ** (n - 1)


# -- virus scan ---------------------------------------------------------------

class ScanJob(NamedTuple):
    corpus_dir: str
    signature_db: str
    files: tuple[str, ...] | None = None  # relative names; None means all files


def load_signatures(path) -> list[bytes]:
    sigs = [bytes.fromhex(line.strip()) for line in Path(path).read_text().splitlines()
            if line.strip()]
    if not sigs:
        raise InputError("empty signature database")
    return sigs


def _job_files(job: ScanJob) -> list[str]:
    if job.files is not None:
        return list(job.files)
    root = Path(job.corpus_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"corpus directory not found: {root}")
    return sorted(p.name for p in root.iterdir() if p.is_file())


class SignatureMatcher:
    """Multi-pattern matcher: a 4-byte prefix prefilter then exact comparison."""

    def __init__(self, signatures: Sequence[bytes]):
        if min(len(s) for s in signatures) < 4:
            raise InputError("signatures must be at least 4 bytes")
        self.by_prefix: dict[int, list[bytes]] = {}
        for s in signatures:
            self.by_prefix.setdefault(int.from_bytes(s[:4], "big"), []).append(s)
        self.prefixes = np.array(sorted(self.by_prefix), dtype=np.uint32)

    def matches(self, data: bytes) -> bool:
        if len(data) < 4:
            return False
        a = np.frombuffer(data, dtype=np.uint8).astype(np.uint32)
        keys = (a[:-3] << 24) | (a[1:-2] << 16) | (a[2:-1] << 8) | a[3:]
        idx = np.searchsorted(self.prefixes, keys)
        idx[idx == len(self.prefixes)] = 0
        for pos in np.flatnonzero(self.prefixes[idx] == keys):
            for sig in self.by_prefix[int(keys[pos])]:
                if data.startswith(sig, int(pos)):
                    return True
        return False


def virus_scan(job: ScanJob) -> int:
    """Number of files containing at least one signature."""
    matcher = SignatureMatcher(load_signatures(job.signature_db))
    root = Path(job.corpus_dir)
    found = 0
    for name in _job_files(job):
        if matcher.matches((root / name).read_bytes()):
            found += 1
    return found


def virus_split(job: ScanJob, k: int) -> list[ScanJob]:
    return [ScanJob(job.corpus_dir, job.signature_db, tuple(chunk))
            for chunk in even_chunks(_job_files(job), k)]


def virus_work(job: ScanJob) -> int:
    root = Path(job.corpus_dir)
    return sum((root / name).stat().st_size for name in _job_files(job))


def generate_virus_corpus(out_dir, n_files: int = 3500, total_bytes: int = 10 * MB,
                          n_signatures: int = 1000, planted: int = 7, sig_len: int = 16,
                          seed: int = 0) -> ScanJob:
    """Write a synthetic corpus with ``planted`` infected files."""
    if planted > n_files:
        raise InputError("more planted matches than files")
    rng = np.random.default_rng(seed)
    out = Path(out_dir)
    corpus = out / "corpus"
    corpus.mkdir(parents=True, exist_ok=True)
    sigs = [rng.integers(0, 256, sig_len, dtype=np.uint8).tobytes() for _ in range(n_signatures)]
    db = out / "signatures.txt"
    db.write_text("".join(s.hex() + "\n" for s in sigs))
    size = max(sig_len, total_bytes // n_files)
    infected = set(rng.choice(n_files, size=planted, replace=False).tolist())
    for i in range(n_files):
        body = bytearray(rng.integers(0, 256, size, dtype=np.uint8).tobytes())
        if i in infected:
            sig = sigs[int(rng.integers(0, n_signatures))]
            at = int(rng.integers(0, size - sig_len + 1))
            body[at:at + sig_len] = sig
        (corpus / f"f{i:05d}.bin").write_bytes(bytes(body))
    return ScanJob(str(corpus), str(db))


# -- image combiner -----------------------------------------------------------

class ImagePair(NamedTuple):
    w1: int
    h1: int
    w2: int
    h2: int


def _pair(x) -> ImagePair:
    p = ImagePair(*x)
    if min(p) <= 0:
        raise InputError(f"image dimensions must be > 0, got {p}")
    return p


def _synthetic(w: int, h: int, seed: int) -> np.ndarray:
    y, x = np.mgrid[0:h, 0:w].astype(np.uint32)
    img = np.empty((h, w, 4), dtype=np.uint8)
    img[..., 0] = (x + 3 * y + 17 * seed) & 0xFF
    img[..., 1] = (5 * x + y + seed) & 0xFF
    img[..., 2] = (x * y + seed) & 0xFF
    img[..., 3] = 0xFF
    return img


def image_combine(x) -> int:
    """Place two synthetic RGBA images side by side; CRC32 of the result."""
    w1, h1, w2, h2 = _pair(x)
    out = np.zeros((max(h1, h2), w1 + w2, 4), dtype=np.uint8)
    out[:h1, :w1] = _synthetic(w1, h1, 1)
    out[:h2, w1:] = _synthetic(w2, h2, 2)
    return zlib.crc32(out.tobytes())


def image_pixels(x) -> int:
    w1, h1, w2, h2 = _pair(x)
    return (w1 + w2) * max(h1, h2)


def image_peak_mb(x) -> float:
    w1, h1, w2, h2 = _pair(x)
    return (w1 + w2) * max(h1, h2) * 4 / MB


# -- language-benchmark kernels -----------------------------------------------

MANDEL_ITER = 50


def mandelbrot(n: int) -> int:
    """Sum of escape iteration counts over an n x n grid of [-1.5,0.5]x[-1,1]."""
    if not isinstance(n, int) or not 1 <= n <= 2000:
        raise InputError(f"mandelbrot size must be in [1, 2000], got {n!r}")
    ys, xs = np.mgrid[0:n, 0:n].astype(float)
    c = (2.0 * xs / n - 1.5) + 1j * (2.0 * ys / n - 1.0)
    z = np.zeros_like(c)
    count = np.zeros(c.shape, dtype=np.int64)
    alive = np.ones(c.shape, dtype=bool)
    for _ in range(MANDEL_ITER):
        z[alive] = z[alive] * z[alive] + c[alive]
        count[alive] += 1
        alive &= np.abs(z) <= 2.0
    return int(count.sum())


def _eval_a(i: np.ndarray, j: np.ndarray) -> np.ndarray:
    return 1.0 / ((i + j) * (i + j + 1) / 2 + i + 1)


def spectralnorm(n: int, iterations: int = 10) -> float:
    """Approximate largest singular value of the benchmark's infinite matrix."""
    if not isinstance(n, int) or not 1 <= n <= 2000:
        raise InputError(f"spectralnorm size must be in [1, 2000], got {n!r}")
    idx = np.arange(n, dtype=float)

    def a_times(u):
        return np.array([np.dot(_eval_a(i, idx), u) for i in idx])

    def at_times(u):
        return np.array([np.dot(_eval_a(idx, j), u) for j in idx])

    u = np.ones(n)
    v = np.zeros(n)
    for _ in range(iterations):
        v = at_times(a_times(u))
        u = at_times(a_times(v))
    return math.sqrt(float(np.dot(u, v)) / float(np.dot(v, v)))


# -- registry -----------------------------------------------------------------

FIBONACCI = TaskBundle("fibonacci", 1, fibonacci, fib_calls, lambda n: n, ms_per_unit=1.5e-4)
NQUEENS = TaskBundle("nqueens", 1, nqueens, nqueens_work, lambda x: _queens_args(x).n,
                     split=nqueens_split, merge=sum, ms_per_unit=1e-4)
VIRUS_SCAN = TaskBundle("virusscan", 1, virus_scan, virus_work, lambda j: len(_job_files(j)),
                        split=virus_split, merge=sum, ms_per_unit=1e-4)
IMAGE_COMBINE = TaskBundle("imagecombine", 1, image_combine, image_pixels, image_peak_mb,
                           peak_memory=image_peak_mb, ms_per_unit=2e-5)
MANDELBROT = TaskBundle("mandelbrot", 1, mandelbrot, lambda n: n * n * MANDEL_ITER, lambda n: n,
                        ms_per_unit=2e-4)
SPECTRALNORM = TaskBundle("spectralnorm", 1, spectralnorm, lambda n: 40 * n * n, lambda n: n,
                          ms_per_unit=2e-3)

WORKLOADS: dict[str, TaskBundle] = {t.task_id: t for t in (
    FIBONACCI, NQUEENS, VIRUS_SCAN, IMAGE_COMBINE, MANDELBROT, SPECTRALNORM)}
