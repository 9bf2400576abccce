import pytest
from hypothesis import given, settings, strategies as st

import oracles
from offload.workloads import (FIBONACCI, IMAGE_COMBINE, MB, NQUEENS, WORKLOADS, ImagePair,
                               InputError, QueensPart, ScanJob, SignatureMatcher, even_chunks,
                               fib_calls, fibonacci, generate_virus_corpus, image_combine,
                               image_peak_mb, mandelbrot, nqueens, nqueens_split, spectralnorm,
                               virus_scan, virus_split)


@pytest.mark.parametrize("n", [0, 1, 2, 10, 20, 25])
def test_fibonacci(n):
    assert fibonacci(n) == oracles.fib(n)


def test_fib_examples_and_bounds():
    assert (fibonacci(0), fibonacci(1), fibonacci(10)) == (0, 1, 55)
    for bad in (-1, 41, 2.5, "3"):
        with pytest.raises(InputError):
            fibonacci(bad)


def test_fib_call_count():
    calls = 0

    def f(n):
        nonlocal calls
        calls += 1
        return n if n < 2 else f(n - 1) + f(n - 2)
    for n in range(15):
        calls = 0
        f(n)
        assert fib_calls(n) == calls


@pytest.mark.parametrize("n", range(1, 9))
def test_nqueens_against_permutation_oracle(n):
    assert nqueens(n) == oracles.queens(n)


def test_nqueens_known_values():
    assert (nqueens(1), nqueens(6), nqueens(8)) == (1, 4, 92)
    with pytest.raises(InputError):
        nqueens(0)


@given(st.integers(1, 8), st.integers(1, 12))
def test_nqueens_split_partitions_columns(n, k):
    parts = nqueens_split(n, k)
    assert len(parts) == k
    assert sorted(c for p in parts for c in p.first_cols) == list(range(n))
    assert sum(nqueens(p) for p in parts) == nqueens(n)
    assert sum(NQUEENS.work_units(p) for p in parts) == NQUEENS.work_units(n)


@given(st.lists(st.integers(), max_size=50), st.integers(1, 20))
def test_even_chunks(items, k):
    chunks = even_chunks(items, k)
    assert len(chunks) == k
    assert [x for c in chunks for x in c] == items
    sizes = [len(c) for c in chunks]
    assert max(sizes) - min(sizes) <= 1


def test_virus_fixture_counts(tmp_path):
    job = generate_virus_corpus(tmp_path / "a", n_files=200, total_bytes=200 * 512, n_signatures=30,
                                planted=7, seed=4)
    assert virus_scan(job) == 7
    assert sum(virus_scan(p) for p in virus_split(job, 7)) == 7
    clean = generate_virus_corpus(tmp_path / "b", n_files=50, total_bytes=50 * 256,
                                  n_signatures=30, planted=0)
    assert virus_scan(clean) == 0


def test_virus_fixture_is_reproducible(tmp_path):
    a = generate_virus_corpus(tmp_path / "a", n_files=30, total_bytes=3000, n_signatures=5, seed=9)
    b = generate_virus_corpus(tmp_path / "b", n_files=30, total_bytes=3000, n_signatures=5, seed=9)
    for name in sorted(p.name for p in (tmp_path / "a" / "corpus").iterdir()):
        assert (tmp_path / "a" / "corpus" / name).read_bytes() == \
            (tmp_path / "b" / "corpus" / name).read_bytes()
    assert virus_scan(a) == virus_scan(b)


@settings(max_examples=200)
@given(st.lists(st.binary(min_size=4, max_size=8), min_size=1, max_size=5), st.binary(max_size=200))
def test_signature_matcher_agrees_with_substring_search(sigs, data):
    assert SignatureMatcher(sigs).matches(data) == any(s in data for s in sigs)


def test_virus_input_errors(tmp_path):
    (tmp_path / "empty.txt").write_text("")
    with pytest.raises(InputError):
        virus_scan(ScanJob(str(tmp_path), str(tmp_path / "empty.txt")))
    with pytest.raises(InputError):
        SignatureMatcher([b"ab"])


def test_image_combine_against_oracle():
    assert image_combine((1, 1, 1, 1)) == oracles.image_crc(1, 1, 1, 1)
    assert image_combine((7, 3, 5, 6)) == oracles.image_crc(7, 3, 5, 6)
    with pytest.raises(InputError):
        image_combine((0, 1, 1, 1))


def test_image_peak_sizes():
    assert image_peak_mb(ImagePair(4096, 3840, 4096, 3840)) == 120.0
    assert IMAGE_COMBINE.peak_memory((1, 1, 1, 1)) == 8 / MB


@pytest.mark.parametrize("n", [1, 2, 7, 16])
def test_mandelbrot_against_scalar_oracle(n):
    assert mandelbrot(n) == oracles.mandelbrot(n)


@pytest.mark.parametrize("n", [1, 3, 10, 40])
def test_spectralnorm_against_dense_oracle(n):
    assert spectralnorm(n) == pytest.approx(oracles.spectralnorm(n), rel=1e-12)


def test_spectralnorm_converges_to_known_constant():
    assert spectralnorm(100) == pytest.approx(1.274219991, abs=1e-8)


def test_bundles_are_consistent():
    for task in WORKLOADS.values():
        assert task.digest() == task.digest() and len(task.digest()) == 32
        assert task.splittable == (task.merge is not None)
    assert len({t.digest() for t in WORKLOADS.values()}) == len(WORKLOADS)
    assert FIBONACCI.cost_ms(10) == pytest.approx(fib_calls(10) * FIBONACCI.ms_per_unit)
    assert NQUEENS.work_units(QueensPart(8, (0,))) == 8 ** 7
