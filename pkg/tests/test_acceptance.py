"""Exit criteria for the harness.

Each test carries ``@pytest.mark.acceptance(N)``; the session summary prints
one ``ACN: PASS|FAIL`` line per criterion.
"""

import math
import random
import string
import time

import numpy as np
import pytest

from semscale.backend import BackendConfig, RemoteBackend
from semscale.classifier import LabelMatrix, Prediction, accuracy, classify, classify_many
from semscale.cli import cli_main
from semscale.dataset import Dataset, ImageRecord, scan_dataset
from semscale.experiment import IterationResult, StopPolicy, StopReason, detect_stop, run_experiment
from semscale.labels import BUILTIN_TEMPLATES, EquivalenceMap, build_equivalence_map, expand_label
from semscale.report import write_results_csv
from semscale.simulator import generate_world, monte_carlo_curve

ac = pytest.mark.acceptance


# AC1 -----------------------------------------------------------------------


@ac(1)
def test_ac01_expansion_round_trip():
    rng = random.Random(1)
    names = set()
    while len(names) < 1000:
        names.add("".join(rng.choice(string.ascii_lowercase) for _ in range(rng.randint(4, 12))))
    names = sorted(names)
    t0 = time.perf_counter()
    eq = build_equivalence_map(names, BUILTIN_TEMPLATES, BUILTIN_TEMPLATES.max_k)
    failures = sum(eq.surface_to_base[s] != c for c in names for s in expand_label(c, BUILTIN_TEMPLATES, 9))
    elapsed = time.perf_counter() - t0
    assert len(eq.surfaces) == len(eq) == 10_000
    assert failures == 0
    assert elapsed < 1.0


# AC2 -----------------------------------------------------------------------


def _brute_force_accuracy(pairs):
    correct = 0
    for guess, truth in pairs:
        if guess == truth:
            correct = correct + 1
    return correct * 100 / len(pairs)


@ac(2)
def test_ac02_accuracy_matches_counting_oracle():
    rng = random.Random(2)
    for _ in range(100):
        classes = [f"c{i}" for i in range(rng.randint(2, 20))]
        n = rng.randint(10, 200)
        truth = [rng.choice(classes) for _ in range(n)]
        guesses = [rng.choice(classes) for _ in range(n)]
        records = [ImageRecord(f"img/{i:03d}.jpg", t) for i, t in enumerate(truth)]
        ds = Dataset.from_records(records)
        preds = [Prediction(r.path, g, g, 0.0) for r, g in zip(records, guesses)]
        rng.shuffle(preds)
        assert abs(accuracy(preds, ds) - _brute_force_accuracy(list(zip(guesses, truth)))) <= 1e-9


# AC3 -----------------------------------------------------------------------


def _double_loop_argmax(x, label_vecs):
    best_i, best = 0, None
    for i in range(len(label_vecs)):
        dot = sum(float(a) * float(b) for a, b in zip(x, label_vecs[i]))
        na = math.sqrt(sum(float(a) ** 2 for a in x))
        nb = math.sqrt(sum(float(b) ** 2 for b in label_vecs[i]))
        s = dot / (na * nb)
        if best is None or s > best:
            best_i, best = i, s
    return best_i


def _flat_map(bases):
    surfaces = tuple(f"s{i}" for i in range(len(bases)))
    s2b = dict(zip(surfaces, bases))
    b2s = {}
    for s, b in s2b.items():
        b2s.setdefault(b, []).append(s)
    return surfaces, EquivalenceMap(s2b, {b: tuple(v) for b, v in b2s.items()}, 0, surfaces)


@ac(3)
def test_ac03_classify_matches_double_loop():
    rng = np.random.default_rng(3)
    ties_seen = 0
    for inst in range(50):
        n_cls = int(rng.integers(2, 11))
        dim = int(rng.integers(2, 17))
        n_img = int(rng.integers(1, 101))
        bases = [f"c{i}" for i in range(n_cls)]
        vecs = rng.standard_normal((n_cls, dim))
        labels_b = list(bases)
        if inst % 2 == 0:
            # duplicated vectors under a different class force exact ties
            j = int(rng.integers(0, n_cls))
            vecs = np.vstack([vecs, vecs[j]])
            labels_b.append(bases[(j + 1) % n_cls])
        surfaces, eq = _flat_map(labels_b)
        lm = LabelMatrix(surfaces, vecs, 0)
        imgs = rng.standard_normal((n_img, dim))
        if inst % 2 == 0:
            imgs[: n_img // 2] = vecs[-1] * rng.uniform(0.5, 2.0)
        batched = classify_many(imgs, lm, eq, [f"r{i}" for i in range(n_img)])
        for i, x in enumerate(imgs):
            want = surfaces[_double_loop_argmax(x, lm.vectors)]
            assert classify(x, lm, eq).surface == want
            assert batched[i].surface == want
            if inst % 2 == 0 and i < n_img // 2:
                ties_seen += 1
                assert want == surfaces[j]
    assert ties_seen > 0


# AC4 -----------------------------------------------------------------------


def _random_instance(rng):
    n_cls = int(rng.integers(2, 11))
    dim = int(rng.integers(2, 17))
    bases = [f"c{i}" for i in range(n_cls)]
    per = int(rng.integers(1, 4))
    labels_b = [b for _ in range(per) for b in bases]
    vecs = rng.standard_normal((len(labels_b), dim))
    imgs = rng.standard_normal((int(rng.integers(1, 30)), dim))
    return labels_b, vecs, imgs


@ac(4)
def test_ac04_scale_invariance():
    rng = np.random.default_rng(41)
    violations = 0
    for _ in range(1000):
        labels_b, vecs, imgs = _random_instance(rng)
        surfaces, eq = _flat_map(labels_b)
        paths = [str(i) for i in range(len(imgs))]
        ref = [p.surface for p in classify_many(imgs, LabelMatrix(surfaces, vecs, 0), eq, paths)]
        for c in (0.5, 3.0):
            scaled_img = [p.surface for p in classify_many(imgs * c, LabelMatrix(surfaces, vecs, 0), eq, paths)]
            scaled_lab = [p.surface for p in classify_many(imgs, LabelMatrix(surfaces, vecs * c, 0), eq, paths)]
            violations += (scaled_img != ref) + (scaled_lab != ref)
    assert violations == 0


@ac(4)
def test_ac04_duplicate_label_safety():
    rng = np.random.default_rng(42)
    violations = 0
    for _ in range(1000):
        labels_b, vecs, imgs = _random_instance(rng)
        surfaces, eq = _flat_map(labels_b)
        paths = [str(i) for i in range(len(imgs))]
        ref = [p.base for p in classify_many(imgs, LabelMatrix(surfaces, vecs, 0), eq, paths)]
        picks = rng.integers(0, len(labels_b), size=int(rng.integers(1, 6)))
        dup_b = labels_b + [labels_b[i] for i in picks]
        dup_surfaces, dup_eq = _flat_map(dup_b)
        dup_vecs = np.vstack([vecs, vecs[picks]])
        got = [p.base for p in classify_many(imgs, LabelMatrix(dup_surfaces, dup_vecs, 0), dup_eq, paths)]
        violations += got != ref
    assert violations == 0


# AC5 -----------------------------------------------------------------------

# first oracle run of the acceptance world (mean accuracy, percent)
PINNED_K0 = 44.081
PINNED_K9 = 24.3375
PINNED_EARLY_STEP = -5.73225
PINNED_LATE_STEP = -0.645333


@pytest.fixture(scope="module")
def acceptance_curve():
    world = generate_world(20, 64, 0.6, 0.4, seed=42)
    t0 = time.perf_counter()
    curve = monte_carlo_curve(world, range(10), n_per_class=50, n_trials=200)
    return curve, time.perf_counter() - t0


@ac(5)
def test_ac05_fixture_numbers_pinned(acceptance_curve):
    curve, elapsed = acceptance_curve
    mean = curve.mean
    assert mean[0] == pytest.approx(PINNED_K0, abs=1e-9)
    assert mean[9] == pytest.approx(PINNED_K9, abs=1e-9)
    assert elapsed < 120


@ac(5)
def test_ac05_plateau_shape(acceptance_curve):
    curve, _ = acceptance_curve
    mean = curve.mean
    steps = np.diff(mean)
    early = steps[[0, 1]].mean()  # deltas into k=1, k=2
    late = steps[[6, 7, 8]].mean()  # deltas into k=7, 8, 9
    assert early == pytest.approx(PINNED_EARLY_STEP, abs=1e-6)
    assert late == pytest.approx(PINNED_LATE_STEP, abs=1e-6)
    assert mean[9] >= mean[0] - 0.5, f"k=9 {mean[9]:.3f} vs k=0 {mean[0]:.3f}"
    assert late < early / 2, f"late step {late:.4f} vs early step {early:.4f}"


# AC6 -----------------------------------------------------------------------


@ac(6)
def test_ac06_zero_noise_collapses():
    t0 = time.perf_counter()
    clean_images = monte_carlo_curve(generate_world(20, 64, 0.0, 0.4, seed=42), range(10), 50, 10)
    assert np.all(clean_images.per_trial == 100.0)
    clean_labels = monte_carlo_curve(generate_world(20, 64, 0.6, 0.0, seed=42), range(10), 50, 10)
    spread = clean_labels.per_trial.max(axis=1) - clean_labels.per_trial.min(axis=1)
    assert np.all(spread <= 1e-9)
    assert time.perf_counter() - t0 < 10


# AC7 -----------------------------------------------------------------------


def _history(deltas, base=50.0):
    hist, acc = [IterationResult(0, base, 0.0, 0.0, 1)], base
    for k, d in enumerate(deltas, start=1):
        acc += d
        hist.append(IterationResult(k, acc, d, acc - base, k + 1))
    return hist


@ac(7)
@pytest.mark.parametrize(
    "deltas,expected",
    [
        ([2.0, 0.05, 0.04], StopReason.STAGNATED),
        ([2.0, -0.5], StopReason.DECREASED),
        ([1.0, -0.8, 0.9], StopReason.FLUCTUATED),
    ],
)
def test_ac07_worked_examples(deltas, expected):
    assert detect_stop(_history(deltas), StopPolicy(epsilon_pp=0.1, patience=2)) is expected


@ac(7)
def test_ac07_precedence_exhaustive():
    eps = 0.1
    values = [-1.0, -0.5, -0.05, 0.0, 0.05, 0.5, 1.0]
    checked = 0
    for a in values:
        for b in values:
            for c in values:
                for max_k in (1, 3, 5):
                    for patience in (1, 2, 3):
                        deltas = [a, b, c]
                        policy = StopPolicy(epsilon_pp=eps, patience=patience, max_k=max_k)
                        dec = c < -eps
                        flu = all(abs(d) >= eps for d in deltas) and (a > 0) != (b > 0) and (b > 0) != (c > 0)
                        stag = all(abs(d) < eps for d in deltas[-patience:])
                        mk = 3 >= max_k
                        want = (
                            StopReason.DECREASED if dec
                            else StopReason.FLUCTUATED if flu
                            else StopReason.STAGNATED if stag
                            else StopReason.MAX_K if mk
                            else None
                        )
                        assert detect_stop(_history(deltas), policy) is want, (deltas, max_k, patience)
                        checked += 1
    assert checked == 7**3 * 9


# AC8 -----------------------------------------------------------------------


@ac(8)
@pytest.mark.parametrize("batch_size", [4, 7, 32])
def test_ac08_backend_request_efficiency(stub_server, image_tree, batch_size):
    ds = scan_dataset(image_tree)
    assert len(ds) == 30 and len(ds.classes) == 5
    cfg = BackendConfig(kind="remote", base_url=stub_server.url, batch_size=batch_size, max_in_flight=2)
    policy = StopPolicy(max_k=2, early_stop=False)
    with RemoteBackend(cfg) as backend:
        rep = run_experiment(ds, BUILTIN_TEMPLATES, policy, backend)
    assert [r.k for r in rep.history] == [0, 1, 2]
    assert stub_server.requests["/embed/image"] == math.ceil(30 / batch_size)
    assert sum(stub_server.batch_sizes["/embed/image"]) == 30
    sent = [t for body in stub_server.bodies for t in body.get("texts", [])]
    assert len(sent) == len(set(sent)) == 15
    per_k = [set(build_equivalence_map(ds.classes, BUILTIN_TEMPLATES, k).surfaces) for k in range(3)]
    wanted_new = [per_k[0], per_k[1] - per_k[0], per_k[2] - per_k[1]]
    assert set(sent) == set().union(*wanted_new)
    assert stub_server.requests["/embed/text"] == sum(math.ceil(len(w) / batch_size) for w in wanted_new)


# AC9 -----------------------------------------------------------------------


@ac(9)
def test_ac09_simulate_byte_identical(tmp_path):
    argv = ["--classes", "20", "--dim", "64", "--n-per-class", "10", "--worlds", "2", "--seed", "42"]
    assert cli_main(["simulate", "--output", str(tmp_path / "a"), *argv]) == 0
    assert cli_main(["simulate", "--output", str(tmp_path / "b"), *argv]) == 0
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.name == "report.csv" or p.name.startswith("fig"))
    assert len([f for f in files if f.name.startswith("fig")]) == 5
    assert len([f for f in files if f.name == "report.csv"]) == 2
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f


# AC10 ----------------------------------------------------------------------


@ac(10)
def test_ac10_csv_bit_exact(tmp_path):
    preds = [
        Prediction("plain/a.jpg", "Large flowers", "flower", 0.9),
        Prediction("with,comma/b.jpg", "cats", "cat", 0.5),
        Prediction('say "cheese".png', 'Broad Category "dog"', "dog", 0.4),
        Prediction("日本/café ñ.jpg", "Small birds", "bird", 0.3),
    ]
    out = tmp_path / "results.csv"
    write_results_csv(preds, out)
    expected = (
        "filepath,classification\n"
        "plain/a.jpg,Large flowers\n"
        '"with,comma/b.jpg",cats\n'
        '"say ""cheese"".png","Broad Category ""dog"""\n'
        "日本/café ñ.jpg,Small birds\n"
    ).encode("utf-8")
    assert out.read_bytes() == expected
