import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from como.data import DatasetSpec, Domain, generate
from como.errors import ContractError, DimensionError
from como.evaluation import (
    FOOTER,
    MIN_REAL_PER_BIN,
    REPORT_HEADER,
    BinSpec,
    RollingResult,
    bundle_generator,
    constant_generator,
    diversity_score,
    dual_distance,
    emit_strip,
    error_stats,
    extractor_accuracy,
    feature_frechet,
    frechet_distance,
    gaussian_stats,
    guidance_generator,
    manifold_error,
    memorizer_generator,
    noise_generator,
    phi_abs_error,
    phi_class,
    plot_rolling,
    real_self_rolling,
    rolling_frechet,
    strip_array,
    train_extractor,
    write_rolling_csv,
)
from como.guidance import TWO_PI, Manifold, make_guidance, project_values
from como.networks import GeneratorBundle, NetConfig, PhiNetA
from como.numerics import Tensor

from oracles import reference_frechet

LIN, CYC = Manifold.LINEAR, Manifold.CYCLIC


def random_spd(rng, d):
    a = rng.standard_normal((d, d))
    return a @ a.T + 0.1 * np.eye(d)


@pytest.fixture(scope="module")
def digits():
    return generate(DatasetSpec(task="digits_brightness", image_size=16, n_source_train=200, n_target_train=600,
                                n_source_val=100, n_target_val=200, seed=0))


@pytest.fixture(scope="module")
def extractor(digits):
    return train_extractor(digits, seed=0, epochs=6, lr=3e-3)


@pytest.fixture(scope="module")
def real_pool(digits):
    tr, va = digits.subset(Domain.TARGET, "train"), digits.subset(Domain.TARGET, "val")
    return np.concatenate([tr.images, va.images]), np.concatenate([tr.phi, va.phi])


# -- Fréchet distance ---------------------------------------------------------------------------

def test_identical_gaussians_are_zero():
    rng = np.random.default_rng(0)
    mu, s = rng.standard_normal(5), random_spd(rng, 5)
    assert frechet_distance(mu, s, mu, s) == pytest.approx(0.0, abs=1e-9)


def test_mean_shift_only():
    rng = np.random.default_rng(1)
    s, d = random_spd(rng, 4), rng.standard_normal(4)
    assert frechet_distance(np.zeros(4), s, d, s) == pytest.approx(float(d @ d), rel=1e-8)


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_matches_scipy_reference(seed):
    rng = np.random.default_rng(seed)
    mu1, mu2 = rng.standard_normal(4), rng.standard_normal(4)
    s1, s2 = random_spd(rng, 4), random_spd(rng, 4)
    assert frechet_distance(mu1, s1, mu2, s2) == pytest.approx(reference_frechet(mu1, s1, mu2, s2), abs=1e-6)


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_symmetric_and_nonnegative(seed):
    rng = np.random.default_rng(seed)
    f1, f2 = rng.standard_normal((20, 6)), rng.standard_normal((15, 6)) * 0.5 + 0.2
    a, b = feature_frechet(f1, f2), feature_frechet(f2, f1)
    assert a >= 0 and a == pytest.approx(b, abs=1e-6)


def test_rank_deficient_covariance_stays_nonnegative():
    # fewer samples than dimensions: singular covariances, clipping keeps the value >= 0
    rng = np.random.default_rng(2)
    f = rng.standard_normal((3, 8))
    assert feature_frechet(f, f) == pytest.approx(0.0, abs=1e-8)


def test_dimension_mismatch():
    with pytest.raises(DimensionError):
        frechet_distance(np.zeros(3), np.eye(3), np.zeros(4), np.eye(4))


def test_gaussian_stats():
    f = np.array([[0.0, 1.0], [2.0, 3.0]])
    mu, s = gaussian_stats(f)
    np.testing.assert_allclose(mu, [1.0, 2.0])
    np.testing.assert_allclose(s, [[2.0, 2.0], [2.0, 2.0]])


# -- manifold error ---------------------------------------------------------------------------

class FixedHead(PhiNetA):
    def __init__(self, manifold, values):
        self.manifold = manifold
        self.values = np.asarray(values, float)

    def forward(self, y):
        return Tensor(project_values(self.values[: y.shape[0]], self.manifold))


def test_perfect_predictor():
    truth = np.linspace(0, 1, 11)
    assert manifold_error(FixedHead(LIN, truth), np.zeros((11, 3, 8, 8)), truth) == pytest.approx((0.0, 0.0), abs=1e-7)


def test_cyclic_error_wraps():
    assert float(phi_abs_error(TWO_PI - 0.1, 0.1, CYC)) == pytest.approx(0.2)
    mean, _ = manifold_error(FixedHead(CYC, [TWO_PI - 0.1]), np.zeros((1, 3, 8, 8)), [0.1])
    assert mean == pytest.approx(0.2, abs=1e-6)


def test_midpoint_predictor_on_uniform_truth():
    truth = (np.arange(10_000) + 0.5) / 10_000
    mean, _ = error_stats(np.full_like(truth, 0.5), truth, LIN)
    assert mean == pytest.approx(0.25, abs=1e-6)


@given(st.lists(st.floats(0, TWO_PI, exclude_max=True), min_size=1, max_size=20), st.integers(-3, 3))
def test_cyclic_error_invariant_to_full_turns(estimates, turns):
    truth = np.linspace(0, 6, len(estimates))
    a = phi_abs_error(np.array(estimates), truth, CYC)
    b = phi_abs_error(np.array(estimates) + turns * TWO_PI, truth, CYC)
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_empty_validation_set():
    with pytest.raises(ContractError):
        manifold_error(FixedHead(LIN, []), np.zeros((0, 3, 8, 8)), [])
    with pytest.raises(ContractError):
        error_stats([], [], LIN)


# -- extractor --------------------------------------------------------------------------------

def test_phi_classes():
    np.testing.assert_array_equal(phi_class([0.0, 0.124, 0.125, 0.999, 1.0], LIN), [1, 1, 2, 8, 8])
    np.testing.assert_array_equal(phi_class([0.0, TWO_PI - 1e-9], CYC), [1, 8])


def test_extractor_learns_and_is_deterministic(digits, extractor):
    val = digits.subset(Domain.TARGET, "val")
    src = digits.subset(Domain.SOURCE, "val")
    images = np.concatenate([src.images, val.images])
    labels = np.concatenate([np.zeros(len(src), int), phi_class(val.phi, LIN)])
    assert extractor_accuracy(extractor, images, labels) > 3 / 9  # chance is 1/9
    again = train_extractor(digits, seed=0, epochs=6, lr=3e-3)
    assert np.array_equal(extractor.features(images[:10]), again.features(images[:10]))


def test_features_are_frozen(extractor, digits):
    before = {n: p.data.copy() for n, p in extractor.named_parameters()}
    extractor.features(digits.subset(Domain.TARGET, "val").images)
    assert all(np.array_equal(before[n], p.data) for n, p in extractor.named_parameters())
    assert all(not p.requires_grad for p in extractor.parameters())


# -- bins and rolling Fréchet ---------------------------------------------------------------------

def test_bin_layout():
    b = BinSpec(LIN, count=4)
    np.testing.assert_allclose(b.centers(), [0.125, 0.375, 0.625, 0.875])
    assert b.bin_width == pytest.approx(0.5)
    c = BinSpec(CYC, count=8)
    # the bin around the first centre wraps across 2*pi
    assert c.members([TWO_PI - 0.1], c.centers()[0])[0]
    assert not BinSpec(LIN, count=4).members([0.9], 0.125)[0]


@given(st.sampled_from([LIN, CYC]), st.integers(2, 30))
def test_bins_cover_the_range(manifold, count):
    b = BinSpec(manifold, count=count)
    phi = np.linspace(0, manifold.span, 500, endpoint=manifold is LIN)
    covered = np.zeros(len(phi), bool)
    for c in b.centers():
        covered |= b.members(phi, c)
    assert covered.all()


def test_sample_in_bin_stays_in_bin():
    b = BinSpec(CYC, count=10)
    rng = np.random.default_rng(0)
    for c in b.centers():
        assert b.members(b.sample_in_bin(c, 50, rng), c).all()


def test_real_against_itself_is_zero(extractor, real_pool):
    res = real_self_rolling(extractor, BinSpec(LIN, count=10), *real_pool)
    assert res.present.all()
    np.testing.assert_allclose(res.scores, 0.0, atol=1e-6)


def test_noise_scores_worse_than_guidance(extractor, digits, real_pool):
    bins = BinSpec(LIN, count=10)
    sources = digits.subset(Domain.SOURCE, "val").images
    guided = rolling_frechet(guidance_generator(make_guidance("brightness")), extractor, bins, *real_pool, sources)
    noise = rolling_frechet(noise_generator(0), extractor, bins, *real_pool, sources)
    assert noise.mean > guided.mean > 0


def test_sparse_bins_are_absent(extractor, real_pool):
    images, phi = real_pool
    keep = phi < 0.5
    res = rolling_frechet(constant_generator(), extractor, BinSpec(LIN, count=10), images[keep], phi[keep],
                          images[:20], per_bin=16)
    assert not res.present[-1] and res.present[0]
    assert (res.n_real[~res.present] < MIN_REAL_PER_BIN).all()
    cov = res.coverage()
    assert cov["present"] + cov["absent"] == 10
    assert res.mean == pytest.approx(np.mean(res.scores[res.present]))


def test_dual_distance_extremes(extractor, digits, real_pool):
    bins = BinSpec(LIN, count=5)
    sources = digits.subset(Domain.SOURCE, "val").images
    model = make_guidance("brightness")
    g_real, g_model = dual_distance(guidance_generator(model), extractor, bins, model, *real_pool, sources)
    n_real, n_model = dual_distance(noise_generator(0), extractor, bins, model, *real_pool, sources)
    m_real, m_model = dual_distance(memorizer_generator(*real_pool, LIN), extractor, bins, model, *real_pool, sources)
    # guidance-as-generator sits next to the model references; the memorizer next to the real set
    assert g_model.mean < 0.1 * n_model.mean
    assert m_real.mean < 0.1 * n_real.mean
    assert m_real.mean < g_real.mean and g_model.mean < m_model.mean


def test_rolling_is_deterministic(extractor, digits, real_pool):
    bins = BinSpec(LIN, count=5)
    sources = digits.subset(Domain.SOURCE, "val").images
    gen = guidance_generator(make_guidance("brightness"))
    a = rolling_frechet(gen, extractor, bins, *real_pool, sources, seed=3)
    b = rolling_frechet(gen, extractor, bins, *real_pool, sources, seed=3)
    assert np.array_equal(a.scores, b.scores)


def test_rolling_csv_and_plot(tmp_path):
    res = RollingResult(np.array([0.25, 0.75]), np.array([1.5, np.nan]), np.array([20, 3]), 64)
    path = write_rolling_csv(tmp_path / "r.csv", res)
    lines = path.read_text().splitlines()
    assert lines[0] == f"# {REPORT_HEADER}"
    rows = list(csv.reader(lines[1:]))
    assert rows[0] == ["bin_center", "n_real", "present", "fd"]
    assert rows[1] == ["0.250000", "20", "1", "1.500000"] and rows[2] == ["0.750000", "3", "0", ""]
    assert rows[3] == ["mean", "", "1", "1.500000"]
    png = plot_rolling(tmp_path / "r.png", {"run": res})
    with Image.open(png) as im:
        assert im.format == "PNG"


# -- diversity -------------------------------------------------------------------------------------

def test_phi_ignoring_generator_has_zero_diversity(extractor, digits):
    x = digits.subset(Domain.SOURCE, "val").images[:20]
    assert diversity_score(constant_generator(), extractor, x, 5, np.random.default_rng(0), manifold=LIN) == 0.0


def test_guidance_generator_is_diverse(extractor, digits):
    x = digits.subset(Domain.SOURCE, "val").images[:20]
    gen = guidance_generator(make_guidance("brightness"))
    assert diversity_score(gen, extractor, x, 5, np.random.default_rng(0), manifold=LIN) > 0


def test_doubling_pairs_within_monte_carlo_spread(extractor, digits):
    x = digits.subset(Domain.SOURCE, "val").images[:50]
    gen = guidance_generator(make_guidance("brightness"))
    runs = [diversity_score(gen, extractor, x, 10, np.random.default_rng(s), manifold=LIN) for s in range(5)]
    doubled = diversity_score(gen, extractor, x, 20, np.random.default_rng(99), manifold=LIN)
    assert abs(doubled - np.mean(runs)) < np.std(runs, ddof=1) * 2 + 1e-12


# -- strips -----------------------------------------------------------------------------------------

def test_strip_width_and_exact_decode(tmp_path, digits):
    x = digits.subset(Domain.SOURCE, "val").images[0]
    gen = guidance_generator(make_guidance("brightness"))
    phis = [0.0, 0.5, 1.0]
    body = strip_array(gen, x, phis)
    assert body.shape == (16, 3 * 16, 3)
    path = emit_strip(gen, x, phis, tmp_path / "s.png")
    with Image.open(path) as im:
        decoded = np.asarray(im.convert("RGB"))
    assert decoded.shape == (16 + FOOTER, 48, 3)
    assert np.array_equal(decoded[:16], body)
    assert decoded[16:].any()  # labels are drawn into the footer


def test_single_phi_strip_and_empty_list(tmp_path, digits):
    x = digits.subset(Domain.SOURCE, "val").images[0]
    assert strip_array(constant_generator(), x, [0.3]).shape == (16, 16, 3)
    with pytest.raises(ContractError):
        emit_strip(constant_generator(), x, [], tmp_path / "e.png")


def test_bundle_generator_matches_translate():
    bundle = GeneratorBundle(CYC, NetConfig(widths=(4, 8, 8), disc_widths=(4, 8), phinet_widths=(4, 8), head_hidden=8))
    x = np.random.default_rng(0).uniform(0, 1, (5, 3, 16, 16)).astype(np.float32)
    a = bundle_generator(bundle, batch=2)(x, 1.0)
    b = bundle_generator(bundle, batch=128)(x, np.full(5, 1.0))
    assert a.shape == x.shape and np.array_equal(a, b)
