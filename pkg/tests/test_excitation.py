import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from bladca import DomainError, StructuralError
from bladca import excitation as ex


def test_example1_random_odd_design():
    spec = ex.design_multisine(100, 100, 100_000, 0.05, kind="random_odd", seed=3)
    candidates = np.arange(1, 1001, 2)
    assert candidates.size == 500
    assert spec.n_lines + len(spec.detection_bins) == 500
    assert len(spec.detection_bins) == 166  # 166 complete groups of three, 2 trailing lines kept
    assert set(spec.grid.bins) | set(spec.detection_bins) == set(candidates)
    assert spec.achieved_rms() == pytest.approx(0.05, rel=1e-12)


def test_example2_full_design():
    spec = ex.design_multisine(1, 1, 100, 0.5)
    assert spec.n_lines == 100
    assert np.allclose(spec.amplitudes, 0.5 * np.sqrt(2 / 100))


def test_single_line_amplitude():
    spec = ex.design_multisine(1, 1, 1, 1.0)
    assert spec.amplitudes[0] == pytest.approx(np.sqrt(2))


def test_odd_design_excites_odd_lines_only():
    spec = ex.design_multisine(2, 2, 40, 1.0, kind="odd")
    assert np.all(spec.grid.bins % 2 == 1)


@pytest.mark.parametrize("args", [(1, 1.5, 10, 1.0), (1, 1, 10.5, 1.0), (1, 10, 1, 1.0), (1, 2, 2, 1.0, "odd")])
def test_design_rejects_bad_ranges(args):
    with pytest.raises(DomainError):
        ex.design_multisine(*args)


@given(st.integers(1, 300), st.floats(1e-3, 10.0), st.sampled_from(["full", "odd", "random_odd"]),
       st.integers(0, 10_000))
def test_rms_identity_and_detection_bookkeeping(kmax, rms, kind, seed):
    kmax = max(kmax, 3)
    spec = ex.design_multisine(1, 1, kmax, rms, kind=kind, seed=seed)
    assert np.sqrt(np.sum(spec.amplitudes ** 2) / 2) == pytest.approx(rms, rel=1e-12)
    if kind == "random_odd":
        odd = np.arange(1, kmax + 1, 2)
        groups = odd[: odd.size // 3 * 3].reshape(-1, 3)
        det = np.array(spec.detection_bins)
        assert len(det) == groups.shape[0]
        for g in groups:
            assert np.isin(g, det).sum() == 1
        assert not set(det) & set(spec.grid.bins)


def test_tickler_grid_is_shifted_copy():
    main = ex.design_multisine(1, 1, 40, 1.0, kind="odd")
    t = ex.design_tickler(main, 1 / 6, 0.01)
    assert np.array_equal(t.grid.bins, main.grid.bins)
    assert t.kind == "tickler"
    assert t.achieved_rms() == pytest.approx(0.01)


@pytest.mark.parametrize("f_eps", [0.0, 0.5, -0.7])
def test_tickler_offset_must_be_inside_half_spacing(f_eps):
    main = ex.design_multisine(1, 1, 10, 1.0)
    with pytest.raises(DomainError):
        ex.design_tickler(main, f_eps, 0.01)


def test_ticklers_at_opposite_offsets_do_not_collide():
    main = ex.design_multisine(1, 1, 20, 1.0)
    t1 = ex.design_tickler(main, 0.25, 0.01)
    t2 = ex.design_tickler(main, -0.25, 0.01, others=[t1])
    sets = [set(g.exact_frequencies()) for g in (main.grid, t1.grid, t2.grid)]
    assert not sets[0] & sets[1] and not sets[0] & sets[2] and not sets[1] & sets[2]
    with pytest.raises(DomainError):
        ex.design_tickler(main, 0.25, 0.01, others=[t1])


def test_realizations_are_deterministic_and_independent():
    spec = ex.design_multisine(1, 1, 20, 1.0, seed=5)
    a = ex.draw_realizations(spec, 3)
    b = ex.draw_realizations(spec, 3)
    for ra, rb in zip(a, b):
        assert np.array_equal(ra.phases, rb.phases)
    assert not np.array_equal(a[0].phases, a[1].phases)
    assert np.array_equal(ex.realization(spec, 2).phases, a[2].phases)
    other = ex.realization(spec, 2, stream=1)
    assert not np.array_equal(other.phases, a[2].phases)
    with pytest.raises(DomainError):
        ex.draw_realizations(spec, 0)


def test_realization_spectrum_matches_time_signal():
    spec = ex.design_multisine(1, 1, 8, 1.0)
    r = ex.realization(spec, 0)
    t = np.arange(64) / 64
    x = np.real(np.exp(2j * np.pi * np.outer(t, spec.grid.frequencies)) @ r.spectrum.values)
    assert np.allclose(x, r.time_signal(t))
    assert np.allclose(np.abs(r.spectrum.values), spec.amplitudes)


def test_phases_are_uniform():
    spec = ex.design_multisine(1, 1, 50, 1.0, seed=2)
    ph = np.array([r.phases for r in ex.draw_realizations(spec, 400)])
    assert abs(np.mean(np.exp(1j * ph))) < 4 / np.sqrt(ph.size)


def test_time_samples_are_gaussian():
    spec = ex.design_multisine(1, 1, 100, 1.0, seed=9)
    t = np.arange(16) / 16.0 + 0.013
    x = np.concatenate([r.time_signal(t) for r in ex.draw_realizations(spec, 10_000)])
    ks = stats.kstest(x, "norm", args=(0.0, 1.0)).statistic
    assert ks < 0.01


def test_spec_documents_round_trip(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text("f0_hz: 1\nfmin_hz: 1\nfmax_hz: 30\nkind: random_odd\nrms: 0.2\nseed: 4\n")
    spec = ex.load_spec(p)
    back = ex.spec_from_resolved(ex.spec_to_document(spec))
    assert back.grid == spec.grid
    assert np.array_equal(back.amplitudes, spec.amplitudes)
    assert back.detection_bins == spec.detection_bins
    assert ex.load_spec(p, seed=5).seed == 5


def test_spec_document_errors_name_the_line(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text("f0_hz: 1\nfmax_hz: 30\nrms: 0.2\nbogus: 1\n")
    with pytest.raises(StructuralError, match=":4:"):
        ex.load_spec(p)
