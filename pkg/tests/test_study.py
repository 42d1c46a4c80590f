import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from heavylayer import study as study_mod
from heavylayer.config import (
    ConfigError,
    ParamSequenceSpec,
    PowerLaw,
    config_from_dict,
    config_to_dict,
    default_config_document,
    default_study_config,
    dump_config,
    load_config,
)
from heavylayer.fieldio import read_field, write_field
from heavylayer.forms import LoadProfile, TractionLoad
from heavylayer.geometry import BoundaryPatch, DomainConfig, build_domain
from heavylayer.selftest import CHECKS, selftest
from heavylayer.solvers import SolverError
from heavylayer.study import (
    STUDY_COLUMNS,
    HypothesisError,
    StudyError,
    check_meshes,
    decays,
    run_convergence_study,
    validate_hypotheses,
)

from conftest import tiny_config

TRACTION = TractionLoad((0.3, 1.0), LoadProfile("ramp", 1.0, t_ramp=0.25))


def small_study(**kw):
    base = dict(domain=tiny_config(eps=0.25), T=0.125, tau=1.0 / 32)
    base.update(kw)
    return replace(default_study_config(), **base)


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------
@settings(max_examples=30)
@given(
    eps_init=st.floats(0.05, 0.45),
    ratio=st.floats(0.1, 0.9),
    count=st.integers(1, 8),
    lam_pow=st.floats(0.5, 2.0),
    rho_coef=st.floats(0.1, 10.0),
    b_bar=st.sampled_from([0.0, 1.0, math.inf]),
    unit=st.sampled_from(["1", "m", "mm"]),
    tau_exp=st.integers(4, 8),
)
def test_config_round_trip(eps_init, ratio, count, lam_pow, rho_coef, b_bar, unit, tau_exp):
    doc = default_config_document()
    doc["sequence"]["eps_init"]["value"] = eps_init
    doc["sequence"]["ratio"] = ratio
    doc["sequence"]["count"] = count
    doc["sequence"]["lam"]["value"]["power"] = lam_pow
    doc["sequence"]["rho"]["value"]["coef"] = rho_coef
    doc["sequence"]["b_bar"]["value"] = "inf" if math.isinf(b_bar) else b_bar
    for key in ("eps0", "eps", "h_bulk", "extents"):
        doc["domain"][key]["unit"] = unit
    doc["sequence"]["eps_init"]["unit"] = unit
    for item in doc["domain"]["dirichlet_patches"] + doc["domain"]["neumann_patches"]:
        item["bounds"]["unit"] = unit
    doc["initial"]["displacement_amplitude"]["unit"] = unit
    doc["time"]["tau"]["value"] = 2.0**-tau_exp
    cfg = config_from_dict(json.loads(json.dumps(doc)))
    again = config_from_dict(json.loads(json.dumps(config_to_dict(cfg))))
    assert again == cfg


def test_config_file_round_trip(tmp_path):
    cfg = default_study_config()
    path = tmp_path / "study.json"
    dump_config(cfg, path)
    assert load_config(path) == config_from_dict(config_to_dict(cfg))


def test_unknown_unit_rejected():
    doc = default_config_document()
    doc["time"]["T"]["unit"] = "furlong"
    with pytest.raises(ConfigError, match="not allowed"):
        config_from_dict(doc)


def test_inconsistent_units_rejected():
    doc = default_config_document()
    doc["domain"]["eps0"]["unit"] = "m"
    doc["domain"]["h_bulk"]["unit"] = "mm"
    with pytest.raises(ConfigError, match="inconsistent length units"):
        config_from_dict(doc)


def test_missing_unit_annotation_rejected():
    doc = default_config_document()
    doc["time"]["T"] = 0.5
    with pytest.raises(ConfigError, match="annotation"):
        config_from_dict(doc)


@pytest.mark.parametrize("T, tau", [(0.5, 0.0), (0.01, 0.02), (0.5, 0.3)])
def test_time_grid_rejected(T, tau):
    with pytest.raises(ConfigError):
        replace(default_study_config(), T=T, tau=tau).validate()


def test_malformed_document_rejected():
    with pytest.raises(ConfigError):
        config_from_dict([1, 2])
    doc = default_config_document()
    del doc["sequence"]["mu"]
    with pytest.raises(ConfigError):
        config_from_dict(doc)


# --------------------------------------------------------------------------
# hypothesis gate
# --------------------------------------------------------------------------
def test_gate_reference_sequence_passes():
    rep = validate_hypotheses(ParamSequenceSpec(), TRACTION, DomainConfig())
    assert rep.passed, rep.to_text()


def test_gate_constant_density_fails_only_mass_item():
    spec = replace(ParamSequenceSpec(), rho=PowerLaw(1.0, 0.0))
    rep = validate_hypotheses(spec, TRACTION, DomainConfig())
    assert [i.name for i in rep.failures] == ["item6"]


def test_gate_quadratic_shear_flags_main_path():
    spec = replace(ParamSequenceSpec(), mu=PowerLaw(1.0, 2.0), mu_bar=0.0)
    rep = validate_hypotheses(spec, TRACTION, DomainConfig())
    assert not rep.item("main_path").passed
    assert rep.item("item2").passed and rep.item("item5").passed


def test_gate_declared_target_mismatch():
    spec = replace(ParamSequenceSpec(), lambda_bar=2.0)
    assert not validate_hypotheses(spec, TRACTION, DomainConfig()).item("item2").passed


def test_gate_dissipation_scaling():
    spec = replace(ParamSequenceSpec(), b=PowerLaw(1.0, -1.0))
    rep = validate_hypotheses(spec, TRACTION, DomainConfig())
    assert not rep.item("item3").passed


def test_gate_traction_inside_collar():
    dom = replace(DomainConfig(), neumann_patches=(BoundaryPatch(0, "hi"),))
    rep = validate_hypotheses(ParamSequenceSpec(), TRACTION, dom)
    assert not rep.item("support_collar").passed


def test_gate_traction_on_unclamped_body():
    dom = replace(DomainConfig(), dirichlet_patches=(BoundaryPatch(1, "lo"),))
    rep = validate_hypotheses(ParamSequenceSpec(), TRACTION, dom)
    assert not rep.item("support_unclamped").passed
    assert rep.item("item4").passed
    soft = replace(ParamSequenceSpec(), mu=PowerLaw(1.0, 2.0), mu_bar=0.0)
    assert not validate_hypotheses(soft, TRACTION, dom).item("item4").passed


def test_mesh_check_rejects_thick_first_term():
    cfg = replace(default_study_config(), sequence=replace(ParamSequenceSpec(), eps_init=0.6))
    with pytest.raises(Exception):
        check_meshes(cfg)


# --------------------------------------------------------------------------
# study runner
# --------------------------------------------------------------------------
def test_decays_helper():
    assert decays([1.0, 1.05, 0.4]) == (True, True)
    assert decays([1.0, 1.2, 0.4]) == (False, True)
    assert decays([1.0, 0.9, 0.8]) == (True, False)
    assert decays([0.0, 0.0]) == (True, True)


def test_zero_data_gives_zero_distances():
    cfg = small_study(traction=None, initial=replace(default_study_config().initial, velocity_amplitude=0.0))
    rep = run_convergence_study(cfg, refinement=False)
    assert all(r.sup_trotter == 0.0 and r.sup_normgap == 0.0 for r in rep.rows)


def test_rows_carry_gate_ratios(tmp_path):
    cfg = small_study()
    rep = run_convergence_study(cfg, out_dir=tmp_path, refinement=False)
    for row in rep.rows:
        want = cfg.sequence.ratios(row.n)
        assert {k: getattr(row, k) for k in want} == want
        assert all(math.isfinite(v) for v in want.values())
    lines = (tmp_path / cfg.output.study_csv).read_text().splitlines()
    assert lines[0] == ",".join(STUDY_COLUMNS)
    assert [int(line.split(",")[0]) for line in lines[1:]] == list(range(cfg.sequence.count))
    assert (tmp_path / "limit.csv").exists() and (tmp_path / "thin_n0.csv").exists()


def test_deterministic_csv_is_byte_identical(tmp_path):
    cfg = small_study()
    run_convergence_study(cfg, threads=1, deterministic=True, out_dir=tmp_path / "a", refinement=False)
    run_convergence_study(cfg, threads=3, deterministic=True, out_dir=tmp_path / "b", refinement=False)
    reseeded = replace(cfg, seed=cfg.seed + 17)
    rep = run_convergence_study(reseeded, threads=2, deterministic=True, out_dir=tmp_path / "c", refinement=False)
    a = (tmp_path / "a" / "study.csv").read_bytes()
    assert a == (tmp_path / "b" / "study.csv").read_bytes()
    assert a == (tmp_path / "c" / "study.csv").read_bytes()
    assert rep.verdicts == run_convergence_study(cfg, refinement=False).verdicts


def test_gate_failure_runs_nothing(tmp_path):
    cfg = small_study(sequence=replace(ParamSequenceSpec(), rho=PowerLaw(1.0, 0.0)))
    with pytest.raises(HypothesisError):
        run_convergence_study(cfg, out_dir=tmp_path)
    assert not list(tmp_path.iterdir())


def test_failure_flushes_partial_csv(tmp_path, monkeypatch):
    real = study_mod._thin_run

    def flaky(cfg, domain, n, *args, **kw):
        if n == 2:
            raise SolverError("injected", {"n": n})
        return real(cfg, domain, n, *args, **kw)

    monkeypatch.setattr(study_mod, "_thin_run", flaky)
    cfg = small_study()
    with pytest.raises(StudyError) as info:
        run_convergence_study(cfg, out_dir=tmp_path, refinement=False)
    assert sorted(r.n for r in info.value.rows) == [0, 1, 3, 4]
    lines = (tmp_path / "study.csv").read_text().splitlines()
    assert len(lines) == 5


def test_refinement_companion(tmp_path):
    cfg = small_study()
    rep = run_convergence_study(cfg, out_dir=tmp_path, refinement=True)
    fine = rep.refinement["fine"]
    assert fine["h_bulk"] == 0.5 * cfg.domain.h_bulk
    assert math.isfinite(fine["sup_trotter"])
    assert (tmp_path / "refinement.csv").read_text().startswith("n,h_bulk,sup_trotter,sup_normgap")


# --------------------------------------------------------------------------
# field dumps and selftest
# --------------------------------------------------------------------------
@pytest.mark.parametrize("suffix", [".csv", ".bin"])
def test_field_round_trip(tmp_path, suffix):
    grid = build_domain(tiny_config()).coupled
    vals = np.random.default_rng(0).standard_normal((grid.n_nodes, 4))
    path = tmp_path / f"f{suffix}"
    write_field(path, grid, vals, ("u", "v"))
    meta, cols, data = read_field(path)
    assert meta["mesh"] == grid.name and int(meta["nodes"]) == grid.n_nodes
    assert cols == ["x0", "x1", "u0", "u1", "v0", "v1"]
    np.testing.assert_array_equal(data[:, 2:], vals)
    np.testing.assert_array_equal(data[:, :2], grid.node_coords)


def test_selftest_passes():
    rep = selftest()
    assert [r.name for r in rep.results] == [name for name, _ in CHECKS]
    assert rep.passed, rep.to_text()


def test_selftest_detects_corrupted_symmetry():
    rep = selftest(corrupt_symmetry=True, only={"form_symmetry"})
    assert not rep.passed
