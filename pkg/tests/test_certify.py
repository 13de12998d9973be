import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import roacert.certify as certify
from roacert.certify import (
    GRID_DISCLAIMER,
    HYPOTHESIS_IDS,
    CertConfig,
    LevelResult,
    ScanGrid,
    certify_union,
    lie_derivative,
    monte_carlo_roa,
    opt_eta,
    opt_gamma1,
    opt_gamma2,
    opt_gamma3,
    scan_field,
    validate,
)
from roacert.errors import ConfigError, DimensionMismatch, NoValidLevel
from roacert.ode import IntegratorConfig, Status, VectorField
from roacert.systems import BUILTIN_NAMES, Box, QuadraticLF, ScalarField, builtin, norm_weights

from conftest import decay_field, fitted_system, mc_samples

SQUARE = Box([-1, -1], [1, 1])
NORM2 = QuadraticLF(np.eye(2), name="norm2")
PLAIN = CertConfig(scan_resolution=129, norm_scaling="none")


def plain_scan(V, field, box=SQUARE, resolution=129):
    return scan_field(V, field, ScanGrid(box, resolution))


def bundle_scan(V, bundle, resolution=None, cfg=CertConfig()):
    res = resolution or cfg.resolution_for(bundle.dim)
    return scan_field(V, bundle.field, ScanGrid(bundle.box, res, norm_weights(bundle.box, cfg.norm_scaling)))


# Lie derivative


def test_lie_derivative_of_squared_norm():
    assert lie_derivative(NORM2, decay_field(2), [1.0, 0.0]) == pytest.approx(-2.0)


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_lie_derivative_vanishes_at_origin(name):
    bundle = builtin(name)
    for V in bundle.v2_candidates.values():
        assert abs(lie_derivative(V, bundle.field, np.zeros(bundle.dim))) <= 1e-7


def test_lie_derivative_of_smib_energy_without_speed():
    smib = builtin("smib")
    assert lie_derivative(smib.v2_candidates["energy"], smib.field, [0.1, 0.0]) == pytest.approx(0.0, abs=1e-12)


def test_lie_derivative_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        lie_derivative(NORM2, decay_field(3), [1.0, 0.0, 0.0])


# level selections


def test_gamma3_of_smib_energy():
    smib = builtin("smib")
    res = opt_gamma3(bundle_scan(smib.v2_candidates["energy"], smib), CertConfig())
    assert res.value == pytest.approx(5.722, abs=0.05)


def test_gamma3_of_squared_norm_limited_by_box():
    res = opt_gamma3(plain_scan(NORM2, decay_field(2)), PLAIN)
    assert res.value == pytest.approx(1.0, abs=1e-3)
    assert res.value < 1.0


def test_gamma3_of_literature_vdp_quadratic():
    vdp = builtin("vdp")
    res = opt_gamma3(bundle_scan(vdp.v2_candidates["khalil_quadratic"], vdp), CertConfig())
    assert res.value >= 2.25


def test_gamma3_rejects_nonpositive_function():
    indefinite = QuadraticLF(np.diag([1.0, -1.0]))
    with pytest.raises(NoValidLevel) as exc:
        opt_gamma3(plain_scan(indefinite, decay_field(2)), PLAIN)
    assert exc.value.witness is not None


def test_gamma3_rejects_increasing_function():
    growth = VectorField(2, lambda x: x, name="growth")
    with pytest.raises(NoValidLevel):
        opt_gamma3(plain_scan(NORM2, growth, resolution=128), PLAIN)


def test_eta_of_squared_norm():
    scan = plain_scan(NORM2, decay_field(2))
    assert opt_eta(scan, 1.0, PLAIN).value == pytest.approx(1.0, abs=PLAIN.bisect_tol)


def test_eta_of_elliptic_quadratic():
    scan = plain_scan(QuadraticLF(np.diag([1.0, 4.0])), decay_field(2))
    # the nearest node outside the ellipse sits within one grid spacing of the short semi-axis
    assert opt_eta(scan, 1.0, PLAIN).value == pytest.approx(0.5, abs=scan.grid.spacing.max())


def test_smib_ball_inside_energy_sublevel(smib_fit):
    bundle, _, _, cert = smib_fit
    assert cert.eta > 0
    V = bundle.v2_candidates["energy"]
    rng = np.random.default_rng(2)
    d = rng.normal(size=(5000, 2))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    # the ball lives in box-normalised coordinates
    pts = d * (cert.eta * np.sqrt(rng.random(5000)))[:, None] * bundle.box.width
    assert np.all(V.value(pts) <= cert.gamma3)


def test_gamma1_of_squared_norm():
    res = opt_gamma1(plain_scan(NORM2, decay_field(2)), 1.0, PLAIN)
    assert res.value == pytest.approx((1 - PLAIN.margin) ** 2, abs=1e-3)


def test_gamma1_above_offset_minimum():
    shifted = QuadraticLF(np.eye(2))
    scan = plain_scan(shifted, decay_field(2))
    scan.values += 0.3
    res = opt_gamma1(scan, 0.5, PLAIN)
    assert res.value > 0.3
    assert np.any(scan.values < res.value)


def test_gamma1_rejects_off_centre_minimum():
    off = QuadraticLF(np.eye(2))
    scan = plain_scan(off, decay_field(2))
    x = np.stack(np.meshgrid(*scan.grid.axes, indexing="ij"), axis=-1)
    scan.values = np.sum((x - [0.7, 0.0]) ** 2, axis=-1)
    with pytest.raises(NoValidLevel):
        opt_gamma1(scan, 0.3, PLAIN)
    with pytest.raises(ConfigError):
        opt_gamma1(scan, 0.0, PLAIN)


def test_gamma2_of_squared_norm():
    res = opt_gamma2(plain_scan(NORM2, decay_field(2)), 0.1, PLAIN)
    assert res.value == pytest.approx(1.0 - PLAIN.margin, abs=1e-3)
    assert res.value < 1.0


def test_vdp_inner_and_donut_levels(vdp_fit):
    _, _, _, cert = vdp_fit
    assert 0 < cert.gamma1 < 0.74
    assert cert.gamma2 == pytest.approx(0.74, abs=0.05)


def test_smib_donut_level(smib_fit):
    _, _, _, cert = smib_fit
    assert cert.gamma2 == pytest.approx(0.68, abs=0.05)


def test_gamma2_rejects_nondecreasing_surrogate():
    # V1 grows along the flow everywhere, so no donut can be certified
    growth = VectorField(2, lambda x: x, name="growth")
    with pytest.raises(NoValidLevel) as exc:
        opt_gamma2(plain_scan(NORM2, growth, resolution=128), 0.1, PLAIN)
    assert exc.value.witness is not None


# certificates


def test_vdp_certified(vdp_fit):
    _, _, _, cert = vdp_fit
    assert cert.certified
    assert all(h.passed for h in cert.hypotheses)
    assert [h.id for h in cert.hypotheses] == list(HYPOTHESIS_IDS)
    assert cert.gamma1 < cert.gamma2


def test_vdp_union_strictly_larger_than_each_set(vdp_fit):
    _, _, _, cert = vdp_fit
    v1, v2 = cert.region_masks()
    assert np.any(v1 & ~v2), "V1 set adds nothing beyond the V2 set"
    assert np.any(v2 & ~v1), "V2 set adds nothing beyond the V1 set"


def test_smib_certified_levels(smib_fit):
    _, _, _, cert = smib_fit
    assert cert.certified
    assert cert.gamma3 == pytest.approx(5.722, abs=0.05)
    assert cert.gamma2 == pytest.approx(0.68, abs=0.05)


def test_nested_quadratics_certify_the_larger_set():
    cert = certify_union(NORM2, NORM2, decay_field(2), SQUARE, PLAIN)
    assert cert.certified
    assert cert.areas["union"] == max(cert.areas["v1"], cert.areas["v2"])


def test_certificate_report_is_serialisable(vdp_fit):
    _, _, _, cert = vdp_fit
    d = cert.as_dict()
    assert d["grid_disclaimer"] == GRID_DISCLAIMER
    assert len(d["hypotheses"]) == 7
    for h in d["hypotheses"]:
        assert h["witness"] is not None and h["worst_margin"] is not None
        assert h["passed"] and h["worst_margin"] <= 0
    json.dumps(d)


def test_certification_is_deterministic():
    vdp, _, V1, _ = fitted_system("vdp")
    cfg = CertConfig(scan_resolution=128)
    a = certify_union(V1, vdp.default_v2(), vdp.field, vdp.box, cfg).as_dict()
    b = certify_union(V1, vdp.default_v2(), vdp.field, vdp.box, cfg).as_dict()
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


# hypothesis completeness: each check catches its own failure


class _Dip(ScalarField):
    """``base`` minus a narrow Gaussian that pushes it below zero near ``centre``."""

    kind = "dip"

    def __init__(self, base, centre, depth=1.0, width=0.01):
        self.base, self.centre, self.depth, self.width = base, np.asarray(centre), depth, width
        self.dim = base.dim
        self.name = "dip"

    def _bump(self, x):
        return self.depth * np.exp(-np.sum((x - self.centre) ** 2, axis=1) / self.width)

    def _value(self, x):
        return self.base.value(x) - self._bump(x)

    def _grad(self, x):
        return self.base.grad(x) + self._bump(x)[:, None] * 2 * (x - self.centre) / self.width


def _vdp_case():
    vdp, _, V1, _ = fitted_system("vdp")
    return V1, vdp.default_v2(), vdp.field, vdp.box, CertConfig(scan_resolution=256)


def _level(value):
    return lambda *args: LevelResult(value, 0)


def _scaled_eta(factor):
    orig = certify.opt_eta
    return lambda scan, g3, cfg: LevelResult(orig(scan, g3, cfg).value * factor, 0)


ADVERSARIAL = {
    "v2_positive": ("vdp_dip", None, None),
    "v2_nonincreasing": ("vdp", "opt_gamma3", _level(2.6)),
    "v2_sublevel_interior": ("decay", "opt_gamma3", _level(1.2)),
    "ball_in_v2_sublevel": ("vdp", "opt_eta", _scaled_eta(1.3)),
    "v1_inner_in_ball": ("vdp", "opt_gamma1", _level(0.4)),
    "v1_sublevel_interior": ("vdp", "opt_gamma2", _level(0.9999)),
    "v1_donut_decrease": ("vdp", "opt_gamma2", _level(0.9)),
}


def test_unmodified_cases_certify():
    assert certify_union(*_vdp_case()).certified
    assert certify_union(NORM2, NORM2, decay_field(2), SQUARE, PLAIN).certified


@pytest.mark.parametrize("hid", HYPOTHESIS_IDS)
def test_each_hypothesis_can_fail_the_certificate(hid, monkeypatch):
    case, target, replacement = ADVERSARIAL[hid]
    if target is not None:
        monkeypatch.setattr(certify, target, replacement)
    if case == "decay":
        args = (NORM2, NORM2, decay_field(2), SQUARE, PLAIN)
    else:
        V1, V2, field, box, cfg = _vdp_case()
        if case == "vdp_dip":
            V2 = _Dip(V2, [0.5, 0.0])
        args = (V1, V2, field, box, cfg)
    cert = certify_union(*args)
    failed = {h.id for h in cert.hypotheses if not h.passed}
    assert not cert.certified
    assert hid in failed


@settings(max_examples=25)
@given(st.floats(0.05, 1.5))
def test_forced_v2_level_certifies_only_inside_the_box(gamma3):
    # on the unit square {|x|^2 <= gamma3} reaches the boundary exactly when gamma3 >= 1
    orig = certify.opt_gamma3
    certify.opt_gamma3 = _level(gamma3)
    try:
        cert = certify_union(NORM2, NORM2, decay_field(2), SQUARE, CertConfig(scan_resolution=65, norm_scaling="none"))
    finally:
        certify.opt_gamma3 = orig
    assert cert.certified == all(h.passed for h in cert.hypotheses)
    assert cert.certified == (gamma3 < 1.0)


# scan resolution


@pytest.mark.parametrize("name", ["vdp", "smib"])
def test_refinement_never_certifies_larger_levels(name):
    bundle, _, V1, _ = fitted_system(name)
    V2 = bundle.default_v2()
    cfg = CertConfig()
    shrink = []
    for r in (128, 255):
        # resolution 2r - 1 contains every node of resolution r
        coarse, fine = bundle_scan(V2, bundle, r), bundle_scan(V2, bundle, 2 * r - 1)
        g_coarse, g_fine = opt_gamma3(coarse, cfg).value, opt_gamma3(fine, cfg).value
        assert g_fine <= g_coarse + cfg.bisect_tol
        shrink.append(1 - g_fine / g_coarse)
        s1c, s1f = bundle_scan(V1, bundle, r), bundle_scan(V1, bundle, 2 * r - 1)
        eta = opt_eta(fine, g_fine, cfg).value
        g1c, g1f = opt_gamma1(s1c, eta, cfg).value, opt_gamma1(s1f, eta, cfg).value
        assert g1f <= g1c + cfg.bisect_tol
    if max(shrink) > 0.05:
        pytest.fail(f"refinement shrank gamma3 by more than 5%: {shrink}")


def test_cert_config_validation():
    for bad in (dict(scan_resolution=16), dict(bisect_tol=0.0), dict(margin=1.0), dict(mc_samples=0), dict(norm_scaling="l1")):
        with pytest.raises(ConfigError):
            CertConfig(**bad)
    assert CertConfig().resolution_for(2) == 512 and CertConfig().resolution_for(4) == 48


# Monte Carlo oracle and validation


def test_monte_carlo_decay_all_converge():
    mc = monte_carlo_roa(decay_field(2), Box([-3, -1], [2, 4]), CertConfig(mc_samples=300))
    assert mc.counts()["converged"] == 300


def test_monte_carlo_vdp_has_both_classes():
    mc = mc_samples("vdp")
    counts = mc.counts()
    assert counts["converged"] > 0 and counts["escaped"] > 0
    assert sum(counts.values()) == 10_000


def test_monte_carlo_is_deterministic():
    vdp = builtin("vdp")
    cfg = CertConfig(mc_samples=400, seed=42)
    a = monte_carlo_roa(vdp.field, vdp.box, cfg, batch_size=64)
    b = monte_carlo_roa(vdp.field, vdp.box, cfg)
    assert np.array_equal(a.points, b.points) and np.array_equal(a.statuses, b.statuses)
    c = monte_carlo_roa(vdp.field, vdp.box, CertConfig(mc_samples=400, seed=43))
    assert not np.array_equal(a.points, c.points)


def test_validate_empty_certificate_is_vacuous():
    V1, V2, field, box, cfg = _vdp_case()
    cert = certify_union(V1, QuadraticLF(np.diag([1.0, -1.0])), field, box, cfg)
    assert not cert.certified
    report = validate(cert, mc_samples("vdp"))
    assert report.inside == 0 and report.violations == 0


def test_validate_vdp_is_sound(vdp_fit):
    _, _, _, cert = vdp_fit
    report = validate(cert, mc_samples("vdp"))
    assert report.inside > 1000
    assert report.violations == 0


def test_validate_catches_inflated_donut_level(vdp_fit):
    _, _, _, cert = vdp_fit
    report = validate(cert, mc_samples("vdp"), gamma2=cert.gamma2 + 0.2)
    assert report.violations >= 1
    assert len(report.witnesses) == report.violations


def test_validate_dimension_mismatch(vdp_fit):
    _, _, _, cert = vdp_fit
    mc = monte_carlo_roa(decay_field(3), Box([-1] * 3, [1] * 3), CertConfig(mc_samples=5))
    with pytest.raises(DimensionMismatch):
        validate(cert, mc)


# surrogate without an analytical function


def test_v1_only_run_is_flagged_uncertified(vdp_fit):
    bundle, _, V1, _ = vdp_fit
    cert = certify_union(V1, None, bundle.field, bundle.box, CertConfig(scan_resolution=256))
    assert not cert.certified and cert.v1_uncertified
    assert cert.gamma3 is None and cert.gamma2 is not None
    assert all(not h.passed for h in cert.hypotheses)
    assert "not certified" in cert.errors[0]
    mc = mc_samples("vdp")
    assert validate(cert, mc).inside == 0
    report = validate(cert, mc, include_uncertified=True)
    assert report.inside > 0 and report.violations == 0
