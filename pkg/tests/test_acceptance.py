"""Acceptance criteria 1-10, each at its stated tolerance.

Run alone with ``pytest tests/test_acceptance.py -v``; a PASS/FAIL line per
criterion is printed in the terminal summary.
"""
import itertools
import json
import math
import sys
import time

import numpy as np
import pytest
from scipy import stats

from conftest import ACCEPTANCE_RESULTS
from pulsepp.analysis import measurable_component, uncertainty_report
from pulsepp.cli import in_range_target, main
from pulsepp.generator import (
    GeneratorConfig,
    fit_transform,
    generator_grad,
    init_generator,
    sample_latent_norm_sq,
    synthesize,
)
from pulsepp.imaging import (
    FanBeamGeometry,
    FanBeamModel,
    FourierModel,
    build_fanbeam,
    fourier_adjoint,
    fourier_forward,
    gaussian_fidelity,
    kl_fidelity,
    make_cartesian_mask,
    phantom_generate,
    phantom_line_integral,
    zero_fill_projection,
)
from pulsepp.imaging.phantom import square_chord
from pulsepp.io import raster_read
from pulsepp.latent_space import (
    calibrate_annulus,
    chi2_pdf,
    cross_penalty,
    ecdf_build,
    ks_distance,
    noise_log_prior,
    project_annulus,
)
from pulsepp.sampler import SamplerConfig, calibrate_from_generator, empirical_sample, objective_eval


def record(crit, ok, detail):
    ACCEPTANCE_RESULTS[crit] = (bool(ok), detail)
    assert ok, f"criterion {crit}: {detail}"


@pytest.fixture(scope="module")
def gen():
    W = init_generator(GeneratorConfig(), 0)
    return W, fit_transform(W, 20_000, 0)


@pytest.fixture(scope="module")
def toy(gen):
    # the toy Fourier benchmark: in-range 32x32 target, R = 2, sigma = 0.05
    W, T = gen
    f = in_range_target(W, T, 123)
    model = FourierModel(make_cartesian_mask(32, 32, 2, 0.04, 0), 0.05)
    return f, model, model.simulate(f, 1)


def _fd_check(fun, grad, x, n_coords, rng, h=1e-6):
    """Worst relative error of central differences over random coordinates."""
    worst = 0.0
    for idx in rng.choice(x.size, size=n_coords, replace=False):
        e = np.zeros(x.size)
        e[idx] = h
        e = e.reshape(x.shape)
        fd = (fun(x + e) - fun(x - e)) / (2 * h)
        g = grad.flat[idx]
        scale = max(abs(g), abs(fd))
        if scale > 1e-8:
            worst = max(worst, abs(fd - g) / scale)
    return worst


def test_criterion_1_gradients(gen, toy):
    t0 = time.perf_counter()
    W, T = gen
    f, model, data = toy
    rng = np.random.default_rng(1)
    cfg = W.config
    V = rng.standard_normal((cfg.k, cfg.L))
    phi = [rng.standard_normal(d) for d in cfg.noise_dims]
    sizes = [cfg.k * cfg.L] + cfg.noise_dims
    offsets = np.cumsum([0] + sizes)

    def unpack(x):
        return x[:offsets[1]].reshape(cfg.k, cfg.L), [x[offsets[i]:offsets[i + 1]]
                                                     for i in range(1, len(offsets) - 1)]

    x0 = np.concatenate([V.ravel(), *phi])
    up = rng.standard_normal(cfg.n_pixels)
    gV, gphi = generator_grad(W, T, V, phi, up)
    errs = {}
    errs["generator_grad"] = _fd_check(
        lambda x: float(up @ synthesize(W, T, *unpack(x)).ravel()),
        np.concatenate([gV.ravel(), *gphi]), x0, 24, rng)

    img = f + 0.05 * rng.standard_normal(f.shape)
    errs["gaussian_fidelity"] = _fd_check(lambda z: gaussian_fidelity(data, z, model.mask)[0],
                                          gaussian_fidelity(data, img, model.mask)[1], img, 24, rng)

    ct = FanBeamModel.from_geometry(FanBeamGeometry(angles_deg=np.linspace(0, 119, 40)), 1e3)
    ph = phantom_generate("ellipses", 32, 32, 2)
    cdata = ct.simulate(ph, 3)
    errs["kl_fidelity"] = _fd_check(lambda z: kl_fidelity(cdata, z, ct.H)[0],
                                    kl_fidelity(cdata, ph + 0.02, ct.H)[1], ph + 0.02, 24, rng)

    errs["cross_penalty"] = _fd_check(lambda z: cross_penalty(z)[0], cross_penalty(V)[1], V, 24, rng)
    pflat = np.concatenate(phi)
    errs["noise_log_prior"] = _fd_check(lambda z: noise_log_prior([z])[0],
                                        noise_log_prior([pflat])[1][0], pflat, 24, rng)

    o = objective_eval("pulse_pp", V, phi, data, model, W, T)
    errs["objective_eval"] = _fd_check(
        lambda x: objective_eval("pulse_pp", *unpack(x), data, model, W, T).value,
        np.concatenate([o.grad_V.ravel(), *o.grad_phi]), x0, 24, rng)
    elapsed = time.perf_counter() - t0
    worst = max(errs.values())
    detail = (f"worst FD rel. error {worst:.2e} (< 1e-4) over 24 coords each, {elapsed:.1f}s; "
              + ", ".join(f"{k}={v:.1e}" for k, v in errs.items()))
    record(1, worst < 1e-4 and elapsed < 120, detail)


def test_criterion_2_projection(gen):
    W, T = gen
    n = 100_000
    norms = np.sqrt(sample_latent_norm_sq(W, T, n, seed=21))
    fresh = np.sqrt(sample_latent_norm_sq(W, T, n, seed=22))
    rng = np.random.default_rng(2)
    ok, parts = True, []
    for gamma in (0.01, 0.001):
        spec = calibrate_annulus(ecdf_build(norms), gamma)
        se = math.sqrt(gamma * (1 - gamma) / n)
        inside = np.mean((norms >= spec.delta_min) & (norms <= spec.delta_max))
        z = abs(inside - (1 - gamma)) / se
        ok &= z <= 3
        # fresh draws also carry the quantile-estimation error, so the single
        # binomial SE is only asserted where a fixed band is given (gamma=0.01)
        inside_f = np.mean((fresh >= spec.delta_min) & (fresh <= spec.delta_max))
        z_f = abs(inside_f - (1 - gamma)) / se
        if gamma == 0.01:
            ok &= z_f <= 3
        parts.append(f"gamma={gamma}: calibration inside={inside:.5f} ({z:.2f} SE), "
                     f"fresh={inside_f:.5f} ({z_f:.2f} SE)")
        for scale in (1e-3, 0.5, 1.0, 3.0, 50.0):
            v = scale * rng.standard_normal(64)
            p = project_annulus(v, spec)
            ok &= np.array_equal(project_annulus(p, spec), p)
            nrm = np.linalg.norm(p)
            ok &= spec.delta_min * (1 - 1e-12) <= nrm <= spec.delta_max * (1 + 1e-12)
        p0 = project_annulus(np.zeros(64), spec)
        ok &= np.array_equal(project_annulus(p0, spec), p0)
    record(2, ok, "idempotent bitwise, norms in band; " + "; ".join(parts))


def test_criterion_3_theorem():
    v = np.random.default_rng(3).standard_normal((100_000, 64))
    ks = ks_distance(ecdf_build(np.sum(v * v, axis=1)), stats.chi2(64).cdf)
    grid = np.arange(0.0, 200.0, 0.01)
    mode = grid[int(np.argmax([chi2_pdf(64, x) for x in grid]))]
    record(3, ks < 0.01 and abs(mode - 62) <= 0.01,
           f"KS={ks:.4f} (< 0.01), chi2(64) argmax={mode:.2f} (k-2 = 62)")


def test_criterion_4_morozov(toy):
    t0 = time.perf_counter()
    f, model, _ = toy
    parts, ok = [], True
    for i, sigma in enumerate((0.05, 0.07)):
        m = FourierModel(model.mask, sigma)
        # disjoint seed blocks: J is scale-free, so shared seeds would repeat the test
        J = np.array([m.fidelity(m.simulate(f, 200 * i + s), f)[0] for s in range(200)])
        se = J.std(ddof=1) / math.sqrt(J.size)
        z = abs(J.mean() - m.M / 2) / se
        ok &= z <= 3
        parts.append(f"sigma={sigma}: mean J={J.mean():.1f} vs M/2={m.M / 2:.0f} ({z:.2f} SE)")
    elapsed = time.perf_counter() - t0
    record(4, ok and elapsed < 60, "; ".join(parts) + f"; {elapsed:.1f}s")


def test_criterion_5_operators():
    rng = np.random.default_rng(5)
    mask = make_cartesian_mask(32, 32, 4, 0.04, 1)
    f = rng.standard_normal((32, 32))
    g = rng.standard_normal(mask.M) + 1j * rng.standard_normal(mask.M)
    a, b = np.vdot(g, fourier_forward(f, mask)).real, float(np.sum(f * fourier_adjoint(g, mask)))
    four_err = abs(a - b) / abs(a)

    geom = FanBeamGeometry(angles_deg=np.linspace(0, 119, 40))
    H = build_fanbeam(geom)
    x, y = rng.standard_normal(H.shape[1]), rng.standard_normal(H.shape[0])
    ct_err = abs(y @ (H @ x) - (H.T @ y) @ x) / abs(y @ (H @ x))

    n, pitch = geom.n_pix, geom.pixel_mm
    chord_err = 0.0
    for row, (src, dst) in enumerate(geom.rays()):
        ent = H.getrow(row)
        for idx, val in zip(ent.indices, ent.data):
            r, c = divmod(idx, n)
            centre = np.array([(c - (n - 1) / 2) * pitch, ((n - 1) / 2 - r) * pitch])
            chord_err = max(chord_err, abs(val - square_chord(src - centre, dst - src, pitch / 2)))

    seed = 4
    sino = H @ phantom_generate("ellipses", 32, 32, seed).ravel()
    half = n * pitch / 2
    li_err = 0.0
    for row, (src, dst) in enumerate(geom.rays()):
        if row % geom.n_detectors in (geom.n_detectors // 2, geom.n_detectors // 2 - 6):
            exact = phantom_line_integral(seed, src, dst - src, half)
            li_err = max(li_err, abs(sino[row] - exact) / exact)
    ok = four_err < 1e-10 and ct_err < 1e-10 and chord_err < 1e-10 and li_err < 0.02
    record(5, ok, f"adjoint rel. err Fourier={four_err:.1e} fan-beam={ct_err:.1e}; "
                  f"chord max err={chord_err:.1e} (all {H.nnz} entries); "
                  f"ellipse line integrals max rel. err={li_err:.3%} (< 2%)")


def test_criterion_6_null_space():
    rng = np.random.default_rng(6)
    ct = FanBeamModel.from_geometry(FanBeamGeometry(angles_deg=np.linspace(0, 119, 40)), 1e3)
    f = rng.random((32, 32))
    s = measurable_component(ct.apply_H, ct.apply_Ht, f, tol=1e-8, max_iter=5000)
    ratio = np.linalg.norm(ct.apply_H(s.f_null)) / np.linalg.norm(ct.apply_H(f))

    four = FourierModel(make_cartesian_mask(32, 32, 2, 0.04, 0), 0.05)
    sf = measurable_component(four.apply_H, four.apply_Ht, f, tol=1e-8)
    cf_err = np.max(np.abs(sf.f_meas - zero_fill_projection(f, four.mask)))

    sols = [f + 0.05 * rng.standard_normal(f.shape) for _ in range(8)]
    add = uncertainty_report(sols, ct.apply_H, ct.apply_Ht, tol=1e-8, max_iter=5000)
    record(6, ratio < 1e-6 and cf_err < 1e-8 and add.additivity_error < 0.01,
           f"|H f_null|/|H f|={ratio:.1e} (< 1e-6); Fourier closed-form err={cf_err:.1e} (< 1e-8); "
           f"FOM {add.fom_meas:.3f} + {add.fom_null:.3f} vs {add.fom_total:.3f} "
           f"(additivity err {add.additivity_error:.2e} < 1%)")


@pytest.fixture(scope="module")
def e2e(tmp_path_factory):
    """Criterion-7 run through the CLI: mri_toy preset, T = 32, 2000 steps."""
    root = tmp_path_factory.mktemp("e2e")
    t0 = time.perf_counter()
    codes = [main(["simulate", "--preset", "mri_toy", "--out", str(root / "meas")])]
    codes.append(main(["sample", "--preset", "mri_toy", "--out", str(root / "sol"),
                       str(root / "meas")]))
    codes.append(main(["analyze", "--preset", "mri_toy", "--out", str(root / "ana"),
                       str(root / "sol")]))
    elapsed = time.perf_counter() - t0
    return root, codes, elapsed


@pytest.mark.slow
def test_criterion_7_end_to_end(e2e):
    root, codes, elapsed = e2e
    man = json.loads((root / "sol" / "manifest.json").read_text())
    cfg = man["config"]
    setup_ok = (cfg["sampler"]["n_restarts"] == 32 and cfg["sampler"]["n_steps"] == 2000
                and man["M"] == 512 and man["epsilon"] == man["M"] / 2
                and man["measurement"]["sigma"] == 0.05)
    acc = [r for r in man["restarts"] if r["accepted"]]
    imgs = [raster_read(root / "sol" / r["file"]).plane(0) for r in acc]
    rms = [math.sqrt(np.mean((a - b) ** 2)) for a, b in itertools.combinations(imgs, 2)]
    min_rms = min(rms) if rms else 0.0
    ok = setup_ok and codes[1] == 0 and len(acc) >= 1 and min_rms > 0 and elapsed < 900
    record(7, ok, f"accepted {len(acc)}/32 at eps=M/2={man['epsilon']:.0f}; "
                  f"min pairwise RMS={min_rms:.4f}; pipeline {elapsed / 60:.1f} min (< 15)")


@pytest.mark.slow
def test_criterion_8_ablation(gen, toy):
    W, T = gen
    _, model, data = toy
    annulus = calibrate_from_generator(W, T, 0.001, 100_000, 0)
    frac, med = {}, {}
    for variant in ("pulse_pp", "pulse1", "pulse2", "pulse"):
        cfg = SamplerConfig(variant=variant, n_steps=1000, n_restarts=8, seed=0)
        s = empirical_sample(cfg, data, model, W, T, annulus)
        frac[variant] = s.acceptance_fraction
        med[variant] = float(np.median([r.fidelity for r in s.results]))
    ok = (frac["pulse_pp"] >= frac["pulse1"] >= frac["pulse"]
          and frac["pulse_pp"] >= frac["pulse2"])
    record(8, ok, "acceptance " + ", ".join(f"{k}={v:.2f}" for k, v in frac.items())
           + " | median J " + ", ".join(f"{k}={v:.0f}" for k, v in med.items())
           + f" (eps={model.M / 2:.0f}; T=8, 1000 steps, paired seeds)")


def test_criterion_9_determinism(tmp_path):
    small = {
        "generator": {"k": 16, "L": 6, "channels": 6, "mapping_depth": 2, "seed": 3},
        "transform": {"n_samples": 10000},
        "calibration": {"n_samples": 5000},
        "validate_latents": {"n_samples": 20000, "bins": 20},
        "sampler": {"n_steps": 100, "n_restarts": 4, "lr": 0.1},
    }
    cfgp = tmp_path / "c.json"
    cfgp.write_text(json.dumps(small))
    cfg = str(cfgp)

    def run(tag, workers):
        d = tmp_path / tag
        codes = [
            main(["validate-latents", "--config", cfg, "--out", str(d / "val")]),
            main(["simulate", "--config", cfg, "--out", str(d / "meas")]),
            main(["sample", "--config", cfg, "--workers", str(workers), "--out", str(d / "sol"),
                  str(d / "meas")]),
            main(["analyze", "--config", cfg, "--out", str(d / "ana"), str(d / "sol")]),
        ]
        files = {}
        for sub in ("val", "meas", "sol", "ana"):
            for p in sorted((d / sub).iterdir()):
                if p.is_file():
                    files[f"{sub}/{p.name}"] = p.read_bytes()
        return codes, files

    c1, f1 = run("a", 1)
    c2, f2 = run("b", 1)
    c3, f3 = run("c", 2)
    ok = c1 == c2 == c3 == [0, 0, 0, 0] and f1 == f2 == f3
    record(9, ok, f"{len(f1)} manifests/rasters byte-identical across reruns and --workers 1/2")


@pytest.mark.slow
def test_criterion_10_null_dominance(e2e):
    root, codes, _ = e2e
    foms = json.loads((root / "ana" / "foms.json").read_text())["uncertainty"]
    ok = codes[2] == 0 and foms["fom_null"] > foms["fom_meas"]
    record(10, ok, f"|std_null|^2={foms['fom_null']:.3f} > |std_meas|^2={foms['fom_meas']:.3f} "
                   f"(total {foms['fom_total']:.3f}, {foms['n_solutions']} solutions)")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
