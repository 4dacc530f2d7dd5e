"""Command-line front end: ``validate-latents``, ``simulate``, ``sample``, ``analyze``.

Every command writes a ``manifest.json`` next to its outputs. Manifests hold
no timestamps or wall-clock figures, so reruns with the same config and
seeds reproduce them byte for byte.

Exit codes: 0 success, 1 error, 2 valid but empty result.
"""
from __future__ import annotations

import argparse
import hashlib
import logging
import shutil
import sys
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from .analysis import fidelity_summary, uncertainty_report
from .config import ConfigError, RunConfig, parse_config
from .generator import (
    fit_transform,
    init_generator,
    load_weights,
    mapping_forward,
    sample_latent_norm_sq,
    save_weights,
    synthesize,
    transform_forward,
    weights_file_hash,
)
from .imaging import (
    CartesianMask,
    FanBeamGeometry,
    FanBeamModel,
    FourierModel,
    IntensityData,
    KSpaceData,
    make_cartesian_mask,
    phantom_generate,
)
from .io import FloatRaster, pgm_export, raster_read, raster_write, read_json, write_json
from .latent_space import AnnulusSpec, ecdf_build, ks_distance
from .sampler import acceptance_threshold, calibrate_from_generator, empirical_sample

log = logging.getLogger("pulsepp")

EXIT_OK, EXIT_ERROR, EXIT_EMPTY = 0, 1, 2
WEIGHTS_FILE = "weights.lmgw"


class CommandError(RuntimeError):
    """Invalid inputs detected by a command (maps to exit code 1)."""


def _sha1(path) -> str:
    return hashlib.sha1(Path(path).read_bytes()).hexdigest()


def _base_manifest(command: str, cfg: RunConfig, weights_hash: str) -> dict:
    return {
        "tool": "pulsepp",
        "version": __version__,
        "command": command,
        "config": cfg.to_dict(),
        "weights_sha1": weights_hash,
    }


def _finish(out: Path, manifest: dict, files: list[str]) -> None:
    manifest["files"] = {name: _sha1(out / name) for name in sorted(files)}
    write_json(out / "manifest.json", manifest)


def _generator(cfg: RunConfig, out: Path):
    """Load or initialise the generator and place a copy in ``out``."""
    g = cfg.generator
    target = out / WEIGHTS_FILE
    if g.weights_path:
        src = Path(g.weights_path)
        if not src.is_file():
            raise CommandError(f"generator.weights_path: {src} not found")
        weights = load_weights(src)
        c = weights.config
        if (c.k, c.L, c.channels, c.mapping_depth) != (g.k, g.L, g.channels, g.mapping_depth):
            raise CommandError("generator: weights file disagrees with configured k/L/channels/"
                               "mapping_depth")
        if src.resolve() != target.resolve():
            shutil.copyfile(src, target)
    else:
        weights = init_generator(g.generator_config(cfg.transform.slope), g.seed)
        save_weights(weights, target)
    return weights, weights_file_hash(target)


def _transform(cfg: RunConfig, weights):
    return fit_transform(weights, cfg.transform.n_samples, cfg.transform.seed)


def _histogram_csv(path, samples, edges) -> None:
    counts, _ = np.histogram(samples, bins=edges)
    density = counts / (samples.size * np.diff(edges))
    lines = ["bin_left,bin_right,count,density"]
    for lo, hi, c, d in zip(edges[:-1], edges[1:], counts, density):
        lines.append(f"{float(lo)!r},{float(hi)!r},{int(c)},{float(d)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# commands


def cmd_validate_latents(cfg: RunConfig, out: Path) -> int:
    """Compare ``|T(G_m(z))|^2`` against chi-square(k), plus a Gaussian control."""
    weights, whash = _generator(cfg, out)
    T = _transform(cfg, weights)
    v = cfg.validate_latents
    k = weights.config.k
    gen = sample_latent_norm_sq(weights, T, v.n_samples, v.seed)
    rng = np.random.default_rng(np.random.SeedSequence([v.seed, 0x5C]))
    control = np.sum(rng.standard_normal((v.n_samples, k)) ** 2, axis=1)
    ref = stats.chi2(k)
    ks_gen = ks_distance(ecdf_build(gen), ref.cdf)
    ks_ctl = ks_distance(ecdf_build(control), ref.cdf)

    hi = float(max(gen.max(), control.max()))
    edges = np.linspace(0.0, hi, v.bins + 1)
    _histogram_csv(out / "histogram_generator.csv", gen, edges)
    _histogram_csv(out / "histogram_control.csv", control, edges)
    x = np.linspace(0.0, hi, 4 * v.bins + 1)
    rows = ["x,pdf"] + [f"{float(a)!r},{float(b)!r}" for a, b in zip(x, ref.pdf(x))]
    (out / "chi2_reference.csv").write_text("\n".join(rows) + "\n")

    report = {
        "k": k,
        "n_samples": v.n_samples,
        "seed": v.seed,
        "ks_generator": ks_gen,
        "ks_control": ks_ctl,
        "generator_mean_norm_sq": float(gen.mean()),
        "control_mean_norm_sq": float(control.mean()),
    }
    write_json(out / "report.json", report)
    manifest = _base_manifest("validate-latents", cfg, whash)
    manifest["report"] = report
    _finish(out, manifest, ["histogram_generator.csv", "histogram_control.csv",
                            "chi2_reference.csv", "report.json", WEIGHTS_FILE])
    print(f"KS(generator) = {ks_gen:.4f}  KS(control) = {ks_ctl:.4f}")
    return EXIT_OK


def in_range_target(weights, T, seed: int):
    """``G(V*, Phi*)`` with ``V*`` one mapped latent repeated across layers."""
    cfg = weights.config
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x7A]))
    w = mapping_forward(weights, rng.standard_normal(cfg.k))
    V = np.repeat(transform_forward(T, w)[:, None], cfg.L, axis=1)
    phi = [rng.standard_normal(d) for d in cfg.noise_dims]
    return synthesize(weights, T, V, phi)


def _build_model(mblock: dict, res: int):
    """Measurement model from the ``measurement`` block of a simulate manifest."""
    if mblock["variant"] == "fourier":
        return FourierModel(CartesianMask.from_dict(mblock["mask"]), float(mblock["sigma"]))
    geometry = FanBeamGeometry.from_dict(mblock["geometry"])
    if geometry.n_pix != res:
        raise CommandError("measurement geometry does not match the generator resolution")
    return FanBeamModel.from_geometry(geometry, mblock["I0"], mblock["mu_max"])


def _data_raster(model, data) -> FloatRaster:
    if model.noise == "gaussian":
        return FloatRaster(np.stack([data.samples.real, data.samples.imag], axis=-1)[None])
    g = model.geometry
    return FloatRaster(data.counts.reshape(g.n_views, g.n_detectors))


def _read_data(model, raster: FloatRaster):
    if model.noise == "gaussian":
        d = raster.data.astype(np.float64)
        if d.shape != (1, model.M, 2):
            raise CommandError("measurement raster does not match the measurement model")
        return KSpaceData(d[0, :, 0] + 1j * d[0, :, 1], model.sigma)
    if raster.width * raster.height * raster.channels != model.M:
        raise CommandError("measurement raster does not match the measurement model")
    return IntensityData(raster.data.astype(np.float64).ravel(), model.I0, model.mu_max)


def cmd_simulate(cfg: RunConfig, out: Path) -> int:
    weights, whash = _generator(cfg, out)
    res = weights.config.output_resolution
    m = cfg.measurement
    if m.target.kind == "in_range":
        T = _transform(cfg, weights)
        f = in_range_target(weights, T, m.target.seed)
    else:
        f = phantom_generate(m.target.kind, res, res, m.target.seed)

    if m.variant == "fourier":
        fb = m.fourier
        mask = make_cartesian_mask(res, res, fb.R, fb.center_fraction, seed=fb.mask_seed)
        model = FourierModel(mask, fb.sigma)
        mblock = {"variant": "fourier", "noise": "gaussian", "sigma": fb.sigma,
                  "R_requested": fb.R, "R_realized": mask.acceleration,
                  "mask": mask.to_dict(), "epsilon_rule": "M/2"}
    else:
        geometry = m.fanbeam.geometry(res)
        model = FanBeamModel.from_geometry(geometry, m.fanbeam.I0, m.fanbeam.mu_max)
        mblock = {"variant": "fanbeam", "noise": "poisson", "I0": m.fanbeam.I0,
                  "mu_max": m.fanbeam.mu_max, "geometry": geometry.to_dict(),
                  "epsilon_rule": "poisson_embedding"}
    data = model.simulate(f, m.noise_seed)
    # float32 storage: fidelity ingredients are computed from the stored values
    stored = _read_data(model, _data_raster(model, data))
    mblock.update({"M": model.M, "noise_seed": m.noise_seed,
                   "J_true": float(model.fidelity(stored, f)[0])})
    if model.noise == "gaussian":
        mblock["epsilon"] = model.M / 2.0

    truth = FloatRaster(f)
    raster_write(out / "truth.lmfr", truth)
    pgm_export(out / "truth.pgm", truth)
    raster_write(out / "measurement.lmfr", _data_raster(model, data))
    manifest = _base_manifest("simulate", cfg, whash)
    manifest["measurement"] = mblock
    manifest["target"] = {"kind": m.target.kind, "seed": m.target.seed}
    _finish(out, manifest, ["truth.lmfr", "truth.pgm", "measurement.lmfr", WEIGHTS_FILE])
    print(f"simulated {m.variant} data: M = {model.M}")
    return EXIT_OK


def _annulus_cached(cache_dir: Path, cfg: RunConfig, weights, T, whash: str) -> AnnulusSpec:
    c, s = cfg.calibration, cfg.sampler
    key = (f"{whash[:16]}_t{cfg.transform.n_samples}-{cfg.transform.seed}"
           f"_n{c.n_samples}_s{c.seed}_g{s.gamma!r}")
    path = cache_dir / f"annulus_{key}.json"
    if path.is_file():
        try:
            return AnnulusSpec.from_dict(read_json(path))
        except (ValueError, KeyError, TypeError):
            log.warning("ignoring unreadable annulus cache %s", path)
    spec = calibrate_from_generator(weights, T, s.gamma, c.n_samples, c.seed)
    cache_dir.mkdir(parents=True, exist_ok=True)
    write_json(path, spec.to_dict())
    return spec


def cmd_sample(cfg: RunConfig, out: Path, meas_dir: Path, workers: int = 1) -> int:
    meas_path = meas_dir / "manifest.json"
    if not meas_path.is_file():
        raise CommandError(f"{meas_dir}: no measurement manifest")
    meas = read_json(meas_path)
    if meas.get("command") != "simulate":
        raise CommandError(f"{meas_dir}: not a simulate output")
    wfile = meas_dir / WEIGHTS_FILE
    if not wfile.is_file():
        raise CommandError(f"{meas_dir}: weights file missing")
    whash = weights_file_hash(wfile)
    if whash != meas["weights_sha1"]:
        raise CommandError("weights hash does not match the measurement manifest")
    if cfg.generator.weights_path and \
            weights_file_hash(cfg.generator.weights_path) != meas["weights_sha1"]:
        raise CommandError("generator.weights_path hash does not match the measurement manifest")
    weights = load_weights(wfile)
    res = weights.config.output_resolution
    T = _transform(cfg, weights)
    mblock = meas["measurement"]
    model = _build_model(mblock, res)
    data = _read_data(model, raster_read(meas_dir / "measurement.lmfr"))

    acceptance = "gaussian_morozov" if model.noise == "gaussian" else "poisson_embedding"
    scfg = cfg.sampler.sampler_config(acceptance)
    needs_annulus = scfg.variant in ("pulse_pp", "pulse1") or acceptance == "poisson_embedding"
    annulus = _annulus_cached(meas_dir / "cache", cfg, weights, T, whash) if needs_annulus else None
    if cfg.sampler.epsilon_override is not None:
        epsilon, rule = float(cfg.sampler.epsilon_override), "override"
    elif acceptance == "gaussian_morozov":
        epsilon, rule = acceptance_threshold(acceptance, data, model), "M/2"
    else:
        f_true = raster_read(meas_dir / "truth.lmfr").plane(0)
        epsilon = acceptance_threshold(acceptance, data, model, f_true, weights, T, annulus,
                                       scfg)
        rule = "poisson_embedding"

    sset = empirical_sample(scfg, data, model, weights, T, annulus, epsilon, workers)
    files = []
    restarts = []
    for r in sset.results:
        entry = {"index": r.index, "seed": r.seed, "accepted": r.accepted, "failed": r.failed,
                 "objective": None if r.failed else float(r.objective),
                 "fidelity": None if r.failed else float(r.fidelity),
                 "best_step": r.best_step, "message": r.message}
        if r.accepted:
            name = f"solution_{r.index:04d}.lmfr"
            raster_write(out / name, FloatRaster(r.image))
            files.append(name)
            entry["file"] = name
        restarts.append(entry)

    manifest = _base_manifest("sample", cfg, whash)
    manifest.update({
        "measurement": mblock,
        "measurement_manifest_sha1": _sha1(meas_path),
        "annulus": None if annulus is None else annulus.to_dict(),
        "M": model.M,
        "epsilon": float(epsilon),
        "epsilon_rule": rule,
        "restart_seeds": [r.seed for r in sset.results],
        "restarts": restarts,
        "n_accepted": len(sset.accepted),
    })
    _finish(out, manifest, files)
    print(f"accepted {len(sset.accepted)} / {len(sset.results)} (epsilon = {epsilon:.4g})")
    return EXIT_OK if sset.accepted else EXIT_EMPTY


def cmd_analyze(cfg: RunConfig, out: Path, sol_dir: Path) -> int:
    sol_path = sol_dir / "manifest.json"
    if not sol_path.is_file():
        raise CommandError(f"{sol_dir}: no solution manifest")
    sol = read_json(sol_path)
    if sol.get("command") != "sample":
        raise CommandError(f"{sol_dir}: not a sample output")
    accepted = [r for r in sol["restarts"] if r["accepted"]]
    fids = [r["fidelity"] for r in sol["restarts"] if not r["failed"]]
    manifest = dict(sol)
    manifest["command"] = "analyze"
    manifest["config"] = cfg.to_dict()
    manifest["solution_manifest_sha1"] = _sha1(sol_path)
    manifest.pop("files", None)
    if len(accepted) < 2:
        print(f"need at least two accepted solutions, found {len(accepted)}", file=sys.stderr)
        return EXIT_EMPTY
    images = [raster_read(sol_dir / r["file"]).plane(0) for r in accepted]
    res = images[0].shape[0]
    model = _build_model(sol["measurement"], res)
    rep = uncertainty_report(images, model.apply_H, model.apply_Ht, cfg.analysis.tol,
                             cfg.analysis.max_iter)
    names = {"std_full.lmfr": rep.std_map, "std_meas.lmfr": rep.std_meas,
             "std_null.lmfr": rep.std_null}
    for name, img in names.items():
        raster_write(out / name, FloatRaster(img))
    foms = {"uncertainty": rep.to_dict(),
            "fidelity": fidelity_summary(fids, sol["epsilon"]) if fids else None}
    write_json(out / "foms.json", foms)
    manifest["analysis"] = foms
    _finish(out, manifest, [*names, "foms.json"])
    print(f"FOM total {rep.fom_total:.4g} = meas {rep.fom_meas:.4g} + null {rep.fom_null:.4g}")
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--preset", help="named preset (mri_toy, ct_toy) under --config")
    common.add_argument("--out", type=Path, help="output directory (default: config output_dir)")
    common.add_argument("--seed", type=int, help="master seed of the command")
    common.add_argument("--workers", type=int, default=1, help="concurrent restarts (sample)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="pulsepp", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"pulsepp {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("validate-latents", parents=[common],
                   help="compare latent norms against chi-square")
    sub.add_parser("simulate", parents=[common], help="simulate a target and its measurement")
    sp = sub.add_parser("sample", parents=[common], help="draw alternate solutions")
    sp.add_argument("measurement_dir", type=Path)
    ap = sub.add_parser("analyze", parents=[common], help="uncertainty maps and FOMs")
    ap.add_argument("solution_dir", type=Path)
    sub.add_parser("schema", help="print the config JSON schema")
    return p


# which config field --seed overrides, per command
_SEED_FIELDS = {
    "validate-latents": ("validate_latents", "seed"),
    "simulate": ("measurement", "noise_seed"),
    "sample": ("sampler", "seed"),
}


def _apply_seed(cfg: RunConfig, command: str, seed: int | None) -> RunConfig:
    if seed is None or command not in _SEED_FIELDS:
        return cfg
    if seed < 0 or seed >= 2**64:
        raise ConfigError("--seed must be an unsigned 64-bit integer")
    block, key = _SEED_FIELDS[command]
    new_block = getattr(cfg, block).model_copy(update={key: seed})
    return cfg.model_copy(update={block: new_block})


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "schema":
        import json

        from .config import config_schema
        print(json.dumps(config_schema(), indent=2, sort_keys=True))
        return EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.config, args.preset)
        cfg = _apply_seed(cfg, args.command, args.seed)
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        out = Path(args.out or cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "validate-latents":
            return cmd_validate_latents(cfg, out)
        if args.command == "simulate":
            return cmd_simulate(cfg, out)
        if args.command == "sample":
            return cmd_sample(cfg, out, args.measurement_dir, args.workers)
        return cmd_analyze(cfg, out, args.solution_dir)
    except (ConfigError, CommandError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
