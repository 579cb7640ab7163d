"""Configuration-driven command-line runner.

Commands: gen-data, train, sample, bridge, nll, metrics, verify.  Each
reads a JSON config validated against the published schema, writes its
outputs under the chosen directory, and records the config hash and the
effective seed in every output (binary tensors are covered by the
manifest written next to them).  Re-running a command with the same
config and seed produces byte-identical data outputs; wall-clock
timestamps only ever appear in the run.log sidecar.

Exit codes: 0 success, 2 configuration or file error, 3 numerical
failure, 4 verification failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io, metrics, sampling
from . import verify as verify_mod
from .errors import (ConfigError, DegenerateCoupling, DivergedLoss, IoError,
                     NonFiniteState, NonPsd, SingularAtTerminal, SpdmError,
                     TimeOutOfRange)
from .groups import (IsometryGroup, diagonal_pair_group, frame_average,
                     make_c4_group, make_d4_group, make_flip_group,
                     make_point_group_2d)
from .nets import Mlp, TrainerConfig, train
from .oracle import (AnalyticScoreField, BridgeScoreField, GaussianCoupling,
                     GaussianMixture, symmetrize)
from .process import Schedule, ve_schedule, vp_schedule
from .sampling import _aux_rng

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_VERIFY = 4

_NUMERIC_ERRORS = (DivergedLoss, NonFiniteState, NonPsd, SingularAtTerminal,
                   TimeOutOfRange, DegenerateCoupling)


# ---- config -> objects ---------------------------------------------------


def build_schedule(cfg: dict) -> Schedule:
    spec = cfg.get("schedule", {"kind": "vp"})
    kind = spec["kind"]
    kwargs = {}
    if "T" in spec:
        kwargs["T"] = spec["T"]
    if kind == "vp":
        for key in ("beta_min", "beta_max"):
            if key in spec:
                kwargs[key] = spec[key]
        return vp_schedule(**kwargs)
    for key in ("sigma_min", "sigma_max"):
        if key in spec:
            kwargs[key] = spec[key]
    return ve_schedule(**kwargs)


def build_group(cfg: dict) -> IsometryGroup | None:
    spec = cfg.get("group")
    if spec is None:
        return None
    name = spec["name"]
    shape = spec.get("shape")
    if shape is not None:
        shape = tuple(int(v) for v in shape)
        if name == "flip_v":
            return make_flip_group("vertical", shape)
        if name == "flip_h":
            return make_flip_group("horizontal", shape)
        if name == "C4":
            return make_c4_group(shape)
        return make_d4_group(shape)
    if name == "C4":
        return make_point_group_2d(4)
    if name == "D4":
        return make_point_group_2d(4, with_reflection=True)
    raise ConfigError(f"group {name!r} needs a grid shape")


def build_mixture(cfg: dict, group: IsometryGroup | None) -> GaussianMixture:
    data = cfg.get("data")
    if data is None:
        raise ConfigError("this command needs a data section in the config")
    comps = data["components"]
    if not comps:
        raise ConfigError("data.components must be nonempty")
    weights = np.array([c["weight"] for c in comps], dtype=float)
    total = weights.sum()
    if total <= 0:
        raise ConfigError("component weights must sum to a positive value")
    weights = weights / total
    means = np.array([c["mean"] for c in comps], dtype=float)
    variances = np.array([c["variance"] for c in comps], dtype=float)
    if group is not None and group.elements[0].kind == "grid":
        shape = group.elements[0].grid_shape
        d = shape[0] * shape[1]
        if means.shape[1] != d:
            raise ConfigError(f"grid group {group.name} needs means of length {d}")
        means = means.reshape(len(comps), *shape)
    mix = GaussianMixture(weights=weights, means=means, variances=variances)
    if data.get("symmetrize", False):
        if group is None:
            raise ConfigError("data.symmetrize needs a group section")
        mix = symmetrize(mix, group)
    return mix


class FlatField:
    """Adapter running a flat-vector score net on natively shaped states."""

    def __init__(self, net, event_shape: tuple[int, ...]):
        self.net = net
        self.event_shape = tuple(event_shape)
        self.dim = int(np.prod(self.event_shape))

    def __call__(self, x, t):
        x = np.asarray(x, dtype=float)
        ne = len(self.event_shape)
        if ne == 1:
            return np.asarray(self.net(x, t))
        lead = x.shape[:-ne]
        out = np.asarray(self.net(x.reshape(*lead, self.dim), t))
        return out.reshape(x.shape)


def resolve_threads(cli_value: int | None) -> int:
    if cli_value is not None:
        return max(1, int(cli_value))
    env = os.environ.get("SPDM_THREADS", "")
    try:
        return max(1, int(env))
    except ValueError:
        return 1


def parallel_map(fn, items, threads: int) -> list:
    """Map preserving input order; workers only help for independent items."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _chain_seed(seed: int, index: int) -> int:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(9, index))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _require_file(path: Path, what: str) -> Path:
    if not path.exists():
        raise IoError(f"missing {what}: {path} (run the producing command first)")
    return path


def _write_manifest(out_dir: Path, command: str, chash: str, seed: int,
                    outputs: list[str], params: dict) -> None:
    io.write_json(out_dir / f"{command}_manifest.json", {
        "command": command,
        "config_hash": chash,
        "seed": seed,
        "outputs": sorted(outputs),
        "params": params,
    })


# ---- model loading -------------------------------------------------------


def _checkpoint_path(cfg: dict, out_dir: Path) -> Path:
    explicit = cfg.get("model", {}).get("checkpoint")
    if explicit:
        return Path(explicit)
    return out_dir / "checkpoint.json"


def load_checkpoint(path: Path) -> dict:
    """Load a checkpoint manifest plus its tensor files; returns nets and state."""
    _require_file(path, "checkpoint manifest")
    import json

    manifest = json.loads(path.read_text("utf-8"))
    base = path.parent
    tie_tag = manifest.get("tie_tag")
    tie_group = None
    if tie_tag == "C4":
        tie_group = make_point_group_2d(4)
    elif tie_tag == "D4":
        tie_group = make_point_group_2d(4, with_reflection=True)

    def rebuild(file_key):
        net = Mlp(manifest["x_dim"], hidden=tuple(manifest["hidden"]),
                  horizon=manifest["horizon"], seed=manifest["seed"],
                  tie_group=tie_group)
        net.set_flat_parameters(io.read_spdt(
            _require_file(base / manifest[file_key], "checkpoint tensor")))
        return net

    net = rebuild("params_file")
    ema = rebuild("ema_file")
    adam = io.read_spdt(_require_file(base / manifest["adam_file"],
                                      "optimizer state"))
    opt_state = (adam[0], adam[1], manifest["adam_step_count"])
    return {"net": net, "ema": ema, "opt_state": opt_state,
            "manifest": manifest}


def build_score(cfg: dict, s: Schedule, group: IsometryGroup | None,
                out_dir: Path, event_shape: tuple[int, ...]):
    """Score field (x, t) for the configured model kind."""
    kind = cfg.get("model", {}).get("kind", "oracle")
    if kind.startswith("oracle"):
        mix = build_mixture(cfg, group)
        field = AnalyticScoreField(mix, s)
    else:
        ck = load_checkpoint(_checkpoint_path(cfg, out_dir))
        field = FlatField(ck["ema"], event_shape)
    if kind.endswith("+FA"):
        if group is None:
            raise ConfigError(f"model kind {kind!r} needs a group section")
        field = frame_average(field, group)
    return field


def build_bridge_score(cfg: dict, s: Schedule, group: IsometryGroup | None):
    model = cfg.get("model", {})
    spec = model.get("coupling")
    if spec is None:
        raise ConfigError("bridge runs need model.coupling (matrix, noise_var)")
    matrix = spec["matrix"]
    matrix = float(matrix) if np.isscalar(matrix) else np.array(matrix, dtype=float)
    coupling = GaussianCoupling(matrix=matrix, noise_var=float(spec["noise_var"]))
    field = BridgeScoreField(coupling, s)
    if model.get("kind", "oracle").endswith("+FA"):
        if group is None:
            raise ConfigError("FA bridge score needs a group section")
        field = frame_average(field, group, diagonal_pair_group(group))
    return field


# ---- commands ------------------------------------------------------------


def cmd_gen_data(cfg: dict, out_dir: Path, seed_override: int | None,
                 threads: int) -> int:
    chash = io.config_hash(cfg)
    group = build_group(cfg)
    mix = build_mixture(cfg, group)
    data_cfg = cfg.get("data", {})
    seed = seed_override if seed_override is not None else data_cfg.get("seed", 0)
    n = data_cfg.get("n_samples", 1000)
    samples = mix.sample(np.random.default_rng(seed), n)
    io.write_spdt(out_dir / "data.spdt", samples)

    spec_doc = {
        "config_hash": chash,
        "seed": seed,
        "n_samples": n,
        "symmetrized": bool(data_cfg.get("symmetrize", False)),
        "weights": mix.weights.tolist(),
        "means": mix.means.tolist(),
        "variances": mix.variances.tolist(),
    }
    if group is not None:
        spec_doc["group"] = group.name
        try:
            c = sampling.default_canonicalizer(group)
            names = [sampling.canonicalize(c, x).name for x in samples]
            counts = {el.name: names.count(el.name) for el in group.elements}
            spec_doc["orientation_counts"] = counts
        except SpdmError:
            pass
    io.write_json(out_dir / "data_spec.json", spec_doc)
    _write_manifest(out_dir, "gen-data", chash, seed,
                    ["data.spdt", "data_spec.json"],
                    {"n_samples": n, "components": len(mix.weights)})
    return EXIT_OK


def cmd_train(cfg: dict, out_dir: Path, seed_override: int | None,
              threads: int) -> int:
    chash = io.config_hash(cfg)
    s = build_schedule(cfg)
    group = build_group(cfg)
    tcfg_raw = dict(cfg.get("train", {}))
    mode = tcfg_raw.pop("mode", "plain")
    init_path = tcfg_raw.pop("init_checkpoint", None)
    if seed_override is not None:
        tcfg_raw["seed"] = seed_override
    hidden = tcfg_raw.pop("hidden", None)
    tcfg = TrainerConfig(**tcfg_raw) if hidden is None else \
        TrainerConfig(hidden=tuple(hidden), **tcfg_raw)

    data = io.read_spdt(_require_file(out_dir / "data.spdt", "dataset"))
    flat = data.reshape(data.shape[0], -1)

    if mode in ("WT", "regularized") and group is None:
        raise ConfigError(f"train mode {mode!r} needs a group section")
    if mode == "WT" and group is not None and group.elements[0].kind != "matrix":
        raise ConfigError("WT mode needs a 2-D point group (C4 or D4 without shape)")

    resume = {}
    if init_path:
        ck = load_checkpoint(Path(init_path))
        resume = {"init_net": ck["net"], "init_ema": ck["ema"],
                  "init_opt_state": ck["opt_state"],
                  "start_step": ck["manifest"]["steps_done"]}
    result = train(tcfg, flat, s, group=group, mode=mode, **resume)

    io.write_spdt(out_dir / "checkpoint.spdt", result.net.flat_parameters())
    io.write_spdt(out_dir / "checkpoint_ema.spdt",
                  result.ema_net.flat_parameters())
    m, v, step_count = result.opt_state
    io.write_spdt(out_dir / "checkpoint_adam.spdt", np.stack([m, v]))
    tie_tag = None
    if mode == "WT":
        tie_tag = "D4" if len(group) == 8 else "C4"
    manifest = {
        "config_hash": chash,
        "seed": tcfg.seed,
        "mode": mode,
        "x_dim": result.net.x_dim,
        "hidden": list(result.net.hidden),
        "sizes": list(result.net.sizes),
        "horizon": s.T,
        "schedule_kind": s.kind,
        "tie_tag": tie_tag,
        "free_parameters": result.free_parameters,
        "steps_done": result.steps_done,
        "adam_step_count": step_count,
        "final_loss": float(result.losses[-1]) if result.losses.size else None,
        "params_file": "checkpoint.spdt",
        "ema_file": "checkpoint_ema.spdt",
        "adam_file": "checkpoint_adam.spdt",
    }
    io.write_json(out_dir / "checkpoint.json", manifest)
    rows = []
    for i in range(result.losses.size):
        reg = float(result.reg_losses[i]) if result.reg_losses is not None else 0.0
        rows.append([i, float(result.losses[i]), reg, chash, tcfg.seed])
    io.write_csv(out_dir / "loss.csv",
                 ["step", "dsm_loss", "reg_loss", "config_hash", "seed"], rows)
    _write_manifest(out_dir, "train", chash, tcfg.seed,
                    ["checkpoint.spdt", "checkpoint_ema.spdt",
                     "checkpoint_adam.spdt", "checkpoint.json", "loss.csv"],
                    {"mode": mode, "steps": tcfg.steps,
                     "free_parameters": result.free_parameters})
    return EXIT_OK


def _prior_draws(s: Schedule, n: int, dim: int, seed: int) -> np.ndarray:
    sig = float(np.sqrt(s.sigma2(s.T)))
    return sig * _aux_rng(seed).standard_normal((n, dim))


def _delta_x0_probe(run_one, probes: np.ndarray, group: IsometryGroup,
                    seed: int) -> float:
    """Average worst-entry equivariance gap of the chain map on probes."""
    rng = _aux_rng(seed + 1)
    gaps = []
    for i, x in enumerate(probes):
        k = group.elements[1 + int(rng.integers(len(group) - 1))]
        gap = np.max(np.abs(run_one(i, k.apply(x)) - k.apply(run_one(i, x))))
        gaps.append(float(gap))
    return float(np.mean(gaps))


def cmd_sample(cfg: dict, out_dir: Path, seed_override: int | None,
               threads: int) -> int:
    chash = io.config_hash(cfg)
    s = build_schedule(cfg)
    group = build_group(cfg)
    sp = cfg.get("sampler", {})
    seed = seed_override if seed_override is not None else sp.get("seed", 0)
    lam = sp.get("lam", 1.0)
    steps = sp.get("steps", 400)
    n = sp.get("n_samples", 512)
    use_en = sp.get("equivariant_noise", False)

    event_shape = (2,)
    if group is not None and group.elements[0].kind == "grid":
        event_shape = group.elements[0].grid_shape
    score = build_score(cfg, s, group, out_dir, event_shape)
    grid = sampling.sampling_grid(s, steps)
    dim = int(np.prod(event_shape))
    x_T = _prior_draws(s, n, dim, seed).reshape(n, *event_shape)

    if use_en:
        if group is None:
            raise ConfigError("equivariant_noise needs a group section")
        canon = sampling.default_canonicalizer(group)

        def run_one(i, start):
            seq = sampling.equivariant_noise_sequence(
                start, _chain_seed(seed, i), group, canon, grid.n_steps)
            return sampling.reverse_sde_sample(score, s, lam, grid, start,
                                               noise=seq).terminal

        outs = parallel_map(lambda a: run_one(*a), list(enumerate(x_T)), threads)
        samples = np.stack(outs)
    else:

        def run_one(i, start):
            return sampling.reverse_sde_sample(score, s, lam, grid, start,
                                               noise=_chain_seed(seed, i)).terminal

        samples = sampling.reverse_sde_sample(score, s, lam, grid, x_T,
                                              noise=seed).terminal

    summary = {"config_hash": chash, "seed": seed, "lam": lam, "steps": steps,
               "n_samples": n, "equivariant_noise": use_en,
               "mean_norm": float(np.mean(np.linalg.norm(
                   samples.reshape(n, -1), axis=1)))}
    if group is not None and lam > 0:
        n_probe = min(4, n)
        summary["delta_x0"] = _delta_x0_probe(run_one, x_T[:n_probe], group, seed)
    io.write_spdt(out_dir / "samples.spdt", samples)
    io.write_json(out_dir / "sample_summary.json", summary)
    _write_manifest(out_dir, "sample", chash, seed, ["samples.spdt",
                    "sample_summary.json"],
                    {"lam": lam, "steps": steps, "n_samples": n,
                     "equivariant_noise": use_en})
    return EXIT_OK


def cmd_bridge(cfg: dict, out_dir: Path, seed_override: int | None,
               threads: int) -> int:
    chash = io.config_hash(cfg)
    s = build_schedule(cfg)
    group = build_group(cfg)
    sp = cfg.get("sampler", {})
    seed = seed_override if seed_override is not None else sp.get("seed", 0)
    tau = sp.get("tau", 1.0)
    steps = sp.get("steps", 400)
    n = sp.get("n_samples", 256)
    use_en = sp.get("equivariant_noise", False)

    cond_score = build_bridge_score(cfg, s, group)
    grid = sampling.bridge_grid(s, steps)
    x_T = _prior_draws(s, n, 2, seed)

    canon = None
    if use_en:
        if group is None:
            raise ConfigError("equivariant_noise needs a group section")
        canon = sampling.default_canonicalizer(group)

    def run_one(i, endpoint):
        if canon is not None:
            noise = sampling.equivariant_noise_sequence(
                endpoint, _chain_seed(seed, i), group, canon, grid.n_steps)
        else:
            noise = _chain_seed(seed, i)
        return sampling.ddbm_reverse_sample(cond_score, s, endpoint, tau, grid,
                                            noise=noise).terminal

    if use_en or tau == 0:
        outs = parallel_map(lambda a: run_one(*a), list(enumerate(x_T)), threads)
        samples = np.stack(outs)
    else:
        samples = sampling.ddbm_reverse_sample(cond_score, s, x_T, tau, grid,
                                               noise=seed).terminal

    summary = {"config_hash": chash, "seed": seed, "tau": tau, "steps": steps,
               "n_samples": n, "equivariant_noise": use_en}
    if group is not None:
        n_probe = min(8, n)
        summary["delta_x0"] = _delta_x0_probe(run_one, x_T[:n_probe], group, seed)
    io.write_spdt(out_dir / "bridge_samples.spdt", samples)
    io.write_json(out_dir / "bridge_summary.json", summary)
    _write_manifest(out_dir, "bridge", chash, seed,
                    ["bridge_samples.spdt", "bridge_summary.json"],
                    {"tau": tau, "steps": steps, "n_samples": n,
                     "equivariant_noise": use_en})
    return EXIT_OK


def cmd_nll(cfg: dict, out_dir: Path, seed_override: int | None,
            threads: int) -> int:
    chash = io.config_hash(cfg)
    s = build_schedule(cfg)
    group = build_group(cfg)
    spec = cfg.get("nll", {})
    seed = seed_override if seed_override is not None else 0
    n_points = spec.get("points", 16)
    steps = spec.get("steps", 200)
    div_mode = spec.get("div_mode", "exact_fd")

    data = io.read_spdt(_require_file(out_dir / "data.spdt", "dataset"))
    flat = data.reshape(data.shape[0], -1)[:n_points]
    event_shape = data.shape[1:]
    score = build_score(cfg, s, group, out_dir, event_shape)
    field = score if len(event_shape) == 1 else FlatField(
        lambda x, t: score(x.reshape(x.shape[0], *event_shape), t).reshape(
            x.shape[0], -1), (int(np.prod(event_shape)),))

    grid = sampling.nll_grid(s, steps)
    chunks = np.array_split(flat, min(threads, len(flat))) if len(flat) else []
    reports = parallel_map(
        lambda chunk: metrics.pf_ode_nll(field, s, chunk, grid,
                                         div_mode=div_mode, seed=seed),
        [c for c in chunks if len(c)], threads)
    ll = np.concatenate([r.log_likelihood for r in reports])
    bpd = np.concatenate([r.bits_per_dim for r in reports])
    d = flat.shape[1]
    rows = [[i, float(ll[i]), float(-ll[i] / d), float(bpd[i]), chash, seed]
            for i in range(len(ll))]
    io.write_csv(out_dir / "nll.csv",
                 ["index", "log_likelihood", "nll_nats_per_dim",
                  "bits_per_dim", "config_hash", "seed"], rows)
    io.write_json(out_dir / "nll_summary.json", {
        "config_hash": chash, "seed": seed, "points": len(ll),
        "steps": steps, "div_mode": div_mode,
        "mean_nll_nats_per_dim": float(np.mean(-ll / d)),
        "mean_bits_per_dim": float(np.mean(bpd)),
    })
    _write_manifest(out_dir, "nll", chash, seed, ["nll.csv", "nll_summary.json"],
                    {"points": len(ll), "steps": steps, "div_mode": div_mode})
    return EXIT_OK


def _tweedie_denoiser(score, s: Schedule):
    t_probe = 0.5 * s.T
    alpha = float(s.alpha(t_probe))
    sigma2 = float(s.sigma2(t_probe))

    def model(x):
        return (x + sigma2 * np.asarray(score(x, t_probe))) / alpha

    return model


def cmd_metrics(cfg: dict, out_dir: Path, seed_override: int | None,
                threads: int) -> int:
    chash = io.config_hash(cfg)
    s = build_schedule(cfg)
    group = build_group(cfg)
    seed = seed_override if seed_override is not None else 0
    wanted = cfg.get("metrics", ["fid", "inv_fid"])

    data = io.read_spdt(_require_file(out_dir / "data.spdt", "dataset"))
    samples = io.read_spdt(_require_file(out_dir / "samples.spdt", "sample set"))
    event_shape = data.shape[1:]
    data_flat = data.reshape(data.shape[0], -1)
    samp_flat = samples.reshape(samples.shape[0], -1)
    fspec = metrics.FeatureSpec(dim_in=data_flat.shape[1])

    rows = []

    def emit(name, value):
        rows.append([name, float(value), chash, seed])

    for name in wanted:
        if name == "fid":
            emit("fid", metrics.frechet_distance(
                metrics.dataset_stats(data_flat, fspec),
                metrics.dataset_stats(samp_flat, fspec)))
        elif name == "inv_fid":
            if group is None:
                raise ConfigError("inv_fid needs a group section")
            emit("inv_fid", metrics.inv_fid(samples, group, fspec))
        elif name == "delta_x0":
            if group is None:
                raise ConfigError("delta_x0 needs a group section")
            score = build_score(cfg, s, group, out_dir, event_shape)
            model = _tweedie_denoiser(score, s)
            emit("delta_x0", metrics.delta_x0_gap(
                model, samples[:16], group, _aux_rng(seed)))
        elif name == "energy":
            cap = 2000
            stat, p = metrics.energy_distance_test(
                data_flat[:cap], samp_flat[:cap], seed=seed)
            emit("energy_stat", stat)
            emit("energy_p", p)
        elif name == "nll_table":
            if group is None:
                raise ConfigError("nll_table needs a group section")
            _nll_table(cfg, s, group, out_dir, data, chash, seed, threads)
            emit("nll_table_rows", len(group))
    io.write_csv(out_dir / "metrics.csv",
                 ["name", "value", "config_hash", "seed"], rows)

    series = [("data", data_flat[:, :2], "#999999")]
    canon = None
    if group is not None:
        try:
            canon = sampling.default_canonicalizer(group)
        except SpdmError:
            canon = None
    if canon is not None:
        by_orient = {}
        for x in samples:
            gid = sampling.canonicalize(canon, x).gid
            by_orient.setdefault(gid, []).append(x.reshape(-1)[:2])
        for gid in sorted(by_orient):
            series.append((f"samples[{group.elements[gid].name}]",
                           np.stack(by_orient[gid]), io.palette_color(gid)))
    else:
        series.append(("samples", samp_flat[:, :2], io.palette_color(0)))
    io.svg_scatter(out_dir / "scatter.svg", series,
                   title="data vs samples",
                   comment=f"config {chash} seed {seed}")

    outputs = ["metrics.csv", "scatter.svg"]
    if "nll_table" in wanted and group is not None:
        outputs.append("nll_table.csv")
    _write_manifest(out_dir, "metrics", chash, seed, outputs,
                    {"metrics": list(wanted)})
    return EXIT_OK


def _nll_table(cfg, s, group, out_dir: Path, data: np.ndarray, chash: str,
               seed: int, threads: int) -> None:
    """Mean NLL of the dataset under every orientation of the inputs."""
    spec = cfg.get("nll", {})
    n_points = min(spec.get("points", 16), data.shape[0])
    steps = spec.get("steps", 200)
    event_shape = data.shape[1:]
    score = build_score(cfg, s, group, out_dir, event_shape)
    field = score if len(event_shape) == 1 else FlatField(
        lambda x, t: score(x.reshape(x.shape[0], *event_shape), t).reshape(
            x.shape[0], -1), (int(np.prod(event_shape)),))
    grid = sampling.nll_grid(s, steps)
    d = int(np.prod(event_shape))

    def one(el):
        moved = el.apply(data[:n_points]).reshape(n_points, -1)
        rep = metrics.pf_ode_nll(field, s, moved, grid, seed=seed)
        return [el.name, float(np.mean(-rep.log_likelihood / d)), chash, seed]

    rows = parallel_map(one, list(group.elements), threads)
    io.write_csv(out_dir / "nll_table.csv",
                 ["kappa", "mean_nll_nats_per_dim", "config_hash", "seed"],
                 rows)


def cmd_verify(cfg: dict, out_dir: Path, seed_override: int | None,
               threads: int) -> int:
    chash = io.config_hash(cfg)
    results = verify_mod.run_all()
    all_passed = all(r.passed for r in results)
    io.write_json(out_dir / "verify.json", {
        "config_hash": chash,
        "all_passed": all_passed,
        "checks": [r.as_dict() for r in results],
    })
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: "
              f"observed {r.observed:.3e} (tolerance {r.tolerance:g})")
    print(f"{'all checks passed' if all_passed else 'CHECKS FAILED'} "
          f"({sum(r.passed for r in results)}/{len(results)})")
    return EXIT_OK if all_passed else EXIT_VERIFY


HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "sample": cmd_sample,
    "bridge": cmd_bridge,
    "nll": cmd_nll,
    "metrics": cmd_metrics,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="spdm",
        description="Simulation and verification toolkit for "
                    "structure-preserving diffusion processes.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, blurb in [
        ("gen-data", "draw a dataset from the configured mixture"),
        ("train", "train a score net on the generated dataset"),
        ("sample", "run the reverse-SDE family from the prior"),
        ("bridge", "run the backward bridge from endpoint draws"),
        ("nll", "probability-flow log-likelihood of the dataset"),
        ("metrics", "sample-quality metrics, tables and scatter plots"),
        ("verify", "run the named self-check suite"),
    ]:
        p = sub.add_parser(name, help=blurb)
        p.add_argument("--config", type=Path,
                       required=(name != "verify"), help="JSON config path")
        p.add_argument("--out", type=Path, default=None,
                       help="output directory (default: config out_dir or ./out)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the command's seed")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (default: SPDM_THREADS or 1)")
    args = parser.parse_args(argv)

    out_dir = None
    try:
        cfg = io.load_config(args.config) if args.config else {}
        out_dir = Path(args.out) if args.out else Path(cfg.get("out_dir", "out"))
        out_dir.mkdir(parents=True, exist_ok=True)
        code = HANDLERS[args.command](cfg, out_dir, args.seed,
                                      resolve_threads(args.threads))
    except _NUMERIC_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_NUMERIC
    except (ConfigError, IoError, SpdmError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
    if out_dir is not None:
        try:
            io.append_log(out_dir / "run.log",
                          f"command={args.command} exit={code}")
        except OSError:
            pass
    return code


if __name__ == "__main__":
    sys.exit(main())
