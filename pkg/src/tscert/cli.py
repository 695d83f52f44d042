"""Command-line entry point: ``tscert train|certify|attack|ablate|report``.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical divergence.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import attacks, certmath, data, evalkit, nn
from .config import load_config
from .errors import CompatibilityError, ConfigError, DataError, TscertError
from .manifest import atomic_write_text, build_manifest, read_manifest, write_manifest
from .smoothing import SmoothedClassifier, SmoothingConfig, build_smoothed, member_configs, train_smoothed

log = logging.getLogger("tscert")

# offsets separating the train and test generator seeds
_TRAIN_SPLIT, _TEST_SPLIT = 1, 2


def load_datasets(cfg: dict, base_dir: Path) -> tuple:
    d = cfg["data"]
    if d["source"] == "ucr":
        try:
            train = data.load_ucr_file(base_dir / d["train_path"], d["delimiter"], "train")
            test = data.load_ucr_file(base_dir / d["test_path"], d["delimiter"], "test")
        except OSError as exc:
            raise DataError(str(exc)) from None
        if train.length != test.length:
            raise DataError("train and test series lengths differ")
        if train.label_names != test.label_names:
            names = sorted(set(train.label_names) | set(test.label_names))
            train, test = (_relabel(train, names), _relabel(test, names))
    elif d["source"] == "cbf":
        train = data.generate_cbf(d["n_train_per_label"], d["length"], d["seed"] * 10 + _TRAIN_SPLIT)
        test = data.generate_cbf(d["n_test_per_label"], d["length"], d["seed"] * 10 + _TEST_SPLIT, "test")
    else:
        args = (d["length"], d["num_labels"], d["sep"])
        train = data.generate_overlap(d["n_train_per_label"], *args, seed=d["seed"] * 10 + _TRAIN_SPLIT)
        test = data.generate_overlap(d["n_test_per_label"], *args, seed=d["seed"] * 10 + _TEST_SPLIT, split="test")
    if d["znormalize"]:
        train, test = data.znormalize(train), data.znormalize(test)
    return train, test


def _relabel(ds: data.Dataset, names) -> data.Dataset:
    index = {name: i for i, name in enumerate(names)}
    y = np.array([index[ds.label_names[v]] for v in ds.y])
    return data.Dataset(ds.name, ds.X, y, len(names), ds.split, tuple(names))


def test_indices(cfg: dict, test: data.Dataset, count: int | None = None) -> np.ndarray:
    count = cfg["data"]["test_subset"] if count is None else count
    return evalkit.subsample(test, count, cfg["data"]["seed"])


def model_config(cfg: dict, ds: data.Dataset) -> nn.ModelConfig:
    return nn.ModelConfig(ds.length, ds.num_labels, tuple(map(tuple, cfg["model"]["blocks"])), cfg["model"]["seed"])


def train_config(cfg: dict) -> nn.TrainConfig:
    return nn.TrainConfig(**cfg["train"])


def smoothing_config(cfg: dict) -> SmoothingConfig:
    s = cfg["smoothing"]
    return SmoothingConfig(s["sigma"], s["mode"], s["m"], s["mask_kind"], s["keep_ratio"], s["n"], s["beta"], s["seed"])


def _accuracy(params, ds) -> float:
    return float((nn.predict(params, ds.X) == ds.y).mean())


def cmd_train(cfg: dict, base_dir: Path, out: Path, threads: int = 1) -> dict:
    train, test = load_datasets(cfg, base_dir)
    mc, tc, sc = model_config(cfg, train), train_config(cfg), smoothing_config(cfg)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    if sc.mode == "deep_ensemble":
        members = [(f"member_{j}.npz",) + member_configs(mc, tc, j) for j in range(1, sc.m + 1)]
    else:
        members = [("model.npz", mc, tc)]
    mask = sc.training_mask(train.length)
    outputs, metrics = {}, {"final_loss": [], "train_accuracy": [], "test_accuracy": []}
    for fname, mcj, tcj in members:
        res = train_smoothed(train, mcj, tcj, sc.sigma, mask)
        path = nn.save_checkpoint(
            ckpt_dir / fname,
            mcj,
            res.params,
            {"train_seed": tcj.seed, "sigma": sc.sigma, "mode": sc.mode, "mask": None if mask is None else mask.kind},
        )
        outputs[fname] = path
        metrics["final_loss"].append(res.losses[-1])
        metrics["train_accuracy"].append(_accuracy(res.params, train))
        metrics["test_accuracy"].append(_accuracy(res.params, test))
        log.info("trained %s: loss %.4f", fname, res.losses[-1])
    return {"outputs": outputs, "metrics": metrics, "checkpoints": [str(p) for p in outputs.values()]}


def _checkpoint_paths(cfg: dict, base_dir: Path, out: Path) -> list:
    listed = cfg["paths"]["checkpoints"]
    if listed:
        return [base_dir / p for p in listed]
    manifest_path = out / "train_manifest.json"
    if not manifest_path.exists():
        raise ConfigError("no paths.checkpoints given and no train_manifest.json in the output directory")
    paths = [str(Path(p).resolve()) for p in read_manifest(manifest_path)["metrics"]["checkpoints"]]
    # record the lookup so a rerun from this command's manifest finds the same files
    cfg["paths"]["checkpoints"] = paths
    return [Path(p) for p in paths]


def load_models(paths, ds: data.Dataset) -> list:
    models = []
    for p in paths:
        try:
            mc, params, _ = nn.load_checkpoint(p)
        except OSError as exc:
            raise DataError(f"cannot read checkpoint {p}: {exc}") from None
        if mc.input_length != ds.length or mc.num_labels != ds.num_labels:
            raise CompatibilityError(
                f"checkpoint {p} expects T={mc.input_length}, k={mc.num_labels}; "
                f"data has T={ds.length}, k={ds.num_labels}"
            )
        models.append(params)
    return models


def _smoothed_setup(cfg, base_dir, out, test) -> tuple:
    sc = smoothing_config(cfg)
    models = load_models(_checkpoint_paths(cfg, base_dir, out), test)
    return sc, build_smoothed(models, sc, test.length)


def cmd_certify(cfg: dict, base_dir: Path, out: Path, threads: int = 1) -> dict:
    _, test = load_datasets(cfg, base_dir)
    sc, setup = _smoothed_setup(cfg, base_dir, out, test)
    idx = test_indices(cfg, test)
    records = evalkit.certify_dataset(setup, test, sc, idx, workers=threads)
    curve = evalkit.accuracy_radius_curve(records, cfg["smoothing"]["radius_grid"])
    rec_path, curve_path = out / "records.tsv", out / "curve.tsv"
    _atomic(rec_path, evalkit.write_records, records)
    _atomic(curve_path, evalkit.write_curve, curve)
    metrics = {
        "acr": evalkit.acr(records),
        "accuracy": evalkit.certified_accuracy(records, 0.0),
        "abstain_rate": sum(r.abstained for r in records) / len(records),
        "n_samples": len(records),
        "dataset": test.name,
        "sigma": sc.sigma,
        "mode": sc.mode,
    }
    return {"outputs": {"records": rec_path, "curve": curve_path}, "metrics": metrics}


def _atomic(path: Path, writer, payload) -> None:
    tmp = path.with_name(path.name + ".tmp")
    writer(tmp, payload)
    tmp.replace(path)


def _benign_model(cfg, base_dir, train, test):
    a = cfg["attack"]
    if a["benign_checkpoint"]:
        return load_models([base_dir / a["benign_checkpoint"]], test)[0]
    return train_smoothed(train, model_config(cfg, train), train_config(cfg), 0.0, None).params


def cmd_attack(cfg: dict, base_dir: Path, out: Path, threads: int = 1) -> dict:
    train, test = load_datasets(cfg, base_dir)
    sc, setup = _smoothed_setup(cfg, base_dir, out, test)
    a = cfg["attack"]
    setups = {}
    if a["include_benign"]:
        setups["benign"] = SmoothedClassifier([_benign_model(cfg, base_dir, train, test)], 0.0)
    setups[sc.mode] = setup
    acfg = attacks.AttackConfig(
        steps=a["steps"], step_size=a["step_size"], eot_draws=a["eot_draws"], n_eval=a["n_eval"], seed=a["seed"]
    )
    idx = test_indices(cfg, test, a["samples"])
    rows = attacks.attack_sweep(setups, test, a["epsilons"], acfg, idx)
    path = out / "asr.tsv"
    _atomic(path, attacks.write_asr_table, rows)
    metrics = {"asr": [list(r) for r in rows], "dataset": test.name, "sigma": sc.sigma, "mode": sc.mode}
    return {"outputs": {"asr": path}, "metrics": metrics}


def cmd_ablate(cfg: dict, base_dir: Path, out: Path, threads: int = 1) -> dict:
    _, test = load_datasets(cfg, base_dir)
    sc = smoothing_config(cfg)
    models = load_models(_checkpoint_paths(cfg, base_dir, out), test)
    if len(models) != 1:
        raise ConfigError("ablate needs exactly one (mask-trained) checkpoint")
    ab = cfg["ablate"]
    idx = test_indices(cfg, test, ab["samples"] or cfg["data"]["test_subset"])
    grid = cfg["smoothing"]["radius_grid"]
    sc_se = replace(sc, mode="self_ensemble", m=max(sc.m, 1))
    sizes = evalkit.ablate_ensemble_size(test, models[0], ab["sizes"], sc_se, idx, grid, threads)
    ratios = evalkit.ablate_keep_ratio(test, models[0], ab["keep_ratios"], sc_se, ab["kinds"], idx, grid, threads)
    size_path, ratio_path = out / "ablate_size.tsv", out / "ablate_keep.tsv"
    atomic_write_text(
        size_path, "m\tacr\taccuracy\n" + "".join(f"{r['m']}\t{r['acr']!r}\t{r['accuracy']!r}\n" for r in sizes)
    )
    atomic_write_text(
        ratio_path,
        "kind\tp\tacr\taccuracy\n" + "".join(f"{r['kind']}\t{r['p']!r}\t{r['acr']!r}\t{r['accuracy']!r}\n" for r in ratios),
    )
    metrics = {
        "sizes": [{"m": r["m"], "acr": r["acr"], "accuracy": r["accuracy"]} for r in sizes],
        "keep_ratios": [{"kind": r["kind"], "p": r["p"], "acr": r["acr"], "accuracy": r["accuracy"]} for r in ratios],
    }
    return {"outputs": {"ablate_size": size_path, "ablate_keep": ratio_path}, "metrics": metrics}


def summarize(manifests: list) -> list:
    """Rows ``(dataset, sigma, mode, acr, accuracy)`` from certify manifests,
    sorted by dataset, sigma, mode."""
    rows = []
    for path, man in manifests:
        m = man.get("metrics", {})
        missing = [f for f in ("dataset", "sigma", "mode", "acr", "accuracy") if f not in m]
        if missing:
            raise ConfigError(f"{path}: manifest lacks metrics {missing}")
        rows.append((m["dataset"], float(m["sigma"]), m["mode"], float(m["acr"]), float(m["accuracy"])))
    return sorted(rows, key=lambda r: (r[0], r[1], r[2]))


def cmd_report(cfg: dict, base_dir: Path, out: Path, threads: int = 1, extra_manifests=()) -> dict:
    r = cfg["report"]
    paths = [base_dir / p for p in r["manifests"]] + [Path(p) for p in extra_manifests]
    manifests = [(p, read_manifest(p)) for p in paths]
    rows = summarize(manifests)
    summary_path = out / "summary.tsv"
    atomic_write_text(
        summary_path,
        "dataset\tsigma\tmode\tacr\taccuracy\n"
        + "".join(f"{d}\t{s!r}\t{m}\t{a!r}\t{acc!r}\n" for d, s, m, a, acc in rows),
    )
    pa_grid = np.linspace(0.5, 1.0, r["surface_pa_steps"])[:-1]
    surface = certmath.emit_radius_surface(r["surface_sigma"], r["surface_alphas"], pa_grid)
    surface_path = out / "radius_surface.tsv"
    _atomic(surface_path, certmath.write_radius_surface, surface)
    return {"outputs": {"summary": summary_path, "radius_surface": surface_path}, "metrics": {"rows": len(rows)}}


COMMANDS = {
    "train": cmd_train,
    "certify": cmd_certify,
    "attack": cmd_attack,
    "ablate": cmd_ablate,
    "report": cmd_report,
}


def run(command: str, config_path, out=None, delimiter=None, threads: int = 1, extra=()) -> dict:
    cfg, base_dir = load_config(config_path)
    if delimiter:
        cfg["data"]["delimiter"] = delimiter
    out = Path(out) if out else Path(config_path).resolve().parent / "out"
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    if command == "report":
        result = cmd_report(cfg, base_dir, out, threads, extra)
    else:
        result = COMMANDS[command](cfg, base_dir, out, threads)
    manifest = build_manifest(
        command, cfg, base_dir, time.perf_counter() - start, result["outputs"], dict(result["metrics"])
    )
    if "checkpoints" in result:
        manifest["metrics"]["checkpoints"] = result["checkpoints"]
    path = write_manifest(out / f"{command}_manifest.json", manifest)
    manifest["path"] = str(path)
    return manifest


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="tscert", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("manifests", nargs="*", help="extra manifests (report only)")
    parser.add_argument("--config", required=True, help="INI config or a manifest to rerun")
    parser.add_argument("--out", help="output directory (default: <config dir>/out)")
    parser.add_argument("--delimiter", choices=("tab", "comma"))
    parser.add_argument("--threads", type=int, default=1, help="worker processes for per-sample work")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        manifest = run(args.command, args.config, args.out, args.delimiter, max(1, args.threads), args.manifests)
    except TscertError as exc:
        print(f"tscert: {exc}", file=sys.stderr)
        return exc.exit_code
    print(manifest["path"])
    return 0


if __name__ == "__main__":
    sys.exit(main())
