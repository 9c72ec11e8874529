"""Command-line pipeline: generate, extract, select, score, merge, evaluate, observe.

Stages communicate only through files in the output directory.  Every stage
writes a timestamp-free manifest (input content hashes + resolved config), so
re-running with unchanged inputs is reproducible byte-for-byte, and ``--cache``
turns such re-runs into no-ops.

Exit codes: 0 success, 2 validation/input error, 3 numeric-domain error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import bench as bench_mod
from . import checkpoint as ckpt_store
from . import manifest as manifest_mod
from .clustering import TypicalDataset, select_typical
from .errors import NumericDomainError, RecallError, ValidationError
from .extraction import extract, load_representations, save_representations
from .merging import (
    MergePlan,
    dare_sparsify,
    loss_weighted_plan,
    merge,
    recall_weights,
    uniform_merge,
    task_vector_merge,
)
from .model import ModelConfig, init_checkpoint
from .similarity import build_table, load_table, write_table_csv
from .util import resolve_threads

PROG = "recall"


def _load_run_config(path: str | None) -> dict:
    if path is None:
        return {}
    if not os.path.exists(path):
        raise ValidationError(f"config file not found: {path}")
    with open(path, "rb") as fh:
        raw = fh.read()
    if path.endswith(".toml"):
        try:
            import tomllib  # py311+
        except ModuleNotFoundError:
            import tomli as tomllib
        try:
            return tomllib.loads(raw.decode("utf-8"))
        except Exception as exc:
            raise ValidationError(f"cannot parse TOML config {path}: {exc}") from exc
    try:
        return json.loads(raw.decode("utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"cannot parse JSON config {path}: {exc}") from exc


def _setting(args, config: dict, key: str, default):
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in config:
        return config[key]
    return default


def _require_files(*paths) -> list[str]:
    missing = [str(p) for p in paths if p is not None and not os.path.exists(str(p))]
    if missing:
        raise ValidationError(f"input files not found: {', '.join(missing)}")
    return [str(p) for p in paths if p is not None]


def _model_config(args, config: dict, ckpt=None) -> ModelConfig:
    path = _setting(args, config, "model_config", None)
    if path is not None:
        _require_files(path)
        with open(path) as fh:
            return ModelConfig(**json.load(fh))
    if ckpt is not None and "config_json" in ckpt.metadata:
        return ModelConfig.from_json(ckpt.metadata["config_json"])
    return ModelConfig()


def _outdir(args, config: dict) -> str:
    outdir = str(_setting(args, config, "outdir", "out"))
    os.makedirs(outdir, exist_ok=True)
    return outdir


def _figures_enabled(args) -> bool:
    return not getattr(args, "no_figures", False)


def _stage_cached(args, manifest_path: str, stage: str, config: dict, inputs: list[str]) -> bool:
    if not getattr(args, "cache", False):
        return False
    if manifest_mod.manifest_matches(manifest_path, stage, config, inputs):
        print(f"[{stage}] cached, inputs unchanged: skipping")
        return True
    return False


def _layer_policy(spec: str):
    if spec in ("all", "last"):
        return spec
    try:
        return [int(s) for s in spec.split(",") if s.strip() != ""]
    except ValueError:
        raise ValidationError(f"layer policy must be 'all', 'last', or comma ints, got {spec!r}")


# ---------------------------------------------------------------- subcommands


def cmd_gen_experts(args) -> int:
    config = _load_run_config(args.config)
    outdir = _outdir(args, config)
    seed = int(_setting(args, config, "seed", 0))
    source = _setting(args, config, "source", "solver")
    strength = float(_setting(args, config, "strength", 0.5))
    cfg = _model_config(args, config)

    stage_cfg = {"seed": seed, "source": source, "strength": strength, "model": json.loads(cfg.to_json())}
    manifest_path = os.path.join(outdir, "gen-experts.manifest.json")
    if _stage_cached(args, manifest_path, "gen-experts", stage_cfg, []):
        return 0

    tasks_dir = os.path.join(outdir, "tasks")
    os.makedirs(tasks_dir, exist_ok=True)
    tasks = bench_mod.gen_tasks(seed)
    outputs = []
    for task in tasks:
        outputs.extend(bench_mod.save_task(task, tasks_dir).values())

    with open(os.path.join(outdir, "model_config.json"), "w") as fh:
        fh.write(cfg.to_json())
        fh.write("\n")
    outputs.append(os.path.join(outdir, "model_config.json"))

    base = init_checkpoint(cfg, seed, model_id="base")
    base_path = os.path.join(outdir, "base.st")
    ckpt_store.save(base, base_path)
    outputs.append(base_path)

    for task in tasks:
        if source == "solver":
            expert = bench_mod.gen_solver_expert(cfg, task.name, model_id=f"expert_{task.name}")
        elif source == "synthetic":
            expert = bench_mod.gen_synthetic_expert(
                base, task.name, strength, seed, model_id=f"expert_{task.name}"
            )
        else:
            raise ValidationError(f"unknown expert source {source!r}")
        path = os.path.join(outdir, f"expert_{task.name}.st")
        ckpt_store.save(expert, path)
        outputs.append(path)

    manifest_mod.write_manifest(manifest_path, "gen-experts", stage_cfg, [], outputs)
    print(f"[gen-experts] wrote {len(tasks)} tasks and {len(tasks)} experts to {outdir}")
    return 0


def cmd_extract(args) -> int:
    config = _load_run_config(args.config)
    outdir = _outdir(args, config)
    _require_files(args.checkpoint, args.dataset)
    threads = resolve_threads(args.threads)

    ckpt = ckpt_store.load(args.checkpoint, allow_nonfinite=args.allow_nonfinite)
    cfg = _model_config(args, config, ckpt)
    samples = bench_mod.load_jsonl(args.dataset)
    model_id = args.model_id or ckpt.metadata.get("model_id", "model")
    out_path = args.out or os.path.join(outdir, f"reps.{model_id}.st")

    stage_cfg = {"batch_hint": args.batch_hint, "model_id": model_id, "model": json.loads(cfg.to_json())}
    manifest_path = out_path + ".manifest.json"
    inputs = [args.checkpoint, args.dataset]
    if _stage_cached(args, manifest_path, "extract", stage_cfg, inputs):
        return 0

    reps = extract(
        ckpt,
        cfg,
        [s.instruction for s in samples],
        batch_hint=args.batch_hint,
        model_id=model_id,
        threads=threads,
    )
    save_representations(reps, out_path)
    manifest_mod.write_manifest(manifest_path, "extract", stage_cfg, inputs, [out_path])
    print(f"[extract] {reps.num_samples} samples x {reps.num_layers} layers -> {out_path}")
    return 0


def cmd_select_typical(args) -> int:
    config = _load_run_config(args.config)
    outdir = _outdir(args, config)
    _require_files(args.reps)
    m = int(_setting(args, config, "m_per_layer", 20))
    seed = int(_setting(args, config, "seed", 0))
    policy = _layer_policy(str(_setting(args, config, "layer_policy", "all")))

    out_path = args.out or os.path.join(outdir, "typical.json")
    stage_cfg = {"m_per_layer": m, "seed": seed, "layer_policy": str(args.layers or "all")}
    manifest_path = out_path + ".manifest.json"
    if _stage_cached(args, manifest_path, "select-typical", stage_cfg, [args.reps]):
        return 0

    reps = load_representations(args.reps)
    typical = select_typical(reps, m_per_layer=m, layers=policy, seed=seed)
    with open(out_path, "w") as fh:
        fh.write(typical.to_json())
        fh.write("\n")
    manifest_mod.write_manifest(manifest_path, "select-typical", stage_cfg, [args.reps], [out_path])
    print(f"[select-typical] {len(typical.sample_ids)} typical samples -> {out_path}")
    return 0


def cmd_similarity(args) -> int:
    config = _load_run_config(args.config)
    outdir = _outdir(args, config)
    metric = str(_setting(args, config, "metric", "rbf"))
    sigma = float(_setting(args, config, "sigma", 1.0))
    if metric in ("rbf", "mmd") and sigma <= 0:
        raise ValidationError(f"sigma must be > 0 for metric {metric!r}, got {sigma}")
    if len(args.reps) < 2:
        raise ValidationError("similarity needs at least 2 representation files")
    inputs = _require_files(*args.reps) + (_require_files(args.typical) if args.typical else [])

    json_path = args.out or os.path.join(outdir, "similarity.json")
    csv_path = os.path.splitext(json_path)[0] + ".csv"
    fig_path = os.path.splitext(json_path)[0] + ".png"
    stage_cfg = {"metric": metric, "sigma": sigma, "cka_centered": not args.cka_uncentered}
    manifest_path = json_path + ".manifest.json"
    if _stage_cached(args, manifest_path, "similarity", stage_cfg, inputs):
        return 0

    reps_by_model = {}
    for path in args.reps:
        reps = load_representations(path)
        if reps.model_id in reps_by_model:
            raise ValidationError(f"duplicate model id {reps.model_id!r} among representation files")
        reps_by_model[reps.model_id] = reps
    typical_ids = None
    if args.typical:
        with open(args.typical) as fh:
            typical_ids = TypicalDataset.from_json(fh.read()).sample_ids

    table = build_table(
        reps_by_model,
        typical_ids=typical_ids,
        metric=metric,
        sigma=sigma,
        cka_centered=not args.cka_uncentered,
    )
    with open(json_path, "w") as fh:
        fh.write(table.to_json())
        fh.write("\n")
    write_table_csv(table, csv_path)
    outputs = [json_path, csv_path]
    if _figures_enabled(args):
        from .plots import render_similarity_curves

        render_similarity_curves(table, fig_path)
        outputs.append(fig_path)
    manifest_mod.write_manifest(manifest_path, "similarity", stage_cfg, inputs, outputs)
    print(f"[similarity] {metric} table over {len(reps_by_model)} models -> {json_path}")
    return 0


def _load_models(paths: list[str]) -> list:
    return [ckpt_store.load(p) for p in paths]


def cmd_merge(args) -> int:
    config = _load_run_config(args.config)
    outdir = _outdir(args, config)
    method = str(_setting(args, config, "method", "recall"))
    out_path = args.out or os.path.join(outdir, "merged.st")
    plan_path = os.path.join(os.path.dirname(out_path) or ".", "plan.json")

    if method == "recall":
        if not args.table or not args.anchor or not args.models:
            raise ValidationError("recall merge needs --table, --anchor, and --models")
        inputs = _require_files(args.table, *args.models)
        table = load_table(args.table)
        if len(args.models) != len(table.model_ids):
            raise ValidationError(
                f"--models must list one checkpoint per table model id, in table order "
                f"({len(table.model_ids)} ids: {table.model_ids})"
            )
        by_id = dict(zip(table.model_ids, _load_models(args.models)))
        plan = recall_weights(
            table,
            anchor_model=args.anchor,
            include_base=not args.no_include_base,
            base_model=args.base_id,
            temperature=args.temperature,
            euclidean_flip=not args.no_euclidean_flip,
        )
        ckpts = [by_id[mid] for mid in plan.model_ids]
        cfg = _model_config(args, config, ckpts[0])
        merged = merge(ckpts, plan, cfg=cfg)
    elif method == "uniform":
        if not args.models or len(args.models) < 1:
            raise ValidationError("uniform merge needs --models")
        inputs = _require_files(*args.models)
        ckpts = _load_models(args.models)
        cfg = _model_config(args, config, ckpts[0])
        merged = uniform_merge(ckpts, cfg=cfg)
        groups = cfg.num_layers + 1
        plan = MergePlan(
            method="uniform",
            model_ids=[c.metadata.get("model_id", f"model_{i}") for i, c in enumerate(ckpts)],
            weights=np.full((groups, len(ckpts)), 1.0 / len(ckpts)),
        )
    elif method == "task_vector":
        if not args.base or not args.experts:
            raise ValidationError("task_vector merge needs --base and --experts")
        inputs = _require_files(args.base, *args.experts)
        base = ckpt_store.load(args.base)
        experts = _load_models(args.experts)
        lambdas = args.lambdas or [1.0 / len(experts)] * len(experts)
        if len(lambdas) != len(experts):
            raise ValidationError(f"{len(lambdas)} lambdas for {len(experts)} experts")
        merged = task_vector_merge(base, experts, lambdas)
        plan = MergePlan(
            method="task_vector",
            model_ids=[c.metadata.get("model_id", f"expert_{i}") for i, c in enumerate(experts)],
            weights=np.asarray([lambdas]),
            hyperparameters={"lambdas": list(lambdas)},
        )
    elif method == "dare":
        if not args.base or not args.experts or len(args.experts) != 1:
            raise ValidationError("dare needs --base and exactly one --experts checkpoint")
        if args.drop_rate is None or not 0.0 <= args.drop_rate < 1.0:
            raise ValidationError(f"dare needs --drop-rate in [0, 1), got {args.drop_rate}")
        inputs = _require_files(args.base, args.experts[0])
        base = ckpt_store.load(args.base)
        expert = ckpt_store.load(args.experts[0])
        merged = dare_sparsify(base, expert, args.drop_rate, seed=args.seed or 0)
        plan = MergePlan(
            method="dare",
            model_ids=[expert.metadata.get("model_id", "expert")],
            weights=np.asarray([[1.0]]),
            hyperparameters={"drop_rate": args.drop_rate, "seed": args.seed or 0},
        )
    elif method == "loss_weighted":
        if not args.models or not args.val:
            raise ValidationError("loss_weighted merge needs --models and --val")
        inputs = _require_files(args.val, *args.models)
        ckpts = _load_models(args.models)
        cfg = _model_config(args, config, ckpts[0])
        samples = bench_mod.load_jsonl(args.val)
        from .checkpoint import build_layer_index

        index = build_layer_index(ckpts[0], cfg)
        plan = loss_weighted_plan(ckpts, cfg, samples, groups=index.group_count)
        merged = merge(ckpts, plan, index=index, cfg=cfg)
    else:
        raise ValidationError(f"unknown merge method {method!r}")

    stage_cfg = {"method": method}
    manifest_path = out_path + ".manifest.json"
    ckpt_store.save(merged, out_path)
    with open(plan_path, "w") as fh:
        fh.write(plan.to_json())
        fh.write("\n")
    manifest_mod.write_manifest(manifest_path, "merge", stage_cfg, inputs, [out_path, plan_path])
    print(f"[merge] method={method} -> {out_path} (plan {plan_path})")
    return 0


def cmd_eval(args) -> int:
    config = _load_run_config(args.config)
    outdir = _outdir(args, config)
    _require_files(args.checkpoint, args.dataset)
    threads = resolve_threads(args.threads)

    ckpt = ckpt_store.load(args.checkpoint)
    cfg = _model_config(args, config, ckpt)
    samples = bench_mod.load_jsonl(args.dataset)
    out_path = args.out or os.path.join(outdir, "eval.json")

    stage_cfg = {"max_new_tokens": args.max_new_tokens}
    manifest_path = out_path + ".manifest.json"
    inputs = [args.checkpoint, args.dataset]
    if _stage_cached(args, manifest_path, "eval", stage_cfg, inputs):
        return 0

    accuracy = bench_mod.evaluate(
        ckpt, cfg, samples, max_new_tokens=args.max_new_tokens, threads=threads
    )
    payload = {
        "checkpoint": os.path.basename(args.checkpoint),
        "dataset": os.path.basename(args.dataset),
        "n": len(samples),
        "accuracy": accuracy,
    }
    with open(out_path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    manifest_mod.write_manifest(manifest_path, "eval", stage_cfg, inputs, [out_path])
    print(f"[eval] accuracy {accuracy:.4f} on {len(samples)} samples -> {out_path}")
    return 0


def cmd_observe(args) -> int:
    config = _load_run_config(args.config)
    outdir = _outdir(args, config)
    metric = str(_setting(args, config, "metric", "cosine"))
    sigma = float(_setting(args, config, "sigma", 1.0))
    if metric == "rbf" and sigma <= 0:
        raise ValidationError(f"sigma must be > 0, got {sigma}")
    inputs = _require_files(*args.reps)

    intra_path = os.path.join(outdir, "observation_adjacent.csv")
    inter_path = os.path.join(outdir, "observation_intermodel.csv")
    stage_cfg = {"metric": metric, "sigma": sigma, "export_raw": bool(args.export_raw)}
    manifest_path = os.path.join(outdir, "observe.manifest.json")
    if _stage_cached(args, manifest_path, "observe", stage_cfg, inputs):
        return 0

    reps_by_model = {}
    for path in args.reps:
        reps = load_representations(path)
        reps_by_model[reps.model_id] = reps
    curves = bench_mod.observation_curves(reps_by_model, metric=metric, sigma=sigma)
    bench_mod.write_observation_csv(curves, intra_path, inter_path)
    outputs = [intra_path, inter_path]
    if args.export_raw:
        for mid, reps in reps_by_model.items():
            raw_path = os.path.join(outdir, f"raw_vectors.{mid}.csv")
            bench_mod.write_raw_vectors_csv(reps, raw_path)
            outputs.append(raw_path)
    if _figures_enabled(args):
        from .plots import render_observation

        fig_intra = os.path.join(outdir, "observation_adjacent.png")
        fig_inter = os.path.join(outdir, "observation_intermodel.png")
        render_observation(curves, fig_intra, fig_inter)
        outputs.extend([fig_intra, fig_inter])
    manifest_mod.write_manifest(manifest_path, "observe", stage_cfg, inputs, outputs)
    print(f"[observe] curves for {len(reps_by_model)} models -> {intra_path}, {inter_path}")
    return 0


def cmd_run_all(args) -> int:
    config = _load_run_config(args.config)
    outdir = _outdir(args, config)
    seed = int(_setting(args, config, "seed", 0))
    scenario = str(_setting(args, config, "scenario", "merge"))
    method = str(_setting(args, config, "method", "recall"))
    metric = str(_setting(args, config, "metric", "rbf"))
    sigma = float(_setting(args, config, "sigma", 1.0))
    m_per_layer = int(_setting(args, config, "m_per_layer", 20))
    source = str(_setting(args, config, "source", "solver"))
    strength = float(_setting(args, config, "strength", 0.5))
    include_base = bool(_setting(args, config, "include_base", False))
    threads = resolve_threads(args.threads)
    if metric in ("rbf", "mmd") and sigma <= 0:
        raise ValidationError(f"sigma must be > 0, got {sigma}")
    cfg = _model_config(args, config)

    stage_cfg = {
        "seed": seed,
        "scenario": scenario,
        "method": method,
        "metric": metric,
        "sigma": sigma,
        "m_per_layer": m_per_layer,
        "source": source,
        "strength": strength,
        "include_base": include_base,
        "model": json.loads(cfg.to_json()),
    }
    manifest_path = os.path.join(outdir, "run-all.manifest.json")
    if _stage_cached(args, manifest_path, "run-all", stage_cfg, []):
        return 0

    tasks = bench_mod.gen_tasks(seed)
    base = init_checkpoint(cfg, seed, model_id="base")
    if source == "solver":
        experts = [
            bench_mod.gen_solver_expert(cfg, t.name, model_id=f"expert_{t.name}") for t in tasks
        ]
    elif source == "synthetic":
        experts = [
            bench_mod.gen_synthetic_expert(base, t.name, strength, seed, model_id=f"expert_{t.name}")
            for t in tasks
        ]
    else:
        raise ValidationError(f"unknown expert source {source!r}")

    outputs = []
    tasks_dir = os.path.join(outdir, "tasks")
    os.makedirs(tasks_dir, exist_ok=True)
    for task in tasks:
        outputs.extend(bench_mod.save_task(task, tasks_dir).values())
    base_path = os.path.join(outdir, "base.st")
    ckpt_store.save(base, base_path)
    outputs.append(base_path)
    for task, expert in zip(tasks, experts):
        path = os.path.join(outdir, f"expert_{task.name}.st")
        ckpt_store.save(expert, path)
        outputs.append(path)

    if scenario == "sequential":
        report = bench_mod.run_sequential(
            tasks,
            method,
            cfg,
            seed=seed,
            experts=experts,
            base=base,
            include_base=include_base,
            metric=metric,
            sigma=sigma,
            m_per_layer=m_per_layer,
            threads=threads,
        )
        report_json = os.path.join(outdir, "report.json")
        report_csv = os.path.join(outdir, "report.csv")
        with open(report_json, "w") as fh:
            fh.write(report.to_json())
            fh.write("\n")
        bench_mod.write_report_csv(report, report_csv)
        outputs.extend([report_json, report_csv])
        if _figures_enabled(args):
            from .plots import render_retention

            fig = os.path.join(outdir, "retention.png")
            render_retention(report, fig)
            outputs.append(fig)
        manifest_mod.write_manifest(manifest_path, "run-all", stage_cfg, [], outputs)
        print(f"[run-all] sequential/{method}: retention {['%.3f' % r for r in report.retention]}")
        return 0

    if scenario != "merge":
        raise ValidationError(f"unknown scenario {scenario!r}")

    # one-shot pipeline: anchor on the newest task, merge everything, evaluate
    anchor_task = tasks[-1]
    anchor = experts[-1]
    anchor_texts = [s.instruction for s in anchor_task.train]
    anchor_reps = extract(anchor, cfg, anchor_texts, model_id=f"expert_{anchor_task.name}", threads=threads)
    typical = select_typical(
        anchor_reps, m_per_layer=min(m_per_layer, len(anchor_texts)), layers="all", seed=seed
    )
    typical_path = os.path.join(outdir, "typical.json")
    with open(typical_path, "w") as fh:
        fh.write(typical.to_json())
        fh.write("\n")
    outputs.append(typical_path)
    typ_texts = [anchor_texts[int(sid)] for sid in typical.sample_ids]

    participants = [(f"expert_{t.name}", e) for t, e in zip(tasks, experts)]
    if include_base:
        participants.append(("base", base))
    reps_by_model = {}
    for mid, ck in participants:
        reps = extract(ck, cfg, typ_texts, model_id=mid, threads=threads)
        reps_path = os.path.join(outdir, f"reps.{mid}.st")
        save_representations(reps, reps_path)
        outputs.append(reps_path)
        reps_by_model[mid] = reps

    table = build_table(reps_by_model, metric=metric, sigma=sigma)
    table_json = os.path.join(outdir, "similarity.json")
    table_csv = os.path.join(outdir, "similarity.csv")
    with open(table_json, "w") as fh:
        fh.write(table.to_json())
        fh.write("\n")
    write_table_csv(table, table_csv)
    outputs.extend([table_json, table_csv])

    ckpts = [ck for _, ck in participants]
    if method == "recall":
        plan = recall_weights(table, anchor_model=f"expert_{anchor_task.name}")
        merged = merge(ckpts, plan, cfg=cfg)
    elif method == "uniform":
        merged = uniform_merge(ckpts, cfg=cfg)
        plan = None
    else:
        raise ValidationError(f"run-all merge scenario supports recall or uniform, got {method!r}")
    merged_path = os.path.join(outdir, "merged.st")
    ckpt_store.save(merged, merged_path)
    outputs.append(merged_path)
    if plan is not None:
        plan_path = os.path.join(outdir, "plan.json")
        with open(plan_path, "w") as fh:
            fh.write(plan.to_json())
            fh.write("\n")
        outputs.append(plan_path)

    rows = []
    for task in tasks:
        acc = bench_mod.evaluate(merged, cfg, task.test, threads=threads)
        rows.append((task.name, acc))
    report_csv = os.path.join(outdir, "report.csv")
    with open(report_csv, "w") as fh:
        fh.write("task,accuracy\n")
        for name, acc in rows:
            fh.write(f"{name},{acc!r}\n")
    report_json = os.path.join(outdir, "report.json")
    with open(report_json, "w") as fh:
        json.dump({"method": method, "seed": seed, "accuracies": dict(rows)}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    outputs.extend([report_csv, report_json])
    if _figures_enabled(args):
        from .plots import render_similarity_curves

        fig = os.path.join(outdir, "similarity.png")
        render_similarity_curves(table, fig)
        outputs.append(fig)
    manifest_mod.write_manifest(manifest_path, "run-all", stage_cfg, [], outputs)
    print(f"[run-all] merge/{method}: " + ", ".join(f"{n}={a:.3f}" for n, a in rows))
    return 0


# ------------------------------------------------------------------- parser


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="RunConfig file (TOML or JSON)")
    sub.add_argument("--outdir", help="output directory (default: out)")
    sub.add_argument("--threads", type=int, help="intra-stage thread count (env RECALL_THREADS)")
    sub.add_argument("--cache", action="store_true", help="skip stages whose inputs are unchanged")
    sub.add_argument("--no-figures", action="store_true", help="suppress PNG figure output")
    sub.add_argument("--model-config", dest="model_config", help="model config JSON file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=PROG,
        description="Representation-aligned layer-wise model merging pipeline",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("gen-experts", help="generate tasks, a base model, and expert checkpoints")
    _add_common(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--source", choices=["solver", "synthetic"])
    p.add_argument("--strength", type=float, help="perturbation strength for synthetic experts")
    p.set_defaults(func=cmd_gen_experts)

    p = subs.add_parser("extract", help="extract pooled per-layer representations")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True, help="JSONL file of instruction/output samples")
    p.add_argument("--batch-hint", type=int, default=8)
    p.add_argument("--model-id", help="override the checkpoint's model id")
    p.add_argument("--allow-nonfinite", action="store_true")
    p.add_argument("--out", help="output .st path (default reps.{model_id}.st)")
    p.set_defaults(func=cmd_extract)

    p = subs.add_parser("select-typical", help="k-means typical-sample selection")
    _add_common(p)
    p.add_argument("--reps", required=True, help="representation .st file")
    p.add_argument("--m-per-layer", dest="m_per_layer", type=int)
    p.add_argument("--layers", help="all | last | comma-separated layer indices")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_select_typical)

    p = subs.add_parser("similarity", help="build the layer x model-pair similarity table")
    _add_common(p)
    p.add_argument("--reps", nargs="+", required=True)
    p.add_argument("--typical", help="typical.json restricting the sample set")
    p.add_argument("--metric", choices=["rbf", "cosine", "euclidean", "cka", "mmd"])
    p.add_argument("--sigma", type=float)
    p.add_argument("--cka-uncentered", action="store_true")
    p.add_argument("--out", help="output JSON path (CSV/PNG derive from it)")
    p.set_defaults(func=cmd_similarity)

    p = subs.add_parser("merge", help="merge checkpoints (recall or a baseline)")
    _add_common(p)
    p.add_argument("--method", choices=["recall", "uniform", "task_vector", "dare", "loss_weighted"])
    p.add_argument("--models", nargs="+", help="checkpoints (table order for recall)")
    p.add_argument("--table", help="similarity.json (recall)")
    p.add_argument("--anchor", help="anchor model id (recall)")
    p.add_argument("--no-include-base", action="store_true")
    p.add_argument("--base-id", help="model id excluded by --no-include-base")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--no-euclidean-flip", action="store_true",
                   help="use verbatim normalized distances as merge signal")
    p.add_argument("--base", help="base checkpoint (task_vector, dare)")
    p.add_argument("--experts", nargs="+", help="expert checkpoints (task_vector, dare)")
    p.add_argument("--lambdas", nargs="+", type=float)
    p.add_argument("--drop-rate", dest="drop_rate", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--val", help="validation JSONL (loss_weighted)")
    p.add_argument("--out", help="merged checkpoint path")
    p.set_defaults(func=cmd_merge)

    p = subs.add_parser("eval", help="exact-match accuracy of a checkpoint on a dataset")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--max-new-tokens", dest="max_new_tokens", type=int, default=16)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("observe", help="adjacent-layer and inter-model similarity curves")
    _add_common(p)
    p.add_argument("--reps", nargs="+", required=True)
    p.add_argument("--metric", choices=["cosine", "rbf"])
    p.add_argument("--sigma", type=float)
    p.add_argument("--export-raw", action="store_true", help="also dump raw pooled vectors as CSV")
    p.set_defaults(func=cmd_observe)

    p = subs.add_parser("run-all", help="chain the full pipeline from one seed")
    _add_common(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--scenario", choices=["merge", "sequential"])
    p.add_argument("--method")
    p.add_argument("--metric")
    p.add_argument("--sigma", type=float)
    p.add_argument("--m-per-layer", dest="m_per_layer", type=int)
    p.add_argument("--source", choices=["solver", "synthetic"])
    p.add_argument("--strength", type=float)
    p.add_argument("--include-base", dest="include_base", action="store_const", const=True)
    p.set_defaults(func=cmd_run_all)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return int(args.func(args) or 0)
    except NumericDomainError as exc:
        print(f"{PROG}: numeric-domain error: {exc}", file=sys.stderr)
        return 3
    except (RecallError, FileNotFoundError) as exc:
        print(f"{PROG}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
