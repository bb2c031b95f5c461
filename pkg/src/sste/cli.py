"""Command-line entry points.

Subcommands mirror the pipeline: data stats/synth, propensity, selfsample,
train, evaluate, and the experiment harness (exp run/grid/table). All
machine output is JSON on stdout; errors go to stderr with exit code 1.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import data as datamod
from . import evaluate as ev
from . import experiment as exp
from . import propensity as prop
from . import selfsample as ss
from .errors import ParseError, SsteError
from .model import Branch, InitSpec, load_checkpoint, save_checkpoint
from .seeding import derive_seed
from .train import EvalConfig, Objective, TrainConfig, fit


def _print_json(payload) -> None:
    print(json.dumps(payload, sort_keys=True, indent=2))


def _load(path, schema, provenance, user_map=None, item_map=None):
    return datamod.load_tsv(
        path,
        datamod.Schema(schema),
        provenance=provenance,
        user_map=user_map,
        item_map=item_map,
    )


def _cmd_data_stats(args) -> int:
    d = _load(args.input, args.schema, datamod.Provenance.BIASED_TRAIN)
    s = datamod.stats(d)
    _print_json(
        {
            "n_feedback": s.n_feedback,
            "pn_ratio_percent": s.pn_ratio_percent,
            "n_users": s.n_users,
            "n_items": s.n_items,
        }
    )
    return 0


def _parse_synth_spec(path) -> datamod.SyntheticSpec:
    types = {f.name: f.type for f in fields(datamod.SyntheticSpec)}
    values = {}
    for line_no, key, text in exp._read_kv_lines(path):
        if key not in types:
            raise ParseError(f"unknown synthetic key {key!r}", line_no)
        is_float = key in ("exposure_bias_strength", "positive_threshold")
        values[key] = float(text) if is_float else int(text)
    return datamod.SyntheticSpec(**values)


def _cmd_data_synth(args) -> int:
    spec = _parse_synth_spec(args.spec)
    train, val, test, relevance = datamod.generate_synthetic(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    datamod.save_tsv(train, out / "train.tsv")
    datamod.save_tsv(val, out / "val.tsv")
    datamod.save_tsv(test, out / "test.tsv")
    np.save(out / "relevance.npy", relevance)
    _print_json(
        {
            "out_dir": str(out),
            "train": len(train),
            "val": len(val),
            "test": len(test),
        }
    )
    return 0


def _cmd_propensity(args) -> int:
    d = _load(args.input, args.schema, datamod.Provenance.BIASED_TRAIN)
    table = prop.estimate_popularity_propensity(d, gamma=args.gamma, floor=args.floor)
    inverse = {}
    if d.item_id_map is not None:
        inverse = {dense: orig for orig, dense in d.item_id_map.items()}
    with open(args.out, "w", encoding="utf-8") as handle:
        for dense, value in enumerate(table.per_item_propensity):
            handle.write(f"{inverse.get(dense, dense)}\t{float(value)!r}\n")
    _print_json({"out": args.out, "n_items": d.n_items})
    return 0


def _cmd_selfsample(args) -> int:
    d = _load(args.input, args.schema, datamod.Provenance.BIASED_TRAIN)
    table = prop.estimate_popularity_propensity(d, gamma=args.gamma, floor=args.floor)
    probs = prop.truncate(prop.sampling_probabilities(d, table), args.epsilon)
    subset = ss.draw_auxiliary(d, probs, args.seed)
    datamod.save_tsv(subset, args.out)
    _print_json(
        {
            "out": args.out,
            "source_size": len(d),
            "subset_size": len(subset),
            "expected_size": float(probs.per_instance_prob.sum()),
        }
    )
    return 0


def _epsilons(text: str) -> tuple[float, ...]:
    text = text.strip()
    if not text:
        return ()
    return tuple(float(part) for part in text.split(","))


def _cmd_train(args) -> int:
    objective = Objective(args.objective)
    train_set = _load(args.train, args.schema, datamod.Provenance.BIASED_TRAIN)
    val_set = _load(
        args.val, args.schema, datamod.Provenance.BIASED_VALIDATION,
        user_map=train_set.user_id_map, item_map=train_set.item_id_map,
    )
    eps_train = _epsilons(args.epsilon_train)
    eps_val = _epsilons(args.epsilon_val)
    table = None
    if objective is not Objective.NAIVE or eps_val:
        table = prop.estimate_popularity_propensity(
            train_set, gamma=args.gamma, floor=args.floor
        )
    aux_seed = derive_seed(args.seed, "selfsample")
    a_tr = (
        ss.train_family(train_set, table, eps_train, aux_seed, epoch=0)
        if objective is Objective.SSTE
        else []
    )
    a_val = ss.val_family(val_set, table, eps_val, aux_seed) if eps_val else []

    cfg = TrainConfig(
        learning_rate=args.lr,
        l2_lambda=args.l2,
        batch_size=args.batch,
        max_epochs=args.max_epochs,
        patience=args.patience,
        objective=objective,
        seed=args.seed,
    )
    log_handle = open(args.log, "w", encoding="utf-8") if args.log else sys.stdout

    def on_epoch(epoch, breakdown, report):
        line = {
            "epoch": epoch,
            "loss": breakdown.to_dict(),
            "val_score": report.score_on_val,
            "aux_scores": list(report.scores_on_aux),
            "alpha": report.alpha,
            "modified_score": report.modified_score,
        }
        log_handle.write(json.dumps(line, sort_keys=True) + "\n")

    try:
        model, state = fit(
            train_set, val_set, (a_tr, a_val), cfg, EvalConfig(),
            embedding_dim=args.embedding_dim,
            init_spec=InitSpec(scale=args.init_scale, seed=derive_seed(args.seed, "init")),
            propensity=table,
            on_epoch=on_epoch,
        )
    finally:
        if args.log:
            log_handle.close()

    save_checkpoint(model, args.checkpoint_out)
    sidecar = {
        "users": {str(orig): dense for orig, dense in (train_set.user_id_map or {}).items()},
        "items": {str(orig): dense for orig, dense in (train_set.item_id_map or {}).items()},
    }
    Path(str(args.checkpoint_out) + ".vocab.json").write_text(
        json.dumps(sidecar, sort_keys=True), encoding="utf-8"
    )
    _print_json(
        {
            "checkpoint": args.checkpoint_out,
            "epochs_run": state.epoch,
            "best_epoch": state.best_epoch,
            "best_modified_score": state.best_score,
        }
    )
    return 0


def _checkpoint_maps(checkpoint_path, model):
    sidecar = Path(str(checkpoint_path) + ".vocab.json")
    if sidecar.exists():
        raw = json.loads(sidecar.read_text(encoding="utf-8"))
        users = {int(k): v for k, v in raw["users"].items()}
        items = {int(k): v for k, v in raw["items"].items()}
        if users and items:
            return users, items
    return (
        {i: i for i in range(model.n_users)},
        {i: i for i in range(model.n_items)},
    )


def _cmd_evaluate(args) -> int:
    model = load_checkpoint(args.checkpoint)
    user_map, item_map = _checkpoint_maps(args.checkpoint, model)
    test_set = _load(
        args.test, args.schema, datamod.Provenance.UNIFORM_TEST,
        user_map=user_map, item_map=item_map,
    )
    requested = [m.strip() for m in args.metrics.split(",") if m.strip()]
    ks = sorted(
        {int(m.split("@")[1]) for m in requested if m.startswith(("p@", "r@"))}
    )
    ndcg_ks = [int(m.split("@")[1]) for m in requested if m.startswith("ndcg@")]

    def score_fn(users, items):
        return model.predict(Branch.HAT, users, items)

    out = {}
    if "auc" in requested:
        out["auc"] = ev.auc_scores(
            score_fn(test_set.users, test_set.items), test_set.labels
        )
    if ks or ndcg_ks:
        exclude = None
        if args.exclude_train:
            exclude = _load(
                args.exclude_train, args.schema, datamod.Provenance.BIASED_TRAIN,
                user_map=user_map, item_map=item_map,
            )
        lists = ev.build_ranked_lists(score_fn, test_set, exclude=exclude)
        ranking = ev.topk_metrics(
            lists, ks=ks or (5, 10), ndcg_k=ndcg_ks[0] if ndcg_ks else 50
        )
        for name, value in ranking.items():
            if name in requested:
                out[name] = value

    if args.val:
        val_set = _load(
            args.val, args.schema, datamod.Provenance.BIASED_VALIDATION,
            user_map=user_map, item_map=item_map,
        )
        score_val = ev.auc_scores(
            score_fn(val_set.users, val_set.items), val_set.labels
        )
        scores_aux = []
        for aux_path in args.aux_val or []:
            # Files no longer carry their draw seed, so a reloaded subset is
            # treated as plain validation-side data.
            aux_set = _load(
                aux_path, "label", datamod.Provenance.BIASED_VALIDATION,
                user_map=user_map, item_map=item_map,
            )
            scores_aux.append(
                ev.auc_scores(score_fn(aux_set.users, aux_set.items), aux_set.labels)
            )
        a = ev.alpha(score_val, scores_aux)
        out["val_auc"] = score_val
        out["aux_auc"] = scores_aux
        out["alpha"] = a
        out["modified_score"] = ev.modified_score(score_val, a)
    _print_json(out)
    return 0


def _cmd_exp_run(args) -> int:
    cfg = exp.load_config(args.config)
    result = exp.run_one(cfg)
    _print_json(
        {
            "run_id": result.run_id,
            "run_dir": result.run_dir,
            "status": result.status,
            "stage": result.stage,
            "error": result.error,
        }
    )
    return 0 if result.status == "ok" else 1


def _cmd_exp_grid(args) -> int:
    base = exp.load_config(args.config)
    grid = exp.load_grid(args.grid)
    result = exp.run_grid(grid, base, workers=args.workers)
    _print_json(
        {
            "best_run_id": result.best_run_id,
            "leaderboard": result.leaderboard_path,
            "n_rows": len(result.rows),
        }
    )
    return 0


def _cmd_exp_table(args) -> int:
    text, rows = exp.make_table(args.runs)
    print(text, end="")
    if args.out:
        lines = ["\t".join(["label", "run_id", *exp._TABLE_COLUMNS])]
        for row in rows:
            cells = [row["label"], row["run_id"]]
            cells += [f"{row['metrics'][c]:.6f}" for c in exp._TABLE_COLUMNS]
            lines.append("\t".join(cells))
        Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 0


def _add_schema(parser) -> None:
    parser.add_argument("--schema", choices=["rating", "label"], default="rating")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sste")
    sub = parser.add_subparsers(dest="command", required=True)

    p_data = sub.add_parser("data", help="dataset utilities")
    data_sub = p_data.add_subparsers(dest="data_command", required=True)
    p_stats = data_sub.add_parser("stats", help="counts and P/N ratio of a TSV")
    p_stats.add_argument("--input", required=True)
    _add_schema(p_stats)
    p_stats.set_defaults(func=_cmd_data_stats)
    p_synth = data_sub.add_parser("synth", help="generate a synthetic dataset triple")
    p_synth.add_argument("--spec", required=True, help="key=value spec file")
    p_synth.add_argument("--out-dir", default=".")
    p_synth.set_defaults(func=_cmd_data_synth)

    p_prop = sub.add_parser("propensity", help="estimate per-item propensities")
    p_prop.add_argument("--input", required=True)
    p_prop.add_argument("--gamma", type=float, default=prop.DEFAULT_GAMMA)
    p_prop.add_argument("--floor", type=float, default=prop.DEFAULT_FLOOR)
    p_prop.add_argument("--out", required=True)
    _add_schema(p_prop)
    p_prop.set_defaults(func=_cmd_propensity)

    p_ss = sub.add_parser("selfsample", help="draw one auxiliary subset")
    p_ss.add_argument("--input", required=True)
    p_ss.add_argument("--gamma", type=float, default=prop.DEFAULT_GAMMA)
    p_ss.add_argument("--floor", type=float, default=prop.DEFAULT_FLOOR)
    p_ss.add_argument("--epsilon", type=float, required=True)
    p_ss.add_argument("--seed", type=int, required=True)
    p_ss.add_argument("--out", required=True)
    _add_schema(p_ss)
    p_ss.set_defaults(func=_cmd_selfsample)

    p_train = sub.add_parser("train", help="train one model")
    p_train.add_argument(
        "--objective", choices=[o.value for o in Objective], required=True
    )
    p_train.add_argument("--train", required=True)
    p_train.add_argument("--val", required=True)
    p_train.add_argument("--gamma", type=float, default=prop.DEFAULT_GAMMA)
    p_train.add_argument("--floor", type=float, default=prop.DEFAULT_FLOOR)
    p_train.add_argument("--epsilon-train", default="", help="comma-separated")
    p_train.add_argument("--epsilon-val", default="", help="comma-separated")
    p_train.add_argument("--lr", type=float, default=0.01)
    p_train.add_argument("--l2", type=float, default=0.0)
    p_train.add_argument("--batch", type=int, default=512)
    p_train.add_argument("--max-epochs", type=int, default=100)
    p_train.add_argument("--patience", type=int, default=5)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--embedding-dim", type=int, default=10)
    p_train.add_argument("--init-scale", type=float, default=0.01)
    p_train.add_argument("--checkpoint-out", required=True)
    p_train.add_argument("--log", default="", help="epoch JSONL path (default stdout)")
    _add_schema(p_train)
    p_train.set_defaults(func=_cmd_train)

    p_eval = sub.add_parser("evaluate", help="score a checkpoint on a test TSV")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--test", required=True)
    p_eval.add_argument("--metrics", default="auc,p@5,p@10,r@5,r@10,ndcg@50")
    p_eval.add_argument("--exclude-train", default="", help="TSV of training positives")
    p_eval.add_argument("--val", default="", help="validation TSV for alpha scoring")
    p_eval.add_argument("--aux-val", nargs="*", help="auxiliary validation TSVs")
    _add_schema(p_eval)
    p_eval.set_defaults(func=_cmd_evaluate)

    p_exp = sub.add_parser("exp", help="experiment harness")
    exp_sub = p_exp.add_subparsers(dest="exp_command", required=True)
    p_run = exp_sub.add_parser("run", help="run one config")
    p_run.add_argument("--config", required=True)
    p_run.set_defaults(func=_cmd_exp_run)
    p_grid = exp_sub.add_parser("grid", help="grid search over a config")
    p_grid.add_argument("--config", required=True)
    p_grid.add_argument("--grid", required=True)
    p_grid.add_argument("--workers", type=int, default=1)
    p_grid.set_defaults(func=_cmd_exp_grid)
    p_table = exp_sub.add_parser("table", help="comparison table over run dirs")
    p_table.add_argument("--runs", nargs="+", required=True)
    p_table.add_argument("--out", default="", help="also write a TSV here")
    p_table.set_defaults(func=_cmd_exp_table)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SsteError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
