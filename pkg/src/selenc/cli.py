"""Command line entry point: ``selenc <subcommand> ...``.

Options can also come from a JSON file given with ``--config``; explicit
flags win over the file, and the file wins over built-in defaults. Every
subcommand reports its effective seed on stderr. Failures print a single
JSON line on stderr and exit with status 1 (usage errors exit 2).
"""

from __future__ import annotations

import argparse
import json
import sys


from . import analysis, attacks, formats
from .data import desk_splits, make_dataset
from .dprm import DEFAULT_RHO, encrypt_model
from .errors import GrantError, SelencError
from .fsprng import derive_keys, new_key
from .nn import TrainConfig, desk_model, evaluate, train
from .permissions import assign, decrypt_with_permission, parse, serialize, to_json
from .pss import SelectConfig, dominated_partition, fit_importance

DEFAULTS = {
    "seed": 0,
    "n": 2000,
    "split": "train",
    "epochs": 30,
    "step_size": 0.01,
    "batch_size": 32,
    "momentum": 0.9,
    "fraction": 0.1,
    "lam": 1e-2,
    "select_epochs": 3,
    "select_step": 0.05,
    "M": 5,
    "rho": DEFAULT_RHO,
    "key_seed": None,
    "level": None,
    "layers": None,
    "kind": "wavelet:haar",
    "window": 3,
    "levels": 3,
    "attack_epochs": 10,
    "data_fraction": 0.10,
    "seeds": 1,
    "goal": None,
    "baseline": float("nan"),
    "what": "hierarchy",
    "strategies": "pss,random,mean,descending,ascending",
    "fractions": "0.02,0.05,0.1,0.2",
    "trials": 1,
}
# per-subcommand overrides of DEFAULTS
COMMAND_DEFAULTS = {
    "gen-data": {"seed": 42},  # the desk data seed
    "analyze": {"M": 1},  # curves encrypt a single tier
}


class UsageError(Exception):
    pass


def _level(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("levels are 1..M")
    return v


def _layers(text):
    return [int(x) for x in str(text).split(",") if x.strip()]


def build_parser():
    p = argparse.ArgumentParser(prog="selenc", description="Selective encryption of small CNN models.")
    p.add_argument("--config", help="JSON file with option values")
    sub = p.add_subparsers(dest="command", required=True)

    def cmd(name, help):
        s = sub.add_parser(name, help=help, argument_default=None)
        s.add_argument("--seed", type=int)
        return s

    s = cmd("gen-data", "write a synthetic dataset (SDAT)")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int)
    s.add_argument("--split", choices=["train", "test", "surrogate"])

    s = cmd("train", "train the desk architecture on a dataset (SENC)")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int)
    s.add_argument("--step-size", type=float)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--momentum", type=float)

    s = cmd("select", "fit importance maps for the considered layers (SIMP)")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--lam", type=float)
    s.add_argument("--select-epochs", type=int)
    s.add_argument("--select-step", type=float)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--layers", type=_layers, help="comma separated layer indices")

    s = cmd("protect", "encrypt the dominated weights (SENC + SBND)")
    s.add_argument("--model", required=True)
    s.add_argument("--importance", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--bundle", required=True)
    s.add_argument("--fraction", type=float)
    s.add_argument("--M", type=int)
    s.add_argument("--rho", type=float)
    s.add_argument("--key-seed", type=int, help="derive keys deterministically (otherwise OS entropy)")

    s = cmd("assign", "issue a permission of a given level (SPRM)")
    s.add_argument("--bundle", required=True)
    s.add_argument("--level", type=_level, required=True)
    s.add_argument("--out")
    s.add_argument("--json", action="store_true", help="print the permission as JSON")
    s.add_argument("--unsafe-show-keys", action="store_true", help="include raw keys in the JSON")

    s = cmd("decrypt", "decrypt a protected model with a permission")
    s.add_argument("--model", required=True)
    s.add_argument("--permission")
    s.add_argument("--out", required=True)

    s = cmd("eval", "score a model on a dataset")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)

    s = cmd("attack", "run an attack and print one JSON report per seed")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True, help="evaluation set")
    s.add_argument("--kind", choices=attacks.ATTACK_KINDS)
    s.add_argument("--goal", type=float, help="attacking goal; or give --bundle to compute it")
    s.add_argument("--bundle")
    s.add_argument("--baseline", type=float, help="pretrained score, copied into the report")
    s.add_argument("--train-data", help="training set the attacker's slice is drawn from")
    s.add_argument("--surrogate-model")
    s.add_argument("--surrogate-data")
    s.add_argument("--window", type=int)
    s.add_argument("--levels", type=int)
    s.add_argument("--attack-epochs", type=int)
    s.add_argument("--data-fraction", type=float)
    s.add_argument("--seeds", type=int, help="number of seeds, starting at --seed")

    s = cmd("analyze", "imperceptibility report, degradation curve or hierarchy table")
    s.add_argument("--what", choices=["imperceptibility", "curve", "hierarchy"])
    s.add_argument("--model", required=True)
    s.add_argument("--data")
    s.add_argument("--bundle")
    s.add_argument("--importance")
    s.add_argument("--strategies")
    s.add_argument("--fractions")
    s.add_argument("--trials", type=int)
    s.add_argument("--M", type=int)
    s.add_argument("--rho", type=float)
    s.add_argument("--out", help="write the table or report here instead of stdout")
    return p


def resolve(args):
    """Fill unset options from the config file, then from DEFAULTS."""
    config = {}
    if args.config:
        with open(args.config) as fh:
            config = json.load(fh)
        if not isinstance(config, dict):
            raise UsageError("config file must hold a JSON object")
    defaults = {**DEFAULTS, **COMMAND_DEFAULTS.get(args.command, {})}
    for key, default in defaults.items():
        if getattr(args, key, "absent") is None:
            setattr(args, key, config.get(key, config.get(key.replace("_", "-"), default)))
    return args


def _out(text, path=None):
    if path:
        with open(path, "w") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")
    else:
        print(text)


# --- subcommands ------------------------------------------------------------


def cmd_gen_data(a):
    if a.split == "surrogate":
        ds = make_dataset(a.n, seed=a.seed, template_seed=a.seed)
    else:
        tr, te = desk_splits(seed=a.seed, n_train=a.n, n_test=a.n)
        ds = tr if a.split == "train" else te
    formats.save_bytes(a.out, formats.dataset_to_bytes(ds))


def cmd_train(a):
    data = formats.dataset_from_bytes(formats.load_bytes(a.data))
    n_classes = int(data.targets.max()) + 1
    cfg = TrainConfig(a.epochs, a.step_size, a.batch_size, a.seed, a.momentum)
    model = train(desk_model(a.seed, data.inputs.shape[1:], n_classes), data, cfg)
    formats.save_model(model, a.out)
    print(json.dumps({"train_score": evaluate(model, data)}))


def cmd_select(a):
    model = formats.load_model(a.model)
    data = formats.dataset_from_bytes(formats.load_bytes(a.data))
    cfg = SelectConfig(lam=a.lam, epochs=a.select_epochs, step_size=a.select_step, batch_size=a.batch_size, seed=a.seed)
    layers = a.layers if a.layers is not None else model.considered_layers
    maps = {l: fit_importance(model, l, data, cfg) for l in layers}
    formats.save_bytes(a.out, formats.importance_to_bytes(maps))


def cmd_protect(a):
    model = formats.load_model(a.model)
    importance = formats.importance_from_bytes(formats.load_bytes(a.importance))
    part = dominated_partition(model, importance, SelectConfig(fraction=a.fraction), a.M)
    keys = derive_keys(a.M, a.key_seed) if a.key_seed is not None else [new_key() for _ in range(a.M)]
    protected, bundle = encrypt_model(model, part, keys, a.rho)
    formats.save_model(protected, a.out)
    formats.save_bytes(a.bundle, formats.bundle_to_bytes(bundle), private=True)


def cmd_assign(a):
    bundle = formats.bundle_from_bytes(formats.load_bytes(a.bundle))
    if a.level > bundle.M:
        raise UsageError(f"--level must be in 1..{bundle.M}")
    perm = assign(bundle, a.level)
    if a.out:
        formats.save_bytes(a.out, serialize(perm), private=True)
    if a.json or not a.out:
        print(to_json(perm, show_keys=a.unsafe_show_keys))


def cmd_decrypt(a):
    if not a.permission:
        raise GrantError("no permission given; refusing to decrypt")
    protected = formats.load_model(a.model)
    perm = parse(formats.load_bytes(a.permission))
    formats.save_model(decrypt_with_permission(protected, perm), a.out)


def cmd_eval(a):
    model = formats.load_model(a.model)
    data = formats.dataset_from_bytes(formats.load_bytes(a.data))
    print(json.dumps({"score": evaluate(model, data), "n": len(data)}))


def _load_data(path):
    return formats.dataset_from_bytes(formats.load_bytes(path)) if path else None


def cmd_attack(a):
    protected = formats.load_model(a.model)
    data = _load_data(a.data)
    goal = a.goal
    if goal is None:
        if not a.bundle:
            raise UsageError("attack needs --goal or --bundle")
        bundle = formats.bundle_from_bytes(formats.load_bytes(a.bundle))
        goal = evaluate(decrypt_with_permission(protected, assign(bundle, 1)), data)
    surrogate = None
    if a.kind == "retrain:transfer":
        if not (a.surrogate_model and a.surrogate_data):
            raise UsageError("transfer attack needs --surrogate-model and --surrogate-data")
        surrogate = (formats.load_model(a.surrogate_model), _load_data(a.surrogate_data))
    train_data = _load_data(a.train_data)
    for seed in range(a.seed, a.seed + a.seeds):
        spec = attacks.AttackSpec(a.kind, a.window, a.levels, a.attack_epochs, data_fraction=a.data_fraction, seed=seed)
        report = attacks.run_attack(spec, protected, data, goal, a.baseline, train_data, surrogate)
        print(report.to_json())


def cmd_analyze(a):
    model = formats.load_model(a.model)
    data = _load_data(a.data)
    bundle = formats.bundle_from_bytes(formats.load_bytes(a.bundle)) if a.bundle else None
    if a.what == "imperceptibility":
        if bundle is None:
            raise UsageError("imperceptibility needs --bundle")
        _out(analysis.imperceptibility_report(model, bundle).to_json(), a.out)
    elif a.what == "hierarchy":
        if bundle is None or data is None:
            raise UsageError("hierarchy needs --bundle and --data")
        scores = analysis.hierarchy_table(model, bundle, bundle.partition, data)
        _out(json.dumps({"levels": list(range(len(scores))), "scores": scores}), a.out)
    else:
        if data is None:
            raise UsageError("curve needs --data")
        importance = formats.importance_from_bytes(formats.load_bytes(a.importance)) if a.importance else None
        strategies = [s for s in a.strategies.split(",") if s]
        if "pss" in strategies and importance is None:
            raise UsageError("the pss strategy needs --importance")
        fractions = [float(f) for f in str(a.fractions).split(",") if f]
        table = analysis.degradation_curve(
            model, data, strategies, fractions, a.trials, importance, M=a.M, rho=a.rho, seed=a.seed
        )
        _out(table.to_csv().rstrip("\n"), a.out)


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "select": cmd_select,
    "protect": cmd_protect,
    "assign": cmd_assign,
    "decrypt": cmd_decrypt,
    "eval": cmd_eval,
    "attack": cmd_attack,
    "analyze": cmd_analyze,
}


def _fail(kind, module, message, code):
    print(json.dumps({"error": kind, "module": module, "message": message}), file=sys.stderr)
    return code


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        resolve(args)
        extra = f" key_seed={args.key_seed}" if args.command == "protect" else ""
        print(f"seed={args.seed}{extra}", file=sys.stderr)
        COMMANDS[args.command](args)
    except UsageError as e:
        return _fail("UsageError", "cli", str(e), 2)
    except SelencError as e:
        return _fail(type(e).__name__, e.module, str(e), 1)
    except (OSError, ValueError, json.JSONDecodeError) as e:
        return _fail(type(e).__name__, "cli", str(e), 1)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
