"""Command-line front end.

Exit codes: 0 success, 1 configuration error, 2 numerical failure.
Numbers are never printed; the written files are the record.
"""
from __future__ import annotations

import argparse
import json
import sys

from .config import OUTPUT_ENV, resolve_output_dir, validate_dict
from .errors import ConfigError, NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="decoherence", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a recipe")
    run.add_argument("recipe")
    run.add_argument("--config", help="JSON configuration file")
    run.add_argument("--out", help=f"output directory (default: ${OUTPUT_ENV}/<recipe> or runs/<recipe>)")
    run.add_argument("--seed", type=int)
    run.add_argument("--jobs", type=int, help="maximum worker processes")
    val = sub.add_parser("validate", help="validate a configuration file")
    val.add_argument("--config", required=True)
    sub.add_parser("list-recipes", help="list registered recipes")
    return p


def _load(path: str | None, recipe: str | None = None):
    doc = {}
    if path:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError([f"cannot read {path}: {exc}"]) from exc
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"invalid JSON in {path}: {exc}"]) from exc
        if not isinstance(doc, dict):
            raise ConfigError(["configuration must be a JSON object"])
    if recipe is not None:
        if doc.get("recipe", recipe) != recipe:
            raise ConfigError([f"recipe: command line names {recipe!r} but the file names {doc['recipe']!r}"])
        doc["recipe"] = recipe
    return doc


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "list-recipes":
            from .recipes import describe_recipes

            for name, text in describe_recipes().items():
                print(f"{name}\t{text}")
            return EXIT_OK
        if args.command == "validate":
            cfg = validate_dict(_load(args.config))
            print(cfg.to_json())
            return EXIT_OK
        doc = _load(args.config, args.recipe)
        if args.seed is not None:
            doc["seed"] = args.seed
        if args.jobs is not None:
            doc["parallelism"] = args.jobs
        cfg = validate_dict(doc)
        from .recipes import run_recipe

        manifest = run_recipe(cfg, resolve_output_dir(cfg, args.out))
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"wrote {len(manifest.artifacts)} files to {manifest.output_dir}")
    if manifest.failures:
        for f in manifest.failures:
            print(f"failed: {json.dumps(f['point'])}: {f['error'].splitlines()[0]}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
