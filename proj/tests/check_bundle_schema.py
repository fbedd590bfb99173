#!/usr/bin/env python3
"""Validates dashboard bundles against data/bundle.schema.json.

usage: check_bundle_schema.py <stindex binary> <data dir> <work dir>

Checks the demo bundle and a bundle exported from the demo run with every
spatial entity removed (no events, so no clusters).
"""
import json
import pathlib
import subprocess
import sys

import jsonschema


def run(*args):
    proc = subprocess.run(list(args), capture_output=True, text=True)
    if proc.returncode != 0:
        sys.exit(f"{' '.join(args)} exited {proc.returncode}\n{proc.stderr}")


def validate(validator, path):
    bundle = json.loads(path.read_text())
    errors = sorted(validator.iter_errors(bundle), key=lambda e: list(e.path))
    for e in errors[:10]:
        print(f"{path}: {'/'.join(map(str, e.path))}: {e.message}")
    return bundle, not errors


def main():
    cli, data, work = sys.argv[1], pathlib.Path(sys.argv[2]), pathlib.Path(sys.argv[3])
    work.mkdir(parents=True, exist_ok=True)
    schema = json.loads((data / "bundle.schema.json").read_text())
    jsonschema.Draft202012Validator.check_schema(schema)
    validator = jsonschema.Draft202012Validator(schema)

    demo = work / "demo"
    run(cli, "demo", "--data-dir", str(data), "--out-dir", str(demo))
    bundle, ok = validate(validator, demo / "bundle.json")
    if ok and not bundle["clusters"]:
        print("demo bundle has no clusters")
        ok = False

    spatial = {d["name"] for d in bundle["schema"]["dimensions"] if d["kind"] == "geocoded_spatial"}
    lines = []
    for line in (demo / "run.jsonl").read_text().splitlines():
        rec = json.loads(line)
        if rec.get("record") == "entity" and rec.get("dimension") in spatial:
            continue
        lines.append(line)
    stripped = work / "no-spatial.jsonl"
    stripped.write_text("".join(l + "\n" for l in lines))
    out = work / "no-spatial-bundle.json"
    run(cli, "export-dashboard", "--run", str(stripped), "--config", str(data / "schemas" / "case_study.yaml"),
        "--out", str(out))
    empty, ok_empty = validate(validator, out)
    if ok_empty and (empty["clusters"] or empty["events"]):
        print("bundle without places still has events or clusters")
        ok_empty = False

    print("demo bundle:", "valid" if ok else "INVALID")
    print("no-spatial bundle:", "valid" if ok_empty else "INVALID")
    return 0 if ok and ok_empty else 1


if __name__ == "__main__":
    sys.exit(main())
