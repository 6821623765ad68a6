"""Run manifests: config hash, seed, and input/output file checksums.

Two runs of the same command with identical config and seed must produce
equal manifests; paths are recorded by basename so runs in different
directories stay comparable.
"""

from __future__ import annotations

import hashlib
import json
import os
from typing import Iterable, Mapping


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def sha256_config(config: Mapping) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def build_manifest(command: str, config: Mapping, seed: int,
                   inputs: Iterable[str], outputs: Iterable[str]) -> dict:
    return {
        "command": command,
        "config_sha256": sha256_config(config),
        "seed": seed,
        "inputs": {os.path.basename(str(p)): sha256_file(p) for p in inputs},
        "outputs": {os.path.basename(str(p)): sha256_file(p) for p in outputs},
    }


def write_manifest(path, manifest: Mapping) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_manifest(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
