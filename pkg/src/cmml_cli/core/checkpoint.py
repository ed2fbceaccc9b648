"""Versioned checkpoint archives of named parameter arrays.

An archive is a zip file with fixed entry timestamps holding ``manifest.json``
and one plain-text file per array (row-major values, one ``repr`` float per
line), so loading and re-saving reproduces the archive byte for byte.
"""

import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from cmml_cli.core.baseline import init_baseline_bundle
from cmml_cli.data.interactions import FeatureSchema
from cmml_cli.engine.optim import AdamState
from cmml_cli.models.backbone import BackboneConfig
from cmml_cli.models.context import EncoderConfig, GeneratorConfig
from cmml_cli.models.modulation import ModulationConfig
from cmml_cli.models.network import ModelBundle, NetworkConfig, init_bundle
from cmml_cli.utils.exceptions import CheckpointError

FORMAT_VERSION = 1
FIXED_DATE = (1980, 1, 1, 0, 0, 0)


@dataclass
class Checkpoint:
    bundle: ModelBundle
    state: Optional[AdamState] = None
    epoch: int = 0
    method: str = "cmml"
    config: Dict[str, Any] = field(default_factory=dict)


def network_to_dict(config: NetworkConfig) -> Dict[str, Any]:
    return {
        "schema": {
            "user_vocab": dict(config.schema.user_vocab),
            "item_vocab": dict(config.schema.item_vocab),
            "embedding_dims": dict(config.schema.embedding_dims),
        },
        "backbone": config.backbone.model_dump(mode="json"),
        "encoder": config.encoder.model_dump(mode="json"),
        "generator": config.generator.model_dump(mode="json"),
        "modulation": config.modulation.model_dump(mode="json"),
    }


def network_from_dict(data: Dict[str, Any]) -> NetworkConfig:
    try:
        return NetworkConfig(
            schema=FeatureSchema(**data["schema"]),
            backbone=BackboneConfig(**data["backbone"]),
            encoder=EncoderConfig(**data["encoder"]),
            generator=GeneratorConfig(**data["generator"]),
            modulation=ModulationConfig(**data["modulation"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"Checkpoint network section is invalid: {e}")


def _encode(values: np.ndarray) -> bytes:
    return ("\n".join(repr(float(v)) for v in np.asarray(values).ravel()) + "\n").encode("utf-8")


def _decode(raw: bytes, shape) -> np.ndarray:
    try:
        values = np.array([float(line) for line in raw.decode("utf-8").split()], dtype=np.float64)
        return values.reshape(shape)
    except ValueError as e:
        raise CheckpointError(f"Corrupt array entry: {e}")


def _read_moments(
    archive: zipfile.ZipFile, which: str, shapes: Dict[str, Any]
) -> Dict[str, np.ndarray]:
    return {n: _decode(archive.read(f"optimizer/{which}/{n}.txt"), s) for n, s in shapes.items()}


def _write(archive: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=FIXED_DATE)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    archive.writestr(info, payload)


def save_checkpoint(path: Path, checkpoint: Checkpoint) -> Path:
    bundle = checkpoint.bundle
    state = checkpoint.state
    manifest: Dict[str, Any] = {
        "format_version": FORMAT_VERSION,
        "epoch": checkpoint.epoch,
        "method": checkpoint.method,
        "config": checkpoint.config,
        "network": network_to_dict(bundle.config),
        "frozen": sorted(bundle.frozen),
        "parameters": [
            {"name": name, "shape": list(values.shape)} for name, values in bundle.params.items()
        ],
        "optimizer": None,
    }
    if state is not None:
        manifest["optimizer"] = {
            "lr": state.lr,
            "beta1": state.beta1,
            "beta2": state.beta2,
            "epsilon": state.epsilon,
            "t": state.t,
            "tracked": sorted(state.m),
        }

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w") as archive:
        encoded = json.dumps(manifest, sort_keys=True, indent=2).encode("utf-8")
        _write(archive, "manifest.json", encoded)
        for name, values in bundle.params.items():
            _write(archive, f"params/{name}.txt", _encode(values))
        if state is not None:
            for name in sorted(state.m):
                _write(archive, f"optimizer/m/{name}.txt", _encode(state.m[name]))
                _write(archive, f"optimizer/v/{name}.txt", _encode(state.v[name]))
    return path


def load_checkpoint(path: Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"Checkpoint not found: {path}; run 'train' first")
    try:
        with zipfile.ZipFile(path, "r") as archive:
            manifest = json.loads(archive.read("manifest.json").decode("utf-8"))
            if manifest.get("format_version") != FORMAT_VERSION:
                raise CheckpointError(
                    f"Unsupported checkpoint format {manifest.get('format_version')} in {path}"
                )
            params = {
                entry["name"]: _decode(archive.read(f"params/{entry['name']}.txt"), entry["shape"])
                for entry in manifest["parameters"]
            }
            state = None
            if manifest["optimizer"] is not None:
                opt = manifest["optimizer"]
                shapes = {name: params[name].shape for name in opt["tracked"]}
                state = AdamState(
                    lr=opt["lr"],
                    beta1=opt["beta1"],
                    beta2=opt["beta2"],
                    epsilon=opt["epsilon"],
                    t=opt["t"],
                    m=_read_moments(archive, "m", shapes),
                    v=_read_moments(archive, "v", shapes),
                )
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}")

    network = network_from_dict(manifest["network"])
    method = manifest.get("method", "cmml")
    reference = init_baseline_bundle(network) if method == "baseline" else init_bundle(network)
    expected = {n: v.shape for n, v in reference.params.items()}
    stored = {n: v.shape for n, v in params.items()}
    if expected != stored:
        differing = sorted(set(expected) ^ set(stored)) or [
            n for n in expected if expected[n] != stored[n]
        ]
        raise CheckpointError(f"Checkpoint parameters do not match the network: {differing[:3]}")

    bundle = ModelBundle(params, network, frozenset(manifest["frozen"]))
    return Checkpoint(
        bundle=bundle,
        state=state,
        epoch=manifest["epoch"],
        method=method,
        config=manifest["config"],
    )
