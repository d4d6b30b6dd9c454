"""Plain-text parameter checkpoints.

Layout (UTF-8, ``\\n`` line endings)::

    DLOM-CHECKPOINT 1
    kind <dlom|gated_fusion|pooling_head>
    scale <k_max> <offset>
    n_features <int>
    params <JSON of estimator get_params(), keys sorted>
    lambda_logit <float>
    gate_b <float>                      # gated_fusion only
    token_ids <id> <id> ...             # not for pooling_head
    array <name> <dim> [<dim>]          # then one line per row
    <float> <float> ...
    end

Floats are written with ``repr`` so they round-trip exactly. Arrays are
row-major; a vector is written as a single row.
"""

from __future__ import annotations

import json

import numpy as np

from ._validation import ValidationError
from .backbone import BranchEncoder, PoolingHead
from .estimators import DLOMClassifier, GatedFusionDLOMClassifier, PoolingHeadClassifier
from .fusion import GateParameters
from .objectives import ObjectiveConfig
from .score_space import ScoreScale, ScoreTokenSet

MAGIC = "DLOM-CHECKPOINT"
VERSION = 1

_KINDS = {
    DLOMClassifier: "dlom",
    GatedFusionDLOMClassifier: "gated_fusion",
    PoolingHeadClassifier: "pooling_head",
}
_CLASSES = {v: k for k, v in _KINDS.items()}


def _arrays(est) -> dict[str, np.ndarray]:
    if isinstance(est, GatedFusionDLOMClassifier):
        out = {f"text.{k}": v for k, v in est.text_encoder_.params().items()}
        out.update({f"mm.{k}": v for k, v in est.mm_encoder_.params().items()})
        out["gate.w"] = est.gate_.w
        return out
    if isinstance(est, DLOMClassifier):
        return est.encoder_.params()
    return est.head_.params()


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def dumps(est) -> str:
    kind = _KINDS[type(est)]
    lines = [f"{MAGIC} {VERSION}", f"kind {kind}",
             f"scale {est.scale_.k_max} {est.scale_.offset}",
             f"n_features {est.n_features_in_}",
             "params " + json.dumps(est.get_params(), sort_keys=True),
             f"lambda_logit {est.lambda_logit_!r}"]
    if kind == "gated_fusion":
        lines.append(f"gate_b {est.gate_.b!r}")
    if kind != "pooling_head":
        lines.append("token_ids " + " ".join(str(t) for t in est.tokens_.token_ids))
    for name, arr in _arrays(est).items():
        lines.append(f"array {name} " + " ".join(str(d) for d in arr.shape))
        for row in np.atleast_2d(arr):
            lines.append(_fmt(row))
    lines.append("end")
    return "\n".join(lines) + "\n"


def save_checkpoint(est, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(est))


def loads(text: str):
    lines = text.splitlines()
    head = lines[0].split() if lines else []
    if len(head) != 2 or head[0] != MAGIC:
        raise ValidationError("not a DLOM checkpoint")
    if int(head[1]) != VERSION:
        raise ValidationError(f"unsupported checkpoint version {head[1]}")
    fields: dict[str, str] = {}
    arrays: dict[str, np.ndarray] = {}
    i = 1
    while i < len(lines) and lines[i] != "end":
        key, _, rest = lines[i].partition(" ")
        if key == "array":
            name, *dims = rest.split()
            shape = tuple(int(d) for d in dims)
            n_rows = shape[0] if len(shape) == 2 else 1
            rows = [[float(v) for v in lines[i + 1 + r].split()] for r in range(n_rows)]
            arrays[name] = np.array(rows, dtype=np.float64).reshape(shape)
            i += 1 + n_rows
            continue
        fields[key] = rest
        i += 1
    if i >= len(lines):
        raise ValidationError("truncated checkpoint: missing 'end'")

    kind = fields["kind"]
    est = _CLASSES[kind](**json.loads(fields["params"]))
    k_max, offset = (int(v) for v in fields["scale"].split())
    est.scale_ = ScoreScale(k_max, offset)
    est.classes_ = np.arange(offset, offset + k_max + 1)
    est.n_features_in_ = int(fields["n_features"])
    est.lambda_logit_ = float(fields["lambda_logit"])
    est.objective_ = ObjectiveConfig(est.lambda_logit_, est.beta, est.smooth_l1_delta,
                                     bool(getattr(est, "distance_aware", False)))
    if kind != "pooling_head":
        est.tokens_ = ScoreTokenSet(tuple(int(t) for t in fields["token_ids"].split()))
    if kind == "gated_fusion":
        est.text_encoder_ = BranchEncoder(*(arrays[f"text.{n}"] for n in BranchEncoder.PARAM_NAMES))
        est.mm_encoder_ = BranchEncoder(*(arrays[f"mm.{n}"] for n in BranchEncoder.PARAM_NAMES))
        est.gate_ = GateParameters(arrays["gate.w"], float(fields["gate_b"]))
    elif kind == "dlom":
        est.encoder_ = BranchEncoder(*(arrays[n] for n in BranchEncoder.PARAM_NAMES))
    else:
        est.head_ = PoolingHead(*(arrays[n] for n in PoolingHead.PARAM_NAMES))
    return est


def load_checkpoint(path):
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
