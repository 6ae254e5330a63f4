"""File formats: model JSON, tensor JSON/binary, recovered-model JSON, CSV."""

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .forward import JointTensor, LabeledTree
from .model import GammaRates, GTRModel, StateDistribution, TripleTree

MAGIC = b"GTRJ"
# magic, kappa, n, then 4 bytes of zero padding to make 16 bytes
_HEADER = struct.Struct("<4sII4x")


@dataclass(frozen=True, eq=False)
class ModelSpec:
    model: GTRModel
    rates: GammaRates
    tree: TripleTree = None
    rescale_factor: float = 1.0

    @property
    def warning(self):
        if abs(self.rescale_factor - 1.0) > 1e-12:
            return f"Q rescaled by factor {self.rescale_factor!r} to trace(diag(pi) Q) = -1"
        return None


def _require(obj, key, kind=None):
    if key not in obj:
        raise ValidationError(f"missing field {key!r}")
    return obj[key]


def parse_model(obj):
    """Build a :class:`ModelSpec` from a decoded model document."""
    if not isinstance(obj, dict):
        raise ValidationError("model document must be a JSON object")
    pi = np.asarray(_require(obj, "pi"), dtype=np.float64)
    kappa = int(obj.get("kappa", pi.size))
    if kappa != pi.size:
        raise ValidationError(f"kappa={kappa} but pi has {pi.size} entries")
    pi_d = StateDistribution(pi)
    if "Q" in obj and "exchangeabilities" in obj:
        raise ValidationError("give either Q or exchangeabilities, not both")
    factor = 1.0
    if "Q" in obj:
        model, factor = GTRModel.from_rate_matrix(np.asarray(obj["Q"], dtype=np.float64), pi_d)
    elif "exchangeabilities" in obj:
        model = GTRModel.from_exchangeabilities(obj["exchangeabilities"], pi_d)
    else:
        raise ValidationError("model needs Q or exchangeabilities")
    rates = GammaRates(float(_require(obj, "alpha")))
    tree = None
    if "edge_lengths" in obj:
        e = obj["edge_lengths"]
        if isinstance(e, dict):
            tree = TripleTree(float(e["a"]), float(e["b"]), float(e["c"]))
        else:
            tree = TripleTree(*map(float, e))
    return ModelSpec(model, rates, tree, float(factor))


def load_json(path):
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as err:
            raise ValidationError(f"{path}: invalid JSON ({err})") from None


def dump_json(path, obj):
    text = json.dumps(obj, indent=2) + "\n"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def load_model(path):
    return parse_model(load_json(path))


def model_to_dict(model, rates=None, tree=None):
    out = {"kappa": model.kappa, "pi": model.pi.pi.tolist(), "Q": model.q.q.tolist()}
    if rates is not None:
        out["alpha"] = float(getattr(rates, "alpha", rates))
    if tree is not None:
        out["edge_lengths"] = dict(zip("abc", map(float, tree.lengths)))
    return out


def tensor_to_dict(joint):
    return {"kappa": joint.kappa, "taxa": list(joint.taxa), "p": joint.p.tolist()}


def parse_tensor(obj):
    if not isinstance(obj, dict):
        raise ValidationError("tensor document must be a JSON object")
    kappa = int(_require(obj, "kappa"))
    p = np.asarray(_require(obj, "p"), dtype=np.float64)
    taxa = obj.get("taxa")
    if kappa < 2:
        raise ValidationError("kappa must be at least 2")
    n = int(round(np.log(p.size) / np.log(kappa))) if p.size > 1 else 0
    if n < 1 or kappa**n != p.size:
        raise ValidationError(f"{p.size} entries is not a power of kappa={kappa}")
    return JointTensor(kappa, p, tuple(taxa) if taxa is not None else None)


def write_tensor(path, joint, extra=None):
    """JSON unless the path ends in ``.gtrj`` (binary)."""
    if str(path).endswith(".gtrj"):
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, joint.kappa, joint.n))
            fh.write(np.ascontiguousarray(joint.p, dtype="<f8").tobytes())
        return
    obj = tensor_to_dict(joint)
    if extra:
        obj.update(extra)
    dump_json(path, obj)


def read_tensor(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] == MAGIC:
        if len(raw) < _HEADER.size:
            raise ValidationError("truncated GTRJ header")
        _, kappa, n = _HEADER.unpack_from(raw)
        body = raw[_HEADER.size :]
        if len(body) != 8 * kappa**n:
            raise ValidationError(f"GTRJ body holds {len(body)} bytes, expected {8 * kappa**n}")
        return JointTensor(kappa, np.frombuffer(body, dtype="<f8").copy())
    try:
        obj = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise ValidationError(f"{path}: not a tensor file ({err})") from None
    return parse_tensor(obj)


def recovered_to_dict(rec, taxa=None):
    out = rec.to_dict()
    if taxa is not None:
        out["taxa"] = list(taxa)
    return out


def write_newick(path, tree):
    if not isinstance(tree, LabeledTree):
        raise ValidationError("expected a LabeledTree")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(tree.to_newick() + "\n")


def fmt17(x):
    return format(float(x), ".17g")


def write_csv(path, header, rows):
    """Numbers are written with 17 significant digits; other values as text."""
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for v in row:
            if isinstance(v, (float, np.floating)):
                cells.append(fmt17(v))
            else:
                cells.append(str(v))
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
