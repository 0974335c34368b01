"""Versioned text serialization of trained models.

The format is human-diffable and round-trips predictions bit-exactly (floats
are written with ``repr``, which is shortest-exact in Python 3). Vocabulary
sections are optional; when present their SHA-256 digests are stored in the
header and re-checked on load so a model can never be applied with a
mismatched encoding.
"""

from dataclasses import dataclass

import numpy as np

from .combined import CombinedModel, TrainingInfo
from .core import Hyperparameters, LatentFactors, SideModel
from .ingest import Vocabularies, Vocabulary

FORMAT_HEADER = "ctrfuse-model 1"
NO_DIGEST = "-"


class ModelFormatError(ValueError):
    """The model file is malformed or inconsistent with its digests."""


@dataclass(frozen=True)
class ModelBundle:
    """A trained model plus the hyperparameters and vocabularies behind it.

    ``crosses`` records which attributes were crossed with the banner id at
    training time, so evaluation encodes new data the same way.
    """

    model: CombinedModel
    hyper: Hyperparameters
    vocabs: Vocabularies | None = None
    family: str = "lr+lfl"
    crosses: tuple[str, ...] = ()
    indicators: tuple[str, ...] = ()


def save_model(path, bundle: ModelBundle):
    model = bundle.model
    hyper = bundle.hyper
    factors = model.factors
    side = model.side
    lines = [FORMAT_HEADER]

    def put(key, value):
        lines.append(f"{key} {value}")

    put("family", bundle.family)
    put("crosses", ",".join(bundle.crosses))
    put("indicators", ",".join(bundle.indicators))
    put("order", model.order)
    put("banners", factors.n_banners if factors is not None else 0)
    put("domains", factors.n_domains if factors is not None else 0)
    put("features", side.dim)
    put("penalty", hyper.latent_penalty)
    put("lambda_lr", repr(float(hyper.lambda_lr)))
    put("lambda_bias", repr(float(hyper.lambda_bias)))
    put("lambda_latent", repr(float(hyper.lambda_latent)))
    put("alternations", hyper.alternations)
    put("alternations_run", model.info.alternations_run)
    put("day_trained", model.info.day_trained)
    put("intercept", repr(float(side.intercept)))
    put("intercept_correction", repr(float(side.intercept_correction)))
    vocabs = bundle.vocabs
    for name in ("banners", "domains", "features"):
        digest = getattr(vocabs, name).digest() if vocabs is not None else NO_DIGEST
        put(f"{name}_vocab_sha256", digest)

    if factors is not None:
        lines.append("[factors]")
        for row in factors.banner:
            lines.append(" ".join(repr(float(v)) for v in row))
        for row in factors.domain:
            lines.append(" ".join(repr(float(v)) for v in row))
    lines.append("[side]")
    nonzero = np.nonzero(side.weights)[0]
    lines.append(f"nnz {nonzero.size}")
    for idx in nonzero:
        lines.append(f"{idx} {repr(float(side.weights[idx]))}")
    if vocabs is not None:
        for name in ("banners", "domains", "features"):
            lines.append(f"[vocab {name}]")
            keys = getattr(vocabs, name).keys()
            lines.append(f"count {len(keys)}")
            lines.extend(keys)
    lines.append("end")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path) -> ModelBundle:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != FORMAT_HEADER:
        raise ModelFormatError(f"{path}: not a recognized model file")
    pos = 1
    header: dict[str, str] = {}
    while pos < len(lines) and not lines[pos].startswith("["):
        if lines[pos] == "end":
            break
        key, _, value = lines[pos].partition(" ")
        header[key] = value
        pos += 1

    def need(key):
        if key not in header:
            raise ModelFormatError(f"{path}: missing header field {key!r}")
        return header[key]

    order = int(need("order"))
    n_banners = int(need("banners"))
    n_domains = int(need("domains"))
    n_features = int(need("features"))
    family = need("family")
    hyper = Hyperparameters(
        lambda_lr=float(need("lambda_lr")),
        lambda_bias=float(need("lambda_bias")),
        lambda_latent=float(need("lambda_latent")),
        latent_penalty=need("penalty"),
        order=order,
        alternations=int(need("alternations")),
    )
    info = TrainingInfo(int(need("alternations_run")), int(need("day_trained")))

    factors = None
    if pos < len(lines) and lines[pos] == "[factors]":
        pos += 1
        width = order + 2
        rows = []
        for _ in range(n_banners + n_domains):
            rows.append(np.array([float(v) for v in lines[pos].split(" ")]))
            pos += 1
        matrix = np.vstack(rows) if rows else np.zeros((0, width))
        if rows and matrix.shape[1] != width:
            raise ModelFormatError(f"{path}: factor rows have wrong width")
        factors = LatentFactors(order, matrix[:n_banners], matrix[n_banners:])

    if pos >= len(lines) or lines[pos] != "[side]":
        raise ModelFormatError(f"{path}: missing [side] section")
    pos += 1
    key, _, value = lines[pos].partition(" ")
    if key != "nnz":
        raise ModelFormatError(f"{path}: missing nnz count")
    nnz = int(value)
    pos += 1
    weights = np.zeros(n_features)
    for _ in range(nnz):
        idx, _, value = lines[pos].partition(" ")
        weights[int(idx)] = float(value)
        pos += 1
    side = SideModel(weights, float(need("intercept")), float(need("intercept_correction")))

    vocabs = None
    sections: dict[str, Vocabulary] = {}
    while pos < len(lines) and lines[pos].startswith("[vocab "):
        name = lines[pos][len("[vocab ") : -1]
        pos += 1
        key, _, value = lines[pos].partition(" ")
        if key != "count":
            raise ModelFormatError(f"{path}: missing vocab count for {name}")
        count = int(value)
        pos += 1
        sections[name] = Vocabulary(lines[pos : pos + count]).freeze()
        pos += 1 * count
    if sections:
        for name in ("banners", "domains", "features"):
            if name not in sections:
                raise ModelFormatError(f"{path}: incomplete vocabulary sections")
            stored = need(f"{name}_vocab_sha256")
            actual = sections[name].digest()
            if stored != actual:
                raise ModelFormatError(
                    f"{path}: {name} vocabulary digest mismatch "
                    f"(stored {stored[:12]}.., actual {actual[:12]}..)"
                )
        vocabs = Vocabularies(sections["banners"], sections["domains"], sections["features"])
    else:
        for name in ("banners", "domains", "features"):
            if need(f"{name}_vocab_sha256") != NO_DIGEST:
                raise ModelFormatError(
                    f"{path}: header advertises a {name} vocabulary but none is stored"
                )

    if pos >= len(lines) or lines[pos] != "end":
        raise ModelFormatError(f"{path}: missing end marker")
    model = CombinedModel(factors, side, order, info)
    crosses = tuple(v for v in header.get("crosses", "").split(",") if v)
    indicators = tuple(v for v in header.get("indicators", "").split(",") if v)
    return ModelBundle(model, hyper, vocabs, family, crosses, indicators)
