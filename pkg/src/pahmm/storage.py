"""NDJSON draw files with a JSON metadata sidecar.

One line per saved iteration with keys ``iter``, ``zeta`` (NHMM) or ``Q``
(HMM), ``mu``, ``sigma``, ``z_rle`` and ``imputed``. The sidecar
``<name>.meta.json`` carries the seed, configuration, masked row indices and
the only wall-clock field, ``created``.
"""
from __future__ import annotations

import datetime as _dt
import json
from pathlib import Path

import numpy as np

from .sampler import PosteriorDraws


def rle_encode(z) -> list[list[int]]:
    """Run-length pairs ``[state, length]``."""
    z = np.asarray(z)
    if z.size == 0:
        return []
    cut = np.flatnonzero(np.diff(z) != 0) + 1
    starts = np.concatenate([[0], cut])
    lengths = np.diff(np.concatenate([starts, [z.size]]))
    return [[int(z[a]), int(n)] for a, n in zip(starts, lengths)]


def rle_decode(pairs) -> np.ndarray:
    if not pairs:
        return np.zeros(0, dtype=np.int64)
    states, lengths = zip(*pairs)
    return np.repeat(np.asarray(states, dtype=np.int64), lengths)


def meta_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".meta.json") if p.suffix != ".ndjson" else \
        p.with_suffix(".meta.json")


def _record(draws: PosteriorDraws, s: int) -> dict:
    rec = {"iter": int(draws.iterations[s])}
    if draws.zeta is not None:
        rec["zeta"] = draws.zeta[s].tolist()
    if draws.Q is not None:
        rec["Q"] = draws.Q[s].tolist()
    rec["mu"] = draws.mu[s].tolist()
    rec["sigma"] = draws.sigma[s].tolist()
    rec["z_rle"] = rle_encode(draws.z[s])
    rec["imputed"] = draws.imputed[s].tolist()
    return rec


def write_draws(draws: PosteriorDraws, path, created: str | None = None) -> Path:
    """Write draws and sidecar; returns the draw-file path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for s in range(len(draws)):
            fh.write(json.dumps(_record(draws, s), separators=(",", ":")))
            fh.write("\n")
    meta = dict(draws.meta)
    meta["model"] = draws.model
    meta["n_draws"] = len(draws)
    meta["masked_rows"] = draws.masked_rows.tolist()
    meta["created"] = created or _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    meta_path(path).write_text(json.dumps(meta, indent=1, sort_keys=True))
    return path


def read_draws(path) -> PosteriorDraws:
    path = Path(path)
    meta = json.loads(meta_path(path).read_text())
    iters, mu, sigma, z, imp, zeta, Q = [], [], [], [], [], [], []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            iters.append(rec["iter"])
            mu.append(rec["mu"])
            sigma.append(rec["sigma"])
            z.append(rle_decode(rec["z_rle"]))
            imp.append(rec["imputed"])
            if "zeta" in rec:
                zeta.append(rec["zeta"])
            if "Q" in rec:
                Q.append(rec["Q"])
    K, d = int(meta["K"]), int(meta["d"])
    S = len(iters)
    M = len(meta["masked_rows"])
    return PosteriorDraws(
        model=meta["model"],
        iterations=np.asarray(iters, dtype=np.int64),
        mu=np.asarray(mu, dtype=float).reshape(S, K, d),
        sigma=np.asarray(sigma, dtype=float).reshape(S, K, d, d),
        z=np.asarray(z, dtype=np.int64).reshape(S, -1),
        imputed=np.asarray(imp, dtype=float).reshape(S, M, d),
        masked_rows=np.asarray(meta["masked_rows"], dtype=np.int64),
        zeta=np.asarray(zeta, dtype=float) if zeta else None,
        Q=np.asarray(Q, dtype=float) if Q else None,
        meta={k: v for k, v in meta.items() if k not in ("masked_rows", "n_draws")},
    )
