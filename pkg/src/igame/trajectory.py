"""Trajectory record and its CSV / JSON-lines serializations."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError


def fmt(x: float) -> str:
    """17 significant digits; round-trips every double."""
    return format(float(x), ".17g")


def atomic_write(path: str | Path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        mask = os.umask(0)
        os.umask(mask)
        os.fchmod(fd, 0o666 & ~mask)
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class Trajectory:
    """Samples on the uniform grid ``t_k = t0 + k h``.

    ``u``, ``uo``, ``eps`` and ``v`` map player (or coalition) ids to arrays of
    shape ``(len(t), dim)``.  ``eps`` is empty when the values are unknown.
    """

    game: str
    h: float
    t: np.ndarray
    phi: np.ndarray
    u: dict = field(default_factory=dict)
    uo: dict = field(default_factory=dict)
    eps: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.t)

    @property
    def state_dim(self) -> int:
        return self.phi.shape[1]

    def upto(self, k: int) -> "Trajectory":
        """Samples ``0..k`` inclusive (views, no copy)."""
        sl = slice(0, k + 1)
        return Trajectory(self.game, self.h, self.t[sl], self.phi[sl],
                          {i: a[sl] for i, a in self.u.items()},
                          {i: a[sl] for i, a in self.uo.items()},
                          {i: a[sl] for i, a in self.eps.items()},
                          {i: a[sl] for i, a in self.v.items()}, dict(self.meta))

    def columns(self) -> list[tuple[str, str, np.ndarray]]:
        """``(csv name, expression variable name, values)`` in canonical order."""
        cols = [("t", "t", self.t)]
        cols += [(f"phi_{j}", f"phi[{j}]", self.phi[:, j]) for j in range(self.state_dim)]
        for head, table in (("u", self.u), ("uo", self.uo), ("eps", self.eps), ("v", self.v)):
            for i in sorted(table):
                a = table[i]
                cols += [(f"{head}_{i}_{j}", f"{head}[{i}][{j}]", a[:, j])
                         for j in range(a.shape[1])]
        return cols

    def variables(self) -> dict[str, np.ndarray]:
        """Expression-language name -> column, plus ``h`` and ``dphi`` (left differences)."""
        out = {var: vals for _, var, vals in self.columns()}
        out["h"] = np.full(len(self), self.h)
        dphi = np.zeros_like(self.phi)
        if len(self) > 1:
            dphi[1:] = (self.phi[1:] - self.phi[:-1]) / self.h
        for j in range(self.state_dim):
            out[f"dphi[{j}]"] = dphi[:, j]
        return out

    # -- text formats ------------------------------------------------------

    def to_csv(self) -> str:
        cols = self.columns()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([c[0] for c in cols])
        data = np.column_stack([c[2] for c in cols]) if cols else np.zeros((0, 0))
        for row in data:
            w.writerow([fmt(x) for x in row])
        return buf.getvalue()

    def to_jsonl(self) -> str:
        lines = []
        for k in range(len(self)):
            rec = {"t": float(self.t[k]), "phi": [float(x) for x in self.phi[k]]}
            for head, table in (("u", self.u), ("uo", self.uo), ("eps", self.eps),
                                ("v", self.v)):
                if table:
                    rec[head] = {str(i): [float(x) for x in table[i][k]] for i in sorted(table)}
            lines.append(json.dumps(rec))
        return "\n".join(lines) + ("\n" if lines else "")

    def save(self, path: str | Path, fmt_name: str | None = None) -> None:
        fmt_name = fmt_name or ("jsonl" if str(path).endswith(".jsonl") else "csv")
        text = self.to_jsonl() if fmt_name == "jsonl" else self.to_csv()
        atomic_write(path, text)

    @classmethod
    def from_csv(cls, text: str, game: str = "", h: float | None = None) -> "Trajectory":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows:
            raise ConfigError("empty trajectory file", "MISSING_COLUMNS")
        header = [c.strip() for c in rows[0]]
        try:
            data = np.array([[float(x) for x in r] for r in rows[1:] if r], dtype=float)
        except ValueError as exc:
            raise ConfigError(f"bad trajectory value: {exc}") from None
        data = data.reshape(-1, len(header))
        return cls._from_table(header, data, game, h)

    @classmethod
    def from_jsonl(cls, text: str, game: str = "", h: float | None = None) -> "Trajectory":
        recs = [json.loads(line) for line in text.splitlines() if line.strip()]
        if not recs:
            raise ConfigError("empty trajectory file", "MISSING_COLUMNS")
        header = ["t"] + [f"phi_{j}" for j in range(len(recs[0]["phi"]))]
        for head in ("u", "uo", "eps", "v"):
            for i, vals in sorted(recs[0].get(head, {}).items(), key=lambda kv: int(kv[0])):
                header += [f"{head}_{i}_{j}" for j in range(len(vals))]
        data = []
        for r in recs:
            row = [r["t"]] + list(r["phi"])
            for head in ("u", "uo", "eps", "v"):
                for _, vals in sorted(r.get(head, {}).items(), key=lambda kv: int(kv[0])):
                    row += list(vals)
            data.append(row)
        return cls._from_table(header, np.array(data, dtype=float), game, h)

    @classmethod
    def _from_table(cls, header, data, game, h):
        if not header or header[0] != "t":
            raise ConfigError("trajectory must start with a 't' column", "MISSING_COLUMNS")
        t = data[:, 0].copy()
        phis, tables = [], {"u": {}, "uo": {}, "eps": {}, "v": {}}
        for c, name in enumerate(header[1:], start=1):
            parts = name.split("_")
            if parts[0] == "phi" and len(parts) == 2:
                phis.append((int(parts[1]), c))
            elif parts[0] in tables and len(parts) == 3:
                tables[parts[0]].setdefault(int(parts[1]), []).append((int(parts[2]), c))
            else:
                raise ConfigError(f"unknown trajectory column {name!r}", "MISSING_COLUMNS")
        phi = data[:, [c for _, c in sorted(phis)]].reshape(len(t), len(phis))
        built = {head: {i: data[:, [c for _, c in sorted(cols)]] for i, cols in table.items()}
                 for head, table in tables.items()}
        if h is None:
            h = float(t[1] - t[0]) if len(t) > 1 else 0.0
        return cls(game, h, t, phi, built["u"], built["uo"], built["eps"], built["v"])

    @classmethod
    def load(cls, path: str | Path, game: str = "", h: float | None = None) -> "Trajectory":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read trajectory {path}: {exc}") from None
        if str(path).endswith(".jsonl"):
            return cls.from_jsonl(text, game, h)
        return cls.from_csv(text, game, h)
