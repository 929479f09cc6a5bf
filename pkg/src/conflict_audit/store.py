"""Merge-based artifact store: results/<country>/<strategy>/<model>/<fragment>.

Fragments are single JSON objects (``.json``) or line-delimited records
(``.jsonl``). Writes are atomic. A conflicting write without ``force`` keeps
the old content as ``<fragment>@v<n>`` and puts the new content in the
canonical file, so nothing is ever dropped.
"""

from __future__ import annotations

import csv
import io
import json
import os
import re
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

SCHEMA = "conflict-audit/1"
POOLED = "_pooled"
_SAFE = re.compile(r"^[A-Za-z0-9_.:+-]+$")
_VERSIONED = re.compile(r"^(?P<name>.+)@v(?P<n>\d+)$")


class StoreError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class FragmentKey:
    country: str
    strategy: str
    model: str
    fragment: str

    def __post_init__(self):
        for part in (self.country, self.strategy, self.model, self.fragment):
            if not _SAFE.match(part):
                raise StoreError(f"unsafe store path component {part!r}")

    @property
    def path(self) -> str:
        return f"{self.country}/{self.strategy}/{self.model}/{self.fragment}"


def dumps(obj: Any) -> str:
    """Canonical JSON used for every artifact."""
    return json.dumps(obj, sort_keys=True, indent=1, ensure_ascii=False, allow_nan=False) + "\n"


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _encode(data: Any, lines: bool) -> str:
    if lines:
        body = "".join(json.dumps(r, sort_keys=True, ensure_ascii=False, allow_nan=False) + "\n" for r in data)
        return json.dumps({"schema": SCHEMA}) + "\n" + body
    return dumps({"schema": SCHEMA, "data": data})


def _decode(text: str, lines: bool, where: Path) -> Any:
    try:
        if lines:
            head, *rest = text.splitlines()
            schema = json.loads(head).get("schema")
            payload = [json.loads(r) for r in rest if r.strip()]
        else:
            obj = json.loads(text)
            schema, payload = obj.get("schema"), obj.get("data")
    except (ValueError, AttributeError) as exc:
        raise StoreError(f"unreadable fragment {where}: {exc}") from exc
    if schema != SCHEMA:
        raise StoreError(f"schema mismatch in {where}: {schema!r} != {SCHEMA!r}")
    return payload


def _csv(rows: Sequence[Mapping]) -> str:
    cols: list[str] = []
    for r in rows:
        cols.extend(k for k in r if k not in cols)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (json.dumps(v) if isinstance(v, (list, dict, tuple)) else v) for k, v in r.items()})
    return buf.getvalue()


class Store:
    def __init__(self, root: str | Path):
        self.root = Path(root)

    def _path(self, key: FragmentKey, lines: bool, version: int | None = None) -> Path:
        name = key.fragment if version is None else f"{key.fragment}@v{version}"
        return self.root / key.country / key.strategy / key.model / (name + (".jsonl" if lines else ".json"))

    def _find(self, key: FragmentKey) -> tuple[Path, bool] | None:
        for lines in (False, True):
            p = self._path(key, lines)
            if p.exists():
                return p, lines
        return None

    def exists(self, key: FragmentKey) -> bool:
        return self._find(key) is not None

    def read(self, key: FragmentKey) -> Any:
        found = self._find(key)
        if found is None:
            raise KeyError(key.path)
        path, lines = found
        return _decode(path.read_text(encoding="utf-8"), lines, path)

    def versions(self, key: FragmentKey) -> list[int]:
        d = self.root / key.country / key.strategy / key.model
        out = []
        for p in d.glob(f"{key.fragment}@v*.json*"):
            m = _VERSIONED.match(p.name.split(".json")[0])
            if m and m.group("name") == key.fragment:
                out.append(int(m.group("n")))
        return sorted(out)

    def write(self, key: FragmentKey, data: Any, lines: bool = False, force: bool = False,
              table: Sequence[Mapping] | None = None) -> str:
        """Upsert one fragment. Returns "created", "unchanged", "overwritten" or "versioned"."""
        text = _encode(data, lines)
        path = self._path(key, lines)
        found = self._find(key)
        status = "created"
        if found is not None:
            old_path, old_lines = found
            old = old_path.read_text(encoding="utf-8")
            if old == text:
                status = "unchanged"
            elif force:
                status = "overwritten"
                if old_path != path:
                    old_path.unlink()
            else:
                status = "versioned"
                n = (self.versions(key) or [0])[-1] + 1
                os.replace(old_path, self._path(key, old_lines, n))
        if status != "unchanged":
            atomic_write(path, text)
        if table is not None:
            csv_path = path.with_suffix(".csv")
            body = _csv(table)
            if not csv_path.exists() or csv_path.read_text(encoding="utf-8") != body:
                atomic_write(csv_path, body)
        return status

    def keys(self) -> list[FragmentKey]:
        out = []
        if not self.root.exists():
            return out
        for p in sorted(self.root.glob("*/*/*/*.json*")):
            stem = p.name.split(".json")[0]
            if _VERSIONED.match(stem) or stem.startswith("."):
                continue
            c, s, m = p.parts[-4:-1]
            out.append(FragmentKey(c, s, m, stem))
        return sorted(set(out))


def merge_store(store: Store, fragments: Mapping[FragmentKey, Any], force: bool = False,
                lines: Iterable[FragmentKey] = ()) -> dict[str, str]:
    """Upsert many fragments; an empty mapping leaves the store untouched."""
    lines = set(lines)
    return {k.path: store.write(k, v, lines=k in lines, force=force) for k, v in sorted(fragments.items())}
