from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass, field
from pathlib import Path

KINDS = ("categorical", "ordinal", "numerical")
ENCODING_FOR_KIND = {"categorical": "one-hot", "ordinal": "rank", "numerical": "z-score"}


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class Feature:
    name: str
    kind: str
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"feature {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "numerical" and self.categories:
            raise SchemaError(f"numerical feature {self.name!r} cannot list categories")
        if self.kind != "numerical":
            if not self.categories:
                raise SchemaError(f"{self.kind} feature {self.name!r} needs categories")
            if len(set(self.categories)) != len(self.categories):
                raise SchemaError(f"feature {self.name!r} repeats a category")

    @property
    def encoding(self) -> str:
        return ENCODING_FOR_KIND[self.kind]

    @property
    def is_categorical(self) -> bool:
        return self.kind == "categorical"

    def code_of(self, value: str) -> int:
        try:
            return self.categories.index(value)
        except ValueError:
            raise SchemaError(f"value {value!r} not in categories of {self.name!r}") from None


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple[Feature, ...] = field(default_factory=tuple)

    def __post_init__(self):
        names = [f.name for f in self.features]
        dupes = {n for n in names if names.count(n) > 1}
        if dupes:
            raise SchemaError(f"duplicate feature names: {sorted(dupes)}")
        if not self.features:
            raise SchemaError("schema has no features")

    def __len__(self) -> int:
        return len(self.features)

    def __iter__(self):
        return iter(self.features)

    def __getitem__(self, i) -> Feature:
        return self.features[i]

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    def index(self, name: str) -> int:
        return self.names.index(name)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["name", "kind", "categories"])
        for f in self.features:
            writer.writerow([f.name, f.kind, "|".join(f.categories)])
        return buf.getvalue()

    def digest(self) -> str:
        return hashlib.sha256(self.to_csv().encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    @classmethod
    def from_csv(cls, text: str) -> "FeatureSchema":
        reader = csv.DictReader(io.StringIO(text))
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != ["name", "kind", "categories"]:
            raise SchemaError("schema header must be name,kind,categories")
        features = []
        for row in reader:
            cats = tuple(c for c in (row["categories"] or "").split("|") if c != "")
            features.append(Feature(row["name"].strip(), row["kind"].strip(), cats))
        return cls(tuple(features))

    @classmethod
    def load(cls, path) -> "FeatureSchema":
        return cls.from_csv(Path(path).read_text(encoding="utf-8"))
