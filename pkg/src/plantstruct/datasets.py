"""Packaged reference data: a small regulating-and-metering plant
vocabulary, its rulebook and a toy registry."""
from __future__ import annotations

from functools import lru_cache
from importlib import resources

from .ingest import RegistryRecord, Rulebook, parse_registry, parse_regulations, parse_vocab
from .model import ClassVocabularies
from .objective import PlausibilityModel, fit_plausibility

__all__ = ["reference_bytes", "reference_vocab", "reference_rulebook", "reference_registry",
           "reference_model"]


def reference_bytes(name: str) -> bytes:
    """Raw bytes of a packaged file: ``vocab.json``, ``regulations.json``
    or ``registry.csv``."""
    return resources.files("plantstruct.data").joinpath(name).read_bytes()


@lru_cache(maxsize=None)
def reference_vocab() -> ClassVocabularies:
    return parse_vocab(reference_bytes("vocab.json"))


@lru_cache(maxsize=None)
def reference_rulebook() -> Rulebook:
    return parse_regulations(reference_bytes("regulations.json"), reference_vocab())


@lru_cache(maxsize=None)
def _registry() -> tuple[RegistryRecord, ...]:
    return tuple(parse_registry(reference_bytes("registry.csv"), reference_vocab()))


def reference_registry() -> list[RegistryRecord]:
    return list(_registry())


@lru_cache(maxsize=None)
def reference_model() -> PlausibilityModel:
    return fit_plausibility(reference_registry(), reference_vocab())
