"""Rare-disease phenotype NER benchmark harness."""

from pnb.corpus import Document, EntityType, GoldEntity, Span

__all__ = ["Document", "EntityType", "GoldEntity", "Span"]
__version__ = "0.1.0"
