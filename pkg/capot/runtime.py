from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

from .config import Settings
from .models import REWRITE_TYPES, NoiseConfig
from .services.rewrite import RewriteClient, build_rewrite_client
from .services.text_resources import ResourcePaths, TextResources, load_resources


@dataclass
class Runtime:
    """Resolved settings plus the lazily built shared services of one run."""

    settings: Settings
    _resources: Optional[TextResources] = field(default=None, repr=False)
    _rewriter: Optional[RewriteClient] = field(default=None, repr=False)

    def resources(self) -> TextResources:
        if self._resources is None:
            s = self.settings
            self._resources = load_resources(
                ResourcePaths(
                    synonyms=s.synonyms_path,
                    lemmas=s.lemmas_path,
                    lemma_rules=s.lemma_rules_path,
                    determiners=s.determiners_path,
                    stopwords=s.stopwords_path,
                    keyboard=s.keyboard_path,
                )
            )
        return self._resources

    def rewriter(self) -> RewriteClient:
        if self._rewriter is None:
            s = self.settings
            self._rewriter = build_rewrite_client(
                s.rewrite_backend,
                endpoint=s.rewrite_endpoint,
                cache_dir=s.cache_dir,
                timeout=s.rewrite_timeout_seconds,
                max_retries=s.rewrite_max_retries,
                resources=self.resources(),
            )
        return self._rewriter

    def rewriter_for(self, config: NoiseConfig) -> Optional[RewriteClient]:
        return self.rewriter() if any(t in REWRITE_TYPES for t in config.enabled_types) else None

    def noise_config(self, types: Optional[Iterable[str]] = None, seed: Optional[int] = None) -> NoiseConfig:
        return self.settings.noise_config(types, seed)
