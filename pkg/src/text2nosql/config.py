"""Run configuration: YAML file plus command-line overrides.

API keys never live in the config; a provider names the environment
variable that holds its key, and only that name reaches the run manifest.
"""

from __future__ import annotations

import dataclasses
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .errors import ConfigError
from .providers import ChatClient, EchoChatClient, HttpChatClient, ScriptedChatClient
from .retrieval import Embedder, LocalHashEmbedder, RemoteEmbedder, RetrievalWeights

CHAT_KINDS = ("http", "scripted", "echo")
# pipeline roles and the tier each one uses unless overridden under ``roles``
ROLE_TIERS = {
    "schema": "second_tier",
    "generator": "second_tier",
    "refiner": "top_tier",
    "optimizer": "top_tier",
    "candidate": "second_tier",
    "debug": "second_tier",
    "escalation": "top_tier",
    "inspector": "second_tier",
}
_SECRET_HINTS = ("key", "token", "secret", "password")


@dataclass
class ProviderSpec:
    kind: str = "http"
    url: str | None = None
    model: str | None = None
    api_key_env: str = "OPENAI_API_KEY"
    script: str | None = None
    timeout: float = 120.0


@dataclass
class EmbeddingSpec:
    kind: str = "local"
    dim: int = 256
    url: str | None = None
    model: str = "text-embedding-ada-002"
    api_key_env: str = "OPENAI_API_KEY"


@dataclass
class RunConfig:
    second_tier: ProviderSpec = field(default_factory=ProviderSpec)
    top_tier: ProviderSpec = field(default_factory=ProviderSpec)
    roles: dict[str, ProviderSpec] = field(default_factory=dict)
    extenders: list[ProviderSpec] = field(default_factory=list)
    embedding: EmbeddingSpec = field(default_factory=EmbeddingSpec)
    w_nlq: float = 1.0
    w_other: float = 0.3
    k: int = 20
    temperature: float = 0.0
    excerpt_size: int = 5
    questions_per_query: int = 5
    concurrency: int = 4
    embedder_seed: int = 0
    databases: str | None = None
    library: str | None = None
    output: str = "runs"

    def __post_init__(self):
        try:
            self.weights  # validates both weights
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.k < 0 or self.concurrency < 1 or self.excerpt_size < 0 or self.questions_per_query < 0:
            raise ConfigError("k, excerpt_size and questions_per_query must be >= 0 and concurrency >= 1")
        for role in self.roles:
            if role not in ROLE_TIERS:
                raise ConfigError(f"unknown role {role!r}; expected one of {sorted(ROLE_TIERS)}")

    @property
    def weights(self) -> RetrievalWeights:
        return RetrievalWeights(self.w_nlq, self.w_other)

    def to_json(self) -> dict[str, Any]:
        return asdict(self)


def _spec(cls, blob: Any, where: str):
    if blob is None:
        return cls()
    if not isinstance(blob, Mapping):
        raise ConfigError(f"{where} must be a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    for k in blob:
        if k not in known:
            if any(h in k.lower() for h in _SECRET_HINTS):
                raise ConfigError(f"{where}.{k}: secrets are read from environment variables, set api_key_env")
            raise ConfigError(f"{where}: unknown key {k!r}")
    spec = cls(**blob)
    if isinstance(spec, ProviderSpec) and spec.kind not in CHAT_KINDS:
        raise ConfigError(f"{where}.kind must be one of {CHAT_KINDS}, got {spec.kind!r}")
    if isinstance(spec, EmbeddingSpec) and spec.kind not in ("local", "remote"):
        raise ConfigError(f"{where}.kind must be 'local' or 'remote', got {spec.kind!r}")
    return spec


def config_from_mapping(blob: Mapping[str, Any] | None) -> RunConfig:
    blob = dict(blob or {})
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(blob) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    for tier in ("second_tier", "top_tier"):
        blob[tier] = _spec(ProviderSpec, blob.get(tier), tier)
    roles = blob.get("roles") or {}
    if not isinstance(roles, Mapping):
        raise ConfigError("roles must be a mapping")
    blob["roles"] = {r: _spec(ProviderSpec, v, f"roles.{r}") for r, v in roles.items()}
    ext = blob.get("extenders") or []
    if not isinstance(ext, list):
        raise ConfigError("extenders must be a list")
    blob["extenders"] = [_spec(ProviderSpec, v, f"extenders[{i}]") for i, v in enumerate(ext)]
    blob["embedding"] = _spec(EmbeddingSpec, blob.get("embedding"), "embedding")
    try:
        return RunConfig(**blob)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path | None, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """Read ``path`` (if any) and apply non-None ``overrides`` on top."""
    blob: dict[str, Any] = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            loaded = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path} is not valid YAML: {exc}") from exc
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigError(f"{path} must contain a mapping at the top level")
        blob = loaded or {}
    blob.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return config_from_mapping(blob)


class ClientFactory:
    """Builds one client per distinct provider spec, so roles sharing a spec share its state."""

    def __init__(self, cfg: RunConfig, script: str | None = None):
        self.cfg = cfg
        self.script = script
        self._cache: dict[tuple, ChatClient] = {}

    def _make(self, spec: ProviderSpec) -> ChatClient:
        if self.script is not None:
            spec = ProviderSpec(kind="scripted", script=self.script)
        key = tuple(asdict(spec).values())
        if key in self._cache:
            return self._cache[key]
        if spec.kind == "echo":
            client: ChatClient = EchoChatClient()
        elif spec.kind == "scripted":
            if not spec.script:
                raise ConfigError("a scripted provider needs a script file")
            try:
                client = ScriptedChatClient.from_file(spec.script, name=Path(spec.script).name)
            except FileNotFoundError:
                raise  # a missing script is a missing input, not a config error
            except (OSError, ValueError, KeyError) as exc:
                raise ConfigError(f"cannot load script {spec.script}: {exc}") from exc
        else:
            if not spec.url or not spec.model:
                raise ConfigError("an http provider needs both url and model")
            client = HttpChatClient(spec.url, spec.model, temperature=self.cfg.temperature, timeout=spec.timeout,
                                    max_in_flight=self.cfg.concurrency, api_key_env=spec.api_key_env)
        self._cache[key] = client
        return client

    def role(self, name: str) -> ChatClient:
        spec = self.cfg.roles.get(name) or getattr(self.cfg, ROLE_TIERS[name])
        return self._make(spec)

    def extenders(self) -> list[ChatClient]:
        specs = self.cfg.extenders or [self.cfg.second_tier, self.cfg.top_tier]
        seen, out = set(), []
        for s in specs:
            c = self._make(s)
            if id(c) not in seen:
                seen.add(id(c))
                out.append(c)
        return out


def make_embedder(cfg: RunConfig) -> Embedder:
    e = cfg.embedding
    if e.kind == "local":
        return LocalHashEmbedder(dim=e.dim, seed=cfg.embedder_seed)
    if not e.url:
        raise ConfigError("a remote embedding provider needs a url")
    return RemoteEmbedder(e.url, model=e.model, dim=e.dim, api_key_env=e.api_key_env)
