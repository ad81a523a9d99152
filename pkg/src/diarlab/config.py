"""Pipeline configuration: one declarative YAML file, schema version 1.

Example:

    version: 1
    workspace: /data/run1
    concurrency: 2
    target_resolution: 720p
    min_clip_duration: 10.0
    churn_threshold: 0.05
    shot:
      threshold: 30.0
      min_scene_len: 15
      analysis_max_width: 256
    gate:
      ovrl_min: 3.0
      vqa_min: 60.0
      max_abs_offset: 5
      conf_min: 1.0
      min_source_duration: 180.0
    fusion:
      rank_exponent: 0.5
      ranks: {audio_visual: 1, audio_only: 2}
    workers:
      mock:
        argv: ["python", "-m", "diarlab.mock_worker", "--fixtures", "/data/fixtures"]
    task_workers:
      audio_quality: mock
      video_quality: mock
      av_sync: mock
      face_detect: mock
      landmarks: mock
      diarize_audio: mock
      diarize_av: mock
    request_timeout: 30.0
    downloader: null          # or e.g. ["yt-dlp", "-o", "{out}", "{url}"]
    search_terms:
      - {keyword: interview, language: en}
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .gate import GateConfig
from .fusion import FusionConfig
from .protocol import TASKS, WorkerSpec

CONFIG_VERSION = 1

PIPELINE_TASKS = (
    "audio_quality",
    "video_quality",
    "av_sync",
    "face_detect",
    "landmarks",
    "diarize_audio",
    "diarize_av",
)


class ConfigError(ValueError):
    pass


@dataclass
class ShotConfig:
    threshold: float = 30.0
    min_scene_len: int = 15
    analysis_max_width: int = 256


@dataclass
class PipelineConfig:
    workspace: Path
    workers: dict[str, WorkerSpec] = field(default_factory=dict)
    task_workers: dict[str, str] = field(default_factory=dict)
    gate: GateConfig = field(default_factory=GateConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    ranks: dict[str, int] = field(
        default_factory=lambda: {"audio_visual": 1, "audio_only": 2}
    )
    shot: ShotConfig = field(default_factory=ShotConfig)
    min_clip_duration: float = 10.0
    churn_threshold: float = 0.05
    concurrency: int = 2
    request_timeout: float = 30.0
    target_resolution: str = "720p"
    downloader: list[str] | None = None
    search_terms: list[dict] = field(default_factory=list)
    fault_crash_after_stage: str | None = None  # test hook

    def __post_init__(self):
        self.workspace = Path(self.workspace)
        for task, worker_name in self.task_workers.items():
            if task not in TASKS:
                raise ConfigError(f"task_workers: unknown task {task!r}")
            if worker_name not in self.workers:
                raise ConfigError(
                    f"task_workers[{task!r}] references undeclared worker {worker_name!r}"
                )

    def worker_for(self, task: str) -> WorkerSpec:
        try:
            name = self.task_workers[task]
        except KeyError:
            raise ConfigError(f"no worker configured for task {task!r}") from None
        return self.workers[name]


def load_config(path: Path) -> PipelineConfig:
    path = Path(path)
    data = yaml.safe_load(path.read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    version = data.get("version")
    if version != CONFIG_VERSION:
        raise ConfigError(f"{path}: unsupported config version {version!r} (need {CONFIG_VERSION})")
    if "workspace" not in data:
        raise ConfigError(f"{path}: 'workspace' is required")

    workers = {}
    for name, spec in (data.get("workers") or {}).items():
        argv = spec.get("argv")
        if not argv:
            raise ConfigError(f"{path}: worker {name!r} needs a non-empty argv")
        workers[name] = WorkerSpec(
            argv=tuple(str(a) for a in argv),
            name=name,
            env={str(k): str(v) for k, v in (spec.get("env") or {}).items()} or None,
            handshake_timeout=float(spec.get("handshake_timeout", 30.0)),
            stderr_path=spec.get("stderr_path"),
        )

    gate_data = data.get("gate") or {}
    fusion_data = dict(data.get("fusion") or {})
    ranks = fusion_data.pop("ranks", None) or {"audio_visual": 1, "audio_only": 2}
    shot_data = data.get("shot") or {}

    try:
        return PipelineConfig(
            workspace=Path(data["workspace"]),
            workers=workers,
            task_workers={str(k): str(v) for k, v in (data.get("task_workers") or {}).items()},
            gate=GateConfig(**gate_data),
            fusion=FusionConfig(**fusion_data),
            ranks={str(k): int(v) for k, v in ranks.items()},
            shot=ShotConfig(**shot_data),
            min_clip_duration=float(data.get("min_clip_duration", 10.0)),
            churn_threshold=float(data.get("churn_threshold", 0.05)),
            concurrency=int(data.get("concurrency", 2)),
            request_timeout=float(data.get("request_timeout", 30.0)),
            target_resolution=str(data.get("target_resolution", "720p")),
            downloader=[str(a) for a in data["downloader"]] if data.get("downloader") else None,
            search_terms=list(data.get("search_terms") or []),
            fault_crash_after_stage=data.get("fault_crash_after_stage"),
        )
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def dump_config(config: PipelineConfig, path: Path) -> None:
    data = {
        "version": CONFIG_VERSION,
        "workspace": str(config.workspace),
        "concurrency": config.concurrency,
        "request_timeout": config.request_timeout,
        "target_resolution": config.target_resolution,
        "min_clip_duration": config.min_clip_duration,
        "churn_threshold": config.churn_threshold,
        "shot": {
            "threshold": config.shot.threshold,
            "min_scene_len": config.shot.min_scene_len,
            "analysis_max_width": config.shot.analysis_max_width,
        },
        "gate": {
            "ovrl_min": config.gate.ovrl_min,
            "vqa_min": config.gate.vqa_min,
            "max_abs_offset": config.gate.max_abs_offset,
            "conf_min": config.gate.conf_min,
            "min_source_duration": config.gate.min_source_duration,
        },
        "fusion": {
            "rank_exponent": config.fusion.rank_exponent,
            "ranks": config.ranks,
        },
        "workers": {
            name: {
                "argv": list(spec.argv),
                **({"env": dict(spec.env)} if spec.env else {}),
                **({"stderr_path": spec.stderr_path} if spec.stderr_path else {}),
            }
            for name, spec in config.workers.items()
        },
        "task_workers": config.task_workers,
        "downloader": config.downloader,
        "search_terms": config.search_terms,
    }
    if config.fault_crash_after_stage:
        data["fault_crash_after_stage"] = config.fault_crash_after_stage
    Path(path).write_text(yaml.safe_dump(data, sort_keys=False), encoding="utf-8")
