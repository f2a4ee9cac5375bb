"""Domain adapter bundles: manifest + prompt files, checkpointed patch history, context assembly."""

from __future__ import annotations

import json
import logging
import shutil
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional

import yaml

from .errors import (
    AdapterResolutionError,
    EmptyReason,
    GenerationIncomplete,
    UnknownCheckpoint,
    UnknownFile,
    UnknownRole,
)

log = logging.getLogger(__name__)

# canonical file set: the manifest plus ten prompt/knowledge documents
MANIFEST = "manifest"
PROMPT_FILES = (
    "domain_knowledge",
    "phase1_explorer",
    "phase2_builder",
    "phase2_critic",
    "phase2_tester",
    "phase3_strategist",
    "phase3_worker",
    "phase3_supervisor",
    "phase0_customizer",
    "phase0_generator",
)
FILE_NAMES = (MANIFEST,) + PROMPT_FILES

ROLE_PROMPTS = {
    "explorer": "phase1_explorer",
    "builder": "phase2_builder",
    "critic": "phase2_critic",
    "tester": "phase2_tester",
    "strategist": "phase3_strategist",
    "worker": "phase3_worker",
    "supervisor": "phase3_supervisor",
    "customizer": "phase0_customizer",
    "generator": "phase0_generator",
}

BUILTIN_DIR = Path(__file__).parent / "builtin_adapters"
CHECKPOINT_LOG = "checkpoints.journal"
BASE_SNAPSHOT = "checkpoints_base.json"


@dataclass
class ValidationIssue:
    code: str
    subject: str

    def __str__(self) -> str:
        return f"{self.code}({self.subject})"


@dataclass
class Checkpoint:
    id: int
    file: str
    reason: str
    author: str
    content: str


@dataclass
class ContextDoc:
    doc_id: str
    title: str
    text: str


@dataclass
class Manifest:
    domain: str
    metrics: list  # [{"name", "direction", "primary"}]
    experiment_structure: dict = field(default_factory=dict)
    entry_points: dict = field(default_factory=dict)

    def primary(self) -> Optional[dict]:
        primaries = [m for m in self.metrics if m.get("primary")]
        return primaries[0] if len(primaries) == 1 else None

    def to_dict(self) -> dict:
        return {
            "domain": self.domain,
            "metrics": self.metrics,
            "experiment_structure": self.experiment_structure,
            "entry_points": self.entry_points,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Manifest":
        return cls(
            domain=data.get("domain", ""),
            metrics=list(data.get("metrics", [])),
            experiment_structure=dict(data.get("experiment_structure", {})),
            entry_points=dict(data.get("entry_points", {})),
        )


class AdapterBundle:
    """Adapter files plus an append-only checkpoint history.

    Replaying every checkpoint over the initial snapshot reproduces the current
    files byte-exactly; that is a tested invariant, so all edits must go
    through patch_file.
    """

    def __init__(self, directory: Path, manifest: Manifest, files: dict, manifest_form: str = "yaml"):
        self.directory = Path(directory)
        self.manifest = manifest
        self.files = dict(files)  # prompt name -> content
        self.manifest_form = manifest_form  # write-back keeps the loaded form
        self.checkpoints: list[Checkpoint] = []
        self.base_files: dict = {}
        self.git_workdir: Optional[Path] = None  # commit per patch when set

    # -- construction -------------------------------------------------------

    @classmethod
    def load(cls, directory: Path) -> "AdapterBundle":
        directory = Path(directory)
        manifest_path, form = _find_manifest(directory)
        if manifest_path is None:
            raise UnknownFile(f"no adapter manifest under {directory}")
        raw = manifest_path.read_text(encoding="utf-8")
        data = yaml.safe_load(raw) if form == "yaml" else json.loads(raw)
        manifest = Manifest.from_dict(data or {})
        files = {}
        for name in PROMPT_FILES:
            path = directory / f"{name}.md"
            if path.exists():
                files[name] = path.read_text(encoding="utf-8")
        bundle = cls(directory, manifest, files, manifest_form=form)
        bundle._load_history()
        return bundle

    def _load_history(self) -> None:
        base_path = self.directory / BASE_SNAPSHOT
        if base_path.exists():
            self.base_files = json.loads(base_path.read_text(encoding="utf-8"))
        else:
            self.base_files = self._current_state()
            self._write_base()
        log_path = self.directory / CHECKPOINT_LOG
        if log_path.exists():
            for line in log_path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                rec = json.loads(line)
                self.checkpoints.append(Checkpoint(**rec))

    def _current_state(self) -> dict:
        state = {name: content for name, content in self.files.items()}
        state[MANIFEST] = self.manifest_text()
        return state

    def manifest_text(self) -> str:
        if self.manifest_form == "json":
            return json.dumps(self.manifest.to_dict(), sort_keys=True, indent=2) + "\n"
        return yaml.safe_dump(self.manifest.to_dict(), sort_keys=False)

    def _write_base(self) -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        path = self.directory / BASE_SNAPSHOT
        path.write_text(json.dumps(self.base_files, sort_keys=True, indent=2), encoding="utf-8")

    def write(self) -> None:
        """Write manifest and prompt files to the bundle directory."""
        self.directory.mkdir(parents=True, exist_ok=True)
        manifest_name = "manifest.yaml" if self.manifest_form == "yaml" else "manifest.json"
        (self.directory / manifest_name).write_text(self.manifest_text(), encoding="utf-8")
        for name, content in self.files.items():
            (self.directory / f"{name}.md").write_text(content, encoding="utf-8")
        if not (self.directory / BASE_SNAPSHOT).exists():
            self.base_files = self._current_state()
            self._write_base()

    # -- patch history ------------------------------------------------------

    def content_of(self, name: str) -> str:
        if name == MANIFEST:
            return self.manifest_text()
        if name not in FILE_NAMES:
            raise UnknownFile(f"unknown adapter file {name!r}")
        return self.files.get(name, "")

    def patch_file(self, name: str, new_content: str, reason: str, author: str) -> int:
        """Replace a file's content; appends a checkpoint and optionally commits to git."""
        if name not in FILE_NAMES:
            raise UnknownFile(f"unknown adapter file {name!r}")
        if not reason or not reason.strip():
            raise EmptyReason("patch reason must be non-empty")
        if name == MANIFEST:
            data = yaml.safe_load(new_content) if self.manifest_form == "yaml" else json.loads(new_content)
            self.manifest = Manifest.from_dict(data or {})
        else:
            self.files[name] = new_content
        cp = Checkpoint(id=len(self.checkpoints) + 1, file=name, reason=reason, author=author, content=new_content)
        self.checkpoints.append(cp)
        self._append_checkpoint(cp)
        self.write()
        self._maybe_git_commit(reason, author)
        return cp.id

    def _append_checkpoint(self, cp: Checkpoint) -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        with open(self.directory / CHECKPOINT_LOG, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(cp.__dict__, sort_keys=True) + "\n")

    def replay(self, upto: Optional[int] = None) -> dict:
        """File state reconstructed from the base snapshot plus checkpoints [1..upto]."""
        state = dict(self.base_files)
        for cp in self.checkpoints:
            if upto is not None and cp.id > upto:
                break
            state[cp.file] = cp.content
        return state

    def revert(self, checkpoint_id: int, author: str = "human") -> list[int]:
        """Restore files to their state as of checkpoint_id (0 = initial bundle).

        The restoration itself is recorded as ordinary patches, so replay stays exact.
        """
        if checkpoint_id < 0 or checkpoint_id > len(self.checkpoints):
            raise UnknownCheckpoint(f"no checkpoint {checkpoint_id}")
        target = self.replay(upto=checkpoint_id)
        new_ids = []
        for name in FILE_NAMES:
            want = target.get(name)
            if want is not None and self.content_of(name) != want:
                new_ids.append(self.patch_file(name, want, f"revert to checkpoint {checkpoint_id}", author))
        return new_ids

    def _maybe_git_commit(self, reason: str, author: str) -> None:
        if self.git_workdir is None:
            return
        try:
            subprocess.run(["git", "add", "-A", str(self.directory)], cwd=self.git_workdir, capture_output=True, timeout=30)
            subprocess.run(
                ["git", "commit", "-m", f"adapter: {reason}", "--author", f"{author} <{author}@campaign>"],
                cwd=self.git_workdir,
                capture_output=True,
                timeout=30,
            )
        except Exception as exc:  # the checkpoint log is authoritative; git is best-effort
            log.warning("adapter git commit failed: %s", exc)


def _find_manifest(directory: Path):
    for name, form in (("manifest.yaml", "yaml"), ("manifest.json", "json")):
        path = directory / name
        if path.exists():
            return path, form
    return None, None


def validate(bundle: AdapterBundle) -> list[ValidationIssue]:
    """Structural checks; an empty list means the bundle is usable."""
    issues = []
    for name in PROMPT_FILES:
        if name not in bundle.files:
            issues.append(ValidationIssue("missing_file", name))
    if "domain_knowledge" in bundle.files and not bundle.files["domain_knowledge"].strip():
        issues.append(ValidationIssue("empty_file", "domain_knowledge"))
    metrics = bundle.manifest.metrics
    if not metrics:
        issues.append(ValidationIssue("no_metrics", "manifest"))
    else:
        primaries = [m for m in metrics if m.get("primary")]
        if len(primaries) == 0:
            issues.append(ValidationIssue("no_primary_metric", "manifest"))
        elif len(primaries) > 1:
            issues.append(ValidationIssue("multiple_primary_metrics", "manifest"))
        for m in metrics:
            if m.get("direction") not in ("min", "max"):
                issues.append(ValidationIssue("bad_direction", str(m.get("name"))))
    return issues


def builtin_names() -> list[str]:
    if not BUILTIN_DIR.exists():
        return []
    return sorted(p.name for p in BUILTIN_DIR.iterdir() if p.is_dir())


def copy_builtin(domain: str, target: Path) -> None:
    src = BUILTIN_DIR / domain
    target.mkdir(parents=True, exist_ok=True)
    for path in src.iterdir():
        shutil.copy2(path, target / path.name)


@dataclass
class ResolveResult:
    mode: str  # "resume" | "customize" | "generate"
    bundle: AdapterBundle


def resolve(workspace: Path, domain: str, session_runner=None, builtin_set: Optional[Iterable[str]] = None) -> ResolveResult:
    """Decide how the campaign gets its adapter.

    Resume when a manifest already sits in the workspace; customize a shipped
    template when the domain names one exactly; otherwise generate the whole
    bundle with an agent session (one retry, then abort).
    """
    workspace = Path(workspace)
    adapter_dir = workspace / "adapter"
    manifest_path, _ = _find_manifest(adapter_dir)
    if manifest_path is not None:
        return ResolveResult("resume", AdapterBundle.load(adapter_dir))

    known = set(builtin_set) if builtin_set is not None else set(builtin_names())
    if domain in known:
        copy_builtin(domain, adapter_dir)
        bundle = AdapterBundle.load(adapter_dir)
        if session_runner is not None:
            session_runner.run_role_session(
                role="customizer",
                bundle=bundle,
                extras=[ContextDoc("task:customize", "Task", f"TASK: customize\nDOMAIN: {domain}\n"
                                   "Adjust the adapter files under adapter/ for this workspace's dataset.")],
                phase="phase0",
            )
            bundle = AdapterBundle.load(adapter_dir)
        return ResolveResult("customize", bundle)

    if session_runner is None:
        raise AdapterResolutionError(f"domain {domain!r} is not built in and no agent backend is configured")
    for attempt in (1, 2):
        session_runner.run_role_session(
            role="generator",
            bundle=None,
            extras=[
                ContextDoc(
                    "task:generate",
                    "Task",
                    "TASK: generate\nDOMAIN: {d}\nWrite the complete adapter bundle under adapter/: "
                    "manifest.yaml plus {files}.".format(d=domain, files=", ".join(f"{n}.md" for n in PROMPT_FILES)),
                )
            ],
            phase="phase0",
        )
        manifest_path, _ = _find_manifest(adapter_dir)
        missing = [] if manifest_path is not None else [MANIFEST]
        missing += [n for n in PROMPT_FILES if not (adapter_dir / f"{n}.md").exists()]
        if not missing:
            return ResolveResult("generate", AdapterBundle.load(adapter_dir))
        if attempt == 1:
            log.warning("adapter generation incomplete (%s); retrying once", ", ".join(missing))
        else:
            raise AdapterResolutionError(str(GenerationIncomplete(missing)))
    raise AdapterResolutionError("unreachable")


def assemble_context(bundle: AdapterBundle, role: str, extras: Iterable[ContextDoc] = ()) -> list[ContextDoc]:
    """Ordered context: domain knowledge always first, then the role prompt, then extras."""
    prompt_name = ROLE_PROMPTS.get(role)
    if prompt_name is None:
        raise UnknownRole(f"no role {role!r}")
    docs = [
        ContextDoc("adapter:domain_knowledge", "Domain knowledge", bundle.content_of("domain_knowledge")),
        ContextDoc(f"role:{role}", f"Role instructions ({role})", bundle.content_of(prompt_name)),
    ]
    docs.extend(extras)
    return docs
