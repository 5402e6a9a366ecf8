"""Content-addressed, agent-attributed versioned store with compare-and-swap refs."""
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Set, Tuple, Union

from models.envelope import require_agent_id
from tools.envelope_codec import canonical_json

logger = logging.getLogger(__name__)


class UnknownRef(KeyError):
    pass


class UnknownAuthor(ValueError):
    pass


def content_hash(content: bytes) -> str:
    return hashlib.sha256(content).hexdigest()


@dataclass(frozen=True)
class StateObject:
    content: bytes
    digest: str

    @classmethod
    def of(cls, content: bytes) -> "StateObject":
        return cls(content=bytes(content), digest=content_hash(content))


@dataclass(frozen=True)
class Commit:
    parents: Tuple[str, ...]
    author: str
    timestamp_us: int
    tree: Mapping[str, str]  # path -> object hash
    message: str = ""

    def __post_init__(self):
        if not self.author:
            raise ValueError("commit author must be non-empty")

    def document(self) -> dict:
        return {
            "author": self.author,
            "message": self.message,
            "parents": list(self.parents),
            "timestamp_us": self.timestamp_us,
            "tree": dict(sorted(self.tree.items())),
        }

    @property
    def commit_id(self) -> str:
        return content_hash(canonical_json(self.document()))


@dataclass
class RefHead:
    name: str
    current: Optional[str] = None
    history: List[str] = field(default_factory=list)


@dataclass(frozen=True)
class ConflictReport:
    ref: str
    author: str
    expected_parent: Optional[str]
    current_head: Optional[str]
    diverging_paths: Tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "ref": self.ref,
            "author": self.author,
            "expected_parent": self.expected_parent,
            "current_head": self.current_head,
            "diverging_paths": list(self.diverging_paths),
        }


@dataclass(frozen=True)
class StateRef:
    """What travels in an envelope instead of a document copy"""
    ref: str
    commit_id: str
    path: str

    def to_payload(self) -> dict:
        return {"ref": self.ref, "commit": self.commit_id, "path": self.path}

    @classmethod
    def from_payload(cls, body: Mapping) -> "StateRef":
        return cls(ref=body["ref"], commit_id=body["commit"], path=body["path"])


CommitResult = Union[str, ConflictReport]


class StateStore:
    """Objects by hash, commits by id, and single-head linear refs"""

    def __init__(self, authors: Iterable[str] = ()):
        self.objects: Dict[str, bytes] = {}
        self.commits: Dict[str, Commit] = {}
        self.refs: Dict[str, RefHead] = {}
        self.authors: Set[str] = set()
        self.conflicts: List[ConflictReport] = []
        for author in authors:
            self.register_author(author)

    def register_author(self, author: str) -> None:
        self.authors.add(require_agent_id(author))

    def put_object(self, content: bytes) -> str:
        obj = StateObject.of(content)
        self.objects.setdefault(obj.digest, obj.content)
        return obj.digest

    def get_object(self, digest: str) -> bytes:
        return self.objects[digest]

    def create_ref(self, name: str) -> RefHead:
        if name in self.refs:
            raise ValueError(f"ref {name!r} already exists")
        head = RefHead(name=name)
        self.refs[name] = head
        return head

    def ref(self, name: str) -> RefHead:
        try:
            return self.refs[name]
        except KeyError:
            raise UnknownRef(name) from None

    def tree_at(self, commit_id: Optional[str]) -> Dict[str, str]:
        if commit_id is None:
            return {}
        return dict(self.commits[commit_id].tree)

    def _changed_paths(self, parent: Optional[str], child: str) -> Set[str]:
        before, after = self.tree_at(parent), self.tree_at(child)
        return {path for path in set(before) | set(after) if before.get(path) != after.get(path)}

    def _paths_since(self, base: Optional[str], head: Optional[str]) -> Set[str]:
        """Paths touched by commits on the ref after base"""
        paths: Set[str] = set()
        cursor = head
        while cursor is not None and cursor != base:
            commit = self.commits[cursor]
            parent = commit.parents[0] if commit.parents else None
            paths |= self._changed_paths(parent, cursor)
            cursor = parent
        return paths

    def commit(self, ref_name: str, expected_parent: Optional[str], author: str,
               changes: Mapping[str, bytes], timestamp_us: int, message: str = "") -> CommitResult:
        """Compare-and-swap commit: applies all changes or none"""
        head = self.ref(ref_name)
        if author not in self.authors:
            raise UnknownAuthor(f"author {author!r} is not registered")
        if head.current != expected_parent:
            report = ConflictReport(
                ref=ref_name,
                author=author,
                expected_parent=expected_parent,
                current_head=head.current,
                diverging_paths=tuple(sorted(self._paths_since(expected_parent, head.current) & set(changes))),
            )
            self.conflicts.append(report)
            logger.warning("commit conflict on %s by %s (expected %s, head %s)",
                           ref_name, author, expected_parent, head.current)
            return report

        tree = self.tree_at(head.current)
        for path, content in changes.items():
            tree[path] = self.put_object(content)
        parents = (head.current,) if head.current else ()
        new_commit = Commit(parents=parents, author=author, timestamp_us=timestamp_us,
                            tree=tree, message=message)
        commit_id = new_commit.commit_id
        self.commits[commit_id] = new_commit
        head.current = commit_id
        head.history.append(commit_id)
        logger.debug("%s advanced to %s by %s", ref_name, commit_id[:12], author)
        return commit_id

    def resolve(self, state_ref: StateRef) -> bytes:
        self.ref(state_ref.ref)
        tree = self.tree_at(state_ref.commit_id)
        return self.get_object(tree[state_ref.path])

    def read(self, ref_name: str, path: str) -> Optional[bytes]:
        tree = self.tree_at(self.ref(ref_name).current)
        return self.get_object(tree[path]) if path in tree else None

    def history(self, ref_name: str) -> List[str]:
        """Commit ids the ref has pointed at, oldest first"""
        return list(self.ref(ref_name).history)

    # --- Export / import ---

    def export(self, directory: str) -> None:
        """Hash-named object files plus a refs manifest and commit index"""
        objects_dir = os.path.join(directory, "objects")
        os.makedirs(objects_dir, exist_ok=True)
        for digest, content in sorted(self.objects.items()):
            with open(os.path.join(objects_dir, digest), "wb") as fh:
                fh.write(content)
        manifest = {
            "authors": sorted(self.authors),
            "commits": {cid: commit.document() for cid, commit in sorted(self.commits.items())},
            "refs": {name: {"current": head.current, "history": head.history}
                     for name, head in sorted(self.refs.items())},
        }
        with open(os.path.join(directory, "refs.json"), "wb") as fh:
            fh.write(canonical_json(manifest))

    @classmethod
    def import_from(cls, directory: str) -> "StateStore":
        with open(os.path.join(directory, "refs.json"), "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        store = cls(manifest.get("authors", []))
        objects_dir = os.path.join(directory, "objects")
        for name in sorted(os.listdir(objects_dir)):
            with open(os.path.join(objects_dir, name), "rb") as fh:
                content = fh.read()
            obj = StateObject.of(content)
            if obj.digest != name:
                raise ValueError(f"object {name} does not match its content hash")
            store.objects[name] = obj.content
        for cid, doc in manifest["commits"].items():
            commit = Commit(parents=tuple(doc["parents"]), author=doc["author"],
                            timestamp_us=doc["timestamp_us"], tree=doc["tree"], message=doc["message"])
            if commit.commit_id != cid:
                raise ValueError(f"commit {cid} does not match its content")
            store.commits[cid] = commit
        for name, head in manifest["refs"].items():
            store.refs[name] = RefHead(name=name, current=head["current"], history=list(head["history"]))
        return store


def measure_divergence(views: Mapping[str, bytes]) -> int:
    """Distinct content hashes among the copies agents hold of one document"""
    return len({content_hash(content) for content in views.values()})


def import_store(directory: str) -> StateStore:
    return StateStore.import_from(directory)
