"""User registry: accounts, login state, and the user hierarchy.

Backed by one JSON file rewritten atomically on every change.  Login
state is runtime-only in spirit: reloading the file (a server restart)
logs everyone out.  Tokens are random 32-byte hex strings compared in
constant time; this is a device-pairing secret, not a password system.
"""

from __future__ import annotations

import hmac
import json
import os
import secrets
import tempfile
import threading
import uuid
from dataclasses import dataclass, field

from sara.errors import (
    BadToken,
    ConfigError,
    DuplicateName,
    UnknownUser,
    UserStillLoggedIn,
)


@dataclass
class UserRecord:
    user_id: str
    name: str
    secret_token: str
    logged_in: bool = False


class UsersService:
    """Thread-safe account store with an optional user tree on top."""

    def __init__(self, path: str | None = None):
        self._path = path
        self._lock = threading.RLock()
        self._users: dict[str, UserRecord] = {}
        self._parent: dict[str, str] = {}
        if path is not None and os.path.exists(path):
            self._load()

    # --- registry ---

    def register(self, name: str) -> tuple[str, str]:
        with self._lock:
            if any(u.name == name for u in self._users.values()):
                raise DuplicateName(f"user name {name!r} already taken")
            user_id = str(uuid.uuid4())
            token = secrets.token_hex(32)
            self._users[user_id] = UserRecord(user_id=user_id, name=name,
                                              secret_token=token)
            self._persist()
            return user_id, token

    def ensure_user(self, user_id: str) -> UserRecord:
        """Open-mode connect path: auto-create an account named after the id."""
        with self._lock:
            record = self._users.get(user_id)
            if record is not None:
                return record
            if any(u.name == user_id for u in self._users.values()):
                raise DuplicateName(
                    f"user id {user_id!r} collides with a registered name")
            record = UserRecord(user_id=user_id, name=user_id,
                                secret_token=secrets.token_hex(32))
            self._users[user_id] = record
            self._persist()
            return record

    def remove(self, user_id: str) -> None:
        with self._lock:
            record = self._require(user_id)
            if record.logged_in:
                raise UserStillLoggedIn(f"user {user_id} is still logged in")
            del self._users[user_id]
            self._parent.pop(user_id, None)
            for child, parent in list(self._parent.items()):
                if parent == user_id:
                    del self._parent[child]
            self._persist()

    def login(self, user_id: str, token: str) -> UserRecord:
        with self._lock:
            record = self._require(user_id)
            if not hmac.compare_digest(record.secret_token, token):
                raise BadToken(f"wrong token for user {user_id}")
            record.logged_in = True
            self._persist()
            return record

    def logout(self, user_id: str) -> None:
        with self._lock:
            self._require(user_id).logged_in = False
            self._persist()

    def get(self, user_id: str) -> UserRecord:
        with self._lock:
            return self._require(user_id)

    def has_user(self, user_id: str) -> bool:
        with self._lock:
            return user_id in self._users

    def user_ids(self) -> list[str]:
        with self._lock:
            return list(self._users)

    def _require(self, user_id: str) -> UserRecord:
        record = self._users.get(user_id)
        if record is None:
            raise UnknownUser(f"no user with id {user_id!r}")
        return record

    # --- hierarchy ---

    def set_parent(self, child_id: str, parent_id: str) -> None:
        with self._lock:
            self._require(child_id)
            self._require(parent_id)
            current = parent_id
            while current is not None:
                if current == child_id:
                    raise ConfigError("user hierarchy must stay acyclic")
                current = self._parent.get(current)
            self._parent[child_id] = parent_id
            self._persist()

    def parent_of(self, user_id: str) -> str | None:
        with self._lock:
            return self._parent.get(user_id)

    def is_ancestor(self, a: str, b: str) -> bool:
        """True iff a sits strictly above b in the tree."""
        with self._lock:
            current = self._parent.get(b)
            while current is not None:
                if current == a:
                    return True
                current = self._parent.get(current)
            return False

    def rank(self, user_id: str) -> int:
        """Depth below the root: a root user ranks 0."""
        with self._lock:
            self._require(user_id)
            depth = 0
            current = self._parent.get(user_id)
            while current is not None:
                depth += 1
                current = self._parent.get(current)
            return depth

    # --- persistence ---

    def _load(self) -> None:
        try:
            with open(self._path, encoding="utf-8") as fh:
                doc = json.load(fh)
            users = {}
            for entry in doc.get("users", []):
                record = UserRecord(
                    user_id=entry["user_id"], name=entry["name"],
                    secret_token=entry["secret_token"], logged_in=False)
                users[record.user_id] = record
            parent = dict(doc.get("hierarchy", {}))
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ConfigError(f"users database unreadable: {exc}") from None
        self._users = users
        self._parent = {k: v for k, v in parent.items() if k in users and v in users}

    def _persist(self) -> None:
        if self._path is None:
            return
        doc = {
            "users": [
                {"user_id": u.user_id, "name": u.name,
                 "secret_token": u.secret_token, "logged_in": u.logged_in}
                for u in self._users.values()
            ],
            "hierarchy": dict(self._parent),
        }
        directory = os.path.dirname(os.path.abspath(self._path))
        os.makedirs(directory, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(doc, fh, indent=2, sort_keys=True)
            os.replace(tmp, self._path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
