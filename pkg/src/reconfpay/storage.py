"""Server storage module: message inbox, view history, install index.

`waiting` keeps every verified envelope until some rule consumes it, bucketed
by payload type so rules only scan what they can handle. INSTALL messages
are indexed once, re-gossiped, and feed the source/sequence/view-path maps;
an INSTALL whose source is not yet in the history simply stays parked until
the history catches up.
"""

from __future__ import annotations

from .authenticity import SignedEnvelope
from .codec import digest
from .core import View
from .messages import Install, ViewPath


class StorageState:
    def __init__(self, server):
        self.server = server
        self.ctx = server.ctx
        self.waiting: dict[bytes, SignedEnvelope] = {}
        self.buckets: dict[type, list[SignedEnvelope]] = {}
        self.history: list[View] = [self.ctx.genesis]
        self.install_messages: dict[bytes, Install] = {}
        self.install_by_pair: dict[tuple[bytes, bytes], Install] = {}
        self.source: dict[View, View | None] = {self.ctx.genesis: None}
        self.sequence: dict[View, frozenset[View] | None] = {self.ctx.genesis: None}
        self.view_path: dict[View, ViewPath] = {self.ctx.genesis: ()}

    # -- inbox ---------------------------------------------------------------

    def receive(self, env: SignedEnvelope) -> None:
        dig = env.digest()
        if dig in self.waiting:
            return
        self.waiting[dig] = env
        self.buckets.setdefault(type(env.payload), []).append(env)

    def bucket(self, payload_type: type) -> list[SignedEnvelope]:
        return self.buckets.get(payload_type, [])

    def consume(self, env: SignedEnvelope) -> None:
        self.waiting.pop(env.digest(), None)
        bucket = self.buckets.get(type(env.payload))
        if bucket is not None and env in bucket:
            bucket.remove(env)

    # -- install indexing -------------------------------------------------------

    def rule_process_install(self) -> bool:
        for env in list(self.bucket(Install)):
            m: Install = env.payload
            if m.source not in self.source:
                continue  # source not in history yet; stays parked
            mdig = digest(m)
            if mdig in self.install_messages:
                self.consume(env)
                continue
            if not self.ctx.verifier.install_ok(m):
                continue  # invalid certificate: never consumable
            self.consume(env)
            self.index_install(m)
            return True
        return False

    def index_install(self, m: Install) -> None:
        mdig = digest(m)
        if mdig in self.install_messages:
            return
        self.install_messages[mdig] = m
        self.install_by_pair.setdefault((digest(m.source), digest(m.views)), m)
        self.server.reconfig.extract_requests_and_voting_proofs(m)
        dest = m.destination()
        if dest not in self.source:
            self.history.append(dest)
            self.server.log_view(dest)
            self.ctx.emit(
                "history-extended",
                digest(dest),
                view=self.server.view_digest(dest),
            )
            self.source[dest] = m.source
            self.sequence[dest] = m.views
            self.view_path[dest] = self.view_path[m.source] + (m,)
        elif self.source[dest] is not None and m.source < self.source[dest]:
            self.source[dest] = m.source
            self.sequence[dest] = m.views
            self.view_path[dest] = self.view_path[m.source] + (m,)
        self.ctx.gossip(m)
