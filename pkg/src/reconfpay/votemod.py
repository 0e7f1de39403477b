"""Server voting module: SUPPORT emission and motion-passed detection.

A server supports a motion once its own committed log carries enough voting
weight (at least half the minted supply, and somebody actually voted). A
quorum of SUPPORT messages for one (motion, view) forms a voting proof; the
first assembly gossips the proof so joiners and removal targets learn it.
"""

from __future__ import annotations

from .authenticity import SignedEnvelope
from .core import MotionId, View, Vote, support
from .messages import MotionPassed, Support, VotingProof


class VotingModule:
    def __init__(self, server):
        self.server = server
        self.ctx = server.ctx
        self.support_from: dict[tuple[MotionId, View], set] = {}
        self.supports: dict[tuple[MotionId, View], set[SignedEnvelope]] = {}
        self.supported: set[tuple[MotionId, bytes]] = set()
        self.passed: dict[MotionId, VotingProof] = {}
        self._dirty_support = True
        self._dirty_passed = True

    def mark_log_changed(self) -> None:
        self._dirty_support = True

    def rule_support(self) -> bool:
        if not self._dirty_support:
            return False
        reconf = self.server.reconfig
        if not (reconf.installed and reconf.processing):
            return False
        view = reconf.current_view
        log = frozenset(self.server.tx.log)
        motions = sorted({tx.motion for tx in log if isinstance(tx, Vote)})
        for motion in motions:
            key = (motion, self.server.view_digest(view))
            if key in self.supported:
                continue
            if not support(log, motion, self.ctx.balances):
                continue
            self.supported.add(key)
            path = self.server.storage.view_path[view]
            self.ctx.broadcast(view.members(), Support(motion, view, path))
            self.ctx.emit(
                "support",
                motion,
                view=self.server.view_digest(view),
                tally=self._tally(log, motion),
            )
            return True
        self._dirty_support = False
        return False

    def _tally(self, log, motion) -> int:
        from .core import voted_for

        return voted_for(log, motion, self.ctx.balances)

    def rule_support_receipt(self) -> bool:
        for env in self.server.take_bucket(Support):
            m: Support = env.payload
            if env.sender not in m.view.members():
                continue
            if not self.ctx.verifier.path_ok(m.path, m.view):
                continue
            self.server.consume(env)
            key = (m.motion, m.view)
            senders = self.support_from.setdefault(key, set())
            if env.sender not in senders:
                senders.add(env.sender)
                self.supports.setdefault(key, set()).add(env)
                self._dirty_passed = True
            return True
        return False

    def rule_motion_passed(self) -> bool:
        if not self._dirty_passed:
            return False
        for (motion, view), senders in self.support_from.items():
            if motion in self.passed or not view.members():
                continue
            if len(senders) < view.quorum():
                continue
            proof: VotingProof = frozenset(self.supports[(motion, view)])
            self.passed[motion] = proof
            self.ctx.emit("motion-passed", motion, view=self.server.view_digest(view))
            self.ctx.gossip(MotionPassed(motion, proof))
            self.server.reconfig.on_voting_proof(motion, proof)
            return True
        self._dirty_passed = False
        return False

    def on_passed_gossip(self, motion: MotionId, proof: VotingProof) -> None:
        if motion not in self.passed:
            self.passed[motion] = proof
