"""Permissioned tamper-evident audit ledger.

Blocks of agent-action entries are hash-chained, Merkle-rooted and committed
by a single-round signed quorum over a static validator set (2f+1 of
N = 3f+1 votes). Serialization is canonical byte-for-byte: length-prefixed
UTF-8 strings, big-endian fixed-width integers, fields in declared order, so
identical entry sequences always produce identical chain bytes.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Optional

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .env import AgentRole, MitigationAction, OutcomeFlags

ZERO_HASH = bytes(32)

LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"


class LedgerError(Exception):
    pass


class AclViolation(LedgerError):
    pass


class RateLimited(LedgerError):
    pass


class DecodeError(LedgerError):
    pass


# -- Merkle tree -----------------------------------------------------------------


def _leaf_hash(leaf: bytes) -> bytes:
    return hashlib.sha256(LEAF_PREFIX + leaf).digest()


def _node_hash(left: bytes, right: bytes) -> bytes:
    return hashlib.sha256(NODE_PREFIX + left + right).digest()


def merkle_root(leaves: list[bytes]) -> bytes:
    """Root of the domain-separated tree; odd levels duplicate the last node.

    An empty list hashes to the leaf hash of the empty string.
    """
    if not leaves:
        return _leaf_hash(b"")
    level = [_leaf_hash(leaf) for leaf in leaves]
    while len(level) > 1:
        if len(level) % 2:
            level.append(level[-1])
        level = [_node_hash(level[i], level[i + 1]) for i in range(0, len(level), 2)]
    return level[0]


def merkle_proof(leaves: list[bytes], index: int) -> list[bytes]:
    """Sibling path from leaf `index` to the root."""
    if not (0 <= index < len(leaves)):
        raise IndexError(f"leaf index {index} out of range")
    level = [_leaf_hash(leaf) for leaf in leaves]
    path = []
    idx = index
    while len(level) > 1:
        if len(level) % 2:
            level.append(level[-1])
        sibling = idx + 1 if idx % 2 == 0 else idx - 1
        path.append(level[sibling])
        level = [_node_hash(level[i], level[i + 1]) for i in range(0, len(level), 2)]
        idx //= 2
    return path


def verify_proof(root: bytes, leaf: bytes, index: int, path: list[bytes]) -> bool:
    node = _leaf_hash(leaf)
    idx = index
    for sibling in path:
        if idx % 2 == 0:
            node = _node_hash(node, sibling)
        else:
            node = _node_hash(sibling, node)
        idx //= 2
    return node == root


# -- canonical serialization --------------------------------------------------


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack(">I", len(raw)) + raw


def _pack_bytes(b: bytes) -> bytes:
    return struct.pack(">I", len(b)) + b


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DecodeError("truncated record")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self.take(8))[0]

    def f64(self) -> float:
        return struct.unpack(">d", self.take(8))[0]

    def string(self) -> str:
        n = self.u32()
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError("invalid UTF-8") from exc

    def blob(self) -> bytes:
        return self.take(self.u32())

    def done(self) -> bool:
        return self.pos == len(self.data)


@dataclass(frozen=True)
class LedgerEntry:
    agent_id: str
    role: AgentRole
    signals_digest: bytes          # 32 bytes
    reasoning_summary: str
    action: MitigationAction
    outcome: OutcomeFlags
    timestamp: int                 # simulated-clock minutes

    def serialize(self) -> bytes:
        if len(self.signals_digest) != 32:
            raise LedgerError("signals_digest must be 32 bytes")
        return b"".join([
            _pack_str(self.agent_id),
            _pack_str(self.role.value),
            self.signals_digest,
            _pack_str(self.reasoning_summary),
            _pack_str(self.action.name),
            struct.pack(">BBB", int(self.outcome.attack_mitigated),
                        int(self.outcome.false_positive),
                        int(self.outcome.developer_accepted)),
            struct.pack(">d", self.outcome.build_delay),
            struct.pack(">Q", self.timestamp),
        ])

    @staticmethod
    def deserialize(data: bytes) -> "LedgerEntry":
        r = _Reader(data)
        agent_id = r.string()
        try:
            role = AgentRole(r.string())
        except ValueError as exc:
            raise DecodeError(str(exc)) from exc
        digest = r.take(32)
        summary = r.string()
        try:
            action = MitigationAction[r.string()]
        except KeyError as exc:
            raise DecodeError(f"unknown action {exc}") from exc
        m, fp, acc = struct.unpack(">BBB", r.take(3))
        if any(v not in (0, 1) for v in (m, fp, acc)):
            raise DecodeError("boolean flag byte must be 0 or 1")
        delay = r.f64()
        ts = r.u64()
        if not r.done():
            raise DecodeError("trailing bytes after entry")
        return LedgerEntry(agent_id, role, digest, summary, action,
                           OutcomeFlags(bool(m), bool(fp), bool(acc), delay), ts)


@dataclass(frozen=True)
class Block:
    index: int
    prev_hash: bytes
    merkle_root: bytes
    entries: tuple[LedgerEntry, ...]
    proposer: str
    signatures: tuple[tuple[str, bytes], ...]
    timestamp: int

    def header_bytes(self) -> bytes:
        return b"".join([
            struct.pack(">Q", self.index),
            self.prev_hash,
            self.merkle_root,
            _pack_str(self.proposer),
            struct.pack(">Q", self.timestamp),
        ])

    def hash(self) -> bytes:
        return hashlib.sha256(self.header_bytes()).digest()

    def serialize(self) -> bytes:
        out = [self.header_bytes(), struct.pack(">I", len(self.entries))]
        for e in self.entries:
            out.append(_pack_bytes(e.serialize()))
        out.append(struct.pack(">I", len(self.signatures)))
        for vid, sig in self.signatures:
            out.append(_pack_str(vid))
            out.append(_pack_bytes(sig))
        return b"".join(out)

    @staticmethod
    def deserialize(data: bytes) -> "Block":
        r = _Reader(data)
        index = r.u64()
        prev_hash = r.take(32)
        root = r.take(32)
        proposer = r.string()
        ts = r.u64()
        entries = tuple(LedgerEntry.deserialize(r.blob()) for _ in range(r.u32()))
        sigs = tuple((r.string(), r.blob()) for _ in range(r.u32()))
        if not r.done():
            raise DecodeError("trailing bytes after block")
        return Block(index, prev_hash, root, entries, proposer, sigs, ts)


def entries_root(entries: tuple[LedgerEntry, ...]) -> bytes:
    return merkle_root([e.serialize() for e in entries])


# -- validators and consensus ----------------------------------------------------


@dataclass
class ValidatorSet:
    validators: list[tuple[str, Ed25519PublicKey]]

    @property
    def n(self) -> int:
        return len(self.validators)

    @property
    def f(self) -> int:
        return (self.n - 1) // 3

    @property
    def quorum(self) -> int:
        return 2 * self.f + 1

    def public_key(self, vid: str) -> Optional[Ed25519PublicKey]:
        for v, key in self.validators:
            if v == vid:
                return key
        return None

    def ids(self) -> list[str]:
        return [v for v, _ in self.validators]


def generate_validators(n: int, seed: int) -> tuple[ValidatorSet, dict[str, Ed25519PrivateKey]]:
    """Deterministic validator keypairs derived from a seed."""
    keys: dict[str, Ed25519PrivateKey] = {}
    members = []
    for i in range(n):
        raw = hashlib.sha256(f"validator|{seed}|{i}".encode()).digest()
        priv = Ed25519PrivateKey.from_private_bytes(raw)
        vid = f"validator-{i}"
        keys[vid] = priv
        members.append((vid, priv.public_key()))
    return ValidatorSet(members), keys


@dataclass(frozen=True)
class Committed:
    signatures: tuple[tuple[str, bytes], ...]


@dataclass(frozen=True)
class Aborted:
    reason: str
    valid_votes: int
    verdicts: dict


HONEST, SILENT, REJECT, EQUIVOCATE = "honest", "silent", "reject", "equivocate"


def _honest_verdict(block: Block, expected_prev: bytes, acl: "AclPolicy") -> str:
    if block.prev_hash != expected_prev:
        return "bad_prev_hash"
    if block.merkle_root != entries_root(block.entries):
        return "bad_merkle_root"
    for e in block.entries:
        if not check_write_acl(acl, e.role, e):
            return "acl_violation"
    return "ok"


def bft_commit(
    validators: ValidatorSet,
    signing_keys: dict[str, Ed25519PrivateKey],
    block: Block,
    behaviors: dict[str, str],
    expected_prev_hash: bytes,
    acl: "AclPolicy",
) -> Committed | Aborted:
    """Single-round signed-quorum commit over a static validator set.

    Every honest validator independently re-verifies the block and returns a
    signed vote over the block hash; the block commits on 2f+1 valid distinct
    signatures. Equivocating validators sign a conflicting payload, which
    fails verification against this block and is discarded.
    """
    block_digest = block.hash()
    votes: list[tuple[str, bytes]] = []
    verdicts: dict[str, str] = {}
    for vid, _pub in validators.validators:
        behavior = behaviors.get(vid, HONEST)
        if behavior == SILENT:
            verdicts[vid] = "silent"
            continue
        if behavior == REJECT:
            verdicts[vid] = "reject"
            continue
        key = signing_keys[vid]
        if behavior == EQUIVOCATE:
            conflicting = hashlib.sha256(block_digest + b"conflict").digest()
            votes.append((vid, key.sign(conflicting)))
            verdicts[vid] = "equivocate"
            continue
        verdict = _honest_verdict(block, expected_prev_hash, acl)
        verdicts[vid] = verdict
        if verdict == "ok":
            votes.append((vid, key.sign(block_digest)))

    valid: list[tuple[str, bytes]] = []
    seen: set[str] = set()
    for vid, sig in votes:
        pub = validators.public_key(vid)
        if pub is None or vid in seen:
            continue
        try:
            pub.verify(sig, block_digest)
        except InvalidSignature:
            continue  # conflicting or malformed vote
        valid.append((vid, sig))
        seen.add(vid)
    if len(valid) >= validators.quorum:
        return Committed(tuple(valid))
    return Aborted(
        reason=f"{len(valid)} valid votes < quorum {validators.quorum}",
        valid_votes=len(valid),
        verdicts=verdicts,
    )


# -- access control, rate limiting, staking -------------------------------------


@dataclass
class AclPolicy:
    allowed: dict[AgentRole, frozenset[MitigationAction]]

    def permits(self, role: AgentRole, action: MitigationAction) -> bool:
        return action in self.allowed.get(role, frozenset())


def default_acl() -> AclPolicy:
    everything = frozenset(MitigationAction)
    observer = frozenset({
        MitigationAction.ALLOW_CONTINUE,
        MitigationAction.REQUEST_REVIEW,
    })
    return AclPolicy({
        AgentRole.CICD_MONITORING: everything,
        AgentRole.CODE_ANALYSIS: observer | {MitigationAction.OPEN_GUARD_PULL_REQUEST},
        AgentRole.DEPENDENCY_INTELLIGENCE: observer | {MitigationAction.QUARANTINE_DEPENDENCY},
        AgentRole.ACCESS_CONTROL: observer | {MitigationAction.REVOKE_CREDENTIALS},
        AgentRole.CONFIGURATION_AUDIT: observer | {MitigationAction.APPLY_CONFIG_PATCH},
    })


def acl_from_dict(obj: dict) -> AclPolicy:
    allowed = {}
    for role_name, actions in obj.items():
        allowed[AgentRole(role_name)] = frozenset(
            MitigationAction[a] for a in actions
        )
    return AclPolicy(allowed)


def acl_to_dict(policy: AclPolicy) -> dict:
    return {
        role.value: sorted(a.name for a in actions)
        for role, actions in policy.allowed.items()
    }


def check_write_acl(policy: AclPolicy, role: AgentRole, entry: LedgerEntry) -> bool:
    return policy.permits(role, entry.action)


@dataclass
class RateLimiter:
    """Per-agent token bucket over the simulated clock."""

    capacity: int = 10
    refill_per_minute: float = 1.0
    _buckets: dict = field(default_factory=dict)

    def consume(self, agent_id: str, now: float) -> bool:
        tokens, last = self._buckets.get(agent_id, (float(self.capacity), now))
        tokens = min(float(self.capacity), tokens + max(0.0, now - last) * self.refill_per_minute)
        if tokens >= 1.0:
            self._buckets[agent_id] = (tokens - 1.0, now)
            return True
        self._buckets[agent_id] = (tokens, now)
        return False


@dataclass(frozen=True)
class StakeAccount:
    agent_id: str
    balance: int
    penalties_applied: int = 0


@dataclass
class StakeRegistry:
    accounts: dict[str, StakeAccount] = field(default_factory=dict)
    initial_balance: int = 100

    def register(self, agent_id: str) -> None:
        self.accounts.setdefault(
            agent_id, StakeAccount(agent_id, self.initial_balance)
        )

    def balance(self, agent_id: str) -> int:
        return self._get(agent_id).balance

    def exhausted(self, agent_id: str) -> bool:
        return self._get(agent_id).balance <= 0

    def _get(self, agent_id: str) -> StakeAccount:
        if agent_id not in self.accounts:
            raise LedgerError(f"unknown agent id: {agent_id}")
        return self.accounts[agent_id]


def apply_penalty(stakes: StakeRegistry, agent_id: str, amount: int) -> StakeAccount:
    account = stakes._get(agent_id)
    updated = StakeAccount(
        agent_id=agent_id,
        balance=max(0, account.balance - amount),
        penalties_applied=account.penalties_applied + 1,
    )
    stakes.accounts[agent_id] = updated
    return updated


def consume_rate_token(limiter: RateLimiter, agent_id: str, now: float,
                       stakes: Optional[StakeRegistry] = None) -> bool:
    if stakes is not None and stakes.exhausted(agent_id):
        return False
    return limiter.consume(agent_id, now)


# -- chain operations ------------------------------------------------------------


def make_genesis(validators: ValidatorSet, signing_keys: dict[str, Ed25519PrivateKey],
                 acl: AclPolicy, timestamp: int = 0) -> Block:
    block = Block(
        index=0,
        prev_hash=ZERO_HASH,
        merkle_root=entries_root(()),
        entries=(),
        proposer=validators.ids()[0],
        signatures=(),
        timestamp=timestamp,
    )
    result = bft_commit(validators, signing_keys, block, {}, ZERO_HASH, acl)
    assert isinstance(result, Committed)
    return Block(**{**block.__dict__, "signatures": result.signatures})


def append_block(
    chain: list[Block],
    entries: list[LedgerEntry],
    proposer: str,
    validators: ValidatorSet,
    signing_keys: dict[str, Ed25519PrivateKey],
    acl: AclPolicy,
    limiter: Optional[RateLimiter] = None,
    stakes: Optional[StakeRegistry] = None,
    behaviors: Optional[dict[str, str]] = None,
    timestamp: Optional[int] = None,
) -> Block:
    """Validate, commit and append one block; raises on any rejection."""
    if not chain:
        raise LedgerError("chain must start with a genesis block")
    if proposer not in validators.ids():
        raise LedgerError(f"proposer {proposer!r} is not a validator")
    for e in entries:
        if not check_write_acl(acl, e.role, e):
            if stakes is not None and e.agent_id in stakes.accounts:
                apply_penalty(stakes, e.agent_id, 1)
            raise AclViolation(
                f"role {e.role.value} may not record action {e.action.name}"
            )
        if limiter is not None:
            if not consume_rate_token(limiter, e.agent_id, float(e.timestamp), stakes):
                if stakes is not None and e.agent_id in stakes.accounts:
                    apply_penalty(stakes, e.agent_id, 1)
                raise RateLimited(f"agent {e.agent_id} exceeded its submission rate")
    prev = chain[-1]
    block = Block(
        index=prev.index + 1,
        prev_hash=prev.hash(),
        merkle_root=entries_root(tuple(entries)),
        entries=tuple(entries),
        proposer=proposer,
        signatures=(),
        timestamp=timestamp if timestamp is not None else prev.timestamp + 1,
    )
    result = bft_commit(validators, signing_keys, block, behaviors or {},
                        prev.hash(), acl)
    if isinstance(result, Aborted):
        raise LedgerError(f"consensus aborted: {result.reason}")
    committed = Block(**{**block.__dict__, "signatures": result.signatures})
    chain.append(committed)
    return committed


@dataclass(frozen=True)
class ChainValid:
    pass


@dataclass(frozen=True)
class ChainInvalid:
    first_bad_index: int
    reason: str  # hash_link | merkle_mismatch | quorum | signature | acl | encoding


def verify_chain(chain: list[Block], validators: ValidatorSet,
                 acl: AclPolicy) -> ChainValid | ChainInvalid:
    """Recompute every linkage, root, signature, quorum and ACL check."""
    for i, block in enumerate(chain):
        if i == 0:
            if block.prev_hash != ZERO_HASH or block.index != 0:
                return ChainInvalid(0, "hash_link")
        else:
            if block.prev_hash != chain[i - 1].hash() or block.index != i:
                return ChainInvalid(i, "hash_link")
        if block.merkle_root != entries_root(block.entries):
            return ChainInvalid(i, "merkle_mismatch")
        digest = block.hash()
        seen: set[str] = set()
        for vid, sig in block.signatures:
            pub = validators.public_key(vid)
            if pub is None or vid in seen:
                return ChainInvalid(i, "signature")
            try:
                pub.verify(sig, digest)
            except InvalidSignature:
                return ChainInvalid(i, "signature")
            seen.add(vid)
        if len(seen) < validators.quorum:
            return ChainInvalid(i, "quorum")
        for e in block.entries:
            if not check_write_acl(acl, e.role, e):
                return ChainInvalid(i, "acl")
    return ChainValid()


# -- flat-file persistence -------------------------------------------------------


def write_chain(chain: list[Block], path: str) -> None:
    with open(path, "wb") as fh:
        for block in chain:
            raw = block.serialize()
            fh.write(struct.pack(">I", len(raw)))
            fh.write(raw)


def read_chain(path: str) -> list[Block]:
    """Parse a ledger file; raises DecodeError with the failing block index."""
    with open(path, "rb") as fh:
        data = fh.read()
    blocks: list[Block] = []
    pos = 0
    while pos < len(data):
        try:
            if pos + 4 > len(data):
                raise DecodeError("truncated length prefix")
            (length,) = struct.unpack(">I", data[pos:pos + 4])
            if pos + 4 + length > len(data):
                raise DecodeError("truncated block payload")
            blocks.append(Block.deserialize(data[pos + 4:pos + 4 + length]))
        except DecodeError as exc:
            raise DecodeError(f"block {len(blocks)}: {exc}") from exc
        pos += 4 + length
    return blocks


def verify_chain_file(path: str, validators: ValidatorSet,
                      acl: AclPolicy) -> ChainValid | ChainInvalid:
    try:
        chain = read_chain(path)
    except DecodeError as exc:
        text = str(exc)
        idx = int(text.split(":", 1)[0].split()[1]) if text.startswith("block ") else 0
        return ChainInvalid(idx, "encoding")
    return verify_chain(chain, validators, acl)
