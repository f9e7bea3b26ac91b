"""The exchange roles: authority, engines, admin, producer, consumer.

Producers encrypt locally and hand the result to the internal engine,
which adds the deployment's updatable policy layers and stores the
ciphertext. Policy updates replace those layers without touching the
payload or involving the producer. Consumers fetch through the external
engine, which wraps a per-request time-gate layer requiring a key newer
than the last recorded security incident.

Every stored (updatable) layer policy is augmented to
``(AP_i OR ENGINE_UPDATE)`` and the authority issues the internal engine
a key carrying exactly the ENGINE_UPDATE attribute; that is what lets the
engine peel stale layers during an update while remaining unable to open
the producer's base layer.
"""

from __future__ import annotations

import base64
import json
import os
import threading
from pathlib import Path
from typing import Callable

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.scrypt import Scrypt

from ..abe import (
    MasterKeyPair,
    MasterPublicKey,
    MasterSecretKey,
    Rng,
    UserSecretKey,
    keygen,
    setup,
)
from ..containers import HybridCiphertext
from ..errors import (
    AlreadyInitialized,
    NotFound,
    NotInitialized,
    Unauthorized,
)
from ..hybrid import hybrid_encrypt
from ..multilayer import ENGINE_UPDATE_ATTRIBUTE, add_layers, augment_for_engine, update_outer_layers
from ..policy import (
    AccessPolicy,
    AttributeSet,
    Cmp,
    TIMESTAMP_ATTRIBUTE,
    parse_policy,
)
from .storage import (
    CtRecord,
    CtStore,
    LogicalClock,
    PolicyStore,
    SecurityEventLog,
    SystemClock,
    atomic_write,
)
from .transport import ServiceClient, ServiceServer, TransportTap

ENGINE_REQUESTER_ID = "internal-ct-engine"

_SCRYPT_N = 2**14
_SCRYPT_R = 8
_SCRYPT_P = 1


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def _unb64(text: str) -> bytes:
    return base64.b64decode(text)


# ---------------------------------------------------------------------------
# Attribute Authority
# ---------------------------------------------------------------------------

class AttributeAuthority:
    """Holds the master secret; issues timestamped user keys.

    The master secret never leaves this object: it is persisted encrypted
    under an operator passphrase and only key material derived from it
    (user keys, public parameters) is ever returned.
    """

    def __init__(self, data_dir: Path, passphrase: str, clock: LogicalClock,
                 allowlist: dict[str, list[str]], k_bits: int = 256,
                 rng: Rng = os.urandom):
        self._dir = Path(data_dir)
        self._dir.mkdir(parents=True, exist_ok=True)
        self._passphrase = passphrase.encode("utf-8")
        self._clock = clock
        self._allowlist = {k: set(v) for k, v in allowlist.items()}
        self._k_bits = k_bits
        self._rng = rng
        self._pair: MasterKeyPair | None = None
        self._lock = threading.Lock()
        if self._sealed_path.exists():
            self._pair = self._load_pair()

    @property
    def _sealed_path(self) -> Path:
        return self._dir / "master.enc"

    @property
    def _mpk_path(self) -> Path:
        return self._dir / "mpk.bin"

    @property
    def initialized(self) -> bool:
        return self._pair is not None

    def setup(self) -> bytes:
        """Generate and persist the master pair; returns the public bytes."""
        with self._lock:
            if self._pair is not None or self._sealed_path.exists():
                raise AlreadyInitialized("system setup already completed")
            pair = setup(self._k_bits, self._rng)
            self._persist_pair(pair)
            self._pair = pair
            return pair.mpk.to_bytes()

    def _seal_key(self, salt: bytes) -> bytes:
        kdf = Scrypt(salt=salt, length=32, n=_SCRYPT_N, r=_SCRYPT_R, p=_SCRYPT_P)
        return kdf.derive(self._passphrase)

    def _persist_pair(self, pair: MasterKeyPair) -> None:
        salt = self._rng(16)
        nonce = self._rng(12)
        sealed = AESGCM(self._seal_key(salt)).encrypt(nonce, pair.msk.to_bytes(), b"")
        atomic_write(self._sealed_path, salt + nonce + sealed)
        atomic_write(self._mpk_path, pair.mpk.to_bytes())

    def _load_pair(self) -> MasterKeyPair:
        blob = self._sealed_path.read_bytes()
        salt, nonce, sealed = blob[:16], blob[16:28], blob[28:]
        try:
            msk_bytes = AESGCM(self._seal_key(salt)).decrypt(nonce, sealed, b"")
        except InvalidTag:
            raise Unauthorized("master key passphrase is wrong") from None
        msk = MasterSecretKey.from_bytes(msk_bytes)
        mpk = MasterPublicKey.from_bytes(self._mpk_path.read_bytes())
        return MasterKeyPair(mpk=mpk, msk=msk)

    def mpk_bytes(self) -> bytes:
        if self._pair is None:
            raise NotInitialized("system setup has not run")
        return self._pair.mpk.to_bytes()

    @property
    def mpk(self) -> MasterPublicKey:
        if self._pair is None:
            raise NotInitialized("system setup has not run")
        return self._pair.mpk

    def issue_key(self, requester_id: str, attributes: list[str]) -> bytes:
        """Issue a user key: allowlisted attributes plus the issuance time."""
        if self._pair is None:
            raise NotInitialized("system setup has not run")
        allowed = self._allowlist.get(requester_id)
        if allowed is None:
            raise Unauthorized(f"unknown requester {requester_id!r}")
        requested = set(attributes)
        if TIMESTAMP_ATTRIBUTE in requested:
            raise Unauthorized(f"{TIMESTAMP_ATTRIBUTE} is authority-assigned")
        if not requested <= allowed:
            raise Unauthorized(
                f"requester {requester_id!r} may not hold {sorted(requested - allowed)}")
        t_sk = self._clock.now()
        attrs = AttributeSet(requested, {TIMESTAMP_ATTRIBUTE: t_sk})
        key = keygen(self._pair.msk, attrs, self._rng(32))
        self._log_issuance(requester_id, sorted(requested), t_sk)
        return key.to_bytes()

    def _log_issuance(self, requester_id: str, attributes: list[str], t_sk: int) -> None:
        line = json.dumps({"requester": requester_id, "attributes": attributes,
                           "t_sk": t_sk}, sort_keys=True) + "\n"
        with open(self._dir / "issuance.log", "a", encoding="utf-8") as handle:
            handle.write(line)

    def routes(self) -> dict:
        return {
            "GET /mpk": lambda params, caller: {"mpk_b64": _b64(self.mpk_bytes())},
            "POST /keygen": lambda params, caller: {
                "key_b64": _b64(self.issue_key(caller, params.get("attributes", [])))},
        }


# ---------------------------------------------------------------------------
# Internal CT Engine
# ---------------------------------------------------------------------------

class InternalCtEngine:
    """Adds and maintains the updatable policy layers; owns the CT store."""

    def __init__(self, ct_store: CtStore, policy_store: PolicyStore,
                 mpk: MasterPublicKey, engine_key: UserSecretKey,
                 clock: LogicalClock):
        self._ct_store = ct_store
        self._policy_store = policy_store
        self._mpk = mpk
        self._engine_key = engine_key
        self._clock = clock

    def _stored_layer_policies(self, record_name: str) -> tuple[list[AccessPolicy], int]:
        record = self._policy_store.get(record_name)
        policies = [augment_for_engine(parse_policy(text)) for text in record.layers]
        return policies, record.version

    def publish(self, ct1_bytes: bytes, policy_name: str) -> CtRecord:
        """Wrap CT_1 in the deployment's layers and store the result."""
        ct1 = HybridCiphertext.from_bytes(ct1_bytes)
        policies, version = self._stored_layer_policies(policy_name)
        layered = add_layers(self._mpk, ct1.ct_abe, policies) if policies else ct1.ct_abe
        ct2 = HybridCiphertext(ct_aes=ct1.ct_aes, ct_abe=layered)
        return self._ct_store.put_new(
            ct2.to_bytes(), ct2.n_layers, policy_name, version,
            layered.layer_policies, self._clock)

    def on_policy_update(self, policy_name: str, version: int) -> list[str]:
        """Re-layer every ciphertext published under the named policy."""
        policies, current_version = self._stored_layer_policies(policy_name)
        if version > current_version:
            raise NotFound(f"policy {policy_name} has no version {version}")
        updated = []
        for record in self._ct_store.by_policy(policy_name):
            ct = HybridCiphertext.from_bytes(record.ct)
            relayered = update_outer_layers(
                self._mpk, self._engine_key, ct.ct_abe, keep=0,
                new_policies=policies)
            new_ct = HybridCiphertext(ct_aes=ct.ct_aes, ct_abe=relayered)
            self._ct_store.update(record.id, new_ct.to_bytes(), new_ct.n_layers,
                                  current_version, relayered.layer_policies,
                                  self._clock)
            updated.append(record.id)
        return updated

    def routes(self) -> dict:
        def publish(params: dict, caller: str) -> dict:
            record = self.publish(_unb64(params["ct1_b64"]), params["policy_name"])
            return {"id": record.id, "n_layers": record.n_layers}

        def notify(params: dict, caller: str) -> dict:
            ids = self.on_policy_update(params["policy_name"], params["version"])
            return {"updated": ids}

        return {"POST /publish": publish, "POST /notify": notify}


# ---------------------------------------------------------------------------
# External CT Engine
# ---------------------------------------------------------------------------

class ExternalCtEngine:
    """Serves consumer fetches, adding the per-request time-gate layer."""

    def __init__(self, ct_store: CtStore, event_log: SecurityEventLog,
                 mpk: MasterPublicKey):
        self._ct_store = ct_store
        self._event_log = event_log
        self._mpk = mpk

    def time_gate_policy(self) -> AccessPolicy:
        return AccessPolicy(Cmp(TIMESTAMP_ATTRIBUTE, ">", self._event_log.current))

    def request(self, record_id: str) -> tuple[bytes, int]:
        """Return CT_3 bytes and its layer count; the store is not touched."""
        record = self._ct_store.get(record_id)
        ct2 = HybridCiphertext.from_bytes(record.ct)
        gated = add_layers(self._mpk, ct2.ct_abe, [self.time_gate_policy()])
        ct3 = HybridCiphertext(ct_aes=ct2.ct_aes, ct_abe=gated)
        return ct3.to_bytes(), ct3.n_layers

    def routes(self) -> dict:
        def fetch(params: dict, caller: str) -> dict:
            ct3_bytes, n_layers = self.request(params["id"])
            return {"ct3_b64": _b64(ct3_bytes), "n_layers": n_layers}

        return {"GET /ct/{id}": fetch}


# ---------------------------------------------------------------------------
# Admin (system manager + policy engine)
# ---------------------------------------------------------------------------

class AdminService:
    """Policy definition/update and incident recording.

    The system-manager and policy-engine responsibilities are collapsed
    into one service; policy updates are pushed to the internal engine
    through the injected notifier.
    """

    def __init__(self, policy_store: PolicyStore, event_log: SecurityEventLog,
                 clock: LogicalClock, admin_ids: set[str],
                 notifier: Callable[[str, int], list[str]]):
        self._policy_store = policy_store
        self._event_log = event_log
        self._clock = clock
        self._admin_ids = set(admin_ids)
        self._notifier = notifier

    def _require_admin(self, caller: str) -> None:
        if caller not in self._admin_ids:
            raise Unauthorized(f"caller {caller!r} is not a system manager")

    def define_policy(self, caller: str, name: str, layers: list[str]) -> int:
        self._require_admin(caller)
        canonical = [parse_policy(text).canonical() for text in layers]
        record = self._policy_store.define(name, canonical, self._clock)
        return record.version

    def update_policy(self, caller: str, name: str, layers: list[str]) -> dict:
        """Define the new version and push it to the internal engine."""
        self._require_admin(caller)
        self._policy_store.get(name)  # must already exist
        version = self.define_policy(caller, name, layers)
        updated = self._notifier(name, version)
        return {"version": version, "updated": updated}

    def record_incident(self, caller: str, reason: str) -> int:
        self._require_admin(caller)
        t_incident = max(self._clock.now(), self._event_log.current + 1)
        return self._event_log.record(t_incident, reason)

    def routes(self) -> dict:
        return {
            "POST /policy": lambda params, caller: {
                "version": self.define_policy(caller, params["name"], params["layers"])},
            "POST /policy/update": lambda params, caller: self.update_policy(
                caller, params["name"], params["layers"]),
            "POST /incident": lambda params, caller: {
                "t_incident": self.record_incident(caller, params.get("reason", ""))},
        }


# ---------------------------------------------------------------------------
# Producer / consumer clients
# ---------------------------------------------------------------------------

class DataOwner:
    """Producer device: symmetric encryption plus the first (immutable)
    layer happen here; the device never participates again."""

    def __init__(self, mpk: MasterPublicKey, rng: Rng = os.urandom):
        self._mpk = mpk
        self._rng = rng

    def encrypt(self, plaintext: bytes, ap1: AccessPolicy) -> bytes:
        return hybrid_encrypt(self._mpk, ap1, plaintext, self._rng).to_bytes()

    def publish(self, plaintext: bytes, ap1: AccessPolicy, policy_name: str,
                engine: "ServiceClient | InternalCtEngine") -> str:
        ct1_bytes = self.encrypt(plaintext, ap1)
        if isinstance(engine, InternalCtEngine):
            return engine.publish(ct1_bytes, policy_name).id
        result = engine.request("POST /publish", {
            "ct1_b64": _b64(ct1_bytes), "policy_name": policy_name})
        return result["id"]


class Consumer:
    """Consumer-side helper: fetch through the external engine and run the
    full layered decryption locally."""

    def __init__(self, mpk: MasterPublicKey, key: UserSecretKey):
        self._mpk = mpk
        self._key = key

    def decrypt(self, ct3_bytes: bytes) -> bytes:
        from ..multilayer import layered_decrypt
        return layered_decrypt(self._mpk, self._key, HybridCiphertext.from_bytes(ct3_bytes))

    def fetch_and_decrypt(self, record_id: str,
                          external: "ServiceClient | ExternalCtEngine") -> bytes:
        if isinstance(external, ExternalCtEngine):
            ct3_bytes, _ = external.request(record_id)
        else:
            result = external.request("GET /ct/{id}", {"id": record_id})
            ct3_bytes = _unb64(result["ct3_b64"])
        return self.decrypt(ct3_bytes)


# ---------------------------------------------------------------------------
# Deployment wiring
# ---------------------------------------------------------------------------

class Deployment:
    """One complete desk-scale deployment rooted in a data directory.

    A single logical clock is authoritative for both key-issuance and
    incident timestamps, so the strict comparison of the time gate is
    never broken by cross-service skew.
    """

    def __init__(self, data_dir: Path, passphrase: str,
                 clock: LogicalClock | None = None,
                 allowlist: dict[str, list[str]] | None = None,
                 admin_ids: set[str] | None = None,
                 rng: Rng = os.urandom, k_bits: int = 256):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.clock = clock or SystemClock()
        config = self._load_or_init_config(allowlist, admin_ids, k_bits)
        config["allowlist"].setdefault(ENGINE_REQUESTER_ID, [ENGINE_UPDATE_ATTRIBUTE])
        self.allowlist: dict[str, list[str]] = config["allowlist"]
        self.admin_ids: set[str] = set(config["admin_ids"])
        self.aa = AttributeAuthority(self.data_dir / "aa", passphrase, self.clock,
                                     self.allowlist, config["k_bits"], rng)
        if not self.aa.initialized:
            self.aa.setup()
        self.ct_store = CtStore(self.data_dir / "ct")
        self.policy_store = PolicyStore(self.data_dir / "policies")
        self.event_log = SecurityEventLog(self.data_dir / "incidents.log")
        engine_key = UserSecretKey.from_bytes(
            self.aa.issue_key(ENGINE_REQUESTER_ID, [ENGINE_UPDATE_ATTRIBUTE]))
        self.internal = InternalCtEngine(self.ct_store, self.policy_store,
                                         self.aa.mpk, engine_key, self.clock)
        self.external = ExternalCtEngine(self.ct_store, self.event_log, self.aa.mpk)
        self.admin = AdminService(self.policy_store, self.event_log, self.clock,
                                  self.admin_ids, self.internal.on_policy_update)

    def _load_or_init_config(self, allowlist, admin_ids, k_bits) -> dict:
        path = self.data_dir / "config.json"
        if path.exists():
            config = json.loads(path.read_text("utf-8"))
            changed = False
            if allowlist:
                config["allowlist"].update({k: list(v) for k, v in allowlist.items()})
                changed = True
            if admin_ids:
                config["admin_ids"] = sorted(set(config["admin_ids"]) | set(admin_ids))
                changed = True
            if not changed:
                return config
        else:
            config = {"allowlist": {k: list(v) for k, v in (allowlist or {}).items()},
                      "admin_ids": sorted(admin_ids or {"admin"}),
                      "k_bits": k_bits}
        path.write_text(json.dumps(config, indent=2, sort_keys=True), "utf-8")
        return config

    @property
    def mpk(self) -> MasterPublicKey:
        return self.aa.mpk

    def issue_key(self, requester_id: str, attributes: list[str]) -> UserSecretKey:
        return UserSecretKey.from_bytes(self.aa.issue_key(requester_id, attributes))

    def serve(self, host: str | None = None,
              tap: TransportTap | None = None) -> "ServedDeployment":
        if host is None:
            host = os.environ.get("MLABE_BIND_ADDR", "127.0.0.1")
        return ServedDeployment(self, host, tap)


class ServedDeployment:
    """The deployment's services listening on localhost TCP ports."""

    def __init__(self, deployment: Deployment, host: str,
                 tap: TransportTap | None):
        self.deployment = deployment
        self.tap = tap
        self.servers = {
            "aa": ServiceServer("aa", deployment.aa.routes(), host, tap=tap),
            "internal": ServiceServer("internal", deployment.internal.routes(),
                                      host, tap=tap),
            "external": ServiceServer("external", deployment.external.routes(),
                                      host, tap=tap),
            "admin": ServiceServer("admin", deployment.admin.routes(), host, tap=tap),
        }
        for server in self.servers.values():
            server.start()

    def address(self, name: str) -> tuple[str, int]:
        return self.servers[name].address

    def client(self, name: str, caller: str = "", **kwargs) -> ServiceClient:
        return ServiceClient(self.address(name), caller=caller, tap=self.tap, **kwargs)

    def stop(self) -> None:
        for server in self.servers.values():
            server.stop()

    def __enter__(self) -> "ServedDeployment":
        return self

    def __exit__(self, *exc_info) -> None:
        self.stop()
