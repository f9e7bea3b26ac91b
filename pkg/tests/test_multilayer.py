"""Layer addition, peeling, update, and full layered decryption."""

from __future__ import annotations

import random

import pytest

from support import ALPHABET, make_rng, random_policy

from mlabe.containers import HybridCiphertext, LayeredAbeCiphertext
from mlabe.errors import (
    EmptyPolicyList,
    KeepExceedsLayers,
    MalformedLayer,
    PolicyUnsatisfied,
)
from mlabe.hybrid import hybrid_encrypt
from mlabe.multilayer import (
    ENGINE_UPDATE_ATTRIBUTE,
    add_layers,
    augment_for_engine,
    layered_decrypt,
    outer_policy_text,
    peel_layers,
    update_outer_layers,
)
from mlabe.policy import parse_policy, serialize_policy

from conftest import issue


def _base(master_pair, policy_text="(A AND B)", plaintext=b"inner payload " * 20,
          seed="ml"):
    return hybrid_encrypt(master_pair.mpk, parse_policy(policy_text), plaintext,
                          make_rng(seed))


def _attr_policies(count, width=3):
    """Layer policies (Att1 AND Att2 AND Att3), (Att4 ...), ..."""
    out = []
    for j in range(count):
        names = [f"Att{j * width + i + 1}" for i in range(width)]
        out.append(parse_policy(" AND ".join(names)))
    return out


class TestAddLayers:
    def test_fourteen_layers_three_attributes_each(self, master_pair):
        """The worst-case series shape: base + 14 layers = 15 total, 45
        attributes overall."""
        ct = _base(master_pair, "(Att1 AND Att2 AND Att3)")
        extra = _attr_policies(15)[1:]
        layered = add_layers(master_pair.mpk, ct.ct_abe, extra)
        assert layered.n_layers == 14
        total_attrs = sum(parse_policy(t).leaf_count()
                          for t in layered.layer_policies) + 3
        assert total_attrs == 45

    def test_wrap_then_peel_is_identity(self, master_pair):
        ct = _base(master_pair)
        key = issue(master_pair, {"C"})
        layered = add_layers(master_pair.mpk, ct.ct_abe, [parse_policy("C")])
        back = peel_layers(master_pair.mpk, key, layered, 1)
        assert back.to_bytes() == ct.ct_abe.to_bytes()

    def test_deterministic(self, master_pair):
        ct = _base(master_pair)
        policies = [parse_policy("C"), parse_policy("(D OR E)")]
        one = add_layers(master_pair.mpk, ct.ct_abe, policies)
        two = add_layers(master_pair.mpk, ct.ct_abe, policies)
        assert one.to_bytes() == two.to_bytes()

    def test_empty_policy_list(self, master_pair):
        ct = _base(master_pair)
        with pytest.raises(EmptyPolicyList):
            add_layers(master_pair.mpk, ct.ct_abe, [])

    def test_outer_policy_readable_without_peeling(self, master_pair):
        ct = _base(master_pair)
        layered = add_layers(master_pair.mpk, ct.ct_abe,
                             [parse_policy("C"), parse_policy("D OR E")])
        assert outer_policy_text(layered) == "(D OR E)"
        assert outer_policy_text(ct.ct_abe) is None


class TestPeelLayers:
    def test_zero_is_noop(self, master_pair):
        ct = _base(master_pair)
        key = issue(master_pair, {"A", "B"})
        assert peel_layers(master_pair.mpk, key, ct.ct_abe, 0) is ct.ct_abe

    def test_three_wrap_three_peel(self, master_pair):
        ct = _base(master_pair)
        key = issue(master_pair, {"C", "D", "E"})
        layered = add_layers(master_pair.mpk, ct.ct_abe,
                             [parse_policy(p) for p in ("C", "D", "E")])
        back = peel_layers(master_pair.mpk, key, layered, 3)
        assert back.to_bytes() == ct.ct_abe.to_bytes()
        assert back.base_ciphertext().to_bytes() == \
            ct.ct_abe.base_ciphertext().to_bytes()

    def test_missing_outer_attribute_reports_layer(self, master_pair):
        ct = _base(master_pair)
        layered = add_layers(master_pair.mpk, ct.ct_abe,
                             [parse_policy("C"), parse_policy("D")])
        key = issue(master_pair, {"C"})  # lacks the outermost D
        with pytest.raises(PolicyUnsatisfied) as excinfo:
            peel_layers(master_pair.mpk, key, layered, 2)
        assert excinfo.value.layer_index == layered.n_layers - 1

    def test_cannot_peel_out_of_order(self, master_pair):
        """A key satisfying only the inner layer cannot skip the outer one."""
        ct = _base(master_pair)
        layered = add_layers(master_pair.mpk, ct.ct_abe,
                             [parse_policy("C"), parse_policy("D")])
        inner_only = issue(master_pair, {"C"})
        with pytest.raises(PolicyUnsatisfied):
            peel_layers(master_pair.mpk, inner_only, layered, 1)

    def test_peel_beyond_layers_rejected(self, master_pair):
        ct = _base(master_pair)
        key = issue(master_pair, {"A", "B"})
        with pytest.raises(ValueError):
            peel_layers(master_pair.mpk, key, ct.ct_abe, 1)

    def test_tampered_layer(self, master_pair):
        ct = _base(master_pair)
        key = issue(master_pair, {"C"})
        layered = add_layers(master_pair.mpk, ct.ct_abe, [parse_policy("C")])
        mutated = bytearray(layered.body)
        mutated[-3] ^= 0x40
        broken = LayeredAbeCiphertext(body=bytes(mutated),
                                      layer_policies=layered.layer_policies)
        with pytest.raises(MalformedLayer):
            peel_layers(master_pair.mpk, key, broken, 1)

    def test_count_bookkeeping_over_random_sequences(self, master_pair):
        rnd = random.Random(41)
        key = issue(master_pair, set(ALPHABET))
        ct = _base(master_pair).ct_abe
        expected = 0
        for _ in range(30):
            if expected and rnd.random() < 0.45:
                n = rnd.randint(1, expected)
                ct = peel_layers(master_pair.mpk, key, ct, n)
                expected -= n
            else:
                policies = [random_policy(rnd, max_leaves=3, max_depth=2)
                            for _ in range(rnd.randint(1, 3))]
                ct = add_layers(master_pair.mpk, ct, policies)
                expected += len(policies)
            assert ct.n_layers == expected


class TestLayeredDecrypt:
    def test_zero_layers_equals_fo_decrypt(self, master_pair):
        from mlabe.hybrid import fo_decrypt

        plaintext = b"zero layer payload"
        ct = _base(master_pair, plaintext=plaintext)
        key = issue(master_pair, {"A", "B"})
        assert layered_decrypt(master_pair.mpk, key, ct) == plaintext
        assert fo_decrypt(master_pair.mpk, key, ct.ct_abe.base_ciphertext(),
                          ct.ct_aes) == plaintext

    def test_two_layers_end_to_end(self, master_pair):
        plaintext = b"layered payload " * 9
        ct = _base(master_pair, "(A AND B)", plaintext)
        layered = add_layers(master_pair.mpk, ct.ct_abe,
                             [parse_policy("C"), parse_policy("D")])
        full = HybridCiphertext(ct_aes=ct.ct_aes, ct_abe=layered)
        key = issue(master_pair, {"A", "B", "C", "D"})
        assert layered_decrypt(master_pair.mpk, key, full) == plaintext

    def test_failing_only_base_policy(self, master_pair):
        """Peeling succeeds, the final decapsulation refuses: the base
        policy gate cannot be bypassed by holding only layer attributes."""
        ct = _base(master_pair, "(A AND B)")
        layered = add_layers(master_pair.mpk, ct.ct_abe, [parse_policy("C")])
        full = HybridCiphertext(ct_aes=ct.ct_aes, ct_abe=layered)
        key = issue(master_pair, {"A", "C"})  # lacks B for the base
        with pytest.raises(PolicyUnsatisfied) as excinfo:
            layered_decrypt(master_pair.mpk, key, full)
        assert excinfo.value.layer_index is None


class TestUpdateOuterLayers:
    def test_keep_all_is_pure_addition(self, master_pair):
        ct = _base(master_pair).ct_abe
        key = issue(master_pair, {"C"})
        added = update_outer_layers(master_pair.mpk, key, ct, keep=0,
                                    new_policies=[parse_policy("C")])
        assert added.to_bytes() == add_layers(
            master_pair.mpk, ct, [parse_policy("C")]).to_bytes()

    def test_replace_outermost_preserves_payload(self, master_pair):
        plaintext = b"payload under update " * 8
        ct = _base(master_pair, "(A AND B)", plaintext)
        engine_key = issue(master_pair, {ENGINE_UPDATE_ATTRIBUTE})
        old_layer = augment_for_engine(parse_policy("C"))
        layered = add_layers(master_pair.mpk, ct.ct_abe, [old_layer])
        updated = update_outer_layers(
            master_pair.mpk, engine_key, layered, keep=0,
            new_policies=[augment_for_engine(parse_policy("(C AND D)"))])
        # payload untouched, layer policy swapped
        new_full = HybridCiphertext(ct_aes=ct.ct_aes, ct_abe=updated)
        old_consumer = issue(master_pair, {"A", "B", "C"})
        new_consumer = issue(master_pair, {"A", "B", "C", "D"})
        with pytest.raises(PolicyUnsatisfied):
            layered_decrypt(master_pair.mpk, old_consumer, new_full)
        assert layered_decrypt(master_pair.mpk, new_consumer, new_full) == plaintext

    def test_keep_exceeds_layers(self, master_pair):
        ct = _base(master_pair).ct_abe
        key = issue(master_pair, {"C"})
        with pytest.raises(KeepExceedsLayers):
            update_outer_layers(master_pair.mpk, key, ct, keep=1, new_policies=[])

    def test_pure_revocation(self, master_pair):
        """Empty new-policy list just peels: revocation of stale layers."""
        ct = _base(master_pair).ct_abe
        key = issue(master_pair, {"C", "D"})
        layered = add_layers(master_pair.mpk, ct,
                             [parse_policy("C"), parse_policy("D")])
        revoked = update_outer_layers(master_pair.mpk, key, layered, keep=1,
                                      new_policies=[])
        assert revoked.n_layers == 1
        assert revoked.layer_policies == ("C",)

    def test_engine_cannot_open_base(self, master_pair):
        """The maintenance key peels augmented layers but can never reach
        the payload: the base policy excludes it."""
        ct = _base(master_pair, "(A AND B)")
        engine_key = issue(master_pair, {ENGINE_UPDATE_ATTRIBUTE})
        layered = add_layers(master_pair.mpk, ct.ct_abe,
                             [augment_for_engine(parse_policy("C"))])
        stripped = peel_layers(master_pair.mpk, engine_key, layered, 1)
        full = HybridCiphertext(ct_aes=ct.ct_aes, ct_abe=stripped)
        with pytest.raises(PolicyUnsatisfied):
            layered_decrypt(master_pair.mpk, engine_key, full)


class TestAugment:
    def test_augmented_form(self):
        policy = parse_policy("(A AND B)")
        assert serialize_policy(augment_for_engine(policy)) == \
            f"((A AND B) OR {ENGINE_UPDATE_ATTRIBUTE})"
