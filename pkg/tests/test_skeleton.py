from __future__ import annotations

import random

from hypothesis import given, strategies as st

from walletscope.evm import Bytecode, Source, disassemble, from_hex, keccak256
from walletscope.skeleton import Skeleton, skeleton_hash, skeletonize

import asm

EMPTY_HASH = "0xc5d2460186f7233c927e7db2dcc703c0e500b653ca82273b7bfad8045d85a470"


def test_examples():
    assert skeletonize(from_hex("6001600101")).hex == "0x6000600001"
    assert skeletonize(from_hex("600100")).hex == "0x60"
    assert skeletonize(b"").data == b""


def test_empty_skeleton_hash():
    assert skeleton_hash(skeletonize(b"")).hex() == EMPTY_HASH[2:]
    assert skeletonize(b"").hash_hex == EMPTY_HASH


def test_companion_addresses_do_not_matter():
    a = asm.asm("PUSH20 " + "11" * 20 + " SLOAD STOP PUSH1 01")
    b = asm.asm("PUSH20 " + "22" * 20 + " SLOAD STOP PUSH1 01")
    assert a != b
    assert skeletonize(a) == skeletonize(b)


def test_metadata_zeroed():
    a = from_hex("6001600101") + from_hex(asm.BZZR0_TRAILER)
    b = from_hex("6001600101") + from_hex(asm.BZZR0_TRAILER.replace("11", "99"))
    assert skeletonize(a) == skeletonize(b) == skeletonize(from_hex("6001600101"))


def test_constructor_arguments_only_for_creation_code():
    runtime = from_hex("6001600101") + from_hex(asm.BZZR0_TRAILER)
    creation = from_hex("6080604052") + runtime
    c1 = creation + (7).to_bytes(32, "big")
    c2 = creation + (9).to_bytes(32, "big")
    assert skeletonize(c1, Source.CREATION) == skeletonize(c2, Source.CREATION)
    assert skeletonize(Bytecode(c1, Source.CREATION)) == skeletonize(c2, Source.CREATION)
    assert skeletonize(c1) != skeletonize(c2)


def test_skeleton_rejects_trailing_zero():
    try:
        Skeleton(b"\x60\x00")
    except ValueError:
        pass
    else:
        raise AssertionError


def test_different_skeletons_hash_differently():
    rng = random.Random(7)
    seen = {}
    for _ in range(300):
        data = bytes(rng.choice([0x01, 0x02, 0x50, 0x56, 0x5B]) for _ in range(rng.randint(1, 6)))
        s = skeletonize(data)
        assert seen.setdefault(s.hash, s.data) == s.data


@given(st.binary(max_size=200))
def test_invariants(data):
    s = skeletonize(data)
    assert len(s.data) <= len(data)
    assert not s.data.endswith(b"\x00")
    assert s.hash == keccak256(s.data)
    assert skeletonize(s.data) == s


@given(st.binary(max_size=200), st.randoms(use_true_random=False))
def test_push_arguments_do_not_matter(data, rng):
    mutated = bytearray(data)
    for ins in disassemble(data):
        if ins.push_arg:
            for k in range(len(ins.push_arg)):
                mutated[ins.offset + 1 + k] = rng.randrange(256)
    assert skeletonize(bytes(mutated)) == skeletonize(data)
