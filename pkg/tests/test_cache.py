import threading
from datetime import datetime, timezone

import pytest

from compalign.cache import CacheStore, cache_key
from compalign.errors import CacheCorruptionError, InputError


def test_round_trip_and_counters(tmp_path):
    store = CacheStore(tmp_path)
    key = cache_key("vqa", "oracle", "1", b"region", "Is this red?")
    assert store.get(key) is None
    store.put(key, b"0.75")
    assert store.get(key) == b"0.75"
    assert (store.hits, store.misses) == (1, 1)
    assert store.count() == 1


def test_entry_exposes_creation_time(tmp_path):
    store = CacheStore(tmp_path)
    key = cache_key("qgen", "b", "1", "x")
    store.put_json(key, {"a": [1, 2]})
    entry = store.entry(key)
    assert entry.json() == {"a": [1, 2]}
    assert entry.created_at <= datetime.now(timezone.utc)


def test_identical_rewrite_is_a_no_op(tmp_path):
    store = CacheStore(tmp_path)
    key = cache_key("vqa", "b", "1", "x")
    store.put(key, b"1.0")
    store.put(key, b"1.0")
    assert store.count() == 1


def test_conflicting_rewrite_raises(tmp_path):
    store = CacheStore(tmp_path)
    key = cache_key("vqa", "b", "1", "x")
    store.put(key, b"1.0")
    with pytest.raises(CacheCorruptionError):
        store.put(key, b"0.0")
    assert store.get(key) == b"1.0"


def test_key_depends_on_every_component():
    base = ("vqa", "oracle", "1", "a", "b")
    keys = {
        cache_key(*base),
        cache_key("detect", *base[1:]),
        cache_key("vqa", "blip", *base[2:]),
        cache_key("vqa", "oracle", "2", *base[3:]),
        cache_key("vqa", "oracle", "1", "ab"),
        cache_key("vqa", "oracle", "1", "a", "c"),
    }
    assert len(keys) == 6


def test_unknown_namespace_rejected():
    with pytest.raises(InputError):
        cache_key("images", "b", "1", "x")


def test_bad_key_rejected(tmp_path):
    with pytest.raises(InputError):
        CacheStore(tmp_path).get("../../etc/passwd")


def test_files_are_fanned_out(tmp_path):
    store = CacheStore(tmp_path)
    key = cache_key("vqa", "b", "1", "x")
    store.put(key, b"1")
    path = store.path_for(key)
    assert path.exists()
    assert path.relative_to(tmp_path).parts[-3:-1] == (key[:2], key[2:4])


def test_concurrent_writers_agree(tmp_path):
    store = CacheStore(tmp_path)
    key = cache_key("vqa", "b", "1", "x")
    errors = []

    def writer():
        try:
            store.put(key, b"0.5")
        except Exception as exc:  # pragma: no cover - would fail the test
            errors.append(exc)

    threads = [threading.Thread(target=writer) for _ in range(16)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    assert store.get(key) == b"0.5"
    assert not list(tmp_path.rglob(".tmp-*"))
