import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfgrec import data as D
from cfgrec.errors import ConfigError, DataError
from cfgrec.synthetic import two_block_reviews


def R(user, item, rating=5, ts=0):
    return D.RawReview(str(user), str(item), rating, ts)


def test_ingest_empty_file(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("")
    assert D.ingest(p) == ([], [])


def test_ingest_rated_fixture(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("user,item,rating,timestamp\nalice,i9,5,100\nbob,i2,3,50\nalice,i1,4,120\n")
    reviews, bad = D.ingest(p)
    assert bad == []
    assert reviews == [R("alice", "i9", 5, 100), R("bob", "i2", 3, 50), R("alice", "i1", 4, 120)]


def test_ingest_unrated_without_header(tmp_path):
    p = tmp_path / "u.csv"
    p.write_text("a;x;1\nb;y;2\n")
    reviews, _ = D.ingest(p, D.CSV_UNRATED, ";")
    assert [r.rating for r in reviews] == [None, None]
    assert reviews[1] == D.RawReview("b", "y", None, 2)


def test_ingest_multichar_delimiter(tmp_path):
    p = tmp_path / "ratings.dat"
    p.write_text("1::1193::5::978300760\n1::661::3::978302109\n")
    reviews, _ = D.ingest(p, D.CSV_RATED, "::")
    assert reviews[0] == R("1", "1193", 5, 978300760)


def test_ingest_reports_malformed_rows(tmp_path):
    good = "".join(f"u{i},i{i},5,{i}\n" for i in range(300))
    p = tmp_path / "m.csv"
    p.write_text(good + "broken row\n")
    reviews, bad = D.ingest(p)
    assert len(reviews) == 300 and bad == [301]
    p.write_text(good[:200] + "x,y,9,1\n" + "nope\n" + good[200:400])
    with pytest.raises(DataError) as err:
        D.ingest(p)
    assert "line" in str(err.value)


def test_ingest_missing_file(tmp_path):
    with pytest.raises(DataError):
        D.ingest(tmp_path / "absent.csv")


def test_clean_vs_noisy():
    reviews = [R("u", "a", 5, 1), R("u", "b", 3, 2), R("u", "c", 4, 3)]
    assert len(D.preprocess(reviews, D.CLEAN)) == 2
    assert len(D.preprocess(reviews, D.NOISY)) == 3
    all_five = [R("u", x, 5, i) for i, x in enumerate("abc")]
    c, n = D.preprocess(all_five, D.CLEAN), D.preprocess(all_five, D.NOISY)
    assert np.array_equal(c.items, n.items) and c.n_items == n.n_items


def test_unrated_kept_in_clean_mode():
    iset = D.preprocess([D.RawReview("u", "a", None, 1), R("u", "b", 2, 2)], D.CLEAN)
    assert len(iset) == 1


def test_all_filtered_is_an_error():
    with pytest.raises(DataError):
        D.preprocess([R("u", "a", 1, 1)], D.CLEAN)
    with pytest.raises(DataError):
        D.preprocess([], D.NOISY)
    with pytest.raises(ConfigError):
        D.preprocess([R("u", "a")], "fuzzy")


def test_dedup_keeps_earliest_and_renumbers():
    reviews = [R("z", "q", 5, 30), R("y", "p", 5, 5), R("z", "p", 5, 10), R("z", "q", 5, 20)]
    iset = D.preprocess(reviews, D.NOISY)
    assert iset.n_users == 2 and iset.n_items == 2
    # z's q@30 loses to q@20, so y's row is the first survivor: y -> 0, z -> 1
    assert iset.users.tolist() == [0, 1, 1]
    assert iset.times.tolist() == [5, 10, 20]
    assert iset.items.tolist() == [0, 0, 1]


def _user_with(n):
    return [R("u", f"i{k}", 5, k) for k in range(n)]


def test_split_80_20():
    iset = D.split(D.preprocess(_user_with(10)), "80:20")
    assert iset.split.tolist() == [D.TRAIN] * 8 + [D.TEST] * 2
    assert iset.times[iset.split == D.TEST].tolist() == [8, 9]


def test_split_70_20_10():
    iset = D.split(D.preprocess(_user_with(10)), "70:20:10")
    assert iset.split.tolist() == [D.TRAIN] * 7 + [D.VALID] * 2 + [D.TEST]


def test_split_degenerate_user():
    reviews = _user_with(5) + [R("solo", "x", 5, 0)]
    iset = D.split(D.preprocess(reviews), "80:20")
    assert iset.n_short_users == 1
    assert iset.split[iset.users == 1].tolist() == [D.TRAIN]
    assert D.summary(iset)["short_users"] == 1
    with pytest.raises(ConfigError):
        D.split(iset, "50:50")


def test_multihot_rows():
    reviews = [R("u", "a", 5, 0)] + [R("u", f"f{k}", 5, k + 1) for k in range(4)] + [R("u", "b", 5, 9)]
    reviews += [R("v", f"f{k}", 5, k) for k in range(2)]
    iset = D.preprocess(reviews)
    train = D.to_multihot(D.split(iset, "80:20"), "train")
    assert train.n_cols == iset.n_items == 6
    assert train.dense([0]).tolist() == [[1, 1, 1, 1, 1, 0]]
    assert set(np.unique(train.dense())) <= {0.0, 1.0}
    assert train.row_counts().tolist() == [5, 1]


def test_multihot_example_row():
    users = np.array([0, 0])
    iset = D.InteractionSet(1, 8, users, np.array([0, 5]), np.array([1, 2]), split=np.zeros(2, np.int8))
    assert D.to_multihot(iset, "train").dense().tolist() == [[1, 0, 0, 0, 0, 1, 0, 0]]


def test_train_test_disjoint_on_synthetic_fixture():
    iset = D.split(D.preprocess(two_block_reviews(n_users=20, seed=3)), "80:20")
    train, test = D.to_multihot(iset, "train"), D.to_multihot(iset, "test")
    for u in range(iset.n_users):
        assert not set(train.row(u)) & set(test.row(u))
        assert len(train.row(u)) + len(test.row(u)) == int(np.sum(iset.users == u))


@st.composite
def review_lists(draw):
    n = draw(st.integers(1, 60))
    return [
        D.RawReview(
            f"u{draw(st.integers(0, 6))}", f"i{draw(st.integers(0, 12))}",
            draw(st.integers(1, 5)), draw(st.integers(0, 50)),
        )
        for _ in range(n)
    ]


@settings(max_examples=150, deadline=None)
@given(review_lists(), st.sampled_from(list(D.RATIOS)))
def test_preprocess_and_split_invariants(reviews, ratios):
    iset = D.preprocess(reviews, D.NOISY)
    pairs = {(r.user, r.item) for r in reviews}
    assert len(iset) == len(pairs)
    assert set(np.unique(iset.users)) == set(range(iset.n_users))
    assert set(np.unique(iset.items)) == set(range(iset.n_items))
    bounds = iset.user_bounds()
    for u in range(iset.n_users):
        assert np.all(np.diff(iset.times[bounds[u]:bounds[u + 1]]) >= 0)

    again = D.preprocess(iset.as_reviews(), D.NOISY)
    assert (again.n_users, again.n_items, len(again)) == (iset.n_users, iset.n_items, len(iset))

    tagged = D.split(iset, ratios)
    for u in range(iset.n_users):
        tags = tagged.split[bounds[u]:bounds[u + 1]]
        assert np.all(np.diff(tags) >= 0)  # train, then valid, then test
    rows = sum(D.to_multihot(tagged, name).row_counts() for name in D.SPLIT_NAMES)
    assert np.array_equal(rows, np.diff(bounds))


def test_cache_round_trip_is_bit_stable(tmp_path):
    iset = D.split(D.preprocess(two_block_reviews(n_users=30, seed=1)), "70:20:10")
    m1 = D.save_cache(iset, tmp_path / "a", "abc")
    m2 = D.save_cache(D.split(D.preprocess(two_block_reviews(n_users=30, seed=1)), "70:20:10"), tmp_path / "b", "abc")
    for name in ("meta.json", "train.tsv", "valid.tsv", "test.tsv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert m1 == m2
    loaded, meta = D.load_cache(tmp_path / "a")
    assert meta["fingerprint"] == m1["fingerprint"]
    for attr in ("users", "items", "times", "split"):
        assert np.array_equal(getattr(loaded, attr), getattr(iset, attr))
    assert (loaded.n_users, loaded.n_items, loaded.ratios) == (iset.n_users, iset.n_items, iset.ratios)
    assert not (tmp_path / "a.partial").exists()


def test_load_cache_missing(tmp_path):
    with pytest.raises(DataError):
        D.load_cache(tmp_path / "nothing")
