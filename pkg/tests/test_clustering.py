import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fgcount.clustering import (AggregatedObject, ClusterParams, ClusterStats,
                                cluster_image_annotations, cluster_indices,
                                majority_vote_labels, medoid, read_aggregated,
                                write_aggregated)
from fgcount.ingest import DotAnnotation

from oracles import naive_cluster, naive_medoid


def dot(user, x, y, species="unknown", sex="unknown", age="unknown", image="img"):
    return DotAnnotation(image_id=image, user_id=user, x=float(x), y=float(y),
                         responses=(species, sex, age))


# ---------------------------------------------------------------- parameters

def test_params_validation():
    ClusterParams()  # defaults are valid
    with pytest.raises(ValueError):
        ClusterParams(distance_threshold=0.0)
    with pytest.raises(ValueError):
        ClusterParams(distance_threshold=-5.0)
    with pytest.raises(ValueError):
        ClusterParams(min_cluster_size=0)
    with pytest.raises(ValueError):
        ClusterParams(linkage="complete")


def test_param_defaults():
    params = ClusterParams()
    assert params.linkage == "average"
    assert params.distance_threshold == 24.0
    assert params.min_cluster_size == 2


# ------------------------------------------------------------------- medoid

def test_medoid_single_point():
    assert medoid([(5.0, 5.0)]) == (5.0, 5.0)


def test_medoid_collinear():
    assert medoid([(0.0, 0.0), (0.0, 10.0), (0.0, 1.0)]) == (0.0, 1.0)


def test_medoid_square_tie_break():
    # all four corners tie on summed distance; smallest (y, x) wins
    pts = [(2.0, 2.0), (0.0, 2.0), (2.0, 0.0), (0.0, 0.0)]
    assert medoid(pts) == (0.0, 0.0)


def test_medoid_empty_rejected():
    with pytest.raises(ValueError):
        medoid([])


@given(st.lists(st.tuples(st.integers(0, 20), st.integers(0, 20)),
                min_size=1, max_size=8))
def test_medoid_matches_oracle(int_pts):
    pts = [(float(px), float(py)) for px, py in int_pts]
    assert medoid(pts) == naive_medoid(pts)
    assert medoid(pts) in pts


# ------------------------------------------------------------- majority vote

def test_vote_strict_majority():
    members = [dot("u1", 0, 0, species="elephant"),
               dot("u2", 1, 0, species="elephant"),
               dot("u3", 2, 0, species="fur")]
    assert majority_vote_labels(members)[0] == "elephant"


def test_vote_tie_is_unknown():
    members = [dot("u1", 0, 0, sex="male"), dot("u2", 1, 0, sex="female")]
    assert majority_vote_labels(members)[1] == "unknown"


def test_vote_all_unknown():
    members = [dot("u1", 0, 0), dot("u2", 1, 0), dot("u3", 2, 0)]
    assert majority_vote_labels(members) == ("unknown", "unknown", "unknown")


def test_vote_unknown_floor():
    # one known vote loses to two unknowns; two known votes meet the floor
    members = [dot("u1", 0, 0, age="adult"), dot("u2", 1, 0), dot("u3", 2, 0)]
    assert majority_vote_labels(members)[2] == "unknown"
    members = [dot("u1", 0, 0, age="adult"), dot("u2", 1, 0, age="adult"),
               dot("u3", 2, 0)]
    assert majority_vote_labels(members)[2] == "adult"


def test_vote_attributes_independent():
    members = [dot("u1", 0, 0, species="elephant", sex="male", age="pup"),
               dot("u2", 1, 0, species="elephant", sex="female", age="pup")]
    assert majority_vote_labels(members) == ("elephant", "unknown", "pup")


# ------------------------------------------------------- contract examples

def test_three_dots_plus_stray():
    dots = [dot("u1", 10.0, 10.0, species="elephant"),
            dot("u2", 12.0, 11.0, species="elephant"),
            dot("u3", 11.0, 12.5, species="fur"),
            dot("u1", 60.0, 10.0, species="elephant")]
    stats = ClusterStats()
    params = ClusterParams(distance_threshold=15.0)
    objects = cluster_image_annotations(dots, params, stats)
    assert len(objects) == 1
    assert objects[0].J == 3
    assert objects[0].label("species") == "elephant"
    assert stats.n_discarded_clusters == 1
    assert stats.n_discarded_dots == 1


def test_same_user_pair_never_merges():
    dots = [dot("u1", 10.0, 10.0), dot("u1", 11.0, 10.0)]
    objects = cluster_image_annotations(dots, ClusterParams(distance_threshold=15.0))
    assert objects == []


def test_two_separated_groups():
    dots = []
    for gx in (0.0, 200.0):
        for k, user in enumerate(["u1", "u2", "u3", "u4"]):
            dots.append(dot(user, gx + k, 0.5 * k))
    objects = cluster_image_annotations(dots, ClusterParams(distance_threshold=15.0))
    assert len(objects) == 2
    assert [obj.J for obj in objects] == [4, 4]


def test_empty_input():
    assert cluster_image_annotations([], ClusterParams()) == []


def test_multi_image_input_rejected():
    dots = [dot("u1", 0, 0, image="a"), dot("u2", 0, 0, image="b")]
    with pytest.raises(ValueError):
        cluster_image_annotations(dots)


def test_min_cluster_size_one_keeps_singletons():
    dots = [dot("u1", 10.0, 10.0), dot("u2", 11.0, 10.0), dot("u3", 90.0, 90.0)]
    params = ClusterParams(distance_threshold=5.0, min_cluster_size=1)
    objects = cluster_image_annotations(dots, params)
    assert len(objects) == 2
    assert sorted(obj.J for obj in objects) == [1, 2]


def test_output_sorted_by_medoid():
    dots = []
    rng = np.random.default_rng(7)
    for gi, (gx, gy) in enumerate([(50, 80), (200, 10), (50, 10), (200, 80)]):
        for user in ["u1", "u2", "u3"]:
            ox, oy = rng.uniform(-2, 2, size=2)
            dots.append(dot(user, gx + ox, gy + oy))
    objects = cluster_image_annotations(dots, ClusterParams(distance_threshold=15.0))
    keys = [(obj.medoid[1], obj.medoid[0]) for obj in objects]
    assert keys == sorted(keys)
    assert len(objects) == 4


def test_linkage_tie_chain():
    # collinear chain with exact 6 px gaps at threshold 6: average linkage
    # keeps two pairs, single linkage bridges them into one cluster
    dots = [dot("u1", 0.0, 0.0), dot("u2", 6.0, 0.0),
            dot("u3", 12.0, 0.0), dot("u4", 18.0, 0.0)]
    avg = cluster_image_annotations(dots, ClusterParams(linkage="average",
                                                        distance_threshold=6.0))
    assert [obj.J for obj in avg] == [2, 2]
    single = cluster_image_annotations(dots, ClusterParams(linkage="single",
                                                           distance_threshold=6.0))
    assert [obj.J for obj in single] == [4]


def test_threshold_is_inclusive():
    dots = [dot("u1", 0.0, 0.0), dot("u2", 24.0, 0.0)]
    assert len(cluster_image_annotations(dots, ClusterParams())) == 1
    dots = [dot("u1", 0.0, 0.0), dot("u2", 24.000001, 0.0)]
    assert cluster_image_annotations(dots, ClusterParams()) == []


def test_member_user_uniqueness_and_membership_invariants():
    rng = np.random.default_rng(11)
    for _ in range(20):
        n = int(rng.integers(2, 30))
        dots = [dot(f"u{int(rng.integers(0, 5))}",
                    float(rng.uniform(0, 60)), float(rng.uniform(0, 60)))
                for _ in range(n)]
        for params in (ClusterParams(distance_threshold=10.0),
                       ClusterParams(linkage="single", distance_threshold=10.0)):
            for obj in cluster_image_annotations(dots, params):
                users = [m.user_id for m in obj.members]
                assert len(set(users)) == len(users)
                assert obj.J >= params.min_cluster_size
                assert obj.medoid in {(m.x, m.y) for m in obj.members}


# ------------------------------------------------------------ property tests

COORD = st.integers(0, 24)
USER = st.sampled_from(["u0", "u1", "u2", "u3"])
TRIPLES = st.lists(st.tuples(COORD, COORD, USER), min_size=0, max_size=12,
                   unique_by=lambda t: t)


def impl_clusters(x, y, users, linkage, threshold):
    """Run the package implementation, return member sets without size filter."""
    params = ClusterParams(linkage=linkage, distance_threshold=threshold,
                           min_cluster_size=1)
    found = cluster_indices(np.asarray(x, dtype=float), np.asarray(y, dtype=float),
                            users, params)
    return sorted(tuple(sorted(int(i) for i in idx)) for idx in found)


@settings(max_examples=150, deadline=None)
@given(TRIPLES, st.sampled_from(["average", "single"]),
       st.sampled_from([3.0, 5.0, 8.0]))
def test_clustering_matches_naive_oracle(triples, linkage, threshold):
    x = [t[0] for t in triples]
    y = [t[1] for t in triples]
    users = [t[2] for t in triples]
    expected = sorted(tuple(m) for m in naive_cluster(x, y, users, linkage, threshold))
    assert impl_clusters(x, y, users, linkage, threshold) == expected


@settings(max_examples=60, deadline=None)
@given(TRIPLES, st.randoms(use_true_random=False))
def test_permutation_invariance(triples, rand):
    dots = [dot(u, px, py, species="elephant" if (px + py) % 2 else "fur")
            for px, py, u in triples]
    params = ClusterParams(distance_threshold=6.0)
    baseline = cluster_image_annotations(dots, params)
    shuffled = list(dots)
    rand.shuffle(shuffled)
    assert cluster_image_annotations(shuffled, params) == baseline


@settings(max_examples=60, deadline=None)
@given(TRIPLES, st.sampled_from(["average", "single"]))
def test_min_size_monotonicity(triples, linkage):
    dots = [dot(u, px, py) for px, py, u in triples]
    two = cluster_image_annotations(
        dots, ClusterParams(linkage=linkage, distance_threshold=6.0,
                            min_cluster_size=2))
    one = cluster_image_annotations(
        dots, ClusterParams(linkage=linkage, distance_threshold=6.0,
                            min_cluster_size=1))
    assert len(one) >= len(two)


@settings(max_examples=60, deadline=None)
@given(TRIPLES, st.sampled_from(["average", "single"]))
def test_members_partition_kept_dots(triples, linkage):
    x = [float(t[0]) for t in triples]
    y = [float(t[1]) for t in triples]
    users = [t[2] for t in triples]
    params = ClusterParams(linkage=linkage, distance_threshold=6.0,
                           min_cluster_size=1)
    found = cluster_indices(np.asarray(x), np.asarray(y), users, params)
    flat = sorted(int(i) for idx in found for i in idx)
    assert flat == list(range(len(triples)))


# -------------------------------------------------------------- persistence

def test_jsonl_roundtrip(tmp_path):
    dots_a = [dot("u1", 10.0, 10.0, species="elephant", sex="male", age="adult"),
              dot("u2", 11.0, 10.5, species="elephant", sex="male", age="adult"),
              dot("u3", 40.0, 40.0, species="fur"),
              dot("u1", 41.0, 40.0, species="fur")]
    dots_b = [dot("u1", 5.0, 5.0, image="img2"), dot("u2", 5.5, 5.0, image="img2")]
    per_image = {"img": cluster_image_annotations(dots_a, ClusterParams(distance_threshold=5.0)),
                 "img2": cluster_image_annotations(dots_b, ClusterParams(distance_threshold=5.0))}
    path = tmp_path / "aggregated.jsonl"
    write_aggregated(path, per_image)

    back = read_aggregated(path)
    assert list(back) == ["img", "img2"]
    for image_id in per_image:
        for orig, loaded in zip(per_image[image_id], back[image_id]):
            assert loaded.medoid == orig.medoid
            assert loaded.labels == orig.labels
            assert loaded.J == orig.J
            assert [(m.user_id, m.x, m.y) for m in loaded.members] == \
                [(m.user_id, m.x, m.y) for m in orig.members]

    # serialization is stable byte for byte
    path2 = tmp_path / "again.jsonl"
    write_aggregated(path2, per_image)
    assert path2.read_bytes() == path.read_bytes()


def test_jsonl_line_shape(tmp_path):
    import json

    dots = [dot("u1", 10.0, 10.0, species="elephant"),
            dot("u2", 11.0, 10.0, species="elephant")]
    per_image = {"img": cluster_image_annotations(dots, ClusterParams(distance_threshold=5.0))}
    path = tmp_path / "aggregated.jsonl"
    write_aggregated(path, per_image)
    rec = json.loads(path.read_text().splitlines()[0])
    assert list(rec) == ["image_id", "medoid", "n_members", "members", "labels"]
    assert rec["n_members"] == 2
    assert set(rec["labels"]) == {"species", "sex", "age"}
    assert set(rec["members"][0]) == {"user_id", "x", "y"}


def test_read_aggregated_rejects_bad_records(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"image_id":"img","medoid":[1.0,2.0],"n_members":3,'
                    '"members":[{"user_id":"u1","x":1.0,"y":2.0}],'
                    '"labels":{"species":"fur","sex":"unknown","age":"unknown"}}\n')
    with pytest.raises(ValueError, match="line 1"):
        read_aggregated(path)
    path.write_text("not json\n")
    with pytest.raises(ValueError, match="line 1"):
        read_aggregated(path)


def test_aggregated_object_accessors():
    members = (dot("u1", 1.0, 2.0, species="fur"), dot("u2", 2.0, 2.0, species="fur"))
    obj = AggregatedObject(members=members, medoid=(1.0, 2.0),
                           labels=("fur", "unknown", "unknown"))
    assert obj.J == 2
    assert obj.label("species") == "fur"
    assert obj.labels_dict() == {"species": "fur", "sex": "unknown", "age": "unknown"}
