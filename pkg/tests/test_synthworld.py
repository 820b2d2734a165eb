import math

import numpy as np
import pytest

from lvgraph.synthworld import (DIRECTION_WORDS, OBJECT_WORDS, ROOM_WORDS, STOP, WorldConfig,
                                default_vocabulary, generate_instruction, generate_world,
                                instruction_words, load_episodes, load_worlds, make_episode, observe,
                                relative_direction_word, save_episodes, save_worlds, step,
                                teacher_action, wrap_angle)

from oracles import all_simple_path_min, bfs_hops, dijkstra


def adjacency(world):
    return {v: world.neighbors(v) for v in range(world.n)}


def path_length(world, path):
    return sum(world.distance(a, b) for a, b in zip(path, path[1:]))


@pytest.fixture(scope="module")
def world():
    return generate_world(3)


def test_two_viewpoints_single_edge():
    w = generate_world(0, n_viewpoints=2)
    assert w.edges == [(0, 1)] and w.is_connected()


def test_too_few_viewpoints_rejected():
    with pytest.raises(ValueError):
        generate_world(0, n_viewpoints=1)


def test_unsatisfiable_placement_rejected():
    with pytest.raises(ValueError):
        generate_world(0, WorldConfig(n_viewpoints=30, spacing=0.1, min_separation=5.0))


def test_same_seed_same_world():
    a, b = generate_world(5), generate_world(5)
    assert a.to_dict() == b.to_dict()
    assert generate_world(6).to_dict() != a.to_dict()


def test_hundred_seeds_connected_by_traversal():
    for seed in range(100):
        w = generate_world(seed)
        assert len(bfs_hops(adjacency(w), 0)) == w.n
        deg = max(len(w.neighbors(v)) for v in range(w.n))
        assert deg <= w.features.n_views
        d = np.hypot(*(w.positions[:, None] - w.positions[None]).transpose(2, 0, 1))
        assert np.all(d[np.triu_indices(w.n, 1)] > 0)


def test_objects_per_viewpoint_and_rooms(world):
    assert all(2 <= len(o) <= 4 and len(set(o)) == len(o) for o in world.objects)
    assert all(0 <= r < len(ROOM_WORDS) for r in world.rooms)
    assert len(set(world.rooms)) > 1


# ------------------------------------------------------------ teacher and shortest paths

def test_geodesic_matches_independent_dijkstra():
    for seed in range(20):
        w = generate_world(seed)
        adj = adjacency(w)
        for s in range(0, w.n, 5):
            d = dijkstra(adj, w.distance, s)
            assert all(abs(d[t] - w.geodesic[s, t]) < 1e-9 for t in range(w.n))
            h = bfs_hops(adj, s)
            assert all(h[t] == w.hops[s, t] for t in range(w.n))


def test_teacher_reaches_goal_along_shortest_path():
    for seed in range(20):
        w = generate_world(seed)
        adj = adjacency(w)
        for s in range(w.n):
            hops = bfs_hops(adj, s)
            for g in range(w.n):
                path = w.shortest_path(s, g)
                assert path[0] == s and path[-1] == g
                assert abs(path_length(w, path) - w.geodesic[s, g]) < 1e-9
                # geometric shortest paths can take more hops, never fewer
                assert len(path) - 1 >= hops[g]


def test_teacher_path_brute_force_small_worlds():
    for seed in range(5):
        w = generate_world(seed, n_viewpoints=8)
        adj = adjacency(w)
        for s in range(w.n):
            for g in range(w.n):
                if s != g:
                    best = all_simple_path_min(adj, w.distance, s, g)
                    assert abs(path_length(w, w.shortest_path(s, g)) - best) < 1e-9


def test_teacher_stop_and_adjacent(world):
    assert teacher_action(world, 4, 4) == STOP
    for v in range(world.n):
        for idx, u in enumerate(world.neighbors(v)):
            if abs(world.distance(v, u) - world.geodesic[v, u]) < 1e-12:
                assert world.neighbors(v)[teacher_action(world, v, u)] == u


def test_teacher_tie_break_smallest_id():
    # a square: two equal-length routes from corner 0 to corner 3
    from lvgraph.synthworld import World
    w = World("sq", 0, np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=float),
              [(0, 1), (0, 2), (1, 3), (2, 3)], [0, 0, 0, 0], [[0, 1]] * 4)
    assert w.neighbors(0)[teacher_action(w, 0, 3)] == 1


# ------------------------------------------------------------ episodes and instructions

def test_adjacent_episode_range(world):
    for i in range(20):
        e = make_episode(world, 0, (1, 1), index=i)
        assert len(e.path) == 2 and e.goal in world.neighbors(e.start)


def test_episode_path_range_and_vocab(world):
    vocab = default_vocabulary()
    for i in range(50):
        e = make_episode(world, 1, (2, 5), index=i, vocab=vocab)
        assert 2 <= len(e.path) - 1 <= 5
        assert e.path == world.shortest_path(e.start, e.goal)
        assert all(t in vocab.stoi for t in e.tokens)
        assert e.token_ids == vocab.encode(e.tokens)
        assert len(e.tokens) <= 12 * (len(e.path) - 1) + 6


def test_impossible_range_rejected():
    w = generate_world(0, n_viewpoints=3)
    with pytest.raises(ValueError):
        make_episode(w, 0, (10, 12))


def test_one_edge_instruction_clauses(world):
    a, b = world.edges[0]
    words = instruction_words(world, [a, b], 0.0, np.random.default_rng(0))
    assert words.count("walk") == 1 and words.count("stop") == 1
    assert words[:2] == ["walk", relative_direction_word(world.bearing(a, b))]
    assert len(words) == 12


@pytest.mark.parametrize("angle,word", [(math.pi / 2, "left"), (-math.pi / 2, "right"), (0.1, "straight"),
                                        (math.pi, "back"), (-math.pi + 0.2, "back"), (2.0, "left")])
def test_relative_direction_words(angle, word):
    assert relative_direction_word(angle) == word
    assert relative_direction_word(angle + 2 * math.pi) == word


def test_relative_direction_boundaries():
    # sector edges belong to the narrower turn: straight at 45 deg, left/right at 135 deg
    assert relative_direction_word(math.pi / 4) == "straight"
    assert relative_direction_word(-math.pi / 4) == "straight"
    assert relative_direction_word(3 * math.pi / 4) == "left"
    assert relative_direction_word(-3 * math.pi / 4) == "right"


def test_instruction_faithful_to_path():
    for seed in range(10):
        w = generate_world(seed)
        for i in range(20):
            e = make_episode(w, seed, (2, 5), index=i)
            clauses = " ".join(e.tokens).split("walk ")[1:]
            heading = e.start_heading
            for (a, b), clause in zip(zip(e.path, e.path[1:]), clauses):
                words = clause.split()
                assert words[0] == relative_direction_word(w.bearing(a, b) - heading)
                assert OBJECT_WORDS.index(words[3]) in w.shown_objects(b)
                assert ROOM_WORDS.index(words[6]) == w.rooms[b]
                heading = w.bearing(a, b)
            tail = e.tokens[-4:]
            assert tail[:3] == ["stop", "by", "the"] and OBJECT_WORDS.index(tail[3]) in w.shown_objects(e.goal)
            assert set(e.tokens) & set(DIRECTION_WORDS)


def test_generate_instruction_ids(world):
    ids = generate_instruction(world, world.shortest_path(0, 5), 0.3, np.random.default_rng(0))
    assert all(isinstance(i, int) and i >= 2 for i in ids)


def test_episode_determinism(world):
    a = [make_episode(world, 4, index=i) for i in range(10)]
    b = [make_episode(world, 4, index=i) for i in range(10)]
    assert [e.to_dict() for e in a] == [e.to_dict() for e in b]


# ------------------------------------------------------------ observation and step

def test_observation_geometry(world):
    v = 5
    ob = observe(world, v, 0.7)
    assert ob.n_candidates == len(world.neighbors(v))
    assert ob.view_features.shape == (36, world.features.scene_dim)
    for u, h in zip(ob.candidate_ids, ob.candidate_headings):
        assert abs(wrap_angle(h - (world.bearing(v, u) - 0.7))) < 1e-12
    assert np.all(ob.candidate_elevations == 0)
    assert ob.candidate_objects.shape == (ob.n_candidates, 3, world.features.object_dim)


def test_rotating_heading_rotates_relative_headings(world):
    a, b = observe(world, 2, 0.3), observe(world, 2, 0.3 + 0.9)
    assert np.allclose(wrap_angle(b.view_headings - (a.view_headings - 0.9)), 0, atol=1e-12)
    assert np.allclose(wrap_angle(b.candidate_headings - (a.candidate_headings - 0.9)), 0, atol=1e-12)
    assert np.array_equal(a.view_features, b.view_features)


def test_observation_deterministic(world):
    fresh = generate_world(3)
    a, b = observe(world, 7, 1.1), observe(fresh, 7, 1.1)
    for f in ("view_features", "candidate_scene", "candidate_objects", "candidate_headings"):
        assert np.array_equal(getattr(a, f), getattr(b, f))


def test_candidate_scene_is_sector_view(world):
    ob = observe(world, 1, 0.0)
    for u, s in zip(ob.candidate_ids, ob.candidate_scene):
        assert np.array_equal(s, ob.view_features[world.sector_of(world.bearing(1, u))])


def test_unknown_viewpoint(world):
    with pytest.raises(KeyError):
        observe(world, world.n, 0.0)


def test_step_semantics(world):
    assert step(world, 3, STOP, 0.5) == (3, 0.5, True)
    u_idx = 0
    u = world.neighbors(3)[u_idx]
    nxt, _, done = step(world, 3, u_idx)
    assert nxt == u and not done
    back = world.neighbors(u).index(3)
    assert step(world, u, back)[0] == 3
    with pytest.raises(IndexError):
        step(world, 3, len(world.neighbors(3)))
    assert step(world, 3, 0, steps_taken=11, max_steps=12)[2]


# ------------------------------------------------------------ files

def test_world_and_episode_files_roundtrip(tmp_path, world):
    tiny = generate_world(9, n_viewpoints=2)
    save_worlds(tmp_path / "w.json", [world, tiny])
    w2, t2 = load_worlds(tmp_path / "w.json")
    assert w2.to_dict() == world.to_dict() and t2.to_dict() == tiny.to_dict()
    assert np.array_equal(observe(w2, 3, 0.2).view_features, observe(world, 3, 0.2).view_features)
    eps = [make_episode(world, 0, index=i) for i in range(5)]
    save_episodes(tmp_path / "e.jsonl", eps)
    assert [e.to_dict() for e in load_episodes(tmp_path / "e.jsonl")] == [e.to_dict() for e in eps]
