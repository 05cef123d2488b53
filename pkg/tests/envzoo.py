"""Small instances of every environment plus a round-trip fuzzer shared by tests."""
import numpy as np

from gfnkit import rng
from gfnkit.envs.base import take, rows_equal
from gfnkit.envs.dag import DagEnvironment, LocalScoreCache, ScoreParams, generate_er_dataset
from gfnkit.envs.hypergrid import HypergridEnvironment, HypergridParams
from gfnkit.envs.ising import IsingEnvironment, torus_adjacency
from gfnkit.envs.phylo import PhyloEnvironment, synthetic_species
from gfnkit.envs.sequences import (SCHEMES, SEED_WORDS, ModeSet, SequenceEnvironment, SequenceParams, bitseq_environment,
                                   generate_modes, synthetic_reward_table)


def hypergrid(dim=2, side=4):
    return HypergridEnvironment(HypergridParams(dim, side))


def sequence(scheme, length=4, vocab=3):
    variable = scheme == "autoregressive-variable"
    table = synthetic_reward_table(vocab, length, rng.key(0), min_length=1 if variable else None)
    return SequenceEnvironment(SequenceParams(scheme, length, vocab), table)


def bitseq(n=8, k=2):
    if n % 8:
        # short strings: distinct n-bit prefixes of the seed words
        prefixes = sorted({w[:n] for w in SEED_WORDS})
        modes = ModeSet(np.array([[int(c) for c in p] for p in prefixes], dtype=np.int8), 3.0)
    else:
        modes = generate_modes(n, rng.key(0), 60)
    return bitseq_environment(n, k, modes)


def dag(d=4, score="lingauss"):
    ds = generate_er_dataset(d, 1.0, 50, rng.key(1))
    return DagEnvironment(LocalScoreCache.build(ds.data, ScoreParams(score)))


def phylo(n=5, sites=6):
    return PhyloEnvironment(synthetic_species(n, sites, rng.key(2)))


def ising(side=3, sigma=0.2):
    return IsingEnvironment(sigma * torus_adjacency(side))


def all_envs():
    envs = {"hypergrid": hypergrid(), "bitseq": bitseq(), "dag": dag(), "phylo": phylo(), "ising": ising()}
    for s in SCHEMES:
        envs[f"seq-{s}"] = sequence(s)
    return envs


def random_legal(mask, gen):
    """One uniformly chosen legal action per row (PAD where none is legal)."""
    u = gen.random(mask.shape) * mask
    out = np.argmax(u, axis=1)
    return np.where(mask.any(1), out, -1)


def round_trip_fuzz(env, num_transitions, key, batch=64):
    """Random forward walks; every transition s -a-> s' must satisfy
    backward_step(s', get_backward_action(s, a, s')) == s and
    get_forward_action(s, b, s') == a.  Returns the number checked."""
    gen = rng.generator(key)
    checked = 0
    while checked < num_transitions:
        _, state = env.reset(batch)
        while not state.is_terminal.all():
            a = random_legal(env.action_mask(state), gen)
            nxt = env.step(state, a).state
            live = np.flatnonzero(~state.is_terminal)
            s, s2, al = take(state, live), take(nxt, live), a[live]
            b = env.get_backward_action(s, al, s2)
            back = env.backward_step(s2, b).state
            assert rows_equal(back, s).all(), f"{env.name}: backward_step did not invert step"
            assert np.array_equal(env.get_forward_action(back, b, s2), al), f"{env.name}: forward action"
            checked += len(live)
            state = nxt
    return checked
