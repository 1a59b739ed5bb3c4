"""Interference-network contracts: pairing, effective parameters, the
digitized phase shift, lookup compilation, node filtering, the runtime
pipeline, and the node-sharing arithmetic."""

import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from thetanav.chip_io import InsufficientUnitsError, UnitFit
from thetanav.theta_core import OscillatorState, step, tap_output
from thetanav.vector_net import (
    DEFAULT_FILTERS,
    FIR_LAYER1,
    FIR_LAYER2,
    CompileError,
    EffectiveCell,
    FilterParams,
    MuxTable,
    NodeState,
    Pair,
    Pairing,
    PairingError,
    TargetLocation,
    VectorNetwork,
    circular_distance,
    compile_lookup,
    deserialize_mux,
    effective_params,
    node_step,
    pair_beat_frequency,
    pair_layer1,
    phase_shift,
    rc_step,
    serialize_mux,
    sharable_nodes,
    square_wave,
    total_nodes,
)


def fits_from(f_idles, betas, start_unit=0):
    return [UnitFit(start_unit + i, f, b, 0.999)
            for i, (f, b) in enumerate(zip(f_idles, betas))]


class TestPairLayer1:
    def test_four_unit_matching_beats_brute_force(self):
        # Oracle: enumerate all perfect matchings of 4 units and keep the
        # one minimizing the summed idle-frequency differences.
        f_idles = [100.0, 101.0, 200.0, 202.0]
        fits = fits_from(f_idles, [20.0] * 4)
        pairing = pair_layer1(fits, n_units=4)
        got = {frozenset((p.unit_a, p.unit_b)) for p in pairing.pairs}

        best, best_cost = None, float("inf")
        units = list(range(4))
        for perm in itertools.permutations(units):
            m = {frozenset(perm[:2]), frozenset(perm[2:])}
            cost = sum(abs(f_idles[a] - f_idles[b]) for a, b in
                       (sorted(s) for s in m))
            if cost < best_cost:
                best, best_cost = m, cost
        assert got == best == {frozenset({0, 1}), frozenset({2, 3})}

    def test_identical_idles_all_zero_delta(self):
        fits = fits_from([1500.0] * 80, [20.0] * 80)
        pairing = pair_layer1(fits)
        for p in pairing.pairs:
            assert p.unit_a != p.unit_b

    def test_structure_and_code_negation(self):
        rng = np.random.default_rng(0)
        fits = fits_from(rng.normal(2000, 300, 80).tolist(), [20.0] * 80)
        pairing = pair_layer1(fits)
        assert len(pairing.pairs) == 40
        assert sum(1 for p in pairing.pairs if p.axis == "x") == 20
        assert sum(1 for p in pairing.pairs if p.axis == "y") == 20
        used = pairing.unit_ids()
        assert len(used) == len(set(used)) == 80
        for p in pairing.pairs:
            pa = p.pref_a()
            assert abs(pa[0]) + abs(pa[1]) == 4

    def test_adjacent_sorted_pairing_minimizes_offsets(self):
        rng = np.random.default_rng(3)
        f_idles = rng.normal(2000, 374, 80)
        fits = fits_from(f_idles.tolist(), [20.0] * 80)
        pairing = pair_layer1(fits)
        sorted_f = np.sort(f_idles)
        for j, p in enumerate(pairing.pairs):
            fa = fits[p.unit_a].f_idle_hat
            fb = fits[p.unit_b].f_idle_hat
            assert {fa, fb} == {sorted_f[2 * j], sorted_f[2 * j + 1]}

    def test_insufficient_units(self):
        fits = fits_from([2000.0] * 79, [20.0] * 79)
        with pytest.raises(InsufficientUnitsError):
            pair_layer1(fits)


class TestEffectiveParams:
    def test_reference_values(self):
        a = UnitFit(0, 10.0, 3.5, 1.0)
        b = UnitFit(1, 13.5, 4.9, 1.0)
        cell = effective_params(a, b, (1, 0), (-1, 0))
        assert cell.beta_eff == pytest.approx(8.4)
        assert cell.f_off_eff == pytest.approx(-3.5)
        assert cell.theta_p == 0.0

    def test_mirrored_pair_cancels_offset_exactly(self):
        for f_idle, beta in ((2000.0, 18.0), (1714.3, 25.5)):
            a = UnitFit(0, f_idle, beta, 1.0)
            b = UnitFit(1, f_idle, beta, 1.0)
            cell = effective_params(a, b, (0, 4), (0, -4))
            assert cell.f_off_eff == 0.0
            assert cell.beta_eff == 2 * beta

    def test_non_opposing_rejected(self):
        a = UnitFit(0, 2000.0, 20.0, 1.0)
        b = UnitFit(1, 2010.0, 20.0, 1.0)
        with pytest.raises(PairingError):
            effective_params(a, b, (4, 0), (0, -4))

    def test_simulated_beat_matches_effective_parameters(self):
        # The AND-interfered envelope of two real square waves must beat
        # at beta_eff * inner + f_off_eff.
        fs, dur = 27272.7, 10.0
        n = int(fs * dur)
        f_ref = 2023.771
        for p in (-12.0, 4.0, 16.0):
            f_a = f_ref + 10.0 + 3.5 * p
            f_b = f_ref + 13.5 - 4.9 * p
            predicted = abs(8.4 * p - 3.5)
            measured = pair_beat_frequency(
                square_wave(f_a, fs, n), square_wave(f_b, fs, n), fs)
            assert abs(measured - predicted) <= 0.02 * predicted


class TestPhaseShift:
    CELL = EffectiveCell(8.4, -3.5, 0.0, (0, 1), 1.0)

    def test_zero_distance(self):
        assert phase_shift(TargetLocation(0.0, 1.2), self.CELL, 2.0) == 0.0

    def test_reference_example(self):
        phi = phase_shift(TargetLocation(1.0, 0.0), self.CELL, 2.0)
        assert phi == pytest.approx(0.100, abs=1e-9)

    def test_cosine_null(self):
        # The result is cyclic with period 1/8; a float cos(pi/2) of
        # ~6e-17 may land the residual at 0.125 - eps, equivalent to 0.
        cell = EffectiveCell(8.4, 0.0, 0.0, (0, 1), 1.0)
        for r in (0.5, 1.0, 7.3):
            phi = phase_shift(TargetLocation(r, math.pi / 2), cell, 2.0)
            assert min(phi, 0.125 - phi) <= 1e-12

    def test_range_and_bearing_periodicity(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            cell = EffectiveCell(float(rng.uniform(1, 60)),
                                 float(rng.uniform(-30, 30)),
                                 float(rng.uniform(-math.pi, math.pi)),
                                 (0, 1), float(rng.choice([1.0, 4.0])))
            loc = TargetLocation(float(rng.uniform(0, 10)),
                                 float(rng.uniform(-math.pi, math.pi)))
            speed = float(rng.uniform(0.05, 4.0))
            phi = phase_shift(loc, cell, speed)
            assert 0.0 <= phi < 0.125
            shifted = TargetLocation(loc.r, loc.theta + 2 * math.pi)
            assert phase_shift(shifted, cell, speed) == pytest.approx(
                phi, abs=1e-9)

    def test_zero_speed_rejected(self):
        with pytest.raises(ValueError):
            phase_shift(TargetLocation(1.0, 0.0), self.CELL, 0.0)


def synthetic_pairing(n_pairs=4):
    """Minimal pairing: n_pairs/2 x-pairs then n_pairs/2 y-pairs over
    units 0..2*n_pairs-1."""
    pairs = []
    for j in range(n_pairs):
        axis = "x" if j < n_pairs // 2 else "y"
        codes = ((12, 8), (4, 8)) if axis == "x" else ((8, 12), (8, 4))
        pairs.append(Pair(unit_a=2 * j, unit_b=2 * j + 1, axis=axis,
                          code_a=codes[0], code_b=codes[1]))
    return Pairing(pairs=tuple(pairs))


class TestCompileLookup:
    def test_zero_distance_all_taps_zero(self):
        pairing = synthetic_pairing()
        fits = fits_from([2000, 2010, 1990, 2005, 2020, 1985, 2001, 1999],
                         [20.0] * 8)
        mux = compile_lookup(pairing, fits, TargetLocation(0.0, 0.0), 0.25,
                             min_active_groups=1)
        assert all(tap == 0 for _, tap in mux.slots)
        assert mux.dropped == []

    def test_integer_accumulation_zero_residual(self):
        # Zero mismatch with the pair beat accumulating whole cycles by
        # arrival: every required shift is 0, every residual 0.
        pairing = synthetic_pairing()
        beta = 64.0
        fits = fits_from([2000.0] * 8, [beta] * 8)
        # x-pair beat = 2*beta*(4*speed) = 128 Hz at speed 0.25;
        # arrival time r/speed = 1/128 s gives exactly one beat cycle.
        mux = compile_lookup(pairing, fits,
                             TargetLocation(0.25 / 128.0, 0.0), 0.25,
                             min_active_groups=1)
        assert all(tap == 0 for _, tap in mux.slots)
        assert mux.residuals == [0.0, 0.0]
        assert mux.dropped == []

    def test_tie_at_half_tap_prefers_lower_index(self):
        pairing = synthetic_pairing()
        # Group 0's x-pair accumulates 15/16 of a cycle by arrival, so
        # the required shift is exactly 1/16: equidistant from taps 0 and
        # 1; the lower index wins and the group stays at tolerance.
        f_idles = [2040.0, 2000.0, 2000.0, 2000.0,
                   2000.0, 2000.0, 2000.0, 2000.0]
        betas = [40.0, 40.0, 64.0, 64.0, 64.0, 64.0, 64.0, 64.0]
        fits = fits_from(f_idles, betas)
        speed, r = 0.25, 0.25 / 128.0
        mux = compile_lookup(pairing, fits, TargetLocation(r, 0.0), speed,
                             min_active_groups=1)
        taps = dict(mux.slots)
        assert taps[0] == 0
        assert mux.residuals[0] == pytest.approx(1.0 / 16.0, abs=1e-12)
        assert 0 not in mux.dropped

    def test_recompilation_bit_identical(self):
        rng = np.random.default_rng(9)
        pairing = synthetic_pairing(8)
        fits = fits_from(rng.normal(2000, 300, 16).tolist(),
                         rng.uniform(15, 25, 16).tolist())
        target = TargetLocation(0.012, 0.7)
        a = compile_lookup(pairing, fits, target, 0.25, min_active_groups=1)
        b = compile_lookup(pairing, fits, target, 0.25, min_active_groups=1)
        assert a.slots == b.slots
        assert a.dropped == b.dropped
        assert a.residuals == b.residuals

    def test_drift_drop_and_group_floor(self):
        pairing = synthetic_pairing()
        # A big y-pair offset leaves the idle side misaligned at arrival
        # (300 Hz over 9.6 ms accumulates 2.88 cycles, 0.12 off a whole).
        fits = fits_from([2000.0, 2000.0, 2000.0, 2000.0,
                          2300.0, 2000.0, 2000.0, 2000.0], [20.0] * 8)
        target = TargetLocation(0.0024, 0.0)
        mux = compile_lookup(pairing, fits, target, 0.25,
                             drift_tolerance=0.05, min_active_groups=1)
        assert mux.dropped == [0]
        with pytest.raises(CompileError):
            compile_lookup(pairing, fits, target, 0.25,
                           drift_tolerance=0.05, min_active_groups=2)

    def test_matches_waveform_oracle(self):
        # Brute-force oracle: step every unit's oscillator to the arrival
        # tick, read its phase, and re-derive the tap choice.
        rng = np.random.default_rng(17)
        pairing = synthetic_pairing(8)
        fits = fits_from(rng.normal(2000, 200, 16).tolist(),
                         rng.uniform(18, 24, 16).tolist())
        fs = 27777.0
        speed = 0.25
        for trial in range(6):
            r = float(rng.uniform(0.0005, 0.005))
            theta = float(rng.uniform(-math.pi, math.pi))
            mux = compile_lookup(pairing, fits, TargetLocation(r, theta),
                                 speed, min_active_groups=1)
            taps = dict(mux.slots)

            v = (speed * math.cos(theta), speed * math.sin(theta))
            n_ticks = round(r / speed * fs)
            phases = {}
            for p in pairing.pairs:
                pref_a = p.pref_a()
                for unit, pref in ((p.unit_a, pref_a),
                                   (p.unit_b, (-pref_a[0], -pref_a[1]))):
                    fit = fits[unit]
                    f = fit.f_idle_hat + fit.beta_hat * (
                        v[0] * pref[0] + v[1] * pref[1])
                    state = OscillatorState(0.0)
                    for _ in range(n_ticks):
                        state = step(state, f, 1.0 / fs)
                    phases[unit] = state.phase
            x_active = abs(v[0]) >= abs(v[1])
            for g in range(pairing.n_groups):
                xp, yp = pairing.group(g)
                active = xp if x_active else yp
                delta = (phases[active.unit_a] - phases[active.unit_b]) % 1.0
                required = (-delta) % 1.0
                compiled_phase = taps[active.unit_a] / 8.0
                assert circular_distance(compiled_phase, required) \
                    <= 1.0 / 16.0 + 1e-6, (trial, g)


class TestMuxSerialization:
    def test_round_trip(self):
        pairing = synthetic_pairing()
        fits = fits_from([2000, 2011, 1990, 2005, 2020, 1985, 2001, 1999],
                         [20.0] * 8)
        mux = compile_lookup(pairing, fits, TargetLocation(0.003, 1.1), 0.25,
                             min_active_groups=1)
        text = serialize_mux(mux)
        back = deserialize_mux(text)
        assert back.slots == mux.slots
        assert back.dropped == mux.dropped
        assert back.target == mux.target
        assert back.speed == mux.speed
        assert back.tolerance == mux.tolerance

    def test_header_checked(self):
        with pytest.raises(ValueError):
            deserialize_mux("something-else\n0,0,0\n")


class TestFilters:
    def test_fir_symmetric_unit_gain(self):
        for coeffs in (FIR_LAYER1, FIR_LAYER2):
            assert len(coeffs) == 9
            assert np.allclose(coeffs, coeffs[::-1])
            assert abs(coeffs.sum() - 1.0) <= 1e-9

    def test_rc_step_response_closed_form_exact(self):
        alpha = Fraction(1, 64)
        y = Fraction(0)
        for n in range(1, 200):
            y = rc_step(y, Fraction(1), alpha)
            assert y == 1 - (1 - alpha) ** n

    def test_rc_float_tracks_exact(self):
        alpha = 1.0 / 64.0
        y = 0.0
        for n in range(1, 500):
            y = rc_step(y, 1.0, alpha)
            assert abs(y - (1 - (1 - alpha) ** n)) <= 1e-12

    def test_rc_accumulator_stays_in_unit_interval(self):
        rng = np.random.default_rng(2)
        node = NodeState()
        for _ in range(2000):
            node_step(node, int(rng.integers(2)), int(rng.integers(2)), 1)
            assert 0.0 <= node.rc <= 1.0


class TestNodeStep:
    def test_constant_ones_crossing_matches_exact_recurrence(self):
        # Independent oracle in exact arithmetic: moving-average FIR fill
        # then RC rise, Schmitt crossing at 55/100.
        alpha = Fraction(1, 64)
        coeffs = [Fraction(1, 9)] * 9
        hist = [Fraction(0)] * 9
        y = Fraction(0)
        oracle_n = None
        for n in range(1, 600):
            hist = [Fraction(1)] + hist[:-1]
            fir = sum(c * h for c, h in zip(coeffs, hist))
            y = y + alpha * (fir - y)
            if y >= Fraction(55, 100):
                oracle_n = n
                break
        assert oracle_n is not None

        node = NodeState()
        got_n = None
        for n in range(1, 600):
            if node_step(node, 1, 1, layer=2) == 1:
                got_n = n
                break
        assert got_n == oracle_n
        # RC rise only begins once the 9-tap pipeline fills, so the
        # crossing must land past the idealized fill-plus-rise bound.
        assert got_n > 9

    def test_zero_input_flushes_low(self):
        node = NodeState()
        for _ in range(200):
            node_step(node, 1, 1, layer=1)
        assert node.out == 1
        for _ in range(400):
            out = node_step(node, 0, 1, layer=1)
        assert out == 0 and node.rc < 1e-4

    def test_beat_toggles_at_difference_frequency(self):
        fs = 27272.7
        n = int(2.0 * fs)
        wa = square_wave(2000.0, fs, n)
        wb = square_wave(2050.0, fs, n)
        node = NodeState()
        outs = np.array([node_step(node, int(a), int(b), layer=1)
                         for a, b in zip(wa, wb)], dtype=np.uint8)
        rises = int(np.count_nonzero((outs[1:] == 1) & (outs[:-1] == 0)))
        assert abs(rises / 2.0 - 50.0) <= 1.0

    def test_bad_layer(self):
        with pytest.raises(ValueError):
            node_step(NodeState(), 1, 1, layer=3)


def small_network(seed=0, n_pairs=4):
    rng = np.random.default_rng(seed)
    pairing = synthetic_pairing(n_pairs)
    fits = fits_from(rng.normal(2000, 150, 2 * n_pairs).tolist(),
                     rng.uniform(18, 24, 2 * n_pairs).tolist())
    mux = compile_lookup(pairing, fits, TargetLocation(0.002, 0.3), 0.25,
                         min_active_groups=1)
    layout = {(u, t): 8 * u + t for u in range(2 * n_pairs) for t in range(8)}
    return VectorNetwork(mux, layout, DEFAULT_FILTERS), 2 * n_pairs


class TestVectorNetwork:
    def test_all_zero_input_outputs_zero(self):
        net, n_units = small_network()
        frame = np.zeros(8 * n_units, dtype=np.uint8)
        assert all(net.step(frame) == 0 for _ in range(300))

    def test_all_one_input_rises_after_both_stages(self):
        net, n_units = small_network()
        frame = np.ones(8 * n_units, dtype=np.uint8)
        outs = [net.step(frame) for _ in range(400)]
        assert outs[-1] == 1
        first = outs.index(1)
        # Layer-1 rise (fill + RC to 0.22) must precede the layer-2 rise.
        assert first > 9

    def test_batch_matches_per_sample(self):
        rng = np.random.default_rng(5)
        net, n_units = small_network(seed=3)
        frames = rng.integers(0, 2, size=(500, 8 * n_units)).astype(np.uint8)
        batch = net.run(frames)
        net.reset()
        stepped = np.array([net.step(f) for f in frames], dtype=np.uint8)
        assert np.array_equal(batch, stepped)

    def test_reset_clears_state(self):
        net, n_units = small_network()
        frame = np.ones(8 * n_units, dtype=np.uint8)
        for _ in range(300):
            net.step(frame)
        net.reset()
        assert all(n.rc == 0.0 and n.out == 0 for n in net.l1 + net.l2)

    def test_missing_phase_rejected(self):
        pairing = synthetic_pairing()
        fits = fits_from([2000.0] * 8, [20.0] * 8)
        mux = compile_lookup(pairing, fits, TargetLocation(0.002, 0.0), 0.25,
                             min_active_groups=1)
        layout = {(u, 0): u for u in range(8)}  # tap-0 only
        if any(t != 0 for _, t in mux.slots):
            with pytest.raises(CompileError):
                VectorNetwork(mux, layout)
        else:
            VectorNetwork(mux, layout)


class TestNodeAccounting:
    def test_reference_values(self):
        assert sharable_nodes(80, 2) == 20
        assert total_nodes(80, 2, 1) == 60
        assert total_nodes(80, 2, 4) == 180

    def test_single_layer_shares_nothing(self):
        for m in (2, 8, 64, 128):
            assert sharable_nodes(m, 1) == 0

    def test_closed_form_identity_over_grid(self):
        for n in (1, 2, 3, 4):
            for mult in (1, 2, 3, 5):
                m = mult * 2 ** n
                assert total_nodes(m, n, 1) == \
                    sharable_nodes(m, n) + m * n // 2 ** n

    @pytest.mark.parametrize("m,n,k", [(64, 3, 2), (80, 2, 4), (16, 2, 3),
                                       (32, 4, 2)])
    def test_structural_count_oracle(self, m, n, k):
        # Build the actual node graphs: layer-l node j of network w covers
        # units [j*2^l, (j+1)*2^l); one routable unit per 2^n block (the
        # last one).  Nodes whose unit range misses every routable unit
        # have fixed phase and are shared across networks.
        def covers_routable(j, layer):
            lo, hi = j * 2 ** layer, (j + 1) * 2 ** layer
            return any(lo <= u < hi for u in range(2 ** n - 1, m, 2 ** n))

        shared_ids = set()
        distinct = set()
        for w in range(k):
            for layer in range(1, n + 1):
                for j in range(m // 2 ** layer):
                    if covers_routable(j, layer):
                        distinct.add(("net", w, layer, j))
                    else:
                        shared_ids.add(("shared", layer, j))
        assert len(shared_ids) == sharable_nodes(m, n)
        assert len(shared_ids) + len(distinct) == total_nodes(m, n, k)

    def test_divisibility_enforced(self):
        with pytest.raises(ValueError):
            sharable_nodes(81, 2)
        with pytest.raises(ValueError):
            total_nodes(20, 3, 2)
