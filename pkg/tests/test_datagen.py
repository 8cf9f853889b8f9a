import json

import numpy as np
import pytest

import datagen
from core import INTERVAL_ID, dataset_to_jsonl, segment_runs
from datagen import GenProfile
from errors import InvalidThresholds, SchemaError, UnknownScaleValue, ValidationError


class TestQuantizeVolume:
    def test_levels(self):
        seq = datagen.quantize_volume([0.7, 0.6, 0.3, 0.2, 0.1], 0.2, 0.6)
        table = datagen.level_table()
        assert [table.name_of(o) for o in seq.obs] == ["high", "high", "low", "low", "i"]

    def test_all_silent(self):
        assert datagen.quantize_volume([0.0, 0.1], 0.2, 0.6).obs == (INTERVAL_ID, INTERVAL_ID)

    def test_thresholds_checked(self):
        with pytest.raises(InvalidThresholds):
            datagen.quantize_volume([0.5], 0.6, 0.2)
        with pytest.raises(InvalidThresholds):
            datagen.quantize_volume([0.5], -0.1, 0.2)

    def test_negative_volume_rejected(self):
        with pytest.raises(ValidationError):
            datagen.quantize_volume([0.5, -0.5], 0.2, 0.6)


class TestMusicScale:
    def test_pitches_and_silence(self):
        table = datagen.scale_table()
        seq = datagen.music_scale_encode([0.01, 0.12, 0.0, 0.05], table)
        assert [table.name_of(o) for o in seq.obs] == ["C", "B", "i", "E"]

    @pytest.mark.parametrize("value", [0.13, 0.015, -0.01])
    def test_unknown_values(self, value):
        with pytest.raises(UnknownScaleValue):
            datagen.music_scale_encode([0.01, value])


def test_drum_envelope_decays():
    trace = datagen.render_volume_trace([3], [0], "drum", np.random.default_rng(0))
    assert trace.samples == pytest.approx((1.0, 0.35, 0.1225))


def test_gaps_render_as_silence():
    trace = datagen.render_volume_trace([1, 2], [0, 2], "organ", np.random.default_rng(0))
    assert trace.samples == pytest.approx((0.8, 0.0, 0.0, 0.8, 0.8))


class TestProfiles:
    def test_presets(self):
        assert datagen.load_profile("separable").symbols_per_label == 3
        assert datagen.load_profile("interval-signature").interval_signature
        assert datagen.load_profile("music").source == "scale"

    def test_overrides_skip_none(self):
        profile = datagen.load_profile("timing", seed=4, sequences_per_label=None)
        assert profile.seed == 4
        assert profile.sequences_per_label == 35

    def test_profile_file(self, tmp_path):
        path = tmp_path / "profile.json"
        path.write_text(json.dumps({"num_labels": 2, "p_noise": 0.0}))
        profile = datagen.load_profile(str(path))
        assert profile.num_labels == 2
        assert profile.alphabet_size == GenProfile().alphabet_size

    def test_unknown_field(self, tmp_path):
        path = tmp_path / "profile.json"
        path.write_text(json.dumps({"num_lables": 2}))
        with pytest.raises(SchemaError):
            datagen.load_profile(str(path))

    def test_missing_profile(self, tmp_path):
        with pytest.raises(SchemaError):
            datagen.load_profile(str(tmp_path / "nope.json"))

    def test_invalid_profiles(self):
        with pytest.raises(ValidationError):
            GenProfile(d_min=3, d_max=2)
        with pytest.raises(ValidationError):
            GenProfile(num_runs=3, num_intervals=3)
        with pytest.raises(InvalidThresholds):
            GenProfile(volume_b1=0.7, volume_b2=0.2)


class TestSynthDataset:
    def test_fixed_durations_without_intervals(self):
        profile = GenProfile(d_min=2, d_max=2, l_min=0, l_max=0, p_noise=0.0)
        train, test = datagen.synth_dataset(profile)
        for seq in train.sequences + test.sequences:
            seg = segment_runs(seq)
            assert [r.duration for r in seg.runs] == [2] * profile.num_runs
            assert seg.num_intervals == 0

    def test_same_seed_same_bytes(self):
        profile = GenProfile(seed=11)
        first, _ = datagen.synth_dataset(profile)
        second, _ = datagen.synth_dataset(profile)
        assert dataset_to_jsonl(first) == dataset_to_jsonl(second)
        other, _ = datagen.synth_dataset(GenProfile(seed=12))
        assert dataset_to_jsonl(other) != dataset_to_jsonl(first)

    def test_noiseless_runs_stay_in_range(self):
        profile = GenProfile(p_noise=0.0, seed=5)
        train, _ = datagen.synth_dataset(profile)
        assert len(train.sequences) == profile.num_labels * profile.sequences_per_label
        for seq in train.sequences:
            seg = segment_runs(seq)
            assert len(seg.runs) == profile.num_runs
            assert all(profile.d_min <= r.duration <= profile.d_max for r in seg.runs)
            assert all(g <= profile.l_max for g in seg.interior_gaps)

    @pytest.mark.parametrize("count", [0, 2, 5])
    def test_exact_interval_count(self, count):
        profile = GenProfile(p_noise=0.0, num_intervals=count, seed=2)
        train, test = datagen.synth_dataset(profile)
        assert {segment_runs(s).num_intervals for s in train.sequences + test.sequences} == {count}

    def test_start_and_end_markers(self):
        train, _ = datagen.synth_dataset(GenProfile(add_start_end=True, num_labels=2))
        start, end = train.table.id_of("start"), train.table.id_of("end")
        assert all(s.obs[0] == start and s.obs[-1] == end for s in train.sequences)

    def test_music_preset_sizes(self):
        train, test = datagen.synth_dataset(datagen.load_profile("music"))
        assert len(train.sequences) == len(test.sequences) == 81
        assert len(train.labels) == 27
        assert train.labels[0] == "label00"

    def test_separable_labels_use_disjoint_symbols(self):
        train, _ = datagen.synth_dataset(datagen.load_profile("separable"))
        used = {label: {o for s in seqs for o in s.obs if o != INTERVAL_ID}
                for label, seqs in train.by_label().items()}
        labels = sorted(used)
        for a in labels:
            for b in labels:
                if a < b:
                    assert not used[a] & used[b]

    def test_interval_signature_templates_share_symbols(self):
        profile = datagen.load_profile("interval-signature")
        templates = [datagen.make_template(profile, k) for k in range(profile.num_labels)]
        assert len({t.symbols for t in templates}) == 1
        assert len({t.durations for t in templates}) == 1
        assert len({t.gaps for t in templates}) > 1

    def test_volume_source_alphabet(self):
        train, test = datagen.synth_dataset(GenProfile(source="volume", num_labels=2))
        assert train.table.symbols == ("i", "start", "end", "high", "low")
        allowed = {INTERVAL_ID, train.table.id_of("high"), train.table.id_of("low")}
        assert all(set(s.obs) <= allowed for s in train.sequences + test.sequences)

    def test_splits(self):
        train, test = datagen.synth_dataset(GenProfile(num_labels=2, sequences_per_label=2))
        assert (train.split, test.split) == ("train", "test")
        assert train.labels == test.labels == ["label0", "label1"]
