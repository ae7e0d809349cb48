import numpy as np

from spotnet import SynthSpec, signature_bank, synth_generate
from spotnet.utils import substream


class TestSynthGenerate:
    def test_frame_count_from_duration(self):
        spec = SynthSpec(num_matches=1, match_minutes=90.0, feature_dim=8,
                         feature_rate=2.0)
        matches = synth_generate(spec, np.random.default_rng(0))
        assert matches[0].num_frames == 10800

    def test_same_seed_bit_identical(self):
        spec = SynthSpec(num_matches=3, match_minutes=4.0, feature_dim=8)
        a = synth_generate(spec, np.random.default_rng(11))
        b = synth_generate(spec, np.random.default_rng(11))
        for ma, mb in zip(a, b):
            np.testing.assert_array_equal(ma.features, mb.features)
            assert [(e.frame, e.label) for e in ma.events] == \
                [(e.frame, e.label) for e in mb.events]

    def test_zero_strength_is_pure_noise(self):
        spec = SynthSpec(num_matches=2, match_minutes=10.0, feature_dim=32,
                         signature_strength=0.0, pre_cue_strength=0.0,
                         noise_scale=1.0)
        matches = synth_generate(spec, np.random.default_rng(5))
        feats = np.concatenate([m.features for m in matches]).astype(np.float64)
        assert abs(feats.mean()) < 0.01
        assert abs(feats.std() - 1.0) < 0.01

    def test_signature_raises_post_event_energy(self):
        spec = SynthSpec(num_matches=2, match_minutes=6.0, feature_dim=16,
                         signature_strength=4.0)
        matches = synth_generate(spec, np.random.default_rng(2))
        post = []
        far = []
        for m in matches:
            for ev in m.events:
                post.append((m.features[ev.frame + 1:ev.frame + 6] ** 2).sum(axis=1).mean())
                far.append((m.features[ev.frame - 40:ev.frame - 30] ** 2).sum(axis=1).mean())
        assert np.mean(post) > 1.5 * np.mean(far)

    def test_events_stay_inside_margins(self):
        spec = SynthSpec(num_matches=5, match_minutes=6.0, feature_dim=8)
        for match in synth_generate(spec, np.random.default_rng(3)):
            for ev in match.events:
                assert spec.edge_margin_frames <= ev.frame
                assert ev.frame < match.num_frames - spec.edge_margin_frames

    def test_no_substitutions_near_half_boundary(self):
        spec = SynthSpec(num_matches=20, match_minutes=10.0, feature_dim=8)
        guard = spec.halftime_margin_s * spec.feature_rate
        for match in synth_generate(spec, np.random.default_rng(4)):
            boundary = match.half_frames[0]
            for ev in match.events:
                if ev.label == 2:
                    assert abs(ev.frame - boundary) > guard

    def test_shared_bank_consistent_across_splits(self):
        spec = SynthSpec(num_matches=1, match_minutes=4.0, feature_dim=8)
        bank = signature_bank(spec, substream(0, "synth-bank"))
        a = synth_generate(spec, substream(0, "synth", 0), bank=bank)
        b = synth_generate(spec, substream(0, "synth", 1), bank=bank)
        # different noise and event layout, same class templates
        assert not np.array_equal(a[0].features, b[0].features)

    def test_pre_cue_scale_zero_removes_cue(self):
        spec = SynthSpec(num_matches=1, match_minutes=6.0, feature_dim=16,
                         noise_scale=0.0, signature_strength=0.0,
                         pre_cue_strength=5.0)
        bank = signature_bank(spec, substream(0, "synth-bank"))
        with_cue = synth_generate(spec, substream(0, "synth", 0), bank=bank,
                                  pre_cue_scale=1.0)
        without = synth_generate(spec, substream(0, "synth", 0), bank=bank,
                                 pre_cue_scale=0.0)
        assert np.abs(without[0].features).max() == 0.0
        assert np.abs(with_cue[0].features).max() > 1.0
