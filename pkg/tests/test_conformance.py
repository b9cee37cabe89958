"""The anti-lookahead checks pass on the real code and fail with a guard
broken"""
import unittest

from fxrl import conformance
from fxrl.conformance import CheckResult, ConformanceReport

# Reduced sample counts keep the suite quick
PARAMS = {
    'feature_staleness': {'n_samples': 40},
    'fill_price_rule': {},
    'reward_timing': {'n_samples': 40},
    'scaler_leakage': {},
    'mask_timing': {'n_steps': 300, 'n_samples': 12},
}


class TestChecks(unittest.TestCase):
    def run_check(self, name, leak):
        result = conformance.CHECKS[name](leak=leak, **PARAMS[name])
        self.assertEqual(result.name, name)
        return result

    def assert_sound(self, name):
        result = self.run_check(name, leak=False)
        self.assertTrue(result.passed, result.evidence)
        self.assertIsNone(result.leak)
        broken = self.run_check(name, leak=True)
        self.assertFalse(broken.passed, broken.evidence)
        self.assertEqual(broken.leak, conformance.CHECK_LEAKS[name])

    def test_feature_staleness(self):
        self.assert_sound('feature_staleness')

    def test_fill_price_rule(self):
        self.assert_sound('fill_price_rule')

    def test_reward_timing(self):
        self.assert_sound('reward_timing')

    def test_scaler_leakage(self):
        self.assert_sound('scaler_leakage')

    def test_mask_timing(self):
        self.assert_sound('mask_timing')

    def test_fill_fixture(self):
        market = conformance.fill_fixture(4)
        first = market.bars.iloc[3:5]
        self.assertEqual(list(first['close']), [1.10, 1.30])
        self.assertEqual(first['open'].iloc[1], 1.20)

    def test_fixture_is_seeded(self):
        a = conformance.make_fixture(seed=3, random_actions=True)
        b = conformance.make_fixture(seed=3, random_actions=True)
        self.assertEqual(a.market.features.to_numpy().tobytes(),
                         b.market.features.to_numpy().tobytes())
        self.assertEqual(a.actions.tolist(), b.actions.tolist())


class TestReport(unittest.TestCase):
    def setUp(self):
        self.ok = CheckResult('a', True, 'fine')
        self.bad = CheckResult('b', False, 'broken')

    def test_passed(self):
        self.assertFalse(ConformanceReport().passed)
        self.assertTrue(ConformanceReport([self.ok]).passed)
        self.assertFalse(ConformanceReport([self.ok, self.bad]).passed)

    def test_sensitive(self):
        report = ConformanceReport([self.ok], [CheckResult('a', False, 'x')])
        self.assertTrue(report.sensitive)
        report.sensitivity.append(CheckResult('b', True, 'y'))
        self.assertFalse(report.sensitive)
        self.assertFalse(ConformanceReport([self.ok]).sensitive)

    def test_frame_and_text(self):
        report = ConformanceReport([self.ok, self.bad],
                                   [CheckResult('a', False, 'x')])
        frame = report.as_frame()
        self.assertEqual(list(frame['check']), ['a', 'b'])
        self.assertTrue(frame['fails_when_broken'].iloc[0])
        text = str(report)
        self.assertTrue(text.endswith('overall: FAIL'))
        self.assertIn('sensitivity: ok', text)


if __name__ == '__main__':
    unittest.main()
