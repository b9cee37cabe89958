"""Tests for indicators, feature tables and the train-only scaler"""
import os
import tempfile
import unittest

import numpy as np
import pandas as pd
from scipy import stats

from fxrl import features
from fxrl.bars import SyntheticSpec, generate_synthetic
from fxrl.errors import ConfigError, DataError


class TestIndicators(unittest.TestCase):
    """Test the indicator arithmetic on a short series"""
    def setUp(self) -> None:
        self.close = pd.Series([1.0, 2.0, 3.0, 4.0, 5.0, 4.0, 3.0])

    def test_sma(self):
        values = features.sma(self.close, 3)
        self.assertTrue(values.iloc[:2].isna().all())
        self.assertAlmostEqual(values.iloc[2], 2.0)
        self.assertAlmostEqual(values.iloc[6], 4.0)

    def test_ema_seeded(self):
        """The EMA starts at the first value"""
        values = features.ema(self.close, 3)
        self.assertEqual(values.iloc[0], 1.0)
        self.assertAlmostEqual(values.iloc[1], 1.5)

    def test_rsi_bounds(self):
        rising = pd.Series(np.arange(1.0, 30.0))
        self.assertEqual(features.rsi(rising).iloc[-1], 100.0)
        flat = pd.Series(np.ones(30))
        self.assertEqual(features.rsi(flat).iloc[-1], 50.0)
        values = features.rsi(self.close, 3).dropna()
        self.assertTrue(((values >= 0.0) & (values <= 100.0)).all())

    def test_macd_hist(self):
        line, signal, hist = features.macd(self.close)
        np.testing.assert_allclose(hist, line - signal)

    def test_bollinger_population_std(self):
        mid, upper, lower = features.bollinger(self.close, 3, 2.0)
        std = np.std([3.0, 4.0, 5.0])
        self.assertAlmostEqual(upper.iloc[4], 4.0 + 2.0 * std)
        self.assertAlmostEqual(lower.iloc[4], 4.0 - 2.0 * std)

    def test_session(self):
        index = pd.DatetimeIndex(['2022-01-03 02:00', '2022-01-03 08:00',
                                  '2022-01-03 15:00', '2022-01-03 21:00'],
                                 tz='UTC')
        np.testing.assert_array_equal(features.session_label(index),
                                      [0, 1, 2, 3])


class TestFeatureTable(unittest.TestCase):
    """Test the full feature table"""
    def setUp(self) -> None:
        self.bars = generate_synthetic(SyntheticSpec(), 400, 1)

    def test_names_and_width(self):
        """Default config gives 19 features in canonical order"""
        table = features.compute_features(self.bars)
        self.assertEqual(list(table.columns), features.feature_names())
        self.assertEqual(table.shape[1], 19)
        self.assertEqual(len(table), 400 - features.warmup_horizon())
        self.assertFalse(table.isna().any().any())
        self.assertEqual(table.dtypes.unique().tolist(), [np.float64])

    def test_subset_config(self):
        config = features.FeatureConfig.from_dict(
            {'macd_components': ['hist', 'line'],
             'bollinger_components': ['mid']})
        self.assertEqual(config.macd_components, ('line', 'hist'))
        self.assertEqual(len(features.feature_names(config)), 16)

    def test_bad_config(self):
        with self.assertRaises(ConfigError):
            features.FeatureConfig(macd_components=('zigzag',))
        with self.assertRaises(ConfigError):
            features.FeatureConfig(volatility_window=1)

    def test_causal(self):
        """Changing bar t+1 leaves every feature row up to t unchanged"""
        base = features.compute_features(self.bars)
        t = 200
        changed = self.bars.copy()
        changed.iloc[t + 1:, :4] *= 1.3
        again = features.compute_features(changed)
        pd.testing.assert_frame_equal(base.loc[:self.bars.index[t]],
                                      again.loc[:self.bars.index[t]])

    def test_too_short(self):
        with self.assertRaises(DataError):
            features.compute_features(self.bars.iloc[:60])


class TestScaler(unittest.TestCase):
    """Test fitting and applying the scaler"""
    def setUp(self) -> None:
        self.rows = pd.DataFrame({'a': [1.0, 2.0, 3.0, 4.0],
                                  'b': [5.0, 5.0, 5.0, 5.0]})

    def test_fit(self):
        params = features.fit_scaler(self.rows)
        self.assertAlmostEqual(params.mean[0], 2.5)
        self.assertAlmostEqual(params.stdev[0], np.std([1.0, 2.0, 3.0, 4.0]))
        self.assertEqual(params.stdev[1], features.SCALER_EPS)

    def test_constant_column_scales_to_zero(self):
        params = features.fit_scaler(self.rows)
        scaled = features.apply_scaler(self.rows, params)
        self.assertTrue((scaled['b'] == 0.0).all())

    def test_standardized(self):
        """Scaled train rows have mean 0 and unit population stdev"""
        bars = generate_synthetic(SyntheticSpec(), 500, 2)
        raw = features.compute_features(bars)
        scaled = features.apply_scaler(raw, features.fit_scaler(raw))
        np.testing.assert_allclose(scaled.mean(), 0.0, atol=1e-9)
        varying = raw.columns[raw.std() > 0]
        np.testing.assert_allclose(scaled[varying].std(ddof=0), 1.0,
                                   rtol=1e-9)
        self.assertLess(abs(stats.describe(scaled['tech.log_return']).mean),
                        1e-9)

    def test_unscale(self):
        params = features.fit_scaler(self.rows)
        again = features.unscale(features.apply_scaler(self.rows, params),
                                 params)
        pd.testing.assert_frame_equal(again, self.rows)

    def test_width_mismatch(self):
        params = features.fit_scaler(self.rows)
        with self.assertRaises(DataError):
            features.apply_scaler(self.rows[['b', 'a']], params)

    def test_params_frozen(self):
        params = features.fit_scaler(self.rows)
        with self.assertRaises(ValueError):
            params.mean[0] = 0.0

    def test_file(self):
        params = features.fit_scaler(self.rows)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'scaler.txt')
            features.write_scaler(params, path)
            again = features.read_scaler(path)
        self.assertEqual(again.to_bytes(), params.to_bytes())


class TestDataset(unittest.TestCase):
    """Test the split, warm-up and train-only scaling"""
    def setUp(self) -> None:
        self.bars = generate_synthetic(SyntheticSpec(), 600, 4)
        self.split = features.build_dataset(self.bars, 0.8)

    def test_scaler_train_only(self):
        """The scaler depends on train rows only"""
        changed = self.bars.copy()
        changed.iloc[500:, :4] *= 2.0
        again = features.build_dataset(changed, 0.8)
        self.assertEqual(again.scaler.to_bytes(),
                         self.split.scaler.to_bytes())

    def test_heldout_starts_at_split(self):
        """Heldout features cover every heldout bar"""
        self.assertTrue(self.split.heldout_features.index.equals(
            self.split.heldout.index))
        self.assertEqual(len(self.split.train_features),
                         480 - features.warmup_horizon())

    def test_leak_heldout(self):
        leaky = features.build_dataset(self.bars, 0.8, leak_heldout=True)
        self.assertNotEqual(leaky.scaler.to_bytes(),
                            self.split.scaler.to_bytes())

    def test_market_slice(self):
        market = features.market_slice(self.split, 'heldout')
        self.assertEqual(market.n_bars, 120)
        self.assertEqual(market.d_feat, 19)
        self.assertTrue(market.bars.index.equals(market.features.index))
        self.assertEqual(market.bars.attrs['pair'], 'EURUSD')
        with self.assertRaises(ConfigError):
            features.market_slice(self.split, 'test')

    def test_warmup_close(self):
        """Each slice carries the closes of the bars ahead of it"""
        close = self.bars['close']
        warmup = features.warmup_horizon()

        train = features.market_slice(self.split, 'train')
        self.assertTrue(train.warmup_close.equals(close.iloc[:warmup]))
        heldout = features.market_slice(self.split, 'heldout')
        self.assertTrue(heldout.warmup_close.equals(close.iloc[:480]))
        history, start = heldout.close_history()
        self.assertEqual(start, 480)
        np.testing.assert_array_equal(history.to_numpy(), close.to_numpy())

        prepared = features.prepare_slice(self.bars, self.split.scaler,
                                          warmup=warmup)
        self.assertTrue(prepared.warmup_close.equals(close.iloc[:warmup]))

    def test_warmup_close_order(self):
        market = features.market_slice(self.split, 'train')
        with self.assertRaises(DataError):
            features.MarketSlice(bars=market.bars, features=market.features,
                                 warmup_close=self.bars['close'])


if __name__ == '__main__':
    unittest.main()
