#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <memory>
#include <random>

#include "reference.hpp"
#include "trasend/preprocess.hpp"

using namespace trasend;

namespace {

SensorRecording make_recording(const std::string& id, SensorKind kind, int64_t dims, double rate_hz,
                               double seconds, const std::function<double(int64_t, double)>& signal,
                               double t0 = 0.0) {
  SensorRecording rec;
  rec.sensor_id = id;
  rec.kind = kind;
  rec.dims = dims;
  int64_t n = static_cast<int64_t>(std::llround(seconds * rate_hz));
  for (int64_t i = 0; i < n; ++i) {
    double t = t0 + static_cast<double>(i) / rate_hz;
    rec.timestamps.push_back(t);
    for (int64_t d = 0; d < dims; ++d) rec.values.push_back(signal(d, t));
  }
  rec.validate();
  return rec;
}

}  // namespace

TEST(Segment, FiveSecondsAt50HzGivesTwentyIntervals) {
  auto rec = make_recording("acc", SensorKind::accelerometer, 1, 50.0, 5.0,
                            [](int64_t, double t) { return t; });
  auto samples = segment(rec, 5.0, 0.25);
  ASSERT_EQ(samples.size(), 1u);
  ASSERT_EQ(samples[0].size(), 20u);
  for (const auto& iv : samples[0]) {
    EXPECT_GE(iv.count, 12);
    EXPECT_LE(iv.count, 13);
  }
}

TEST(Segment, TrailingPartialSampleIsDiscarded) {
  auto rec = make_recording("acc", SensorKind::accelerometer, 1, 50.0, 12.5,
                            [](int64_t, double t) { return t; });
  auto samples = segment(rec, 5.0, 0.25);
  EXPECT_EQ(samples.size(), 2u);  // 2.5 s dropped
}

TEST(Segment, ShortRecordingGivesEmptyResult) {
  auto rec = make_recording("acc", SensorKind::accelerometer, 1, 50.0, 3.0,
                            [](int64_t, double t) { return t; });
  EXPECT_TRUE(segment(rec, 5.0, 0.25).empty());
}

TEST(Segment, IrregularTimestampsPartitionExactly) {
  SensorRecording rec;
  rec.sensor_id = "gyro";
  rec.kind = SensorKind::gyroscope;
  rec.dims = 1;
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> jitter(0.001, 0.035);
  double t = 0;
  while (t < 5.1) {
    rec.timestamps.push_back(t);
    rec.values.push_back(t);
    t += jitter(rng);
  }
  rec.validate();
  auto samples = segment(rec, 5.0, 0.25);
  ASSERT_GE(samples.size(), 1u);
  // Every point whose timestamp falls inside the sample lands in exactly one
  // interval, determined by timestamp comparison.
  std::vector<int> hits(rec.timestamps.size(), 0);
  for (const auto& iv : samples[0]) {
    for (int64_t i = iv.first; i < iv.first + iv.count; ++i) {
      EXPECT_GE(rec.timestamps[static_cast<size_t>(i)], iv.t0);
      EXPECT_LT(rec.timestamps[static_cast<size_t>(i)], iv.t1);
      hits[static_cast<size_t>(i)]++;
    }
  }
  for (size_t i = 0; i < rec.timestamps.size(); ++i) {
    if (rec.timestamps[i] < 5.0) {
      EXPECT_EQ(hits[i], 1) << "point " << i;
    }
  }
}

TEST(Resample, ExactOnAffineSignals) {
  SensorRecording rec;
  rec.sensor_id = "acc";
  rec.dims = 1;
  // Irregular spacing.
  for (double t : {0.0, 0.03, 0.09, 0.13, 0.21, 0.24}) {
    rec.timestamps.push_back(t);
    rec.values.push_back(2.0 * t + 1.0);
  }
  IntervalRef iv{0.0, 0.25, 0, 6};
  Tensor<double> out = resample_interval(rec, iv, 10);
  for (int64_t j = 0; j < 10; ++j) {
    double target = 0.25 * static_cast<double>(j) / 10.0;
    double expected = target <= 0.24 ? 2.0 * target + 1.0 : 2.0 * 0.24 + 1.0;  // clamped past last
    EXPECT_NEAR(out.at({0, j}), expected, 1e-12);
  }
}

TEST(Resample, ConstantSignal) {
  SensorRecording rec;
  rec.sensor_id = "acc";
  rec.dims = 2;
  for (double t : {0.02, 0.1, 0.2}) {
    rec.timestamps.push_back(t);
    rec.values.push_back(3.5);
    rec.values.push_back(-1.0);
  }
  IntervalRef iv{0.0, 0.25, 0, 3};
  Tensor<double> out = resample_interval(rec, iv, 5);
  for (int64_t j = 0; j < 5; ++j) {
    EXPECT_DOUBLE_EQ(out.at({0, j}), 3.5);
    EXPECT_DOUBLE_EQ(out.at({1, j}), -1.0);
  }
}

TEST(Resample, MatchesTwoPointInterpolationOracle) {
  SensorRecording rec;
  rec.sensor_id = "acc";
  rec.dims = 1;
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> val(-2.0, 2.0);
  double t = 0.0;
  std::uniform_real_distribution<double> dt(0.005, 0.03);
  while (t < 0.25) {
    rec.timestamps.push_back(t);
    rec.values.push_back(val(rng));
    t += dt(rng);
  }
  IntervalRef iv{0.0, 0.25, 0, rec.count()};
  const int64_t f = 10;
  Tensor<double> out = resample_interval(rec, iv, f);
  for (int64_t j = 0; j < f; ++j) {
    double target = 0.25 * static_cast<double>(j) / static_cast<double>(f);
    // Independent two-point formula.
    double expected;
    if (target <= rec.timestamps.front()) {
      expected = rec.values.front();
    } else if (target >= rec.timestamps.back()) {
      expected = rec.values.back();
    } else {
      size_t hi = 1;
      while (rec.timestamps[hi] < target) ++hi;
      double t0 = rec.timestamps[hi - 1], t1 = rec.timestamps[hi];
      double v0 = rec.values[hi - 1], v1 = rec.values[hi];
      expected = v0 + (v1 - v0) * (target - t0) / (t1 - t0);
    }
    EXPECT_NEAR(out.at({0, j}), expected, 1e-12);
  }
}

TEST(Resample, EmptyIntervalIsHardError) {
  SensorRecording rec;
  rec.sensor_id = "acc";
  rec.dims = 1;
  rec.timestamps = {1.0};
  rec.values = {0.5};
  IntervalRef iv{0.0, 0.25, 0, 0};
  EXPECT_THROW(resample_interval(rec, iv, 10), DataError);
}

TEST(Resample, SinglePointExtendsAsConstant) {
  SensorRecording rec;
  rec.sensor_id = "acc";
  rec.dims = 1;
  rec.timestamps = {0.1};
  rec.values = {7.25};
  IntervalRef iv{0.0, 0.25, 0, 1};
  Tensor<double> out = resample_interval(rec, iv, 4);
  for (int64_t j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(out.at({0, j}), 7.25);
}

TEST(DftFeatures, ConstantSignalIsDcOnly) {
  Tensor<double> pts = Tensor<double>::ones({1, 10});
  Tensor<double> out = dft_features(pts);
  EXPECT_NEAR(out.at({0, 0}), 10.0, 1e-12);  // bin 0 magnitude
  EXPECT_DOUBLE_EQ(out.at({0, 1}), 0.0);     // bin 0 phase
  for (int64_t k = 1; k < 10; ++k) {
    EXPECT_NEAR(out.at({0, 2 * k}), 0.0, 1e-10);
    EXPECT_DOUBLE_EQ(out.at({0, 2 * k + 1}), 0.0);  // phase forced to 0 at tiny magnitude
  }
}

TEST(DftFeatures, PureCosineHitsConjugateBins) {
  Tensor<double> pts({1, 10});
  for (int64_t n = 0; n < 10; ++n) {
    pts.at({0, n}) = std::cos(2.0 * M_PI * 2.0 * static_cast<double>(n) / 10.0);
  }
  Tensor<double> out = dft_features(pts);
  for (int64_t k = 0; k < 10; ++k) {
    double expected = (k == 2 || k == 8) ? 5.0 : 0.0;
    EXPECT_NEAR(out.at({0, 2 * k}), expected, 1e-10) << "bin " << k;
  }
}

TEST(DftFeatures, MatchesDirectSumOracle) {
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  Tensor<double> pts({2, 10});
  for (int64_t i = 0; i < pts.numel(); ++i) pts[i] = u(rng);
  Tensor<double> out = dft_features(pts);
  for (int64_t d = 0; d < 2; ++d) {
    std::vector<double> row(10);
    for (int64_t n = 0; n < 10; ++n) row[static_cast<size_t>(n)] = pts.at({d, n});
    auto expected = reference::dft_mag_phase(row);
    for (int64_t k = 0; k < 10; ++k) {
      EXPECT_NEAR(out.at({d, 2 * k}), expected[static_cast<size_t>(2 * k)], 1e-9);
      EXPECT_NEAR(out.at({d, 2 * k + 1}), expected[static_cast<size_t>(2 * k + 1)], 1e-9);
    }
  }
}

TEST(DftFeatures, ParsevalHolds) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  const int64_t f = 16;
  Tensor<double> pts({3, f});
  for (int64_t i = 0; i < pts.numel(); ++i) pts[i] = u(rng);
  Tensor<double> out = dft_features(pts);
  for (int64_t d = 0; d < 3; ++d) {
    double time_energy = 0, freq_energy = 0;
    for (int64_t n = 0; n < f; ++n) time_energy += pts.at({d, n}) * pts.at({d, n});
    for (int64_t k = 0; k < f; ++k) freq_energy += out.at({d, 2 * k}) * out.at({d, 2 * k});
    freq_energy /= static_cast<double>(f);
    EXPECT_NEAR(freq_energy, time_energy, 1e-9 * std::abs(time_energy));
  }
}

namespace {

std::shared_ptr<RawWindow> two_sensor_window() {
  auto w = std::make_shared<RawWindow>();
  w->user_id = "u0";
  w->label = 2;
  w->start_time = 0.0;
  w->length = 5.0;
  w->sensors.push_back(make_recording("acc", SensorKind::accelerometer, 3, 50.0, 5.0,
                                      [](int64_t d, double t) {
                                        return std::sin(2.0 * M_PI * 4.0 * t + 0.3 * static_cast<double>(d));
                                      }));
  w->sensors.push_back(make_recording("gyro", SensorKind::gyroscope, 3, 40.0, 5.0,
                                      [](int64_t d, double t) {
                                        return std::cos(2.0 * M_PI * 8.0 * t) + static_cast<double>(d);
                                      }));
  return w;
}

}  // namespace

TEST(BuildSample, TensorShapesMatchLayoutArithmetic) {
  PreprocessConfig cfg;  // 5 s, tau 0.25, f = 10
  PreprocessedSample s = build_sample(two_sensor_window(), cfg);
  ASSERT_EQ(s.tensors.size(), 2u);
  for (const auto& t : s.tensors) {
    EXPECT_EQ(t.shape(), (std::vector<int64_t>{3, 20, 20}));  // d x 2f x T
  }
  Tensor<double> row = s.input_matrix(0);
  EXPECT_EQ(row.shape(), (std::vector<int64_t>{20, 60}));  // T x 2f*d
}

TEST(BuildSample, BinMajorRowLayout) {
  PreprocessConfig cfg;
  PreprocessedSample s = build_sample(two_sensor_window(), cfg);
  const int64_t d = 3, f = 10;
  Tensor<double> m = s.input_matrix(0);
  const Tensor<double>& x = s.tensors[0];
  for (int64_t t = 0; t < 20; ++t) {
    for (int64_t k = 0; k < f; ++k) {
      // Offsets [2dk, 2d(k+1)) hold bin k's (magnitude, phase) for all dims.
      for (int64_t j = 0; j < d; ++j) {
        EXPECT_DOUBLE_EQ(m.at({t, 2 * d * k + 2 * j}), x.at({j, 2 * k, t}));
        EXPECT_DOUBLE_EQ(m.at({t, 2 * d * k + 2 * j + 1}), x.at({j, 2 * k + 1, t}));
      }
    }
  }
}

TEST(BuildSample, Deterministic) {
  PreprocessConfig cfg;
  auto w = two_sensor_window();
  PreprocessedSample a = build_sample(w, cfg);
  PreprocessedSample b = build_sample(w, cfg);
  for (size_t s = 0; s < a.tensors.size(); ++s) {
    for (int64_t i = 0; i < a.tensors[s].numel(); ++i) {
      EXPECT_EQ(a.tensors[s][i], b.tensors[s][i]);
    }
  }
}

TEST(BuildSample, CoverageMismatchIsError) {
  PreprocessConfig cfg;
  auto w = two_sensor_window();
  w->sensors[1].timestamps.resize(50);  // truncate gyro to 1.25 s
  w->sensors[1].values.resize(50 * 3);
  EXPECT_THROW(build_sample(w, cfg), DataError);
}

TEST(Augment, ZeroCopiesGivesEmptyList) {
  PreprocessConfig cfg;
  PreprocessedSample s = build_sample(two_sensor_window(), cfg);
  AugmentationSpec spec;
  spec.copies = 0;
  std::mt19937_64 rng(1);
  EXPECT_TRUE(augment(s, spec, cfg, rng).empty());
}

TEST(Augment, ZeroVarianceReproducesOriginal) {
  PreprocessConfig cfg;
  PreprocessedSample s = build_sample(two_sensor_window(), cfg);
  AugmentationSpec spec;
  spec.copies = 2;
  spec.variance_accelerometer = 0.0;
  spec.variance_gyroscope = 0.0;
  spec.variance_other = 0.0;
  std::mt19937_64 rng(1);
  auto copies = augment(s, spec, cfg, rng);
  ASSERT_EQ(copies.size(), 2u);
  for (const auto& c : copies) {
    EXPECT_EQ(c.origin, SampleOrigin::augmented);
    EXPECT_EQ(c.label, s.label);
    EXPECT_EQ(c.user_id, s.user_id);
    for (size_t k = 0; k < s.tensors.size(); ++k) {
      for (int64_t i = 0; i < s.tensors[k].numel(); ++i) {
        EXPECT_EQ(c.tensors[k][i], s.tensors[k][i]);
      }
    }
  }
}

TEST(Augment, OnlyRealSamplesAccepted) {
  PreprocessConfig cfg;
  PreprocessedSample s = build_sample(two_sensor_window(), cfg);
  AugmentationSpec spec;
  spec.copies = 1;
  std::mt19937_64 rng(1);
  auto copies = augment(s, spec, cfg, rng);
  EXPECT_THROW(augment(copies[0], spec, cfg, rng), ContractError);
}

TEST(Augment, NoiseConcentratesAroundCleanSpectrum) {
  // Mean bin-0 magnitude over many noisy copies stays within 1% of the clean
  // value for a constant signal.
  PreprocessConfig cfg;
  cfg.sample_seconds = 1.0;
  cfg.tau_seconds = 0.25;
  cfg.freq_bins = 8;
  auto w = std::make_shared<RawWindow>();
  w->user_id = "u0";
  w->label = 0;
  w->start_time = 0.0;
  w->length = 1.0;
  w->sensors.push_back(make_recording("acc", SensorKind::accelerometer, 1, 50.0, 1.0,
                                      [](int64_t, double) { return 2.0; }));
  PreprocessedSample s = build_sample(w, cfg);
  double clean = s.tensors[0].at({0, 0, 0});
  AugmentationSpec spec;
  spec.copies = 1;
  spec.variance_accelerometer = 0.5;
  std::mt19937_64 rng(97);
  double sum = 0;
  const int trials = 10000;
  for (int i = 0; i < trials; ++i) {
    auto copies = augment(s, spec, cfg, rng);
    sum += copies[0].tensors[0].at({0, 0, 0});
  }
  EXPECT_NEAR(sum / trials, clean, 0.01 * clean);
}
