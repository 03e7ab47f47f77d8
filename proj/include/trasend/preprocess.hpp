#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "trasend/common.hpp"
#include "trasend/tensor.hpp"

namespace trasend {

enum class SensorKind { accelerometer, gyroscope, magnetometer, other };

inline const char* sensor_kind_name(SensorKind k) {
  switch (k) {
    case SensorKind::accelerometer: return "accelerometer";
    case SensorKind::gyroscope: return "gyroscope";
    case SensorKind::magnetometer: return "magnetometer";
    default: return "other";
  }
}

inline SensorKind sensor_kind_from_name(const std::string& s) {
  if (s == "accelerometer") return SensorKind::accelerometer;
  if (s == "gyroscope") return SensorKind::gyroscope;
  if (s == "magnetometer") return SensorKind::magnetometer;
  if (s == "other") return SensorKind::other;
  throw DataError("unknown sensor kind: " + s);
}

/// Raw measurement stream of one sensor: d values per measurement point.
/// Values are stored point-major so a time range is a contiguous block.
struct SensorRecording {
  std::string sensor_id;
  SensorKind kind = SensorKind::other;
  int64_t dims = 0;
  std::vector<double> timestamps;  // seconds, strictly increasing
  std::vector<double> values;      // timestamps.size() * dims, point-major

  int64_t count() const { return static_cast<int64_t>(timestamps.size()); }

  double value(int64_t dim, int64_t idx) const {
    return values[static_cast<size_t>(idx * dims + dim)];
  }

  void validate() const {
    if (dims < 1) throw DataError("sensor " + sensor_id + ": dims must be >= 1");
    if (values.size() != timestamps.size() * static_cast<size_t>(dims)) {
      throw DataError("sensor " + sensor_id + ": value count does not match timestamps");
    }
    for (size_t i = 1; i < timestamps.size(); ++i) {
      if (!(timestamps[i] > timestamps[i - 1])) {
        throw DataError("sensor " + sensor_id + ": timestamps not strictly increasing at index " +
                        std::to_string(i));
      }
    }
  }

  // Copy of the points with timestamp in [t0, t1).
  SensorRecording clipped(double t0, double t1) const {
    SensorRecording out;
    out.sensor_id = sensor_id;
    out.kind = kind;
    out.dims = dims;
    auto lo = std::lower_bound(timestamps.begin(), timestamps.end(), t0);
    auto hi = std::lower_bound(timestamps.begin(), timestamps.end(), t1);
    int64_t first = lo - timestamps.begin();
    int64_t n = hi - lo;
    out.timestamps.assign(lo, hi);
    out.values.assign(values.begin() + first * dims, values.begin() + (first + n) * dims);
    return out;
  }
};

/// Index range of one tau-length interval within a recording.
struct IntervalRef {
  double t0 = 0, t1 = 0;
  int64_t first = 0, count = 0;
};

struct PreprocessConfig {
  double sample_seconds = 5.0;
  double tau_seconds = 0.25;
  int64_t freq_bins = 10;  // f

  int64_t timesteps() const {
    return static_cast<int64_t>(std::llround(sample_seconds / tau_seconds));
  }

  void validate() const {
    if (sample_seconds <= 0 || tau_seconds <= 0 || freq_bins < 1) {
      throw ConfigError("preprocess: sample/tau/freq_bins must be positive");
    }
    double ratio = sample_seconds / tau_seconds;
    if (std::abs(ratio - std::llround(ratio)) > 1e-9) {
      throw ConfigError("preprocess: sample length must be an integer multiple of tau");
    }
  }
};

// Splits a recording into consecutive non-overlapping samples of
// `sample_len` seconds starting at the first timestamp, each partitioned into
// T = sample_len / tau intervals. A trailing sample is kept only when
// measurements reach into its final interval; shorter leftovers are dropped.
inline std::vector<std::vector<IntervalRef>> segment(const SensorRecording& rec, double sample_len,
                                                     double tau) {
  double ratio = sample_len / tau;
  if (sample_len <= 0 || tau <= 0 || std::abs(ratio - std::llround(ratio)) > 1e-9) {
    throw ConfigError("segment: sample length must be a positive integer multiple of tau");
  }
  const int64_t T = static_cast<int64_t>(std::llround(ratio));
  std::vector<std::vector<IntervalRef>> samples;
  if (rec.count() == 0) return samples;
  const double start = rec.timestamps.front();
  const double last = rec.timestamps.back();
  for (int64_t s = 0;; ++s) {
    double s0 = start + static_cast<double>(s) * sample_len;
    double s1 = s0 + sample_len;
    if (last < s1 - tau) break;  // data does not reach the final interval
    std::vector<IntervalRef> intervals;
    intervals.reserve(static_cast<size_t>(T));
    for (int64_t j = 0; j < T; ++j) {
      IntervalRef iv;
      iv.t0 = s0 + static_cast<double>(j) * tau;
      iv.t1 = s0 + static_cast<double>(j + 1) * tau;
      auto lo = std::lower_bound(rec.timestamps.begin(), rec.timestamps.end(), iv.t0);
      auto hi = std::lower_bound(rec.timestamps.begin(), rec.timestamps.end(), iv.t1);
      iv.first = lo - rec.timestamps.begin();
      iv.count = hi - lo;
      intervals.push_back(iv);
    }
    samples.push_back(std::move(intervals));
  }
  return samples;
}

// Linear interpolation of one interval at f evenly spaced target times
// t0 + j * tau/f for j = 0..f-1, the periodic grid that puts DFT bin k at
// exactly k/tau Hz. Targets outside the measured range clamp to the nearest
// measurement; a single measurement extends as a constant. An empty interval
// is an unrecoverable gap.
inline Tensor<double> resample_interval(const SensorRecording& rec, const IntervalRef& iv,
                                        int64_t f) {
  if (f < 1) throw ConfigError("resample: f must be >= 1");
  if (iv.count == 0) {
    throw DataError("sensor " + rec.sensor_id + ": no measurements in interval [" +
                    std::to_string(iv.t0) + ", " + std::to_string(iv.t1) + ")");
  }
  const int64_t d = rec.dims;
  Tensor<double> out({d, f});
  const double span = iv.t1 - iv.t0;
  for (int64_t j = 0; j < f; ++j) {
    double target = iv.t0 + span * static_cast<double>(j) / static_cast<double>(f);
    // Position among the interval's own points.
    auto begin = rec.timestamps.begin() + iv.first;
    auto end = begin + iv.count;
    auto it = std::lower_bound(begin, end, target);
    int64_t hi = iv.first + (it - begin);
    if (hi <= iv.first) {
      for (int64_t k = 0; k < d; ++k) out.at({k, j}) = rec.value(k, iv.first);
      continue;
    }
    if (hi >= iv.first + iv.count) {
      int64_t lastp = iv.first + iv.count - 1;
      for (int64_t k = 0; k < d; ++k) out.at({k, j}) = rec.value(k, lastp);
      continue;
    }
    int64_t lo = hi - 1;
    double t_lo = rec.timestamps[static_cast<size_t>(lo)];
    double t_hi = rec.timestamps[static_cast<size_t>(hi)];
    double w = (target - t_lo) / (t_hi - t_lo);
    for (int64_t k = 0; k < d; ++k) {
      out.at({k, j}) = (1.0 - w) * rec.value(k, lo) + w * rec.value(k, hi);
    }
  }
  return out;
}

// Unnormalized forward DFT per dimension. Each input row of f points becomes
// f (magnitude, phase) pairs for bins 0..f-1; phase is the principal value in
// (-pi, pi] and forced to 0 when the magnitude is below 1e-12.
inline Tensor<double> dft_features(const Tensor<double>& points) {
  if (points.ndim() != 2) throw ShapeError("dft_features: want [d, f], got " + points.shape_str());
  const int64_t d = points.dim(0);
  const int64_t f = points.dim(1);
  Tensor<double> out({d, 2 * f});
  for (int64_t k = 0; k < d; ++k) {
    for (int64_t bin = 0; bin < f; ++bin) {
      double re = 0, im = 0;
      for (int64_t n = 0; n < f; ++n) {
        double ang = -2.0 * M_PI * static_cast<double>(bin) * static_cast<double>(n) /
                     static_cast<double>(f);
        double x = points.at({k, n});
        re += x * std::cos(ang);
        im += x * std::sin(ang);
      }
      double mag = std::hypot(re, im);
      double phase = mag < 1e-12 ? 0.0 : std::atan2(im, re);
      out.at({k, 2 * bin}) = mag;
      out.at({k, 2 * bin + 1}) = phase;
    }
  }
  return out;
}

/// One labeled multi-sensor window of raw measurements, the unit that
/// preprocessing (and augmentation re-runs) consume.
struct RawWindow {
  std::string user_id;
  int label = 0;
  double start_time = 0;
  double length = 5.0;
  std::vector<SensorRecording> sensors;  // clipped to [start_time, start_time + length)
};

enum class SampleOrigin { real, augmented };

/// Frequency-domain sample: one tensor of shape d x 2f x T per sensor.
struct PreprocessedSample {
  std::vector<Tensor<double>> tensors;
  int label = 0;
  std::string user_id;
  SampleOrigin origin = SampleOrigin::real;
  double window_start = 0;
  std::shared_ptr<const RawWindow> source;  // kept on real samples for augmentation

  int64_t num_sensors() const { return static_cast<int64_t>(tensors.size()); }

  // Model-facing T x (2f*d) matrix for one sensor. Row layout is bin-major:
  // offsets [2d*k, 2d*(k+1)) hold bin k's (magnitude, phase) pairs for all d
  // dimensions, so one frequency bin occupies 2d contiguous values.
  Tensor<double> input_matrix(size_t sensor) const {
    const Tensor<double>& x = tensors.at(sensor);
    const int64_t d = x.dim(0);
    const int64_t f2 = x.dim(1);
    const int64_t T = x.dim(2);
    const int64_t f = f2 / 2;
    Tensor<double> out({T, f2 * d});
    for (int64_t t = 0; t < T; ++t) {
      for (int64_t k = 0; k < f; ++k) {
        for (int64_t j = 0; j < d; ++j) {
          out.at({t, 2 * d * k + 2 * j}) = x.at({j, 2 * k, t});
          out.at({t, 2 * d * k + 2 * j + 1}) = x.at({j, 2 * k + 1, t});
        }
      }
    }
    return out;
  }
};

// Builds the per-sensor d x 2f x T tensors for one window by running
// interval split -> resample -> DFT on each sensor.
inline PreprocessedSample build_sample(std::shared_ptr<const RawWindow> window,
                                       const PreprocessConfig& cfg) {
  cfg.validate();
  const RawWindow& w = *window;
  const int64_t T = cfg.timesteps();
  PreprocessedSample sample;
  sample.label = w.label;
  sample.user_id = w.user_id;
  sample.origin = SampleOrigin::real;
  sample.window_start = w.start_time;
  sample.source = window;
  for (const SensorRecording& rec : w.sensors) {
    if (rec.count() == 0 ||
        rec.timestamps.back() < w.start_time + w.length - cfg.tau_seconds) {
      throw DataError("sensor " + rec.sensor_id + ": coverage mismatch for window starting at " +
                      std::to_string(w.start_time));
    }
    Tensor<double> x({rec.dims, 2 * cfg.freq_bins, T});
    for (int64_t t = 0; t < T; ++t) {
      IntervalRef iv;
      iv.t0 = w.start_time + static_cast<double>(t) * cfg.tau_seconds;
      iv.t1 = iv.t0 + cfg.tau_seconds;
      auto lo = std::lower_bound(rec.timestamps.begin(), rec.timestamps.end(), iv.t0);
      auto hi = std::lower_bound(rec.timestamps.begin(), rec.timestamps.end(), iv.t1);
      iv.first = lo - rec.timestamps.begin();
      iv.count = hi - lo;
      Tensor<double> pts = resample_interval(rec, iv, cfg.freq_bins);
      Tensor<double> feat = dft_features(pts);
      for (int64_t j = 0; j < rec.dims; ++j) {
        for (int64_t c = 0; c < 2 * cfg.freq_bins; ++c) {
          x.at({j, c, t}) = feat.at({j, c});
        }
      }
    }
    sample.tensors.push_back(std::move(x));
  }
  return sample;
}

/// Gaussian noise augmentation: variance by sensor kind, applied in the raw
/// time domain before the preprocessing pipeline is re-run.
struct AugmentationSpec {
  int64_t copies = 9;
  double variance_accelerometer = 0.5;
  double variance_gyroscope = 0.2;
  double variance_other = 0.2;

  double variance_for(SensorKind k) const {
    switch (k) {
      case SensorKind::accelerometer: return variance_accelerometer;
      case SensorKind::gyroscope: return variance_gyroscope;
      default: return variance_other;
    }
  }

  void validate() const {
    if (copies < 0) throw ConfigError("augmentation: copies must be >= 0");
    if (variance_accelerometer < 0 || variance_gyroscope < 0 || variance_other < 0) {
      throw ConfigError("augmentation: variances must be >= 0");
    }
  }
};

inline std::vector<PreprocessedSample> augment(const PreprocessedSample& sample,
                                               const AugmentationSpec& spec,
                                               const PreprocessConfig& cfg, std::mt19937_64& rng) {
  spec.validate();
  if (sample.origin != SampleOrigin::real) {
    throw ContractError("augment: only real samples may be augmented");
  }
  if (!sample.source) {
    throw ContractError("augment: sample has no raw window attached");
  }
  std::vector<PreprocessedSample> copies;
  copies.reserve(static_cast<size_t>(spec.copies));
  for (int64_t c = 0; c < spec.copies; ++c) {
    auto noisy = std::make_shared<RawWindow>(*sample.source);
    for (SensorRecording& rec : noisy->sensors) {
      double stddev = std::sqrt(spec.variance_for(rec.kind));
      if (stddev == 0) continue;
      std::normal_distribution<double> noise(0.0, stddev);
      for (double& v : rec.values) v += noise(rng);
    }
    PreprocessedSample copy = build_sample(noisy, cfg);
    copy.origin = SampleOrigin::augmented;
    copy.source = nullptr;
    copies.push_back(std::move(copy));
  }
  return copies;
}

// Adds zero-mean Gaussian noise to every measurement of a window (used for
// noisy-test-set experiments).
inline std::shared_ptr<RawWindow> perturb_window(const RawWindow& window, double noise_std,
                                                 std::mt19937_64& rng) {
  auto noisy = std::make_shared<RawWindow>(window);
  if (noise_std > 0) {
    std::normal_distribution<double> noise(0.0, noise_std);
    for (SensorRecording& rec : noisy->sensors) {
      for (double& v : rec.values) v += noise(rng);
    }
  }
  return noisy;
}

}  // namespace trasend
