#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "trasend/dataset.hpp"

namespace trasend {

/// Desk-scale multi-user HAR stand-in. Each (user, class) sample is a
/// multi-channel sinusoid mixture:
///   channel j of sensor s = A_c * sin(2*pi*(F_c + delta_u) t + phi) + offset_u + noise
/// where delta_u = user_offset_magnitude * user_index (a per-user frequency
/// shift) and offset_u = 0.2 * user_offset_magnitude * user_index (a per-user
/// DC shift). The magnitude knob controls how far each user drifts from the
/// population, i.e. how hard personalization is. phi is a deterministic
/// per-(user, class, sample, sensor, channel) random phase.
struct SyntheticSpec {
  int64_t users = 4;
  int64_t classes = 4;
  std::vector<SensorMeta> sensors;
  std::vector<double> class_freq_hz;    // size == classes
  std::vector<double> class_amplitude;  // size == classes (empty -> all 1.0)
  double user_offset_magnitude = 0.0;
  double noise_std = 0.05;
  int64_t samples_per_user_class = 40;
  double sample_seconds = 5.0;
  uint64_t seed = 0;

  void validate() const {
    if (users < 1 || classes < 1 || samples_per_user_class < 1) {
      throw ConfigError("synthetic: counts must be >= 1");
    }
    if (sensors.empty()) throw ConfigError("synthetic: at least one sensor required");
    if (static_cast<int64_t>(class_freq_hz.size()) != classes) {
      throw ConfigError("synthetic: class_freq_hz must list one frequency per class");
    }
    if (!class_amplitude.empty() && static_cast<int64_t>(class_amplitude.size()) != classes) {
      throw ConfigError("synthetic: class_amplitude must be empty or one per class");
    }
    if (noise_std < 0) throw ConfigError("synthetic: noise_std must be >= 0");
    if (sample_seconds <= 0) throw ConfigError("synthetic: sample_seconds must be > 0");
    double max_freq = 0;
    for (double f : class_freq_hz) max_freq = std::max(max_freq, f);
    max_freq += user_offset_magnitude * static_cast<double>(users - 1);
    for (const auto& s : sensors) {
      if (max_freq >= s.rate_hz / 2.0) {
        throw ConfigError("synthetic: frequency " + std::to_string(max_freq) +
                          " Hz at or above Nyquist of sensor " + s.id + " (" +
                          std::to_string(s.rate_hz / 2.0) + " Hz)");
      }
    }
  }
};

// Deterministic dataset generation: per user one continuous recording per
// sensor, with back-to-back sample_seconds label intervals grouped by class.
inline Dataset generate_synthetic_dataset(const SyntheticSpec& spec) {
  spec.validate();
  Dataset data;
  data.manifest.name = "synthetic";
  data.manifest.sensors = spec.sensors;
  for (int64_t c = 0; c < spec.classes; ++c) {
    data.manifest.activities.push_back({static_cast<int>(c), "activity_" + std::to_string(c)});
  }

  const int64_t per_user = spec.classes * spec.samples_per_user_class;
  for (int64_t u = 0; u < spec.users; ++u) {
    UserData user;
    user.user_id = "user" + std::to_string(u);
    data.manifest.users.push_back(user.user_id);
    const double freq_shift = spec.user_offset_magnitude * static_cast<double>(u);
    const double dc_offset = 0.2 * spec.user_offset_magnitude * static_cast<double>(u);

    // Activities interleave round-robin over time, one sample-length bout
    // each, so time-contiguous splits see every class in both halves.
    for (int64_t s = 0; s < per_user; ++s) {
      LabelInterval li;
      li.start = static_cast<double>(s) * spec.sample_seconds;
      li.end = li.start + spec.sample_seconds;
      li.label = static_cast<int>(s % spec.classes);
      user.labels.push_back(li);
    }

    for (size_t si = 0; si < spec.sensors.size(); ++si) {
      const SensorMeta& sm = spec.sensors[si];
      SensorRecording rec;
      rec.sensor_id = sm.id;
      rec.kind = sm.kind;
      rec.dims = sm.dims;
      const int64_t points_per_sample =
          static_cast<int64_t>(std::llround(spec.sample_seconds * sm.rate_hz));
      rec.timestamps.reserve(static_cast<size_t>(per_user * points_per_sample));
      rec.values.reserve(static_cast<size_t>(per_user * points_per_sample * sm.dims));

      for (int64_t s = 0; s < per_user; ++s) {
        const int64_t c = s % spec.classes;
        const double amp = spec.class_amplitude.empty() ? 1.0
                                                        : spec.class_amplitude[static_cast<size_t>(c)];
        const double freq = spec.class_freq_hz[static_cast<size_t>(c)] + freq_shift;
        auto rng = make_rng(spec.seed, 0x51347u,
                            static_cast<uint64_t>((u * per_user + s) *
                                                      static_cast<int64_t>(spec.sensors.size()) +
                                                  static_cast<int64_t>(si)));
        std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * M_PI);
        std::normal_distribution<double> noise(0.0, spec.noise_std);
        std::vector<double> phases(static_cast<size_t>(sm.dims));
        for (double& p : phases) p = phase_dist(rng);
        const double t0 = static_cast<double>(s) * spec.sample_seconds;
        for (int64_t k = 0; k < points_per_sample; ++k) {
          const double t = static_cast<double>(k) / sm.rate_hz;
          rec.timestamps.push_back(t0 + t);
          for (int64_t j = 0; j < sm.dims; ++j) {
            double v = amp * std::sin(2.0 * M_PI * freq * t + phases[static_cast<size_t>(j)]) +
                       dc_offset;
            if (spec.noise_std > 0) v += noise(rng);
            rec.values.push_back(v);
          }
        }
      }
      rec.validate();
      user.recordings.push_back(std::move(rec));
    }
    data.users.push_back(std::move(user));
  }
  data.manifest.validate();
  return data;
}

}  // namespace trasend
