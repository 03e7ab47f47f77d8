#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "trasend/preprocess.hpp"

namespace trasend {

struct SensorMeta {
  std::string id;
  SensorKind kind = SensorKind::other;
  int64_t dims = 3;
  double rate_hz = 50.0;
};

struct ActivityMeta {
  int index = 0;
  std::string name;
};

/// Where a dataset's files live, one recording file per (user, sensor) plus a
/// label file per user. Paths are relative to the manifest.
struct UserFiles {
  std::string labels;
  std::map<std::string, std::string> recordings;  // sensor id -> path
};

struct DatasetManifest {
  std::string name;
  std::vector<SensorMeta> sensors;
  std::vector<std::string> users;
  std::vector<ActivityMeta> activities;
  std::map<std::string, UserFiles> files;

  void validate() const {
    std::vector<std::string> ids;
    for (const auto& s : sensors) ids.push_back(s.id);
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
      throw DataError("manifest: duplicate sensor id");
    }
    for (size_t i = 0; i < activities.size(); ++i) {
      if (activities[i].index != static_cast<int>(i)) {
        throw DataError("manifest: activity indices must be contiguous from 0");
      }
    }
  }

  int num_classes() const { return static_cast<int>(activities.size()); }

  const SensorMeta& sensor(const std::string& id) const {
    for (const auto& s : sensors) {
      if (s.id == id) return s;
    }
    throw DataError("unknown sensor id: " + id);
  }
};

struct LabelInterval {
  double start = 0, end = 0;
  int label = 0;
};

struct UserData {
  std::string user_id;
  std::vector<SensorRecording> recordings;  // one per manifest sensor, same order
  std::vector<LabelInterval> labels;        // non-overlapping, time-ordered
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<UserData> users;

  const UserData& user(const std::string& id) const {
    for (const auto& u : users) {
      if (u.user_id == id) return u;
    }
    throw DataError("unknown user id: " + id);
  }
};

// Cuts every label interval into consecutive sample-length windows. A window
// is produced when every sensor's data reaches its final tau-interval; a
// window covered by some sensors but not others is an alignment error, and
// windows past the end of all sensor data are dropped.
inline std::vector<std::shared_ptr<RawWindow>> extract_windows(const Dataset& data,
                                                               const PreprocessConfig& cfg) {
  cfg.validate();
  std::vector<std::shared_ptr<RawWindow>> windows;
  const double L = cfg.sample_seconds;
  for (const UserData& user : data.users) {
    for (const LabelInterval& li : user.labels) {
      for (double t0 = li.start; t0 + L <= li.end + 1e-9; t0 += L) {
        int covering = 0;
        for (const SensorRecording& rec : user.recordings) {
          if (rec.count() > 0 && rec.timestamps.front() <= t0 + cfg.tau_seconds &&
              rec.timestamps.back() >= t0 + L - cfg.tau_seconds) {
            ++covering;
          }
        }
        if (covering == 0) continue;
        if (covering != static_cast<int>(user.recordings.size())) {
          throw DataError("user " + user.user_id + ": sensors disagree on coverage of window [" +
                          std::to_string(t0) + ", " + std::to_string(t0 + L) + ")");
        }
        auto w = std::make_shared<RawWindow>();
        w->user_id = user.user_id;
        w->label = li.label;
        w->start_time = t0;
        w->length = L;
        for (const SensorRecording& rec : user.recordings) {
          w->sensors.push_back(rec.clipped(t0, t0 + L));
        }
        windows.push_back(std::move(w));
      }
    }
  }
  return windows;
}

inline std::vector<PreprocessedSample> preprocess_windows(
    const std::vector<std::shared_ptr<RawWindow>>& windows, const PreprocessConfig& cfg) {
  std::vector<PreprocessedSample> samples;
  samples.reserve(windows.size());
  for (const auto& w : windows) samples.push_back(build_sample(w, cfg));
  return samples;
}

}  // namespace trasend
