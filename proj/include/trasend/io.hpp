#pragma once

#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "trasend/dataset.hpp"
#include "trasend/model.hpp"
#include "trasend/personalize.hpp"
#include "trasend/synthetic.hpp"
#include "trasend/train.hpp"

namespace trasend {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Small helpers
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Write-to-temp-then-rename so readers never observe partial files.
inline void atomic_write_file(const fs::path& path, const std::string& content) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Rejects unknown keys so config typos fail loudly instead of being ignored.
inline void check_keys(const json& j, const std::vector<std::string>& allowed,
                       const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
      throw ConfigError(where + ": unknown key \"" + it.key() + "\"");
    }
  }
}

// ---------------------------------------------------------------------------
// Recording / label CSV
// ---------------------------------------------------------------------------

// Format: header `timestamp_s,<dim0>,<dim1>,...`, then one decimal row per
// measurement; timestamps strictly increasing.
inline SensorRecording read_recording_csv(const fs::path& path, const SensorMeta& meta) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open recording file " + path.string());
  SensorRecording rec;
  rec.sensor_id = meta.id;
  rec.kind = meta.kind;
  rec.dims = meta.dims;
  std::string line;
  int lineno = 0;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
  ++lineno;
  double prev_t = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) {
      try {
        size_t used = 0;
        double v = std::stod(cell, &used);
        if (used != cell.size()) throw std::invalid_argument(cell);
        row.push_back(v);
      } catch (const std::exception&) {
        throw DataError(path.string() + ":" + std::to_string(lineno) + ": not a number: \"" + cell +
                        "\"");
      }
    }
    if (static_cast<int64_t>(row.size()) != meta.dims + 1) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                      std::to_string(meta.dims + 1) + " columns, got " + std::to_string(row.size()));
    }
    if (!first && !(row[0] > prev_t)) {
      throw DataError(path.string() + ":" + std::to_string(lineno) +
                      ": timestamps must be strictly increasing");
    }
    prev_t = row[0];
    first = false;
    rec.timestamps.push_back(row[0]);
    for (int64_t d = 0; d < meta.dims; ++d) rec.values.push_back(row[static_cast<size_t>(d + 1)]);
  }
  rec.validate();
  return rec;
}

inline void write_recording_csv(const fs::path& path, const SensorRecording& rec) {
  std::ostringstream out;
  out << "timestamp_s";
  for (int64_t d = 0; d < rec.dims; ++d) out << ",dim" << d;
  out << "\n";
  for (int64_t i = 0; i < rec.count(); ++i) {
    out << format_double(rec.timestamps[static_cast<size_t>(i)]);
    for (int64_t d = 0; d < rec.dims; ++d) out << "," << format_double(rec.value(d, i));
    out << "\n";
  }
  atomic_write_file(path, out.str());
}

// Format: header `start_s,end_s,class_index`, non-overlapping intervals.
inline std::vector<LabelInterval> read_labels_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open label file " + path.string());
  std::vector<LabelInterval> labels;
  std::string line;
  int lineno = 0;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
  ++lineno;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string a, b, c;
    if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, c, ',')) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 3 columns");
    }
    LabelInterval li;
    try {
      li.start = std::stod(a);
      li.end = std::stod(b);
      li.label = std::stoi(c);
    } catch (const std::exception&) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": malformed row");
    }
    if (!(li.end > li.start)) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": interval end must be > start");
    }
    if (!labels.empty() && li.start < labels.back().end) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": intervals overlap");
    }
    labels.push_back(li);
  }
  return labels;
}

inline void write_labels_csv(const fs::path& path, const std::vector<LabelInterval>& labels) {
  std::ostringstream out;
  out << "start_s,end_s,class_index\n";
  for (const auto& li : labels) {
    out << format_double(li.start) << "," << format_double(li.end) << "," << li.label << "\n";
  }
  atomic_write_file(path, out.str());
}

// ---------------------------------------------------------------------------
// Dataset manifest (JSON)
// ---------------------------------------------------------------------------

inline json manifest_to_json(const DatasetManifest& m) {
  json j;
  j["name"] = m.name;
  j["sensors"] = json::array();
  for (const auto& s : m.sensors) {
    j["sensors"].push_back(
        {{"id", s.id}, {"kind", sensor_kind_name(s.kind)}, {"dims", s.dims}, {"rate_hz", s.rate_hz}});
  }
  j["users"] = m.users;
  j["activities"] = json::array();
  for (const auto& a : m.activities) j["activities"].push_back({{"index", a.index}, {"name", a.name}});
  j["files"] = json::object();
  for (const auto& [user, files] : m.files) {
    json uf;
    uf["labels"] = files.labels;
    uf["recordings"] = files.recordings;
    j["files"][user] = uf;
  }
  return j;
}

inline DatasetManifest manifest_from_json(const json& j) {
  check_keys(j, {"name", "sensors", "users", "activities", "files"}, "manifest");
  DatasetManifest m;
  m.name = j.at("name").get<std::string>();
  for (const auto& s : j.at("sensors")) {
    check_keys(s, {"id", "kind", "dims", "rate_hz"}, "manifest.sensors");
    SensorMeta meta;
    meta.id = s.at("id").get<std::string>();
    meta.kind = sensor_kind_from_name(s.at("kind").get<std::string>());
    meta.dims = s.at("dims").get<int64_t>();
    meta.rate_hz = s.at("rate_hz").get<double>();
    m.sensors.push_back(meta);
  }
  m.users = j.at("users").get<std::vector<std::string>>();
  for (const auto& a : j.at("activities")) {
    check_keys(a, {"index", "name"}, "manifest.activities");
    m.activities.push_back({a.at("index").get<int>(), a.at("name").get<std::string>()});
  }
  if (j.contains("files")) {
    for (auto it = j.at("files").begin(); it != j.at("files").end(); ++it) {
      check_keys(it.value(), {"labels", "recordings"}, "manifest.files");
      UserFiles uf;
      uf.labels = it.value().at("labels").get<std::string>();
      for (auto rit = it.value().at("recordings").begin(); rit != it.value().at("recordings").end();
           ++rit) {
        uf.recordings[rit.key()] = rit.value().get<std::string>();
      }
      m.files[it.key()] = uf;
    }
  }
  m.validate();
  return m;
}

inline Dataset load_dataset_csv(const fs::path& manifest_path) {
  json j;
  try {
    j = json::parse(read_file(manifest_path));
  } catch (const json::exception& e) {
    throw DataError(manifest_path.string() + ": " + e.what());
  }
  Dataset data;
  try {
    data.manifest = manifest_from_json(j);
  } catch (const ConfigError& e) {
    throw DataError(manifest_path.string() + ": " + e.what());
  } catch (const json::exception& e) {
    throw DataError(manifest_path.string() + ": " + e.what());
  }
  fs::path root = manifest_path.parent_path();
  for (const std::string& user : data.manifest.users) {
    auto it = data.manifest.files.find(user);
    if (it == data.manifest.files.end()) {
      throw DataError("manifest: no file entry for user " + user);
    }
    UserData ud;
    ud.user_id = user;
    for (const auto& [sensor_id, rel] : it->second.recordings) {
      // Rejects recordings for sensors the manifest does not declare.
      data.manifest.sensor(sensor_id);
    }
    for (const SensorMeta& meta : data.manifest.sensors) {
      auto rit = it->second.recordings.find(meta.id);
      if (rit == it->second.recordings.end()) {
        throw DataError("manifest: user " + user + " missing recording for sensor " + meta.id);
      }
      ud.recordings.push_back(read_recording_csv(root / rit->second, meta));
    }
    ud.labels = read_labels_csv(root / it->second.labels);
    for (const auto& li : ud.labels) {
      if (li.label < 0 || li.label >= data.manifest.num_classes()) {
        throw DataError("user " + user + ": label " + std::to_string(li.label) + " out of range");
      }
    }
    data.users.push_back(std::move(ud));
  }
  return data;
}

inline void write_dataset_csv(const Dataset& data, const fs::path& dir) {
  fs::create_directories(dir);
  DatasetManifest m = data.manifest;
  m.files.clear();
  for (const UserData& user : data.users) {
    UserFiles uf;
    uf.labels = user.user_id + "_labels.csv";
    write_labels_csv(dir / uf.labels, user.labels);
    for (const SensorRecording& rec : user.recordings) {
      std::string name = user.user_id + "_" + rec.sensor_id + ".csv";
      uf.recordings[rec.sensor_id] = name;
      write_recording_csv(dir / name, rec);
    }
    m.files[user.user_id] = uf;
  }
  atomic_write_file(dir / "manifest.json", manifest_to_json(m).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Config JSON
// ---------------------------------------------------------------------------

inline json model_config_to_json(const ModelConfig& c) {
  json j;
  j["sensors"] = json::array();
  for (const auto& s : c.sensors) j["sensors"].push_back({{"id", s.id}, {"dims", s.dims}});
  j["timesteps"] = c.timesteps;
  j["freq_bins"] = c.freq_bins;
  j["num_classes"] = c.num_classes;
  j["variant"] = variant_name(c.variant);
  j["conv_filters"] = c.conv_filters;
  j["gru_units"] = c.gru_units;
  j["heads"] = c.heads;
  j["d_k"] = c.d_k;
  j["dropout_conv"] = c.dropout_conv;
  j["dropout_rnn"] = c.dropout_rnn;
  j["ffn_multiplier"] = c.ffn_multiplier;
  j["ca_score_dim"] = c.ca_score_dim;
  j["trasend_reduce"] = c.trasend_reduce == TrasendReduce::mean ? "mean" : "flatten";
  j["bn_momentum"] = c.bn_momentum;
  j["bn_eps"] = c.bn_eps;
  j["ln_eps"] = c.ln_eps;
  return j;
}

inline ModelConfig model_config_from_json(const json& j) {
  check_keys(j,
             {"sensors", "timesteps", "freq_bins", "num_classes", "variant", "conv_filters",
              "gru_units", "heads", "d_k", "dropout_conv", "dropout_rnn", "ffn_multiplier",
              "ca_score_dim", "trasend_reduce", "bn_momentum", "bn_eps", "ln_eps"},
             "model config");
  ModelConfig c;
  if (j.contains("sensors")) {
    c.sensors.clear();
    for (const auto& s : j.at("sensors")) {
      check_keys(s, {"id", "dims"}, "model config sensors");
      c.sensors.push_back({s.at("id").get<std::string>(), s.at("dims").get<int64_t>()});
    }
  }
  if (j.contains("timesteps")) c.timesteps = j.at("timesteps").get<int64_t>();
  if (j.contains("freq_bins")) c.freq_bins = j.at("freq_bins").get<int64_t>();
  if (j.contains("num_classes")) c.num_classes = j.at("num_classes").get<int64_t>();
  if (j.contains("variant")) c.variant = variant_from_name(j.at("variant").get<std::string>());
  if (j.contains("conv_filters")) c.conv_filters = j.at("conv_filters").get<int64_t>();
  if (j.contains("gru_units")) c.gru_units = j.at("gru_units").get<int64_t>();
  if (j.contains("heads")) c.heads = j.at("heads").get<int64_t>();
  if (j.contains("d_k")) c.d_k = j.at("d_k").get<int64_t>();
  if (j.contains("dropout_conv")) c.dropout_conv = j.at("dropout_conv").get<double>();
  if (j.contains("dropout_rnn")) c.dropout_rnn = j.at("dropout_rnn").get<double>();
  if (j.contains("ffn_multiplier")) c.ffn_multiplier = j.at("ffn_multiplier").get<int64_t>();
  if (j.contains("ca_score_dim")) c.ca_score_dim = j.at("ca_score_dim").get<int64_t>();
  if (j.contains("trasend_reduce")) {
    std::string r = j.at("trasend_reduce").get<std::string>();
    if (r == "mean") {
      c.trasend_reduce = TrasendReduce::mean;
    } else if (r == "flatten") {
      c.trasend_reduce = TrasendReduce::flatten;
    } else {
      throw ConfigError("model config: trasend_reduce must be mean or flatten");
    }
  }
  if (j.contains("bn_momentum")) c.bn_momentum = j.at("bn_momentum").get<double>();
  if (j.contains("bn_eps")) c.bn_eps = j.at("bn_eps").get<double>();
  if (j.contains("ln_eps")) c.ln_eps = j.at("ln_eps").get<double>();
  return c;
}

inline json preprocess_config_to_json(const PreprocessConfig& c) {
  return json{{"sample_seconds", c.sample_seconds},
              {"tau_seconds", c.tau_seconds},
              {"freq_bins", c.freq_bins}};
}

inline PreprocessConfig preprocess_config_from_json(const json& j) {
  check_keys(j, {"sample_seconds", "tau_seconds", "freq_bins"}, "preprocess config");
  PreprocessConfig c;
  if (j.contains("sample_seconds")) c.sample_seconds = j.at("sample_seconds").get<double>();
  if (j.contains("tau_seconds")) c.tau_seconds = j.at("tau_seconds").get<double>();
  if (j.contains("freq_bins")) c.freq_bins = j.at("freq_bins").get<int64_t>();
  c.validate();
  return c;
}

inline json train_config_to_json(const TrainConfig& c) {
  json j;
  j["epochs"] = c.epochs;
  j["learning_rate"] = c.learning_rate;
  j["batch_size"] = c.batch_size;
  j["seed"] = c.seed;
  j["augment_copies"] = c.augment_copies;
  j["augmentation"] = {{"variance_accelerometer", c.augmentation.variance_accelerometer},
                       {"variance_gyroscope", c.augmentation.variance_gyroscope},
                       {"variance_other", c.augmentation.variance_other}};
  j["adam_beta1"] = c.adam_beta1;
  j["adam_beta2"] = c.adam_beta2;
  j["adam_eps"] = c.adam_eps;
  j["test_noise_std"] = c.test_noise_std;
  j["precision"] = c.precision == Precision::f32 ? "f32" : "f64";
  return j;
}

inline TrainConfig train_config_from_json(const json& j) {
  check_keys(j,
             {"epochs", "learning_rate", "batch_size", "seed", "augment_copies", "augmentation",
              "adam_beta1", "adam_beta2", "adam_eps", "test_noise_std", "precision"},
             "train config");
  TrainConfig c;
  if (j.contains("epochs")) c.epochs = j.at("epochs").get<int64_t>();
  if (j.contains("learning_rate")) c.learning_rate = j.at("learning_rate").get<double>();
  if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int64_t>();
  if (j.contains("seed")) c.seed = j.at("seed").get<uint64_t>();
  if (j.contains("augment_copies")) c.augment_copies = j.at("augment_copies").get<int64_t>();
  if (j.contains("augmentation")) {
    const json& a = j.at("augmentation");
    check_keys(a, {"variance_accelerometer", "variance_gyroscope", "variance_other"},
               "train config augmentation");
    if (a.contains("variance_accelerometer")) {
      c.augmentation.variance_accelerometer = a.at("variance_accelerometer").get<double>();
    }
    if (a.contains("variance_gyroscope")) {
      c.augmentation.variance_gyroscope = a.at("variance_gyroscope").get<double>();
    }
    if (a.contains("variance_other")) c.augmentation.variance_other = a.at("variance_other").get<double>();
  }
  if (j.contains("adam_beta1")) c.adam_beta1 = j.at("adam_beta1").get<double>();
  if (j.contains("adam_beta2")) c.adam_beta2 = j.at("adam_beta2").get<double>();
  if (j.contains("adam_eps")) c.adam_eps = j.at("adam_eps").get<double>();
  if (j.contains("test_noise_std")) c.test_noise_std = j.at("test_noise_std").get<double>();
  if (j.contains("precision")) {
    std::string p = j.at("precision").get<std::string>();
    if (p == "f64") {
      c.precision = Precision::f64;
    } else if (p == "f32") {
      c.precision = Precision::f32;
    } else {
      throw ConfigError("train config: precision must be f64 or f32");
    }
  }
  c.validate();
  return c;
}

inline json synthetic_spec_to_json(const SyntheticSpec& s) {
  json j;
  j["users"] = s.users;
  j["classes"] = s.classes;
  j["sensors"] = json::array();
  for (const auto& m : s.sensors) {
    j["sensors"].push_back(
        {{"id", m.id}, {"kind", sensor_kind_name(m.kind)}, {"dims", m.dims}, {"rate_hz", m.rate_hz}});
  }
  j["class_freq_hz"] = s.class_freq_hz;
  j["class_amplitude"] = s.class_amplitude;
  j["user_offset_magnitude"] = s.user_offset_magnitude;
  j["noise_std"] = s.noise_std;
  j["samples_per_user_class"] = s.samples_per_user_class;
  j["sample_seconds"] = s.sample_seconds;
  j["seed"] = s.seed;
  return j;
}

inline SyntheticSpec synthetic_spec_from_json(const json& j) {
  check_keys(j,
             {"users", "classes", "sensors", "class_freq_hz", "class_amplitude",
              "user_offset_magnitude", "noise_std", "samples_per_user_class", "sample_seconds",
              "seed"},
             "synthetic spec");
  SyntheticSpec s;
  if (j.contains("users")) s.users = j.at("users").get<int64_t>();
  if (j.contains("classes")) s.classes = j.at("classes").get<int64_t>();
  if (j.contains("sensors")) {
    for (const auto& m : j.at("sensors")) {
      check_keys(m, {"id", "kind", "dims", "rate_hz"}, "synthetic spec sensors");
      SensorMeta meta;
      meta.id = m.at("id").get<std::string>();
      meta.kind = sensor_kind_from_name(m.at("kind").get<std::string>());
      meta.dims = m.at("dims").get<int64_t>();
      meta.rate_hz = m.at("rate_hz").get<double>();
      s.sensors.push_back(meta);
    }
  }
  if (j.contains("class_freq_hz")) s.class_freq_hz = j.at("class_freq_hz").get<std::vector<double>>();
  if (j.contains("class_amplitude")) {
    s.class_amplitude = j.at("class_amplitude").get<std::vector<double>>();
  }
  if (j.contains("user_offset_magnitude")) {
    s.user_offset_magnitude = j.at("user_offset_magnitude").get<double>();
  }
  if (j.contains("noise_std")) s.noise_std = j.at("noise_std").get<double>();
  if (j.contains("samples_per_user_class")) {
    s.samples_per_user_class = j.at("samples_per_user_class").get<int64_t>();
  }
  if (j.contains("sample_seconds")) s.sample_seconds = j.at("sample_seconds").get<double>();
  if (j.contains("seed")) s.seed = j.at("seed").get<uint64_t>();
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

inline json eval_report_to_json(const EvalReport& r) {
  json j;
  j["f1_averaging"] = r.f1_averaging;
  j["aggregate_f1"] = r.aggregate_f1;
  j["config_hash"] = r.config_hash;
  j["seed"] = r.seed;
  j["warnings"] = r.warnings;
  json per_user = json::object();
  for (const auto& fr : r.per_user) {
    json u;
    u["f1"] = fr.f1;
    json cm = json::array();
    for (int t = 0; t < fr.confusion.num_classes; ++t) {
      json row = json::array();
      for (int p = 0; p < fr.confusion.num_classes; ++p) row.push_back(fr.confusion.at(t, p));
      cm.push_back(row);
    }
    u["confusion"] = cm;
    json hist = json::array();
    for (const auto& e : fr.history) {
      hist.push_back({{"train_loss", e.train_loss}, {"val_f1", e.val_f1}});
    }
    u["history"] = hist;
    per_user[fr.user] = u;
  }
  j["per_user"] = per_user;
  return j;
}

inline json personalize_result_to_json(const PersonalizeResult& r) {
  json j;
  j["f1_before"] = r.f1_before;
  j["f1_after"] = r.f1_after;
  j["adaptation_events"] = r.adaptation_events;
  j["prequential_accuracy"] = r.prequential_accuracy;
  j["warnings"] = r.warnings;
  return j;
}

// ---------------------------------------------------------------------------
// Sample archive (binary)
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f64(std::string& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}
inline void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<uint32_t>(s.size()));
  out += s;
}

struct Reader {
  const std::string& buf;
  size_t at = 0;
  std::string where;

  void need(size_t n) const {
    if (at + n > buf.size()) throw IoError(where + ": truncated");
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[at + i])) << (8 * i);
    at += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[at + i])) << (8 * i);
    at += 8;
    return v;
  }
  double f64() {
    uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str() {
    uint32_t n = u32();
    need(n);
    std::string s = buf.substr(at, n);
    at += n;
    return s;
  }
};

}  // namespace detail

constexpr const char kArchiveMagic[] = "TRSAMP01";

inline void save_sample_archive(const fs::path& path, const std::vector<PreprocessedSample>& samples,
                                const PreprocessConfig& cfg) {
  std::string out;
  out += kArchiveMagic;
  detail::put_u32(out, 1);  // version
  detail::put_f64(out, cfg.sample_seconds);
  detail::put_f64(out, cfg.tau_seconds);
  detail::put_u64(out, static_cast<uint64_t>(cfg.freq_bins));
  detail::put_u64(out, samples.size());
  for (const auto& s : samples) {
    detail::put_str(out, s.user_id);
    detail::put_u32(out, static_cast<uint32_t>(s.label));
    out.push_back(s.origin == SampleOrigin::real ? 0 : 1);
    detail::put_f64(out, s.window_start);
    detail::put_u32(out, static_cast<uint32_t>(s.tensors.size()));
    for (const auto& t : s.tensors) {
      detail::put_u64(out, static_cast<uint64_t>(t.dim(0)));
      detail::put_u64(out, static_cast<uint64_t>(t.dim(1)));
      detail::put_u64(out, static_cast<uint64_t>(t.dim(2)));
      for (int64_t i = 0; i < t.numel(); ++i) detail::put_f64(out, t[i]);
    }
  }
  atomic_write_file(path, out);
}

inline std::pair<std::vector<PreprocessedSample>, PreprocessConfig> load_sample_archive(
    const fs::path& path) {
  std::string buf = read_file(path);
  detail::Reader r{buf, 0, path.string()};
  r.need(8);
  if (buf.compare(0, 8, kArchiveMagic) != 0) throw IoError(path.string() + ": not a sample archive");
  r.at = 8;
  uint32_t version = r.u32();
  if (version != 1) {
    throw IoError(path.string() + ": unsupported archive version " + std::to_string(version));
  }
  PreprocessConfig cfg;
  cfg.sample_seconds = r.f64();
  cfg.tau_seconds = r.f64();
  cfg.freq_bins = static_cast<int64_t>(r.u64());
  uint64_t count = r.u64();
  std::vector<PreprocessedSample> samples;
  samples.reserve(count);
  for (uint64_t i = 0; i < count; ++i) {
    PreprocessedSample s;
    s.user_id = r.str();
    s.label = static_cast<int>(r.u32());
    r.need(1);
    s.origin = buf[r.at] == 0 ? SampleOrigin::real : SampleOrigin::augmented;
    r.at += 1;
    s.window_start = r.f64();
    uint32_t nsensors = r.u32();
    for (uint32_t k = 0; k < nsensors; ++k) {
      int64_t d = static_cast<int64_t>(r.u64());
      int64_t f2 = static_cast<int64_t>(r.u64());
      int64_t T = static_cast<int64_t>(r.u64());
      if (d < 1 || f2 < 2 || T < 1 || d * f2 * T > (1LL << 32)) {
        throw IoError(path.string() + ": corrupt tensor header");
      }
      Tensor<double> t({d, f2, T});
      for (int64_t j = 0; j < t.numel(); ++j) t[j] = r.f64();
      s.tensors.push_back(std::move(t));
    }
    samples.push_back(std::move(s));
  }
  if (r.at != buf.size()) throw IoError(path.string() + ": trailing bytes");
  return {std::move(samples), cfg};
}

// ---------------------------------------------------------------------------
// Checkpoint: JSON manifest + raw little-endian buffers in one file
// ---------------------------------------------------------------------------

constexpr const char kCheckpointMagic[] = "TRSENDCK";
constexpr uint32_t kCheckpointVersion = 1;

template <typename S>
void save_checkpoint(const fs::path& path, const ParamTable<S>& params, const ModelConfig& cfg,
                     uint64_t seed) {
  json manifest;
  manifest["dtype"] = sizeof(S) == 8 ? "f64" : "f32";
  manifest["config"] = model_config_to_json(cfg);
  manifest["seed"] = seed;
  manifest["params"] = json::array();
  for (const auto& p : params.items()) {
    manifest["params"].push_back({{"name", p.name},
                                  {"shape", p.value.shape()},
                                  {"group", param_group_name(p.group)},
                                  {"trainable", p.trainable}});
  }
  std::string mstr = manifest.dump();
  std::string out;
  out += kCheckpointMagic;
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u64(out, mstr.size());
  out += mstr;
  for (const auto& p : params.items()) {
    for (int64_t i = 0; i < p.value.numel(); ++i) {
      if constexpr (sizeof(S) == 8) {
        detail::put_f64(out, static_cast<double>(p.value[i]));
      } else {
        uint32_t bits;
        float f = static_cast<float>(p.value[i]);
        std::memcpy(&bits, &f, 4);
        detail::put_u32(out, bits);
      }
    }
  }
  atomic_write_file(path, out);
}

// Reads just enough of a checkpoint to report its scalar type.
inline std::string checkpoint_dtype(const fs::path& path) {
  std::string buf = read_file(path);
  detail::Reader r{buf, 0, path.string()};
  r.need(8);
  if (buf.compare(0, 8, kCheckpointMagic) != 0) throw IoError(path.string() + ": not a checkpoint");
  r.at = 8;
  uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw IoError(path.string() + ": checkpoint version mismatch (file " + std::to_string(version) +
                  ", supported " + std::to_string(kCheckpointVersion) + ")");
  }
  uint64_t mlen = r.u64();
  r.need(mlen);
  try {
    return json::parse(buf.substr(r.at, mlen)).at("dtype").get<std::string>();
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": bad checkpoint manifest: " + e.what());
  }
}

template <typename S>
std::pair<ParamTable<S>, ModelConfig> load_checkpoint(const fs::path& path, uint64_t* seed = nullptr) {
  std::string buf = read_file(path);
  detail::Reader r{buf, 0, path.string()};
  r.need(8);
  if (buf.compare(0, 8, kCheckpointMagic) != 0) throw IoError(path.string() + ": not a checkpoint");
  r.at = 8;
  uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw IoError(path.string() + ": checkpoint version mismatch (file " + std::to_string(version) +
                  ", supported " + std::to_string(kCheckpointVersion) + ")");
  }
  uint64_t mlen = r.u64();
  r.need(mlen);
  json manifest;
  try {
    manifest = json::parse(buf.substr(r.at, mlen));
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": bad checkpoint manifest: " + e.what());
  }
  r.at += mlen;
  std::string dtype = manifest.at("dtype").get<std::string>();
  std::string expect = sizeof(S) == 8 ? "f64" : "f32";
  if (dtype != expect) {
    throw IoError(path.string() + ": dtype " + dtype + " does not match requested " + expect);
  }
  ModelConfig cfg = model_config_from_json(manifest.at("config"));
  if (seed) *seed = manifest.at("seed").get<uint64_t>();

  ParamTable<S> params;
  for (const auto& pj : manifest.at("params")) {
    std::string name = pj.at("name").get<std::string>();
    std::vector<int64_t> shape = pj.at("shape").get<std::vector<int64_t>>();
    ParamGroup group = param_group_from_name(pj.at("group").get<std::string>());
    bool trainable = pj.at("trainable").get<bool>();
    Tensor<S> value(shape);
    for (int64_t i = 0; i < value.numel(); ++i) {
      if constexpr (sizeof(S) == 8) {
        value[i] = static_cast<S>(r.f64());
      } else {
        uint32_t bits = r.u32();
        float f;
        std::memcpy(&f, &bits, 4);
        value[i] = static_cast<S>(f);
      }
    }
    params.add(std::move(name), std::move(value), group, trainable);
  }
  if (r.at != buf.size()) throw IoError(path.string() + ": trailing bytes after parameter buffers");
  return {std::move(params), std::move(cfg)};
}

// ---------------------------------------------------------------------------
// Personalization event stream (JSON lines)
// ---------------------------------------------------------------------------

struct FeedbackEvent {
  int64_t sample_ref = 0;  // index into a sample archive
  int label = 0;
  double timestamp = 0;
};

inline std::vector<FeedbackEvent> read_event_stream(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open event stream " + path.string());
  std::vector<FeedbackEvent> events;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    check_keys(j, {"sample_ref", "label", "timestamp"}, "event stream");
    FeedbackEvent e;
    e.sample_ref = j.at("sample_ref").get<int64_t>();
    e.label = j.at("label").get<int>();
    e.timestamp = j.contains("timestamp") ? j.at("timestamp").get<double>() : 0.0;
    events.push_back(e);
  }
  return events;
}

}  // namespace trasend
