#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "trasend/dataset.hpp"
#include "trasend/metrics.hpp"
#include "trasend/model.hpp"

namespace trasend {

enum class Precision { f64, f32 };

struct TrainConfig {
  int64_t epochs = 30;
  double learning_rate = 1e-3;
  int64_t batch_size = 64;
  uint64_t seed = 0;
  int64_t augment_copies = 9;
  AugmentationSpec augmentation;   // variances; `copies` comes from augment_copies
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double test_noise_std = 0.0;     // extra raw noise on test windows (robustness experiments)
  Precision precision = Precision::f64;

  void validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (learning_rate <= 0) throw ConfigError("train: learning_rate must be > 0");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (augment_copies < 0) throw ConfigError("train: augment_copies must be >= 0");
    if (test_noise_std < 0) throw ConfigError("train: test_noise_std must be >= 0");
  }

  template <typename S>
  AdamConfig<S> adam() const {
    AdamConfig<S> a;
    a.alpha = static_cast<S>(learning_rate);
    a.beta1 = static_cast<S>(adam_beta1);
    a.beta2 = static_cast<S>(adam_beta2);
    a.eps = static_cast<S>(adam_eps);
    return a;
  }
};

struct EpochStats {
  double train_loss = 0;  // mean cross-entropy per sample
  double val_f1 = 0;
  double seconds = 0;     // wall time; reported to the console, never to files
};

template <typename S>
struct TrainResult {
  ParamTable<S> best_params;
  std::vector<EpochStats> history;
  int best_epoch = 0;
};

namespace detail {

template <typename S>
std::vector<int> predict_batched(Model<S>& model, const std::vector<const PreprocessedSample*>& samples,
                                 int64_t batch_size) {
  std::vector<int> out;
  out.reserve(samples.size());
  for (size_t at = 0; at < samples.size(); at += static_cast<size_t>(batch_size)) {
    size_t end = std::min(samples.size(), at + static_cast<size_t>(batch_size));
    std::vector<const PreprocessedSample*> chunk(samples.begin() + at, samples.begin() + end);
    std::vector<int> pred = model.predict(chunk);
    out.insert(out.end(), pred.begin(), pred.end());
  }
  return out;
}

inline std::vector<int> labels_of(const std::vector<const PreprocessedSample*>& samples) {
  std::vector<int> y;
  y.reserve(samples.size());
  for (const auto* s : samples) y.push_back(s->label);
  return y;
}

}  // namespace detail

// Shuffled mini-batch Adam training. After each epoch the held-out fold is
// scored and the parameter snapshot with the highest validation macro-F1 is
// kept (ties resolve to the earliest epoch). The model is left holding its
// final-epoch parameters; the returned snapshot is the selected one.
template <typename S>
TrainResult<S> train_model(Model<S>& model, const std::vector<const PreprocessedSample*>& train,
                           const std::vector<const PreprocessedSample*>& val, const TrainConfig& cfg) {
  cfg.validate();
  if (train.empty()) throw ContractError("train_model: empty training set");
  TrainResult<S> result;
  result.best_params = model.params;
  double best_f1 = -1.0;
  AdamConfig<S> adam_cfg = cfg.template adam<S>();
  AdamState<S> opt;
  auto dropout_rng = make_rng(cfg.seed, 0xd40u);

  std::vector<size_t> order(train.size());
  std::iota(order.begin(), order.end(), size_t{0});

  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto t_start = std::chrono::steady_clock::now();
    auto shuffle_rng = make_rng(cfg.seed, 0x5eedu, static_cast<uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0;
    int64_t seen = 0;
    for (size_t at = 0; at < order.size(); at += static_cast<size_t>(cfg.batch_size)) {
      size_t end = std::min(order.size(), at + static_cast<size_t>(cfg.batch_size));
      std::vector<const PreprocessedSample*> batch;
      std::vector<int> labels;
      batch.reserve(end - at);
      for (size_t i = at; i < end; ++i) {
        batch.push_back(train[order[i]]);
        labels.push_back(train[order[i]]->label);
      }
      Context<S> ctx;
      ctx.mode = RunMode::train;
      ctx.rng = dropout_rng;
      BoundParams<S> bp(ctx.tape, model.params);
      Var total = model.loss(ctx, bp, model.assemble_inputs(batch), model.one_hot(labels));
      Var mean_loss = scale(ctx.tape, total, S(1) / S(static_cast<int64_t>(batch.size())));
      double batch_loss = static_cast<double>(ctx.tape.val(mean_loss)[0]);
      if (!std::isfinite(batch_loss)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(at / static_cast<size_t>(cfg.batch_size)) + ", lr " +
                           std::to_string(cfg.learning_rate));
      }
      GradMap<S> grads = backward(ctx.tape, mean_loss, bp);
      adam_step(model.params, grads, opt, adam_cfg);
      dropout_rng = ctx.rng;  // keep the noise stream advancing across batches
      loss_sum += batch_loss * static_cast<double>(batch.size());
      seen += static_cast<int64_t>(batch.size());
    }

    EpochStats stats;
    stats.train_loss = loss_sum / static_cast<double>(seen);
    if (!val.empty()) {
      std::vector<int> pred = detail::predict_batched(model, val, cfg.batch_size);
      stats.val_f1 = macro_f1(pred, detail::labels_of(val), model.cfg.num_classes);
    }
    stats.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    result.history.push_back(stats);
    if (stats.val_f1 > best_f1) {
      best_f1 = stats.val_f1;
      result.best_params = model.params;
      result.best_epoch = static_cast<int>(epoch);
    }
  }
  return result;
}

/// Anything that can be trained on samples and asked for labels. The model
/// architectures implement it; tests may inject oracles.
template <typename S>
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual std::vector<EpochStats> fit(const std::vector<const PreprocessedSample*>& train,
                                      const std::vector<const PreprocessedSample*>& val) = 0;
  virtual std::vector<int> predict(const std::vector<const PreprocessedSample*>& test) = 0;
};

template <typename S>
using ClassifierFactory = std::function<std::unique_ptr<Classifier<S>>(uint64_t fold_seed)>;

template <typename S>
class ModelClassifier : public Classifier<S> {
 public:
  ModelClassifier(ModelConfig mc, TrainConfig tc, uint64_t seed) : model_(mc, seed), cfg_(tc) {
    cfg_.seed = seed;
  }

  std::vector<EpochStats> fit(const std::vector<const PreprocessedSample*>& train,
                              const std::vector<const PreprocessedSample*>& val) override {
    TrainResult<S> r = train_model(model_, train, val, cfg_);
    model_.params = r.best_params;
    return r.history;
  }

  std::vector<int> predict(const std::vector<const PreprocessedSample*>& test) override {
    return detail::predict_batched(model_, test, cfg_.batch_size);
  }

  Model<S>& model() { return model_; }

 private:
  Model<S> model_;
  TrainConfig cfg_;
};

struct FoldReport {
  std::string user;
  double f1 = 0;
  ConfusionMatrix confusion;
  std::vector<EpochStats> history;
};

struct EvalReport {
  std::string f1_averaging = "macro";
  double aggregate_f1 = 0;
  std::vector<FoldReport> per_user;
  uint64_t config_hash = 0;
  uint64_t seed = 0;
  std::vector<std::string> warnings;
};

/// Pre-split corpus for cross-validation: real samples plus their augmented
/// copies, both tagged with the owning user.
struct SampleCorpus {
  std::vector<PreprocessedSample> real;
  std::vector<PreprocessedSample> augmented;
  std::vector<std::string> users;  // sorted unique user ids
};

// Builds real samples for every window and `augment_copies` noisy copies per
// real sample. Augmentation noise is seeded per sample index, so the corpus
// is identical regardless of fold structure or evaluation order.
inline SampleCorpus build_corpus(const std::vector<std::shared_ptr<RawWindow>>& windows,
                                 const PreprocessConfig& pp, const TrainConfig& cfg) {
  SampleCorpus corpus;
  std::set<std::string> users;
  corpus.real.reserve(windows.size());
  AugmentationSpec aug = cfg.augmentation;
  aug.copies = cfg.augment_copies;
  for (size_t i = 0; i < windows.size(); ++i) {
    corpus.real.push_back(build_sample(windows[i], pp));
    users.insert(windows[i]->user_id);
    if (aug.copies > 0) {
      auto rng = make_rng(cfg.seed, 0xa46u, i);
      for (auto& copy : augment(corpus.real.back(), aug, pp, rng)) {
        corpus.augmented.push_back(std::move(copy));
      }
    }
  }
  corpus.users.assign(users.begin(), users.end());
  return corpus;
}

// Leave-one-user-out cross-validation: per user, train on every other user's
// real + augmented samples and test on the held-out user's real samples.
// Aggregate score is the unweighted mean of per-user macro-F1. `only_user`
// restricts the run to a single fold.
template <typename S>
EvalReport leave_one_user_out(const std::vector<std::shared_ptr<RawWindow>>& windows,
                              const PreprocessConfig& pp, int num_classes,
                              const ClassifierFactory<S>& factory, const TrainConfig& cfg,
                              const std::function<void(const std::string&, Classifier<S>&)>&
                                  on_fold_done = nullptr,
                              const std::optional<std::string>& only_user = std::nullopt) {
  cfg.validate();
  SampleCorpus corpus = build_corpus(windows, pp, cfg);
  if (corpus.users.size() < 2) {
    throw DataError("leave_one_user_out: need at least 2 users, got " +
                    std::to_string(corpus.users.size()));
  }
  if (only_user && std::find(corpus.users.begin(), corpus.users.end(), *only_user) ==
                       corpus.users.end()) {
    throw DataError("leave_one_user_out: unknown user " + *only_user);
  }

  EvalReport report;
  report.seed = cfg.seed;
  double f1_sum = 0;
  int64_t folds = 0;
  for (size_t fold = 0; fold < corpus.users.size(); ++fold) {
    const std::string& user = corpus.users[fold];
    if (only_user && user != *only_user) continue;

    std::vector<const PreprocessedSample*> train_set;
    for (const auto& s : corpus.real) {
      if (s.user_id != user) train_set.push_back(&s);
    }
    for (const auto& s : corpus.augmented) {
      if (s.user_id != user) train_set.push_back(&s);
    }

    // Held-out user's real samples, optionally with extra measurement noise.
    std::vector<PreprocessedSample> noisy_storage;
    std::vector<const PreprocessedSample*> test_set;
    for (size_t i = 0; i < windows.size(); ++i) {
      if (windows[i]->user_id != user) continue;
      if (cfg.test_noise_std > 0) {
        auto rng = make_rng(cfg.seed, 0x7e57u, i);
        noisy_storage.push_back(build_sample(perturb_window(*windows[i], cfg.test_noise_std, rng), pp));
      } else {
        test_set.push_back(&corpus.real[i]);
      }
    }
    for (const auto& s : noisy_storage) test_set.push_back(&s);

    if (test_set.empty()) {
      report.warnings.push_back("user " + user + " skipped: no test samples");
      continue;
    }

    auto classifier = factory(derive_seed(cfg.seed, 0xf01du, fold));
    FoldReport fr;
    fr.user = user;
    fr.history = classifier->fit(train_set, test_set);
    std::vector<int> pred = classifier->predict(test_set);
    std::vector<int> truth = detail::labels_of(test_set);
    fr.confusion = confusion_matrix(pred, truth, num_classes);
    fr.f1 = macro_f1(pred, truth, num_classes);
    f1_sum += fr.f1;
    ++folds;
    report.per_user.push_back(std::move(fr));
    if (on_fold_done) on_fold_done(user, *classifier);
  }
  report.aggregate_f1 = folds > 0 ? f1_sum / static_cast<double>(folds) : 0.0;
  return report;
}

// Single-fold learning-rate grid search on the lexicographically first user.
// Returns the candidate with the highest held-out macro-F1; ties resolve to
// the smallest rate.
template <typename S>
double select_learning_rate(
    const std::vector<std::shared_ptr<RawWindow>>& windows, const PreprocessConfig& pp,
    int num_classes,
    const std::function<std::unique_ptr<Classifier<S>>(uint64_t seed, double lr)>& factory,
    const TrainConfig& cfg, std::vector<double> candidates = {1e-2, 1e-3, 1e-4}) {
  if (candidates.empty()) throw ContractError("select_learning_rate: no candidates");
  SampleCorpus corpus = build_corpus(windows, pp, cfg);
  if (corpus.users.size() < 2) {
    throw DataError("select_learning_rate: need at least 2 users");
  }
  const std::string holdout = corpus.users.front();

  std::vector<const PreprocessedSample*> train_set, test_set;
  for (const auto& s : corpus.real) {
    (s.user_id == holdout ? test_set : train_set).push_back(&s);
  }
  for (const auto& s : corpus.augmented) {
    if (s.user_id != holdout) train_set.push_back(&s);
  }

  std::sort(candidates.begin(), candidates.end());
  double best_rate = candidates.front();
  double best_f1 = -1.0;
  for (size_t i = 0; i < candidates.size(); ++i) {
    auto classifier = factory(derive_seed(cfg.seed, 0x1125u, i), candidates[i]);
    classifier->fit(train_set, test_set);
    std::vector<int> pred = classifier->predict(test_set);
    double f1 = macro_f1(pred, detail::labels_of(test_set), num_classes);
    if (f1 > best_f1) {
      best_f1 = f1;
      best_rate = candidates[i];
    }
  }
  return best_rate;
}

}  // namespace trasend
