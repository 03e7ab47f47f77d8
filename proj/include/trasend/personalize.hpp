#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "trasend/train.hpp"

namespace trasend {

// Adam hyperparameters for output-layer adaptation.
template <typename S>
AdamConfig<S> personalization_adam() {
  AdamConfig<S> a;
  a.alpha = S(0.001);
  a.beta1 = S(0.5);
  a.beta2 = S(0.9);
  a.eps = S(1e-8);
  return a;
}

struct UserSplit {
  std::vector<const PreprocessedSample*> adaptation;  // time-ordered
  std::vector<const PreprocessedSample*> test;        // time-ordered
  std::vector<std::string> warnings;
};

// Per activity, the time-earlier half of a user's samples goes to adaptation
// and the later half to test; odd counts give the extra sample to adaptation.
// Activities with fewer than 2 samples are excluded with a warning.
inline UserSplit split_user_data(const std::vector<const PreprocessedSample*>& samples) {
  std::map<int, std::vector<const PreprocessedSample*>> by_label;
  for (const auto* s : samples) by_label[s->label].push_back(s);
  UserSplit split;
  for (auto& [label, group] : by_label) {
    std::sort(group.begin(), group.end(),
              [](const PreprocessedSample* a, const PreprocessedSample* b) {
                return a->window_start < b->window_start;
              });
    if (group.size() < 2) {
      split.warnings.push_back("activity " + std::to_string(label) +
                               " excluded: fewer than 2 samples");
      continue;
    }
    size_t adapt_n = (group.size() + 1) / 2;
    for (size_t i = 0; i < group.size(); ++i) {
      (i < adapt_n ? split.adaptation : split.test).push_back(group[i]);
    }
  }
  auto by_time = [](const PreprocessedSample* a, const PreprocessedSample* b) {
    return a->window_start < b->window_start;
  };
  std::sort(split.adaptation.begin(), split.adaptation.end(), by_time);
  std::sort(split.test.begin(), split.test.end(), by_time);
  return split;
}

/// Output-layer transfer-learning session. The feature extractor is frozen
/// (bitwise, including batch-norm running statistics: forwards run in eval
/// mode) and each feedback event triggers exactly one Adam step on the output
/// layer. Predictions are recorded before each update (prequential).
template <typename S>
class PersonalizationSession {
 public:
  PersonalizationSession(const ModelConfig& cfg, const ParamTable<S>& trained,
                         AdamConfig<S> adam = personalization_adam<S>())
      : model_(cfg, freeze_features(trained)), adam_cfg_(adam) {}

  // Returns the pre-update prediction, or -1 when the event is rejected
  // (label out of range; the session is left unchanged).
  int adapt_step(const PreprocessedSample& sample, int true_label) {
    if (true_label < 0 || true_label >= model_.cfg.num_classes) {
      ++rejected_;
      return -1;
    }
    Context<S> ctx;
    ctx.mode = RunMode::eval;
    BoundParams<S> bp(ctx.tape, model_.params);
    std::vector<const PreprocessedSample*> one{&sample};
    Var lg = model_.logits(ctx, bp, model_.assemble_inputs(one));
    const Tensor<S>& lv = ctx.tape.val(lg);
    int pred = 0;
    for (int c = 1; c < model_.cfg.num_classes; ++c) {
      if (lv[c] > lv[pred]) pred = c;
    }
    Var loss = softmax_cross_entropy(ctx.tape, lg, model_.one_hot({true_label}));
    GradMap<S> grads = backward(ctx.tape, loss, bp);
    adam_step(model_.params, grads, opt_, adam_cfg_);
    ++events_;
    if (pred == true_label) ++prequential_correct_;
    return pred;
  }

  Model<S>& model() { return model_; }
  int64_t events_processed() const { return events_; }
  int64_t events_rejected() const { return rejected_; }
  double prequential_accuracy() const {
    return events_ > 0 ? static_cast<double>(prequential_correct_) / static_cast<double>(events_) : 0.0;
  }

 private:
  static ParamTable<S> freeze_features(const ParamTable<S>& trained) {
    ParamTable<S> frozen = trained;
    for (auto& p : frozen.items()) {
      if (p.group != ParamGroup::output_layer) p.trainable = false;
    }
    return frozen;
  }

  Model<S> model_;
  AdamConfig<S> adam_cfg_;
  AdamState<S> opt_;
  int64_t events_ = 0;
  int64_t rejected_ = 0;
  int64_t prequential_correct_ = 0;
};

struct PersonalizeResult {
  double f1_before = 0;
  double f1_after = 0;
  int64_t adaptation_events = 0;
  double prequential_accuracy = 0;
  std::vector<std::string> warnings;
};

// Evaluates the unadapted model on the user's test half, replays the
// adaptation half as time-ordered feedback events, and evaluates again.
// The trained parameters are expected to come from a fold that excluded this
// user.
template <typename S>
PersonalizeResult personalize_run(const ModelConfig& cfg, const ParamTable<S>& trained,
                                  const std::vector<const PreprocessedSample*>& user_samples,
                                  AdamConfig<S> adam = personalization_adam<S>()) {
  UserSplit split = split_user_data(user_samples);
  PersonalizeResult result;
  result.warnings = split.warnings;
  if (split.test.empty()) {
    result.warnings.push_back("empty test half: nothing to evaluate");
    return result;
  }
  std::vector<int> truth = detail::labels_of(split.test);

  Model<S> before(cfg, trained);
  result.f1_before = macro_f1(detail::predict_batched(before, split.test, 64), truth, cfg.num_classes);

  if (split.adaptation.empty()) {
    result.warnings.push_back("empty adaptation half: scores unchanged");
    result.f1_after = result.f1_before;
    return result;
  }

  PersonalizationSession<S> session(cfg, trained, adam);
  for (const auto* s : split.adaptation) session.adapt_step(*s, s->label);
  result.adaptation_events = session.events_processed();
  result.prequential_accuracy = session.prequential_accuracy();
  result.f1_after =
      macro_f1(detail::predict_batched(session.model(), split.test, 64), truth, cfg.num_classes);
  return result;
}

struct PermutedLabelResult {
  double f1_random_train = 0;
  double f1_after_personalization = 0;
  std::string target_user;
};

// Trains the full model on label-shuffled data from every user except the
// target, scores the target's test half (expected: chance level), then adapts
// the output layer on the target's correctly-labeled adaptation half and
// scores again.
template <typename S>
PermutedLabelResult permuted_label_validation(const std::vector<std::shared_ptr<RawWindow>>& windows,
                                              const PreprocessConfig& pp, const ModelConfig& mc,
                                              const TrainConfig& tc) {
  std::vector<std::string> users;
  for (const auto& w : windows) users.push_back(w->user_id);
  std::sort(users.begin(), users.end());
  users.erase(std::unique(users.begin(), users.end()), users.end());
  if (users.size() < 2) throw DataError("permuted_label_validation: need at least 2 users");
  const std::string target = users.front();

  // Shuffle labels across the training windows only.
  std::vector<std::shared_ptr<RawWindow>> permuted;
  std::vector<size_t> train_idx;
  std::vector<int> labels;
  for (size_t i = 0; i < windows.size(); ++i) {
    permuted.push_back(std::make_shared<RawWindow>(*windows[i]));
    if (windows[i]->user_id != target) {
      train_idx.push_back(i);
      labels.push_back(windows[i]->label);
    }
  }
  auto rng = make_rng(tc.seed, 0x9e12u);
  std::shuffle(labels.begin(), labels.end(), rng);
  for (size_t k = 0; k < train_idx.size(); ++k) permuted[train_idx[k]]->label = labels[k];

  SampleCorpus corpus = build_corpus(permuted, pp, tc);
  std::vector<const PreprocessedSample*> train_set;
  std::vector<const PreprocessedSample*> target_samples;
  for (const auto& s : corpus.real) {
    (s.user_id == target ? target_samples : train_set).push_back(&s);
  }
  for (const auto& s : corpus.augmented) {
    if (s.user_id != target) train_set.push_back(&s);
  }

  UserSplit split = split_user_data(target_samples);
  ModelClassifier<S> classifier(mc, tc, derive_seed(tc.seed, 0x9e12u, 1));
  classifier.fit(train_set, split.test);

  PermutedLabelResult result;
  result.target_user = target;
  PersonalizeResult pr = personalize_run(mc, classifier.model().params, target_samples);
  result.f1_random_train = pr.f1_before;
  result.f1_after_personalization = pr.f1_after;
  return result;
}

}  // namespace trasend
