// Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
// Thresholds are fixed here, not tuned at runtime.

#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <random>

#include "reference.hpp"
#include "trasend/gradcheck.hpp"
#include "trasend/io.hpp"
#include "trasend/personalize.hpp"
#include "trasend/synthetic.hpp"
#include "trasend/train.hpp"

using namespace trasend;

namespace {

using T = Tensor<double>;

void criterion(int k, bool pass, const std::string& details) {
  std::printf("CRITERION %d: %s (%s)\n", k, pass ? "PASS" : "FAIL", details.c_str());
  std::fflush(stdout);
  EXPECT_TRUE(pass) << "criterion " << k << ": " << details;
}

T random_tensor(std::vector<int64_t> shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  T t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = u(rng);
  return t;
}

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Shared experiment geometry: 4-second windows, tau = 0.5 s, f = 10, so
// T = 8 and DFT bins sit at 2 Hz steps up to 10 Hz.
PreprocessConfig desk_pp() {
  PreprocessConfig pp;
  pp.sample_seconds = 4.0;
  pp.tau_seconds = 0.5;
  pp.freq_bins = 10;
  return pp;
}

ModelConfig desk_model(Variant v, int64_t num_classes) {
  ModelConfig mc;
  mc.variant = v;
  mc.sensors = {{"acc", 3}, {"gyro", 3}};
  mc.timesteps = desk_pp().timesteps();
  mc.freq_bins = 10;
  mc.num_classes = num_classes;
  mc.conv_filters = 8;
  mc.gru_units = 32;
  mc.heads = 2;
  mc.d_k = 16;
  mc.dropout_conv = 0.1;
  mc.dropout_rnn = 0.3;
  mc.validate();
  return mc;
}

SyntheticSpec desk_spec(int64_t users, int64_t classes, std::vector<double> freqs,
                        int64_t samples_per, double noise, double offset_magnitude, uint64_t seed) {
  SyntheticSpec spec;
  spec.users = users;
  spec.classes = classes;
  spec.sensors = {{"acc", SensorKind::accelerometer, 3, 50.0},
                  {"gyro", SensorKind::gyroscope, 3, 50.0}};
  spec.class_freq_hz = std::move(freqs);
  spec.user_offset_magnitude = offset_magnitude;
  spec.noise_std = noise;
  spec.samples_per_user_class = samples_per;
  spec.sample_seconds = 4.0;
  spec.seed = seed;
  spec.validate();
  return spec;
}

}  // namespace

TEST(Acceptance, Criterion1GradientCorrectness) {
  auto t0 = std::chrono::steady_clock::now();
  constexpr double kTol = 1e-4;
  constexpr double kEps = 1e-5;
  std::mt19937_64 rng(424242);
  auto rnd = [&rng](std::vector<int64_t> shape) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    T t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = u(rng);
    return t;
  };
  double worst = 0;
  auto track = [&](const char* name, double err) {
    worst = std::max(worst, err);
    EXPECT_LT(err, kTol) << name;
  };
  using Tp = GradTape<double>;
  using Vars = std::vector<Var>;

  track("matmul", gradcheck<double>(
                      [](Tp& t, const Vars& xs) {
                        Var y = matmul(t, xs[0], xs[1]);
                        return sum_all(t, mul(t, y, y));
                      },
                      {rnd({3, 4}), rnd({4, 2})}, kEps));
  track("bmm", gradcheck<double>(
                   [](Tp& t, const Vars& xs) {
                     Var y = bmm(t, xs[0], xs[1], false, true);
                     return sum_all(t, mul(t, y, y));
                   },
                   {rnd({2, 3, 4}), rnd({2, 5, 4})}, kEps));
  track("dense", gradcheck<double>(
                     [](Tp& t, const Vars& xs) {
                       Var y = dense(t, xs[0], xs[1], xs[2]);
                       return sum_all(t, mul(t, y, y));
                     },
                     {rnd({3, 4}), rnd({4, 2}), rnd({2})}, kEps));
  for (Act act : {Act::relu, Act::tanh, Act::sigmoid}) {
    track("activation", gradcheck<double>(
                            [act](Tp& t, const Vars& xs) {
                              return sum_all(t, mul(t, activation(t, xs[0], act), xs[1]));
                            },
                            {rnd({4, 5}), rnd({4, 5})}, kEps));
  }
  track("softmax", gradcheck<double>(
                       [](Tp& t, const Vars& xs) {
                         return sum_all(t, mul(t, softmax(t, xs[0], -1), xs[1]));
                       },
                       {rnd({3, 5}), rnd({3, 5})}, kEps));
  track("log_softmax", gradcheck<double>(
                           [](Tp& t, const Vars& xs) {
                             return sum_all(t, mul(t, log_softmax(t, xs[0], -1), xs[1]));
                           },
                           {rnd({3, 5}), rnd({3, 5})}, kEps));
  track("layer_norm", gradcheck<double>(
                          [](Tp& t, const Vars& xs) {
                            Var y = layer_norm(t, xs[0], xs[1], xs[2], -1, 1e-5);
                            return sum_all(t, mul(t, y, xs[3]));
                          },
                          {rnd({3, 6}), rnd({6}), rnd({6}), rnd({3, 6})}, kEps));
  track("batch_norm_train",
        gradcheck<double>(
            [](Tp& t, const Vars& xs) {
              T m, v;
              BatchNormStats<double> stats{&m, &v};
              Var y = batch_norm(t, xs[0], xs[1], xs[2], stats, RunMode::train, 0.1, 1e-5);
              return sum_all(t, mul(t, y, xs[3]));
            },
            {rnd({5, 3}), rnd({3}), rnd({3}), rnd({5, 3})}, kEps));
  {
    T rm = rnd({3});
    T rv = T::full({3}, 1.2);
    track("batch_norm_eval",
          gradcheck<double>(
              [&](Tp& t, const Vars& xs) {
                BatchNormStats<double> stats{&rm, &rv};
                Var y = batch_norm(t, xs[0], xs[1], xs[2], stats, RunMode::eval, 0.1, 1e-5);
                return sum_all(t, mul(t, y, xs[3]));
              },
              {rnd({5, 3}), rnd({3}), rnd({3}), rnd({5, 3})}, kEps));
  }
  track("dropout", gradcheck<double>(
                       [](Tp& t, const Vars& xs) {
                         std::mt19937_64 mask_rng(7);
                         Var y = dropout(t, xs[0], 0.3, RunMode::train, mask_rng);
                         return sum_all(t, mul(t, y, y));
                       },
                       {rnd({6, 5})}, kEps));
  track("conv2d_valid", gradcheck<double>(
                            [](Tp& t, const Vars& xs) {
                              Var y = conv2d(t, xs[0], xs[1], 1, 2, Padding::valid);
                              return sum_all(t, mul(t, y, y));
                            },
                            {rnd({1, 2, 8, 2}), rnd({1, 3, 2, 3})}, kEps));
  track("conv2d_same", gradcheck<double>(
                           [](Tp& t, const Vars& xs) {
                             Var y = conv2d(t, xs[0], xs[1], 1, 1, Padding::same);
                             return sum_all(t, mul(t, y, y));
                           },
                           {rnd({1, 2, 5, 2}), rnd({2, 4, 2, 3})}, kEps));
  track("scaled_dot_attention", gradcheck<double>(
                                    [](Tp& t, const Vars& xs) {
                                      Var y = scaled_dot_attention(t, xs[0], xs[1], xs[2]);
                                      return sum_all(t, mul(t, y, y));
                                    },
                                    {rnd({3, 4}), rnd({5, 4}), rnd({5, 2})}, kEps));
  track("gru_cell", gradcheck<double>(
                        [](Tp& t, const Vars& xs) {
                          GruCellVars<double> w{xs[2], xs[3], xs[4], xs[5], xs[6],
                                                xs[7], xs[8], xs[9], xs[10]};
                          Var h = gru_cell(t, xs[0], xs[1], w);
                          return sum_all(t, mul(t, h, h));
                        },
                        {rnd({2, 3}), rnd({2, 2}), rnd({3, 2}), rnd({2, 2}), rnd({2}), rnd({3, 2}),
                         rnd({2, 2}), rnd({2}), rnd({3, 2}), rnd({2, 2}), rnd({2})},
                        kEps));
  {
    T onehot = T::zeros({2, 4});
    onehot.at({0, 1}) = 1;
    onehot.at({1, 3}) = 1;
    track("softmax_cross_entropy",
          gradcheck<double>(
              [&](Tp& t, const Vars& xs) { return softmax_cross_entropy(t, xs[0], onehot); },
              {rnd({2, 4})}, kEps));
  }

  // Full model at the tiny configuration, every variant. Central differences
  // need a smooth point: the pinned jitter keeps relu inputs off their kinks
  // (zero-initialized shifts put all-zero conv windows exactly at 0).
  double worst_model = 0;
  for (Variant v : {Variant::trasend, Variant::deepsense, Variant::trasend_bd, Variant::trasend_ca}) {
    ModelConfig c;
    c.sensors = {{"s0", 2}, {"s1", 2}};
    c.timesteps = 4;
    c.freq_bins = 8;
    c.num_classes = 3;
    c.variant = v;
    c.conv_filters = 4;
    c.gru_units = 6;
    c.heads = 2;
    c.d_k = 8;
    c.dropout_conv = 0.0;
    c.dropout_rnn = 0.0;
    Model<double> model(c, 99);
    std::mt19937_64 point_rng(1001);
    std::uniform_real_distribution<double> jitter(-0.05, 0.05);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    for (auto& p : model.params.items()) {
      if (!p.trainable) continue;
      for (int64_t i = 0; i < p.value.numel(); ++i) p.value[i] += jitter(point_rng);
    }
    std::vector<PreprocessedSample> storage;
    std::vector<const PreprocessedSample*> batch;
    for (int i = 0; i < 2; ++i) {
      PreprocessedSample s;
      s.label = i;
      s.user_id = "g";
      for (const auto& sensor : c.sensors) {
        T x({sensor.dims, 2 * c.freq_bins, c.timesteps});
        for (int64_t k = 0; k < x.numel(); ++k) x[k] = unit(point_rng);
        s.tensors.push_back(std::move(x));
      }
      storage.push_back(std::move(s));
    }
    for (const auto& s : storage) batch.push_back(&s);
    double err = model_gradcheck(model, batch, kEps);
    EXPECT_LT(err, kTol) << variant_name(v);
    worst_model = std::max(worst_model, err);
  }

  double elapsed = seconds_since(t0);
  bool pass = worst < kTol && worst_model < kTol && elapsed < 120.0;
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "primitives worst %.2e, full models worst %.2e, tol 1e-4, %.1f s < 120 s", worst,
                worst_model, elapsed);
  criterion(1, pass, buf);
}

TEST(Acceptance, Criterion2PreprocessingExactness) {
  bool pass = true;
  std::mt19937_64 rng(55);
  std::uniform_real_distribution<double> u(-4.0, 4.0);

  // DFT against the direct-sum oracle, and Parseval, over several sizes.
  double worst_dft = 0, worst_parseval = 0;
  for (int64_t f : {8, 10, 16}) {
    T pts({2, f});
    for (int64_t i = 0; i < pts.numel(); ++i) pts[i] = u(rng);
    T out = dft_features(pts);
    for (int64_t d = 0; d < 2; ++d) {
      std::vector<double> row(static_cast<size_t>(f));
      for (int64_t n = 0; n < f; ++n) row[static_cast<size_t>(n)] = pts.at({d, n});
      auto expected = reference::dft_mag_phase(row);
      for (int64_t k = 0; k < 2 * f; ++k) {
        worst_dft = std::max(worst_dft, std::abs(out.at({d, k}) - expected[static_cast<size_t>(k)]));
      }
      double te = 0, fe = 0;
      for (int64_t n = 0; n < f; ++n) te += row[static_cast<size_t>(n)] * row[static_cast<size_t>(n)];
      for (int64_t k = 0; k < f; ++k) fe += out.at({d, 2 * k}) * out.at({d, 2 * k});
      fe /= static_cast<double>(f);
      worst_parseval = std::max(worst_parseval, std::abs(fe - te) / std::abs(te));
    }
  }
  pass = pass && worst_dft < 1e-9 && worst_parseval < 1e-9;

  // Window geometry at the published parameters: 5 s, tau 0.25 s, f 10, d 3.
  PreprocessConfig pp;  // defaults are exactly those values
  auto w = std::make_shared<RawWindow>();
  w->user_id = "u";
  w->label = 0;
  w->start_time = 0;
  w->length = 5.0;
  {
    SensorRecording rec;
    rec.sensor_id = "acc";
    rec.kind = SensorKind::accelerometer;
    rec.dims = 3;
    for (int64_t i = 0; i < 250; ++i) {
      double t = static_cast<double>(i) / 50.0;
      rec.timestamps.push_back(t);
      for (int64_t d = 0; d < 3; ++d) rec.values.push_back(std::sin(2 * M_PI * 4 * t + d));
    }
    w->sensors.push_back(std::move(rec));
  }
  PreprocessedSample s = build_sample(w, pp);
  bool shape_ok = s.tensors.size() == 1 && s.tensors[0].shape() == std::vector<int64_t>{3, 20, 20};
  T m = s.input_matrix(0);
  bool row_ok = m.shape() == std::vector<int64_t>{20, 60};
  pass = pass && shape_ok && row_ok;

  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "dft vs oracle %.2e < 1e-9, parseval %.2e < 1e-9, tensor 3x20x20 %s, row 60 %s",
                worst_dft, worst_parseval, shape_ok ? "yes" : "NO", row_ok ? "yes" : "NO");
  criterion(2, pass, buf);
}

TEST(Acceptance, Criterion3ArchitectureShapeLaw) {
  bool pass = true;
  ModelConfig c;
  c.sensors = {{"acc", 3}, {"gyro", 3}};
  c.timesteps = 4;  // small T keeps the forward cheap; widths depend only on f
  c.freq_bins = 10;
  c.num_classes = 6;
  c.conv_filters = 64;
  c.heads = 8;
  c.d_k = 64;
  c.dropout_conv = 0.0;
  c.dropout_rnn = 0.0;
  c.validate();
  bool widths_ok = c.feature_width(0) == 60 && c.conv1_width() == 8 && c.conv2_width() == 6 &&
                   c.conv3_width() == 4 && c.d_model() == 512;
  pass = pass && widths_ok;

  Model<double> m(c, 3);
  std::mt19937_64 rng(4);
  Context<double> ctx;
  std::vector<T> probe;
  ctx.attn_probe = &probe;
  BoundParams<double> bp(ctx.tape, m.params);
  Var x = constant(ctx.tape, random_tensor({1, 4, 60}, rng));
  Var conv_out = m.individual_conv(ctx, bp, x, 0);
  bool conv_ok = ctx.tape.val(conv_out).shape() == std::vector<int64_t>{1, 4, 4, 64};
  pass = pass && conv_ok;

  T block_in = random_tensor({1, 4, 512}, rng);
  Var block_out = m.trasend_block(ctx, bp, constant(ctx.tape, block_in));
  bool block_ok = ctx.tape.val(block_out).same_shape(block_in);
  pass = pass && block_ok;

  double worst_row = 0;
  for (const T& wts : probe) {
    auto lines = detail::axis_lines(wts.shape(), -1);
    for (int64_t o = 0; o < lines.outer; ++o) {
      double sum = 0;
      for (int64_t l = 0; l < lines.len; ++l) sum += wts[o * lines.len + l];
      worst_row = std::max(worst_row, std::abs(sum - 1.0));
    }
  }
  pass = pass && !probe.empty() && worst_row < 1e-6;

  // Permutation equivariance of PE-zeroed self-attention. At T = 2 every
  // reduction over timesteps is a two-term sum, so the comparison is exact
  // down to the bit; a longer permutation is held to 1e-12.
  ModelConfig c2 = c;
  c2.timesteps = 2;
  Model<double> m2(c2, 5);
  T xin = random_tensor({1, 2, 512}, rng);
  T xsw({1, 2, 512});
  for (int64_t d = 0; d < 512; ++d) {
    xsw.at({0, 0, d}) = xin.at({0, 1, d});
    xsw.at({0, 1, d}) = xin.at({0, 0, d});
  }
  auto run_mhsa = [](Model<double>& model, const T& in) {
    Context<double> local;
    BoundParams<double> b(local.tape, model.params);
    return local.tape.val(model.multi_head_self_attention(local, b, constant(local.tape, in)));
  };
  T y = run_mhsa(m2, xin);
  T ys = run_mhsa(m2, xsw);
  bool exact = true;
  for (int64_t d = 0; d < 512; ++d) {
    exact = exact && std::memcmp(&y.at({0, 0, d}), &ys.at({0, 1, d}), sizeof(double)) == 0 &&
            std::memcmp(&y.at({0, 1, d}), &ys.at({0, 0, d}), sizeof(double)) == 0;
  }
  pass = pass && exact;

  ModelConfig c8 = c;
  c8.timesteps = 8;
  Model<double> m8(c8, 6);
  T x8 = random_tensor({1, 8, 512}, rng);
  std::vector<int64_t> perm{5, 2, 7, 0, 3, 6, 1, 4};
  T x8p({1, 8, 512});
  for (int64_t t = 0; t < 8; ++t) {
    for (int64_t d = 0; d < 512; ++d) x8p.at({0, t, d}) = x8.at({0, perm[static_cast<size_t>(t)], d});
  }
  T y8 = run_mhsa(m8, x8);
  T y8p = run_mhsa(m8, x8p);
  double worst_perm = 0;
  for (int64_t t = 0; t < 8; ++t) {
    for (int64_t d = 0; d < 512; ++d) {
      worst_perm = std::max(worst_perm,
                            std::abs(y8p.at({0, t, d}) - y8.at({0, perm[static_cast<size_t>(t)], d})));
    }
  }
  pass = pass && worst_perm < 1e-12;

  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "widths 60->8->6->4 %s, d_model 512 %s, block shape kept %s, attn rows %.1e < 1e-6, "
                "swap exact %s, perm(T=8) %.1e < 1e-12",
                widths_ok ? "yes" : "NO", c.d_model() == 512 ? "yes" : "NO", block_ok ? "yes" : "NO",
                worst_row, exact ? "yes" : "NO", worst_perm);
  criterion(3, pass, buf);
}

TEST(Acceptance, Criterion4SyntheticEndToEndLearning) {
  auto t0 = std::chrono::steady_clock::now();
  SyntheticSpec spec = desk_spec(4, 4, {2.0, 4.0, 6.0, 8.0}, 40, 0.3, 0.0, 42);
  PreprocessConfig pp = desk_pp();
  Dataset data = generate_synthetic_dataset(spec);
  auto windows = extract_windows(data, pp);

  TrainConfig tc;
  tc.epochs = 8;  // within the 10-epoch budget
  tc.learning_rate = 1e-3;
  tc.batch_size = 32;
  tc.seed = 1;
  tc.augment_copies = 2;

  auto run = [&](Variant v) {
    ModelConfig mc = desk_model(v, 4);
    auto factory = [&](uint64_t s) { return std::make_unique<ModelClassifier<double>>(mc, tc, s); };
    return leave_one_user_out<double>(windows, pp, 4, factory, tc).aggregate_f1;
  };
  double f1_trasend = run(Variant::trasend);
  double f1_deepsense = run(Variant::deepsense);
  double elapsed = seconds_since(t0);

  bool pass = f1_trasend >= 0.90 && f1_deepsense >= 0.85 && elapsed < 900.0;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "trasend F1 %.4f >= 0.90, deepsense F1 %.4f >= 0.85, %.0f s < 900 s",
                f1_trasend, f1_deepsense, elapsed);
  criterion(4, pass, buf);
}

TEST(Acceptance, Criterion5PersonalizationEffect) {
  // Strong per-user offset: class spacing 1 Hz, per-user shift 1 Hz, so each
  // user's spectrum lands on other users' class slots.
  SyntheticSpec spec = desk_spec(4, 4, {2.0, 3.0, 4.0, 5.0}, 100, 0.2, 1.0, 7);
  PreprocessConfig pp = desk_pp();
  Dataset data = generate_synthetic_dataset(spec);
  auto windows = extract_windows(data, pp);

  ModelConfig mc = desk_model(Variant::trasend, 4);
  TrainConfig tc;
  tc.epochs = 8;
  tc.learning_rate = 1e-3;
  tc.batch_size = 32;
  tc.seed = 2;
  tc.augment_copies = 0;

  SampleCorpus corpus = build_corpus(windows, pp, tc);
  std::map<std::string, ParamTable<double>> fold_params;
  auto factory = [&](uint64_t s) { return std::make_unique<ModelClassifier<double>>(mc, tc, s); };
  leave_one_user_out<double>(windows, pp, 4, factory, tc,
                             [&](const std::string& user, Classifier<double>& c) {
                               fold_params.emplace(
                                   user, dynamic_cast<ModelClassifier<double>&>(c).model().params);
                             });

  double mean_delta = 0;
  int nonneg = 0;
  for (const auto& user : corpus.users) {
    std::vector<const PreprocessedSample*> mine;
    for (const auto& s : corpus.real) {
      if (s.user_id == user) mine.push_back(&s);
    }
    PersonalizeResult pr = personalize_run(mc, fold_params.at(user), mine);
    double delta = pr.f1_after - pr.f1_before;
    mean_delta += delta / static_cast<double>(corpus.users.size());
    if (delta >= 0) ++nonneg;
    std::printf("  personalization %s: before %.4f after %.4f delta %+.4f\n", user.c_str(),
                pr.f1_before, pr.f1_after, delta);
  }

  // Bitwise freeze of the feature extractor through a full adaptation stream.
  bool frozen = true;
  {
    const std::string& user = corpus.users[0];
    std::vector<const PreprocessedSample*> mine;
    for (const auto& s : corpus.real) {
      if (s.user_id == user) mine.push_back(&s);
    }
    UserSplit split = split_user_data(mine);
    PersonalizationSession<double> session(mc, fold_params.at(user));
    for (const auto* s : split.adaptation) session.adapt_step(*s, s->label);
    const ParamTable<double>& before = fold_params.at(user);
    const ParamTable<double>& after = session.model().params;
    for (size_t i = 0; i < before.items().size(); ++i) {
      if (before.items()[i].group == ParamGroup::output_layer) continue;
      const T& a = before.items()[i].value;
      const T& b = after.items()[i].value;
      if (std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<size_t>(a.numel())) != 0) {
        frozen = false;
      }
    }
  }

  bool pass = mean_delta >= 0.05 && nonneg >= 3 && frozen;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "mean delta %+.4f >= 0.05, nonneg %d/4 >= 3, freeze bitwise %s",
                mean_delta, nonneg, frozen ? "yes" : "NO");
  criterion(5, pass, buf);
}

TEST(Acceptance, Criterion6PermutedLabelValidation) {
  SyntheticSpec spec = desk_spec(4, 4, {2.0, 4.0, 6.0, 8.0}, 100, 0.2, 0.0, 21);
  PreprocessConfig pp = desk_pp();
  Dataset data = generate_synthetic_dataset(spec);
  auto windows = extract_windows(data, pp);

  ModelConfig mc = desk_model(Variant::trasend, 4);
  TrainConfig tc;
  tc.epochs = 4;
  tc.learning_rate = 1e-3;
  tc.batch_size = 32;
  tc.seed = 5;
  tc.augment_copies = 0;

  PermutedLabelResult r = permuted_label_validation<double>(windows, pp, mc, tc);
  double chance = 0.25;
  double delta = r.f1_after_personalization - r.f1_random_train;
  bool pass = std::abs(r.f1_random_train - chance) <= 0.10 && delta >= 0.15;
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "permuted-label F1 %.4f within 0.10 of 0.25, personalization gain %+.4f >= 0.15",
                r.f1_random_train, delta);
  criterion(6, pass, buf);
}

TEST(Acceptance, Criterion7AugmentationAblation) {
  PreprocessConfig pp = desk_pp();
  auto run_seed = [&](uint64_t seed, int64_t copies) {
    SyntheticSpec spec = desk_spec(3, 3, {2.0, 4.0, 6.0}, 10, 0.05, 0.0, 31);
    Dataset data = generate_synthetic_dataset(spec);
    auto windows = extract_windows(data, pp);
    ModelConfig mc = desk_model(Variant::trasend, 3);
    TrainConfig tc;
    tc.epochs = 6;
    tc.learning_rate = 1e-3;
    tc.batch_size = 32;
    tc.seed = seed;
    tc.augment_copies = copies;
    tc.test_noise_std = 0.8;  // test windows are noisier than training data
    auto factory = [&](uint64_t s) { return std::make_unique<ModelClassifier<double>>(mc, tc, s); };
    return leave_one_user_out<double>(windows, pp, 3, factory, tc).aggregate_f1;
  };

  double mean_delta = 0;
  for (uint64_t seed : {11ull, 12ull, 13ull}) {
    double with_aug = run_seed(seed, 9);
    double without = run_seed(seed, 0);
    std::printf("  augmentation seed %llu: with %.4f, without %.4f\n",
                static_cast<unsigned long long>(seed), with_aug, without);
    mean_delta += (with_aug - without) / 3.0;
  }
  bool pass = mean_delta >= 0.02;
  char buf[120];
  std::snprintf(buf, sizeof(buf), "mean F1 gain from 9 augmented copies %+.4f >= 0.02 over 3 seeds",
                mean_delta);
  criterion(7, pass, buf);
}

TEST(Acceptance, Criterion8DeterminismAndPersistence) {
  SyntheticSpec spec = desk_spec(3, 3, {2.0, 4.0, 6.0}, 6, 0.1, 0.0, 61);
  PreprocessConfig pp = desk_pp();
  Dataset data = generate_synthetic_dataset(spec);
  auto windows = extract_windows(data, pp);
  ModelConfig mc = desk_model(Variant::trasend, 3);
  mc.dropout_conv = 0.1;
  mc.dropout_rnn = 0.3;
  TrainConfig tc;
  tc.epochs = 2;
  tc.learning_rate = 1e-3;
  tc.batch_size = 16;
  tc.seed = 9;
  tc.augment_copies = 1;

  auto run = [&]() {
    auto factory = [&](uint64_t s) { return std::make_unique<ModelClassifier<double>>(mc, tc, s); };
    return eval_report_to_json(leave_one_user_out<double>(windows, pp, 3, factory, tc)).dump();
  };
  std::string a = run();
  std::string b = run();
  bool reports_identical = a == b;

  // Checkpoint round trip preserves every forward output bitwise.
  Model<double> model(mc, 17);
  fs::path ckpt = fs::temp_directory_path() / "trasend_acceptance.ckpt";
  save_checkpoint(ckpt, model.params, mc, 17);
  auto [params, mc2] = load_checkpoint<double>(ckpt);
  Model<double> reloaded(mc2, std::move(params));
  std::vector<PreprocessedSample> samples = preprocess_windows(windows, pp);
  bool forward_bitwise = true;
  for (size_t i = 0; i < std::min<size_t>(samples.size(), 8); ++i) {
    std::vector<const PreprocessedSample*> one{&samples[i]};
    T pa = model.predict_proba(one);
    T pb = reloaded.predict_proba(one);
    if (std::memcmp(pa.data(), pb.data(), sizeof(double) * static_cast<size_t>(pa.numel())) != 0) {
      forward_bitwise = false;
    }
  }
  fs::remove(ckpt);

  bool pass = reports_identical && forward_bitwise;
  char buf[120];
  std::snprintf(buf, sizeof(buf), "reports byte-identical %s, checkpoint forward bitwise %s",
                reports_identical ? "yes" : "NO", forward_bitwise ? "yes" : "NO");
  criterion(8, pass, buf);
}

TEST(Acceptance, Criterion9MetricCorrectness) {
  struct Fixture {
    std::vector<int> truth, pred;
    int classes;
    double expected;
  };
  // Expected values are hand-derived per-class F1 scores averaged in class
  // order.
  std::vector<Fixture> fixtures = {
      // truth [A,A,B,B], pred [A,A,A,A]: F1 = (2/3 + 0) / 2.
      {{0, 0, 1, 1}, {0, 0, 0, 0}, 2, (2.0 / 3.0 + 0.0) / 2.0},
      // Perfect three-class prediction.
      {{0, 1, 2, 1, 0}, {0, 1, 2, 1, 0}, 3, 1.0},
      // Every binary prediction wrong.
      {{0, 1}, {1, 0}, 2, 0.0},
      // One false positive for class 0: F1(0) = 2/3 and F1(1) = 2/3.
      {{0, 1, 1}, {0, 1, 0}, 2, (2.0 / 3.0 + 2.0 / 3.0) / 2.0},
      // Class 2 absent from both: contributes 0 of 3.
      {{0, 1, 0, 1}, {0, 1, 1, 0}, 3, (0.5 + 0.5 + 0.0) / 3.0},
      // Single-class data, perfect: the absent class still divides.
      {{0, 0, 0}, {0, 0, 0}, 2, (1.0 + 0.0) / 2.0},
      // One rotation error per class: F1 = 1/2 per class.
      {{0, 1, 2, 0, 1, 2}, {0, 1, 2, 1, 2, 0}, 3, (0.5 + 0.5 + 0.5) / 3.0},
      // truth all 1, one predicted 0: F1(0) = 0, F1(1) = 6/7.
      {{1, 1, 1, 1}, {1, 1, 1, 0}, 2, (0.0 + 6.0 / 7.0) / 2.0},
      // Two perfect classes of four possible.
      {{0, 1}, {0, 1}, 4, (1.0 + 1.0 + 0.0 + 0.0) / 4.0},
      // Mixed: F1(0) = 2/3, F1(1) = 1/2, F1(2) = 0.
      {{0, 0, 1, 2}, {0, 1, 1, 1}, 3, (2.0 / 3.0 + 0.5 + 0.0) / 3.0},
  };
  bool pass = true;
  for (size_t i = 0; i < fixtures.size(); ++i) {
    const Fixture& f = fixtures[i];
    double got = macro_f1(f.pred, f.truth, f.classes);
    if (got != f.expected) {
      pass = false;
      std::printf("  fixture %zu: got %.17g expected %.17g\n", i, got, f.expected);
    }
  }
  criterion(9, pass, pass ? "10 hand-computed fixtures match exactly" : "fixture mismatch");
}
