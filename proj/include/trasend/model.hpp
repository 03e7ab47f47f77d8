#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "trasend/adam.hpp"
#include "trasend/ops.hpp"
#include "trasend/params.hpp"
#include "trasend/preprocess.hpp"

namespace trasend {

enum class Variant { deepsense, trasend, trasend_bd, trasend_ca };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::deepsense: return "deepsense";
    case Variant::trasend: return "trasend";
    case Variant::trasend_bd: return "trasend-bd";
    default: return "trasend-ca";
  }
}

inline Variant variant_from_name(const std::string& s) {
  if (s == "deepsense") return Variant::deepsense;
  if (s == "trasend") return Variant::trasend;
  if (s == "trasend-bd" || s == "trasend_bd") return Variant::trasend_bd;
  if (s == "trasend-ca" || s == "trasend_ca") return Variant::trasend_ca;
  throw ConfigError("unknown variant: " + s);
}

enum class TrasendReduce { mean, flatten };

struct SensorShape {
  std::string id;
  int64_t dims = 3;
};

struct ModelConfig {
  std::vector<SensorShape> sensors;
  int64_t timesteps = 20;  // T
  int64_t freq_bins = 10;  // f
  int64_t num_classes = 6;
  Variant variant = Variant::trasend;
  int64_t conv_filters = 64;
  int64_t gru_units = 120;
  int64_t heads = 8;
  int64_t d_k = 64;
  double dropout_conv = 0.2;
  double dropout_rnn = 0.5;
  int64_t ffn_multiplier = 2;  // FFN hidden = multiplier * d_model
  int64_t ca_score_dim = 0;    // 0 -> conv_filters
  TrasendReduce trasend_reduce = TrasendReduce::mean;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
  double ln_eps = 1e-5;

  int64_t num_sensors() const { return static_cast<int64_t>(sensors.size()); }

  int64_t feature_width(size_t sensor) const { return 2 * freq_bins * sensors[sensor].dims; }

  // Widths after the three valid-padding individual conv layers. The first
  // kernel spans 3 frequency bins (6d values) with a stride of one bin (2d),
  // so the widths depend only on f: f-2, f-4, f-6.
  int64_t conv1_width() const { return freq_bins - 2; }
  int64_t conv2_width() const { return freq_bins - 4; }
  int64_t conv3_width() const { return freq_bins - 6; }

  int64_t merge_locations() const { return num_sensors() * conv3_width(); }
  int64_t d_model() const { return merge_locations() * conv_filters; }
  int64_t score_dim() const { return ca_score_dim > 0 ? ca_score_dim : conv_filters; }

  int64_t temporal_out_dim() const {
    switch (variant) {
      case Variant::trasend:
        return trasend_reduce == TrasendReduce::mean ? d_model() : timesteps * d_model();
      case Variant::deepsense: return gru_units;
      case Variant::trasend_bd: return 2 * gru_units;
      default: return gru_units;  // trasend_ca
    }
  }

  void validate() const {
    if (sensors.empty()) throw ConfigError("model: at least one sensor required");
    for (const auto& s : sensors) {
      if (s.dims < 1) throw ConfigError("model: sensor " + s.id + " dims must be >= 1");
    }
    if (num_classes < 2) throw ConfigError("model: num_classes must be >= 2");
    if (timesteps < 1) throw ConfigError("model: timesteps must be >= 1");
    if (freq_bins < 7) {
      throw ConfigError("model: freq_bins must be >= 7 so the three valid-padding conv layers fit "
                        "(widths f-2, f-4, f-6)");
    }
    if (conv_filters < 1 || gru_units < 1 || heads < 1 || d_k < 1 || ffn_multiplier < 1) {
      throw ConfigError("model: filter/unit/head counts must be >= 1");
    }
    if (dropout_conv < 0 || dropout_conv >= 1 || dropout_rnn < 0 || dropout_rnn >= 1) {
      throw ConfigError("model: dropout probabilities must be in [0, 1)");
    }
    if (variant == Variant::trasend && d_model() % 2 != 0) {
      throw ConfigError("model: d_model must be even for the positional encoding");
    }
  }
};

// Sinusoidal positional encoding: PE(pos, 2i) = sin(pos / 10000^(2i/d)),
// PE(pos, 2i+1) = cos(pos / 10000^(2i/d)).
template <typename S>
Tensor<S> positional_encoding(int64_t T, int64_t d_model) {
  if (d_model % 2 != 0) throw ConfigError("positional_encoding: d_model must be even");
  Tensor<S> pe({T, d_model});
  for (int64_t pos = 0; pos < T; ++pos) {
    for (int64_t i = 0; i < d_model / 2; ++i) {
      double angle = static_cast<double>(pos) /
                     std::pow(10000.0, 2.0 * static_cast<double>(i) / static_cast<double>(d_model));
      pe.at({pos, 2 * i}) = static_cast<S>(std::sin(angle));
      pe.at({pos, 2 * i + 1}) = static_cast<S>(std::cos(angle));
    }
  }
  return pe;
}

/// One architecture instance: configuration plus its named parameters.
/// Forward passes are recorded on a caller-provided Context so training,
/// evaluation, and gradient checking share the same code path.
template <typename S>
class Model {
 public:
  ModelConfig cfg;
  ParamTable<S> params;

  Model(ModelConfig config, uint64_t seed) : cfg(std::move(config)) {
    cfg.validate();
    auto rng = make_rng(seed, 0x1217u);
    build_params(rng);
  }

  Model(ModelConfig config, ParamTable<S> table) : cfg(std::move(config)), params(std::move(table)) {
    cfg.validate();
  }

  // --- forward pieces -------------------------------------------------------

  // x: [batch, T, 2f*d] for one sensor -> [batch, T, conv3_width, filters]
  Var individual_conv(Context<S>& ctx, const BoundParams<S>& bp, Var x, size_t sensor) const {
    const std::string p = "indiv." + std::to_string(sensor) + ".";
    const int64_t d = cfg.sensors[sensor].dims;
    const Tensor<S>& xv = ctx.tape.val(x);
    const int64_t batch = xv.dim(0);
    if (xv.dim(1) != cfg.timesteps || xv.dim(2) != cfg.feature_width(sensor)) {
      throw ShapeError("individual_conv: input " + xv.shape_str() + " vs expected [batch, " +
                       std::to_string(cfg.timesteps) + ", " + std::to_string(cfg.feature_width(sensor)) +
                       "]");
    }
    Var h = reshape(ctx.tape, x, {batch, cfg.timesteps, cfg.feature_width(sensor), 1});
    h = conv2d(ctx.tape, h, bp[p + "conv1.w"], 1, 2 * d, Padding::valid);
    h = bn_layer(ctx, bp, p + "conv1.bn", h);
    h = relu(ctx.tape, h);
    h = dropout(ctx.tape, h, S(cfg.dropout_conv), ctx.mode, ctx.rng);
    h = conv2d(ctx.tape, h, bp[p + "conv2.w"], 1, 1, Padding::valid);
    h = bn_layer(ctx, bp, p + "conv2.bn", h);
    h = relu(ctx.tape, h);
    h = dropout(ctx.tape, h, S(cfg.dropout_conv), ctx.mode, ctx.rng);
    h = conv2d(ctx.tape, h, bp[p + "conv3.w"], 1, 1, Padding::valid);
    h = bn_layer(ctx, bp, p + "conv3.bn", h);
    h = relu(ctx.tape, h);
    return h;
  }

  // per-sensor [batch, T, W3, F] -> merged conv maps [batch*T, S, W3, F].
  // The (sensor, feature) plane keeps its size through the three same-padding
  // layers.
  Var merge_conv(Context<S>& ctx, const BoundParams<S>& bp, const std::vector<Var>& per_sensor) const {
    if (per_sensor.size() != cfg.sensors.size()) {
      throw ShapeError("merge_conv: expected " + std::to_string(cfg.sensors.size()) + " sensor maps");
    }
    const Tensor<S>& first = ctx.tape.val(per_sensor[0]);
    const int64_t batch = first.dim(0);
    const int64_t W3 = cfg.conv3_width();
    std::vector<Var> stacked;
    stacked.reserve(per_sensor.size());
    for (Var v : per_sensor) {
      const Tensor<S>& tv = ctx.tape.val(v);
      if (tv.dim(0) != batch || tv.dim(1) != cfg.timesteps || tv.dim(2) != W3 ||
          tv.dim(3) != cfg.conv_filters) {
        throw ShapeError("merge_conv: sensor map " + tv.shape_str() + " misaligned");
      }
      stacked.push_back(reshape(ctx.tape, v, {batch * cfg.timesteps, 1, W3, cfg.conv_filters}));
    }
    Var h = concat(ctx.tape, stacked, 1);  // [batch*T, S, W3, F]
    h = conv2d(ctx.tape, h, bp["merge.conv1.w"], 1, 1, Padding::same);
    h = bn_layer(ctx, bp, "merge.conv1.bn", h);
    h = relu(ctx.tape, h);
    h = dropout(ctx.tape, h, S(cfg.dropout_conv), ctx.mode, ctx.rng);
    h = conv2d(ctx.tape, h, bp["merge.conv2.w"], 1, 1, Padding::same);
    h = bn_layer(ctx, bp, "merge.conv2.bn", h);
    h = relu(ctx.tape, h);
    h = dropout(ctx.tape, h, S(cfg.dropout_conv), ctx.mode, ctx.rng);
    h = conv2d(ctx.tape, h, bp["merge.conv3.w"], 1, 1, Padding::same);
    h = bn_layer(ctx, bp, "merge.conv3.bn", h);
    h = relu(ctx.tape, h);
    return h;
  }

  // x: [batch, T, d_model] -> [batch, T, d_model]
  Var multi_head_self_attention(Context<S>& ctx, const BoundParams<S>& bp, Var x) const {
    const Tensor<S>& xv = ctx.tape.val(x);
    const int64_t batch = xv.dim(0);
    const int64_t T = xv.dim(1);
    const int64_t D = xv.dim(2);
    Var x2 = reshape(ctx.tape, x, {batch * T, D});
    std::vector<Var> head_outputs;
    head_outputs.reserve(static_cast<size_t>(cfg.heads));
    const S inv_sqrt_dk = S(1) / std::sqrt(S(cfg.d_k));
    for (int64_t hh = 0; hh < cfg.heads; ++hh) {
      const std::string p = "temporal.attn.h" + std::to_string(hh) + ".";
      Var q = reshape(ctx.tape, dense(ctx.tape, x2, bp[p + "wq"], bp[p + "bq"]), {batch, T, cfg.d_k});
      Var k = reshape(ctx.tape, dense(ctx.tape, x2, bp[p + "wk"], bp[p + "bk"]), {batch, T, cfg.d_k});
      Var v = reshape(ctx.tape, dense(ctx.tape, x2, bp[p + "wv"], bp[p + "bv"]), {batch, T, cfg.d_k});
      Var scores = scale(ctx.tape, bmm(ctx.tape, q, k, false, true), inv_sqrt_dk);
      Var weights = softmax(ctx.tape, scores, -1);
      if (ctx.attn_probe) ctx.attn_probe->push_back(ctx.tape.val(weights));
      head_outputs.push_back(bmm(ctx.tape, weights, v));
    }
    Var cat = concat(ctx.tape, head_outputs, -1);  // [batch, T, heads*d_k]
    Var cat2 = reshape(ctx.tape, cat, {batch * T, cfg.heads * cfg.d_k});
    Var out = dense(ctx.tape, cat2, bp["temporal.attn.wo"], bp["temporal.attn.bo"]);
    return reshape(ctx.tape, out, {batch, T, D});
  }

  // Attention temporal block: PE -> self-attention -> residual + layer norm
  // -> position-wise feed-forward -> residual + layer norm. Output shape
  // equals input shape.
  Var trasend_block(Context<S>& ctx, const BoundParams<S>& bp, Var x, bool with_positional = true) const {
    Var h0 = x;
    if (with_positional) {
      const Tensor<S>& xv = ctx.tape.val(x);
      Tensor<S> pe = positional_encoding<S>(xv.dim(1), xv.dim(2)).reshaped({1, xv.dim(1), xv.dim(2)});
      h0 = add_const(ctx.tape, x, pe);
    }
    Var attn = multi_head_self_attention(ctx, bp, h0);
    Var h1 = layer_norm(ctx.tape, add(ctx.tape, h0, attn), bp["temporal.ln1.gain"],
                        bp["temporal.ln1.bias"], -1, S(cfg.ln_eps));
    Var ffn = position_wise_ffn(ctx, bp, h1);
    return layer_norm(ctx.tape, add(ctx.tape, h1, ffn), bp["temporal.ln2.gain"],
                      bp["temporal.ln2.bias"], -1, S(cfg.ln_eps));
  }

  // x: [batch, T, d_model] -> [batch, gru_units]; two stacked GRU layers with
  // batch norm + dropout on the inter-layer activations, mean over timesteps.
  Var deepsense_gru_stack(Context<S>& ctx, const BoundParams<S>& bp, Var x) const {
    const Tensor<S>& xv = ctx.tape.val(x);
    const int64_t batch = xv.dim(0);
    const int64_t T = xv.dim(1);
    Var o1 = gru_unroll(ctx, bp, "gru1.", x, false);
    Var inter = reshape(ctx.tape, o1, {batch * T, cfg.gru_units});
    inter = bn_layer(ctx, bp, "gru.bn", inter);
    inter = dropout(ctx.tape, inter, S(cfg.dropout_rnn), ctx.mode, ctx.rng);
    Var o2 = gru_unroll(ctx, bp, "gru2.", reshape(ctx.tape, inter, {batch, T, cfg.gru_units}), false);
    return mean_axis(ctx.tape, o2, 1);
  }

  // x: [batch, T, d_model] -> [batch, 2*gru_units]; forward and backward GRU
  // states concatenated per timestep, then averaged over timesteps.
  Var bd_temporal(Context<S>& ctx, const BoundParams<S>& bp, Var x) const {
    Var fo = gru_unroll(ctx, bp, "bd.fwd.", x, false);
    Var bo = gru_unroll(ctx, bp, "bd.bwd.", x, true);
    Var cat = concat(ctx.tape, std::vector<Var>{fo, bo}, -1);  // [batch, T, 2U]
    return mean_axis(ctx.tape, cat, 1);
  }

  // maps: [batch, T, L, F] -> [batch, gru_units]. Per timestep the location
  // features are scored against the GRU state (two linear layers, tanh,
  // softmax over locations); the resulting context vector is concatenated to
  // the flattened features as the GRU input.
  Var ca_temporal(Context<S>& ctx, const BoundParams<S>& bp, Var maps) const {
    const Tensor<S>& mv = ctx.tape.val(maps);
    const int64_t batch = mv.dim(0);
    const int64_t T = mv.dim(1);
    const int64_t L = mv.dim(2);
    const int64_t F = mv.dim(3);
    GruCellVars<S> gru = gru_vars(bp, "ca.gru.");
    Var t0 = reshape(ctx.tape, slice(ctx.tape, maps, 1, 0, 1), {batch, L, F});
    Var h = dense(ctx.tape, mean_axis(ctx.tape, t0, 1), bp["ca.init.w"], bp["ca.init.b"]);
    std::vector<Var> outs;
    outs.reserve(static_cast<size_t>(T));
    for (int64_t t = 0; t < T; ++t) {
      Var feats = reshape(ctx.tape, slice(ctx.tape, maps, 1, t, 1), {batch, L, F});
      Var fa = reshape(ctx.tape,
                       dense(ctx.tape, reshape(ctx.tape, feats, {batch * L, F}), bp["ca.attn.wa"],
                             bp["ca.attn.ba"]),
                       {batch, L, cfg.score_dim()});
      Var sb = reshape(ctx.tape, dense(ctx.tape, h, bp["ca.attn.wb"], bp["ca.attn.bb"]),
                       {batch, 1, cfg.score_dim()});
      Var e = activation(ctx.tape, badd(ctx.tape, fa, sb), Act::tanh);
      Var scores = reshape(ctx.tape,
                           matmul(ctx.tape, reshape(ctx.tape, e, {batch * L, cfg.score_dim()}),
                                  bp["ca.attn.v"]),
                           {batch, L});
      Var weights = softmax(ctx.tape, scores, -1);
      if (ctx.attn_probe) ctx.attn_probe->push_back(ctx.tape.val(weights));
      Var context = reshape(ctx.tape, bmm(ctx.tape, reshape(ctx.tape, weights, {batch, 1, L}), feats),
                            {batch, F});
      Var gin = concat(ctx.tape, std::vector<Var>{reshape(ctx.tape, feats, {batch, L * F}), context}, -1);
      h = gru_cell(ctx.tape, gin, h, gru);
      outs.push_back(reshape(ctx.tape, h, {batch, 1, cfg.gru_units}));
    }
    return mean_axis(ctx.tape, concat(ctx.tape, outs, 1), 1);
  }

  // Position-wise feed-forward: the same two dense layers applied to every
  // timestep row independently.
  Var position_wise_ffn(Context<S>& ctx, const BoundParams<S>& bp, Var x) const {
    const Tensor<S>& xv = ctx.tape.val(x);
    const int64_t batch = xv.dim(0);
    const int64_t T = xv.dim(1);
    const int64_t D = xv.dim(2);
    Var f2 = reshape(ctx.tape, x, {batch * T, D});
    Var h = dense(ctx.tape, relu(ctx.tape, dense(ctx.tape, f2, bp["temporal.ffn.w1"], bp["temporal.ffn.b1"])),
                  bp["temporal.ffn.w2"], bp["temporal.ffn.b2"]);
    return reshape(ctx.tape, h, {batch, T, D});
  }

  // Full pipeline to class logits over already-taped sensor inputs, one
  // [batch, T, 2f*d] leaf per sensor in config order.
  Var logits_from_vars(Context<S>& ctx, const BoundParams<S>& bp,
                       const std::vector<Var>& sensor_inputs) const {
    if (sensor_inputs.size() != cfg.sensors.size()) {
      throw ShapeError("logits: got " + std::to_string(sensor_inputs.size()) +
                       " sensor inputs, config has " + std::to_string(cfg.sensors.size()));
    }
    const int64_t batch = ctx.tape.val(sensor_inputs[0]).dim(0);
    std::vector<Var> per_sensor;
    per_sensor.reserve(sensor_inputs.size());
    for (size_t i = 0; i < sensor_inputs.size(); ++i) {
      per_sensor.push_back(individual_conv(ctx, bp, sensor_inputs[i], i));
    }
    Var maps = merge_conv(ctx, bp, per_sensor);  // [batch*T, S, W3, F]
    Var feat;
    switch (cfg.variant) {
      case Variant::trasend: {
        Var flat = reshape(ctx.tape, maps, {batch, cfg.timesteps, cfg.d_model()});
        Var block = trasend_block(ctx, bp, flat);
        feat = cfg.trasend_reduce == TrasendReduce::mean
                   ? mean_axis(ctx.tape, block, 1)
                   : reshape(ctx.tape, block, {batch, cfg.timesteps * cfg.d_model()});
        break;
      }
      case Variant::deepsense: {
        Var flat = reshape(ctx.tape, maps, {batch, cfg.timesteps, cfg.d_model()});
        feat = deepsense_gru_stack(ctx, bp, flat);
        break;
      }
      case Variant::trasend_bd: {
        Var flat = reshape(ctx.tape, maps, {batch, cfg.timesteps, cfg.d_model()});
        feat = bd_temporal(ctx, bp, flat);
        break;
      }
      default: {
        Var m4 = reshape(ctx.tape, maps,
                         {batch, cfg.timesteps, cfg.merge_locations(), cfg.conv_filters});
        feat = ca_temporal(ctx, bp, m4);
        break;
      }
    }
    return dense(ctx.tape, feat, bp["output.w"], bp["output.b"]);
  }

  Var logits(Context<S>& ctx, const BoundParams<S>& bp, const std::vector<Tensor<S>>& inputs) const {
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const auto& x : inputs) vars.push_back(constant(ctx.tape, x));
    return logits_from_vars(ctx, bp, vars);
  }

  // Summed cross-entropy over the batch from the logits path.
  Var loss(Context<S>& ctx, const BoundParams<S>& bp, const std::vector<Tensor<S>>& inputs,
           const Tensor<S>& onehot) const {
    return softmax_cross_entropy(ctx.tape, logits(ctx, bp, inputs), onehot);
  }

  // --- sample plumbing ------------------------------------------------------

  std::vector<Tensor<S>> assemble_inputs(const std::vector<const PreprocessedSample*>& batch) const {
    if (batch.empty()) throw ContractError("assemble_inputs: empty batch");
    const int64_t n = static_cast<int64_t>(batch.size());
    std::vector<Tensor<S>> inputs;
    for (size_t sidx = 0; sidx < cfg.sensors.size(); ++sidx) {
      const int64_t W = cfg.feature_width(sidx);
      Tensor<S> x({n, cfg.timesteps, W});
      for (int64_t b = 0; b < n; ++b) {
        const PreprocessedSample& s = *batch[static_cast<size_t>(b)];
        if (s.num_sensors() != cfg.num_sensors()) {
          throw ShapeError("sample has " + std::to_string(s.num_sensors()) + " sensors, config has " +
                           std::to_string(cfg.num_sensors()));
        }
        Tensor<double> m = s.input_matrix(sidx);
        if (m.dim(0) != cfg.timesteps || m.dim(1) != W) {
          throw ShapeError("sample sensor " + std::to_string(sidx) + " matrix " + m.shape_str() +
                           " vs model [T=" + std::to_string(cfg.timesteps) + ", " + std::to_string(W) +
                           "]");
        }
        for (int64_t i = 0; i < m.numel(); ++i) {
          x[b * cfg.timesteps * W + i] = static_cast<S>(m[i]);
        }
      }
      inputs.push_back(std::move(x));
    }
    return inputs;
  }

  Tensor<S> one_hot(const std::vector<int>& labels) const {
    Tensor<S> y({static_cast<int64_t>(labels.size()), cfg.num_classes});
    for (size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] < 0 || labels[i] >= cfg.num_classes) {
        throw ContractError("label " + std::to_string(labels[i]) + " out of range [0, " +
                            std::to_string(cfg.num_classes) + ")");
      }
      y[static_cast<int64_t>(i) * cfg.num_classes + labels[i]] = S(1);
    }
    return y;
  }

  // Class probabilities in eval mode (deterministic).
  Tensor<S> predict_proba(const std::vector<const PreprocessedSample*>& batch) {
    Context<S> ctx;
    ctx.mode = RunMode::eval;
    BoundParams<S> bp(ctx.tape, params);
    Var out = softmax(ctx.tape, logits(ctx, bp, assemble_inputs(batch)), -1);
    return ctx.tape.val(out);
  }

  std::vector<int> predict(const std::vector<const PreprocessedSample*>& batch) {
    Tensor<S> p = predict_proba(batch);
    std::vector<int> labels(batch.size());
    for (int64_t i = 0; i < p.dim(0); ++i) {
      int best = 0;
      for (int c = 1; c < cfg.num_classes; ++c) {
        if (p[i * cfg.num_classes + c] > p[i * cfg.num_classes + best]) best = c;
      }
      labels[static_cast<size_t>(i)] = best;
    }
    return labels;
  }

  // Unrolls one GRU layer over the time axis; returns [batch, T, units].
  Var gru_unroll(Context<S>& ctx, const BoundParams<S>& bp, const std::string& prefix, Var x,
                 bool reversed) const {
    const Tensor<S>& xv = ctx.tape.val(x);
    const int64_t batch = xv.dim(0);
    const int64_t T = xv.dim(1);
    const int64_t D = xv.dim(2);
    GruCellVars<S> w = gru_vars(bp, prefix);
    Var h = constant(ctx.tape, Tensor<S>::zeros({batch, cfg.gru_units}));
    std::vector<Var> outs(static_cast<size_t>(T));
    for (int64_t step = 0; step < T; ++step) {
      int64_t t = reversed ? T - 1 - step : step;
      Var xt = reshape(ctx.tape, slice(ctx.tape, x, 1, t, 1), {batch, D});
      h = gru_cell(ctx.tape, xt, h, w);
      outs[static_cast<size_t>(t)] = reshape(ctx.tape, h, {batch, 1, cfg.gru_units});
    }
    return concat(ctx.tape, outs, 1);
  }

 private:
  Var bn_layer(Context<S>& ctx, const BoundParams<S>& bp, const std::string& prefix, Var x) const {
    ParamTable<S>& table = bp.table();
    BatchNormStats<S> stats{&table.at(prefix + ".rmean").value, &table.at(prefix + ".rvar").value};
    return batch_norm(ctx.tape, x, bp[prefix + ".scale"], bp[prefix + ".shift"], stats, ctx.mode,
                      S(cfg.bn_momentum), S(cfg.bn_eps));
  }

  GruCellVars<S> gru_vars(const BoundParams<S>& bp, const std::string& prefix) const {
    GruCellVars<S> w;
    w.wz = bp[prefix + "wz"]; w.uz = bp[prefix + "uz"]; w.bz = bp[prefix + "bz"];
    w.wr = bp[prefix + "wr"]; w.ur = bp[prefix + "ur"]; w.br = bp[prefix + "br"];
    w.wh = bp[prefix + "wh"]; w.uh = bp[prefix + "uh"]; w.bh = bp[prefix + "bh"];
    return w;
  }

  void add_bn(const std::string& prefix, int64_t channels) {
    params.add(prefix + ".scale", Tensor<S>::ones({channels}), ParamGroup::feature_extractor);
    params.add(prefix + ".shift", Tensor<S>::zeros({channels}), ParamGroup::feature_extractor);
    params.add(prefix + ".rmean", Tensor<S>::zeros({channels}), ParamGroup::feature_extractor, false);
    params.add(prefix + ".rvar", Tensor<S>::ones({channels}), ParamGroup::feature_extractor, false);
  }

  void add_dense(const std::string& prefix, int64_t in, int64_t out, std::mt19937_64& rng) {
    params.add(prefix + ".w", glorot_uniform<S>({in, out}, in, out, rng), ParamGroup::feature_extractor);
    params.add(prefix + ".b", Tensor<S>::zeros({out}), ParamGroup::feature_extractor);
  }

  void add_gru(const std::string& prefix, int64_t dx, std::mt19937_64& rng) {
    const int64_t u = cfg.gru_units;
    const char* gates[3] = {"z", "r", "h"};
    for (const char* g : gates) {
      params.add(prefix + "w" + g, glorot_uniform<S>({dx, u}, dx, u, rng), ParamGroup::feature_extractor);
      params.add(prefix + "u" + g, glorot_uniform<S>({u, u}, u, u, rng), ParamGroup::feature_extractor);
      params.add(prefix + "b" + g, Tensor<S>::zeros({u}), ParamGroup::feature_extractor);
    }
  }

  void build_params(std::mt19937_64& rng) {
    const int64_t F = cfg.conv_filters;
    for (size_t i = 0; i < cfg.sensors.size(); ++i) {
      const std::string p = "indiv." + std::to_string(i) + ".";
      const int64_t d = cfg.sensors[i].dims;
      params.add(p + "conv1.w", glorot_uniform<S>({1, 6 * d, 1, F}, 6 * d, 6 * d * F, rng),
                 ParamGroup::feature_extractor);
      add_bn(p + "conv1.bn", F);
      params.add(p + "conv2.w", glorot_uniform<S>({1, 3, F, F}, 3 * F, 3 * F, rng),
                 ParamGroup::feature_extractor);
      add_bn(p + "conv2.bn", F);
      params.add(p + "conv3.w", glorot_uniform<S>({1, 3, F, F}, 3 * F, 3 * F, rng),
                 ParamGroup::feature_extractor);
      add_bn(p + "conv3.bn", F);
    }
    const int64_t Sn = cfg.num_sensors();
    const int64_t widths[3] = {8, 6, 4};
    for (int l = 0; l < 3; ++l) {
      const std::string p = "merge.conv" + std::to_string(l + 1);
      params.add(p + ".w",
                 glorot_uniform<S>({Sn, widths[l], F, F}, Sn * widths[l] * F, Sn * widths[l] * F, rng),
                 ParamGroup::feature_extractor);
      add_bn(p + ".bn", F);
    }
    const int64_t D = cfg.d_model();
    if (cfg.variant == Variant::trasend) {
      for (int64_t h = 0; h < cfg.heads; ++h) {
        const std::string p = "temporal.attn.h" + std::to_string(h) + ".";
        params.add(p + "wq", glorot_uniform<S>({D, cfg.d_k}, D, cfg.d_k, rng), ParamGroup::feature_extractor);
        params.add(p + "bq", Tensor<S>::zeros({cfg.d_k}), ParamGroup::feature_extractor);
        params.add(p + "wk", glorot_uniform<S>({D, cfg.d_k}, D, cfg.d_k, rng), ParamGroup::feature_extractor);
        params.add(p + "bk", Tensor<S>::zeros({cfg.d_k}), ParamGroup::feature_extractor);
        params.add(p + "wv", glorot_uniform<S>({D, cfg.d_k}, D, cfg.d_k, rng), ParamGroup::feature_extractor);
        params.add(p + "bv", Tensor<S>::zeros({cfg.d_k}), ParamGroup::feature_extractor);
      }
      params.add("temporal.attn.wo", glorot_uniform<S>({cfg.heads * cfg.d_k, D}, cfg.heads * cfg.d_k, D, rng),
                 ParamGroup::feature_extractor);
      params.add("temporal.attn.bo", Tensor<S>::zeros({D}), ParamGroup::feature_extractor);
      params.add("temporal.ln1.gain", Tensor<S>::ones({D}), ParamGroup::feature_extractor);
      params.add("temporal.ln1.bias", Tensor<S>::zeros({D}), ParamGroup::feature_extractor);
      const int64_t hidden = cfg.ffn_multiplier * D;
      params.add("temporal.ffn.w1", glorot_uniform<S>({D, hidden}, D, hidden, rng), ParamGroup::feature_extractor);
      params.add("temporal.ffn.b1", Tensor<S>::zeros({hidden}), ParamGroup::feature_extractor);
      params.add("temporal.ffn.w2", glorot_uniform<S>({hidden, D}, hidden, D, rng), ParamGroup::feature_extractor);
      params.add("temporal.ffn.b2", Tensor<S>::zeros({D}), ParamGroup::feature_extractor);
      params.add("temporal.ln2.gain", Tensor<S>::ones({D}), ParamGroup::feature_extractor);
      params.add("temporal.ln2.bias", Tensor<S>::zeros({D}), ParamGroup::feature_extractor);
    } else if (cfg.variant == Variant::deepsense) {
      add_gru("gru1.", D, rng);
      add_bn("gru.bn", cfg.gru_units);
      add_gru("gru2.", cfg.gru_units, rng);
    } else if (cfg.variant == Variant::trasend_bd) {
      add_gru("bd.fwd.", D, rng);
      add_gru("bd.bwd.", D, rng);
    } else {
      const int64_t A = cfg.score_dim();
      const int64_t L = cfg.merge_locations();
      add_dense("ca.init", F, cfg.gru_units, rng);
      params.add("ca.attn.wa", glorot_uniform<S>({F, A}, F, A, rng), ParamGroup::feature_extractor);
      params.add("ca.attn.ba", Tensor<S>::zeros({A}), ParamGroup::feature_extractor);
      params.add("ca.attn.wb", glorot_uniform<S>({cfg.gru_units, A}, cfg.gru_units, A, rng),
                 ParamGroup::feature_extractor);
      params.add("ca.attn.bb", Tensor<S>::zeros({A}), ParamGroup::feature_extractor);
      params.add("ca.attn.v", glorot_uniform<S>({A, 1}, A, 1, rng), ParamGroup::feature_extractor);
      add_gru("ca.gru.", L * F + F, rng);
    }
    const int64_t d_out = cfg.temporal_out_dim();
    params.add("output.w", glorot_uniform<S>({d_out, cfg.num_classes}, d_out, cfg.num_classes, rng),
               ParamGroup::output_layer);
    params.add("output.b", Tensor<S>::zeros({cfg.num_classes}), ParamGroup::output_layer);
  }
};

// Max relative error between reverse-mode gradients and central finite
// differences of the summed cross-entropy loss, swept over every coordinate
// of every trainable parameter. Runs in eval mode (dropout off, batch norm on
// its running statistics) so the loss is a deterministic function of the
// parameters.
template <typename S>
S model_gradcheck(Model<S>& model, const std::vector<const PreprocessedSample*>& batch, S eps) {
  std::vector<Tensor<S>> inputs = model.assemble_inputs(batch);
  std::vector<int> labels;
  for (const auto* s : batch) labels.push_back(s->label);
  Tensor<S> onehot = model.one_hot(labels);

  auto eval_loss = [&]() -> S {
    Context<S> ctx;
    ctx.mode = RunMode::eval;
    BoundParams<S> bp(ctx.tape, model.params);
    Var l = model.loss(ctx, bp, inputs, onehot);
    return ctx.tape.val(l)[0];
  };

  GradMap<S> analytic;
  {
    Context<S> ctx;
    ctx.mode = RunMode::eval;
    BoundParams<S> bp(ctx.tape, model.params);
    Var l = model.loss(ctx, bp, inputs, onehot);
    analytic = backward(ctx.tape, l, bp);
  }

  S worst = S(0);
  for (auto& p : model.params.items()) {
    if (!p.trainable) continue;
    const Tensor<S>& g = analytic.at(p.name);
    for (int64_t i = 0; i < p.value.numel(); ++i) {
      const S orig = p.value[i];
      p.value[i] = orig + eps;
      const S up = eval_loss();
      p.value[i] = orig - eps;
      const S down = eval_loss();
      p.value[i] = orig;
      const S numeric = (up - down) / (S(2) * eps);
      const S rel = std::abs(g[i] - numeric) / std::max(S(1), std::abs(g[i]));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

// The loss double-sum over examples and classes, evaluated directly on given
// probability rows (prediction-side API; training differentiates the fused
// logits path instead).
template <typename S>
S cross_entropy_loss(const Tensor<S>& pred, const Tensor<S>& truth) {
  if (pred.ndim() != 2 || !pred.same_shape(truth)) {
    throw ShapeError("cross_entropy_loss: pred " + pred.shape_str() + " vs truth " + truth.shape_str());
  }
  const int64_t N = pred.dim(0), C = pred.dim(1);
  S loss = S(0);
  for (int64_t i = 0; i < N; ++i) {
    bool hit = false;
    for (int64_t c = 0; c < C; ++c) {
      S y = truth[i * C + c];
      if (y == S(0)) continue;
      if (y != S(1) || hit) throw ContractError("cross_entropy_loss: truth rows must be one-hot");
      hit = true;
      loss -= std::log(std::max(pred[i * C + c], S(1e-300)));
    }
    if (!hit) throw ContractError("cross_entropy_loss: truth rows must be one-hot");
  }
  return loss;
}

}  // namespace trasend
