#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "dbp/double_backprop.hpp"
#include "dbp/jacobian_frobenius.hpp"
#include "dbp/network.hpp"
#include "dbp/oracle.hpp"

namespace dbp {

// ---------------------------------------------------------------------------
// Sine toy problem

inline NetworkConfig sine_architecture(std::uint64_t seed = 0) {
  NetworkConfig c;
  c.input = {1};
  c.seed = seed;
  c.layers = {{OperatorKind::dense, 8, 0, 0, Activation::relu()},
              {OperatorKind::dense, 5, 0, 0, Activation::relu()},
              {OperatorKind::dense, 1, 0, 0, Activation::identity()}};
  return c;
}

struct TrainConfig {
  std::uint64_t seed = 0;
  std::size_t samples = 1500;
  std::size_t batch_size = 256;
  std::size_t epochs = 2000;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double mse_target = 0.01;
  std::string target = "sin";  // "sin" or "identity"
  std::optional<NetworkConfig> architecture;  // defaults to 1-8-5-1 relu
  /// Restart policy. Attempt k initialises and shuffles with seed + k; an
  /// attempt whose training MSE at `probe_epoch` is above `mse_target` is
  /// abandoned. The dataset always comes from `seed`.
  std::size_t max_attempts = 16;
  std::size_t probe_epoch = 250;

  [[nodiscard]] NetworkConfig network_config(std::uint64_t init_seed) const {
    NetworkConfig c = architecture ? *architecture : sine_architecture();
    c.seed = init_seed;
    return c;
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"seed", c.seed},           {"samples", c.samples},
       {"batch_size", c.batch_size}, {"epochs", c.epochs},
       {"learning_rate", c.learning_rate}, {"momentum", c.momentum},
       {"mse_target", c.mse_target}, {"target", c.target},
       {"max_attempts", c.max_attempts}, {"probe_epoch", c.probe_epoch}};
  if (c.architecture) j["architecture"] = *c.architecture;
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c = TrainConfig{};
  c.seed = j.value("seed", c.seed);
  c.samples = j.value("samples", c.samples);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.momentum = j.value("momentum", c.momentum);
  c.mse_target = j.value("mse_target", c.mse_target);
  c.target = j.value("target", c.target);
  c.max_attempts = j.value("max_attempts", c.max_attempts);
  c.probe_epoch = j.value("probe_epoch", c.probe_epoch);
  if (j.contains("architecture")) {
    c.architecture = j.at("architecture").get<NetworkConfig>();
  }
  if (c.samples < 1 || c.batch_size < 1 || c.max_attempts < 1) {
    throw std::invalid_argument("samples, batch_size and max_attempts must be >= 1");
  }
  if (c.target != "sin" && c.target != "identity") {
    throw std::invalid_argument("target must be 'sin' or 'identity'");
  }
  if (!(c.learning_rate > 0.0) || !(c.momentum >= 0.0 && c.momentum < 1.0)) {
    throw std::invalid_argument("need learning_rate > 0 and 0 <= momentum < 1");
  }
}

struct Dataset {
  std::vector<double> x;
  std::vector<double> y;
};

/// x uniform on [-pi, pi], y = sin(x) (or y = x).
inline Dataset make_sine_dataset(std::size_t samples, std::uint64_t seed,
                                 const std::string& target = "sin") {
  if (target != "sin" && target != "identity") {
    throw std::invalid_argument("target must be 'sin' or 'identity'");
  }
  Rng rng = Rng(seed).split(0xda7a);
  Dataset d;
  d.x.reserve(samples);
  d.y.reserve(samples);
  for (std::size_t i = 0; i < samples; ++i) {
    const double x = rng.uniform(-std::numbers::pi, std::numbers::pi);
    d.x.push_back(x);
    d.y.push_back(target == "sin" ? std::sin(x) : x);
  }
  return d;
}

inline double mean_squared_error(const Network& net, const Dataset& d) {
  double s = 0.0;
  for (std::size_t i = 0; i < d.x.size(); ++i) {
    const double out = forward(net, Tensor::vector({d.x[i]})).output()[0];
    s += (out - d.y[i]) * (out - d.y[i]);
  }
  return s / static_cast<double>(d.x.size());
}

struct TrainResult {
  Network net;
  double mse = 0.0;
  bool reached_target = false;
  std::uint64_t init_seed = 0;
  std::size_t attempts = 0;
  nlohmann::json checkpoint;
};

namespace detail {

/// One SGD-with-momentum run; stops early (returning the MSE so far) when the
/// MSE at `probe_epoch` misses the target.
inline double sgd_momentum(Network& net, const Dataset& data, const TrainConfig& cfg,
                           std::uint64_t init_seed) {
  Rng shuffle = Rng(init_seed).split(0x5f);
  std::vector<std::size_t> order(data.x.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  GradientSet velocity = GradientSet::zeros(net);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle.below(i)]);
    }
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      GradientSet g = GradientSet::zeros(net);
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t k = order[b];
        g += loss_gradient(net, Tensor::vector({data.x[k]}),
                           Tensor::vector({data.y[k]}), LossKind::squared)
                 .grads;
      }
      g *= 1.0 / static_cast<double>(end - start);
      velocity *= cfg.momentum;
      velocity.add_scaled(-cfg.learning_rate, g);
      for (std::size_t j = 0; j < net.depth(); ++j) {
        net.layer(j).theta += velocity.layers[j].theta;
        net.layer(j).bias += velocity.layers[j].bias;
      }
    }
    if (epoch + 1 == cfg.probe_epoch && epoch + 1 < cfg.epochs) {
      const double mse = mean_squared_error(net, data);
      if (mse > cfg.mse_target) return mse;
    }
  }
  return mean_squared_error(net, data);
}

}  // namespace detail

/// Mini-batch SGD with momentum on the squared loss, batch-averaged gradients,
/// restarted from the next init seed when an attempt stalls.
inline TrainResult train_sine(const TrainConfig& cfg) {
  const Dataset data = make_sine_dataset(cfg.samples, cfg.seed, cfg.target);
  TrainResult r;
  for (std::size_t attempt = 0; attempt < cfg.max_attempts; ++attempt) {
    const std::uint64_t init_seed = cfg.seed + attempt;
    const NetworkConfig arch = cfg.network_config(init_seed);
    Network net = build_network(arch);
    if (shape_numel(net.input_shape()) != 1 || net.output_dim() != 1) {
      throw std::invalid_argument("train_sine needs a scalar-in, scalar-out net");
    }
    const double mse = detail::sgd_momentum(net, data, cfg, init_seed);
    if (attempt == 0 || mse < r.mse) {
      r.mse = mse;
      r.init_seed = init_seed;
      r.net = std::move(net);
      r.checkpoint = checkpoint_json(arch, r.net);
    }
    r.attempts = attempt + 1;
    if (mse <= cfg.mse_target) break;
  }
  r.reached_target = r.mse <= cfg.mse_target;
  r.checkpoint["training"] = cfg;
  r.checkpoint["mse"] = r.mse;
  r.checkpoint["init_seed"] = r.init_seed;
  r.checkpoint["attempts"] = r.attempts;
  return r;
}

/// Training config stored in a checkpoint, or the defaults.
inline TrainConfig checkpoint_training(const nlohmann::json& ckpt) {
  return ckpt.contains("training") ? ckpt.at("training").get<TrainConfig>()
                                   : TrainConfig{};
}

// ---------------------------------------------------------------------------
// CSV

/// 17 significant digits, round-trip exact.
inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void write(std::ostream& os) const {
    auto line = [&os](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) os << ',';
        os << cells[i];
      }
      os << '\n';
    };
    line(header);
    for (const auto& r : rows) line(r);
  }
};

// ---------------------------------------------------------------------------
// Landscape in the input

struct InputSweepRow {
  double x0 = 0, x_L = 0, y = 0;
  double s = 0;       // d x_L / d x_0
  double r_cdb = 0;   // (d loss / d x_0)^2 with loss = (x_L - y)^2, y = sin(x0)
  std::string region;  // hidden-unit sign pattern
};

namespace detail {

inline void require_scalar_net(const Network& net) {
  if (shape_numel(net.input_shape()) != 1 || net.output_dim() != 1) {
    throw std::invalid_argument("landscape sweeps need a scalar-in, scalar-out network");
  }
}

inline std::string sign_pattern(const Network& net, const ForwardTrace& t) {
  std::string bits;
  for (std::size_t j = 0; j + 1 < net.depth(); ++j) {
    for (double z : t.z[j].data()) bits.push_back(z > 0.0 ? '1' : '0');
  }
  return bits;
}

inline std::vector<double> linspace(double from, double to, std::size_t points) {
  if (points < 2) throw std::invalid_argument("sweep resolution must be >= 2");
  std::vector<double> g(points);
  for (std::size_t i = 0; i < points; ++i) {
    g[i] = from + (to - from) * static_cast<double>(i) / static_cast<double>(points - 1);
  }
  return g;
}

}  // namespace detail

inline std::vector<InputSweepRow> landscape_input_sweep(const Network& net, double from,
                                                        double to, std::size_t points) {
  detail::require_scalar_net(net);
  std::vector<InputSweepRow> rows;
  rows.reserve(points);
  for (double x : detail::linspace(from, to, points)) {
    const ForwardTrace t = forward(net, Tensor::vector({x}));
    InputSweepRow r;
    r.x0 = x;
    r.x_L = t.output()[0];
    r.y = std::sin(x);
    const Tensor y = Tensor::vector({r.y});
    r.s = penalty_backward(net, t, resolve_seed(UnitVectorSeed{1}, t.output(), y),
                           PenaltyNorm::squared_norm)
              .trace.xi0[0];
    r.r_cdb = penalty_backward(net, t,
                               resolve_seed(LossGradientSeed{LossKind::squared},
                                            t.output(), y),
                               PenaltyNorm::squared_norm)
                  .value;
    r.region = detail::sign_pattern(net, t);
    rows.push_back(std::move(r));
  }
  return rows;
}

inline CsvTable input_sweep_csv(const std::vector<InputSweepRow>& rows) {
  CsvTable t{{"x0", "x_L", "y", "s", "R_cdb", "region"}, {}};
  for (const auto& r : rows) {
    t.rows.push_back({format_real(r.x0), format_real(r.x_L), format_real(r.y),
                      format_real(r.s), format_real(r.r_cdb), r.region});
  }
  return t;
}

/// Number of distinct values after merging sorted neighbours closer than tol.
inline std::size_t count_plateaus(std::vector<double> values, double tol = 1e-9) {
  if (values.empty()) return 0;
  std::sort(values.begin(), values.end());
  std::size_t n = 1;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] - values[i - 1] > tol) ++n;
  }
  return n;
}

// ---------------------------------------------------------------------------
// Landscape in one parameter

/// One scalar parameter: layer (1-based), weight entry [row][col] or bias[row].
struct ParamId {
  std::size_t layer = 2;
  bool bias = false;
  std::size_t row = 0;
  std::size_t col = 0;

  [[nodiscard]] std::string str() const {
    std::string s = "layer" + std::to_string(layer);
    return bias ? s + ".b[" + std::to_string(row) + "]"
                : s + ".w[" + std::to_string(row) + "][" + std::to_string(col) + "]";
  }
};

inline ParamId parse_param_id(const std::string& s) {
  static const std::regex weight(R"(layer(\d+)\.w\[(\d+)\]\[(\d+)\])");
  static const std::regex bias(R"(layer(\d+)\.b\[(\d+)\])");
  std::smatch m;
  if (std::regex_match(s, m, weight)) {
    return {std::stoul(m[1]), false, std::stoul(m[2]), std::stoul(m[3])};
  }
  if (std::regex_match(s, m, bias)) {
    return {std::stoul(m[1]), true, std::stoul(m[2]), 0};
  }
  throw std::invalid_argument("invalid parameter id '" + s + "'");
}

namespace detail {

inline double& param_ref(Network& net, const ParamId& id) {
  if (id.layer < 1 || id.layer > net.depth()) {
    throw std::out_of_range("parameter id " + id.str() + ": no such layer");
  }
  Layer& l = net.layer(id.layer - 1);
  if (id.bias) {
    if (id.row >= l.bias.size()) throw std::out_of_range(id.str() + ": bias index");
    return l.bias[id.row];
  }
  if (l.op.kind() != OperatorKind::dense || id.row >= l.theta.extent(0) ||
      id.col >= l.theta.extent(1)) {
    throw std::out_of_range(id.str() + ": weight index");
  }
  return l.theta(id.row, id.col);
}

inline double param_grad(const GradientSet& g, const ParamId& id) {
  const auto& l = g.layers[id.layer - 1];
  return id.bias ? l.bias[id.row] : l.theta(id.row, id.col);
}

}  // namespace detail

inline double parameter_value(const Network& net, const ParamId& id) {
  return detail::param_ref(const_cast<Network&>(net), id);
}

enum class SweepPenalty { node, cdb };

inline SweepPenalty parse_sweep_penalty(const std::string& s) {
  if (s == "node") return SweepPenalty::node;
  if (s == "cdb") return SweepPenalty::cdb;
  throw std::invalid_argument("penalty must be 'node' or 'cdb'");
}

struct ParamSweepConfig {
  ParamId param;
  SweepPenalty penalty = SweepPenalty::node;
  std::size_t batch = 0;  // 0: the single sample nearest `anchor`
  std::uint64_t seed = 0;
  double from = 0.0, to = 0.0;
  std::size_t points = 2001;
  double anchor = 1.022;
};

struct ParamSweepRow {
  double value = 0;
  double s = 0;   // d z_L / d x_0 (batch mean)
  double r = 0;   // penalty (batch mean)
  double dr = 0;  // d penalty / d parameter (batch mean)
};

/// Dataset index closest to `anchor`.
inline std::size_t nearest_sample(const Dataset& d, double anchor) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < d.x.size(); ++i) {
    if (std::abs(d.x[i] - anchor) < std::abs(d.x[best] - anchor)) best = i;
  }
  return best;
}

/// M distinct dataset indices drawn with `seed`.
inline std::vector<std::size_t> sample_batch(const Dataset& d, std::size_t m,
                                             std::uint64_t seed) {
  if (m > d.x.size()) throw std::invalid_argument("batch larger than dataset");
  std::vector<std::size_t> idx(d.x.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(seed);
  for (std::size_t i = 0; i < m; ++i) {
    std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
  }
  idx.resize(m);
  return idx;
}

/// Penalty and its derivative in one parameter at (x, y) for the node
/// penalty (d z_L/d x_0)^2 or the classical penalty (d loss/d x_0)^2.
inline ParamSweepRow evaluate_penalty_point(const Network& net, const ParamId& id,
                                            SweepPenalty penalty, double x,
                                            double y) {
  const Tensor x0 = Tensor::vector({x});
  const Tensor yt = Tensor::vector({y});
  const PenaltySpec spec = penalty == SweepPenalty::node
                               ? PenaltySpec::output_node(1)
                               : PenaltySpec::classical(LossKind::squared);
  const DoubleBackpropResult r = penalty_and_gradient(net, x0, yt, spec);
  ParamSweepRow row;
  row.r = r.penalty;
  row.dr = detail::param_grad(r.penalty_grads, id);
  if (penalty == SweepPenalty::node) {
    row.s = r.xi0[0];
  } else {
    const ForwardTrace t = forward(net, x0);
    row.s = penalty_backward(net, t, OutputSeed::constant(Tensor::vector({1.0})),
                             PenaltyNorm::squared_norm)
                .trace.xi0[0];
  }
  return row;
}

inline std::vector<ParamSweepRow> landscape_param_sweep(const Network& trained,
                                                        const Dataset& data,
                                                        const ParamSweepConfig& cfg) {
  detail::require_scalar_net(trained);
  Network net = trained;
  double& param = detail::param_ref(net, cfg.param);
  const std::vector<std::size_t> samples =
      cfg.batch == 0 ? std::vector<std::size_t>{nearest_sample(data, cfg.anchor)}
                     : sample_batch(data, cfg.batch, cfg.seed);
  const double inv = 1.0 / static_cast<double>(samples.size());
  std::vector<ParamSweepRow> rows;
  rows.reserve(cfg.points);
  for (double value : detail::linspace(cfg.from, cfg.to, cfg.points)) {
    param = value;
    ParamSweepRow acc;
    acc.value = value;
    for (std::size_t k : samples) {
      const ParamSweepRow p =
          evaluate_penalty_point(net, cfg.param, cfg.penalty, data.x[k], data.y[k]);
      acc.s += inv * p.s;
      acc.r += inv * p.r;
      acc.dr += inv * p.dr;
    }
    rows.push_back(acc);
  }
  return rows;
}

inline CsvTable param_sweep_csv(const std::vector<ParamSweepRow>& rows) {
  CsvTable t{{"value", "s", "R", "dR"}, {}};
  for (const auto& r : rows) {
    t.rows.push_back(
        {format_real(r.value), format_real(r.s), format_real(r.r), format_real(r.dr)});
  }
  return t;
}

/// Largest |f[i+1] - f[i]|.
inline double max_adjacent_jump(const std::vector<double>& f) {
  double m = 0.0;
  for (std::size_t i = 1; i < f.size(); ++i) m = std::max(m, std::abs(f[i] - f[i - 1]));
  return m;
}

/// Indices i where |f[i+1] - f[i]| exceeds `factor` times the median absolute
/// adjacent difference.
inline std::vector<std::size_t> detect_jumps(const std::vector<double>& f,
                                             double factor = 10.0) {
  if (f.size() < 2) return {};
  std::vector<double> d(f.size() - 1);
  for (std::size_t i = 0; i + 1 < f.size(); ++i) d[i] = std::abs(f[i + 1] - f[i]);
  std::vector<double> sorted = d;
  std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
  const double median = sorted[sorted.size() / 2];
  std::vector<size_t> out;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d[i] > factor * median) out.push_back(i);
  }
  return out;
}

/// Hidden unit of layer `id.layer` whose pre-activation at x crosses zero when
/// the swept parameter moves over [from, to], if any.
inline bool sweep_crosses_kink(const Network& trained, const ParamId& id, double x,
                               double from, double to) {
  Network net = trained;
  double& p = detail::param_ref(net, id);
  p = from;
  const auto a = detail::sign_pattern(net, forward(net, Tensor::vector({x})));
  p = to;
  const auto b = detail::sign_pattern(net, forward(net, Tensor::vector({x})));
  return a != b;
}

/// The second-layer weight whose kink crossing for input x lies closest to its
/// current value: the row r and column c with x_1[c] > 0 minimising
/// |z_2[r] / x_1[c]|. Returns the weight id and the distance to the crossing.
inline std::pair<ParamId, double> nearest_kink_weight(const Network& net, double x) {
  if (net.depth() < 3) throw std::invalid_argument("need at least two hidden layers");
  const ForwardTrace t = forward(net, Tensor::vector({x}));
  const Tensor& x1 = t.x[0];
  const Tensor& z2 = t.z[1];
  ParamId best{2, false, 0, 0};
  double dist = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < z2.size(); ++r) {
    for (std::size_t c = 0; c < x1.size(); ++c) {
      if (x1[c] <= 0.0) continue;
      const double d = std::abs(z2[r] / x1[c]);
      if (d < dist) {
        dist = d;
        best = {2, false, r, c};
      }
    }
  }
  return {best, dist};
}

// ---------------------------------------------------------------------------
// Operation-count study

struct OpCountRow {
  std::string scenario;
  std::string architecture;
  std::size_t layers = 0;
  std::size_t classes = 0;
  std::uint64_t measured = 0;
  std::uint64_t formula = 0;
};

/// Small random network for tests and reports. With `conv`, the first layer is
/// a conv1d over a [2, 8] input; otherwise the input is a 4-vector.
inline NetworkConfig test_architecture(std::size_t layers, Activation hidden,
                                       Activation output, std::size_t classes,
                                       bool conv, std::uint64_t seed,
                                       std::size_t width = 6) {
  NetworkConfig c;
  c.seed = seed;
  c.input = conv ? Shape{2, 8} : Shape{4};
  for (std::size_t j = 0; j < layers; ++j) {
    const bool last = j + 1 == layers;
    LayerConfig lc;
    lc.activation = last ? output : hidden;
    if (conv && j == 0 && !last) {
      lc.kind = OperatorKind::conv1d;
      lc.kernel = 3;
      lc.channels = 3;
    } else {
      lc.kind = OperatorKind::dense;
      lc.out = last ? classes : width;
    }
    c.layers.push_back(lc);
  }
  return c;
}

/// Random input for `net` and a label: one-hot for softmax output, Gaussian
/// otherwise.
inline std::pair<Tensor, Tensor> test_example(const Network& net, std::uint64_t seed) {
  Rng rng = Rng(seed).split(0xe8);
  Tensor x(net.input_shape());
  for (double& v : x.data()) v = rng.normal();
  Tensor y({net.output_dim()});
  if (net.output_activation().kind == ActivationKind::softmax) {
    y[rng.below(net.output_dim())] = 1.0;
  } else {
    for (double& v : y.data()) v = rng.normal();
  }
  return {x, y};
}

inline std::vector<OpCountRow> opcount_rows() {
  std::vector<OpCountRow> rows;
  const std::vector<std::size_t> depths = {1, 2, 3, 4, 5};
  const std::vector<std::size_t> class_counts = {2, 4, 10};
  for (bool conv : {false, true}) {
    for (std::size_t L : depths) {
      if (conv && L < 2) continue;
      const std::string arch = conv ? "conv1d+dense" : "dense";
      for (std::size_t C : class_counts) {
        auto build = [&](Activation hidden, Activation out) {
          return build_network(test_architecture(L, hidden, out, C, conv, 17 * L + C));
        };
        auto add = [&](std::string name, std::uint64_t measured, std::uint64_t formula) {
          rows.push_back({std::move(name), arch, L, C, measured, formula});
        };
        const std::uint64_t l = L, c = C;

        {  // plain training step
          const Network net = build(Activation::tanh(), Activation::softmax());
          const auto [x, y] = test_example(net, L + C);
          OpCounter cnt;
          (void)loss_gradient(net, x, y, LossKind::nll, &cnt);
          add("plain_training", cnt.linear(), 2 * l - 1);
        }
        {
          const Network net = build(Activation::tanh(), Activation::softmax());
          const auto [x, y] = test_example(net, L + C);
          const auto r = double_backprop(net, x, y, PenaltySpec::classical(LossKind::nll),
                                         LossKind::nll);
          add("classical_dbp", r.counter.linear(), 4 * l - 1);
          const auto s = double_backprop(net, x, y, PenaltySpec::output_node(1),
                                         LossKind::nll);
          add("independent_penalty_with_loss", s.counter.linear(), 5 * l - 2);
        }
        {
          const Network net = build(Activation::relu(), Activation::identity());
          const auto [x, y] = test_example(net, L + C);
          const auto r = penalty_and_gradient(net, x, y, PenaltySpec::output_node(1));
          add("identity_output_locally_linear_penalty", r.counter.linear(), 3 * l);
        }
        {
          const Network net = build(Activation::relu(), Activation::softmax());
          const auto [x, y] = test_example(net, L + C);
          add("frobenius_naive", frobenius_naive(net, x, std::nullopt).counter.linear(),
              l + c * (3 * l - 1));
          add("frobenius_naive_with_loss",
              frobenius_naive(net, x, LossKind::nll, y).counter.linear(),
              2 * l - 1 + c * (3 * l - 1));
          add("frobenius_optimized",
              frobenius_optimized(net, x, std::nullopt).counter.linear(),
              2 * l - 1 + 2 * c * l);
          add("frobenius_optimized_with_loss",
              frobenius_optimized(net, x, LossKind::nll, y).counter.linear(),
              2 * l - 1 + 2 * c * l);
        }
      }
    }
  }
  return rows;
}

inline nlohmann::json opcount_report_json(const std::vector<OpCountRow>& rows) {
  nlohmann::json table = nlohmann::json::array();
  bool all = true;
  for (const auto& r : rows) {
    const bool match = r.measured == r.formula;
    all = all && match;
    table.push_back({{"scenario", r.scenario},
                     {"architecture", r.architecture},
                     {"L", r.layers},
                     {"C", r.classes},
                     {"measured", r.measured},
                     {"formula", r.formula},
                     {"match", match}});
  }
  return {{"rows", table}, {"all_match", all}};
}

// ---------------------------------------------------------------------------
// Gradient check battery

struct GradCheckCase {
  std::string name;
  double penalty_error = 0;  // grad R vs finite differences
  double total_error = 0;    // grad (L + lambda R) vs finite differences
  std::size_t skipped = 0;
};

/// Analytic gradients of R and L + lambda R against central differences for
/// one network / penalty / loss combination.
inline GradCheckCase gradient_check(const Network& net, const Tensor& x,
                                    const Tensor& y, const PenaltySpec& spec,
                                    LossKind loss, const FDConfig& fd = {}) {
  GradCheckCase out;
  const auto analytic = double_backprop(net, x, y, spec, loss);
  const ScalarFn penalty_fn = [&](const Network& n) {
    const ForwardTrace t = forward(n, x);
    return penalty_backward(n, t, resolve_seed(spec.v, t.output(), y), spec.p).value;
  };
  const ScalarFn total_fn = [&](const Network& n) {
    const ForwardTrace t = forward(n, x);
    const OutputSeed s = resolve_seed(spec.v, t.output(), y);
    return loss_and_v(loss, t.output(), y.reshaped(t.output().shape())).loss +
           spec.lambda * penalty_backward(n, t, s, spec.p).value;
  };
  const FDGradient fr = finite_diff_param_grad(net, x, penalty_fn, fd);
  const FDGradient ft = finite_diff_param_grad(net, x, total_fn, fd);
  out.penalty_error = relative_error(analytic.penalty_grads, fr.grads, fr.skipped);
  out.total_error = relative_error(analytic.grads, ft.grads, ft.skipped);
  out.skipped = fr.skipped_count();
  return out;
}

/// Gradient checks over tanh / softplus / relu hidden layers, classical DBP
/// with softmax + NLL and an output-node penalty on identity output, for
/// depths 2..4 with conv1d + dense layers.
inline std::vector<GradCheckCase> gradcheck_battery(std::uint64_t seed) {
  std::vector<GradCheckCase> cases;
  for (Activation hidden : {Activation::tanh(), Activation::softplus(), Activation::relu()}) {
    for (std::size_t L : {2, 3, 4}) {
      for (bool classical : {true, false}) {
        const Activation out = classical ? Activation::softmax() : Activation::identity();
        const std::uint64_t s = mix_seed(seed * 1000 + L * 10 + (classical ? 1 : 2)) ^
                                static_cast<std::uint64_t>(hidden.kind);
        const Network net = build_network(test_architecture(L, hidden, out, 3, true, s, 5));
        const auto [x, y] = test_example(net, s);
        const PenaltySpec spec = classical
                                     ? PenaltySpec::classical(LossKind::nll, 0.5)
                                     : PenaltySpec::output_node(1, 0.5);
        GradCheckCase c = gradient_check(net, x, y, spec,
                                         classical ? LossKind::nll : LossKind::squared);
        c.name = std::string(activation_name(hidden.kind)) + "/L" + std::to_string(L) +
                 (classical ? "/softmax+nll classical" : "/identity unit:1");
        cases.push_back(std::move(c));
      }
    }
  }
  return cases;
}

}  // namespace dbp
