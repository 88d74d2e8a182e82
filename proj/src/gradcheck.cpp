// SPDX-License-Identifier: Apache-2.0
#include "glaff/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>

#include "glaff/backbones.hpp"
#include "glaff/error.hpp"
#include "glaff/model.hpp"
#include "glaff/nn.hpp"
#include "glaff/ops.hpp"
#include "glaff/plugin.hpp"

namespace glaff {

namespace {

constexpr std::size_t kMaxListed = 8;

Tensor randn(Shape shape, Rng& rng, double sd = 1.0) {
  Tensor t = Tensor::empty(std::move(shape));
  for (double& v : t.mutable_data()) v = sd * rng.normal();
  return t;
}

void randomize(const nn::ParameterList& params, Rng& rng, double sd) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    for (double& v : t.mutable_data()) v += sd * rng.normal();
  }
}

/// Scalar read-out sum(out * w) with fixed weights, so every output element
/// contributes with a different sensitivity.
class Projector {
 public:
  explicit Projector(std::uint64_t seed) : rng_(seed) {}
  Tensor operator()(const Tensor& out) {
    auto it = std::find_if(weights_.begin(), weights_.end(),
                           [&](const Tensor& w) { return w.shape() == out.shape(); });
    if (it == weights_.end()) {
      weights_.push_back(randn(out.shape(), rng_));
      it = weights_.end() - 1;
    }
    return sum(mul(out, *it));
  }

 private:
  Rng rng_;
  std::vector<Tensor> weights_;
};

GradcheckEntry check(const std::string& component, const nn::ParameterList& probes,
                     const std::function<Tensor()>& loss, const GradcheckDims& dims) {
  for (const auto& p : probes) {
    Tensor t = p.tensor;
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    Graph graph;
    GraphScope scope(graph);
    const Tensor root = loss();
    graph.backward(root);
  }
  GradcheckEntry entry;
  entry.component = component;
  for (const auto& p : probes) {
    Tensor t = p.tensor;
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    auto values = t.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + dims.step;
      const double up = loss().item();
      values[i] = saved - dims.step;
      const double down = loss().item();
      values[i] = saved;
      const double fd = (up - down) / (2.0 * dims.step);
      const double a = analytic.empty() ? 0.0 : analytic[i];
      const double err = std::abs(a - fd) / std::max(1.0, std::abs(fd));
      ++entry.checked;
      const std::string where = p.name + "[" + std::to_string(i) + "]";
      if (err > entry.max_rel_error || entry.worst.empty()) {
        entry.max_rel_error = err;
        entry.worst = where;
      }
      if (!(err < dims.tolerance)) {
        entry.passed = false;
        if (entry.offending.size() < kMaxListed) entry.offending.push_back(where);
      }
    }
  }
  return entry;
}

plugin::GlaffConfig toy_config(const GradcheckDims& d) {
  plugin::GlaffConfig cfg;
  cfg.dim = d.dim;
  cfg.ff_dim = d.ff_dim;
  cfg.heads = d.heads;
  cfg.layers = d.layers;
  cfg.dropout = 0.0;
  cfg.quantile = d.quantile;
  return cfg;
}

nn::ParameterList named(std::initializer_list<std::pair<const char*, Tensor>> items) {
  nn::ParameterList out;
  for (const auto& [n, t] : items) out.push_back({n, t});
  return out;
}

/// Ranks (in sorted order, stable) that the median and the two quantiles read.
std::vector<bool> selected_ranks(std::size_t n, double q) {
  std::vector<bool> sel(n, false);
  sel[(n - 1) / 2] = true;
  for (double level : {q, 1.0 - q}) {
    const double r = static_cast<double>(n - 1) * level;
    const auto i = static_cast<std::size_t>(std::floor(r));
    sel[i] = true;
    if (r - static_cast<double>(i) > 0.0 && i + 1 < n) sel[i + 1] = true;
  }
  return sel;
}

GradcheckEntry quantile_locality(const GradcheckDims& d, Rng& rng) {
  const std::size_t b = d.batch, h = d.hist_len, p = d.pred_len, c = d.channels;
  Tensor hist_map = randn({b, h, c}, rng);
  const Tensor pred_map = randn({b, p, c}, rng);
  const Tensor obs = randn({b, h, c}, rng, 2.0);
  Projector project(rng.next_u64());
  auto loss = [&] { return project(plugin::robust_denormalize(hist_map, pred_map, obs, d.quantile).pred); };

  hist_map.set_requires_grad(true);
  {
    Graph graph;
    GraphScope scope(graph);
    graph.backward(loss());
  }
  const std::vector<double> grad(hist_map.grad().begin(), hist_map.grad().end());
  const double base = loss().item();

  GradcheckEntry entry;
  entry.component = "quantile_locality";
  const auto sel = selected_ranks(h, d.quantile);
  auto values = hist_map.mutable_data();
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      auto at = [&](std::size_t t) { return (bi * h + t) * c + ch; };
      std::vector<std::size_t> order(h);
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t x, std::size_t y) { return values[at(x)] < values[at(y)]; });
      for (std::size_t rank = 0; rank < h; ++rank) {
        const std::size_t idx = at(order[rank]);
        const double saved = values[idx];
        // A move that keeps every rank in place.
        double moved;
        if (rank == 0) moved = saved - 0.5;
        else if (rank + 1 == h) moved = saved + 0.5;
        else moved = saved + 0.25 * (values[at(order[rank + 1])] - saved);
        values[idx] = moved;
        const double changed = loss().item();
        values[idx] = saved;
        const std::string where = "hist_map[" + std::to_string(idx) + "] rank " + std::to_string(rank);
        ++entry.checked;
        if (sel[rank]) {
          // Control: the statistics must react to the entries they read.
          if (changed == base) {
            entry.passed = false;
            if (entry.offending.size() < kMaxListed) entry.offending.push_back(where + " (selected, no effect)");
          }
          continue;
        }
        const double err = std::max(std::abs(changed - base), std::abs(grad[idx]));
        if (err > entry.max_rel_error || entry.worst.empty()) {
          entry.max_rel_error = err;
          entry.worst = where;
        }
        if (err != 0.0) {
          entry.passed = false;
          if (entry.offending.size() < kMaxListed) entry.offending.push_back(where);
        }
      }
    }
  }
  return entry;
}

}  // namespace

bool GradcheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const GradcheckEntry& e) { return e.passed; });
}

std::string GradcheckReport::format() const {
  std::string out;
  char line[256];
  for (const auto& e : entries) {
    std::snprintf(line, sizeof line, "%-22s %6zu coords  max rel err %.3e  %s", e.component.c_str(), e.checked,
                  e.max_rel_error, e.passed ? "PASS" : "FAIL");
    out += line;
    if (!e.passed) {
      out += "  offending:";
      for (const auto& o : e.offending) out += " " + o;
    }
    out += "\n";
  }
  return out;
}

GradcheckReport run_gradcheck(const GradcheckDims& d, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  Rng rng(seed);
  Projector project(rng.next_u64());
  GradcheckReport report;
  const std::size_t b = d.batch, h = d.hist_len, p = d.pred_len, c = d.channels;
  const auto cfg = toy_config(d);

  {
    auto lin = nn::Linear::create(d.dim, d.ff_dim, rng);
    randomize(nn::ParameterList{{"bias", lin.bias}}, rng, 0.5);
    Tensor x = randn({b, h, d.dim}, rng);
    nn::ParameterList probes;
    lin.collect("linear", probes);
    probes.push_back({"x", x});
    report.entries.push_back(check("linear", probes, [&] { return project(lin.forward(x)); }, d));
  }
  {
    auto ln = nn::LayerNorm::create(d.dim);
    nn::ParameterList probes;
    ln.collect("layer_norm", probes);
    randomize(probes, rng, 0.5);
    Tensor x = randn({b, h, d.dim}, rng, 2.0);
    probes.push_back({"x", x});
    report.entries.push_back(check("layer_norm", probes, [&] { return project(ln.forward(x)); }, d));
  }
  {
    Tensor x = randn({b, h, h}, rng, 2.0);
    report.entries.push_back(
        check("softmax", named({{"x", x}}), [&] { return project(softmax_lastdim(x)); }, d));
  }
  {
    Tensor x = randn({b, h, d.dim}, rng, 2.0);
    report.entries.push_back(check("gelu", named({{"x", x}}), [&] { return project(gelu(x)); }, d));
  }
  {
    Tensor a = randn({b, h, d.dim}, rng);
    Tensor m = randn({b, d.dim, p}, rng);
    Tensor k = randn({b, p, d.dim}, rng);
    report.entries.push_back(check("matmul", named({{"a", a}, {"b", m}, {"k", k}}),
                                   [&] { return add(project(matmul(a, m)), project(matmul_nt(a, k))); }, d));
  }
  {
    auto layer = nn::EncoderLayer::create(d.dim, d.ff_dim, d.heads, 0.0, rng);
    nn::ParameterList params;
    layer.collect("layer", params);
    randomize(params, rng, 0.1);
    Tensor x = randn({b, h, d.dim}, rng);
    nn::ParameterList attn;
    for (const auto& q : params) {
      if (q.name.find(".attn.") != std::string::npos) attn.push_back(q);
    }
    attn.push_back({"x", x});
    report.entries.push_back(
        check("mhsa", attn, [&] { return project(nn::mhsa_forward(layer, x, false).output); }, d));
    Rng drop(0);
    params.push_back({"x", x});
    report.entries.push_back(check("encoder_layer", params,
                                   [&] { return project(nn::encoder_layer_forward(layer, x, false, drop)); }, d));
  }
  for (bool mlp : {false, true}) {
    auto mcfg = cfg;
    mcfg.ablations.no_attention = mlp;
    auto mapper = plugin::Mapper::create(mcfg, c, rng);
    nn::ParameterList params;
    mapper.collect("mapper", params);
    randomize(params, rng, 0.1);
    const Tensor features = randn({b, h, timefeat::kFeatureCount}, rng);
    Rng drop(0);
    report.entries.push_back(check(mlp ? "mlp_mapper" : "mapper", params,
                                   [&] { return project(plugin::map_timestamps(mapper, features, false, drop)); },
                                   d));
  }
  for (bool robust : {true, false}) {
    Tensor hist_map = randn({b, h, c}, rng);
    Tensor pred_map = randn({b, p, c}, rng);
    const Tensor obs = randn({b, h, c}, rng, 3.0);
    auto loss = [&] {
      const auto out = robust ? plugin::robust_denormalize(hist_map, pred_map, obs, d.quantile)
                              : plugin::moment_denormalize(hist_map, pred_map, obs);
      return add(project(out.hist), project(out.pred));
    };
    report.entries.push_back(check(robust ? "robust_denormalize" : "moment_denormalize",
                                   named({{"hist_map", hist_map}, {"pred_map", pred_map}}), loss, d));
  }
  {
    auto combiner = plugin::Combiner::create(h, d.ff_dim, rng);
    nn::ParameterList params;
    combiner.collect("combiner", params);
    randomize(params, rng, 0.1);
    Tensor hist_final = randn({b, h, c}, rng);
    const Tensor obs = randn({b, h, c}, rng);
    Tensor pred_final = randn({b, p, c}, rng);
    Tensor local = randn({b, p, c}, rng);
    params.push_back({"hist_final", hist_final});
    params.push_back({"pred_final", pred_final});
    params.push_back({"local_pred", local});
    report.entries.push_back(check("combiner", params, [&] {
      return project(plugin::combine(combiner, hist_final, obs, pred_final, local).prediction);
    }, d));
  }
  {
    backbones::DLinear model(h, p, d.kernel, rng);
    auto params = model.parameters();
    Tensor x = randn({b, h, c}, rng);
    const Tensor none;
    params.push_back({"x", x});
    report.entries.push_back(check("dlinear", params, [&] { return project(model.forecast(x, none, none, false)); }, d));
  }
  for (Variant v : {Variant::full, Variant::no_backbone, Variant::no_attention, Variant::no_quantile,
                    Variant::no_adaptive}) {
    ModelSpec spec;
    spec.variant = v;
    spec.glaff = cfg;
    spec.backbone.kind = "dlinear";
    spec.backbone.kernel = d.kernel;
    spec.hist_len = h;
    spec.pred_len = p;
    spec.channels = c;
    spec.seed = rng.next_u64();
    Forecaster model(spec);
    auto params = model.parameters();
    randomize(params, rng, 0.05);
    data::Batch batch;
    batch.history = randn({b, h, c}, rng);
    batch.history_features = randn({b, h, timefeat::kFeatureCount}, rng);
    batch.future_features = randn({b, p, timefeat::kFeatureCount}, rng);
    batch.target = randn({b, p, c}, rng);
    report.entries.push_back(check("loss." + std::string(variant_name(v)), params,
                                   [&] { return mse_loss(model.forward(batch, false).value, batch.target); }, d));
  }
  report.entries.push_back(quantile_locality(d, rng));
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

void require_passed(const GradcheckReport& report) {
  std::string failed;
  for (const auto& e : report.entries) {
    if (e.passed) continue;
    failed += (failed.empty() ? "" : "; ") + e.component + " (max rel err " + std::to_string(e.max_rel_error) + "):";
    for (const auto& o : e.offending) failed += " " + o;
  }
  if (!failed.empty()) throw GradcheckError(failed);
}

}  // namespace glaff
