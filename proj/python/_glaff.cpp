// SPDX-License-Identifier: Apache-2.0
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "glaff/cli.hpp"
#include "glaff/config.hpp"
#include "glaff/data.hpp"
#include "glaff/error.hpp"
#include "glaff/gradcheck.hpp"
#include "glaff/harness.hpp"
#include "glaff/ops.hpp"
#include "glaff/plugin.hpp"
#include "glaff/timefeat.hpp"

namespace py = pybind11;
using glaff::Tensor;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  glaff::Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor::from(std::move(shape), std::span<const double>(a.data(), static_cast<std::size_t>(a.size())));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  const auto d = t.data();
  std::copy(d.begin(), d.end(), out.mutable_data());
  return out;
}

glaff::RunConfig make_config(const std::string& text, const std::map<std::string, std::string>& overrides) {
  auto cfg = glaff::parse_config(text, "<python>");
  for (const auto& [k, v] : overrides) glaff::apply_override(cfg, k, v);
  return cfg;
}

py::dict record_dict(const glaff::harness::MetricsRecord& r) {
  py::dict d;
  d["run_id"] = r.run_id;
  d["variant"] = r.variant;
  d["seed"] = r.seed;
  d["horizon"] = r.horizon;
  d["condition"] = r.condition;
  d["mse"] = r.mse;
  d["mae"] = r.mae;
  d["seconds"] = r.seconds;
  return d;
}

}  // namespace

PYBIND11_MODULE(_glaff, m) {
  m.doc() = "Timestamp-driven global mapping plugin for time series forecasters";

  static py::exception<glaff::Error> error(m, "GlaffError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const glaff::Error& e) {
      PyErr_SetString(error.ptr(), (std::string(e.category()) + ": " + e.what()).c_str());
    }
  });

  m.def("quantile", [](const Array& a, double q, int axis) { return to_array(glaff::quantile_interp(to_tensor(a), q, axis)); },
        py::arg("x"), py::arg("q"), py::arg("axis") = -1,
        "Linearly interpolated quantile along an axis (kept with size 1).");
  m.def("median_lower", [](const Array& a, int axis) { return to_array(glaff::median_lower(to_tensor(a), axis)); },
        py::arg("x"), py::arg("axis") = -1, "Lower median along an axis (kept with size 1).");
  m.def("gelu", [](const Array& a) { return to_array(glaff::gelu(to_tensor(a))); });
  m.def("softmax", [](const Array& a) { return to_array(glaff::softmax_lastdim(to_tensor(a))); });

  m.def(
      "robust_denormalize",
      [](const Array& hist_map, const Array& pred_map, const Array& hist_obs, double q) {
        const auto r = glaff::plugin::robust_denormalize(to_tensor(hist_map), to_tensor(pred_map), to_tensor(hist_obs), q);
        return py::make_tuple(to_array(r.hist), to_array(r.pred));
      },
      py::arg("hist_map"), py::arg("pred_map"), py::arg("hist_obs"), py::arg("q") = 0.75);
  m.def("moment_denormalize", [](const Array& hist_map, const Array& pred_map, const Array& hist_obs) {
    const auto r = glaff::plugin::moment_denormalize(to_tensor(hist_map), to_tensor(pred_map), to_tensor(hist_obs));
    return py::make_tuple(to_array(r.hist), to_array(r.pred));
  });

  m.def(
      "timestamp_features",
      [](const std::vector<std::string>& stamps, const std::string& mode) {
        std::vector<glaff::timefeat::Timestamp> ts;
        ts.reserve(stamps.size());
        for (const auto& s : stamps) ts.push_back(glaff::timefeat::parse_timestamp(s));
        return to_array(glaff::timefeat::featurize_window(ts, glaff::timefeat::parse_feature_mode(mode)));
      },
      py::arg("timestamps"), py::arg("mode") = "raw",
      "[n x 6] month, day, weekday, hour, minute, second features.");

  m.def(
      "synth",
      [](std::size_t n, std::size_t channels, std::uint64_t seed, std::int64_t granularity, double noise) {
        glaff::data::SynthProfile profile;
        profile.noise = noise;
        const auto ds = glaff::data::synth_generate(n, channels, granularity, profile, seed);
        std::vector<std::string> stamps;
        for (const auto& t : ds.timestamps) stamps.push_back(glaff::timefeat::format_timestamp(t));
        Array values(std::vector<py::ssize_t>{static_cast<py::ssize_t>(n), static_cast<py::ssize_t>(channels)});
        std::copy(ds.values.begin(), ds.values.end(), values.mutable_data());
        return py::make_tuple(stamps, values);
      },
      py::arg("n"), py::arg("channels") = 3, py::arg("seed") = 1, py::arg("granularity") = 3600,
      py::arg("noise") = 0.1);

  m.def("config_text", [](const std::string& text, const std::map<std::string, std::string>& overrides) {
    return glaff::to_config_text(make_config(text, overrides));
  }, py::arg("text") = "", py::arg("overrides") = std::map<std::string, std::string>{},
     "Effective configuration after applying overrides, in file form.");

  m.def(
      "train",
      [](const std::string& text, const std::map<std::string, std::string>& overrides, const std::filesystem::path& out) {
        const auto cfg = make_config(text, overrides);
        glaff::harness::RunOutcome outcome;
        {
          py::gil_scoped_release release;
          outcome = glaff::harness::run_train(cfg, out);
        }
        py::list records;
        for (const auto& r : outcome.records) records.append(record_dict(r));
        return records;
      },
      py::arg("config") = "", py::arg("overrides") = std::map<std::string, std::string>{}, py::arg("out"),
      "Trains and evaluates one run, writing its artifacts under `out`; returns the metrics records.");

  m.def(
      "gradcheck",
      [](std::uint64_t seed) {
        const auto rep = glaff::run_gradcheck({}, seed);
        py::dict out;
        for (const auto& e : rep.entries) out[py::str(e.component)] = e.max_rel_error;
        return out;
      },
      py::arg("seed") = 1, "Max relative finite-difference error per component.");

  m.def(
      "cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = glaff::cli::run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command-line tool in process; returns (exit code, stdout, stderr).");
}
