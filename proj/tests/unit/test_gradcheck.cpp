#include <doctest.h>

#include <set>

#include "glaff/error.hpp"
#include "glaff/gradcheck.hpp"

TEST_CASE("every component passes at the toy sizes") {
  const auto report = glaff::run_gradcheck();
  CHECK(report.passed());
  std::set<std::string> names;
  for (const auto& e : report.entries) {
    names.insert(e.component);
    CHECK_MESSAGE(e.checked > 0, e.component);
    CHECK_MESSAGE(e.max_rel_error < 1e-4, e.component);
  }
  for (const char* required : {"linear", "layer_norm", "softmax", "gelu", "mhsa", "encoder_layer", "mapper",
                               "robust_denormalize", "combiner", "dlinear", "loss.full", "quantile_locality"}) {
    CHECK_MESSAGE(names.count(required) == 1, required);
  }
  CHECK_NOTHROW(glaff::require_passed(report));
  const std::string text = report.format();
  CHECK(text.find("loss.full") != std::string::npos);
  CHECK(text.find("FAIL") == std::string::npos);
}

TEST_CASE("a zero tolerance fails and names coordinates") {
  glaff::GradcheckDims dims;
  dims.tolerance = 0.0;
  const auto report = glaff::run_gradcheck(dims);
  CHECK_FALSE(report.passed());
  bool offending = false;
  for (const auto& e : report.entries) offending = offending || !e.offending.empty();
  CHECK(offending);
  CHECK_THROWS_AS(glaff::require_passed(report), glaff::GradcheckError);
}

TEST_CASE("other seeds and sizes") {
  glaff::GradcheckDims dims;
  dims.batch = 3;
  dims.hist_len = 12;
  dims.channels = 3;
  dims.heads = 4;
  dims.layers = 2;
  CHECK(glaff::run_gradcheck(dims, 17).passed());
}
