#include <doctest.h>

#include <cmath>
#include <sstream>

#include "glaff/data.hpp"
#include "glaff/error.hpp"
#include "glaff/ops.hpp"
#include "glaff/timefeat.hpp"

namespace gd = glaff::data;
namespace tf = glaff::timefeat;

namespace {

gd::Dataset parse(const std::string& text) {
  std::istringstream in(text);
  return gd::parse_csv(in, "test.csv");
}

std::string ingestion_message(const std::string& text) {
  try {
    parse(text);
  } catch (const glaff::IngestionError& e) {
    return e.what();
  }
  return "";
}

std::string ett_like(std::size_t rows) {
  std::string out = "date,HUFL,HULL,MUFL,MULL,LUFL,LULL,OT\n";
  const auto t0 = tf::to_epoch_seconds({2016, 7, 1, 0, 0, 0});
  for (std::size_t t = 0; t < rows; ++t) {
    out += tf::format_timestamp(tf::from_epoch_seconds(t0 + static_cast<std::int64_t>(t) * 3600));
    for (int k = 0; k < 7; ++k) out += "," + std::to_string(static_cast<double>((t * 7 + k) % 97) / 10.0);
    out += "\n";
  }
  return out;
}

gd::Dataset constant_series(std::size_t n, double v) {
  gd::Dataset ds;
  ds.channels = {"a"};
  const auto t0 = tf::to_epoch_seconds({2020, 1, 1, 0, 0, 0});
  for (std::size_t t = 0; t < n; ++t) {
    ds.timestamps.push_back(tf::from_epoch_seconds(t0 + static_cast<std::int64_t>(t) * 3600));
    ds.values.push_back(v);
  }
  return ds;
}

}  // namespace

TEST_CASE("csv ingestion") {
  auto ds = parse("date,a,b\n2020-01-01 00:00:00,1,2\n2020-01-01 01:00:00,3,4.5\n2020-01-01 02:00:00,-1e3,0\n");
  CHECK(ds.length() == 3);
  CHECK(ds.channel_count() == 2);
  CHECK(ds.channels == std::vector<std::string>{"a", "b"});
  CHECK(ds.value(2, 0) == -1000.0);
  CHECK(ds.value(1, 1) == 4.5);

  auto ett = parse(ett_like(17420));
  CHECK(ett.length() == 17420);
  CHECK(ett.channel_count() == 7);
  auto s = gd::chrono_split(ett, {});
  CHECK(s.train.length() == 10452);
  CHECK(s.val.length() == 3484);
  CHECK(s.test.length() == 3484);
  CHECK(gd::window_iter(ett, s.test, 96, 96).size() == 3293);
  // With reach-back the first test target is the first test row.
  auto sr = gd::chrono_split(ett, {}, 96);
  auto tw = gd::window_iter(ett, sr.test, 96, 96);
  CHECK(tw.size() == 3389);
  CHECK(tw.start(0) + 96 == sr.test.begin);

  CHECK(ingestion_message("date,a\n2020-01-01 01:00:00,1\n2020-01-01 00:00:00,2\n").find("test.csv:3:") == 0);
  CHECK(ingestion_message("time,a\n2020-01-01,1\n").find("test.csv:1:") == 0);
  CHECK(ingestion_message("date,a\n2020-01-01,x\n").find("test.csv:2:") == 0);
  CHECK(ingestion_message("date,a\n2020-01-01,nan\n").find("missing value") != std::string::npos);
  CHECK(ingestion_message("date,a\n2020-01-01,\n").find("test.csv:2:") == 0);
  CHECK(ingestion_message("date,a\n2020-01-01,1,2\n").find("expected 2 fields") != std::string::npos);
  CHECK(ingestion_message("date,a\n2020-02-30,1\n").find("test.csv:2:") == 0);
  CHECK(ingestion_message("date,a\n") != "");

  auto crlf = parse("date,a\r\n2020-01-01 00:00:00,1\r\n2020-01-01 01:00:00,2\r\n");
  CHECK(crlf.length() == 2);
  CHECK(parse(gd::format_csv(ds)).values == ds.values);
  CHECK(gd::format_csv(parse(gd::format_csv(ett))) == gd::format_csv(ett));
}

TEST_CASE("chronological split") {
  auto ds = constant_series(100, 1.0);
  auto s = gd::chrono_split(ds, {});
  CHECK(s.train.length() == 60);
  CHECK(s.val.length() == 20);
  CHECK(s.test.length() == 20);
  CHECK(s.test.begin >= s.train.end);
  auto small = gd::chrono_split(constant_series(10, 1.0), {});
  CHECK(small.train.length() == 6);
  CHECK(small.val.length() == 2);
  CHECK(small.test.length() == 2);
  CHECK_THROWS_AS(gd::chrono_split(constant_series(9, 1.0), {}), glaff::ConfigError);
  CHECK_THROWS_AS(gd::SplitSpec::parse("0.5,0.5,0.5"), glaff::ConfigError);
  CHECK_THROWS_AS(gd::SplitSpec::parse("1,0,0"), glaff::ConfigError);
  CHECK(gd::SplitSpec::parse("0.7, 0.1, 0.2").train == 0.7);
}

TEST_CASE("standardization uses training statistics") {
  auto flat = gd::standardize(constant_series(50, 5.0), {0, 30, 0});
  for (double v : flat.data.values) CHECK(v == 0.0);

  gd::SynthProfile prof;
  auto ds = gd::synth_generate(1000, 3, 3600, prof, 4);
  auto splits = gd::chrono_split(ds, {});
  for (std::size_t t = splits.test.begin; t < ds.length(); ++t)
    for (std::size_t k = 0; k < 3; ++k) ds.values[t * 3 + k] += 10.0;
  auto z = gd::standardize(ds, splits.train);
  for (std::size_t k = 0; k < 3; ++k) {
    double s = 0, s2 = 0, ts = 0;
    const double n = static_cast<double>(splits.train.length());
    for (std::size_t t = 0; t < splits.train.end; ++t) s += z.data.value(t, k);
    for (std::size_t t = 0; t < splits.train.end; ++t) s2 += (z.data.value(t, k) - s / n) * (z.data.value(t, k) - s / n);
    for (std::size_t t = splits.test.begin; t < ds.length(); ++t) ts += z.data.value(t, k);
    CHECK(std::abs(s / n) < 1e-9);
    CHECK(std::abs(std::sqrt(s2 / n) - 1.0) < 1e-6);
    CHECK(ts / static_cast<double>(splits.test.length()) > 1.0);
  }
}

TEST_CASE("sliding windows") {
  auto ds = gd::synth_generate(200, 2, 3600, {}, 1);
  gd::Split ten{0, 10, 0};
  auto w = gd::window_iter(ds, ten, 3, 2);
  CHECK(w.size() == 6);
  CHECK_THROWS_AS(gd::window_iter(ds, gd::Split{0, 4, 0}, 3, 2), glaff::ConfigError);

  gd::WindowSet set(ds, gd::Split{0, 200, 0}, 24, 12);
  auto first = set.at(0);
  // Future features start one hour after the last history timestamp.
  CHECK(first.future_features.at({0, 3}) == 0.0 + 0);  // 24 hourly steps from midnight: hour 0 again
  CHECK(first.history_features.at({23, 3}) == 23.0);
  auto b = set.range(5, 3);
  CHECK(b.history.shape() == glaff::Shape{3, 24, 2});
  CHECK(b.target.at({1, 0, 1}) == ds.value(6 + 24, 1));

  // Stride-1 windows reconstruct the series.
  std::vector<double> rebuilt(ds.values.size(), std::nan(""));
  for (std::size_t i = 0; i < set.size(); ++i) {
    auto win = set.at(i);
    for (std::size_t t = 0; t < 24; ++t)
      for (std::size_t k = 0; k < 2; ++k) rebuilt[(set.start(i) + t) * 2 + k] = win.history.at({t, k});
    for (std::size_t t = 0; t < 12; ++t)
      for (std::size_t k = 0; k < 2; ++k) rebuilt[(set.start(i) + 24 + t) * 2 + k] = win.target.at({t, k});
  }
  CHECK(rebuilt == ds.values);
}

TEST_CASE("synthetic generator") {
  gd::SynthProfile quiet;
  quiet.noise = 0.0;
  auto ds = gd::synth_generate(24 * 7 * 4, 3, 3600, quiet, 2);
  for (std::size_t t = 0; t + 168 < ds.length(); ++t)
    for (std::size_t k = 0; k < 3; ++k) CHECK(ds.value(t, k) == ds.value(t + 168, k));

  auto a = gd::synth_generate(500, 2, 3600, {}, 11);
  auto b = gd::synth_generate(500, 2, 3600, {}, 11);
  CHECK(a.values == b.values);
  CHECK(a.values != gd::synth_generate(500, 2, 3600, {}, 12).values);

  auto noisy = gd::synth_generate(24 * 7 * 4, 1, 3600, {}, 3);
  double wd = 0, we = 0;
  std::size_t nwd = 0, nwe = 0;
  for (std::size_t t = 0; t < noisy.length(); ++t) {
    const double dev = std::abs(noisy.value(t, 0));
    if (tf::weekday(noisy.timestamps[t]) < 5) {
      wd += dev;
      ++nwd;
    } else {
      we += dev;
      ++nwe;
    }
  }
  CHECK(wd / static_cast<double>(nwd) > we / static_cast<double>(nwe));
  CHECK(noisy.timestamps.front() == tf::Timestamp{2016, 7, 1, 0, 0, 0});
  CHECK_THROWS_AS(gd::synth_generate(100, 1, 3600, {}, 1), glaff::ConfigError);
}

TEST_CASE("anomaly injection") {
  gd::SynthProfile quiet;
  quiet.noise = 0.0;
  auto ds = gd::synth_generate(2000, 2, 3600, quiet, 5);
  auto splits = gd::chrono_split(ds, {}, 96);
  const std::size_t h = 96, p = 24;

  SUBCASE("zero rate leaves the data untouched") {
    auto out = gd::inject_anomalies(ds, gd::AnomalySpec::parse("point:0:8"), splits.test, h, p);
    CHECK(gd::format_csv(out) == gd::format_csv(ds));
    CHECK_FALSE(out.polluted());
  }
  SUBCASE("point anomalies lie far from the median") {
    gd::InjectionReport rep;
    auto out = gd::inject_anomalies(ds, gd::AnomalySpec::parse("point:0.1:8"), splits.test, h, p, &rep);
    CHECK(rep.windows.size() == static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(rep.eligible))));
    REQUIRE_FALSE(rep.rows.empty());
    for (std::size_t k = 0; k < 2; ++k) {
      std::vector<double> col;
      for (std::size_t t = 0; t < ds.length(); ++t) col.push_back(ds.value(t, k));
      auto v = glaff::Tensor::from({col.size()}, col);
      const double med = glaff::median_lower(v).item();
      const double iqr = glaff::quantile_interp(v, 0.75).item() - glaff::quantile_interp(v, 0.25).item();
      for (std::size_t i = 0; i < rep.rows.size(); ++i) {
        if (rep.channels[i] != k) continue;
        const double x = out.observed[rep.rows[i] * 2 + k];
        CHECK(std::abs(x - med) >= 8 * iqr * (1 - 1e-12));
        CHECK(rep.rows[i] >= splits.test.first_row());
      }
    }
    CHECK(out.values == ds.values);
    gd::WindowSet before(ds, splits.test, h, p);
    gd::WindowSet after(out, splits.test, h, p);
    auto b0 = before.range(0, before.size());
    auto b1 = after.range(0, after.size());
    CHECK(b0.target.to_vector() == b1.target.to_vector());
    CHECK(b0.history.to_vector() != b1.history.to_vector());
  }
  SUBCASE("contextual anomalies flatten a weekday to weekend amplitude") {
    const double factor = quiet.weekend_amplitude / quiet.weekday_amplitude;
    gd::AnomalySpec spec{gd::AnomalyKind::contextual, 0.2, factor, 3};
    gd::InjectionReport rep;
    auto out = gd::inject_anomalies(ds, spec, splits.test, h, p, &rep);
    REQUIRE_FALSE(rep.rows.empty());
    // Group changed rows by day and compare the day's half range.
    for (std::size_t k = 0; k < 2; ++k) {
      for (std::size_t i = 0; i < rep.rows.size(); i += 24) {
        if (rep.channels[i] != k) continue;
        const std::size_t t0 = rep.rows[i];
        CHECK(tf::weekday(ds.timestamps[t0]) < 5);
        double lo = 1e300, hi = -1e300;
        for (std::size_t t = t0; t < t0 + 24; ++t) {
          lo = std::min(lo, out.observed[t * 2 + k]);
          hi = std::max(hi, out.observed[t * 2 + k]);
        }
        // The clean weekend half-range of the same channel.
        double wlo = 1e300, whi = -1e300;
        std::size_t t = 0;
        while (tf::weekday(ds.timestamps[t]) != 5) ++t;
        for (std::size_t u = t; u < t + 24; ++u) {
          wlo = std::min(wlo, ds.value(u, k));
          whi = std::max(whi, ds.value(u, k));
        }
        CHECK(std::abs((hi - lo) - (whi - wlo)) < 1e-9);
      }
    }
  }
  CHECK_THROWS_AS(gd::AnomalySpec::parse("spike:0.1:8"), glaff::ConfigError);
  CHECK_THROWS_AS(gd::AnomalySpec::parse("point:1.5:8"), glaff::ConfigError);
  CHECK(gd::parse_anomaly_list("point:0.1:8,contextual:0.1:0.3").size() == 2);
  CHECK(gd::AnomalySpec::parse("point:0.25:4:9").str() == "point:0.25:4:9");
}
