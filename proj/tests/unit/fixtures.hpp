#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <string>

#include "glaff/config.hpp"

namespace test {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("glaff_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Two weeks of hourly data and a small model: a training run takes well
// under a second.
inline glaff::RunConfig tiny_config() {
  glaff::RunConfig c;
  c.hist_len = 24;
  c.pred_len = 12;
  c.data.length = 24 * 14;
  c.data.channels = 2;
  c.glaff.dim = 8;
  c.glaff.ff_dim = 16;
  c.glaff.heads = 2;
  c.glaff.layers = 1;
  c.backbone.kernel = 5;
  c.train.epochs = 2;
  c.train.batch = 16;
  c.train.lr = 1e-3;
  return c;
}

}  // namespace test
