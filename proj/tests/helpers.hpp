#pragma once

#include <filesystem>
#include <string>

#include "p4l/core/rng.hpp"

namespace p4l::test {

/// Fresh scratch directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    RngStream r(static_cast<std::uint64_t>(std::hash<std::string>{}(tag)), Stream::Data);
    path_ = std::filesystem::temp_directory_path() /
            ("p4l-" + tag + "-" + std::to_string(r() % 1000000007));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace p4l::test
