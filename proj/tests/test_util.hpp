#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "cardiacnet/rng.hpp"
#include "cardiacnet/volume.hpp"

namespace testutil {

inline cardiacnet::Volume3D random_volume(cardiacnet::Dims d, std::uint64_t seed, cardiacnet::Spacing sp = {1.0f, 1.0f, 1.0f}) {
  cardiacnet::Rng rng(seed);
  cardiacnet::Volume3D v(d, sp);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(rng.uniform(-10.0, 10.0));
  return v;
}

inline cardiacnet::LabelVolume random_mask(cardiacnet::Dims d, std::uint64_t seed, double p,
                                           cardiacnet::Spacing sp = {1.0f, 1.0f, 1.0f}) {
  cardiacnet::Rng rng(seed);
  cardiacnet::LabelVolume v(d, sp);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = rng.uniform() < p ? 1 : 0;
  return v;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("cardiacnet_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
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

}  // namespace testutil
