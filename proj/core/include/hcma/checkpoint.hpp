#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "hcma/tensor.hpp"

namespace hcma {

struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Named-tensor container with a fixed binary layout:
///   magic "HCMA" | u32 version | u64 tensor count |
///   per tensor: u32 name length, UTF-8 name, u32 rank, u64 extents, f32 LE row-major.
/// All integers little-endian. Save -> load round trips are bit-identical.
class Checkpoint {
 public:
  static constexpr uint32_t kVersion = 1;

  void add(const std::string& name, Tensor t);
  bool has(const std::string& name) const;
  const Tensor& get(const std::string& name) const;  // throws io_error if missing
  const std::vector<std::pair<std::string, Tensor>>& tensors() const { return tensors_; }

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  /// Store / read the run-config digest as a meta entry.
  void set_digest(uint64_t digest);
  uint64_t digest() const;  // throws io_error if absent

 private:
  std::vector<std::pair<std::string, Tensor>> tensors_;
};

}  // namespace hcma
