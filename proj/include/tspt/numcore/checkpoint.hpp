// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "tspt/numcore/tensor.hpp"

namespace tspt {

/// On-disk layout, all integers little-endian:
///
///   "TSPT" | u32 version | u32 entry count
///   per entry: u32 name length | UTF-8 name | u32 rank | u64 extents[rank]
///              | f64 values[product(extents)]
///   u64 trailer length | trailer bytes (flat `key = value` text)
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::map<std::string, Tensor> tensors;
  std::string trailer;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tspt
